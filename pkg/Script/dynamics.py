"""Particle dynamics driven by a coefficient field.

Two schemes are available. ``exact-gaussian`` moves every particle by an independent
Gaussian displacement of per-coordinate variance 2ct (constant fields only).
``conductance-chain`` is a reversible lattice walk with mesh eps: in each synchronous
step a particle at x jumps to x +/- eps e_k with probability dt c / eps^2, where c is the
(k, k) entry of the field evaluated at the edge midpoint m in the environment without
the mover, with the mover placed at m. Both directions of an edge therefore see the
same conductance.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .configuration import Configuration
from .errors import InvalidParameterError, StabilityError
from .fields import INTERACTION_RADIUS, CoefficientField, eval_a
from .rng import RngStream
from .utils import log_timing

_LOG = logging.getLogger(__name__)

MAX_MESH = 0.1
MAX_STEP_PROBABILITY = 0.5
NEIGHBOUR_SKIN = 2.0


class Scheme(str, Enum):
    EXACT_GAUSSIAN = "exact-gaussian"
    CONDUCTANCE_CHAIN = "conductance-chain"


@dataclass(frozen=True)
class SchemeParams:
    scheme: Scheme = Scheme.EXACT_GAUSSIAN
    dt: float = 1e-3
    eps: float = 0.05
    cell_size: float = INTERACTION_RADIUS

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.scheme is Scheme.CONDUCTANCE_CHAIN:
            if not self.dt > 0:
                raise InvalidParameterError(f"time step must be positive, got {self.dt}")
            if not 0 < self.eps <= MAX_MESH:
                raise StabilityError(f"mesh eps must lie in (0, {MAX_MESH}], got {self.eps}")

    def check_stability(self, fld: CoefficientField, d: int) -> None:
        """Require 2 d Lambda dt / eps^2 <= 1/2."""
        if self.scheme is not Scheme.CONDUCTANCE_CHAIN:
            return
        total = 2 * d * fld.ellipticity * self.dt / self.eps**2
        if total > MAX_STEP_PROBABILITY * (1 + 1e-12):
            raise StabilityError(
                f"2*d*Lambda*dt/eps^2 = {total:.4g} exceeds {MAX_STEP_PROBABILITY} "
                f"(d={d}, Lambda={fld.ellipticity:g}, dt={self.dt:g}, eps={self.eps:g})"
            )

    @classmethod
    def stable(cls, eps: float, fld: CoefficientField, d: int, safety: float = 1.0) -> "SchemeParams":
        """Conductance-chain parameters with the largest stable time step (times safety)."""
        dt = safety * MAX_STEP_PROBABILITY * eps**2 / (2 * d * fld.ellipticity)
        return cls(Scheme.CONDUCTANCE_CHAIN, dt=dt, eps=eps)


@dataclass(frozen=True)
class Trajectory:
    initial: Configuration
    snapshots: list[tuple[float, Configuration]] = field(default_factory=list)

    @property
    def times(self) -> list[float]:
        return [t for t, _ in self.snapshots]

    def at(self, t: float) -> Configuration:
        for s, mu in self.snapshots:
            if s == t:
                return mu
        raise KeyError(t)


def _edge_targets(points: np.ndarray, eps: float) -> np.ndarray:
    """Jump targets, shape (2d, n, d), ordered (axis 0 +, axis 0 -, axis 1 +, ...)."""
    n, d = points.shape
    targets = np.empty((2 * d, n, d))
    for k in range(d):
        for s, sign in enumerate((1.0, -1.0)):
            t = points.copy()
            t[:, k] = points[:, k] + sign * eps
            targets[2 * k + s] = t
    return targets


def edge_conductance(fld: CoefficientField, env: Configuration, a: np.ndarray, b: np.ndarray) -> float:
    """Conductance of the edge a <-> b in the environment ``env`` (mover excluded).

    The mover is placed at the midpoint; the midpoint formula is symmetric in (a, b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = np.flatnonzero(a != b)
    if diff.size != 1:
        raise InvalidParameterError("edge endpoints must differ along exactly one axis")
    k = int(diff[0])
    mid = env.domain.wrap((0.5 * (a + b))[None, :])
    with_mover = env.with_points(np.vstack([env.points, mid]))
    return float(eval_a(fld, with_mover, mid[0])[k, k])


def _midpoint_conductances(
    fld: CoefficientField, points: np.ndarray, mids: np.ndarray, movers: np.ndarray, axes: np.ndarray, domain
) -> np.ndarray:
    """Diagonal conductances at edge midpoints, one per (mover, axis, sign) row."""
    if fld.constant is not None:
        return np.full(mids.shape[0], fld.constant)
    boxsize = domain.side if domain.periodic else None
    tree = cKDTree(points, boxsize=boxsize)
    if fld.count_rule is not None:
        # the mover lies within eps/2 of its midpoint, so it is counted exactly once
        counts = tree.query_ball_point(mids, r=INTERACTION_RADIUS, return_length=True)
        return np.asarray(fld.count_rule(np.asarray(counts)), dtype=float)
    out = np.empty(mids.shape[0])
    neighbours = tree.query_ball_point(mids, r=INTERACTION_RADIUS)
    for j, idx in enumerate(neighbours):
        idx = np.asarray(idx, dtype=int)
        offsets = domain.displacement(points[idx], mids[j])
        offsets[idx == movers[j]] = 0.0
        a = np.asarray(fld.rule(offsets), dtype=float)
        out[j] = a[axes[j], axes[j]]
    return out


class _PairCache:
    """Verlet list of particle pairs for count-rule fields.

    Holds every pair within ``1 + eps/2 + skin`` at build time and is rebuilt once some
    particle has drifted ``skin/2`` from where it stood, so every pair that can reach a
    midpoint ball is always listed.
    """

    def __init__(self, points: np.ndarray, eps: float, domain, skin: float = NEIGHBOUR_SKIN):
        self.eps = eps
        self.skin = skin
        self.domain = domain
        self.rebuilds = 0
        self._build(points)

    def _build(self, points: np.ndarray) -> None:
        boxsize = self.domain.side if self.domain.periodic else None
        tree = cKDTree(points, boxsize=boxsize)
        reach = INTERACTION_RADIUS + 0.5 * self.eps + self.skin
        pairs = np.asarray(tree.query_pairs(reach, output_type="ndarray"), dtype=int).reshape(-1, 2)
        self.first = np.concatenate([pairs[:, 0], pairs[:, 1]])
        self.second = np.concatenate([pairs[:, 1], pairs[:, 0]])
        self.anchor = np.array(points)
        self.rebuilds += 1

    def refresh(self, points: np.ndarray) -> None:
        drift = self.domain.displacement(points, self.anchor)
        if np.max(np.einsum("ij,ij->i", drift, drift)) >= (0.5 * self.skin) ** 2:
            self._build(points)

    def midpoint_counts(self, points: np.ndarray) -> np.ndarray:
        """Particles in the closed unit ball at every edge midpoint, mover included, in _chain_step row order."""
        n, d = points.shape
        self.refresh(points)
        diff = self.domain.displacement(points[self.second], points[self.first])
        counts = np.ones((2 * d, n))
        for k in range(d):
            for s, sign in enumerate((1.0, -1.0)):
                off = diff.copy()
                off[:, k] -= sign * 0.5 * self.eps
                near = np.einsum("ij,ij->i", off, off) <= INTERACTION_RADIUS**2
                counts[2 * k + s] += np.bincount(self.first[near], minlength=n)
        return counts.ravel()


def _chain_step(
    points: np.ndarray,
    fld: CoefficientField,
    dt: float,
    eps: float,
    domain,
    rng: np.random.Generator,
    cache: _PairCache | None = None,
) -> np.ndarray:
    n, d = points.shape
    targets = _edge_targets(points, eps)
    if cache is not None:
        c = np.asarray(fld.count_rule(cache.midpoint_counts(points)), dtype=float)
    else:
        mids = 0.5 * (points[None, :, :] + targets)
        mids = domain.wrap(mids.reshape(-1, d))
        movers = np.tile(np.arange(n), 2 * d)
        axes = np.repeat(np.arange(d), 2 * n)
        c = _midpoint_conductances(fld, points, mids, movers, axes, domain)
    probs = (dt * c / eps**2).reshape(2 * d, n).T
    cum = np.cumsum(probs, axis=1)
    u = rng.random(n)
    moved = u < cum[:, -1]
    if not np.any(moved):
        return points
    choice = np.argmax(u[:, None] < cum, axis=1)
    new = points.copy()
    rows = np.flatnonzero(moved)
    new[rows] = targets[choice[rows], rows]
    return domain.wrap(new)


def _run_chain(points: np.ndarray, fld: CoefficientField, t: float, params: SchemeParams, domain, rng) -> np.ndarray:
    if t == 0 or points.shape[0] == 0:
        return points
    n_steps = max(1, math.ceil(t / params.dt - 1e-9))
    dt = t / n_steps
    cache = None
    reach = INTERACTION_RADIUS + params.eps + NEIGHBOUR_SKIN
    if fld.constant is None and fld.count_rule is not None and (not domain.periodic or domain.side > 2 * reach):
        cache = _PairCache(points, params.eps, domain)
    for _ in range(n_steps):
        points = _chain_step(points, fld, dt, params.eps, domain, rng, cache)
    if cache is not None:
        _LOG.debug("Chain of %d steps rebuilt the pair list %d times", n_steps, cache.rebuilds)
    return points


def _check(mu0: Configuration, fld: CoefficientField, t: float, params: SchemeParams) -> None:
    if t < 0:
        raise InvalidParameterError(f"time must be non-negative, got {t}")
    if params.scheme is Scheme.EXACT_GAUSSIAN and fld.constant is None:
        raise InvalidParameterError(f"exact-gaussian scheme needs a constant field, got {fld.name}")
    if params.scheme is Scheme.CONDUCTANCE_CHAIN:
        if not fld.diagonal:
            raise InvalidParameterError(f"conductance-chain scheme needs a diagonal field, got {fld.name}")
        params.check_stability(fld, mu0.domain.d)


def _advance(points: np.ndarray, fld: CoefficientField, t: float, params: SchemeParams, domain, rng) -> np.ndarray:
    if t == 0 or points.shape[0] == 0:
        return points
    if params.scheme is Scheme.EXACT_GAUSSIAN:
        sigma = math.sqrt(2.0 * fld.constant * t)
        return domain.wrap(points + rng.normal(0.0, sigma, size=points.shape))
    return _run_chain(points, fld, t, params, domain, rng)


@log_timing(name="evolve")
def evolve(
    mu0: Configuration, fld: CoefficientField, t: float, params: SchemeParams, rng: np.random.Generator
) -> Configuration:
    """Sample mu_t given mu_0."""
    _check(mu0, fld, t, params)
    if t == 0:
        return mu0
    return mu0.with_points(_advance(np.array(mu0.points), fld, t, params, mu0.domain, rng))


def evolve_pair(
    mu0: Configuration, fld: CoefficientField, t: float, params: SchemeParams, stream: RngStream
) -> tuple[Configuration, Configuration]:
    """Two conditionally independent replicas of mu_t, driven by stream.child("a") and stream.child("b")."""
    return (
        evolve(mu0, fld, t, params, stream.child("a").generator()),
        evolve(mu0, fld, t, params, stream.child("b").generator()),
    )


def evolve_trajectory(
    mu0: Configuration, fld: CoefficientField, times: Sequence[float], params: SchemeParams, rng: np.random.Generator
) -> Trajectory:
    """Snapshots of one trajectory at strictly increasing times."""
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise InvalidParameterError("snapshot times must be non-negative")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise InvalidParameterError("snapshot times must be strictly increasing")
    _check(mu0, fld, times[-1] if times else 0.0, params)

    snapshots: list[tuple[float, Configuration]] = []
    points = np.array(mu0.points)
    now = 0.0
    for t in times:
        points = _advance(points, fld, t - now, params, mu0.domain, rng)
        now = t
        snapshots.append((t, mu0.with_points(points)))
    _LOG.debug("Trajectory of %d particles with %d snapshots up to t=%g", len(mu0), len(snapshots), now)
    return Trajectory(mu0, snapshots)


def trajectory_to_dict(traj: Trajectory) -> dict:
    return {
        "initial": traj.initial.to_dict(),
        "snapshots": [{"t": t, **mu.to_dict()} for t, mu in traj.snapshots],
    }


def trajectory_rows(traj: Trajectory) -> list[dict]:
    """Flat rows (t, particle index, coordinates) for CSV output."""
    rows = []
    frames = [(0.0, traj.initial)] + list(traj.snapshots)
    for t, mu in frames:
        for i, p in enumerate(mu.points):
            row = {"t": t, "particle": i}
            row.update({f"x{k + 1}": float(v) for k, v in enumerate(p)})
            rows.append(row)
    return rows
