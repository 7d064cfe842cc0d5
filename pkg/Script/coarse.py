"""Coarse-graining lattice paths from 0 to y and the telescoping identity they carry.

Intermediate waypoints lie on (kZ)^d and consecutive ones differ by a step in k{-1,0,1}^d;
the last step lands on y and has sup-norm at most k, so n(y) = ceil(|y|_inf / k).
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from typing import Sequence

import numpy as np

from .configuration import Configuration, transport
from .errors import InvalidParameterError
from .observables import LocalFunction

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class CoarsePath:
    target: tuple[int, ...]
    k: int
    waypoints: tuple[tuple[int, ...], ...]

    @property
    def n(self) -> int:
        """Number of steps n(y)."""
        return len(self.waypoints) - 1

    @property
    def steps(self) -> list[tuple[int, ...]]:
        return [tuple(b - a for a, b in zip(p, q)) for p, q in zip(self.waypoints, self.waypoints[1:])]

    def violations(self) -> list[str]:
        """Broken path invariants, empty when the path is well formed."""
        out = []
        d = len(self.target)
        if self.waypoints[0] != (0,) * d:
            out.append("path does not start at 0")
        if self.waypoints[-1] != self.target:
            out.append("path does not end at the target")
        for i, z in enumerate(self.waypoints[1:-1], start=1):
            if any(c % self.k for c in z):
                out.append(f"waypoint {i} = {z} is off the k-lattice")
        for i, h in enumerate(self.steps):
            if max((abs(c) for c in h), default=0) > self.k:
                out.append(f"step {i} = {h} is longer than k")
        return out


def _as_lattice(y: Sequence[int]) -> tuple[int, ...]:
    out = []
    for c in y:
        if isinstance(c, float) and not c.is_integer():
            raise InvalidParameterError(f"target must be a lattice vector, got {tuple(y)}")
        out.append(int(c))
    return tuple(out)


def coarse_path(y: Sequence[int], k: int) -> CoarsePath:
    """Diagonal path: every axis still more than k from y moves +-k at once, then jump to y."""
    y = _as_lattice(y)
    if k < 1 or int(k) != k:
        raise InvalidParameterError(f"scale k must be a positive integer, got {k}")
    k = int(k)
    z = [0] * len(y)
    waypoints = [tuple(z)]
    if not any(y):
        return CoarsePath(y, k, tuple(waypoints))
    while max(abs(c - p) for c, p in zip(y, z)) > k:
        for j, c in enumerate(y):
            if abs(c - z[j]) > k:
                z[j] += k if c > z[j] else -k
        waypoints.append(tuple(z))
    waypoints.append(y)
    return CoarsePath(y, k, tuple(waypoints))


def path_length(y: Sequence[int], k: int) -> int:
    """n(y) of the template, without building the path."""
    y = _as_lattice(y)
    if not any(y):
        return 0
    return math.ceil(max(abs(c) for c in y) / k)


@lru_cache(maxsize=32)
def _lattice_distances(k: int, d: int, radius: int) -> dict[tuple[int, ...], int]:
    """BFS step counts from 0 over (kZ)^d with moves in k{-1,0,1}^d, inside |m|_inf <= radius*k."""
    start = (0,) * d
    moves = [m for m in product((-1, 0, 1), repeat=d) if any(m)]
    dist = {start: 0}
    queue = deque([start])
    while queue:
        z = queue.popleft()
        for m in moves:
            nxt = tuple(c + k * s for c, s in zip(z, m))
            if max(abs(c) for c in nxt) > radius * k or nxt in dist:
                continue
            dist[nxt] = dist[z] + 1
            queue.append(nxt)
    return dist


def minimal_steps_bfs(y: Sequence[int], k: int) -> int:
    """Brute-force minimum of n(y): BFS to a lattice point, plus one final step of sup-norm <= k."""
    y = _as_lattice(y)
    d = len(y)
    if not any(y):
        return 0
    radius = max(abs(c) for c in y) // k + 2
    dist = _lattice_distances(k, d, radius)
    near = [range(-((k - c) // k), (c + k) // k + 1) for c in y]
    best = math.inf
    for m in product(*near):
        z = tuple(k * v for v in m)
        n = dist.get(z)
        if n is None:
            continue
        best = min(best, n if z == y else n + 1)
    return int(best)


def verify_coarse_paths(radius: int, ks: Sequence[int], dims: Sequence[int]) -> list[str]:
    """Check every y in [-radius, radius]^d: path invariants and minimality against BFS."""
    failures = []
    for d in dims:
        for k in ks:
            for y in product(range(-radius, radius + 1), repeat=d):
                path = coarse_path(y, k)
                for v in path.violations():
                    failures.append(f"d={d} k={k} y={y}: {v}")
                brute = minimal_steps_bfs(y, k)
                if path.n != path_length(y, k):
                    failures.append(f"d={d} k={k} y={y}: n={path.n} but path_length gives {path_length(y, k)}")
                if path.n != brute:
                    failures.append(f"d={d} k={k} y={y}: n={path.n} but BFS gives {brute}")
    if failures:
        _LOG.warning("Coarse path check: %d failures", len(failures))
    return failures


def telescope_check(u: LocalFunction, y: Sequence[int], k: int, mu: Configuration) -> float:
    """u - tau_y u minus sum_i tau_{z_i}(u - tau_{h_i} u), all evaluated on mu."""
    path = coarse_path(y, k)
    lhs = u(mu) - u(transport(mu, -np.asarray(path.target, dtype=float)))
    terms = []
    for z, h in zip(path.waypoints, path.steps):
        shifted = transport(mu, -np.asarray(z, dtype=float))
        terms.append(u(shifted))
        terms.append(-u(transport(shifted, -np.asarray(h, dtype=float))))
    return lhs - math.fsum(terms)


def random_telescope_residuals(
    u: LocalFunction, mus: Sequence[Configuration], rng: np.random.Generator, max_shift: int = 12
) -> np.ndarray:
    """Residuals of telescope_check for random (mu, y, k), one per configuration."""
    out = np.empty(len(mus))
    for i, mu in enumerate(mus):
        y = rng.integers(-max_shift, max_shift + 1, size=mu.domain.d)
        k = int(rng.integers(1, 6))
        out[i] = telescope_check(u, y, k, mu)
    return out
