"""Monte Carlo estimators for u_t, Var[u_t] and the conditional expectations A_K, B_{L,l}.

Every outer draw j owns the stream ``stream.child(j)`` and every inner replica i of that
draw owns ``stream.child(j, "pair", i)``; results are aggregated in index order with
compensated sums, so they do not depend on the number of workers.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .configuration import (
    Box,
    Configuration,
    Domain,
    PoissonParams,
    count,
    restrict,
    restrict_complement,
    resample_outside,
    sample_poisson,
    union,
)
from .dynamics import SchemeParams, evolve, evolve_pair
from .errors import InfeasibleScaleError, InvalidParameterError
from .fields import CoefficientField
from .observables import LocalFunction
from .rng import RngStream
from .utils import fsum_mean, fsum_sample_variance, log_timing, parallel_map

_LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorResult:
    estimate: float
    variance: float
    n_outer: int
    n_inner: int
    seed: int

    @property
    def stderr(self) -> float:
        """sqrt(variance / n_outer)."""
        return math.sqrt(max(self.variance, 0.0) / self.n_outer)

    def z_against(self, exact: float) -> float:
        """(estimate - exact) / stderr; infinite when the error is zero and the values differ."""
        if self.stderr == 0:
            return 0.0 if self.estimate == exact else math.copysign(math.inf, self.estimate - exact)
        return (self.estimate - exact) / self.stderr

    def as_row(self, **extra) -> dict:
        row = dict(extra)
        row.update(
            estimate=self.estimate,
            stderr=self.stderr,
            n_outer=self.n_outer,
            n_inner=self.n_inner,
            seed=self.seed,
        )
        return row


def mean_result(samples: Sequence[float], n_inner: int, seed: int) -> EstimatorResult:
    """Sample mean with the sample variance of the per-draw terms."""
    return EstimatorResult(fsum_mean(samples), fsum_sample_variance(samples), len(samples), n_inner, seed)


def _ordered_inside_first(mu: Configuration, box: Box) -> Configuration:
    """Same multiset with the points of ``box`` first, matching resample_outside's layout."""
    return union(restrict(mu, box), restrict_complement(mu, box))


@log_timing(name="estimate_ut")
def estimate_ut(
    u: LocalFunction,
    mu0: Configuration,
    fld: CoefficientField,
    t: float,
    params: SchemeParams,
    n_inner: int,
    stream: RngStream,
) -> float:
    """Average of u(mu_t) over n_inner independent trajectories from mu0."""
    if n_inner < 1:
        raise InvalidParameterError(f"n_inner must be at least 1, got {n_inner}")
    if t == 0:
        return u(mu0)
    vals = [u(evolve(mu0, fld, t, params, stream.child("inner", i).generator())) for i in range(n_inner)]
    return fsum_mean(vals)


def _pair_terms(
    u: LocalFunction,
    mu0: Configuration,
    fld: CoefficientField,
    t: float,
    params: SchemeParams,
    n_inner: int,
    stream: RngStream,
    center: float = 0.0,
) -> tuple[float, float]:
    """(mean of (u(A)-center)(u(B)-center), mean of (u(A)+u(B))/2) over n_inner replica pairs from mu0."""
    if t == 0:
        v = u(mu0)
        return (v - center) ** 2, v
    prods, means = [], []
    for i in range(n_inner):
        mu_a, mu_b = evolve_pair(mu0, fld, t, params, stream.child("pair", i))
        a, b = u(mu_a), u(mu_b)
        prods.append((a - center) * (b - center))
        means.append(0.5 * (a + b))
    return fsum_mean(prods), fsum_mean(means)


@log_timing(name="estimate_var_ut")
def estimate_var_ut(
    u: LocalFunction,
    fld: CoefficientField,
    t: float,
    params: SchemeParams,
    n_outer: int,
    n_inner: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    workers: int = 1,
    progress_every: int = 0,
) -> EstimatorResult:
    """Unbiased estimate of Var[u_t] under the Poisson law.

    Y_j, the mean of u(A)u(B) over replica pairs, is unbiased for u_t(mu_j)^2. When the
    mean m of u is declared the products are centered, (u(A) - m)(u(B) - m), and Y_j is
    unbiased for (u_t(mu_j) - m)^2; otherwise the squared mean is estimated by the U-statistic over distinct outer draws.
    """
    if n_inner < 1 or n_outer < 2:
        raise InvalidParameterError(f"need n_inner >= 1 and n_outer >= 2, got {n_inner}, {n_outer}")
    center = 0.0 if u.mean is None else u.mean

    def one(j: int) -> tuple[float, float]:
        if progress_every and j and j % progress_every == 0:
            _LOG.info("Var[u_t] t=%g: outer draw %d/%d", t, j, n_outer)
        draw = stream.child(j)
        mu0 = sample_poisson(domain, poisson, draw.child("initial").generator())
        return _pair_terms(u, mu0, fld, t, params, n_inner, draw, center)

    terms = parallel_map(one, list(range(n_outer)), workers)
    ys = [y for y, _ in terms]
    zs = [z for _, z in terms]

    if u.mean is not None:
        return EstimatorResult(fsum_mean(ys), fsum_sample_variance(ys), n_outer, n_inner, stream.seed)

    n = n_outer
    sum_z = math.fsum(zs)
    sum_z2 = math.fsum(z * z for z in zs)
    mean_sq = (sum_z * sum_z - sum_z2) / (n * (n - 1))
    estimate = fsum_mean(ys) - mean_sq
    zbar = sum_z / n
    influence = [y - 2.0 * zbar * z for y, z in zip(ys, zs)]
    return EstimatorResult(estimate, fsum_sample_variance(influence), n_outer, n_inner, stream.seed)


def estimate_mean_ut(
    u: LocalFunction,
    fld: CoefficientField,
    t: float,
    params: SchemeParams,
    n_outer: int,
    n_inner: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    workers: int = 1,
) -> EstimatorResult:
    """E[u_t] over Poisson initial data; equals E[u] by mean conservation."""

    def one(j: int) -> float:
        draw = stream.child(j)
        mu0 = sample_poisson(domain, poisson, draw.child("initial").generator())
        return estimate_ut(u, mu0, fld, t, params, n_inner, draw)

    return mean_result(parallel_map(one, list(range(n_outer)), workers), n_inner, stream.seed)


def cube(u: LocalFunction, K: float) -> Box:
    """Q_K centered on the support of u."""
    return Box.cube(u.center, K)


def conditional_A_K(
    u: LocalFunction,
    fld: CoefficientField,
    t: float,
    mu: Configuration,
    K: float,
    params: SchemeParams,
    n_cond: int,
    n_inner: int,
    stream: RngStream,
    poisson: PoissonParams,
) -> float:
    """MC estimate of A_K u_t(mu) = E[u_t | mu restricted to Q_K].

    When Q_K covers the domain no resampling happens and the result is
    ``estimate_ut(u, mu, ..., stream.child("cond", 0))``.
    """
    if n_cond < 1:
        raise InvalidParameterError(f"n_cond must be at least 1, got {n_cond}")
    q = cube(u, K)
    if q.covers(mu.domain):
        return estimate_ut(u, mu, fld, t, params, n_inner, stream.child("cond", 0))
    vals = []
    for c in range(n_cond):
        sub = stream.child("cond", c)
        resampled = resample_outside(mu, q, poisson, sub.child("outside").generator())
        vals.append(estimate_ut(u, resampled, fld, t, params, n_inner, sub))
    return fsum_mean(vals)


def _localization_term(
    u: LocalFunction,
    fld: CoefficientField,
    t: float,
    mu: Configuration,
    q: Box,
    params: SchemeParams,
    n_inner: int,
    stream: RngStream,
    poisson: PoissonParams,
) -> float:
    """One unbiased sample of E[(u_t - A_K u_t)^2 | mu] = u_t(mu)^2 - (A_K u_t)^2 contribution.

    Replica i of mu and replica i of each outside-resampled copy share their stream, so
    the particles kept inside Q_K receive the same driving noise.
    """
    if q.covers(mu.domain):
        return 0.0
    ordered = _ordered_inside_first(mu, q)
    left = resample_outside(mu, q, poisson, stream.child("outside", 0).generator())
    right = resample_outside(mu, q, poisson, stream.child("outside", 1).generator())
    vals = []
    for i in range(n_inner):
        pair = stream.child("pair", i)
        ga, gb = pair.child("a"), pair.child("b")
        a = u(evolve(ordered, fld, t, params, ga.generator()))
        b = u(evolve(ordered, fld, t, params, gb.generator()))
        a2 = u(evolve(left, fld, t, params, ga.generator()))
        b2 = u(evolve(right, fld, t, params, gb.generator()))
        vals.append(a * b - a2 * b2)
    return fsum_mean(vals)


@log_timing(name="localization_gap")
def localization_gap(
    u: LocalFunction,
    fld: CoefficientField,
    t: float,
    K: float,
    params: SchemeParams,
    n_outer: int,
    n_inner: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    workers: int = 1,
) -> EstimatorResult:
    """Unbiased estimate of E[(u_t - A_K u_t)^2] = E[u_t^2] - E[(A_K u_t)^2]."""
    if n_inner < 1 or n_outer < 2:
        raise InvalidParameterError(f"need n_inner >= 1 and n_outer >= 2, got {n_inner}, {n_outer}")
    q = cube(u, K)

    def one(j: int) -> float:
        draw = stream.child(j)
        mu0 = sample_poisson(domain, poisson, draw.child("initial").generator())
        return _localization_term(u, fld, t, mu0, q, params, n_inner, draw, poisson)

    return mean_result(parallel_map(one, list(range(n_outer)), workers), n_inner, stream.seed)


def second_moment(
    u: LocalFunction, n_outer: int, stream: RngStream, domain: Domain, poisson: PoissonParams, workers: int = 1
) -> EstimatorResult:
    """E[u^2] under the Poisson law, from the same initial draws the other estimators use."""

    def one(j: int) -> float:
        mu0 = sample_poisson(domain, poisson, stream.child(j).child("initial").generator())
        v = u(mu0)
        return v * v

    return mean_result(parallel_map(one, list(range(n_outer)), workers), 1, stream.seed)


@dataclass(frozen=True, eq=False)
class BlockCounts:
    """Particle counts in the (L/l)^d blocks of Q_L, blocks in C order of their index."""

    L: float
    l: float
    d: int
    counts: np.ndarray
    center: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        per_axis = blocks_per_axis(self.L, self.l)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        if counts.size != per_axis**self.d:
            raise InvalidParameterError(f"expected {per_axis ** self.d} block counts, got {counts.size}")
        if np.any(counts < 0):
            raise InvalidParameterError("block counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "center", tuple(self.center) if self.center is not None else (0.0,) * self.d)

    @property
    def per_axis(self) -> int:
        """L / l."""
        return blocks_per_axis(self.L, self.l)

    @property
    def q(self) -> int:
        """Number of blocks."""
        return int(self.counts.size)

    @property
    def total(self) -> int:
        """Particles in Q_L."""
        return int(self.counts.sum())

    def block(self, i: int) -> Box:
        """Block i as a box in domain coordinates."""
        idx = np.unravel_index(i, (self.per_axis,) * self.d)
        lower = np.asarray(self.center) - 0.5 * self.L + self.l * np.asarray(idx, dtype=float)
        return Box(tuple(lower), tuple(lower + self.l))


def blocks_per_axis(L: float, l: float) -> int:
    """L / l, which must be a positive integer."""
    if not (L > 0 and l > 0):
        raise InvalidParameterError(f"block scales must be positive, got L={L}, l={l}")
    ratio = L / l
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise InfeasibleScaleError("l | L", f"L/l must be a positive integer, got L={L}, l={l}")
    return n


def block_counts(mu: Configuration, L: float, l: float, center: Sequence[float] | None = None) -> BlockCounts:
    """Counts of mu in the blocks of side l tiling Q_L (centered at ``center``)."""
    d = mu.domain.d
    n = blocks_per_axis(L, l)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    q_l = Box.cube(c, L)
    inside = restrict(mu, q_l)
    offsets = mu.domain.displacement(inside.points, c) + 0.5 * L
    idx = np.clip(np.floor(offsets / l).astype(np.int64), 0, n - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (n,) * d) if len(inside) else np.empty(0, dtype=np.int64)
    counts = np.bincount(flat, minlength=n**d)
    return BlockCounts(L, l, d, counts, center=tuple(c))


def is_delta_good(M: BlockCounts, rho: float, delta: float) -> bool:
    """Every block count within relative distance delta of rho l^d."""
    mean = rho * M.l**M.d
    if mean <= 0:
        raise InvalidParameterError("rho l^d must be positive")
    return bool(np.all(np.abs(M.counts / mean - 1.0) <= delta + 1e-12))


def sample_given_counts(
    M: BlockCounts, domain: Domain, poisson: PoissonParams, rng: np.random.Generator
) -> Configuration:
    """Uniform points per block with the prescribed counts, plus fresh Poisson outside Q_L."""
    parts = []
    for i, m in enumerate(M.counts):
        if m == 0:
            continue
        b = M.block(i)
        pts = rng.uniform(np.asarray(b.lower), np.asarray(b.upper), size=(int(m), M.d))
        parts.append(pts)
    inside = np.concatenate(parts, axis=0) if parts else np.empty((0, M.d))
    q_l = Box.cube(M.center, M.L)
    outside = Configuration.empty(domain)
    if not q_l.covers(domain):
        outside = restrict_complement(sample_poisson(domain, poisson, rng), q_l)
    return union(Configuration(domain, domain.wrap(inside)), outside)


def conditional_B(
    u: LocalFunction,
    M: BlockCounts,
    fld: CoefficientField,
    t: float,
    params: SchemeParams,
    n_cond: int,
    n_inner: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
) -> float:
    """MC estimate of B_{L,l} u_t = E[u_t | block counts = M]."""
    if n_cond < 1:
        raise InvalidParameterError(f"n_cond must be at least 1, got {n_cond}")
    vals = []
    for c in range(n_cond):
        sub = stream.child("block", c)
        mu = sample_given_counts(M, domain, poisson, sub.child("positions").generator())
        vals.append(estimate_ut(u, mu, fld, t, params, n_inner, sub))
    return fsum_mean(vals)


def rejection_given_total(
    u: LocalFunction,
    box: Box,
    total: int,
    n_accept: int,
    domain: Domain,
    poisson: PoissonParams,
    rng: np.random.Generator,
    max_tries: int = 1_000_000,
    fld: CoefficientField | None = None,
    t: float = 0.0,
    params: SchemeParams | None = None,
) -> float:
    """E[u_t | mu_0(box) = total] by rejection from the Poisson law (reference sampler).

    Accepted configurations are evolved for time t with ``rng`` when a field is given.
    """
    if t > 0 and fld is None:
        raise InvalidParameterError("a coefficient field is needed to evolve accepted samples")
    vals = []
    tries = 0
    while len(vals) < n_accept:
        tries += 1
        if tries > max_tries:
            raise InvalidParameterError(f"rejection sampler exceeded {max_tries} tries")
        mu = sample_poisson(domain, poisson, rng)
        if count(mu, box) != total:
            continue
        if t > 0:
            mu = evolve(mu, fld, t, params or SchemeParams(), rng)
        vals.append(u(mu))
    return fsum_mean(vals)


def sample_covariance(xs: Sequence[float], ys: Sequence[float]) -> EstimatorResult:
    """Sample covariance with a delta-method standard error."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    n = x.size
    if n < 3:
        raise InvalidParameterError("need at least 3 samples for a covariance")
    terms = (x - fsum_mean(x)) * (y - fsum_mean(y))
    est = math.fsum(terms) / (n - 1)
    return EstimatorResult(est, fsum_sample_variance(terms), n, 1, 0)


def check_scales(d: int, side: float, K_max: float, t_max: float, pad_factor: float = 6.0) -> None:
    """L_sim >= 2 (K_max + pad_factor sqrt(t_max)) and K_max <= L_sim / 2."""
    if K_max > 0.5 * side:
        raise InfeasibleScaleError("K <= L_sim/2", f"K={K_max:g} exceeds half the domain side {side:g}")
    need = 2.0 * (K_max + pad_factor * math.sqrt(max(t_max, 0.0)))
    if side < need:
        raise InfeasibleScaleError(
            "L_sim >= 2(K_max + c_pad sqrt(t_max))", f"domain side {side:g} < {need:g} (d={d})"
        )

