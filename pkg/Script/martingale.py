"""The cube-filtration martingale s -> A_s f, its jumps, its bracket and the multiscale functional.

Q_s is the closed cube of side s around the center of f. A_s f(mu) averages f over
configurations that agree with mu on Q_s and carry fresh Poisson points outside it. One
set of fresh samples is shared by every scale of a path, so the sampled path is
piecewise smooth with jumps exactly at the hitting times tau(x) = 2 |x - center|_inf.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .configuration import Configuration, Domain, PoissonParams, sample_poisson
from .errors import InvalidParameterError
from .estimators import EstimatorResult
from .observables import LocalFunction
from .rng import RngStream
from .utils import fsum_mean, fsum_sample_variance, log_timing, parallel_map

_LOG = logging.getLogger(__name__)


def hitting_times(f: LocalFunction, mu: Configuration) -> np.ndarray:
    """tau(x) = min{s : x in Q_s} for every point of mu."""
    if len(mu) == 0:
        return np.empty(0)
    off = mu.domain.displacement(mu.points, np.asarray(f.center))
    return 2.0 * np.max(np.abs(off), axis=1)


def geometric_grid(s_min: float, s_max: float, n_points: int) -> np.ndarray:
    if n_points < 2:
        raise InvalidParameterError(f"an s-grid needs at least 2 points, got {n_points}")
    if not 0 <= s_min < s_max:
        raise InvalidParameterError(f"need 0 <= s_min < s_max, got {s_min}, {s_max}")
    if s_min == 0:
        return np.concatenate([[0.0], np.geomspace(s_max / 2 ** (n_points - 2), s_max, n_points - 1)])
    return np.geomspace(s_min, s_max, n_points)


def _pair_mean(values: np.ndarray) -> float:
    """Unbiased estimate of (E v)^2 from iid samples: mean over ordered distinct pairs."""
    n = values.size
    if n < 2:
        raise InvalidParameterError("pair products need at least 2 conditional samples")
    total = math.fsum(values)
    return (total * total - math.fsum(values * values)) / (n * (n - 1))


class _ConditionalSampler:
    """Evaluates f on mu kept inside Q_s and fresh samples outside, for a fixed mu."""

    def __init__(self, f: LocalFunction, mu: Configuration, fresh: Sequence[Configuration]):
        self.f = f
        self.mu = mu
        self.tau = hitting_times(f, mu)
        self.fresh = [(w, hitting_times(f, w)) for w in fresh]

    def values(self, s: float, keep: np.ndarray | None = None) -> np.ndarray:
        """f(kept points of mu + fresh points beyond Q_s), one value per fresh sample."""
        if keep is None:
            keep = self.tau <= s
        kept = self.mu.points[keep]
        out = np.empty(len(self.fresh))
        for c, (w, tau_w) in enumerate(self.fresh):
            pts = np.concatenate([kept, w.points[tau_w > s]], axis=0)
            out[c] = self.f(self.mu.with_points(pts))
        return out

    def jump_samples(self, i: int) -> np.ndarray:
        """A_tau f(mu) - A_tau- f(mu) at tau = tau(x_i), per fresh sample (left limit drops x_i)."""
        s = float(self.tau[i])
        before = self.tau < s
        after = before.copy()
        after[i] = True
        return self.values(s, after) - self.values(s, before)


@dataclass(frozen=True)
class MartingalePath:
    s: np.ndarray
    values: np.ndarray
    hitting_times: np.ndarray
    jumps: np.ndarray
    n_cond: int

    def rows(self) -> list[dict]:
        return [{"s": float(s), "estimate": float(v), "n_cond": self.n_cond} for s, v in zip(self.s, self.values)]


def _fresh_samples(mu: Configuration, n_cond: int, stream: RngStream, poisson: PoissonParams) -> list[Configuration]:
    return [sample_poisson(mu.domain, poisson, stream.child("fresh", c).generator()) for c in range(n_cond)]


@log_timing(name="spatial_martingale")
def spatial_martingale(
    f: LocalFunction,
    mu: Configuration,
    s_grid: Sequence[float],
    n_cond: int,
    stream: RngStream,
    poisson: PoissonParams,
) -> MartingalePath:
    """Sampled path of s -> A_s f(mu), with every hitting time inside the grid range inserted."""
    if n_cond < 1:
        raise InvalidParameterError(f"n_cond must be at least 1, got {n_cond}")
    grid = np.asarray(sorted(float(s) for s in s_grid))
    if grid.size == 0 or grid[0] < 0:
        raise InvalidParameterError("s-grid must be non-empty and non-negative")
    sampler = _ConditionalSampler(f, mu, _fresh_samples(mu, n_cond, stream, poisson))
    inside = (sampler.tau >= grid[0]) & (sampler.tau <= grid[-1])
    grid = np.unique(np.concatenate([grid, sampler.tau[inside]]))
    values = np.array([fsum_mean(sampler.values(float(s))) for s in grid])
    jumps = np.full(len(mu), np.nan)
    for i in np.flatnonzero(inside):
        jumps[i] = fsum_mean(sampler.jump_samples(int(i)))
    return MartingalePath(grid, values, sampler.tau, jumps, n_cond)


def void_indicator_conditional(mu: Configuration, r: float, s: float, rho: float, center: Sequence[float] | None = None) -> float:
    """A_s f(mu) in closed form for f = 1{mu(Q_r) = 0} - exp(-rho r^d)."""
    d = mu.domain.d
    p0 = math.exp(-rho * r**d)
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    if len(mu):
        tau = 2.0 * np.max(np.abs(mu.domain.displacement(mu.points, c)), axis=1)
    else:
        tau = np.empty(0)
    if s >= r:
        empty = not np.any(tau < r)
        return (1.0 if empty else 0.0) - p0
    empty = not np.any(tau <= s)
    return (math.exp(-rho * (r**d - s**d)) if empty else 0.0) - p0


def void_indicator_second_moment(r: float, s: float, rho: float, d: int) -> float:
    """E[(A_s f)^2] for the centered void indicator: exp(-rho(2r^d - s^d)) - p0^2 below r."""
    p0 = math.exp(-rho * r**d)
    s = min(s, r)
    return math.exp(-rho * (2.0 * r**d - s**d)) - p0 * p0


def _draw(domain: Domain, poisson: PoissonParams, stream: RngStream, j: int) -> tuple[Configuration, RngStream]:
    sub = stream.child(j)
    return sample_poisson(domain, poisson, sub.child("initial").generator()), sub


@log_timing(name="second_moment_profile")
def second_moment_profile(
    f: LocalFunction,
    s_grid: Sequence[float],
    n_outer: int,
    n_cond: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    workers: int = 1,
) -> list[EstimatorResult]:
    """E[(A_s f)^2] at each s, from pair products f(mu_s + w) f(mu_s + w') of fresh samples."""
    if n_outer < 2 or n_cond < 2:
        raise InvalidParameterError(f"need n_outer >= 2 and n_cond >= 2, got {n_outer}, {n_cond}")
    grid = [float(s) for s in s_grid]

    def one(j: int) -> list[float]:
        mu, sub = _draw(domain, poisson, stream, j)
        sampler = _ConditionalSampler(f, mu, _fresh_samples(mu, n_cond, sub, poisson))
        return [_pair_mean(sampler.values(s)) for s in grid]

    per_draw = np.asarray(parallel_map(one, list(range(n_outer)), workers))
    return [
        EstimatorResult(fsum_mean(col), fsum_sample_variance(col), n_outer, n_cond, stream.seed)
        for col in per_draw.T
    ]


def _regularization_rule(eps: float, order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Nodes r in [0, eps] and weights of (2/eps^2) int_0^eps (eps - r) g(r) dr."""
    x, w = np.polynomial.legendre.leggauss(order)
    r = 0.5 * eps * (x + 1.0)
    weights = 0.5 * eps * w * (2.0 / eps**2) * (eps - r)
    return r, weights


@dataclass(frozen=True)
class BracketReport:
    s: float
    lhs: float
    lhs_err: float
    rhs: float
    rhs_err: float
    z: float
    eps_reg: float
    rhs_regularized: float

    def as_row(self) -> dict:
        return dict(self.__dict__)


@log_timing(name="bracket_isometry_check")
def bracket_isometry_check(
    f: LocalFunction,
    s: float,
    n_outer: int,
    n_cond: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    eps_reg: float = 0.0,
    workers: int = 1,
) -> BracketReport:
    """E[sum_{tau(x) <= s} (jump)^2] against E[(A_s f)^2] - (E f)^2.

    Squared jumps and squared conditional means use pair products over fresh samples,
    so both sides are unbiased. The z-score is computed from the per-draw difference.
    """
    if n_outer < 3 or n_cond < 2:
        raise InvalidParameterError(f"need n_outer >= 3 and n_cond >= 2, got {n_outer}, {n_cond}")
    if eps_reg < 0:
        raise InvalidParameterError(f"eps_reg must be non-negative, got {eps_reg}")
    nodes, weights = _regularization_rule(eps_reg) if eps_reg > 0 else (np.empty(0), np.empty(0))

    def one(j: int) -> tuple[float, float, float, float]:
        mu, sub = _draw(domain, poisson, stream, j)
        sampler = _ConditionalSampler(f, mu, _fresh_samples(mu, n_cond, sub, poisson))
        bracket = math.fsum(
            _pair_mean(sampler.jump_samples(int(i))) for i in np.flatnonzero(sampler.tau <= s)
        )
        second = _pair_mean(sampler.values(s))
        reg = math.fsum(w * _pair_mean(sampler.values(s + r)) for r, w in zip(nodes, weights)) if eps_reg > 0 else second
        return bracket, second, reg, f(mu)

    terms = np.asarray(parallel_map(one, list(range(n_outer)), workers))
    brackets, seconds, regs, fvals = terms.T

    if f.mean is not None:
        mean_sq = f.mean**2
        diff = brackets - seconds
        diff_var = fsum_sample_variance(diff)
    else:
        mean_sq = _pair_mean(fvals)
        fbar = fsum_mean(fvals)
        diff = brackets - seconds + 2.0 * fbar * fvals
        diff_var = fsum_sample_variance(diff)

    lhs = fsum_mean(brackets)
    rhs = fsum_mean(seconds) - mean_sq
    err = math.sqrt(diff_var / n_outer)
    gap = lhs - rhs
    z = 0.0 if err == 0 and gap == 0 else (gap / err if err > 0 else math.copysign(math.inf, gap))
    return BracketReport(
        s=float(s),
        lhs=lhs,
        lhs_err=math.sqrt(fsum_sample_variance(brackets) / n_outer),
        rhs=rhs,
        rhs_err=math.sqrt(fsum_sample_variance(seconds) / n_outer),
        z=z,
        eps_reg=float(eps_reg),
        rhs_regularized=fsum_mean(regs) - mean_sq,
    )


def regularized_profile(s_grid: np.ndarray, m: np.ndarray, s: float, eps: float) -> float:
    """(2/eps^2) int_0^eps (eps - r) m(s + r) dr with m linearly interpolated on s_grid."""
    if eps == 0:
        return float(np.interp(s, s_grid, m))
    r, w = _regularization_rule(eps)
    return float(np.dot(w, np.interp(s + r, s_grid, m)))


@dataclass(frozen=True)
class MultiscaleReport:
    k: float
    K: float
    beta: float
    eps_reg: float
    integrated: float
    stieltjes: float
    second_moment: float
    max_stderr: float

    @property
    def difference(self) -> float:
        return self.integrated - self.stieltjes

    def as_row(self) -> dict:
        row = dict(self.__dict__)
        row["difference"] = self.difference
        return row


def alpha(s: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(np.asarray(s, dtype=float) / beta)


@log_timing(name="multiscale_functional")
def multiscale_functional(
    f: LocalFunction,
    k: float,
    K: float,
    beta: float,
    n_points: int,
    n_outer: int,
    n_cond: int,
    stream: RngStream,
    domain: Domain,
    poisson: PoissonParams,
    eps_reg: float = 0.0,
    workers: int = 1,
) -> MultiscaleReport:
    """S = alpha_K E[f^2] - int_k^K alpha'_s E[(A_s f)^2] ds, alpha_s = exp(s / beta).

    ``integrated`` is the trapezoid rule for the integral above; ``stieltjes`` is the
    by-parts form alpha_k m(k) + int alpha dm + alpha_K (E[f^2] - m(K)) with midpoint alpha.
    Both read one estimated profile m(s) = E[(A_s f)^2] (or its regularization when
    eps_reg > 0).
    """
    if not 0 <= k <= K:
        raise InvalidParameterError(f"need 0 <= k <= K, got k={k}, K={K}")
    if not beta > 0:
        raise InvalidParameterError(f"beta must be positive, got {beta}")
    grid = np.array([float(k)]) if K == k else geometric_grid(k, K, n_points)
    profile_grid = grid
    if eps_reg > 0:
        profile_grid = np.unique(np.concatenate([grid, grid[-1] + np.linspace(0.0, eps_reg, 5)]))
    profile = second_moment_profile(f, profile_grid, n_outer, n_cond, stream.child("profile"), domain, poisson, workers)
    m_raw = np.array([p.estimate for p in profile])
    if eps_reg > 0:
        m = np.array([regularized_profile(profile_grid, m_raw, s, eps_reg) for s in grid])
    else:
        m = m_raw

    def sq(j: int) -> float:
        mu, _ = _draw(domain, poisson, stream.child("profile"), j)
        return f(mu) ** 2

    ef2 = fsum_mean(parallel_map(sq, list(range(n_outer)), workers))
    a = alpha(grid, beta)
    da = a / beta
    if grid.size > 1:
        ds = np.diff(grid)
        integral = math.fsum(0.5 * (da[:-1] * m[:-1] + da[1:] * m[1:]) * ds)
        stieltjes_sum = math.fsum(0.5 * (a[:-1] + a[1:]) * np.diff(m))
    else:
        integral = 0.0
        stieltjes_sum = 0.0
    integrated = float(a[-1] * ef2 - integral)
    stieltjes = float(a[0] * m[0] + stieltjes_sum + a[-1] * (ef2 - m[-1]))
    return MultiscaleReport(
        k=float(k),
        K=float(K),
        beta=float(beta),
        eps_reg=float(eps_reg),
        integrated=integrated,
        stieltjes=stieltjes,
        second_moment=ef2,
        max_stderr=max(p.stderr for p in profile),
    )
