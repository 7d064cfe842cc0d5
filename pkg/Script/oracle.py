"""Ground truth for the solvable case: constant diffusivity 1/2, independent Brownian particles.

For u(mu) = int f dmu under the Poisson law, Var[u] = rho ||f||^2 and Var[u_t] = rho ||f_t||^2
with f_t the heat flow of f (Gaussian kernel of variance t per coordinate).
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import convolve1d

from .errors import InvalidParameterError, PaddingError

_LOG = logging.getLogger(__name__)

PAD_FACTOR = 6.0


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of f on the uniform grid ``lower + h * index`` (one spacing for all axes)."""

    lower: tuple[float, ...]
    h: float
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        lower = tuple(float(v) for v in self.lower)
        if values.ndim != len(lower):
            raise InvalidParameterError("grid values must have one axis per coordinate")
        if not self.h > 0:
            raise InvalidParameterError(f"grid spacing must be positive, got {self.h}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "lower", lower)

    @classmethod
    def sample(
        cls, fn: Callable[[np.ndarray], np.ndarray], lower: Sequence[float], upper: Sequence[float], h: float
    ) -> "GridFunction":
        """Sample ``fn`` (vectorized over an (n, d) array of points) on a grid covering [lower, upper]."""
        lower = [float(v) for v in lower]
        counts = [int(round((float(u) - a) / h)) + 1 for a, u in zip(lower, upper)]
        axes = [a + h * np.arange(n) for a, n in zip(lower, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        values = np.asarray(fn(pts), dtype=float).reshape(counts)
        return cls(tuple(lower), h, values)

    @property
    def d(self) -> int:
        """Number of coordinates."""
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        """Nodes per axis."""
        return self.values.shape

    def axes(self) -> list[np.ndarray]:
        """Node coordinates along each axis."""
        return [a + self.h * np.arange(n) for a, n in zip(self.lower, self.shape)]

    @property
    def upper(self) -> tuple[float, ...]:
        """Last node per axis."""
        return tuple(a + self.h * (n - 1) for a, n in zip(self.lower, self.shape))

    def with_values(self, values: np.ndarray) -> "GridFunction":
        """Same grid, new samples."""
        return GridFunction(self.lower, self.h, values)

    def integral(self) -> float:
        """Trapezoid integral of f."""
        return _trapezoid(self.values, self.h)

    def l2_squared(self) -> float:
        """||f||^2 by the trapezoid rule."""
        return _trapezoid(self.values**2, self.h)

    def inner(self, other: "GridFunction") -> float:
        """<f, g> by the trapezoid rule; both must share the grid."""
        if other.shape != self.shape or other.h != self.h:
            raise InvalidParameterError("inner product needs functions on the same grid")
        return _trapezoid(self.values * other.values, self.h)

    def padded(self, margin: float) -> "GridFunction":
        """Extend the grid by at least ``margin`` of zeros on every side."""
        m = int(math.ceil(margin / self.h))
        values = np.pad(self.values, m, mode="constant")
        return GridFunction(tuple(a - m * self.h for a in self.lower), self.h, values)

    def support_margins(self) -> list[tuple[float, float]]:
        """Distances from the nonzero support to the low and high grid edges, per axis."""
        nz = np.nonzero(self.values)
        margins = []
        for k, n in enumerate(self.shape):
            if nz[0].size == 0:
                margins.append((math.inf, math.inf))
                continue
            lo, hi = int(nz[k].min()), int(nz[k].max())
            margins.append((lo * self.h, (n - 1 - hi) * self.h))
        return margins

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Piecewise-linear interpolation, zero outside the grid."""
        points = np.asarray(points, dtype=float).reshape(-1, self.d)
        interp = RegularGridInterpolator(self.axes(), self.values, bounds_error=False, fill_value=0.0)
        return interp(points)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Interpolated finite-difference gradient, shape (n, d)."""
        points = np.asarray(points, dtype=float).reshape(-1, self.d)
        grads = np.gradient(self.values, self.h) if self.d > 1 else [np.gradient(self.values, self.h)]
        out = np.empty((points.shape[0], self.d))
        for k, g in enumerate(grads):
            interp = RegularGridInterpolator(self.axes(), g, bounds_error=False, fill_value=0.0)
            out[:, k] = interp(points)
        return out


def _trapezoid(values: np.ndarray, h: float) -> float:
    """Iterated trapezoid rule over every axis."""
    out = values
    for _ in range(values.ndim):
        out = integrate.trapezoid(out, dx=h, axis=0)
    return float(out)


def heat_kernel_weights(t: float, h: float, pad_factor: float = PAD_FACTOR) -> np.ndarray:
    """Gaussian weights of variance t on the lattice h*Z, truncated at pad_factor*sqrt(t), unit mass."""
    m = int(math.ceil(pad_factor * math.sqrt(t) / h))
    k = np.arange(-m, m + 1, dtype=float)
    w = np.exp(-((k * h) ** 2) / (2.0 * t))
    return w / w.sum()


def _convolve(values: np.ndarray, t: float, h: float, pad_factor: float) -> np.ndarray:
    """Separable heat-kernel convolution, zero outside the grid."""
    weights = heat_kernel_weights(t, h, pad_factor)
    out = values
    for axis in range(values.ndim):
        # trapezoid end weights, so source mass matches the trapezoid integral
        src = np.array(out, dtype=float)
        ends = [slice(None)] * src.ndim
        for i in (0, -1):
            ends[axis] = i
            src[tuple(ends)] *= 0.5
        out = convolve1d(src, weights, axis=axis, mode="constant", cval=0.0)
    return out


def heat_convolve(f: GridFunction, t: float, pad_factor: float = PAD_FACTOR) -> GridFunction:
    """f_t = Phi_t * f on the grid of f, which must leave pad_factor*sqrt(t) of room around supp f."""
    if t < 0:
        raise InvalidParameterError(f"time must be non-negative, got {t}")
    if t == 0:
        return f
    need = pad_factor * math.sqrt(t) - f.h
    for k, (lo, hi) in enumerate(f.support_margins()):
        if lo < need or hi < need:
            raise PaddingError(
                f"axis {k}: support is {min(lo, hi):.4g} from the grid edge, need {need + f.h:.4g} for t={t:g}"
            )
    return f.with_values(_convolve(f.values, t, f.h, pad_factor))


def var_exact(f: GridFunction, rho: float) -> float:
    """rho * ||f||^2 by the trapezoid rule."""
    if rho < 0:
        raise InvalidParameterError(f"density must be non-negative, got {rho}")
    return rho * f.l2_squared()


def var_exact_t(f: GridFunction, rho: float, t: float, pad_factor: float = PAD_FACTOR) -> float:
    """rho * ||f_t||^2, evaluated as rho * <f, f_{2t}> on the grid of f."""
    if t < 0:
        raise InvalidParameterError(f"time must be non-negative, got {t}")
    if t == 0:
        return var_exact(f, rho)
    smoothed = f.with_values(_convolve(f.values, 2.0 * t, f.h, pad_factor))
    return rho * f.inner(smoothed)


def box_indicator(r: float, center: Sequence[float] | None = None) -> Callable[[np.ndarray], np.ndarray]:
    """Indicator of the half-open cube center + [-r/2, r/2)^d, vectorized over (n, d) points."""

    def fn(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.zeros(points.shape[1]) if center is None else np.asarray(center, dtype=float)
        off = points - c
        return np.all((off >= -0.5 * r) & (off < 0.5 * r), axis=1).astype(float)

    return fn


def box_grid(r: float, d: int, h: float, margin: float = 0.0) -> GridFunction:
    """The cube indicator sampled with nodes on the cube faces (exact trapezoid L^2 norm)."""
    half = 0.5 * r + margin
    slack = 1e-9 * h

    def closed(points: np.ndarray) -> np.ndarray:
        # both faces carry value 1 so the end nodes get trapezoid weight 1/2 each
        return np.all(np.abs(points) <= 0.5 * r + slack, axis=1).astype(float)

    return GridFunction.sample(closed, [-half] * d, [half] * d, h)


def gaussian_bump(sigma: float) -> Callable[[np.ndarray], np.ndarray]:
    """exp(-|x|^2 / (2 sigma^2)), vectorized over (n, d) points."""

    def fn(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.exp(-np.einsum("ij,ij->i", points, points) / (2.0 * sigma**2))

    return fn


def gaussian_heat(sigma: float, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """Heat flow of ``gaussian_bump(sigma)`` at time t."""
    s2 = sigma**2 + t

    def fn(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        d = points.shape[1]
        return (sigma**2 / s2) ** (d / 2) * np.exp(-np.einsum("ij,ij->i", points, points) / (2.0 * s2))

    return fn


def gaussian_var_exact_t(sigma: float, rho: float, t: float, d: int) -> float:
    """rho * ||gaussian_heat(sigma, t)||^2 in closed form."""
    return rho * math.pi ** (d / 2) * sigma ** (2 * d) * (sigma**2 + t) ** (-d / 2)


def _box_l2_1d(r: float, t: float) -> float:
    """||(1_{[-r/2, r/2)})_t||^2 in one dimension."""
    if t == 0:
        return r
    return r * special.erf(r / (2.0 * math.sqrt(t))) - 2.0 * math.sqrt(t / math.pi) * -math.expm1(-(r**2) / (4.0 * t))


def box_var_exact_t(r: float, rho: float, t: float, d: int) -> float:
    """rho * ||(1_{Q_r})_t||^2 in closed form."""
    return rho * _box_l2_1d(r, t) ** d


def box_heat_1d(r: float, t: float) -> Callable[[np.ndarray], np.ndarray]:
    """Heat flow of the 1-d indicator of [-r/2, r/2) at time t > 0."""
    s = math.sqrt(t)

    def fn(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return special.ndtr((x + 0.5 * r) / s) - special.ndtr((x - 0.5 * r) / s)

    return fn


def box_localization_gap(r: float, rho: float, t: float, K: float, d: int = 1) -> float:
    """E[(u_t - A_K u_t)^2] = rho * int_{outside Q_K} f_t^2 for u = mu(Q_r) and diffusivity 1/2."""
    if t == 0:
        inside = min(r, K)
        return rho * (r**d - inside**d)
    ft = box_heat_1d(r, t)
    inner, _ = integrate.quad(lambda x: float(ft(x)) ** 2, -0.5 * K, 0.5 * K, limit=200)
    full = _box_l2_1d(r, t)
    return rho * max(full**d - inner**d, 0.0)


def plateau_ratio(r: float, eps: float, d: int = 1) -> tuple[float, float]:
    """(Var[u_t] / Var[u], 1 - r^(-eps/2)) for u = mu(Q_r) at t = r^(2(1-eps))."""
    t = r ** (2.0 * (1.0 - eps))
    ratio = box_var_exact_t(r, 1.0, t, d) / box_var_exact_t(r, 1.0, 0.0, d)
    return ratio, 1.0 - r ** (-eps / 2.0)
