"""Local observables u(mu) with a declared support cube and sup-norm bound."""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .configuration import Box, Configuration, restrict
from .errors import InvalidParameterError
from .oracle import GridFunction, box_indicator

_LOG = logging.getLogger(__name__)

# Evaluator: offsets (m, d) of the points inside the support, relative to its center -> value.
Evaluator = Callable[[np.ndarray], float]
# Gradient energy: same offsets -> sum over points of |grad_x u|^2.
GradientEnergy = Callable[[np.ndarray], float]


@dataclass(frozen=True, eq=False)
class LocalFunction:
    name: str
    side: float
    evaluator: Evaluator
    bound: float
    center: tuple[float, ...] = (0.0,)
    mean: float | None = None
    gradient_energy: GradientEnergy | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.side > 0:
            raise InvalidParameterError(f"support side must be positive, got {self.side}")
        if not self.bound >= 0:
            raise InvalidParameterError(f"sup-norm bound must be non-negative, got {self.bound}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def mean_zero(self) -> bool:
        return self.mean == 0.0

    def support(self) -> Box:
        return Box.cube(self.center, self.side)

    def local_offsets(self, mu: Configuration) -> np.ndarray:
        inside = restrict(mu, self.support())
        return mu.domain.displacement(inside.points, np.asarray(self.center))

    def __call__(self, mu: Configuration) -> float:
        return float(self.evaluator(self.local_offsets(mu)))

    def energy(self, mu: Configuration) -> float:
        """Sum over particles of |grad_x u(mu)|^2."""
        if self.gradient_energy is None:
            raise InvalidParameterError(f"observable {self.name} has no gradient")
        return float(self.gradient_energy(self.local_offsets(mu)))

    def transported(self, h: Sequence[float]) -> "LocalFunction":
        """tau_h u, i.e. mu -> u(tau_{-h} mu): the same rule on the shifted support."""
        c = np.asarray(self.center) + np.asarray(h, dtype=float)
        return replace(self, center=tuple(c), name=f"{self.name}@{tuple(float(v) for v in c)}")

    def at_dimension(self, d: int) -> "LocalFunction":
        return replace(self, center=(0.0,) * d)


def linear_observable(
    f: Callable[[np.ndarray], np.ndarray],
    side: float,
    bound: float,
    d: int = 1,
    name: str = "linear",
    grad: Callable[[np.ndarray], np.ndarray] | None = None,
    mean: float | None = None,
) -> LocalFunction:
    """u_f(mu) = int f dmu clipped to [-bound, bound]; f vectorized over (n, d) local offsets."""

    def evaluator(offsets: np.ndarray) -> float:
        if offsets.shape[0] == 0:
            return 0.0
        total = math.fsum(np.asarray(f(offsets), dtype=float))
        return float(np.clip(total, -bound, bound))

    energy = None
    if grad is not None:

        def energy(offsets: np.ndarray) -> float:
            if offsets.shape[0] == 0:
                return 0.0
            g = np.asarray(grad(offsets), dtype=float).reshape(offsets.shape)
            return float(np.sum(g * g))

    return LocalFunction(name, side, evaluator, bound, center=(0.0,) * d, mean=mean, gradient_energy=energy)


def grid_observable(f: GridFunction, bound: float, name: str = "grid_linear") -> LocalFunction:
    """u_f for a grid function f; the support cube covers the grid extent."""
    side = 2.0 * max(max(abs(a), abs(b)) for a, b in zip(f.lower, f.upper)) + f.h
    return linear_observable(f, side, bound, d=f.d, name=name, grad=f.gradient)


def box_count(r: float, d: int = 1, cap: float | None = None, rho: float | None = None) -> LocalFunction:
    """mu(Q_r), optionally capped; the mean is exact when no cap is set."""
    indicator = box_indicator(r)
    mean = None if (cap is not None or rho is None) else rho * r**d
    bound = float(cap) if cap is not None else math.inf
    return linear_observable(indicator, r, bound, d=d, name=f"box_count({r:g})", mean=mean)


def plateau_profile(radius: np.ndarray) -> np.ndarray:
    """Radial plateau: 1 on [0, 1/2], smooth decreasing to 0 at 1, zero beyond."""
    r = np.asarray(radius, dtype=float)
    s = np.clip((1.0 - r) / 0.5, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def plateau_observable(d: int = 1, cap: float = 3.0) -> LocalFunction:
    """min(int eta dmu, cap) for the radial plateau eta supported in B_1."""

    def evaluator(offsets: np.ndarray) -> float:
        if offsets.shape[0] == 0:
            return 0.0
        radius = np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
        return float(min(math.fsum(plateau_profile(radius)), cap))

    return LocalFunction("plateau", 2.0, evaluator, cap, center=(0.0,) * d)


def void_indicator(r: float, rho: float, d: int = 1) -> LocalFunction:
    """1{mu(Q_r) = 0} - exp(-rho r^d); exactly mean zero under the Poisson law."""
    p0 = math.exp(-rho * r**d)

    def evaluator(offsets: np.ndarray) -> float:
        return (1.0 if offsets.shape[0] == 0 else 0.0) - p0

    return LocalFunction(f"void({r:g})", r, evaluator, max(p0, 1.0 - p0), center=(0.0,) * d, mean=0.0)


def smooth_bump(width: float) -> tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]:
    """cos^2 bump supported in [-width/2, width/2]^d and its gradient."""

    def value(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside = np.all(np.abs(x) <= 0.5 * width, axis=1)
        return np.where(inside, np.prod(np.cos(np.pi * x / width) ** 2, axis=1), 0.0)

    def grad(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        inside = np.all(np.abs(x) <= 0.5 * width, axis=1)
        c2 = np.cos(np.pi * x / width) ** 2
        dc2 = -(np.pi / width) * np.sin(2.0 * np.pi * x / width)
        out = np.empty_like(x)
        for k in range(x.shape[1]):
            others = np.prod(np.delete(c2, k, axis=1), axis=1) if x.shape[1] > 1 else 1.0
            out[:, k] = dc2[:, k] * others
        return np.where(inside[:, None], out, 0.0)

    return value, grad


def smooth_linear_observable(width: float, d: int = 1) -> LocalFunction:
    """int g dmu for the cos^2 bump g; differentiable, used by the spectral check."""
    value, grad = smooth_bump(width)
    return linear_observable(value, width, math.inf, d=d, name=f"bump({width:g})", grad=grad)


def tanh_observable(width: float, d: int = 1) -> LocalFunction:
    """tanh(int g dmu - 1) for the cos^2 bump g; a nonlinear differentiable observable."""
    value, grad = smooth_bump(width)

    def evaluator(offsets: np.ndarray) -> float:
        s = math.fsum(value(offsets)) if offsets.shape[0] else 0.0
        return math.tanh(s - 1.0)

    def energy(offsets: np.ndarray) -> float:
        if offsets.shape[0] == 0:
            return 0.0
        s = math.fsum(value(offsets))
        g = grad(offsets)
        return (1.0 - math.tanh(s - 1.0) ** 2) ** 2 * float(np.sum(g * g))

    return LocalFunction(f"tanh_bump({width:g})", width, evaluator, 1.0, center=(0.0,) * d, gradient_energy=energy)


def builtin_observables(rho: float, d: int = 1) -> dict[str, LocalFunction]:
    """Catalog of the built-in observables keyed by their config name."""
    return {
        "linear_box": box_count(1.0, d=d, cap=10.0),
        "plateau": plateau_observable(d=d),
        "void_indicator": void_indicator(1.0, rho, d=d),
        "smooth_bump": smooth_linear_observable(2.0, d=d),
        "tanh_bump": tanh_observable(2.0, d=d),
    }


def observable_from_spec(kind: str, rho: float, d: int, side: float = 1.0, cap: float | None = None) -> LocalFunction:
    if kind == "linear_box":
        return box_count(side, d=d, cap=cap if cap is not None else 10.0)
    if kind == "plateau":
        return plateau_observable(d=d, cap=cap if cap is not None else 3.0)
    if kind == "void_indicator":
        return void_indicator(side, rho, d=d)
    if kind == "smooth_bump":
        return smooth_linear_observable(side, d=d)
    if kind == "tanh_bump":
        return tanh_observable(side, d=d)
    raise InvalidParameterError(
        f"unknown observable kind {kind!r}; expected linear_box, plateau, void_indicator, smooth_bump or tanh_bump"
    )


def lattice_points(K: float, d: int) -> np.ndarray:
    """Z^d intersected with the half-open cube [-K/2, K/2)^d, in C order."""
    lo = math.ceil(-0.5 * K)
    hi = math.ceil(0.5 * K)  # exclusive
    axis = np.arange(lo, hi, dtype=float)
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def spatial_average_w(u: LocalFunction, K: float) -> LocalFunction:
    """w = |Z_K|^-1 sum_{y in Z_K} tau_y u, with support side K + l_u."""
    if K < u.side:
        raise InvalidParameterError(f"need K >= l_u, got K={K}, l_u={u.side}")
    shifts = lattice_points(K, u.d)
    half = 0.5 * u.side

    def evaluator(offsets: np.ndarray) -> float:
        vals = []
        for y in shifts:
            local = offsets - y
            keep = np.all((local >= -half) & (local < half), axis=1)
            vals.append(u.evaluator(local[keep]))
        return math.fsum(vals) / len(shifts)

    mean = u.mean
    return LocalFunction(
        f"w[{u.name},K={K:g}]", K + u.side, evaluator, u.bound, center=u.center, mean=mean
    )


def spatial_average_bound(second_moment: float, l_u: float, K: float, d: int) -> float:
    """(2 ceil(l_u) - 1)^d / |Z_K| * E[u^2]: only lattice pairs closer than l_u can correlate."""
    n_lattice = len(lattice_points(K, d))
    return (2 * math.ceil(l_u) - 1) ** d / n_lattice * second_moment
