"""Coefficient fields: local diffusivity rules and their stationary extension a(mu, x)."""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .configuration import Configuration, Domain, transport
from .errors import InvalidParameterError

_LOG = logging.getLogger(__name__)

INTERACTION_RADIUS = 1.0

# Local rule: offsets (m, d) of the points in the closed unit ball around the
# center, relative to the center, -> symmetric (d, d) matrix.
LocalRule = Callable[[np.ndarray], np.ndarray]
# Count rule: number of points in the closed unit ball -> scalar diffusivity, vectorized.
CountRule = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientField:
    name: str
    rule: LocalRule
    ellipticity: float = 2.0
    lower: float = 1.0
    diagonal: bool = True
    constant: float | None = None
    count_rule: CountRule | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.ellipticity >= self.lower > 0:
            raise InvalidParameterError(
                f"field {self.name}: need 0 < lower <= ellipticity, got lower={self.lower}, ellipticity={self.ellipticity}"
            )

    @property
    def radius(self) -> float:
        return INTERACTION_RADIUS


def local_offsets(mu: Configuration, x: np.ndarray) -> np.ndarray:
    """Offsets of the points of mu in the closed ball B_1(x), relative to x."""
    x = np.asarray(x, dtype=float).reshape(mu.domain.d)
    if len(mu) == 0:
        return np.empty((0, mu.domain.d))
    diff = mu.domain.displacement(mu.points, x)
    inside = np.einsum("ij,ij->i", diff, diff) <= INTERACTION_RADIUS**2
    return diff[inside]


def eval_a(fld: CoefficientField, mu: Configuration, x: np.ndarray) -> np.ndarray:
    """a(mu, x): the local rule applied to mu re-centered at x."""
    return np.asarray(fld.rule(local_offsets(mu, x)), dtype=float)


def builtin_constant(c: float, ellipticity: float | None = None, lower: float | None = None) -> CoefficientField:
    """c * Id everywhere. Bounds default to [min(c, 1), max(c, 1)] so c = 1/2 is constructible."""
    c = float(c)
    if not c > 0:
        raise InvalidParameterError(f"constant field needs c > 0, got {c}")
    lam = max(c, 1.0) if ellipticity is None else float(ellipticity)
    low = min(c, 1.0) if lower is None else float(lower)
    if not low <= c <= lam:
        raise InvalidParameterError(f"constant field c={c} outside [{low}, {lam}]")

    def rule(offsets: np.ndarray) -> np.ndarray:
        d = offsets.shape[1]
        return c * np.eye(d)

    def count_rule(counts: np.ndarray) -> np.ndarray:
        return np.full(np.shape(counts), c, dtype=float)

    return CoefficientField(
        name=f"constant({c:g})", rule=rule, ellipticity=lam, lower=low, diagonal=True, constant=c, count_rule=count_rule
    )


def _lonely_scalar(counts: np.ndarray) -> np.ndarray:
    return 1.0 + (np.asarray(counts) == 1).astype(float)


def builtin_lonely_particle() -> CoefficientField:
    """(1 + 1{mu(B_1(x)) = 1}) * Id, the count including a particle sitting at x."""

    def rule(offsets: np.ndarray) -> np.ndarray:
        d = offsets.shape[1]
        return float(_lonely_scalar(np.array(offsets.shape[0]))) * np.eye(d)

    return CoefficientField(
        name="lonely_particle", rule=rule, ellipticity=2.0, lower=1.0, diagonal=True, constant=None, count_rule=_lonely_scalar
    )


def field_from_spec(kind: str, c: float | None = None, ellipticity: float | None = None, lower: float | None = None) -> CoefficientField:
    """Build a built-in field from its config key ``field.kind``."""
    if kind == "constant":
        return builtin_constant(1.0 if c is None else c, ellipticity=ellipticity, lower=lower)
    if kind == "lonely_particle":
        return builtin_lonely_particle()
    raise InvalidParameterError(f"unknown field kind {kind!r}; expected constant or lonely_particle")


@dataclass
class FieldReport:
    field_name: str
    n_samples: int
    ellipticity_violations: int = 0
    symmetry_violations: int = 0
    locality_violations: int = 0
    stationarity_violations: int = 0
    messages: list[str] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return (
            self.ellipticity_violations
            + self.symmetry_violations
            + self.locality_violations
            + self.stationarity_violations
        )

    @property
    def ok(self) -> bool:
        return self.total_violations == 0


def _random_local_configuration(domain: Domain, rng: np.random.Generator) -> tuple[Configuration, np.ndarray]:
    # A handful of points near a random center so the unit ball is sometimes crowded.
    x = rng.uniform(0.0, domain.side, size=domain.d)
    n = int(rng.integers(0, 5))
    near = x + rng.uniform(-1.5, 1.5, size=(n, domain.d))
    include_center = bool(rng.integers(0, 2))
    pts = np.vstack([near, x[None, :]]) if include_center else near
    return Configuration(domain, domain.wrap(pts)), x


def validate_field(
    fld: CoefficientField,
    n_samples: int,
    rng: np.random.Generator,
    domain: Domain | None = None,
    tol: float = 1e-12,
) -> FieldReport:
    """Sample random (mu, x, xi) and check ellipticity, symmetry, locality and stationarity."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be at least 1")
    domain = domain or Domain(2, 10.0)
    report = FieldReport(fld.name, n_samples)
    for i in range(n_samples):
        mu, x = _random_local_configuration(domain, rng)
        a = eval_a(fld, mu, x)

        if not np.array_equal(a, a.T):
            report.symmetry_violations += 1
            report.messages.append(f"sample {i}: matrix not symmetric")

        xi = rng.normal(size=domain.d)
        xi /= np.linalg.norm(xi)
        q = float(xi @ a @ xi)
        if q < fld.lower - tol or q > fld.ellipticity + tol:
            report.ellipticity_violations += 1
            report.messages.append(f"sample {i}: xi.a.xi={q:.6g} outside [{fld.lower:g}, {fld.ellipticity:g}]")

        # a point strictly outside B_1(x) must not change anything
        direction = rng.normal(size=domain.d)
        direction /= np.linalg.norm(direction)
        far = domain.wrap((x + direction * rng.uniform(1.0 + 1e-6, 1.5))[None, :])
        perturbed = mu.with_points(np.vstack([mu.points, far]))
        if not np.array_equal(eval_a(fld, perturbed, x), a):
            report.locality_violations += 1
            report.messages.append(f"sample {i}: output changed by a point outside B_1(x)")

        h = rng.uniform(-domain.side, domain.side, size=domain.d)
        shifted = eval_a(fld, transport(mu, h), domain.wrap((x + h)[None, :])[0])
        if not np.allclose(shifted, a, rtol=0.0, atol=tol):
            report.stationarity_violations += 1
            report.messages.append(f"sample {i}: stationarity identity failed")

    if not report.ok:
        _LOG.warning("Field %s: %d violations in %d samples", fld.name, report.total_violations, n_samples)
    return report
