"""Finite particle configurations, the Poisson law and the measure operations on them.

Boxes are half-open per coordinate, ``[lower, upper)``. In periodic mode coordinates
live in ``[0, side)`` and a box may wrap around the torus.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, ParticleLabError
from .utils import format_float

_LOG = logging.getLogger(__name__)


class BoundaryMode(str, Enum):
    PERIODIC = "periodic"
    FREE = "free"


@dataclass(frozen=True)
class Domain:
    """Simulation window ``[0, side)^d``; a torus in periodic mode.

    In free mode the box is only the sampling window: dynamics and transport act on
    all of R^d and may carry points outside it.
    """

    d: int
    side: float
    mode: BoundaryMode = BoundaryMode.PERIODIC

    def __post_init__(self) -> None:
        if self.d not in (1, 2, 3):
            raise InvalidParameterError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not self.side > 0:
            raise InvalidParameterError(f"domain side must be positive, got {self.side}")
        object.__setattr__(self, "mode", BoundaryMode(self.mode))

    @property
    def periodic(self) -> bool:
        return self.mode is BoundaryMode.PERIODIC

    @property
    def volume(self) -> float:
        return float(self.side) ** self.d

    def box(self) -> "Box":
        return Box((0.0,) * self.d, (float(self.side),) * self.d)

    def wrap(self, points: np.ndarray) -> np.ndarray:
        """Map coordinates into ``[0, side)`` in periodic mode; identity otherwise."""
        points = np.asarray(points, dtype=float)
        if not self.periodic:
            return points
        wrapped = np.mod(points, self.side)
        # np.mod can round tiny negatives up to exactly side
        wrapped[wrapped >= self.side] = 0.0
        return wrapped

    def displacement(self, points: np.ndarray, center: np.ndarray) -> np.ndarray:
        """Offsets ``points - center``, minimal-image in periodic mode."""
        diff = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
        if self.periodic:
            diff = diff - self.side * np.round(diff / self.side)
        return diff


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box ``[lower, upper)``; empty when any upper <= lower."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper):
            raise InvalidParameterError("box bounds must have the same dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, center: Sequence[float], side: float) -> "Box":
        """The cube ``center + [-side/2, side/2)^d``."""
        c = np.asarray(center, dtype=float)
        half = 0.5 * float(side)
        return cls(tuple(c - half), tuple(c + half))

    @classmethod
    def empty(cls, d: int) -> "Box":
        return cls((0.0,) * d, (0.0,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def is_empty(self) -> bool:
        return any(u <= a for a, u in zip(self.lower, self.upper))

    @property
    def volume(self) -> float:
        if self.is_empty:
            return 0.0
        return float(np.prod([u - a for a, u in zip(self.lower, self.upper)]))

    def intersect(self, other: "Box", domain: Domain | None = None) -> "Box":
        """Intersection in the coordinates of ``self``.

        On a torus ``other`` is matched to ``self`` modulo the side, per axis; an overlap
        that splits into two pieces is not a box and raises.
        """
        if domain is None or not domain.periodic:
            lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
            hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
            return Box(lo, hi)
        side = float(domain.side)
        lo, hi = [], []
        for a, u, b, v in zip(self.lower, self.upper, other.lower, other.upper):
            if v - b >= side:
                lo.append(a)
                hi.append(min(u, a + side))
                continue
            if u - a >= side:
                shift = side * math.ceil((a - b) / side)
                lo.append(b + shift)
                hi.append(min(v + shift, u))
                continue
            pieces = []
            for k in range(-2, 3):
                shift = k * side + side * math.floor((a - b) / side)
                lo_k, hi_k = max(a, b + shift), min(u, v + shift)
                if hi_k > lo_k:
                    pieces.append((lo_k, hi_k))
            if len(pieces) > 1:
                raise InvalidParameterError(f"boxes overlap in {len(pieces)} pieces on the torus along one axis")
            piece = pieces[0] if pieces else (a, a)
            lo.append(piece[0])
            hi.append(piece[1])
        return Box(tuple(lo), tuple(hi))

    def shifted(self, h: Sequence[float]) -> "Box":
        """The box translated by h."""
        h = np.asarray(h, dtype=float)
        return Box(tuple(np.asarray(self.lower) + h), tuple(np.asarray(self.upper) + h))

    def covers(self, domain: Domain) -> bool:
        """True when the box contains the whole domain (every axis spans it)."""
        if self.is_empty:
            return False
        if domain.periodic:
            return all(u - a >= domain.side for a, u in zip(self.lower, self.upper))
        return all(a <= 0.0 and u >= domain.side for a, u in zip(self.lower, self.upper))

    def volume_in(self, domain: Domain) -> float:
        """Volume of the box intersected with the domain."""
        if self.is_empty:
            return 0.0
        if domain.periodic:
            spans = [min(u - a, domain.side) for a, u in zip(self.lower, self.upper)]
        else:
            spans = [max(0.0, min(u, domain.side) - max(a, 0.0)) for a, u in zip(self.lower, self.upper)]
        return float(np.prod(spans))

    def contains(self, points: np.ndarray, domain: Domain) -> np.ndarray:
        """Boolean membership mask for an ``(n, d)`` array of domain points."""
        points = np.asarray(points, dtype=float).reshape(-1, self.d)
        mask = np.ones(points.shape[0], dtype=bool)
        if self.is_empty:
            return np.zeros(points.shape[0], dtype=bool)
        for k, (a, u) in enumerate(zip(self.lower, self.upper)):
            x = points[:, k]
            if domain.periodic:
                width = u - a
                if width >= domain.side:
                    continue
                a0 = float(np.mod(a, domain.side))
                if a0 >= domain.side:
                    a0 = 0.0
                b0 = a0 + width
                if b0 <= domain.side:
                    mask &= (x >= a0) & (x < b0)
                else:
                    mask &= (x >= a0) | (x < b0 - domain.side)
            else:
                mask &= (x >= a) & (x < u)
        return mask


@dataclass(frozen=True)
class PoissonParams:
    rho: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.rho >= 0:
            raise InvalidParameterError(f"density must be non-negative, got {self.rho}")


@dataclass(frozen=True, eq=False)
class Configuration:
    """Finite point multiset in a domain. The point order carries no meaning."""

    domain: Domain
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=float).reshape(-1, self.domain.d)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, domain: Domain) -> "Configuration":
        return cls(domain, np.empty((0, domain.d)))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def with_points(self, points: np.ndarray) -> "Configuration":
        """Same domain, new points."""
        return Configuration(self.domain, points)

    def canonical(self) -> np.ndarray:
        """Points in lexicographic order; equal multisets give equal arrays."""
        if len(self) == 0:
            return self.points.copy()
        order = np.lexsort(self.points.T[::-1])
        return self.points[order]

    def same_multiset(self, other: "Configuration") -> bool:
        """Equal domains and equal points up to order."""
        return (
            self.domain == other.domain
            and len(self) == len(other)
            and bool(np.array_equal(self.canonical(), other.canonical()))
        )

    def to_dict(self) -> dict:
        return {
            "d": self.domain.d,
            "L_sim": float(self.domain.side),
            "mode": self.domain.mode.value,
            "points": [[float(v) for v in p] for p in self.points],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Configuration":
        try:
            domain = Domain(int(payload["d"]), float(payload["L_sim"]), BoundaryMode(payload.get("mode", "periodic")))
            return cls(domain, np.asarray(payload.get("points", []), dtype=float))
        except (KeyError, TypeError, ValueError) as e:
            raise ParticleLabError(f"Malformed configuration payload: {e}") from e


def sample_poisson(domain: Domain, params: PoissonParams, rng: np.random.Generator) -> Configuration:
    """Draw N ~ Poisson(rho |domain|), then N independent uniform positions."""
    n = int(rng.poisson(params.rho * domain.volume))
    pts = rng.uniform(0.0, domain.side, size=(n, domain.d))
    return Configuration(domain, domain.wrap(pts) if domain.periodic else np.minimum(pts, np.nextafter(domain.side, 0.0)))


def restrict(mu: Configuration, box: Box) -> Configuration:
    """mu restricted to box."""
    return mu.with_points(mu.points[box.contains(mu.points, mu.domain)])


def restrict_complement(mu: Configuration, box: Box) -> Configuration:
    """mu restricted to the complement of box."""
    return mu.with_points(mu.points[~box.contains(mu.points, mu.domain)])


def transport(mu: Configuration, h: Sequence[float]) -> Configuration:
    """Shift every point by +h, wrapping on the torus."""
    h = np.asarray(h, dtype=float).reshape(mu.domain.d)
    if not np.any(h):
        return mu
    return mu.with_points(mu.domain.wrap(mu.points + h))


def count(mu: Configuration, box: Box) -> int:
    """mu(box)."""
    return int(np.count_nonzero(box.contains(mu.points, mu.domain)))


def union(mu: Configuration, *others: Configuration) -> Configuration:
    """Sum of measures: the points of mu followed by those of others."""
    return mu.with_points(np.concatenate([mu.points] + [o.points for o in others], axis=0))


def resample_outside(mu: Configuration, box: Box, params: PoissonParams, rng: np.random.Generator) -> Configuration:
    """Keep ``mu`` inside ``box`` and redraw an independent Poisson sample outside it.

    The kept points come first, in their original order.
    """
    inside = restrict(mu, box)
    if box.covers(mu.domain):
        return inside
    fresh = sample_poisson(mu.domain, params, rng)
    return union(inside, restrict_complement(fresh, box))


def write_configuration_json(mu: Configuration, out_path: Path) -> None:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as f:
        json.dump(mu.to_dict(), f)
        f.write("\n")


def read_configuration_json(path: Path) -> Configuration:
    with path.open("r", encoding="utf-8") as f:
        return Configuration.from_dict(json.load(f))


def write_configuration_csv(mu: Configuration, out_path: Path) -> None:
    """One point per row; the domain travels in a leading comment line."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="", encoding="utf-8") as f:
        f.write(f"# d={mu.domain.d} L_sim={format_float(float(mu.domain.side))} mode={mu.domain.mode.value}\n")
        w = csv.writer(f)
        w.writerow([f"x{k + 1}" for k in range(mu.domain.d)])
        for p in mu.points:
            w.writerow([format_float(float(v)) for v in p])


def read_configuration_csv(path: Path) -> Configuration:
    with path.open("r", newline="", encoding="utf-8") as f:
        header = f.readline().lstrip("#").split()
        meta = dict(item.split("=", 1) for item in header)
        try:
            domain = Domain(int(meta["d"]), float(meta["L_sim"]), BoundaryMode(meta.get("mode", "periodic")))
        except (KeyError, ValueError) as e:
            raise ParticleLabError(f"Malformed configuration CSV header in {path}") from e
        r = csv.reader(f)
        next(r, None)
        rows = [[float(v) for v in row] for row in r if row]
    return Configuration(domain, np.asarray(rows, dtype=float).reshape(-1, domain.d))
