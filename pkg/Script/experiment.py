"""ExperimentSpec: one declarative experiment, read from a ``key = value`` text file or JSON.

Text grammar: one ``dotted.key = value`` per line, ``#`` starts a comment, blank lines
are ignored, list values are comma separated. JSON input may be nested objects or flat
dotted keys. Unknown keys, missing required keys and malformed values raise SchemaError
carrying the dotted field path.
"""

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .dynamics import Scheme
from .errors import InfeasibleScaleError, SchemaError
from .observables import observable_from_spec

_LOG = logging.getLogger(__name__)

KINDS = ("sample", "evolve", "var-decay", "localization", "inequalities", "oracle-compare", "martingale")
CHECKS = (
    "chernoff",
    "entropy",
    "efron-stein",
    "spectral",
    "lemma42",
    "localization",
    "oracle-decay",
    "plateau",
    "spatial-average",
    "coarse",
    "telescope",
)
FIELD_KINDS = ("constant", "lonely_particle")
OBSERVABLE_KINDS = ("linear_box", "plateau", "void_indicator", "smooth_bump", "tanh_bump")
MODES = ("periodic", "free")
FORMATS = ("", "csv", "json")


def _key(name: str, kind: str, doc: str, required: bool = False) -> dict:
    return {"key": name, "kind": kind, "doc": doc, "required": required}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str = field(default="", metadata=_key("kind", "str", "experiment kind: " + " | ".join(KINDS), True))
    rho: float = field(default=math.nan, metadata=_key("params.rho", "float", "Poisson density rho (> 0)", True))

    d: int = field(default=1, metadata=_key("domain.d", "int", "dimension, 1..3"))
    side: float = field(default=40.0, metadata=_key("domain.side", "float", "domain side L_sim"))
    mode: str = field(default="periodic", metadata=_key("domain.mode", "str", "periodic | free"))

    field_kind: str = field(default="constant", metadata=_key("field.kind", "str", "constant | lonely_particle"))
    field_c: float = field(default=0.5, metadata=_key("field.c", "float", "diffusivity of the constant field"))
    field_lam: float | None = field(default=None, metadata=_key("field.lam", "float?", "ellipticity Lambda override"))

    observable: str = field(default="linear_box", metadata=_key("observable.kind", "str", " | ".join(OBSERVABLE_KINDS)))
    observable_side: float = field(default=1.0, metadata=_key("observable.side", "float", "support side l_u (box, void, bumps)"))
    observable_cap: float | None = field(default=None, metadata=_key("observable.cap", "float?", "sup-norm cap"))

    times: tuple[float, ...] = field(default=(0.0,), metadata=_key("times", "floats", "time grid"))

    K: tuple[float, ...] = field(default=(), metadata=_key("scales.K", "floats", "localization cube sides"))
    L: float | None = field(default=None, metadata=_key("scales.L", "float?", "outer block scale L"))
    l: tuple[float, ...] = field(default=(), metadata=_key("scales.l", "floats", "block sides l"))
    delta: tuple[float, ...] = field(default=(), metadata=_key("scales.delta", "floats", "delta-good tolerances"))
    k: tuple[int, ...] = field(default=(), metadata=_key("scales.k", "ints", "coarse path scales"))

    n_outer: int = field(default=200, metadata=_key("budgets.n_outer", "int", "outer Poisson draws"))
    n_inner: int = field(default=4, metadata=_key("budgets.n_inner", "int", "replica pairs per draw"))
    n_cond: int = field(default=8, metadata=_key("budgets.n_cond", "int", "conditional resamples"))

    scheme: str = field(default="exact-gaussian", metadata=_key("scheme.kind", "str", "exact-gaussian | conductance-chain"))
    dt: float = field(default=0.0, metadata=_key("scheme.dt", "float", "chain time step; 0 picks the largest stable step"))
    eps: float = field(default=0.1, metadata=_key("scheme.eps", "float", "chain mesh"))

    seed: int | None = field(default=None, metadata=_key("seed", "int?", "master seed; defaults to PARTICLE_LAB_SEED"))
    out: str = field(default="", metadata=_key("output.path", "str", "output file, relative to the data dir"))
    format: str = field(default="", metadata=_key("output.format", "str", "csv | json; empty uses PARTICLE_LAB_FORMAT"))

    checks: tuple[str, ...] = field(default=(), metadata=_key("checks", "strs", "inequality checks: " + ", ".join(CHECKS)))
    grid_rho: tuple[float, ...] = field(default=(), metadata=_key("grid.rho", "floats", "densities for the Chernoff grid"))
    grid_n: tuple[int, ...] = field(default=(1, 2, 3), metadata=_key("grid.n", "ints", "particle counts for Efron-Stein"))
    grid_block: float = field(default=1.0, metadata=_key("grid.block", "float", "block side for Efron-Stein"))
    grid_order: int = field(default=24, metadata=_key("grid.order", "int", "Gauss-Legendre order per axis"))
    grid_trials: int = field(default=100, metadata=_key("grid.trials", "int", "random trials (entropy, lemma42, telescope)"))
    grid_size: int = field(default=8, metadata=_key("grid.size", "int", "matrix size for lemma42"))
    grid_h: float = field(default=0.01, metadata=_key("grid.h", "float", "quadrature grid spacing"))
    grid_radius: int = field(default=20, metadata=_key("grid.radius", "int", "coarse path target radius"))

    fit_slope: tuple[float, ...] = field(default=(), metadata=_key("fit.slope", "floats", "accepted [min, max] decay slope"))

    s: tuple[float, ...] = field(default=(), metadata=_key("martingale.s", "floats", "scales for the bracket check"))
    s_points: int = field(default=0, metadata=_key("martingale.points", "int", "s-grid size; 0 uses PARTICLE_LAB_S_POINTS"))
    mk: float = field(default=0.0, metadata=_key("martingale.k", "float", "lower scale k of the multiscale functional"))
    mK: float = field(default=0.0, metadata=_key("martingale.K", "float", "upper scale K of the multiscale functional"))
    beta: float = field(default=1.0, metadata=_key("martingale.beta", "float", "weight scale beta, alpha_s = exp(s/beta)"))
    eps_reg: tuple[float, ...] = field(default=(0.0,), metadata=_key("martingale.eps_reg", "floats", "regularization widths"))

    def support_side(self) -> float:
        return observable_from_spec(self.observable, 1.0, self.d, self.observable_side, self.observable_cap).side


def schema_fields() -> list[tuple[str, str, dict]]:
    """(attribute, dotted key, metadata) for every spec field, in declaration order."""
    return [(f.name, f.metadata["key"], f.metadata) for f in fields(ExperimentSpec)]


_BY_KEY = {meta["key"]: (attr, meta) for attr, _, meta in schema_fields()}


def print_schema() -> str:
    """Human-readable schema: key, type, default and description of every field."""
    defaults = ExperimentSpec()
    lines = ["# ExperimentSpec schema (key = value, '#' comments, comma-separated lists)"]
    for attr, key, meta in schema_fields():
        req = "required" if meta["required"] else f"default {_format_value(getattr(defaults, attr))!r}"
        lines.append(f"{key:<22} {meta['kind']:<7} {req:<24} {meta['doc']}")
    return "\n".join(lines) + "\n"


def _coerce(key: str, kind: str, raw: Any) -> Any:
    optional = kind.endswith("?")
    base = kind.rstrip("?")
    if optional and (raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none"))):
        return None
    try:
        if base == "str":
            return str(raw).strip()
        if base == "int":
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError(raw)
            return int(str(raw).strip()) if isinstance(raw, str) else int(raw)
        if base == "float":
            return float(raw)
        items = raw if isinstance(raw, (list, tuple)) else [p for p in str(raw).split(",") if p.strip()]
        if base == "floats":
            return tuple(float(v) for v in items)
        if base == "ints":
            return tuple(int(str(v).strip()) if isinstance(v, str) else int(v) for v in items)
        if base == "strs":
            return tuple(str(v).strip() for v in items)
    except (TypeError, ValueError) as e:
        raise SchemaError(key, f"expected {kind}, got {raw!r}") from e
    raise SchemaError(key, f"unsupported field type {kind}")


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def spec_from_mapping(values: dict[str, Any]) -> ExperimentSpec:
    """Build and validate a spec from flat dotted keys."""
    kwargs = {}
    for key, raw in values.items():
        if key not in _BY_KEY:
            raise SchemaError(key, "unknown key")
        attr, meta = _BY_KEY[key]
        kwargs[attr] = _coerce(key, meta["kind"], raw)
    for key, (attr, meta) in _BY_KEY.items():
        if meta["required"] and attr not in kwargs:
            raise SchemaError(key, "required key is missing")
    spec = ExperimentSpec(**kwargs)
    validate(spec)
    return spec


def parse_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise SchemaError(f"line {lineno}", f"expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if key in values:
            raise SchemaError(key, f"duplicate key on line {lineno}")
        values[key] = value
    return values


def _flatten(payload: dict, prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for k, v in payload.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_mapping(path: Path) -> dict[str, Any]:
    """Raw dotted-key values from ``.json`` or key-value text, not yet validated."""
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaError(str(path), f"invalid JSON: {e}") from e
        if not isinstance(payload, dict):
            raise SchemaError(str(path), "top level must be an object")
        return _flatten(payload)
    return parse_text(text)


def load_spec(path: Path) -> ExperimentSpec:
    return spec_from_mapping(load_mapping(path))


def to_text(spec: ExperimentSpec) -> str:
    """Serialize to the key-value format; ``spec_from_mapping(parse_text(to_text(s))) == s``."""
    lines = []
    for attr, key, _ in schema_fields():
        value = getattr(spec, attr)
        if value is None:
            continue
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def to_json(spec: ExperimentSpec) -> dict[str, Any]:
    out = {}
    for attr, key, _ in schema_fields():
        value = getattr(spec, attr)
        if value is not None:
            out[key] = list(value) if isinstance(value, tuple) else value
    return out


def with_overrides(spec: ExperimentSpec, **kwargs: Any) -> ExperimentSpec:
    spec = replace(spec, **kwargs)
    validate(spec)
    return spec


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise SchemaError(key, message)


def validate(spec: ExperimentSpec, pad_factor: float = 6.0) -> None:
    """Field-level checks raise SchemaError; violated scale orderings raise InfeasibleScaleError."""
    _require(spec.kind in KINDS, "kind", f"expected one of {', '.join(KINDS)}, got {spec.kind!r}")
    _require(not math.isnan(spec.rho) and spec.rho > 0, "params.rho", f"density must be positive, got {spec.rho}")
    _require(spec.d in (1, 2, 3), "domain.d", f"dimension must be 1, 2 or 3, got {spec.d}")
    _require(spec.side > 0, "domain.side", f"must be positive, got {spec.side}")
    _require(spec.mode in MODES, "domain.mode", f"expected periodic or free, got {spec.mode!r}")
    _require(spec.field_kind in FIELD_KINDS, "field.kind", f"expected one of {', '.join(FIELD_KINDS)}")
    _require(spec.field_c > 0, "field.c", "must be positive")
    _require(spec.observable in OBSERVABLE_KINDS, "observable.kind", f"expected one of {', '.join(OBSERVABLE_KINDS)}")
    _require(spec.observable_side > 0, "observable.side", "must be positive")
    _require(all(t >= 0 for t in spec.times), "times", "times must be non-negative")
    _require(len(spec.times) > 0, "times", "at least one time is required")
    for key, value in (("budgets.n_outer", spec.n_outer), ("budgets.n_inner", spec.n_inner), ("budgets.n_cond", spec.n_cond)):
        _require(value >= 1, key, f"must be at least 1, got {value}")
    _require(spec.scheme in {s.value for s in Scheme}, "scheme.kind", f"unknown scheme {spec.scheme!r}")
    _require(spec.dt >= 0, "scheme.dt", "must be non-negative")
    _require(spec.eps > 0, "scheme.eps", "must be positive")
    _require(spec.seed is None or spec.seed >= 0, "seed", "must be non-negative")
    _require(spec.format in FORMATS, "output.format", "expected csv or json")
    for c in spec.checks:
        _require(c in CHECKS, "checks", f"unknown check {c!r}; expected one of {', '.join(CHECKS)}")
    _require(all(v > 0 for v in spec.delta), "scales.delta", "tolerances must be positive")
    _require(all(v >= 1 for v in spec.k), "scales.k", "coarse scales must be at least 1")
    _require(all(v > 0 for v in spec.l), "scales.l", "block sides must be positive")
    _require(len(spec.fit_slope) in (0, 2), "fit.slope", "expected two values: min, max")
    _require(spec.grid_trials >= 1, "grid.trials", "must be at least 1")
    _require(spec.grid_order >= 2, "grid.order", "must be at least 2")
    _require(spec.grid_h > 0, "grid.h", "must be positive")
    _require(spec.beta > 0, "martingale.beta", "must be positive")
    _require(all(v >= 0 for v in spec.eps_reg), "martingale.eps_reg", "must be non-negative")
    _require(spec.field_kind == "constant" or spec.scheme == Scheme.CONDUCTANCE_CHAIN.value, "scheme.kind",
             "non-constant fields need the conductance-chain scheme")

    needs_K = spec.kind == "localization" or {"localization", "spatial-average"} & set(spec.checks)
    _require(not needs_K or len(spec.K) > 0, "scales.K", "at least one cube side is required")
    needs_blocks = {"chernoff", "entropy"} & set(spec.checks)
    _require(not needs_blocks or (spec.l and spec.delta), "scales.l", "block sides and tolerances are required")
    _require("spectral" not in spec.checks or len(spec.l) > 0, "scales.l", "block sides are required")

    l_u = spec.support_side()
    if spec.K:
        if min(spec.K) < l_u:
            raise InfeasibleScaleError("l_u <= K", f"K={min(spec.K):g} is below the support side {l_u:g}")
        if max(spec.K) > 0.5 * spec.side:
            raise InfeasibleScaleError("K <= L_sim/2", f"K={max(spec.K):g} exceeds half the domain side {spec.side:g}")
    if spec.L is not None:
        for l in spec.l:
            ratio = spec.L / l
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
                raise InfeasibleScaleError("l | L", f"L/l must be a positive integer, got L={spec.L:g}, l={l:g}")
    if spec.kind in ("var-decay", "localization", "oracle-compare"):
        k_max = max(spec.K) if spec.K else l_u
        t_max = max(spec.times)
        need = 2.0 * (k_max + pad_factor * math.sqrt(t_max))
        if spec.side < need:
            raise InfeasibleScaleError(
                "L_sim >= 2(K_max + c_pad sqrt(t_max))", f"domain side {spec.side:g} < {need:g}"
            )
