"""Runs one ExperimentSpec end to end: builds the model, dispatches on the kind, writes results."""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .coarse import random_telescope_residuals, verify_coarse_paths
from .config import LabConfig
from .configuration import (
    Domain,
    PoissonParams,
    sample_poisson,
    write_configuration_csv,
    write_configuration_json,
)
from .dynamics import Scheme, SchemeParams, evolve_trajectory, trajectory_rows, trajectory_to_dict
from .errors import SchemaError
from .estimators import BlockCounts, check_scales, estimate_var_ut, sample_covariance
from .experiment import ExperimentSpec, to_json, validate
from .fields import CoefficientField, field_from_spec
from .inequalities import (
    EFRON_STEIN_FAMILY,
    BoundReport,
    check_chernoff,
    check_efron_stein,
    check_entropy,
    check_lemma42,
    check_localization,
    check_spectral_AB,
    fit_decay_exponent,
    random_good_counts,
    random_spectral_problem,
    spectral_AB_linear,
    two_point_eigenvalue,
    two_point_problem,
)
from .martingale import bracket_isometry_check, multiscale_functional, void_indicator_second_moment
from .observables import (
    LocalFunction,
    box_count,
    observable_from_spec,
    smooth_bump,
    spatial_average_bound,
    spatial_average_w,
)
from .oracle import box_grid, box_localization_gap, box_var_exact_t, plateau_ratio, var_exact_t
from .rng import RngStream
from .utils import fsum_mean, fsum_sample_variance, write_json, write_rows_csv

_LOG = logging.getLogger(__name__)

Z_LIMIT = 3.0
SPECTRAL_TREND_MAX = 0.1
ENTROPY_C_MAX = 5.0
ORACLE_SLOPE_TOL = 0.02
ORACLE_QUADRATURE_TOL = 1e-3


@dataclass
class RunResult:
    rows: list[dict] = field(default_factory=list)
    passed: bool = True
    details: dict = field(default_factory=dict)
    written: bool = False


@dataclass
class Context:
    spec: ExperimentSpec
    cfg: LabConfig
    seed: int
    out_path: Path
    fmt: str

    @property
    def stream(self) -> RngStream:
        return RngStream(self.seed).child(self.spec.kind)

    @property
    def domain(self) -> Domain:
        return Domain(self.spec.d, self.spec.side, self.spec.mode)

    @property
    def poisson(self) -> PoissonParams:
        return PoissonParams(self.spec.rho, self.seed)

    @property
    def workers(self) -> int:
        return self.cfg.workers

    def coefficient_field(self) -> CoefficientField:
        return field_from_spec(self.spec.field_kind, c=self.spec.field_c, ellipticity=self.spec.field_lam)

    def observable(self) -> LocalFunction:
        s = self.spec
        return observable_from_spec(s.observable, s.rho, s.d, s.observable_side, s.observable_cap)

    def scheme(self, fld: CoefficientField) -> SchemeParams:
        s = self.spec
        if s.scheme == Scheme.EXACT_GAUSSIAN.value:
            return SchemeParams(Scheme.EXACT_GAUSSIAN)
        if s.dt > 0:
            return SchemeParams(Scheme.CONDUCTANCE_CHAIN, dt=s.dt, eps=s.eps)
        return SchemeParams.stable(s.eps, fld, s.d)


def resolve_out_path(cfg: LabConfig, spec: ExperimentSpec, fmt: str) -> Path:
    """Output under the data dir unless absolute; defaults to <kind>.<fmt>."""
    if not spec.out:
        return cfg.data_dir / f"{spec.kind}.{fmt}"
    p = Path(spec.out)
    if p.is_absolute():
        return p
    return cfg.data_dir / p


def summary_path(out_path: Path) -> Path:
    return out_path.with_name(out_path.stem + ".summary.json")


# -- oracle helpers ------------------------------------------------------------------


def _oracle_ready(spec: ExperimentSpec) -> bool:
    """Constant field with the box-count observable: the variance is a heat-kernel integral."""
    return spec.field_kind == "constant" and spec.observable == "linear_box"


def _oracle_time(spec: ExperimentSpec, t: float) -> float:
    """Heat time with unit-variance-per-unit-time convention: displacement variance is 2 c t."""
    return 2.0 * spec.field_c * t


# -- kinds ---------------------------------------------------------------------------


def _run_sample(ctx: Context) -> RunResult:
    mu = sample_poisson(ctx.domain, ctx.poisson, ctx.stream.generator())
    if ctx.fmt == "json":
        write_configuration_json(mu, ctx.out_path)
    else:
        write_configuration_csv(mu, ctx.out_path)
    expected = ctx.spec.rho * ctx.domain.volume
    _LOG.info("Sampled %d points (expected %.4g)", len(mu), expected)
    return RunResult(details={"n_points": len(mu), "expected": expected}, written=True)


def _run_evolve(ctx: Context) -> RunResult:
    fld = ctx.coefficient_field()
    mu0 = sample_poisson(ctx.domain, ctx.poisson, ctx.stream.child("initial").generator())
    traj = evolve_trajectory(mu0, fld, ctx.spec.times, ctx.scheme(fld), ctx.stream.child("dynamics").generator())
    if ctx.fmt == "json":
        write_json(trajectory_to_dict(traj), ctx.out_path)
    else:
        write_rows_csv(trajectory_rows(traj), ctx.out_path)
    return RunResult(details={"n_points": len(mu0), "snapshots": len(traj.snapshots)}, written=True)


def _variance_series(ctx: Context, require_oracle: bool) -> RunResult:
    spec = ctx.spec
    if require_oracle and not _oracle_ready(spec):
        raise SchemaError("field.kind", "oracle comparison needs a constant field and the linear_box observable")
    fld = ctx.coefficient_field()
    u = ctx.observable()
    params = ctx.scheme(fld)
    rows, zs, series = [], [], []
    for i, t in enumerate(spec.times):
        res = estimate_var_ut(
            u, fld, t, params, spec.n_outer, spec.n_inner, ctx.stream.child("t", i), ctx.domain, ctx.poisson,
            workers=ctx.workers, progress_every=ctx.cfg.progress_every,
        )
        row = res.as_row(t=t)
        if _oracle_ready(spec):
            exact = box_var_exact_t(spec.observable_side, spec.rho, _oracle_time(spec, t), spec.d)
            row.update(exact=exact, z=res.z_against(exact))
            zs.append(row["z"])
        if t > 0:
            series.append((t, res.estimate, res.stderr))
        rows.append(row)
        _LOG.info("Var[u_t] t=%g: %.6g +- %.2g", t, res.estimate, res.stderr)

    details: dict = {}
    passed = True
    if zs:
        details["max_abs_z"] = max(abs(z) for z in zs)
        passed = details["max_abs_z"] <= Z_LIMIT
    if len(series) >= 2:
        slope, slope_err = fit_decay_exponent(series)
        details.update(slope=slope, slope_err=slope_err)
        if spec.fit_slope:
            lo, hi = spec.fit_slope
            passed = passed and lo <= slope <= hi
    return RunResult(rows, passed, details)


def _run_var_decay(ctx: Context) -> RunResult:
    return _variance_series(ctx, require_oracle=False)


def _run_oracle_compare(ctx: Context) -> RunResult:
    result = _variance_series(ctx, require_oracle=True)
    spec = ctx.spec
    if spec.d == 1:
        # grid quadrature against the closed form
        f = box_grid(spec.observable_side, 1, spec.grid_h)
        worst = 0.0
        for row in result.rows:
            quad = var_exact_t(f, spec.rho, _oracle_time(spec, row["t"]), ctx.cfg.pad_factor)
            row["quadrature"] = quad
            worst = max(worst, abs(quad - row["exact"]) / row["exact"])
        result.details["max_quadrature_rel_err"] = worst
    return result


def _run_localization(ctx: Context) -> RunResult:
    spec = ctx.spec
    fld = ctx.coefficient_field()
    u = ctx.observable()
    params = ctx.scheme(fld)
    rows, passed, details = [], True, {}
    for i, t in enumerate(spec.times):
        if t <= 0:
            continue
        check_scales(spec.d, spec.side, max(spec.K), t, ctx.cfg.pad_factor)
        per_k, summary = check_localization(
            u, fld, t, spec.K, params, spec.n_outer, spec.n_inner, ctx.stream.child("t", i), ctx.domain, ctx.poisson,
            workers=ctx.workers,
        )
        for rep in per_k:
            row = rep.as_row()
            if _oracle_ready(spec) and spec.observable_cap is None:
                r = spec.observable_side
                m = spec.rho * r**spec.d
                gap = box_localization_gap(r, spec.rho, _oracle_time(spec, t), rep.params["K"], spec.d)
                row["exact"] = gap / (m + m * m)
            rows.append(row)
        rows.append(summary.as_row())
        details[f"t={t:g}"] = {"slope": summary.lhs, "C_fit": summary.extras["C_fit"], "passed": summary.passed}
        passed = passed and summary.passed
    return RunResult(rows, passed, details)


def _run_martingale(ctx: Context) -> RunResult:
    spec = ctx.spec
    f = ctx.observable()
    s_values = spec.s or (f.side,)
    rows, passed = [], True
    closed_form = spec.observable == "void_indicator"
    for i, s in enumerate(s_values):
        for j, eps in enumerate(spec.eps_reg):
            rep = bracket_isometry_check(
                f, s, spec.n_outer, spec.n_cond, ctx.stream.child("bracket", i, j), ctx.domain, ctx.poisson,
                eps_reg=eps, workers=ctx.workers,
            )
            row = {"check": "bracket", **rep.as_row()}
            if closed_form:
                row["exact"] = void_indicator_second_moment(f.side, s, spec.rho, spec.d)
            rows.append(row)
            passed = passed and abs(rep.z) <= Z_LIMIT
    if spec.mK > 0:
        n_points = spec.s_points or ctx.cfg.s_points
        for j, eps in enumerate(spec.eps_reg):
            rep = multiscale_functional(
                f, spec.mk, spec.mK, spec.beta, n_points, spec.n_outer, spec.n_cond,
                ctx.stream.child("multiscale", j), ctx.domain, ctx.poisson, eps_reg=eps, workers=ctx.workers,
            )
            a_K = math.exp(spec.mK / spec.beta)
            tol = Z_LIMIT * rep.max_stderr * a_K + 0.01 * abs(rep.integrated) + 1e-12
            rows.append({"check": "multiscale", **rep.as_row(), "tolerance": tol})
            passed = passed and abs(rep.difference) <= tol
    return RunResult(rows, passed)


# -- inequality checks ---------------------------------------------------------------


def _block_L(spec: ExperimentSpec, l: float) -> float:
    return spec.L if spec.L is not None else 10.0 * l


def _check_chernoff(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    reports = []
    for rho in spec.grid_rho or (spec.rho,):
        for l in spec.l:
            series = [check_chernoff(rho, l, _block_L(spec, l), delta, spec.d) for delta in sorted(spec.delta)]
            reports.extend(series)
            lhs = [r.lhs for r in series]
            rhs = [r.rhs for r in series]
            monotone = all(b <= a for a, b in zip(lhs, lhs[1:])) and all(b <= a for a, b in zip(rhs, rhs[1:]))
            reports.append(
                BoundReport("chernoff_monotone", {"rho": rho, "l": l}, 0.0, 0.0, 0.0, passed=monotone)
            )
    return reports


def _check_entropy(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    reports = []
    for i, l in enumerate(spec.l):
        L = _block_L(spec, l)
        q = int(round(L / l)) ** spec.d
        for j, delta in enumerate(spec.delta):
            rng = ctx.stream.child("entropy", i, j).generator()
            for _ in range(spec.grid_trials):
                counts = random_good_counts(q, spec.rho * l**spec.d, delta, rng)
                reports.append(check_entropy(BlockCounts(L, l, spec.d, counts), spec.rho, delta, C=ENTROPY_C_MAX))
    c_fit = max(r.extras["C_fit"] for r in reports) if reports else 0.0
    reports.append(
        BoundReport("entropy_constant", {"trials": len(reports)}, c_fit, 0.0, ENTROPY_C_MAX, note="largest fitted C")
    )
    return reports


def _check_efron_stein(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    return [
        check_efron_stein(n, spec.grid_block, member, spec.d, spec.grid_order)
        for n in spec.grid_n
        if n * spec.d <= 3
        for member in EFRON_STEIN_FAMILY
    ]


def _check_spectral(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    if spec.L is None:
        raise SchemaError("scales.L", "the spectral check needs an outer scale L")
    u = ctx.observable()
    reports = []
    series = []
    for i, l in enumerate(sorted(spec.l)):
        rep = check_spectral_AB(
            u, spec.L, l, spec.n_outer, ctx.stream.child("spectral", i), ctx.domain, ctx.poisson, workers=ctx.workers
        )
        reports.append(rep)
        energy_scale = rep.rhs * np.pi**2
        ratio_err = rep.lhs_err / energy_scale if energy_scale > 0 else 0.0
        series.append((l, rep.extras["ratio"], ratio_err))
        if spec.observable == "smooth_bump":
            value, grad = smooth_bump(spec.observable_side)
            reports.append(spectral_AB_linear(value, grad, spec.rho, spec.L, l, spec.d, order=spec.grid_order))
    if len(series) >= 2:
        slope, slope_err = fit_decay_exponent(series)
        reports.append(
            BoundReport("spectral_trend", {"L": spec.L}, slope, slope_err, SPECTRAL_TREND_MAX,
                        passed=slope <= SPECTRAL_TREND_MAX, note="log-slope of the ratio against l")
        )
    return reports


def _check_lemma42(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    rng = ctx.stream.child("lemma42").generator()
    reports = []
    for _ in range(spec.grid_trials):
        problem = random_spectral_problem(spec.grid_size, rng)
        reports.append(check_lemma42(problem, 0.4 * problem.eps_max()))
    delta, v = 1.0, 0.5
    two = two_point_problem(delta, v)
    eps = 0.4 * two.eps_max()
    rep = check_lemma42(two, eps)
    rep.extras["closed_form"] = two_point_eigenvalue(delta, v, eps)
    rep.passed = rep.passed and math.isclose(rep.lhs, rep.extras["closed_form"], rel_tol=1e-9, abs_tol=1e-14)
    reports.append(rep)
    return reports


def _check_localization(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    fld = ctx.coefficient_field()
    u = ctx.observable()
    reports = []
    for i, t in enumerate(spec.times):
        if t <= 0:
            continue
        check_scales(spec.d, spec.side, max(spec.K), t, ctx.cfg.pad_factor)
        per_k, summary = check_localization(
            u, fld, t, spec.K, ctx.scheme(fld), spec.n_outer, spec.n_inner, ctx.stream.child("localization", i),
            ctx.domain, ctx.poisson, workers=ctx.workers,
        )
        reports.extend(per_k)
        reports.append(summary)
    return reports


def _check_oracle_decay(ctx: Context) -> list[BoundReport]:
    """Closed-form decay slope, with the grid quadrature of the same series alongside."""
    spec = ctx.spec
    r = spec.observable_side
    times = np.geomspace(10.0 * r**2, 1000.0 * r**2, 12)
    reports = []
    for d in (1, 2):
        exact = [box_var_exact_t(r, spec.rho, float(t), d) for t in times]
        f = box_grid(r, d, r / (40.0 if d == 1 else 10.0))
        quad = [var_exact_t(f, spec.rho, float(t), ctx.cfg.pad_factor) for t in times]
        slope, _ = fit_decay_exponent([(float(t), v, 0.0) for t, v in zip(times, exact)])
        quad_slope, _ = fit_decay_exponent([(float(t), v, 0.0) for t, v in zip(times, quad)])
        rel_diff = max(abs(q - e) / e for q, e in zip(quad, exact))
        passed = abs(slope + d / 2) <= ORACLE_SLOPE_TOL and rel_diff <= ORACLE_QUADRATURE_TOL
        reports.append(
            BoundReport("oracle_decay", {"d": d, "t_min": times[0], "t_max": times[-1]}, abs(slope + d / 2), 0.0,
                        ORACLE_SLOPE_TOL, passed=passed,
                        extras={"slope": slope, "quadrature_slope": quad_slope, "quadrature_rel_diff": rel_diff})
        )
    return reports


def _check_plateau(ctx: Context) -> list[BoundReport]:
    ratio, lower = plateau_ratio(8.0, 0.25, ctx.spec.d)
    return [
        BoundReport("plateau", {"r": 8.0, "eps": 0.25, "d": ctx.spec.d}, lower, 0.0, ratio,
                    extras={"ratio": ratio, "above_half": ratio >= 0.5},
                    note="Var[u_t]/Var[u] against 1 - r^(-eps/2)")
    ]


def _variance_with_error(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    centered = values - fsum_mean(values)
    var = fsum_sample_variance(values)
    return var, math.sqrt(fsum_sample_variance(centered**2) / n)


def _check_spatial_average(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    l_u = spec.observable_side
    u = box_count(l_u, d=spec.d, rho=spec.rho)
    var_u = spec.rho * l_u**spec.d
    second = var_u + (spec.rho * l_u**spec.d) ** 2
    domain, poisson = ctx.domain, ctx.poisson
    mus = [sample_poisson(domain, poisson, ctx.stream.child("spatial", j).generator()) for j in range(spec.n_outer)]
    reports = []
    for K in spec.K:
        w = spatial_average_w(u, K)
        vals = np.array([w(mu) for mu in mus])
        var_w, err = _variance_with_error(vals)
        bound = spatial_average_bound(second, l_u, K, spec.d)
        scaled = var_w / ((l_u / K) ** spec.d * var_u)
        extras = {"scaled": scaled, "scaling_ok": 0.5 <= scaled <= 2.0}
        if l_u == 1.0:
            n_lattice = round(K) ** spec.d
            extras["exact"] = spec.rho / n_lattice
        rep = BoundReport("spatial_average", {"K": K, "l_u": l_u}, var_w, err, bound, extras=extras)
        rep.passed = rep.passed and extras["scaling_ok"]
        reports.append(rep)
    h = np.zeros(spec.d)
    h[0] = l_u
    shifted = u.transported(h)
    cov = sample_covariance([u(mu) for mu in mus], [shifted(mu) for mu in mus])
    z = cov.z_against(0.0)
    reports.append(
        BoundReport("separated_covariance", {"shift": l_u}, abs(z), 0.0, Z_LIMIT, extras={"covariance": cov.estimate})
    )
    return reports


def _check_coarse(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    ks = spec.k or (1, 2, 3, 5)
    failures = verify_coarse_paths(spec.grid_radius, ks, (1, 2))
    for msg in failures[:10]:
        _LOG.warning("Coarse path: %s", msg)
    return [BoundReport("coarse_paths", {"radius": spec.grid_radius, "k": ",".join(map(str, ks))}, len(failures), 0.0, 0.0)]


def _check_telescope(ctx: Context) -> list[BoundReport]:
    spec = ctx.spec
    u = ctx.observable()
    stream = ctx.stream.child("telescope")
    mus = [sample_poisson(ctx.domain, ctx.poisson, stream.child(j).generator()) for j in range(spec.grid_trials)]
    res = random_telescope_residuals(u, mus, stream.child("shifts").generator())
    worst = float(np.max(np.abs(res))) if res.size else 0.0
    return [BoundReport("telescope", {"cases": len(mus)}, worst, 0.0, 1e-12)]


CHECK_RUNNERS: dict[str, Callable[[Context], list[BoundReport]]] = {
    "chernoff": _check_chernoff,
    "entropy": _check_entropy,
    "efron-stein": _check_efron_stein,
    "spectral": _check_spectral,
    "lemma42": _check_lemma42,
    "localization": _check_localization,
    "oracle-decay": _check_oracle_decay,
    "plateau": _check_plateau,
    "spatial-average": _check_spatial_average,
    "coarse": _check_coarse,
    "telescope": _check_telescope,
}


def _run_inequalities(ctx: Context) -> RunResult:
    if not ctx.spec.checks:
        raise SchemaError("checks", "inequalities needs at least one check")
    rows, details = [], {}
    for name in ctx.spec.checks:
        reports = CHECK_RUNNERS[name](ctx)
        failed = [r for r in reports if not r.passed]
        details[name] = {"reports": len(reports), "failed": len(failed)}
        if failed:
            _LOG.warning("Check %s: %d of %d reports failed", name, len(failed), len(reports))
        rows.extend(r.as_row() for r in reports)
    passed = all(d["failed"] == 0 for d in details.values())
    return RunResult(rows, passed, details)


RUNNERS: dict[str, Callable[[Context], RunResult]] = {
    "sample": _run_sample,
    "evolve": _run_evolve,
    "var-decay": _run_var_decay,
    "oracle-compare": _run_oracle_compare,
    "localization": _run_localization,
    "martingale": _run_martingale,
    "inequalities": _run_inequalities,
}


def run(spec: ExperimentSpec, cfg: LabConfig, out: str | None = None) -> tuple[int, RunResult]:
    """Execute ``spec``; returns (exit code, result). Outputs depend only on (spec, seed)."""
    validate(spec, cfg.pad_factor)
    fmt = spec.format or cfg.output_format
    seed = spec.seed if spec.seed is not None else cfg.seed
    if out:
        spec = replace(spec, out=out)
    out_path = resolve_out_path(cfg, spec, fmt)
    ctx = Context(spec, cfg, seed, out_path, fmt)

    start = time.perf_counter()
    result = RUNNERS[spec.kind](ctx)
    elapsed = time.perf_counter() - start

    if not result.written:
        if fmt == "json":
            write_json({"kind": spec.kind, "seed": seed, "rows": result.rows}, out_path)
        else:
            write_rows_csv(result.rows, out_path)
    write_json(
        {
            "kind": spec.kind,
            "seed": seed,
            "passed": result.passed,
            "rows": len(result.rows),
            "workers": cfg.workers,
            "wall_clock_s": elapsed,
            "output": str(out_path),
            "details": result.details,
            "spec": to_json(spec),
        },
        summary_path(out_path),
    )
    _LOG.info("%s finished in %.1fs: %s -> %s", spec.kind, elapsed, "passed" if result.passed else "FAILED", out_path)
    return (0 if result.passed else 1), result

