"""
Experiment orchestration

Loads and validates experiment configs, runs the regime pipelines (prelimit
ensembles across the eps schedule, limit ensembles, the regime's validator
set) and writes report.json, summary.csv, convergence tables and sample
paths. Each validator runs in isolation: an exception becomes a fail row.
"""

import json
import logging
import math
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from app import __version__
from app.config.settings import settings
from app.core import storage
from app.core.coefficients import (
    AveragedInterfaceData,
    CoefficientSet,
    SampleBox,
    average_interface,
    cesaro_times_f_gap,
    estimate_a_pm,
    interface_diffusion_alpha,
    interface_drift_beta,
    validate_assumptions,
)
from app.core.ensembles import LimitEnsemble, RecordingPlan, limit_ensemble, prelimit_ensemble, run_batches
from app.core.exceptions import ConfigurationError, PlotDependencyError
from app.core.interface_stats import (
    boundary_increment_limits,
    brownian_occupation_oracle,
    check_schedule,
    default_schedules,
    eigenfunction_residual,
    excursion_exit_stats,
    occupation_fit,
    occupation_fractions,
    occupation_time,
)
from app.core.limit_builder import cantor_support_violations
from app.core.local_time import default_band, local_time_band, local_time_tanaka
from app.core.models import (
    ConvergenceTable,
    EnsembleSnapshot,
    ExperimentConfig,
    ExperimentReport,
    LimitPath,
    Provenance,
    Regime,
    StatReport,
    TimeGrid,
    as_tuple,
)
from app.core.plots import emit_plots
from app.core.registry import build_model
from app.core.sde_engine import deviation_batch, simulate_full_batch, simulate_longtime_batch, solve_unperturbed, step_limit
from app.core.validators import (
    GeneratorSpec,
    TestFunction,
    calibration_report,
    check_cesaro_averaging,
    check_deviation_scaling,
    check_exit_time_moment_bound,
    check_integral_functional_bound,
    check_third_moment_trend,
    check_tightness_moments,
    compare_marginals,
    default_projections,
    deviation_samples,
    gluing_fields,
    gluing_test_family,
    marginal_verdicts,
    martingale_increments,
    residual_report,
    smooth_cutoff,
)

# Configure logging
logger = logging.getLogger(__name__)

STAGES = ("all", "compare", "interface")
DEVIATION_KINDS = {"deviation_diffusive": "diffusive", "deviation_drift": "drift"}
CALIBRATION_SEED_OFFSET = 1_000_003
MIN_MARTINGALE_PATHS = 1000


def load_config(path: Path) -> ExperimentConfig:
    """
    Parse a JSON experiment config

    Raises:
        ConfigurationError: unreadable file or schema violations (one message per field)
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}")
    try:
        return ExperimentConfig.model_validate_json(text)
    except ValidationError as e:
        errors = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]
        raise ConfigurationError(f"config {path} does not match the schema", errors)


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> ExperimentConfig:
    """Config copy with the command-line seed and output directory applied"""
    engine = config.engine if seed is None else config.engine.model_copy(update={"master_seed": seed})
    output = config.output if out is None else config.output.model_copy(update={"directory": out})
    return config.model_copy(update={"engine": engine, "output": output})


def engine_regime(config: ExperimentConfig) -> Regime:
    return "longtime" if config.regime == "longtime" else "standard"


def _probe_rows(coeffs: CoefficientSet, y0: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(-5.0, 5.0, 41)
    offsets = np.linspace(-2.0, 2.0, 5)
    x = np.repeat(xs, offsets.size)
    y = np.asarray(y0, dtype=float)[None, :] + np.tile(offsets, xs.size)[:, None]
    return x, y


def estimate_batch_memory_mb(config: ExperimentConfig, coeffs: CoefficientSet, workers: int) -> float:
    """Peak memory of concurrently running batches: prelimit paths at the finest eps, or the limit aux grid"""
    engine = config.engine
    batch = engine.batch_size or settings.BATCH_SIZE
    horizon = max(engine.horizons)
    d, k = coeffs.d, coeffs.k
    n_prelimit = math.ceil(horizon / step_limit(min(engine.eps_schedule), engine_regime(config), engine.step_safety))
    prelimit = batch * (n_prelimit + 1) * (2 + 2 * d + k) * 8
    ratio = coeffs.c2 / coeffs.c1
    n_limit = math.ceil(horizon / engine.limit_dt * ratio)
    limit = batch * (n_limit + 1) * (3 + 3 * d) * 8
    return workers * max(prelimit, limit) / 2 ** 20


def validate_config(config: ExperimentConfig, workers: Optional[int] = None) -> List[str]:
    """
    Every reason the config cannot run, as human-readable messages.

    Covers the model and its overrides, regime gating (deviation_drift needs
    sigma = 0, longtime needs b1 = 0), interface schedules and the memory budget.
    """
    errors: List[str] = []
    try:
        coeffs = build_model(config.model.name, config.model.overrides)
    except ConfigurationError as e:
        return list(e.errors)
    except (TypeError, ValueError) as e:
        return [f"model '{config.model.name}': {e}"]

    engine = config.engine
    if engine.y0 is not None and len(engine.y0) != coeffs.d:
        errors.append(f"engine.y0 has {len(engine.y0)} components, model '{coeffs.name}' has d={coeffs.d}")
        y0: Sequence[float] = [0.0] * coeffs.d
    else:
        y0 = as_tuple(engine.y0, coeffs.d)

    x, y = _probe_rows(coeffs, y0)
    if config.regime == "deviation_drift" and not coeffs.diffusion_vanishes(x, y):
        errors.append(f"regime deviation_drift requires sigma = 0, model '{coeffs.name}' has a nonzero sigma")
    if config.regime == "longtime" and not coeffs.drift_vanishes(y):
        errors.append(f"regime longtime requires b1 = 0, model '{coeffs.name}' has a nonzero b1")

    interface = config.interface
    eps_list = interface.eps_schedule or engine.eps_schedule
    try:
        deltas, ells = default_schedules(engine_regime(config), eps_list, interface.gamma)
        deltas = interface.delta_schedule or deltas
        ells = interface.ell_schedule or ells
        if len(deltas) != len(eps_list):
            errors.append(f"interface.delta_schedule has {len(deltas)} entries for {len(eps_list)} values of eps")
        else:
            check_schedule(deltas, ells)
    except ConfigurationError as e:
        errors.extend(f"interface: {message}" for message in e.errors)
    if any(not 0 <= f <= 1 for f in interface.start_fractions):
        errors.append("interface.start_fractions must lie in [0, 1]")

    workers = workers or settings.WORKERS
    needed = estimate_batch_memory_mb(config, coeffs, workers)
    if needed > settings.MEMORY_BUDGET_MB:
        errors.append(
            f"{workers} workers need about {needed:.0f} MB for one batch each, above the "
            f"{settings.MEMORY_BUDGET_MB} MB budget; lower engine.batch_size or the worker count"
        )
    return errors


def _plain(value: Any) -> Any:
    """Numpy scalars and arrays converted to JSON-friendly builtins"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


@dataclass
class RunContext:
    """Shared state of one experiment run"""
    config: ExperimentConfig
    coeffs: CoefficientSet
    out_dir: Path
    workers: int
    batch_size: Optional[int]
    rows: List[StatReport] = field(default_factory=list)
    tables: Dict[str, ConvergenceTable] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    _avg: Optional[AveragedInterfaceData] = None

    @property
    def experiment_id(self) -> str:
        return self.config.experiment_id

    @property
    def seed(self) -> int:
        return self.config.engine.master_seed

    @property
    def y0(self) -> Tuple[float, ...]:
        return as_tuple(self.config.engine.y0, self.coeffs.d)

    @property
    def horizon(self) -> float:
        return max(self.config.engine.horizons)

    def interface_data(self) -> AveragedInterfaceData:
        if self._avg is None:
            y0 = np.asarray(self.y0)
            probes = [y0, y0 + 1.0, y0 - 1.0]
            self._avg = average_interface(self.coeffs, probes)
        return self._avg

    def attempt(self, label: str, fn: Callable[[], Any]) -> Any:
        """Run fn; on failure record a fail row and return None"""
        try:
            return fn()
        except Exception as e:
            logger.error(f"{label} failed: {type(e).__name__}: {e}")
            self.rows.append(StatReport(
                experiment_id=self.experiment_id, metric=label, value=float("nan"), threshold=0.0,
                verdict="fail", details={"error": f"{type(e).__name__}: {e}"},
            ))
            return None

    def check(self, label: str, fn: Callable[[], List[StatReport]]) -> None:
        """Run a validator and record its rows, timing it"""
        started = time.perf_counter()
        reports = self.attempt(label, fn)
        if not reports:
            return
        elapsed = (time.perf_counter() - started) / len(reports)
        for report in reports:
            report.experiment_id = self.experiment_id
            report.wall_time = elapsed
            report.details = _plain(report.details)
            self.rows.append(report)
            logger.info(f"{report.metric}: {report.verdict} (value {report.value:.6g})")

    def inconclusive(self, metric: str, reason: str) -> None:
        self.rows.append(StatReport(
            experiment_id=self.experiment_id, metric=metric, value=float("nan"), threshold=0.0,
            verdict="inconclusive", details={"reason": reason},
        ))


def _relative(value: float, target: float, rel_tol: float, stderr: Optional[float], metric: str, **details: Any) -> StatReport:
    threshold = rel_tol * abs(target) if target != 0 else rel_tol
    return StatReport(
        experiment_id="", metric=metric, value=float(value), target=float(target), stderr=stderr,
        threshold=threshold, verdict=StatReport.judge(value, target, threshold, stderr), details=details,
    )


def _has_unit_fast_diffusion(coeffs: CoefficientSet, y0: Sequence[float]) -> bool:
    x, y = _probe_rows(coeffs, y0)
    return bool(np.allclose(coeffs.phi_sq(x, y), 1.0, rtol=0, atol=1e-12))


def _sigma_vanishes(coeffs: CoefficientSet, y0: Sequence[float]) -> bool:
    x, y = _probe_rows(coeffs, y0)
    return coeffs.diffusion_vanishes(x, y)


def _tightness_pairs(times: np.ndarray) -> List[Tuple[float, float]]:
    picks = [j for j in (1, 2, 4, 8, 16, 32) if j < len(times)]
    return [(float(times[0]), float(times[j])) for j in picks]


# Marginal convergence and martingale residuals

@dataclass
class _LimitRun:
    ensemble: LimitEnsemble
    band: float
    functions: List[TestFunction]
    control: Optional[TestFunction]


def _limit_kind(config: ExperimentConfig) -> str:
    return DEVIATION_KINDS.get(config.regime, "longtime")


def _resolve_band(ctx: RunContext, plan: RecordingPlan) -> float:
    policy = ctx.config.local_time
    return policy.band or default_band(plan.grid.dt, policy.band_factor)


def _martingale_setup(
    ctx: RunContext,
    kind: str,
    avg: AveragedInterfaceData,
    y_ref: Optional[np.ndarray],
) -> Tuple[List[TestFunction], Optional[TestFunction], Optional[str]]:
    if kind == "longtime" and not avg.constant:
        return [], None, "interface data varies with the slow state"
    beta_at, alpha_at, fixed = gluing_fields(avg, kind, y_ref)
    if not fixed:
        return [], None, "gluing data varies along the reference trajectory"
    family, control = gluing_test_family(ctx.coeffs.d, beta_at, alpha_at)
    return family, control, None


def _run_limit(ctx: RunContext, kind: str, with_martingale: bool) -> Optional[_LimitRun]:
    engine, output = ctx.config.engine, ctx.config.output
    avg = ctx.interface_data()
    plan = RecordingPlan.build(ctx.horizon, engine.limit_dt, engine.record_points, engine.horizons)
    band = _resolve_band(ctx, plan)
    y_ref = None if kind == "longtime" else solve_unperturbed(ctx.coeffs, ctx.y0, plan.grid)

    functions: List[TestFunction] = []
    control: Optional[TestFunction] = None
    if with_martingale:
        setup = ctx.attempt("martingale_setup", lambda: _martingale_setup(ctx, kind, avg, y_ref))
        if setup is not None:
            functions, control, reason = setup
            if reason:
                ctx.inconclusive("martingale", reason)
    if kind == "longtime":
        generator = GeneratorSpec.longtime(avg, band)
    else:
        generator = GeneratorSpec.deviation(avg, ctx.coeffs.b1_jac, y_ref, plan.grid, band)
    s = float(plan.grid.times()[plan.grid.n_steps // 2])
    t = float(plan.grid.times()[-1])
    tracked = functions + ([control] if control is not None else [])

    def reducer(limit: LimitPath) -> Dict[str, Any]:
        local = replace(generator, band=max(band, limit.L.band_width or 0.0))
        return {
            "martingale": {f.name: martingale_increments(limit, f, local, s, t) for f in tracked},
            "support": cantor_support_violations(limit),
            "occupation": occupation_fractions(limit.x0_path, ctx.config.validators.occupation_deltas),
            "n": limit.x0_path.shape[0],
        }

    ensemble = limit_ensemble(
        avg, ctx.coeffs, kind, ctx.y0, ctx.horizon, engine.n_paths, ctx.seed, engine.limit_dt,
        engine.record_points, engine.horizons, band, reducer=reducer, keep_samples=output.sample_paths,
        workers=ctx.workers, batch_size=ctx.batch_size,
    )
    if ensemble.samples is not None and output.sample_paths:
        stride = max(1, ensemble.plan.grid.n_steps // 1000)
        target = storage.write_frame(storage.limit_frame(ensemble.samples, stride), ctx.out_dir / "paths" / "limit_samples.csv")
        ctx.artifacts["limit_samples"] = str(target.relative_to(ctx.out_dir))

    if tracked:
        validators = ctx.config.validators
        for f in tracked:
            x_s = np.concatenate([r["martingale"][f.name][0] for r in ensemble.reductions])
            increments = np.concatenate([r["martingale"][f.name][1] for r in ensemble.reductions])
            is_control = f is control

            def residual(x_s: np.ndarray = x_s, increments: np.ndarray = increments, f: TestFunction = f,
                         is_control: bool = is_control) -> List[StatReport]:
                report = residual_report(
                    x_s, increments, ctx.experiment_id, f"martingale:{f.name}",
                    sigmas=validators.negative_control_sigmas if is_control else validators.martingale_sigmas,
                    n_bins=validators.martingale_bins, negative_control=is_control,
                    min_paths=MIN_MARTINGALE_PATHS,
                )
                report.details.update({"s": s, "t": t, "band": band})
                return [report]

            ctx.check(f"martingale:{f.name}", residual)
    return _LimitRun(ensemble=ensemble, band=band, functions=functions, control=control)


def _prelimit_ensembles(ctx: RunContext, exponent: Optional[float]) -> Dict[float, EnsembleSnapshot]:
    engine = ctx.config.engine
    out = {}
    for eps in engine.eps_schedule:
        out[eps] = prelimit_ensemble(
            ctx.coeffs, eps, engine_regime(ctx.config), engine.x0, ctx.y0, ctx.horizon, engine.n_paths, ctx.seed,
            exponent=exponent, record_points=engine.record_points, extra_times=engine.horizons,
            step_safety=engine.step_safety, workers=ctx.workers, batch_size=ctx.batch_size,
        )
    return out


def _marginal_stage(ctx: RunContext, prelimit: Dict[float, EnsembleSnapshot], limit: LimitEnsemble) -> None:
    validators = ctx.config.validators
    projections = default_projections(ctx.coeffs.d)

    def marginals() -> List[StatReport]:
        table = compare_marginals(prelimit, limit.snapshot, ctx.config.engine.horizons, projections)
        ctx.tables["marginals"] = table
        return marginal_verdicts(table, ctx.experiment_id, validators.ks_final, validators.ks_noise_multiple)

    ctx.check("marginals", marginals)

    def calibration() -> List[StatReport]:
        engine = ctx.config.engine
        twin = limit_ensemble(
            ctx.interface_data(), ctx.coeffs, _limit_kind(ctx.config), ctx.y0, ctx.horizon, engine.n_paths,
            ctx.seed + CALIBRATION_SEED_OFFSET, engine.limit_dt, engine.record_points, engine.horizons,
            _resolve_band(ctx, limit.plan), workers=ctx.workers, batch_size=ctx.batch_size,
        )
        return [
            calibration_report(limit.snapshot, twin.snapshot, ctx.horizon, name, ctx.experiment_id, validators.ks_noise_multiple)
            for name in projections
        ]

    ctx.check("ks_calibration", calibration)


def _limit_mean_stage(ctx: RunContext, limit: LimitEnsemble, kind: str) -> None:
    refs = ctx.coeffs.analytic_refs
    if refs is None or refs.limit_mean_slow is None or kind == "diffusive":
        return
    if not np.any(np.isclose(limit.snapshot.times, 1.0, rtol=0, atol=1e-9)):
        return

    def mean_at_one() -> List[StatReport]:
        sample = limit.snapshot.slow[:, limit.snapshot.index_of(1.0), 0]
        target = refs.limit_mean_slow[0] + (ctx.y0[0] if kind == "longtime" else 0.0)
        stderr = float(sample.std(ddof=1) / math.sqrt(sample.size))
        return [_relative(float(sample.mean()), target, 0.05, stderr, "limit_mean_slow_1@t=1")]

    ctx.check("limit_mean_slow_1", mean_at_one)


def _support_stage(ctx: RunContext, run: _LimitRun, kind: str) -> None:
    reductions = run.ensemble.reductions

    def support() -> List[StatReport]:
        totals = {key: sum(r["support"][key] for r in reductions) for key in ("v_without_local_time", "slow_off_band", "steps")}
        metric = "slow_off_band" if kind == "longtime" else "v_without_local_time"
        bad = totals[metric]
        return [StatReport(
            experiment_id="", metric=f"cantor_support:{metric}", value=float(bad), target=0.0, threshold=0.0,
            verdict="pass" if bad == 0 else "fail", n_samples=totals["steps"], details=totals,
        )]

    ctx.check("cantor_support", support)

    if kind != "longtime":
        return

    def occupation() -> List[StatReport]:
        deltas = ctx.config.validators.occupation_deltas
        counts = np.array([r["n"] for r in reductions], dtype=float)
        fractions = np.array([r["occupation"] for r in reductions])
        pooled = (counts[:, None] * fractions).sum(axis=0) / counts.sum()
        fit = occupation_fit(deltas, pooled)
        ctx.tables["occupation"] = ConvergenceTable(
            title="band occupation fraction of the limit interface coordinate against band width",
            rows=[{"delta": d, "fraction": f, "fit": fit["intercept"] + fit["slope"] * d} for d, f in zip(fit["deltas"], fit["fractions"])],
        )
        r2 = float(fit["r2"])
        min_r2 = ctx.config.validators.occupation_min_r2
        return [StatReport(
            experiment_id="", metric="occupation_scaling_r2", value=r2, target=1.0, threshold=1.0 - min_r2,
            verdict="pass" if r2 >= min_r2 else "fail", n_samples=int(counts.sum()), details=fit,
        )]

    ctx.check("occupation_scaling", occupation)


def _tightness_stage(ctx: RunContext, snapshot: EnsembleSnapshot) -> None:
    validators = ctx.config.validators

    def tightness() -> List[StatReport]:
        pairs = _tightness_pairs(snapshot.times)
        return [check_tightness_moments(
            snapshot, validators.tightness_p, pairs, min_exponent=validators.tightness_min_exponent,
            experiment_id=ctx.experiment_id,
        )]

    ctx.check("tightness", tightness)


def _limit_pipeline(ctx: RunContext, stage: str) -> None:
    kind = _limit_kind(ctx.config)
    exponent = {"diffusive": 0.5, "drift": 1.0}.get(kind)
    prelimit = ctx.attempt("prelimit_ensembles", lambda: _prelimit_ensembles(ctx, exponent))
    run = ctx.attempt("limit_ensemble", lambda: _run_limit(ctx, kind, with_martingale=stage == "all"))
    if prelimit is not None and run is not None:
        _marginal_stage(ctx, prelimit, run.ensemble)
    if stage == "compare":
        return
    if run is not None:
        _limit_mean_stage(ctx, run.ensemble, kind)
        _support_stage(ctx, run, kind)
    if prelimit is not None and kind != "longtime":
        _tightness_stage(ctx, prelimit[min(prelimit)])
    if kind == "longtime":
        _increment_stage(ctx)


# Interface statistics

def _increment_stage(ctx: RunContext) -> None:
    interface = ctx.config.interface
    regime = engine_regime(ctx.config)
    eps_list = interface.eps_schedule or ctx.config.engine.eps_schedule
    tolerance = ctx.config.validators.increment_relative_tolerance

    def increments() -> List[StatReport]:
        table = boundary_increment_limits(
            ctx.coeffs, regime, ctx.y0, eps_list, interface.delta_schedule, interface.ell_schedule,
            interface.n_paths, ctx.seed, interface.gamma, interface.scale_exponent, interface.start_fractions,
            workers=ctx.workers, batch_size=ctx.batch_size,
        )
        ctx.tables["boundary_increments"] = table
        finest = next(r for r in table.rows if r["eps"] == eps_list[-1])
        rows = []
        for i in range(ctx.coeffs.d):
            rows.append(_relative(
                finest[f"mean_dy_over_delta_{i + 1}"], finest[f"target_beta_{i + 1}"], tolerance,
                finest[f"mean_dy_over_delta_{i + 1}_stderr"], f"increment_beta_{i + 1}",
                eps=finest["eps"], delta=finest["delta"],
            ))
            key = f"mean_dydy_over_delta_{i + 1}{i + 1}"
            rows.append(_relative(
                finest[key], finest[f"target_alpha_{i + 1}{i + 1}"], tolerance, finest[f"{key}_stderr"],
                f"increment_alpha_{i + 1}{i + 1}", eps=finest["eps"], delta=finest["delta"],
            ))
        rows.append(StatReport(
            experiment_id="", metric="increments_approaching", value=1.0 if table.passed else 0.0, target=1.0,
            threshold=0.0, verdict="pass" if table.passed else "fail", n_samples=interface.n_paths,
        ))
        return rows

    ctx.check("boundary_increments", increments)


def _exit_stage(ctx: RunContext) -> None:
    interface = ctx.config.interface
    eps = interface.exit_eps
    unit = _has_unit_fast_diffusion(ctx.coeffs, ctx.y0)
    table = ConvergenceTable(title="excursion exit statistics from (-delta, delta)")
    ctx.tables["exit_stats"] = table
    third: Dict[float, Tuple[float, float]] = {}
    second: Dict[float, float] = {}
    bounds = ctx.config.validators

    for delta in sorted(interface.exit_deltas, reverse=True):
        ell = delta / 2

        def exits(delta: float = delta, ell: float = ell) -> List[StatReport]:
            rows = []
            for start_x, target in ((0.0, 0.5), (ell, 0.75)):
                result = excursion_exit_stats(
                    ctx.coeffs, eps, (start_x, ctx.y0), delta, ell, interface.n_paths, ctx.seed,
                    regime=engine_regime(ctx.config), scale_exponent=interface.scale_exponent,
                    workers=ctx.workers, batch_size=ctx.batch_size,
                )
                table.rows.append(result.as_row())
                threshold = 3 * result.p_stderr
                rows.append(StatReport(
                    experiment_id="", metric=f"exit_p_plus@x={start_x:g},delta={delta:g}", value=result.p_plus_hat,
                    target=target, stderr=result.p_stderr, threshold=threshold,
                    verdict=StatReport.judge(result.p_plus_hat, target, threshold, result.p_stderr),
                    n_samples=result.n_paths,
                ))
                if start_x == 0.0:
                    third[delta] = (result.third_moment_over_delta, result.third_moment_stderr)
                    second[delta] = result.theta_second
                    if unit:
                        spread = math.sqrt(max(result.theta_second - result.theta_mean ** 2, 0.0) / result.n_paths)
                        rows.append(_relative(
                            result.theta_mean / delta ** 2, 1.0, 0.05, spread / delta ** 2,
                            f"exit_time_over_delta_sq@delta={delta:g}",
                        ))
            return rows

        ctx.check(f"exit_stats@delta={delta:g}", exits)

    if len(third) >= 2:
        ctx.check("third_moment_trend", lambda: [check_third_moment_trend(
            third, bounds.third_moment_sigmas, n_samples=interface.n_paths,
        )])
    if len(second) >= 2:
        ctx.check("exit_time_moment_bound", lambda: [check_exit_time_moment_bound(
            second, bounds.exit_time_moment_bound, n_samples=interface.n_paths,
        )])


# Lemma suite

def _assumption_stage(ctx: RunContext) -> None:
    def assumptions() -> List[StatReport]:
        y0 = np.asarray(ctx.y0)
        box = SampleBox(-5.0, 5.0, tuple(y0 - 1.0), tuple(y0 + 1.0))
        report = validate_assumptions(ctx.coeffs, box, 2000, strict=False, seed=ctx.seed)
        return [
            StatReport(
                experiment_id="", metric=f"assumption:{check.name}",
                value=float(check.value) if check.value is not None and math.isfinite(check.value) else 0.0,
                threshold=0.0, verdict="pass" if check.passed else "fail", n_samples=report.n_samples,
                details={"detail": check.detail},
            )
            for check in report.checks
        ]

    ctx.check("assumptions", assumptions)


def _oracle_stage(ctx: RunContext) -> None:
    refs = ctx.coeffs.analytic_refs
    if refs is None:
        return
    y0 = np.asarray(ctx.y0)

    def oracles() -> List[StatReport]:
        rows = []
        if refs.a_plus is not None:
            estimate = estimate_a_pm(ctx.coeffs, y0)
            for label, value, target in (("a_plus", estimate.a_plus, refs.a_plus), ("a_minus", estimate.a_minus, refs.a_minus)):
                rows.append(StatReport(
                    experiment_id="", metric=f"oracle:{label}", value=value, target=target, threshold=1e-4,
                    verdict=StatReport.judge(value, target, 1e-4), details={"spread": estimate.error_est},
                ))
        if refs.beta is not None:
            beta, error = interface_drift_beta(ctx.coeffs, y0)
            gap = float(np.max(np.abs(beta - np.asarray(refs.beta))))
            rows.append(StatReport(
                experiment_id="", metric="oracle:beta", value=gap, threshold=1e-6,
                verdict=StatReport.judge(gap, 0.0, 1e-6), details={"beta": beta, "quadrature_error": error},
            ))
        if refs.alpha is not None:
            alpha, error = interface_diffusion_alpha(ctx.coeffs, y0)
            gap = float(np.max(np.abs(alpha - np.asarray(refs.alpha))))
            rows.append(StatReport(
                experiment_id="", metric="oracle:alpha", value=gap, threshold=1e-6,
                verdict=StatReport.judge(gap, 0.0, 1e-6), details={"alpha": alpha, "quadrature_error": error},
            ))
        return rows

    ctx.check("coefficient_oracles", oracles)

    def eigenfunction() -> List[StatReport]:
        avg = ctx.interface_data()
        a_plus = float(avg.a_plus(y0[None])[0])
        a_minus = float(avg.a_minus(y0[None])[0])
        residual = eigenfunction_residual(1.0, a_plus, a_minus, np.linspace(-3.0, 3.0, 601))
        return [StatReport(
            experiment_id="", metric="exit_eigenfunction_residual", value=residual, threshold=1e-5,
            verdict=StatReport.judge(residual, 0.0, 1e-5),
        )]

    ctx.check("exit_eigenfunction", eigenfunction)


def _cesaro_gap_stage(ctx: RunContext) -> None:
    y_row = np.asarray(ctx.y0)[None, :]

    def gap() -> List[StatReport]:
        a_plus = float(ctx.interface_data().a_plus(y_row)[0])

        def g(s: np.ndarray) -> np.ndarray:
            return 1.0 / ctx.coeffs.phi_sq(s, np.repeat(y_row, s.size, axis=0))

        eps_list = ctx.config.engine.eps_schedule
        gaps = [cesaro_times_f_gap(g, 1.0 / a_plus, smooth_cutoff, 5.0, eps) for eps in eps_list]
        monotone = all(b <= a + 1e-9 for a, b in zip(gaps, gaps[1:]))
        return [StatReport(
            experiment_id="", metric="cesaro_times_f_gap", value=gaps[-1], threshold=0.05,
            verdict="pass" if monotone and gaps[-1] <= 0.05 else "fail", details={"eps": eps_list, "gaps": gaps},
        )]

    ctx.check("cesaro_times_f", gap)


@dataclass
class _FinestRun:
    band_end: np.ndarray
    tanaka_end: np.ndarray
    abs_gain: np.ndarray
    occupation: np.ndarray
    snapshot: EnsembleSnapshot
    grid: TimeGrid


def _finest_ensemble(ctx: RunContext, exponent: float) -> _FinestRun:
    """One prelimit ensemble at the finest eps feeding local-time, occupation and tightness checks"""
    engine = ctx.config.engine
    eps = min(engine.eps_schedule)
    horizon = engine.horizons[0]
    plan = RecordingPlan.build(horizon, step_limit(eps, "standard", engine.step_safety), engine.record_points)
    y_ref = solve_unperturbed(ctx.coeffs, ctx.y0, plan.grid)
    band = default_band(plan.grid.dt, ctx.config.local_time.band_factor)
    deltas = ctx.config.validators.occupation_deltas

    def job(indices: np.ndarray) -> Tuple[np.ndarray, ...]:
        batch = simulate_full_batch(ctx.coeffs, eps, engine.x0, ctx.y0, plan.grid, ctx.seed, indices, engine.step_safety)
        x = batch.x
        band_end = local_time_band(x, np.diff(x, axis=1) ** 2, band, dt=plan.grid.dt).L[:, -1]
        tanaka_end = local_time_tanaka(x).L[:, -1]
        occupation = np.stack([occupation_time(x, delta) for delta in deltas], axis=-1)
        zeta = deviation_batch(batch, y_ref, exponent).zeta
        return (
            band_end, tanaka_end, np.abs(x[:, -1]) - abs(engine.x0), occupation,
            x[:, plan.record_index], zeta[:, plan.record_index],
        )

    parts = run_batches(job, engine.n_paths, ctx.workers, ctx.batch_size)
    return _FinestRun(
        band_end=np.concatenate([p[0] for p in parts]),
        tanaka_end=np.concatenate([p[1] for p in parts]),
        abs_gain=np.concatenate([p[2] for p in parts]),
        occupation=np.concatenate([p[3] for p in parts]),
        snapshot=EnsembleSnapshot(
            times=plan.record_times,
            x=np.concatenate([p[4] for p in parts]),
            slow=np.concatenate([p[5] for p in parts]),
            label=f"eps={eps:g}",
        ),
        grid=plan.grid,
    )


def _local_time_stage(ctx: RunContext, run: _FinestRun) -> None:
    engine = ctx.config.engine
    horizon = engine.horizons[0]
    brownian = _has_unit_fast_diffusion(ctx.coeffs, ctx.y0) and engine.x0 == 0.0

    def local_time() -> List[StatReport]:
        target = math.sqrt(2 * horizon / math.pi) if brownian else float(run.abs_gain.mean())
        rows = []
        for label, values in (("band", run.band_end), ("tanaka", run.tanaka_end)):
            stderr = float(values.std(ddof=1) / math.sqrt(values.size))
            rows.append(_relative(float(values.mean()), target, 0.03, stderr, f"local_time_mean:{label}", oracle=brownian))
        gap = float(np.mean(np.abs(run.band_end - run.tanaka_end)))
        rows.append(StatReport(
            experiment_id="", metric="local_time_estimator_gap", value=gap, threshold=0.05,
            verdict="pass" if gap <= 0.05 else "fail", n_samples=run.band_end.size,
        ))
        return rows

    ctx.check("local_time", local_time)

    if not brownian:
        return

    def occupation() -> List[StatReport]:
        rows = []
        for j, delta in enumerate(ctx.config.validators.occupation_deltas):
            values = run.occupation[:, j]
            target = brownian_occupation_oracle(delta, horizon)
            stderr = float(values.std(ddof=1) / math.sqrt(values.size))
            rows.append(_relative(float(values.mean()), target, 0.05, stderr, f"occupation_fraction@delta={delta:g}"))
        return rows

    ctx.check("occupation_oracle", occupation)


def _lemma_suite(ctx: RunContext, stage: str) -> None:
    if stage == "interface":
        _exit_stage(ctx)
        return
    if stage == "compare":
        logger.info("lemma_suite has no limit ensemble to compare against")
        return
    engine, validators = ctx.config.engine, ctx.config.validators
    y0 = ctx.y0
    sigma_free = _sigma_vanishes(ctx.coeffs, y0)
    exponent = 1.0 if sigma_free else 0.5

    _assumption_stage(ctx)
    _oracle_stage(ctx)
    _cesaro_gap_stage(ctx)

    finest = ctx.attempt("finest_ensemble", lambda: _finest_ensemble(ctx, exponent))
    if finest is not None:
        _local_time_stage(ctx, finest)
        _tightness_stage(ctx, finest.snapshot)

    def integral_bound() -> List[StatReport]:
        def psi(x: np.ndarray) -> np.ndarray:
            return (np.abs(x) <= 1.0).astype(float)

        horizons = engine.horizons if len(engine.horizons) >= 3 else None
        return [check_integral_functional_bound(
            ctx.coeffs, psi, 2.0, engine.eps_schedule, engine.horizons[0], 2.0, engine.n_paths, ctx.seed,
            x0=engine.x0, y0=y0, horizons=horizons, slope_tolerance=validators.moment_slope_tolerance,
            workers=ctx.workers, batch_size=ctx.batch_size,
        )]

    ctx.check("integral_functional_bound", integral_bound)

    avg = ctx.attempt("interface_data", ctx.interface_data)
    if avg is not None and avg.constant:
        def cesaro() -> List[StatReport]:
            return [check_cesaro_averaging(
                ctx.coeffs, avg, lambda t, x, y: np.ones_like(x), engine.eps_schedule, engine.horizons[0],
                engine.n_paths, ctx.seed, x0=engine.x0, y0=y0, threshold=validators.cesaro_final_threshold,
                workers=ctx.workers, batch_size=ctx.batch_size,
            )]

        ctx.check("cesaro_averaging", cesaro)
    elif avg is not None:
        ctx.inconclusive("cesaro_averaging", "interface data varies with the slow state")

    if not sigma_free and len(engine.eps_schedule) >= 4:
        def scaling() -> List[StatReport]:
            samples = deviation_samples(
                ctx.coeffs, engine.eps_schedule, engine.horizons[0], engine.n_paths, ctx.seed,
                x0=engine.x0, y0=y0, workers=ctx.workers, batch_size=ctx.batch_size,
            )
            return [check_deviation_scaling(samples)]

        ctx.check("deviation_scaling", scaling)

    _exit_stage(ctx)


# Entry point

def _write_outputs(ctx: RunContext) -> None:
    for name, table in sorted(ctx.tables.items()):
        if not table.rows:
            continue
        target = storage.write_table(table, ctx.out_dir / "tables" / f"{name}.csv")
        ctx.artifacts[name] = str(target.relative_to(ctx.out_dir))
    target = storage.write_summary(ctx.rows, ctx.out_dir / "summary.csv")
    ctx.artifacts["summary"] = str(target.relative_to(ctx.out_dir))


def _write_sample_paths(ctx: RunContext) -> None:
    engine, output = ctx.config.engine, ctx.config.output
    count = max(output.sample_paths, 1)
    simulate = simulate_longtime_batch if engine_regime(ctx.config) == "longtime" else simulate_full_batch
    for eps in engine.eps_schedule:
        grid = TimeGrid.for_horizon(ctx.horizon, step_limit(eps, engine_regime(ctx.config), engine.step_safety))
        batch = simulate(ctx.coeffs, eps, engine.x0, ctx.y0, grid, ctx.seed, np.arange(count), engine.step_safety)
        stem = ctx.out_dir / "paths" / f"prelimit_eps={eps:g}"
        binary = storage.write_paths(stem.with_suffix(".nrsp"), batch)
        table = storage.write_frame(storage.path_frame(batch), stem.with_suffix(".csv"), title=f"prelimit paths, eps={eps:g}")
        ctx.artifacts[f"paths_eps={eps:g}"] = str(binary.relative_to(ctx.out_dir))
        ctx.artifacts[f"paths_csv_eps={eps:g}"] = str(table.relative_to(ctx.out_dir))


def run_experiment(
    config: ExperimentConfig,
    workers: Optional[int] = None,
    stage: str = "all",
    plots: bool = True,
) -> ExperimentReport:
    """
    Run the pipeline of the config's regime and write its outputs

    Args:
        config: validated experiment config
        workers: worker threads (default from settings)
        stage: 'all', 'compare' (marginal KS protocol only) or 'interface' (excursion statistics only)
        plots: emit plot scripts next to the CSVs

    Raises:
        ConfigurationError: the config fails validate_config
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage '{stage}', expected one of {STAGES}")
    workers = workers or settings.WORKERS
    errors = validate_config(config, workers)
    if errors:
        raise ConfigurationError(f"config '{config.experiment_id}' is invalid ({len(errors)} problems)", errors)

    started = time.perf_counter()
    out_dir = Path(config.output.directory or Path(settings.OUTPUT_DIR) / config.experiment_id)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(
        config=config,
        coeffs=build_model(config.model.name, config.model.overrides),
        out_dir=out_dir,
        workers=workers,
        batch_size=config.engine.batch_size,
    )
    logger.info(f"Running {config.experiment_id} ({config.regime}, stage {stage}) with {workers} workers into {out_dir}")

    if config.regime == "lemma_suite":
        _lemma_suite(ctx, stage)
    elif stage == "interface":
        _increment_stage(ctx)
        _exit_stage(ctx)
    else:
        _limit_pipeline(ctx, stage)
    if config.output.write_paths:
        ctx.attempt("write_paths", lambda: _write_sample_paths(ctx))

    _write_outputs(ctx)
    report = ExperimentReport(
        config=config,
        rows=ctx.rows,
        verdict=ExperimentReport.overall_verdict(ctx.rows),
        provenance=Provenance(
            code_version=__version__,
            wall_time=time.perf_counter() - started,
            workers=workers,
            python_version=platform.python_version(),
            numpy_version=np.__version__,
        ),
        artifacts=ctx.artifacts,
    )
    if plots:
        try:
            for name, path in emit_plots(report, out_dir).items():
                report.artifacts[f"plot:{name}"] = str(path.relative_to(out_dir))
        except PlotDependencyError as e:
            logger.warning(f"Skipping plot scripts: {e}")
    write_report(report, out_dir / "report.json")
    logger.info(f"{config.experiment_id}: verdict {report.verdict} over {len(report.rows)} rows")
    return report


def report_summary(report: ExperimentReport) -> Dict[str, int]:
    counts = {"pass": 0, "fail": 0, "inconclusive": 0}
    for row in report.rows:
        counts[row.verdict] += 1
    return counts


def exit_status(report: ExperimentReport) -> int:
    """0 when the report passes, 1 otherwise"""
    return 0 if report.verdict == "pass" else 1


def write_report(report: ExperimentReport, target: Path) -> Path:
    """report.json; non-finite floats are kept as NaN/Infinity tokens"""
    target = Path(target)
    target.write_text(json.dumps(report.model_dump(), indent=2) + "\n", encoding="utf-8")
    return target


def load_report(source: Path) -> ExperimentReport:
    """
    Read a report.json written by run_experiment

    Raises:
        ConfigurationError: unreadable file or a document that is not a report
    """
    try:
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ConfigurationError(f"cannot read report {source}: {e}")
    try:
        return ExperimentReport.model_validate(data)
    except ValidationError as e:
        errors = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigurationError(f"{source} is not an experiment report", errors)
