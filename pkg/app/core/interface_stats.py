"""
Boundary statistics of excursions from the interface

Exit-side probabilities, normalized slow increments at the exit time,
exit-time moments and occupation times of bands around x = 0.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, special, stats

from app.config.settings import settings
from app.core.coefficients import (
    CoefficientSet,
    interface_diffusion_alpha,
    interface_drift_beta,
)
from app.core.ensembles import run_batches
from app.core.exceptions import ConfigurationError, ExcessiveCensoring
from app.core.models import ConvergenceTable, ExcursionStats, PathBatch, PathBundle, Regime
from app.core.rng import PathStream, Substream
from app.core.sde_engine import euler_maruyama_step, step_limit

# Configure logging
logger = logging.getLogger(__name__)

BLOCK_STEPS = 256


@dataclass
class _ExcursionOutcome:
    exit_step: np.ndarray    # (B,), -1 when censored
    x_exit: np.ndarray       # (B,)
    increment: np.ndarray    # (B, d), already scaled by eps^-exponent


def excursion_step(eps: float, delta: float, regime: Regime = "standard", step_safety: Optional[float] = None) -> float:
    """dt resolving both the fast scale and the exit boundary"""
    return min(step_limit(eps, regime, step_safety), (settings.EXCURSION_RESOLUTION * delta) ** 2)


def default_scale_exponent(coeffs: CoefficientSet, regime: Regime) -> float:
    """0 for the long-time scaling, 1 when sigma vanishes (drift deviations), 1/2 otherwise"""
    if regime == "longtime":
        return 0.0
    probe_x = np.linspace(-3.0, 3.0, 61)
    probe_y = np.zeros((probe_x.size, coeffs.d))
    return 1.0 if coeffs.diffusion_vanishes(probe_x, probe_y) else 0.5


def _scales(eps: float, regime: Regime) -> Tuple[float, float, float]:
    if regime == "longtime":
        return eps ** -2, eps ** -2, 1.0 / eps
    return 1.0 / eps, 1.0, 1.0


def _run_excursions(
    coeffs: CoefficientSet,
    regime: Regime,
    eps: float,
    start_x: float,
    start_y: np.ndarray,
    delta: float,
    dt: float,
    cap: int,
    seed: int,
    scale: float,
    indices: np.ndarray,
) -> _ExcursionOutcome:
    """Step every path until |X| >= delta or the cap; Y is compared with the unperturbed flow from start_y"""
    batch, d, k = len(indices), coeffs.d, coeffs.k
    fast, drift, noise = _scales(eps, regime)
    streams = [PathStream(seed, int(i), Substream.EXCURSION) for i in indices]
    exit_step = np.full(batch, -1, dtype=np.int64)
    x_exit = np.zeros(batch)
    increment = np.zeros((batch, d))

    x = np.full(batch, float(start_x))
    y = np.tile(start_y, (batch, 1))
    y_flow = y.copy()
    active = np.arange(batch)
    step = 0
    root_dt = math.sqrt(dt)
    while active.size and step < cap:
        m = min(BLOCK_STEPS, cap - step)
        dw = root_dt * np.stack([streams[r].normals((m, k)) for r in active])
        xa, ya, fa = x[active], y[active], y_flow[active]
        alive = np.ones(active.size, dtype=bool)
        for j in range(m):
            x_next, y_next = euler_maruyama_step(coeffs, xa, ya, dw[:, j], dt, fast, drift, noise)
            f_next = fa + coeffs.b1(fa) * dt
            xa = np.where(alive, x_next, xa)
            ya = np.where(alive[:, None], y_next, ya)
            fa = np.where(alive[:, None], f_next, fa)
            hit = alive & (np.abs(xa) >= delta)
            if np.any(hit):
                rows = active[hit]
                exit_step[rows] = step + j + 1
                x_exit[rows] = xa[hit]
                increment[rows] = scale * (ya[hit] - fa[hit])
                alive &= ~hit
                if not np.any(alive):
                    break
        x[active], y[active], y_flow[active] = xa, ya, fa
        active = active[alive]
        step += m
    return _ExcursionOutcome(exit_step=exit_step, x_exit=x_exit, increment=increment)


def excursion_exit_stats(
    coeffs: CoefficientSet,
    eps: float,
    start: Tuple[float, Sequence[float]],
    delta: float,
    ell: float,
    n_paths: int,
    seed: int,
    regime: Regime = "standard",
    scale_exponent: Optional[float] = None,
    step_safety: Optional[float] = None,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> ExcursionStats:
    """
    Exit statistics of excursions started at (x, y) with |x| <= ell < delta.

    Args:
        start: (x, y) start point
        scale_exponent: slow increments are multiplied by eps^-scale_exponent

    Raises:
        ExcessiveCensoring: more than the allowed fraction of paths hit the step cap
    """
    start_x, start_y = float(start[0]), np.asarray(start[1], dtype=float).reshape(coeffs.d)
    if not 0 < ell < delta:
        raise ValueError(f"need 0 < ell < delta, got ell={ell}, delta={delta}")
    if abs(start_x) > ell * (1 + 1e-12):
        raise ValueError(f"start x={start_x} lies outside |x| <= ell={ell}")
    if n_paths < 2:
        raise ValueError("at least two paths are needed for standard errors")
    exponent = default_scale_exponent(coeffs, regime) if scale_exponent is None else float(scale_exponent)
    dt = excursion_step(eps, delta, regime, step_safety)
    cap = int(math.ceil(settings.CENSORING_CAP_FACTOR * delta ** 2 / dt))
    scale = eps ** (-exponent)

    def job(indices: np.ndarray) -> _ExcursionOutcome:
        return _run_excursions(coeffs, regime, eps, start_x, start_y, delta, dt, cap, seed, scale, indices)

    parts = run_batches(job, n_paths, workers, batch_size)
    exit_step = np.concatenate([p.exit_step for p in parts])
    x_exit = np.concatenate([p.x_exit for p in parts])
    increment = np.concatenate([p.increment for p in parts])

    done = exit_step >= 0
    n_censored = int(np.count_nonzero(~done))
    if n_censored > settings.MAX_CENSORED_FRACTION * n_paths:
        raise ExcessiveCensoring(f"{n_censored} of {n_paths} excursions hit the cap of {cap} steps (dt={dt:.3e})")
    if n_censored:
        logger.warning(f"{n_censored} of {n_paths} excursions censored at {cap} steps")

    n = int(done.sum())
    up = (x_exit[done] >= delta).astype(float)
    p_plus = float(up.mean())
    theta = exit_step[done] * dt
    inc = increment[done]
    outer = np.einsum("ni,nj->nij", inc, inc)
    cubes = np.linalg.norm(inc, axis=1) ** 3
    return ExcursionStats(
        n_paths=n,
        delta=delta,
        ell=ell,
        eps=eps,
        start_x=start_x,
        p_plus_hat=p_plus,
        p_minus_hat=1.0 - p_plus,
        p_stderr=math.sqrt(max(p_plus * (1 - p_plus), 1e-300) / n),
        mean_dy_over_delta=inc.mean(axis=0) / delta,
        mean_dy_over_delta_stderr=inc.std(axis=0, ddof=1) / math.sqrt(n) / delta,
        mean_dydy_over_delta=outer.mean(axis=0) / delta,
        mean_dydy_over_delta_stderr=outer.std(axis=0, ddof=1) / math.sqrt(n) / delta,
        theta_mean=float(theta.mean()),
        theta_second=float(np.mean(theta ** 2)),
        third_moment_over_delta=float(cubes.mean() / delta),
        n_censored=n_censored,
        scale_exponent=exponent,
        dt=dt,
        third_moment_stderr=float(cubes.std(ddof=1) / math.sqrt(n) / delta),
    )


def default_schedules(
    regime: Regime,
    eps_schedule: Sequence[float],
    gamma: float = 0.2,
) -> Tuple[List[float], List[float]]:
    """
    delta(eps) = eps^(1 - 2 gamma), ell(eps) = eps^(1 - gamma) (deviation scaling) or
    delta(eps) = eps^(2 - 2 gamma), ell(eps) = eps^(2 - gamma) (long-time scaling).
    """
    if not 0 < gamma < 0.5:
        raise ConfigurationError(f"gamma must lie in (0, 1/2), got {gamma}")
    power = 2.0 if regime == "longtime" else 1.0
    deltas = [eps ** (power - 2 * gamma) for eps in eps_schedule]
    ells = [eps ** (power - gamma) for eps in eps_schedule]
    return deltas, ells


def check_schedule(deltas: Sequence[float], ells: Sequence[float]) -> None:
    """ell < delta everywhere and delta / ell strictly increasing along the schedule"""
    if len(deltas) != len(ells) or not deltas:
        raise ConfigurationError("delta and ell schedules must be nonempty and of equal length")
    ratios = [d / l for d, l in zip(deltas, ells)]
    if any(r <= 1 for r in ratios):
        raise ConfigurationError("every schedule point needs ell < delta")
    if any(b <= a for a, b in zip(ratios, ratios[1:])):
        raise ConfigurationError(f"delta/ell must increase along the schedule, got {np.round(ratios, 4).tolist()}")


def increment_targets(
    coeffs: CoefficientSet,
    regime: Regime,
    y: Sequence[float],
    scale_exponent: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Limits of (1/delta) E[dY] and (1/delta) E[dY dY^T] under the given increment scaling"""
    beta, _ = interface_drift_beta(coeffs, y)
    alpha, _ = interface_diffusion_alpha(coeffs, y)
    d = coeffs.d
    if regime == "longtime":
        return beta, alpha
    target_beta = beta if scale_exponent == 1.0 else np.zeros(d)
    target_alpha = alpha if scale_exponent == 0.5 else np.zeros((d, d))
    return target_beta, target_alpha


def boundary_increment_limits(
    coeffs: CoefficientSet,
    regime: Regime,
    y: Sequence[float],
    eps_schedule: Sequence[float],
    delta_schedule: Optional[Sequence[float]] = None,
    ell_schedule: Optional[Sequence[float]] = None,
    n_paths: int = 10000,
    seed: int = 0,
    gamma: float = 0.2,
    scale_exponent: Optional[float] = None,
    start_fractions: Sequence[float] = (0.0,),
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> ConvergenceTable:
    """
    Convergence table of normalized boundary increments against beta(y), alpha(y).

    start_fractions place the excursion start at fraction * ell.
    """
    if delta_schedule is None or ell_schedule is None:
        deltas, ells = default_schedules(regime, eps_schedule, gamma)
        deltas = list(delta_schedule or deltas)
        ells = list(ell_schedule or ells)
    else:
        deltas, ells = list(delta_schedule), list(ell_schedule)
    if len(deltas) != len(eps_schedule):
        raise ConfigurationError("eps and delta schedules differ in length")
    check_schedule(deltas, ells)
    exponent = default_scale_exponent(coeffs, regime) if scale_exponent is None else float(scale_exponent)
    target_beta, target_alpha = increment_targets(coeffs, regime, y, exponent)

    table = ConvergenceTable(
        title="boundary increments: (1/delta) E[Y(theta) - y] -> beta(y), (1/delta) E[dY dY^T] -> alpha(y)"
    )
    errors = []
    for eps, delta, ell in zip(eps_schedule, deltas, ells):
        for fraction in start_fractions:
            result = excursion_exit_stats(
                coeffs, eps, (fraction * ell, y), delta, ell, n_paths, seed,
                regime=regime, scale_exponent=exponent, workers=workers, batch_size=batch_size,
            )
            row = result.as_row()
            row["regime"] = regime
            for i in range(coeffs.d):
                row[f"target_beta_{i + 1}"] = float(target_beta[i])
                row[f"target_alpha_{i + 1}{i + 1}"] = float(target_alpha[i, i])
            table.rows.append(row)
            if fraction == start_fractions[0]:
                errors.append(
                    abs(result.mean_dy_over_delta[0] - target_beta[0])
                    + abs(result.mean_dydy_over_delta[0, 0] - target_alpha[0, 0])
                )
            logger.info(
                f"eps={eps:g} delta={delta:.3e} start={fraction:+.1f} ell: "
                f"dy/delta={result.mean_dy_over_delta[0]:.5g}, dydy/delta={result.mean_dydy_over_delta[0, 0]:.5g}"
            )
    table.passed = errors[-1] <= errors[0] + 1e-12
    for row in table.rows:
        row["approaching"] = table.passed
    return table


def _x_values(bundle: Union[PathBundle, PathBatch, np.ndarray]) -> np.ndarray:
    return np.asarray(bundle.x if hasattr(bundle, "x") else bundle, dtype=float)


def occupation_time(bundle: Union[PathBundle, PathBatch, np.ndarray], delta: float) -> Union[float, np.ndarray]:
    """Fraction of grid time (left-point rule) with |x| < delta; one value per path"""
    x = _x_values(bundle)
    fraction = np.mean(np.abs(x[..., :-1]) < delta, axis=-1)
    return float(fraction) if np.ndim(fraction) == 0 else fraction


def discounted_occupation(
    bundle: Union[PathBundle, PathBatch],
    delta: float,
    lam: float,
) -> Union[float, np.ndarray]:
    """int_0^T exp(-lam t) 1{|X(t)| < delta} dt by the left-point rule"""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    x = _x_values(bundle)
    t = bundle.grid.times()[:-1]
    weights = np.exp(-lam * t) * bundle.grid.dt
    value = np.sum((np.abs(x[..., :-1]) < delta) * weights, axis=-1)
    return float(value) if np.ndim(value) == 0 else value


def brownian_occupation_oracle(delta: float, T: float = 1.0, a: float = 1.0) -> float:
    """(1/T) int_0^T P(|sqrt(a) W(t)| < delta) dt"""
    value, _ = integrate.quad(lambda t: special.erf(delta / math.sqrt(2 * a * t)) if t > 0 else 1.0, 0.0, T, limit=200)
    return value / T


def occupation_fractions(x_paths: np.ndarray, deltas: Sequence[float]) -> List[float]:
    """Mean occupation fraction of the band |x| < delta for every delta"""
    return [float(np.mean(occupation_time(x_paths, delta))) for delta in deltas]


def occupation_fit(deltas: Sequence[float], fractions: Sequence[float]) -> Dict[str, object]:
    """Least-squares line of occupation fractions against delta"""
    fit = stats.linregress(np.asarray(deltas, dtype=float), np.asarray(fractions, dtype=float))
    return {
        "deltas": [float(delta) for delta in deltas],
        "fractions": [float(value) for value in fractions],
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "r2": float(fit.rvalue ** 2),
    }


def occupation_scaling(x_paths: np.ndarray, deltas: Sequence[float]) -> Dict[str, object]:
    """Line fit of the mean occupation fraction against delta"""
    return occupation_fit(deltas, occupation_fractions(x_paths, deltas))


def exit_eigenfunction(lam: float, a_plus: float, a_minus: float, x: np.ndarray) -> np.ndarray:
    """u(x) = exp(-sqrt(2 lam / a+) x) for x >= 0 and exp(sqrt(2 lam / a-) x) for x < 0"""
    x = np.asarray(x, dtype=float)
    return np.where(
        x >= 0,
        np.exp(-math.sqrt(2 * lam / a_plus) * x),
        np.exp(math.sqrt(2 * lam / a_minus) * x),
    )


def eigenfunction_residual(lam: float, a_plus: float, a_minus: float, x: np.ndarray, h: float = 1e-4) -> float:
    """max |(a/2) u'' - lam u| away from zero, by central differences"""
    x = np.asarray(x, dtype=float)
    x = x[np.abs(x) > 2 * h]
    u = exit_eigenfunction(lam, a_plus, a_minus, x)
    second = (exit_eigenfunction(lam, a_plus, a_minus, x + h) - 2 * u + exit_eigenfunction(lam, a_plus, a_minus, x - h)) / h ** 2
    a = np.where(x >= 0, a_plus, a_minus)
    return float(np.max(np.abs(0.5 * a * second - lam * u)))
