"""
Time-stepping for the fast-slow system

Euler-Maruyama for the prelimit pair (X, Y) in the standard and the
long-time scaling, classical RK4 for the unperturbed flow, and extraction
of normalized deviation processes.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from app.config.settings import settings
from app.core.coefficients import CoefficientSet
from app.core.exceptions import (
    AssumptionViolation,
    DivergenceError,
    GridMismatchError,
    StepSizeError,
)
from app.core.models import DeviationPath, PathBatch, PathBundle, Regime, TimeGrid
from app.core.rng import Substream, batch_normals

# Configure logging
logger = logging.getLogger(__name__)

DEVIATION_EXPONENTS = (0.5, 1.0)


def step_limit(eps: float, regime: Regime = "standard", step_safety: Optional[float] = None) -> float:
    """Largest dt that resolves the fast argument: safety * eps^2 (standard) or safety * eps^4 (longtime)"""
    if eps <= 0:
        raise ValueError("eps must be positive")
    step_safety = settings.STEP_SAFETY if step_safety is None else step_safety
    power = 4 if regime == "longtime" else 2
    return step_safety * eps ** power


def grid_for(horizon: float, eps: float, regime: Regime = "standard", step_safety: Optional[float] = None) -> TimeGrid:
    """Coarsest uniform grid on [0, horizon] that satisfies the step rule"""
    return TimeGrid.for_horizon(horizon, step_limit(eps, regime, step_safety))


def check_step(grid: TimeGrid, eps: float, regime: Regime, step_safety: Optional[float] = None) -> None:
    limit = step_limit(eps, regime, step_safety)
    if grid.dt > limit * (1 + 1e-9):
        raise StepSizeError(
            f"dt={grid.dt:.3e} exceeds the {regime} step rule {limit:.3e} at eps={eps}"
        )


def solve_unperturbed(
    coeffs: CoefficientSet,
    y0: Sequence[float],
    grid: TimeGrid,
    bound: Optional[float] = None,
) -> np.ndarray:
    """
    Integrate dy/dt = b1(y) with classical RK4 on the grid.

    Returns:
        array of shape (n_steps + 1, d)

    Raises:
        DivergenceError: |y| left the bound
    """
    bound = settings.DIVERGENCE_BOUND if bound is None else bound
    y = np.asarray(y0, dtype=float).reshape(1, coeffs.d)
    h = grid.dt
    path = np.empty((grid.n_steps + 1, coeffs.d))
    path[0] = y[0]
    for i in range(grid.n_steps):
        k1 = coeffs.b1(y)
        k2 = coeffs.b1(y + 0.5 * h * k1)
        k3 = coeffs.b1(y + 0.5 * h * k2)
        k4 = coeffs.b1(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        size = float(np.linalg.norm(y))
        if not np.isfinite(size) or size > bound:
            raise DivergenceError(f"|y| = {size:.3e} exceeded {bound:.1e} at t = {grid.t0 + (i + 1) * h:.6g}")
        path[i + 1] = y[0]
    return path


def euler_maruyama_step(
    coeffs: CoefficientSet,
    x: np.ndarray,
    y: np.ndarray,
    dw: np.ndarray,
    dt: float,
    fast_scale: float,
    drift_scale: float = 1.0,
    noise_scale: float = 1.0,
) -> Tuple[np.ndarray, ...]:
    """
    One Euler-Maruyama step for a batch; the same dw drives X and Y.

    Args:
        x: (B,) interface coordinate
        y: (B, d) slow coordinates
        dw: (B, k) Wiener increments of this step
        fast_scale: multiplier of x inside the coefficients (1/eps or 1/eps^2)
        drift_scale, noise_scale: multipliers of b2 and sigma
    """
    u = x * fast_scale
    x_next = x + np.einsum("bk,bk->b", coeffs.phi(u, y), dw)
    drift = coeffs.b1(y) + drift_scale * coeffs.b2(u, y)
    y_next = y + drift * dt + noise_scale * np.einsum("bdk,bk->bd", coeffs.sigma(u, y), dw)
    return x_next, y_next


def _integrate(
    coeffs: CoefficientSet,
    x_start: float,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_indices: np.ndarray,
    fast_scale: float,
    drift_scale: float,
    noise_scale: float,
) -> Tuple[np.ndarray, ...]:
    n = grid.n_steps
    batch = len(path_indices)
    dw = np.sqrt(grid.dt) * batch_normals(seed, path_indices, Substream.DRIVER, (n, coeffs.k))
    x = np.empty((batch, n + 1))
    y = np.empty((batch, n + 1, coeffs.d))
    x[:, 0] = x_start
    y[:, 0] = np.asarray(y0, dtype=float).reshape(coeffs.d)
    for i in range(n):
        x[:, i + 1], y[:, i + 1] = euler_maruyama_step(
            coeffs, x[:, i], y[:, i], dw[:, i], grid.dt, fast_scale, drift_scale, noise_scale
        )
    return x, y, dw


def simulate_full_batch(
    coeffs: CoefficientSet,
    eps: float,
    x0: float,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_indices: Sequence[int],
    step_safety: Optional[float] = None,
) -> PathBatch:
    """Prelimit paths dX = phi(X/eps, Y) dW, dY = (b1 + b2) dt + sigma dW"""
    check_step(grid, eps, "standard", step_safety)
    indices = np.asarray(path_indices, dtype=np.int64)
    x, y, dw = _integrate(coeffs, x0, y0, grid, seed, indices, 1.0 / eps, 1.0, 1.0)
    return PathBatch(grid=grid, x=x, y_slow=y, dw=dw, eps=eps, seed=seed, regime="standard", path_indices=indices)


def simulate_full(
    coeffs: CoefficientSet,
    eps: float,
    x0: float,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_index: int = 0,
    step_safety: Optional[float] = None,
) -> PathBundle:
    return simulate_full_batch(coeffs, eps, x0, y0, grid, seed, [path_index], step_safety).bundle(0)


def _require_no_b1(coeffs: CoefficientSet, y0: Sequence[float]) -> None:
    probes = np.asarray(y0, dtype=float).reshape(1, coeffs.d) + np.linspace(-3.0, 3.0, 7)[:, None]
    if not coeffs.drift_vanishes(probes):
        raise AssumptionViolation(f"long-time scaling requires b1 = 0, model '{coeffs.name}' has a nonzero b1")


def simulate_longtime_batch(
    coeffs: CoefficientSet,
    eps: float,
    x0: float,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_indices: Sequence[int],
    step_safety: Optional[float] = None,
) -> PathBatch:
    """Long-time paths dX = phi(X/eps^2, Y) dW, dY = eps^-2 b2 dt + eps^-1 sigma dW, X(0) = eps x0"""
    _require_no_b1(coeffs, y0)
    check_step(grid, eps, "longtime", step_safety)
    indices = np.asarray(path_indices, dtype=np.int64)
    x, y, dw = _integrate(coeffs, eps * x0, y0, grid, seed, indices, eps ** -2, eps ** -2, 1.0 / eps)
    return PathBatch(grid=grid, x=x, y_slow=y, dw=dw, eps=eps, seed=seed, regime="longtime", path_indices=indices)


def simulate_longtime(
    coeffs: CoefficientSet,
    eps: float,
    x0: float,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_index: int = 0,
    step_safety: Optional[float] = None,
) -> PathBundle:
    return simulate_longtime_batch(coeffs, eps, x0, y0, grid, seed, [path_index], step_safety).bundle(0)


def _check_reference(grid: TimeGrid, y_ref: np.ndarray, ref_grid: Optional[TimeGrid]) -> np.ndarray:
    if ref_grid is not None and not grid.matches(ref_grid):
        raise GridMismatchError("path and reference trajectory live on different grids")
    y_ref = np.asarray(y_ref, dtype=float)
    if y_ref.shape[0] != grid.n_steps + 1:
        raise GridMismatchError(f"reference has {y_ref.shape[0]} nodes, grid has {grid.n_steps + 1}")
    return y_ref


def _check_exponent(exponent: float) -> float:
    if float(exponent) not in DEVIATION_EXPONENTS:
        raise ValueError(f"deviation exponent must be one of {DEVIATION_EXPONENTS}, got {exponent}")
    return float(exponent)


def deviation(
    bundle: PathBundle,
    y_ref: np.ndarray,
    exponent: float,
    ref_grid: Optional[TimeGrid] = None,
) -> DeviationPath:
    """zeta(t) = eps^-exponent (Y(t) - y_ref(t))"""
    exponent = _check_exponent(exponent)
    y_ref = _check_reference(bundle.grid, y_ref, ref_grid)
    zeta = bundle.eps ** (-exponent) * (bundle.y_slow - y_ref)
    return DeviationPath(grid=bundle.grid, zeta=zeta, scaling_exponent=exponent)


def deviation_batch(
    batch: PathBatch,
    y_ref: np.ndarray,
    exponent: float,
    ref_grid: Optional[TimeGrid] = None,
) -> DeviationPath:
    """Deviation of every path of a batch; zeta has shape (B, n+1, d)"""
    exponent = _check_exponent(exponent)
    y_ref = _check_reference(batch.grid, y_ref, ref_grid)
    zeta = batch.eps ** (-exponent) * (batch.y_slow - y_ref[None])
    return DeviationPath(grid=batch.grid, zeta=zeta, scaling_exponent=exponent)


def quadratic_variation(x: np.ndarray) -> np.ndarray:
    """Realized quadratic variation sum of (dx)^2 along the last axis"""
    return np.sum(np.diff(x, axis=-1) ** 2, axis=-1)
