"""
Symmetric local time at zero of discretized paths

Two estimators: the occupation band (quadratic variation spent near zero
divided by the band width) and the discrete Tanaka formula. Both accept a
single path of shape (n+1,) or a stack of shape (B, n+1).
"""

import logging
from typing import Optional

import numpy as np

from app.config.settings import settings
from app.core.exceptions import BandResolutionError
from app.core.models import LocalTimeProfile, TimeGrid

# Configure logging
logger = logging.getLogger(__name__)

CLAMP_WARNING_LEVEL = 1e-9


def default_band(dt: float, factor: Optional[float] = None) -> float:
    """band = factor * sqrt(dt)"""
    factor = settings.BAND_FACTOR if factor is None else factor
    return factor * float(np.sqrt(dt))


def local_time_band(
    x_path: np.ndarray,
    qv_increments: np.ndarray,
    band: float,
    dt: Optional[float] = None,
    grid: Optional[TimeGrid] = None,
) -> LocalTimeProfile:
    """
    L(t) = (1 / (2 band)) * sum over steps s < t with |x(s)| < band of qv(s).

    Args:
        x_path: path values, shape (..., n+1)
        qv_increments: nonnegative quadratic-variation increments, shape (..., n)
        band: half-width of the band around zero
        dt: time step; its square root is the resolution floor for the band.
            Without it the floor is the root-mean-square of qv_increments.

    Raises:
        BandResolutionError: band finer than the path resolution
    """
    x_path = np.asarray(x_path, dtype=float)
    qv = np.asarray(qv_increments, dtype=float)
    if qv.shape != x_path.shape[:-1] + (x_path.shape[-1] - 1,):
        raise ValueError(f"qv increments of shape {qv.shape} do not match path of shape {x_path.shape}")
    if np.any(qv < 0):
        raise ValueError("quadratic-variation increments must be nonnegative")
    if grid is not None and dt is None:
        dt = grid.dt
    resolution = float(np.sqrt(dt)) if dt is not None else float(np.sqrt(np.mean(qv))) if qv.size else 0.0
    if band <= 0 or band < resolution * (1 - 1e-12):
        raise BandResolutionError(f"band {band:.3e} is below the path resolution {resolution:.3e}")

    inside = np.abs(x_path[..., :-1]) < band
    L = np.zeros(x_path.shape)
    L[..., 1:] = np.cumsum(np.where(inside, qv, 0.0), axis=-1) / (2.0 * band)
    return LocalTimeProfile(L=L, method="band", band_width=band, grid=grid)


def local_time_tanaka(
    x_path: np.ndarray,
    x_increments: Optional[np.ndarray] = None,
    grid: Optional[TimeGrid] = None,
) -> LocalTimeProfile:
    """
    L(t) = |x(t)| - |x(0)| - sum over s < t of sgn(x(s)) dx(s), with sgn(0) = 0.

    Dips below the running maximum are clamped away; the largest clamp is
    kept on the profile as a diagnostic.
    """
    x_path = np.asarray(x_path, dtype=float)
    increments = np.diff(x_path, axis=-1) if x_increments is None else np.asarray(x_increments, dtype=float)
    if increments.shape != x_path.shape[:-1] + (x_path.shape[-1] - 1,):
        raise ValueError(f"increments of shape {increments.shape} do not match path of shape {x_path.shape}")

    raw = np.zeros(x_path.shape)
    raw[..., 1:] = -np.cumsum(np.sign(x_path[..., :-1]) * increments, axis=-1)
    raw += np.abs(x_path) - np.abs(x_path[..., :1])
    raw[..., 0] = 0.0
    L = np.maximum.accumulate(np.maximum(raw, 0.0), axis=-1)
    clamp = float(np.max(L - raw)) if L.size else 0.0
    if clamp > CLAMP_WARNING_LEVEL:
        logger.warning(f"Tanaka estimate needed a monotone clamp of {clamp:.3e}")
    return LocalTimeProfile(L=L, method="tanaka", grid=grid, clamp_magnitude=clamp)


def flat_off_zero_violations(x_path: np.ndarray, profile: LocalTimeProfile, band: float) -> int:
    """Number of steps starting outside the band on which L moved"""
    x_path = np.asarray(x_path, dtype=float)
    outside = np.abs(x_path[..., :-1]) >= band
    moved = np.diff(profile.L, axis=-1) != 0.0
    return int(np.count_nonzero(outside & moved))
