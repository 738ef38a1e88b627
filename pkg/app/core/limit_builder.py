"""
Sample paths of the limit processes

The interface coordinate is a Brownian motion run on the inverse of the
additive clock t(s) = int ds / a+-; the singular martingale V is a Brownian
motion run on the local-time clock; deviation limits follow the
variation-of-parameters recursion driven by V or by L.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from app.core.coefficients import AveragedInterfaceData, matrix_sqrt_psd
from app.core.exceptions import TimeChangeError
from app.core.local_time import default_band, local_time_band
from app.core.models import LimitPath, LocalTimeProfile, TimeGrid
from app.core.rng import Substream, batch_normals

# Configure logging
logger = logging.getLogger(__name__)

MatrixField = Callable[[np.ndarray], np.ndarray]


@dataclass
class Clock:
    """Auxiliary clock s_k = k ds and the real times t(s_k) of every path"""
    ds: float
    s: np.ndarray      # (n_aux+1,)
    t: np.ndarray      # (B, n_aux+1)

    def floor_index(self, grid: TimeGrid) -> np.ndarray:
        """For each path and grid time, the last aux node with t(s_k) <= time"""
        times = grid.times() + 1e-9 * grid.dt
        out = np.empty((self.t.shape[0], times.size), dtype=np.int64)
        for row in range(self.t.shape[0]):
            out[row] = np.searchsorted(self.t[row], times, side="right") - 1
        return np.clip(out, 0, self.s.size - 1)

    def invert(self, grid: TimeGrid, values: np.ndarray) -> np.ndarray:
        """Values indexed by s, read off at the grid times by linear interpolation"""
        times = grid.times()
        out = np.empty((self.t.shape[0], times.size))
        for row in range(self.t.shape[0]):
            out[row] = np.interp(times, self.t[row], values[row])
        return out


def _paths(path_indices: Optional[Sequence[int]]) -> np.ndarray:
    return np.asarray([0] if path_indices is None else path_indices, dtype=np.int64)


def _aux_size(a_low: float, a_high: float, grid: TimeGrid) -> Tuple[float, int]:
    """ds = a_low dt keeps real-time steps below dt; n_aux covers s(T) <= a_high T"""
    ds = a_low * grid.dt
    n_aux = max(1, int(math.ceil(a_high * grid.horizon / ds - 1e-9)))
    return ds, n_aux


def _brownian(seed: int, path_indices: np.ndarray, substream: int, n: int, ds: float) -> np.ndarray:
    steps = math.sqrt(ds) * batch_normals(seed, path_indices, substream, (n,))
    w = np.zeros((len(path_indices), n + 1))
    w[:, 1:] = np.cumsum(steps, axis=1)
    return w


def _check_reach(clock: Clock, grid: TimeGrid) -> None:
    reached = float(np.min(clock.t[:, -1]))
    if reached < grid.t0 + grid.horizon * (1 - 1e-9):
        raise TimeChangeError(f"clock reached t = {reached:.6g} before the horizon {grid.horizon:.6g}")


def time_changed_interface(
    avg: AveragedInterfaceData,
    y_ref: np.ndarray,
    grid: TimeGrid,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
) -> Tuple[np.ndarray, Clock]:
    """
    X0 = W(s(t)) with t(s) = sum over aux steps of ds / a+-(W, y_ref(t)).

    a+- is read at the node of y_ref at or below the current real time, and
    W = 0 uses the + branch.

    Returns:
        (x0 of shape (B, n+1), the clock)
    """
    indices = _paths(path_indices)
    y_ref = np.asarray(y_ref, dtype=float)
    a_plus = avg.a_plus(y_ref)
    a_minus = avg.a_minus(y_ref)
    a_low = float(min(a_plus.min(), a_minus.min()))
    a_high = float(max(a_plus.max(), a_minus.max()))
    ds, n_aux = _aux_size(a_low, a_high, grid)
    w = _brownian(seed, indices, Substream.INTERFACE, n_aux, ds)

    t = np.zeros_like(w)
    t[:, 0] = grid.t0
    if np.ptp(a_plus) == 0.0 and np.ptp(a_minus) == 0.0:
        rate = np.where(w[:, :-1] >= 0, 1.0 / a_plus[0], 1.0 / a_minus[0])
        t[:, 1:] = grid.t0 + np.cumsum(ds * rate, axis=1)
    else:
        for k in range(n_aux):
            node = np.minimum(((t[:, k] - grid.t0) / grid.dt).astype(np.int64), grid.n_steps)
            a = np.where(w[:, k] >= 0, a_plus[node], a_minus[node])
            t[:, k + 1] = t[:, k] + ds / a
    clock = Clock(ds=ds, s=ds * np.arange(n_aux + 1), t=t)
    _check_reach(clock, grid)
    return clock.invert(grid, w), clock


def build_X0(
    avg: AveragedInterfaceData,
    y_ref: np.ndarray,
    grid: TimeGrid,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
    band: Optional[float] = None,
) -> Tuple[np.ndarray, LocalTimeProfile]:
    """
    Limit interface coordinate dX0 = sqrt(a+-(X0, y(t))) dW by time change.

    Args:
        avg: interface data
        y_ref: unperturbed trajectory on the grid, shape (n+1, d)
        path_indices: which paths of the master seed to build

    Returns:
        (x0 of shape (B, n+1), band local time of x0 with qv = (dx0)^2)
    """
    x0, _ = time_changed_interface(avg, y_ref, grid, seed, path_indices)
    band = default_band(grid.dt) if band is None else band
    profile = local_time_band(x0, np.diff(x0, axis=1) ** 2, band, dt=grid.dt, grid=grid)
    return x0, profile


def simulate_interface_em(
    avg: AveragedInterfaceData,
    y_ref: np.ndarray,
    grid: TimeGrid,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
    x_start: float = 0.0,
) -> np.ndarray:
    """Direct Euler-Maruyama of dX = sqrt(a+-(X, y(t))) dW, used as a cross-check"""
    indices = _paths(path_indices)
    y_ref = np.asarray(y_ref, dtype=float)
    root_plus = np.sqrt(avg.a_plus(y_ref))
    root_minus = np.sqrt(avg.a_minus(y_ref))
    dw = math.sqrt(grid.dt) * batch_normals(seed, indices, Substream.CROSSCHECK, (grid.n_steps,))
    x = np.empty((len(indices), grid.n_steps + 1))
    x[:, 0] = x_start
    for i in range(grid.n_steps):
        x[:, i + 1] = x[:, i] + np.where(x[:, i] >= 0, root_plus[i], root_minus[i]) * dw[:, i]
    return x


def _profile_array(L) -> np.ndarray:
    values = L.L if isinstance(L, LocalTimeProfile) else L
    return np.atleast_2d(np.asarray(values, dtype=float))


def build_V(
    L,
    d: int,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    V = W0(L): dV = sqrt(dL) xi on every step, exactly zero where L is flat.

    Returns:
        array of shape (B, n+1, d)
    """
    clock = _profile_array(L)
    indices = _paths(path_indices)
    if len(indices) != clock.shape[0]:
        raise ValueError(f"{len(indices)} path indices for {clock.shape[0]} local-time rows")
    dL = np.diff(clock, axis=1)
    if np.any(dL < 0):
        raise ValueError("local time must be nondecreasing")
    xi = batch_normals(seed, indices, Substream.SINGULAR, (dL.shape[1], d))
    V = np.zeros(clock.shape + (d,))
    V[:, 1:] = np.cumsum(np.sqrt(dL)[..., None] * xi, axis=1)
    return V


def _propagators(b1_jac: MatrixField, y_ref: np.ndarray, dt: float) -> np.ndarray:
    """expm(db1(y_i) dt) for every step, shape (n, d, d)"""
    J = np.asarray(b1_jac(y_ref[:-1]), dtype=float)
    if np.all(J == J[:1]):
        return np.broadcast_to(linalg.expm(J[0] * dt), J.shape)
    return linalg.expm(J * dt)


def _field(values: np.ndarray) -> np.ndarray:
    """Collapse a per-step field to one entry when it does not change"""
    return values[:1] if np.all(values == values[:1]) else values


def evolve_zeta_diffusive(
    b1_jac: MatrixField,
    y_ref: np.ndarray,
    alpha_of_y: MatrixField,
    V: np.ndarray,
    grid: TimeGrid,
    jitter: Optional[float] = None,
) -> np.ndarray:
    """
    zeta(t) = int_0^t exp(int_s^t db1(y(r)) dr) sqrt(alpha(y(s))) dV(s), zeta(0) = 0.

    Each step applies zeta <- expm(db1 dt) (zeta + sqrt(alpha) dV) with
    left-point coefficients.
    """
    y_ref = np.asarray(y_ref, dtype=float)
    V = np.asarray(V, dtype=float)
    single = V.ndim == 2
    if single:
        V = V[None]
    if V.shape[1] != grid.n_steps + 1 or y_ref.shape[0] != grid.n_steps + 1:
        raise ValueError("V and y_ref must have one entry per grid node")
    P = _propagators(b1_jac, y_ref, grid.dt)
    S = _field(matrix_sqrt_psd(alpha_of_y(y_ref[:-1]), jitter))
    dV = np.diff(V, axis=1)
    zeta = np.zeros_like(V)
    for i in range(grid.n_steps):
        kick = np.einsum("ij,bj->bi", S[min(i, S.shape[0] - 1)], dV[:, i])
        zeta[:, i + 1] = np.einsum("ij,bj->bi", P[i], zeta[:, i] + kick)
    return zeta[0] if single else zeta


def evolve_zeta_drift(
    b1_jac: MatrixField,
    y_ref: np.ndarray,
    beta_of_y: MatrixField,
    L,
    grid: TimeGrid,
) -> np.ndarray:
    """zeta <- expm(db1 dt) (zeta + beta(y(s)) dL), zeta(0) = 0; shape (B, n+1, d)"""
    y_ref = np.asarray(y_ref, dtype=float)
    clock = _profile_array(L)
    if np.any(np.diff(clock, axis=1) < 0):
        raise ValueError("local time must be nondecreasing")
    if clock.shape[1] != grid.n_steps + 1:
        raise ValueError("L must have one entry per grid node")
    P = _propagators(b1_jac, y_ref, grid.dt)
    beta = np.asarray(beta_of_y(y_ref[:-1]), dtype=float)
    dL = np.diff(clock, axis=1)
    zeta = np.zeros(clock.shape + (y_ref.shape[1],))
    for i in range(grid.n_steps):
        kick = dL[:, i, None] * beta[i][None, :]
        zeta[:, i + 1] = np.einsum("ij,bj->bi", P[i], zeta[:, i] + kick)
    return zeta


def build_deviation_limit(
    avg: AveragedInterfaceData,
    b1_jac: MatrixField,
    y_ref: np.ndarray,
    grid: TimeGrid,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
    mode: str = "diffusive",
    band: Optional[float] = None,
) -> LimitPath:
    """(X0, zeta0, L, V) for the diffusive (V-driven) or drift (L-driven) deviation limit"""
    indices = _paths(path_indices)
    d = np.asarray(y_ref).shape[1]
    x0, profile = build_X0(avg, y_ref, grid, seed, indices, band)
    if mode == "diffusive":
        V = build_V(profile, d, seed, indices)
        zeta = evolve_zeta_diffusive(b1_jac, y_ref, avg.alpha, V, grid)
    elif mode == "drift":
        V = np.zeros(x0.shape + (d,))
        zeta = evolve_zeta_drift(b1_jac, y_ref, avg.beta, profile, grid)
    else:
        raise ValueError(f"unknown deviation mode '{mode}'")
    return LimitPath(
        grid=grid, x0_path=x0, zeta_or_y=zeta, L=profile, V=V,
        seed=seed, path_indices=indices, step_min_abs_x=np.abs(x0[:, :-1]),
    )


def build_longtime_limit(
    avg: AveragedInterfaceData,
    y0: Sequence[float],
    grid: TimeGrid,
    seed: int,
    path_indices: Optional[Sequence[int]] = None,
    band: Optional[float] = None,
) -> LimitPath:
    """
    Long-time limit (X0bar, Y0bar) started at (0, y0).

    1. W1 on an auxiliary clock and its band local time L^{W1}.
    2. Y on the local-time clock: dY = beta(Y) dL + sqrt(alpha(Y)) dW2(L), V = W2(L).
    3. t(s) = sum ds / a+-(W1, Y), inverted onto the grid; X0bar is
       interpolated, Y, L and V are read at the last aux node before each time.
    """
    indices = _paths(path_indices)
    y_start = np.asarray(y0, dtype=float).reshape(avg.d)
    if avg.constant:
        probe = y_start[None]
        a_values = (float(avg.a_plus(probe)[0]), float(avg.a_minus(probe)[0]))
        a_low, a_high = min(a_values), max(a_values)
    else:
        a_low, a_high = avg.c1, avg.c2
    ds, n_aux = _aux_size(a_low, a_high, grid)
    band = default_band(grid.dt) if band is None else band
    aux_band = max(band, math.sqrt(ds))

    w1 = _brownian(seed, indices, Substream.INTERFACE, n_aux, ds)
    aux_profile = local_time_band(w1, np.diff(w1, axis=1) ** 2, aux_band, dt=ds)
    dL = np.diff(aux_profile.L, axis=1)

    batch, d = len(indices), avg.d
    xi = batch_normals(seed, indices, Substream.SINGULAR, (n_aux, d))
    y = np.empty((batch, n_aux + 1, d))
    V = np.zeros((batch, n_aux + 1, d))
    y[:, 0] = y_start
    if avg.constant:
        beta = avg.beta(probe)[0]
        root = matrix_sqrt_psd(avg.alpha(probe)[0])
        dV = np.sqrt(dL)[..., None] * xi
        V[:, 1:] = np.cumsum(dV, axis=1)
        y[:, 1:] = y_start + np.cumsum(dL[..., None] * beta + np.einsum("ij,bkj->bki", root, dV), axis=1)
    else:
        for k in range(n_aux):
            y[:, k + 1] = y[:, k]
            V[:, k + 1] = V[:, k]
            active = dL[:, k] > 0
            if not np.any(active):
                continue
            here = y[active, k]
            dV = np.sqrt(dL[active, k])[:, None] * xi[active, k]
            root = matrix_sqrt_psd(avg.alpha(here))
            y[active, k + 1] = here + dL[active, k, None] * avg.beta(here) + np.einsum("bij,bj->bi", root, dV)
            V[active, k + 1] = V[active, k] + dV

    if avg.constant:
        a = np.where(w1[:, :-1] >= 0, a_values[0], a_values[1])
    else:
        flat_y = y[:, :-1].reshape(-1, d)
        a = np.where(
            w1[:, :-1] >= 0,
            avg.a_plus(flat_y).reshape(batch, n_aux),
            avg.a_minus(flat_y).reshape(batch, n_aux),
        )
    t = np.full_like(w1, grid.t0)
    t[:, 1:] += np.cumsum(ds / a, axis=1)
    clock = Clock(ds=ds, s=ds * np.arange(n_aux + 1), t=t)
    _check_reach(clock, grid)

    x_bar = clock.invert(grid, w1)
    node = clock.floor_index(grid)
    rows = np.arange(batch)[:, None]
    L_out = aux_profile.L[rows, node]
    abs_w = np.abs(w1)
    step_min = np.empty((batch, grid.n_steps))
    for row in range(batch):
        # an empty aux range [node_i, node_i+1) reduces to the value at node_i
        step_min[row] = np.minimum.reduceat(abs_w[row], node[row])[:-1]
    logger.debug(f"Long-time limit: {batch} paths, {n_aux} aux steps of ds={ds:.3e}, band {aux_band:.3e}")
    return LimitPath(
        grid=grid,
        x0_path=x_bar,
        zeta_or_y=y[rows, node],
        L=LocalTimeProfile(L=L_out, method="band", band_width=aux_band, grid=grid),
        V=V[rows, node],
        seed=seed,
        path_indices=indices,
        step_min_abs_x=step_min,
    )


def time_change_round_trip(clock: Clock, grid: TimeGrid) -> float:
    """
    Largest |s(t(s)) - s| over aux nodes inside the horizon, in units of ds.

    s(t) is the inverse clock sampled on the grid and linearly interpolated.
    """
    times = grid.times()
    worst = 0.0
    for row in range(clock.t.shape[0]):
        s_of_t = np.interp(times, clock.t[row], clock.s)
        inside = clock.t[row] <= times[-1]
        back = np.interp(clock.t[row, inside], times, s_of_t)
        worst = max(worst, float(np.max(np.abs(back - clock.s[inside]))) / clock.ds)
    return worst


def cantor_support_violations(limit: LimitPath, band: Optional[float] = None) -> Dict[str, int]:
    """
    Count steps breaking the support properties of the singular components.

    v_without_local_time: dV != 0 on a step with dL = 0
    slow_off_band: the slow coordinate moved on a step whose path stayed at
        or beyond the band (meaningful for the long-time limit)
    """
    band = limit.L.band_width if band is None else band
    dL = np.diff(limit.L.L, axis=1)
    flat = dL == 0
    v_moves = np.any(np.diff(limit.V, axis=1) != 0, axis=-1)
    slow_moves = np.any(np.diff(limit.zeta_or_y, axis=1) != 0, axis=-1)
    closest = limit.step_min_abs_x if limit.step_min_abs_x is not None else np.abs(limit.x0_path[:, :-1])
    off_band = closest >= band
    return {
        "v_without_local_time": int(np.count_nonzero(v_moves & flat)),
        "slow_off_band": int(np.count_nonzero(slow_moves & off_band)),
        "steps": int(flat.size),
    }
