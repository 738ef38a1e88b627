"""
Ensemble generation

Paths are cut into fixed batches of path indices; a thread pool works
through the batches and results are gathered in batch order, so every
ensemble is the same for any worker count.
"""

import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional, Sequence, TypeVar

import numpy as np

from app.config.settings import settings
from app.core.coefficients import AveragedInterfaceData, CoefficientSet
from app.core.limit_builder import build_deviation_limit, build_longtime_limit
from app.core.models import EnsembleSnapshot, LimitPath, LocalTimeProfile, Regime, TimeGrid
from app.core.sde_engine import (
    deviation_batch,
    simulate_full_batch,
    simulate_longtime_batch,
    solve_unperturbed,
    step_limit,
)

# Configure logging
logger = logging.getLogger(__name__)

T = TypeVar("T")


class EnsembleRunner:
    """Thread pool over fixed path-index batches"""

    def __init__(self, workers: Optional[int] = None, batch_size: Optional[int] = None):
        self.workers = workers or settings.WORKERS
        self.batch_size = batch_size or settings.BATCH_SIZE
        self.executor: Optional[ThreadPoolExecutor] = None

        if self.workers < 1:
            raise ValueError("at least one worker is required")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    async def __aenter__(self):
        """Async context manager entry"""
        self.executor = ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="ensemble")
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        """Async context manager exit"""
        if self.executor:
            self.executor.shutdown(wait=True)
            self.executor = None

    def batches(self, n_paths: int) -> List[np.ndarray]:
        """Path indices 0..n_paths-1 cut into consecutive batches"""
        return [
            np.arange(start, min(start + self.batch_size, n_paths), dtype=np.int64)
            for start in range(0, n_paths, self.batch_size)
        ]

    async def map_batches(self, job: Callable[[np.ndarray], T], n_paths: int) -> List[T]:
        """
        Run job on every batch of path indices

        Args:
            job: function of a path-index array
            n_paths: ensemble size

        Returns:
            job results in batch order
        """
        if self.executor is None:
            raise RuntimeError("EnsembleRunner must be used as an async context manager")
        loop = asyncio.get_running_loop()
        batches = self.batches(n_paths)
        logger.debug(f"Dispatching {len(batches)} batches of up to {self.batch_size} paths to {self.workers} workers")
        tasks = [loop.run_in_executor(self.executor, job, indices) for indices in batches]
        return list(await asyncio.gather(*tasks))


def run_batches(
    job: Callable[[np.ndarray], T],
    n_paths: int,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> List[T]:
    """Synchronous wrapper around EnsembleRunner.map_batches"""
    async def _run() -> List[T]:
        async with EnsembleRunner(workers, batch_size) as runner:
            return await runner.map_batches(job, n_paths)

    return asyncio.run(_run())


@dataclass
class RecordingPlan:
    """A grid and the node indices at which ensembles are recorded"""
    grid: TimeGrid
    record_index: np.ndarray

    @property
    def record_times(self) -> np.ndarray:
        return self.grid.times()[self.record_index]

    @classmethod
    def build(
        cls,
        horizon: float,
        max_dt: float,
        record_points: int,
        extra_times: Sequence[float] = (),
    ) -> "RecordingPlan":
        """Grid with n_steps a multiple of record_points, recording every n/record_points nodes"""
        blocks = max(1, int(math.ceil(horizon / max_dt / record_points - 1e-9)))
        grid = TimeGrid(t0=0.0, dt=horizon / (blocks * record_points), n_steps=blocks * record_points)
        nodes = set(range(0, grid.n_steps + 1, blocks))
        nodes.update(grid.index_of(t) for t in extra_times)
        return cls(grid=grid, record_index=np.array(sorted(nodes), dtype=np.int64))


def _concat(parts: List[Any], label: str, times: np.ndarray) -> EnsembleSnapshot:
    return EnsembleSnapshot(
        times=times,
        x=np.concatenate([p[0] for p in parts], axis=0),
        slow=np.concatenate([p[1] for p in parts], axis=0),
        label=label,
    )


def prelimit_ensemble(
    coeffs: CoefficientSet,
    eps: float,
    regime: Regime,
    x0: float,
    y0: Sequence[float],
    horizon: float,
    n_paths: int,
    seed: int,
    exponent: Optional[float] = None,
    record_points: int = 50,
    extra_times: Sequence[float] = (),
    step_safety: Optional[float] = None,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> EnsembleSnapshot:
    """
    Prelimit ensemble recorded on a coarse time set.

    The slow component is the deviation eps^-exponent (Y - y) when an
    exponent is given, and Y itself otherwise.
    """
    plan = RecordingPlan.build(horizon, step_limit(eps, regime, step_safety), record_points, extra_times)
    y_ref = solve_unperturbed(coeffs, y0, plan.grid) if exponent is not None else None
    simulate = simulate_longtime_batch if regime == "longtime" else simulate_full_batch

    def job(indices: np.ndarray):
        batch = simulate(coeffs, eps, x0, y0, plan.grid, seed, indices, step_safety)
        slow = deviation_batch(batch, y_ref, exponent).zeta if exponent is not None else batch.y_slow
        return batch.x[:, plan.record_index], slow[:, plan.record_index]

    parts = run_batches(job, n_paths, workers, batch_size)
    logger.info(f"Prelimit ensemble eps={eps} ({regime}): {n_paths} paths, {plan.grid.n_steps} steps")
    return _concat(parts, f"eps={eps:g}", plan.record_times)


@dataclass
class LimitEnsemble:
    """Recorded limit ensemble plus per-batch reductions"""
    snapshot: EnsembleSnapshot
    plan: RecordingPlan
    y_ref: Optional[np.ndarray] = None
    reductions: List[Any] = field(default_factory=list)
    samples: Optional[LimitPath] = None


def limit_ensemble(
    avg: AveragedInterfaceData,
    coeffs: CoefficientSet,
    kind: str,
    y0: Sequence[float],
    horizon: float,
    n_paths: int,
    seed: int,
    limit_dt: float,
    record_points: int = 50,
    extra_times: Sequence[float] = (),
    band: Optional[float] = None,
    reducer: Optional[Callable[[LimitPath], Any]] = None,
    keep_samples: int = 0,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> LimitEnsemble:
    """
    Limit ensemble of kind 'diffusive', 'drift' or 'longtime'.

    Args:
        reducer: applied to every LimitPath batch; results kept in batch order
        keep_samples: full trajectories of the first paths kept for plotting
    """
    plan = RecordingPlan.build(horizon, limit_dt, record_points, extra_times)
    y_ref = None if kind == "longtime" else solve_unperturbed(coeffs, y0, plan.grid)

    def job(indices: np.ndarray):
        if kind == "longtime":
            limit = build_longtime_limit(avg, y0, plan.grid, seed, indices, band)
        else:
            limit = build_deviation_limit(avg, coeffs.b1_jac, y_ref, plan.grid, seed, indices, kind, band)
        reduced = reducer(limit) if reducer is not None else None
        sample = None
        if keep_samples and indices[0] == 0:
            sample = _head(limit, keep_samples)
        return limit.x0_path[:, plan.record_index], limit.zeta_or_y[:, plan.record_index], reduced, sample

    parts = run_batches(job, n_paths, workers, batch_size)
    logger.info(f"Limit ensemble ({kind}): {n_paths} paths, {plan.grid.n_steps} steps")
    return LimitEnsemble(
        snapshot=_concat(parts, f"limit:{kind}", plan.record_times),
        plan=plan,
        y_ref=y_ref,
        reductions=[p[2] for p in parts],
        samples=parts[0][3],
    )


def _head(limit: LimitPath, count: int) -> LimitPath:
    keep = slice(0, min(count, limit.x0_path.shape[0]))
    return LimitPath(
        grid=limit.grid,
        x0_path=limit.x0_path[keep],
        zeta_or_y=limit.zeta_or_y[keep],
        L=LocalTimeProfile(L=limit.L.L[keep], method=limit.L.method, band_width=limit.L.band_width, grid=limit.grid),
        V=limit.V[keep],
        seed=limit.seed,
        path_indices=limit.path_indices[keep],
        step_min_abs_x=None if limit.step_min_abs_x is None else limit.step_min_abs_x[keep],
    )
