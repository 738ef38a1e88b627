"""
Path and table persistence

Binary layout of a stored path batch (little endian):

    magic     4 bytes  b"NRSP"
    version   uint32   1
    n_paths, n_steps, d, k, regime (0 standard, 1 longtime)   uint64 x 5
    t0, dt, eps                                              float64 x 3
    seed                                                     uint64
    path_indices                                             uint64 x n_paths
    records   float64  (n_paths, n_steps + 1, 2 + d + k) row major

Each record is t, x, y_1..y_d, dw_1..dw_k; the noise increment of the last
node is stored as zeros. CSV exports write every float with 17 significant
digits so that a rerun with the same seed is byte-identical.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.models import ConvergenceTable, LimitPath, LocalTimeProfile, PathBatch, PathBundle, StatReport, TimeGrid

# Configure logging
logger = logging.getLogger(__name__)

MAGIC = b"NRSP"
VERSION = 1
FLOAT_FORMAT = "%.17g"

_HEADER = np.dtype([
    ("magic", "S4"),
    ("version", "<u4"),
    ("n_paths", "<u8"),
    ("n_steps", "<u8"),
    ("d", "<u8"),
    ("k", "<u8"),
    ("regime", "<u8"),
    ("t0", "<f8"),
    ("dt", "<f8"),
    ("eps", "<f8"),
    ("seed", "<u8"),
])
_REGIMES = ("standard", "longtime")

PathLike = Union[str, Path]


def _as_batch(paths: Union[PathBundle, PathBatch]) -> PathBatch:
    if isinstance(paths, PathBatch):
        return paths
    return PathBatch(
        grid=paths.grid,
        x=paths.x[None],
        y_slow=paths.y_slow[None],
        dw=paths.dw[None],
        eps=paths.eps,
        seed=paths.seed,
        regime=paths.regime,
        path_indices=np.array([paths.path_index], dtype=np.int64),
    )


def _records(batch: PathBatch) -> np.ndarray:
    B, m = batch.x.shape
    times = np.broadcast_to(batch.grid.times(), (B, m))
    dw = np.concatenate([batch.dw, np.zeros((B, 1, batch.dw.shape[-1]))], axis=1)
    return np.concatenate([times[..., None], batch.x[..., None], batch.y_slow, dw], axis=-1)


def write_paths(target: PathLike, paths: Union[PathBundle, PathBatch]) -> Path:
    """Write a path bundle or batch in the NRSP binary layout"""
    batch = _as_batch(paths)
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    header = np.zeros(1, dtype=_HEADER)
    header[0] = (
        MAGIC,
        VERSION,
        batch.x.shape[0],
        batch.grid.n_steps,
        batch.y_slow.shape[-1],
        batch.dw.shape[-1],
        _REGIMES.index(batch.regime),
        batch.grid.t0,
        batch.grid.dt,
        batch.eps,
        batch.seed,
    )
    with open(target, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.asarray(batch.path_indices, dtype="<u8").tobytes())
        handle.write(np.ascontiguousarray(_records(batch), dtype="<f8").tobytes())
    logger.debug(f"Wrote {batch.x.shape[0]} paths to {target}")
    return target


def read_paths(source: PathLike) -> PathBatch:
    """
    Read a file written by write_paths

    Raises:
        ValueError: wrong magic, unsupported version or truncated file
    """
    raw = Path(source).read_bytes()
    if len(raw) < _HEADER.itemsize or raw[:4] != MAGIC:
        raise ValueError(f"{source} is not an NRSP path file")
    header = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if int(header["version"]) != VERSION:
        raise ValueError(f"unsupported NRSP version {int(header['version'])}")
    B, n, d, k = (int(header[key]) for key in ("n_paths", "n_steps", "d", "k"))
    offset = _HEADER.itemsize
    indices = np.frombuffer(raw, dtype="<u8", count=B, offset=offset).astype(np.int64)
    offset += 8 * B
    expected = B * (n + 1) * (2 + d + k)
    if len(raw) - offset != 8 * expected:
        raise ValueError(f"{source} is truncated: expected {expected} float64 values")
    records = np.frombuffer(raw, dtype="<f8", count=expected, offset=offset).reshape(B, n + 1, 2 + d + k)
    return PathBatch(
        grid=TimeGrid(t0=float(header["t0"]), dt=float(header["dt"]), n_steps=n),
        x=records[:, :, 1].copy(),
        y_slow=records[:, :, 2:2 + d].copy(),
        dw=records[:, :-1, 2 + d:].copy(),
        eps=float(header["eps"]),
        seed=int(header["seed"]),
        regime=_REGIMES[int(header["regime"])],
        path_indices=indices,
    )


def write_frame(frame: pd.DataFrame, target: PathLike, title: Optional[str] = None) -> Path:
    """CSV with 17 significant digits and an optional '# title' first line"""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="") as handle:
        if title:
            handle.write(f"# {title}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return target


def read_frame(source: PathLike) -> pd.DataFrame:
    return pd.read_csv(source, comment="#")


def path_frame(paths: Union[PathBundle, PathBatch]) -> pd.DataFrame:
    """Long-format frame: path, t, x, y_1..y_d"""
    batch = _as_batch(paths)
    B, m = batch.x.shape
    columns: Dict[str, np.ndarray] = {
        "path": np.repeat(batch.path_indices, m),
        "t": np.tile(batch.grid.times(), B),
        "x": batch.x.reshape(-1),
    }
    for i in range(batch.y_slow.shape[-1]):
        columns[f"y_{i + 1}"] = batch.y_slow[..., i].reshape(-1)
    return pd.DataFrame(columns)


def limit_frame(limit: LimitPath, stride: int = 1) -> pd.DataFrame:
    """Long-format frame of limit paths: path, t, x, y_1..y_d, L, V_1..V_d"""
    keep = np.arange(0, limit.grid.n_steps + 1, max(1, stride))
    B = limit.x0_path.shape[0]
    columns: Dict[str, np.ndarray] = {
        "path": np.repeat(limit.path_indices, keep.size),
        "t": np.tile(limit.grid.times()[keep], B),
        "x": limit.x0_path[:, keep].reshape(-1),
    }
    d = limit.zeta_or_y.shape[-1]
    for i in range(d):
        columns[f"y_{i + 1}"] = limit.zeta_or_y[:, keep, i].reshape(-1)
    columns["L"] = np.asarray(limit.L.L)[:, keep].reshape(-1)
    for i in range(d):
        columns[f"V_{i + 1}"] = limit.V[:, keep, i].reshape(-1)
    return pd.DataFrame(columns)


def profile_frame(profile: LocalTimeProfile, times: Optional[np.ndarray] = None) -> pd.DataFrame:
    """t, L for a single local-time profile"""
    if times is None:
        if profile.grid is None:
            raise ValueError("a profile without a grid needs explicit times")
        times = profile.grid.times()
    return pd.DataFrame({"t": np.asarray(times, dtype=float), "L": np.asarray(profile.L, dtype=float).reshape(-1)})


def table_frame(table: ConvergenceTable) -> pd.DataFrame:
    return table.to_frame()


def write_table(table: ConvergenceTable, target: PathLike) -> Path:
    return write_frame(table.to_frame(), target, title=table.title)


def summary_frame(rows: Sequence[StatReport]) -> pd.DataFrame:
    columns = ["experiment_id", "metric", "value", "target", "stderr", "threshold", "verdict", "n_samples"]
    return pd.DataFrame([row.summary_row() for row in rows], columns=columns)


def write_summary(rows: List[StatReport], target: PathLike) -> Path:
    """One line per validator row, wall time excluded"""
    return write_frame(summary_frame(rows), target)
