"""
Data models for the Interface Averaging Toolkit

Numerical containers are plain dataclasses over numpy arrays; everything that
crosses the I/O boundary (configs, reports) is a pydantic model.
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.core.exceptions import GridMismatchError

Regime = Literal["standard", "longtime"]
ExperimentRegime = Literal["deviation_diffusive", "deviation_drift", "longtime", "lemma_suite"]
Verdict = Literal["pass", "fail", "inconclusive"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t0, t0 + dt, ..., t0 + n_steps * dt"""
    t0: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @classmethod
    def for_horizon(cls, horizon: float, max_dt: float, t0: float = 0.0) -> "TimeGrid":
        """Finest uniform grid on [t0, t0 + horizon] with dt <= max_dt"""
        n_steps = max(1, int(math.ceil(horizon / max_dt - 1e-9)))
        return cls(t0=t0, dt=horizon / n_steps, n_steps=n_steps)

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, t: float) -> int:
        """Grid index of time t; raises if t is off the grid or out of range"""
        position = (t - self.t0) / self.dt
        index = int(round(position))
        if index < 0 or index > self.n_steps or abs(position - index) > 1e-6:
            raise GridMismatchError(f"time {t} is not a node of the grid (dt={self.dt}, T={self.horizon})")
        return index

    def matches(self, other: "TimeGrid") -> bool:
        return (
            self.n_steps == other.n_steps
            and math.isclose(self.dt, other.dt, rel_tol=1e-12)
            and math.isclose(self.t0, other.t0, rel_tol=1e-12, abs_tol=1e-15)
        )


@dataclass
class PathBundle:
    """One discretized prelimit trajectory with its noise record"""
    grid: TimeGrid
    x: np.ndarray          # (n+1,)
    y_slow: np.ndarray     # (n+1, d)
    dw: np.ndarray         # (n, k)
    eps: float
    seed: int
    regime: Regime
    path_index: int = 0


@dataclass
class PathBatch:
    """A stack of prelimit trajectories sharing grid, eps and master seed"""
    grid: TimeGrid
    x: np.ndarray          # (B, n+1)
    y_slow: np.ndarray     # (B, n+1, d)
    dw: np.ndarray         # (B, n, k)
    eps: float
    seed: int
    regime: Regime
    path_indices: np.ndarray

    def bundle(self, row: int) -> PathBundle:
        return PathBundle(
            grid=self.grid,
            x=self.x[row],
            y_slow=self.y_slow[row],
            dw=self.dw[row],
            eps=self.eps,
            seed=self.seed,
            regime=self.regime,
            path_index=int(self.path_indices[row]),
        )


@dataclass
class DeviationPath:
    """Normalized deviation eps^-exponent (Y - y); zeta may carry a leading path axis"""
    grid: TimeGrid
    zeta: np.ndarray
    scaling_exponent: float


@dataclass
class LocalTimeProfile:
    """Estimated symmetric local time at zero on a grid"""
    L: np.ndarray
    method: Literal["band", "tanaka"]
    band_width: Optional[float] = None
    grid: Optional[TimeGrid] = None
    clamp_magnitude: float = 0.0


@dataclass
class LimitPath:
    """Realized limit trajectories; arrays carry a leading path axis"""
    grid: TimeGrid
    x0_path: np.ndarray            # (B, n+1)
    zeta_or_y: np.ndarray          # (B, n+1, d)
    L: LocalTimeProfile            # L.L has shape (B, n+1)
    V: np.ndarray                  # (B, n+1, d)
    seed: int
    path_indices: np.ndarray
    step_min_abs_x: Optional[np.ndarray] = None   # (B, n) min |x| over each step's sub-grid


@dataclass
class ExcursionStats:
    """Exit statistics of excursions from the interface band"""
    n_paths: int
    delta: float
    ell: float
    eps: float
    start_x: float
    p_plus_hat: float
    p_minus_hat: float
    p_stderr: float
    mean_dy_over_delta: np.ndarray
    mean_dy_over_delta_stderr: np.ndarray
    mean_dydy_over_delta: np.ndarray
    mean_dydy_over_delta_stderr: np.ndarray
    theta_mean: float
    theta_second: float
    third_moment_over_delta: float
    n_censored: int
    scale_exponent: float = 0.0
    dt: float = 0.0
    third_moment_stderr: float = 0.0

    def as_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {
            "eps": self.eps,
            "delta": self.delta,
            "ell": self.ell,
            "start_x": self.start_x,
            "n_paths": self.n_paths,
            "n_censored": self.n_censored,
            "p_plus": self.p_plus_hat,
            "p_stderr": self.p_stderr,
            "theta_mean": self.theta_mean,
            "theta_second": self.theta_second,
            "third_moment_over_delta": self.third_moment_over_delta,
            "third_moment_stderr": self.third_moment_stderr,
        }
        for i, value in enumerate(np.atleast_1d(self.mean_dy_over_delta)):
            row[f"mean_dy_over_delta_{i + 1}"] = float(value)
            row[f"mean_dy_over_delta_{i + 1}_stderr"] = float(self.mean_dy_over_delta_stderr[i])
        diag = np.diag(np.atleast_2d(self.mean_dydy_over_delta))
        diag_err = np.diag(np.atleast_2d(self.mean_dydy_over_delta_stderr))
        for i, value in enumerate(diag):
            row[f"mean_dydy_over_delta_{i + 1}{i + 1}"] = float(value)
            row[f"mean_dydy_over_delta_{i + 1}{i + 1}_stderr"] = float(diag_err[i])
        return row


@dataclass
class AssumptionCheck:
    """Verdict on one standing assumption"""
    name: str
    passed: bool
    detail: str
    value: Optional[float] = None


@dataclass
class ValidationReport:
    """Outcome of validate_assumptions"""
    model: str
    n_samples: int
    checks: List[AssumptionCheck] = field(default_factory=list)
    ellipticity_violations: int = 0
    envelope_violations: int = 0
    b_hat_l1: float = 0.0
    b_hat_l1_error: float = 0.0
    sigma_hat_sq_l1: float = 0.0
    sigma_hat_sq_l1_error: float = 0.0

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


@dataclass
class EnsembleSnapshot:
    """Ensemble values recorded at a few times: x (N, m), slow (N, m, d)"""
    times: np.ndarray
    x: np.ndarray
    slow: np.ndarray
    label: str = ""

    def index_of(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-9))
        if hits.size == 0:
            raise GridMismatchError(f"time {t} not recorded in ensemble '{self.label}'")
        return int(hits[0])

    def projection(self, name: str, t: float) -> np.ndarray:
        """1-d projection: 'x', 'slow_<i>' (1-based) or 'radial'"""
        column = self.index_of(t)
        if name == "x":
            return self.x[:, column]
        if name == "radial":
            return np.linalg.norm(self.slow[:, column, :], axis=-1)
        if name.startswith("slow_"):
            return self.slow[:, column, int(name.split("_", 1)[1]) - 1]
        raise ValueError(f"unknown projection '{name}'")

    @property
    def n_paths(self) -> int:
        return int(self.x.shape[0])


@dataclass
class ConvergenceTable:
    """Rows of a convergence study, exported as CSV with a lemma header"""
    title: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    passed: bool = True

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


# Pydantic models for configs and reports
class StatReport(BaseModel):
    """One validator outcome"""
    experiment_id: str
    metric: str
    value: float
    target: float = 0.0
    stderr: Optional[float] = None
    threshold: float
    verdict: Verdict
    n_samples: int = 0
    wall_time: float = 0.0
    details: Dict[str, Any] = Field(default_factory=dict)

    @staticmethod
    def judge(
        value: float,
        target: float,
        threshold: float,
        stderr: Optional[float] = None,
        mode: Literal["within", "exceeds"] = "within",
    ) -> Verdict:
        """pass iff |value - target| <= threshold; inconclusive when noise dominates"""
        if not np.isfinite(value):
            return "fail"
        if stderr is not None and stderr > threshold / 2:
            return "inconclusive"
        gap = abs(value - target)
        if mode == "exceeds":
            return "pass" if gap > threshold else "fail"
        return "pass" if gap <= threshold else "fail"

    def summary_row(self) -> Dict[str, Any]:
        """CSV row; wall time is left out so reruns stay byte-identical"""
        return {
            "experiment_id": self.experiment_id,
            "metric": self.metric,
            "value": self.value,
            "target": self.target,
            "stderr": self.stderr if self.stderr is not None else float("nan"),
            "threshold": self.threshold,
            "verdict": self.verdict,
            "n_samples": self.n_samples,
        }


class ModelSection(BaseModel):
    """Registry model name plus parameter overrides"""
    model_config = ConfigDict(extra="forbid")
    name: str
    overrides: Dict[str, float] = Field(default_factory=dict)


class EngineSection(BaseModel):
    """Prelimit and limit time-stepping settings"""
    model_config = ConfigDict(extra="forbid")
    eps_schedule: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    horizons: List[float] = Field(default_factory=lambda: [1.0])
    n_paths: int = Field(default=10000, ge=1)
    master_seed: int = Field(default=20240601, ge=0)
    step_safety: float = Field(default=0.1, gt=0, le=1)
    limit_dt: float = Field(default=1e-4, gt=0)
    batch_size: Optional[int] = Field(default=None, ge=1)
    x0: float = 0.0
    y0: Optional[List[float]] = None
    record_points: int = Field(default=50, ge=2)

    @field_validator("eps_schedule")
    @classmethod
    def _positive_eps(cls, value: List[float]) -> List[float]:
        if not value or any(eps <= 0 for eps in value):
            raise ValueError("eps_schedule must be a nonempty list of positive numbers")
        return value

    @field_validator("horizons")
    @classmethod
    def _positive_horizons(cls, value: List[float]) -> List[float]:
        if not value or any(t <= 0 for t in value):
            raise ValueError("horizons must be a nonempty list of positive numbers")
        return value


class LocalTimeSection(BaseModel):
    """Band policy of the local-time estimator"""
    model_config = ConfigDict(extra="forbid")
    band_factor: float = Field(default=2.0, gt=0)
    band: Optional[float] = Field(default=None, gt=0)


class InterfaceSection(BaseModel):
    """Excursion study settings"""
    model_config = ConfigDict(extra="forbid")
    gamma: float = Field(default=0.2, gt=0, lt=0.5)
    eps_schedule: Optional[List[float]] = None
    delta_schedule: Optional[List[float]] = None
    ell_schedule: Optional[List[float]] = None
    n_paths: int = Field(default=10000, ge=1)
    scale_exponent: Optional[float] = None
    exit_deltas: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05])
    exit_eps: float = Field(default=0.05, gt=0)
    start_fractions: List[float] = Field(default_factory=lambda: [0.0])


class ValidatorSection(BaseModel):
    """Thresholds of the validator set"""
    model_config = ConfigDict(extra="forbid")
    ks_final: float = 0.06
    ks_noise_multiple: float = 2.0
    martingale_sigmas: float = 3.0
    negative_control_sigmas: float = 5.0
    martingale_bins: int = Field(default=4, ge=1)
    tightness_p: float = 8.0
    tightness_min_exponent: float = 1.5
    moment_slope_tolerance: float = 0.3
    increment_relative_tolerance: float = 0.10
    cesaro_final_threshold: float = 0.1
    occupation_min_r2: float = 0.95
    occupation_deltas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    exit_time_moment_bound: float = Field(default=10.0, gt=0)
    third_moment_sigmas: float = Field(default=3.0, gt=0)


class OutputSection(BaseModel):
    """Where and what to write"""
    model_config = ConfigDict(extra="forbid")
    directory: Optional[str] = None
    sample_paths: int = Field(default=5, ge=0)
    write_paths: bool = False


class ExperimentConfig(BaseModel):
    """A complete experiment description"""
    model_config = ConfigDict(extra="forbid")
    experiment_id: str
    regime: ExperimentRegime
    model: ModelSection
    engine: EngineSection = Field(default_factory=EngineSection)
    local_time: LocalTimeSection = Field(default_factory=LocalTimeSection)
    interface: InterfaceSection = Field(default_factory=InterfaceSection)
    validators: ValidatorSection = Field(default_factory=ValidatorSection)
    output: OutputSection = Field(default_factory=OutputSection)


class Provenance(BaseModel):
    """Where a report came from"""
    code_version: str
    wall_time: float
    workers: int
    python_version: str = ""
    numpy_version: str = ""


class ExperimentReport(BaseModel):
    """Config echo, validator rows and the overall verdict"""
    config: ExperimentConfig
    rows: List[StatReport] = Field(default_factory=list)
    verdict: Verdict = "pass"
    provenance: Provenance
    artifacts: Dict[str, str] = Field(default_factory=dict)

    @staticmethod
    def overall_verdict(rows: List[StatReport]) -> Verdict:
        """pass iff every non-inconclusive row passes"""
        decided = [row for row in rows if row.verdict != "inconclusive"]
        return "fail" if any(row.verdict == "fail" for row in decided) else "pass"


def as_tuple(values: Optional[List[float]], d: int) -> Tuple[float, ...]:
    """Broadcast an optional list to a d-tuple (zeros when missing)"""
    if values is None:
        return tuple([0.0] * d)
    if len(values) != d:
        raise ValueError(f"expected {d} components, got {len(values)}")
    return tuple(float(v) for v in values)
