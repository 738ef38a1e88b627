"""
Statistical and analytical validators

Gluing-condition test functions and martingale-problem residuals for the
limit generators, moment-trend checks on prelimit ensembles, and two-sample
Kolmogorov-Smirnov comparisons of marginals.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from app.config.settings import settings
from app.core.coefficients import AveragedInterfaceData, CoefficientSet, smooth_step
from app.core.ensembles import run_batches
from app.core.exceptions import GluingViolation, GridMismatchError
from app.core.models import ConvergenceTable, EnsembleSnapshot, LimitPath, StatReport, TimeGrid
from app.core.sde_engine import simulate_full_batch, solve_unperturbed, step_limit

# Configure logging
logger = logging.getLogger(__name__)

Base = Callable[[np.ndarray, np.ndarray], np.ndarray]
Field = Callable[[np.ndarray], np.ndarray]

H_X = 1e-4
H_GRAD = 1e-4
H_HESS = 1e-3


def smooth_cutoff(r: np.ndarray, plateau: Optional[float] = None, radius: Optional[float] = None) -> np.ndarray:
    """1 on |r| <= plateau, 0 on |r| >= radius, C-infinity in between"""
    plateau = settings.CUTOFF_PLATEAU if plateau is None else plateau
    radius = settings.CUTOFF_RADIUS if radius is None else radius
    return 1.0 - smooth_step((np.abs(r) - plateau) / (radius - plateau))


def _shift(w: np.ndarray, i: int, h: float) -> np.ndarray:
    out = np.array(w, dtype=float, copy=True)
    out[:, i] += h
    return out


def _grad_w(fn: Base, x: np.ndarray, w: np.ndarray, h: float = H_GRAD) -> np.ndarray:
    d = w.shape[1]
    return np.stack([(fn(x, _shift(w, i, h)) - fn(x, _shift(w, i, -h))) / (2 * h) for i in range(d)], axis=-1)


def _hess_w(fn: Base, x: np.ndarray, w: np.ndarray, h: float = H_HESS) -> np.ndarray:
    d = w.shape[1]
    centre = fn(x, w)
    out = np.empty(w.shape[:1] + (d, d))
    for i in range(d):
        out[:, i, i] = (fn(x, _shift(w, i, h)) - 2 * centre + fn(x, _shift(w, i, -h))) / h ** 2
        for j in range(i + 1, d):
            pp = fn(x, _shift(_shift(w, i, h), j, h))
            pm = fn(x, _shift(_shift(w, i, h), j, -h))
            mp = fn(x, _shift(_shift(w, i, -h), j, h))
            mm = fn(x, _shift(_shift(w, i, -h), j, -h))
            out[:, i, j] = out[:, j, i] = (pp - pm - mp + mm) / (4 * h * h)
    return out


def _rows(w: np.ndarray, d: int) -> np.ndarray:
    return np.atleast_2d(np.asarray(w, dtype=float)).reshape(-1, d)


def _one_sided_jump(fn: Base, w: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """fn_x(0+) - fn_x(0-) from second-order one-sided stencils"""
    z = np.zeros(len(w))
    right = (-3 * fn(z, w) + 4 * fn(z + h, w) - fn(z + 2 * h, w)) / (2 * h)
    left = (3 * fn(z, w) - 4 * fn(z - h, w) + fn(z - 2 * h, w)) / (2 * h)
    return right - left


@dataclass
class GeneratorSpec:
    """
    Limit generator (1/2) a+-(t, x, w) f_xx + drift(t, w) . grad_w f off the interface.

    a_plus, a_minus map (t, w) to (n,); drift maps (t, w) to (n, d).
    Nodes with |x| <= band are left out of generator integrals.
    """
    a_plus: Callable[[float, np.ndarray], np.ndarray]
    a_minus: Callable[[float, np.ndarray], np.ndarray]
    drift: Optional[Callable[[float, np.ndarray], np.ndarray]] = None
    band: float = 0.0

    def a(self, t: float, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.where(x >= 0, self.a_plus(t, w), self.a_minus(t, w))

    @classmethod
    def deviation(
        cls,
        avg: AveragedInterfaceData,
        b1_jac: Field,
        y_ref: np.ndarray,
        grid: TimeGrid,
        band: float,
    ) -> "GeneratorSpec":
        """Deviation limits: a+- and the linear drift db1 w read along y_ref"""
        a_plus = avg.a_plus(y_ref)
        a_minus = avg.a_minus(y_ref)
        jac = np.asarray(b1_jac(y_ref), dtype=float)

        def node(t: float) -> int:
            return min(max(int(round((t - grid.t0) / grid.dt)), 0), grid.n_steps)

        return cls(
            a_plus=lambda t, w: np.full(len(w), a_plus[node(t)]),
            a_minus=lambda t, w: np.full(len(w), a_minus[node(t)]),
            drift=lambda t, w: w @ jac[node(t)].T,
            band=band,
        )

    @classmethod
    def longtime(cls, avg: AveragedInterfaceData, band: float) -> "GeneratorSpec":
        """Long-time limit: a+- depend on the slow state, no drift off the interface"""
        return cls(
            a_plus=lambda t, w: avg.a_plus(w),
            a_minus=lambda t, w: avg.a_minus(w),
            drift=None,
            band=band,
        )


class TestFunction:
    """
    f(x, w) = u(x, w) - |x| chi(x) C(w), C(w) = beta(w) . grad_w u(0, w) + (1/2) alpha(w) : hess_w u(0, w).

    chi is the smooth cutoff, flat on a neighbourhood of zero, so the one-sided
    x-derivatives of f at zero differ by exactly -2 C(w).
    """

    __test__ = False

    def __init__(self, u: Base, beta_at: Field, alpha_at: Field, d: int, name: str = ""):
        self.u = u
        self.beta_at = beta_at
        self.alpha_at = alpha_at
        self.d = d
        self.name = name

    def correction(self, w: np.ndarray) -> np.ndarray:
        w = _rows(w, self.d)
        zero = np.zeros(len(w))
        grad = _grad_w(self.u, zero, w)
        hess = _hess_w(self.u, zero, w)
        beta = np.asarray(self.beta_at(w), dtype=float)
        alpha = np.asarray(self.alpha_at(w), dtype=float)
        return np.einsum("ni,ni->n", beta, grad) + 0.5 * np.einsum("nij,nij->n", alpha, hess)

    def evaluate(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = _rows(w, self.d)
        return self.u(x, w) - np.abs(x) * smooth_cutoff(x) * self.correction(w)

    __call__ = evaluate

    def grad_x_sym(self, x: np.ndarray, w: np.ndarray, h: float = H_X) -> np.ndarray:
        """Central difference in x; at x = 0 this is the mean of the one-sided derivatives"""
        x = np.asarray(x, dtype=float)
        return (self.evaluate(x + h, w) - self.evaluate(x - h, w)) / (2 * h)

    def grad_y(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _grad_w(self.evaluate, np.asarray(x, dtype=float), _rows(w, self.d))

    def hess_y(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return _hess_w(self.evaluate, np.asarray(x, dtype=float), _rows(w, self.d))

    def f_xx(self, x: np.ndarray, w: np.ndarray, h: float = H_X) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (self.evaluate(x + h, w) - 2 * self.evaluate(x, w) + self.evaluate(x - h, w)) / h ** 2

    def generator_apply(self, generator: GeneratorSpec, t: float, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        """L f at points off the interface"""
        x = np.asarray(x, dtype=float)
        w = _rows(w, self.d)
        value = 0.5 * generator.a(t, x, w) * self.f_xx(x, w)
        if generator.drift is not None:
            value = value + np.einsum("ni,ni->n", generator.drift(t, w), self.grad_y(x, w))
        return value

    def gluing_residual(self, w: np.ndarray) -> np.ndarray:
        """(1/2) f_x(0+) - (1/2) f_x(0-) + beta . grad_w f(0) + (1/2) alpha : hess_w f(0), slopes measured on f"""
        w = _rows(w, self.d)
        zero = np.zeros(len(w))
        jump = _one_sided_jump(self.evaluate, w)
        beta = np.asarray(self.beta_at(w), dtype=float)
        alpha = np.asarray(self.alpha_at(w), dtype=float)
        grad = _grad_w(self.evaluate, zero, w)
        hess = _hess_w(self.evaluate, zero, w)
        return 0.5 * jump + np.einsum("ni,ni->n", beta, grad) + 0.5 * np.einsum("nij,nij->n", alpha, hess)

    def base_kink(self, w: np.ndarray, h: float = 1e-3) -> np.ndarray:
        """Jump of the second-order one-sided x-derivatives of u at zero"""
        return np.abs(_one_sided_jump(self.u, _rows(w, self.d), h))


def make_gluing_test_function(
    u: Base,
    beta_at: Field,
    alpha_at: Field,
    d: int = 1,
    sample_w: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    kink_tol: float = 1e-4,
    name: str = "",
) -> TestFunction:
    """
    Correct a smooth base u so that it satisfies the gluing condition.

    Raises:
        GluingViolation: the base has a kink at x = 0 or the residual exceeds tol
    """
    f = TestFunction(u, beta_at, alpha_at, d, name)
    if sample_w is None:
        axis = np.linspace(-2.0, 2.0, 9)
        sample_w = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    sample_w = _rows(sample_w, d)
    kink = float(np.max(f.base_kink(sample_w)))
    if kink > kink_tol:
        raise GluingViolation(f"base function '{name}' is not C1 across x = 0 (one-sided slopes differ by {kink:.3e})")
    residual = float(np.max(np.abs(f.gluing_residual(sample_w))))
    if residual > tol:
        raise GluingViolation(f"gluing residual {residual:.3e} of '{name}' exceeds {tol:.1e}")
    return f


def _first(w: np.ndarray) -> np.ndarray:
    return w[:, 0]


def base_functions(d: int) -> Dict[str, Base]:
    """Polynomial-times-cutoff bases in (x, w)"""
    def cut(x, w):
        return smooth_cutoff(x) * smooth_cutoff(np.linalg.norm(w, axis=1))

    return {
        "x": lambda x, w: x * smooth_cutoff(x),
        "x_squared": lambda x, w: x ** 2 * smooth_cutoff(x),
        "w1": lambda x, w: _first(w) * cut(x, w),
        "w1_squared": lambda x, w: _first(w) ** 2 * cut(x, w),
        "x_times_w1": lambda x, w: x * _first(w) * cut(x, w),
        "cos_w1": lambda x, w: np.cos(_first(w)) * cut(x, w),
    }


def constant_fields(beta: np.ndarray, alpha: np.ndarray) -> Tuple[Field, Field]:
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    return (
        lambda w: np.broadcast_to(beta, (len(w),) + beta.shape),
        lambda w: np.broadcast_to(alpha, (len(w),) + alpha.shape),
    )


def gluing_fields(
    avg: AveragedInterfaceData,
    kind: str,
    y_ref: Optional[np.ndarray] = None,
) -> Tuple[Field, Field, bool]:
    """
    Gluing data (beta_at, alpha_at) of a limit kind, plus whether it is fixed in time.

    Deviation limits read the data along y_ref: 'diffusive' keeps alpha only,
    'drift' keeps beta only. Data that varies along y_ref is frozen at y_ref(0)
    and reported as not fixed.
    """
    d = avg.d
    if kind == "longtime":
        return avg.beta, avg.alpha, True
    if y_ref is None:
        raise ValueError(f"y_ref is required for the '{kind}' limit")
    y_ref = np.atleast_2d(y_ref)
    if kind == "diffusive":
        along = avg.alpha(y_ref)
        fixed = bool(np.allclose(along, along[0], rtol=0, atol=1e-9))
        beta_at, alpha_at = constant_fields(np.zeros(d), along[0])
    elif kind == "drift":
        along = avg.beta(y_ref)
        fixed = bool(np.allclose(along, along[0], rtol=0, atol=1e-9))
        beta_at, alpha_at = constant_fields(along[0], np.zeros((d, d)))
    else:
        raise ValueError(f"unknown limit kind '{kind}'")
    if not fixed:
        logger.warning(f"Gluing data of the {kind} limit varies along the reference path; frozen at t=0")
    return beta_at, alpha_at, fixed


def gluing_test_family(
    d: int,
    beta_at: Field,
    alpha_at: Field,
) -> Tuple[List[TestFunction], Optional[TestFunction]]:
    """
    Gluing-corrected bases plus one negative control.

    The control is an uncorrected base that the gluing data actually moves:
    w1^2 when alpha is nonzero, w1 when only beta is, none otherwise.
    """
    probe = np.zeros((1, d))
    bases = base_functions(d)
    family = [make_gluing_test_function(u, beta_at, alpha_at, d, name=name) for name, u in bases.items()]
    zero_beta, zero_alpha = constant_fields(np.zeros(d), np.zeros((d, d)))
    control = None
    if np.any(np.asarray(alpha_at(probe))[0] != 0):
        control = make_gluing_test_function(bases["w1_squared"], zero_beta, zero_alpha, d, name="uncorrected_w1_squared")
    elif np.any(np.asarray(beta_at(probe))[0] != 0):
        control = make_gluing_test_function(bases["w1"], zero_beta, zero_alpha, d, name="uncorrected_w1")
    return family, control


def martingale_increments(
    limit: LimitPath,
    f: TestFunction,
    generator: GeneratorSpec,
    s: float,
    t: float,
    max_nodes: int = 400,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per path: X(s) and f(Z(t)) - f(Z(s)) - int_s^t L f(Z(r)) 1{|X(r)| > band} dr.

    The time integral is a left-point sum over every stride-th node, with the
    stride chosen so that at most max_nodes nodes are used.
    """
    grid = limit.grid
    i_s, i_t = grid.index_of(s), grid.index_of(t)
    if not i_s < i_t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    stride = max(1, int(math.ceil((i_t - i_s) / max_nodes)))
    nodes = np.arange(i_s, i_t, stride)
    weights = np.minimum(stride, i_t - nodes) * grid.dt
    x, w = limit.x0_path, limit.zeta_or_y
    integral = np.zeros(x.shape[0])
    for node, weight in zip(nodes, weights):
        xs, ws = x[:, node], w[:, node]
        value = f.generator_apply(generator, grid.t0 + node * grid.dt, xs, ws)
        integral += np.where(np.abs(xs) > generator.band, value, 0.0) * weight
    increments = f.evaluate(x[:, i_t], w[:, i_t]) - f.evaluate(x[:, i_s], w[:, i_s]) - integral
    return x[:, i_s], increments


def residual_report(
    x_s: np.ndarray,
    increments: np.ndarray,
    experiment_id: str,
    metric: str,
    sigmas: Optional[float] = None,
    n_bins: int = 4,
    min_population: Optional[int] = None,
    negative_control: bool = False,
    min_paths: int = 1000,
) -> StatReport:
    """
    Verdict on per-path martingale increments.

    Paths are binned by the sign of X(s) and by |X(s)| quantile groups; the
    bin with the largest |mean| / stderr is reported. A negative control uses
    the pooled mean and passes when it exceeds sigmas standard errors.
    """
    min_population = settings.MIN_BIN_POPULATION if min_population is None else min_population
    n = len(increments)
    if negative_control:
        sigmas = 5.0 if sigmas is None else sigmas
        mean = float(np.mean(increments))
        stderr = float(np.std(increments, ddof=1) / math.sqrt(n))
        verdict = StatReport.judge(mean, 0.0, sigmas * stderr, stderr, mode="exceeds") if n >= min_paths else "inconclusive"
        return StatReport(
            experiment_id=experiment_id, metric=metric, value=mean, target=0.0, stderr=stderr,
            threshold=sigmas * stderr, verdict=verdict, n_samples=n,
            details={"negative_control": True, "z": mean / stderr if stderr > 0 else math.inf},
        )

    sigmas = 3.0 if sigmas is None else sigmas
    groups = max(1, n_bins // 2)
    magnitude = np.abs(x_s)
    edges = np.quantile(magnitude, np.linspace(0, 1, groups + 1)[1:-1]) if groups > 1 else np.array([])
    group = np.searchsorted(edges, magnitude, side="right")
    side = (x_s >= 0).astype(int)
    labels = side * groups + group
    best = None
    dropped = 0
    for label in np.unique(labels):
        members = increments[labels == label]
        if len(members) < min_population:
            dropped += 1
            continue
        mean = float(members.mean())
        stderr = float(members.std(ddof=1) / math.sqrt(len(members)))
        z = abs(mean) / stderr if stderr > 0 else (0.0 if mean == 0 else math.inf)
        if best is None or z > best[2]:
            best = (mean, stderr, z, len(members), int(label))
    if dropped:
        logger.warning(f"{metric}: dropped {dropped} bins with fewer than {min_population} paths")
    if best is None:
        return StatReport(
            experiment_id=experiment_id, metric=metric, value=float("nan"), threshold=0.0,
            verdict="inconclusive", n_samples=n, details={"reason": "no populated bin", "dropped_bins": dropped},
        )
    mean, stderr, z, size, label = best
    threshold = sigmas * stderr
    if stderr == 0:
        verdict = "pass" if abs(mean) <= 1e-12 else "fail"
    else:
        verdict = StatReport.judge(mean, 0.0, threshold, stderr)
    if n < min_paths:
        verdict = "inconclusive"
    return StatReport(
        experiment_id=experiment_id, metric=metric, value=mean, target=0.0, stderr=stderr,
        threshold=threshold, verdict=verdict, n_samples=n,
        details={"bin": label, "bin_size": size, "z": z, "dropped_bins": dropped},
    )


def martingale_residual(
    paths: Union[LimitPath, Sequence[LimitPath]],
    f: TestFunction,
    generator: GeneratorSpec,
    s: float,
    t: float,
    experiment_id: str = "",
    sigmas: Optional[float] = None,
    n_bins: int = 4,
    negative_control: bool = False,
    min_paths: int = 1000,
) -> StatReport:
    """Binned martingale residual of f over [s, t] on a limit ensemble"""
    batches = [paths] if isinstance(paths, LimitPath) else list(paths)
    parts = [martingale_increments(batch, f, generator, s, t) for batch in batches]
    x_s = np.concatenate([p[0] for p in parts])
    increments = np.concatenate([p[1] for p in parts])
    return residual_report(
        x_s, increments, experiment_id, f"martingale:{f.name}", sigmas, n_bins,
        negative_control=negative_control, min_paths=min_paths,
    )


def theil_sen_slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(stats.theilslopes(np.asarray(y, dtype=float), np.asarray(x, dtype=float))[0])


def _functional_moments(
    coeffs: CoefficientSet,
    psi: Callable[[np.ndarray], np.ndarray],
    eps: float,
    T: float,
    p: float,
    n_paths: int,
    seed: int,
    x0: float,
    y0: Sequence[float],
    workers: Optional[int],
    batch_size: Optional[int],
) -> float:
    grid = TimeGrid.for_horizon(T, step_limit(eps, "standard"))

    def job(indices: np.ndarray) -> np.ndarray:
        batch = simulate_full_batch(coeffs, eps, x0, y0, grid, seed, indices)
        return np.sum(psi(batch.x[:, :-1] / eps), axis=1) * grid.dt / eps

    values = np.concatenate(run_batches(job, n_paths, workers, batch_size))
    return float(np.mean(np.abs(values) ** p))


def check_integral_functional_bound(
    coeffs: CoefficientSet,
    psi: Callable[[np.ndarray], np.ndarray],
    psi_l1: float,
    eps_list: Sequence[float],
    T: float,
    p: float,
    n_paths: int,
    seed: int,
    x0: float = 0.0,
    y0: Optional[Sequence[float]] = None,
    horizons: Optional[Sequence[float]] = None,
    slope_tolerance: float = 0.3,
    experiment_id: str = "",
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> StatReport:
    """
    E|eps^-1 int_0^T psi(X/eps) dr|^p / (|psi|_1^p T^(p/2)) must not trend with eps.

    The value is the Theil-Sen slope of log ratio against log eps. With
    horizons, the log-log slope of the moment in T at the smallest eps must
    also be p/2 within the tolerance.
    """
    y0 = [0.0] * coeffs.d if y0 is None else y0
    ratios = []
    for eps in eps_list:
        moment = _functional_moments(coeffs, psi, eps, T, p, n_paths, seed, x0, y0, workers, batch_size)
        ratios.append(moment / (psi_l1 ** p * T ** (p / 2)) if psi_l1 > 0 else moment)
    details: Dict[str, object] = {"eps": list(eps_list), "ratios": ratios, "p": p}
    if max(ratios) == 0.0:
        return StatReport(
            experiment_id=experiment_id, metric="integral_functional_bound", value=0.0, threshold=slope_tolerance,
            verdict="pass", n_samples=n_paths, details={**details, "max_ratio": 0.0},
        )
    slope = theil_sen_slope(np.log(eps_list), np.log(ratios))
    verdict = StatReport.judge(slope, 0.0, slope_tolerance)
    details["max_ratio"] = max(ratios)
    if horizons:
        moments = [
            _functional_moments(coeffs, psi, eps_list[-1], h, p, n_paths, seed, x0, y0, workers, batch_size)
            for h in horizons
        ]
        t_slope = float(stats.linregress(np.log(horizons), np.log(moments)).slope)
        details["horizons"] = list(horizons)
        details["t_slope"] = t_slope
        if abs(t_slope - p / 2) > slope_tolerance:
            verdict = "fail"
    return StatReport(
        experiment_id=experiment_id, metric="integral_functional_bound", value=slope, target=0.0,
        threshold=slope_tolerance, verdict=verdict, n_samples=n_paths, details=details,
    )


def check_cesaro_averaging(
    coeffs: CoefficientSet,
    avg: AveragedInterfaceData,
    f: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    eps_list: Sequence[float],
    T: float,
    n_paths: int,
    seed: int,
    x0: float = 0.0,
    y0: Optional[Sequence[float]] = None,
    threshold: float = 0.1,
    experiment_id: str = "",
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> StatReport:
    """
    E sup_t |int_0^t f(s, X, Y) (|phi|^2(X/eps, Y) - a+-(X, Y)) ds| for each eps.

    Passes when the statistic decreases along eps_list and its last value is
    below threshold.
    """
    y0 = [0.0] * coeffs.d if y0 is None else y0
    values, errors = [], []
    for eps in eps_list:
        grid = TimeGrid.for_horizon(T, step_limit(eps, "standard"))
        times = grid.times()[:-1]

        def job(indices: np.ndarray, eps: float = eps, grid: TimeGrid = grid) -> np.ndarray:
            batch = simulate_full_batch(coeffs, eps, x0, y0, grid, seed, indices)
            x = batch.x[:, :-1]
            y = batch.y_slow[:, :-1]
            B, n = x.shape
            flat_x, flat_y = x.reshape(-1), y.reshape(B * n, -1)
            gap = coeffs.phi_sq(flat_x / eps, flat_y) - avg.a_pm(flat_x, flat_y)
            weight = f(np.tile(times, B), flat_x, flat_y)
            running = np.cumsum((weight * gap).reshape(B, n), axis=1) * grid.dt
            return np.max(np.abs(running), axis=1)

        sup = np.concatenate(run_batches(job, n_paths, workers, batch_size))
        values.append(float(sup.mean()))
        errors.append(float(sup.std(ddof=1) / math.sqrt(len(sup))) if len(sup) > 1 else 0.0)
    decreasing = all(b <= a for a, b in zip(values, values[1:]))
    final = values[-1]
    verdict = "pass" if decreasing and final < threshold else "fail"
    return StatReport(
        experiment_id=experiment_id, metric="cesaro_averaging", value=final, target=0.0, stderr=errors[-1],
        threshold=threshold, verdict=verdict, n_samples=n_paths,
        details={"eps": list(eps_list), "values": values, "stderr": errors, "decreasing": decreasing},
    )


def check_tightness_moments(
    paths: Union[EnsembleSnapshot, np.ndarray],
    p: float,
    pairs: Sequence[Tuple[float, float]],
    times: Optional[np.ndarray] = None,
    min_exponent: float = 1.5,
    experiment_id: str = "",
    component: str = "slow",
) -> StatReport:
    """
    Fit log E|Z(t) - Z(s)|^p against log |t - s| over the pairs.

    paths is a snapshot (the component 'slow' or 'x' is used) or an array
    (N, m[, d]) recorded at times.

    Raises:
        ValueError: fewer than 4 pairs
    """
    if len(pairs) < 4:
        raise ValueError("tightness fit needs at least 4 (s, t) pairs")
    if isinstance(paths, EnsembleSnapshot):
        values = paths.slow if component == "slow" else paths.x
        lookup = paths.index_of
    else:
        if times is None:
            raise ValueError("times are required with an array of paths")
        values = np.asarray(paths, dtype=float)
        recorded = np.asarray(times, dtype=float)

        def lookup(t: float) -> int:
            hits = np.flatnonzero(np.isclose(recorded, t, rtol=0.0, atol=1e-9))
            if hits.size == 0:
                raise GridMismatchError(f"time {t} not recorded")
            return int(hits[0])

    if values.ndim == 2:
        values = values[..., None]
    lags, moments = [], []
    for s, t in pairs:
        delta = values[:, lookup(t)] - values[:, lookup(s)]
        moments.append(float(np.mean(np.linalg.norm(delta, axis=-1) ** p)))
        lags.append(abs(t - s))
    if max(moments) == 0.0:
        return StatReport(
            experiment_id=experiment_id, metric=f"tightness_p{p:g}", value=math.inf, target=min_exponent,
            threshold=0.0, verdict="pass", n_samples=values.shape[0], details={"moments": moments, "lags": lags},
        )
    positive = [(lag, m) for lag, m in zip(lags, moments) if m > 0]
    fit = stats.linregress(np.log([lag for lag, _ in positive]), np.log([m for _, m in positive]))
    exponent = float(fit.slope)
    return StatReport(
        experiment_id=experiment_id, metric=f"tightness_p{p:g}", value=exponent, target=min_exponent,
        stderr=float(fit.stderr), threshold=0.0, verdict="pass" if exponent >= min_exponent else "fail",
        n_samples=values.shape[0], details={"moments": moments, "lags": lags},
    )


def check_deviation_scaling(
    deviations: Dict[float, np.ndarray],
    target: float = 1.0,
    tolerance: float = 0.2,
    experiment_id: str = "",
) -> StatReport:
    """Slope of log E|Y(T) - y(T)|^2 against log eps; deviations maps eps to (N, d) raw differences"""
    if len(deviations) < 4:
        raise ValueError("deviation scaling needs at least 4 values of eps")
    eps = sorted(deviations)
    second = [float(np.mean(np.sum(np.atleast_2d(deviations[e].T).T ** 2, axis=-1))) for e in eps]
    fit = stats.linregress(np.log(eps), np.log(second))
    slope = float(fit.slope)
    return StatReport(
        experiment_id=experiment_id, metric="deviation_scaling", value=slope, target=target,
        stderr=float(fit.stderr), threshold=tolerance,
        verdict=StatReport.judge(slope, target, tolerance),
        n_samples=len(next(iter(deviations.values()))),
        details={"eps": eps, "second_moments": second},
    )


def check_exit_time_moment_bound(
    second_moments: Dict[float, float],
    bound: float = 10.0,
    experiment_id: str = "",
    n_samples: int = 0,
) -> StatReport:
    """E theta^2 / delta^4 stays below bound for every delta; second_moments maps delta to E theta^2"""
    if len(second_moments) < 2:
        raise ValueError("the exit-time bound needs at least 2 values of delta")
    deltas = sorted(second_moments, reverse=True)
    ratios = [second_moments[d] / d ** 4 for d in deltas]
    worst = max(ratios)
    return StatReport(
        experiment_id=experiment_id, metric="theta_second_over_delta4_bounded", value=worst, target=0.0,
        threshold=bound, verdict="pass" if math.isfinite(worst) and worst <= bound else "fail",
        n_samples=n_samples,
        details={"deltas": deltas, "ratios": ratios, "spread": worst / min(ratios) if min(ratios) > 0 else math.inf},
    )


def check_third_moment_trend(
    third_moments: Dict[float, Tuple[float, float]],
    sigmas: float = 3.0,
    experiment_id: str = "",
    n_samples: int = 0,
) -> StatReport:
    """
    E|dY|^3 / delta must not grow as delta shrinks.

    third_moments maps delta to (estimate, stderr). A step towards smaller
    delta fails only when the increase exceeds sigmas combined standard
    errors; the Theil-Sen slope of the estimates against delta is reported.
    """
    if len(third_moments) < 2:
        raise ValueError("the third-moment trend needs at least 2 values of delta")
    deltas = sorted(third_moments, reverse=True)
    values = [third_moments[d][0] for d in deltas]
    errors = [third_moments[d][1] for d in deltas]
    rises = [
        (b - a) / math.hypot(ea, eb) if ea > 0 or eb > 0 else (math.inf if b > a else 0.0)
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    ]
    worst = max(rises)
    slope = theil_sen_slope(deltas, values) if len(deltas) > 2 else (values[0] - values[1]) / (deltas[0] - deltas[1])
    if not all(math.isfinite(v) for v in values):
        verdict = "fail"
    else:
        verdict = "fail" if worst > sigmas else "pass"
    return StatReport(
        experiment_id=experiment_id, metric="third_moment_over_delta_decreasing", value=values[-1], target=0.0,
        stderr=errors[-1], threshold=sigmas, verdict=verdict, n_samples=n_samples,
        details={"deltas": deltas, "ratios": values, "stderrs": errors, "max_rise_sigmas": worst, "slope": slope},
    )


def deviation_samples(
    coeffs: CoefficientSet,
    eps_list: Sequence[float],
    T: float,
    n_paths: int,
    seed: int,
    x0: float = 0.0,
    y0: Optional[Sequence[float]] = None,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> Dict[float, np.ndarray]:
    """Y(T) - y(T) on prelimit ensembles, keyed by eps"""
    y0 = [0.0] * coeffs.d if y0 is None else y0
    out = {}
    for eps in eps_list:
        grid = TimeGrid.for_horizon(T, step_limit(eps, "standard"))
        y_end = solve_unperturbed(coeffs, y0, grid)[-1]

        def job(indices: np.ndarray, eps: float = eps, grid: TimeGrid = grid) -> np.ndarray:
            return simulate_full_batch(coeffs, eps, x0, y0, grid, seed, indices).y_slow[:, -1] - y_end

        out[eps] = np.concatenate(run_batches(job, n_paths, workers, batch_size))
    return out


def ks_distance(sample_a: np.ndarray, sample_b: np.ndarray) -> Tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value"""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("KS distance needs two nonempty samples")
    result = stats.ks_2samp(a, b, method="asymp")
    return float(result.statistic), float(result.pvalue)


def ks_noise_floor(n_a: int, n_b: int) -> float:
    """1.36 sqrt((n_a + n_b) / (n_a n_b)), the 5% critical KS distance"""
    return 1.36 * math.sqrt((n_a + n_b) / (n_a * n_b))


def default_projections(d: int) -> List[str]:
    names = ["x"] + [f"slow_{i + 1}" for i in range(d)]
    return names + (["radial"] if d > 1 else [])


def compare_marginals(
    prelimit: Dict[float, EnsembleSnapshot],
    limit: EnsembleSnapshot,
    times: Sequence[float],
    projections: Sequence[str],
) -> ConvergenceTable:
    """
    KS distance of every prelimit marginal against the limit marginal.

    Raises:
        GridMismatchError: a requested time is missing from an ensemble
    """
    limit_end = float(limit.times[-1])
    for eps, snapshot in prelimit.items():
        if not math.isclose(float(snapshot.times[-1]), limit_end, rel_tol=1e-9):
            raise GridMismatchError(f"prelimit horizon {snapshot.times[-1]} (eps={eps}) differs from limit horizon {limit_end}")
    table = ConvergenceTable(title="marginal KS distance, prelimit against limit")
    for t in times:
        for name in projections:
            reference = limit.projection(name, t)
            for eps in sorted(prelimit, reverse=True):
                sample = prelimit[eps].projection(name, t)
                statistic, p_value = ks_distance(sample, reference)
                table.rows.append({
                    "eps": eps,
                    "time": float(t),
                    "projection": name,
                    "ks": statistic,
                    "p_value": p_value,
                    "noise_floor": ks_noise_floor(len(sample), len(reference)),
                })
    return table


def marginal_verdicts(
    table: ConvergenceTable,
    experiment_id: str,
    final_threshold: float = 0.06,
    noise_multiple: float = 2.0,
) -> List[StatReport]:
    """One row per (time, projection): non-increasing in eps within noise and a small final distance"""
    reports = []
    keys = []
    for row in table.rows:
        key = (row["time"], row["projection"])
        if key not in keys:
            keys.append(key)
    for time, projection in keys:
        rows = sorted(
            (r for r in table.rows if r["time"] == time and r["projection"] == projection),
            key=lambda r: -r["eps"],
        )
        floor = rows[-1]["noise_floor"]
        monotone = all(b["ks"] <= a["ks"] + noise_multiple * floor for a, b in zip(rows, rows[1:]))
        final = rows[-1]["ks"]
        verdict = "pass" if monotone and final <= final_threshold else "fail"
        reports.append(StatReport(
            experiment_id=experiment_id, metric=f"ks:{projection}@t={time:g}", value=final, target=0.0,
            threshold=final_threshold, verdict=verdict,
            details={"monotone": monotone, "ks_by_eps": {str(r["eps"]): r["ks"] for r in rows}, "noise_floor": floor},
        ))
    table.passed = all(r.verdict == "pass" for r in reports)
    return reports


def calibration_report(
    limit_a: EnsembleSnapshot,
    limit_b: EnsembleSnapshot,
    time: float,
    projection: str,
    experiment_id: str,
    noise_multiple: float = 2.0,
) -> StatReport:
    """Limit against an independent limit ensemble: the distance must sit at the noise floor"""
    statistic, p_value = ks_distance(limit_a.projection(projection, time), limit_b.projection(projection, time))
    floor = ks_noise_floor(limit_a.n_paths, limit_b.n_paths)
    return StatReport(
        experiment_id=experiment_id, metric=f"ks_calibration:{projection}@t={time:g}", value=statistic,
        target=0.0, threshold=noise_multiple * floor,
        verdict="pass" if statistic <= noise_multiple * floor else "fail",
        n_samples=limit_a.n_paths, details={"p_value": p_value, "noise_floor": floor},
    )
