"""
Model coefficients and averaged interface quantities

This module holds the coefficient set of the fast-slow system, checks the
standing assumptions on it, and computes the interface data a+/a- (Cesaro
averages of 1/|phi|^2), beta and alpha (integrals against 1/|phi|^2) by
numerical quadrature with envelope-controlled truncation.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg

from app.config.settings import settings
from app.core.exceptions import (
    AssumptionViolation,
    NotPositiveSemidefinite,
    TailBoundError,
)
from app.core.models import AssumptionCheck, ValidationReport
from app.core.rng import PathStream, Substream

# Configure logging
logger = logging.getLogger(__name__)

Array = np.ndarray
FastFn = Callable[[Array, Array], Array]
SlowFn = Callable[[Array], Array]
EnvelopeFn = Callable[[Array], Array]
TailFn = Callable[[float], float]


@dataclass(frozen=True)
class AnalyticRefs:
    """Closed-form interface data of a bundled model, used as test oracles"""
    a_plus: Optional[float] = None
    a_minus: Optional[float] = None
    beta: Optional[Tuple[float, ...]] = None
    alpha: Optional[Tuple[Tuple[float, ...], ...]] = None
    b_hat_l1: Optional[float] = None
    sigma_hat_sq_l1: Optional[float] = None
    limit_mean_slow: Optional[Tuple[float, ...]] = None  # mean slow limit coordinate at t = 1


@dataclass(frozen=True)
class SampleBox:
    """Axis-aligned box of (x, y) points used for assumption sampling"""
    x_low: float
    x_high: float
    y_low: Tuple[float, ...]
    y_high: Tuple[float, ...]

    def __post_init__(self):
        if not self.x_low < self.x_high:
            raise ValueError("sample box is empty in x")
        if any(lo > hi for lo, hi in zip(self.y_low, self.y_high)):
            raise ValueError("sample box is empty in y")

    def sample(self, n: int, seed: int = 0) -> Tuple[Array, Array]:
        stream = PathStream(seed, 0, Substream.SAMPLING)
        u = stream.uniforms((n, 1 + len(self.y_low)))
        x = self.x_low + (self.x_high - self.x_low) * u[:, 0]
        lo = np.asarray(self.y_low, dtype=float)
        hi = np.asarray(self.y_high, dtype=float)
        y = lo + (hi - lo) * u[:, 1:]
        return x, y


@dataclass(frozen=True)
class CoefficientSet:
    """
    Coefficients (phi, b1, b2, sigma) of the fast-slow system.

    All callables are vectorized: x has shape (n,), y has shape (n, d).
    phi returns (n, k), b1 and b2 return (n, d), b1_jac returns (n, d, d),
    sigma returns (n, d, k); envelopes map (n,) -> (n,).
    """
    name: str
    d: int
    k: int
    phi: FastFn
    b1: SlowFn
    b1_jac: SlowFn
    b2: FastFn
    sigma: FastFn
    b_hat: EnvelopeFn
    sigma_hat_sq: EnvelopeFn
    c1: float
    c2: float
    b_hat_tail: Optional[TailFn] = None
    sigma_hat_sq_tail: Optional[TailFn] = None
    breakpoints: Tuple[float, ...] = ()
    analytic_refs: Optional[AnalyticRefs] = None
    description: str = ""
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("dimensions d and k must be positive")
        if not 0 < self.c1 < self.c2:
            raise ValueError("ellipticity bounds must satisfy 0 < c1 < c2")

    def phi_sq(self, x: Array, y: Array) -> Array:
        """|phi(x, y)|^2, shape (n,)"""
        return np.sum(self.phi(x, y) ** 2, axis=-1)

    def diffusion_sq(self, x: Array, y: Array) -> Array:
        """sigma sigma^T, shape (n, d, d)"""
        s = self.sigma(x, y)
        return np.einsum("ndk,nek->nde", s, s)

    def drift_vanishes(self, y: Array) -> bool:
        """True when b1 is exactly zero on the supplied y rows"""
        return bool(np.all(self.b1(np.atleast_2d(y)) == 0.0))

    def diffusion_vanishes(self, x: Array, y: Array) -> bool:
        """True when sigma is exactly zero on the supplied (x, y) rows"""
        return bool(np.all(self.sigma(np.atleast_1d(x), np.atleast_2d(y)) == 0.0))


@dataclass
class CesaroEstimate:
    """Reciprocal Cesaro means of 1/|phi|^2 on both half-lines"""
    a_plus: float
    a_minus: float
    error_est: float
    converged: bool
    levels: Tuple[float, ...] = ()


def smooth_step(t: Array) -> Array:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1"""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    s = 1.0 - t
    b = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    return a / (a + b)


def rows(y: Array, n: int) -> Array:
    """Broadcast a single y (d,) or a stack (n, d) to shape (n, d)"""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.broadcast_to(y, (n, y.shape[0]))
    return y


def matrix_sqrt_psd(M: Array, jitter: Optional[float] = None, sym_tol: float = 1e-9) -> Array:
    """
    Symmetric PSD square root of M (or of a stack of matrices).

    Args:
        M: symmetric matrix, shape (..., d, d)
        jitter: eigenvalues in [-jitter, 0) are clamped to zero
        sym_tol: relative asymmetry tolerated before rejecting M

    Returns:
        S with S @ S = M, symmetric and PSD
    """
    jitter = settings.PSD_JITTER if jitter is None else jitter
    M = np.asarray(M, dtype=float)
    Mt = np.swapaxes(M, -1, -2)
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if M.size and float(np.max(np.abs(M - Mt))) > sym_tol * scale:
        raise NotPositiveSemidefinite("matrix is not symmetric")
    eigenvalues, vectors = np.linalg.eigh(0.5 * (M + Mt))
    if eigenvalues.size and float(eigenvalues.min()) < -jitter:
        raise NotPositiveSemidefinite(f"smallest eigenvalue {eigenvalues.min():.3e} is below -{jitter:.1e}")
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    S = (vectors * roots[..., None, :]) @ np.swapaxes(vectors, -1, -2)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def cholesky_with_jitter(M: Array, jitter: Optional[float] = None) -> Array:
    """Lower Cholesky factor of M + jitter * I"""
    jitter = settings.PSD_JITTER if jitter is None else jitter
    M = np.asarray(M, dtype=float)
    try:
        return linalg.cholesky(M + jitter * np.eye(M.shape[-1]), lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveSemidefinite(f"Cholesky with jitter {jitter:.1e} failed: {e}") from e


def _geometric_tail(envelope: EnvelopeFn, radius: float) -> float:
    """
    Envelope mass outside [-radius, radius] by dyadic-shell extrapolation:
    shells [R, 2R], [2R, 4R] give a ratio q and the tail is I1 / (1 - q).
    """
    total = 0.0
    for sign in (1.0, -1.0):
        def side(s: float, sign: float = sign) -> float:
            return float(envelope(np.array([sign * s]))[0])

        first = integrate.quad(side, radius, 2 * radius, limit=200)[0]
        second = integrate.quad(side, 2 * radius, 4 * radius, limit=200)[0]
        if first <= 0.0:
            if second > 0.0:
                return math.inf
            continue
        ratio = second / first
        if ratio >= 1.0:
            return math.inf
        total += first / (1.0 - ratio)
    return total


def _tail_bound(envelope: EnvelopeFn, tail: Optional[TailFn], radius: float) -> float:
    if tail is not None:
        return float(tail(radius))
    return _geometric_tail(envelope, radius)


def _truncation_radius(
    envelope: EnvelopeFn,
    tail: Optional[TailFn],
    budget: float,
    max_radius: float,
    scale: float = 1.0,
) -> Tuple[float, float]:
    """Grow R until scale * tail(R) <= budget; returns (R, scaled tail)"""
    radius = settings.INITIAL_TRUNCATION_RADIUS
    while True:
        bound = scale * _tail_bound(envelope, tail, radius)
        if bound <= budget:
            return radius, bound
        radius *= 2.0
        if radius > max_radius:
            raise TailBoundError(
                f"envelope tail {bound:.3e} still above {budget:.3e} at radius {radius / 2:.3g}"
            )


def _panel_points(breakpoints: Sequence[float], radius: float) -> Optional[List[float]]:
    inside = [float(p) for p in breakpoints if -radius < p < radius]
    return inside or None


def _integrate_line(
    integrand: Callable[[float], Array],
    radius: float,
    abs_tol: float,
    breakpoints: Sequence[float],
) -> Tuple[Array, float]:
    value, error = integrate.quad_vec(
        integrand,
        -radius,
        radius,
        epsabs=abs_tol,
        epsrel=1e-12,
        norm="max",
        points=_panel_points(breakpoints, radius),
    )
    return np.asarray(value, dtype=float), float(error)


def envelope_l1(
    envelope: EnvelopeFn,
    tail: Optional[TailFn] = None,
    abs_tol: Optional[float] = None,
    max_radius: Optional[float] = None,
    breakpoints: Sequence[float] = (),
) -> Tuple[float, float]:
    """L1 norm of a nonnegative envelope with truncation error included"""
    abs_tol = settings.QUAD_ABS_TOL if abs_tol is None else abs_tol
    max_radius = settings.MAX_TRUNCATION_RADIUS if max_radius is None else max_radius
    radius, tail_mass = _truncation_radius(envelope, tail, abs_tol / 2, max_radius)
    value, error = _integrate_line(
        lambda s: envelope(np.array([s]))[:1], radius, abs_tol / 2, breakpoints
    )
    return float(value[0]), error + tail_mass


def sampled_lipschitz(fn: Callable[..., Array], points: Sequence[Array], step: float = 1e-3, seed: int = 1) -> float:
    """Largest difference quotient of fn over random small displacements of the sample points"""
    stream = PathStream(seed, 0, Substream.SAMPLING)
    shifted = []
    norms = np.zeros(points[0].shape[0])
    for p in points:
        direction = stream.normals(p.shape) * step
        shifted.append(p + direction)
        norms += np.sum(direction.reshape(p.shape[0], -1) ** 2, axis=1)
    base = fn(*points).reshape(points[0].shape[0], -1)
    moved = fn(*shifted).reshape(points[0].shape[0], -1)
    quotients = np.linalg.norm(moved - base, axis=1) / np.sqrt(norms)
    return float(np.max(quotients))


def estimate_a_pm(
    coeffs: CoefficientSet,
    y: Array,
    u_max: Optional[float] = None,
    step: Optional[float] = None,
    tol: Optional[float] = None,
) -> CesaroEstimate:
    """
    Estimate a+/a- as reciprocals of the Cesaro means of 1/|phi(., y)|^2.

    The running integral G(u) is tabulated by the trapezoidal rule; at each
    level u in (u_max/4, u_max/2, u_max) the mean is the least-squares slope of
    G over the window [u/2, u], which removes the constant term of the
    G(u) = m u + c + bounded expansion. The error estimate is the largest
    spread of the reciprocal means across levels.
    """
    u_max = settings.CESARO_U_MAX if u_max is None else float(u_max)
    step = settings.CESARO_STEP if step is None else float(step)
    tol = settings.CESARO_TOLERANCE if tol is None else float(tol)
    if u_max <= 0:
        raise ValueError("u_max must be positive")

    n = int(math.ceil(u_max / step))
    u = np.linspace(0.0, u_max, n + 1)
    y_rows = rows(np.asarray(y, dtype=float).reshape(coeffs.d), n + 1)
    levels = (u_max / 4, u_max / 2, u_max)

    estimates = []
    spreads = []
    for sign in (1.0, -1.0):
        reciprocal = 1.0 / coeffs.phi_sq(sign * u, y_rows)
        running = integrate.cumulative_trapezoid(reciprocal, u, initial=0.0)
        values = []
        for level in levels:
            window = (u >= level / 2) & (u <= level)
            slope = np.polyfit(u[window], running[window], 1)[0]
            values.append(1.0 / slope)
        estimates.append(values[-1])
        spreads.append(max(values) - min(values))

    a_plus, a_minus = estimates
    error_est = float(max(spreads))
    converged = error_est <= tol
    if not converged:
        logger.warning(f"Cesaro means of 1/|phi|^2 for '{coeffs.name}' not settled at u_max={u_max}: spread {error_est:.3e}")

    slack = 1e-9 * coeffs.c2 + error_est
    for label, value in (("a_plus", a_plus), ("a_minus", a_minus)):
        if not coeffs.c1 - slack <= value <= coeffs.c2 + slack:
            raise AssumptionViolation(f"{label}={value:.6g} outside [{coeffs.c1}, {coeffs.c2}] for '{coeffs.name}'")
    return CesaroEstimate(float(a_plus), float(a_minus), error_est, converged, levels)


def _fixed_y(coeffs: CoefficientSet, y: Array) -> Array:
    return np.asarray(y, dtype=float).reshape(1, coeffs.d)


def interface_drift_beta(
    coeffs: CoefficientSet,
    y: Array,
    abs_tol: Optional[float] = None,
    max_radius: Optional[float] = None,
) -> Tuple[Array, Array]:
    """
    beta(y) = integral of b2(x, y) / |phi(x, y)|^2 over the real line.

    Returns:
        (beta, per-component error estimate), both of shape (d,)
    """
    abs_tol = settings.QUAD_ABS_TOL if abs_tol is None else abs_tol
    max_radius = settings.MAX_TRUNCATION_RADIUS if max_radius is None else max_radius
    if abs_tol <= 0:
        raise ValueError("abs_tol must be positive")
    y1 = _fixed_y(coeffs, y)
    radius, tail_mass = _truncation_radius(
        coeffs.b_hat, coeffs.b_hat_tail, abs_tol / 2, max_radius, scale=1.0 / coeffs.c1
    )

    def integrand(s: float) -> Array:
        xs = np.array([s])
        return coeffs.b2(xs, y1)[0] / coeffs.phi_sq(xs, y1)[0]

    value, error = _integrate_line(integrand, radius, abs_tol / 2, coeffs.breakpoints)
    return value, np.full(coeffs.d, error + tail_mass)


def interface_diffusion_alpha(
    coeffs: CoefficientSet,
    y: Array,
    abs_tol: Optional[float] = None,
    max_radius: Optional[float] = None,
    jitter: Optional[float] = None,
) -> Tuple[Array, Array]:
    """
    alpha(y) = integral of sigma sigma^T(x, y) / |phi(x, y)|^2 over the real line.

    The result is symmetrized and checked to admit a jittered Cholesky factor.
    """
    abs_tol = settings.QUAD_ABS_TOL if abs_tol is None else abs_tol
    max_radius = settings.MAX_TRUNCATION_RADIUS if max_radius is None else max_radius
    if abs_tol <= 0:
        raise ValueError("abs_tol must be positive")
    d = coeffs.d
    y1 = _fixed_y(coeffs, y)
    # |(sigma sigma^T)_ij| <= Tr sigma sigma^T <= sigma_hat^2
    radius, tail_mass = _truncation_radius(
        coeffs.sigma_hat_sq, coeffs.sigma_hat_sq_tail, abs_tol / 2, max_radius, scale=1.0 / coeffs.c1
    )

    def integrand(s: float) -> Array:
        xs = np.array([s])
        return (coeffs.diffusion_sq(xs, y1)[0] / coeffs.phi_sq(xs, y1)[0]).ravel()

    value, error = _integrate_line(integrand, radius, abs_tol / 2, coeffs.breakpoints)
    alpha = value.reshape(d, d)
    alpha = 0.5 * (alpha + alpha.T)
    cholesky_with_jitter(alpha, jitter)
    return alpha, np.full((d, d), error + tail_mass)


def validate_assumptions(
    coeffs: CoefficientSet,
    sample_box: SampleBox,
    n_samples: int,
    strict: bool = True,
    seed: int = 0,
    cesaro_probes: int = 2,
) -> ValidationReport:
    """
    Check ellipticity, envelope domination, integrability of the envelopes,
    Cesaro limits and (informationally) Lipschitz constants on sampled points.

    Raises:
        AssumptionViolation: a sampled point breaks c1 < |phi|^2 < c2 and strict is set
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    x, y = sample_box.sample(n_samples, seed)
    report = ValidationReport(model=coeffs.name, n_samples=n_samples)

    phi_sq = coeffs.phi_sq(x, y)
    bad = ~((phi_sq > coeffs.c1) & (phi_sq < coeffs.c2))
    report.ellipticity_violations = int(np.count_nonzero(bad))
    report.checks.append(AssumptionCheck(
        name="ellipticity",
        passed=report.ellipticity_violations == 0,
        detail=f"{report.ellipticity_violations} of {n_samples} points outside ({coeffs.c1}, {coeffs.c2}); "
               f"|phi|^2 range [{phi_sq.min():.6g}, {phi_sq.max():.6g}]",
        value=float(report.ellipticity_violations),
    ))

    b2_norm = np.linalg.norm(coeffs.b2(x, y), axis=-1)
    trace = np.trace(coeffs.diffusion_sq(x, y), axis1=1, axis2=2)
    b_bad = b2_norm > coeffs.b_hat(x) * (1 + 1e-12) + 1e-15
    s_bad = trace > coeffs.sigma_hat_sq(x) * (1 + 1e-12) + 1e-15
    report.envelope_violations = int(np.count_nonzero(b_bad | s_bad))
    report.checks.append(AssumptionCheck(
        name="envelopes",
        passed=report.envelope_violations == 0,
        detail=f"{int(b_bad.sum())} drift and {int(s_bad.sum())} diffusion envelope violations",
        value=float(report.envelope_violations),
    ))

    for label, envelope, tail in (
        ("b_hat", coeffs.b_hat, coeffs.b_hat_tail),
        ("sigma_hat_sq", coeffs.sigma_hat_sq, coeffs.sigma_hat_sq_tail),
    ):
        try:
            norm, error = envelope_l1(envelope, tail, breakpoints=coeffs.breakpoints)
            passed = math.isfinite(norm)
            detail = f"|{label}|_L1 = {norm:.10g} +/- {error:.2e}"
        except TailBoundError as e:
            norm, error, passed, detail = math.inf, math.inf, False, str(e)
        setattr(report, f"{label}_l1", norm)
        setattr(report, f"{label}_l1_error", error)
        report.checks.append(AssumptionCheck(name=f"decay_{label}", passed=passed, detail=detail, value=norm))

    for probe in y[:cesaro_probes]:
        estimate = estimate_a_pm(coeffs, probe)
        report.checks.append(AssumptionCheck(
            name="cesaro_limit",
            passed=estimate.converged,
            detail=f"y={np.round(probe, 4).tolist()}: a+={estimate.a_plus:.8g}, a-={estimate.a_minus:.8g}, "
                   f"spread {estimate.error_est:.2e}",
            value=estimate.error_est,
        ))

    lipschitz = {
        "phi": sampled_lipschitz(coeffs.phi, [x, y]),
        "b2": sampled_lipschitz(coeffs.b2, [x, y]),
        "sigma": sampled_lipschitz(coeffs.sigma, [x, y]),
        "b1": sampled_lipschitz(coeffs.b1, [y]),
    }
    report.checks.append(AssumptionCheck(
        name="lipschitz",
        passed=all(math.isfinite(v) for v in lipschitz.values()),
        detail=", ".join(f"{k}~{v:.4g}" for k, v in lipschitz.items()),
        value=max(lipschitz.values()),
    ))

    if strict and report.ellipticity_violations:
        raise AssumptionViolation(
            f"model '{coeffs.name}' violates c1 < |phi|^2 < c2 at {report.ellipticity_violations} sampled points",
            report,
        )
    return report


def cesaro_times_f_gap(
    g: Callable[[Array], Array],
    g_bar: float,
    f: Callable[[Array], Array],
    R: float,
    eps: float,
    n_grid: Optional[int] = None,
) -> float:
    """sup over x in [0, R] of |g_bar * int_0^x f - int_0^x f(s) g(s / eps) ds|"""
    n_grid = n_grid or max(20001, int(64 * R / eps) + 1)
    xs = np.linspace(0.0, R, n_grid)
    fx = f(xs)
    averaged = g_bar * integrate.cumulative_trapezoid(fx, xs, initial=0.0)
    oscillating = integrate.cumulative_trapezoid(fx * g(xs / eps), xs, initial=0.0)
    return float(np.max(np.abs(averaged - oscillating)))


@dataclass
class AveragedInterfaceData:
    """
    a+, a-, beta, alpha as vectorized functions of y.

    Every callable takes y of shape (n, d); a_plus/a_minus return (n,),
    beta returns (n, d), alpha returns (n, d, d).
    """
    d: int
    c1: float
    c2: float
    a_plus: Callable[[Array], Array]
    a_minus: Callable[[Array], Array]
    beta: Callable[[Array], Array]
    alpha: Callable[[Array], Array]
    quadrature_error: Dict[str, float] = field(default_factory=dict)
    constant: bool = False

    def a_pm(self, x: Array, y: Array) -> Array:
        """a+ on x >= 0, a- on x < 0"""
        x = np.asarray(x, dtype=float)
        y_rows = rows(y, x.shape[0])
        return np.where(x >= 0, self.a_plus(y_rows), self.a_minus(y_rows))

    def is_degenerate_alpha(self, y: Array) -> bool:
        return bool(np.all(self.alpha(np.atleast_2d(y)) == 0.0))

    @classmethod
    def from_constants(
        cls,
        a_plus: float,
        a_minus: float,
        beta: Sequence[float],
        alpha: Sequence[Sequence[float]],
        c1: Optional[float] = None,
        c2: Optional[float] = None,
        quadrature_error: Optional[Dict[str, float]] = None,
    ) -> "AveragedInterfaceData":
        beta_vec = np.asarray(beta, dtype=float).reshape(-1)
        alpha_mat = np.asarray(alpha, dtype=float).reshape(beta_vec.size, beta_vec.size)
        alpha_mat = 0.5 * (alpha_mat + alpha_mat.T)
        c1 = min(a_plus, a_minus) if c1 is None else c1
        c2 = max(a_plus, a_minus) if c2 is None else c2

        def count(y: Array) -> int:
            return np.atleast_2d(y).shape[0]

        return cls(
            d=beta_vec.size,
            c1=c1,
            c2=c2,
            a_plus=lambda y: np.full(count(y), float(a_plus)),
            a_minus=lambda y: np.full(count(y), float(a_minus)),
            beta=lambda y: np.broadcast_to(beta_vec, (count(y), beta_vec.size)).copy(),
            alpha=lambda y: np.broadcast_to(alpha_mat, (count(y),) + alpha_mat.shape).copy(),
            quadrature_error=dict(quadrature_error or {}),
            constant=True,
        )


class _PointwiseAverager:
    """Quadrature of the interface data at each distinct y, cached"""

    def __init__(self, coeffs: CoefficientSet, abs_tol: float, u_max: float, step: float):
        self.coeffs = coeffs
        self.abs_tol = abs_tol
        self.u_max = u_max
        self.step = step
        self._cache: Dict[Tuple[float, ...], Tuple[float, float, Array, Array]] = {}

    def at(self, y: Array) -> Tuple[float, float, Array, Array]:
        key = tuple(np.round(np.asarray(y, dtype=float), 12).tolist())
        if key not in self._cache:
            cesaro = estimate_a_pm(self.coeffs, y, self.u_max, self.step)
            beta, _ = interface_drift_beta(self.coeffs, y, self.abs_tol)
            alpha, _ = interface_diffusion_alpha(self.coeffs, y, self.abs_tol)
            self._cache[key] = (cesaro.a_plus, cesaro.a_minus, beta, alpha)
        return self._cache[key]

    def column(self, y: Array, slot: int) -> Array:
        y = np.atleast_2d(y)
        return np.stack([np.asarray(self.at(row)[slot], dtype=float) for row in y])


def average_interface(
    coeffs: CoefficientSet,
    y_probe: Sequence[Array],
    abs_tol: Optional[float] = None,
    u_max: Optional[float] = None,
    step: Optional[float] = None,
) -> AveragedInterfaceData:
    """
    Build the interface data of a coefficient set.

    The quantities are evaluated at the probe points first; if they agree
    within their error estimates the result is constant in y, otherwise the
    returned callables run (cached) quadrature at every distinct y.
    """
    abs_tol = settings.QUAD_ABS_TOL if abs_tol is None else abs_tol
    u_max = settings.CESARO_U_MAX if u_max is None else u_max
    step = settings.CESARO_STEP if step is None else step
    if not y_probe:
        raise ValueError("at least one probe point is required")

    averager = _PointwiseAverager(coeffs, abs_tol, u_max, step)
    probes = [np.asarray(y, dtype=float).reshape(coeffs.d) for y in y_probe]
    values = [averager.at(y) for y in probes]
    cesaro_error = max(estimate_a_pm(coeffs, probes[0], u_max, step).error_est, 1e-12)
    errors = {"a_pm": cesaro_error, "beta": abs_tol, "alpha": abs_tol}

    first = values[0]
    tolerance = max(1e-6, 5 * abs_tol)
    same = all(
        abs(v[0] - first[0]) <= 2 * cesaro_error + tolerance
        and abs(v[1] - first[1]) <= 2 * cesaro_error + tolerance
        and np.allclose(v[2], first[2], rtol=0, atol=tolerance)
        and np.allclose(v[3], first[3], rtol=0, atol=tolerance)
        for v in values[1:]
    )
    if same:
        logger.info(f"Interface data of '{coeffs.name}' is constant in y: a+={first[0]:.8g}, a-={first[1]:.8g}")
        return AveragedInterfaceData.from_constants(
            first[0], first[1], first[2], first[3], c1=coeffs.c1, c2=coeffs.c2, quadrature_error=errors
        )

    logger.info(f"Interface data of '{coeffs.name}' varies with y; using pointwise quadrature")
    return AveragedInterfaceData(
        d=coeffs.d,
        c1=coeffs.c1,
        c2=coeffs.c2,
        a_plus=lambda y: averager.column(y, 0),
        a_minus=lambda y: averager.column(y, 1),
        beta=lambda y: averager.column(y, 2),
        alpha=lambda y: averager.column(y, 3),
        quadrature_error=errors,
        constant=False,
    )
