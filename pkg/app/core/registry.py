"""
Bundled analytic models

Each factory builds a CoefficientSet from keyword parameters; experiment
configs select a model by name and override parameters by key.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
from scipy.special import erfc

from app.core.coefficients import AnalyticRefs, CoefficientSet, smooth_step
from app.core.exceptions import ConfigurationError

# Configure logging
logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)


def _unit_phi(k: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """phi = e_1, so |phi|^2 = 1 and X is driven by the first noise coordinate"""
    def phi(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], k))
        out[:, 0] = 1.0
        return out
    return phi


def _scalar_phi(phi_sq: Callable[[np.ndarray], np.ndarray], k: int) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    def phi(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], k))
        out[:, 0] = np.sqrt(phi_sq(x))
        return out
    return phi


def _linear_b1(lam: float):
    """b1(y) = -lam y with its constant Jacobian"""
    def b1(y: np.ndarray) -> np.ndarray:
        return -lam * y

    def b1_jac(y: np.ndarray) -> np.ndarray:
        d = y.shape[-1]
        return np.broadcast_to(-lam * np.eye(d), (y.shape[0], d, d)).copy()
    return b1, b1_jac


def _gaussian_b2(scale: float, d: int):
    def b2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], d))
        out[:, 0] = scale * np.exp(-x ** 2)
        return out
    return b2


def _gaussian_sigma(scale: float, d: int, k: int):
    """sigma = scale * exp(-x^2 / 2) on the leading d x d block"""
    def sigma(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.zeros((x.shape[0], d, k))
        profile = scale * np.exp(-x ** 2 / 2)
        for i in range(min(d, k)):
            out[:, i, i] = profile
        return out
    return sigma


def _zero_b2(d: int):
    return lambda x, y: np.zeros((x.shape[0], d))


def _zero_sigma(d: int, k: int):
    return lambda x, y: np.zeros((x.shape[0], d, k))


def _zero_envelope(x: np.ndarray) -> np.ndarray:
    return np.zeros_like(np.asarray(x, dtype=float))


def _gaussian_envelope(scale: float):
    return lambda x: scale * np.exp(-np.asarray(x, dtype=float) ** 2)


def _gaussian_tail(scale: float):
    """integral of scale * exp(-x^2) over |x| > R"""
    return lambda R: scale * SQRT_PI * float(erfc(R))


def _no_tail(R: float) -> float:
    return 0.0


def trivial(d: int = 1, k: int = 1, lam: float = 0.0) -> CoefficientSet:
    """|phi|^2 = 1 and no perturbation"""
    b1, b1_jac = _linear_b1(lam)
    return CoefficientSet(
        name="trivial", d=d, k=k,
        phi=_unit_phi(k), b1=b1, b1_jac=b1_jac,
        b2=_zero_b2(d), sigma=_zero_sigma(d, k),
        b_hat=_zero_envelope, sigma_hat_sq=_zero_envelope,
        c1=0.5, c2=2.0,
        b_hat_tail=_no_tail, sigma_hat_sq_tail=_no_tail,
        analytic_refs=AnalyticRefs(
            a_plus=1.0, a_minus=1.0,
            beta=tuple([0.0] * d), alpha=tuple(tuple([0.0] * d) for _ in range(d)),
            b_hat_l1=0.0, sigma_hat_sq_l1=0.0,
        ),
        description="unit fast diffusion, b2 = 0, sigma = 0",
        params={"d": d, "k": k, "lam": lam},
    )


def gaussian_drift(d: int = 1, b_scale: float = 1.0, lam: float = 0.0) -> CoefficientSet:
    """b2 = b_scale exp(-x^2) e_1, sigma = 0; the drift/local-time limit"""
    k = 1
    b1, b1_jac = _linear_b1(lam)
    beta = tuple([b_scale * SQRT_PI] + [0.0] * (d - 1))
    mean_slow = None
    if lam == 0.0:
        # E L(1, 0) = E|W(1)| = sqrt(2 / pi)
        mean_slow = tuple([b_scale * math.sqrt(2.0)] + [0.0] * (d - 1))
    return CoefficientSet(
        name="gaussian_drift", d=d, k=k,
        phi=_unit_phi(k), b1=b1, b1_jac=b1_jac,
        b2=_gaussian_b2(b_scale, d), sigma=_zero_sigma(d, k),
        b_hat=_gaussian_envelope(abs(b_scale)), sigma_hat_sq=_zero_envelope,
        c1=0.5, c2=2.0,
        b_hat_tail=_gaussian_tail(abs(b_scale)), sigma_hat_sq_tail=_no_tail,
        analytic_refs=AnalyticRefs(
            a_plus=1.0, a_minus=1.0, beta=beta,
            alpha=tuple(tuple([0.0] * d) for _ in range(d)),
            b_hat_l1=abs(b_scale) * SQRT_PI, sigma_hat_sq_l1=0.0,
            limit_mean_slow=mean_slow,
        ),
        description="Gaussian localized drift, no localized noise",
        params={"d": d, "b_scale": b_scale, "lam": lam},
    )


def gaussian_diffusion(d: int = 1, s: float = 1.0, lam: float = 1.0) -> CoefficientSet:
    """sigma = s exp(-x^2 / 2) I_d, b2 = 0; the diffusive deviation limit"""
    k = d
    b1, b1_jac = _linear_b1(lam)
    alpha = tuple(tuple(s * s * SQRT_PI if i == j else 0.0 for j in range(d)) for i in range(d))
    return CoefficientSet(
        name="gaussian_diffusion", d=d, k=k,
        phi=_unit_phi(k), b1=b1, b1_jac=b1_jac,
        b2=_zero_b2(d), sigma=_gaussian_sigma(s, d, k),
        b_hat=_zero_envelope, sigma_hat_sq=_gaussian_envelope(d * s * s),
        c1=0.5, c2=2.0,
        b_hat_tail=_no_tail, sigma_hat_sq_tail=_gaussian_tail(d * s * s),
        analytic_refs=AnalyticRefs(
            a_plus=1.0, a_minus=1.0, beta=tuple([0.0] * d), alpha=alpha,
            b_hat_l1=0.0, sigma_hat_sq_l1=d * s * s * SQRT_PI,
        ),
        description="Gaussian localized noise with linear relaxation b1 = -lam y",
        params={"d": d, "s": s, "lam": lam},
    )


def gaussian_longtime(d: int = 1, b_scale: float = 1.0, s: float = 1.0) -> CoefficientSet:
    """b1 = 0 with Gaussian b2 and sigma; the long-time limit model"""
    k = d
    b1, b1_jac = _linear_b1(0.0)
    beta = tuple([b_scale * SQRT_PI] + [0.0] * (d - 1))
    alpha = tuple(tuple(s * s * SQRT_PI if i == j else 0.0 for j in range(d)) for i in range(d))
    return CoefficientSet(
        name="gaussian_longtime", d=d, k=k,
        phi=_unit_phi(k), b1=b1, b1_jac=b1_jac,
        b2=_gaussian_b2(b_scale, d), sigma=_gaussian_sigma(s, d, k),
        b_hat=_gaussian_envelope(abs(b_scale)), sigma_hat_sq=_gaussian_envelope(d * s * s),
        c1=0.5, c2=2.0,
        b_hat_tail=_gaussian_tail(abs(b_scale)), sigma_hat_sq_tail=_gaussian_tail(d * s * s),
        analytic_refs=AnalyticRefs(
            a_plus=1.0, a_minus=1.0, beta=beta, alpha=alpha,
            b_hat_l1=abs(b_scale) * SQRT_PI, sigma_hat_sq_l1=d * s * s * SQRT_PI,
            limit_mean_slow=tuple([b_scale * math.sqrt(2.0)] + [0.0] * (d - 1)),
        ),
        description="b1 = 0, Gaussian drift and noise localized at the interface",
        params={"d": d, "b_scale": b_scale, "s": s},
    )


def periodic(b_scale: float = 0.0, s: float = 0.0, lam: float = 0.0) -> CoefficientSet:
    """|phi|^2 = 2 + sin(x); a+ = a- = sqrt(3)"""
    d, k = 1, 1
    b1, b1_jac = _linear_b1(lam)
    phi_sq = lambda x: 2.0 + np.sin(x)  # noqa: E731
    return CoefficientSet(
        name="periodic", d=d, k=k,
        phi=_scalar_phi(phi_sq, k), b1=b1, b1_jac=b1_jac,
        b2=_gaussian_b2(b_scale, d), sigma=_gaussian_sigma(s, d, k),
        b_hat=_gaussian_envelope(abs(b_scale)), sigma_hat_sq=_gaussian_envelope(s * s),
        c1=0.99, c2=3.01,
        b_hat_tail=_gaussian_tail(abs(b_scale)), sigma_hat_sq_tail=_gaussian_tail(s * s),
        analytic_refs=AnalyticRefs(a_plus=math.sqrt(3.0), a_minus=math.sqrt(3.0)),
        description="periodic fast diffusion coefficient 2 + sin(x)",
        params={"b_scale": b_scale, "s": s, "lam": lam},
    )


def two_sided(low: float = 1.0, high: float = 4.0, b_scale: float = 0.0, s: float = 0.0) -> CoefficientSet:
    """|phi|^2 = low for x < -1, high for x > 1, smooth and monotone in between"""
    d, k = 1, 1
    if low <= 0 or high <= 0:
        raise ConfigurationError("two_sided requires positive low and high")
    b1, b1_jac = _linear_b1(0.0)
    phi_sq = lambda x: low + (high - low) * smooth_step((np.asarray(x) + 1.0) / 2.0)  # noqa: E731
    return CoefficientSet(
        name="two_sided", d=d, k=k,
        phi=_scalar_phi(phi_sq, k), b1=b1, b1_jac=b1_jac,
        b2=_gaussian_b2(b_scale, d), sigma=_gaussian_sigma(s, d, k),
        b_hat=_gaussian_envelope(abs(b_scale)), sigma_hat_sq=_gaussian_envelope(s * s),
        c1=0.99 * min(low, high), c2=max(low, high) + 0.01,
        b_hat_tail=_gaussian_tail(abs(b_scale)), sigma_hat_sq_tail=_gaussian_tail(s * s),
        analytic_refs=AnalyticRefs(a_plus=high, a_minus=low),
        description="different constant fast diffusion on each side of the interface",
        params={"low": low, "high": high, "b_scale": b_scale, "s": s},
    )


def rotation(omega: float = 1.0, s: float = 0.0) -> CoefficientSet:
    """b1(y) = omega (y2, -y1) in the plane"""
    d, k = 2, 2

    def b1(y: np.ndarray) -> np.ndarray:
        return omega * np.stack([y[:, 1], -y[:, 0]], axis=-1)

    def b1_jac(y: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.array([[0.0, omega], [-omega, 0.0]]), (y.shape[0], 2, 2)).copy()

    return CoefficientSet(
        name="rotation", d=d, k=k,
        phi=_unit_phi(k), b1=b1, b1_jac=b1_jac,
        b2=_zero_b2(d), sigma=_gaussian_sigma(s, d, k),
        b_hat=_zero_envelope, sigma_hat_sq=_gaussian_envelope(d * s * s),
        c1=0.5, c2=2.0,
        b_hat_tail=_no_tail, sigma_hat_sq_tail=_gaussian_tail(d * s * s),
        analytic_refs=AnalyticRefs(
            a_plus=1.0, a_minus=1.0, beta=(0.0, 0.0),
            alpha=((s * s * SQRT_PI, 0.0), (0.0, s * s * SQRT_PI)),
        ),
        description="planar rotation as the unperturbed flow",
        params={"omega": omega, "s": s},
    )


def indicator(phi_sq: float = 2.0) -> CoefficientSet:
    """b2 = 1 on [-1, 1], sigma = 1 on [0, 2], constant |phi|^2"""
    d, k = 1, 1
    if phi_sq <= 0:
        raise ConfigurationError("indicator requires phi_sq > 0")
    b1, b1_jac = _linear_b1(0.0)

    def box(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return ((x >= lo) & (x <= hi)).astype(float)

    return CoefficientSet(
        name="indicator", d=d, k=k,
        phi=_scalar_phi(lambda x: np.full(np.shape(x), phi_sq), k), b1=b1, b1_jac=b1_jac,
        b2=lambda x, y: box(x, -1.0, 1.0)[:, None],
        sigma=lambda x, y: box(x, 0.0, 2.0)[:, None, None],
        b_hat=lambda x: box(x, -1.0, 1.0), sigma_hat_sq=lambda x: box(x, 0.0, 2.0),
        c1=0.99 * phi_sq, c2=1.01 * phi_sq,
        b_hat_tail=_no_tail, sigma_hat_sq_tail=_no_tail,
        breakpoints=(-1.0, 0.0, 1.0, 2.0),
        analytic_refs=AnalyticRefs(
            a_plus=phi_sq, a_minus=phi_sq, beta=(2.0 / phi_sq,), alpha=((2.0 / phi_sq,),),
            b_hat_l1=2.0, sigma_hat_sq_l1=2.0,
        ),
        description="rectangle perturbations with constant fast diffusion",
        params={"phi_sq": phi_sq},
    )


def odd_drift(b_scale: float = 1.0) -> CoefficientSet:
    """b2 odd in x against an even |phi|^2 = 1 + exp(-x^2); beta = 0"""
    d, k = 1, 1
    b1, b1_jac = _linear_b1(0.0)

    def b2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (b_scale * x * np.exp(-x ** 2))[:, None]

    return CoefficientSet(
        name="odd_drift", d=d, k=k,
        phi=_scalar_phi(lambda x: 1.0 + np.exp(-np.asarray(x) ** 2), k), b1=b1, b1_jac=b1_jac,
        b2=b2, sigma=_zero_sigma(d, k),
        b_hat=lambda x: abs(b_scale) * np.abs(x) * np.exp(-np.asarray(x) ** 2),
        sigma_hat_sq=_zero_envelope,
        c1=0.99, c2=2.01,
        b_hat_tail=lambda R: abs(b_scale) * math.exp(-R * R), sigma_hat_sq_tail=_no_tail,
        analytic_refs=AnalyticRefs(a_plus=1.0, a_minus=1.0, beta=(0.0,), alpha=((0.0,),)),
        description="odd localized drift, zero interface drift by symmetry",
        params={"b_scale": b_scale},
    )


@dataclass(frozen=True)
class ModelEntry:
    factory: Callable[..., CoefficientSet]
    summary: str


_INTEGER_PARAMS = {"d", "k"}

MODELS: Dict[str, ModelEntry] = {
    "trivial": ModelEntry(trivial, "no perturbation, |phi|^2 = 1"),
    "gaussian_drift": ModelEntry(gaussian_drift, "Gaussian b2, sigma = 0 (drift/local-time limit)"),
    "gaussian_diffusion": ModelEntry(gaussian_diffusion, "Gaussian sigma, b2 = 0 (diffusive deviation limit)"),
    "gaussian_longtime": ModelEntry(gaussian_longtime, "b1 = 0, Gaussian b2 and sigma (long-time limit)"),
    "periodic": ModelEntry(periodic, "|phi|^2 = 2 + sin x, a+- = sqrt 3"),
    "two_sided": ModelEntry(two_sided, "|phi|^2 from 1 to 4 across the interface"),
    "rotation": ModelEntry(rotation, "planar rotation flow, d = 2"),
    "indicator": ModelEntry(indicator, "rectangle b2 and sigma"),
    "odd_drift": ModelEntry(odd_drift, "odd b2, even |phi|^2, beta = 0"),
}


def list_models() -> List[str]:
    return sorted(MODELS)


def build_model(name: str, overrides: Dict[str, float] = None) -> CoefficientSet:
    """
    Build a bundled model by name.

    Args:
        name: registry key
        overrides: factory keyword parameters

    Raises:
        ConfigurationError: unknown model or parameter
    """
    entry = MODELS.get(name)
    if entry is None:
        raise ConfigurationError(f"unknown model '{name}'; available: {', '.join(list_models())}")
    params = {}
    accepted = entry.factory.__code__.co_varnames[: entry.factory.__code__.co_argcount]
    for key, value in (overrides or {}).items():
        if key not in accepted:
            raise ConfigurationError(f"model '{name}' has no parameter '{key}'; accepted: {', '.join(accepted)}")
        params[key] = int(value) if key in _INTEGER_PARAMS else float(value)
    logger.debug(f"Building model {name} with {params}")
    return entry.factory(**params)
