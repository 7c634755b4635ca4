"""Entropic best responses and their bound/Lipschitz certificates."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measure import Density, ReferenceMeasure, SpaceMismatchError, kl, logsumexp
from .objective import ObjectiveOracle

# exp() overflows a double just above 709.78
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class RegularizationParams:
    sigma: float
    alpha: float = 1.0

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be positive")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive")

    @property
    def inv_temp(self) -> float:
        """The tilt strength ``2 / sigma**2``."""
        return 2.0 / self.sigma ** 2

    @property
    def half_var(self) -> float:
        """The entropy weight ``sigma**2 / 2``."""
        return 0.5 * self.sigma ** 2


def gibbs_tilt(derivative: np.ndarray, sign: float, inv_temp: float,
               ref: ReferenceMeasure) -> tuple[Density, float]:
    """Density proportional to ``exp(sign * inv_temp * derivative - U)``.

    Returns the density and its log-partition ``log Z``.
    """
    derivative = np.asarray(derivative, dtype=float)
    if derivative.shape != ref.potential.shape:
        raise SpaceMismatchError("derivative does not match reference space")
    if not np.all(np.isfinite(derivative)):
        raise FloatingPointError("flat derivative has non-finite entries")
    logits = sign * inv_temp * derivative - ref.potential
    log_z = logsumexp(logits + ref.space.log_weights)
    return Density(ref.space, np.exp(logits - log_z)), log_z


def log_gibbs_tilt(derivative: np.ndarray, sign: float, inv_temp: float,
                   ref: ReferenceMeasure) -> np.ndarray:
    """Log of :func:`gibbs_tilt`'s density, without exponentiating."""
    logits = sign * inv_temp * np.asarray(derivative, dtype=float) - ref.potential
    return logits - logsumexp(logits + ref.space.log_weights)


def best_response_nu(oracle: ObjectiveOracle, nu: Density, mu: Density,
                     params: RegularizationParams, pi: ReferenceMeasure,
                     return_log_partition: bool = False):
    """Minimizer of the entropy-regularized linearization of F in nu."""
    psi, log_z = gibbs_tilt(oracle.dnu(nu, mu), -1.0, params.inv_temp, pi)
    return (psi, log_z) if return_log_partition else psi


def best_response_mu(oracle: ObjectiveOracle, nu: Density, mu: Density,
                     params: RegularizationParams, rho: ReferenceMeasure,
                     return_log_partition: bool = False):
    """Maximizer of the entropy-regularized linearization of F in mu."""
    phi, log_z = gibbs_tilt(oracle.dmu(nu, mu), 1.0, params.inv_temp, rho)
    return (phi, log_z) if return_log_partition else phi


@dataclass(frozen=True)
class BoundsCertificate:
    """Pointwise Gibbs bounds and TV-Lipschitz constants of the best responses.

    ``saturated`` is set when ``4C/sigma**2`` is too large to exponentiate;
    the affected constants are then ``inf``.
    """

    k_psi: float
    K_psi: float
    k_phi: float
    K_phi: float
    L_psi: float
    L_phi: float
    tv_lipschitz_sum: float
    saturated: bool = False

    @property
    def L(self) -> float:
        return self.L_psi / 2.0

    @property
    def L_prime(self) -> float:
        return self.L_phi / 2.0

    @property
    def contractive(self) -> bool:
        """Whether the undamped best-response map is a certified TV contraction."""
        return not self.saturated and self.tv_lipschitz_sum < 1.0


def _side(c: float, sigma: float) -> tuple[float, float, float, bool]:
    expo = 4.0 * c / sigma ** 2
    if expo > _EXP_LIMIT:
        return 0.0, math.inf, math.inf, True
    K = math.exp(expo)
    L = (2.0 / sigma ** 2) * K * (1.0 + K)
    return 1.0 / K, K, L, False


def bounds_certificate(c_nu: float, c_mu: float, sigma: float) -> BoundsCertificate:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if c_nu < 0 or c_mu < 0:
        raise ValueError("bound constants must be nonnegative")
    k_psi, K_psi, L_psi, s1 = _side(c_nu, sigma)
    k_phi, K_phi, L_phi, s2 = _side(c_mu, sigma)
    return BoundsCertificate(k_psi, K_psi, k_phi, K_phi, L_psi, L_phi,
                             (L_psi + L_phi) / 2.0, s1 or s2)


def lyapunov(nu: Density, mu: Density, psi: Density, phi: Density) -> float:
    """``KL(nu|psi) + KL(mu|phi)``; zero exactly at the fixed point."""
    return kl(nu, psi) + kl(mu, phi)


def lyapunov_at(oracle: ObjectiveOracle, nu: Density, mu: Density,
                params: RegularizationParams, pi: ReferenceMeasure,
                rho: ReferenceMeasure) -> float:
    psi = best_response_nu(oracle, nu, mu, params, pi)
    phi = best_response_mu(oracle, nu, mu, params, rho)
    return lyapunov(nu, mu, psi, phi)
