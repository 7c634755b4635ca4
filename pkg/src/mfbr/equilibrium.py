"""Mixed Nash equilibria of the regularized game and their error measures."""
from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp as _scipy_lse

from .bestresponse import (RegularizationParams, best_response_mu,
                           best_response_nu, bounds_certificate, gibbs_tilt,
                           log_gibbs_tilt, lyapunov)
from .flow import _equilibrium_pair
from .measure import Density, ReferenceMeasure, kl, tv
from .objective import BilinearObjective, ObjectiveOracle


def value(oracle: ObjectiveOracle, nu: Density, mu: Density,
          params: RegularizationParams, pi: ReferenceMeasure,
          rho: ReferenceMeasure) -> float:
    """Regularized payoff ``F + (sigma^2/2)(KL(nu|pi) - KL(mu|rho))``."""
    return (oracle.value(nu, mu)
            + params.half_var * (kl(nu, pi.as_density()) - kl(mu, rho.as_density())))


@dataclass(frozen=True)
class PicardConfig:
    """Damped fixed-point iteration settings.

    ``damping=1`` is the plain best-response map. With ``newton=True`` the
    solver switches to Newton's method on the same fixed-point equation once
    the damped iteration stops making progress (the damped map contracts
    arbitrarily slowly as sigma shrinks).
    """

    damping: float = 0.5
    tol_tv: float = 1e-12
    max_iter: int = 10_000
    newton: bool = True
    stall_window: int = 50
    stall_ratio: float = 0.5

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not self.tol_tv > 0:
            raise ValueError("tol_tv must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class EquilibriumResult:
    nu_star: Density
    mu_star: Density
    iterations: int
    final_tv_residual: float
    foc_residual_nu: float
    foc_residual_mu: float
    converged: bool
    residual_history: list[float] = field(default_factory=list)
    picard_iterations: int = 0
    newton_iterations: int = 0
    tv_lipschitz_sum: float = math.nan
    certified_contraction: bool = False
    sigma: float = math.nan
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nu_star": [float(v) for v in self.nu_star.values],
            "mu_star": [float(v) for v in self.mu_star.values],
            "iterations": self.iterations,
            "picard_iterations": self.picard_iterations,
            "newton_iterations": self.newton_iterations,
            "final_tv_residual": self.final_tv_residual,
            "foc_residual_nu": self.foc_residual_nu,
            "foc_residual_mu": self.foc_residual_mu,
            "converged": self.converged,
            "sigma": self.sigma,
            "tv_lipschitz_sum": self.tv_lipschitz_sum,
            "certified_contraction": self.certified_contraction,
            "residual_history": [float(r) for r in self.residual_history],
            "config": self.config,
        }


def _residual(oracle, nu, mu, params, pi, rho):
    psi = best_response_nu(oracle, nu, mu, params, pi)
    phi = best_response_mu(oracle, nu, mu, params, rho)
    return tv(nu, psi) + tv(mu, phi), psi, phi


class _LogSystem:
    """Fixed-point equation in log coordinates for Newton's method.

    Unknowns ``z = (u, v)`` with ``nu = exp(u)/Z``. The residual
    ``u - log Psi(nu, mu)`` is not normalized, so a constant shift of ``u``
    moves the residual and the Jacobian ``I - J`` stays nonsingular.
    """

    def __init__(self, oracle, params, pi, rho):
        self.oracle, self.params, self.pi, self.rho = oracle, params, pi, rho
        self.nx = pi.space.size

    def densities(self, z):
        return (Density.from_log(self.pi.space, z[:self.nx]),
                Density.from_log(self.rho.space, z[self.nx:]))

    def __call__(self, z):
        nu, mu = self.densities(z)
        lp = log_gibbs_tilt(self.oracle.dnu(nu, mu), -1.0, self.params.inv_temp, self.pi)
        lf = log_gibbs_tilt(self.oracle.dmu(nu, mu), 1.0, self.params.inv_temp, self.rho)
        return np.concatenate([z[:self.nx] - lp, z[self.nx:] - lf])

    def jacobian(self, z, h=1e-6):
        n = len(z)
        jac = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            jac[:, j] = (self(z + e) - self(z - e)) / (2 * h)
        return jac


def _newton_step(system, z):
    r = system(z)
    r0 = float(np.linalg.norm(r))
    jac = system.jacobian(z)
    try:
        dz = np.linalg.solve(jac, -r)
    except np.linalg.LinAlgError:
        dz = np.linalg.lstsq(jac, -r, rcond=None)[0]
    step = 1.0
    while step > 1e-10:
        z_new = z + step * dz
        r_new = float(np.linalg.norm(system(z_new)))
        if math.isfinite(r_new) and r_new < (1 - 1e-4 * step) * r0:
            return z_new
        step *= 0.5
    return None


def picard_solve(oracle: ObjectiveOracle, params: RegularizationParams,
                 pi: ReferenceMeasure, rho: ReferenceMeasure,
                 cfg: PicardConfig | None = None, initial=None) -> EquilibriumResult:
    """Locate the fixed point ``nu = Psi(nu, mu)``, ``mu = Phi(nu, mu)``.

    Each iteration evaluates both best responses once; the state is then moved
    a fraction ``damping`` of the way toward them. Non-convergence within
    ``max_iter`` is reported in the result, never raised.
    """
    cfg = cfg or PicardConfig()
    if initial is None:
        nu, mu = pi.as_density(), rho.as_density()
    elif hasattr(initial, "nu"):
        nu, mu = initial.nu, initial.mu
    else:
        nu, mu = initial
    d = cfg.damping
    history = []
    converged = False
    n_picard = n_newton = 0
    mode = "picard"
    system = None
    z = None
    best = (math.inf, nu, mu)

    for it in range(1, cfg.max_iter + 1):
        r, psi, phi = _residual(oracle, nu, mu, params, pi, rho)
        history.append(r)
        if r < best[0]:
            best = (r, nu, mu)
        if r <= cfg.tol_tv:
            converged = True
            break
        if it == cfg.max_iter:
            break
        if mode == "picard" and cfg.newton:
            stalled = not math.isfinite(r)
            w = cfg.stall_window
            if len(history) > w and r > cfg.stall_ratio * history[-1 - w]:
                stalled = True
            if stalled:
                mode = "newton"
                system = _LogSystem(oracle, params, pi, rho)
                _, nu, mu = best
                tiny = np.finfo(float).tiny
                z = np.log(np.maximum(np.concatenate([nu.values, mu.values]), tiny))
        if mode == "picard":
            nu = Density(nu.space, (1 - d) * nu.values + d * psi.values)
            mu = Density(mu.space, (1 - d) * mu.values + d * phi.values)
            n_picard += 1
        else:
            z_new = _newton_step(system, z)
            n_newton += 1
            if z_new is None:
                # no descent possible: rounding floor reached
                nu, mu = system.densities(z)
                r, _, _ = _residual(oracle, nu, mu, params, pi, rho)
                history.append(r)
                converged = r <= cfg.tol_tv
                break
            z = z_new
            nu, mu = system.densities(z)

    r_final = history[-1]
    r_nu, r_mu = first_order_residual(oracle, nu, mu, params, pi, rho)
    cert = bounds_certificate(oracle.c_nu, oracle.c_mu, params.sigma)
    return EquilibriumResult(
        nu_star=nu, mu_star=mu, iterations=len(history),
        final_tv_residual=r_final, foc_residual_nu=r_nu, foc_residual_mu=r_mu,
        converged=converged, residual_history=history,
        picard_iterations=n_picard, newton_iterations=n_newton,
        tv_lipschitz_sum=cert.tv_lipschitz_sum,
        certified_contraction=cert.contractive and cfg.damping == 1.0,
        sigma=params.sigma, config=asdict(cfg))


def first_order_residual(oracle: ObjectiveOracle, nu: Density, mu: Density,
                         params: RegularizationParams, pi: ReferenceMeasure,
                         rho: ReferenceMeasure) -> tuple[float, float]:
    """Spread of the first-order-condition expressions, which are constant
    at the equilibrium.

    Returns the nu-weighted standard deviation of
    ``dF/dnu + (sigma^2/2) log(nu/pi)`` and the mu-weighted one of
    ``dF/dmu - (sigma^2/2) log(mu/rho)``.
    """
    if np.any(nu.values <= 0) or np.any(mu.values <= 0):
        raise ValueError("first-order residual needs strictly positive densities")
    g = oracle.dnu(nu, mu) + params.half_var * (np.log(nu.values) + pi.potential)
    h = oracle.dmu(nu, mu) - params.half_var * (np.log(mu.values) + rho.potential)
    return _weighted_std(g, nu), _weighted_std(h, mu)


def _weighted_std(g, dens: Density) -> float:
    p = dens.space.weights * dens.values
    mean = float(np.dot(p, g))
    return math.sqrt(max(float(np.dot(p, (g - mean) ** 2)), 0.0))


@dataclass
class NIRecord:
    mode: str
    upper: float
    exact: float | None = None
    lower: float | None = None


def ni_error(oracle: ObjectiveOracle, nu: Density, mu: Density,
             params: RegularizationParams, pi: ReferenceMeasure,
             rho: ReferenceMeasure, mode: str = "upper_bound",
             equilibrium=None) -> NIRecord:
    """Nikaido-Isoda error or its bounds.

    ``upper`` is ``(sigma^2/2)`` times the Lyapunov function. In
    ``bilinear_exact`` mode the exact error is also returned (it coincides with
    ``upper`` for bilinear payoffs, computed from the kernel directly). With
    an equilibrium, ``lower = (sigma^2/2)(KL(nu|nu*) + KL(mu|mu*))``.
    """
    if mode not in ("upper_bound", "bilinear_exact"):
        raise ValueError(f"unknown NI mode {mode!r}")
    psi = best_response_nu(oracle, nu, mu, params, pi)
    phi = best_response_mu(oracle, nu, mu, params, rho)
    rec = NIRecord(mode, params.half_var * lyapunov(nu, mu, psi, phi))
    if mode == "bilinear_exact":
        if not isinstance(oracle, BilinearObjective):
            raise TypeError("bilinear_exact mode needs a BilinearObjective")
        psi_b, _ = gibbs_tilt(oracle.kernel @ (oracle.y_space.weights * mu.values),
                              -1.0, params.inv_temp, pi)
        phi_b, _ = gibbs_tilt((oracle.x_space.weights * nu.values) @ oracle.kernel,
                              1.0, params.inv_temp, rho)
        rec.exact = params.half_var * (kl(nu, psi_b) + kl(mu, phi_b))
    if equilibrium is not None:
        nu_s, mu_s = _equilibrium_pair(equilibrium)
        rec.lower = params.half_var * (kl(nu, nu_s) + kl(mu, mu_s))
    return rec


def ni_log_partition(obj: BilinearObjective, nu: Density, mu: Density,
                     params: RegularizationParams, pi: ReferenceMeasure,
                     rho: ReferenceMeasure) -> float:
    """Nikaido-Isoda error of a bilinear game from the inner problems' values.

    ``max_mu' V(nu, mu') = (s^2/2)(KL(nu|pi) + log Z'(nu))`` and
    ``min_nu' V(nu', mu) = -(s^2/2)(KL(mu|rho) + log Z(mu))`` by the Gibbs
    variational principle. Evaluated with scipy's log-sum-exp and a direct
    entropy sum, independently of the best-response code path.
    """
    beta = params.inv_temp
    wx, wy = obj.x_space.weights, obj.y_space.weights
    a, b = nu.values, mu.values
    log_z_mu = _scipy_lse(-beta * (obj.kernel @ (wy * b)) - pi.potential, b=wx)
    log_z_nu = _scipy_lse(beta * ((wx * a) @ obj.kernel) - rho.potential, b=wy)
    ent_nu = float(np.sum(wx[a > 0] * a[a > 0] * (np.log(a[a > 0]) + pi.potential[a > 0])))
    ent_mu = float(np.sum(wy[b > 0] * b[b > 0] * (np.log(b[b > 0]) + rho.potential[b > 0])))
    return params.half_var * (ent_nu + ent_mu + log_z_nu + log_z_mu)


class EquilibriumCache:
    """Thread-safe memo of solved equilibria keyed by game, sigma and grid."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict = {}

    def _key(self, oracle, params, pi, rho, cfg):
        return (oracle.cache_key(), params.sigma, pi.potential.tobytes(),
                rho.potential.tobytes(), pi.space.points.tobytes(),
                rho.space.points.tobytes(), cfg)

    def solve(self, oracle, params, pi, rho, cfg: PicardConfig | None = None):
        cfg = cfg or PicardConfig()
        key = self._key(oracle, params, pi, rho, cfg)
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            return hit
        result = picard_solve(oracle, params, pi, rho, cfg)
        with self._lock:
            self._store.setdefault(key, result)
            return self._store[key]

    def __len__(self):
        with self._lock:
            return len(self._store)


default_cache = EquilibriumCache()
