"""Rate fits and batch checks of the convergence inequalities on a trajectory."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bestresponse import BoundsCertificate
from .flow import Trajectory, _equilibrium_pair

FIT_FLOOR = 1e-13
MIN_FIT_POINTS = 10
RATE_FIELDS = ("lyapunov", "ni_upper", "ni_exact", "kl_to_eq", "tv2_to_eq")


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    n_points: int


def _least_squares(x: np.ndarray, y: np.ndarray, window) -> RateFit:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    # a series flat to rounding has no variance to explain
    flat = ss_tot <= len(y) * (1e-12 * max(1.0, float(np.max(np.abs(y))))) ** 2
    r2 = 1.0 if flat else max(0.0, 1.0 - ss_res / ss_tot)
    return RateFit(float(slope), float(intercept), r2, window, len(x))


def _usable(t, y, window, floor):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = window
    keep = (t >= lo) & (t <= hi) & np.isfinite(y) & (y > floor)
    if keep.sum() < MIN_FIT_POINTS:
        raise ValueError(
            f"only {int(keep.sum())} usable records in window {window}; "
            f"need {MIN_FIT_POINTS}")
    return t[keep], y[keep]


def fit_log_linear(t, y, window=None, floor: float = FIT_FLOOR) -> RateFit:
    """Least-squares line through ``(t, log y)`` for samples above ``floor``."""
    window = window or (-math.inf, math.inf)
    t, y = _usable(t, y, window, floor)
    return _least_squares(t, np.log(y), window)


def _series(trace: Trajectory, field: str):
    if field not in RATE_FIELDS:
        raise ValueError(f"cannot fit field {field!r}; pick one of {RATE_FIELDS}")
    return trace.times, trace.column(field)


def fit_exponential_rate(trace: Trajectory, field: str = "lyapunov", window=None,
                         floor: float = FIT_FLOOR) -> RateFit:
    """Fit ``log field(t) = slope * t + intercept``.

    The default window drops the transient ``t < t0 + 1/alpha``.
    """
    t, y = _series(trace, field)
    if window is None:
        window = (trace.t0 + 1.0 / trace.cfg.params.alpha, float(t[-1]))
    return fit_log_linear(t, y, window, floor)


def fit_power_rate(trace: Trajectory, field: str = "lyapunov", window=None,
                   floor: float = FIT_FLOOR) -> RateFit:
    """Fit ``log field = slope * log t + intercept`` (for rate-``alpha/t`` flows)."""
    t, y = _series(trace, field)
    if window is None:
        window = (max(trace.t0, 1e-300), float(t[-1]))
    t, y = _usable(t, y, window, floor)
    if np.any(t <= 0):
        raise ValueError("power-law fit needs positive times")
    return _least_squares(np.log(t), np.log(y), window)


@dataclass(frozen=True)
class CheckResult:
    check_name: str
    passed: bool
    worst_margin: float
    at_t: float | None
    at_index: int | None

    def to_dict(self) -> dict:
        margin = self.worst_margin if math.isfinite(self.worst_margin) else None
        return {"check_name": self.check_name, "pass": self.passed,
                "worst_margin": margin, "at_t": self.at_t,
                "at_index": self.at_index}


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[CheckResult, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.check_name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"pass": self.passed, "tol": self.tol,
                "checks": [c.to_dict() for c in self.checks]}


def _raw_kl(p, q, w) -> float:
    # densities are taken as stored, so corrupted records still evaluate
    pos = p > 0
    terms = q.copy()
    terms[pos] = p[pos] * np.log(p[pos] / q[pos]) - p[pos] + q[pos]
    return float(np.dot(w, terms))


def _raw_tv(p, q, w) -> float:
    return 0.5 * float(np.dot(w, np.abs(p - q)))


def _summarize(name, margins, times, tol) -> CheckResult:
    if not margins:
        return CheckResult(name, True, math.inf, None, None)
    arr = np.asarray(margins, dtype=float)
    i = int(np.argmin(arr))
    return CheckResult(name, bool(arr[i] >= -tol), float(arr[i]), float(times[i]), i)


def _clock(trace: Trajectory, t0: float, t1: float) -> float:
    """Elapsed time in the clock where the flow contracts at rate alpha."""
    if trace.cfg.scheme == "fictitious_play":
        return math.log(t1 / t0)
    return t1 - t0


def verify_inequalities(trace: Trajectory, certificate: BoundsCertificate,
                        equilibrium=None, alpha: float | None = None,
                        tol: float = 1e-9) -> VerificationReport:
    """Check every recorded state against the convergence inequalities.

    Checks needing the equilibrium are skipped when it is not given. Each
    margin is ``rhs - lhs`` of the inequality, so negative means violated.
    """
    alpha = trace.cfg.params.alpha if alpha is None else alpha
    half_var = trace.cfg.params.half_var
    recs = trace.records
    if any(r.nu is None for r in recs):
        raise ValueError("verification needs a trajectory with densities kept")
    wx, wy = trace.pi.space.weights, trace.rho.space.weights
    pi, rho = trace.pi.density, trace.rho.density
    times = [r.t for r in recs]
    checks = []

    # density bounds and mass, one margin per record
    margins = []
    for r in recs:
        w = r.decay_weight
        m = min(1e-10 - abs(float(np.dot(wx, r.nu)) - 1.0),
                1e-10 - abs(float(np.dot(wy, r.mu)) - 1.0))
        for dens, ref, d0, k, K in ((r.nu, pi, trace.nu0, certificate.k_psi,
                                     certificate.K_psi),
                                    (r.mu, rho, trace.mu0, certificate.k_phi,
                                     certificate.K_phi)):
            m = min(m, float(np.min(dens - (1 - w) * k * ref)))
            if math.isfinite(K):
                m = min(m, float(np.min((1 - w) * K * ref + w * d0 - dens)))
        margins.append(m)
    checks.append(_summarize("flow_density_bounds", margins, times, tol))

    lyap = [r.lyapunov for r in recs]
    contraction, monotone = [], []
    for a, b in zip(recs, recs[1:]):
        factor = math.exp(-alpha * _clock(trace, a.t, b.t))
        contraction.append(factor * a.lyapunov - b.lyapunov)
        monotone.append(a.lyapunov - b.lyapunov)
    checks.append(_summarize("lyapunov_contraction", contraction, times[1:], tol))
    checks.append(_summarize("lyapunov_monotone", monotone, times[1:], tol))
    checks.append(_summarize("jeffreys_dominates_kl",
                             [r.jeffreys - r.lyapunov for r in recs], times, tol))

    eq = _equilibrium_pair(equilibrium)
    if eq is not None:
        nu_s, mu_s = eq[0].values, eq[1].values
        kls = [_raw_kl(r.nu, nu_s, wx) + _raw_kl(r.mu, mu_s, wy) for r in recs]
        pinsker = [min(0.5 * _raw_kl(r.nu, nu_s, wx) - _raw_tv(r.nu, nu_s, wx) ** 2,
                       0.5 * _raw_kl(r.mu, mu_s, wy) - _raw_tv(r.mu, mu_s, wy) ** 2)
                   for r in recs]
        checks.append(_summarize("pinsker", pinsker, times, tol))

        # KL to the equilibrium decays like the initial Lyapunov value; 5% slack
        # absorbs the integrator error, transient records are skipped
        chain, chain_t = [], []
        for r, k in zip(recs, kls):
            if _clock(trace, trace.t0, r.t) >= 1.0 / alpha:
                bound = math.exp(-alpha * _clock(trace, trace.t0, r.t)) * lyap[0] * 1.05
                chain.append(0.5 * bound - 0.5 * k)
                chain_t.append(r.t)
        checks.append(_summarize("decay_chain", chain, chain_t, tol))

        sandwich = []
        for r, k in zip(recs, kls):
            mid = r.ni_exact if r.ni_exact is not None else r.ni_upper
            sandwich.append(min(mid - half_var * k, r.ni_upper - mid))
        checks.append(_summarize("ni_sandwich", sandwich, times, tol))

    return VerificationReport(tuple(checks), tol)
