"""Time integration of the best-response and fictitious-play flows.

Both players relax toward their current best response::

    d nu_t = alpha (Psi(nu_t, mu_t) - nu_t) dt
    d mu_t = alpha (Phi(nu_t, mu_t) - mu_t) dt

Every step evaluates Psi and Phi at the same incoming state (Jacobi update)
and writes the new state as a convex combination of the old state and the
best responses, so positivity and unit mass are preserved.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .bestresponse import (RegularizationParams, best_response_mu,
                           best_response_nu, lyapunov)
from .measure import (Density, InfiniteDivergenceError, ReferenceMeasure,
                      jeffreys, kl, tv)
from .objective import ObjectiveOracle

SCHEMES = ("exponential", "explicit_euler", "fictitious_play")


@dataclass(frozen=True)
class PairState:
    nu: Density
    mu: Density
    t: float = 0.0

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("flow time must be nonnegative")


@dataclass(frozen=True)
class FlowConfig:
    params: RegularizationParams
    tau: float = 1e-3
    scheme: str = "exponential"
    t_end: float = 10.0
    record_stride: int = 1
    keep_densities: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive")
        if not self.t_end >= self.tau:
            raise ValueError("t_end must be >= tau")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.scheme == "explicit_euler" and self.params.alpha * self.tau > 1:
            raise ValueError("explicit Euler needs alpha * tau <= 1 to stay positive")


def _mix(state: PairState, psi: Density, phi: Density, c: float, t_new: float) -> PairState:
    keep = 1.0 - c
    nu = Density(state.nu.space, keep * state.nu.values + c * psi.values)
    mu = Density(state.mu.space, keep * state.mu.values + c * phi.values)
    return PairState(nu, mu, t_new)


def _responses(state, oracle, refs, params):
    pi, rho = refs
    psi = best_response_nu(oracle, state.nu, state.mu, params, pi)
    phi = best_response_mu(oracle, state.nu, state.mu, params, rho)
    return psi, phi


def _euler_weight(alpha, tau, t):
    return alpha * tau


def _exp_weight(alpha, tau, t):
    return -math.expm1(-alpha * tau)


def _fp_weight(alpha, tau, t):
    if not t > 0:
        raise ValueError("fictitious play needs a strictly positive start time")
    # 1 - (t / (t + tau))**alpha, exact for a frozen best response
    return -math.expm1(-alpha * math.log1p(tau / t))


_WEIGHTS = {"explicit_euler": _euler_weight, "exponential": _exp_weight,
            "fictitious_play": _fp_weight}


def _step(state, oracle, refs, params, tau, scheme, responses=None):
    psi, phi = responses or _responses(state, oracle, refs, params)
    c = _WEIGHTS[scheme](params.alpha, tau, state.t)
    return _mix(state, psi, phi, c, state.t + tau)


def step_explicit_euler(state: PairState, oracle: ObjectiveOracle, refs,
                        cfg: FlowConfig) -> PairState:
    return _step(state, oracle, refs, cfg.params, cfg.tau, "explicit_euler")


def step_exponential(state: PairState, oracle: ObjectiveOracle, refs,
                     cfg: FlowConfig) -> PairState:
    """Duhamel step with the best responses frozen over ``[t, t + tau]``."""
    return _step(state, oracle, refs, cfg.params, cfg.tau, "exponential")


def step_fictitious_play(state: PairState, oracle: ObjectiveOracle, refs,
                         cfg: FlowConfig) -> PairState:
    """One step of the rate ``alpha / t`` flow, exact for a frozen best response."""
    return _step(state, oracle, refs, cfg.params, cfg.tau, "fictitious_play")


@dataclass
class Record:
    t: float
    lyapunov: float
    jeffreys: float
    ni_upper: float
    value: float
    decay_weight: float
    kl_to_eq: float | None = None
    tv2_to_eq: float | None = None
    ni_exact: float | None = None
    kl_psi: float | None = None
    nu: np.ndarray | None = None
    mu: np.ndarray | None = None


@dataclass
class Trajectory:
    """Recorded states of one run plus what is needed to re-check it."""

    records: list[Record]
    cfg: FlowConfig
    pi: ReferenceMeasure
    rho: ReferenceMeasure
    nu0: np.ndarray
    mu0: np.ndarray
    t0: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name)
                         for r in self.records], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def final_state(self) -> PairState:
        r = self.records[-1]
        if r.nu is None:
            raise ValueError("densities were not kept for this trajectory")
        return PairState(Density(self.pi.space, r.nu), Density(self.rho.space, r.mu), r.t)

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            write_trace_csv(fh, self, header_comment)

    def densities_to_csv(self, path_nu, path_mu) -> None:
        """Side-by-side matrices: one column per record, one row per point."""
        for path, attr in ((path_nu, "nu"), (path_mu, "mu")):
            cols = [getattr(r, attr) for r in self.records]
            if any(c is None for c in cols):
                raise ValueError("densities were not kept for this trajectory")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([f"t={_fmt(r.t)}" for r in self.records])
                for row in np.column_stack(cols):
                    w.writerow([_fmt(v) for v in row])


TRACE_HEADER = ["t", "lyapunov", "ni_upper", "value", "kl_to_eq", "tv2_to_eq"]


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_trace_csv(fh, traj: Trajectory, header_comment: str | None = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in traj.records:
        w.writerow([_fmt(r.t), _fmt(r.lyapunov), _fmt(r.ni_upper), _fmt(r.value),
                    _fmt(r.kl_to_eq), _fmt(r.tv2_to_eq)])


def _equilibrium_pair(equilibrium):
    if equilibrium is None:
        return None
    if hasattr(equilibrium, "nu_star"):
        return equilibrium.nu_star, equilibrium.mu_star
    if isinstance(equilibrium, PairState):
        return equilibrium.nu, equilibrium.mu
    nu, mu = equilibrium
    return nu, mu


def _jeffreys_or_inf(state, psi, phi) -> float:
    # a state with zeros (e.g. a point mass) has KL(psi|nu) = inf
    try:
        return jeffreys(state.nu, psi) + jeffreys(state.mu, phi)
    except InfiniteDivergenceError:
        return math.inf


def _record(state, psi, phi, oracle, refs, params, weight, eq, keep):
    from .equilibrium import ni_error, value

    pi, rho = refs
    lyap = lyapunov(state.nu, state.mu, psi, phi)
    rec = Record(
        t=state.t,
        lyapunov=lyap,
        jeffreys=_jeffreys_or_inf(state, psi, phi),
        ni_upper=params.half_var * lyap,
        value=value(oracle, state.nu, state.mu, params, pi, rho),
        decay_weight=weight,
        kl_psi=kl(state.nu, psi),
    )
    if oracle.is_bilinear:
        rec.ni_exact = ni_error(oracle, state.nu, state.mu, params, pi, rho,
                                mode="bilinear_exact").exact
    if eq is not None:
        nu_s, mu_s = eq
        rec.kl_to_eq = kl(state.nu, nu_s) + kl(state.mu, mu_s)
        rec.tv2_to_eq = tv(state.nu, nu_s) ** 2 + tv(state.mu, mu_s) ** 2
    if keep:
        rec.nu = state.nu.values
        rec.mu = state.mu.values
    return rec


def simulate(initial: PairState, oracle: ObjectiveOracle, refs, cfg: FlowConfig,
             equilibrium=None) -> Trajectory:
    """Integrate to ``initial.t + t_end`` recording every ``record_stride`` steps.

    The last step is always recorded. ``decay_weight`` in each record is the
    product of the per-step weights kept on the initial condition
    (``exp(-alpha t)`` for the exponential scheme).
    """
    if cfg.scheme != "fictitious_play" and initial.t != 0:
        raise ValueError("simulate starts at t = 0")
    params = cfg.params
    eq = _equilibrium_pair(equilibrium)
    n_steps = max(1, int(round(cfg.t_end / cfg.tau)))
    state = initial
    weight = 1.0
    records = []
    for k in range(n_steps + 1):
        psi, phi = _responses(state, oracle, refs, params)
        if k % cfg.record_stride == 0 or k == n_steps:
            records.append(_record(state, psi, phi, oracle, refs, params, weight,
                                   eq, cfg.keep_densities))
        if k == n_steps:
            break
        c = _WEIGHTS[cfg.scheme](params.alpha, cfg.tau, state.t)
        weight *= 1.0 - c
        # t from the step index so long runs do not accumulate drift
        state = _mix(state, psi, phi, c, initial.t + (k + 1) * cfg.tau)
    return Trajectory(records, cfg, refs[0], refs[1], initial.nu.values,
                      initial.mu.values, initial.t,
                      meta={"scheme": cfg.scheme, "alpha": params.alpha,
                            "sigma": params.sigma, "tau": cfg.tau})


def _advance_to(state, target, oracle, refs, params, tau, scheme):
    """Step with size ``tau`` but land exactly on ``target``."""
    start = state.t
    if target <= start:
        return state
    n = max(1, math.ceil((target - start) / tau - 1e-9))
    for i in range(n):
        t_next = target if i == n - 1 else start + (i + 1) * tau
        state = _step(state, oracle, refs, params, t_next - state.t, scheme)
    return PairState(state.nu, state.mu, target)


@dataclass
class EquivalenceReport:
    tau: float
    horizon: float
    checkpoints: list[float]
    discrepancies: list[float]
    max_discrepancy: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        return {"tau": self.tau, "horizon": self.horizon,
                "checkpoints": self.checkpoints,
                "discrepancies": self.discrepancies,
                "max_discrepancy": self.max_discrepancy,
                "tolerance": self.tolerance, "passed": self.passed}


def fp_br_equivalence_check(oracle: ObjectiveOracle, refs, cfg: FlowConfig,
                            nu0: Density, mu0: Density, horizon: float,
                            n_checkpoints: int = 20,
                            tolerance_factor: float = 5.0) -> EquivalenceReport:
    """Compare fictitious play on ``[1, horizon]`` with the best-response flow
    on ``[0, log(horizon)]`` from the same initial pair.

    Both runs use step ``cfg.tau`` in their own clock and land exactly on the
    checkpoints ``t_j = horizon**(j/n)``. The reported discrepancy at ``t_j`` is
    ``TV(nu_fp, nu_br) + TV(mu_fp, mu_br)``; it is first order in ``tau`` and is
    declared acceptable up to ``tolerance_factor * tau``.
    """
    if not horizon > 1:
        raise ValueError("horizon must exceed the fictitious-play start time 1")
    params = cfg.params
    log_h = math.log(horizon)
    fp = PairState(nu0, mu0, 1.0)
    br = PairState(nu0, mu0, 0.0)
    cps, discs = [], []
    for j in range(1, n_checkpoints + 1):
        s = log_h * j / n_checkpoints
        t = horizon if j == n_checkpoints else math.exp(s)
        br = _advance_to(br, s, oracle, refs, params, cfg.tau, "exponential")
        fp = _advance_to(fp, t, oracle, refs, params, cfg.tau, "fictitious_play")
        cps.append(t)
        discs.append(tv(fp.nu, br.nu) + tv(fp.mu, br.mu))
    worst = max(discs)
    tol = tolerance_factor * cfg.tau
    return EquivalenceReport(cfg.tau, horizon, cps, discs, worst, tol, worst <= tol)
