"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the "acceptance criteria" section of the terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from mfbr.bestresponse import (RegularizationParams, best_response_mu,
                               best_response_nu, bounds_certificate)
from mfbr.cli import main
from mfbr.diagnostics import fit_exponential_rate, fit_power_rate, verify_inequalities
from mfbr.equilibrium import PicardConfig, ni_error, ni_log_partition, picard_solve, value
from mfbr.flow import FlowConfig, PairState, fp_br_equivalence_check, simulate
from mfbr.games import asym_2x2, gaussian_grid_64, matching_pennies
from mfbr.measure import StrategySpace, random_density, tv
from mfbr.objective import check_flat_derivative, composite_objective

ALPHA = 1.0
WINDOW = (1.0, 8.0)
GAMES = {"matching_pennies": matching_pennies(), "gaussian_grid_64": gaussian_grid_64()}
ALL_GAMES = dict(GAMES, asym_2x2=asym_2x2())


def perturbed(game, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return PairState(random_density(game.pi.space, rng, scale, game.pi.density),
                     random_density(game.rho.space, rng, scale, game.rho.density))


def run_flow(game, sigma, tau, keep=True, eq=None, t_end=8.0):
    cfg = FlowConfig(RegularizationParams(sigma, ALPHA), tau, "exponential", t_end,
                     record_stride=max(1, round(0.01 / tau)), keep_densities=keep)
    return simulate(perturbed(game), game.objective, game.refs, cfg, equilibrium=eq)


@pytest.fixture(scope="module")
def base_runs():
    """sigma = 1 runs at tau and tau/2 for both decay games."""
    out = {}
    for name, game in GAMES.items():
        eq = picard_solve(game.objective, RegularizationParams(1.0), game.pi, game.rho)
        out[name] = {"eq": eq,
                     1e-3: run_flow(game, 1.0, 1e-3, eq=eq),
                     5e-4: run_flow(game, 1.0, 5e-4, keep=False)}
    return out


def test_exponential_lyapunov_decay(base_runs, report):
    ok, parts = True, []
    for name, runs in base_runs.items():
        f1 = fit_exponential_rate(runs[1e-3], "lyapunov", WINDOW)
        f2 = fit_exponential_rate(runs[5e-4], "lyapunov", WINDOW)
        drift = abs(f1.slope / f2.slope - 1)
        good = f1.slope <= -0.95 * ALPHA and f1.r_squared >= 0.99 and drift <= 0.01
        ok &= good
        parts.append(f"{name} slope={f1.slope:.4f} R2={f1.r_squared:.6f} "
                     f"tau/2 drift={drift:.2e}")
    assert report("[1] exponential Lyapunov decay", ok, "; ".join(parts))


def test_ni_rate_for_bilinear(base_runs, report):
    ok, parts = True, []
    for name, runs in base_runs.items():
        traj = runs[1e-3]
        ni = traj.column("ni_exact")
        upper = 0.5 * traj.column("lyapunov")
        pos = upper > 0
        rel = float(np.max(np.abs(ni[pos] - upper[pos]) / upper[pos]))
        ok &= rel <= 1e-10
        parts.append(f"{name} max rel |NI - s^2/2 L|={rel:.1e}")
    # sigma sweep: a smaller step keeps the discretization bias of the rate
    # below the 2% comparison band at sigma = 0.5
    for name, game in GAMES.items():
        slopes = [fit_exponential_rate(run_flow(game, s, 1e-4, keep=False),
                                       "ni_exact", WINDOW).slope for s in (0.5, 1.0, 2.0)]
        spread = (max(slopes) - min(slopes)) / abs(np.mean(slopes))
        ok &= spread <= 0.02
        parts.append(f"{name} NI slopes(s=0.5,1,2)=" +
                     ",".join(f"{s:.4f}" for s in slopes) + f" spread={spread:.2%}")
    assert report("[2] NI equals (s^2/2)L and decays at a sigma-free rate", ok, "; ".join(parts))


def test_sandwich_inequality(report):
    rng = np.random.default_rng(11)
    p = RegularizationParams(1.0)
    violations, n = 0, 0
    for game in ALL_GAMES.values():
        eq = picard_solve(game.objective, p, game.pi, game.rho)
        for _ in range(200):
            nu = random_density(game.pi.space, rng, 1.5)
            mu = random_density(game.rho.space, rng, 1.5)
            r = ni_error(game.objective, nu, mu, p, game.pi, game.rho,
                         mode="bilinear_exact", equilibrium=eq)
            violations += (r.lower > r.exact + 1e-12) or (r.exact > r.upper + 1e-12)
            n += 1
    assert report("[3] NI sandwich on random states", violations == 0,
                  f"{violations} violations in {n} states (3 games)")


def test_pinsker_chain(base_runs, report):
    ok, parts = True, []
    for name, runs in base_runs.items():
        traj = runs[1e-3]
        obj = GAMES[name].objective
        cert = bounds_certificate(obj.c_nu, obj.c_mu, 1.0)
        # equality cases (TV ~ 0) round to about -1e-17
        rep = verify_inequalities(traj, cert, runs["eq"], ALPHA, tol=1e-12)
        for check in ("pinsker", "decay_chain"):
            c = rep[check]
            ok &= c.passed
            parts.append(f"{name} {check} worst margin={c.worst_margin:.2e}")
    assert report("[4] Pinsker chain along trajectories", ok, "; ".join(parts))


def test_gibbs_and_flow_bounds(base_runs, report):
    rng = np.random.default_rng(5)
    p = RegularizationParams(1.0)
    bad = 0
    for game in ALL_GAMES.values():
        cert = bounds_certificate(game.objective.c_nu, game.objective.c_mu, 1.0)
        for _ in range(500):
            nu = random_density(game.pi.space, rng, 2.0)
            mu = random_density(game.rho.space, rng, 2.0)
            rp = best_response_nu(game.objective, nu, mu, p, game.pi).values / game.pi.density
            rf = best_response_mu(game.objective, nu, mu, p, game.rho).values / game.rho.density
            bad += not (np.all(rp >= cert.k_psi) and np.all(rp <= cert.K_psi)
                        and np.all(rf >= cert.k_phi) and np.all(rf <= cert.K_phi))
    flow_bad = []
    for name, runs in base_runs.items():
        g = GAMES[name]
        cert = bounds_certificate(g.objective.c_nu, g.objective.c_mu, 1.0)
        c = verify_inequalities(runs[1e-3], cert, None, ALPHA, tol=0.0)["flow_density_bounds"]
        flow_bad.append((name, c.passed, c.worst_margin))
    ok = bad == 0 and all(f[1] for f in flow_bad)
    detail = (f"{bad} Gibbs violations in 1500 best responses; flow envelopes " +
              ", ".join(f"{n} min margin={m:.2e}" for n, _, m in flow_bad))
    assert report("[5] Gibbs and flow density bounds", ok, detail)


def test_fixed_point_matches_flow_limit(report):
    p = RegularizationParams(1.0)
    ok, parts = True, []
    rng = np.random.default_rng(21)
    for name, game in ALL_GAMES.items():
        eq = picard_solve(game.objective, p, game.pi, game.rho)
        cfg = FlowConfig(p, 1e-2, "exponential", 40.0, record_stride=4000)
        end = simulate(perturbed(game, 1), game.objective, game.refs, cfg).final_state()
        gap = tv(end.nu, eq.nu_star) + tv(end.mu, eq.mu_star)
        foc = max(eq.foc_residual_nu, eq.foc_residual_mu)
        spread = 0.0
        for _ in range(20):
            init = (random_density(game.pi.space, rng, 2.0),
                    random_density(game.rho.space, rng, 2.0))
            r = picard_solve(game.objective, p, game.pi, game.rho, initial=init)
            spread = max(spread, tv(r.nu_star, eq.nu_star) + tv(r.mu_star, eq.mu_star))
        good = eq.converged and gap <= 1e-8 and foc <= 1e-10 and spread <= 1e-8
        ok &= good
        parts.append(f"{name} TV(flow@40, picard)={gap:.1e} FOC={foc:.1e} "
                     f"multistart spread={spread:.1e}")
    assert report("[6] fixed point equals flow limit, unique", ok, "; ".join(parts))


def test_fictitious_play_equivalence(report):
    game = GAMES["matching_pennies"]
    p = RegularizationParams(1.0, ALPHA)
    start = perturbed(game)
    reps = [fp_br_equivalence_check(game.objective, game.refs,
                                    FlowConfig(p, tau, t_end=1.0), start.nu, start.mu,
                                    math.e ** 2) for tau in (1e-3, 5e-4)]
    d1, d2 = reps[0].max_discrepancy, reps[1].max_discrepancy
    equiv_ok = d1 <= 5e-3 and 1.7 <= d1 / d2 <= 2.3

    cfg = FlowConfig(p, 1e-2, "fictitious_play", 999.0, record_stride=100,
                     keep_densities=False)
    traj = simulate(PairState(start.nu, start.mu, 1.0), game.objective, game.refs, cfg)
    fit = fit_power_rate(traj, "lyapunov", (10.0, 1000.0))
    slope_ok = -1.1 * ALPHA <= fit.slope <= -0.9 * ALPHA
    detail = (f"discrepancy={d1:.2e} (tau/2 ratio {d1 / d2:.3f}); FP log-log slope="
              f"{fit.slope:.4f} (R2={fit.r_squared:.6f}) vs band [-1.1, -0.9]")
    report("[7] fictitious play equivalence and O(alpha/t) slope", equiv_ok and slope_ok,
           detail)
    assert equiv_ok, detail
    assert slope_ok, ("Lyapunov of the fictitious-play flow is quadratic in the "
                      "deviation and falls like t^(-2 alpha); " + detail)


def test_value_convergence_as_sigma_vanishes(report):
    game = ALL_GAMES["asym_2x2"]
    sigmas = (1.0, 0.5, 0.25, 0.1)
    gaps = {}
    for tol in (1e-12, 1e-10):
        row = []
        for s in sigmas:
            p = RegularizationParams(s)
            eq = picard_solve(game.objective, p, game.pi, game.rho, PicardConfig(tol_tv=tol))
            row.append(abs(value(game.objective, eq.nu_star, eq.mu_star, p,
                                 game.pi, game.rho) - 1.5))
        gaps[tol] = row
    g = gaps[1e-12]
    stable = max(abs(a - b) for a, b in zip(g, gaps[1e-10])) <= 1e-8
    ok = all(a > b for a, b in zip(g, g[1:])) and g[-1] <= 0.05 and stable
    assert report("[8] value converges to 1.5 as sigma -> 0", ok,
                  "gaps " + ", ".join(f"s={s}: {v:.5f}" for s, v in zip(sigmas, g)) +
                  f"; tolerance-stable={stable}")


def test_oracle_cross_checks(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    games = list(ALL_GAMES.values())
    for i in range(100):
        game = games[i % 3]
        p = RegularizationParams([0.5, 1.0, 2.0][i % 3])
        nu = random_density(game.pi.space, rng, 1.5)
        mu = random_density(game.rho.space, rng, 1.5)
        exact = ni_error(game.objective, nu, mu, p, game.pi, game.rho,
                         mode="bilinear_exact").exact
        worst = max(worst, abs(exact - ni_log_partition(game.objective, nu, mu, p,
                                                        game.pi, game.rho)))
    s = StrategySpace.grid(-1, 1, 16)
    x = s.points[:, 0]
    comp = composite_objective(np.tanh(np.outer(x, x)), np.sin(2 * x), np.cos(x), 1.0, s, s)
    fd = check_flat_derivative(comp, eps=1e-3, trials=50, seed=0)
    ok = worst <= 1e-12 and fd.passed and fd.observed_order >= 1.8
    assert report("[9] closed-form NI and flat-derivative oracles", ok,
                  f"max |NI_exact - NI_logZ|={worst:.1e}; composite FD order="
                  f"{fd.observed_order:.3f} err={fd.max_error:.1e}")


def test_determinism(tmp_path, report):
    cfg = {"game": "gaussian_grid_64", "t_end": 2.0, "seed": 99,
           "anneal": {"sigma_list": [1.0, 0.5], "f_star": 0.0},
           "fp_compare": {"slope_tau": 0.1, "slope_stride": 10, "slope_window": [10, 200]},
           "verify": {"samples": 50}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outputs = {"simulate": ["trace.csv", "summary.json"], "solve": ["equilibrium.json"],
               "anneal": ["anneal.csv"], "verify": ["verify.json"],
               "fp-compare": ["fp_compare.json"]}
    same, t0 = True, time.time()
    for cmd, files in outputs.items():
        blobs = []
        for k in range(2):
            out = tmp_path / f"{cmd}{k}"
            assert main([cmd, "--config", str(path), "--out", str(out)]) == 0
            blobs.append([(out / f).read_bytes() for f in files])
        same &= blobs[0] == blobs[1]
    assert report("[10] byte-identical reruns", same,
                  f"5 commands x 2 runs, identical={same} ({time.time() - t0:.1f}s)")
