"""Command-line entry point: ``mfbr <command> --config cfg.json --out dir``.

Exit codes: 0 on success (a non-converged solve is still a success), 2 for
configuration or input errors, 3 for numerical failures.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .bestresponse import (RegularizationParams, best_response_mu,
                           best_response_nu, bounds_certificate)
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (CheckResult, fit_exponential_rate, fit_power_rate,
                          verify_inequalities)
from .equilibrium import EquilibriumCache, ni_error, value
from .flow import (FlowConfig, PairState, fp_br_equivalence_check, simulate,
                   write_trace_csv)
from .measure import random_density

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stamp(cfg: ExperimentConfig) -> dict:
    return {"config": cfg.echo(), "seed": cfg.seed}


def _config_comment(cfg: ExperimentConfig) -> str:
    return "config " + json.dumps(_clean(_stamp(cfg)), sort_keys=True)


def _fit_dict(fit) -> dict:
    return {"slope": fit.slope, "intercept": fit.intercept,
            "r_squared": fit.r_squared, "window": list(fit.window),
            "n_points": fit.n_points}


def run_simulate(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.build_game()
    params = cfg.params
    rng = np.random.default_rng(cfg.seed)
    eq = EquilibriumCache().solve(game.objective, params, game.pi, game.rho,
                                  cfg.picard_config())
    init = cfg.initial_state(game, rng)
    fcfg = cfg.flow_config(keep_densities=False)
    traj = simulate(init, game.objective, game.refs, fcfg, equilibrium=eq)

    buf = io.StringIO()
    write_trace_csv(buf, traj, _config_comment(cfg))
    write_atomic(out / "trace.csv", buf.getvalue())

    window = cfg.data["fit_window"] or [1.0 / params.alpha, fcfg.t_end]
    try:
        fit, fit_error = _fit_dict(fit_exponential_rate(traj, "lyapunov", tuple(window))), None
    except ValueError as exc:
        fit, fit_error = None, str(exc)
    last = traj.records[-1]
    summary = {
        "final": {"t": last.t, "lyapunov": last.lyapunov, "ni_upper": last.ni_upper,
                  "ni_exact": last.ni_exact, "value": last.value,
                  "kl_to_eq": last.kl_to_eq, "tv2_to_eq": last.tv2_to_eq},
        "fit": fit, "fit_error": fit_error, "n_records": len(traj),
        "equilibrium_converged": eq.converged,
        **_stamp(cfg),
    }
    write_atomic(out / "summary.json", dumps(summary))
    return EXIT_OK


def run_solve(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.build_game()
    params = cfg.params
    res = EquilibriumCache().solve(game.objective, params, game.pi, game.rho,
                                   cfg.picard_config())
    payload = res.to_dict()
    payload["value"] = value(game.objective, res.nu_star, res.mu_star, params,
                             game.pi, game.rho)
    payload.update(_stamp(cfg))
    write_atomic(out / "equilibrium.json", dumps(payload))
    return EXIT_OK


def _anneal_row(game, sigma, pcfg, f_star, cache):
    try:
        params = RegularizationParams(sigma, 1.0)
        res = cache.solve(game.objective, params, game.pi, game.rho, pcfg)
        v = value(game.objective, res.nu_star, res.mu_star, params, game.pi, game.rho)
        status = "converged" if res.converged else "not_converged"
        return {"sigma": sigma, "value": v,
                "gap": None if f_star is None else v - f_star,
                "status": status, "iterations": res.iterations}
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return {"sigma": sigma, "value": None, "gap": None,
                "status": f"error: {exc}", "iterations": None}


def run_anneal(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.build_game()
    sigmas = [float(s) for s in cfg.data["anneal"]["sigma_list"]]
    f_star = cfg.data["anneal"]["f_star"]
    pcfg = cfg.picard_config()
    cache = EquilibriumCache()
    with ThreadPoolExecutor(max_workers=min(4, len(sigmas))) as pool:
        rows = list(pool.map(lambda s: _anneal_row(game, s, pcfg, f_star, cache), sigmas))

    buf = io.StringIO()
    buf.write(f"# {_config_comment(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    cols = ["sigma", "value", "gap", "status", "iterations"]
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r[c] is None else
                    (format(r[c], ".17g") if isinstance(r[c], float) else r[c])
                    for c in cols])
    write_atomic(out / "anneal.csv", buf.getvalue())
    return EXIT_OK


def _random_state_checks(game, params, eq, samples, rng, tol):
    cert = bounds_certificate(game.objective.c_nu, game.objective.c_mu, params.sigma)
    obj, pi, rho = game.objective, game.pi, game.rho
    gibbs, sandwich = [], []
    mode = "bilinear_exact" if obj.is_bilinear else "upper_bound"
    for _ in range(samples):
        nu = random_density(pi.space, rng)
        mu = random_density(rho.space, rng)
        psi = best_response_nu(obj, nu, mu, params, pi)
        phi = best_response_mu(obj, nu, mu, params, rho)
        m = math.inf
        for dens, ref, k, K in ((psi, pi, cert.k_psi, cert.K_psi),
                                (phi, rho, cert.k_phi, cert.K_phi)):
            ratio = dens.values / ref.density
            m = min(m, float(np.min(ratio - k)), float(np.min(K - ratio)))
        gibbs.append(m)
        rec = ni_error(obj, nu, mu, params, pi, rho, mode=mode, equilibrium=eq)
        mid = rec.exact if rec.exact is not None else rec.upper
        sandwich.append(min(mid - rec.lower, rec.upper - mid))
    out = []
    for name, margins in (("gibbs_bounds_random", gibbs), ("ni_sandwich_random", sandwich)):
        i = int(np.argmin(margins))
        out.append(CheckResult(name, margins[i] >= -tol, margins[i], None, i))
    return out


def run_verify(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.build_game()
    params = cfg.params
    tol = float(cfg.data["verify"]["tol"])
    rng = np.random.default_rng(cfg.seed)
    eq = EquilibriumCache().solve(game.objective, params, game.pi, game.rho,
                                  cfg.picard_config())
    init = cfg.initial_state(game, rng)
    traj = simulate(init, game.objective, game.refs, cfg.flow_config(), equilibrium=eq)
    cert = bounds_certificate(game.objective.c_nu, game.objective.c_mu, params.sigma)
    report = verify_inequalities(traj, cert, eq, params.alpha, tol)
    extra = _random_state_checks(game, params, eq, int(cfg.data["verify"]["samples"]),
                                 rng, tol)
    checks = [c.to_dict() for c in report.checks] + [c.to_dict() for c in extra]
    checks.append({"check_name": "equilibrium_converged", "pass": eq.converged,
                   "worst_margin": None, "at_t": None, "at_index": None})
    payload = {"pass": all(c["pass"] for c in checks), "tol": tol, "checks": checks,
               "certificate": {"k_psi": cert.k_psi, "K_psi": cert.K_psi,
                               "k_phi": cert.k_phi, "K_phi": cert.K_phi,
                               "tv_lipschitz_sum": cert.tv_lipschitz_sum,
                               "saturated": cert.saturated},
               **_stamp(cfg)}
    write_atomic(out / "verify.json", dumps(payload))
    return EXIT_OK


def run_fp_compare(cfg: ExperimentConfig, out: Path) -> int:
    game = cfg.build_game()
    params = cfg.params
    fp = cfg.data["fp_compare"]
    rng = np.random.default_rng(cfg.seed)
    init = cfg.initial_state(game, rng)
    n_cp = int(fp["checkpoints"])
    fcfg = cfg.flow_config(scheme="exponential")
    rep = fp_br_equivalence_check(game.objective, game.refs, fcfg, init.nu, init.mu,
                                  fp["horizon"], n_cp)
    half = FlowConfig(params, fcfg.tau / 2, "exponential", fcfg.t_end)
    rep_half = fp_br_equivalence_check(game.objective, game.refs, half, init.nu,
                                       init.mu, fp["horizon"], n_cp)
    ratio = (rep.max_discrepancy / rep_half.max_discrepancy
             if rep_half.max_discrepancy > 0 else None)

    lo, hi = (float(v) for v in fp["slope_window"])
    slope_cfg = FlowConfig(params, float(fp["slope_tau"]), "fictitious_play", hi - 1.0,
                           int(fp["slope_stride"]), keep_densities=False)
    traj = simulate(PairState(init.nu, init.mu, 1.0), game.objective, game.refs, slope_cfg)
    try:
        fit, fit_error = fit_power_rate(traj, "lyapunov", (lo, hi)), None
    except ValueError as exc:
        fit, fit_error = None, str(exc)
    target = [-1.1 * params.alpha, -0.9 * params.alpha]
    payload = {
        "equivalence": rep.to_dict(),
        "equivalence_half_tau": rep_half.to_dict(),
        "refinement_ratio": ratio,
        "fp_lyapunov_fit": None if fit is None else _fit_dict(fit),
        "fit_error": fit_error,
        "slope_target": target,
        "slope_in_target": bool(fit is not None and target[0] <= fit.slope <= target[1]),
        **_stamp(cfg),
    }
    write_atomic(out / "fp_compare.json", dumps(payload))
    return EXIT_OK


COMMANDS = {
    "simulate": run_simulate,
    "solve": run_solve,
    "anneal": run_anneal,
    "verify": run_verify,
    "fp-compare": run_fp_compare,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfbr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed (0 <= seed < 2**64)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = COMMANDS[args.command](cfg, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"{args.command}: wrote results to {args.out}")
    return code


if __name__ == "__main__":
    sys.exit(main())
