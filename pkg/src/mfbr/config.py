"""JSON experiment configuration: parsing, validation and object construction.

A config names either a builtin game::

    {"game": "asym_2x2", "sigma": 0.5}

or spells out the spaces and the objective::

    {"spaces": {"x": {"kind": "grid", "bounds": [-3, 3], "n_points": 32,
                      "potential": {"kind": "gaussian", "mean": 0, "std": 1}},
                "y": {"kind": "finite", "n_points": 2}},
     "objective": {"kind": "bilinear", "kernel_file": "kernel.csv"}}

Every other key has a default (see ``DEFAULTS``). Relative file paths are
resolved against the config file's directory. Errors carry the line of the
offending key when it can be located.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bestresponse import RegularizationParams
from .equilibrium import PicardConfig
from .flow import SCHEMES, FlowConfig, PairState
from .games import BUILTIN_GAMES, Game, builtin_game
from .measure import (Density, StrategySpace, gaussian_reference,
                      normalize_reference, random_density, uniform_reference)
from .objective import BilinearObjective, CompositeObjective, load_kernel_csv

DEFAULTS = {
    "sigma": 1.0,
    "alpha": 1.0,
    "scheme": "exponential",
    "tau": 1e-3,
    "t_end": 10.0,
    "record_stride": 10,
    "seed": 0,
    "fit_window": None,
    "initial": {"kind": "random", "scale": 0.5},
    "picard": {"damping": 0.5, "tol_tv": 1e-12, "max_iter": 10000},
    "anneal": {"sigma_list": [1.0, 0.5, 0.25, 0.1], "f_star": None},
    "fp_compare": {"horizon": math.e ** 2, "checkpoints": 20,
                   "slope_tau": 0.01, "slope_window": [10.0, 1000.0],
                   "slope_stride": 100},
    "verify": {"tol": 1e-9, "samples": 500},
}
TOP_KEYS = set(DEFAULTS) | {"game", "spaces", "objective"}
MAX_SEED = 2 ** 64 - 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "config"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


@dataclass
class ExperimentConfig:
    """Resolved config (defaults filled in) plus where it came from."""

    data: dict
    text: str = ""
    source: str = "config"
    base_dir: Path = Path(".")

    def error(self, message: str, key: str | None = None) -> ConfigError:
        line = _line_of(self.text, key) if key else None
        return ConfigError(message, line, self.source)

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def params(self) -> RegularizationParams:
        return RegularizationParams(self.data["sigma"], self.data["alpha"])

    def flow_config(self, **overrides) -> FlowConfig:
        d = self.data
        kw = dict(params=self.params, tau=d["tau"], scheme=d["scheme"],
                  t_end=d["t_end"], record_stride=d["record_stride"])
        kw.update(overrides)
        return FlowConfig(**kw)

    def picard_config(self) -> PicardConfig:
        return PicardConfig(**self.data["picard"])

    def echo(self) -> dict:
        return copy.deepcopy(self.data)

    def build_game(self) -> Game:
        return _build_game(self)

    def initial_state(self, game: Game, rng: np.random.Generator) -> PairState:
        spec = self.data["initial"]
        kind = spec.get("kind")
        if kind == "reference":
            return PairState(game.pi.as_density(), game.rho.as_density())
        if kind == "random":
            scale = spec.get("scale", 0.5)
            return PairState(
                random_density(game.pi.space, rng, scale, game.pi.density),
                random_density(game.rho.space, rng, scale, game.rho.density))
        try:
            return PairState(Density(game.pi.space, spec["nu"]),
                             Density(game.rho.space, spec["mu"]))
        except (KeyError, ValueError) as exc:
            raise self.error(f"bad initial table: {exc}", "initial") from None


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(out.get(k), dict) and isinstance(v, dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = v
    return out


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent, seed)


def parse_config(text: str, source: str = "config", base_dir=".",
                 seed: int | None = None) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno, source) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", 1, source)
    cfg = ExperimentConfig(_merge(DEFAULTS, raw), text, source, Path(base_dir))
    unknown = sorted(set(raw) - TOP_KEYS)
    if unknown:
        raise cfg.error(f"unknown key {unknown[0]!r}", unknown[0])
    if seed is not None:
        cfg.data["seed"] = seed
    _validate(cfg)
    return cfg


def _number(cfg, key, value, positive=True):
    if isinstance(value, bool) or not isinstance(value, (int, float)) \
            or not math.isfinite(value):
        raise cfg.error(f"{key} must be a finite number", key)
    if positive and not value > 0:
        raise cfg.error(f"{key} must be positive", key)
    return float(value)


def _validate(cfg: ExperimentConfig) -> None:
    d = cfg.data
    if "game" in d:
        if d["game"] not in BUILTIN_GAMES:
            raise cfg.error(f"unknown builtin game {d['game']!r}", "game")
        if "spaces" in d or "objective" in d:
            raise cfg.error("give either 'game' or 'spaces' + 'objective'", "game")
    elif "spaces" not in d or "objective" not in d:
        raise cfg.error("config needs 'game' or both 'spaces' and 'objective'")
    for key in ("sigma", "alpha", "tau", "t_end"):
        d[key] = _number(cfg, key, d[key])
    if d["scheme"] not in SCHEMES[:2]:
        raise cfg.error(f"scheme must be one of {SCHEMES[:2]}", "scheme")
    if d["t_end"] < d["tau"]:
        raise cfg.error("t_end must be >= tau", "t_end")
    if d["scheme"] == "explicit_euler" and d["alpha"] * d["tau"] > 1:
        raise cfg.error("explicit_euler needs alpha * tau <= 1", "tau")
    stride = d["record_stride"]
    if isinstance(stride, bool) or not isinstance(stride, int) or stride < 1:
        raise cfg.error("record_stride must be a positive integer", "record_stride")
    s = d["seed"]
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s <= MAX_SEED:
        raise cfg.error("seed must be an integer in [0, 2**64)", "seed")
    fw = d["fit_window"]
    if fw is not None and (not isinstance(fw, list) or len(fw) != 2
                           or not fw[0] < fw[1]):
        raise cfg.error("fit_window must be [t_lo, t_hi] with t_lo < t_hi", "fit_window")
    init = d["initial"]
    if not isinstance(init, dict) or init.get("kind") not in ("reference", "random", "table"):
        raise cfg.error("initial.kind must be reference, random or table", "initial")

    pc = d["picard"]
    try:
        PicardConfig(**pc)
    except (TypeError, ValueError) as exc:
        raise cfg.error(f"picard: {exc}", "picard") from None

    sl = d["anneal"]["sigma_list"]
    if (not isinstance(sl, list) or not sl
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       and v > 0 for v in sl)):
        raise cfg.error("sigma_list must be a non-empty list of positive numbers",
                        "sigma_list")
    if any(b >= a for a, b in zip(sl, sl[1:])):
        raise cfg.error("sigma_list must be strictly decreasing", "sigma_list")
    fs = d["anneal"]["f_star"]
    if fs is not None:
        _number(cfg, "f_star", fs, positive=False)

    fp = d["fp_compare"]
    if not fp["horizon"] > 1:
        raise cfg.error("fp_compare.horizon must exceed 1", "horizon")
    if not fp["slope_tau"] > 0 or not int(fp["checkpoints"]) >= 1:
        raise cfg.error("fp_compare needs slope_tau > 0 and checkpoints >= 1", "fp_compare")
    sw = fp["slope_window"]
    if not (isinstance(sw, list) and len(sw) == 2 and 1 <= sw[0] < sw[1]):
        raise cfg.error("slope_window must be [t_lo, t_hi] with 1 <= t_lo < t_hi",
                        "slope_window")
    if not d["verify"]["tol"] > 0 or int(d["verify"]["samples"]) < 1:
        raise cfg.error("verify needs tol > 0 and samples >= 1", "verify")

    # build once so kernel/potential problems surface as config errors
    _build_game(cfg)


def _resolve(cfg, name) -> Path:
    p = Path(name)
    return p if p.is_absolute() else cfg.base_dir / p


def _space(cfg, side: str, spec: dict) -> StrategySpace:
    kind = spec.get("kind")
    n = spec.get("n_points")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise cfg.error(f"spaces.{side}.n_points must be a positive integer", side)
    if kind == "finite":
        return StrategySpace.finite(n)
    if kind == "grid":
        b = spec.get("bounds")
        if not (isinstance(b, list) and len(b) == 2 and b[0] < b[1]):
            raise cfg.error(f"spaces.{side}.bounds must be [lower, upper]", side)
        return StrategySpace.grid(float(b[0]), float(b[1]), n)
    raise cfg.error(f"spaces.{side}.kind must be finite or grid", side)


def _reference(cfg, side: str, spec: dict, space: StrategySpace):
    kind = spec.get("kind", "uniform")
    try:
        if kind == "uniform":
            return uniform_reference(space)
        if kind == "gaussian":
            return gaussian_reference(space, spec.get("mean", 0.0), spec.get("std", 1.0))
        if kind == "table":
            if "file" in spec:
                vals = np.loadtxt(_resolve(cfg, spec["file"]), delimiter=",",
                                  skiprows=1, ndmin=1)
            else:
                vals = np.asarray(spec["values"], dtype=float)
            return normalize_reference(vals, space)
    except (OSError, KeyError, ValueError) as exc:
        raise cfg.error(f"spaces.{side}.potential: {exc}", "potential") from None
    raise cfg.error(f"spaces.{side}.potential.kind must be uniform, gaussian or table",
                    "potential")


def _kernel(cfg, spec: dict, xs, ys):
    if "builtin" in spec:
        if spec["builtin"] not in BUILTIN_GAMES:
            raise cfg.error(f"unknown builtin kernel {spec['builtin']!r}", "builtin")
        return builtin_game(spec["builtin"]).objective.kernel
    if "kernel_file" in spec:
        try:
            return load_kernel_csv(_resolve(cfg, spec["kernel_file"]))
        except OSError as exc:
            raise cfg.error(f"cannot read kernel: {exc.strerror}", "kernel_file") from None
        except ValueError as exc:
            # already anchored to the kernel file's own line
            raise ConfigError(str(exc), None, cfg.source) from None
    if "kernel" in spec:
        try:
            k = np.array(spec["kernel"], dtype=float)
        except (TypeError, ValueError):
            raise cfg.error("kernel must be a numeric matrix", "kernel") from None
        if k.ndim != 2 or not np.all(np.isfinite(k)):
            raise cfg.error("kernel must be a finite numeric matrix", "kernel")
        return k
    raise cfg.error("objective needs builtin, kernel_file or kernel", "objective")


def _build_game(cfg: ExperimentConfig) -> Game:
    d = cfg.data
    if "game" in d:
        return builtin_game(d["game"])
    spaces = d["spaces"]
    if not isinstance(spaces, dict) or set(spaces) != {"x", "y"}:
        raise cfg.error("spaces needs exactly the keys x and y", "spaces")
    xs = _space(cfg, "x", spaces["x"])
    ys = _space(cfg, "y", spaces["y"])
    pi = _reference(cfg, "x", spaces["x"].get("potential", {}), xs)
    rho = _reference(cfg, "y", spaces["y"].get("potential", {}), ys)
    spec = d["objective"]
    k = _kernel(cfg, spec, xs, ys)
    if k.shape != (xs.size, ys.size):
        raise cfg.error(f"kernel shape {k.shape} does not match spaces "
                        f"({xs.size}, {ys.size})", "objective")
    kind = spec.get("kind", "bilinear")
    if kind == "bilinear":
        obj = BilinearObjective(k, xs, ys)
    elif kind == "composite":
        try:
            obj = CompositeObjective(k, spec["g"], spec["h"], spec.get("lambda", 1.0),
                                     xs, ys)
        except (KeyError, ValueError, TypeError) as exc:
            raise cfg.error(f"composite objective: {exc}", "objective") from None
    else:
        raise cfg.error("objective.kind must be bilinear or composite", "kind")
    return Game("custom", obj, pi, rho)
