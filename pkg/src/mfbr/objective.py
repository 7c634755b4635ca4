"""Convex-concave payoffs F(nu, mu) with flat derivatives.

An objective exposes ``value(nu, mu)``, ``dnu(nu, mu)`` (the flat derivative
in the min player's measure, one entry per x-point) and ``dmu(nu, mu)``,
plus the declared bounds ``c_nu``, ``c_mu`` on those derivatives.
Derivatives are returned without any zero-mean normalization: the
best-response maps are invariant to constant shifts.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .measure import Density, SpaceMismatchError, StrategySpace, random_density


class ObjectiveOracle:
    """Generic payoff built from user callables.

    Subclasses override ``value``/``dnu``/``dmu`` directly.
    """

    def __init__(self, x_space: StrategySpace, y_space: StrategySpace,
                 value: Callable | None = None, dnu: Callable | None = None,
                 dmu: Callable | None = None, c_nu: float = 0.0,
                 c_mu: float = 0.0):
        if c_nu < 0 or c_mu < 0:
            raise ValueError("bound constants must be nonnegative")
        self.x_space = x_space
        self.y_space = y_space
        self.c_nu = float(c_nu)
        self.c_mu = float(c_mu)
        self._value = value
        self._dnu = dnu
        self._dmu = dmu

    def _check(self, nu: Density, mu: Density) -> None:
        if not nu.space.same_as(self.x_space) or not mu.space.same_as(self.y_space):
            raise SpaceMismatchError("densities do not match objective spaces")

    def value(self, nu: Density, mu: Density) -> float:
        return float(self._value(nu, mu))

    def dnu(self, nu: Density, mu: Density) -> np.ndarray:
        return np.asarray(self._dnu(nu, mu), dtype=float)

    def dmu(self, nu: Density, mu: Density) -> np.ndarray:
        return np.asarray(self._dmu(nu, mu), dtype=float)

    @property
    def is_bilinear(self) -> bool:
        return False

    def cache_key(self):
        return ("oracle", id(self))


def _as_kernel(kernel) -> np.ndarray:
    k = np.array(kernel, dtype=float)
    if k.ndim != 2:
        raise ValueError("kernel must be a matrix")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel entries must be finite")
    k.setflags(write=False)
    return k


class BilinearObjective(ObjectiveOracle):
    """``F(nu, mu) = sum_ij wx_i wy_j f_ij nu_i mu_j``."""

    def __init__(self, kernel, x_space: StrategySpace, y_space: StrategySpace):
        k = _as_kernel(kernel)
        if k.shape != (x_space.size, y_space.size):
            raise ValueError(
                f"kernel shape {k.shape} does not match spaces "
                f"({x_space.size}, {y_space.size})")
        bound = float(np.max(np.abs(k)))
        super().__init__(x_space, y_space, c_nu=bound, c_mu=bound)
        self.kernel = k

    @property
    def is_bilinear(self) -> bool:
        return True

    def value(self, nu, mu):
        return bilinear_value(self, nu, mu)

    def dnu(self, nu, mu):
        return bilinear_dnu(self, mu)

    def dmu(self, nu, mu):
        return bilinear_dmu(self, nu)

    def cache_key(self):
        return ("bilinear", self.kernel.tobytes(), self.kernel.shape,
                self.x_space.weights.tobytes(), self.y_space.weights.tobytes())


def bilinear_value(obj: BilinearObjective, nu: Density, mu: Density) -> float:
    obj._check(nu, mu)
    a = obj.x_space.weights * nu.values
    b = obj.y_space.weights * mu.values
    return float(a @ obj.kernel @ b)


def bilinear_dnu(obj: BilinearObjective, mu: Density) -> np.ndarray:
    """``x -> int f(x, y) mu(dy)``."""
    if not mu.space.same_as(obj.y_space):
        raise SpaceMismatchError("mu does not live on the objective's y-space")
    return obj.kernel @ (obj.y_space.weights * mu.values)


def bilinear_dmu(obj: BilinearObjective, nu: Density) -> np.ndarray:
    """``y -> int f(x, y) nu(dx)``."""
    if not nu.space.same_as(obj.x_space):
        raise SpaceMismatchError("nu does not live on the objective's x-space")
    return (obj.x_space.weights * nu.values) @ obj.kernel


class CompositeObjective(ObjectiveOracle):
    """Bilinear part plus ``(lam/2)(int g dnu)^2 - (lam/2)(int h dmu)^2``.

    Strictly convex in nu and strictly concave in mu whenever ``lam > 0`` and
    g, h are non-constant.
    """

    def __init__(self, kernel, g, h, lam: float, x_space: StrategySpace,
                 y_space: StrategySpace):
        self.bilinear = BilinearObjective(kernel, x_space, y_space)
        g = np.array(g, dtype=float)
        h = np.array(h, dtype=float)
        if g.shape != (x_space.size,) or h.shape != (y_space.size,):
            raise ValueError("g and h need one entry per point of their space")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise ValueError("g and h must be finite")
        if not lam >= 0:
            raise ValueError("lambda must be nonnegative")
        fmax = float(np.max(np.abs(self.bilinear.kernel)))
        c_nu = fmax + lam * float(np.max(np.abs(g))) ** 2
        c_mu = fmax + lam * float(np.max(np.abs(h))) ** 2
        super().__init__(x_space, y_space, c_nu=c_nu, c_mu=c_mu)
        self.kernel = self.bilinear.kernel
        self.g, self.h, self.lam = g, h, float(lam)

    def value(self, nu, mu):
        base = bilinear_value(self.bilinear, nu, mu)
        if self.lam == 0.0:
            return base
        gn = nu.expect(self.g)
        hm = mu.expect(self.h)
        return base + 0.5 * self.lam * gn * gn - 0.5 * self.lam * hm * hm

    def dnu(self, nu, mu):
        d = bilinear_dnu(self.bilinear, mu)
        if self.lam == 0.0:
            return d
        return d + self.lam * nu.expect(self.g) * self.g

    def dmu(self, nu, mu):
        d = bilinear_dmu(self.bilinear, nu)
        if self.lam == 0.0:
            return d
        return d - self.lam * mu.expect(self.h) * self.h

    def cache_key(self):
        return ("composite", self.bilinear.cache_key(), self.g.tobytes(),
                self.h.tobytes(), self.lam)


def composite_objective(kernel, g, h, lam: float, x_space: StrategySpace,
                        y_space: StrategySpace) -> CompositeObjective:
    return CompositeObjective(kernel, g, h, lam, x_space, y_space)


@dataclass
class ConvexityReport:
    trials: int
    seed: int
    max_violation: float
    min_slack: float
    passed: bool
    tol: float = 1e-9


def check_convex_concave(oracle: ObjectiveOracle, trials: int = 200,
                         seed: int = 0, tol: float = 1e-9) -> ConvexityReport:
    """Test the first-order convexity/concavity inequalities on random pairs.

    Violation of the nu-side: ``<dnu(nu,mu), nu' - nu> - (F(nu',mu) - F(nu,mu))``;
    the mu-side mirrors it. ``min_slack`` is the smallest nonnegative gap seen.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = -math.inf
    slack = math.inf
    for _ in range(trials):
        nu, nu2 = (random_density(oracle.x_space, rng) for _ in range(2))
        mu, mu2 = (random_density(oracle.y_space, rng) for _ in range(2))
        f0 = oracle.value(nu, mu)
        lin_x = oracle.x_space.integrate(oracle.dnu(nu, mu) * (nu2.values - nu.values))
        gap_x = (oracle.value(nu2, mu) - f0) - lin_x
        lin_y = oracle.y_space.integrate(oracle.dmu(nu, mu) * (mu2.values - mu.values))
        gap_y = lin_y - (oracle.value(nu, mu2) - f0)
        for gap in (gap_x, gap_y):
            worst = max(worst, -gap)
            slack = min(slack, gap)
    return ConvexityReport(trials, seed, max(worst, 0.0), slack, worst <= tol, tol)


@dataclass
class FlatDerivativeReport:
    trials: int
    seed: int
    eps: float
    max_error: float
    max_error_half: float
    observed_order: float
    constant: float
    passed: bool


def _fd_errors(oracle: ObjectiveOracle, eps: float, pairs) -> float:
    worst = 0.0
    for nu, nu2, mu, mu2 in pairs:
        scale = max(1.0, abs(oracle.value(nu, mu)))
        # nu-direction
        nu_e = Density.from_unnormalized(
            oracle.x_space, nu.values + eps * (nu2.values - nu.values))
        lin = eps * oracle.x_space.integrate(
            oracle.dnu(nu, mu) * (nu2.values - nu.values))
        err = abs(oracle.value(nu_e, mu) - oracle.value(nu, mu) - lin) / scale
        worst = max(worst, err)
        # mu-direction
        mu_e = Density.from_unnormalized(
            oracle.y_space, mu.values + eps * (mu2.values - mu.values))
        lin = eps * oracle.y_space.integrate(
            oracle.dmu(nu, mu) * (mu2.values - mu.values))
        err = abs(oracle.value(nu, mu_e) - oracle.value(nu, mu) - lin) / scale
        worst = max(worst, err)
    return worst


def check_flat_derivative(oracle: ObjectiveOracle, eps: float = 1e-3,
                          trials: int = 50, seed: int = 0) -> FlatDerivativeReport:
    """Compare ``F(m + eps(m' - m)) - F(m)`` with ``eps <dF/dm(m), m' - m>``.

    The error is the second-order remainder scaled by ``max(1, |F|)``. It is
    evaluated at ``eps`` and ``eps/2``; the check passes when the remainder is
    at rounding level or shrinks at (at least nearly) second order.
    """
    if not 0 < eps <= 0.1:
        raise ValueError("eps must lie in (0, 0.1]")
    rng = np.random.default_rng(seed)
    pairs = [(random_density(oracle.x_space, rng), random_density(oracle.x_space, rng),
              random_density(oracle.y_space, rng), random_density(oracle.y_space, rng))
             for _ in range(trials)]
    e1 = _fd_errors(oracle, eps, pairs)
    e2 = _fd_errors(oracle, eps / 2, pairs)
    floor = 1e-13
    if e1 <= floor:
        order = math.inf
        passed = True
    else:
        order = math.log2(e1 / max(e2, 1e-300))
        passed = order >= 1.8
    return FlatDerivativeReport(trials, seed, eps, e1, e2, order, e1 / eps ** 2, passed)


def load_kernel_csv(path) -> np.ndarray:
    """Read a kernel matrix: one header line, then row i = x_i, column j = y_j."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: kernel CSV needs a header and at least one row")
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            vals = [float(v) for v in row]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{path}:{lineno}: non-finite kernel entry")
        body.append(vals)
    if len({len(r) for r in body}) != 1:
        raise ValueError(f"{path}: ragged kernel rows")
    return np.array(body)


def save_kernel_csv(path, kernel) -> None:
    kernel = np.asarray(kernel, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y{j}" for j in range(kernel.shape[1])])
        for row in kernel:
            w.writerow([format(v, ".17g") for v in row])
