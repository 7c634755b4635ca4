"""Discretized strategy spaces, reference measures, densities and divergences.

Every integral over a strategy space is a weighted sum ``sum_i w_i g(x_i)``
with the quadrature weights of the :class:`StrategySpace`. Finite games use
unit weights; grids use midpoint cell volumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DENSITY_TOL = 1e-10
REFERENCE_TOL = 1e-12


class SpaceMismatchError(ValueError):
    """Two objects live on different strategy spaces."""


class InfiniteDivergenceError(ArithmeticError):
    """KL(p|q) is infinite: p puts mass where q vanishes."""


def logsumexp(a: np.ndarray) -> float:
    """Max-shifted ``log(sum(exp(a)))``; summation order is ascending index."""
    m = float(np.max(a))
    if not math.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(a - m))))


@dataclass(frozen=True, eq=False)
class StrategySpace:
    """Quadrature nodes ``points`` (n, d) with positive ``weights`` (n,)."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or len(weights) < 1:
            raise ValueError("strategy space needs at least one point")
        if len(points) != len(weights):
            raise ValueError(
                f"{len(points)} points but {len(weights)} weights")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise ValueError("quadrature weights must be finite and > 0")
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "log_weights", np.log(weights))

    @classmethod
    def finite(cls, n: int) -> "StrategySpace":
        """``n`` pure strategies labelled 0..n-1 with unit weights."""
        if n < 1:
            raise ValueError("a finite space needs n >= 1")
        return cls(np.arange(n, dtype=float), np.ones(n))

    @classmethod
    def grid(cls, lower: float, upper: float, n: int) -> "StrategySpace":
        """Uniform midpoint grid of ``n`` cells on ``[lower, upper]``."""
        if n < 1 or not upper > lower:
            raise ValueError("grid needs n >= 1 and upper > lower")
        h = (upper - lower) / n
        return cls(lower + h * (np.arange(n) + 0.5), np.full(n, h))

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def size(self) -> int:
        return len(self.weights)

    def same_as(self, other: "StrategySpace") -> bool:
        if self is other:
            return True
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def _check_same(a: StrategySpace, b: StrategySpace) -> None:
    if not a.same_as(b):
        raise SpaceMismatchError("densities live on different spaces")


@dataclass(frozen=True, eq=False)
class Density:
    """Nonnegative values on a space integrating to one.

    Mass drift below ``DENSITY_TOL`` is renormalized away; anything larger
    raises, so integrator bugs are not silently hidden.
    """

    space: StrategySpace
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.space.size,):
            raise ValueError(
                f"density has shape {values.shape}, space has "
                f"{self.space.size} points")
        if not np.all(np.isfinite(values)):
            raise ValueError("density values must be finite")
        if np.any(values < 0):
            raise ValueError("density values must be nonnegative")
        mass = self.space.integrate(values)
        if abs(mass - 1.0) > DENSITY_TOL:
            raise ValueError(f"density integrates to {mass!r}, not 1")
        if mass != 1.0:
            values /= mass
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_unnormalized(cls, space: StrategySpace, values) -> "Density":
        values = np.asarray(values, dtype=float)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("unnormalized density must be finite, >= 0")
        mass = space.integrate(values)
        if not mass > 0:
            raise ValueError("unnormalized density has zero mass")
        return cls(space, values / mass)

    @classmethod
    def from_log(cls, space: StrategySpace, log_values) -> "Density":
        """Normalize ``exp(log_values)`` in log domain."""
        log_values = np.asarray(log_values, dtype=float)
        log_z = logsumexp(log_values + space.log_weights)
        return cls(space, np.exp(log_values - log_z))

    @classmethod
    def uniform(cls, space: StrategySpace) -> "Density":
        return cls(space, np.full(space.size, 1.0 / space.weights.sum()))

    def __len__(self) -> int:
        return self.space.size

    def mass(self) -> float:
        return self.space.integrate(self.values)

    def expect(self, g) -> float:
        """Integral of ``g`` against this density."""
        return float(np.dot(self.space.weights * self.values, g))


@dataclass(frozen=True, eq=False)
class ReferenceMeasure:
    """Gibbs reference ``exp(-potential)``, already normalized on its space."""

    space: StrategySpace
    potential: np.ndarray
    density: np.ndarray = field(init=False)

    def __post_init__(self):
        potential = np.array(self.potential, dtype=float)
        if potential.shape != (self.space.size,):
            raise ValueError("potential must have one entry per point")
        if not np.all(np.isfinite(potential)):
            raise ValueError("potential entries must be finite")
        density = np.exp(-potential)
        mass = self.space.integrate(density)
        if abs(mass - 1.0) > REFERENCE_TOL or np.any(density <= 0):
            raise ValueError(
                f"reference density integrates to {mass!r}; use "
                "normalize_reference")
        potential.setflags(write=False)
        density.setflags(write=False)
        object.__setattr__(self, "potential", potential)
        object.__setattr__(self, "density", density)

    def as_density(self) -> Density:
        return Density(self.space, self.density)


def normalize_reference(raw_potential, space: StrategySpace) -> ReferenceMeasure:
    """Shift ``raw_potential`` by its log-partition so ``exp(-U)`` integrates to 1."""
    raw = np.asarray(raw_potential, dtype=float)
    if raw.shape != (space.size,):
        raise ValueError("potential must have one entry per point")
    if not np.all(np.isfinite(raw)):
        raise ValueError("potential entries must be finite")
    log_z = logsumexp(space.log_weights - raw)
    return ReferenceMeasure(space, raw + log_z)


def uniform_reference(space: StrategySpace) -> ReferenceMeasure:
    return normalize_reference(np.zeros(space.size), space)


def gaussian_reference(space: StrategySpace, mean=0.0, std=1.0) -> ReferenceMeasure:
    """Truncated Gaussian reference on ``space`` (normalized on the grid)."""
    if not std > 0:
        raise ValueError("std must be positive")
    r2 = np.sum((space.points - np.asarray(mean, dtype=float)) ** 2, axis=1)
    return normalize_reference(r2 / (2.0 * std ** 2), space)


def _log_ratio_terms(p: Density, q: Density) -> np.ndarray:
    # w_i (p log(p/q) - p + q): each term is >= 0 and the extra -p+q
    # integrates to zero, which keeps cancellation out of near-equal pairs.
    pv, qv = p.values, q.values
    if np.any((pv > 0) & (qv == 0)):
        raise InfiniteDivergenceError("p has mass where q vanishes")
    pos = pv > 0
    terms = qv.copy()
    lp = np.log(pv[pos])
    lq = np.log(qv[pos])
    terms[pos] = pv[pos] * (lp - lq) - pv[pos] + qv[pos]
    return p.space.weights * terms


def kl(p: Density, q: Density) -> float:
    """Relative entropy ``KL(p|q)`` with ``0 log 0 = 0``."""
    _check_same(p.space, q.space)
    return float(np.sum(_log_ratio_terms(p, q)))


def jeffreys(p: Density, q: Density) -> float:
    """Symmetrized KL, ``KL(p|q) + KL(q|p)``."""
    return kl(p, q) + kl(q, p)


def tv(p: Density, q: Density) -> float:
    """Total variation ``1/2 sum_i w_i |p_i - q_i|``, clipped to [0, 1]."""
    _check_same(p.space, q.space)
    d = 0.5 * float(np.dot(p.space.weights, np.abs(p.values - q.values)))
    return min(d, 1.0)


def random_density(space: StrategySpace, rng: np.random.Generator,
                   scale: float = 1.0, base=None) -> Density:
    """Normalized ``base * exp(scale * z)`` with standard normal ``z``.

    ``base`` defaults to the constant function; pass a reference density to
    perturb around it.
    """
    z = scale * rng.standard_normal(space.size)
    log_base = 0.0 if base is None else np.log(np.asarray(base, dtype=float))
    return Density.from_log(space, log_base + z)
