import math

import numpy as np
import pytest

from mfbr.measure import Density, SpaceMismatchError, StrategySpace, random_density
from mfbr.objective import (BilinearObjective, ObjectiveOracle, bilinear_dmu,
                            bilinear_dnu, bilinear_value, check_convex_concave,
                            check_flat_derivative, composite_objective,
                            load_kernel_csv, save_kernel_csv)

MP = [[1, -1], [-1, 1]]
ASYM = [[3, 0], [1, 2]]


def dens(space, *v):
    return Density(space, list(v))


def test_bilinear_value_examples(two):
    u = Density.uniform(two)
    assert bilinear_value(BilinearObjective(MP, two, two), u, u) == 0.0
    asym = BilinearObjective(ASYM, two, two)
    assert bilinear_value(asym, dens(two, 1, 0), dens(two, 1, 0)) == 3.0
    nu, mu = dens(two, 0.25, 0.75), dens(two, 0.5, 0.5)
    oracle = sum(ASYM[i][j] * nu.values[i] * mu.values[j]
                 for i in range(2) for j in range(2))
    assert oracle == 1.5
    assert bilinear_value(asym, nu, mu) == pytest.approx(1.5, abs=1e-15)


def test_bilinear_derivatives(two):
    mp = BilinearObjective(MP, two, two)
    u = Density.uniform(two)
    assert np.array_equal(bilinear_dnu(mp, u), [0.0, 0.0])
    assert np.array_equal(bilinear_dmu(mp, u), [0.0, 0.0])
    assert np.allclose(bilinear_dnu(mp, dens(two, 0.3, 0.7)), [-0.4, 0.4], atol=1e-15)
    asym = BilinearObjective(ASYM, two, two)
    assert np.allclose(bilinear_dmu(asym, dens(two, 0.25, 0.75)), [1.5, 1.5], atol=1e-15)
    c = BilinearObjective(np.full((2, 3), 2.5), two, StrategySpace.finite(3))
    assert np.allclose(bilinear_dnu(c, Density.uniform(StrategySpace.finite(3))), 2.5)
    assert np.allclose(bilinear_dmu(c, u), 2.5)


def test_bilinear_shape_checks(two):
    with pytest.raises(ValueError):
        BilinearObjective([[1, 2, 3]], two, two)
    with pytest.raises(ValueError):
        BilinearObjective([[1, math.nan], [0, 0]], two, two)
    mp = BilinearObjective(MP, two, two)
    with pytest.raises(SpaceMismatchError):
        bilinear_dnu(mp, Density.uniform(StrategySpace.finite(3)))


def test_bilinear_three_way_consistency():
    g = StrategySpace.grid(-1, 1, 17)
    h = StrategySpace.grid(0, 2, 11)
    rng = np.random.default_rng(3)
    obj = BilinearObjective(rng.uniform(-1, 1, (17, 11)), g, h)
    for _ in range(50):
        nu, mu = random_density(g, rng), random_density(h, rng)
        v = obj.value(nu, mu)
        assert nu.expect(obj.dnu(nu, mu)) == pytest.approx(v, abs=1e-14)
        assert mu.expect(obj.dmu(nu, mu)) == pytest.approx(v, abs=1e-14)


def test_derivative_bounds_hold(grid_game):
    obj = grid_game.objective
    rng = np.random.default_rng(4)
    for _ in range(1000):
        nu = random_density(obj.x_space, rng, scale=2.0)
        mu = random_density(obj.y_space, rng, scale=2.0)
        assert np.max(np.abs(obj.dnu(nu, mu))) <= obj.c_nu
        assert np.max(np.abs(obj.dmu(nu, mu))) <= obj.c_mu


def test_composite_reductions(two):
    rng = np.random.default_rng(5)
    bil = BilinearObjective(ASYM, two, two)
    comp0 = composite_objective(ASYM, [1, -1], [0.5, 2], 0.0, two, two)
    compg = composite_objective(ASYM, [0, 0], [0.5, 2], 3.0, two, two)
    for _ in range(20):
        nu, mu = random_density(two, rng), random_density(two, rng)
        assert comp0.value(nu, mu) == bil.value(nu, mu)
        assert np.array_equal(comp0.dnu(nu, mu), bil.dnu(nu, mu))
        assert np.array_equal(comp0.dmu(nu, mu), bil.dmu(nu, mu))
        assert np.array_equal(compg.dnu(nu, mu), bil.dnu(nu, mu))


def test_composite_dnu_example(two):
    comp = composite_objective(np.zeros((2, 2)), [1, -1], [0, 0], 1.0, two, two)
    nu = dens(two, 0.7, 0.3)
    # int g dnu = 0.7 - 0.3 = 0.4, times g
    assert np.allclose(comp.dnu(nu, Density.uniform(two)), [0.4, -0.4], atol=1e-15)


def test_composite_bounds(two):
    comp = composite_objective(ASYM, [1, -2], [0.5, 3], 0.5, two, two)
    assert comp.c_nu == 3 + 0.5 * 4
    assert comp.c_mu == 3 + 0.5 * 9
    with pytest.raises(ValueError):
        composite_objective(ASYM, [1, math.inf], [0, 0], 1.0, two, two)
    with pytest.raises(ValueError):
        composite_objective(ASYM, [1, 1], [0, 0], -1.0, two, two)


def test_convexity_bilinear_exact(mp):
    rep = check_convex_concave(mp.objective, trials=100, seed=1)
    assert rep.passed and rep.max_violation <= 1e-15


def test_convexity_composite_strict():
    s = StrategySpace.finite(4)
    comp = composite_objective(np.eye(4), [1, -1, 2, 0], [0, 1, -1, 3], 1.0, s, s)
    rep = check_convex_concave(comp, trials=100, seed=2)
    assert rep.passed
    # strict slack: the quadratic terms contribute lam/2 (int g d(nu'-nu))^2 > 0
    nu, nu2 = Density.uniform(s), Density(s, [0.7, 0.1, 0.1, 0.1])
    mu = Density.uniform(s)
    gap = comp.value(nu2, mu) - comp.value(nu, mu) - s.integrate(
        comp.dnu(nu, mu) * (nu2.values - nu.values))
    d = float(np.dot(comp.g, nu2.values - nu.values))
    assert gap == pytest.approx(0.5 * d * d, abs=1e-14) and gap > 0


def test_convexity_detects_sign_flip():
    s = StrategySpace.finite(3)
    g = np.array([1.0, -1.0, 0.5])

    def value(nu, mu):
        return -0.5 * nu.expect(g) ** 2

    def dnu(nu, mu):
        return -nu.expect(g) * g

    def dmu(nu, mu):
        return np.zeros(3)

    bad = ObjectiveOracle(s, s, value, dnu, dmu, c_nu=1.0)
    rep = check_convex_concave(bad, trials=50, seed=0)
    assert not rep.passed and rep.max_violation > 1e-6


def test_flat_derivative_bilinear_machine_precision(asym):
    rep = check_flat_derivative(asym.objective, eps=0.05, trials=20)
    assert rep.passed and rep.max_error <= 1e-13


def test_flat_derivative_composite_second_order():
    s = StrategySpace.grid(-1, 1, 10)
    x = s.points[:, 0]
    comp = composite_objective(np.outer(x, x), np.sin(3 * x), np.cos(2 * x), 1.0, s, s)
    rep = check_flat_derivative(comp, eps=1e-3, trials=30, seed=0)
    assert rep.passed
    assert rep.max_error <= 1e-5
    assert 3.5 <= rep.max_error / rep.max_error_half <= 4.5


def test_flat_derivative_catches_wrong_derivative(two):
    comp = composite_objective(ASYM, [1, -1], [2, 0], 1.0, two, two)
    wrong = ObjectiveOracle(two, two, comp.value, lambda n, m: comp.dnu(n, m) * 1.1,
                            comp.dmu, comp.c_nu, comp.c_mu)
    assert not check_flat_derivative(wrong, eps=1e-3, trials=10).passed


def test_flat_derivative_eps_range(mp):
    with pytest.raises(ValueError):
        check_flat_derivative(mp.objective, eps=0.5)


def test_kernel_csv_roundtrip(tmp_path):
    k = np.random.default_rng(0).normal(size=(3, 4)) * 1e-3 + 1 / 3
    p = tmp_path / "k.csv"
    save_kernel_csv(p, k)
    assert np.array_equal(load_kernel_csv(p), k)


def test_kernel_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n3,nan\n")
    with pytest.raises(ValueError, match=":3:"):
        load_kernel_csv(p)
    p.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(ValueError, match=":3:"):
        load_kernel_csv(p)
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(ValueError, match="ragged"):
        load_kernel_csv(p)
