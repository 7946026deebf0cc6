import numpy as np
import pytest

from homoglab.errors import ContractViolation
from homoglab.integrand import (Checkerboard, Laminate, Product, Trigonometric, eval_integrand, pnorm,
                                quadratic)
from homoglab.reiterated import (CellConfig, InnerDensityCache, ReiterationConfig, density_sweep,
                                 inner_density, laminate_oracle, outer_density, reiterated_tensor)


def harmonic(values, fractions=None, p=2.0):
    values = np.asarray(values, float)
    fractions = np.full(len(values), 1 / len(values)) if fractions is None else np.asarray(fractions)
    return np.sum(fractions * values ** (-1 / (p - 1))) ** (-(p - 1))


SEPARABLE = Product((Laminate("y", 0, (1.0, 4.0)), Laminate("z", 0, (1.0, 9.0))))


def small(path="auto", n_in=16, n_out=16, **kw):
    return ReiterationConfig(inner=CellConfig(n=n_in), outer=CellConfig(n=n_out), path=path, **kw)


# -- laminate oracle --------------------------------------------------------------


def test_laminate_oracle_modes():
    assert laminate_oracle([(0.5, 1), (0.5, 4)]) == pytest.approx(1 / (0.5 / 1 + 0.5 / 4))
    assert laminate_oracle([(0.5, 1), (0.5, 4)], "arithmetic") == pytest.approx(2.5)
    assert laminate_oracle([(0.5, 1), (0.5, 4)], "iterated", [(0.5, 1), (0.5, 9)]) == pytest.approx(1.6 * 1.8)
    for mode in ("harmonic", "arithmetic", "iterated"):
        assert laminate_oracle([(1.0, 3.7)], mode) == pytest.approx(3.7)


def test_laminate_oracle_p_growth():
    # minimize t1 a1 s1^p + t2 a2 s2^p subject to t1 s1 + t2 s2 = 1 by brute force
    a1, a2, p = 1.0, 9.0, 3.0
    s = np.linspace(0.0, 2.0, 200001)
    brute = np.min(0.5 * a1 * s ** p + 0.5 * a2 * np.abs(2 - s) ** p)
    assert laminate_oracle([(0.5, a1), (0.5, a2)], p=p) == pytest.approx(brute, rel=1e-6)


def test_laminate_oracle_rejects_bad_phases():
    with pytest.raises(ContractViolation):
        laminate_oracle([(0.5, 1), (0.4, 4)])
    with pytest.raises(ContractViolation):
        laminate_oracle([(0.5, 1), (0.5, -4)])
    with pytest.raises(ContractViolation):
        laminate_oracle([(1.0, 1)], "geometric")


# -- inner density --------------------------------------------------------------


def test_inner_density_without_z_is_the_integrand():
    f = pnorm(3.0, N=2, coefficient=Trigonometric("y", 0, 2.0, 1.0))
    xi = np.array([[0.4, -0.9]])
    value, stress = inner_density(f, [0.2, 0.3], [0.7, 0.1], xi)
    assert value == pytest.approx(eval_integrand(f, [0.2, 0.3], [0.7, 0.1], [0, 0], xi), rel=1e-14)


@pytest.mark.parametrize("path", ["quadratic", "nested"])
def test_inner_density_separable(path):
    f = quadratic(coefficient=SEPARABLE)
    hb = harmonic([1.0, 9.0])
    for y, alpha in ((0.25, 1.0), (0.75, 4.0)):
        value, stress = inner_density(f, [0.0], [y], [[2.0]], small(path))
        assert value == pytest.approx(alpha * hb * 4.0, rel=1e-10)
        assert stress[0, 0] == pytest.approx(alpha * hb * 4.0, rel=1e-8)


def test_inner_density_is_periodic_in_y():
    f = quadratic(N=2, coefficient=Product((Trigonometric("y", 0, 2, 1), Checkerboard("z", (1, 4)))))
    cfg = small("nested", n_in=8)
    xi = np.array([[1.0, 0.3]])
    base = inner_density(f, [0, 0], [0.3, 0.6], xi, cfg)[0]
    for k in ([1, 0], [-2, 3]):
        assert inner_density(f, [0, 0], np.array([0.3, 0.6]) + k, xi, cfg)[0] == base


def test_inner_density_below_average():
    f = quadratic(N=2, coefficient=Checkerboard("z", (1, 4)))
    value, _ = inner_density(f, [0, 0], [0, 0], [[1.0, 0.0]], small(n_in=16))
    assert value <= 2.5  # average of a over the cell times |xi|^2


# -- outer density --------------------------------------------------------------


@pytest.mark.parametrize("path", ["quadratic", "nested"])
@pytest.mark.parametrize("N", [1, 2])
def test_outer_trivial(path, N):
    f = quadratic(N=N, d=N)
    xi = np.arange(1.0, N * N + 1).reshape(N, N) / 3
    est = outer_density(f, np.zeros(N), xi, small(path, 4, 4))
    assert est.value == pytest.approx(np.sum(xi ** 2), rel=1e-10)
    assert max(est.corrector_sup) <= 1e-10


@pytest.mark.parametrize("path", ["quadratic", "nested"])
def test_outer_separable_laminate(path):
    expected = harmonic([1.0, 4.0]) * harmonic([1.0, 9.0])
    est = outer_density(quadratic(coefficient=SEPARABLE), [0.0], [[1.0]], small(path))
    assert est.value == pytest.approx(expected, abs=1e-10)
    assert est.converged and not est.upper_bound_only and est.growth_ok


def test_outer_separable_pnorm_nested():
    p = 3.0
    f = pnorm(p, coefficient=SEPARABLE)
    expected = harmonic([1.0, 4.0], p=p) * harmonic([1.0, 9.0], p=p) * 1.5 ** p
    est = outer_density(f, [0.0], [[1.5]], small("nested"))
    assert est.value == pytest.approx(expected, rel=1e-8)


def test_two_level_tensor_cross_laminate():
    # B(z) layered along z_0 gives diag(1.6, 2.5); alpha(y) layered along y_1 then
    # averages column 0 arithmetically and column 1 harmonically
    coef = Product((Laminate("y", 1, (1.0, 9.0)), Laminate("z", 0, (1.0, 4.0))))
    E = reiterated_tensor(quadratic(N=2, coefficient=coef), config=small(n_in=8, n_out=8))
    expected = np.diag([1.6 * 5.0, 2.5 * harmonic([1.0, 9.0])])
    np.testing.assert_allclose(E.matrix, expected, atol=1e-10)


def test_quadratic_two_paths_agree():
    coef = Product((Trigonometric("y", 0, 2.0, 1.0), Checkerboard("z", (1.0, 4.0))))
    f = quadratic(N=2, coefficient=coef)
    xi = np.array([[0.6, -0.8]])
    cfg_q, cfg_n = small("quadratic", 8, 8), small("nested", 8, 8)
    E = reiterated_tensor(f, config=cfg_q)
    nested = outer_density(f, [0, 0], xi, cfg_n)
    assert nested.value == pytest.approx(E.energy(xi), rel=1e-6)
    assert outer_density(f, [0, 0], xi, cfg_q).value == pytest.approx(E.energy(xi), rel=1e-12)


def test_outer_below_zero_corrector_average():
    coef = Product((Trigonometric("y", 0, 2.0, 1.0), Laminate("z", 1, (1.0, 4.0))))
    f = quadratic(N=2, coefficient=coef)
    est = outer_density(f, [0, 0], [[1.0, 0.0]], small(n_in=8, n_out=8))
    assert est.value <= est.solution.zero_value + 1e-12


def test_budget_exhaustion_is_flagged():
    f = pnorm(3.0, coefficient=SEPARABLE)
    est = outer_density(f, [0.0], [[1.0]], small("nested", max_inner_solves=3))
    assert not est.converged and est.errors and "budget" in est.errors[0]


def test_threads_do_not_change_the_answer():
    f = pnorm(3.0, N=1, coefficient=Product((Trigonometric("y", 0, 2, 1), Laminate("z", 0, (1, 4)))))
    a = outer_density(f, [0.0], [[1.2]], small("nested", 8, 8, threads=1)).value
    b = outer_density(f, [0.0], [[1.2]], small("nested", 8, 8, threads=3)).value
    assert a == b


def test_quadratic_path_requires_quadratic():
    with pytest.raises(ContractViolation):
        outer_density(pnorm(3.0), [0.0], [[1.0]], small("quadratic"))


# -- cache ------------------------------------------------------------------------


def test_cache_first_writer_wins_and_counts():
    cache = InnerDensityCache()
    assert cache.put("k", 1) == 1
    assert cache.put("k", 2) == 1
    assert cache.get("k") == 1 and cache.get("other") is None
    assert cache.hits == 1 and cache.misses == 1


def test_cache_quantized_keys():
    cache = InnerDensityCache(quantization=1e-3)
    xi = np.array([[1.0, 2.0]])
    assert cache.xi_key(xi) == cache.xi_key(xi + 1e-6)
    assert cache.xi_key(xi) != cache.xi_key(xi + 1e-2)
    exact = InnerDensityCache()
    assert exact.xi_key(xi) != exact.xi_key(xi + 1e-12)


def test_nested_path_reuses_inner_solves():
    f = quadratic(coefficient=SEPARABLE)
    est = outer_density(f, [0.0], [[1.0]], small("nested", 8, 8))
    # only two distinct y-phases and one Newton step: hits dominate
    assert est.cache_hits > est.inner_solve_count


# -- sweeps -----------------------------------------------------------------------


def test_sweep_fits_quadratic_and_keeps_order():
    f = quadratic(coefficient=SEPARABLE)
    xs = [[[v]] for v in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    rows = density_sweep(f, [0.0], xs, small())
    assert [r.index for r in rows] == list(range(5))
    xi = np.array([r.xi[0, 0] for r in rows])
    v = np.array([r.value for r in rows])
    c = np.sum(v * xi ** 2) / np.sum(xi ** 4)
    assert np.max(np.abs(v - c * xi ** 2)) < 1e-6
    assert rows[2].value >= -f.growth.beta


def test_sweep_midpoint_convexity():
    f = pnorm(3.0, coefficient=SEPARABLE)
    xs = [[[v]] for v in np.linspace(-1.0, 1.0, 5)]
    v = np.array([r.value for r in density_sweep(f, [0.0], xs, small("nested", 8, 8))])
    tol = 1e-7
    assert np.all(v[1:-1] <= 0.5 * (v[:-2] + v[2:]) + 2 * tol)


def test_sweep_records_row_errors_and_continues():
    from homoglab.cell import SolverConfig
    f = pnorm(1.5, coefficient=SEPARABLE)
    cfg = small("nested", 32, 4, solver=SolverConfig(method="lbfgs", max_iter=1))
    rows = density_sweep(f, [0.0], [[[0.0]], [[1.0]], [[0.0]]], cfg)
    assert len(rows) == 3
    assert rows[1].error and np.isnan(rows[1].value)
    assert rows[0].error == "" and rows[0].value == 0.0


def test_sweep_rejects_empty_list():
    with pytest.raises(ContractViolation):
        density_sweep(quadratic(), [0.0], [])
