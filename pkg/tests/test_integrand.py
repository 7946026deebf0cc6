import numpy as np
import pytest

from homoglab.errors import ContractViolation, IntegrandError
from homoglab.integrand import (AffineX, CallableIntegrand, Checkerboard, Constant, GrowthSpec, Laminate,
                                Product, StepX, Trigonometric, coefficient_from_json, double_well,
                                eval_integrand, eval_stress, from_json, pnorm, quadratic,
                                validate_hypotheses, wrap_unit)


def test_growth_spec_rejects_bad_constants():
    with pytest.raises(ContractViolation, match="beta"):
        GrowthSpec(2.0, 0.0)
    with pytest.raises(ContractViolation, match="p"):
        GrowthSpec(1.0, 1.0)
    with pytest.raises(ContractViolation):
        GrowthSpec(np.inf, 1.0)


def test_growth_bounds_formula():
    g = GrowthSpec(3.0, 2.0)
    assert g.lower(2.0) == pytest.approx(8 / 2 - 2)
    assert g.upper(2.0) == pytest.approx(2 * 9)
    assert g.contains(5.0, 2.0)
    assert not g.contains(100.0, 2.0)


def test_wrap_is_exact_under_integer_shifts():
    rng = np.random.default_rng(3)
    t = rng.uniform(-5, 5, 1000)
    for k in (-3, -1, 1, 7):
        assert np.array_equal(wrap_unit(t), wrap_unit(t + k))
    assert np.all((wrap_unit(t) >= 0) & (wrap_unit(t) < 1))


def test_constant_quadratic_is_frobenius_square():
    f = quadratic(N=2, d=2)
    xi = np.array([[1.0, -2.0], [0.5, 3.0]])
    assert eval_integrand(f, [0, 0], [0.3, 0.1], [0.9, 0.2], xi) == pytest.approx(np.sum(xi ** 2))
    np.testing.assert_allclose(eval_stress(f, [0, 0], [0, 0], [0, 0], xi), 2 * xi)


def test_laminate_values_by_slab():
    a = Laminate("z", 0, (1.0, 4.0))
    z = np.array([[0.1], [0.49], [0.5], [0.9]])
    out = a(np.zeros((4, 1)), np.zeros((4, 1)), z)
    np.testing.assert_array_equal(out, [1, 1, 4, 4])


def test_checkerboard_parity():
    a = Checkerboard("z", (1.0, 4.0))
    z = np.array([[0.1, 0.1], [0.6, 0.1], [0.1, 0.6], [0.6, 0.6]])
    out = a(np.zeros((4, 2)), np.zeros((4, 2)), z)
    np.testing.assert_array_equal(out, [1, 4, 4, 1])


def test_step_x_layers():
    a = StepX(2, (0.0,), (1.0, 4.0))
    x = np.array([[0, 0, -0.5], [0, 0, 0.5]])
    np.testing.assert_array_equal(a(x, np.zeros((2, 3)), np.zeros((2, 2))), [1, 4])


def test_coefficient_json_roundtrip():
    coefs = [Constant(2.0), Laminate("y", 1, (1, 2, 3)), Checkerboard("z", (1, 4)),
             Trigonometric("y", 0, 2.0, 1.0, 2), AffineX(0, 1.0, 0.5), StepX(2, (0.0,), (1, 4)),
             Product((Laminate("y", 0, (1, 4)), Laminate("z", 0, (1, 9))))]
    for c in coefs:
        assert coefficient_from_json(c.to_json()) == c
    assert coefficient_from_json(3) == Constant(3.0)


def test_coefficient_json_rejects_unknown_keys():
    with pytest.raises(ContractViolation, match="unknown keys"):
        coefficient_from_json({"type": "laminate", "variable": "y", "values": [1, 2], "colour": 3})
    with pytest.raises(ContractViolation, match="unknown coefficient type"):
        coefficient_from_json({"type": "voronoi"})


def test_invalid_coefficients():
    with pytest.raises(ContractViolation):
        Laminate("y", 0, (1.0, -1.0))
    with pytest.raises(ContractViolation):
        Laminate("y", 0, (1.0, 2.0), (0.3, 0.3))
    with pytest.raises(ContractViolation):
        Trigonometric("y", 0, 1.0, 2.0)


def test_from_json_families():
    f = from_json({"family": "pnorm", "params": {"N": 2, "d": 1, "exponent": 3.0}})
    assert f.growth.p == 3.0 and f.convex
    g = from_json({"family": "double_well", "params": {"N": 1, "d": 1}})
    assert not g.convex and g.growth.p == 4.0
    h = from_json({"family": "quadratic", "kind": "film", "params": {}})
    assert (h.d, h.N, h.z_dim) == (3, 3, 2)
    assert from_json(f.to_json()).to_json() == f.to_json()


def test_from_json_rejects_bad_beta_and_keys():
    with pytest.raises(ContractViolation, match="beta > 0"):
        from_json({"family": "quadratic", "params": {"N": 1, "d": 1}, "p": 2, "beta": 0})
    with pytest.raises(ContractViolation, match="unknown integrand keys"):
        from_json({"family": "quadratic", "params": {}, "gamma": 1})
    with pytest.raises(ContractViolation, match="unknown params"):
        from_json({"family": "quadratic", "params": {"exponent": 3}})


def test_nonfinite_value_is_reported_with_point():
    f = CallableIntegrand(lambda x, y, z, F: np.sum(F ** 2, axis=(-2, -1)) / (z[..., 0] - 0.5),
                          1, 1, (1, 1, 1), GrowthSpec(2, 10))
    with pytest.raises(IntegrandError) as info, np.errstate(divide="ignore"):
        eval_integrand(f, [0.0], [0.0], [0.5], [[1.0]])
    assert info.value.point["z"] == [0.5]


def test_callable_integrand_fd_stress():
    f = CallableIntegrand(lambda x, y, z, F: np.sum(F ** 4, axis=(-2, -1)), 1, 2, (2, 2, 2),
                          GrowthSpec(4, 10))
    xi = np.array([[1.0, -0.5]])
    np.testing.assert_allclose(eval_stress(f, [0, 0], [0, 0], [0, 0], xi), 4 * xi ** 3, rtol=1e-8)


@pytest.mark.parametrize("f", [
    quadratic(N=2, d=1, coefficient=Checkerboard("z", (1, 4))),
    quadratic(N=2, d=2, coefficient=Product((Laminate("y", 0, (1, 4)), Trigonometric("z", 1, 2, 1)))),
    pnorm(3.0, N=2, d=1, coefficient=Laminate("z", 0, (1, 9))),
    pnorm(2.5, N=1, d=1, coefficient=Trigonometric("y", 0, 3, 1)),
    double_well(N=1, d=1, coefficient=Laminate("z", 0, (1, 2))),
    quadratic(kind="film", coefficient=Laminate("y", 2, (1, 4))),
])
def test_builtin_integrands_pass_hypothesis_checks(f):
    report = validate_hypotheses(f, sample_count=200, seed=1)
    assert report.passed, report.rows()


def test_validation_catches_false_convexity_claim():
    f = double_well(N=1, d=1, convex=True)
    report = validate_hypotheses(f, sample_count=200, seed=0)
    assert not report["midpoint_convexity"].passed


def test_validation_catches_bad_growth():
    f = quadratic(N=1, d=1, coefficient=4.0, p=2, beta=1.0)
    report = validate_hypotheses(f, sample_count=100, seed=0)
    assert not report["growth_upper"].passed


def test_validation_catches_broken_periodicity():
    f = CallableIntegrand(lambda x, y, z, F: (1.5 + np.sin(0.7 * z[..., 0])) * np.sum(F ** 2, axis=(-2, -1)),
                          1, 1, (1, 1, 1), GrowthSpec(2, 10))
    report = validate_hypotheses(f, sample_count=50, seed=0)
    assert not report["periodicity"].passed
