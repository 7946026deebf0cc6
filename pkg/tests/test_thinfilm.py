import numpy as np
import pytest
from scipy.optimize import minimize

from homoglab.errors import ContractViolation
from homoglab.integrand import Laminate, Product, StepX, Trigonometric, pnorm, quadratic
from homoglab.reiterated import CellConfig
from homoglab.thinfilm import (FilmConfig, MembraneConfig, corollary_single_scale, film_inner_density,
                               film_inner_tensor, in_plane_basis, membrane_density, schur_complement,
                               schur_membrane_oracle)


def random_spd(seed, n=9, shift=0.5):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    return A @ A.T / n + shift * np.eye(n)


def brute_membrane(C, xi_bar):
    def q(b):
        F = np.hstack([xi_bar, b[:, None]]).ravel()
        return F @ C @ F
    return minimize(q, np.zeros(3), method="BFGS", options={"gtol": 1e-12}).fun


def small(n_in=4, n=4, n3=4):
    return FilmConfig(inner=CellConfig(n=n_in), membrane=MembraneConfig(n=n, n3=n3))


XI_BAR = np.array([[1.0, 0.2], [-0.3, 0.7], [0.5, -0.4]])


def test_in_plane_basis():
    B = in_plane_basis()
    assert len(B) == 6
    assert all(np.sum(E) == 1.0 and not E[:, 2].any() for E in B)


# -- closed-form membrane oracle ---------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_schur_oracle_matches_brute_force(seed):
    C = random_spd(seed)
    xi_bar = np.random.default_rng(100 + seed).standard_normal((3, 2))
    assert schur_membrane_oracle(C, xi_bar) == pytest.approx(brute_membrane(C, xi_bar), rel=1e-10)


def test_schur_block_diagonal_keeps_in_plane_block():
    C = random_spd(7)
    P, R = [0, 1, 3, 4, 6, 7], [2, 5, 8]
    C[np.ix_(P, R)] = 0.0
    C[np.ix_(R, P)] = 0.0
    np.testing.assert_allclose(schur_complement(C), C[np.ix_(P, P)], atol=1e-14)


def test_schur_rejects_singular_transverse_block():
    C = np.eye(9)
    C[8, 8] = 0.0
    with pytest.raises(ContractViolation, match="positive definite"):
        schur_membrane_oracle(C, XI_BAR)
    with pytest.raises(ContractViolation):
        schur_membrane_oracle(np.eye(9), np.ones((2, 3)))
    with pytest.raises(ContractViolation, match="symmetric"):
        schur_complement(np.triu(random_spd(1)))


# -- inner film density -------------------------------------------------------------


def test_film_inner_across_and_along_thickness_layers():
    W = quadratic(kind="film", coefficient=Laminate("y", 2, (1.0, 4.0)))
    cfg = small(n_in=8)
    e = np.eye(3)
    across = film_inner_density(W, [0, 0, 0], [0, 0], np.outer(e[2], e[2]), cfg)[0]
    along = film_inner_density(W, [0, 0, 0], [0, 0], np.outer(e[0], e[0]), cfg)[0]
    assert across == pytest.approx(1.6, abs=1e-10)
    assert along == pytest.approx(2.5, abs=1e-10)


def test_film_inner_in_plane_layers():
    W = quadratic(kind="film", coefficient=Laminate("z", 0, (1.0, 4.0)))
    E = film_inner_tensor(W, [0, 0, 0], [0, 0], small(n_in=8))
    # gradient column 0 crosses the layers, columns 1 and 2 run along them
    expected = np.diag(np.tile([1.6, 2.5, 2.5], 3))
    np.testing.assert_allclose(E.matrix, expected, atol=1e-10)


def test_film_inner_respects_growth():
    W = pnorm(3.0, kind="film", coefficient=Product((Laminate("y", 2, (1.0, 2.0)),
                                                     Trigonometric("y", 0, 2.0, 1.0))), p=3.0, beta=8.0)
    rng = np.random.default_rng(5)
    for _ in range(3):
        xi = rng.standard_normal((3, 3))
        value, _ = film_inner_density(W, [0.1, 0.2, 0.3], rng.uniform(0, 1, 2), xi, small(n_in=4))
        assert W.growth.contains(value, np.linalg.norm(xi))


def test_film_inner_without_fast_thickness_is_the_integrand():
    C = random_spd(2)
    W = quadratic(kind="film", matrix=C, coefficient=Trigonometric("y", 1, 2.0, 1.0))
    xi = np.arange(9.0).reshape(3, 3) / 9
    value, stress = film_inner_density(W, [0, 0, 0], [0.3, 0.4], xi)
    a = 2.0 + np.cos(2 * np.pi * 0.4)
    # y is snapped to a 2**-32 lattice before the coefficient is evaluated
    assert value == pytest.approx(a * xi.ravel() @ C @ xi.ravel(), rel=1e-8)
    np.testing.assert_allclose(stress.ravel(), 2 * a * C @ xi.ravel(), rtol=1e-8)


# -- membrane density -------------------------------------------------------------


def test_membrane_homogeneous_identity():
    est = membrane_density(quadratic(kind="film"), [0, 0], XI_BAR, small())
    assert est.value == pytest.approx(np.sum(XI_BAR ** 2), rel=1e-12)
    assert max(est.corrector_sup) < 1e-10 and est.path == "quadratic"


@pytest.mark.parametrize("coef", [Laminate("y", 2, (1.0, 4.0)), StepX(2, (0.0,), (1.0, 4.0))])
def test_membrane_thickness_laminate_is_arithmetic(coef):
    # with b = 0 the thickness layers are simply averaged; no transverse strain helps
    W = quadratic(kind="film", coefficient=coef)
    est = membrane_density(W, [0, 0], XI_BAR, small(n_in=8))
    assert est.value == pytest.approx(2.5 * np.sum(XI_BAR ** 2), rel=1e-10)


@pytest.mark.parametrize("seed", [0, 3])
def test_membrane_anisotropic_matches_schur(seed):
    C = random_spd(seed)
    est = membrane_density(quadratic(kind="film", matrix=C), [0, 0], XI_BAR, small())
    assert est.value == pytest.approx(schur_membrane_oracle(C, XI_BAR), rel=1e-10)
    np.testing.assert_allclose(est.tensor.matrix, schur_complement(C), atol=1e-10)


def test_membrane_below_unrelaxed_average():
    C = random_spd(4)
    W = quadratic(kind="film", matrix=C, coefficient=Product((Laminate("y", 2, (1.0, 3.0)),
                                                              Trigonometric("y", 0, 2.0, 1.0))))
    est = membrane_density(W, [0, 0], XI_BAR, small(n_in=4, n=8))
    F = np.hstack([XI_BAR, np.zeros((3, 1))]).ravel()
    # averages of the coefficient: 2 for the layers, 2 for the cosine profile
    assert est.value <= 2.0 * 2.0 * F @ C @ F + 1e-10
    assert est.value >= 0.0 and est.growth_ok


def test_membrane_rejects_bad_shape():
    with pytest.raises(ContractViolation, match="3x2"):
        membrane_density(quadratic(kind="film"), [0, 0], np.ones((3, 3)))
    with pytest.raises(ContractViolation, match="FilmIntegrand"):
        membrane_density(quadratic(N=3, d=3), [0, 0], XI_BAR)


def test_corollary_paths_agree():
    C = random_spd(6)
    W = quadratic(kind="film", matrix=C, coefficient=Product((Laminate("y", 2, (1.0, 4.0)),
                                                              Trigonometric("y", 1, 2.0, 1.0))))
    cfg = small(n_in=4, n=4)
    direct = corollary_single_scale(W, [0, 0], XI_BAR, cfg, path="direct")
    lifted = corollary_single_scale(W, [0, 0], XI_BAR, cfg, path="lifted")
    assert direct.value == pytest.approx(lifted.value, rel=1e-8)
    assert direct.path.endswith("/transverse")


def test_corollary_rejects_in_plane_fast_dependence():
    W = quadratic(kind="film", coefficient=Laminate("z", 0, (1.0, 4.0)))
    with pytest.raises(ContractViolation):
        corollary_single_scale(W, [0, 0], XI_BAR)
