import numpy as np
import pytest

from homoglab.errors import ContractViolation
from homoglab.integrand import AffineX, Laminate, Product, StepX, Trigonometric, pnorm, quadratic
from homoglab.direct import (DirectSimConfig, gamma_gap_report, homogenized_minimum_1d,
                             homogenized_minimum_strip, minimize_F_eps_1d, minimize_film_eps_strip)
from homoglab.reiterated import CellConfig, ReiterationConfig
from homoglab.thinfilm import FilmConfig, MembraneConfig, schur_membrane_oracle

SEPARABLE = Product((Laminate("y", 0, (1.0, 4.0)), Laminate("z", 0, (1.0, 9.0))))
# harmonic means 1.6 and 1.8 of the two laminates
SEPARABLE_HOM = 1.6 * 1.8


def film_cfg():
    return FilmConfig(inner=CellConfig(n=4), membrane=MembraneConfig(n=4, n3=4))


# -- configuration ----------------------------------------------------------------


def test_config_commensurability():
    cfg = DirectSimConfig(0.25)
    assert (cfg.inv_eps, cfg.inv_eps2) == (4, 16)
    assert cfg.h == pytest.approx(1 / 128) and cfg.h3 == pytest.approx(1 / 32)
    with pytest.raises(ContractViolation, match="commensurate"):
        DirectSimConfig(0.3)
    with pytest.raises(ContractViolation):
        DirectSimConfig(1.5)
    with pytest.raises(ContractViolation):
        DirectSimConfig(0.5, points_per_fine_period=3)
    with pytest.raises(ContractViolation):
        DirectSimConfig(0.5, domain="disk")


# -- 1D bulk ----------------------------------------------------------------------


def test_constant_integrand_has_no_gap():
    f = quadratic()
    res = minimize_F_eps_1d(f, 1.3, DirectSimConfig(0.5))
    assert res.energy == pytest.approx(1.69, abs=1e-10)
    assert res.dofs == 4 * 8 - 1
    assert homogenized_minimum_1d(f, 1.3) == pytest.approx(1.69, abs=1e-10)


@pytest.mark.parametrize("eps", [0.5, 0.25, 0.125])
def test_separable_laminate_direct_vs_hom(eps):
    res = minimize_F_eps_1d(quadratic(coefficient=SEPARABLE), 1.0, DirectSimConfig(eps))
    assert res.energy == pytest.approx(SEPARABLE_HOM, rel=0.05)
    assert not res.upper_bound_only


def test_pnorm_laminate_direct():
    p = 3.0
    f = pnorm(p, coefficient=SEPARABLE)
    hom = homogenized_minimum_1d(f, 1.0, ReiterationConfig(inner=CellConfig(n=16), outer=CellConfig(n=16)))
    # p-harmonic means of (1, 4) and (1, 9)
    oracle = (0.5 + 0.5 * 4 ** -0.5) ** -2 * (0.5 + 0.5 * 9 ** -0.5) ** -2
    assert hom == pytest.approx(oracle, rel=1e-8)
    res = minimize_F_eps_1d(f, 1.0, DirectSimConfig(0.25))
    assert res.energy == pytest.approx(oracle, rel=0.02)


def test_homogenized_minimum_with_slow_dependence():
    f = quadratic(coefficient=AffineX(0, 1.0, 0.5))
    expected = 0.5 / np.log(1.5)
    assert homogenized_minimum_1d(f, 1.0) == pytest.approx(expected, rel=1e-12)
    # P1 elements with exact element averages: the discrete value is O(h^2) above
    res = minimize_F_eps_1d(f, 1.0, DirectSimConfig(0.25))
    assert 0 <= res.energy - expected <= 1e-4


def test_homogenized_minimum_rejects_nonquadratic_slow_dependence():
    with pytest.raises(ContractViolation):
        homogenized_minimum_1d(pnorm(3.0, coefficient=AffineX(0, 1.0, 0.5)), 1.0)
    with pytest.raises(ContractViolation):
        minimize_F_eps_1d(quadratic(N=2), 1.0, DirectSimConfig(0.5))


# -- gamma-gap reports -------------------------------------------------------------


def test_gap_report_verdict_for_laminate():
    rep = gamma_gap_report(quadratic(coefficient=SEPARABLE), 1.0, [0.5, 0.25, 0.125], DirectSimConfig(0.5))
    assert [r.eps for r in rep.rows] == [0.5, 0.25, 0.125]
    assert rep.rows[0].min_F_hom == pytest.approx(SEPARABLE_HOM, rel=1e-10)
    assert rep.verdict and rep.monotone and rep.final_relative_gap < 0.02


def test_gap_report_fails_on_persistent_gap():
    # a deliberately wrong homogenized value cannot be approached
    rep = gamma_gap_report(quadratic(coefficient=SEPARABLE), 1.0, [0.5, 0.25], DirectSimConfig(0.5),
                           homogenized=SEPARABLE_HOM * 1.1)
    assert not rep.verdict and rep.final_relative_gap > 0.05


def test_gap_report_rejects_bad_eps_lists():
    f = quadratic()
    with pytest.raises(ContractViolation):
        gamma_gap_report(f, 1.0, [], DirectSimConfig(0.5))
    with pytest.raises(ContractViolation):
        gamma_gap_report(f, 1.0, [0.25, 0.5], DirectSimConfig(0.5))


def test_gap_report_checks_every_eps_up_front():
    with pytest.raises(ContractViolation, match="commensurate"):
        gamma_gap_report(quadratic(), 1.0, [0.5, 0.3], DirectSimConfig(0.5), homogenized=1.0)


def test_gap_report_records_failing_rows():
    from homoglab.cell import SolverConfig
    f = pnorm(1.5, coefficient=SEPARABLE)
    template = DirectSimConfig(0.5, solver=SolverConfig(method="lbfgs", max_iter=1))
    rep = gamma_gap_report(f, 1.0, [0.5, 0.25], template, homogenized=1.0)
    assert len(rep.rows) == 2 and all(rep.errors)
    assert np.isnan(rep.rows[0].min_F_eps) and not rep.verdict


# -- film strip -------------------------------------------------------------------


def test_strip_homogeneous_energy():
    W = quadratic(kind="film")
    res = minimize_film_eps_strip(W, [1.0, -0.5, 0.25], DirectSimConfig(0.5, domain="strip"))
    assert res.energy == pytest.approx(2 * (1 + 0.25 + 0.0625), rel=1e-12)
    n1, n3 = 4 * 8, 2 * 2 * 8
    assert res.dofs == 3 * (n1 - 1) * (n3 + 1)


@pytest.mark.parametrize("coef", [StepX(2, (0.0,), (1.0, 4.0)), Laminate("y", 2, (1.0, 4.0))])
def test_strip_thickness_laminate(coef):
    W = quadratic(kind="film", coefficient=coef)
    xi_bar = [1.0, 0.0, 0.0]
    hom = homogenized_minimum_strip(W, xi_bar, film_cfg())
    assert hom == pytest.approx(2 * 2.5, rel=1e-10)
    res = minimize_film_eps_strip(W, xi_bar, DirectSimConfig(0.5, domain="strip"))
    assert res.energy == pytest.approx(hom, rel=0.05)


def test_strip_anisotropic_gap_shrinks():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((9, 9))
    C = A @ A.T / 9 + 0.5 * np.eye(9)
    W = quadratic(kind="film", matrix=C)
    xi_bar = np.array([1.0, 0.5, -0.5])
    oracle = 2 * schur_membrane_oracle(C, np.column_stack([xi_bar, np.zeros(3)]))
    assert homogenized_minimum_strip(W, xi_bar, film_cfg()) == pytest.approx(oracle, rel=1e-10)
    template = DirectSimConfig(0.5, points_per_fine_period=4, domain="strip")
    rep = gamma_gap_report(W, xi_bar, [0.5, 0.25], template, homogenized=oracle)
    assert all(r.min_F_eps >= oracle - 1e-10 for r in rep.rows)  # lateral clamping only adds energy
    assert rep.rows[1].gap < rep.rows[0].gap


def test_strip_rejects_second_in_plane_dependence():
    W = quadratic(kind="film", coefficient=Trigonometric("y", 1, 2.0, 1.0))
    with pytest.raises(ContractViolation, match="y\\[1\\]"):
        minimize_film_eps_strip(W, [1.0, 0, 0], DirectSimConfig(0.5, domain="strip"))
    with pytest.raises(ContractViolation):
        minimize_film_eps_strip(quadratic(kind="film"), np.ones((3, 3)), DirectSimConfig(0.5, domain="strip"))
