"""Randomized property checks."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homoglab.cell import solve_cell
from homoglab.grid import CellGrid
from homoglab.integrand import Laminate, Trigonometric, pnorm, quadratic, wrap_unit
from homoglab.io import format_value
from homoglab.reiterated import laminate_oracle
from homoglab.thinfilm import schur_membrane_oracle

FAST = settings(max_examples=25, deadline=None)
positive = st.floats(0.1, 50.0)
finite = st.floats(-1e6, 1e6, allow_nan=False)


def fractions(k):
    return st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k).map(lambda w: np.asarray(w) / np.sum(w))


@FAST
@given(st.lists(positive, min_size=1, max_size=5).flatmap(
    lambda a: st.tuples(st.just(a), fractions(len(a)))))
def test_laminate_means_are_ordered(args):
    a, t = args
    phases = list(zip(t, a))
    harm = laminate_oracle(phases)
    arith = laminate_oracle(phases, "arithmetic")
    assert min(a) * (1 - 1e-12) <= harm <= arith * (1 + 1e-12) <= max(a) * (1 + 1e-12)
    assert laminate_oracle(phases[::-1]) == pytest.approx(harm, rel=1e-12)


@FAST
@given(positive, positive, st.sampled_from([4, 8, 16]), st.floats(-3, 3))
def test_periodic_two_phase_cell_is_harmonic(a1, a2, n, xi):
    f = quadratic(coefficient=Laminate("z", 0, (a1, a2)))
    sol = solve_cell(f.frozen([0.0], [0.0]), [[xi]], CellGrid(1, n=n))
    expected = 2 * a1 * a2 / (a1 + a2) * xi ** 2
    assert sol.value == pytest.approx(expected, rel=1e-10, abs=1e-12)


@FAST
@given(st.floats(0.2, 3.0), st.floats(2.0, 4.0))
def test_cell_value_is_homogeneous(t, p):
    f = pnorm(p, N=2, coefficient=Trigonometric("z", 1, 2.0, 1.0))
    g, grid = f.frozen([0, 0], [0, 0]), CellGrid(2, n=4)
    xi = np.array([[0.6, -0.8]])
    base = solve_cell(g, xi, grid).value
    assert solve_cell(g, t * xi, grid).value == pytest.approx(t ** p * base, rel=1e-7)


@FAST
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.1, 4.0))
def test_schur_is_between_zero_and_unrelaxed(seed, t):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((9, 9))
    C = A @ A.T + 0.1 * np.eye(9)
    xi_bar = rng.standard_normal((3, 2))
    F = np.hstack([xi_bar, np.zeros((3, 1))]).ravel()
    value = schur_membrane_oracle(C, xi_bar)
    assert -1e-9 <= value <= F @ C @ F * (1 + 1e-12) + 1e-12
    assert schur_membrane_oracle(C, t * xi_bar) == pytest.approx(t * t * value, rel=1e-9, abs=1e-12)


@FAST
@given(st.lists(finite, min_size=1, max_size=20), st.integers(-50, 50))
def test_wrap_is_shift_invariant(t, k):
    t = np.asarray(t)
    w = wrap_unit(t)
    assert np.all((w >= 0) & (w < 1))
    if np.all(np.abs(t) < 1e5):
        assert np.array_equal(w, wrap_unit(t + k))


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trips(v):
    assert float(format_value(v)) == v
