import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bubble_hjb.errors import BracketError
from bubble_hjb.grid import ScalarField, constant, field_from, make_grid
from bubble_hjb.spectral import (GATE_TOL, Regime, critical_lambda, existence_gate,
                                 operator_matrix, principal_eigenpair)
from oracles import dense_lambda1, dense_operator, smooth_potential, symmetric_lambda1
from scipy.optimize import brentq


def test_constant_potential():
    g = make_grid(101)
    pair = principal_eigenpair(1.0, constant(g, 0.0), constant(g, -2.0))
    assert pair.lambda1 == pytest.approx(2.0, abs=1e-12)
    np.testing.assert_allclose(pair.phi.values, 1.0, atol=1e-12)


def test_constant_potential_with_drift():
    g = make_grid(101)
    pair = principal_eigenpair(1.0, constant(g, 5.0), constant(g, 3.0))
    assert pair.lambda1 == pytest.approx(-3.0, abs=1e-12)
    np.testing.assert_allclose(pair.phi.values, 1.0, atol=1e-12)


def test_cosine_potential_matches_dense_eigensolver():
    g = make_grid(1024)
    a = field_from(g, lambda x: np.cos(2 * np.pi * x))
    pair = principal_eigenpair(0.05, None, a)
    assert pair.lambda1 == pytest.approx(dense_lambda1(0.05, a), abs=1e-8)


def test_matrix_agrees_with_independent_assembly():
    g = make_grid(40)
    rng = np.random.default_rng(3)
    a = smooth_potential(rng, g)
    b = smooth_potential(rng, g)
    np.testing.assert_allclose(operator_matrix(0.3, b, a),
                               dense_operator(0.3, b.values, a.values, g.h), rtol=1e-14)


def test_drift_potential_matches_dense_eigensolver():
    g = make_grid(200)
    rng = np.random.default_rng(11)
    a = smooth_potential(rng, g)
    b = smooth_potential(rng, g, scale=0.5)
    pair = principal_eigenpair(0.1, b, a)
    assert pair.lambda1 == pytest.approx(dense_lambda1(0.1, a, b), abs=1e-8)
    assert np.all(pair.phi.values > 0) and pair.phi.values.max() == 1.0
    lv = operator_matrix(0.1, b, a) @ pair.phi.values
    assert np.max(np.abs(lv - pair.lambda1 * pair.phi.values)) <= pair.residual + 1e-12


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.floats(0.02, 0.5))
def test_eigenfunction_is_positive_and_normalized(seed, nu):
    g = make_grid(129)
    a = smooth_potential(np.random.default_rng(seed), g, scale=2.0)
    pair = principal_eigenpair(nu, None, a)
    assert np.all(pair.phi.values > 0)
    assert pair.phi.values.max() == 1.0
    assert pair.lambda1 == pytest.approx(symmetric_lambda1(nu, a), abs=1e-8)


@settings(max_examples=15)
@given(st.integers(0, 2**31), st.floats(-3.0, 3.0))
def test_constant_shift_moves_lambda1_exactly(seed, shift):
    g = make_grid(129)
    a = smooth_potential(np.random.default_rng(seed), g)
    lam = principal_eigenpair(0.1, None, a).lambda1
    lam_shifted = principal_eigenpair(0.1, None, ScalarField(g, a.values + shift)).lambda1
    assert lam_shifted == pytest.approx(lam - shift, abs=1e-10)


def test_shift_by_a_tenth():
    g = make_grid(1024)
    a = field_from(g, lambda x: np.sin(3 * x))
    lam = principal_eigenpair(0.1, None, a).lambda1
    lam2 = principal_eigenpair(0.1, None, ScalarField(g, a.values + 0.1)).lambda1
    assert lam2 - lam == pytest.approx(-0.1, abs=1e-10)


# -- existence gate ---------------------------------------------------------------------

def test_gate_negative_constant():
    v = existence_gate(0.1, constant(make_grid(65), -1.0))
    assert v.regime is Regime.ZERO_ONLY
    assert v.lambda1 == pytest.approx(1.0, abs=1e-12)


def test_gate_nonnegative_a():
    v = existence_gate(0.1, constant(make_grid(65), 0.5))
    assert v.regime is Regime.DEGENERATE_NONNEGATIVE_A


def test_gate_affine_matches_dense_sign():
    g = make_grid(513)
    a = field_from(g, lambda x: 4 * x - 1)
    v = existence_gate(0.1, a)
    oracle = symmetric_lambda1(0.1, a)
    assert np.sign(v.lambda1) == np.sign(oracle)
    assert v.regime is (Regime.UNIQUE_POSITIVE if oracle < -GATE_TOL else Regime.ZERO_ONLY)


@settings(max_examples=20)
@given(st.integers(0, 2**31), st.floats(-1.5, 0.5))
def test_gate_unique_positive_implies_positive_max(seed, mean):
    g = make_grid(65)
    a = smooth_potential(np.random.default_rng(seed), g, mean=mean)
    v = existence_gate(0.1, a)
    if v.regime is Regime.UNIQUE_POSITIVE:
        assert a.values.max() > 0
    if a.values.min() >= 0:
        assert v.regime is Regime.DEGENERATE_NONNEGATIVE_A


# -- critical lambda ---------------------------------------------------------------------

def test_critical_lambda_constant_profile():
    g = make_grid(65)
    assert critical_lambda(0.1, constant(g, 1.0), (0.0, 3.0)) == pytest.approx(1.0, abs=1e-10)


def test_critical_lambda_matches_dense_bisection():
    g = make_grid(257)
    r = field_from(g, lambda x: 1 - np.cos(2 * np.pi * x))
    lam_c = critical_lambda(0.1, r, (0.0, 5.0))
    oracle = brentq(lambda t: symmetric_lambda1(0.1, ScalarField(g, t * r.values - 1.0)),
                    0.0, 5.0, xtol=1e-12)
    assert lam_c == pytest.approx(oracle, abs=1e-8)


def test_critical_lambda_bracket_without_sign_change():
    g = make_grid(65)
    r = field_from(g, lambda x: 1 - np.cos(2 * np.pi * x))
    with pytest.raises(BracketError):
        critical_lambda(0.1, r, (0.0, 0.01))
