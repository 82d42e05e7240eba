import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from riskcbf.exceptions import DomainError, NoBracket, NotPositiveDefinite
from riskcbf.numerics import (cholesky, eig_sym, is_pd, reg_inc_beta, reg_inc_beta_inv, root_find_monotone,
                              solve_spd)

# I_0.7(5, 3) by adaptive quadrature of the Beta(5, 3) density, frozen
I_07_5_3 = 0.6470694999999999


def test_cholesky_identity():
    np.testing.assert_allclose(cholesky(np.eye(2)), np.eye(2))


def test_cholesky_diagonal():
    np.testing.assert_allclose(cholesky(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


def test_cholesky_multiply_back():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    L = cholesky(A)
    assert np.allclose(np.triu(L, 1), 0.0)
    np.testing.assert_allclose(L @ L.T, A, atol=1e-12)


@pytest.mark.parametrize("A", [np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros((2, 2)), np.diag([1.0, -1.0])])
def test_cholesky_rejects_indefinite(A):
    with pytest.raises(NotPositiveDefinite):
        cholesky(A)
    assert not is_pd(A)


def test_cholesky_rejects_asymmetric():
    with pytest.raises(ValueError):
        cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))


def test_solve_spd_examples(rng):
    b = np.array([0.3, -2.0])
    np.testing.assert_allclose(solve_spd(np.eye(2), b), b)
    np.testing.assert_allclose(solve_spd(np.diag([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    B = rng.normal(size=(3, 3))
    A = B @ B.T + 3 * np.eye(3)
    y = rng.normal(size=3)
    assert np.linalg.norm(A @ solve_spd(A, y) - y) < 1e-12


@pytest.mark.parametrize("f,lo,hi,root", [
    (lambda x: x - 1.0, 0.0, 2.0, 1.0),
    (lambda x: x * x - 4.0, 0.0, 10.0, 2.0),
    (lambda x: math.exp(-x) - 0.5, 0.0, 5.0, math.log(2.0)),
])
def test_root_find_examples(f, lo, hi, root):
    assert abs(root_find_monotone(f, lo, hi) - root) < 1e-10


def test_root_find_with_derivative():
    x = root_find_monotone(lambda x: x**3 - 2.0, 0.0, 2.0, fprime=lambda x: 3 * x * x)
    assert abs(x - 2 ** (1 / 3)) < 1e-12


def test_root_find_no_bracket():
    with pytest.raises(NoBracket):
        root_find_monotone(lambda x: x + 1.0, 0.0, 1.0)
    with pytest.raises(NoBracket):
        root_find_monotone(lambda x: x, 1.0, 1.0)


@given(st.floats(-50, 50), st.floats(0.01, 20))
def test_root_find_property(c, slope):
    x = root_find_monotone(lambda t: slope * (t - c), -100.0, 100.0, tol=1e-12)
    assert abs(slope * (x - c)) <= 1e-12


def test_reg_inc_beta_examples():
    assert abs(reg_inc_beta(1, 1, 0.3) - 0.3) < 1e-14
    assert abs(reg_inc_beta(2, 2, 0.5) - 0.5) < 1e-14
    assert abs(reg_inc_beta(5, 3, 0.7) - I_07_5_3) < 1e-8


def test_reg_inc_beta_quadrature_oracle():
    val, _ = integrate.quad(lambda t: t**4 * (1 - t) ** 2 / special.beta(5, 3), 0.0, 0.7, epsabs=1e-14)
    assert abs(val - I_07_5_3) < 1e-12


def test_reg_inc_beta_domain():
    for args in [(0, 1, 0.5), (1, -1, 0.5), (1, 1, 1.5)]:
        with pytest.raises(DomainError):
            reg_inc_beta(*args)


@given(st.floats(0.2, 500), st.floats(0.2, 500), st.floats(0.0, 1.0))
def test_reg_inc_beta_matches_scipy(a, b, x):
    assert abs(reg_inc_beta(a, b, x) - special.betainc(a, b, x)) < 1e-9


@given(st.floats(0.5, 5000), st.floats(0.5, 50), st.floats(0.001, 0.999))
def test_reg_inc_beta_inverse_roundtrip(a, b, y):
    x = reg_inc_beta_inv(a, b, y)
    assert abs(reg_inc_beta(a, b, x) - y) < 1e-10


def test_eig_sym_examples(rng):
    w, V = eig_sym(np.diag([1.0, 4.0]))
    np.testing.assert_allclose(w, [1.0, 4.0])
    np.testing.assert_allclose(np.abs(V), np.eye(2))
    w, _ = eig_sym([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(w, [1.0, 3.0])
    B = rng.normal(size=(3, 3))
    A = B + B.T
    w, V = eig_sym(A)
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, A, atol=1e-12)
