import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflab.forms import AltForm, basis, wedge_all


def rand_form(rng, dim, k, batch=()):
    n = math.comb(dim, k)
    c = rng.normal(size=batch + (n,)) + 1j * rng.normal(size=batch + (n,))
    return AltForm(dim, k, c)


degrees = st.integers(0, 3)
dims = st.integers(1, 8)
seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=80, deadline=None)
@given(dims, degrees, degrees, seeds)
def test_graded_commutativity(dim, p, q, seed):
    rng = np.random.default_rng(seed)
    a, b = rand_form(rng, dim, min(p, dim)), rand_form(rng, dim, min(q, dim))
    sign = (-1) ** (a.degree * b.degree)
    assert a.wedge(b).allclose(b.wedge(a) * sign)


@settings(max_examples=80, deadline=None)
@given(st.integers(3, 8), st.sampled_from([1, 3]), seeds)
def test_odd_form_squares_to_zero(dim, k, seed):
    a = rand_form(np.random.default_rng(seed), dim, k)
    assert np.allclose(a.wedge(a).coeffs, 0.0, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(dims, degrees, degrees, degrees, seeds)
def test_associativity(dim, p, q, r, seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rand_form(rng, dim, min(k, dim)) for k in (p, q, r))
    assert a.wedge(b).wedge(c).allclose(a.wedge(b.wedge(c)), rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_symplectic_power_combinatorics(n):
    omega = AltForm.from_dict(2 * n, 2, {(2 * j, 2 * j + 1): 2.0 for j in range(n)})
    assert omega.power(n).top() == pytest.approx(2**n * math.factorial(n))
    assert not np.any(omega.power(n + 1).coeffs)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(1, 3), seeds)
def test_interior_product_is_an_antiderivation(dim, p, q, seed):
    rng = np.random.default_rng(seed)
    p, q = min(p, dim), min(q, dim)
    a, b = rand_form(rng, dim, p), rand_form(rng, dim, q)
    v = rng.normal(size=dim)
    lhs = a.wedge(b).interior(v)
    rhs = a.interior(v).wedge(b) + a.wedge(b.interior(v)) * ((-1) ** p)
    assert lhs.allclose(rhs, atol=1e-10)


def test_interior_on_one_form_is_evaluation():
    rng = np.random.default_rng(0)
    a = rand_form(rng, 5, 1)
    v = rng.normal(size=5)
    assert a.interior(v).coeffs[0] == pytest.approx(a.coeffs @ v)


def test_batched_wedge_matches_loop():
    rng = np.random.default_rng(1)
    a, b = rand_form(rng, 4, 1, (6,)), rand_form(rng, 4, 2, (6,))
    w = a.wedge(b)
    for i in range(6):
        ai = AltForm(4, 1, a.coeffs[i])
        bi = AltForm(4, 2, b.coeffs[i])
        np.testing.assert_allclose(w.coeffs[i], ai.wedge(bi).coeffs)


def test_batched_scalar_multiplication():
    rng = np.random.default_rng(2)
    a = rand_form(rng, 4, 2, (3,))
    s = np.array([1.0, 2.0, -1.0])
    np.testing.assert_allclose((a * s).coeffs, a.coeffs * s[:, None])


def test_coordinate_volume_form():
    dx = [AltForm.from_dict(4, 1, {(i,): 1.0}) for i in range(4)]
    assert wedge_all(*dx).top() == 1.0
    assert wedge_all(dx[1], dx[0], dx[2], dx[3]).top() == -1.0


def test_basis_is_lexicographic():
    assert basis(4, 2) == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def test_validation():
    with pytest.raises(ValueError):
        AltForm(4, 2, np.zeros(5))
    with pytest.raises(ValueError):
        AltForm.from_dict(4, 2, {(2, 1): 1.0})
    with pytest.raises(ValueError):
        AltForm.zero(4, 2) + AltForm.zero(4, 1)
    with pytest.raises(ValueError):
        AltForm.zero(4, 2).top()
