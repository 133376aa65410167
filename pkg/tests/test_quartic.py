import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gbmstab.model import LinearSDESystem, random_linear_oscillator
from gbmstab.quartic import (
    CandidateLyapunov,
    QuarticForm,
    generator_apply,
    generator_identity_residual,
    h_coefficient_tensor,
    h_coefficients,
    h_eval,
    lyapunov_value_grad_hess,
    norm4_coefficients,
    q_matrix,
    q_vector,
    quartic_exponents,
)
from gbmstab.verify import random_system


def direct_h(A, Bs, Q, p, x):
    """H straight from its definition, one point at a time."""
    M = A.T @ Q + Q @ A + sum(B.T @ Q @ B for B in Bs)
    val = -(x @ M @ x) * (x @ Q @ x)
    for B in Bs:
        val += (2 - p) / 4 * (x @ (Q @ B + B.T @ Q) @ x) ** 2
    return val


def random_spd(rng, n):
    W = rng.normal(size=(n, n))
    return W @ W.T + 0.5 * np.eye(n)


systems = st.tuples(st.integers(2, 4), st.integers(0, 3), st.integers(0, 2**31))


def test_exponent_order_and_count():
    assert quartic_exponents(2) == ((4, 0), (3, 1), (2, 2), (1, 3), (0, 4))
    for n in range(1, 7):
        assert len(quartic_exponents(n)) == math.comb(n + 3, 4)


def test_norm4_coefficients():
    form = QuarticForm(2, norm4_coefficients(2))
    assert form.coeffs == {(4, 0): 1.0, (3, 1): 0.0, (2, 2): 2.0, (1, 3): 0.0, (0, 4): 1.0}


def test_deterministic_contraction():
    system = LinearSDESystem("ode", -np.eye(3), ())
    cand = CandidateLyapunov(np.eye(3), 1.0)
    x = np.array([0.3, -1.0, 2.0])
    assert h_eval(system, cand, x) == pytest.approx(2 * np.dot(x, x) ** 2)


@settings(max_examples=40, deadline=None)
@given(systems, st.floats(0.05, 4.0))
def test_h_eval_matches_definition(case, p):
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    Q = random_spd(rng, n)
    X = rng.normal(size=(7, n))
    got = h_eval(system, CandidateLyapunov(Q, p), X)
    want = [direct_h(system.A, system.B, Q, p, x) for x in X]
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(systems, st.floats(0.05, 4.0))
def test_coefficients_fit_pointwise_values(case, p):
    """Coefficients agree with a least-squares fit to the definition on random points."""
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    Q = random_spd(rng, n)
    exps = np.array(quartic_exponents(n))
    X = rng.normal(size=(4 * len(exps), n))
    V = np.prod(X[:, None, :] ** exps[None], axis=2)
    y = np.array([direct_h(system.A, system.B, Q, p, x) for x in X])
    fitted = np.linalg.lstsq(V, y, rcond=None)[0]
    np.testing.assert_allclose(h_coefficients(system, Q, p).values, fitted,
                               atol=1e-8 * (1 + np.max(np.abs(fitted))))


@settings(max_examples=25, deadline=None)
@given(systems, st.floats(0.05, 4.0))
def test_coefficient_tensor_is_quadratic_in_q(case, p):
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    Q = random_spd(rng, n)
    q = q_vector(Q)
    T = h_coefficient_tensor(system, p)
    np.testing.assert_allclose(np.einsum("kab,a,b->k", T, q, q), h_coefficients(system, Q, p).values,
                               atol=1e-9 * (1 + np.max(np.abs(T))))


@settings(max_examples=25, deadline=None)
@given(systems, st.floats(0.05, 3.0), st.floats(0.1, 10.0))
def test_scaling_q_scales_h_quadratically(case, p, s):
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    Q = random_spd(rng, n)
    np.testing.assert_allclose(h_coefficients(system, s * Q, p).values,
                               s * s * h_coefficients(system, Q, p).values, rtol=1e-9, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(systems, st.floats(0.05, 2.0), st.floats(0.05, 2.0))
def test_h_decreases_in_p(case, p1, p2):
    n, ell, seed = case
    lo, hi = sorted((p1, p2))
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    Q = random_spd(rng, n)
    X = rng.normal(size=(20, n))
    assert np.all(h_eval(system, CandidateLyapunov(Q, lo), X)
                  >= h_eval(system, CandidateLyapunov(Q, hi), X) - 1e-9)


def test_q_vector_round_trip():
    rng = np.random.default_rng(3)
    Q = random_spd(rng, 4)
    np.testing.assert_array_equal(q_matrix(q_vector(Q), 4), Q)


def test_candidate_validation():
    with pytest.raises(ValueError):
        CandidateLyapunov([[1, 2], [0, 1]], 1.0)
    with pytest.raises(ValueError):
        CandidateLyapunov(np.eye(2), 0.0)
    with pytest.raises(ValueError):
        CandidateLyapunov(np.eye(2), 1.0, c=-1.0)
    with pytest.raises(ValueError):
        CandidateLyapunov(np.ones((2, 3)), 1.0)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        h_eval(random_linear_oscillator(), CandidateLyapunov(np.eye(3), 1.0), np.ones(3))


def test_origin_excluded():
    with pytest.raises(ValueError):
        lyapunov_value_grad_hess(CandidateLyapunov(np.eye(2), 0.5), np.zeros(2))


def numeric_generator(system, cand, x, h=1e-5):
    """LV by central finite differences of V, independent of the closed forms."""
    V = lambda y: float(y @ cand.Q @ y) ** (cand.p / 2)  # noqa: E731
    n = len(x)
    grad = np.array([(V(x + h * e) - V(x - h * e)) / (2 * h) for e in np.eye(n)])
    hess = np.zeros((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        ei, ej = np.eye(n)[i] * h, np.eye(n)[j] * h
        hess[i, j] = (V(x + ei + ej) - V(x + ei - ej) - V(x - ei + ej) + V(x - ei - ej)) / (4 * h * h)
    return grad @ system.A @ x + 0.5 * sum((B @ x) @ hess @ (B @ x) for B in system.B)


@settings(max_examples=20, deadline=None)
@given(systems, st.floats(0.2, 3.0))
def test_generator_matches_finite_differences(case, p):
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    cand = CandidateLyapunov(random_spd(rng, n), p)
    x = rng.normal(size=n)
    want = numeric_generator(system, cand, x)
    assert generator_apply(system, cand, x) == pytest.approx(want, rel=1e-4, abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(systems, st.floats(0.05, 4.0))
def test_generator_identity(case, p):
    n, ell, seed = case
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    cand = CandidateLyapunov(random_spd(rng, n), p)
    x = rng.normal(size=n)
    scale = abs(generator_apply(system, cand, x)) + 1.0
    assert abs(generator_identity_residual(system, cand, x)) <= 1e-10 * scale
