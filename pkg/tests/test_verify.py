import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from gbmstab.bmi import assemble_lmi_p2
from gbmstab.model import (
    LinearSDESystem,
    diagonal_noise,
    offdiagonal_noise,
    random_linear_oscillator,
)
from gbmstab.quartic import CandidateLyapunov, h_eval, q_matrix
from gbmstab.sdp import Status, min_eigenvalue, solve_lmi_feasibility
from gbmstab.verify import (
    StabilityCertificate,
    kronecker_operator,
    lmi_iff_spectral_crossvalidate,
    load_certificate,
    mean_square_spectral_test,
    random_system,
    second_moment_evolve,
    sphere_min,
    sphere_tolerance,
    sufficient_conditions_crosscheck,
    unvec,
    vec,
    verify_certificate,
)


def angle_grid_min(system, Q, p, c, points=10**6):
    theta = np.linspace(0.0, np.pi, points, endpoint=False)
    X = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return float(np.min(h_eval(system, CandidateLyapunov(Q, p), X) - c))


@pytest.mark.parametrize("name", ["oscillator gamma=0.2", "satellite", "two-inertia"])
def test_printed_certificates_pass_both_methods(printed, name):
    system, cert = printed[name]
    report = verify_certificate(system, cert, method="both")
    assert report.overall, report.to_dict()
    assert {c.name for c in report.checks} >= {"Q >= eps*I", "c >= eps", "sphere minimum"}


def test_expanding_system_fails():
    system = LinearSDESystem("up", np.eye(2), ())
    cert = StabilityCertificate(1.0, 0.01, 0.01, np.eye(2))
    report = verify_certificate(system, cert)
    assert not report.overall
    assert report.get("sphere minimum").residual == pytest.approx(-2.01, abs=1e-9)


def test_sphere_min_contracting_identity():
    system = LinearSDESystem("down", -np.eye(2), ())
    value, argmin = sphere_min(system, np.eye(2), 1.0, 1.0)
    assert value == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(argmin) == pytest.approx(1.0)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 2.5))
def test_sphere_min_matches_angle_grid(seed, p):
    rng = np.random.default_rng(seed)
    system = random_system(rng, 2, 2)
    W = rng.normal(size=(2, 2))
    Q = W @ W.T + 0.2 * np.eye(2)
    got, _ = sphere_min(system, Q, p, 0.05, seed=seed)
    assert got == pytest.approx(angle_grid_min(system, Q, p, 0.05), abs=1e-6)


def test_sphere_min_deterministic():
    system = random_system(np.random.default_rng(2), 3, 2)
    a = sphere_min(system, np.eye(3), 0.5, 0.01, budget=500, seed=4)
    b = sphere_min(system, np.eye(3), 0.5, 0.01, budget=500, seed=4)
    assert a[0] == b[0] and np.array_equal(a[1], b[1])


def test_printed_tumor_q_margin_below_eps(printed):
    """The printed tumor Q keeps H positive but with margin about 8.6e-5, not eps = 0.01."""
    system, cert = printed["tumor model"]
    assert sphere_min(system, cert.Q, 2.0, 0.0)[0] == pytest.approx(8.59e-5, rel=1e-2)
    relaxed = StabilityCertificate(2.0, 1e-5, 1e-5, cert.Q)
    assert verify_certificate(system, relaxed).overall
    assert not verify_certificate(system, cert).overall


def test_gram_check_detects_wrong_gram(printed):
    system, cert = printed["oscillator gamma=0.2"]
    good = verify_certificate(system, cert, method="gram")
    assert good.overall
    bad = StabilityCertificate(cert.p, cert.eps, cert.c, cert.Q, np.eye(3))
    assert not verify_certificate(system, bad, method="gram").get("gram coefficient match").passed


def test_non_positive_q_fails_early():
    system = random_linear_oscillator()
    report = verify_certificate(system, StabilityCertificate(2.0, 0.01, 0.01, -np.eye(2)))
    assert not report.overall and len(report.checks) == 2


def test_verify_argument_errors():
    system = random_linear_oscillator()
    cert = StabilityCertificate(2.0, 0.01, 0.01, np.eye(3))
    with pytest.raises(ValueError):
        verify_certificate(system, cert)
    with pytest.raises(ValueError):
        verify_certificate(system, StabilityCertificate(2.0, 0.01, 0.01, np.eye(2)), method="x")
    with pytest.raises(ValueError):
        StabilityCertificate(2.0, 0.0, 0.01, np.eye(2))


def test_certificate_file_round_trip(tmp_path):
    cert = StabilityCertificate(0.5, 0.01, 0.02, np.eye(2), np.eye(3))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cert.to_dict()))
    back = load_certificate(path)
    assert (back.p, back.eps, back.c) == (0.5, 0.01, 0.02)
    np.testing.assert_array_equal(back.gram, np.eye(3))
    path.write_text("[1, 2]")
    with pytest.raises(ValueError):
        load_certificate(path)
    path.write_text(json.dumps({"p": 1}))
    with pytest.raises(ValueError):
        load_certificate(path)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_gram_pass_implies_sphere_pass(seed):
    rng = np.random.default_rng(seed)
    system = random_system(rng, 2, 1, scale=1.0)
    system = LinearSDESystem("s", system.A - 3 * np.eye(2), system.B)
    out = solve_lmi_feasibility(assemble_lmi_p2(system, 0.01))
    if out.status is not Status.FEASIBLE:
        return
    Q = q_matrix(out.point, 2)
    cert = StabilityCertificate(2.0, 0.01, 0.01 * min_eigenvalue(Q), Q) if min_eigenvalue(Q) >= 1 else \
        StabilityCertificate(2.0, 0.01, 0.01, Q / min_eigenvalue(Q))
    gram = verify_certificate(system, cert, method="gram")
    if gram.overall:
        value, _ = sphere_min(system, cert.Q, 2.0, cert.c)
        assert value >= -sphere_tolerance(system, cert.Q)


@pytest.mark.parametrize("radius", [0.1, 1.0, 10.0])
def test_homogeneity(radius):
    rng = np.random.default_rng(0)
    system = random_system(rng, 3, 2)
    cand = CandidateLyapunov(np.eye(3) + 0.1, 0.5)
    X = rng.normal(size=(50, 3))
    U = X / np.linalg.norm(X, axis=1, keepdims=True)
    c = 0.3
    on_sphere = h_eval(system, cand, U) - c
    scaled = h_eval(system, cand, radius * U) - c * radius**4
    np.testing.assert_allclose(scaled, radius**4 * on_sphere, rtol=1e-9, atol=1e-12)


def test_spectral_examples():
    abscissa, stable = mean_square_spectral_test(LinearSDESystem("d", -np.eye(2), ()))
    assert abscissa == pytest.approx(-2.0) and stable
    np.testing.assert_allclose(kronecker_operator(LinearSDESystem("d", -np.eye(2), ())), -2 * np.eye(4))
    abscissa, stable = mean_square_spectral_test(diagonal_noise(lam=-1, sigma=(2.0,)))
    assert abscissa == pytest.approx(2.0) and not stable


def test_spectral_flip_near_unit_shear():
    lo, stable_lo = mean_square_spectral_test(offdiagonal_noise(2, sigma=0.9999997))
    hi, stable_hi = mean_square_spectral_test(offdiagonal_noise(2, sigma=0.9999998))
    assert lo < hi < 0 and stable_lo and stable_hi
    assert not mean_square_spectral_test(offdiagonal_noise(2, sigma=1.0001))[1]


def lyapunov_rhs(system, U):
    """dU/dt = AU + UA' + sum B U B', written in matrix form."""
    return system.A @ U + U @ system.A.T + sum(B @ U @ B.T for B in system.B)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 4), st.integers(0, 3), st.integers(0, 2**31))
def test_kronecker_operator_matches_matrix_form(n, ell, seed):
    rng = np.random.default_rng(seed)
    system = random_system(rng, n, ell)
    U = rng.normal(size=(n, n))
    U = U + U.T
    np.testing.assert_allclose(unvec(kronecker_operator(system) @ vec(U), n), lyapunov_rhs(system, U),
                               atol=1e-10)


@given(st.integers(1, 5), st.integers(0, 2**31))
def test_vec_round_trip(n, seed):
    U = np.random.default_rng(seed).normal(size=(n, n))
    np.testing.assert_array_equal(unvec(vec(U), n), U)
    np.testing.assert_array_equal(vec(U)[:n], U[0])


def test_second_moment_closed_forms():
    x0 = np.array([0.3, -2.0])
    system = random_linear_oscillator()
    np.testing.assert_allclose(second_moment_evolve(system, x0, 0.0), np.outer(x0, x0))
    ode = LinearSDESystem("d", -np.eye(2), ())
    np.testing.assert_allclose(second_moment_evolve(ode, x0, 0.7), np.exp(-1.4) * np.outer(x0, x0))
    U = second_moment_evolve(system, x0, 1.5)
    np.testing.assert_allclose(U, U.T, atol=1e-12)
    assert min_eigenvalue(U) >= -1e-12


def test_second_moment_satisfies_moment_ode():
    system = random_system(np.random.default_rng(9), 3, 2)
    x0 = np.array([1.0, 0.0, -1.0])
    h = 1e-5
    dU = (second_moment_evolve(system, x0, 0.5 + h) - second_moment_evolve(system, x0, 0.5 - h)) / (2 * h)
    np.testing.assert_allclose(dU, lyapunov_rhs(system, second_moment_evolve(system, x0, 0.5)),
                               rtol=1e-6, atol=1e-6)
    ref = linalg.expm(kronecker_operator(system) * 0.5) @ vec(np.outer(x0, x0))
    np.testing.assert_allclose(vec(second_moment_evolve(system, x0, 0.5)), ref)


def test_crossvalidation_small_batch():
    stats = lmi_iff_spectral_crossvalidate(lambda rng: random_system(rng, 2, 1), 30, seed=11)
    assert stats.tested == 30 and stats.mismatches == 0


def test_crossvalidation_noise_free_hurwitz():
    def hurwitz(rng):
        A = rng.uniform(-2, 2, size=(3, 3))
        shift = max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 1.0)
        return LinearSDESystem("h", A - shift * np.eye(3), ())

    stats = lmi_iff_spectral_crossvalidate(hurwitz, 10, seed=3)
    assert stats.mismatches == 0 and stats.tested == 10


def test_crossvalidation_requires_positive_count():
    with pytest.raises(ValueError):
        lmi_iff_spectral_crossvalidate(lambda rng: random_system(rng, 2, 1), 0)


def test_sufficient_condition_sweep_small():
    sweep = sufficient_conditions_crosscheck(30, seed=2)
    assert sweep.draws == 30 and not sweep.counterexamples
