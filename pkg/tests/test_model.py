import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gbmstab.model import (
    LinearSDESystem,
    ModelError,
    build_builtin,
    builtin_models,
    commutativity_report,
    commutator,
    diagonal_noise,
    load_system,
    offdiagonal_noise,
    parse_param,
    random_linear_oscillator,
    sanov_pair,
    satellite,
    save_system,
    two_inertia,
)

finite = st.floats(-10, 10, allow_nan=False)


def square(n):
    return arrays(np.float64, (n, n), elements=finite)


def test_oscillator_file_loads(tmp_path):
    doc = {"name": "osc", "n": 2, "ell": 2, "A": [[0, 1], [-1, -0.2]],
           "B": [[[0, 0], [0, -0.3]], [[0, 0], [-0.5, 0]]], "metadata": {"gamma": "0.2"}}
    path = tmp_path / "osc.json"
    path.write_text(json.dumps(doc))
    system = load_system(path)
    ref = random_linear_oscillator(kappa=1, gamma=0.2, sigma1=0.3, sigma2=0.5)
    np.testing.assert_array_equal(system.A, ref.A)
    for got, want in zip(system.B, ref.B):
        np.testing.assert_array_equal(got, want)
    assert system.metadata == {"gamma": "0.2"}


def test_noise_shape_mismatch_rejected(tmp_path):
    doc = {"name": "bad", "n": 2, "ell": 1, "A": [[0, 1], [1, 0]], "B": [np.eye(3).tolist()]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelError):
        load_system(path)


def test_deterministic_system_allowed():
    system = LinearSDESystem("ode", -np.eye(2), ())
    assert system.ell == 0 and system.n == 2


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ModelError):
        LinearSDESystem("x", [[bad, 0], [0, 1]], ())


def test_unparseable_file(tmp_path):
    path = tmp_path / "junk.json"
    path.write_text("{not json")
    with pytest.raises(ModelError):
        load_system(path)


def test_ell_field_must_match(tmp_path):
    doc = {"name": "x", "n": 2, "ell": 2, "A": [[0, 0], [0, 0]], "B": [[[0, 0], [0, 0]]]}
    path = tmp_path / "x.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelError):
        load_system(path)


def test_arrays_are_read_only():
    system = two_inertia()
    with pytest.raises(ValueError):
        system.A[0, 0] = 5.0


def test_commutator_examples():
    A, B = sanov_pair().A, sanov_pair().B[0]
    # AB = [[5, 2], [2, 1]], BA = [[1, 2], [2, 5]]
    np.testing.assert_array_equal(commutator(A, B), [[4, 0], [0, -4]])
    V = np.arange(4.0).reshape(2, 2)
    np.testing.assert_array_equal(commutator(np.eye(2), V), np.zeros((2, 2)))
    np.testing.assert_array_equal(commutator(V, V), np.zeros((2, 2)))
    with pytest.raises(ModelError):
        commutator(np.eye(2), np.eye(3))


@given(square(3), square(3), square(3), finite)
def test_commutator_antisymmetric_bilinear(U, V, W, a):
    np.testing.assert_allclose(commutator(U, V), -commutator(V, U), atol=1e-9)
    np.testing.assert_allclose(commutator(a * U + W, V), a * commutator(U, V) + commutator(W, V),
                               atol=1e-6 * (1 + abs(a)) * 1e3)


def test_commutativity_reports():
    diag = commutativity_report(diagonal_noise(sigma=(2.0, 2.0)))
    assert diag.fully_commuting and all(diag.a_b_commute)
    assert not commutativity_report(random_linear_oscillator()).fully_commuting
    empty = commutativity_report(LinearSDESystem("ode", np.eye(2), ()))
    assert empty.fully_commuting and empty.a_b_commute == ()


def test_report_matrix_symmetric_with_true_diagonal():
    rep = commutativity_report(random_linear_oscillator())
    bb = np.array(rep.b_b_commute)
    assert np.array_equal(bb, bb.T) and bb.diagonal().all()


@given(square(2), st.lists(finite, min_size=1, max_size=4))
def test_identity_noise_commutes_exactly(A, scales):
    system = LinearSDESystem("s", A, tuple(s * np.eye(2) for s in scales))
    assert commutativity_report(system, tol=0.0).fully_commuting


def test_builtin_examples():
    ti = two_inertia(rho=2, sigma1=0.3, sigma2=0.5)
    np.testing.assert_array_equal(ti.A, [[-1, 1], [1, -1]])
    np.testing.assert_array_equal(ti.B[0], [[0.3, 0], [0, 0]])
    np.testing.assert_array_equal(ti.B[1], [[0, 0], [0, 0.5]])
    dn = diagonal_noise(lam=-1, b=2, sigma=(2, 2))
    np.testing.assert_array_equal(dn.A, [[-1, 2], [0, -1]])
    assert len(dn.B) == 2 and all(np.array_equal(B, 2 * np.eye(2)) for B in dn.B)
    sp = sanov_pair()
    np.testing.assert_array_equal(sp.A, [[1, 2], [0, 1]])
    np.testing.assert_array_equal(sp.B[0], [[1, 0], [2, 1]])
    sat = satellite(kappa=1.0, alpha=0.2)
    assert sat.A[1, 0] == pytest.approx(-1.0 + 0.4)


def test_offdiagonal_variants():
    assert offdiagonal_noise(1, sigma=1.1).B[0][0, 1] == -1.1
    assert offdiagonal_noise(2, sigma=0.5).B[0][1, 0] == 0.5
    with pytest.raises(ModelError):
        offdiagonal_noise(3)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(sorted(builtin_models())), st.integers(0, 2**31))
def test_builtins_round_trip(tmp_path_factory, name, seed):
    rng = np.random.default_rng(seed)
    params = {}
    if name in ("oscillator", "random_linear_oscillator"):
        params = {"gamma": rng.uniform(0.05, 1), "sigma1": rng.uniform(0, 1)}
    elif name == "diagonal_noise":
        params = {"sigma": tuple(rng.uniform(0, 3, size=rng.integers(1, 4)))}
    system = build_builtin(name, params)
    path = tmp_path_factory.mktemp("rt") / "m.json"
    save_system(system, path)
    back = load_system(path)
    np.testing.assert_array_equal(back.A, system.A)
    assert len(back.B) == len(system.B)
    for b1, b2 in zip(back.B, system.B):
        np.testing.assert_array_equal(b1, b2)
    assert back.metadata == system.metadata


def test_parse_param():
    assert parse_param("gamma=0.1") == ("gamma", 0.1)
    assert parse_param("sigma=2,2") == ("sigma", (2.0, 2.0))
    assert parse_param("sigma=2,") == ("sigma", (2.0,))
    for bad in ("gamma", "gamma=abc", "gamma=nan"):
        with pytest.raises(ModelError):
            parse_param(bad)


def test_build_builtin_errors():
    with pytest.raises(ModelError):
        build_builtin("nope")
    with pytest.raises(ModelError):
        build_builtin("two_inertia", {"bogus": 1.0})
    with pytest.raises(ModelError):
        build_builtin("cancer_linearized", {"k1": -0.8})
