"""The quartic form H(x) behind the Lyapunov function V(x) = ||x||_Q^p.

For a system dX = AX dt + sum_j B_j X dW_j and symmetric Q,

    H(x) = -x'M x * x'Q x + (2 - p)/4 * sum_j (x'S_j x)^2,
    M = A'Q + QA + sum_j B_j'Q B_j,   S_j = Q B_j + B_j'Q,

and the generator satisfies (LV)(x) = -(p/2) ||x||_Q^(p-4) H(x).  Positivity
H(x) >= c||x||^4 with Q > 0 therefore certifies exponential p-stability.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gbmstab.model import LinearSDESystem

MIN_NORM = 1e-100


@dataclass(frozen=True, eq=False)
class CandidateLyapunov:
    """Q, moment order p and (optionally) the margin c of a Lyapunov candidate."""

    Q: np.ndarray
    p: float
    c: float | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        if not np.all(np.isfinite(Q)):
            raise ValueError("Q has non-finite entries")
        asym = float(np.max(np.abs(Q - Q.T))) if Q.size else 0.0
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(Q)))):
            raise ValueError(f"Q is not symmetric (max asymmetry {asym:.3g})")
        Q = 0.5 * (Q + Q.T)
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        if not self.p > 0:
            raise ValueError(f"p must be positive, got {self.p}")
        if self.c is not None and not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        object.__setattr__(self, "p", float(self.p))


def quartic_exponents(n: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors of total degree 4 in n variables, reverse lexicographic."""
    out = [
        tuple(np.bincount(combo, minlength=n).tolist())
        for combo in itertools.combinations_with_replacement(range(n), 4)
    ]
    return tuple(sorted(out, reverse=True))


@lru_cache(maxsize=16)
def _monomial_index(n: int) -> np.ndarray:
    """idx[i,j,k,l] = position of x_i x_j x_k x_l in quartic_exponents(n)."""
    pos = {alpha: k for k, alpha in enumerate(quartic_exponents(n))}
    idx = np.empty((n,) * 4, dtype=np.intp)
    for ijkl in itertools.product(range(n), repeat=4):
        idx[ijkl] = pos[tuple(np.bincount(ijkl, minlength=n).tolist())]
    idx.setflags(write=False)
    return idx


def product_coefficients(M: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Monomial coefficients of (x'Mx)(x'Nx) in ``quartic_exponents`` order."""
    n = M.shape[0]
    idx = _monomial_index(n)
    weights = np.multiply.outer(M, N)
    return np.bincount(idx.ravel(), weights=weights.ravel(), minlength=len(quartic_exponents(n)))


@dataclass(frozen=True, eq=False)
class QuarticForm:
    """Homogeneous quartic sum_alpha q_alpha x^alpha."""

    n: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(quartic_exponents(self.n)),):
            raise ValueError("coefficient vector length does not match the dimension")
        object.__setattr__(self, "values", values)

    @property
    def exponents(self) -> tuple[tuple[int, ...], ...]:
        return quartic_exponents(self.n)

    @property
    def coeffs(self) -> dict[tuple[int, ...], float]:
        return dict(zip(self.exponents, self.values.tolist()))

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        powers = np.array(self.exponents)
        monomials = np.prod(x[..., None, :] ** powers, axis=-1)
        return monomials @ self.values


def _drift_and_noise_forms(system: LinearSDESystem, Q: np.ndarray):
    A = system.A
    M = A.T @ Q + Q @ A
    S = []
    for Bj in system.B:
        M = M + Bj.T @ Q @ Bj
        S.append(Q @ Bj + Bj.T @ Q)
    return M, S


def _check_dims(system: LinearSDESystem, Q: np.ndarray, x=None):
    if Q.shape != (system.n, system.n):
        raise ValueError(f"Q has shape {Q.shape}, system dimension is {system.n}")
    if x is not None and np.shape(x)[-1] != system.n:
        raise ValueError(f"point has length {np.shape(x)[-1]}, system dimension is {system.n}")


def h_eval(system: LinearSDESystem, cand: CandidateLyapunov, x) -> np.ndarray | float:
    """H(x); ``x`` may be a single point or a stack of points along the last axis."""
    x = np.asarray(x, dtype=float)
    _check_dims(system, cand.Q, x)
    M, S = _drift_and_noise_forms(system, cand.Q)
    quad = lambda W: np.einsum("...i,ij,...j->...", x, W, x)  # noqa: E731
    value = -quad(M) * quad(cand.Q)
    weight = (2.0 - cand.p) / 4.0
    for Sj in S:
        value = value + weight * quad(Sj) ** 2
    return value[()] if np.ndim(value) == 0 else value


def h_coefficients(system: LinearSDESystem, Q, p: float) -> QuarticForm:
    Q = np.asarray(Q, dtype=float)
    _check_dims(system, Q)
    M, S = _drift_and_noise_forms(system, Q)
    values = -product_coefficients(M, Q)
    for Sj in S:
        values += (2.0 - p) / 4.0 * product_coefficients(Sj, Sj)
    return QuarticForm(system.n, values)


def norm4_coefficients(n: int) -> np.ndarray:
    """Coefficients of ||x||^4."""
    I = np.eye(n)
    return product_coefficients(I, I)


def symmetric_basis(n: int) -> list[np.ndarray]:
    """E_(i,j) for i <= j in row-by-row upper-triangle order (E_ii or E_ij + E_ji)."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def h_coefficient_tensor(system: LinearSDESystem, p: float) -> np.ndarray:
    """T[alpha, a, b] with coef_alpha(H) = sum_{a<=b} T[alpha,a,b] q_a q_b.

    q is the upper triangle of Q read row by row; only a <= b is populated.
    """
    basis = symmetric_basis(system.n)
    m = len(basis)
    forms = [_drift_and_noise_forms(system, E) for E in basis]
    nmono = len(quartic_exponents(system.n))
    T = np.zeros((nmono, m, m))
    weight = (2.0 - p) / 4.0
    for a in range(m):
        Ma, Sa = forms[a]
        for b in range(a, m):
            Mb, Sb = forms[b]
            # symmetrized bilinear form Phi(E_a, E_b) + Phi(E_b, E_a)
            val = -product_coefficients(Ma, basis[b])
            if a != b:
                val = val - product_coefficients(Mb, basis[a])
            for Saj, Sbj in zip(Sa, Sb):
                val = val + weight * (product_coefficients(Saj, Sbj) * (1 if a == b else 2))
            T[:, a, b] = val
    return T


def q_vector(Q) -> np.ndarray:
    """Upper triangle of Q read row by row."""
    Q = np.asarray(Q, dtype=float)
    return Q[np.triu_indices(Q.shape[0])]


def q_matrix(q, n: int) -> np.ndarray:
    Q = np.zeros((n, n))
    Q[np.triu_indices(n)] = q
    return Q + np.triu(Q, 1).T


def _require_nonzero(x: np.ndarray):
    if float(np.linalg.norm(x)) < MIN_NORM:
        raise ValueError("the origin is excluded: V is not twice differentiable at x = 0")


def lyapunov_value_grad_hess(cand: CandidateLyapunov, x):
    """V(x) = (x'Qx)^(p/2) with its gradient and Hessian in closed form."""
    x = np.asarray(x, dtype=float)
    _require_nonzero(x)
    Q, p = cand.Q, cand.p
    Qx = Q @ x
    r2 = float(x @ Qx)
    if r2 <= 0:
        raise ValueError("x'Qx must be positive (Q positive definite)")
    V = r2 ** (p / 2)
    grad = p * r2 ** ((p - 2) / 2) * Qx
    hess = p * r2 ** ((p - 2) / 2) * Q + p * (p - 2) * r2 ** ((p - 4) / 2) * np.outer(Qx, Qx)
    return V, grad, hess


def generator_apply(system: LinearSDESystem, cand: CandidateLyapunov, x) -> float:
    """(LV)(x) = <grad V, Ax> + 1/2 sum_k (B_k x)' Hess V (B_k x)."""
    x = np.asarray(x, dtype=float)
    _check_dims(system, cand.Q, x)
    _, grad, hess = lyapunov_value_grad_hess(cand, x)
    value = float(grad @ (system.A @ x))
    for Bk in system.B:
        y = Bk @ x
        value += 0.5 * float(y @ hess @ y)
    return value


def generator_identity_residual(system: LinearSDESystem, cand: CandidateLyapunov, x) -> float:
    """(LV)(x) + (p/2) ||x||_Q^(p-4) H(x); zero up to roundoff."""
    x = np.asarray(x, dtype=float)
    lv = generator_apply(system, cand, x)
    r2 = float(x @ cand.Q @ x)
    return lv + 0.5 * cand.p * r2 ** ((cand.p - 4) / 2) * float(h_eval(system, cand, x))
