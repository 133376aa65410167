"""Gram-matrix (sum-of-squares) encoding of H(x) - c||x||^4 >= 0 as a BMI.

With z = (x1^2, x1x2, ..., x1xn, x2^2, ..., xn^2), the quartic P_c(x) = H(x) - c||x||^4
equals z'Pz for any symmetric P whose entries reproduce each monomial coefficient.
Monomials x^alpha split into five classes by the sorted non-zero exponents of alpha:

    class 1 [4]        one Gram entry, fixed
    class 2 [3,1]      one Gram entry, fixed
    class 3 [2,2]      two entries tied by a dependency relation
    class 4 [2,1,1]    two entries tied by a dependency relation
    class 5 [1,1,1,1]  three entries tied by a dependency relation

Every fixed entry and relation right-hand side is quadratic in the upper triangle
q of Q and linear in c, so P >= 0, Q >= eps*I, c >= eps becomes a bilinear
matrix inequality  J(q) = sum_{i<=j<=m} q_i q_j A_(i,j) + sum_i q_i B_(i) + C >= 0.

Layout of J (0-based): rows 0..m-1 hold P, rows m+2r, m+2r+1 hold relation r
as the pair (rhs - lhs, lhs - rhs), then the n rows of Q - eps*I, then c - eps.
Variables: q_0..q_{m-1} are Q entries, q_{m+2r}, q_{m+2r+1} the two
lexicographically first Gram entries of relation r, and q_{K-1} = c.  For
class-5 relations the third entry is eliminated through the relation, so its
slot pair is identically zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from gbmstab.model import LinearSDESystem
from gbmstab.quartic import (
    h_coefficient_tensor,
    norm4_coefficients,
    q_vector,
    quartic_exponents,
    symmetric_basis,
)
from gbmstab.sdp import AffineMatrixInequality, block_diag_lmi

CLASS_PATTERNS = {(4,): 1, (3, 1): 2, (2, 2): 3, (2, 1, 1): 4, (1, 1, 1, 1): 5}


def _require_dim(n: int):
    if int(n) != n or n < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {n}")


@dataclass(frozen=True)
class MultiIndexTable:
    n: int
    indices: tuple[tuple[int, ...], ...]
    classes: tuple[int, ...]

    def count(self, klass: int) -> int:
        return self.classes.count(klass)


def multiindex_table(n: int) -> MultiIndexTable:
    _require_dim(n)
    indices = quartic_exponents(n)
    classes = tuple(
        CLASS_PATTERNS[tuple(sorted((a for a in alpha if a), reverse=True))] for alpha in indices
    )
    return MultiIndexTable(n, indices, classes)


@dataclass(frozen=True)
class ProblemSizes:
    n: int
    m: int
    R: int
    N: int
    K: int


def problem_sizes(n: int) -> ProblemSizes:
    _require_dim(n)
    m = n * (n + 1) // 2
    R = n * (n - 1) ** 2 // 2 + (math.comb(n, 4) if n >= 4 else 0)
    return ProblemSizes(n, m, R, m + 2 * R + n + 1, m + 1 + 2 * R)


@dataclass(frozen=True, eq=False)
class GramExpression:
    """sum_{a<=b} quad[a,b] q_a q_b + c_coef * c  (q = upper triangle of Q)."""

    quad: np.ndarray
    c_coef: float

    def __call__(self, q, c: float) -> float:
        q = np.asarray(q, dtype=float)
        return float(q @ self.quad @ q) + self.c_coef * c

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return (self.quad + self.quad.T) @ q


@dataclass(frozen=True, eq=False)
class DependencyRelation:
    """sum_k weight_k * P[entry_k] = rhs(q, c), entries sorted lexicographically."""

    alpha: tuple[int, ...]
    klass: int
    entries: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]
    rhs: GramExpression


@dataclass(frozen=True, eq=False)
class GramStructure:
    n: int
    p: float
    m: int
    fixed_entries: dict[tuple[int, int], GramExpression]
    dependency_relations: tuple[DependencyRelation, ...]

    @property
    def free_count(self) -> int:
        """Gram parameters left free once every relation is solved for its last entry."""
        return sum(len(rel.entries) - 1 for rel in self.dependency_relations)

    def parametric(self):
        """Arrays (Pquad, Pc, Pt) with P(q,c,t) = q'Pquad[i,j]q + c*Pc + sum_k t_k Pt[k].

        Each relation keeps its leading entries as free parameters t and solves
        for its last entry.
        """
        m = self.m
        Pquad = np.zeros((m, m, m, m))
        Pc = np.zeros((m, m))
        Pt = np.zeros((self.free_count, m, m))

        def put(target, i, j, value):
            target[..., i, j] += value
            if i != j:
                target[..., j, i] += value

        for (i, j), expr in self.fixed_entries.items():
            Pquad[i, j] = expr.quad
            Pquad[j, i] = expr.quad
            Pc[i, j] = Pc[j, i] = expr.c_coef
        k = 0
        for rel in self.dependency_relations:
            *lead, last = rel.entries
            wl = rel.weights[-1]
            li, lj = last
            Pquad[li, lj] += rel.rhs.quad / wl
            if li != lj:
                Pquad[lj, li] += rel.rhs.quad / wl
            put(Pc, li, lj, rel.rhs.c_coef / wl)
            for (ei, ej), w in zip(lead, rel.weights[:-1]):
                put(Pt[k], ei, ej, 1.0)
                put(Pt[k], li, lj, -w / wl)
                k += 1
        return Pquad, Pc, Pt

    def gram_matrix(self, q, c: float, t) -> np.ndarray:
        Pquad, Pc, Pt = self.parametric()
        q = np.asarray(q, dtype=float)
        return np.einsum("ijab,a,b->ij", Pquad, q, q) + c * Pc + np.tensordot(t, Pt, axes=1)


@lru_cache(maxsize=16)
def _gram_monomials(n: int):
    """For each monomial position: list of ((i, j), weight) with i <= j Gram indices."""
    pairs = [(u, v) for u in range(n) for v in range(u, n)]
    pos = {alpha: k for k, alpha in enumerate(quartic_exponents(n))}
    groups: dict[int, list] = {}
    for i, (a, b) in enumerate(pairs):
        for j in range(i, len(pairs)):
            c, d = pairs[j]
            alpha = tuple(np.bincount([a, b, c, d], minlength=n).tolist())
            groups.setdefault(pos[alpha], []).append(((i, j), 1.0 if i == j else 2.0))
    return {k: tuple(sorted(v)) for k, v in groups.items()}


def gram_structure(system: LinearSDESystem, p: float) -> GramStructure:
    """Fixed Gram entries and dependency relations of H - c||x||^4 = z'Pz."""
    n = system.n
    _require_dim(n)
    table = multiindex_table(n)
    m = n * (n + 1) // 2
    T = h_coefficient_tensor(system, p)
    cvec = -norm4_coefficients(n)
    groups = _gram_monomials(n)
    fixed: dict[tuple[int, int], GramExpression] = {}
    relations = []
    for k, (alpha, klass) in enumerate(zip(table.indices, table.classes)):
        entries = groups[k]
        if len(entries) == 1:
            (ij, w), = entries
            fixed[ij] = GramExpression(T[k] / w, cvec[k] / w)
        else:
            relations.append(DependencyRelation(
                alpha, klass,
                tuple(e for e, _ in entries), tuple(w for _, w in entries),
                GramExpression(T[k].copy(), float(cvec[k])),
            ))
    return GramStructure(n, float(p), m, fixed, tuple(relations))


def sym_basis_matrix(N: int, u: int, v: int) -> np.ndarray:
    """E_(u,v): ones at (u,v) and (v,u), zeros elsewhere (0-based)."""
    E = np.zeros((N, N))
    E[u, v] = E[v, u] = 1.0
    return E


@dataclass(frozen=True, eq=False)
class BMIProblem:
    """J(q) = sum_{i<=j<m} q_i q_j Amats[i,j] + sum_i q_i Bmats[i] + C (0-based)."""

    sizes: ProblemSizes
    Amats: np.ndarray
    Bmats: np.ndarray
    C: np.ndarray
    labels: tuple[str, ...]
    structure: GramStructure
    eps: float

    def A(self, i: int, j: int) -> np.ndarray:
        """A_(i,j) with 1-based labels, i <= j <= m."""
        return self.Amats[i - 1, j - 1]

    def B(self, i: int) -> np.ndarray:
        """B_(i) with 1-based label."""
        return self.Bmats[i - 1]

    def to_dict(self) -> dict:
        m = self.sizes.m
        return {
            "sizes": vars(self.sizes),
            "eps": self.eps,
            "p": self.structure.p,
            "labels": list(self.labels),
            "A": {f"{i + 1},{j + 1}": self.Amats[i, j].tolist()
                  for i in range(m) for j in range(i, m) if np.any(self.Amats[i, j])},
            "B": [Bi.tolist() for Bi in self.Bmats],
            "C": self.C.tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def assemble_bmi(system: LinearSDESystem, p: float, eps: float) -> BMIProblem:
    if not p > 0 or not eps > 0:
        raise ValueError("p and eps must be positive")
    n = system.n
    sizes = problem_sizes(n)
    m, R, N, K = sizes.m, sizes.R, sizes.N, sizes.K
    gs = gram_structure(system, p)
    if len(gs.dependency_relations) != R:
        raise AssertionError("relation count disagrees with the size formula")
    Am = np.zeros((m, m, N, N))
    Bm = np.zeros((K, N, N))
    E = lambda u, v: sym_basis_matrix(N, u, v)  # noqa: E731
    ic = K - 1

    def add_quad(expr: GramExpression, M: np.ndarray):
        iu = np.nonzero(expr.quad)
        for a, b in zip(*iu):
            Am[a, b] += expr.quad[a, b] * M

    for (i, j), expr in gs.fixed_entries.items():
        add_quad(expr, E(i, j))
        Bm[ic] += expr.c_coef * E(i, j)

    labels = [f"Q[{u + 1},{v + 1}]" for u in range(n) for v in range(u, n)]
    for r, rel in enumerate(gs.dependency_relations):
        s = m + 2 * r
        slot = E(s, s) - E(s + 1, s + 1)
        l1, l2 = m + 2 * r, m + 2 * r + 1
        for lab, (ij, w) in zip((l1, l2), zip(rel.entries[:2], rel.weights[:2])):
            Bm[lab] += E(*ij)
            labels.append(f"P[{ij[0] + 1},{ij[1] + 1}]")
        if len(rel.entries) == 2:
            add_quad(rel.rhs, slot)
            Bm[ic] += rel.rhs.c_coef * slot
            Bm[l1] -= rel.weights[0] * slot
            Bm[l2] -= rel.weights[1] * slot
        else:
            (e3, w3) = rel.entries[2], rel.weights[2]
            add_quad(GramExpression(rel.rhs.quad / w3, 0.0), E(*e3))
            Bm[ic] += rel.rhs.c_coef / w3 * E(*e3)
            Bm[l1] -= rel.weights[0] / w3 * E(*e3)
            Bm[l2] -= rel.weights[1] / w3 * E(*e3)
    labels.append("c")
    q0 = m + 2 * R
    for a, (u, v) in enumerate((u, v) for u in range(n) for v in range(u, n)):
        Bm[a] += E(q0 + u, q0 + v)
    Bm[ic] += E(N - 1, N - 1)
    C = np.zeros((N, N))
    C[np.arange(q0, N), np.arange(q0, N)] = -eps
    return BMIProblem(sizes, Am, Bm, C, tuple(labels), gs, float(eps))


def evaluate_bmi(problem: BMIProblem, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (problem.sizes.K,):
        raise ValueError(f"expected {problem.sizes.K} variables, got shape {q.shape}")
    m = problem.sizes.m
    qQ = q[:m]
    J = np.einsum("a,b,abij->ij", qQ, qQ, problem.Amats)
    return J + np.tensordot(q, problem.Bmats, axes=1) + problem.C


def bmi_point(problem: BMIProblem, Q, c: float, gram) -> np.ndarray:
    """The q-vector for given Q, c and Gram matrix (labels as in ``assemble_bmi``)."""
    n, m = problem.sizes.n, problem.sizes.m
    Q = np.asarray(Q, dtype=float)
    P = np.asarray(gram, dtype=float)
    q = [Q[u, v] for u in range(n) for v in range(u, n)]
    for rel in problem.structure.dependency_relations:
        q += [P[rel.entries[0]], P[rel.entries[1]]]
    return np.array(q + [c])


def assemble_lmi_p2(system: LinearSDESystem, eps: float) -> AffineMatrixInequality:
    """Q - eps*I >= 0 and -(A'Q + QA + sum_j B_j'QB_j) - eps*I >= 0, variables = upper(Q)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    n = system.n
    basis = symmetric_basis(n)
    pos = AffineMatrixInequality(-eps * np.eye(n), np.stack(basis))
    drift = []
    for E in basis:
        M = system.A.T @ E + E @ system.A
        for Bj in system.B:
            M = M + Bj.T @ E @ Bj
        drift.append(-M)
    neg = AffineMatrixInequality(-eps * np.eye(n), np.stack(drift))
    return block_diag_lmi(pos, neg)


def gram_coefficients(P) -> np.ndarray:
    """Monomial coefficients of z'Pz in ``quartic_exponents`` order."""
    P = np.asarray(P, dtype=float)
    m = P.shape[0]
    n = int(round((math.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise ValueError(f"Gram size {m} is not n(n+1)/2")
    out = np.zeros(len(quartic_exponents(n)))
    for k, entries in _gram_monomials(n).items():
        out[k] = sum(w * P[ij] for ij, w in entries)
    return out


def fixed_q_lmi(structure: GramStructure, Q, eps: float, c: float | None = None):
    """LMI in the Gram freedom (and c, unless fixed) once Q is fixed.

    Returns ``(lmi, unpack)`` where ``unpack(y) -> (c, P)``.  With c free, the
    variables are ``[c, t_1, ...]`` and a 1x1 block c - eps >= 0 is appended.
    """
    Pquad, Pc, Pt = structure.parametric()
    q = q_vector(Q)
    P0 = np.einsum("ijab,a,b->ij", Pquad, q, q)
    if c is None:
        gram = AffineMatrixInequality(P0, np.concatenate([Pc[None], Pt]))
        margin = AffineMatrixInequality(
            np.array([[-eps]]), np.array([[[1.0]]] + [[[0.0]]] * len(Pt))
        )
        lmi = block_diag_lmi(gram, margin)

        def unpack(y):
            return float(y[0]), P0 + y[0] * Pc + np.tensordot(y[1:], Pt, axes=1)
    else:
        lmi = AffineMatrixInequality(P0 + c * Pc, Pt)

        def unpack(y):
            return float(c), P0 + c * Pc + np.tensordot(y, Pt, axes=1)
    return lmi, unpack
