"""Independent checks of stability certificates and mean-square cross-checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import linalg
from scipy.stats import norm, qmc

from gbmstab.bmi import assemble_lmi_p2, fixed_q_lmi, gram_coefficients, gram_structure
from gbmstab.model import LinearSDESystem
from gbmstab.quartic import h_coefficients, norm4_coefficients
from gbmstab.sdp import Status, min_eigenvalue, solve_lmi_feasibility

SPHERE_BUDGET = 20000
REFINE_POINTS = 50
REFINE_STEPS = 200


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    """Claim: Q >= eps*I, c >= eps and H(x) >= c||x||^4, hence p-ES."""

    p: float
    eps: float
    c: float
    Q: np.ndarray
    gram: np.ndarray | None = None

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or not np.all(np.isfinite(Q)):
            raise ValueError("Q must be a finite square matrix")
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        if self.gram is not None:
            P = np.array(self.gram, dtype=float)
            m = Q.shape[0] * (Q.shape[0] + 1) // 2
            if P.shape != (m, m) or not np.all(np.isfinite(P)):
                raise ValueError(f"Gram matrix must be finite {m}x{m}")
            object.__setattr__(self, "gram", 0.5 * (P + P.T))
        for name in ("p", "eps", "c"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be positive")
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self) -> dict:
        doc = {"p": self.p, "eps": self.eps, "c": self.c, "Q": self.Q.tolist()}
        if self.gram is not None:
            doc["gram"] = self.gram.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "StabilityCertificate":
        try:
            return cls(float(doc["p"]), float(doc["eps"]), float(doc.get("c", doc["eps"])),
                       np.array(doc["Q"], dtype=float),
                       None if doc.get("gram") is None else np.array(doc["gram"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed certificate: {exc}") from exc


def load_certificate(path) -> StabilityCertificate:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a valid document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be an object")
    return StabilityCertificate.from_dict(doc)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float
    tolerance: float


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def overall(self) -> bool:
        return all(c.passed for c in self.checks)

    def get(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "checks": [
                {"name": c.name, "pass": c.passed, "residual": c.residual, "tolerance": c.tolerance}
                for c in self.checks
            ],
        }


def sphere_tolerance(system: LinearSDESystem, Q) -> float:
    """Scale-aware slack 1e-7 (1 + ||Q|| (||A|| + sum ||B_j||^2)), spectral norms."""
    spread = np.linalg.norm(system.A, 2) + sum(np.linalg.norm(Bj, 2) ** 2 for Bj in system.B)
    return 1e-7 * (1.0 + np.linalg.norm(np.asarray(Q, float), 2) * spread)


class _Margin:
    """f(x) = H(x) - c||x||^4 with gradient, vectorized over rows of x."""

    def __init__(self, system, Q, p, c):
        Q = np.asarray(Q, dtype=float)
        A = system.A
        self.Q = Q
        self.M = A.T @ Q + Q @ A + sum((Bj.T @ Q @ Bj for Bj in system.B), np.zeros_like(Q))
        self.S = [Q @ Bj + Bj.T @ Q for Bj in system.B]
        self.w = (2.0 - p) / 4.0
        self.c = c

    def value_grad(self, X):
        xM, xQ = X @ self.M, X @ self.Q
        m = np.einsum("ki,ki->k", xM, X)
        q = np.einsum("ki,ki->k", xQ, X)
        r = np.einsum("ki,ki->k", X, X)
        f = -m * q - self.c * r * r
        g = -2 * xM * q[:, None] - 2 * xQ * m[:, None] - 4 * self.c * (r[:, None] * X)
        for S in self.S:
            xS = X @ S
            s = np.einsum("ki,ki->k", xS, X)
            f = f + self.w * s * s
            g = g + 4 * self.w * s[:, None] * xS
        return f, g


def sphere_min(system: LinearSDESystem, Q, p: float, c: float, budget: int = SPHERE_BUDGET,
               seed: int = 0):
    """Minimum of H(x) - c||x||^4 over the unit sphere and its argmin.

    ``budget`` is rounded up to a power of two (Sobol balance).
    Scrambled Sobol points pushed through the normal quantile function give
    near-uniform directions; the best ``REFINE_POINTS`` are polished by
    projected gradient descent with an adaptive step.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    n = system.n
    f = _Margin(system, Q, p, c)
    sampler = qmc.Sobol(d=n, scramble=True, seed=np.random.default_rng(seed))
    U = sampler.random_base2(max(0, math.ceil(math.log2(budget))))
    X = norm.ppf(np.clip(U, 1e-12, 1 - 1e-12))
    X = np.vstack([X, np.eye(n), -np.eye(n)])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    vals, _ = f.value_grad(X)
    keep = np.argsort(vals)[: min(REFINE_POINTS, len(vals))]
    Y = X[keep]
    fy, gy = f.value_grad(Y)
    step = np.full(len(Y), 1e-2)
    for _ in range(REFINE_STEPS):
        tangent = gy - np.einsum("ki,ki->k", gy, Y)[:, None] * Y
        trial = Y - step[:, None] * tangent
        trial /= np.linalg.norm(trial, axis=1, keepdims=True)
        ft, gt = f.value_grad(trial)
        better = ft <= fy
        Y[better], fy[better], gy[better] = trial[better], ft[better], gt[better]
        step = np.where(better, step * 1.5, step * 0.5)
        step = np.maximum(step, 1e-16)
    best = int(np.argmin(fy))
    return float(fy[best]), Y[best].copy()


def verify_certificate(system: LinearSDESystem, cert: StabilityCertificate, method: str = "both",
                       budget: int = SPHERE_BUDGET, seed: int = 0) -> VerificationReport:
    """Check Q >= eps*I, c >= eps and H - c||x||^4 >= 0 by Gram matrix and/or sphere search."""
    if method not in ("gram", "sphere", "both"):
        raise ValueError(f"unknown method {method!r}")
    n = system.n
    Q = cert.Q
    if Q.shape != (n, n):
        raise ValueError(f"certificate Q has shape {Q.shape}, system dimension is {n}")
    report = VerificationReport()
    tol_psd = 1e-9 * max(1.0, float(np.max(np.abs(Q))))
    qmin = min_eigenvalue(Q)
    report.checks.append(Check("Q >= eps*I", bool(qmin - cert.eps >= -tol_psd), qmin - cert.eps, tol_psd))
    report.checks.append(Check("c >= eps", bool(cert.c - cert.eps >= -1e-12), cert.c - cert.eps, 1e-12))
    if qmin <= 0:
        # the quartic checks are meaningless without a positive definite Q
        return report
    tol = sphere_tolerance(system, Q)
    if method in ("gram", "both"):
        report.checks.extend(_gram_checks(system, cert, tol))
    if method in ("sphere", "both"):
        value, _ = sphere_min(system, Q, cert.p, cert.c, budget=budget, seed=seed)
        report.checks.append(Check("sphere minimum", bool(value >= -tol), value, tol))
    return report


def _gram_checks(system, cert, tol) -> list[Check]:
    if system.n < 2:
        # z'Pz with the single monomial x^2 reduces to the coefficient itself
        coef = float(h_coefficients(system, cert.Q, cert.p).values[0]) - cert.c
        return [Check("gram min eigenvalue", coef >= -tol, coef, tol)]
    target = h_coefficients(system, cert.Q, cert.p).values - cert.c * norm4_coefficients(system.n)
    if cert.gram is not None:
        P = cert.gram
        note = "gram min eigenvalue"
    else:
        structure = gram_structure(system, cert.p)
        lmi, unpack = fixed_q_lmi(structure, cert.Q, cert.eps, c=cert.c)
        outcome = solve_lmi_feasibility(lmi)
        if outcome.point is None:
            return [Check("gram synthesis", False, float("nan"), tol)]
        _, P = unpack(outcome.point)
        note = "gram min eigenvalue (synthesized)"
    scale = 1.0 + float(np.max(np.abs(target)))
    mismatch = float(np.max(np.abs(gram_coefficients(P) - target)))
    lam = min_eigenvalue(P)
    return [
        Check("gram coefficient match", bool(mismatch <= 1e-9 * scale), mismatch, 1e-9 * scale),
        Check(note, bool(lam >= -tol), lam, tol),
    ]


def kronecker_operator(system: LinearSDESystem) -> np.ndarray:
    """L = A (x) I + I (x) A + sum_j B_j (x) B_j acting on row-major vec(U)."""
    n = system.n
    I = np.eye(n)
    L = np.kron(system.A, I) + np.kron(I, system.A)
    for Bj in system.B:
        L += np.kron(Bj, Bj)
    return L


def mean_square_spectral_test(system: LinearSDESystem) -> tuple[float, bool]:
    """Spectral abscissa of L and whether it is negative (mean-square stability)."""
    abscissa = float(np.max(np.linalg.eigvals(kronecker_operator(system)).real))
    return abscissa, abscissa < 0


def vec(U) -> np.ndarray:
    return np.asarray(U, dtype=float).reshape(-1)


def unvec(v, n: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(n, n)


def second_moment_evolve(system: LinearSDESystem, x0, t: float) -> np.ndarray:
    """U(t) = E[X(t) X(t)'] = unvec(exp(Lt) vec(x0 x0'))."""
    if t < 0:
        raise ValueError("t must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    U = unvec(linalg.expm(kronecker_operator(system) * t) @ vec(np.outer(x0, x0)), system.n)
    return 0.5 * (U + U.T)


def random_system(rng: np.random.Generator, n: int, ell: int, scale: float = 2.0) -> LinearSDESystem:
    """Entries i.i.d. uniform on [-scale, scale]."""
    A = rng.uniform(-scale, scale, (n, n))
    B = tuple(rng.uniform(-scale, scale, (n, n)) for _ in range(ell))
    return LinearSDESystem(f"random_n{n}_l{ell}", A, B)


@dataclass
class CrossValidation:
    tested: int = 0
    skipped: int = 0
    mismatches: int = 0
    unknown: int = 0
    cases: list = field(default_factory=list)


def lmi_iff_spectral_crossvalidate(generator: Callable[[np.random.Generator], LinearSDESystem],
                                   count: int, seed: int = 0, eps: float = 0.01,
                                   min_gap: float = 0.05) -> CrossValidation:
    """Compare p = 2 LMI status with the sign of the spectral abscissa of L.

    Systems with |abscissa| < min_gap are skipped; an Unknown LMI status counts
    as a mismatch as well as being tallied separately.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    stats = CrossValidation()
    while stats.tested < count:
        system = generator(rng)
        abscissa, stable = mean_square_spectral_test(system)
        if abs(abscissa) < min_gap:
            stats.skipped += 1
            continue
        outcome = solve_lmi_feasibility(assemble_lmi_p2(system, eps))
        stats.tested += 1
        if outcome.status is Status.UNKNOWN:
            stats.unknown += 1
        if (outcome.status is Status.FEASIBLE) != stable or outcome.status is Status.UNKNOWN:
            stats.mismatches += 1
            stats.cases.append((system, abscissa, outcome.status))
    return stats


@dataclass
class ConditionSweep:
    draws: int = 0
    passed: int = 0
    counterexamples: list = field(default_factory=list)


def _random_cancer_case(rng: np.random.Generator):
    from gbmstab.casebook import CancerParams, cancer_deltas
    from gbmstab.model import ModelError

    base = CancerParams()
    names = ("alpha", "beta", "q", "r", "s", "k1", "k2", "d1", "d2")
    while True:
        values = {k: getattr(base, k) * math.exp(rng.uniform(-0.3, 0.3)) for k in names}
        try:
            params = CancerParams(**values, sigma1=0.0, sigma2=0.0, sigma3=0.0)
        except ModelError:
            continue
        delta1 = cancer_deltas(params)[0]
        damp3 = params.s * params.d1 / (params.beta * params.k2)
        sig1 = rng.uniform(0, 1.1) * math.sqrt(-2 * delta1)
        sig3 = rng.uniform(0, 1.1) * math.sqrt(2 * damp3)
        sig2 = rng.uniform(0, 0.5)
        # the sigma2 bound needs a large w4 and the resting-cell damping a larger w3
        w4 = 0.0 if rng.random() < 0.1 else math.exp(rng.uniform(-2, 6))
        w3 = max(w4, 1.0) * math.exp(rng.uniform(-1, 4))
        return CancerParams(**values, sigma1=sig1, sigma2=sig2, sigma3=sig3), w3, w4


def sufficient_conditions_crosscheck(count: int, seed: int = 0, eps: float = 1e-3) -> ConditionSweep:
    """Draw perturbed tumor-model parameters; whenever the closed-form sufficient
    conditions pass, the p = 2 LMI on the linearization must be feasible."""
    from gbmstab.casebook import cancer_linearization, cancer_sufficient_conditions

    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    sweep = ConditionSweep()
    for _ in range(count):
        params, w3, w4 = _random_cancer_case(rng)
        sweep.draws += 1
        if not cancer_sufficient_conditions(params, w3, w4).passed:
            continue
        sweep.passed += 1
        outcome = solve_lmi_feasibility(assemble_lmi_p2(cancer_linearization(params), eps))
        if outcome.status is not Status.FEASIBLE:
            sweep.counterexamples.append((params, w3, w4, outcome.status))
    return sweep
