"""Equilibria and linearizations of a tumor-immune model and a smoking model.

The tumor model has tumor cells M, hunting predator cells N and resting
predator cells Z with vector field

    F(M, N, Z) = (q + rM(1 - M/k1) - alpha*M*N,
                  beta*N*Z - d1*N,
                  s*Z(1 - Z/k2) - beta*N*Z - d2*Z)

and multiplicative noise sigma_j (x_j - x_j^eq) in each coordinate.  The
smoking model is only available through its endemic equilibrium and Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from gbmstab.model import LinearSDESystem, ModelError


@dataclass(frozen=True)
class CancerParams:
    alpha: float = 0.3
    beta: float = 0.1
    q: float = 10.0
    r: float = 0.9
    s: float = 0.8
    k1: float = 0.8
    k2: float = 0.7
    d1: float = 0.02
    d2: float = 0.03
    sigma1: float = 3.67
    sigma2: float = 0.13
    sigma3: float = 0.625

    def __post_init__(self):
        for name in ("alpha", "beta", "q", "r", "s", "k1", "k2", "d1", "d2"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be positive, got {value}")
        for name in ("sigma1", "sigma2", "sigma3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ModelError(f"{name} must be non-negative, got {value}")
        if not self.k1 > self.k2:
            raise ModelError("requires k1 > k2")
        if not self.s > self.d2:
            raise ModelError("requires s > d2")
        if not self.beta > self.s * self.d1 / (self.k2 * (self.s - self.d2)):
            raise ModelError("requires beta > s*d1 / (k2*(s - d2))")

    @property
    def sigmas(self) -> tuple[float, float, float]:
        return (self.sigma1, self.sigma2, self.sigma3)


def cancer_vector_field(params: CancerParams, x) -> np.ndarray:
    M, N, Z = x
    p = params
    return np.array([
        p.q + p.r * M * (1 - M / p.k1) - p.alpha * M * N,
        p.beta * N * Z - p.d1 * N,
        p.s * Z * (1 - Z / p.k2) - p.beta * N * Z - p.d2 * Z,
    ])


def cancer_equilibrium(params: CancerParams) -> tuple[float, float, float]:
    """The unique positive equilibrium (M, N, Z)."""
    p = params
    N = (p.s / p.beta) * (1 - p.d1 / (p.beta * p.k2)) - p.d2 / p.beta
    Z = p.d1 / p.beta
    b = p.alpha * N - p.r
    M = (-b + math.sqrt(b * b + 4 * p.r * p.q / p.k1)) / (2 * p.r / p.k1)
    return M, N, Z


def cancer_deltas(params: CancerParams) -> tuple[float, float, float]:
    """(delta1, delta2, delta3): -sqrt(discriminant), alpha*N, -alpha*M at equilibrium."""
    p = params
    M, N, _ = cancer_equilibrium(p)
    delta1 = -math.sqrt((p.alpha * N - p.r) ** 2 + 4 * p.r * p.q / p.k1)
    return delta1, p.alpha * N, -p.alpha * M


def cancer_linearization(params: CancerParams) -> LinearSDESystem:
    p = params
    d1_, d2_, d3_ = cancer_deltas(p)
    A = [
        [d1_, d3_, 0.0],
        [0.0, 0.0, p.beta / p.alpha * d2_],
        [0.0, -p.d1, -p.s * p.d1 / (p.beta * p.k2)],
    ]
    Bs = []
    for j, sj in enumerate(p.sigmas):
        Bj = np.zeros((3, 3))
        Bj[j, j] = sj
        Bs.append(Bj)
    meta = {k: repr(v) for k, v in asdict(p).items()}
    return LinearSDESystem("cancer_linearized", A, tuple(Bs), meta)


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    value: float
    bound: float
    passed: bool

    @property
    def slack(self) -> float:
        return self.bound - self.value


@dataclass(frozen=True)
class ConditionReport:
    w2: float
    checks: tuple[ConditionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def cancer_sufficient_conditions(params: CancerParams, w3: float, w4: float) -> ConditionReport:
    """Sufficient conditions for mean-square stability of the tumor linearization.

    They come from the quadratic Lyapunov function
    V(u) = (u1^2 + w2 u2^2 + w3 u3^2 + w4 (u2 + u3)^2) / 2 with w2 fixed so that
    the u2*u3 term of LV cancels.  LV = -u'Gu, and G is positive definite iff
    G11 > 0, G33 > 0 and G11*G22 > G12^2; the sigma bounds below are these
    three inequalities solved for sigma_j^2.  Each check reads ``value < bound``
    (``<=`` for w4 >= 0), so ``slack = bound - value``.  When sigma1^2 equals
    -2*delta1 the sigma2 bound is -inf.
    """
    if not w3 + w4 > 0:
        raise ValueError("requires w3 + w4 > 0")
    p = params
    d1_, d2_, d3_ = cancer_deltas(p)
    ratio = p.beta / p.alpha
    damp3 = p.s * p.d1 / (p.beta * p.k2)
    w2 = (p.alpha / (p.beta * d2_)) * ((p.d1 - ratio * d2_ + damp3) * w4 + p.d1 * w3)
    s1, s2, s3 = (x * x for x in p.sigmas)
    gap1 = abs(2 * d1_ + s1)
    if w2 + w4 > 0:
        cross = d3_**2 / ((w2 + w4) * gap1) if gap1 > 0 else math.inf
        sigma2_bound = 2 * p.d1 * w4 / (w2 + w4) - cross
    else:
        sigma2_bound = -math.inf
    z_bound = -ratio * d2_ * w4 / (w3 + w4) + damp3
    weights_det = (w2 + w4) * (w3 + w4) - w4 * w4
    checks = (
        ConditionCheck("w4 >= 0", -w4, 0.0, w4 >= 0),
        ConditionCheck("w2 + w4 > 0", -(w2 + w4), 0.0, w2 + w4 > 0),
        ConditionCheck("Lyapunov weights positive definite", -weights_det, 0.0, weights_det > 0),
        ConditionCheck("resting-cell damping positive", -z_bound, 0.0, z_bound > 0),
        ConditionCheck("sigma1 bound", s1, -2 * d1_, s1 < -2 * d1_),
        ConditionCheck("sigma2 bound positive", -sigma2_bound, 0.0, sigma2_bound > 0),
        ConditionCheck("sigma2 bound", s2, sigma2_bound, s2 < sigma2_bound),
        ConditionCheck("sigma3 bound", s3, 2 * z_bound, s3 < 2 * z_bound),
    )
    return ConditionReport(w2, checks)


@dataclass(frozen=True)
class SmokingParams:
    alpha: float = 0.3
    beta: float = 2.0
    gamma: float = 1.0
    mu: float = 1.0
    sigma: float = 0.8
    sigma1: float = 1.0
    sigma2: float = 12.0
    sigma3: float = 500.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "mu", "sigma1", "sigma2", "sigma3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be positive, got {value}")
        if not 0 < self.sigma < 1:
            raise ModelError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not self.reproduction_number > 1:
            raise ModelError(f"no endemic equilibrium: R = {self.reproduction_number:.6g} <= 1")

    @property
    def reproduction_number(self) -> float:
        a, b, g, mu, s = self.alpha, self.beta, self.gamma, self.mu, self.sigma
        return b * (mu + a) / (mu * (mu + a) + g * (s * a + mu))


def smoking_equilibrium(params: SmokingParams) -> tuple[float, float, float]:
    """Endemic equilibrium (potential smokers, smokers, temporary quitters)."""
    p = params
    R = p.reproduction_number
    S = p.mu / p.beta * (R - 1)
    return 1 / R, S, p.gamma * (1 - p.sigma) * S / (p.mu + p.alpha)


def smoking_linearization(params: SmokingParams) -> LinearSDESystem:
    p = params
    P, S, QT = smoking_equilibrium(p)
    A = [
        [-(p.mu + p.beta * S), -p.beta * P, 0.0],
        [p.beta * S, -(p.mu + p.gamma - p.beta * P), p.alpha],
        [0.0, p.gamma * (1 - p.sigma), -(p.mu + p.alpha)],
    ]
    Bs = []
    for j, scale in enumerate((p.sigma1 * P, p.sigma2 * S, p.sigma3 * QT)):
        Bj = np.zeros((3, 3))
        Bj[j, j] = scale
        Bs.append(Bj)
    meta = {k: repr(v) for k, v in asdict(p).items()}
    return LinearSDESystem("smoking_linearized", A, tuple(Bs), meta)
