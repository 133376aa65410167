"""Dense semidefinite feasibility for small affine matrix inequalities.

F(y) = F0 + sum_i y_i F_i is required to be positive semidefinite.  The core
routine maximizes the margin t subject to F(y) - tI >= 0 inside a box
``lower <= y <= upper`` with a primal log-barrier path-following method
(damped Newton on  -tau*t - log det(F(y) - tI) - sum log(box slacks)).
Feasibility is declared from a point whose recomputed minimum eigenvalue is
non-negative; infeasibility only from a barrier upper bound on the optimal
margin that stays negative under trust-region doubling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

DEFAULT_TOL_FEAS = 1e-8
DEFAULT_MAX_ITER = 50000
DEFAULT_TRUST_REGION = 1e6


class Status(str, enum.Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, eq=False)
class AffineMatrixInequality:
    """F(y) = constant + sum_i y_i * coefficients[i]  >= 0."""

    constant: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        F0 = np.array(self.constant, dtype=float)
        Fs = np.array(self.coefficients, dtype=float)
        if F0.ndim != 2 or F0.shape[0] != F0.shape[1]:
            raise ValueError(f"constant must be square, got {F0.shape}")
        N = F0.shape[0]
        if Fs.size == 0:
            Fs = Fs.reshape(0, N, N)
        if Fs.ndim != 3 or Fs.shape[1:] != (N, N):
            raise ValueError(f"coefficients must have shape (k, {N}, {N}), got {Fs.shape}")
        if np.max(np.abs(F0 - F0.T), initial=0.0) > 0 or np.max(
            np.abs(Fs - Fs.transpose(0, 2, 1)), initial=0.0
        ) > 0:
            # tolerate roundoff-level asymmetry from callers by symmetrizing
            F0 = 0.5 * (F0 + F0.T)
            Fs = 0.5 * (Fs + Fs.transpose(0, 2, 1))
        object.__setattr__(self, "constant", F0)
        object.__setattr__(self, "coefficients", Fs)

    @property
    def dim(self) -> int:
        return self.constant.shape[0]

    @property
    def nvars(self) -> int:
        return self.coefficients.shape[0]

    def evaluate(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.nvars,):
            raise ValueError(f"expected {self.nvars} variables, got shape {y.shape}")
        return self.constant + np.tensordot(y, self.coefficients, axes=1)

    def scaled(self, factor: float) -> "AffineMatrixInequality":
        return AffineMatrixInequality(factor * self.constant, factor * self.coefficients)


def block_diag_lmi(*blocks: AffineMatrixInequality) -> AffineMatrixInequality:
    """Stack inequalities over the same variables into one block-diagonal LMI."""
    k = blocks[0].nvars
    if any(b.nvars != k for b in blocks):
        raise ValueError("all blocks must share the same variables")
    F0 = linalg.block_diag(*[b.constant for b in blocks])
    Fs = np.stack(
        [linalg.block_diag(*[b.coefficients[i] for b in blocks]) for i in range(k)]
    ) if k else np.zeros((0,) + F0.shape)
    return AffineMatrixInequality(F0, Fs)


@dataclass
class SolveOutcome:
    status: Status
    point: np.ndarray | None = None
    margin: float = float("nan")
    iterations: int = 0
    certificate_note: str = ""
    upper_bound: float = float("nan")
    certificate: object | None = None
    details: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status is Status.FEASIBLE


def min_eigenvalue(S) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    return float(linalg.eigvalsh(0.5 * (S + S.T), subset_by_index=[0, 0])[0])


@dataclass
class _MarginResult:
    y: np.ndarray
    t: float
    upper_bound: float
    iterations: int
    converged: bool
    note: str = ""


def _chol(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return None


def _newton_step(H, grad):
    """Solve H step = -grad after symmetric diagonal (Jacobi) scaling."""
    d = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H * d[:, None] * d[None, :]
    try:
        L = np.linalg.cholesky(Hs)
        u = linalg.cho_solve((L, True), -grad * d)
    except np.linalg.LinAlgError:
        u = np.linalg.lstsq(Hs, -grad * d, rcond=None)[0]
    return u * d


def maximize_margin(
    lmi: AffineMatrixInequality,
    lower,
    upper,
    *,
    y0=None,
    gap_tol: float = 1e-9,
    max_iter: int = DEFAULT_MAX_ITER,
    stop_above: float | None = None,
) -> _MarginResult:
    """Maximize t s.t. F(y) - tI >= 0 and lower <= y <= upper (elementwise).

    ``stop_above`` ends the path early once a centered iterate has t above it.
    The returned ``upper_bound`` is the barrier gap bound t + nu/tau at the last
    centered point.
    """
    k, N = lmi.nvars, lmi.dim
    lower = np.broadcast_to(np.asarray(lower, dtype=float), (k,)).copy()
    upper = np.broadcast_to(np.asarray(upper, dtype=float), (k,)).copy()
    if np.any(upper <= lower):
        raise ValueError("empty box")
    y = 0.5 * (lower + upper) if y0 is None else np.clip(np.asarray(y0, float), lower, upper)
    # keep the start strictly inside the box
    width = upper - lower
    y = np.clip(y, lower + 1e-3 * width, upper - 1e-3 * width)
    F0, Fs = lmi.constant, lmi.coefficients
    G = np.concatenate([Fs, -np.eye(N)[None]], axis=0)
    t = min_eigenvalue(lmi.evaluate(y)) - 1.0
    nu = N + 2 * k
    scale = max(1.0, float(np.max(np.abs(F0), initial=0.0)),
                float(np.max(np.abs(Fs), initial=0.0)) * float(np.max(np.abs(width), initial=0.0)))
    tau = nu / scale
    iterations = 0

    def barrier(y, t):
        S = F0 + np.tensordot(y, Fs, axes=1) - t * np.eye(N)
        L = _chol(S)
        if L is None:
            return np.inf, None
        su, sl = upper - y, y - lower
        if np.any(su <= 0) or np.any(sl <= 0):
            return np.inf, None
        val = -2.0 * np.sum(np.log(np.diag(L))) - np.sum(np.log(su)) - np.sum(np.log(sl))
        return val, L

    phi, L = barrier(y, t)
    upper_bound = np.inf
    converged = False
    while True:
        # centering at current tau
        for _ in range(100):
            iterations += 1
            if iterations > max_iter:
                return _MarginResult(y, t, upper_bound, iterations, False, "iteration limit")
            Linv = linalg.solve_triangular(L, np.eye(N), lower=True)
            W = Linv @ G @ Linv.T
            grad = -np.trace(W, axis1=1, axis2=2)
            H = np.einsum("aij,bij->ab", W, W)
            su, sl = upper - y, y - lower
            grad[:k] += 1.0 / su - 1.0 / sl
            H[np.arange(k), np.arange(k)] += 1.0 / su**2 + 1.0 / sl**2
            grad[k] -= tau
            step = _newton_step(H, grad)
            dec2 = float(-grad @ step)
            if not np.isfinite(dec2):
                return _MarginResult(y, t, upper_bound, iterations, False, "numerical breakdown")
            if dec2 / 2 <= 1e-10:
                break
            f0 = -tau * t + phi
            alpha = 1.0
            accepted = False
            while alpha > 1e-14:
                yn, tn = y + alpha * step[:k], t + alpha * step[k]
                phin, Ln = barrier(yn, tn)
                if np.isfinite(phin) and -tau * tn + phin <= f0 - 0.25 * alpha * dec2:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            y, t, phi, L = yn, tn, phin, Ln
        upper_bound = t + nu / tau
        if stop_above is not None and t > stop_above:
            return _MarginResult(y, t, upper_bound, iterations, False, "stopped above target")
        if nu / tau <= gap_tol * max(1.0, abs(t)):
            converged = True
            break
        tau *= 8.0
    return _MarginResult(y, t, upper_bound, iterations, converged)


def solve_lmi_max_margin(
    lmi: AffineMatrixInequality,
    trust_region: float = 10.0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SolveOutcome:
    """Maximize the margin t with F(y) >= tI over the box ||y||_inf <= trust_region."""
    res = maximize_margin(lmi, -trust_region, trust_region, y0=np.zeros(lmi.nvars), max_iter=max_iter)
    margin = min_eigenvalue(lmi.evaluate(res.y))
    if not res.converged:
        return SolveOutcome(Status.UNKNOWN, res.y, margin, res.iterations, res.note or "not converged",
                            res.upper_bound)
    status = Status.FEASIBLE if margin >= 0 else Status.INFEASIBLE
    return SolveOutcome(status, res.y, margin, res.iterations,
                        f"max margin {res.t:.6g} over box radius {trust_region:g}", res.upper_bound)


def solve_lmi_feasibility(
    lmi: AffineMatrixInequality,
    tol_feas: float = DEFAULT_TOL_FEAS,
    max_iter: int = DEFAULT_MAX_ITER,
    trust_region: float = DEFAULT_TRUST_REGION,
) -> SolveOutcome:
    """Find y with F(y) >= 0, escalating the box radius 1, 10, ..., trust_region.

    Infeasible is reported only if the margin upper bound is below -tol_feas both
    at ``trust_region`` and at twice that radius.
    """
    if tol_feas <= 0:
        raise ValueError("tol_feas must be positive")
    if lmi.nvars == 0:
        margin = min_eigenvalue(lmi.constant)
        status = Status.FEASIBLE if margin >= -tol_feas else Status.INFEASIBLE
        return SolveOutcome(status, np.zeros(0), margin, 0, "no variables", margin)
    radii = []
    r = 1.0
    while r < trust_region:
        radii.append(r)
        r *= 10.0
    radii += [trust_region, 2.0 * trust_region]
    total = 0
    bounds = []
    best = None
    for radius in radii:
        try:
            res = maximize_margin(lmi, -radius, radius, y0=np.zeros(lmi.nvars),
                                  max_iter=max(1, max_iter - total))
        except np.linalg.LinAlgError as exc:
            return SolveOutcome(Status.UNKNOWN, None, float("nan"), total, f"numerical breakdown: {exc}")
        total += res.iterations
        margin = min_eigenvalue(lmi.evaluate(res.y))
        if best is None or margin > best[1]:
            best = (res.y, margin)
        if margin >= 0 and res.t >= 0:
            return SolveOutcome(Status.FEASIBLE, res.y, margin, total,
                                f"margin {margin:.3g} at box radius {radius:g}", res.upper_bound)
        if not res.converged:
            return SolveOutcome(Status.UNKNOWN, best[0], best[1], total,
                                f"{res.note or 'not converged'} at box radius {radius:g}")
        if radius >= trust_region:
            bounds.append(res.upper_bound)
    if len(bounds) == 2 and max(bounds) <= -tol_feas:
        return SolveOutcome(Status.INFEASIBLE, best[0], best[1], total,
                            f"margin upper bound {max(bounds):.3g} < 0 at box radii "
                            f"{trust_region:g} and {2 * trust_region:g}", max(bounds))
    if best is not None and best[1] >= -tol_feas:
        return SolveOutcome(Status.FEASIBLE, best[0], best[1], total,
                            "feasible within tolerance", max(bounds) if bounds else float("nan"))
    return SolveOutcome(Status.UNKNOWN, best[0], best[1], total,
                        "optimal margin too close to zero to decide",
                        max(bounds) if bounds else float("nan"))
