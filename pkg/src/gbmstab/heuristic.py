"""Search for BMI certificates (p != 2) by sequential trust-region LMIs.

Scaling Q by s scales H by s^2, so only the shape of Q matters: the search
runs over trace-one Q and maximizes the merit

    phi(Q) = max_{c, t}  min(lambda_min P(Q, c, t), c, lambda_min Q),

where P(Q, c, t) is the Gram matrix of H_Q - c||x||^4 with free parameters t.
Each outer step linearizes P around the current Q, solves the resulting LMI in
(dQ, c, t) inside a box |dQ| <= r, and accepts the step only if the exact merit
improves (r doubles) or rejects it (r shrinks by 4).  Once phi > 0 the
normalized Q is scaled up until c >= eps and Q >= eps*I, and the resulting
certificate is checked by ``verify.verify_certificate`` before it is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from gbmstab.bmi import assemble_lmi_p2, fixed_q_lmi, gram_structure
from gbmstab.model import LinearSDESystem
from gbmstab.parallel import map_ordered, thread_count
from gbmstab.quartic import q_matrix, q_vector
from gbmstab.sdp import (
    AffineMatrixInequality,
    SolveOutcome,
    Status,
    block_diag_lmi,
    maximize_margin,
    min_eigenvalue,
    solve_lmi_feasibility,
)
from gbmstab.verify import StabilityCertificate, verify_certificate


@dataclass(frozen=True)
class HeuristicConfig:
    seed: int = 0
    max_outer: int = 100
    restarts: int = 20
    p_grid: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0)
    trust_radius: float = 0.25
    tol_feas: float = 1e-8
    precondition: bool = True

    def __post_init__(self):
        if self.max_outer < 1 or self.restarts < 1:
            raise ValueError("max_outer and restarts must be positive")
        if not (self.trust_radius > 0 and self.tol_feas > 0):
            raise ValueError("trust_radius and tol_feas must be positive")
        grid = tuple(float(p) for p in self.p_grid)
        if not grid or any(p <= 0 for p in grid):
            raise ValueError("p_grid must be a nonempty list of positive values")
        if list(grid) != sorted(grid):
            raise ValueError("p_grid must be sorted ascending")
        object.__setattr__(self, "p_grid", grid)


def _similar(system: LinearSDESystem, d: np.ndarray) -> LinearSDESystem:
    """System in coordinates y = diag(d) x."""
    D, Dinv = np.diag(d), np.diag(1.0 / d)
    return LinearSDESystem(system.name, D @ system.A @ Dinv,
                           tuple(D @ Bj @ Dinv for Bj in system.B), system.metadata)


class _Merit:
    """Exact merit and its linearized LMI for one (system, p)."""

    def __init__(self, system: LinearSDESystem, p: float):
        self.n = system.n
        self.structure = gram_structure(system, p)
        self.Pquad, self.Pc, self.Pt = self.structure.parametric()
        self.m = self.structure.m
        diag = np.zeros(self.m)
        diag[[k for k, (u, v) in enumerate((u, v) for u in range(self.n)
                                           for v in range(u, self.n)) if u == v]] = 1.0
        self.trace_row = diag
        self.tangent = linalg.null_space(diag[None, :])
        self.Qbasis = np.stack([q_matrix(e, self.n) for e in np.eye(self.m)])

    def gram_constant(self, q):
        return np.einsum("ijab,a,b->ij", self.Pquad, q, q)

    def gram_jacobian(self, q):
        sym = self.Pquad + self.Pquad.transpose(0, 1, 3, 2)
        return np.einsum("ijab,b->aij", sym, q)

    def _box(self, P0):
        return 1e3 * (1.0 + float(np.max(np.abs(P0))))

    def evaluate(self, q):
        """(phi, c, t) at fixed trace-one q."""
        P0 = self.gram_constant(q)
        lmi = block_diag_lmi(
            AffineMatrixInequality(P0, np.concatenate([self.Pc[None], self.Pt])),
            AffineMatrixInequality(np.zeros((1, 1)),
                                   np.array([[[1.0]]] + [[[0.0]]] * len(self.Pt))),
        )
        R = self._box(P0)
        res = maximize_margin(lmi, -R, R, y0=np.zeros(lmi.nvars), gap_tol=1e-8)
        y = res.y
        phi = min(min_eigenvalue(lmi.evaluate(y)), min_eigenvalue(q_matrix(q, self.n)))
        return phi, float(y[0]), y[1:].copy()

    def step(self, q, c, t, radius):
        """Maximize the linearized merit over a box of half-width ``radius`` in dq."""
        k = self.tangent.shape[1]
        P0 = self.gram_constant(q)
        dP = np.tensordot(self.tangent.T, self.gram_jacobian(q), axes=1)
        nfree = len(self.Pt)
        zeros_q = np.zeros((k, self.n, self.n))
        gram = AffineMatrixInequality(P0, np.concatenate([dP, self.Pc[None], self.Pt]))
        cblock = AffineMatrixInequality(
            np.zeros((1, 1)),
            np.concatenate([np.zeros((k, 1, 1)), np.ones((1, 1, 1)), np.zeros((nfree, 1, 1))]),
        )
        qblock = AffineMatrixInequality(
            q_matrix(q, self.n),
            np.concatenate([np.tensordot(self.tangent.T, self.Qbasis, axes=1),
                            np.zeros((1 + nfree, self.n, self.n))]) if k else zeros_q,
        )
        lmi = block_diag_lmi(gram, cblock, qblock)
        R = self._box(P0)
        lower = np.concatenate([np.full(k, -radius), np.full(1 + nfree, -R)])
        upper = -lower
        y0 = np.concatenate([np.zeros(k), np.clip([c], -0.5 * R, 0.5 * R),
                             np.clip(t, -0.5 * R, 0.5 * R)])
        res = maximize_margin(lmi, lower, upper, y0=y0, gap_tol=1e-7, max_iter=5000)
        return q + self.tangent @ res.y[:k]


def _normalize(Q) -> np.ndarray:
    Q = 0.5 * (np.asarray(Q, float) + np.asarray(Q, float).T)
    return Q / np.trace(Q)


def _lmi_seed(system: LinearSDESystem, eps: float):
    outcome = solve_lmi_feasibility(assemble_lmi_p2(system, eps))
    if outcome.status is Status.FEASIBLE:
        return q_matrix(outcome.point, system.n)
    return None


def _lyapunov_seed(system: LinearSDESystem):
    if np.max(np.linalg.eigvals(system.A).real) >= 0:
        return None
    Q = linalg.solve_continuous_lyapunov(system.A.T, -np.eye(system.n))
    Q = 0.5 * (Q + Q.T)
    return Q if min_eigenvalue(Q) > 0 else None


def _random_spd(rng: np.random.Generator, n: int) -> np.ndarray:
    W = rng.normal(size=(n, n))
    return W @ W.T + 0.1 * n * np.eye(n)


def _certificate_from(system, p, eps, Q, merit: _Merit):
    """Scale a trace-one Q with positive merit into a verified certificate."""
    q = q_vector(Q)
    phi, c, t = merit.evaluate(q)
    if not phi > 0:
        return None, None
    qmin = min_eigenvalue(Q)
    s = max(np.sqrt(eps / c), eps / qmin) * (1.0 + 1e-6)
    P = merit.structure.gram_matrix(q, c, t)
    gram = s * s * P - (s * s * c - eps) * merit.Pc
    cert = StabilityCertificate(p, eps, eps, s * Q, gram)
    report = verify_certificate(system, cert, method="both")
    return (cert, report) if report.overall else (None, report)


@dataclass
class _RestartResult:
    index: int
    Q: np.ndarray | None
    phi: float
    iterations: int
    history: list = field(default_factory=list)


def _search(merit: _Merit, Q0: np.ndarray, config: HeuristicConfig, index: int) -> _RestartResult:
    q = q_vector(_normalize(Q0))
    phi, c, t = merit.evaluate(q)
    radius = config.trust_radius
    history = [phi]
    it = 0
    for it in range(1, config.max_outer + 1):
        if phi > config.tol_feas:
            break
        try:
            q_new = merit.step(q, c, t, radius)
        except (np.linalg.LinAlgError, ValueError):
            radius *= 0.25
            continue
        q_new = q_vector(_normalize(q_matrix(q_new, merit.n)))
        if min_eigenvalue(q_matrix(q_new, merit.n)) > 0:
            phi_new, c_new, t_new = merit.evaluate(q_new)
        else:
            phi_new = -np.inf
        if phi_new > phi + 1e-12 * (1 + abs(phi)):
            q, phi, c, t = q_new, phi_new, c_new, t_new
            radius = min(2 * radius, 1.0)
        else:
            radius *= 0.25
            if radius < 1e-10:
                break
        history.append(phi)
    Q = q_matrix(q, merit.n) if phi > config.tol_feas else None
    return _RestartResult(index, Q, phi, it, history)


def solve_bmi(system: LinearSDESystem, p: float, eps: float,
              config: HeuristicConfig = HeuristicConfig(), initial_Q=None) -> SolveOutcome:
    """Heuristic BMI solve; Feasible carries a verified certificate, otherwise Unknown.

    ``initial_Q`` (symmetric positive definite) is tried before the built-in seeds.
    """
    if not (p > 0 and eps > 0):
        raise ValueError("p and eps must be positive")
    n = system.n
    notes = []
    if initial_Q is not None:
        initial_Q = np.asarray(initial_Q, dtype=float)
        if initial_Q.shape != (n, n) or min_eigenvalue(initial_Q) <= 0:
            raise ValueError("initial_Q must be symmetric positive definite and n x n")
    lmi_Q = _lmi_seed(system, eps)
    if lmi_Q is not None and p <= 2:
        # monotonicity in p: the p = 2 certificate is valid for every p <= 2
        out = check_fixed_q(system, lmi_Q, p, eps)
        if out.status is Status.FEASIBLE:
            out.certificate_note = "p = 2 LMI solution reused (H decreases in p)"
            return out
    seeds = [Q for Q in (initial_Q, lmi_Q, _lyapunov_seed(system), np.eye(n)) if Q is not None]
    rng_streams = np.random.SeedSequence(config.seed).spawn(config.restarts)
    seeds = seeds[: config.restarts]
    for k in range(len(seeds), config.restarts):
        seeds.append(_random_spd(np.random.default_rng(rng_streams[k]), n))

    def run(index: int):
        Q0 = seeds[index]
        if config.precondition:
            d = np.sqrt(np.diag(Q0))
            work = _similar(system, d)
            Q0w = Q0 / np.outer(d, d)
        else:
            d, work, Q0w = np.ones(n), system, Q0
        merit = _Merit(work, p)
        res = _search(merit, Q0w, config, index)
        if res.Q is None:
            return res, None, None
        Q = _normalize(np.outer(d, d) * res.Q)
        cert, report = _certificate_from(system, p, eps, Q, _Merit(system, p))
        return res, cert, report

    total = 0
    threads = thread_count()
    best_phi = -np.inf
    for start in range(0, config.restarts, threads):
        batch = list(range(start, min(start + threads, config.restarts)))
        results = map_ordered(run, batch, threads)
        for res, cert, report in results:
            total += res.iterations
            best_phi = max(best_phi, res.phi)
            if cert is not None:
                return SolveOutcome(
                    Status.FEASIBLE, q_vector(cert.Q), float(res.phi), total,
                    f"restart {res.index}: merit {res.phi:.3g} after {res.iterations} steps",
                    certificate=cert, details={"verification": report, "restart": res.index},
                )
            if res.Q is not None:
                notes.append(f"restart {res.index}: positive merit but verification failed")
    note = f"no certificate after {config.restarts} restarts (best merit {best_phi:.3g})"
    return SolveOutcome(Status.UNKNOWN, None, float(best_phi), total,
                        "; ".join([note] + notes))


def check_fixed_q(system: LinearSDESystem, Q, p: float, eps: float,
                  tol_feas: float = 1e-8) -> SolveOutcome:
    """Solve the LMI left in (c, free Gram entries) once Q is fixed."""
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (system.n, system.n) or np.max(np.abs(Q - Q.T)) > 1e-12 * max(1, np.max(np.abs(Q))):
        raise ValueError("Q must be a symmetric matrix matching the system dimension")
    Q = 0.5 * (Q + Q.T)
    qmin = min_eigenvalue(Q)
    if qmin <= 0:
        raise ValueError(f"Q is not positive definite (min eigenvalue {qmin:.3g})")
    if qmin < eps - tol_feas:
        return SolveOutcome(Status.INFEASIBLE, None, qmin - eps, 0,
                            "Q - eps*I is not positive semidefinite")
    structure = gram_structure(system, p)
    lmi, unpack = fixed_q_lmi(structure, Q, eps)
    outcome = solve_lmi_feasibility(lmi, tol_feas=tol_feas)
    if outcome.status is not Status.FEASIBLE:
        return outcome
    # lowering c to eps only adds the PSD Gram form of ||x||^4
    lmi_eps, unpack_eps = fixed_q_lmi(structure, Q, eps, c=eps)
    final = solve_lmi_feasibility(lmi_eps, tol_feas=tol_feas)
    if final.status is not Status.FEASIBLE:
        return SolveOutcome(Status.UNKNOWN, outcome.point, outcome.margin, outcome.iterations,
                            "feasible c found but Gram synthesis at c = eps failed")
    c, P = unpack_eps(final.point)
    cert = StabilityCertificate(p, eps, c, Q, P)
    report = verify_certificate(system, cert, method="both")
    status = Status.FEASIBLE if report.overall else Status.UNKNOWN
    return SolveOutcome(status, final.point, final.margin, outcome.iterations + final.iterations,
                        "fixed-Q LMI" + ("" if report.overall else ": certificate failed verification"),
                        certificate=cert if report.overall else None,
                        details={"verification": report, "c_max_margin": unpack(outcome.point)[0]})


@dataclass
class SweepEntry:
    p: float
    outcome: SolveOutcome
    feasible: bool
    source: str


def p_sweep(system: LinearSDESystem, eps: float,
            config: HeuristicConfig = HeuristicConfig()) -> list[SweepEntry]:
    """Per-p outcomes over ``config.p_grid`` with a downward-closed feasible set.

    p = 2 is decided exactly by the LMI.  Other grid points are tried in
    ascending order, each warm-started by the previous success; after the first
    failure the larger points are left Unknown.  Finally the certificate of
    the largest feasible p is re-verified at every smaller grid point.
    """
    entries: dict[float, SweepEntry] = {}
    lmi_status = None
    if 2.0 in config.p_grid:
        lmi = solve_lmi_feasibility(assemble_lmi_p2(system, eps))
        lmi_status = lmi.status
        if lmi.status is Status.FEASIBLE:
            out = check_fixed_q(system, q_matrix(lmi.point, system.n), 2.0, eps)
            entries[2.0] = SweepEntry(2.0, out, out.status is Status.FEASIBLE, "LMI")
        else:
            entries[2.0] = SweepEntry(2.0, lmi, False, "LMI")
    failed = False
    warm = None
    for p in config.p_grid:
        if p in entries:
            continue
        if p > 2.0 and lmi_status is Status.INFEASIBLE:
            out = SolveOutcome(Status.UNKNOWN, None, float("nan"), 0,
                               "p = 2 LMI infeasible, so larger p cannot be certified")
            entries[p] = SweepEntry(p, out, False, "monotonicity")
            continue
        if failed:
            out = SolveOutcome(Status.UNKNOWN, None, float("nan"), 0,
                               "skipped after a failure at smaller p")
            entries[p] = SweepEntry(p, out, False, "skipped")
            continue
        out = solve_bmi(system, p, eps, config, initial_Q=warm)
        entries[p] = SweepEntry(p, out, out.status is Status.FEASIBLE, "BMI")
        if out.status is Status.FEASIBLE:
            warm = out.certificate.Q
        failed = out.status is not Status.FEASIBLE
    feasible_ps = [p for p in config.p_grid if entries[p].feasible]
    if feasible_ps:
        top = max(feasible_ps)
        cert = entries[top].outcome.certificate
        for p in config.p_grid:
            if p < top and not entries[p].feasible:
                reused = StabilityCertificate(p, cert.eps, cert.c, cert.Q)
                report = verify_certificate(system, reused, method="both")
                if report.overall:
                    out = SolveOutcome(Status.FEASIBLE, q_vector(cert.Q), float("nan"), 0,
                                       f"certificate for p = {top:g} reused", certificate=reused,
                                       details={"verification": report})
                    entries[p] = SweepEntry(p, out, True, f"reused from p = {top:g}")
    return [entries[p] for p in config.p_grid]
