"""Monte Carlo moments of dX = AX dt + sum_j B_j X dW_j (Ito).

Paths are split into fixed-size batches.  Batch k draws its Brownian
increments from ``PCG64(SeedSequence(seed).spawn(...)[k])``, so results do not
depend on how many threads process the batches.  Batch sums are combined in
batch order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from gbmstab.model import LinearSDESystem, ModelError, commutativity_report
from gbmstab.parallel import map_ordered

BATCH_SIZE = 1000
BLOW_UP_NORM = 1e150


@dataclass(frozen=True)
class SimulationConfig:
    x0: tuple[float, ...]
    horizon: float = 5.0
    dt: float = 1e-3
    paths: int = 10_000
    seed: int = 0
    p_values: tuple[float, ...] = (2.0,)
    records: int = 500

    def __post_init__(self):
        x0 = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x0, dtype=float)))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "p_values", tuple(float(p) for p in self.p_values))
        if not all(math.isfinite(v) for v in x0):
            raise ValueError("x0 must be finite")
        if not (self.horizon > 0 and self.dt > 0):
            raise ValueError("horizon and dt must be positive")
        if self.dt > self.horizon:
            raise ValueError("dt must not exceed the horizon")
        if self.paths < 1 or self.records < 1:
            raise ValueError("paths and records must be positive")
        if not self.p_values or any(p <= 0 for p in self.p_values):
            raise ValueError("p_values must be positive")

    @property
    def steps(self) -> int:
        """Number of Euler steps; the step actually used is horizon / steps."""
        return max(1, round(self.horizon / self.dt))


@dataclass
class MomentEstimate:
    """Path averages at the recorded times.

    ``moments[i, k]`` estimates E||X(times[k])||^p_values[i]; ``mean_state`` and
    ``second_moment`` estimate E[X] and E[X X^T].  Paths that overflowed are
    dropped from every average and counted in ``blow_up_fraction``.
    """

    times: np.ndarray
    p_values: tuple[float, ...]
    moments: np.ndarray
    stderr: np.ndarray
    mean_state: np.ndarray
    mean_state_stderr: np.ndarray
    second_moment: np.ndarray
    second_moment_stderr: np.ndarray
    blow_up_fraction: float
    paths: int
    seed: int
    rates: dict = field(default_factory=dict)

    def moment(self, p: float) -> tuple[np.ndarray, np.ndarray]:
        i = self.p_values.index(float(p))
        return self.moments[i], self.stderr[i]

    def at(self, t: float) -> int:
        """Index of the recorded time closest to t."""
        return int(np.argmin(np.abs(self.times - t)))


def _record_steps(steps: int, records: int) -> np.ndarray:
    stride = max(1, steps // records)
    idx = np.arange(0, steps + 1, stride)
    if idx[-1] != steps:
        idx = np.append(idx, steps)
    return idx


class _Sums:
    """Running sums over paths at each record time (value and square)."""

    def __init__(self, n_rec: int, n_p: int, n: int):
        self.count = np.zeros(n_rec)
        self.pw = np.zeros((2, n_p, n_rec))
        self.x = np.zeros((2, n_rec, n))
        self.xx = np.zeros((2, n_rec, n, n))

    def add(self, k: int, X: np.ndarray, ps: tuple[float, ...]):
        r = np.linalg.norm(X, axis=1)
        self.count[k] += len(X)
        for i, p in enumerate(ps):
            v = r**p
            self.pw[0, i, k] += v.sum()
            self.pw[1, i, k] += (v * v).sum()
        self.x[0, k] += X.sum(axis=0)
        self.x[1, k] += (X * X).sum(axis=0)
        outer = X[:, :, None] * X[:, None, :]
        self.xx[0, k] += outer.sum(axis=0)
        self.xx[1, k] += (outer * outer).sum(axis=0)

    def merge(self, other: "_Sums"):
        self.count += other.count
        self.pw += other.pw
        self.x += other.x
        self.xx += other.xx


def _mean_se(s1, s2, count):
    count = np.maximum(count, 1)
    mean = s1 / count
    var = np.maximum(s2 / count - mean * mean, 0.0) * count / np.maximum(count - 1, 1)
    return mean, np.sqrt(var / count)


def euler_maruyama(system: LinearSDESystem, config: SimulationConfig) -> MomentEstimate:
    """Strong Euler-Maruyama with N(0, dt) increments per channel and path."""
    n, ell = system.n, system.ell
    x0 = np.asarray(config.x0)
    if x0.shape != (n,):
        raise ModelError(f"x0 has length {len(x0)}, system dimension is {n}")
    steps = config.steps
    h = config.horizon / steps
    rec = _record_steps(steps, config.records)
    rec_pos = {int(s): k for k, s in enumerate(rec)}
    sizes = [BATCH_SIZE] * (config.paths // BATCH_SIZE)
    if config.paths % BATCH_SIZE:
        sizes.append(config.paths % BATCH_SIZE)
    streams = np.random.SeedSequence(config.seed).spawn(len(sizes))
    At = system.A.T
    Bt = [Bj.T for Bj in system.B]
    sq = math.sqrt(h)

    def run(k: int):
        rng = np.random.Generator(np.random.PCG64(streams[k]))
        X = np.tile(x0, (sizes[k], 1))
        alive = np.ones(sizes[k], dtype=bool)
        sums = _Sums(len(rec), len(config.p_values), n)
        sums.add(0, X, config.p_values)
        with np.errstate(over="ignore", invalid="ignore"):
            for step in range(1, steps + 1):
                dW = rng.standard_normal((sizes[k], ell)) * sq if ell else None
                dX = h * (X @ At)
                for j in range(ell):
                    dX += dW[:, j:j + 1] * (X @ Bt[j])
                X = X + dX
                if step in rec_pos:
                    bad = ~np.all(np.isfinite(X), axis=1) | (np.linalg.norm(X, axis=1) > BLOW_UP_NORM)
                    if bad.any():
                        alive &= ~bad
                        X[bad] = 0.0
                    sums.add(rec_pos[step], X[alive], config.p_values)
        return sums, int((~alive).sum())

    results = map_ordered(run, range(len(sizes)))
    total = _Sums(len(rec), len(config.p_values), n)
    blown = 0
    for sums, b in results:
        total.merge(sums)
        blown += b
    moments, stderr = _mean_se(total.pw[0], total.pw[1], total.count[None, :])
    mx, mx_se = _mean_se(total.x[0], total.x[1], total.count[:, None])
    mxx, mxx_se = _mean_se(total.xx[0], total.xx[1], total.count[:, None, None])
    est = MomentEstimate(rec * h, config.p_values, moments, stderr, mx, mx_se, mxx, mxx_se,
                         blown / config.paths, config.paths, config.seed)
    for p in config.p_values:
        try:
            est.rates[p] = fit_decay_rate(est.times, *est.moment(p))
        except ValueError:
            pass
    return est


def exact_commuting_sample(system: LinearSDESystem, x0, t: float, seed: int, size: int | None = None):
    """X(t) = expm((A - sum B_j^2 / 2) t + sum B_j W_j(t)) x0 for fully commuting systems.

    Returns one n-vector, or ``size`` independent draws stacked as rows.
    """
    if not commutativity_report(system).fully_commuting:
        raise ModelError("exact sampler requires A and all B_j to commute pairwise")
    if t < 0:
        raise ValueError("t must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    count = 1 if size is None else int(size)
    drift = (system.A - 0.5 * sum((Bj @ Bj for Bj in system.B), np.zeros_like(system.A))) * t
    W = rng.standard_normal((count, system.ell)) * math.sqrt(t)
    expo = drift[None] + np.einsum("kj,jab->kab", W, np.array(system.B).reshape(-1, system.n, system.n))
    X = linalg.expm(expo) @ x0
    return X[0] if size is None else X


def mean_evolve(system: LinearSDESystem, x0, t: float) -> np.ndarray:
    """E[X(t)] = expm(A t) x0."""
    if t < 0:
        raise ValueError("t must be non-negative")
    return linalg.expm(system.A * t) @ np.asarray(x0, dtype=float)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    band: tuple[float, float]
    blow_up: bool = False


def fit_decay_rate(times, means, stderr) -> DecayFit:
    """Least-squares decay rate -d/dt log E||X||^p over the latter half of the horizon.

    The band is +-3 propagated standard errors, treating the log-moment errors
    se/mean as independent.  Any non-positive estimate means the moment has
    collapsed numerically, reported as an infinite rate.
    """
    times, means, stderr = (np.asarray(v, dtype=float) for v in (times, means, stderr))
    if len(times) < 10:
        raise ValueError("need at least 10 time points")
    if not np.all(np.isfinite(means)) or np.any(means <= 0):
        return DecayFit(math.inf, (math.inf, math.inf), True)
    half = times >= times[0] + 0.5 * (times[-1] - times[0])
    t, y = times[half], np.log(means[half])
    sig = stderr[half] / means[half]
    dt = t - t.mean()
    sxx = float(dt @ dt)
    slope = float(dt @ (y - y.mean())) / sxx
    se = math.sqrt(float((dt * dt) @ (sig * sig))) / sxx
    rate = -slope
    return DecayFit(rate, (rate - 3 * se, rate + 3 * se))


def write_moment_table(estimate: MomentEstimate, path) -> None:
    """CSV with columns t, then mean and stderr for each p."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["t"]
        for p in estimate.p_values:
            header += [f"mean_p{p:g}", f"stderr_p{p:g}"]
        writer.writerow(header)
        for k, t in enumerate(estimate.times):
            row = [repr(float(t))]
            for i in range(len(estimate.p_values)):
                row += [repr(float(estimate.moments[i, k])), repr(float(estimate.stderr[i, k]))]
            writer.writerow(row)
