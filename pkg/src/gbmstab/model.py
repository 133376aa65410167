"""Linear Ito systems dX = A X dt + sum_j B_j X dW_j and the builtin model catalog."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

DEFAULT_COMMUTE_TOL = 1e-12


class ModelError(ValueError):
    """Raised for malformed or inconsistent model definitions."""


@dataclass(frozen=True, eq=False)
class LinearSDESystem:
    """Drift ``A`` and noise matrices ``B[0..ell-1]`` of a linear Ito SDE."""

    name: str
    A: np.ndarray
    B: tuple[np.ndarray, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
            raise ModelError(f"drift must be a square matrix, got shape {A.shape}")
        n = A.shape[0]
        Bs = []
        for j, Bj in enumerate(self.B):
            Bj = np.array(Bj, dtype=float)
            if Bj.shape != (n, n):
                raise ModelError(
                    f"noise matrix B{j + 1} has shape {Bj.shape}, expected {(n, n)}"
                )
            Bs.append(Bj)
        for M in [A, *Bs]:
            if not np.all(np.isfinite(M)):
                raise ModelError("non-finite matrix entry")
            M.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", tuple(Bs))
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in self.metadata.items()})

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def ell(self) -> int:
        return len(self.B)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n": self.n,
            "ell": self.ell,
            "A": self.A.tolist(),
            "B": [Bj.tolist() for Bj in self.B],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearSDESystem":
        try:
            name = str(doc["name"])
            n = int(doc["n"])
            ell = int(doc["ell"])
            A = doc["A"]
            B = doc.get("B", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed model document: {exc}") from exc
        if n < 1 or ell < 0:
            raise ModelError(f"invalid sizes n={n}, ell={ell}")
        if len(B) != ell:
            raise ModelError(f"ell={ell} but {len(B)} noise matrices given")
        try:
            A = np.array(A, dtype=float)
            B = [np.array(Bj, dtype=float) for Bj in B]
        except (TypeError, ValueError) as exc:
            raise ModelError(f"matrix entries must be numbers: {exc}") from exc
        if A.shape != (n, n):
            raise ModelError(f"A has shape {A.shape}, expected {(n, n)}")
        return cls(name, A, tuple(B), dict(doc.get("metadata") or {}))


def load_system(path) -> LinearSDESystem:
    """Read a model file (JSON object with name, n, ell, A, B, metadata)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not a valid document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: top level must be an object")
    return LinearSDESystem.from_dict(doc)


def save_system(system: LinearSDESystem, path) -> None:
    Path(path).write_text(json.dumps(system.to_dict(), indent=2) + "\n", encoding="utf-8")


def commutator(U, V) -> np.ndarray:
    """Lie bracket ``UV - VU``."""
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim != 2 or U.shape[0] != U.shape[1] or U.shape != V.shape:
        raise ModelError(f"commutator needs equal square matrices, got {U.shape} and {V.shape}")
    return U @ V - V @ U


@dataclass(frozen=True)
class CommutativityReport:
    a_b_commute: tuple[bool, ...]
    b_b_commute: tuple[tuple[bool, ...], ...]

    @property
    def fully_commuting(self) -> bool:
        return all(self.a_b_commute) and all(all(row) for row in self.b_b_commute)


def commutativity_report(system: LinearSDESystem, tol: float = DEFAULT_COMMUTE_TOL) -> CommutativityReport:
    """Flag which of [A, B_j] and [B_j, B_k] vanish (max-abs entry <= tol)."""

    def vanishes(U, V):
        return float(np.max(np.abs(commutator(U, V)))) <= tol

    ab = tuple(vanishes(system.A, Bj) for Bj in system.B)
    bb = tuple(
        tuple(True if j == k else vanishes(system.B[j], system.B[k]) for k in range(system.ell))
        for j in range(system.ell)
    )
    return CommutativityReport(ab, bb)


# --- builtin catalog -------------------------------------------------------


def _meta(**params) -> dict[str, str]:
    return {k: repr(v) for k, v in params.items()}


def random_linear_oscillator(kappa=1.0, gamma=0.2, sigma1=0.3, sigma2=0.5) -> LinearSDESystem:
    """Damped oscillator with white-noise perturbed damping and stiffness."""
    A = [[0.0, 1.0], [-kappa, -gamma]]
    B1 = [[0.0, 0.0], [0.0, -sigma1]]
    B2 = [[0.0, 0.0], [-sigma2, 0.0]]
    return LinearSDESystem(
        "random_linear_oscillator", A, (B1, B2),
        _meta(kappa=kappa, gamma=gamma, sigma1=sigma1, sigma2=sigma2),
    )


def satellite(kappa=1.0, gamma=0.2, alpha=0.2, sigma1=0.3, sigma2=0.5) -> LinearSDESystem:
    """Oscillator with an ``alpha*sin(2x)`` restoring term linearized at the origin."""
    A = [[0.0, 1.0], [-kappa + 2.0 * alpha, -gamma]]
    B1 = [[0.0, 0.0], [0.0, -sigma1]]
    B2 = [[0.0, 0.0], [-sigma2, 0.0]]
    return LinearSDESystem(
        "satellite", A, (B1, B2),
        _meta(kappa=kappa, gamma=gamma, alpha=alpha, sigma1=sigma1, sigma2=sigma2),
    )


def two_inertia(rho=2.0, sigma1=0.3, sigma2=0.5) -> LinearSDESystem:
    A = [[-rho / 2, rho / 2], [rho / 2, -rho / 2]]
    B1 = [[sigma1, 0.0], [0.0, 0.0]]
    B2 = [[0.0, 0.0], [0.0, sigma2]]
    return LinearSDESystem("two_inertia", A, (B1, B2), _meta(rho=rho, sigma1=sigma1, sigma2=sigma2))


def diagonal_noise(lam=-1.0, b=2.0, sigma=(2.0,)) -> LinearSDESystem:
    """Jordan-block drift with ``ell = len(sigma)`` scalar noises ``sigma_j * I``."""
    sigma = tuple(float(s) for s in np.atleast_1d(sigma))
    A = [[lam, b], [0.0, lam]]
    Bs = tuple(s * np.eye(2) for s in sigma)
    return LinearSDESystem("diagonal_noise", A, Bs, _meta(lam=lam, b=b, sigma=sigma))


def offdiagonal_noise(variant=1, lam=-1.0, b=2.0, sigma=1.1) -> LinearSDESystem:
    """Jordan-block drift with a single rotation (variant 1) or shear (variant 2) noise."""
    variant = int(variant)
    if variant == 1:
        B = [[0.0, -sigma], [sigma, 0.0]]
    elif variant == 2:
        B = [[0.0, 0.0], [sigma, 0.0]]
    else:
        raise ModelError(f"offdiagonal_noise variant must be 1 or 2, got {variant}")
    A = [[lam, b], [0.0, lam]]
    return LinearSDESystem(
        "offdiagonal_noise", A, (B,), _meta(variant=variant, lam=lam, b=b, sigma=sigma)
    )


def sanov_pair() -> LinearSDESystem:
    """Non-commuting pair generating a free subgroup of SL(2, Z); a stress model."""
    return LinearSDESystem("sanov_pair", [[1.0, 2.0], [0.0, 1.0]], ([[1.0, 0.0], [2.0, 1.0]],))


def cancer_linearized(**params) -> LinearSDESystem:
    from gbmstab import casebook

    return casebook.cancer_linearization(casebook.CancerParams(**params))


def smoking_linearized(**params) -> LinearSDESystem:
    from gbmstab import casebook

    return casebook.smoking_linearization(casebook.SmokingParams(**params))


def builtin_models() -> dict[str, Callable[..., LinearSDESystem]]:
    """Name -> keyword-parameterized builder for every catalog model."""
    return {
        "random_linear_oscillator": random_linear_oscillator,
        "oscillator": random_linear_oscillator,
        "satellite": satellite,
        "two_inertia": two_inertia,
        "diagonal_noise": diagonal_noise,
        "offdiagonal_noise": offdiagonal_noise,
        "cancer_linearized": cancer_linearized,
        "smoking_linearized": smoking_linearized,
        "sanov_pair": sanov_pair,
    }


def parse_param(text: str):
    """Parse a ``k=v`` CLI parameter; comma-separated values become tuples."""
    if "=" not in text:
        raise ModelError(f"parameter {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    parts = [s for s in raw.split(",") if s.strip()]
    try:
        values = [float(s) for s in parts]
    except ValueError as exc:
        raise ModelError(f"parameter {key}: {exc}") from exc
    if not values or not all(math.isfinite(v) for v in values):
        raise ModelError(f"parameter {key}: needs finite numbers")
    return key.strip(), (values[0] if len(values) == 1 and "," not in raw else tuple(values))


def build_builtin(name: str, params: dict | None = None) -> LinearSDESystem:
    catalog = builtin_models()
    if name not in catalog:
        raise ModelError(f"unknown builtin {name!r}; choose from {sorted(catalog)}")
    try:
        return catalog[name](**(params or {}))
    except TypeError as exc:
        raise ModelError(f"bad parameters for {name}: {exc}") from exc
