"""Stability certificates for linear SDEs dX = AX dt + sum_j B_j X dW_j.

A certificate is a quartic-form inequality H(x) >= c||x||^4 for the Lyapunov
candidate V(x) = (x'Qx)^(p/2); it implies exponential p-stability.  For p = 2
the search is an LMI, for other p a BMI attacked heuristically.
"""

__version__ = "0.1.0"

from gbmstab.model import LinearSDESystem, ModelError, build_builtin, load_system, save_system
from gbmstab.quartic import CandidateLyapunov, h_coefficients, h_eval
from gbmstab.sdp import SolveOutcome, Status
from gbmstab.verify import StabilityCertificate, VerificationReport, verify_certificate

__all__ = [
    "CandidateLyapunov",
    "LinearSDESystem",
    "ModelError",
    "SolveOutcome",
    "StabilityCertificate",
    "Status",
    "VerificationReport",
    "__version__",
    "build_builtin",
    "h_coefficients",
    "h_eval",
    "load_system",
    "save_system",
    "verify_certificate",
]
