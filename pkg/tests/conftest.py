import json
from pathlib import Path

import pytest

from gbmstab.model import build_builtin
from gbmstab.verify import StabilityCertificate

DATA = Path(__file__).parent / "data"

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def _params(raw: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}


def printed_certificates():
    """(name, system, certificate) for every Q matrix printed with the examples."""
    rows = json.loads((DATA / "printed_certificates.json").read_text())
    return [
        (r["name"], build_builtin(r["builtin"], _params(r["params"])),
         StabilityCertificate.from_dict(r["certificate"]))
        for r in rows
    ]


@pytest.fixture(scope="session")
def printed():
    return {name: (system, cert) for name, system, cert in printed_certificates()}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
