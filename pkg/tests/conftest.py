import json
from pathlib import Path

import pytest

from lattice_cavity import units

ORACLES = json.loads((Path(__file__).parent / "oracles" / "values.json").read_text())

# acceptance verdicts collected by test_acceptance.py, printed at the end of the session
VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def canonical_units():
    geo = units.lattice_from_period(390e-9, 50e-6)
    return units.recoil_units(geo, units.RB87_MASS)


@pytest.fixture(scope="session")
def w_z(canonical_units):
    return 50e-6 * canonical_units.k_L


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
