from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cavity_array.hamiltonian import SiteParams, make_params
from cavity_array.lattice import LatticeSpec

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

_acceptance: list[tuple[str, str, str]] = []


@pytest.fixture
def benchmark():
    """4x4 array, corner pair (1,1)-(4,4) driven, g on every site."""
    spec = LatticeSpec(4, 1.5)
    default = SiteParams(g=1.0, omega_rabi=0.0, delta1=15.0, delta2=15.2)
    driven = SiteParams(g=1.0, omega_rabi=1.0, delta1=15.0, delta2=15.2)
    return spec, make_params(spec, default, {(1, 1): driven, (4, 4): driven})


@pytest.fixture
def benchmark_config_path():
    return CONFIG_DIR / "benchmark_pair_n4.yaml"


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    label = dict(report.user_properties).get("criterion")
    if label is None:
        return
    detail = dict(report.user_properties).get("detail", "")
    if report.when == "call" or (report.when == "setup" and report.failed):
        _acceptance.append((label, "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_acceptance):
        terminalreporter.write_line(f"{outcome}  {label}: {detail}")
