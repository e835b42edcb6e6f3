"""Shared fixtures; the expensive reference runs are session-scoped."""

import pytest

from hesim.caseio import builtin_case
from hesim.grid import (
    SOURCE,
    BranchSpec,
    BusSpec,
    GenSpec,
    GridCase,
    LoadSpec,
)
from hesim.scheduler import RunConfig, run_simulation


def make_smib(p_set=0.9, d=3.0, ka=30.0):
    """Single machine against an ideal source through two lines."""
    return GridCase(
        name="smib", f_nominal=60.0,
        buses=[BusSpec(1), BusSpec(2), BusSpec(3)],
        branches=[BranchSpec("L12", 1, 2, 0.0, 0.1, 0.02),
                  BranchSpec("L23", 2, 3, 0.01, 0.08)],
        gens=[GenSpec("G1", 1, p_set=p_set, v_set=1.02, d=d, avr_ka=ka,
                      avr_ta=0.3),
              GenSpec("S3", 3, kind=SOURCE, v_set=1.0)],
        loads=[LoadSpec("LD2", 2, 0.5, 0.2, 0.3, 0.2, 0.5)],
    )


def make_twobus_case():
    return GridCase(
        name="twobus", f_nominal=60.0,
        buses=[BusSpec(1), BusSpec(2)],
        branches=[BranchSpec("L12", 1, 2, 0.01, 0.05)],
        gens=[GenSpec("S1", 1, kind=SOURCE, v_set=1.01)],
        loads=[LoadSpec("LD2", 2, 0.1, 0.3, 0.0, 0.0, 1.0, scale=0.0)],
    )


@pytest.fixture(scope="session")
def fourbus():
    case, script = builtin_case("fourbus")
    return case, script


@pytest.fixture(scope="session")
def fourbus_hybrid(fourbus):
    case, script = fourbus
    return run_simulation(case, script, RunConfig(mode="hybrid", t_end=500.0))


@pytest.fixture(scope="session")
def fourbus_dynamic(fourbus):
    case, script = fourbus
    return run_simulation(case, script, RunConfig(mode="dynamic", t_end=500.0))
