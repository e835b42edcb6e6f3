"""Extended-term hybrid QSS/dynamic power-system simulation on
holomorphic-embedding series."""

from .bounds import (
    RateBound,
    SteadyStateVerdict,
    pa_rate_bound,
    poly_bounds,
    ps_rate_bound,
    steady_state_check,
)
from .caseio import builtin_case, load_case, parse_case, write_trajectory
from .engine import HeProblem, SegmentSolution, solve_coefficients
from .grid import (
    BranchSpec,
    BusSpec,
    GenSpec,
    GridCase,
    LoadSpec,
    MotorSpec,
    build_admittance,
    machine_injection,
)
from .model import (
    SystemState,
    dynamic_residual,
    init_equilibrium,
    qss_residual,
    solve_powerflow,
)
from .reference import TwoBusCase, integrate_reference, two_bus_current_sq, \
    two_bus_event_time
from .scheduler import (
    Condition,
    RunConfig,
    SimEvent,
    Trajectory,
    locate_conditional_event,
    mode_switch,
    run_simulation,
)
from .series import (
    PadeApproximant,
    TruncatedSeries,
    estimate_effective_range,
    evaluate,
    pade_from_series,
    series_mul,
    series_reciprocal,
)

__version__ = "0.1.0"
