"""Tube-based model predictive control for microgrid energy dispatch.

A nominal MPC plans on forecasts with tightened limits, an ancillary MPC
tracks that plan after the real renewable output and load are revealed, and
an offline perfect-dispatch optimum on the realised data gives the yardstick
for the competitive ratio.  All mixed-integer problems are solved by the
bundled branch-and-bound over convex QP relaxations.
"""

from .controller import DayResult, SlotRecord, run_day, run_slot
from .evaluation import (
    CampaignReport,
    DayOutcome,
    ForecastDay,
    UncertaintyConfig,
    competitive_ratio,
    generate_scenario,
    perfect_dispatch_cost,
    run_campaign,
    sweep_horizon,
    sweep_tightening,
    synth_year,
)
from .exceptions import (
    ConfigError,
    ConstraintViolation,
    DataError,
    InfeasibleError,
    RatioDomainError,
    SolverError,
    TubeDispatchError,
)
from .horizon import ControllerConfig, build_ancillary, build_nominal, build_perfect_dispatch
from .io import RunConfig, emit_results, load_config, load_profiles, write_profiles
from .miqp import solve_miqp
from .model import (
    BatteryParams,
    BatteryState,
    DegradationParams,
    DispatchDecision,
    GeneratorParams,
    GridParams,
    Plant,
    ScenarioDay,
    TariffSchedule,
    TimeGrid,
    segment_costs,
    soc_step,
    stage_cost,
    time_aware_bounds,
)
from .problem import MiqpProblem
from .qp import QpSettings, solve_qp

__version__ = "0.1.0"

__all__ = [
    "DayResult",
    "SlotRecord",
    "run_day",
    "run_slot",
    "CampaignReport",
    "DayOutcome",
    "ForecastDay",
    "UncertaintyConfig",
    "competitive_ratio",
    "generate_scenario",
    "perfect_dispatch_cost",
    "run_campaign",
    "sweep_horizon",
    "sweep_tightening",
    "synth_year",
    "ConfigError",
    "ConstraintViolation",
    "DataError",
    "InfeasibleError",
    "RatioDomainError",
    "SolverError",
    "TubeDispatchError",
    "ControllerConfig",
    "build_ancillary",
    "build_nominal",
    "build_perfect_dispatch",
    "RunConfig",
    "emit_results",
    "load_config",
    "load_profiles",
    "write_profiles",
    "solve_miqp",
    "BatteryParams",
    "BatteryState",
    "DegradationParams",
    "DispatchDecision",
    "GeneratorParams",
    "GridParams",
    "Plant",
    "ScenarioDay",
    "TariffSchedule",
    "TimeGrid",
    "segment_costs",
    "soc_step",
    "stage_cost",
    "time_aware_bounds",
    "MiqpProblem",
    "QpSettings",
    "solve_qp",
]
