"""Receding-horizon loop: nominal MPC, ancillary MPC, apply, advance.

Every slot re-solves the nominal problem from the measured state over the
long window, hands the first ``h2_len`` slots of that plan to the ancillary
problem as its reference, and applies the ancillary's first slot.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import InfeasibleError, SolverError
from .horizon import (
    ControllerConfig,
    HorizonWindow,
    NominalReference,
    build_ancillary,
    build_nominal,
)
from .miqp import BnbReport, solve_miqp
from .model import (
    BatteryState,
    DispatchDecision,
    Plant,
    ScenarioDay,
    soc_step,
    stage_cost,
)
from .problem import MiqpProblem
from .qp import INFEASIBLE

log = logging.getLogger(__name__)

# Shortfall price multiple applied to the highest buy price when the
# ancillary problem has to relax its balance row.
SLACK_PRICE_MULTIPLE = 10.0

# largest opposing battery power treated as round-off when re-routing segments
NETTING_TOL_KW = 1e-6

FLAG_NOMINAL_RELAXED = "nominal-untightened"
FLAG_NOMINAL_FAILED = "nominal-failed"
FLAG_ANCILLARY_SLACK = "ancillary-slack"


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    nominal: DispatchDecision
    nominal_soc: float
    actual: DispatchDecision
    actual_soc: float
    renewable_error: float
    load_error: float
    cost: float
    penalty: float = 0.0
    shortfall_kw: float = 0.0
    surplus_kw: float = 0.0
    flags: tuple[str, ...] = ()
    reference: NominalReference | None = field(default=None, repr=False)
    plan: NominalReference | None = field(default=None, repr=False)
    nominal_objective: float = math.nan
    ancillary_objective: float = math.nan


@dataclass(frozen=True)
class DayResult:
    records: tuple[SlotRecord, ...]
    initial_soc: float

    @property
    def cost(self) -> float:
        return math.fsum(r.cost + r.penalty for r in self.records)

    @property
    def operating_cost(self) -> float:
        return math.fsum(r.cost for r in self.records)

    @property
    def flagged_slots(self) -> list[int]:
        return [r.slot for r in self.records if r.flags]

    @property
    def failed_slots(self) -> list[int]:
        return [r.slot for r in self.records if FLAG_NOMINAL_FAILED in r.flags or r.shortfall_kw + r.surplus_kw > 1e-6]

    @property
    def actual_soc(self) -> np.ndarray:
        return np.array([r.actual_soc for r in self.records])

    @property
    def nominal_soc(self) -> np.ndarray:
        return np.array([r.nominal_soc for r in self.records])

    @property
    def terminal_soc(self) -> float:
        return self.records[-1].actual_soc if self.records else self.initial_soc


def decision_at(problem: MiqpProblem, x: np.ndarray, slot: int, n_gen: int, num_segments: int) -> DispatchDecision:
    """Read one slot's controls out of a solution vector, clipping round-off."""

    def v(role: str) -> float:
        return max(problem.value(x, slot, role), 0.0)

    return DispatchDecision(
        gen=tuple(v(f"gen{j}") for j in range(n_gen)),
        buy=v("buy"),
        sell=v("sell"),
        charge=tuple(v(f"charge{i}") for i in range(num_segments)),
        discharge=tuple(v(f"discharge{i}") for i in range(num_segments)),
        discharging=int(round(problem.value(x, slot, "u"))),
        buying=int(round(problem.value(x, slot, "v"))),
    )


def trajectory(problem: MiqpProblem, x: np.ndarray, slots, n_gen: int) -> NominalReference:
    slots = list(slots)
    return NominalReference(
        soc=np.array([problem.value(x, t, "soc") for t in slots]),
        buy=np.array([problem.value(x, t, "buy") for t in slots]),
        sell=np.array([problem.value(x, t, "sell") for t in slots]),
        gen=np.array([[problem.value(x, t, f"gen{j}") for j in range(n_gen)] for t in slots]).reshape(len(slots), n_gen),
    )


def _hold_reference(state: BatteryState, prev_gen, plant: Plant, length: int) -> NominalReference:
    """Stand-in plan when no nominal solution exists: keep SoC and generation."""
    gen = np.array([min(max(p, g.p_min), g.p_max) for p, g in zip(prev_gen, plant.generators)])
    return NominalReference(
        soc=np.full(length, state.soc),
        buy=np.zeros(length),
        sell=np.zeros(length),
        gen=np.tile(gen, (length, 1)),
    )


def _solve(problem: MiqpProblem, gap_tol: float) -> BnbReport | None:
    report = solve_miqp(problem, gap_tol=gap_tol)
    if report.status == INFEASIBLE:
        return None
    if report.incumbent is None:
        raise SolverError("no integer solution within the node limit")
    return report


def cheapest_split(decision: DispatchDecision, state: BatteryState, plant: Plant) -> DispatchDecision:
    """Same total battery power, routed through the cheapest segments first.

    The tracking objective is blind to which segment moves, so the solver's
    split is arbitrary; re-routing changes neither SoC nor any tracked term.
    """
    bat = plant.battery
    tau = plant.time.slot_hours
    gain, drain = bat.charge_gain(tau), bat.discharge_drain(tau)
    share = bat.segment_share

    def fill(total: float, room: list[float], limit: float) -> tuple[float, ...]:
        out = []
        for r in room:
            take = min(total, max(r, 0.0), limit)
            out.append(take)
            total -= take
        if total > 1e-9:
            return ()
        out[-1] += max(total, 0.0)
        return tuple(out)

    charge, discharge = decision.charge_total, decision.discharge_total
    if min(charge, discharge) > NETTING_TOL_KW:
        return decision
    # solver round-off on the idle side is netted out; the balance is unchanged
    if discharge > charge:
        split = fill(discharge - charge, [s / drain for s in state.segments], bat.discharge_max_kw)
        if split:
            return replace(decision, discharge=split, charge=(0.0,) * bat.num_segments)
    elif charge > 0.0:
        split = fill(charge - discharge, [(share - s) / gain for s in state.segments], bat.charge_max_kw)
        if split:
            return replace(decision, charge=split, discharge=(0.0,) * bat.num_segments)
    return decision


def _nominal_if_exact(anc: MiqpProblem, nominal: MiqpProblem, report: BnbReport) -> BnbReport | None:
    """The nominal plan itself when it is feasible for ``anc`` at zero tracking cost.

    The tracking objective is a sum of squares, so such a point is optimal.
    """
    x = np.array([nominal.value(report.x, t, role) for t, role in anc.names])
    if anc.max_violation(x) > 1e-7 or anc.objective(x) > 1e-9:
        return None
    return BnbReport(replace(report.incumbent, x=x, objective=anc.objective(x)), 0, 0.0, 0.0, "optimal")


def run_slot(
    abs_slot: int,
    state: BatteryState,
    prev_gen,
    day: ScenarioDay,
    plant: Plant,
    cfg: ControllerConfig,
    gap_tol: float = 1e-6,
) -> tuple[SlotRecord, BatteryState]:
    """One control step at ``abs_slot``; returns the record and the next state.

    Only ``day.actual_*[abs_slot]`` is read from the realised series.
    """
    T = plant.time.slots_per_day
    if not 0 <= abs_slot < T:
        raise ValueError(f"slot {abs_slot} outside 0..{T - 1}")
    G, N = plant.n_gen, plant.battery.num_segments
    flags: list[str] = []

    # nominal stage
    window = HorizonWindow.forecast(day, abs_slot, cfg.h1_len, state, prev_gen)
    nominal_report = None
    nominal_problem = None
    try:
        nominal_problem = build_nominal(window, plant, cfg)
        nominal_report = _solve(nominal_problem, gap_tol)
    except InfeasibleError:
        nominal_report = None
    if nominal_report is None and (cfg.rho1 > 0 or cfg.rho2 > 0):
        flags.append(FLAG_NOMINAL_RELAXED)
        relaxed = replace(cfg, rho1=0.0, rho2=0.0)
        try:
            nominal_problem = build_nominal(window, plant, relaxed)
            nominal_report = _solve(nominal_problem, gap_tol)
        except InfeasibleError:
            nominal_report = None

    h2 = min(cfg.h2_len, window.length)
    if nominal_report is not None:
        x_nom = nominal_report.x
        reference = trajectory(nominal_problem, x_nom, range(abs_slot, abs_slot + h2), G)
        nominal_decision = decision_at(nominal_problem, x_nom, abs_slot, G, N)
        nominal_soc = nominal_problem.value(x_nom, abs_slot, "soc")
        nominal_objective = nominal_report.objective
    else:
        flags.append(FLAG_NOMINAL_FAILED)
        log.warning("slot %d: nominal problem infeasible, holding the current operating point", abs_slot)
        reference = _hold_reference(state, prev_gen, plant, h2)
        nominal_decision = DispatchDecision.idle(G, N, gen=reference.gen[0])
        nominal_soc = math.nan
        nominal_objective = math.nan

    # ancillary stage
    dr = float(day.actual_renewable[abs_slot] - day.forecast_renewable[abs_slot])
    dl = float(day.actual_load[abs_slot] - day.forecast_load[abs_slot])
    awin = HorizonWindow.forecast(day, abs_slot, h2, state, prev_gen)
    anc_problem = build_ancillary(awin, reference, (dr, dl), plant, cfg)
    anc_report = None
    if nominal_report is not None:
        anc_report = _nominal_if_exact(anc_problem, nominal_problem, nominal_report)
    if anc_report is None:
        anc_report = _solve(anc_problem, gap_tol)
    if anc_report is None:
        flags.append(FLAG_ANCILLARY_SLACK)
        price = SLACK_PRICE_MULTIPLE * max(plant.grid.tariff.buy)
        anc_problem = build_ancillary(awin, reference, (dr, dl), plant, cfg, shortfall_penalty=price)
        anc_report = _solve(anc_problem, gap_tol)
        if anc_report is None:
            raise InfeasibleError("ancillary problem infeasible even with balance slack",
                                  slot=abs_slot, stage="ancillary")
    x_anc = anc_report.x
    actual = cheapest_split(decision_at(anc_problem, x_anc, abs_slot, G, N), state, plant)
    shortfall = surplus = penalty = 0.0
    if anc_problem.has(abs_slot, "shortfall"):
        shortfall = max(anc_problem.value(x_anc, abs_slot, "shortfall"), 0.0)
        surplus = max(anc_problem.value(x_anc, abs_slot, "surplus"), 0.0)
        penalty = SLACK_PRICE_MULTIPLE * max(plant.grid.tariff.buy) * (shortfall + surplus) * plant.time.slot_hours

    nxt = soc_step(state, actual, plant.battery, plant.time)
    cost = stage_cost(actual, plant.generators, plant.grid, plant.battery, abs_slot, cfg.epsilon, plant.time.slot_hours)
    plan = trajectory(anc_problem, x_anc, awin.slots, G)
    # the reported objective excludes any slack price so it matches the tracking terms
    anc_objective = anc_report.objective - (penalty if anc_problem.has(abs_slot, "shortfall") else 0.0)
    record = SlotRecord(
        slot=abs_slot,
        nominal=nominal_decision,
        nominal_soc=nominal_soc,
        actual=actual,
        actual_soc=nxt.soc,
        renewable_error=dr,
        load_error=dl,
        cost=cost,
        penalty=penalty,
        shortfall_kw=shortfall,
        surplus_kw=surplus,
        flags=tuple(flags),
        reference=reference,
        plan=plan,
        nominal_objective=nominal_objective,
        ancillary_objective=anc_objective,
    )
    return record, nxt


def run_day(
    day: ScenarioDay,
    initial_soc: float,
    plant: Plant,
    cfg: ControllerConfig,
    gap_tol: float = 1e-6,
    strict: bool = False,
) -> DayResult:
    """Closed-loop simulation of one day.

    With ``strict`` set, any slot that needed the nominal fallback or an
    unpriced balance slack raises ``InfeasibleError`` listing those slots
    after the day has been simulated.
    """
    bat = plant.battery
    if not bat.soc_min - 1e-12 <= initial_soc <= bat.soc_max + 1e-12:
        raise ValueError(f"initial SoC {initial_soc} outside [{bat.soc_min}, {bat.soc_max}]")
    if day.slots != plant.time.slots_per_day:
        raise ValueError(f"scenario has {day.slots} slots, expected {plant.time.slots_per_day}")
    state = BatteryState.from_soc(initial_soc, bat.num_segments)
    prev_gen = tuple(g.p_min for g in plant.generators)
    records = []
    for t in range(plant.time.slots_per_day):
        try:
            record, state = run_slot(t, state, prev_gen, day, plant, cfg, gap_tol)
        except InfeasibleError as err:
            if err.slot is None:
                err.slot = t
            raise
        records.append(record)
        prev_gen = record.actual.gen
    result = DayResult(tuple(records), initial_soc)
    if strict and result.failed_slots:
        raise InfeasibleError(f"slots {result.failed_slots} needed recovery", slot=result.failed_slots[0])
    return result
