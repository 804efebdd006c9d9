"""Battery and microgrid building blocks.

Parameter containers, the segmental degradation cost, state-of-charge
dynamics, time-aware SoC limits and the per-slot operating cost.  Everything
here is an immutable value object or a pure function.

SoC is stored as a fraction of total capacity.  Each of the ``N`` virtual
segments holds a share in ``[0, 1/N]`` and the aggregate SoC is their sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, ConstraintViolation, InfeasibleError

SOC_TOL = 1e-9


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class DegradationParams:
    """Cycle-life loss curve ``alpha * depth**(1 + beta)`` and its segmentation."""

    alpha: float = 5.24e-4
    beta: float = 1.03
    replacement_cost: float = 80000.0
    num_segments: int = 10

    def __post_init__(self):
        _require(self.alpha >= 0, "degradation.alpha must be >= 0")
        _require(self.beta >= 0, "degradation.beta must be >= 0")
        _require(self.replacement_cost > 0, "degradation.replacement_cost must be > 0")
        _require(
            int(self.num_segments) == self.num_segments and self.num_segments >= 1,
            "degradation.num_segments must be a positive integer",
        )


@dataclass(frozen=True)
class BatteryParams:
    capacity_kwh: float = 400.0
    charge_eff: float = 0.95
    discharge_eff: float = 0.95
    soc_min: float = 0.20
    soc_max: float = 0.90
    soc_terminal_lo: float = 0.50
    soc_terminal_hi: float = 0.60
    charge_max_kw: float = 80.0
    discharge_max_kw: float = 80.0
    degradation: DegradationParams = field(default_factory=DegradationParams)

    def __post_init__(self):
        _require(self.capacity_kwh > 0, "battery.capacity_kwh must be > 0")
        _require(0 < self.charge_eff <= 1, "battery.charge_eff must lie in (0, 1]")
        _require(0 < self.discharge_eff <= 1, "battery.discharge_eff must lie in (0, 1]")
        _require(
            0 <= self.soc_min < self.soc_max <= 1,
            "battery: 0 <= soc_min < soc_max <= 1 violated",
        )
        _require(
            self.soc_min <= self.soc_terminal_lo <= self.soc_terminal_hi <= self.soc_max,
            "battery: soc_min <= soc_terminal_lo <= soc_terminal_hi <= soc_max violated",
        )
        _require(self.charge_max_kw > 0, "battery.charge_max_kw must be > 0")
        _require(self.discharge_max_kw > 0, "battery.discharge_max_kw must be > 0")

    @property
    def num_segments(self) -> int:
        return int(self.degradation.num_segments)

    @property
    def segment_share(self) -> float:
        return 1.0 / self.num_segments

    def charge_gain(self, slot_hours: float) -> float:
        """SoC increase per kW of charging held for one slot."""
        return self.charge_eff * slot_hours / self.capacity_kwh

    def discharge_drain(self, slot_hours: float) -> float:
        """SoC decrease per kW of discharging held for one slot."""
        return slot_hours / (self.discharge_eff * self.capacity_kwh)


@dataclass(frozen=True)
class GeneratorParams:
    """Dispatchable unit with quadratic fuel cost ``a2*g**2 + a1*g + a0`` per hour."""

    a2: float
    a1: float
    a0: float
    p_min: float
    p_max: float
    ramp_up: float
    ramp_down: float

    def __post_init__(self):
        _require(self.a2 >= 0, "generator.a2 must be >= 0 (convex cost)")
        _require(0 <= self.p_min <= self.p_max, "generator: 0 <= p_min <= p_max violated")
        _require(self.ramp_up >= 0 and self.ramp_down >= 0, "generator ramp rates must be >= 0")

    def hourly_cost(self, power_kw):
        return self.a2 * np.square(power_kw) + self.a1 * np.asarray(power_kw) + self.a0


def default_generators() -> tuple[GeneratorParams, ...]:
    return (
        GeneratorParams(a2=0.0013, a1=0.062, a0=0.0, p_min=6.0, p_max=52.0, ramp_up=240.0, ramp_down=240.0),
        GeneratorParams(a2=0.0010, a1=0.057, a0=0.0, p_min=16.4, p_max=92.0, ramp_up=280.0, ramp_down=280.0),
    )


@dataclass(frozen=True)
class TimeGrid:
    slot_hours: float = 0.25
    slots_per_day: int = 96

    def __post_init__(self):
        _require(self.slot_hours > 0, "time.slot_hours must be > 0")
        _require(
            int(self.slots_per_day) == self.slots_per_day and self.slots_per_day >= 1,
            "time.slots_per_day must be a positive integer",
        )
        _require(
            math.isclose(self.slots_per_day * self.slot_hours, 24.0, rel_tol=0, abs_tol=1e-9),
            "time: slots_per_day * slot_hours must equal 24",
        )

    def clock(self, slot: int) -> str:
        minutes = int(round(slot * self.slot_hours * 60))
        return f"{minutes // 60:02d}:{minutes % 60:02d}"


@dataclass(frozen=True)
class TariffSchedule:
    buy: tuple[float, ...]
    sell: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "buy", tuple(float(p) for p in self.buy))
        object.__setattr__(self, "sell", tuple(float(p) for p in self.sell))
        _require(len(self.buy) == len(self.sell), "tariff: buy and sell lengths differ")
        for t, (pb, ps) in enumerate(zip(self.buy, self.sell)):
            _require(pb > ps >= 0, f"tariff: slot {t} needs buy > sell >= 0")

    @classmethod
    def peak_offpeak(
        cls,
        time: TimeGrid,
        peak_price: float = 0.116,
        offpeak_price: float = 0.072,
        peak_start_hour: float = 7.0,
        peak_end_hour: float = 21.0,
        sell_ratio: float = 0.5,
        peak_sell: float | None = None,
        offpeak_sell: float | None = None,
    ) -> "TariffSchedule":
        """Two-level time-of-use tariff.  Sell prices default to ``sell_ratio`` x buy."""
        peak_sell = peak_price * sell_ratio if peak_sell is None else peak_sell
        offpeak_sell = offpeak_price * sell_ratio if offpeak_sell is None else offpeak_sell
        buy, sell = [], []
        for t in range(time.slots_per_day):
            hour = t * time.slot_hours
            peak = peak_start_hour <= hour < peak_end_hour
            buy.append(peak_price if peak else offpeak_price)
            sell.append(peak_sell if peak else offpeak_sell)
        return cls(tuple(buy), tuple(sell))


@dataclass(frozen=True)
class GridParams:
    buy_max_kw: float = 250.0
    sell_max_kw: float = 250.0
    loss_factor: float = 0.01
    tariff: TariffSchedule | None = None

    def __post_init__(self):
        _require(self.buy_max_kw >= 0, "grid.buy_max_kw must be >= 0")
        _require(self.sell_max_kw >= 0, "grid.sell_max_kw must be >= 0")
        _require(0 <= self.loss_factor < 1, "grid.loss_factor must lie in [0, 1)")
        if self.tariff is None:
            object.__setattr__(self, "tariff", TariffSchedule.peak_offpeak(TimeGrid()))


@dataclass(frozen=True)
class Plant:
    """Everything physical about the microgrid."""

    battery: BatteryParams = field(default_factory=BatteryParams)
    generators: tuple[GeneratorParams, ...] = field(default_factory=default_generators)
    grid: GridParams = field(default_factory=GridParams)
    time: TimeGrid = field(default_factory=TimeGrid)

    def __post_init__(self):
        object.__setattr__(self, "generators", tuple(self.generators))
        _require(
            len(self.grid.tariff.buy) == self.time.slots_per_day,
            "tariff length must equal time.slots_per_day",
        )

    @property
    def n_gen(self) -> int:
        return len(self.generators)


@dataclass(frozen=True)
class ScenarioDay:
    """Forecast and realised renewable output and load for one day (kW per slot)."""

    forecast_renewable: np.ndarray
    actual_renewable: np.ndarray
    forecast_load: np.ndarray
    actual_load: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("forecast_renewable", "actual_renewable", "forecast_load", "actual_load"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            if arr.ndim != 1:
                raise ConfigError(f"{name} must be one-dimensional")
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigError(f"{name} must be finite and non-negative")
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if len({a.size for a in arrays.values()}) != 1:
            raise ConfigError("all ScenarioDay series must have the same length")

    @property
    def slots(self) -> int:
        return self.forecast_load.size

    @property
    def renewable_error(self) -> np.ndarray:
        return self.actual_renewable - self.forecast_renewable

    @property
    def load_error(self) -> np.ndarray:
        return self.actual_load - self.forecast_load

    @classmethod
    def exact(cls, renewable, load) -> "ScenarioDay":
        """A day whose realisation equals its forecast."""
        return cls(renewable, renewable, load, load)


@dataclass(frozen=True)
class BatteryState:
    """Per-segment SoC shares, each a fraction of total capacity."""

    segments: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(float(s) for s in self.segments))
        cap = 1.0 / len(self.segments)
        for i, s in enumerate(self.segments):
            if s < -SOC_TOL or s > cap + SOC_TOL:
                raise ConstraintViolation(f"segment {i + 1} share {s!r} outside [0, {cap}]")

    @property
    def soc(self) -> float:
        return math.fsum(self.segments)

    @classmethod
    def from_soc(cls, soc: float, num_segments: int) -> "BatteryState":
        """Split an aggregate SoC greedily, filling segment 1 first."""
        if not -SOC_TOL <= soc <= 1 + SOC_TOL:
            raise ConstraintViolation(f"SoC {soc!r} outside [0, 1]")
        cap = 1.0 / num_segments
        shares, remaining = [], max(float(soc), 0.0)
        for _ in range(num_segments):
            share = min(cap, remaining)
            shares.append(share)
            remaining -= share
        return cls(tuple(shares))


@dataclass(frozen=True)
class DispatchDecision:
    """Controls applied in one slot.  All powers in kW and non-negative."""

    gen: tuple[float, ...]
    buy: float
    sell: float
    charge: tuple[float, ...]
    discharge: tuple[float, ...]
    discharging: int = 0
    buying: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gen", tuple(float(g) for g in self.gen))
        object.__setattr__(self, "charge", tuple(float(c) for c in self.charge))
        object.__setattr__(self, "discharge", tuple(float(d) for d in self.discharge))
        if len(self.charge) != len(self.discharge):
            raise ConfigError("charge and discharge must have one entry per segment")

    @property
    def charge_total(self) -> float:
        return math.fsum(self.charge)

    @property
    def discharge_total(self) -> float:
        return math.fsum(self.discharge)

    @classmethod
    def idle(cls, n_gen: int, num_segments: int, gen=None) -> "DispatchDecision":
        zeros = (0.0,) * num_segments
        return cls(tuple(gen) if gen is not None else (0.0,) * n_gen, 0.0, 0.0, zeros, zeros)

    def check(self, tol: float = 1e-6) -> None:
        """Raise ConstraintViolation unless the sign and complementarity rules hold."""
        values = (*self.gen, self.buy, self.sell, *self.charge, *self.discharge)
        if min(values) < -tol:
            raise ConstraintViolation("negative power in dispatch decision")
        if self.charge_total > tol and self.discharge_total > tol:
            raise ConstraintViolation("simultaneous charging and discharging")
        if self.buy > tol and self.sell > tol:
            raise ConstraintViolation("simultaneous buying and selling")


def cycle_life_loss(depth: float, params: DegradationParams) -> float:
    """Fractional cycle-life loss caused by a discharge of the given depth."""
    if not 0.0 <= depth <= 1.0:
        raise ValueError(f"cycle depth {depth!r} outside [0, 1]")
    return params.alpha * depth ** (1.0 + params.beta)


def segment_cost(i: int, battery: BatteryParams) -> float:
    """Marginal degradation cost ($/kWh discharged) of segment ``i`` (1-based)."""
    deg = battery.degradation
    n = battery.num_segments
    if not 1 <= i <= n:
        raise IndexError(f"segment index {i} outside 1..{n}")
    slope = (cycle_life_loss(i / n, deg) - cycle_life_loss((i - 1) / n, deg)) * n
    return deg.replacement_cost / (battery.discharge_eff * battery.capacity_kwh) * slope


def segment_costs(battery: BatteryParams) -> np.ndarray:
    return np.array([segment_cost(i, battery) for i in range(1, battery.num_segments + 1)])


def soc_step(
    state: BatteryState,
    decision: DispatchDecision,
    battery: BatteryParams,
    time: TimeGrid,
) -> BatteryState:
    """Advance every segment by one slot of charging/discharging."""
    n = battery.num_segments
    if len(state.segments) != n or len(decision.charge) != n:
        raise ConfigError("segment count mismatch between state, decision and battery")
    gain = battery.charge_gain(time.slot_hours)
    drain = battery.discharge_drain(time.slot_hours)
    cap = 1.0 / n
    updated = []
    for i, (s, c, d) in enumerate(zip(state.segments, decision.charge, decision.discharge)):
        new = s + gain * c - drain * d
        if new < -SOC_TOL or new > cap + SOC_TOL:
            raise ConstraintViolation(f"segment {i + 1} share {new!r} outside [0, {cap}]")
        updated.append(min(max(new, 0.0), cap))
    return BatteryState(tuple(updated))


def time_aware_bounds(battery: BatteryParams, time: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-slot SoC limits that keep the terminal band reachable.

    Entry ``t`` bounds the SoC at the end of slot ``t``; the last entry is
    the terminal band.  Limits are propagated backwards using the largest
    SoC change achievable in one slot.
    """
    T = time.slots_per_day
    up = battery.charge_max_kw * battery.charge_gain(time.slot_hours)
    down = battery.discharge_max_kw * battery.discharge_drain(time.slot_hours)
    lo = np.empty(T)
    hi = np.empty(T)
    lo[-1] = battery.soc_terminal_lo
    hi[-1] = battery.soc_terminal_hi
    for t in range(T - 2, -1, -1):
        lo[t] = max(battery.soc_min, lo[t + 1] - up)
        hi[t] = min(battery.soc_max, hi[t + 1] + down)
    bad = np.flatnonzero(lo > hi + SOC_TOL)
    if bad.size:
        raise InfeasibleError(f"time-aware SoC bounds cross at slot {int(bad[0])}")
    return lo, hi


def stage_cost(
    decision: DispatchDecision,
    generators: Sequence[GeneratorParams],
    grid: GridParams,
    battery: BatteryParams,
    slot: int,
    epsilon: float,
    slot_hours: float = 0.25,
) -> float:
    """Operating cost of one slot in currency; powers are held for ``slot_hours``."""
    if len(decision.gen) != len(generators):
        raise ConfigError("one generator output is required per generator")
    fuel = math.fsum(float(g.hourly_cost(p)) for g, p in zip(generators, decision.gen))
    trade = grid.tariff.buy[slot] * decision.buy - grid.tariff.sell[slot] * decision.sell
    costs = segment_costs(battery)
    wear = float(costs @ np.asarray(decision.discharge) + epsilon * (costs @ np.asarray(decision.charge)))
    return (fuel + trade + wear) * slot_hours
