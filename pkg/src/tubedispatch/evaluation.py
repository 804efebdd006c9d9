"""Scenario generation, the offline baseline, and Monte Carlo evaluation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .controller import DayResult, run_day
from .exceptions import ConfigError, RatioDomainError, TubeDispatchError
from .horizon import ControllerConfig, build_perfect_dispatch
from .miqp import solve_or_raise
from .model import BatteryState, Plant, ScenarioDay

log = logging.getLogger(__name__)

ERROR_MODELS = ("truncnorm", "uniform")
# days whose offline cost is this close to zero are left out of ratio statistics
MIN_ORACLE_COST = 1.0
RATIO_FLOOR = 1.0 - 1e-9


@dataclass(frozen=True)
class UncertaintyConfig:
    """Forecast-error model.

    ``truncnorm``: each slot's relative error follows an AR(1) process with
    lag-one correlation ``autocorrelation`` whose conditional draws are normal
    and rejected outside ``[-level, level]``; the marginal spread is
    ``level / 2``.  ``uniform``: independent draws from ``[-level, level]``.
    """

    renewable_level: float = 0.20
    load_level: float = 0.10
    seed: int = 0
    model: str = "truncnorm"
    autocorrelation: float = 0.7

    def __post_init__(self):
        if self.renewable_level < 0 or self.load_level < 0:
            raise ConfigError("uncertainty levels must be >= 0")
        if self.model not in ERROR_MODELS:
            raise ConfigError(f"uncertainty.model must be one of {ERROR_MODELS}, got {self.model!r}")
        if not 0 <= self.autocorrelation < 1:
            raise ConfigError("uncertainty.autocorrelation must lie in [0, 1)")


@dataclass(frozen=True)
class ForecastDay:
    renewable: np.ndarray
    load: np.ndarray

    def __post_init__(self):
        for name in ("renewable", "load"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def relative_errors(level: float, slots: int, rng: np.random.Generator, model: str = "truncnorm",
                    autocorrelation: float = 0.7) -> np.ndarray:
    """One day of relative forecast errors, each within ``[-level, level]``."""
    if level == 0:
        return np.zeros(slots)
    if model == "uniform":
        return rng.uniform(-level, level, slots)
    sigma = level / 2.0
    innov = sigma * math.sqrt(1.0 - autocorrelation**2)
    out = np.empty(slots)
    prev = 0.0
    for t in range(slots):
        centre = autocorrelation * prev if t else 0.0
        spread = innov if t else sigma
        while True:
            e = centre + spread * rng.standard_normal()
            if -level <= e <= level:
                break
        out[t] = prev = e
    return out


def generate_scenario(forecast: ForecastDay, ucfg: UncertaintyConfig, day_index: int = 0) -> ScenarioDay:
    """Realised series ``forecast * (1 + e)``; ``day_index`` selects an independent stream."""
    fr = np.asarray(forecast.renewable, dtype=float)
    fl = np.asarray(forecast.load, dtype=float)
    if np.any(fr < 0) or np.any(fl < 0):
        raise ConfigError("forecasts must be non-negative")
    root = np.random.SeedSequence([ucfg.seed, day_index])
    r_rng, l_rng = (np.random.default_rng(s) for s in root.spawn(2))
    er = relative_errors(ucfg.renewable_level, fr.size, r_rng, ucfg.model, ucfg.autocorrelation)
    el = relative_errors(ucfg.load_level, fl.size, l_rng, ucfg.model, ucfg.autocorrelation)
    actual_r = np.maximum(fr * (1.0 + er), 0.0)
    actual_r[fr == 0] = 0.0
    actual_l = np.maximum(fl * (1.0 + el), 0.0)
    return ScenarioDay(fr, actual_r, fl, actual_l)


def _smooth_noise(rng: np.random.Generator, hours: np.ndarray, amplitude: float, terms: int = 3) -> np.ndarray:
    out = np.zeros_like(hours)
    for k in range(1, terms + 1):
        out += rng.uniform(-1, 1) * np.sin(2 * np.pi * k * hours / 24 + rng.uniform(0, 2 * np.pi)) / k
    return amplitude * out


def synth_year(seed: int = 0, days: int = 365, slots: int = 96) -> list[ForecastDay]:
    """Seasonal solar and weekly load profiles scaled to the default plant.

    Clear-sky solar peaks at 350 kW at midsummer and 100 kW at midwinter with
    16 h and 8 h of daylight; a persistent daily clearness index and smooth
    intraday noise dim it.  Load has morning and evening peaks (evening near
    300 kW), is 15 % lower at weekends and 8 % higher in midwinter.
    """
    rng = np.random.default_rng(seed)
    hours = (np.arange(slots) + 0.5) * 24.0 / slots
    out = []
    clear = 0.85
    for d in range(days):
        season = math.cos(2 * math.pi * (d - 172) / 365)  # +1 midsummer, -1 midwinter
        peak = 225.0 + 125.0 * season
        daylight = 12.0 + 4.0 * season
        rise = 12.5 - daylight / 2
        phase = np.clip((hours - rise) / daylight, 0.0, 1.0)
        shape = np.sin(np.pi * phase) ** 1.5
        clear = min(1.0, max(0.35, 0.6 * clear + 0.4 * rng.uniform(0.45, 1.0)))
        cloud = np.clip(1.0 + _smooth_noise(rng, hours, 0.08), 0.6, 1.2)
        solar = np.minimum(peak * clear * shape * cloud, peak)
        solar[phase <= 0] = 0.0
        solar[phase >= 1] = 0.0

        winter = 1.0 + 0.08 * math.cos(2 * math.pi * (d - 15) / 365)
        weekend = 0.85 if d % 7 in (5, 6) else 1.0
        base = 125.0 + 65.0 * np.exp(-(((hours - 8.5) / 1.8) ** 2)) + 140.0 * np.exp(-(((hours - 19.0) / 2.4) ** 2))
        load = base * winter * weekend * (1.0 + _smooth_noise(rng, hours, 0.03))
        out.append(ForecastDay(np.round(solar, 6), np.round(np.maximum(load, 0.0), 6)))
    return out


def competitive_ratio(alg_cost: float, opt_cost: float) -> float:
    if not opt_cost > 0:
        raise RatioDomainError(f"competitive ratio undefined for offline cost {opt_cost!r}")
    return alg_cost / opt_cost


def perfect_dispatch_cost(day: ScenarioDay, plant: Plant, initial_soc: float, epsilon: float,
                          gap_tol: float = 1e-6) -> float:
    state = BatteryState.from_soc(initial_soc, plant.battery.num_segments)
    problem = build_perfect_dispatch(day, plant, state, epsilon=epsilon)
    return solve_or_raise(problem, "perfect-dispatch", gap_tol=gap_tol).objective


@dataclass(frozen=True)
class Distribution:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    outliers: tuple[int, ...]  # positions in the input sequence

    @classmethod
    def of(cls, values: Sequence[float]) -> "Distribution":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(0, math.nan, math.nan, math.nan, math.nan, math.nan, ())
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        out = np.flatnonzero((v < q1 - 1.5 * iqr) | (v > q3 + 1.5 * iqr))
        return cls(int(v.size), float(v.min()), float(q1), float(med), float(q3), float(v.max()),
                   tuple(int(i) for i in out))


@dataclass(frozen=True)
class DayOutcome:
    index: int
    alg_cost: float
    opt_cost: float
    ratio: float
    status: str  # ok | excluded | failed
    flagged_slots: int = 0
    message: str = ""


@dataclass(frozen=True)
class CampaignReport:
    days: tuple[DayOutcome, ...]
    stats: Distribution = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "stats", Distribution.of(self.ratios))

    @property
    def ratios(self) -> np.ndarray:
        return np.array([d.ratio for d in self.days if d.status == "ok"])

    @property
    def ratio_days(self) -> list[int]:
        return [d.index for d in self.days if d.status == "ok"]

    @property
    def failed(self) -> int:
        return sum(d.status == "failed" for d in self.days)

    @property
    def excluded(self) -> int:
        return sum(d.status == "excluded" for d in self.days)

    @property
    def outlier_days(self) -> list[int]:
        days = self.ratio_days
        return [days[i] for i in self.stats.outliers]

    def worst_day(self) -> int:
        ok = [d for d in self.days if d.status == "ok"]
        if not ok:
            raise ValueError("campaign has no day with a defined ratio")
        return max(ok, key=lambda d: (d.ratio, -d.index)).index


def evaluate_day(index: int, day: ScenarioDay, plant: Plant, cfg: ControllerConfig, initial_soc: float = 0.6,
                 gap_tol: float = 1e-6, opt_cost: float | None = None) -> DayOutcome:
    """Closed-loop cost, offline cost and their ratio for one day; never raises solver errors."""
    try:
        if opt_cost is None:
            opt_cost = perfect_dispatch_cost(day, plant, initial_soc, cfg.epsilon, gap_tol)
        result: DayResult = run_day(day, initial_soc, plant, cfg, gap_tol)
    except TubeDispatchError as err:
        log.warning("day %d failed: %s", index, err)
        return DayOutcome(index, math.nan, math.nan if opt_cost is None else opt_cost, math.nan, "failed",
                          message=str(err))
    alg = result.cost
    flagged = len(result.flagged_slots)
    if abs(opt_cost) < MIN_ORACLE_COST:
        return DayOutcome(index, alg, opt_cost, math.nan, "excluded", flagged, "offline cost below 1")
    return DayOutcome(index, alg, opt_cost, competitive_ratio(alg, opt_cost), "ok", flagged)


def _evaluate_packed(args):
    return evaluate_day(*args)


def run_campaign(
    days: Sequence[ScenarioDay],
    plant: Plant,
    cfg: ControllerConfig,
    initial_soc: float = 0.6,
    gap_tol: float = 1e-6,
    oracle_costs: Sequence[float | None] | None = None,
    workers: int = 1,
    progress: Callable[[DayOutcome], None] | None = None,
) -> CampaignReport:
    """Tube-MPC versus perfect dispatch on every day.

    ``oracle_costs`` may carry already-known offline costs (same order as
    ``days``).  With ``workers > 1`` days run in separate processes; results
    are always assembled in day order.
    """
    oracle = list(oracle_costs) if oracle_costs is not None else [None] * len(days)
    if len(oracle) != len(days):
        raise ValueError("oracle_costs must match days")
    jobs = [(i, day, plant, cfg, initial_soc, gap_tol, oracle[i]) for i, day in enumerate(days)]
    outcomes: list[DayOutcome] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for outcome in pool.map(_evaluate_packed, jobs):
                outcomes.append(outcome)
                if progress:
                    progress(outcome)
    else:
        for job in jobs:
            outcome = evaluate_day(*job)
            outcomes.append(outcome)
            if progress:
                progress(outcome)
    outcomes.sort(key=lambda o: o.index)
    return CampaignReport(tuple(outcomes))


@dataclass(frozen=True)
class TighteningGrid:
    rho1: tuple[float, ...]
    rho2: tuple[float, ...]
    ratios: np.ndarray  # shape (len(rho1), len(rho2)); nan where the run failed
    costs: np.ndarray
    opt_cost: float
    failed: tuple[tuple[float, float], ...]


def sweep_tightening(
    rho1_values: Sequence[float],
    rho2_values: Sequence[float],
    day: ScenarioDay,
    plant: Plant,
    cfg: ControllerConfig,
    initial_soc: float = 0.6,
    gap_tol: float = 1e-6,
    opt_cost: float | None = None,
) -> TighteningGrid:
    for v in (*rho1_values, *rho2_values):
        if not 0 < v < 1:
            raise ConfigError(f"tightening values must lie in (0, 1), got {v}")
    if opt_cost is None:
        opt_cost = perfect_dispatch_cost(day, plant, initial_soc, cfg.epsilon, gap_tol)
    ratios = np.full((len(rho1_values), len(rho2_values)), np.nan)
    costs = np.full_like(ratios, np.nan)
    failed = []
    for i, r1 in enumerate(rho1_values):
        for j, r2 in enumerate(rho2_values):
            out = evaluate_day(0, day, plant, replace(cfg, rho1=r1, rho2=r2), initial_soc, gap_tol, opt_cost)
            costs[i, j] = out.alg_cost
            if out.status == "ok":
                ratios[i, j] = out.ratio
            else:
                failed.append((r1, r2))
    return TighteningGrid(tuple(rho1_values), tuple(rho2_values), ratios, costs, opt_cost, tuple(failed))


@dataclass(frozen=True)
class HorizonSweep:
    h2: tuple[int, ...]
    reports: tuple[CampaignReport, ...]

    @property
    def medians(self) -> list[float]:
        return [r.stats.median for r in self.reports]

    @property
    def outlier_counts(self) -> list[int]:
        return [len(r.stats.outliers) for r in self.reports]


def sweep_horizon(
    h2_values: Sequence[int],
    days: Sequence[ScenarioDay],
    plant: Plant,
    cfg: ControllerConfig,
    initial_soc: float = 0.6,
    gap_tol: float = 1e-6,
    oracle_costs: Sequence[float | None] | None = None,
    known: dict[int, CampaignReport] | None = None,
    workers: int = 1,
    progress: Callable[[int, DayOutcome], None] | None = None,
) -> HorizonSweep:
    """Daily-ratio distribution for each ancillary horizon length.

    ``known`` maps horizon lengths to campaigns already run with ``cfg`` on
    the same days; offline costs are computed once and shared.
    """
    for h in h2_values:
        if not 1 <= h <= cfg.h1_len:
            raise ConfigError(f"h2 value {h} outside 1..{cfg.h1_len}")
    known = dict(known or {})
    if oracle_costs is None:
        for rep in known.values():
            oracle_costs = [d.opt_cost if math.isfinite(d.opt_cost) else None for d in rep.days]
            break
    if oracle_costs is None:
        oracle_costs = []
        for day in days:
            try:
                oracle_costs.append(perfect_dispatch_cost(day, plant, initial_soc, cfg.epsilon, gap_tol))
            except TubeDispatchError:
                oracle_costs.append(None)
    reports = []
    for h in h2_values:
        if h in known:
            reports.append(known[h])
            continue
        cb = (lambda o, h=h: progress(h, o)) if progress else None
        reports.append(run_campaign(days, plant, replace(cfg, h2_len=h), initial_soc, gap_tol,
                                    oracle_costs, workers, cb))
    return HorizonSweep(tuple(h2_values), tuple(reports))
