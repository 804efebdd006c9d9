"""Configuration files, profile CSVs and result tables.

Configuration is a flat text file of ``section.key = value`` lines; ``#``
starts a comment and blank lines are ignored.  Every key is optional and
falls back to the case-study defaults.  List-valued keys take
comma-separated numbers.  Generators are numbered from 1::

    battery.capacity_kwh = 400
    generator.count = 2
    generator.2.p_max = 92
    run.h2_values = 1, 2, 3, 4

Result CSVs print powers and SoC with six significant digits in positional
notation (magnitudes below 1e-6 print as 0) and currency with four
decimals.  Slot ``t`` covers the wall-clock interval starting at
``t * slot_hours`` after midnight; SoC columns hold the value at the end of
the slot.  All files are written to a temporary name
and renamed into place.
"""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .controller import DayResult, decision_at
from .evaluation import (
    CampaignReport,
    ForecastDay,
    HorizonSweep,
    TighteningGrid,
    UncertaintyConfig,
    generate_scenario,
)
from .exceptions import ConfigError, DataError
from .horizon import ControllerConfig
from .model import (
    BatteryParams,
    DegradationParams,
    GeneratorParams,
    GridParams,
    Plant,
    ScenarioDay,
    TariffSchedule,
    TimeGrid,
    default_generators,
    segment_costs,
    time_aware_bounds,
)

MODES = ("day", "campaign", "sweep-tightening", "sweep-horizon", "perfect")
PROFILE_HEADER = ("slot", "forecast_load_kw", "actual_load_kw", "forecast_solar_kw", "actual_solar_kw")
REQUIRED_PROFILE_COLUMNS = ("slot", "forecast_load_kw", "forecast_solar_kw")

SUMMARY_METRICS = (
    "Perfect dispatch cost by offline optimization ($)",
    "Total cost calculated by tube-based MPC ($)",
    "Cost increase amount ($)",
    "Competitive ratio",
)

# solver round-off below this magnitude (kW or SoC fraction) is printed as zero
ZERO_FLOOR = 1e-6

_GEN_FIELDS = ("a2", "a1", "a0", "p_min", "p_max", "ramp_up", "ramp_down")


@dataclass(frozen=True)
class TariffConfig:
    peak_price: float = 0.116
    offpeak_price: float = 0.072
    peak_start_hour: float = 7.0
    peak_end_hour: float = 21.0
    sell_ratio: float = 0.5

    def __post_init__(self):
        if not 0 <= self.peak_start_hour <= self.peak_end_hour <= 24:
            raise ConfigError("tariff: 0 <= peak_start_hour <= peak_end_hour <= 24 violated")
        if not 0 <= self.sell_ratio < 1:
            raise ConfigError("tariff.sell_ratio must lie in [0, 1)")

    def schedule(self, time: TimeGrid) -> TariffSchedule:
        return TariffSchedule.peak_offpeak(
            time, self.peak_price, self.offpeak_price, self.peak_start_hour, self.peak_end_hour, self.sell_ratio
        )


@dataclass(frozen=True)
class RunSettings:
    """Options that select what a run does rather than what the plant is."""

    mode: str = "day"
    profiles: str = ""
    out_dir: str = "results"
    initial_soc: float = 0.6
    gap_tol: float = 1e-6
    day: int = 0
    days: int = 365
    year_seed: int = 0
    workers: int = 1
    tightening_day: int = -1
    rho1_values: tuple[float, ...] = (0.01, 0.03, 0.05, 0.07, 0.09)
    rho2_values: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2)
    h2_values: tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}, got {self.mode!r}")
        if not self.gap_tol > 0:
            raise ConfigError("run.gap_tol must be > 0")
        if not 1 <= self.days <= 366:
            raise ConfigError("run.days must lie in 1..366")
        if not 0 <= self.day < self.days:
            raise ConfigError("run.day must lie in 0..run.days-1")
        if self.tightening_day >= self.days:
            raise ConfigError("run.tightening_day must be -1 or lie in 0..run.days-1")
        if self.workers < 1:
            raise ConfigError("run.workers must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    plant: Plant = field(default_factory=Plant)
    tariff: TariffConfig = field(default_factory=TariffConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def __post_init__(self):
        bat = self.plant.battery
        if not bat.soc_min <= self.run.initial_soc <= bat.soc_max:
            raise ConfigError("run: battery.soc_min <= run.initial_soc <= battery.soc_max violated")
        if any(not 1 <= h <= self.controller.h1_len for h in self.run.h2_values):
            raise ConfigError("run.h2_values must lie in 1..controller.h1_len")
        if any(not 0 < v < 1 for v in (*self.run.rho1_values, *self.run.rho2_values)):
            raise ConfigError("run: tightening sweep values must lie in (0, 1)")

    def with_overrides(self, *, seed=None, profiles=None, out_dir=None, gap_tol=None, mode=None) -> "RunConfig":
        ucfg = self.uncertainty if seed is None else replace(self.uncertainty, seed=int(seed))
        changes = {k: v for k, v in dict(profiles=profiles, out_dir=out_dir, gap_tol=gap_tol, mode=mode).items()
                   if v is not None}
        try:
            return replace(self, uncertainty=ucfg, run=replace(self.run, **changes))
        except ConfigError:
            raise
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err


# ---------------------------------------------------------------- config


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _parse_int(text: str) -> int:
    return int(text, 10)


def _parse_str(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def _list_of(parse: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse_list(text: str) -> tuple:
        items = [s.strip() for s in text.split(",")]
        if not items or any(not s for s in items):
            raise ValueError("empty list item")
        return tuple(parse(s) for s in items)

    return parse_list


def _section_schema(prefix: str, cls) -> dict[str, Callable[[str], Any]]:
    parsers = {float: _parse_float, int: _parse_int, str: _parse_str,
               "float": _parse_float, "int": _parse_int, "str": _parse_str,
               "tuple[float, ...]": _list_of(_parse_float), "tuple[int, ...]": _list_of(_parse_int)}
    out = {}
    for f in fields(cls):
        if f.type in parsers:
            out[f"{prefix}.{f.name}"] = parsers[f.type]
    return out


_SECTIONS = {
    "battery": BatteryParams,
    "degradation": DegradationParams,
    "grid": GridParams,
    "tariff": TariffConfig,
    "time": TimeGrid,
    "controller": ControllerConfig,
    "uncertainty": UncertaintyConfig,
    "run": RunSettings,
}
_SCHEMA: dict[str, Callable[[str], Any]] = {}
for _name, _cls in _SECTIONS.items():
    _SCHEMA.update(_section_schema(_name, _cls))
_SCHEMA["generator.count"] = _parse_int


def _key_parser(key: str) -> Callable[[str], Any] | None:
    if key in _SCHEMA:
        return _SCHEMA[key]
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "generator" and parts[1].isdigit() and parts[2] in _GEN_FIELDS:
        return _parse_float
    return None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Raw ``key -> value`` map; schema violations name the line and key."""
    values: dict[str, Any] = {}
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        parse = _key_parser(key)
        if parse is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen[key]})")
        if not value:
            raise ConfigError(f"{source}:{lineno}: key {key!r} has no value")
        try:
            values[key] = parse(value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: key {key!r}: cannot parse {value!r}") from None
        seen[key] = lineno
    return values


def _pick(values: dict[str, Any], section: str) -> dict[str, Any]:
    prefix = section + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix) and k.count(".") == 1}


def _generators(values: dict[str, Any]) -> tuple[GeneratorParams, ...]:
    defaults = default_generators()
    count = values.get("generator.count", len(defaults))
    if count < 1:
        raise ConfigError("generator.count must be >= 1")
    for key in values:
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "generator" and not 1 <= int(parts[1]) <= count:
            raise ConfigError(f"key {key!r} refers to a generator beyond generator.count = {count}")
    gens = []
    for j in range(1, count + 1):
        base = {f: getattr(defaults[j - 1], f) for f in _GEN_FIELDS} if j <= len(defaults) else {}
        base.update({f: values[f"generator.{j}.{f}"] for f in _GEN_FIELDS if f"generator.{j}.{f}" in values})
        missing = [f for f in _GEN_FIELDS if f not in base]
        if missing:
            raise ConfigError(f"generator {j} has no default; missing keys: "
                              + ", ".join(f"generator.{j}.{f}" for f in missing))
        try:
            gens.append(GeneratorParams(**base))
        except ConfigError as err:
            raise ConfigError(f"generator {j}: {err}") from None
    return tuple(gens)


def config_from_values(values: dict[str, Any]) -> RunConfig:
    """Build and validate a ``RunConfig`` from parsed key/value pairs."""
    try:
        time = TimeGrid(**_pick(values, "time"))
        tariff = TariffConfig(**_pick(values, "tariff"))
        battery = BatteryParams(**_pick(values, "battery"), degradation=DegradationParams(**_pick(values, "degradation")))
        grid = GridParams(**_pick(values, "grid"), tariff=tariff.schedule(time))
        plant = Plant(battery, _generators(values), grid, time)
        return RunConfig(
            plant,
            tariff,
            ControllerConfig(**_pick(values, "controller")),
            UncertaintyConfig(**_pick(values, "uncertainty")),
            RunSettings(**_pick(values, "run")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Read a configuration file; ``None`` gives the defaults."""
    if path is None:
        return config_from_values({})
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {p}: {err.strerror or err}") from None
    return config_from_values(parse_config_text(text, str(p)))


def config_values(cfg: RunConfig) -> dict[str, Any]:
    """Every resolved key of ``cfg`` in schema order."""
    plant = cfg.plant
    out: dict[str, Any] = {}
    sources = {
        "battery": plant.battery,
        "degradation": plant.battery.degradation,
        "grid": plant.grid,
        "tariff": cfg.tariff,
        "time": plant.time,
        "controller": cfg.controller,
        "uncertainty": cfg.uncertainty,
        "run": cfg.run,
    }
    for section, obj in sources.items():
        for key in _SCHEMA:
            if key.startswith(section + "."):
                out[key] = getattr(obj, key.split(".", 1)[1])
    out["generator.count"] = plant.n_gen
    for j, g in enumerate(plant.generators, start=1):
        for f in _GEN_FIELDS:
            out[f"generator.{j}.{f}"] = getattr(g, f)
    return out


def _config_literal(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_config_literal(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if value == "":
        return '""'
    return str(value)


def format_config(cfg: RunConfig) -> str:
    lines = ["# resolved configuration; every key is listed"]
    section = None
    for key, value in config_values(cfg).items():
        head = key.split(".", 1)[0]
        if head != section:
            lines.append("")
            section = head
        lines.append(f"{key} = {_config_literal(value)}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- files


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    p = Path(path)
    try:
        p.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{p.name}.", dir=p.parent)
    except OSError as err:
        raise OSError(err.errno, f"cannot write {p}: {err.strerror}") from err
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, p)
    except OSError as err:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise OSError(err.errno, f"cannot write {p}: {err.strerror}") from err
    return p


def fmt_power(x: float) -> str:
    """Six significant digits, never in exponent form; below ``ZERO_FLOOR`` prints 0."""
    if not math.isfinite(x):
        return "nan"
    if abs(x) < ZERO_FLOOR:
        return "0"
    s = np.format_float_positional(float(x), precision=6, unique=False, fractional=False, trim="-")
    return "0" if s in ("-0", "0") else s


def fmt_money(x: float) -> str:
    if not math.isfinite(x):
        return "nan"
    s = f"{x:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[str]]) -> Path:
    return atomic_write_text(path, _csv_text(header, rows))


# ---------------------------------------------------------------- profiles


def _cell(row: dict, col: str, lineno: int) -> float:
    text = (row.get(col) or "").strip()
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {lineno}: column {col!r}: malformed number {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {lineno}: column {col!r}: value must be finite")
    if value < 0:
        raise DataError(f"row {lineno}: column {col!r}: negative value {value}")
    return value


def load_profiles(
    path: str | os.PathLike,
    slots: int = 96,
    uncertainty: UncertaintyConfig | None = None,
    day_index: int = 0,
) -> ScenarioDay:
    """Read one day of forecast (and optionally realised) load and solar power.

    Row numbers in error messages are file line numbers.  When an actual
    column is missing it is drawn from ``uncertainty`` (defaults if None)
    with stream ``day_index``.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as err:
        raise DataError(f"cannot read profiles {p}: {err.strerror or err}") from None
    reader = csv.DictReader(io.StringIO(text))
    header = [h.strip() for h in (reader.fieldnames or [])]
    reader.fieldnames = header
    missing = [c for c in REQUIRED_PROFILE_COLUMNS if c not in header]
    if missing:
        raise DataError(f"{p}: row 1: missing columns {missing}; expected header {','.join(PROFILE_HEADER)}")
    unknown = [c for c in header if c not in PROFILE_HEADER]
    if unknown:
        raise DataError(f"{p}: row 1: unknown columns {unknown}")
    cols = {c: [] for c in PROFILE_HEADER if c in header}
    count = 0
    for count, row in enumerate(reader, start=1):
        lineno = count + 1
        if None in row or any(row.get(c) is None for c in cols):
            raise DataError(f"{p}: row {lineno}: expected {len(header)} fields")
        slot_text = row["slot"].strip()
        if slot_text != str(count - 1):
            raise DataError(f"{p}: row {lineno}: slot {slot_text!r}, expected {count - 1}")
        for c in cols:
            if c != "slot":
                try:
                    cols[c].append(_cell(row, c, lineno))
                except DataError as err:
                    raise DataError(f"{p}: {err}") from None
    if count != slots:
        raise DataError(f"{p}: found {count} data rows, expected {slots}")
    forecast_load = np.array(cols["forecast_load_kw"])
    forecast_solar = np.array(cols["forecast_solar_kw"])
    actual_load = cols.get("actual_load_kw")
    actual_solar = cols.get("actual_solar_kw")
    if actual_load is None or actual_solar is None:
        drawn = generate_scenario(ForecastDay(forecast_solar, forecast_load), uncertainty or UncertaintyConfig(),
                                  day_index)
        actual_load = drawn.actual_load if actual_load is None else actual_load
        actual_solar = drawn.actual_renewable if actual_solar is None else actual_solar
    return ScenarioDay(forecast_solar, np.array(actual_solar), forecast_load, np.array(actual_load))


def write_profiles(day: ScenarioDay, path: str | os.PathLike) -> Path:
    rows = (
        (str(t), fmt_power(day.forecast_load[t]), fmt_power(day.actual_load[t]),
         fmt_power(day.forecast_renewable[t]), fmt_power(day.actual_renewable[t]))
        for t in range(day.slots)
    )
    return write_csv(path, PROFILE_HEADER, rows)


# ---------------------------------------------------------------- results


def _slot_rows(result: DayResult, day: ScenarioDay, plant: Plant):
    time = plant.time
    for r in result.records:
        t = r.slot
        yield (
            str(t), time.clock(t),
            fmt_power(day.forecast_renewable[t]),
            fmt_power(day.actual_renewable[t]),
            fmt_power(day.forecast_load[t]), fmt_power(day.actual_load[t]),
            fmt_power(r.nominal_soc), fmt_power(r.actual_soc),
            *(fmt_power(g) for g in r.actual.gen),
            fmt_power(r.actual.buy), fmt_power(r.actual.sell),
            fmt_power(r.actual.charge_total), fmt_power(r.actual.discharge_total),
            fmt_money(r.cost), fmt_money(r.penalty), ";".join(r.flags),
        )


def slots_header(n_gen: int) -> list[str]:
    return [
        "slot", "clock", "forecast_solar_kw", "actual_solar_kw", "forecast_load_kw", "actual_load_kw",
        "nominal_soc", "actual_soc", *(f"gen{j}_kw" for j in range(1, n_gen + 1)),
        "buy_kw", "sell_kw", "charge_kw", "discharge_kw", "slot_cost", "penalty", "flags",
    ]


def write_bounds(plant: Plant, path: str | os.PathLike) -> Path:
    lo, hi = time_aware_bounds(plant.battery, plant.time)
    bat = plant.battery
    rows = ((str(t), plant.time.clock(t), fmt_power(lo[t]), fmt_power(hi[t]),
             fmt_power(bat.soc_min), fmt_power(bat.soc_max)) for t in range(lo.size))
    return write_csv(path, ("slot", "clock", "soc_lower", "soc_upper", "soc_min", "soc_max"), rows)


def write_segments(plant: Plant, path: str | os.PathLike) -> Path:
    costs = segment_costs(plant.battery)
    rows = ((str(i), fmt_power(c)) for i, c in enumerate(costs, start=1))
    return write_csv(path, ("segment", "cost_per_kwh"), rows)


def summary_rows(alg_cost: float | None, opt_cost: float | None, ratio: float | None) -> list[tuple[str, str]]:
    nan = math.nan
    alg = nan if alg_cost is None else alg_cost
    opt = nan if opt_cost is None else opt_cost
    r = nan if ratio is None else ratio
    return [
        (SUMMARY_METRICS[0], fmt_money(opt)),
        (SUMMARY_METRICS[1], fmt_money(alg)),
        (SUMMARY_METRICS[2], fmt_money(alg - opt)),
        (SUMMARY_METRICS[3], "nan" if not math.isfinite(r) else f"{r:.4f}"),
    ]


def write_summary(path, alg_cost, opt_cost, ratio) -> Path:
    return write_csv(path, ("metric", "value"), summary_rows(alg_cost, opt_cost, ratio))


def _plant_tables(cfg: RunConfig, out: Path) -> list[Path]:
    return [
        write_bounds(cfg.plant, out / "bounds.csv"),
        write_segments(cfg.plant, out / "segments.csv"),
        atomic_write_text(out / "config.resolved", format_config(cfg)),
    ]


def emit_day(result: DayResult, day: ScenarioDay, cfg: RunConfig, out_dir, opt_cost: float | None,
             ratio: float | None) -> list[Path]:
    """``slots.csv``, ``bounds.csv``, ``segments.csv``, ``summary.csv``, profiles and the config echo."""
    out = Path(out_dir)
    paths = [
        write_csv(out / "slots.csv", slots_header(cfg.plant.n_gen), _slot_rows(result, day, cfg.plant)),
        write_summary(out / "summary.csv", result.cost, opt_cost, ratio),
        write_profiles(day, out / "profiles.csv"),
    ]
    return paths + _plant_tables(cfg, out)


def emit_perfect(problem, x: np.ndarray, cost: float, day: ScenarioDay, cfg: RunConfig, out_dir) -> list[Path]:
    """Per-slot schedule of the offline optimum."""
    out = Path(out_dir)
    plant = cfg.plant
    G = plant.n_gen
    header = ["slot", "clock", "actual_solar_kw", "actual_load_kw", "soc",
              *(f"gen{j}_kw" for j in range(1, G + 1)), "buy_kw", "sell_kw", "charge_kw", "discharge_kw"]
    rows = []
    for t in range(plant.time.slots_per_day):
        d = decision_at(problem, x, t, G, plant.battery.num_segments)
        rows.append((
            str(t), plant.time.clock(t), fmt_power(day.actual_renewable[t]), fmt_power(day.actual_load[t]),
            fmt_power(max(problem.value(x, t, "soc"), 0.0)), *(fmt_power(g) for g in d.gen),
            fmt_power(d.buy), fmt_power(d.sell), fmt_power(d.charge_total), fmt_power(d.discharge_total),
        ))
    paths = [
        write_csv(out / "slots.csv", header, rows),
        write_summary(out / "summary.csv", None, cost, None),
        write_profiles(day, out / "profiles.csv"),
    ]
    return paths + _plant_tables(cfg, out)


def _outcome_row(d) -> tuple[str, ...]:
    ratio = "nan" if not math.isfinite(d.ratio) else f"{d.ratio:.6f}"
    return (str(d.index), fmt_money(d.alg_cost), fmt_money(d.opt_cost), ratio, d.status, str(d.flagged_slots))


_RATIO_HEADER = ("day", "alg_cost", "opt_cost", "ratio", "status", "flagged_slots")


def _distribution_rows(label: str, report: CampaignReport) -> tuple[str, ...]:
    s = report.stats

    def r(x):
        return "nan" if not math.isfinite(x) else f"{x:.6f}"

    return (label, str(len(report.days)), str(s.count), str(report.excluded), str(report.failed),
            r(s.minimum), r(s.q1), r(s.median), r(s.q3), r(s.maximum), str(len(s.outliers)))


_DIST_HEADER = ("group", "days", "ratio_days", "excluded", "failed", "min", "q1", "median", "q3", "max", "outliers")


def emit_campaign(report: CampaignReport, cfg: RunConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    outliers = set(report.outlier_days)
    rows = [(*_outcome_row(d), str(int(d.index in outliers))) for d in report.days]
    paths = [
        write_csv(out / "ratios.csv", (*_RATIO_HEADER, "outlier"), rows),
        write_csv(out / "distribution.csv", _DIST_HEADER, [_distribution_rows("all", report)]),
    ]
    return paths + _plant_tables(cfg, out)


def emit_tightening(grid: TighteningGrid, cfg: RunConfig, out_dir, day_label: int) -> list[Path]:
    out = Path(out_dir)
    rows = []
    for i, r1 in enumerate(grid.rho1):
        for j, r2 in enumerate(grid.rho2):
            ratio = grid.ratios[i, j]
            rows.append((str(day_label), repr(float(r1)), repr(float(r2)), fmt_money(grid.costs[i, j]),
                         fmt_money(grid.opt_cost), "nan" if not math.isfinite(ratio) else f"{ratio:.6f}",
                         "ok" if math.isfinite(ratio) else "failed"))
    paths = [write_csv(out / "ratios.csv", ("day", "rho1", "rho2", "alg_cost", "opt_cost", "ratio", "status"), rows)]
    return paths + _plant_tables(cfg, out)


def emit_horizon(sweep: HorizonSweep, cfg: RunConfig, out_dir) -> list[Path]:
    out = Path(out_dir)
    rows, dist = [], []
    for h, rep in zip(sweep.h2, sweep.reports):
        outliers = set(rep.outlier_days)
        rows.extend((str(h), *_outcome_row(d), str(int(d.index in outliers))) for d in rep.days)
        dist.append(_distribution_rows(f"h2={h}", rep))
    paths = [
        write_csv(out / "ratios.csv", ("h2", *_RATIO_HEADER, "outlier"), rows),
        write_csv(out / "distribution.csv", _DIST_HEADER, dist),
    ]
    return paths + _plant_tables(cfg, out)


def emit_results(result, cfg: RunConfig, out_dir, **kw) -> list[Path]:
    """Write the tables for any run product: a ``DayResult`` (needs ``day``,
    ``opt_cost``, ``ratio``), a ``CampaignReport``, a ``TighteningGrid``
    (needs ``day_label``) or a ``HorizonSweep``."""
    if isinstance(result, DayResult):
        return emit_day(result, kw["day"], cfg, out_dir, kw.get("opt_cost"), kw.get("ratio"))
    if isinstance(result, CampaignReport):
        return emit_campaign(result, cfg, out_dir)
    if isinstance(result, TighteningGrid):
        return emit_tightening(result, cfg, out_dir, kw.get("day_label", -1))
    if isinstance(result, HorizonSweep):
        return emit_horizon(result, cfg, out_dir)
    raise TypeError(f"cannot emit {type(result).__name__}")
