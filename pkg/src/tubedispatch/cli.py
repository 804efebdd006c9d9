"""Command-line entry point ``tubedispatch``.

Exit codes: 0 success, 1 unexpected failure (including output I/O), 2
configuration error, 3 input data error, 4 infeasible problem, 5 solver
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from .controller import run_day
from .evaluation import (
    CampaignReport,
    DayOutcome,
    competitive_ratio,
    generate_scenario,
    perfect_dispatch_cost,
    run_campaign,
    sweep_horizon,
    sweep_tightening,
    synth_year,
)
from .exceptions import ConfigError, DataError, InfeasibleError, RatioDomainError, SolverError
from .horizon import build_perfect_dispatch
from .io import (
    RunConfig,
    emit_campaign,
    emit_day,
    emit_horizon,
    emit_perfect,
    emit_tightening,
    fmt_money,
    fmt_power,
    load_config,
    load_profiles,
    write_bounds,
    write_segments,
)
from .miqp import solve_or_raise
from .model import BatteryState, ScenarioDay, segment_costs, time_aware_bounds

log = logging.getLogger("tubedispatch")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3, 4, 5


def _year_scenarios(cfg: RunConfig) -> list[ScenarioDay]:
    year = synth_year(cfg.run.year_seed, cfg.run.days, cfg.plant.time.slots_per_day)
    return [generate_scenario(f, cfg.uncertainty, i) for i, f in enumerate(year)]


def _one_day(cfg: RunConfig, index: int) -> ScenarioDay:
    if cfg.run.profiles:
        return load_profiles(cfg.run.profiles, cfg.plant.time.slots_per_day, cfg.uncertainty, index)
    year = synth_year(cfg.run.year_seed, cfg.run.days, cfg.plant.time.slots_per_day)
    return generate_scenario(year[index], cfg.uncertainty, index)


def _progress(outcome: DayOutcome) -> None:
    log.info("day %3d  %-8s ratio %s", outcome.index, outcome.status,
             "nan" if not math.isfinite(outcome.ratio) else f"{outcome.ratio:.4f}")


def _print_distribution(label: str, rep: CampaignReport) -> None:
    s = rep.stats
    print(f"{label}: {len(rep.days)} days, {s.count} with ratio, {rep.excluded} excluded, {rep.failed} failed")
    if s.count:
        print(f"  min {s.minimum:.4f}  q1 {s.q1:.4f}  median {s.median:.4f}  q3 {s.q3:.4f}  max {s.maximum:.4f}"
              f"  outliers {len(s.outliers)}")


def cmd_run_day(cfg: RunConfig, args) -> int:
    day = _one_day(cfg, cfg.run.day)
    opt = perfect_dispatch_cost(day, cfg.plant, cfg.run.initial_soc, cfg.controller.epsilon, cfg.run.gap_tol)
    result = run_day(day, cfg.run.initial_soc, cfg.plant, cfg.controller, cfg.run.gap_tol)
    try:
        ratio = competitive_ratio(result.cost, opt)
    except RatioDomainError as err:
        log.warning("%s", err)
        ratio = None
    emit_day(result, day, cfg, cfg.run.out_dir, opt, ratio)
    print(f"perfect dispatch cost   {fmt_money(opt)}")
    print(f"tube-MPC cost           {fmt_money(result.cost)}")
    print(f"competitive ratio       {'undefined' if ratio is None else f'{ratio:.4f}'}")
    print(f"terminal SoC            {fmt_power(result.terminal_soc)}")
    if result.flagged_slots:
        print(f"slots needing recovery  {result.flagged_slots}")
    return EXIT_OK


def cmd_perfect(cfg: RunConfig, args) -> int:
    day = _one_day(cfg, cfg.run.day)
    state = BatteryState.from_soc(cfg.run.initial_soc, cfg.plant.battery.num_segments)
    problem = build_perfect_dispatch(day, cfg.plant, state, cfg.controller.epsilon)
    rep = solve_or_raise(problem, "perfect-dispatch", gap_tol=cfg.run.gap_tol)
    emit_perfect(problem, rep.incumbent.x, rep.objective, day, cfg, cfg.run.out_dir)
    print(f"perfect dispatch cost   {fmt_money(rep.objective)}")
    return EXIT_OK


def cmd_campaign(cfg: RunConfig, args) -> int:
    days = _year_scenarios(cfg)
    report = run_campaign(days, cfg.plant, cfg.controller, cfg.run.initial_soc, cfg.run.gap_tol,
                          workers=cfg.run.workers, progress=_progress)
    emit_campaign(report, cfg, cfg.run.out_dir)
    _print_distribution("campaign", report)
    return EXIT_OK


def _worst_from_ratios(path: str) -> int:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.DictReader(fh) if r.get("status") == "ok"]
    if not rows:
        raise DataError(f"{path}: no day with a defined ratio")
    try:
        worst = max(rows, key=lambda r: (float(r["ratio"]), -int(r["day"])))
        return int(worst["day"])
    except (KeyError, ValueError) as err:
        raise DataError(f"{path}: not a campaign ratios file ({err})") from None


def cmd_sweep_tightening(cfg: RunConfig, args) -> int:
    index = cfg.run.tightening_day
    if args.ratios:
        index = _worst_from_ratios(args.ratios)
    if cfg.run.profiles:
        index = max(index, 0)
    elif index < 0:
        log.info("locating the worst day with a %d-day campaign", cfg.run.days)
        report = run_campaign(_year_scenarios(cfg), cfg.plant, cfg.controller, cfg.run.initial_soc,
                              cfg.run.gap_tol, workers=cfg.run.workers, progress=_progress)
        index = report.worst_day()
    day = _one_day(cfg, index)
    grid = sweep_tightening(cfg.run.rho1_values, cfg.run.rho2_values, day, cfg.plant, cfg.controller,
                            cfg.run.initial_soc, cfg.run.gap_tol)
    emit_tightening(grid, cfg, cfg.run.out_dir, index)
    print(f"day {index}, perfect dispatch cost {fmt_money(grid.opt_cost)}")
    print("rho1 \\ rho2 " + " ".join(f"{r:>8g}" for r in grid.rho2))
    for i, r1 in enumerate(grid.rho1):
        print(f"{r1:<11g} " + " ".join("  failed" if math.isnan(v) else f"{v:8.4f}" for v in grid.ratios[i]))
    return EXIT_OK


def cmd_sweep_horizon(cfg: RunConfig, args) -> int:
    days = _year_scenarios(cfg)
    cb = (lambda h, o: _progress(o))
    sweep = sweep_horizon(cfg.run.h2_values, days, cfg.plant, cfg.controller, cfg.run.initial_soc,
                          cfg.run.gap_tol, workers=cfg.run.workers, progress=cb)
    emit_horizon(sweep, cfg, cfg.run.out_dir)
    for h, rep in zip(sweep.h2, sweep.reports):
        _print_distribution(f"h2={h}", rep)
    return EXIT_OK


def cmd_show_segments(cfg: RunConfig, args) -> int:
    if args.out:
        write_segments(cfg.plant, Path(args.out) / "segments.csv")
    print("segment  cost_per_kwh")
    for i, c in enumerate(segment_costs(cfg.plant.battery), start=1):
        print(f"{i:>7d}  {fmt_power(c)}")
    return EXIT_OK


def cmd_show_bounds(cfg: RunConfig, args) -> int:
    if args.out:
        write_bounds(cfg.plant, Path(args.out) / "bounds.csv")
    lo, hi = time_aware_bounds(cfg.plant.battery, cfg.plant.time)
    print("slot  clock  soc_lower  soc_upper")
    for t in range(lo.size):
        print(f"{t:>4d}  {cfg.plant.time.clock(t)}  {fmt_power(lo[t]):>9}  {fmt_power(hi[t]):>9}")
    return EXIT_OK


COMMANDS = {
    "run-day": (cmd_run_day, "day", "simulate one day with tube MPC and compare with perfect dispatch"),
    "run-campaign": (cmd_campaign, "campaign", "tube MPC versus perfect dispatch on every synthetic day"),
    "sweep-tightening": (cmd_sweep_tightening, "sweep-tightening", "ratio grid over rho1 x rho2 on one day"),
    "sweep-horizon": (cmd_sweep_horizon, "sweep-horizon", "ratio distribution per ancillary horizon"),
    "perfect-dispatch": (cmd_perfect, "perfect", "offline optimum of one day on realised data"),
    "show-segments": (cmd_show_segments, None, "print the segment degradation costs"),
    "show-bounds": (cmd_show_bounds, None, "print the time-aware SoC bounds"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tubedispatch", description="Tube-based MPC microgrid dispatch.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, (_, _, text) in COMMANDS.items():
        p = sub.add_parser(verb, help=text, description=text)
        p.add_argument("--config", metavar="PATH", help="key = value configuration file")
        p.add_argument("--profiles", metavar="PATH", help="one-day profile CSV")
        p.add_argument("--seed", type=int, metavar="N", help="forecast-error seed (uncertainty.seed)")
        p.add_argument("--out", metavar="DIR", help="output directory (run.out_dir)")
        p.add_argument("--gap-tol", type=float, metavar="X", help="relative MIQP gap (run.gap_tol)")
        p.add_argument("--days", type=int, metavar="N", help="synthetic year length (run.days)")
        p.add_argument("--day", type=int, metavar="N", help="synthetic day index (run.day / run.tightening_day)")
        p.add_argument("--workers", type=int, metavar="N", help="parallel day workers (run.workers)")
        if verb == "sweep-tightening":
            p.add_argument("--ratios", metavar="PATH", help="campaign ratios.csv; its worst day is swept")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config)
    _, mode, _ = COMMANDS[args.verb]
    cfg = cfg.with_overrides(seed=args.seed, profiles=args.profiles, out_dir=args.out, gap_tol=args.gap_tol,
                             mode=mode)
    run = cfg.run
    try:
        if args.days is not None:
            run = replace(run, days=args.days, day=min(run.day, args.days - 1),
                          tightening_day=min(run.tightening_day, args.days - 1))
        if args.day is not None:
            run = replace(run, day=args.day, tightening_day=args.day)
        if args.workers is not None:
            run = replace(run, workers=args.workers)
        cfg = replace(cfg, run=run)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    if cfg.run.profiles and not Path(cfg.run.profiles).is_file():
        raise DataError(f"profiles file {cfg.run.profiles} does not exist")
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        handler, _, _ = COMMANDS[args.verb]
        return handler(cfg, args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except InfeasibleError as err:
        where = "" if err.slot is None else f" (slot {err.slot})"
        print(f"infeasible{where}: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
