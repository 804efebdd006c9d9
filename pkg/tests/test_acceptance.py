"""Acceptance criteria 1 to 9, one test each.

Every test records a ``criterion N: PASS|FAIL ...`` line that the terminal
summary repeats. Soft statistical criteria that are not met on the synthetic
year are reported as expected failures with the measured numbers, never
loosened to pass.
"""

import math
import time

import mpmath
import numpy as np
import pytest

from tubedispatch import (
    BatteryParams,
    DegradationParams,
    ScenarioDay,
    UncertaintyConfig,
    competitive_ratio,
    generate_scenario,
    run_campaign,
    run_day,
    segment_costs,
    solve_miqp,
    solve_qp,
    sweep_horizon,
    synth_year,
    time_aware_bounds,
)
from tubedispatch.controller import FLAG_ANCILLARY_SLACK, FLAG_NOMINAL_FAILED, FLAG_NOMINAL_RELAXED
from tubedispatch.horizon import per_slot_columns
from tubedispatch.miqp import enumerate_oracle
from tubedispatch.qp import INFEASIBLE, kkt_residuals

from helpers import random_window_problem

ACCEPTANCE: list[str] = []


def record(number: int, ok: bool, detail: str) -> bool:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def rel(a, b):
    return abs(a - b) / max(1.0, abs(b))


@pytest.fixture(scope="module")
def year_days():
    ucfg = UncertaintyConfig(renewable_level=0.20, load_level=0.10)
    return [generate_scenario(f, ucfg, i) for i, f in enumerate(synth_year(0))]


@pytest.fixture(scope="module")
def year_campaign(year_days, plant, cfg):
    t0 = time.perf_counter()
    report = run_campaign(year_days, plant, cfg)
    return report, time.perf_counter() - t0


def mp_segment_cost(i, n=10, price=80000, alpha="5.24e-4", beta="1.03", eta="0.95", capacity=400):
    mpmath.mp.dps = 40
    a, b = mpmath.mpf(alpha), mpmath.mpf(beta)

    def phi(d):
        return a * mpmath.power(d, 1 + b)

    return float(price / (mpmath.mpf(eta) * capacity) * n * (phi(mpmath.mpf(i) / n) - phi(mpmath.mpf(i - 1) / n)))


def test_criterion_1_degradation_table(plant):
    c = segment_costs(plant.battery)
    c1, c10 = mp_segment_cost(1), mp_segment_cost(10)
    ok = (bool(np.all(np.diff(c) > 0)) and abs(c[0] - 0.010295) <= 1e-5 and abs(c[-1] - 0.21242) <= 1e-4
          and abs(c[0] - c1) <= 1e-12 and abs(c[-1] - c10) <= 1e-12)
    record(1, ok, f"C_1={c[0]:.10f} C_10={c[-1]:.10f} (high-precision {c1:.10f}, {c10:.10f})")
    assert ok


def test_criterion_2_time_aware_bounds(plant):
    lo, hi = time_aware_bounds(plant.battery, plant.time)
    T = lo.size
    last = (lo[T - 2], hi[T - 2])
    width = hi[T - 3] - lo[T - 3]
    saturated = bool(np.all(lo[: T - 14] == pytest.approx(0.2, abs=1e-12))
                     and np.all(hi[: T - 14] == pytest.approx(0.9, abs=1e-12)))
    ok = (abs(last[0] - 0.4525) <= 1e-6 and abs(last[1] - 0.652632) <= 1e-6 and saturated
          and abs(width - 0.3003) <= 1e-4)
    record(2, ok, f"last-step band [{last[0]:.6f}, {last[1]:.6f}], width at 23:30 {width:.6f}, "
                  f"saturated from 14 slots out: {saturated}")
    assert ok


def test_criterion_3_solver_against_enumeration():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_rel = worst_kkt = 0.0
    checked = mismatched = 0
    while checked < 200:
        prob = random_window_problem(rng)
        assert len(prob.binaries) <= 6
        ref = enumerate_oracle(prob)
        if ref.status == INFEASIBLE:
            continue
        rep = solve_miqp(prob, gap_tol=1e-9)
        err = rel(rep.objective, ref.objective)
        modes = {k: int(round(rep.x[k])) for k in prob.binaries}
        fixed = prob.fix_binaries(modes)
        kkt = max(kkt_residuals(fixed, solve_qp(fixed)).values())
        worst_rel, worst_kkt = max(worst_rel, err), max(worst_kkt, kkt)
        mismatched += err > 1e-6 or kkt > 1e-6
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = mismatched == 0 and elapsed < 120
    record(3, ok, f"{checked} instances, worst relative gap {worst_rel:.2e}, worst KKT {worst_kkt:.2e}, "
                  f"{elapsed:.1f} s")
    assert ok


def test_criterion_4_zero_uncertainty_collapse(plant, cfg):
    year = synth_year(0)
    details, ok = [], True
    for index in (15, 120, 200, 330):
        f = year[index]
        t0 = time.perf_counter()
        res = run_day(ScenarioDay.exact(f.renewable, f.load), 0.6, plant, cfg)
        elapsed = time.perf_counter() - t0
        dev = float(np.max(np.abs(res.actual_soc - res.nominal_soc)))
        good = dev <= 1e-6 and 0.5 - 1e-9 <= res.terminal_soc <= 0.6 + 1e-9 and elapsed < 10
        ok &= good
        details.append(f"day {index}: dev {dev:.1e}, terminal {res.terminal_soc:.4f}, {elapsed:.1f} s")
    record(4, ok, "; ".join(details))
    assert ok


def test_criterion_5_tube_containment(plant, cfg):
    year = synth_year(0)
    t0 = time.perf_counter()
    nominal_low = actual_low = math.inf
    actual_high = -math.inf
    violations = skipped = 0
    for k in range(50):
        index = (7 * k) % len(year)
        day = generate_scenario(year[index], UncertaintyConfig(seed=k), index)
        res = run_day(day, 0.6, plant, cfg)
        for r in res.records:
            if not {FLAG_NOMINAL_RELAXED, FLAG_NOMINAL_FAILED} & set(r.flags):
                nominal_low = min(nominal_low, r.nominal_soc)
                violations += not (0.21 - 1e-7 <= r.nominal_soc <= 0.855 + 1e-7)
            if FLAG_ANCILLARY_SLACK in r.flags:
                skipped += 1
                continue
            actual_low, actual_high = min(actual_low, r.actual_soc), max(actual_high, r.actual_soc)
            violations += not (0.2 - 1e-7 <= r.actual_soc <= 0.9 + 1e-7)
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 600
    record(5, ok, f"50 days, min nominal SoC {nominal_low:.4f}, actual SoC range [{actual_low:.4f}, "
                  f"{actual_high:.4f}], {skipped} infeasible-ancillary slots, {violations} violations, "
                  f"{elapsed:.0f} s")
    assert ok


def test_criterion_6_ratio_band(year_campaign):
    report, elapsed = year_campaign
    ratios = report.ratios
    share = float(np.mean(ratios < 1.10))
    lowest = float(ratios.min())
    dominance = all(d.opt_cost <= d.alg_cost + 1e-6 for d in report.days if d.status == "ok")
    hard = lowest >= 1.0 - 1e-9 and dominance
    soft = share >= 0.95 and 1.0 <= report.stats.median <= 1.07 and elapsed < 3600
    detail = (f"{len(ratios)} days with ratio ({report.excluded} excluded, {report.failed} failed), "
              f"min {lowest:.4f}, median {report.stats.median:.4f}, max {ratios.max():.4f}, "
              f"{100 * share:.1f}% below 1.10, {elapsed / 60:.0f} min")
    record(6, hard and soft, detail)
    assert hard, detail
    if not soft:
        pytest.xfail(f"soft band not met on the synthetic year: {detail}")


def test_criterion_7_ratio_arithmetic():
    pairs = [(574.39, 554.25, 1.0363), (293.87, 277.55, 1.0588)]
    got = [competitive_ratio(a, o) for a, o, _ in pairs]
    ok = all(abs(g - e) <= 5e-5 for g, (_, _, e) in zip(got, pairs))
    record(7, ok, ", ".join(f"{g:.5f}" for g in got))
    assert ok


def test_criterion_8_horizon_sweep(year_days, year_campaign, plant, cfg):
    report, _ = year_campaign
    sweep = sweep_horizon((1, 2, 3, 4), year_days, plant, cfg, known={cfg.h2_len: report})
    counts, medians = sweep.outlier_counts, sweep.medians
    non_increasing = all(b <= a for a, b in zip(counts, counts[1:]))
    below = all(m < 1.10 for m in medians)
    ok = non_increasing and below
    record(8, ok, "h2 " + ", ".join(f"{h}: median {m:.4f} outliers {c}"
                                     for h, m, c in zip(sweep.h2, medians, counts)))
    if not ok:
        pytest.xfail(f"soft horizon trend not met: outliers {counts}, medians {medians}")


def test_criterion_9_properties(year_days, year_campaign, plant, cfg):
    bat = plant.battery
    round_trip = bat.charge_gain(0.25) / bat.discharge_drain(0.25)
    loss_ok = abs(round_trip - bat.charge_eff * bat.discharge_eff) <= 1e-12
    tele_ok = True
    for n in (1, 5, 10, 17):
        b = BatteryParams(degradation=DegradationParams(num_segments=n))
        total = math.fsum(segment_costs(b) * b.discharge_eff * b.capacity_kwh / n)
        whole = b.degradation.replacement_cost * b.degradation.alpha
        tele_ok &= abs(total - whole) <= 1e-9 * whole
    cols_ok = all(per_slot_columns(g, n) == g + 2 + 3 * n + 3 for g in range(1, 5) for n in range(1, 12))
    report, _ = year_campaign
    dominance_ok = all(d.opt_cost <= d.alg_cost + 1e-6 for d in report.days if d.status == "ok")
    sample = [year_days[i] for i in (3, 150, 260)]
    again = run_campaign(sample, plant, cfg)
    repeat = run_campaign(sample, plant, cfg)
    determinism_ok = again == repeat and all(
        a.ratio == b.ratio for a, b in zip(again.days, (report.days[i] for i in (3, 150, 260))))
    ok = loss_ok and tele_ok and cols_ok and dominance_ok and determinism_ok
    record(9, ok, f"round trip {loss_ok}, telescoping {tele_ok}, column count {cols_ok}, "
                  f"oracle dominance {dominance_ok}, determinism {determinism_ok}")
    assert ok
