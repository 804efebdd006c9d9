import csv
import os

import numpy as np
import pytest

from tubedispatch import ConfigError, DataError, ScenarioDay, UncertaintyConfig, load_config, load_profiles
from tubedispatch.io import (
    SUMMARY_METRICS,
    config_from_values,
    emit_results,
    fmt_money,
    fmt_power,
    format_config,
    parse_config_text,
    write_bounds,
    write_profiles,
    write_segments,
)

TABLE_IV_LABELS = (
    "Perfect dispatch cost by offline optimization ($)",
    "Total cost calculated by tube-based MPC ($)",
    "Cost increase amount ($)",
    "Competitive ratio",
)


def cfg_from(text):
    return config_from_values(parse_config_text(text, "test.cfg"))


class TestConfig:
    def test_empty_gives_defaults(self, tmp_path):
        p = tmp_path / "empty.cfg"
        p.write_text("")
        cfg = load_config(p)
        bat = cfg.plant.battery
        assert (bat.capacity_kwh, bat.degradation.replacement_cost, bat.soc_min, bat.soc_max) == (400, 80000, 0.2, 0.9)
        assert (bat.soc_terminal_lo, bat.soc_terminal_hi, bat.charge_max_kw, bat.discharge_max_kw) == (0.5, 0.6, 80, 80)
        assert (bat.num_segments, bat.charge_eff, bat.degradation.alpha, bat.degradation.beta) == (10, 0.95, 5.24e-4, 1.03)
        g1, g2 = cfg.plant.generators
        assert (g1.a2, g1.a1, g1.p_min, g1.p_max, g1.ramp_up) == (0.0013, 0.062, 6, 52, 240)
        assert (g2.a2, g2.a1, g2.p_min, g2.p_max, g2.ramp_up) == (0.0010, 0.057, 16.4, 92, 280)
        grid = cfg.plant.grid
        assert (grid.buy_max_kw, grid.sell_max_kw, grid.loss_factor) == (250, 250, 0.01)
        assert max(grid.tariff.buy) == 0.116 and min(grid.tariff.buy) == 0.072
        assert grid.tariff.sell[40] == 0.058
        assert cfg.plant.time.slot_hours == 0.25
        c = cfg.controller
        assert (c.rho1, c.rho2, c.epsilon, c.mu_x, c.mu_u, c.h1_len, c.h2_len) == (0.05, 0.1, 0.001, 400, 1, 8, 2)
        assert cfg == load_config(None)

    def test_invariant_error_named(self):
        with pytest.raises(ConfigError, match="soc_min < soc_max"):
            cfg_from("battery.soc_min = 0.95\n")

    def test_five_segments(self):
        from tubedispatch import segment_costs

        cfg = cfg_from("degradation.num_segments = 5  # coarser\n")
        c = segment_costs(cfg.plant.battery)
        assert c.size == 5 and np.all(np.diff(c) > 0)

    @pytest.mark.parametrize("text, pattern", [
        ("nonsense.key = 1", r"test.cfg:1: unknown key 'nonsense.key'"),
        ("\n\nbattery.soc_min = low", r"test.cfg:3: key 'battery.soc_min': cannot parse"),
        ("battery.soc_min 0.3", r"test.cfg:1: expected 'key = value'"),
        ("time.slot_hours = 0.25\ntime.slot_hours = 0.5", r"test.cfg:2: duplicate key"),
        ("controller.h1_len = 2.5", r"controller.h1_len"),
        ("battery.soc_min =", r"has no value"),
        ("run.rho1_values = 0.1,,0.2", r"run.rho1_values"),
        ("battery.capacity_kwh = inf", r"cannot parse"),
    ])
    def test_schema_errors(self, text, pattern):
        with pytest.raises(ConfigError, match=pattern):
            cfg_from(text)

    def test_generators(self):
        cfg = cfg_from("generator.2.p_max = 80\n")
        assert cfg.plant.generators[1].p_max == 80
        with pytest.raises(ConfigError, match="beyond generator.count"):
            cfg_from("generator.count = 1\ngenerator.2.a2 = 0.1\n")
        with pytest.raises(ConfigError, match="missing keys"):
            cfg_from("generator.count = 3\n")
        text = "generator.count = 3\n" + "".join(
            f"generator.3.{k} = {v}\n" for k, v in dict(a2=0.001, a1=0.05, a0=1, p_min=0, p_max=30, ramp_up=30,
                                                          ramp_down=30).items())
        assert cfg_from(text).plant.n_gen == 3

    def test_tariff_and_grid(self):
        cfg = cfg_from("tariff.peak_price = 0.2\ntariff.sell_ratio = 0.25\ntime.slot_hours = 0.5\ntime.slots_per_day = 48")
        assert len(cfg.plant.grid.tariff.buy) == 48
        assert cfg.plant.grid.tariff.sell[20] == pytest.approx(0.05)

    def test_cross_section_checks(self):
        with pytest.raises(ConfigError, match="initial_soc"):
            cfg_from("run.initial_soc = 0.1")
        with pytest.raises(ConfigError, match="h2_values"):
            cfg_from("run.h2_values = 1, 9")
        with pytest.raises(ConfigError, match="run.mode"):
            cfg_from("run.mode = fast")

    def test_echo_round_trip(self):
        cfg = cfg_from("battery.capacity_kwh = 512.5\nuncertainty.seed = 17\nrun.h2_values = 1, 3\n"
                       "run.profiles = 'x y.csv'\ncontroller.mu_x = 0.1")
        again = cfg_from(format_config(cfg))
        assert again == cfg
        assert format_config(again) == format_config(cfg)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "missing.cfg")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


FULL = ["slot", "forecast_load_kw", "actual_load_kw", "forecast_solar_kw", "actual_solar_kw"]


class TestProfiles:
    def test_valid(self, tmp_path):
        p = tmp_path / "day.csv"
        write_rows(p, FULL, [[t, 100 + t, 101 + t, 0 if t < 30 else 5, 0 if t < 30 else 6] for t in range(96)])
        day = load_profiles(p)
        assert isinstance(day, ScenarioDay) and day.slots == 96
        assert day.actual_load[3] == 104 and day.forecast_renewable[40] == 5

    def test_wrong_row_count(self, tmp_path):
        p = tmp_path / "day.csv"
        write_rows(p, FULL, [[t, 1, 1, 1, 1] for t in range(95)])
        with pytest.raises(DataError, match="expected 96"):
            load_profiles(p)

    def test_negative_value(self, tmp_path):
        p = tmp_path / "day.csv"
        rows = [[t, 1, 1, 1, 1] for t in range(96)]
        rows[10][2] = -3
        write_rows(p, FULL, rows)
        with pytest.raises(DataError, match=r"row 12: column 'actual_load_kw': negative"):
            load_profiles(p)

    def test_malformed(self, tmp_path):
        p = tmp_path / "day.csv"
        rows = [[t, 1, 1, 1, 1] for t in range(96)]
        rows[0][1] = "1,5x"
        write_rows(p, FULL, rows)
        with pytest.raises(DataError, match=r"row 2: column 'forecast_load_kw': malformed"):
            load_profiles(p)

    def test_slot_sequence(self, tmp_path):
        p = tmp_path / "day.csv"
        rows = [[t, 1, 1, 1, 1] for t in range(96)]
        rows[5][0] = 7
        write_rows(p, FULL, rows)
        with pytest.raises(DataError, match="row 7: slot '7', expected 5"):
            load_profiles(p)

    def test_missing_required_column(self, tmp_path):
        p = tmp_path / "day.csv"
        write_rows(p, ["slot", "forecast_load_kw"], [[t, 1] for t in range(96)])
        with pytest.raises(DataError, match="missing columns"):
            load_profiles(p)

    def test_actuals_synthesised(self, tmp_path, year):
        p = tmp_path / "day.csv"
        f = year[150]
        write_rows(p, ["slot", "forecast_load_kw", "forecast_solar_kw"],
                   [[t, f.load[t], f.renewable[t]] for t in range(96)])
        u = UncertaintyConfig(seed=4)
        a = load_profiles(p, uncertainty=u, day_index=2)
        b = load_profiles(p, uncertainty=u, day_index=2)
        np.testing.assert_array_equal(a.actual_load, b.actual_load)
        assert not np.array_equal(a.actual_load, a.forecast_load)
        c = load_profiles(p, uncertainty=UncertaintyConfig(seed=5), day_index=2)
        assert not np.array_equal(a.actual_load, c.actual_load)

    def test_round_trip(self, tmp_path, noisy_day):
        p = write_profiles(noisy_day, tmp_path / "p.csv")
        back = load_profiles(p)
        for name in ("forecast_renewable", "actual_renewable", "forecast_load", "actual_load"):
            np.testing.assert_allclose(getattr(back, name), getattr(noisy_day, name), rtol=5e-6, atol=1e-6)
        # a second trip is exact: the text is already at print precision
        p2 = write_profiles(back, tmp_path / "p2.csv")
        assert p.read_bytes() == p2.read_bytes()


class TestFormatting:
    @pytest.mark.parametrize("x, s", [(0.0102952685, "0.0102953"), (123456789.0, "123457000"), (0.6, "0.6"),
                                      (1.5e-7, "0"), (-0.0, "0"), (2.5e-5, "0.000025"), (float("nan"), "nan")])
    def test_power(self, x, s):
        assert fmt_power(x) == s

    def test_money(self):
        assert fmt_money(574.391) == "574.3910" and fmt_money(-0.00001) == "0.0000"


class TestEmit:
    def test_segments_and_bounds(self, tmp_path, plant):
        write_segments(plant, tmp_path / "segments.csv")
        rows = list(csv.DictReader(open(tmp_path / "segments.csv")))
        assert len(rows) == 10
        assert float(rows[0]["cost_per_kwh"]) == pytest.approx(0.010295, abs=1e-6)
        assert float(rows[-1]["cost_per_kwh"]) == pytest.approx(0.21242, abs=1e-5)
        write_bounds(plant, tmp_path / "bounds.csv")
        rows = list(csv.DictReader(open(tmp_path / "bounds.csv")))
        assert len(rows) == 96 and rows[94]["clock"] == "23:30"
        assert float(rows[94]["soc_lower"]) == 0.4525

    def test_day_outputs(self, tmp_path, noisy_day, plant, cfg):
        from tubedispatch import RunConfig, run_day

        rc = RunConfig()
        result = run_day(noisy_day, 0.6, plant, cfg)
        paths = emit_results(result, rc, tmp_path / "a", day=noisy_day, opt_cost=result.cost / 1.03, ratio=1.03)
        names = {p.name for p in paths}
        assert {"slots.csv", "bounds.csv", "segments.csv", "summary.csv", "config.resolved"} <= names
        summary = list(csv.reader(open(tmp_path / "a" / "summary.csv")))
        assert tuple(r[0] for r in summary[1:]) == TABLE_IV_LABELS == SUMMARY_METRICS
        assert summary[-1][1] == "1.0300"
        slots = list(csv.DictReader(open(tmp_path / "a" / "slots.csv")))
        assert len(slots) == 96 and slots[4]["clock"] == "01:00"
        assert float(slots[-1]["actual_soc"]) == pytest.approx(result.terminal_soc, rel=1e-5)
        emit_results(result, rc, tmp_path / "b", day=noisy_day, opt_cost=result.cost / 1.03, ratio=1.03)
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert not [f for f in os.listdir(tmp_path / "a") if f.startswith(".")]

    def test_unwritable(self, tmp_path, plant):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="cannot write"):
            write_segments(plant, blocker / "segments.csv")

    def test_unknown_product(self, tmp_path):
        from tubedispatch import RunConfig

        with pytest.raises(TypeError):
            emit_results(object(), RunConfig(), tmp_path)
