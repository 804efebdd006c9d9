import csv

import pytest

from tubedispatch.cli import main


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_show_segments(capsys, tmp_path):
    code, out, _ = run(["show-segments", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert "0.0102953" in out and "0.21242" in out
    assert len(list(csv.reader(open(tmp_path / "segments.csv")))) == 11


def test_show_bounds(capsys):
    code, out, _ = run(["show-bounds"], capsys)
    assert code == 0
    assert "23:30" in out and "0.4525" in out


def test_config_error_exit(capsys, tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("battery.soc_min = 0.95\n")
    code, _, err = run(["show-bounds", "--config", str(p)], capsys)
    assert code == 2 and "soc_min" in err


def test_unknown_key_exit(capsys, tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("# comment\nbatery.soc_min = 0.3\n")
    code, _, err = run(["show-segments", "--config", str(p)], capsys)
    assert code == 2 and ":2:" in err


def test_data_error_exit(capsys, tmp_path):
    p = tmp_path / "short.csv"
    p.write_text("slot,forecast_load_kw,forecast_solar_kw\n0,1,1\n")
    code, _, err = run(["run-day", "--profiles", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == 3 and "expected 96" in err


def test_missing_profiles_exit(capsys, tmp_path):
    code, _, _ = run(["run-day", "--profiles", str(tmp_path / "none.csv")], capsys)
    assert code == 3


def test_infeasible_exit(capsys, tmp_path):
    p = tmp_path / "huge.csv"
    rows = ["slot,forecast_load_kw,actual_load_kw,forecast_solar_kw,actual_solar_kw"]
    rows += [f"{t},2000,2000,0,0" for t in range(96)]
    p.write_text("\n".join(rows) + "\n")
    code, _, err = run(["perfect-dispatch", "--profiles", str(p), "--out", str(tmp_path / "o")], capsys)
    assert code == 4 and "infeasible" in err


def test_run_day_and_rerun(capsys, tmp_path):
    args = ["run-day", "--days", "20", "--day", "7", "--seed", "2"]
    code, out, _ = run(args + ["--out", str(tmp_path / "a")], capsys)
    assert code == 0 and "competitive ratio" in out
    summary = list(csv.reader(open(tmp_path / "a" / "summary.csv")))
    assert len(summary) == 5
    # the echoed config reproduces the run byte for byte
    code, _, _ = run(["run-day", "--config", str(tmp_path / "a" / "config.resolved"), "--out", str(tmp_path / "b")],
                     capsys)
    assert code == 0
    for name in ("slots.csv", "summary.csv", "bounds.csv", "segments.csv", "profiles.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_perfect_dispatch(capsys, tmp_path):
    code, out, _ = run(["perfect-dispatch", "--days", "5", "--day", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "slots.csv")))
    assert len(rows) == 96 and 0.5 <= float(rows[-1]["soc"]) <= 0.6


def test_campaign_and_tightening(capsys, tmp_path):
    code, out, _ = run(["run-campaign", "--days", "2", "--out", str(tmp_path / "c")], capsys)
    assert code == 0 and "median" in out
    rows = list(csv.DictReader(open(tmp_path / "c" / "ratios.csv")))
    assert len(rows) == 2
    cfg = tmp_path / "grid.cfg"
    cfg.write_text("run.rho1_values = 0.05\nrun.rho2_values = 0.1\n")
    code, out, _ = run(["sweep-tightening", "--config", str(cfg), "--days", "2", "--ratios",
                        str(tmp_path / "c" / "ratios.csv"), "--out", str(tmp_path / "t")], capsys)
    assert code == 0
    grid = list(csv.DictReader(open(tmp_path / "t" / "ratios.csv")))
    worst = max(rows, key=lambda r: float(r["ratio"]))
    assert grid[0]["day"] == worst["day"] and grid[0]["ratio"] == worst["ratio"]


def test_sweep_horizon(capsys, tmp_path):
    cfg = tmp_path / "h.cfg"
    cfg.write_text("run.h2_values = 1, 2\n")
    code, out, _ = run(["sweep-horizon", "--config", str(cfg), "--days", "1", "--out", str(tmp_path)], capsys)
    assert code == 0 and "h2=1" in out and "h2=2" in out
    assert len(list(csv.DictReader(open(tmp_path / "distribution.csv")))) == 2


def test_bad_flag_value(capsys):
    with pytest.raises(SystemExit) as err:
        main(["run-day", "--seed", "x"])
    assert err.value.code == 2
