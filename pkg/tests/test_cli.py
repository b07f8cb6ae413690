import configparser
import csv
import math
import subprocess
import sys

import pytest

from mmrsim.cli import main, read_trace
from mmrsim.config import bundled_path, parse_scenario
from mmrsim.errors import ConfigurationError
from synthetic import FS, noisy_ringdown


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def estimate_output(capsys):
    out = capsys.readouterr().out
    return dict(line.split("=", 1) for line in out.strip().splitlines())


@pytest.fixture(scope="module")
def duty08_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("duty08")
    assert main(["simulate", "type2_duty08", "--out", str(out)]) == 0
    return out


def test_simulate_outputs(duty08_run):
    out = duty08_run
    frames = sorted(p.name for p in out.glob("frame_*.csv"))
    assert frames == ["frame_000.csv", "frame_001.csv", "frame_002.csv"]
    with open(out / "frame_000.csv") as fh:
        assert fh.readline().strip() == "time,tx_current,rx_volts,rx_code"
    fits = read_csv(out / "fits.csv")
    assert len(fits) == 3
    f1 = float(fits[0]["f"])
    # the bundled resonator sits at its geometric resonance, driven at 200 Hz
    assert f1 == pytest.approx(200.0, rel=0.1)
    assert fits[0]["ok"] == "true"
    assert float(fits[0]["Q"]) == pytest.approx(math.pi * f1 * float(fits[0]["tau"]))


def test_summary_echo_reloads(duty08_run):
    text = (duty08_run / "summary.ini").read_text()
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    assert cp["summary"]["seed"] == "1"
    assert cp["summary"]["frames"] == "3"
    echoed = parse_scenario(text)
    original = parse_scenario(bundled_path("type2_duty08").read_text())
    assert echoed == original


def test_simulate_is_byte_identical(tmp_path):
    cfg = tmp_path / "short.ini"
    cfg.write_text(bundled_path("type1_50uT").read_text().replace("n_frames = 3", "n_frames = 1"))
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", str(cfg), "--out", str(a), "--seed", "9"]) == 0
    assert main(["simulate", str(cfg), "--out", str(b), "--seed", "9"]) == 0
    assert main(["simulate", str(cfg), "--out", str(c), "--seed", "10"]) == 0
    for name in ("frame_000.csv", "fits.csv", "summary.ini"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "frame_000.csv").read_bytes() != (c / "frame_000.csv").read_bytes()
    assert "seed = 10" in (c / "summary.ini").read_text()


def test_missing_config(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "nope.ini")]) == 1
    assert "nope.ini" in capsys.readouterr().err


def test_invalid_config_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[frontend]\ntype = type2\nv_dc = 1\nduty_cycle = 3\n")
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "duty_cycle" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["simulate"]) == 1
    assert main(["estimate", "x.csv", "--rate", "5e4", "--band", "oops"]) == 1
    err = capsys.readouterr().err
    assert "required" in err and "--band" in err


def test_sweep_duty_ratio(tmp_path):
    out = tmp_path / "sw"
    assert main(["sweep", "type2_duty08", "--param", "frontend.duty_cycle", "--values", "0.2,0.8",
                 "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert [float(r["value"]) for r in rows] == [0.2, 0.8]
    assert float(rows[0]["amplitude_ratio"]) == 1.0
    assert float(rows[1]["amplitude_ratio"]) == pytest.approx(3.0, abs=0.7)


def test_sweep_linear_in_drive(tmp_path):
    cfg = tmp_path / "lin.ini"
    cfg.write_text(bundled_path("type1_50uT").read_text().replace("n_frames = 3", "n_frames = 2"))
    out = tmp_path / "sw"
    assert main(["sweep", str(cfg), "--param", "peak_field", "--values", "25e-6,50e-6", "--out", str(out),
                 "--jobs", "2"]) == 0
    rows = read_csv(out / "sweep.csv")
    assert float(rows[1]["amplitude_ratio"]) == pytest.approx(2.0, rel=0.05)


def test_sweep_edge_cases(tmp_path, capsys):
    assert main(["sweep", "type2_duty08", "--param", "duty_cycle", "--values", "", "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "sweep.csv").exists()
    assert main(["sweep", "type2_duty08", "--param", "frontend.bogus", "--values", "1"]) == 1
    assert "bogus" in capsys.readouterr().err
    assert main(["sweep", "type2_duty08", "--param", "duty_cycle", "--values", "1,abc"]) == 1


def test_estimate_matches_in_run_fit(duty08_run, capsys):
    fits = read_csv(duty08_run / "fits.csv")
    for k in (0, 2):
        assert main(["estimate", str(duty08_run / f"frame_{k:03d}.csv"), "--rate", "50000",
                     "--band", "50,1000", "--start", fits[k]["fit_start"]]) == 0
        got = estimate_output(capsys)
        for key, col in (("frequency", "f"), ("amplitude0", "A0"), ("tau_decay", "tau"), ("phase", "phase")):
            assert float(got[key]) == pytest.approx(float(fits[k][col]), rel=1e-9)


def test_estimate_external_trace(tmp_path, capsys):
    t, x = noisy_ringdown(30.0, seed=4, frequency=205.0, tau=0.6, amplitude=2e-3, phase=-1.0)
    p = tmp_path / "ext.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "volts"])
        w.writerows(zip(t.tolist(), x.tolist()))
    assert main(["estimate", str(p), "--rate", str(FS), "--band", "100,400"]) == 0
    got = estimate_output(capsys)
    assert got["ok"] == "true"
    assert float(got["frequency"]) == pytest.approx(205.0, rel=1e-3)
    assert float(got["tau_decay"]) == pytest.approx(0.6, rel=0.1)
    assert float(got["amplitude0"]) == pytest.approx(2e-3, rel=0.05)


def test_estimate_failed_fit_still_exits_zero(tmp_path, capsys):
    p = tmp_path / "zeros.csv"
    p.write_text("time,volts\n" + "".join(f"{k / FS!r},0.0\n" for k in range(5000)))
    assert main(["estimate", str(p), "--rate", str(FS), "--band", "100,400"]) == 0
    assert estimate_output(capsys)["ok"] == "false"


def test_estimate_bad_csv(tmp_path, capsys):
    p = tmp_path / "hdr.csv"
    p.write_text("time,volts\n")
    assert main(["estimate", str(p), "--rate", "50000", "--band", "50,1000"]) == 1
    assert "no data rows" in capsys.readouterr().err
    p.write_text("a,b\n1,2\n")
    assert main(["estimate", str(p), "--rate", "50000", "--band", "50,1000"]) == 1
    p.write_text("time,volts\n0.0,abc\n")
    with pytest.raises(ConfigurationError, match="malformed"):
        read_trace(p)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "mmrsim", "scenarios"], capture_output=True, text=True)
    assert r.returncode == 0
    assert "type2_duty08" in r.stdout.split()
    r = subprocess.run([sys.executable, "-m", "mmrsim", "simulate", "/nonexistent.ini"], capture_output=True,
                       text=True)
    assert r.returncode == 1 and r.stderr
