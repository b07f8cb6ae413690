"""
Command-line scenario runner.

    mmrsim simulate <config> [--out DIR] [--seed N]
    mmrsim sweep <config> --param KEY --values v1,v2,... [--out DIR] [--jobs N]
    mmrsim estimate <csv> --rate HZ --band LO,HI [--start S] [--cutoff HZ]

``<config>`` is a scenario file or the name of a bundled scenario. Exit
status is 0 on success, 1 on usage or configuration errors and 2 when a
run fails.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from mmrsim import config, estimation
from mmrsim.errors import ConfigurationError
from mmrsim.sequencer import FrontendType, Recording, run_sequence

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

TRACE_COLUMNS = ("time", "tx_current", "rx_volts", "rx_code")
FIT_COLUMNS = ("frame", "f", "A0", "tau", "phase", "Q", "ok", "fit_start", "residual_rms")
SWEEP_COLUMNS = ("value", "rx_amplitude", "frequency", "q", "ok", "amplitude_ratio")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# ------------------------------------------------------------ config input

def _config_parser(name: str) -> configparser.ConfigParser:
    path = Path(name)
    if not path.is_file():
        try:
            path = config.bundled_path(name)
        except FileNotFoundError:
            raise ConfigurationError(f"cannot read config {name!r}: no such file or bundled scenario") from None
    try:
        return config.read_parser(path)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {name!r}: {exc.strerror}") from None


# ----------------------------------------------------------------- outputs

def write_trace(path: Path, frame) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(frame.time, frame.tx_current, frame.rx_volts, frame.rx_codes):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])


def fit_row(index: int, fit, fit_start: float) -> list[str]:
    q = estimation.quality_factor(fit) if fit.ok else math.nan
    vals = (index, fit.frequency, fit.amplitude0, fit.tau_decay, fit.phase, q, fit.ok, fit_start,
            fit.residual_rms)
    return [_num(v) for v in vals]


def write_outputs(out: Path, scenario: config.Scenario, rec: Recording) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for fr in rec.frames:
        write_trace(out / f"frame_{fr.index:03d}.csv", fr)
    with (out / "fits.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for fr in rec.frames:
            w.writerow(fit_row(fr.index, fr.fit, fr.fit_start))

    last = rec.frames[-1] if rec.frames else None
    summary = {
        "name": scenario.name,
        "seed": str(scenario.seed),
        "frontend": FrontendType.of(scenario.frontend).value,
        "frames": str(len(rec)),
        "frame_length": _num(scenario.schedule.frame_length),
        "sample_rate": _num(rec.sample_rate),
    }
    if last is not None:
        summary.update(
            rx_amplitude=_num(last.fit.amplitude0),
            frequency=_num(last.fit.frequency),
            fit_ok=_num(last.fit.ok),
            peak_rx_volts=_num(max(float(np.max(np.abs(f.rx_volts))) for f in rec.frames)),
            peak_tx_current=_num(max(float(np.max(np.abs(f.tx_current))) for f in rec.frames)),
            rx_onset=_num(last.rx_onset),
        )
    with (out / "summary.ini").open("w") as fh:
        fh.write("[summary]\n")
        for k, v in summary.items():
            fh.write(f"{k} = {v}\n")
        fh.write("\n")
        fh.write(config.dump_scenario(scenario))


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    cp = _config_parser(args.config)
    if args.seed is not None:
        config.set_value(cp, "run.seed", str(args.seed))
    scenario = config.scenario_from_parser(cp)
    out = Path(args.out) if args.out else Path("out") / scenario.name

    def report(fr):
        fit = fr.fit
        print(f"frame {fr.index}: f={fit.frequency:.4f} Hz A0={fit.amplitude0:.4e} V "
              f"tau={fit.tau_decay:.4f} s ok={fit.ok}")

    rec = run_sequence(scenario, progress=report)
    write_outputs(out, scenario, rec)
    print(f"wrote {len(rec)} frame(s) to {out}")
    return EXIT_OK


def steady_state(scenario: config.Scenario) -> tuple[float, float, float, bool]:
    """Last frame's ring-down (amplitude, frequency, Q, ok)."""
    fit = run_sequence(scenario).frames[-1].fit
    q = estimation.quality_factor(fit) if fit.ok else math.nan
    return fit.amplitude0, fit.frequency, q, fit.ok


def _parse_values(text: str) -> list[float]:
    values = []
    for part in text.split(","):
        if part.strip():
            try:
                values.append(float(part))
            except ValueError:
                raise UsageError(f"--values: {part.strip()!r} is not a number") from None
    return values


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    cp = _config_parser(args.config)
    base = config.scenario_from_parser(cp)
    if not values:
        print("no sweep values given; nothing to do")
        return EXIT_OK
    scenarios = []
    for v in values:
        trial = copy.deepcopy(cp)
        config.set_value(trial, args.param, repr(v))
        scenarios.append(config.scenario_from_parser(trial))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(steady_state, scenarios))
    else:
        results = [steady_state(s) for s in scenarios]

    ref = results[0][0]
    out = Path(args.out) if args.out else Path("out") / f"{base.name}_sweep"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for v, (amp, f, q, ok) in zip(values, results):
            ratio = amp / ref if ref > 0 else math.nan
            w.writerow([_num(v), _num(amp), _num(f), _num(q), _num(ok), _num(ratio)])
            print(f"{args.param}={v!r}: rx_amplitude={amp:.4e} V f={f:.4f} Hz Q={q:.1f} ratio={ratio:.4f}")
    print(f"wrote {out / 'sweep.csv'}")
    return EXIT_OK


def read_trace(path: str | Path, column: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Time and voltage columns of a trace CSV."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise ConfigurationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if "time" not in header:
        raise ConfigurationError(f"{path}: header needs a 'time' column")
    if column is None:
        column = next((c for c in ("rx_volts", "volts") if c in header), None)
        if column is None:
            raise ConfigurationError(f"{path}: header needs an 'rx_volts' or 'volts' column")
    elif column not in header:
        raise ConfigurationError(f"{path}: no column {column!r}")
    ti, vi = header.index("time"), header.index(column)
    body = [r for r in rows[1:] if r]
    if not body:
        raise ConfigurationError(f"{path}: no data rows")
    try:
        t = np.array([float(r[ti]) for r in body])
        v = np.array([float(r[vi]) for r in body])
    except (ValueError, IndexError):
        raise ConfigurationError(f"{path}: malformed data row") from None
    return t, v


def _parse_band(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"--band expects LO,HI, got {text!r}") from None
    return lo, hi


def cmd_estimate(args) -> int:
    band = _parse_band(args.band)
    t, v = read_trace(args.csv, args.column)
    if not args.rate > 0:
        raise UsageError("--rate must be > 0")
    if args.start is not None:
        v = v[t >= args.start - 0.5 / args.rate]
    try:
        x = estimation.preprocess(v, args.rate, args.cutoff)
        fit = estimation.estimate_decay(x, args.rate, band)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    q = estimation.quality_factor(fit) if fit.ok else math.nan
    for key, val in (("frequency", fit.frequency), ("amplitude0", fit.amplitude0),
                     ("tau_decay", fit.tau_decay), ("phase", fit.phase), ("q", q),
                     ("residual_rms", fit.residual_rms), ("iterations", fit.iterations), ("ok", fit.ok)):
        print(f"{key}={_num(val)}")
    print(f"reason={fit.reason}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mmrsim", description="Magneto-mechanical resonator readout simulator")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run a scenario and write traces, fits and a summary")
    p.add_argument("config", help="scenario file or bundled scenario name")
    p.add_argument("--out", help="output directory (default out/<name>)")
    p.add_argument("--seed", type=int, help="override run.seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run one scenario per parameter value")
    p.add_argument("config")
    p.add_argument("--param", required=True, help="config key, e.g. frontend.duty_cycle")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out", help="output directory (default out/<name>_sweep)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("estimate", help="fit a decaying sinusoid to a recorded trace")
    p.add_argument("csv")
    p.add_argument("--rate", type=float, required=True, help="sample rate in Hz")
    p.add_argument("--band", required=True, help="search band LO,HI in Hz")
    p.add_argument("--start", type=float, help="fit only samples with time >= START")
    p.add_argument("--cutoff", type=float, default=2000.0, help="low-pass cutoff in Hz")
    p.add_argument("--column", help="voltage column (default rx_volts or volts)")
    p.set_defaults(func=cmd_estimate)

    sub.add_parser("scenarios", help="list bundled scenarios").set_defaults(
        func=lambda args: print("\n".join(config.bundled_scenarios())) or EXIT_OK
    )
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
