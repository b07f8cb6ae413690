"""
Scenario files.

A scenario is an INI file with one section per subsystem. Loading validates
every value through the dataclass constructors; :func:`dump_scenario` writes
the fully resolved form, which loads back to an equal :class:`Scenario`.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from mmrsim.acquisition import AdcConfig, LnaConfig
from mmrsim.errors import ConfigurationError
from mmrsim.frontend import ClassDRelayConfig, HBridgeConfig, effective_resistance
from mmrsim.magnetics import CoilChannel, SquareLoop, helmholtz_pair, sensitivity
from mmrsim.resonator import MmrParams
from mmrsim.sequencer import ControlState, FrameSchedule


@dataclass(frozen=True)
class EstimationSettings:
    band_lo: float = 50.0
    band_hi: float = 1000.0
    cutoff: float = 2000.0

    def __post_init__(self) -> None:
        if not 0 <= self.band_lo < self.band_hi:
            raise ConfigurationError("estimation band needs 0 <= band_lo < band_hi")
        if not self.cutoff > 0:
            raise ConfigurationError("estimation cutoff must be > 0")


@dataclass(frozen=True)
class Scenario:
    coil: CoilChannel
    resonator: MmrParams
    frontend: ClassDRelayConfig | HBridgeConfig
    lna: LnaConfig
    adc: AdcConfig
    schedule: FrameSchedule
    control: ControlState
    control_enabled: bool = False
    estimation: EstimationSettings = EstimationSettings()
    sensor_gain: float = 1.0
    name: str = "scenario"

    def __post_init__(self) -> None:
        if not isinstance(self.frontend, (ClassDRelayConfig, HBridgeConfig)):
            raise ConfigurationError("frontend must be exactly one of type1 or type2")
        if not self.sensor_gain > 0:
            raise ConfigurationError("acquisition.sensor_gain must be > 0")
        if self.estimation.band_hi > 0.5 * self.adc.sample_rate:
            raise ConfigurationError("estimation.band_hi exceeds the Nyquist frequency")
        if self.estimation.cutoff >= 0.5 * self.adc.sample_rate:
            raise ConfigurationError("estimation.cutoff must be below the Nyquist frequency")

    @property
    def seed(self) -> int:
        return self.adc.rng_seed

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, adc=replace(self.adc, rng_seed=int(seed)))


# ---------------------------------------------------------------- parsing

def _vec(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValueError("expected three numbers")
    return tuple(parts)  # type: ignore[return-value]


def _loops(text: str) -> tuple[SquareLoop, ...]:
    loops = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        v = [float(p) for p in chunk.replace(",", " ").split()]
        if len(v) != 7:
            raise ValueError("each loop needs 'cx cy cz side nx ny nz'")
        loops.append(SquareLoop(tuple(v[:3]), v[3], tuple(v[4:])))
    return tuple(loops)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _int(text: str) -> int:
    x = float(text)
    if x != int(x):
        raise ValueError("expected an integer")
    return int(x)


SCHEMA: dict[str, dict[str, Callable[[str], Any]]] = {
    "run": {"name": str, "seed": _int},
    "coil": {
        "label": str, "turns_per_loop": _int, "inductance": float, "resistance": float,
        "loops": _loops, "side": float, "separation": float, "axis": _vec, "center": _vec,
    },
    "resonator": {
        "m_rotator": float, "m_stator": float, "inertia": float, "center_distance": float,
        "quality_factor": float, "rest_axis": _vec, "rotation_axis": _vec, "position": _vec,
        "rotator_diameter": float, "stator_diameter": float, "stator_height": float, "gap": float,
        "rotator_magnetization": float, "stator_magnetization": float, "density": float,
    },
    "frontend": {
        "type": str, "drive_frequency": float, "drive_phase": float, "peak_field": float,
        "drive_amplitude": float, "startup_delay": float, "relay_operate_time": float,
        "relay_release_time": float, "varistor_clamp_voltage": float, "hot_switch_allowed": _bool,
        "max_frequency": float,
        "v_dc": float, "duty_cycle": float, "rds_on": float, "gate_dead_time": float, "r_rx": float,
    },
    "acquisition": {
        "gain": float, "input_noise_density": float, "clip_level": float, "bandwidth": float,
        "bits": _int, "sample_rate": float, "full_scale": float, "sensor_gain": float,
    },
    "schedule": {
        "t_tx": float, "t_rx": float, "tx_switch_idle": float, "rx_switch_idle": float, "n_frames": _int,
    },
    "control": {
        "enabled": _bool, "target_rx_amplitude": float, "n_drive_periods": _int, "gain": float,
        "amplitude_limit": float,
    },
    "estimation": {"band_lo": float, "band_hi": float, "cutoff": float},
}

_TYPE1 = {"type1", "classd_relay", "class-d", "classd"}
_TYPE2 = {"type2", "hbridge", "h-bridge"}
_TYPE1_KEYS = {"drive_amplitude", "startup_delay", "relay_operate_time", "relay_release_time",
               "varistor_clamp_voltage", "hot_switch_allowed", "max_frequency"}
_TYPE2_KEYS = {"v_dc", "duty_cycle", "rds_on", "gate_dead_time", "r_rx"}


def _new_parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keys are case-sensitive identifiers
    return cp


def _read_sections(cp: configparser.ConfigParser) -> dict[str, dict[str, Any]]:
    out: dict[str, dict[str, Any]] = {name: {} for name in SCHEMA}
    for section in cp.sections():
        if section == "summary":
            continue
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, raw in cp.items(section):
            conv = SCHEMA[section].get(key)
            if conv is None:
                raise ConfigurationError(f"{section}.{key}: unknown key")
            try:
                out[section][key] = conv(raw)
            except (ValueError, ConfigurationError) as exc:
                raise ConfigurationError(f"{section}.{key}: cannot parse {raw!r} ({exc})") from None
    return out


def _build(kind: str, fn: Callable[..., Any], **kw):
    try:
        return fn(**kw)
    except ConfigurationError as exc:
        raise ConfigurationError(f"[{kind}] {exc}") from None
    except TypeError as exc:
        raise ConfigurationError(f"[{kind}] {exc}") from None


def _coil(v: dict) -> CoilChannel:
    common = {k: v[k] for k in ("label", "turns_per_loop", "inductance", "resistance") if k in v}
    if "loops" in v:
        extra = {"side", "separation", "axis", "center"} & v.keys()
        if extra:
            raise ConfigurationError(f"coil.{sorted(extra)[0]}: not allowed together with coil.loops")
        return _build("coil", CoilChannel, loops=v["loops"], **common)
    geo = {k: v[k] for k in ("side", "separation", "axis", "center") if k in v}
    return _build("coil", helmholtz_pair, **geo, **common)


def _resonator(v: dict) -> MmrParams:
    geo_keys = ("rotator_diameter", "stator_diameter", "stator_height", "gap",
                "rotator_magnetization", "stator_magnetization", "density")
    geo = {k: v[k] for k in geo_keys if k in v}
    axes = {k: v[k] for k in ("quality_factor", "rest_axis", "rotation_axis", "position") if k in v}
    base = _build("resonator", MmrParams.from_magnets, **geo, **axes)
    direct = {k: v[k] for k in ("m_rotator", "m_stator", "inertia", "center_distance") if k in v}
    if direct and geo:
        raise ConfigurationError(
            f"resonator.{sorted(direct)[0]}: give either magnet geometry or direct parameters, not both"
        )
    return _build("resonator", lambda **kw: replace(base, **kw), **direct) if direct else base


def _frontend(v: dict, coil: CoilChannel, res: MmrParams):
    kind = v.get("type", "").strip().lower()
    peak = v.get("peak_field")
    if kind in _TYPE1:
        wrong = _TYPE2_KEYS & v.keys()
        cls, level_key = ClassDRelayConfig, "drive_amplitude"
    elif kind in _TYPE2:
        wrong = _TYPE1_KEYS & v.keys()
        cls, level_key = HBridgeConfig, "v_dc"
    else:
        raise ConfigurationError(f"frontend.type: expected type1 or type2, got {kind!r}")
    if wrong:
        raise ConfigurationError(f"frontend.{sorted(wrong)[0]}: not valid for frontend type {kind}")
    kw = {k: val for k, val in v.items() if k not in ("type", "peak_field")}
    if level_key not in kw:
        if peak is None:
            raise ConfigurationError(f"frontend.{level_key}: required (or give frontend.peak_field)")
        s = sensitivity(coil, res.position).norm()
        i_peak = peak / s
        if cls is ClassDRelayConfig:
            f = kw.get("drive_frequency", 200.0)
            kw[level_key] = i_peak * math.hypot(coil.resistance, 2 * math.pi * f * coil.inductance)
        else:
            probe = HBridgeConfig(v_dc=1.0, rds_on=kw.get("rds_on", 3.4e-3))
            kw[level_key] = i_peak * effective_resistance(probe, coil)
    return _build("frontend", cls, **kw)


def scenario_from_parser(cp: configparser.ConfigParser) -> Scenario:
    v = _read_sections(cp)
    coil = _coil(v["coil"])
    res = _resonator(v["resonator"])
    fe = _frontend(v["frontend"], coil, res)

    acq = dict(v["acquisition"])
    sensor_gain = acq.pop("sensor_gain", 1.0)
    adc_kw = {k: acq.pop(k) for k in ("bits", "sample_rate", "full_scale") if k in acq}
    adc_kw["rng_seed"] = v["run"].get("seed", 0)
    adc = _build("acquisition", AdcConfig, **adc_kw)
    acq.setdefault("bandwidth", 0.5 * adc.sample_rate)
    lna = _build("acquisition", LnaConfig, **acq)

    schedule = _build("schedule", FrameSchedule.for_frontend, cfg=fe, **v["schedule"])
    ctl = dict(v["control"])
    enabled = ctl.pop("enabled", False)
    control = _build("control", ControlState.from_frontend, cfg=fe, **ctl)
    est = _build("estimation", EstimationSettings, **v["estimation"])
    return _build(
        "run", Scenario,
        coil=coil, resonator=res, frontend=fe, lna=lna, adc=adc, schedule=schedule,
        control=control, control_enabled=enabled, estimation=est, sensor_gain=sensor_gain,
        name=v["run"].get("name", "scenario"),
    )


def _parse_text(text: str, source: str) -> configparser.ConfigParser:
    cp = _new_parser()
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigurationError(f"{source}, line {lineno}: cannot parse {line}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    return cp


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    return scenario_from_parser(_parse_text(text, source))


def read_parser(path: str | Path) -> configparser.ConfigParser:
    return _parse_text(Path(path).read_text(), str(path))


def load_scenario(path: str | Path) -> Scenario:
    """Read a scenario file; ``OSError`` if unreadable, :class:`ConfigurationError` if invalid."""
    return scenario_from_parser(read_parser(path))


def set_value(cp: configparser.ConfigParser, key: str, value: str) -> str:
    """Set ``section.key`` (or an unambiguous bare key) in place; returns the qualified name."""
    if "." in key:
        section, name = key.split(".", 1)
        if name not in SCHEMA.get(section, {}):
            raise ConfigurationError(f"unknown parameter {key!r}")
    else:
        owners = [s for s, keys in SCHEMA.items() if key in keys]
        if not owners:
            raise ConfigurationError(f"unknown parameter {key!r}")
        if len(owners) > 1:
            raise ConfigurationError(
                f"parameter {key!r} is ambiguous; use one of " + ", ".join(f"{s}.{key}" for s in owners)
            )
        section, name = owners[0], key
    if not cp.has_section(section):
        cp.add_section(section)
    cp.set(section, name, value)
    return f"{section}.{name}"


def bundled_scenarios() -> list[str]:
    root = resources.files("mmrsim") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def bundled_path(name: str) -> Path:
    """Path of a bundled scenario by name (``type2_duty08``) or file name."""
    stem = name[:-4] if name.endswith(".ini") else name
    path = Path(str(resources.files("mmrsim") / "scenarios" / f"{stem}.ini"))
    if not path.is_file():
        raise FileNotFoundError(f"no bundled scenario {name!r}; available: {', '.join(bundled_scenarios())}")
    return path


# ----------------------------------------------------------------- dumping

def _fmt(x: Any) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, tuple):
        return ", ".join(_fmt(float(c)) for c in x)
    return str(x)


def scenario_sections(sc: Scenario) -> dict[str, dict[str, str]]:
    """Resolved configuration as ``{section: {key: text}}``."""
    loops = "; ".join(
        " ".join(_fmt(float(c)) for c in (*lp.center, lp.side, *lp.normal)) for lp in sc.coil.loops
    )
    r = sc.resonator
    fe = sc.frontend
    if isinstance(fe, ClassDRelayConfig):
        front = {"type": "type1", "drive_amplitude": fe.drive_amplitude, "drive_frequency": fe.drive_frequency,
                 "drive_phase": fe.drive_phase, "startup_delay": fe.startup_delay,
                 "relay_operate_time": fe.relay_operate_time, "relay_release_time": fe.relay_release_time,
                 "varistor_clamp_voltage": fe.varistor_clamp_voltage,
                 "hot_switch_allowed": fe.hot_switch_allowed, "max_frequency": fe.max_frequency}
    else:
        front = {"type": "type2", "v_dc": fe.v_dc, "drive_frequency": fe.drive_frequency,
                 "duty_cycle": fe.duty_cycle, "drive_phase": fe.drive_phase, "rds_on": fe.rds_on,
                 "gate_dead_time": fe.gate_dead_time, "r_rx": fe.r_rx}
    c = sc.control
    sections: dict[str, dict[str, Any]] = {
        "run": {"name": sc.name, "seed": sc.seed},
        "coil": {"label": sc.coil.label, "turns_per_loop": sc.coil.turns_per_loop,
                 "inductance": sc.coil.inductance, "resistance": sc.coil.resistance, "loops": loops},
        "resonator": {"m_rotator": r.m_rotator, "m_stator": r.m_stator, "inertia": r.inertia,
                      "center_distance": r.center_distance, "quality_factor": r.quality_factor,
                      "rest_axis": r.rest_axis, "rotation_axis": r.rotation_axis, "position": r.position},
        "frontend": front,
        "acquisition": {"gain": sc.lna.gain, "input_noise_density": sc.lna.input_noise_density,
                        "clip_level": sc.lna.clip_level, "bandwidth": sc.lna.bandwidth,
                        "bits": sc.adc.bits, "sample_rate": sc.adc.sample_rate,
                        "full_scale": sc.adc.full_scale, "sensor_gain": sc.sensor_gain},
        "schedule": {"t_tx": sc.schedule.t_tx, "t_rx": sc.schedule.t_rx,
                     "tx_switch_idle": sc.schedule.tx_switch_idle,
                     "rx_switch_idle": sc.schedule.rx_switch_idle, "n_frames": sc.schedule.n_frames},
        "control": {"enabled": sc.control_enabled, "target_rx_amplitude": c.target_rx_amplitude,
                    "n_drive_periods": c.n_drive_periods, "gain": c.gain,
                    "amplitude_limit": c.amplitude_limit},
        "estimation": {"band_lo": sc.estimation.band_lo, "band_hi": sc.estimation.band_hi,
                       "cutoff": sc.estimation.cutoff},
    }
    return {s: {k: _fmt(v) for k, v in kv.items()} for s, kv in sections.items()}


def dump_scenario(sc: Scenario) -> str:
    buf = io.StringIO()
    for section, kv in scenario_sections(sc).items():
        buf.write(f"[{section}]\n")
        for k, v in kv.items():
            buf.write(f"{k} = {v}\n")
        buf.write("\n")
    return buf.getvalue()
