"""
Frame sequencing and closed-loop drive control.

A frame is a Tx window followed by an Rx window. During Tx the coil current
is solved on a fine grid and its field drives the resonator; during Rx the
resonator rings down freely and its reciprocity EMF goes through the
receive chain. Each frame's ring-down fit sets the next frame's frequency,
phase and drive level when control is enabled.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Callable, NamedTuple, Sequence

import numpy as np

from mmrsim import acquisition, estimation, frontend, magnetics, resonator
from mmrsim.errors import ConfigurationError
from mmrsim.estimation import DecayFit
from mmrsim.frontend import ClassDRelayConfig, HBridgeConfig, SwitchMode
from mmrsim.resonator import MmrState

if TYPE_CHECKING:
    from mmrsim.config import Scenario

log = logging.getLogger(__name__)


class FrontendType(str, enum.Enum):
    CLASSD_RELAY = "type1"
    HBRIDGE = "type2"

    @classmethod
    def of(cls, cfg) -> "FrontendType":
        return cls.CLASSD_RELAY if isinstance(cfg, ClassDRelayConfig) else cls.HBRIDGE


@dataclass(frozen=True)
class FrameSchedule:
    t_tx: float = 0.100
    t_rx: float = 1.900
    tx_switch_idle: float = 1e-3
    rx_switch_idle: float = 250e-6
    n_frames: int = 1

    def __post_init__(self) -> None:
        if not self.t_tx > self.tx_switch_idle >= 0:
            raise ConfigurationError("schedule needs t_tx > tx_switch_idle >= 0")
        if not self.t_rx > self.rx_switch_idle >= 0:
            raise ConfigurationError("schedule needs t_rx > rx_switch_idle >= 0")
        if int(self.n_frames) != self.n_frames or self.n_frames < 0:
            raise ConfigurationError(f"n_frames must be a non-negative integer, got {self.n_frames}")

    @property
    def frame_length(self) -> float:
        return self.t_tx + self.t_rx

    @classmethod
    def for_frontend(cls, cfg, **kw) -> "FrameSchedule":
        """Schedule with the switch times that suit ``cfg``."""
        if isinstance(cfg, ClassDRelayConfig):
            kw.setdefault("tx_switch_idle", 15e-3)
            kw.setdefault("rx_switch_idle", 10e-3)
        return cls(**kw)


@dataclass(frozen=True)
class ControlState:
    """Drive parameters applied to one frame."""

    frequency: float
    phase: float = 0.0
    amplitude: float | None = None
    duty_cycle: float | None = None
    target_rx_amplitude: float = 0.0
    n_drive_periods: int = 20
    gain: float = 0.5
    amplitude_limit: float = math.inf

    def __post_init__(self) -> None:
        if not self.frequency > 0:
            raise ConfigurationError(f"control frequency must be > 0, got {self.frequency}")
        if self.duty_cycle is not None and not 0.0 <= self.duty_cycle <= 1.0:
            raise ConfigurationError(f"duty_cycle must lie in [0, 1], got {self.duty_cycle}")
        if self.amplitude is not None and self.amplitude < 0:
            raise ConfigurationError(f"amplitude must be >= 0, got {self.amplitude}")
        if int(self.n_drive_periods) != self.n_drive_periods or self.n_drive_periods < 0:
            raise ConfigurationError("n_drive_periods must be a non-negative integer")

    @classmethod
    def from_frontend(cls, cfg, **kw) -> "ControlState":
        if isinstance(cfg, ClassDRelayConfig):
            kw.setdefault("amplitude", cfg.drive_amplitude)
        else:
            kw.setdefault("duty_cycle", cfg.duty_cycle)
        return cls(frequency=cfg.drive_frequency, phase=cfg.drive_phase, **kw)


def apply_control(cfg, control: ControlState):
    """Front-end config carrying the frame's drive parameters."""
    kw = dict(drive_frequency=control.frequency, drive_phase=control.phase)
    if isinstance(cfg, ClassDRelayConfig):
        if control.amplitude is not None:
            kw["drive_amplitude"] = control.amplitude
        # keep the varistor and startup delay fixed hardware properties
        kw["varistor_clamp_voltage"] = cfg.varistor_clamp_voltage
        kw["startup_delay"] = cfg.startup_delay
    elif control.duty_cycle is not None:
        kw["duty_cycle"] = control.duty_cycle
    return replace(cfg, **kw)


def update_control(
    previous_fit: DecayFit,
    control: ControlState,
    mode: FrontendType | str,
    *,
    dt_to_drive: float | None = None,
    coil_time_constant: float = 0.0,
) -> ControlState:
    """Drive parameters for the next frame from the last ring-down fit.

    Frequency follows the fitted frequency. The drive level (amplitude for
    Type 1, duty cycle for Type 2) takes a proportional step of size
    ``gain`` on the relative amplitude error, clamped to its valid range;
    ``target_rx_amplitude <= 0`` leaves it alone. When ``dt_to_drive`` (time
    from the fit's t=0 to the next drive's phase reference) is known, the
    phase is set so the coil current opposes the predicted receive EMF,
    i.e. the torque is in phase with the angular velocity; the coil's
    current lag ``atan(w L/R)`` is pre-compensated. A failed fit changes
    nothing.
    """
    if not previous_fit.ok:
        return control
    mode = FrontendType(mode)
    kw: dict = {"frequency": previous_fit.frequency}

    if control.target_rx_amplitude > 0:
        err = (control.target_rx_amplitude - previous_fit.amplitude0) / control.target_rx_amplitude
        scale = 1.0 + control.gain * min(max(err, -1.0), 1.0)
        if mode is FrontendType.HBRIDGE and control.duty_cycle is not None:
            kw["duty_cycle"] = min(max(control.duty_cycle * scale, 0.0), 1.0)
        elif mode is FrontendType.CLASSD_RELAY and control.amplitude is not None:
            kw["amplitude"] = min(max(control.amplitude * scale, 0.0), control.amplitude_limit)

    if dt_to_drive is not None:
        f = previous_fit.frequency
        rx_phase = previous_fit.phase + 2.0 * math.pi * f * dt_to_drive
        lag = math.atan(2.0 * math.pi * f * coil_time_constant)
        kw["phase"] = (rx_phase + math.pi + lag) % (2.0 * math.pi)
    return replace(control, **kw)


class ZeroCrossing(NamedTuple):
    time: float
    hot_switch: bool


def zero_crossing_switch_time(
    waveform,
    nominal_t: float,
    period: float,
    times: Sequence[float] | None = None,
    resolution: int = 200,
) -> ZeroCrossing:
    """Zero crossing of the drive current nearest ``nominal_t``.

    ``waveform`` is either a sampled current (with matching ``times``) or a
    vectorized callable ``t -> i`` sampled ``resolution`` times per period.
    The search covers ``nominal_t +/- period``; without a crossing the
    nominal time comes back with ``hot_switch`` set.
    """
    if times is None:
        t = np.linspace(nominal_t - period, nominal_t + period, 2 * resolution + 1)
        i = np.asarray(waveform(t), dtype=float)
    else:
        t = np.asarray(times, dtype=float)
        i = np.asarray(waveform, dtype=float)
        sel = (t >= nominal_t - period) & (t <= nominal_t + period)
        t, i = t[sel], i[sel]
    if t.size < 2:
        return ZeroCrossing(nominal_t, True)

    exact = t[i == 0.0]
    s = np.sign(i)
    k = np.flatnonzero(s[:-1] * s[1:] < 0)
    cross = t[k] - i[k] * (t[k + 1] - t[k]) / (i[k + 1] - i[k])
    candidates = np.concatenate([exact, cross])
    if candidates.size == 0:
        return ZeroCrossing(nominal_t, True)
    best = candidates[np.argmin(np.abs(candidates - nominal_t))]
    return ZeroCrossing(float(best), False)


@dataclass
class FrameRecord:
    """Traces and results of one frame (times are absolute, seconds)."""

    index: int
    t_start: float
    time: np.ndarray
    tx_current: np.ndarray
    rx_volts: np.ndarray
    rx_codes: np.ndarray
    coil_emf: np.ndarray
    control: ControlState
    fit: DecayFit
    fit_start: float
    rx_onset: float
    t_break: float
    break_current: float
    hot_switch_energy: float
    hot_switch: bool
    peak_theta: float


@dataclass
class Recording:
    frames: list[FrameRecord] = field(default_factory=list)
    sample_rate: float = 0.0
    final_state: MmrState = MmrState()

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.t_start for f in self.frames])

    @property
    def fits(self) -> list[DecayFit]:
        return [f.fit for f in self.frames]


def _grid_count(duration: float, rate: float, what: str) -> int:
    n = duration * rate
    k = int(round(n))
    if abs(n - k) > 1e-6 * max(1.0, n):
        raise ConfigurationError(f"{what} ({duration} s) is not a whole number of ADC samples")
    return k


def validate(scenario: "Scenario") -> None:
    """Check that the schedule leaves room for the front-end's switch times."""
    cfg, sch = scenario.frontend, scenario.schedule
    if isinstance(cfg, ClassDRelayConfig):
        if sch.tx_switch_idle < cfg.relay_operate_time:
            raise ConfigurationError("tx_switch_idle is shorter than the relay operate time")
        if sch.rx_switch_idle < cfg.relay_release_time:
            raise ConfigurationError("rx_switch_idle is shorter than the relay release time")
    else:
        if min(sch.tx_switch_idle, sch.rx_switch_idle) < cfg.gate_dead_time:
            raise ConfigurationError("switch idle times are shorter than the gate dead time")
    fs = scenario.adc.sample_rate
    _grid_count(sch.t_tx, fs, "t_tx")
    _grid_count(sch.t_rx, fs, "t_rx")


class _Plant:
    """Per-scenario constants shared by all frames."""

    def __init__(self, scenario: "Scenario"):
        self.sc = scenario
        res, coil = scenario.resonator, scenario.coil
        self.fs = scenario.adc.sample_rate
        self.ts = 1.0 / self.fs
        self.sens = np.asarray(magnetics.sensitivity(coil, res.position))
        self.torque_per_amp = resonator.torque_coefficients(res, self.sens)
        e = np.asarray(res.rest_axis)
        n = np.asarray(res.rotation_axis)
        # emf = -omega * m * (cos(th) S.(n x e) - sin(th) S.e)
        self.emf_cos = -res.m_rotator * float(self.sens @ np.cross(n, e))
        self.emf_sin = res.m_rotator * float(self.sens @ e)
        self.r_eff = frontend.effective_resistance(scenario.frontend, coil)
        tau = coil.inductance / self.r_eff
        h_max = resonator.operating_step(res)
        # fine Tx grid: even number of sub-steps so RK4 can use half-steps
        k = 2
        while self.ts / k > tau / 20.0 or 2 * self.ts / k > h_max:
            k += 2
        self.k_tx = k
        self.m_rx = max(1, math.ceil(self.ts / h_max - 1e-12))
        self.n_tx = _grid_count(scenario.schedule.t_tx, self.fs, "t_tx")
        self.n_frame = self.n_tx + _grid_count(scenario.schedule.t_rx, self.fs, "t_rx")

    def emf(self, theta: np.ndarray, omega: np.ndarray) -> np.ndarray:
        return omega * (self.emf_cos * np.cos(theta) + self.emf_sin * np.sin(theta))


def _drive_offset(cfg, schedule: FrameSchedule) -> float:
    """Time from frame start to the drive's phase reference."""
    offset = schedule.tx_switch_idle
    if isinstance(cfg, ClassDRelayConfig):
        offset += cfg.startup_delay
    return offset


def _run_frame(plant: _Plant, index: int, state: MmrState, control: ControlState, rng):
    sc = plant.sc
    sch, coil, res = sc.schedule, sc.coil, sc.resonator
    cfg = apply_control(sc.frontend, control)
    fs, ts, k = plant.fs, plant.ts, plant.k_tx
    f = control.frequency
    t0 = index * sch.frame_length
    type1 = isinstance(cfg, ClassDRelayConfig)

    # --- Tx: coil current on the fine grid, one extra period for the break search
    n_span = plant.n_tx + math.ceil(fs / f)
    dt_f = ts / k
    t_mid = (np.arange(n_span * k) + 0.5) * dt_f
    drive_start = sch.tx_switch_idle
    drive_end = _drive_offset(cfg, sch) + control.n_drive_periods / f
    if not type1:
        drive_end = min(drive_end, sch.t_tx)
    active = (t_mid >= drive_start) & (t_mid < drive_end)
    wave = frontend.drive_function(cfg)(t_mid - drive_start)
    i_free = frontend.solve_rl(np.where(active, wave, 0.0), coil.inductance, plant.r_eff, dt_f)
    t_fine = np.arange(i_free.size) * dt_f

    hot = False
    if type1:
        t_break = sch.t_tx
        if not cfg.hot_switch_allowed:
            t_break, hot = zero_crossing_switch_time(i_free, sch.t_tx, 1.0 / f, times=t_fine)
        else:
            hot = True
        i_break = float(np.interp(t_break, t_fine, i_free))
        event = frontend.hot_switch_event(coil, i_break, cfg.varistor_clamp_voltage)
        after = frontend.clamp_discharge(i_break, coil, cfg.varistor_clamp_voltage, t_fine - t_break)
        settle = event.spike_duration
        t_rx_switch = t_break + cfg.relay_release_time
        tx_on = cfg.relay_operate_time
    else:
        t_break = sch.t_tx
        i_break = float(np.interp(t_break, t_fine, i_free))
        event = frontend.HotSwitchEvent(0.0, 0.5 * coil.inductance * i_break**2)
        tau_rx = coil.inductance / (coil.resistance + 2 * cfg.rds_on + cfg.r_rx)
        after = i_break * np.exp(-np.maximum(t_fine - t_break, 0.0) / tau_rx)
        settle = 40.0 * tau_rx
        t_rx_switch = sch.t_tx + cfg.gate_dead_time
        tx_on = cfg.gate_dead_time
    i_coil = np.where(t_fine < t_break, i_free, after)

    # --- resonator: driven until the coil current is gone, then free
    n_drv = min(max(math.ceil((t_break + settle) * fs - 1e-9), plant.n_tx), n_span)
    n_drv = min(n_drv, plant.n_frame)
    th_d, om_d = resonator.integrate(
        res, state, 2 * dt_f, n_drv * k // 2,
        drive=i_coil[: n_drv * k + 1], torque_per_amp=plant.torque_per_amp,
    )
    stride = k // 2
    th_d, om_d = th_d[::stride], om_d[::stride]
    m = plant.m_rx
    th_f, om_f = resonator.integrate(
        res, MmrState(th_d[-1], om_d[-1]), ts / m, (plant.n_frame - n_drv) * m
    )
    theta = np.concatenate([th_d, th_f[m::m]])
    omega = np.concatenate([om_d, om_f[m::m]])
    next_state = MmrState(float(theta[-1]), float(omega[-1]))
    theta, omega = theta[:-1], omega[:-1]
    if not np.all(np.abs(theta) < math.pi):
        log.warning("frame %d: rotator deflection left the modelled range", index)

    # --- receive chain
    t_rel = np.arange(plant.n_frame) * ts
    emf = plant.emf(theta, omega)
    rx_onset = max(sch.rx_switch_idle, t_rx_switch - sch.t_tx)
    rx_live = sch.t_tx + rx_onset
    divider = 1.0 if type1 else cfg.r_rx / (cfg.r_rx + coil.resistance + 2 * cfg.rds_on)
    v_in = np.where(t_rel >= rx_live - 1e-12, divider * emf, 0.0)
    codes = acquisition.sample(acquisition.amplify(v_in, sc.lna, rng), sc.adc)
    rx_volts = acquisition.codes_to_volts(codes, sc.adc, sc.lna)

    i_samples = np.interp(t_rel, t_fine, i_coil, right=0.0)
    tx_mask = (t_rel >= tx_on) & (t_rel < t_break)
    tx_current = frontend.current_sensor_output(i_samples, tx_mask, sc.sensor_gain) / sc.sensor_gain

    # --- ring-down fit
    i_fit = math.ceil((rx_live + 1.0 / f) * fs - 1e-9)
    est = sc.estimation
    x = estimation.preprocess(rx_volts[i_fit:], fs, est.cutoff)
    fit = estimation.estimate_decay(x, fs, (est.band_lo, est.band_hi))

    rec = FrameRecord(
        index=index,
        t_start=t0,
        time=t0 + t_rel,
        tx_current=tx_current,
        rx_volts=rx_volts,
        rx_codes=codes,
        coil_emf=emf,
        control=control,
        fit=fit,
        fit_start=t0 + i_fit * ts,
        rx_onset=rx_onset,
        t_break=t_break,
        break_current=i_break,
        hot_switch_energy=event.dissipated_energy,
        hot_switch=hot,
        peak_theta=float(np.max(np.abs(theta))),
    )
    return rec, next_state


def run_sequence(
    scenario: "Scenario",
    state: MmrState | None = None,
    progress: Callable[[FrameRecord], None] | None = None,
) -> Recording:
    """Simulate ``scenario.schedule.n_frames`` frames end to end.

    Deterministic for a given scenario (including its seed). The resonator
    state carries over between frames.
    """
    validate(scenario)
    plant = _Plant(scenario)
    rng = np.random.default_rng(scenario.seed)
    state = MmrState() if state is None else state
    control = scenario.control
    mode = FrontendType.of(scenario.frontend)
    sch = scenario.schedule
    coil_tau = scenario.coil.inductance / plant.r_eff
    rec = Recording(sample_rate=plant.fs, final_state=state)

    for n in range(sch.n_frames):
        frame, state = _run_frame(plant, n, state, control, rng)
        rec.frames.append(frame)
        rec.final_state = state
        if progress is not None:
            progress(frame)
        if scenario.control_enabled:
            next_ref = (n + 1) * sch.frame_length + _drive_offset(scenario.frontend, sch)
            control = update_control(
                frame.fit, control, mode,
                dt_to_drive=next_ref - frame.fit_start,
                coil_time_constant=coil_tau,
            )
    return rec
