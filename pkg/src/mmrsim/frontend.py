"""
Driver and TxRx-switch front-ends.

Type 1 is a class-D amplifier behind a DPDT relay; Type 2 is a full H-bridge
whose extra MOSFET forms the receive path. Both feed a series RL coil,
solved with an exponential integrator that is exact for drive voltages
constant over a step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

import numpy as np

from mmrsim.errors import ConfigurationError
from mmrsim.magnetics import CoilChannel


@dataclass(frozen=True)
class ClassDRelayConfig:
    """Class-D amplifier plus electromechanical DPDT relay (Type 1)."""

    drive_amplitude: float
    drive_frequency: float = 200.0
    drive_phase: float = 0.0
    startup_delay: float | None = None
    relay_operate_time: float = 10e-3
    relay_release_time: float = 8e-3
    varistor_clamp_voltage: float | None = None
    hot_switch_allowed: bool = False
    max_frequency: float = 20e3

    def __post_init__(self) -> None:
        if self.startup_delay is None:
            object.__setattr__(self, "startup_delay", 1.0 / self.drive_frequency)
        if self.varistor_clamp_voltage is None:
            # twice the expected coil voltage during transmission
            object.__setattr__(self, "varistor_clamp_voltage", 2.0 * self.drive_amplitude)
        if self.drive_amplitude < 0:
            raise ConfigurationError(f"drive_amplitude must be >= 0, got {self.drive_amplitude}")
        if not self.drive_frequency > 0:
            raise ConfigurationError(f"drive_frequency must be > 0, got {self.drive_frequency}")
        if self.drive_frequency > self.max_frequency:
            raise ConfigurationError(
                f"drive_frequency {self.drive_frequency} Hz exceeds amplifier limit {self.max_frequency} Hz"
            )
        if self.startup_delay < 0 or self.relay_operate_time < 0 or self.relay_release_time < 0:
            raise ConfigurationError("startup delay and relay times must be >= 0")
        if not self.varistor_clamp_voltage > 0:
            raise ConfigurationError(
                f"varistor_clamp_voltage must be > 0, got {self.varistor_clamp_voltage}"
            )


@dataclass(frozen=True)
class HBridgeConfig:
    """Pulsed full bridge with MOSFET receive path (Type 2)."""

    v_dc: float
    drive_frequency: float = 200.0
    duty_cycle: float = 0.8
    drive_phase: float = 0.0
    rds_on: float = 3.4e-3
    gate_dead_time: float = 1e-6
    r_rx: float = 1e3

    def __post_init__(self) -> None:
        if not 0.0 <= self.duty_cycle <= 1.0:
            raise ConfigurationError(f"duty_cycle must lie in [0, 1], got {self.duty_cycle}")
        if not self.v_dc > 0:
            raise ConfigurationError(f"v_dc must be > 0, got {self.v_dc}")
        if not self.drive_frequency > 0:
            raise ConfigurationError(f"drive_frequency must be > 0, got {self.drive_frequency}")
        if self.rds_on < 0:
            raise ConfigurationError(f"rds_on must be >= 0, got {self.rds_on}")
        if not self.r_rx > 0:
            raise ConfigurationError(f"r_rx must be > 0, got {self.r_rx}")
        if self.gate_dead_time < 0:
            raise ConfigurationError(f"gate_dead_time must be >= 0, got {self.gate_dead_time}")


FrontendConfig = Union[ClassDRelayConfig, HBridgeConfig]


class SwitchMode(enum.Enum):
    TX = "tx"
    RX = "rx"
    TRANSITION = "transition"


class SwitchState(NamedTuple):
    mode: SwitchMode
    since: float


# Allowed successors; TRANSITION is always entered between TX and RX.
_NEXT_MODE = {
    SwitchMode.TX: {SwitchMode.TRANSITION},
    SwitchMode.TRANSITION: {SwitchMode.TX, SwitchMode.RX},
    SwitchMode.RX: {SwitchMode.TRANSITION},
}


def valid_transition(a: SwitchMode, b: SwitchMode) -> bool:
    return a == b or b in _NEXT_MODE[a]


def effective_resistance(driver: FrontendConfig, coil: CoilChannel) -> float:
    """Series resistance seen by the drive (coil plus two conducting switches)."""
    if isinstance(driver, HBridgeConfig):
        return coil.resistance + 2.0 * driver.rds_on
    return coil.resistance


def classd_output_voltage(cfg: ClassDRelayConfig, t_in_window):
    """Amplifier output: silent for ``startup_delay``, then a sinusoid."""
    t = np.asarray(t_in_window, dtype=float)
    tt = t - cfg.startup_delay
    v = cfg.drive_amplitude * np.sin(2.0 * np.pi * cfg.drive_frequency * tt + cfg.drive_phase)
    out = np.where(tt >= 0.0, v, 0.0)
    return float(out) if out.ndim == 0 else out


def pulse_train(t, frequency: float, duty_cycle: float, phase: float = 0.0):
    """Unit centered pulse train: +1 pulse in the first half-period, -1 in the second.

    Each pulse is ``duty_cycle * T/2`` wide and centered in its half-period,
    so the fundamental is ``(4/pi) sin(pi*duty/2) sin(2 pi f t + phase)``.
    """
    p = np.mod(frequency * np.asarray(t, dtype=float) + phase / (2.0 * np.pi), 1.0)
    sign = np.where(p < 0.5, 1.0, -1.0)
    h = np.mod(2.0 * p, 1.0)
    on = (np.abs(h - 0.5) < 0.5 * duty_cycle) | (duty_cycle >= 1.0)
    return np.where(on, sign, 0.0)


def hbridge_terminal_voltage(cfg: HBridgeConfig, t_in_window):
    """Bridge output voltage across the coil during the Tx window."""
    v = cfg.v_dc * pulse_train(t_in_window, cfg.drive_frequency, cfg.duty_cycle, cfg.drive_phase)
    return float(v) if v.ndim == 0 else v


def drive_function(driver) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorized ``t -> v`` for a front-end config or a plain callable."""
    if isinstance(driver, ClassDRelayConfig):
        return lambda t: classd_output_voltage(driver, t)
    if isinstance(driver, HBridgeConfig):
        return lambda t: hbridge_terminal_voltage(driver, t)
    if callable(driver):
        return lambda t: np.broadcast_to(np.asarray(driver(t), dtype=float), np.shape(t))
    raise TypeError(f"unsupported driver {driver!r}")


def solve_rl(v_step: np.ndarray, inductance: float, resistance: float, dt: float, i0: float = 0.0) -> np.ndarray:
    """Series RL current for a drive held at ``v_step[k]`` over step k.

    Returns ``len(v_step) + 1`` samples starting with ``i0``. Exact when the
    drive really is constant within each step.
    """
    decay = math.exp(-dt * resistance / inductance)
    gain = (1.0 - decay) / resistance
    v = np.asarray(v_step, dtype=float)
    out = np.empty(v.size + 1)
    out[0] = i = float(i0)
    # scalar recurrence; lfilter would do the same but hides the solution
    for k, vk in enumerate(v.tolist()):
        i = i * decay + gain * vk
        out[k + 1] = i
    return out


def simulate_coil_current(
    driver,
    coil: CoilChannel,
    window_length: float,
    dt: float,
) -> np.ndarray:
    """Coil current (A) at ``t = k*dt`` for ``k = 0 .. round(window_length/dt)``.

    ``driver`` is a :class:`ClassDRelayConfig`, :class:`HBridgeConfig` or a
    vectorized callable ``t -> volts``. Each step uses the drive value at its
    midpoint.
    """
    r_eff = effective_resistance(driver, coil)
    tau = coil.inductance / r_eff
    if not dt > 0 or dt > tau / 20.0 * (1 + 1e-12):
        raise ConfigurationError(f"dt = {dt:.3g} s must be in (0, tau/20 = {tau / 20:.3g} s]")
    n = int(round(window_length / dt))
    t_mid = (np.arange(n) + 0.5) * dt
    v = drive_function(driver)(t_mid)
    return solve_rl(v, coil.inductance, r_eff, dt)


def relay_contact_state(
    cfg: ClassDRelayConfig,
    schedule,
    t_in_frame: float,
    t_break: float | None = None,
) -> SwitchState:
    """DPDT relay position at ``t_in_frame``; both poles move together.

    The coil is energized at the start of the Tx window and released at
    ``t_break`` (default: end of the Tx window). Break-before-make: both
    paths are open while the armature travels.
    """
    if schedule.t_tx < cfg.relay_operate_time or schedule.t_rx < cfg.relay_release_time:
        raise ConfigurationError("schedule windows are shorter than the relay switching times")
    t_off = schedule.t_tx if t_break is None else t_break
    if t_in_frame < cfg.relay_operate_time:
        return SwitchState(SwitchMode.TRANSITION, 0.0)
    if t_in_frame < t_off:
        return SwitchState(SwitchMode.TX, cfg.relay_operate_time)
    if t_in_frame < t_off + cfg.relay_release_time:
        return SwitchState(SwitchMode.TRANSITION, t_off)
    return SwitchState(SwitchMode.RX, t_off + cfg.relay_release_time)


def hbridge_switch_state(cfg: HBridgeConfig, schedule, t_in_frame: float) -> SwitchState:
    """Bridge mode; all switches open for ``gate_dead_time`` after each window edge."""
    dead = cfg.gate_dead_time
    if t_in_frame < dead:
        return SwitchState(SwitchMode.TRANSITION, 0.0)
    if t_in_frame < schedule.t_tx:
        return SwitchState(SwitchMode.TX, dead)
    if t_in_frame < schedule.t_tx + dead:
        return SwitchState(SwitchMode.TRANSITION, schedule.t_tx)
    return SwitchState(SwitchMode.RX, schedule.t_tx + dead)


def hbridge_gates(cfg: HBridgeConfig, schedule, t_in_frame: float, drive_sign: float = 0.0) -> dict[str, bool]:
    """Conduction of Q1..Q5 at ``t_in_frame``.

    Legs are (Q1 high, Q2 low) on terminal A and (Q3 high, Q4 low) on
    terminal B; Q5 closes the receive path through ``r_rx``. During TX the
    sign of the bridge voltage selects the diagonal, zero voltage
    freewheels through both low sides.
    """
    mode = hbridge_switch_state(cfg, schedule, t_in_frame).mode
    gates = dict.fromkeys(("Q1", "Q2", "Q3", "Q4", "Q5"), False)
    if mode is SwitchMode.RX:
        gates["Q3"] = gates["Q5"] = True
    elif mode is SwitchMode.TX:
        if drive_sign > 0:
            gates["Q1"] = gates["Q4"] = True
        elif drive_sign < 0:
            gates["Q3"] = gates["Q2"] = True
        else:
            gates["Q2"] = gates["Q4"] = True
    return gates


class HotSwitchEvent(NamedTuple):
    spike_duration: float
    dissipated_energy: float


def hot_switch_event(coil: CoilChannel, i_at_break: float, clamp_voltage: float) -> HotSwitchEvent:
    """Varistor clamp absorbing an interrupted coil current.

    The clamp holds ``L di/dt`` at ``clamp_voltage`` so the current ramps
    linearly to zero; all stored energy ends up in the varistor.
    """
    if not clamp_voltage > 0:
        raise ConfigurationError(f"clamp_voltage must be > 0, got {clamp_voltage}")
    L = coil.inductance
    return HotSwitchEvent(L * abs(i_at_break) / clamp_voltage, 0.5 * L * i_at_break**2)


def rx_spike_level(clamp_voltage: float, clip_level: float) -> float:
    """Peak voltage reaching the LNA input during a clamped hot switch."""
    return min(clamp_voltage, clip_level)


def clamp_discharge(i_at_break: float, coil: CoilChannel, clamp_voltage: float, t_after) -> np.ndarray:
    """Coil current after a break, falling linearly at ``clamp_voltage / L``."""
    t = np.maximum(np.asarray(t_after, dtype=float), 0.0)
    mag = np.maximum(abs(i_at_break) - clamp_voltage / coil.inductance * t, 0.0)
    return math.copysign(1.0, i_at_break) * mag


def current_sensor_output(i_trace, mode, gain: float = 1.0) -> np.ndarray:
    """Current-sensor voltage: ``gain * i`` while transmitting, silenced otherwise.

    ``mode`` is a single :class:`SwitchMode`/:class:`SwitchState`, a
    sequence of them matching ``i_trace``, or a boolean TX mask.
    """
    i = np.asarray(i_trace, dtype=float)
    if isinstance(mode, (SwitchMode, SwitchState)):
        m = mode.mode if isinstance(mode, SwitchState) else mode
        return gain * i if m is SwitchMode.TX else np.zeros_like(i)
    arr = np.asarray(mode)
    if arr.dtype == bool:
        tx = arr
    else:
        tx = np.array([(m.mode if isinstance(m, SwitchState) else m) is SwitchMode.TX for m in mode])
    return np.where(tx, gain * i, 0.0)
