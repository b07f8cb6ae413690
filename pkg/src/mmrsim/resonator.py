"""
Torsional magneto-mechanical resonator.

The rotator is a point dipole held anti-parallel to the stator dipole in the
side-by-side (equatorial) arrangement. Deflecting it by ``theta`` about the
filament axis gives the restoring torque ``-kappa * sin(theta)`` with
``kappa = mu0 m_r m_s / (4 pi d^3)``. Integration is fixed-step RK4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from mmrsim.errors import ConfigurationError
from mmrsim.magnetics import FieldVector

_MU0_4PI = 1e-7

# N40 / N35 magnetization (A/m) and sintered NdFeB density (kg/m^3).
MAGNETIZATION_N40 = 1.0e6
MAGNETIZATION_N35 = 0.955e6
NDFEB_DENSITY = 7500.0
OPERATING_STEPS_PER_PERIOD = 250


def _vec3(v: Sequence[float], name: str) -> tuple[float, float, float]:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ConfigurationError(f"{name} must have three components")
    return tuple(float(x) for x in arr)  # type: ignore[return-value]


@dataclass(frozen=True)
class MmrParams:
    """Physical description of one resonator."""

    m_rotator: float
    m_stator: float
    inertia: float
    center_distance: float
    quality_factor: float = 600.0
    rest_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    rotation_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        for name in ("rest_axis", "rotation_axis", "position"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        if not self.inertia > 0:
            raise ConfigurationError(f"inertia must be > 0, got {self.inertia}")
        if not self.quality_factor > 0:
            raise ConfigurationError(f"quality_factor must be > 0, got {self.quality_factor}")
        if not self.center_distance > 0:
            raise ConfigurationError(f"center_distance must be > 0, got {self.center_distance}")
        if self.m_rotator < 0 or self.m_stator < 0:
            raise ConfigurationError("magnetic moments must be non-negative")
        for name in ("rest_axis", "rotation_axis"):
            n = float(np.linalg.norm(getattr(self, name)))
            if abs(n - 1.0) > 1e-9:
                raise ConfigurationError(f"{name} must be a unit vector (|v| = {n!r})")
        if abs(float(np.dot(self.rest_axis, self.rotation_axis))) > 1e-9:
            raise ConfigurationError("rest_axis must be perpendicular to rotation_axis")

    @classmethod
    def from_magnets(
        cls,
        rotator_diameter: float = 4e-3,
        stator_diameter: float = 4e-3,
        stator_height: float = 4e-3,
        gap: float = 2e-3,
        rotator_magnetization: float = MAGNETIZATION_N40,
        stator_magnetization: float = MAGNETIZATION_N35,
        density: float = NDFEB_DENSITY,
        **kwargs,
    ) -> "MmrParams":
        """Spherical rotator next to a cylindrical stator, ``gap`` between surfaces."""
        r_rot = 0.5 * rotator_diameter
        vol_rot = 4.0 / 3.0 * math.pi * r_rot**3
        vol_stat = math.pi * (0.5 * stator_diameter) ** 2 * stator_height
        return cls(
            m_rotator=rotator_magnetization * vol_rot,
            m_stator=stator_magnetization * vol_stat,
            inertia=0.4 * density * vol_rot * r_rot**2,
            center_distance=gap + r_rot + 0.5 * stator_diameter,
            **kwargs,
        )


class MmrState(NamedTuple):
    theta: float = 0.0
    omega: float = 0.0

    @property
    def valid(self) -> bool:
        """False once the deflection leaves the range the model covers."""
        return math.isfinite(self.theta) and math.isfinite(self.omega) and abs(self.theta) < math.pi


def magnetic_stiffness(params: MmrParams) -> float:
    """Small-angle restoring stiffness kappa (N*m/rad)."""
    if params.center_distance <= 0:
        raise ConfigurationError("center_distance must be positive")
    return _MU0_4PI * params.m_rotator * params.m_stator / params.center_distance**3


def resonance_frequency(params: MmrParams) -> float:
    """Linearized natural frequency (Hz)."""
    return math.sqrt(magnetic_stiffness(params) / params.inertia) / (2.0 * math.pi)


def rotator_moment(params: MmrParams, theta: float) -> np.ndarray:
    """Rotator dipole moment vector after rotating the rest axis by ``theta``."""
    e = np.asarray(params.rest_axis)
    n = np.asarray(params.rotation_axis)
    return params.m_rotator * (math.cos(theta) * e + math.sin(theta) * np.cross(n, e))


def torque_coefficients(params: MmrParams, b: Sequence[float]) -> tuple[float, float]:
    """``(a, c)`` such that the drive torque is ``a*cos(theta) + c*sin(theta)``.

    Linear in ``b``, so the coefficients of a coil sensitivity times the coil
    current give the torque for any current.
    """
    e = np.asarray(params.rest_axis)
    n = np.asarray(params.rotation_axis)
    bv = np.asarray(b, dtype=float)
    a = params.m_rotator * float(np.dot(np.cross(e, bv), n))
    c = params.m_rotator * float(np.dot(np.cross(np.cross(n, e), bv), n))
    return a, c


def drive_torque(params: MmrParams, state: MmrState, applied_field: FieldVector) -> float:
    """Torque of the applied field on the rotator about the filament axis (N*m)."""
    m = rotator_moment(params, state.theta)
    return float(np.dot(np.cross(m, np.asarray(applied_field, dtype=float)), params.rotation_axis))


def damping_coefficient(params: MmrParams) -> float:
    """Viscous coefficient J*omega0/Q (N*m*s/rad)."""
    return params.inertia * 2.0 * math.pi * resonance_frequency(params) / params.quality_factor


def max_step(params: MmrParams) -> float:
    """Largest RK4 step accepted by :func:`step`."""
    return 1.0 / (50.0 * resonance_frequency(params))


def operating_step(params: MmrParams) -> float:
    """Step used for long runs; RK4 energy drift stays below 1e-6 over 1000 periods."""
    return 1.0 / (OPERATING_STEPS_PER_PERIOD * resonance_frequency(params))


def _check_dt(params: MmrParams, dt: float) -> None:
    if not dt > 0:
        raise ConfigurationError(f"time step must be > 0, got {dt}")
    if dt > max_step(params) * (1 + 1e-12):
        raise ConfigurationError(
            f"time step {dt:.3g} s exceeds 1/(50 f0) = {max_step(params):.3g} s"
        )


def step(
    params: MmrParams,
    state: MmrState,
    applied_field_fn: Callable[[float], FieldVector],
    t: float,
    dt: float,
) -> MmrState:
    """Advance ``state`` from ``t`` to ``t + dt`` with one classical RK4 step."""
    _check_dt(params, dt)
    kappa = magnetic_stiffness(params)
    c = damping_coefficient(params)
    inv_j = 1.0 / params.inertia

    def accel(theta: float, omega: float, tt: float) -> float:
        tau = drive_torque(params, MmrState(theta, omega), applied_field_fn(tt))
        return (-kappa * math.sin(theta) - c * omega + tau) * inv_j

    th, om = state
    k1t, k1w = om, accel(th, om, t)
    k2t, k2w = om + 0.5 * dt * k1w, accel(th + 0.5 * dt * k1t, om + 0.5 * dt * k1w, t + 0.5 * dt)
    k3t, k3w = om + 0.5 * dt * k2w, accel(th + 0.5 * dt * k2t, om + 0.5 * dt * k2w, t + 0.5 * dt)
    k4t, k4w = om + dt * k3w, accel(th + dt * k3t, om + dt * k3w, t + dt)
    return MmrState(
        th + dt / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t),
        om + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w),
    )


def integrate(
    params: MmrParams,
    state: MmrState,
    dt: float,
    n_steps: int,
    drive: np.ndarray | None = None,
    torque_per_amp: tuple[float, float] = (0.0, 0.0),
) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n_steps`` RK4 steps and return ``(theta, omega)`` of length n_steps + 1.

    ``drive`` optionally holds the coil current at half-step resolution
    (length ``2 * n_steps + 1``); the torque is then
    ``i * (a cos theta + c sin theta)`` with ``(a, c) = torque_per_amp``.
    Same arithmetic as :func:`step`, without per-stage Python call overhead.
    """
    _check_dt(params, dt)
    kappa = magnetic_stiffness(params)
    damp = damping_coefficient(params)
    inv_j = 1.0 / params.inertia
    ka, kc = kappa * inv_j, damp * inv_j
    ta, tc = torque_per_amp[0] * inv_j, torque_per_amp[1] * inv_j
    h, h2, h6 = dt, 0.5 * dt, dt / 6.0
    sin, cos = math.sin, math.cos

    theta = np.empty(n_steps + 1)
    omega = np.empty(n_steps + 1)
    th, om = float(state[0]), float(state[1])
    theta[0], omega[0] = th, om

    if drive is None:
        for k in range(n_steps):
            a1 = -ka * sin(th) - kc * om
            t2, w2 = th + h2 * om, om + h2 * a1
            a2 = -ka * sin(t2) - kc * w2
            t3, w3 = th + h2 * w2, om + h2 * a2
            a3 = -ka * sin(t3) - kc * w3
            t4, w4 = th + h * w3, om + h * a3
            a4 = -ka * sin(t4) - kc * w4
            th += h6 * (om + 2 * w2 + 2 * w3 + w4)
            om += h6 * (a1 + 2 * a2 + 2 * a3 + a4)
            theta[k + 1], omega[k + 1] = th, om
        return theta, omega

    cur = np.asarray(drive, dtype=float)
    if cur.shape != (2 * n_steps + 1,):
        raise ValueError(f"drive must have length {2 * n_steps + 1}, got {cur.shape}")
    cur = cur.tolist()
    for k in range(n_steps):
        i0, im, i1 = cur[2 * k], cur[2 * k + 1], cur[2 * k + 2]
        a1 = -ka * sin(th) - kc * om + i0 * (ta * cos(th) + tc * sin(th))
        t2, w2 = th + h2 * om, om + h2 * a1
        a2 = -ka * sin(t2) - kc * w2 + im * (ta * cos(t2) + tc * sin(t2))
        t3, w3 = th + h2 * w2, om + h2 * a2
        a3 = -ka * sin(t3) - kc * w3 + im * (ta * cos(t3) + tc * sin(t3))
        t4, w4 = th + h * w3, om + h * a3
        a4 = -ka * sin(t4) - kc * w4 + i1 * (ta * cos(t4) + tc * sin(t4))
        th += h6 * (om + 2 * w2 + 2 * w3 + w4)
        om += h6 * (a1 + 2 * a2 + 2 * a3 + a4)
        theta[k + 1], omega[k + 1] = th, om
    return theta, omega


def dipole_moment_rate(params: MmrParams, state: MmrState) -> np.ndarray:
    """Time derivative of the rotator moment vector (A*m^2/s)."""
    n = np.asarray(params.rotation_axis)
    return state.omega * np.cross(n, rotator_moment(params, state.theta))


def energy(params: MmrParams, state: MmrState) -> float:
    """Kinetic plus magnetic potential energy (J), zero at rest."""
    return 0.5 * params.inertia * state.omega**2 + magnetic_stiffness(params) * (1.0 - math.cos(state.theta))
