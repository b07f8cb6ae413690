"""
Quasi-static magnetic fields of square coil loops.

Each loop is a closed polygon of straight edges; the field of an edge is
evaluated with the exact finite-segment Biot-Savart expression, so no
quadrature is involved. Sensitivity (field per ampere) doubles as the flux
coupling of a point dipole by reciprocity, which gives the receive voltage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from mmrsim.errors import ConfigurationError, SingularityError

MU0 = 4e-7 * np.pi
_MU0_4PI = 1e-7
_ON_WIRE = 1e-9


class FieldVector(NamedTuple):
    """Magnetic flux density in tesla (or tesla per ampere for sensitivities)."""

    bx: float
    by: float
    bz: float

    def norm(self) -> float:
        return float(np.sqrt(self.bx**2 + self.by**2 + self.bz**2))


def _unit(v: Sequence[float], name: str) -> tuple[float, float, float]:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (3,):
        raise ConfigurationError(f"{name} must have three components")
    return tuple(float(x) for x in arr)  # type: ignore[return-value]


def _in_plane_axis(normal: np.ndarray) -> np.ndarray:
    # Deterministic edge direction: project the cartesian axis least aligned
    # with the normal onto the loop plane.
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    u = helper - np.dot(helper, normal) * normal
    return u / np.linalg.norm(u)


@dataclass(frozen=True)
class SquareLoop:
    """Planar square loop; current circulates right-handed about ``normal``."""

    center: tuple[float, float, float]
    side: float
    normal: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _unit(self.center, "loop center"))
        object.__setattr__(self, "normal", _unit(self.normal, "loop normal"))
        if not self.side > 0:
            raise ConfigurationError(f"loop side length must be > 0, got {self.side}")
        n = np.linalg.norm(self.normal)
        if abs(n - 1.0) > 1e-12:
            raise ConfigurationError(f"loop normal must be a unit vector (|n| = {n!r})")

    def corners(self) -> np.ndarray:
        """Corner points (4, 3), ordered counter-clockwise seen from +normal."""
        n = np.asarray(self.normal)
        u = _in_plane_axis(n)
        v = np.cross(n, u)
        h = 0.5 * self.side
        c = np.asarray(self.center)
        return np.array([
            c + h * u - h * v,
            c + h * u + h * v,
            c - h * u + h * v,
            c - h * u - h * v,
        ])

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of the four edges, each (4, 3)."""
        p = self.corners()
        return p, np.roll(p, -1, axis=0)


@dataclass(frozen=True)
class CoilChannel:
    """One transmit/receive coil: series-connected loops plus lumped L and R."""

    loops: tuple[SquareLoop, ...]
    turns_per_loop: int = 41
    inductance: float = 730e-6
    resistance: float = 3.38
    label: str = "x"
    _starts: np.ndarray = field(init=False, repr=False, compare=False)
    _ends: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "loops", tuple(self.loops))
        if not self.loops:
            raise ConfigurationError("coil needs at least one loop")
        if int(self.turns_per_loop) != self.turns_per_loop or self.turns_per_loop < 1:
            raise ConfigurationError(f"turns_per_loop must be an integer >= 1, got {self.turns_per_loop}")
        if not self.inductance > 0:
            raise ConfigurationError(f"inductance must be > 0, got {self.inductance}")
        if not self.resistance > 0:
            raise ConfigurationError(f"resistance must be > 0, got {self.resistance}")
        starts, ends = zip(*(loop.segments() for loop in self.loops))
        object.__setattr__(self, "_starts", np.concatenate(starts))
        object.__setattr__(self, "_ends", np.concatenate(ends))

    @property
    def time_constant(self) -> float:
        return self.inductance / self.resistance


def helmholtz_pair(
    side: float = 0.095,
    separation: float = 0.107,
    axis: Sequence[float] = (1.0, 0.0, 0.0),
    center: Sequence[float] = (0.0, 0.0, 0.0),
    turns_per_loop: int = 41,
    inductance: float = 730e-6,
    resistance: float = 3.38,
    label: str = "x",
) -> CoilChannel:
    """Two coaxial square loops, same winding sense, ``separation`` apart."""
    ax = np.asarray(axis, dtype=float)
    ax = ax / np.linalg.norm(ax)
    c = np.asarray(center, dtype=float)
    loops = tuple(
        SquareLoop(tuple(c + s * 0.5 * separation * ax), side, tuple(ax))
        for s in (1.0, -1.0)
    )
    return CoilChannel(loops, turns_per_loop, inductance, resistance, label)


def _segment_field(starts: np.ndarray, ends: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Sum of unit-current fields of straight segments at ``points`` (P, 3), without mu0/4pi."""
    r1 = points[:, None, :] - starts[None, :, :]
    r2 = points[:, None, :] - ends[None, :, :]
    n1 = np.linalg.norm(r1, axis=-1)
    n2 = np.linalg.norm(r2, axis=-1)

    # distance from point to each finite segment
    seg = ends - starts
    seg_len2 = np.einsum("ij,ij->i", seg, seg)
    s = np.clip(np.einsum("pij,ij->pi", r1, seg) / seg_len2, 0.0, 1.0)
    closest = r1 - s[..., None] * seg[None, :, :]
    if np.any(np.linalg.norm(closest, axis=-1) <= _ON_WIRE):
        raise SingularityError("evaluation point lies on a coil segment")

    cross = np.cross(r1, r2)
    denom = n1 * n2 * (n1 * n2 + np.einsum("pij,pij->pi", r1, r2))
    factor = (n1 + n2) / denom
    return np.einsum("pi,pij->pj", factor, cross)


def field_map(coil: CoilChannel, points: np.ndarray, current: float = 1.0) -> np.ndarray:
    """Flux density (P, 3) at an array of points for coil current ``current``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[-1] != 3:
        raise ValueError("points must have shape (P, 3)")
    b = _segment_field(coil._starts, coil._ends, pts)
    return _MU0_4PI * coil.turns_per_loop * current * b


def field_at(coil: CoilChannel, point: Sequence[float], current: float) -> FieldVector:
    """Flux density at one point for coil current ``current`` (A).

    Raises
    ------
    SingularityError
        If ``point`` is within 1 nm of a conductor.
    """
    b = field_map(coil, np.asarray(point, dtype=float)[None, :], current)[0]
    return FieldVector(float(b[0]), float(b[1]), float(b[2]))


def sensitivity(coil: CoilChannel, point: Sequence[float]) -> FieldVector:
    """Field per unit current (T/A) at ``point``."""
    return field_at(coil, point, 1.0)


def induced_voltage(
    coil: CoilChannel,
    dipole_position: Sequence[float],
    dipole_moment_rate: Sequence[float],
) -> float:
    """EMF (V) induced in the coil by a point dipole with changing moment.

    By reciprocity the flux linked by the coil is ``S . m`` with ``S`` the
    coil sensitivity at the dipole, so ``v = -S . dm/dt``. The sign is the
    open-circuit terminal voltage with the same polarity that drives a
    positive coil current.
    """
    s = np.asarray(sensitivity(coil, dipole_position))
    return float(-np.dot(s, np.asarray(dipole_moment_rate, dtype=float)))
