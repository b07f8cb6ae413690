import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmrsim.errors import ConfigurationError, SingularityError
from mmrsim.magnetics import (
    MU0,
    CoilChannel,
    SquareLoop,
    field_at,
    field_map,
    helmholtz_pair,
    induced_voltage,
    sensitivity,
)


def quadrature_field(corners, point, current=1.0, n=4000):
    """Midpoint-rule Biot-Savart along each edge of a closed polygon."""
    p = np.asarray(point, float)
    b = np.zeros(3)
    for a, c in zip(corners, np.roll(corners, -1, axis=0)):
        s = (np.arange(n) + 0.5) / n
        pts = a + np.outer(s, c - a)
        dl = (c - a) / n
        r = p - pts
        rn = np.linalg.norm(r, axis=1)[:, None]
        b += (np.cross(dl, r) / rn**3).sum(axis=0)
    return MU0 * current / (4 * math.pi) * b


def single_loop(side=0.1, center=(0, 0, 0), normal=(0, 0, 1), turns=1):
    return CoilChannel((SquareLoop(center, side, normal),), turns_per_loop=turns)


def on_axis_square(a, z, current=1.0):
    return 4 * MU0 * current * a**2 / (math.pi * (4 * z**2 + a**2) * math.sqrt(4 * z**2 + 2 * a**2))


def test_square_loop_center_closed_form():
    a = 0.1
    b = field_at(single_loop(a), (0, 0, 0), 1.0)
    assert b.norm() == pytest.approx(2 * math.sqrt(2) * MU0 / (math.pi * a), rel=1e-12)
    assert b.bz > 0  # right-hand rule about +z


@pytest.mark.parametrize("point", [(0.01, 0.02, 0.03), (0.2, -0.1, 0.05), (0.0, 0.049, 0.001)])
def test_segment_formula_matches_quadrature(point):
    coil = single_loop(0.1, normal=(0.3, 0.4, math.sqrt(0.75)))
    exact = np.array(field_at(coil, point, 2.0))
    ref = quadrature_field(coil.loops[0].corners(), point, 2.0, n=20000)
    assert np.allclose(exact, ref, rtol=1e-6, atol=1e-6 * np.linalg.norm(ref))


def test_zero_current_gives_zero_field():
    coil = helmholtz_pair()
    assert field_at(coil, (0.01, 0.02, -0.03), 0.0) == (0.0, 0.0, 0.0)


def test_helmholtz_single_turn_midpoint():
    coil = helmholtz_pair(turns_per_loop=1)
    b = field_at(coil, (0, 0, 0), 1.0)
    expected = 2 * on_axis_square(0.095, 0.107 / 2)
    assert b.norm() == pytest.approx(expected, rel=1e-12)
    assert b.norm() == pytest.approx(8.2e-6, rel=0.01)
    ref = sum(quadrature_field(lp.corners(), (0, 0, 0), n=20000) for lp in coil.loops)
    assert np.allclose(np.array(b), ref, rtol=1e-6, atol=1e-12)


def test_sensitivity_of_default_pair():
    s = sensitivity(helmholtz_pair(), (0, 0, 0))
    assert s.bx == pytest.approx(41 * 2 * on_axis_square(0.095, 0.0535), rel=1e-12)
    assert s.norm() == pytest.approx(333e-6, rel=0.02)
    # 540 mA then gives about 180 uT
    assert 0.54 * s.norm() == pytest.approx(180e-6, rel=0.02)


def test_sensitivity_scales_with_turns():
    s1 = sensitivity(helmholtz_pair(turns_per_loop=1), (0.01, 0.0, 0.02))
    s7 = sensitivity(helmholtz_pair(turns_per_loop=7), (0.01, 0.0, 0.02))
    assert np.allclose(np.array(s7), 7 * np.array(s1), rtol=1e-14, atol=0)


def test_far_field_decays_as_inverse_cube():
    coil = single_loop(0.1)
    direction = np.array([1.0, 2.0, 2.0]) / 3.0
    mags = [field_at(coil, r * direction, 1.0).norm() for r in (2.0, 4.0, 8.0)]
    for near, far in zip(mags, mags[1:]):
        assert near / far == pytest.approx(8.0, rel=0.05)


def test_midplane_transverse_components_vanish():
    b = field_at(helmholtz_pair(), (0, 0, 0), 1.0)
    assert abs(b.by) < 1e-9 * abs(b.bx)
    assert abs(b.bz) < 1e-9 * abs(b.bx)


def test_superposition_of_loops():
    pair = helmholtz_pair(turns_per_loop=3)
    pts = np.array([[0.01, 0.02, 0.03], [0.3, -0.2, 0.1], [-0.04, 0.0, 0.0]])
    total = field_map(pair, pts, 1.7)
    parts = sum(field_map(CoilChannel((lp,), turns_per_loop=3), pts, 1.7) for lp in pair.loops)
    assert np.allclose(total, parts, rtol=1e-12, atol=1e-12 * np.abs(total).max())


@settings(max_examples=50, deadline=None)
@given(
    alpha=st.floats(-1e3, 1e3, allow_nan=False),
    p=st.tuples(*[st.floats(-0.3, 0.3) for _ in range(3)]),
)
def test_field_linear_in_current(alpha, p):
    coil = helmholtz_pair()
    if np.min(np.abs(np.abs(np.array(p)) - np.array([0.0535, 0.0475, 0.0475]))) < 1e-3:
        return  # skip points near the conductors
    b1 = np.array(field_at(coil, p, 1.0))
    ba = np.array(field_at(coil, p, alpha))
    assert np.allclose(ba, alpha * b1, rtol=1e-12, atol=1e-300)


def test_point_on_conductor_raises():
    coil = single_loop(0.1)
    corner = coil.loops[0].corners()[0]
    mid = 0.5 * (coil.loops[0].corners()[0] + coil.loops[0].corners()[1])
    for p in (corner, mid):
        with pytest.raises(SingularityError):
            field_at(coil, p, 1.0)


def test_coil_validation():
    with pytest.raises(ConfigurationError):
        SquareLoop((0, 0, 0), -0.1, (0, 0, 1))
    with pytest.raises(ConfigurationError):
        SquareLoop((0, 0, 0), 0.1, (0, 0, 2))
    with pytest.raises(ConfigurationError):
        CoilChannel((SquareLoop((0, 0, 0), 0.1, (0, 0, 1)),), turns_per_loop=0)
    with pytest.raises(ConfigurationError):
        helmholtz_pair(resistance=0.0)
    assert helmholtz_pair().time_constant == pytest.approx(730e-6 / 3.38)


def test_induced_voltage_trivial_cases():
    coil = helmholtz_pair()
    assert induced_voltage(coil, (0, 0, 0), (0, 0, 0)) == 0.0
    assert induced_voltage(coil, (0, 0, 0), (0, 1.0, 0)) == pytest.approx(0.0, abs=1e-15)


def test_induced_voltage_peak_and_flux_derivative():
    coil = helmholtz_pair()
    s = np.array(sensitivity(coil, (0, 0, 0)))
    m, th0, w = 0.0335, 0.2, 2 * math.pi * 200
    # transverse component along the coil axis: m sin(theta), theta = th0 sin(w t)
    t = np.linspace(0, 5e-3, 201)
    dm_dt = np.outer(m * np.cos(th0 * np.sin(w * t)) * th0 * w * np.cos(w * t), [1, 0, 0])
    v = np.array([induced_voltage(coil, (0, 0, 0), d) for d in dm_dt])
    assert np.max(np.abs(v)) == pytest.approx(s[0] * m * th0 * w, rel=1e-9)
    assert np.max(np.abs(v)) == pytest.approx(2.8e-3, rel=0.03)

    def flux(tt):
        return s[0] * m * np.sin(th0 * np.sin(w * tt))

    h = 1e-7
    fd = -(flux(t + h) - flux(t - h)) / (2 * h)
    assert np.allclose(v, fd, rtol=1e-6, atol=1e-6 * np.max(np.abs(v)))
