import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smal import actuation as act
from smal.magnetics import actuator_spec, capsule_spec, dipole_field_vec, dipole_force_vec, moment_magnitude

MAGS = (moment_magnitude(actuator_spec()), moment_magnitude(capsule_spec()))
D = 0.15
R = 0.018
alphas = st.floats(0.0, float(act.MAX_ALPHA))


def rot_x(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def mean_fp_oracle(r, heading, alpha, n=64):
    """Average of heading . F over the revolution using the plain dipole formulas."""
    h = np.asarray(heading) / np.linalg.norm(heading)
    total = 0.0
    for th in 2 * np.pi * np.arange(n) / n:
        ma = act.actuator_moment(alpha, th)
        b = dipole_field_vec(ma, r)
        mc = b - (b @ h) * h
        mc /= np.linalg.norm(mc)
        total += dipole_force_vec(MAGS[0] * ma, MAGS[1] * mc, r) @ h
    return total / n


# --- frames and closed forms --------------------------------------------------


def test_frame_examples():
    f = act.capsule_frame(np.zeros(3), [1, 0, 0])
    np.testing.assert_allclose(f.z_axis, [0, 0, 1])
    np.testing.assert_allclose(f.y_axis, [0, 1, 0])
    f = act.capsule_frame(np.zeros(3), [0, 1, 0])
    np.testing.assert_allclose(f.y_axis, [-1, 0, 0])
    f = act.capsule_frame(np.zeros(3), [1, 0, 1])
    np.testing.assert_allclose(f.z_axis, np.array([-1, 0, 1]) / np.sqrt(2), atol=1e-15)
    with pytest.raises(act.DegenerateGeometryError):
        act.capsule_frame(np.zeros(3), [0, 0, 1])


def test_axis_world_examples():
    h = np.array([1.0, 0, 0])
    np.testing.assert_allclose(act.actuator_axis_world([0, 0, 1], h), -h)
    np.testing.assert_allclose(act.actuator_axis_world(h, h), h)
    r = np.array([1.0, 0, 1]) / np.sqrt(2)
    v = 3 * (r @ h) * r - h
    np.testing.assert_allclose(act.actuator_axis_world(r, h), v / np.linalg.norm(v))


def test_axis_frame_c_examples():
    np.testing.assert_allclose(act.actuator_axis_frame_c(0.0), [-1, 0, 0])
    np.testing.assert_allclose(act.actuator_axis_frame_c(np.radians(10)), [-0.8710, 0, 0.4913], atol=5e-5)


@settings(max_examples=100, deadline=None)
@given(alphas)
def test_axis_frame_c_matches_world_form(alpha):
    r_hat = rot_y(alpha) @ np.array([0, 0, -1.0])
    np.testing.assert_allclose(act.actuator_axis_frame_c(alpha), act.actuator_axis_world(r_hat, [1, 0, 0]), atol=1e-12)


def test_actuator_moment_examples():
    np.testing.assert_allclose(act.actuator_moment(0.0, 0.0), [0, 0, 1], atol=1e-15)
    for a in np.radians([0, 12, 35]):
        np.testing.assert_allclose(act.actuator_moment(a, np.pi / 2), [0, 1, 0], atol=1e-15)
    rng = np.random.default_rng(0)
    m = act.actuator_moment(0.3, rng.uniform(0, 2 * np.pi, 100))
    np.testing.assert_allclose(np.linalg.norm(m, axis=1), 1.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(alphas, st.floats(0, 2 * np.pi))
def test_actuator_moment_rotation_identity(alpha, theta):
    a = 3 * np.cos(alpha) * np.sin(alpha) / np.sqrt(3 * np.sin(alpha) ** 2 + 1)
    ref = rot_z(np.pi) @ rot_y(-np.arcsin(a)) @ rot_x(theta) @ np.array([0, 0, 1.0])
    # Rot_z(180) flips x and y; the closed form keeps x = A cos(theta), y = sin(theta)
    np.testing.assert_allclose(np.abs(act.actuator_moment(alpha, theta)), np.abs(ref), atol=1e-12)


def test_alpha_bounds():
    with pytest.raises(ValueError):
        act.actuator_moment(np.radians(36), 0.0)


# --- commands and gamma ----------------------------------------------------------


def test_command_geometry():
    p = np.array([0.1, 0.2, 0.05])
    cmd = act.command_for(p, [1, 0, 0], 0.0, D)
    np.testing.assert_allclose(cmd.position, p + [0, 0, D], atol=1e-15)
    np.testing.assert_allclose(cmd.rotation_axis, [-1, 0, 0], atol=1e-15)
    a = np.radians(15)
    cmd = act.command_for(p, [1, 0, 0], a, D)
    np.testing.assert_allclose(cmd.position, p + [D * np.sin(a), 0, D * np.cos(a)], atol=1e-15)


def test_design_point_closure_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        h = rng.normal(size=3)
        h[2] *= 0.5
        h /= np.linalg.norm(h)
        p = rng.uniform(-0.2, 0.2, 3)
        a = rng.uniform(0, act.MAX_ALPHA)
        cmd = act.command_for(p, h, a, D, spin_phase=rng.uniform(0, 6))
        axis = act.command_field_axis(cmd, p)
        sin_ang = np.linalg.norm(np.cross(axis / np.linalg.norm(axis), h))
        assert sin_ang <= 1e-9 and axis @ h > 0


def test_gamma_examples():
    a = np.radians(15)
    pa = act.design_actuator_position(a, D)
    assert act.gamma(pa, a, [0, 0, 0], [1, 0, 0]) < 1e-9
    g = act.straight_gamma(D * np.sin(a), a, D)
    # direct evaluation of the field-axis angle
    r = np.array([D * np.sin(a), 0, 0]) - pa
    ax = np.cross(dipole_field_vec(act.actuator_moment(a, 0.0), r), dipole_field_vec(act.actuator_moment(a, np.pi / 2), r))
    assert g == pytest.approx(np.arccos(ax[0] / np.linalg.norm(ax)), abs=1e-12)
    assert g > 0


def test_field_axis_phase_invariance():
    a = np.radians(20)
    pa = act.design_actuator_position(a, D)
    pc = np.array([0.02, 0.0, 0.0])
    ax0 = act.field_rotation_axis(pa, a, pc)
    ax1 = act.field_rotation_axis(pa, a, pc, phase0=np.pi / 4)
    np.testing.assert_allclose(ax0 / np.linalg.norm(ax0), ax1 / np.linalg.norm(ax1), atol=1e-12)


def test_gamma_monotone_in_straight_travel():
    for a_deg in (10, 20, 30):
        a = np.radians(a_deg)
        g = [act.straight_gamma(m, a, D) for m in np.linspace(0, D * np.sin(a), 60)]
        assert np.all(np.diff(g) >= -1e-12)


# --- averaged force ------------------------------------------------------------------


def test_mean_force_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.uniform(0, act.MAX_ALPHA)
        h = np.array([1.0, rng.uniform(-0.3, 0.3), 0.0])
        r = act.straight_r(rng.uniform(0, 0.03), a, D) + rng.normal(size=3) * 0.005
        assert act.mean_propulsive_force(r, h, a, MAGS) == pytest.approx(mean_fp_oracle(r, h, a), rel=1e-10)


def test_mean_force_zero_at_alpha_zero():
    f = act.straight_fp(0.0, 0.0, D, MAGS)
    scale = act.straight_fp(0.0, np.radians(10), D, MAGS)
    assert abs(f) <= 1e-12 * abs(scale)


def test_mean_force_grows_with_alpha_and_converges():
    f10 = act.straight_fp(0.0, np.radians(10), D, MAGS)
    f30 = act.straight_fp(0.0, np.radians(30), D, MAGS)
    assert f30 > f10 > 0
    assert act.straight_fp(0.01, 0.3, D, MAGS, n_theta=64) == pytest.approx(act.straight_fp(0.01, 0.3, D, MAGS, n_theta=512), rel=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * np.pi))
def test_mean_force_phase_offset_invariant(off):
    a = np.radians(18)
    r = act.straight_r(0.01, a, D)
    h = np.array([1.0, 0, 0])
    assert act.mean_propulsive_force(r, h, a, MAGS, phase_offset=off) == pytest.approx(
        act.mean_propulsive_force(r, h, a, MAGS), rel=1e-12, abs=1e-15)


def test_command_mean_force_matches_analysis_frame():
    a = np.radians(15)
    p = np.array([0.2, 0.3, 0.05])
    h = np.array([0.0, 1.0, 0.0])
    cmd = act.command_for(p, h, a, D)
    f = act.command_mean_force(cmd, p + 0.01 * h, h, MAGS, n_theta=64)
    assert f @ h == pytest.approx(act.straight_fp(0.01, a, D, MAGS), rel=1e-9)


# --- zero and critical points ----------------------------------------------------------


def dense_root(fn, lo, hi, n=100_001):
    xs = np.linspace(lo, hi, n)
    v = np.array([fn(x) for x in xs])
    k = np.nonzero(np.sign(v[:-1]) != np.sign(v[1:]))[0][0]
    return xs[k] - v[k] * (xs[k + 1] - xs[k]) / (v[k + 1] - v[k])


def test_zero_point_straight_oracles():
    a = np.radians(15)
    z = act.zero_point_straight(a, D, MAGS)
    assert z.found
    assert act.straight_fp(z.x - 1e-3, a, D, MAGS) > 0 > act.straight_fp(z.x + 1e-3, a, D, MAGS)
    oracle = dense_root(lambda m: act.straight_fp(m, a, D, MAGS, n_theta=32), 0.0, D * np.sin(a), n=20_001)
    assert z.x == pytest.approx(oracle, abs=1e-5)


def test_critical_point_straight_oracle():
    a = np.radians(25)
    c = act.critical_point_straight(a, D)
    assert c.found
    assert act.straight_gamma(c.x, a, D) == pytest.approx(np.pi / 4, abs=1e-6)
    oracle = dense_root(lambda m: act.straight_gamma(m, a, D) - np.pi / 4, 0.0, D * np.sin(a), n=20_001)
    assert c.x == pytest.approx(oracle, abs=1e-5)


def test_critical_point_straight_unreached_is_flagged():
    # at small alpha gamma stays below 45 deg all the way to the actuator foot
    a = np.radians(15)
    c = act.critical_point_straight(a, D)
    assert not c.found
    assert c.x == pytest.approx(D * np.sin(a), rel=1e-6)
    assert act.straight_gamma(c.x, a, D) < np.pi / 4


def test_zero_point_straight_increasing():
    z = [act.zero_point_straight(np.radians(a), D, MAGS).x for a in range(5, 36, 5)]
    assert np.all(np.diff(z) > 0)


def test_bend_points_against_dense_oracle():
    a = np.radians(20)
    z = act.zero_point_bend(a, D, R, MAGS)
    c = act.critical_point_bend(a, D, R)
    zo = dense_root(lambda b: act.bend_fp(b, a, D, R, MAGS, n_theta=32), 0.0, np.pi / 2, n=4001)
    co = dense_root(lambda b: act.bend_gamma(b, a, D, R) - np.pi / 4, 0.0, np.pi / 2, n=4001)
    assert z.x == pytest.approx(zo, abs=1e-4)
    assert c.x == pytest.approx(co, abs=1e-4)


def test_bend_design_point():
    a = np.radians(12)
    assert act.bend_gamma(0.0, a, D, R) < 1e-9
    np.testing.assert_allclose(act.bend_r(0.0, a, D, R), -act.design_actuator_position(a, D), atol=1e-15)


def test_analysis_alpha_range():
    with pytest.raises(ValueError):
        act.zero_point_straight(np.radians(4), D, MAGS)


# --- controller --------------------------------------------------------------------------


def test_sma_examples():
    w = act.VelocityWindow(1.0)
    for t, x in enumerate([0.0, 0.004, 0.009, 0.015]):
        w.push(float(t), [x, 0, 0])
    assert act.sma_velocity(w) == pytest.approx(0.005)
    w = act.VelocityWindow(0.2)
    for k in range(4):
        w.push(0.2 * k, [0.1, 0.1, 0.0])
    assert act.sma_velocity(w) == 0.0


def test_sma_on_arc_uses_chords():
    w = act.VelocityWindow(0.5)
    rad = 0.02
    phis = [0.0, 0.2, 0.5, 0.9]
    for k, ph in enumerate(phis):
        w.push(0.5 * k, [rad * np.cos(ph), rad * np.sin(ph), 0])
    chords = [2 * rad * np.sin((b - a) / 2) / 0.5 for a, b in zip(phis, phis[1:])]
    assert act.sma_velocity(w) == pytest.approx(np.mean(chords), rel=1e-12)


def test_window_spacing_enforced():
    w = act.VelocityWindow(0.2)
    w.push(0.0, [0, 0, 0])
    with pytest.raises(ValueError):
        w.push(0.3, [0, 0, 0])
    with pytest.raises(ValueError):
        act.sma_velocity(w)


def test_adaptive_alpha_rule():
    p = act.ControlParams()
    assert p.alpha_high == pytest.approx(np.radians(15)) and p.alpha_low == pytest.approx(np.radians(7.5))
    assert p.v_threshold == pytest.approx(5.7e-3)
    assert act.adaptive_alpha(10e-3, p) == p.alpha_high
    assert act.adaptive_alpha(5e-3, p) == p.alpha_low
    assert act.adaptive_alpha(p.v_threshold, p) == p.alpha_low


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 0.1))
def test_adaptive_alpha_two_valued(v):
    p = act.ControlParams()
    assert act.adaptive_alpha(v, p) in (p.alpha_low, p.alpha_high)


def test_actuation_step_closure():
    from smal.localization import Pose6D

    w = act.VelocityWindow(0.2)
    for k in range(4):
        w.push(0.2 * k, [0.002 * k, 0, 0])
    pose = Pose6D(np.array([0.1, 0.1, 0.05]), [0, 0, 1], [1, 0, 0])
    cmd = act.actuation_step(pose, w, act.ControlParams())
    assert cmd.actuating_angle == pytest.approx(np.radians(15))
    assert act.command_gamma(cmd, pose.position, pose.heading) <= 1e-9


def test_control_params_validation():
    with pytest.raises(ValueError):
        act.ControlParams(alpha_low=np.radians(20))
    with pytest.raises(ValueError):
        act.ControlParams(delta_t=0.0)


def test_intersection_alpha_sign_flip():
    root = act.intersection_alpha(D, R, MAGS)
    assert root.found and np.radians(15) <= root.x <= np.radians(25)

    def diff(a):
        return act.zero_point_bend(a, D, R, MAGS).x - act.critical_point_bend(a, D, R).x

    assert diff(root.x - np.radians(2)) < 0 < diff(root.x + np.radians(2))


def test_bend_critical_point_nearly_constant():
    crit = np.degrees([act.critical_point_bend(np.radians(a), D, R).x for a in (10, 20, 30)])
    assert np.ptp(crit) <= 5 and 35 <= crit.min() and crit.max() <= 50
