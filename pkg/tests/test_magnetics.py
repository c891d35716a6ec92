import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smal.magnetics import (
    KM,
    MU0,
    DipoleSource,
    MagnetSpec,
    Ring,
    SingularPointError,
    Sphere,
    actuator_spec,
    capsule_spec,
    dipole_field,
    dipole_field_vec,
    dipole_force,
    dipole_force_vec,
    field_at_points,
    moment_magnitude,
    superposed_field,
)


def field_oracle(m, r):
    """Scalar-by-scalar evaluation of B = k (3 r (r.m) / |r|^5 - m / |r|^3)."""
    x, y, z = r
    rn = (x * x + y * y + z * z) ** 0.5
    dot = m[0] * x + m[1] * y + m[2] * z
    return [1e-7 * (3.0 * c * dot / rn**5 - mc / rn**3) for c, mc in zip((x, y, z), m)]


def fd_force(m_a, m_c, r, h=1e-6):
    """Central difference of m_c . b_a(r)."""
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (m_c @ dipole_field_vec(m_a, r + e) - m_c @ dipole_field_vec(m_a, r - e)) / (2 * h)
    return g


vec3 = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).map(np.array).filter(lambda v: np.linalg.norm(v) > 0.1)


def test_on_axis_field():
    b = dipole_field(DipoleSource([0, 0, 0], [0, 0, 1], 1.0), [0, 0, 1])
    np.testing.assert_allclose(b, [0, 0, 2e-7], atol=1e-22)


def test_equatorial_field():
    b = dipole_field(DipoleSource([0, 0, 0], [0, 0, 1], 1.0), [1, 0, 0])
    np.testing.assert_allclose(b, [0, 0, -1e-7], atol=1e-22)


def test_field_matches_scalar_oracle():
    r = np.array([1.0, 0.0, 1.0])
    np.testing.assert_allclose(dipole_field_vec(np.array([0, 0, 1.0]), r), field_oracle([0, 0, 1.0], r), rtol=1e-14)


def test_km_is_mu0_over_4pi():
    assert KM == pytest.approx(MU0 / (4 * np.pi), rel=1e-15)


def test_superposition_basics():
    src = DipoleSource([0, 0, 0], [0.3, 0.1, 1], 2.0)
    p = np.array([0.05, 0.02, 0.1])
    assert np.all(superposed_field([], p) == 0)
    np.testing.assert_allclose(superposed_field([src, src], p), 2 * dipole_field(src, p), rtol=1e-15)


def test_superposition_additive_and_vectorised():
    a = DipoleSource([0.1, 0.2, 0.2], [0, 0.2, 1], 68.75)
    c = DipoleSource([0.12, 0.18, 0.08], [1, 0, 0.1], 0.98)
    pts = np.array([[0.06 * i, 0.06 * j, 0.0] for i in range(3) for j in range(3)])
    single = np.array([dipole_field(a, p) + dipole_field(c, p) for p in pts])
    both = np.array([superposed_field([a, c], p) for p in pts])
    np.testing.assert_allclose(both, single, rtol=1e-15)
    vec = field_at_points(np.array([a.moment, c.moment]), np.array([a.position, c.position]), pts)
    np.testing.assert_allclose(vec, single, rtol=1e-12)
    np.testing.assert_allclose(superposed_field([c, a], pts[3]), both[3], rtol=1e-15)


def test_coaxial_force():
    f = dipole_force(DipoleSource([0, 0, 0], [0, 0, 1], 1.0), DipoleSource([0, 0, 1], [0, 0, 1], 1.0))
    np.testing.assert_allclose(f, [0, 0, -6e-7], atol=1e-20)


def test_perpendicular_pair_force():
    # m_a along r, m_c perpendicular to both
    f = dipole_force_vec(np.array([0, 0, 1.0]), np.array([1.0, 0, 0]), np.array([0, 0, 1.0]))
    assert abs(f[2]) < 1e-20
    assert np.linalg.norm(f) == pytest.approx(3 * MU0 / (4 * np.pi), rel=1e-12)


def test_force_matches_fd_gradient_on_random_configs():
    rng = np.random.default_rng(3)
    for _ in range(200):
        r = rng.normal(size=3)
        r *= rng.uniform(0.05, 0.3) / np.linalg.norm(r)
        m_a = rng.normal(size=3) * 50
        m_c = rng.normal(size=3)
        f = dipole_force_vec(m_a, m_c, r)
        np.testing.assert_allclose(f, fd_force(m_a, m_c, r, h=1e-6 * np.linalg.norm(r)), rtol=1e-6, atol=1e-9 * np.linalg.norm(f))


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, vec3)
def test_newton_third_law(r, m_a, m_c):
    f_ac = dipole_force_vec(m_a, m_c, r)
    f_ca = dipole_force_vec(m_c, m_a, -r)
    np.testing.assert_allclose(f_ac, -f_ca, rtol=1e-9, atol=1e-12 * np.linalg.norm(f_ac))


@settings(max_examples=100, deadline=None)
@given(vec3, vec3, st.floats(0.1, 10))
def test_field_linear_in_moment_and_inverse_cube(r, m, scale):
    b = dipole_field_vec(m, r)
    np.testing.assert_allclose(dipole_field_vec(scale * m, r), scale * b, rtol=1e-12, atol=1e-30)
    np.testing.assert_allclose(dipole_field_vec(m, 2 * r), b / 8, rtol=1e-12, atol=1e-30)


def test_singular_point_guard():
    with pytest.raises(SingularPointError):
        dipole_field_vec(np.array([0, 0, 1.0]), np.array([0, 0, 1e-7]))
    with pytest.raises(SingularPointError):
        dipole_force_vec(np.array([0, 0, 1.0]), np.array([0, 0, 1.0]), np.zeros(3))


def test_source_validation():
    with pytest.raises(ValueError):
        DipoleSource([0, 0, 0], [0, 0, 0], 1.0)
    with pytest.raises(ValueError):
        DipoleSource([0, 0, 0], [0, 0, 1], 0.0)
    s = DipoleSource([0, 0, 0], [0, 3, 4], 2.0)
    assert np.linalg.norm(s.moment_dir) == pytest.approx(1.0, abs=1e-9)


def test_moment_magnitudes():
    # 50 mm sphere, 1.32 T: pi d^3 / 6 * Br / mu0
    vol = np.pi * 0.05**3 / 6
    assert moment_magnitude(actuator_spec()) == pytest.approx(1.32 * vol / (4e-7 * np.pi), rel=1e-12)
    assert moment_magnitude(actuator_spec()) == pytest.approx(68.75, abs=0.01)
    ring_vol = np.pi / 4 * (0.0128**2 - 0.009**2) * 0.015
    assert moment_magnitude(capsule_spec()) == pytest.approx(1.26 * ring_vol / (4e-7 * np.pi), rel=1e-12)
    assert moment_magnitude(MagnetSpec(Sphere(0.01), 0.0)) == 0.0


def test_shape_validation():
    with pytest.raises(ValueError):
        Ring(0.01, 0.012, 0.01)
    with pytest.raises(ValueError):
        Sphere(-1.0)
    with pytest.raises(ValueError):
        MagnetSpec(Sphere(0.01), -0.1)
