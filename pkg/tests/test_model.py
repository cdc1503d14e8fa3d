"""Model-layer tests: frame algebra, geometry measures, forcing calculus.

Expected numbers are recomputed in the tests from closed forms (areas of
ellipses, hand-expanded trigonometric integrals), never copied from the
module under test.
"""

import numpy as np
import pytest

from fsilab.errors import ConfigError
from fsilab.model import (
    BodyGeometry,
    Forcing,
    PhysicalParams,
    StructuralState,
    body_to_inertial,
    coupling_constants,
    flow_direction_in_body_frame,
    flow_direction_in_body_frame_2d,
    forcing_load,
    normalize_forcing,
    perp,
    rotation_matrix,
    rotation_matrix_2d,
    stiffness_in_body_frame,
    stiffness_in_body_frame_2d,
    sup_norm,
)


# ---------------------------------------------------------------------------
# frame algebra
# ---------------------------------------------------------------------------

def test_perp_is_quarter_turn():
    assert np.allclose(perp([1.0, 0.0]), [0.0, 1.0])
    assert np.allclose(perp([0.0, 1.0]), [-1.0, 0.0])
    a = np.array([0.3, -1.7])
    assert np.allclose(perp(perp(a)), -a)
    assert abs(np.dot(perp(a), a)) < 1e-15


def test_rotation_matrix_properties():
    rng = np.random.default_rng(7)
    for theta in rng.uniform(-10, 10, 5):
        q = rotation_matrix(theta)
        assert np.allclose(q @ q.T, np.eye(3), atol=1e-14)
        assert abs(np.linalg.det(q) - 1.0) < 1e-14
        # axis is fixed
        assert np.allclose(q @ [1, 0, 0], [1, 0, 0])
        # in-plane block matches the 2d version
        assert np.allclose(q[1:, 1:], rotation_matrix_2d(theta))
    # quarter turn sends e2 to e3
    assert np.allclose(rotation_matrix(np.pi / 2) @ [0, 1, 0], [0, 0, 1],
                       atol=1e-15)


def test_rotated_stiffness_keeps_spectrum():
    a = np.array([[2.0, 0.0, 0.0], [0.0, 4.0, 1.0], [0.0, 1.0, 3.0]])
    for theta in (0.0, 0.4, -2.2):
        b = stiffness_in_body_frame(a, theta)
        assert np.allclose(np.sort(np.linalg.eigvalsh(b)),
                           np.sort(np.linalg.eigvalsh(a)), atol=1e-12)
        assert np.allclose(b, b.T, atol=1e-14)
    assert np.allclose(stiffness_in_body_frame(a, 0.0), a)
    # 2d block agrees when there is no axis coupling
    b2 = stiffness_in_body_frame_2d(a[1:, 1:], 0.7)
    assert np.allclose(stiffness_in_body_frame(a, 0.7)[1:, 1:], b2,
                       atol=1e-14)


def test_flow_direction_in_body_frame():
    b = flow_direction_in_body_frame(0.0, np.pi / 2, [1.0, 0.0])
    assert np.allclose(b, [0.0, 1.0, 0.0], atol=1e-15)
    # rotating the frame by pi/2 moves the in-plane direction backwards
    b = flow_direction_in_body_frame_2d(np.pi / 2, [1.0, 0.0])
    assert np.allclose(b, [0.0, -1.0], atol=1e-15)
    # unit length always
    for theta in (0.1, 1.0, -3.0):
        v = flow_direction_in_body_frame(theta, 0.9, [0.6, 0.8])
        assert abs(np.linalg.norm(v) - 1.0) < 1e-14


# ---------------------------------------------------------------------------
# parameters and state
# ---------------------------------------------------------------------------

def test_params_validation():
    with pytest.raises(ConfigError):
        PhysicalParams(lam=-1.0)
    with pytest.raises(ConfigError):
        PhysicalParams(stiffness=np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ConfigError):
        PhysicalParams(stiffness=np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ConfigError):
        PhysicalParams(b_tilde=[1.0, 1.0])
    p = PhysicalParams(stiffness=np.diag([9.0, 4.0, 1.0]))
    assert p.rho1 == pytest.approx(1.0)
    assert p.rho2 == pytest.approx(9.0)
    assert p.rho1_2d == pytest.approx(1.0)
    p.require_planar()
    with pytest.raises(ConfigError):
        PhysicalParams(alpha=1.0).require_planar()


def test_state_vector_round_trip():
    s = StructuralState(xi=[1, 2], delta=[3, 4], omega=5, theta=6)
    v = s.as_vector()
    assert np.allclose(v, [1, 2, 3, 4, 5, 6])
    s2 = StructuralState.from_vector(v)
    assert np.allclose(s2.as_vector(), v)
    s2.xi[0] = 99.0
    assert s.xi[0] == 1.0  # no aliasing


def test_body_to_inertial_rotates():
    s = StructuralState(xi=[1.0, 0.0], delta=[1.0, 0.0], theta=np.pi / 2)
    chi, gamma = body_to_inertial(s)
    assert np.allclose(chi, [0.0, 1.0], atol=1e-15)
    assert np.allclose(gamma, [0.0, 1.0], atol=1e-15)
    assert np.linalg.norm(chi) == pytest.approx(np.linalg.norm(s.delta))


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def test_ellipse_measures():
    g = BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.3))
    assert g.area() == pytest.approx(np.pi * 0.24, rel=1e-15)
    assert g.bounding_radius() == pytest.approx(0.8, abs=1e-5)
    assert g.inradius() == pytest.approx(0.3)
    assert np.allclose(g.first_moment(), 0.0)
    inside = g.contains(0.79, 0.0)
    outside = g.contains(0.81, 0.0)
    assert bool(inside) and not bool(outside)


def test_offset_body_moves_with_com_offset():
    g = BodyGeometry(kind="ellipse", semi_axes=(0.5, 0.2),
                     com_offset=(0.1, -0.05))
    assert bool(g.contains(0.55, -0.05))
    assert not bool(g.contains(0.55, 0.2))
    assert np.allclose(g.first_moment(), g.area() * np.array([0.1, -0.05]))


def test_rectangle_and_polygon_measures():
    r = BodyGeometry(kind="rectangle", half_widths=(0.5, 0.25))
    assert r.area() == pytest.approx(0.5)
    assert r.inradius() == pytest.approx(0.25)
    assert r.bounding_radius() == pytest.approx(np.hypot(0.5, 0.25))
    # a unit square given off-center is recentered on its centroid
    sq = BodyGeometry(kind="polygon",
                      vertices=[[1, 1], [2, 1], [2, 2], [1, 2]])
    assert sq.area() == pytest.approx(1.0)
    assert bool(sq.contains(0.0, 0.0))
    assert not bool(sq.contains(0.6, 0.0))
    assert sq.bounding_radius() == pytest.approx(np.sqrt(0.5), rel=1e-12)
    assert sq.inradius() == pytest.approx(0.5, abs=0.01)


def test_geometry_validation():
    with pytest.raises(ConfigError):
        BodyGeometry(kind="ellipse", semi_axes=(0.0, 0.3))
    with pytest.raises(ConfigError):
        BodyGeometry(kind="blob")
    with pytest.raises(ConfigError):
        BodyGeometry(kind="polygon", vertices=[[0, 0], [1, 0]])
    with pytest.raises(ConfigError):
        # body sticks out of its declared cutoff disk
        BodyGeometry(kind="ellipse", semi_axes=(1.5, 0.3), cutoff_radius=1.0)


def test_coupling_constants_closed_form():
    p = PhysicalParams(lam=50.0, varpi=0.03, tau=0.03)
    g = BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.3),
                     com_offset=(0.0, 0.02))
    c, d = coupling_constants(p, g)
    area = np.pi * 0.24
    assert c == pytest.approx(1.0 - 50.0 * 0.03 * area, rel=1e-14)
    # b_tilde = e2, so d picks up -M3 = -area * offset_3
    assert d == pytest.approx(50.0 * 0.03 * (-area * 0.02), rel=1e-14)
    # homogeneous body: no rotational forcing
    g0 = BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.3))
    assert coupling_constants(p, g0)[1] == 0.0


# ---------------------------------------------------------------------------
# forcing
# ---------------------------------------------------------------------------

def test_forcing_value_and_derivative():
    f = Forcing(period=2 * np.pi, cos_coeffs=[0.5, 0.2], sin_coeffs=[1.0, 0.3])
    t = np.linspace(0.0, 7.0, 11)
    want = (0.5 + 0.2 * np.cos(t) + 1.0 * np.sin(t) + 0.3 * np.sin(2 * t))
    assert np.allclose(f.value(t), want, atol=1e-14)
    eps = 1e-6
    fd = (f.value(t + eps) - f.value(t - eps)) / (2 * eps)
    assert np.allclose(f.derivative(t), fd, atol=1e-7)
    assert f.value(0.0) == pytest.approx(f.value(f.period), abs=1e-12)


def test_sup_norm_and_normalize():
    f = Forcing(period=2 * np.pi, sin_coeffs=[1.0])
    assert sup_norm(f) == pytest.approx(1.0, abs=1e-12)
    g = Forcing(period=2 * np.pi, cos_coeffs=[0.0, 3.0], sin_coeffs=[4.0])
    # 3 cos t + 4 sin t has amplitude 5
    assert sup_norm(g) == pytest.approx(5.0, abs=1e-10)
    gn = normalize_forcing(g)
    assert sup_norm(gn) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ConfigError):
        normalize_forcing(Forcing(period=1.0))


def test_forcing_load_closed_form():
    # V = sin t on [0, 2 pi]: int V^2 = pi, int Vdot^2 = pi
    f = Forcing(period=2 * np.pi, sin_coeffs=[1.0])
    assert forcing_load(f) == pytest.approx(2 * np.pi, rel=1e-14)
    # quadrature cross-check on a mixed profile
    g = Forcing(period=3.0, cos_coeffs=[0.3, 1.0, -0.4], sin_coeffs=[0.7])
    t = np.linspace(0.0, 3.0, 20001)
    v, vd = g.value(t), g.derivative(t)
    quad = np.trapezoid(v * v + vd * vd, t)
    assert forcing_load(g) == pytest.approx(quad, rel=1e-7)


def test_forcing_is_zero():
    assert Forcing(period=1.0).is_zero()
    assert not Forcing(period=1.0, sin_coeffs=[1e-9]).is_zero()
