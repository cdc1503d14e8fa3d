"""Staggered-grid operator identities.

Most of these are exact discrete statements (adjointness, skew symmetry,
telescoping) and are tested at rounding-error tolerances on random fields;
the few consistency checks use grid refinement.
"""

import numpy as np
import pytest

from conftest import random_pinned
from fsilab.errors import ConfigError
from fsilab.grid import (
    FlowField,
    MollifierKernel,
    advect,
    avg_u2_to_u3,
    avg_u3_to_u2,
    dissipation_norms,
    divergence,
    face_inner,
    gradient_faces,
    make_grid,
    max_divergence,
    perp_gradient,
    project,
    resample_flow,
    rigid_field,
)
from fsilab.model import BodyGeometry


# ---------------------------------------------------------------------------
# construction and masks
# ---------------------------------------------------------------------------

def test_grid_validation(fat_ellipse):
    with pytest.raises(ConfigError):
        make_grid(4.0, 16)
    with pytest.raises(ConfigError):
        make_grid(-1.0, 48)
    with pytest.raises(ConfigError):
        # outer radius must dominate the cutoff radius threefold
        make_grid(2.5, 48, fat_ellipse)
    with pytest.raises(ConfigError):
        big = BodyGeometry(kind="ellipse", semi_axes=(4.5, 0.3),
                           cutoff_radius=5.0)
        make_grid(4.0, 64, big)


def test_masks_are_consistent(small_grid):
    g = small_grid
    # active faces sit between two active cells
    a = g.active_c
    assert np.array_equal(g.active_u2[1:-1, :], a[:-1, :] & a[1:, :])
    assert not g.active_u2[0, :].any() and not g.active_u2[-1, :].any()
    # stairstep disk area approaches pi R^2
    got = a.sum() * g.h ** 2
    assert got == pytest.approx(np.pi * g.R ** 2, rel=4 * g.h / g.R)
    # body cells are active and roughly measure the body area
    assert (a | ~g.body_c).all()
    assert g.body_c.sum() * g.h ** 2 == pytest.approx(
        g.geometry.area(), rel=0.15)
    # fluid = active minus body on every lattice
    assert np.array_equal(g.fluid_u3, g.active_u3 & ~g.body_u3)


def test_flowfield_pin(small_grid):
    f = FlowField.zeros(small_grid)
    f.u2 += 1.0
    f.pin()
    assert (f.u2[~small_grid.active_u2] == 0.0).all()
    assert (f.u2[small_grid.active_u2] == 1.0).all()


# ---------------------------------------------------------------------------
# exact operator identities
# ---------------------------------------------------------------------------

def test_divergence_gradient_adjointness(box_grid):
    g = box_grid
    rng = np.random.default_rng(11)
    u2, u3 = random_pinned(g, rng)
    phi = rng.standard_normal((g.n, g.n))
    phi[~g.active_c] = 0.0
    g2, g3 = gradient_faces(g, phi)
    lhs = (np.sum(g2 * u2) + np.sum(g3 * u3)) * g.h ** 2
    rhs = -np.sum(phi * divergence(g, u2, u3)) * g.h ** 2
    assert lhs == pytest.approx(rhs, abs=1e-11 * max(1.0, abs(rhs)))


def test_deformation_identity(box_grid):
    # 2||D u||^2 = ||grad u||^2 + ||div u||^2 for pinned fields (box sums)
    rng = np.random.default_rng(3)
    u2, u3 = random_pinned(box_grid, rng)
    two_dsq, gradsq = dissipation_norms(box_grid, u2, u3, region="all")
    divsq = float(np.sum(divergence(box_grid, u2, u3)[box_grid.active_c] ** 2)
                  * box_grid.h ** 2)
    assert two_dsq == pytest.approx(gradsq + divsq, rel=1e-12)


def test_interpolations_are_transposes(small_grid):
    g = small_grid
    rng = np.random.default_rng(5)
    a = rng.standard_normal(g.active_u2.shape)
    b = rng.standard_normal(g.active_u3.shape)
    lhs = np.sum(a * avg_u3_to_u2(g, b))
    rhs = np.sum(b * avg_u2_to_u3(g, a))
    assert lhs == pytest.approx(rhs, rel=1e-13)


def test_advection_is_energy_neutral(small_grid):
    g = small_grid
    rng = np.random.default_rng(13)
    for shape in (g.active_u2.shape, g.active_u3.shape):
        f = rng.standard_normal(shape)
        # pinned boundary: zero on the array edge is what the step enforces
        f[0, :] = f[-1, :] = 0.0
        f[:, 0] = f[:, -1] = 0.0
        w0 = rng.standard_normal(shape)  # advecting samples are arbitrary
        w1 = rng.standard_normal(shape)
        c = advect(g, f, w0, w1)
        work = np.sum(f * c) * g.h ** 2
        scale = np.abs(f).max() ** 2 * max(np.abs(w0).max(), np.abs(w1).max())
        assert abs(work) < 1e-12 * scale * f.size * g.h ** 2


def test_advection_consistency():
    # against (w . grad) f for smooth data and a divergence-free w (the skew
    # form differs from plain advection by f div(w) / 2); second-order in h
    def setup(n):
        g = make_grid(4.0, n)
        x2, x3 = g.u2_x2, g.u2_x3
        f = np.sin(x2) * np.cos(0.7 * x3) * np.exp(-0.25 * (x2**2 + x3**2))
        # w = perp-grad of sin(0.5 x2) cos(0.4 x3)
        w0 = -0.4 * np.sin(0.5 * x2) * np.sin(0.4 * x3)
        w1 = -0.5 * np.cos(0.5 * x2) * np.cos(0.4 * x3)
        exact = (w0 * (np.cos(x2) * np.cos(0.7 * x3)
                       - 0.5 * x2 * np.sin(x2) * np.cos(0.7 * x3))
                 + w1 * (-0.7 * np.sin(x2) * np.sin(0.7 * x3)
                         - 0.5 * x3 * np.sin(x2) * np.cos(0.7 * x3)))
        exact *= np.exp(-0.25 * (x2**2 + x3**2))
        got = advect(g, f, w0, w1)
        # compare well inside the domain (edge stencils see the padding)
        m = (np.abs(x2) < 2.0) & (np.abs(x3) < 2.0)
        return np.abs(got - exact)[m].max()

    e1, e2 = setup(64), setup(128)
    assert e1 / e2 > 3.0


def test_perp_gradient_is_divergence_free(box_grid):
    g = box_grid
    rng = np.random.default_rng(17)
    phi = rng.standard_normal((g.n + 1, g.n + 1))
    f2, f3 = perp_gradient(g, phi)
    d = divergence(g, f2, f3)
    assert np.abs(d).max() < 1e-11 * np.abs(phi).max() / g.h ** 2 * g.h


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

def test_projection_kills_divergence(small_grid):
    g = small_grid
    rng = np.random.default_rng(23)
    u2 = rng.standard_normal(g.active_u2.shape)
    u3 = rng.standard_normal(g.active_u3.shape)
    p2, p3, phi = project(g, u2, u3)
    assert max_divergence(g, p2, p3) < 1e-10
    assert abs(phi[g.active_c].mean()) < 1e-12
    # idempotent: projecting again changes nothing
    q2, q3, _ = project(g, p2, p3)
    scale = max(np.abs(p2).max(), np.abs(p3).max())
    assert np.abs(q2 - p2).max() < 1e-10 * scale
    assert np.abs(q3 - p3).max() < 1e-10 * scale


def test_projection_preserves_divergence_free_part(box_grid):
    g = box_grid
    rng = np.random.default_rng(29)
    phi = rng.standard_normal((g.n + 1, g.n + 1))
    # restrict the stream function so the field is zero near pinned faces
    r = np.hypot(g.corner_x2, g.corner_x3)
    phi *= np.clip((g.R - 1.0 - r) / 0.5, 0.0, 1.0)
    f2, f3 = perp_gradient(g, phi)
    p2, p3, _ = project(g, f2, f3)
    scale = max(np.abs(f2).max(), 1e-300)
    assert np.abs(p2 - f2).max() < 1e-10 * scale
    assert np.abs(p3 - f3).max() < 1e-10 * scale


def test_projection_is_orthogonal(small_grid):
    # the removed part is a gradient, orthogonal to what remains
    g = small_grid
    rng = np.random.default_rng(31)
    u2 = rng.standard_normal(g.active_u2.shape)
    u3 = rng.standard_normal(g.active_u3.shape)
    u2[~g.active_u2] = 0.0
    u3[~g.active_u3] = 0.0
    p2, p3, _ = project(g, u2, u3)
    ip = face_inner(g, p2, p3, u2 - p2, u3 - p3, region="active")
    norm = face_inner(g, u2, u3, u2, u3, region="active")
    assert abs(ip) < 1e-10 * norm


# ---------------------------------------------------------------------------
# diffusion solve
# ---------------------------------------------------------------------------

def test_diffusion_solves_backward_euler(small_grid):
    g = small_grid
    dt = 0.01
    rng = np.random.default_rng(37)
    u2, u3 = random_pinned(g, rng)
    s2, s3 = g.diffusion(dt).solve(u2, u3)
    # apply (I - dt lap) with Dirichlet-zero neighbors and recover the rhs
    a = dt / g.h ** 2
    for s, rhs, act in ((s2, u2, g.active_u2), (s3, u3, g.active_u3)):
        pad = np.zeros((s.shape[0] + 2, s.shape[1] + 2))
        pad[1:-1, 1:-1] = s
        lap = (pad[:-2, 1:-1] + pad[2:, 1:-1] + pad[1:-1, :-2]
               + pad[1:-1, 2:] - 4.0 * s)
        res = s - a * lap - rhs
        assert np.abs(res[act]).max() < 1e-11
        assert (s[~act] == 0.0).all()


def test_diffusion_damps_energy(small_grid):
    g = small_grid
    rng = np.random.default_rng(41)
    u2, u3 = random_pinned(g, rng)
    s2, s3 = g.diffusion(0.05).solve(u2, u3)
    before = face_inner(g, u2, u3, u2, u3, region="active")
    after = face_inner(g, s2, s3, s2, s3, region="active")
    assert after < before


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------

def test_mollifier_weights(small_grid):
    h = small_grid.h
    k = MollifierKernel(2 * h, h)
    assert k.weights.sum() == pytest.approx(1.0, rel=1e-14)
    assert (k.weights >= 0.0).all()
    # constants are preserved away from the boundary
    ones = np.ones((48, 48))
    out = k.apply(ones)
    m = k.weights.shape[0] // 2
    assert np.allclose(out[m:-m, m:-m], 1.0, atol=1e-13)
    with pytest.raises(ConfigError):
        MollifierKernel(1.5 * h, h)
    with pytest.raises(ConfigError):
        MollifierKernel(2 * h, h, eta_max=1.9 * h)


def test_mollifier_sup_bound(small_grid):
    # sup |u_eta| <= c_eta ||u||_2 (discrete Cauchy-Schwarz, exact)
    g = small_grid
    k = MollifierKernel(2 * g.h, g.h)
    rng = np.random.default_rng(43)
    for _ in range(5):
        u = rng.standard_normal((g.n + 1, g.n))
        out = k.apply(u)
        l2 = g.h * np.linalg.norm(u)
        assert np.abs(out).max() <= k.c_eta * l2 * (1 + 1e-12)


def test_mollifier_smooths_a_spike(small_grid):
    g = small_grid
    k = MollifierKernel(3 * g.h, g.h)
    u = np.zeros((g.n, g.n))
    u[24, 24] = 1.0
    out = k.apply(u)
    assert out.sum() == pytest.approx(1.0, rel=1e-12)
    assert out.max() < 0.3  # mass got spread out


# ---------------------------------------------------------------------------
# rigid fields and resampling
# ---------------------------------------------------------------------------

def test_rigid_field_samples(small_grid):
    g = small_grid
    v2, v3 = rigid_field(g, np.array([1.0, 2.0]), 0.5)
    i, j = 10, 20
    assert v2[i, j] == pytest.approx(1.0 - 0.5 * g.u2_x3[i, j])
    assert v3[i, j] == pytest.approx(2.0 + 0.5 * g.u3_x2[i, j])
    # a pure rotation has zero divergence
    w2, w3 = rigid_field(g, np.zeros(2), 1.0)
    assert np.abs(divergence(g, w2, w3)).max() < 1e-12


def test_resample_flow_between_grids(fat_ellipse):
    src = make_grid(4.0, 64, fat_ellipse)
    dst = make_grid(4.0, 96, fat_ellipse)
    r = np.hypot(src.corner_x2, src.corner_x3)
    phi = np.exp(-r ** 2) * np.clip((src.R - 0.5 - r) / 0.5, 0.0, 1.0)
    f2, f3 = perp_gradient(src, phi)
    g2, g3 = resample_flow(src, f2, f3, dst)
    assert max_divergence(dst, g2, g3) < 1e-10
    rd = np.hypot(dst.corner_x2, dst.corner_x3)
    phid = np.exp(-rd ** 2) * np.clip((dst.R - 0.5 - rd) / 0.5, 0.0, 1.0)
    e2, e3 = perp_gradient(dst, phid)
    err = face_inner(dst, g2 - e2, g3 - e3, g2 - e2, g3 - e3)
    ref = face_inner(dst, e2, e3, e2, e3)
    assert err < 0.01 * ref
