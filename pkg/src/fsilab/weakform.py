"""Weak-form diagnostics for computed time-periodic orbits.

A time-periodic solution of the penalized flow--body system satisfies an
integral identity against every divergence-free test field that is rigid
over the body and vanishes near the outer rim: multiply the momentum
balance by the test field, integrate over the box and one period, move the
time derivative onto the test field, and eliminate the hydrodynamic loads
through the body equations.  Everything that remains is computable from
the recorded phase snapshots alone, so the value of the identity -- the
weak residual -- measures how far a discrete orbit is from an exact weak
solution, and it shrinks under space-time refinement.

Two consequences of the identity are exposed as separate reports: the
mean-rotation balance obtained from the steady rotational test field, and
the per-phase displacement bounds it implies.
"""

import numpy as np
from dataclasses import dataclass

from .energy import LiftingBasis, default_cutoff
from .grid import (MollifierKernel, avg_u2_to_u3, avg_u3_to_u2,
                   face_inner, max_divergence, velocity_gradients)
from .model import (coupling_constants, flow_direction_in_body_frame_2d,
                    forcing_load, perp, rotation_matrix_2d,
                    stiffness_in_body_frame_2d)
from .periodic import point_bound_envelope
from .stepper import advecting_velocity


# ---------------------------------------------------------------------------
# transport and deformation pairings
# ---------------------------------------------------------------------------

def _centered_gradient(f, h, axis):
    """Centered difference of a pinned field on its own lattice.

    Values past the array edge are taken as zero, matching the pinned
    boundary convention of the velocity components.
    """
    fp = np.moveaxis(f, axis, 0)
    out = np.empty_like(fp)
    out[1:-1] = (fp[2:] - fp[:-2]) / (2.0 * h)
    out[0] = fp[1] / (2.0 * h)
    out[-1] = -fp[-2] / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def transport_term(grid, kernel, lam, u2, u3, xi, omega):
    """Advective derivative (w . grad) u sampled on the velocity faces.

    The advecting field w is the mollified relative velocity lam * (u_eta
    - v) interpolated to each face, and the derivative is the plain
    centered quadrature of the advective form.  (The time stepper instead
    uses a skew flux stencil, which it needs for discrete energy
    neutrality; a diagnostic pairing has no such constraint, so it takes
    the direct route.)
    """
    w22, w32, w23, w33 = advecting_velocity(
        grid, kernel, lam, u2, u3, xi, omega)
    a2 = (w22 * _centered_gradient(u2, grid.h, 0)
          + w32 * _centered_gradient(u2, grid.h, 1))
    a3 = (w23 * _centered_gradient(u3, grid.h, 0)
          + w33 * _centered_gradient(u3, grid.h, 1))
    return a2, a3

def deformation_inner(grid, u2, u3, v2, v3):
    """2 * integral of D(u) : D(v) over the whole box.

    Polarization of the dissipation norm: double weight on the two normal
    derivatives (cell centered) and single weight on the product of the
    symmetrized shears (corners), times the cell area.
    """
    d2u2, d3u3, d3u2, d2u3 = velocity_gradients(grid, u2, u3)
    e2v2, e3v3, e3v2, e2v3 = velocity_gradients(grid, v2, v3)
    val = (np.sum(2.0 * (d2u2 * e2v2 + d3u3 * e3v3))
           + np.sum((d3u2 + d2u3) * (e3v2 + e2v3))) * grid.h ** 2
    return float(val)


# ---------------------------------------------------------------------------
# test fields
# ---------------------------------------------------------------------------

@dataclass
class TestField:
    """Divergence-free diagnostic field built on the lifted rigid basis.

    The field is a (possibly time-dependent) combination of the three
    members of ``LiftingBasis`` -- two cut-off translations and one cut-off
    rotation -- so it is exactly divergence-free, vanishes outside the
    cutoff support, and equals its rigid part rho + alpha x_perp wherever
    the cutoff is identically one (in particular over the body).

    coeff / coeff_dot   map a phase state to the three basis weights and
                        their time derivatives
    rigid / rigid_dot   map a phase state to (rho, alpha) and its rate,
                        the values used by the structural terms
    """

    __test__ = False  # not a test case, despite the class name

    basis: LiftingBasis
    label: str
    coeff: object
    coeff_dot: object
    rigid: object
    rigid_dot: object

    def at_state(self, state):
        w = self.coeff(state)
        return self.basis.field(w[:2], w[2])

    def rate_at_state(self, state):
        w = self.coeff_dot(state)
        return self.basis.field(w[:2], w[2])

    def divergence_max(self, state):
        f2, f3 = self.at_state(state)
        return max_divergence(self.basis.grid, f2, f3)

    @property
    def support_radius(self):
        """Largest face radius carrying a nonzero basis value."""
        g = self.basis.grid
        r = 0.0
        for (f2, f3) in self.basis.fields:
            for f, x2, x3 in ((f2, g.u2_x2, g.u2_x3), (f3, g.u3_x2, g.u3_x3)):
                hit = f != 0.0
                if hit.any():
                    r = max(r, float(np.hypot(x2[hit], x3[hit]).max()))
        return r


def test_field_G(theta_bar, psi, grid, basis=None):
    """Steady rotational test field, theta_bar x_perp under the cutoff.

    Perp-gradient of the corner stream -psi(r) theta_bar r^2 / 2; the rigid
    part is (rho, alpha) = (0, theta_bar) and nothing depends on time.
    """
    b = basis if basis is not None else LiftingBasis(grid, psi)
    w = np.array([0.0, 0.0, float(theta_bar)])
    zero3 = np.zeros(3)
    zero2 = np.zeros(2)
    return TestField(
        basis=b, label="G",
        coeff=lambda s: w,
        coeff_dot=lambda s: zero3,
        rigid=lambda s: (zero2, float(theta_bar)),
        rigid_dot=lambda s: (zero2, 0.0))


def test_field_I(chi_bar, psi, grid, basis=None):
    """Counter-rotated translational test field for a mean displacement.

    ``chi_bar`` is a fixed vector (typically the period mean of the
    inertially rotated spring displacement, see ``orbit_chi_bar``).  The
    rigid part rho(t) = Q(theta(t))^T chi_bar follows the body angle read
    off each phase state, so its exact rate is -omega * perp(rho).
    """
    b = basis if basis is not None else LiftingBasis(grid, psi)
    cb = np.asarray(chi_bar, dtype=float)

    def rho(s):
        return rotation_matrix_2d(s.structure.theta).T @ cb

    def coeff(s):
        r = rho(s)
        return np.array([r[0], r[1], 0.0])

    def coeff_dot(s):
        r = -s.structure.omega * perp(rho(s))
        return np.array([r[0], r[1], 0.0])

    return TestField(
        basis=b, label="I",
        coeff=coeff,
        coeff_dot=coeff_dot,
        rigid=lambda s: (rho(s), 0.0),
        rigid_dot=lambda s: (-s.structure.omega * perp(rho(s)), 0.0))


def orbit_chi_bar(orbit):
    """Period mean (trapezoid) of Q(theta) delta along the orbit."""
    t = orbit.times
    chi = np.array([rotation_matrix_2d(s.structure.theta) @ s.structure.delta
                    for s in orbit.states])
    return np.trapezoid(chi, t, axis=0) / orbit.period


# ---------------------------------------------------------------------------
# the time-integrated weak residual
# ---------------------------------------------------------------------------

def _momentum_integrand(state, testfield, params, forcing, c, d, kernel):
    """One phase sample of the weak-form integrand."""
    g = testfield.basis.grid
    st = state.structure
    u2, u3 = state.flow.u2, state.flow.u3
    f2, f3 = testfield.at_state(state)
    df2, df3 = testfield.rate_at_state(state)

    # transport + frame rotation, with the same advecting field and skew
    # stencil the time stepper uses
    w22, w32, w23, w33 = advecting_velocity(
        g, kernel, params.lam, u2, u3, st.xi, st.omega)
    a2 = advect(g, u2, w22, w32) - st.omega * avg_u3_to_u2(g, u3)
    a3 = advect(g, u3, w23, w33) + st.omega * avg_u2_to_u3(g, u2)

    val = (-face_inner(g, u2, u3, df2, df3, region="active")
           + face_inner(g, a2, a3, f2, f3, region="active")
           + deformation_inner(g, u2, u3, f2, f3))

    # structural terms: loads eliminated through the body equations, the
    # xi_dot / omega_dot pieces integrated by parts onto the rigid part
    rho, alpha = testfield.rigid(state)
    rho_dot, alpha_dot = testfield.rigid_dot(state)
    vdot = float(forcing.derivative(state.time))
    bmat = stiffness_in_body_frame_2d(params.stiffness_2d, st.theta)
    bdir = flow_direction_in_body_frame_2d(st.theta, params.b_tilde)
    val += (np.dot(st.omega * perp(st.xi) + bmat @ st.delta
                   - c * vdot * bdir, rho)
            - np.dot(st.xi, rho_dot)) / params.varpi
    val += ((params.k * st.theta - d * vdot) * alpha
            - st.omega * alpha_dot) / params.tau
    return val


def weak_residual(orbit, testfield, params=None, forcing=None, eta=None):
    """Period-integrated weak form evaluated on a recorded orbit (signed).

    Trapezoid in time over the stored phases of

        -(u, d phi/dt) + ((transport + frame) u, phi) + 2 (D u, D phi)
        + [omega xi_perp + B(theta) delta - c V' b(theta)] . rho / varpi
        - xi . rho' / varpi + [k theta - d V'] alpha / tau
        - omega alpha' / tau

    where (rho, alpha) is the rigid part of the test field.  The pressure
    never appears because the test field is exactly divergence-free.  The
    value is linear in the test field and tends to zero as the orbit is
    refined in space and time.
    """
    p = orbit.params if params is None else params
    f = orbit.forcing if forcing is None else forcing
    g = orbit.states[0].flow.grid
    kernel = MollifierKernel(2.0 * g.h if eta is None else eta, g.h)
    c, d = coupling_constants(p, orbit.geometry)
    t = orbit.times
    vals = np.array([_momentum_integrand(s, testfield, p, f, c, d, kernel)
                     for s in orbit.states])
    return float(np.trapezoid(vals, t))


# ---------------------------------------------------------------------------
# mean-rotation identity
# ---------------------------------------------------------------------------

@dataclass
class ThetaBarReport:
    """Both sides of the mean-rotation balance plus context."""

    theta_bar: float
    lhs: float                # k theta_bar^2 T / tau
    rhs: float                # forcing work minus flux against G
    mismatch: float           # |lhs - rhs|; equals |weak residual at G|
    cal_v: float
    ratio: float              # |theta_bar| / [calV (T^-1/2 + calV / T)]

    def as_dict(self):
        return {"theta_bar": self.theta_bar, "lhs": self.lhs,
                "rhs": self.rhs, "mismatch": self.mismatch,
                "cal_v": self.cal_v, "ratio": self.ratio}


def mean_rotation_identity(orbit, psi=None, params=None, forcing=None,
                           eta=None):
    """Evaluate the identity pinning the mean angle of a periodic orbit.

    Testing the weak form with the steady rotational field built from the
    orbit's own mean angle isolates

        k theta_bar^2 T / tau = -(theta_bar d / tau) int V' dt
            - int [ 2 (D u, D G) + ((transport + frame) u, G) ] dt .

    Both sides are assembled independently; their mismatch is algebraically
    the weak residual at G, so it shrinks under refinement.  ``ratio``
    compares |theta_bar| with the forcing envelope calV (T^-1/2 + calV/T),
    which stays bounded when the mean rotation is controlled by the data.
    """
    p = orbit.params if params is None else params
    f = orbit.forcing if forcing is None else forcing
    g = orbit.states[0].flow.grid
    if psi is None:
        psi = default_cutoff(orbit.geometry)
    kernel = MollifierKernel(2.0 * g.h if eta is None else eta, g.h)
    _, d = coupling_constants(p, orbit.geometry)
    t = orbit.times
    T = orbit.period
    theta = np.array([s.structure.theta for s in orbit.states])
    theta_bar = float(np.trapezoid(theta, t) / T)

    gf = test_field_G(theta_bar, psi, g)
    flux = np.empty(t.size)
    for j, s in enumerate(orbit.states):
        st = s.structure
        u2, u3 = s.flow.u2, s.flow.u3
        f2, f3 = gf.at_state(s)
        w22, w32, w23, w33 = advecting_velocity(
            g, kernel, p.lam, u2, u3, st.xi, st.omega)
        a2 = advect(g, u2, w22, w32) - st.omega * avg_u3_to_u2(g, u3)
        a3 = advect(g, u3, w23, w33) + st.omega * avg_u2_to_u3(g, u2)
        flux[j] = (deformation_inner(g, u2, u3, f2, f3)
                   + face_inner(g, a2, a3, f2, f3, region="active"))
    vdot = np.array([float(f.derivative(tj)) for tj in t])

    lhs = p.k * theta_bar ** 2 * T / p.tau
    rhs = (-(theta_bar * d / p.tau) * np.trapezoid(vdot, t)
           - np.trapezoid(flux, t))
    cal_v = forcing_load(f)
    env = cal_v * (T ** -0.5 + cal_v / T)
    if env > 0.0:
        ratio = abs(theta_bar) / env
    else:
        ratio = 0.0 if theta_bar == 0.0 else np.inf
    return ThetaBarReport(theta_bar=theta_bar, lhs=float(lhs),
                          rhs=float(rhs), mismatch=float(abs(lhs - rhs)),
                          cal_v=float(cal_v), ratio=float(ratio))


# ---------------------------------------------------------------------------
# pointwise bounds
# ---------------------------------------------------------------------------

@dataclass
class PointwiseReport:
    """Per-phase displacement bounds and the mean-oscillation inequality."""

    max_abs_delta: float
    max_abs_theta: float
    bound_delta: float        # T^-1/2 ||delta||_L2 + total variation
    bound_theta: float
    max_violation: float      # worst signed excess over either bound
    pw_lhs: float             # int |theta - theta_bar|^2
    pw_rhs: float             # T^2 int |omega|^2
    pw_ok: bool
    envelope: float           # forcing-only envelope for max|d| + max|th|
    ratio_point: float
    ok: bool

    def as_dict(self):
        return {"max_abs_delta": self.max_abs_delta,
                "max_abs_theta": self.max_abs_theta,
                "bound_delta": self.bound_delta,
                "bound_theta": self.bound_theta,
                "max_violation": self.max_violation,
                "pw_lhs": self.pw_lhs, "pw_rhs": self.pw_rhs,
                "pw_ok": self.pw_ok, "envelope": self.envelope,
                "ratio_point": self.ratio_point, "ok": self.ok}


def _sup_chain(t, values, period):
    """max, bound, and excess for |x(t)| <= T^-1/2 ||x||_L2 + int |x'|.

    ``values`` is (n, k); the variation integral is the sum of sample
    increments, the quadrature for which the chain is exactly true for the
    sampled sequence: the minimum sample is below the (trapezoid-) weighted
    mean, which is below the root mean square, and every other sample is
    reached from the minimum by a telescoping walk of increments.
    """
    mag = np.linalg.norm(values, axis=1)
    l2 = np.sqrt(np.trapezoid(mag ** 2, t))
    tv = float(np.linalg.norm(np.diff(values, axis=0), axis=1).sum())
    bound = l2 / np.sqrt(period) + tv
    return float(mag.max()), float(bound), float((mag - bound).max())


def pointwise_bound_report(orbit, forcing=None):
    """Check the displacement bounds a periodic orbit must satisfy.

    For both the spring displacement and the angle the report verifies

        |x(t_j)| <= T^-1/2 ||x||_L2 + int |x'| dt      for every phase j,

    which is exact for the sampled sequence up to rounding (see
    ``_sup_chain``), then the zero-mean oscillation inequality

        int |theta - theta_bar|^2 dt <= T^2 int |omega|^2 dt,

    and finally compares max|delta| + max|theta| against the forcing-only
    envelope of ``point_bound_envelope``.
    """
    f = orbit.forcing if forcing is None else forcing
    t = orbit.times
    T = orbit.period
    delta = np.array([s.structure.delta for s in orbit.states])
    theta = np.array([s.structure.theta for s in orbit.states])
    omega = np.array([s.structure.omega for s in orbit.states])

    max_d, bound_d, exc_d = _sup_chain(t, delta, T)
    max_th, bound_th, exc_th = _sup_chain(t, theta[:, None], T)
    max_violation = max(exc_d, exc_th)
    scale = max(1.0, bound_d, bound_th)

    theta_bar = np.trapezoid(theta, t) / T
    pw_lhs = float(np.trapezoid((theta - theta_bar) ** 2, t))
    pw_rhs = float(T ** 2 * np.trapezoid(omega ** 2, t))
    pw_ok = bool(pw_lhs <= pw_rhs * (1.0 + 1e-12) + 1e-30)

    cal_v = forcing_load(f)
    envelope = point_bound_envelope(cal_v, T)
    total = max_d + max_th
    if envelope > 0.0:
        ratio = total / envelope
    else:
        ratio = 0.0 if total == 0.0 else np.inf
    ok = bool(max_violation <= 1e-10 * scale) and pw_ok
    return PointwiseReport(
        max_abs_delta=max_d, max_abs_theta=max_th,
        bound_delta=bound_d, bound_theta=bound_th,
        max_violation=float(max_violation),
        pw_lhs=pw_lhs, pw_rhs=pw_rhs, pw_ok=pw_ok,
        envelope=float(envelope), ratio_point=float(ratio), ok=ok)
