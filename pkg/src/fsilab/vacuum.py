"""Closed-form structural oscillator with the fluid removed.

With no liquid the inertial-frame structure reduces to two decoupled linear
oscillators driven by the forcing rate:

    chi'' + A chi = (c - 1) Vdot(t) b_alpha        (translation, 3 modes)
    theta'' + k theta = d Vdot(t)                  (rotation)

Both are solved exactly by modal decomposition and undetermined
coefficients.  A forcing harmonic whose frequency matches a natural
frequency sqrt(eig(A)) or sqrt(k) produces a secular (linearly growing)
term — this is the resonant benchmark the coupled solver is contrasted
against.  A brute-force RK4 integrator over the same equations provides an
independent numerical route for validating the closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import coupling_constants, rotation_matrix_2d

_REL_TOL_RESONANCE = 1e-12


@dataclass
class _Harmonic:
    """One forcing harmonic A cos(Om t) + B sin(Om t) acting on one mode."""

    omega: float
    a: float
    b: float
    resonant: bool


class _Mode:
    """Scalar oscillator y'' + nu^2 y = sum of harmonics, solved exactly."""

    def __init__(self, nu, harmonics, y0, v0):
        self.nu = nu
        self.harmonics = harmonics
        yp0 = sum(h.a / (nu * nu - h.omega ** 2)
                  for h in harmonics if not h.resonant)
        vp0 = sum(h.omega * h.b / (nu * nu - h.omega ** 2)
                  for h in harmonics if not h.resonant)
        vp0 += sum(-h.b / (2.0 * h.omega) for h in harmonics if h.resonant)
        self.c_hom = y0 - yp0
        self.d_hom = (v0 - vp0) / nu

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        y = self.c_hom * np.cos(self.nu * t) + self.d_hom * np.sin(self.nu * t)
        for h in self.harmonics:
            if h.resonant:
                y = y + t * (h.a * np.sin(h.omega * t)
                             - h.b * np.cos(h.omega * t)) / (2.0 * h.omega)
            else:
                y = y + (h.a * np.cos(h.omega * t)
                         + h.b * np.sin(h.omega * t)) / (
                             self.nu ** 2 - h.omega ** 2)
        return y

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        v = self.nu * (self.d_hom * np.cos(self.nu * t)
                       - self.c_hom * np.sin(self.nu * t))
        for h in self.harmonics:
            if h.resonant:
                v = v + (h.a * np.sin(h.omega * t)
                         - h.b * np.cos(h.omega * t)) / (2.0 * h.omega)
                v = v + 0.5 * t * (h.a * np.cos(h.omega * t)
                                   + h.b * np.sin(h.omega * t))
            else:
                v = v + h.omega * (h.b * np.cos(h.omega * t)
                                   - h.a * np.sin(h.omega * t)) / (
                                       self.nu ** 2 - h.omega ** 2)
        return v

    @property
    def resonant(self):
        return any(h.resonant for h in self.harmonics)

    def secular_rate(self):
        """Growth rate of the resonant envelope, |y| ~ rate * t."""
        rate = 0.0
        for h in self.harmonics:
            if h.resonant:
                rate += np.hypot(h.a, h.b) / (2.0 * h.omega)
        return rate


def _mode_harmonics(gain, forcing, nu):
    """Harmonics of gain * Vdot(t) paired with resonance flags for nu."""
    out = []
    for m, om in enumerate(forcing.harmonics, start=1):
        a, b = forcing._ab(m)
        if a == 0.0 and b == 0.0:
            continue
        # Vdot harmonic m:  om*b cos(om t) - om*a sin(om t)
        res = abs(om - nu) <= _REL_TOL_RESONANCE * max(nu, 1.0)
        out.append(_Harmonic(om, gain * om * b, -gain * om * a, res))
    return out


class VacuumOrbit:
    """Exact trajectory of the fluid-free structure.

    Evaluation methods accept scalar or array times.  ``chi`` is the
    inertial-frame spring displacement (3-vector components stacked first).
    """

    def __init__(self, params, geometry, forcing, initial):
        c, d = coupling_constants(params, geometry)
        self.c, self.d = c, d
        self.params, self.forcing = params, forcing
        lam_a, u = np.linalg.eigh(params.stiffness)
        self._u = u
        b_lab = np.array([np.cos(params.alpha),
                          np.sin(params.alpha) * params.b_tilde[0],
                          np.sin(params.alpha) * params.b_tilde[1]])
        r = rotation_matrix_2d(initial.theta)
        chi0 = np.concatenate([[0.0], r @ initial.delta])
        gamma0 = np.concatenate([[0.0], r @ initial.xi])
        chidot0 = gamma0 - float(forcing.value(0.0)) * b_lab
        y0, v0 = u.T @ chi0, u.T @ chidot0
        gains = (c - 1.0) * (u.T @ b_lab)
        self.trans_modes = []
        for i in range(3):
            nu = float(np.sqrt(lam_a[i]))
            self.trans_modes.append(
                _Mode(nu, _mode_harmonics(gains[i], forcing, nu),
                      float(y0[i]), float(v0[i])))
        nu_rot = float(np.sqrt(params.k))
        self.rot_mode = _Mode(nu_rot, _mode_harmonics(d, forcing, nu_rot),
                              float(initial.theta), float(initial.omega))

    # -- evaluation ---------------------------------------------------------

    def chi(self, t):
        y = np.stack([m(t) for m in self.trans_modes])
        return self._u @ y

    def chi_dot(self, t):
        v = np.stack([m.derivative(t) for m in self.trans_modes])
        return self._u @ v

    def theta(self, t):
        return self.rot_mode(t)

    def theta_dot(self, t):
        return self.rot_mode.derivative(t)

    # -- resonance bookkeeping ----------------------------------------------

    @property
    def resonant_translation(self):
        return [m.resonant for m in self.trans_modes]

    @property
    def resonant_rotation(self):
        return self.rot_mode.resonant

    @property
    def resonant(self):
        return self.resonant_rotation or any(self.resonant_translation)

    def rotation_envelope_rate(self):
        """Linear growth rate of |theta|; equals |d| * amp/2 at resonance."""
        return self.rot_mode.secular_rate()


def vacuum_solve(params, geometry, forcing, initial):
    """Build the exact fluid-free trajectory from a structural state."""
    return VacuumOrbit(params, geometry, forcing, initial)


# ---------------------------------------------------------------------------
# brute-force cross-check route
# ---------------------------------------------------------------------------

_RK4_CACHE = {}


def _rk4_kernel():
    if "fn" in _RK4_CACHE:
        return _RK4_CACHE["fn"]
    from numba import njit

    @njit(cache=True)
    def run(amat, bvec, cm1, d, k, period, acos, bsin, y0, dt, nsteps, every):
        nout = nsteps // every + 1
        out = np.empty((nout, 8))
        y = y0.copy()
        out[0] = y
        dydt = np.empty(8)
        ka = np.empty(8)
        kb = np.empty(8)
        kc = np.empty(8)
        kd = np.empty(8)
        yt = np.empty(8)

        def vdot(t):
            s = 0.0
            for m in range(1, len(acos)):
                om = 2.0 * np.pi * m / period
                s += om * (bsin[m - 1] * np.cos(om * t)
                           - acos[m] * np.sin(om * t))
            return s

        def rhs(t, y, dydt):
            vd = vdot(t)
            for i in range(3):
                dydt[i] = y[3 + i]
                acc = cm1 * vd * bvec[i]
                for j in range(3):
                    acc -= amat[i, j] * y[j]
                dydt[3 + i] = acc
            dydt[6] = y[7]
            dydt[7] = -k * y[6] + d * vd

        t = 0.0
        row = 1
        for n in range(nsteps):
            rhs(t, y, ka)
            for i in range(8):
                yt[i] = y[i] + 0.5 * dt * ka[i]
            rhs(t + 0.5 * dt, yt, kb)
            for i in range(8):
                yt[i] = y[i] + 0.5 * dt * kb[i]
            rhs(t + 0.5 * dt, yt, kc)
            for i in range(8):
                yt[i] = y[i] + dt * kc[i]
            rhs(t + dt, yt, kd)
            for i in range(8):
                y[i] += dt * (ka[i] + 2.0 * kb[i] + 2.0 * kc[i] + kd[i]) / 6.0
            t += dt
            if (n + 1) % every == 0:
                out[row] = y
                row += 1
        return out

    _RK4_CACHE["fn"] = run
    return run


def integrate_structure(params, geometry, forcing, initial, t_end,
                        dt=1e-5, sample_every=1000):
    """RK4 integration of the fluid-free equations (independent route).

    Returns (times, chi (n,3), chidot (n,3), theta (n,), thetadot (n,)).
    """
    c, d = coupling_constants(params, geometry)
    b_lab = np.array([np.cos(params.alpha),
                      np.sin(params.alpha) * params.b_tilde[0],
                      np.sin(params.alpha) * params.b_tilde[1]])
    r = rotation_matrix_2d(initial.theta)
    chi0 = np.concatenate([[0.0], r @ initial.delta])
    chidot0 = np.concatenate([[0.0], r @ initial.xi]) \
        - float(forcing.value(0.0)) * b_lab
    y0 = np.concatenate([chi0, chidot0, [initial.theta, initial.omega]])
    nsteps = int(round(t_end / dt))
    m = len(forcing.harmonics)
    acos = np.zeros(m + 1)
    acos[:len(forcing.cos_coeffs)] = forcing.cos_coeffs
    bsin = np.zeros(m)
    bsin[:len(forcing.sin_coeffs)] = forcing.sin_coeffs
    run = _rk4_kernel()
    out = run(params.stiffness, b_lab, c - 1.0, d, params.k,
              forcing.period, acos, bsin, y0, dt, nsteps, sample_every)
    times = np.arange(out.shape[0]) * (dt * sample_every)
    return times, out[:, 0:3], out[:, 3:6], out[:, 6], out[:, 7]
