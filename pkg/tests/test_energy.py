"""Energy bookkeeping: reports, the perturbed-energy sandwich, detectors."""

import numpy as np
import pytest

from fsilab.energy import (LiftingBasis, SeriesRecorder, compute_zeta1,
                           default_cutoff, dissipation_study,
                           energy_balance_residual, estimate_trace_constant,
                           fit_decay_rate, perturbed_energy, record_run,
                           total_energy)
from fsilab.errors import EstimateUndefined
from fsilab.grid import FlowField, make_grid
from fsilab.model import (BodyGeometry, Forcing, PhysicalParams,
                          StructuralState)
from fsilab.stepper import StepConfig, Stepper, SystemState

from conftest import random_pinned

T = 2.0 * np.pi
DT = T / 512


@pytest.fixture(scope="module")
def body():
    return BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.4))


@pytest.fixture(scope="module")
def grid(body):
    return make_grid(4.0, 48, body)


@pytest.fixture(scope="module")
def params():
    return PhysicalParams(lam=5.0)


@pytest.fixture(scope="module")
def basis(grid, body):
    return LiftingBasis(grid, default_cutoff(body))


@pytest.fixture(scope="module")
def free_run(grid, params, body, basis):
    """Free decay from an excited structure, recorded every step."""
    zeta = compute_zeta1(params, basis)
    st = Stepper(grid, params, body, Forcing(period=T), StepConfig(dt=DT))
    s0 = st.initial_state(StructuralState(delta=np.array([0.3, 0.0]),
                                          theta=0.2))
    final, series = record_run(st, s0, 1024, zeta, basis, every=1)
    return st, series, zeta


def _random_state(grid, rng, scale=1.0):
    u2, u3 = random_pinned(grid, rng)
    fl = FlowField.zeros(grid)
    fl.u2[:] = scale * u2
    fl.u3[:] = scale * u3
    st = StructuralState(xi=scale * rng.standard_normal(2),
                         delta=scale * rng.standard_normal(2),
                         omega=scale * rng.standard_normal(),
                         theta=scale * rng.standard_normal())
    return SystemState(fl, st, 0.0)


# ---------------------------------------------------------------------------
# energy report
# ---------------------------------------------------------------------------

def test_zero_state_has_zero_energy(grid, params):
    rep = total_energy(SystemState(FlowField.zeros(grid),
                                   StructuralState(), 0.0), params)
    assert rep.E == 0.0


def test_report_components_sum_to_total(grid, params):
    rng = np.random.default_rng(3)
    rep = total_energy(_random_state(grid, rng), params)
    parts = (rep.kinetic_fluid + rep.xi_term + rep.spring_term
             + rep.omega_term + rep.theta_term)
    assert rep.E == pytest.approx(parts, rel=1e-15)
    assert min(rep.kinetic_fluid, rep.xi_term, rep.spring_term,
               rep.omega_term, rep.theta_term) >= 0.0


def test_pure_rotation_energy(grid, params):
    st = StructuralState(theta=0.5)
    rep = total_energy(SystemState(FlowField.zeros(grid), st, 0.0), params)
    assert rep.E == pytest.approx(params.k * 0.25 / (2.0 * params.tau),
                                  rel=1e-14)
    assert rep.kinetic_fluid == 0.0 and rep.xi_term == 0.0


# ---------------------------------------------------------------------------
# lifting basis
# ---------------------------------------------------------------------------

def test_lifting_field_is_rigid_motion_in_core(grid, body, basis):
    psi = default_cutoff(body)
    delta, theta = np.array([0.4, -0.2]), 0.3
    h2, h3 = basis.field(delta, theta)
    r_in = psi.r0 - 2.0 * grid.h
    m2 = np.hypot(grid.u2_x2, grid.u2_x3) <= r_in
    m3 = np.hypot(grid.u3_x2, grid.u3_x3) <= r_in
    assert np.abs(h2[m2] - (delta[0] - theta * grid.u2_x3[m2])).max() < 1e-12
    assert np.abs(h3[m3] - (delta[1] + theta * grid.u3_x2[m3])).max() < 1e-12


def test_lifting_gram_spd_and_bounds(grid, basis):
    eig = np.linalg.eigvalsh(basis.gram)
    assert eig[0] > 0.0
    assert basis.g_l2 == pytest.approx(eig[-1], rel=1e-12)
    # the sup constant dominates the core rigid values |delta| + |theta| r
    assert basis.c_sup >= 1.0


# ---------------------------------------------------------------------------
# perturbed-energy sandwich
# ---------------------------------------------------------------------------

def test_sandwich_on_random_states(grid, params, basis):
    zeta = compute_zeta1(params, basis)
    rng = np.random.default_rng(11)
    for i in range(200):
        s = _random_state(grid, rng, scale=10.0 ** rng.uniform(-2, 2))
        e = total_energy(s, params).E
        ez = perturbed_energy(s, params, zeta, basis)
        assert 0.5 * e <= ez <= 1.5 * e, f"state {i}"


def test_sandwich_on_free_trajectory(free_run):
    _, series, _ = free_run
    assert np.all(series.E_zeta >= 0.5 * series.E - 1e-14)
    assert np.all(series.E_zeta <= 1.5 * series.E + 1e-14)


def test_sandwich_fails_beyond_threshold(grid, params, basis):
    # anti-aligned state: u = -H(delta, theta), xi = -delta, omega = -theta
    # drives every cross term negative; doubling zeta_1 breaks the lower
    # bound on it, so the computed threshold is genuinely sharp (within 2x)
    zeta = compute_zeta1(params, basis)
    delta, theta = np.array([0.3, 0.0]), 0.2
    h2, h3 = basis.field(delta, theta)
    fl = FlowField.zeros(grid)
    fl.u2[:] = -h2
    fl.u3[:] = -h3
    fl.pin()
    s = SystemState(fl, StructuralState(xi=-delta, delta=delta,
                                        omega=-theta, theta=theta), 0.0)
    e = total_energy(s, params).E
    assert 0.5 * e <= perturbed_energy(s, params, zeta, basis)
    assert perturbed_energy(s, params, 2.0 * zeta, basis) < 0.5 * e


def test_perturbed_energy_linear_in_zeta(grid, params, basis):
    rng = np.random.default_rng(5)
    s = _random_state(grid, rng)
    e = total_energy(s, params).E
    d1 = perturbed_energy(s, params, 0.1, basis) - e
    d2 = perturbed_energy(s, params, 0.2, basis) - e
    assert d2 == pytest.approx(2.0 * d1, rel=1e-12)


# ---------------------------------------------------------------------------
# trajectory diagnostics
# ---------------------------------------------------------------------------

def test_free_decay_rate_meets_guarantee(free_run):
    _, series, zeta = free_run
    # the guaranteed envelope decays at 2 zeta / 3; the fit runs faster
    assert fit_decay_rate(series) >= 0.9 * (2.0 * zeta / 3.0)
    assert series.E_zeta[-1] < series.E_zeta[0]


def test_trace_constant_positive_with_motion(free_run):
    _, series, _ = free_run
    kappa, t_min = estimate_trace_constant(series)
    assert kappa > 0.0
    assert series.t[0] <= t_min <= series.t[-1]


def test_trace_constant_undefined_without_motion(free_run):
    _, series, _ = free_run
    import dataclasses
    still = dataclasses.replace(
        series, xi=np.zeros_like(series.xi),
        omega=np.zeros_like(series.omega))
    with pytest.raises(EstimateUndefined):
        estimate_trace_constant(still)


def test_balance_residual_detects_corruption(free_run, params):
    st, series, _ = free_run
    _, rmax_clean, _ = energy_balance_residual(series, params, st.c, st.d)
    import dataclasses
    e = series.E.copy()
    e[len(e) // 2] += 0.05
    bad = dataclasses.replace(series, E=e)
    _, rmax_bad, _ = energy_balance_residual(bad, params, st.c, st.d)
    assert rmax_bad > max(4.0 * rmax_clean, 0.03)


def test_penalty_sink_recorded_nonnegative(free_run):
    _, series, _ = free_run
    assert np.all(series.penalty_sink >= 0.0)
    assert series.penalty_sink.max() > 0.0


def test_dissipation_study_free_decay(grid, params, body, basis):
    st = Stepper(grid, params, body, Forcing(period=T), StepConfig(dt=DT))
    s0 = st.initial_state(StructuralState(delta=np.array([0.2, 0.0])))
    rep, series = dissipation_study(st, s0, 256, basis)
    assert rep.decayed and rep.e_end < rep.e0
    assert rep.rate is not None and rep.rate > 0.0
    assert len(series) == 257
