"""Experiment orchestration: runs, orbit searches, sweeps, and checks.

Every runner consumes an :class:`~fsilab.config.ExperimentConfig`, writes
its outputs (CSV tables, binary checkpoints, the fully resolved config)
into one output directory, and returns a small summary mapping.  Three
conventions hold throughout:

* CSV numerics carry 17 significant digits, so binary64 values
  round-trip exactly and identical configs produce byte-identical files;
* nothing reads the wall clock or iterates an unordered container into
  an output path;
* files are written to a temporary sibling and renamed into place, so a
  crash never leaves a half-written table behind.

Sweeps fan out at the granularity of sweep points (each point owns its
state exclusively) and record per-point failures as table rows instead
of aborting the study.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, canonical_json, config_hash
from .energy import (LiftingBasis, compute_zeta1, default_cutoff,
                     energy_balance_residual, record_run)
from .errors import ConfigError, FsilabError, NumericalError
from .grid import (FlowField, MollifierKernel, make_grid, max_divergence,
                   project, rigid_field)
from .model import (StructuralState, coupling_constants,
                    rotation_matrix_2d)
from .periodic import find_periodic_orbit, orbit_metrics, verify_periodicity
from .stepper import Stepper, SystemState, simulate
from .vacuum import integrate_structure, vacuum_solve
from .weakform import (mean_rotation_identity, orbit_chi_bar,
                       pointwise_bound_report, test_field_G, test_field_I,
                       weak_residual)

# ---------------------------------------------------------------------------
# deterministic file emission
# ---------------------------------------------------------------------------

TIME_SERIES_COLUMNS = (
    "t", "E", "E_zeta", "dissipation_2normDsq", "xi2", "xi3",
    "delta2", "delta3", "omega", "theta", "Sigma2", "Sigma3", "sigma1",
    "V", "Vdot", "div_max", "cfl",
)

ORBIT_METRIC_COLUMNS = (
    "T", "V-descriptor", "residual", "iterations", "max_abs_delta",
    "max_abs_theta", "L2_xi", "L2_omega", "L2_delta", "L2_theta",
    "int_grad_u_sq", "calV", "ratio_weaksol", "ratio_point",
)

DIAGNOSTIC_COLUMNS = (
    "test_field", "residual", "thetabar_lhs", "thetabar_rhs", "mismatch",
    "ratio_thetabar", "pointwise_ok", "max_violation",
)

_METRIC_KEYS = (
    "max_abs_delta", "max_abs_theta", "l2_xi_sq", "l2_omega_sq",
    "l2_delta_sq", "l2_theta_sq", "int_grad_u_sq", "cal_v",
    "ratio_weaksol", "ratio_point",
)


def fmt_float(x):
    """17-significant-digit decimal form (round-trip exact for binary64)."""
    return "%.17g" % float(x)


def _cell(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return fmt_float(value)


def atomic_write_text(path, text):
    """Write text via a temporary sibling and an atomic rename."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _prepare_outdir(cfg, outdir=None):
    out = Path(outdir if outdir is not None else cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "config.json", canonical_json(cfg.doc))
    return out


def _save_state(path, state):
    s = state.structure
    vec = np.concatenate([s.xi, s.delta, [s.omega, s.theta]])
    f = state.flow
    save_checkpoint(path, f.grid.n, f.grid.R, state.time,
                    f.u2, f.u3, f.p, vec)


def _load_state(path, grid):
    snap = load_checkpoint(path)
    if snap.n != grid.n or abs(snap.R - grid.R) > 1e-12 * grid.R:
        raise ConfigError(
            f"checkpoint {path} is on an n={snap.n}, R={snap.R} grid; "
            f"the configured grid is n={grid.n}, R={grid.R}")
    v = snap.structure
    return SystemState(
        FlowField(grid, snap.u2, snap.u3, snap.p),
        StructuralState(xi=v[0:2].copy(), delta=v[2:4].copy(),
                        omega=float(v[4]), theta=float(v[5])),
        snap.time)


def forcing_descriptor(forcing):
    """Compact comma-free description of V for CSV embedding."""
    cos = ";".join(fmt_float(a) for a in forcing.cos_coeffs)
    sin = ";".join(fmt_float(b) for b in forcing.sin_coeffs)
    return f"T={fmt_float(forcing.period)};cos=[{cos}];sin=[{sin}]"


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------

def _series_rows(ts):
    for i in range(len(ts)):
        yield (ts.t[i], ts.E[i], ts.E_zeta[i], ts.dissipation[i],
               ts.xi[i, 0], ts.xi[i, 1], ts.delta[i, 0], ts.delta[i, 1],
               ts.omega[i], ts.theta[i], ts.Sigma[i, 0], ts.Sigma[i, 1],
               ts.sigma1[i], ts.V[i], ts.Vdot[i], ts.div_max[i], ts.cfl[i])


def _kappa_running(ts):
    """Running minimum of the dissipation/structural-speed quotient.

    Samples whose denominator is below 1e-12 of the largest one seen in
    the whole series are skipped; rows before the first valid sample get
    nan.
    """
    den = np.sum(ts.xi ** 2, axis=1) + ts.omega ** 2
    num = ts.dissipation - 0.5 * ts.gradsq
    floor = 1e-12 * max(den.max(initial=0.0), 1e-300)
    out = np.full(len(ts), np.nan)
    best = np.inf
    for i in range(len(ts)):
        if den[i] > floor:
            best = min(best, num[i] / den[i])
        if np.isfinite(best):
            out[i] = best
    return out


def write_energy_report(path, ts, params, c, d):
    """Emit the t,E,E_zeta,dissipation,balance_residual,kappa_running table.

    The dissipation column is the full flux of the energy identity
    (viscous part plus the body-relaxation sink); the residual of row i
    is the defect of the identity over the step ending at sample i (row
    0 carries 0 by convention).
    """
    if len(ts) >= 2:
        r, _, _ = energy_balance_residual(ts, params, c, d)
        resid = np.concatenate([[0.0], r])
    else:
        resid = np.zeros(len(ts))
    kap = _kappa_running(ts)
    flux = ts.dissipation + ts.penalty_sink
    rows = ((ts.t[i], ts.E[i], ts.E_zeta[i], flux[i], resid[i], kap[i])
            for i in range(len(ts)))
    write_csv(path, ("t", "E", "E_zeta", "dissipation", "balance_residual",
                     "kappa_running"), rows)


def run_simulate(cfg, outdir=None):
    """Fixed-step coupled run from the zero state with energy observers.

    Writes series.csv (pinned observer columns), energy_report.csv, the
    final state as final.fsip, and the resolved config.  Returns a
    summary with the step count and the worst energy-balance defect.
    """
    out = _prepare_outdir(cfg, outdir)
    grid = make_grid(cfg.grid_R, cfg.grid_n, cfg.geometry)
    stepper = Stepper(grid, cfg.params, cfg.geometry, cfg.forcing, cfg.step)
    basis = LiftingBasis(grid, default_cutoff(cfg.geometry))
    zeta = compute_zeta1(cfg.params, basis)
    n_steps = int(round(cfg.run["n_periods"] * cfg.forcing.period
                        / cfg.step.dt))
    state = stepper.initial_state()
    final, ts = record_run(stepper, state, n_steps, zeta, basis,
                           every=cfg.run["record_every"])
    write_csv(out / "series.csv", TIME_SERIES_COLUMNS, _series_rows(ts))
    write_energy_report(out / "energy_report.csv", ts, cfg.params,
                        stepper.c, stepper.d)
    _save_state(out / "final.fsip", final)
    if len(ts) >= 2:
        _, rmax, rsum = energy_balance_residual(ts, cfg.params, stepper.c,
                                                stepper.d)
    else:
        rmax = rsum = 0.0
    return {"n_steps": n_steps, "final_E": float(ts.E[-1]),
            "balance_max": rmax, "balance_sum": rsum,
            "out": str(out)}


# ---------------------------------------------------------------------------
# periodic-orbit search and its archive
# ---------------------------------------------------------------------------

def orbit_metric_row(orbit):
    m = orbit.metrics
    mm = orbit_metrics(orbit)
    return (orbit.period, forcing_descriptor(orbit.forcing),
            orbit.residual, orbit.iterations, m.max_abs_delta,
            m.max_abs_theta, np.sqrt(m.l2_xi_sq), np.sqrt(m.l2_omega_sq),
            np.sqrt(m.l2_delta_sq), np.sqrt(m.l2_theta_sq),
            m.int_grad_u_sq, m.cal_v, mm["ratio_weaksol"],
            mm["ratio_point"])


def orbit_diagnostics(orbit, eta=None):
    """Weak-form diagnostics rows (one per test field) for an orbit."""
    psi = default_cutoff(orbit.geometry)
    grid = orbit.states[0].flow.grid
    rep = mean_rotation_identity(orbit, psi=psi, eta=eta)
    pw = pointwise_bound_report(orbit)
    gfield = test_field_G(rep.theta_bar, psi, grid)
    r_g = weak_residual(orbit, gfield, eta=eta)
    ifield = test_field_I(orbit_chi_bar(orbit), psi, grid)
    r_i = weak_residual(orbit, ifield, eta=eta)
    ok = 1 if pw.ok else 0
    return [
        ("G", r_g, rep.lhs, rep.rhs, rep.mismatch, rep.ratio, ok,
         pw.max_violation),
        ("I", r_i, np.nan, np.nan, np.nan, np.nan, ok, pw.max_violation),
    ]


def save_orbit(outdir, orbit, eta=None):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    for i, state in enumerate(orbit.states):
        _save_state(out / f"phase_{i:04d}.fsip", state)
    write_csv(out / "orbit_metrics.csv", ORBIT_METRIC_COLUMNS,
              [orbit_metric_row(orbit)])
    write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS,
              orbit_diagnostics(orbit, eta=eta))
    per = verify_periodicity(orbit)
    text = (f"converged {int(orbit.converged)}\n"
            f"iterations {orbit.iterations}\n"
            f"residual {fmt_float(orbit.residual)}\n"
            f"omega_mean_defect {fmt_float(per.omega_mean_defect)}\n"
            f"velocity_mean_defect {fmt_float(per.velocity_mean_defect)}\n"
            f"endpoint_defect {fmt_float(per.endpoint_defect)}\n")
    atomic_write_text(out / "convergence.txt", text)


def run_find_periodic(cfg, outdir=None, on_iteration=None):
    """Fixed-point orbit search; writes the orbit archive directory."""
    out = _prepare_outdir(cfg, outdir)
    grid = make_grid(cfg.grid_R, cfg.grid_n, cfg.geometry)
    warm = None
    if cfg.solver["warm_start"]:
        warm = _load_state(cfg.solver["warm_start"], grid)
    orbit = find_periodic_orbit(
        grid, cfg.params, cfg.geometry, cfg.forcing, cfg.step,
        tol=cfg.solver["tol"], max_iters=cfg.solver["max_iters"],
        warm_start=warm, aitken=cfg.solver["aitken"],
        n_phases=cfg.solver["n_phases"], on_iteration=on_iteration)
    save_orbit(out, orbit, eta=cfg.step.eta)
    if not orbit.converged:
        raise NumericalError(
            f"orbit search stalled at residual {orbit.residual:.3e} "
            f"after {orbit.iterations} iterations (archive written to "
            f"{out})")
    return {"residual": orbit.residual, "iterations": orbit.iterations,
            "converged": orbit.converged, "out": str(out)}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _sweep_doc(kind, base_doc, value):
    """Per-point raw document (derived defaults intentionally unresolved)."""
    doc = dict(base_doc)
    if kind == "sweep-frequency":
        doc["forcing.period_T"] = value
    elif kind == "sweep-radius":
        r0, n0 = base_doc["grid.R"], base_doc["grid.n"]
        doc["grid.R"] = value
        doc["grid.n"] = int(round(n0 * value / r0))
    elif kind == "sweep-eta":
        doc["step.eta"] = value
    else:
        raise AssertionError(kind)
    return doc


def _sweep_point(args):
    """Run one sweep point (module level so worker processes can load it).

    Returns (value, row-mapping).  Numerical failures become rows with
    converged=0 and an error string; they never abort the sweep.
    """
    kind, base_doc, value = args
    doc = _sweep_doc(kind, base_doc, value)
    row = {"converged": 0, "residual": np.nan, "iterations": 0,
           "error": ""}
    for key in _METRIC_KEYS:
        row[key] = np.nan
    try:
        cfg = ExperimentConfig.from_doc(doc)
        row["config_hash"] = config_hash(cfg.doc)
        if kind == "sweep-radius":
            row["n"] = cfg.grid_n
            row["h"] = 2.0 * cfg.grid_R / cfg.grid_n
        if kind == "sweep-frequency":
            vac = vacuum_solve(cfg.params, cfg.geometry, cfg.forcing,
                               StructuralState())
            row["vacuum_resonant"] = 1 if vac.resonant else 0
            row["vacuum_rot_rate"] = vac.rotation_envelope_rate()
        grid = make_grid(cfg.grid_R, cfg.grid_n, cfg.geometry)
        orbit = find_periodic_orbit(
            grid, cfg.params, cfg.geometry, cfg.forcing, cfg.step,
            tol=cfg.solver["tol"], max_iters=cfg.solver["max_iters"],
            aitken=cfg.solver["aitken"], n_phases=cfg.solver["n_phases"])
        row["converged"] = 1 if orbit.converged else 0
        row["residual"] = orbit.residual
        row["iterations"] = orbit.iterations
        row.update(orbit_metrics(orbit))
    except FsilabError as exc:
        row.setdefault("config_hash", config_hash(doc))
        row["error"] = str(exc).replace(",", ";").replace("\n", " ")
    return value, row


def _run_sweep(cfg, kind, head_cols, extra_cols, jobs=None):
    values = list(cfg.sweep_values)
    if not values:
        raise ConfigError(
            f"{kind} needs a non-empty sweep.values list")
    # start from the unresolved document so step defaults the user left
    # implicit (dt from T, eta from h) re-derive at each sweep point
    base_doc = dict(cfg.raw_doc)
    base_doc["experiment.kind"] = kind
    jobs = cfg.jobs if jobs is None else int(jobs)
    tasks = [(kind, base_doc, v) for v in values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    results.sort(key=lambda item: item[0])
    columns = (head_cols + ("residual", "iterations", "converged")
               + _METRIC_KEYS + extra_cols + ("config_hash", "error"))
    rows = []
    for value, row in results:
        head = {head_cols[0]: value}
        head.update(row)
        rows.append(tuple(head.get(c, np.nan) for c in columns))
    return columns, rows


def run_sweep_frequency(cfg, outdir=None, jobs=None):
    """Orbit search per forcing period, with the fluid-free contrast.

    Each row records the coupled orbit metrics next to the exact
    fluid-free oracle's resonance flag and rotation envelope growth rate
    at the same period, so resonant periods are visible in one table.
    """
    out = _prepare_outdir(cfg, outdir)
    for v in cfg.sweep_values:
        if not v > 0.0:
            raise ConfigError(f"swept period {v!r} must be positive")
    cols, rows = _run_sweep(cfg, "sweep-frequency", ("T",),
                            ("vacuum_resonant", "vacuum_rot_rate"),
                            jobs=jobs)
    write_csv(out / "sweep_frequency.csv", cols, rows)
    return {"rows": len(rows), "out": str(out)}


def run_sweep_radius(cfg, outdir=None, jobs=None):
    """Orbit search per box half-width at fixed h (n scales with R)."""
    out = _prepare_outdir(cfg, outdir)
    values = list(cfg.sweep_values)
    r_star = cfg.geometry.cutoff_radius
    r0, n0 = cfg.doc["grid.R"], cfg.doc["grid.n"]
    prev = 0.0
    for v in values:
        if v <= prev:
            raise ConfigError("sweep-radius values must be increasing, "
                              f"got {v!r} after {prev!r}")
        prev = v
        if not v > 3.0 * r_star:
            raise ConfigError(
                f"swept radius {v!r} must exceed 3 x cutoff radius "
                f"({3.0 * r_star})")
        n = n0 * v / r0
        if abs(n - round(n)) > 1e-9:
            raise ConfigError(
                f"swept radius {v!r} does not keep h fixed: needs "
                f"n = {n}, which is not an integer")
    cols, rows = _run_sweep(cfg, "sweep-radius", ("R", "n", "h"), (),
                            jobs=jobs)
    write_csv(out / "sweep_radius.csv", cols, rows)
    return {"rows": len(rows), "out": str(out)}


def run_sweep_eta(cfg, outdir=None, jobs=None):
    """Orbit search per mollifier radius, plus a sensitivity summary."""
    out = _prepare_outdir(cfg, outdir)
    h = 2.0 * cfg.grid_R / cfg.grid_n
    eta0 = cfg.geometry.inradius()
    for v in cfg.sweep_values:
        if not (2.0 * h - 1e-12 * h <= v < eta0):
            raise ConfigError(
                f"swept mollifier radius {v!r} outside [2h, eta0) = "
                f"[{2.0 * h}, {eta0})")
    cols, rows = _run_sweep(cfg, "sweep-eta", ("eta",), (), jobs=jobs)
    write_csv(out / "sweep_eta.csv", cols, rows)
    amp_col = cols.index("max_abs_delta")
    amps = np.array([r[amp_col] for r in rows], dtype=float)
    good = np.isfinite(amps)
    if good.any() and amps[good].max() > 0.0:
        spread = (amps[good].max() - amps[good].min()) / amps[good].max()
    else:
        spread = np.nan
    atomic_write_text(out / "eta_sensitivity.txt",
                      "max_abs_delta_rel_spread "
                      f"{fmt_float(spread)}\n")
    return {"rows": len(rows), "spread": float(spread), "out": str(out)}


# ---------------------------------------------------------------------------
# invariant suite
# ---------------------------------------------------------------------------

def _vacuum_oracle_gap(cfg, period, t_end, dt):
    """Max angle/displacement gap between closed form and RK4."""
    forcing = cfg.forcing
    forcing = type(forcing)(period=period, cos_coeffs=forcing.cos_coeffs,
                            sin_coeffs=forcing.sin_coeffs)
    init = StructuralState(xi=np.array([0.1, -0.05]),
                           delta=np.array([0.02, 0.03]),
                           omega=0.04, theta=0.01)
    orb = vacuum_solve(cfg.params, cfg.geometry, forcing, init)
    t, chi, _, th, _ = integrate_structure(cfg.params, cfg.geometry,
                                           forcing, init, t_end, dt=dt,
                                           sample_every=200)
    gap_th = np.abs(orb.theta(t) - th).max()
    gap_chi = np.abs(orb.chi(t).T - chi).max()
    return max(gap_th, gap_chi)


def run_verify(doc, outdir=None, printer=None):
    """Execute the cross-module invariant suite on a config.

    Prints (via ``printer``) one PASS/FAIL line per check with the
    measured quantity and returns ``(all_ok, lines)``.  Construction
    problems (an indefinite spring matrix, say) fail their own check and
    mark the dependent checks as not run rather than crashing.
    """
    from .config import validate_doc
    from .energy import perturbed_energy, total_energy
    from .model import PhysicalParams

    doc = validate_doc(doc)
    lines = []
    failures = [0]

    def record(name, ok, detail):
        tag = "PASS" if ok else "FAIL"
        if not ok:
            failures[0] += 1
        line = f"{tag} {name:<22} {detail}"
        lines.append(line)
        if printer is not None:
            printer(line)

    rng = np.random.default_rng(20260815)

    # rotation algebra --------------------------------------------------
    worst = 0.0
    for _ in range(32):
        a, b = rng.uniform(-10, 10, size=2)
        ra, rb = rotation_matrix_2d(a), rotation_matrix_2d(b)
        worst = max(worst,
                    np.abs(ra @ rb - rotation_matrix_2d(a + b)).max(),
                    np.abs(ra.T @ ra - np.eye(2)).max(),
                    abs(np.linalg.det(ra) - 1.0))
    record("rotation-algebra", worst <= 1e-12, f"max defect {worst:.3e}")

    # spring spectrum ----------------------------------------------------
    s_diag = doc["physical.stiffness_diag"]
    s_off = doc["physical.stiffness_offdiag"]
    amat = np.diag(s_diag)
    amat[0, 1] = amat[1, 0] = s_off[0]
    amat[0, 2] = amat[2, 0] = s_off[1]
    amat[1, 2] = amat[2, 1] = s_off[2]
    eigs = np.linalg.eigvalsh(amat)
    spd = bool(eigs.min() > 0.0)
    record("spring-spectrum", spd,
           f"eigenvalues [{', '.join('%.6g' % e for e in eigs)}]")

    # configured CFL ceiling ---------------------------------------------
    cfl = doc["step.cfl_max"]
    record("cfl-config", 0.0 < cfl <= 1.0, f"cfl_max {cfl:g}")

    cfg = None
    if spd:
        try:
            cfg = ExperimentConfig.from_doc(doc)
        except ConfigError as exc:
            record("construction", False, str(exc))
    else:
        record("construction", False, "not run: spring matrix indefinite")

    dependent = ("mollifier", "projection", "lifting-field", "test-fields",
                 "sandwich", "energy-balance", "free-decay",
                 "vacuum-oracle")
    if cfg is None:
        for name in dependent:
            record(name, False, "not run: invalid configuration")
        report = "\n".join(lines) + "\n"
        if outdir is not None:
            Path(outdir).mkdir(parents=True, exist_ok=True)
            atomic_write_text(Path(outdir) / "verify_report.txt", report)
        return failures[0] == 0, lines

    grid = make_grid(cfg.grid_R, cfg.grid_n, cfg.geometry)
    h = grid.h

    # mollifier ----------------------------------------------------------
    kern = MollifierKernel(cfg.step.eta, h,
                           eta_max=cfg.geometry.inradius())
    wsum = abs(kern.weights.sum() - 1.0)
    # constants survive the stencil wherever the support does not reach
    # past the box edge (zero extension beyond it)
    pad = kern.weights.shape[0] // 2
    smoothed = kern.apply(np.ones((grid.n + 1, grid.n)))
    ones_gap = np.abs(smoothed[pad:-pad, pad:-pad] - 1.0).max()
    ok = wsum <= 1e-12 and ones_gap <= 1e-12 and kern.c_eta > 0.0
    record("mollifier", ok,
           f"weight-sum defect {wsum:.3e}, interior constant defect "
           f"{ones_gap:.3e}, c_eta {kern.c_eta:.6g}")

    # projection ---------------------------------------------------------
    u2 = rng.standard_normal((grid.n + 1, grid.n))
    u3 = rng.standard_normal((grid.n, grid.n + 1))
    p2, p3, _ = project(grid, u2, u3)
    div = max_divergence(grid, p2, p3)
    record("projection", div <= cfg.step.div_tol,
           f"max relative divergence {div:.3e}")

    # lifting field -------------------------------------------------------
    basis = LiftingBasis(grid, default_cutoff(cfg.geometry))
    delta = np.array([0.3, -0.2])
    theta = 0.4
    h2, h3 = basis.field(delta, theta)
    core = np.hypot(grid.u2_x2, grid.u2_x3) <= cfg.geometry.cutoff_radius
    want2 = delta[0] - theta * grid.u2_x3
    gap = np.abs((h2 - want2)[core & grid.active_u2]).max()
    divh = max_divergence(grid, h2, h3)
    record("lifting-field", gap <= 1e-12 and divh <= 1e-10,
           f"core defect {gap:.3e}, divergence {divh:.3e}")

    # weak-form test fields ------------------------------------------------
    psi = default_cutoff(cfg.geometry)
    gfield = test_field_G(0.7, psi, grid, basis=basis)
    ifield = test_field_I(np.array([0.2, 0.1]), psi, grid, basis=basis)
    zero = SystemState(FlowField.zeros(grid), StructuralState(), 0.0)
    dmax = max(gfield.divergence_max(zero), ifield.divergence_max(zero))
    record("test-fields", dmax <= 1e-10, f"max divergence {dmax:.3e}")

    # sandwich --------------------------------------------------------------
    zeta = compute_zeta1(cfg.params, basis)
    bad = 0
    worst_ratio = 1.0
    for _ in range(200):
        scale = 10.0 ** rng.uniform(-2, 2)
        w2 = scale * rng.standard_normal((grid.n + 1, grid.n))
        w3 = scale * rng.standard_normal((grid.n, grid.n + 1))
        w2, w3, _ = project(grid, w2, w3)
        st = SystemState(
            FlowField(grid, w2, w3, np.zeros((grid.n, grid.n))),
            StructuralState(xi=scale * rng.standard_normal(2),
                            delta=scale * rng.standard_normal(2),
                            omega=scale * rng.standard_normal(),
                            theta=scale * rng.standard_normal()), 0.0)
        e = total_energy(st, cfg.params).E
        ez = perturbed_energy(st, cfg.params, zeta, basis)
        if e > 0.0:
            if not (0.5 * e <= ez <= 1.5 * e):
                bad += 1
            worst_ratio = max(worst_ratio, ez / e, e / max(ez, 1e-300))
    record("sandwich", bad == 0,
           f"zeta1 {zeta:.6g}, violations {bad}/200, worst ratio "
           f"{worst_ratio:.4f}")

    # short forced balance run ------------------------------------------
    try:
        stepper = Stepper(grid, cfg.params, cfg.geometry, cfg.forcing,
                          cfg.step)
        _, ts = record_run(stepper, stepper.initial_state(), 64, zeta,
                           basis, every=1)
        _, rmax, _ = energy_balance_residual(ts, cfg.params, stepper.c,
                                             stepper.d)
        scale = max(ts.E.max(), 1.0)
        record("energy-balance", np.isfinite(rmax) and rmax <= 0.05 * scale,
               f"max per-step defect {rmax:.3e} (energy scale "
               f"{scale:.3g})")
    except NumericalError as exc:
        record("energy-balance", False, str(exc))

    # free decay ------------------------------------------------------------
    try:
        quiet = type(cfg.forcing)(period=cfg.forcing.period,
                                  cos_coeffs=np.zeros(1))
        stepper0 = Stepper(grid, cfg.params, cfg.geometry, quiet, cfg.step)
        st = stepper0.initial_state(
            StructuralState(delta=np.array([0.2, 0.0]), theta=0.1))
        _, ts0 = record_run(stepper0, st, 64, zeta, basis, every=1)
        growth = float(np.diff(ts0.E).max(initial=-np.inf))
        record("free-decay", growth <= 1e-12 * max(ts0.E[0], 1.0),
               f"worst energy increment {growth:.3e}")
    except NumericalError as exc:
        record("free-decay", False, str(exc))

    # fluid-free oracle vs brute force ---------------------------------------
    t_res = 2.0 * np.pi / np.sqrt(cfg.params.k)
    gap_res = _vacuum_oracle_gap(cfg, t_res, 2.0 * t_res, 1e-4)
    gap_off = _vacuum_oracle_gap(cfg, 1.37 * t_res, 2.0 * t_res, 1e-4)
    worst = max(gap_res, gap_off)
    record("vacuum-oracle", worst <= 1e-6,
           f"max closed-form vs RK4 gap {worst:.3e}")

    report = "\n".join(lines) + "\n"
    if outdir is not None:
        Path(outdir).mkdir(parents=True, exist_ok=True)
        atomic_write_text(Path(outdir) / "verify_report.txt", report)
    return failures[0] == 0, lines


# ---------------------------------------------------------------------------
# symmetric (disk) mode
# ---------------------------------------------------------------------------

def run_symmetric_mode(cfg, outdir=None):
    """Decoupling run on a centered disk.

    Requires an ellipse with equal semi-axes and zero centroid offset;
    verifies the rotational forcing constant vanishes and that, starting
    from rest, the rotational channel stays at the solver noise floor
    while the translation responds to the forcing.  Emits the series and
    a decoupling report; returns the measured extremes.
    """
    g = cfg.geometry
    if g.kind != "ellipse" or abs(g.semi_axes[0] - g.semi_axes[1]) > 1e-12:
        raise ConfigError(
            "symmetric mode requires a disk (ellipse with equal "
            f"semi-axes); got {g.kind} with semi_axes {g.semi_axes}")
    if np.abs(g.com_offset).max() > 0.0:
        raise ConfigError(
            "symmetric mode requires the centroid at the center of mass "
            f"(com_offset = 0); got {g.com_offset}")
    out = _prepare_outdir(cfg, outdir)
    c, d = coupling_constants(cfg.params, g)
    grid = make_grid(cfg.grid_R, cfg.grid_n, g)
    stepper = Stepper(grid, cfg.params, g, cfg.forcing, cfg.step)
    basis = LiftingBasis(grid, default_cutoff(g))
    zeta = compute_zeta1(cfg.params, basis)
    n_steps = int(round(cfg.run["n_periods"] * cfg.forcing.period
                        / cfg.step.dt))
    final, ts = record_run(stepper, stepper.initial_state(), n_steps,
                           zeta, basis, every=cfg.run["record_every"])
    write_csv(out / "series.csv", TIME_SERIES_COLUMNS, _series_rows(ts))
    _save_state(out / "final.fsip", final)
    max_theta = float(np.abs(ts.theta).max())
    max_omega = float(np.abs(ts.omega).max())
    max_delta = float(np.abs(ts.delta).max())
    ok_d = abs(d) <= 1e-14
    ok_theta = max_theta <= 1e-8
    ok_delta = max_delta > 1e-3 or cfg.forcing.is_zero()
    ok = ok_d and ok_theta and ok_delta
    text = "".join([
        f"{'PASS' if ok_d else 'FAIL'} rotational coupling d = "
        f"{fmt_float(d)} (want 0)\n",
        f"{'PASS' if ok_theta else 'FAIL'} max|theta| = "
        f"{fmt_float(max_theta)} over {fmt_float(cfg.run['n_periods'])} "
        "periods (want <= 1e-8)\n",
        f"{'PASS' if ok_delta else 'FAIL'} max|delta| = "
        f"{fmt_float(max_delta)} (translation responds to the forcing)\n",
        f"INFO max|omega| = {fmt_float(max_omega)}\n",
        f"INFO translational coupling c = {fmt_float(c)}\n",
    ])
    atomic_write_text(out / "decoupling_report.txt", text)
    return {"ok": ok, "d": float(d), "max_theta": max_theta,
            "max_delta": max_delta, "out": str(out)}


# ---------------------------------------------------------------------------
# plot-data emission
# ---------------------------------------------------------------------------

_PLOT_SECTIONS = (
    ("series.csv",
     "panel(ax, data['series.csv'], 't', ['E', 'E_zeta'], 'energy')"),
    ("energy_report.csv",
     "panel(ax, data['energy_report.csv'], 't', ['balance_residual'], "
     "'balance defect')"),
    ("orbit_metrics.csv",
     "table(ax, data['orbit_metrics.csv'], 'periodic-orbit metrics')"),
    ("diagnostics.csv",
     "table(ax, data['diagnostics.csv'], 'weak-form diagnostics')"),
    ("sweep_frequency.csv",
     "panel(ax, data['sweep_frequency.csv'], 'T', ['max_abs_theta', "
     "'vacuum_rot_rate'], 'rotation vs period')"),
    ("sweep_radius.csv",
     "panel(ax, data['sweep_radius.csv'], 'R', ['max_abs_delta'], "
     "'amplitude vs box size')"),
    ("sweep_eta.csv",
     "panel(ax, data['sweep_eta.csv'], 'eta', ['max_abs_delta'], "
     "'amplitude vs mollifier radius')"),
)

_PLOT_PRELUDE = '''\
#!/usr/bin/env python3
"""Generated plotting script: reads the CSV tables written next to it.

Run with a working matplotlib to produce the figures; this artifact
ships only data files plus this script, never rendered images.
"""

import csv
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    with open(os.path.join(HERE, name), newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for key in rows[0]:
        try:
            cols[key] = [float(r[key]) for r in rows]
        except ValueError:
            cols[key] = [r[key] for r in rows]
    return cols


def panel(ax, cols, x, ys, title):
    for y in ys:
        if y in cols:
            ax.plot(cols[x], cols[y], label=y)
    ax.set_xlabel(x)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)


def table(ax, cols, title):
    ax.axis("off")
    ax.set_title(title)
    lines = []
    for key, vals in cols.items():
        text = ", ".join(str(v) for v in vals)
        lines.append(f"{key} = {text[:60]}")
    ax.text(0.02, 0.95, "\\n".join(lines), va="top", ha="left",
            fontsize=7, family="monospace", transform=ax.transAxes)


def main():
    import matplotlib.pyplot as plt

    data = {name: load(name) for name in FILES}
    fig, axes = plt.subplots(len(FILES), 1,
                             figsize=(7, 3.2 * len(FILES)),
                             squeeze=False)
    env = {"panel": panel, "table": table, "data": data}
    for ax, (name, draw) in zip(axes[:, 0], SECTIONS):
        env["ax"] = ax
        eval(draw, env)
    fig.tight_layout()
    out = os.path.join(HERE, "figures.pdf")
    fig.savefig(out)
    print("wrote", out)


'''


def run_report(outdir):
    """Write a self-contained plotting script for the tables in a run dir.

    Emits plots.py referencing whichever known CSVs exist; never renders
    images itself.  Returns the list of files the script will read.
    """
    out = Path(outdir)
    if not out.is_dir():
        raise ConfigError(f"report: output directory {out} does not exist")
    present = [(name, draw) for name, draw in _PLOT_SECTIONS
               if (out / name).is_file()]
    if not present:
        raise ConfigError(
            f"report: no known CSV tables found in {out}")
    body = [_PLOT_PRELUDE]
    names = ", ".join(repr(n) for n, _ in present)
    body.append(f"FILES = ({names},)\n")
    sections = ",\n    ".join(f"({name!r}, {draw!r})"
                              for name, draw in present)
    body.append(f"SECTIONS = (\n    {sections},\n)\n")
    body.append('\n\nif __name__ == "__main__":\n    main()\n')
    atomic_write_text(out / "plots.py", "".join(body))
    return {"files": [n for n, _ in present], "out": str(out)}
