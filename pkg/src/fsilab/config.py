"""Strict flat-key experiment configuration.

A run is described by a flat JSON object whose keys use dotted section
names ("physical.lam", "grid.n", ...) and whose values are scalars,
strings, booleans, or flat numeric lists.  The schema is closed: unknown
keys are rejected by name so that a typo in a sweep script fails loudly
instead of silently running defaults.  The only key without a default is
``forcing.period_T``.

``validate_doc`` fills defaults and checks value types without building
any solver objects; ``ExperimentConfig.from_doc`` performs the actual
construction (which may raise on physically invalid values, e.g. a
non-positive-definite stiffness matrix) and resolves the derived step
defaults so the document written next to a run's outputs is complete.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import BodyGeometry, Forcing, PhysicalParams, normalize_forcing
from .stepper import StepConfig

# ---------------------------------------------------------------------------
# schema
# ---------------------------------------------------------------------------

EXPERIMENT_KINDS = (
    "simulate", "find-periodic", "sweep-frequency", "sweep-radius",
    "sweep-eta", "verify", "symmetric-mode", "report",
)

_REQUIRED = object()    # sentinel default for keys that must be provided


@dataclass(frozen=True)
class _Key:
    """One schema entry: default value, checker name, one-line doc."""

    default: object
    kind: str
    doc: str


def _floatlist(n=None):
    return "floatlist" if n is None else f"floatlist{n}"


SCHEMA = {
    # experiment ----------------------------------------------------------
    "experiment.kind": _Key("simulate", "choice", "what to run"),
    "output.dir": _Key("out", "str", "output directory"),
    "run.n_periods": _Key(10.0, "posfloat", "run length in forcing periods"),
    "run.record_every": _Key(1, "posint", "observer sampling stride"),
    "run.deterministic": _Key(True, "bool",
                              "assert seed-free reproducibility"),
    # physical constants --------------------------------------------------
    "physical.lam": _Key(20.0, "posfloat", "advective coupling strength"),
    "physical.k": _Key(1.0, "posfloat", "rotational spring constant"),
    "physical.varpi": _Key(0.03, "posfloat", "translational density ratio"),
    "physical.tau": _Key(0.03, "posfloat", "rotational density ratio"),
    "physical.alpha": _Key(math.pi / 2, "float",
                           "forcing direction vs rotation axis"),
    "physical.b_tilde": _Key([1.0, 0.0], _floatlist(2),
                             "in-plane forcing direction"),
    "physical.stiffness_diag": _Key([4.0, 4.0, 4.0], _floatlist(3),
                                    "translational spring diagonal"),
    "physical.stiffness_offdiag": _Key([0.0, 0.0, 0.0], _floatlist(3),
                                       "entries (12, 13, 23)"),
    # body geometry --------------------------------------------------------
    "body.kind": _Key("ellipse", "bodykind", "ellipse | rectangle"),
    "body.semi_axes": _Key([0.8, 0.3], _floatlist(2), "ellipse semi-axes"),
    "body.half_widths": _Key([0.5, 0.25], _floatlist(2),
                             "rectangle half-widths"),
    "body.com_offset": _Key([0.0, 0.0], _floatlist(2),
                            "centroid offset from the center of mass"),
    "body.cutoff_radius": _Key(1.0, "posfloat",
                               "bounding radius of the body"),
    "body.cutoff_margin": _Key(0.1, "posfloat",
                               "relative margin of the cutoff plateau"),
    # forcing --------------------------------------------------------------
    "forcing.period_T": _Key(_REQUIRED, "posfloat", "forcing period"),
    "forcing.cos_coeffs": _Key([0.0], _floatlist(),
                               "cosine coefficients (index 0 = mean)"),
    "forcing.sin_coeffs": _Key([1.0], _floatlist(), "sine coefficients"),
    "forcing.normalize": _Key(True, "bool", "rescale V so sup|V| = 1"),
    # grid -----------------------------------------------------------------
    "grid.R": _Key(6.0, "posfloat", "half-width of the square box"),
    "grid.n": _Key(96, "posint", "cells per direction"),
    # time stepping --------------------------------------------------------
    "step.dt": _Key(None, "posfloat?", "time step (default period/3072)"),
    "step.eps_pen": _Key(None, "posfloat?",
                         "penalization strength (default dt)"),
    "step.eta": _Key(None, "posfloat?",
                     "mollifier radius (default 2h)"),
    "step.n_subiter": _Key(2, "posint", "load/structure sub-iterations"),
    "step.cfl_max": _Key(0.9, "posfloat", "advective CFL rejection level"),
    "step.div_tol": _Key(1e-10, "posfloat", "divergence tolerance"),
    # orbit solver ---------------------------------------------------------
    "solver.tol": _Key(1e-3, "posfloat", "fixed-point relative tolerance"),
    "solver.max_iters": _Key(60, "posint", "fixed-point iteration cap"),
    "solver.n_phases": _Key(64, "posint", "states recorded per period"),
    "solver.aitken": _Key(False, "bool", "secant acceleration"),
    "solver.warm_start": _Key(None, "str?",
                              "checkpoint path seeding the iteration"),
    # sweeps ---------------------------------------------------------------
    "sweep.values": _Key([], _floatlist(), "swept parameter values"),
    "sweep.jobs": _Key(1, "posint", "parallel sweep workers"),
}


def _check_value(key, kind, value):
    """Return the canonical form of ``value`` or raise ConfigError."""

    def bad(expected):
        raise ConfigError(
            f"config key {key!r}: expected {expected}, got {value!r}")

    if kind == "bool":
        if not isinstance(value, bool):
            bad("a boolean")
        return value
    if kind in ("float", "posfloat", "posfloat?"):
        if kind.endswith("?") and value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad("a number")
        v = float(value)
        if not math.isfinite(v):
            bad("a finite number")
        if kind.startswith("pos") and not v > 0.0:
            bad("a positive number")
        return v
    if kind == "posint":
        if isinstance(value, bool) or not isinstance(value, int):
            bad("an integer")
        if not value > 0:
            bad("a positive integer")
        return value
    if kind in ("str", "str?"):
        if kind.endswith("?") and value is None:
            return None
        if not isinstance(value, str):
            bad("a string")
        return value
    if kind == "choice":
        if value not in EXPERIMENT_KINDS:
            bad("one of " + ", ".join(EXPERIMENT_KINDS))
        return value
    if kind == "bodykind":
        if value not in ("ellipse", "rectangle"):
            bad("'ellipse' or 'rectangle'")
        return value
    if kind.startswith("floatlist"):
        want = kind[len("floatlist"):]
        if not isinstance(value, list):
            bad("a list of numbers")
        out = []
        for item in value:
            if isinstance(item, bool) or not isinstance(item, (int, float)):
                bad("a list of numbers")
            v = float(item)
            if not math.isfinite(v):
                bad("a list of finite numbers")
            out.append(v)
        if want and len(out) != int(want):
            bad(f"a list of exactly {want} numbers")
        return out
    raise AssertionError(f"unhandled schema kind {kind!r}")


def validate_doc(raw):
    """Type-check a flat config mapping and fill defaults.

    Rejects unknown keys by name and missing required keys; returns a new
    dict covering every schema key.  No solver objects are built here, so
    physically inconsistent values (e.g. an indefinite stiffness matrix)
    pass through — construction-time validation happens in ``from_doc``.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a flat JSON object")
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
    doc = {}
    for key, entry in SCHEMA.items():
        if key in raw:
            doc[key] = _check_value(key, entry.kind, raw[key])
        elif entry.default is _REQUIRED:
            raise ConfigError(f'missing required key "{key}"')
        else:
            doc[key] = entry.default
    return doc


def load_doc(path):
    """Read a config file (JSON text) and validate it."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: "
                          f"{exc}") from exc
    return validate_doc(raw)


def apply_overrides(raw, overrides):
    """Apply ``key=value`` strings on top of a raw mapping (returns a copy).

    Values are parsed as JSON literals when possible ("3.5", "true",
    "[1,2]") and fall back to plain strings otherwise, so ``--override
    output.dir=runs/a`` works without quoting.
    """
    doc = dict(raw)
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key:
            raise ConfigError(
                f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        doc[key] = value
    return doc


# ---------------------------------------------------------------------------
# resolved experiment
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Fully constructed run description.

    ``doc`` is the resolved flat document (every key present, derived step
    defaults filled in) that gets written alongside outputs; the remaining
    attributes are the live objects the runners consume.
    """

    doc: dict
    raw_doc: dict
    kind: str
    outdir: str
    params: PhysicalParams
    geometry: BodyGeometry
    forcing: Forcing
    grid_R: float
    grid_n: int
    step: StepConfig
    solver: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    sweep_values: list = field(default_factory=list)
    jobs: int = 1

    @classmethod
    def from_doc(cls, doc):
        doc = validate_doc(doc)
        s_diag = doc["physical.stiffness_diag"]
        s_off = doc["physical.stiffness_offdiag"]
        stiffness = np.diag(s_diag)
        stiffness[0, 1] = stiffness[1, 0] = s_off[0]
        stiffness[0, 2] = stiffness[2, 0] = s_off[1]
        stiffness[1, 2] = stiffness[2, 1] = s_off[2]
        params = PhysicalParams(
            lam=doc["physical.lam"], stiffness=stiffness,
            k=doc["physical.k"], varpi=doc["physical.varpi"],
            tau=doc["physical.tau"], alpha=doc["physical.alpha"],
            b_tilde=np.array(doc["physical.b_tilde"]))
        geometry = BodyGeometry(
            kind=doc["body.kind"],
            semi_axes=tuple(doc["body.semi_axes"]),
            half_widths=tuple(doc["body.half_widths"]),
            com_offset=np.array(doc["body.com_offset"]),
            cutoff_radius=doc["body.cutoff_radius"],
            cutoff_margin=doc["body.cutoff_margin"])
        period = doc["forcing.period_T"]
        forcing = Forcing(period=period,
                          cos_coeffs=np.array(doc["forcing.cos_coeffs"]),
                          sin_coeffs=np.array(doc["forcing.sin_coeffs"]))
        if doc["forcing.normalize"] and not forcing.is_zero():
            forcing = normalize_forcing(forcing)
        R, n = doc["grid.R"], doc["grid.n"]
        h = 2.0 * R / n
        dt = doc["step.dt"] if doc["step.dt"] is not None else period / 3072.0
        eps = doc["step.eps_pen"] if doc["step.eps_pen"] is not None else dt
        eta = doc["step.eta"] if doc["step.eta"] is not None else 2.0 * h
        step = StepConfig(dt=dt, eps_pen=eps, eta=eta,
                          n_subiter=doc["step.n_subiter"],
                          cfl_max=doc["step.cfl_max"],
                          div_tol=doc["step.div_tol"])
        resolved = dict(doc)
        resolved["step.dt"] = dt
        resolved["step.eps_pen"] = eps
        resolved["step.eta"] = eta
        solver = {
            "tol": doc["solver.tol"], "max_iters": doc["solver.max_iters"],
            "n_phases": doc["solver.n_phases"],
            "aitken": doc["solver.aitken"],
            "warm_start": doc["solver.warm_start"],
        }
        run = {
            "n_periods": doc["run.n_periods"],
            "record_every": doc["run.record_every"],
            "deterministic": doc["run.deterministic"],
        }
        return cls(doc=resolved, raw_doc=dict(doc),
                   kind=doc["experiment.kind"],
                   outdir=doc["output.dir"], params=params,
                   geometry=geometry, forcing=forcing, grid_R=R, grid_n=n,
                   step=step, solver=solver, run=run,
                   sweep_values=list(doc["sweep.values"]),
                   jobs=doc["sweep.jobs"])


def canonical_json(doc):
    """Deterministic pretty JSON used for the resolved-config file."""
    return json.dumps(doc, sort_keys=True, indent=2,
                      ensure_ascii=True) + "\n"


def config_hash(doc):
    """sha256 of the compact canonical serialization (hex digest)."""
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
