"""Numerical laboratory for a spring-mounted body in a regularized flow."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    EstimateUndefined,
    FsilabError,
    NumericalError,
    StepRejected,
    VerificationError,
)
from .model import (
    BodyGeometry,
    Forcing,
    PhysicalParams,
    StructuralState,
    coupling_constants,
)
from .grid import FlowField, make_grid
from .stepper import StepConfig, Stepper, SystemState
from .periodic import (
    PeriodicOrbit,
    PoincareMap,
    find_periodic_orbit,
    orbit_metrics,
    verify_periodicity,
)
from .weakform import (
    TestField,
    mean_rotation_identity,
    pointwise_bound_report,
    test_field_G,
    test_field_I,
    weak_residual,
)
from .config import ExperimentConfig, config_hash, load_doc, validate_doc
from .runner import (
    run_find_periodic,
    run_report,
    run_simulate,
    run_sweep_eta,
    run_sweep_frequency,
    run_sweep_radius,
    run_symmetric_mode,
    run_verify,
)

__all__ = [
    "ExperimentConfig",
    "BodyGeometry",
    "ConfigError",
    "EstimateUndefined",
    "FlowField",
    "Forcing",
    "FsilabError",
    "NumericalError",
    "PeriodicOrbit",
    "PhysicalParams",
    "PoincareMap",
    "StepConfig",
    "StepRejected",
    "Stepper",
    "StructuralState",
    "SystemState",
    "TestField",
    "VerificationError",
    "config_hash",
    "coupling_constants",
    "find_periodic_orbit",
    "load_doc",
    "make_grid",
    "mean_rotation_identity",
    "orbit_metrics",
    "pointwise_bound_report",
    "run_find_periodic",
    "run_report",
    "run_simulate",
    "run_sweep_eta",
    "run_sweep_frequency",
    "run_sweep_radius",
    "run_symmetric_mode",
    "run_verify",
    "test_field_G",
    "test_field_I",
    "validate_doc",
    "verify_periodicity",
    "weak_residual",
    "__version__",
]
