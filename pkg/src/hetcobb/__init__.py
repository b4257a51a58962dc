"""Firm-level recovery of heterogeneous Cobb-Douglas production coefficients.

Modules
-------
technology
    Coefficient maps ``omega -> beta(omega)``, assumption checks and the
    inverse cost-ratio map.
simulator
    Profit-maximizing firms with closed-form flexible inputs and a
    brute-force oracle.
smoother
    Local-linear regression, bandwidth selection and kernel densities.
identification
    The estimation pipeline, its oracle mode and the locality diagnostic.
harness
    Configuration files, CSV ingestion, Monte Carlo experiments and the CLI.
"""

from .dataset import Dataset
from .exceptions import (
    ConfigError,
    DataError,
    DomainError,
    HetCobbError,
    InsufficientDataError,
    NumericalError,
    OracleFailure,
    PreconditionError,
    SchemaError,
)
from .identification import (
    ElasticityEstimates,
    EstimatorConfig,
    HeterogeneousCobbDouglas,
    OracleExpectations,
    locality_diagnostic,
    run_pipeline,
)
from .simulator import SimulationConfig, simulate_cross_section
from .smoother import BandwidthSpec, LocalLinearRegression, ProductKernelDensity
from .technology import (
    TechnologySpec,
    affine_technology,
    eval_betas,
    logistic_technology,
    ratio_to_omega,
    tech_a,
    validate_assumptions,
)

__version__ = "0.1.0"

__all__ = [
    "BandwidthSpec",
    "ConfigError",
    "DataError",
    "Dataset",
    "DomainError",
    "ElasticityEstimates",
    "EstimatorConfig",
    "HeterogeneousCobbDouglas",
    "HetCobbError",
    "InsufficientDataError",
    "LocalLinearRegression",
    "NumericalError",
    "OracleExpectations",
    "OracleFailure",
    "PreconditionError",
    "ProductKernelDensity",
    "SchemaError",
    "SimulationConfig",
    "TechnologySpec",
    "affine_technology",
    "eval_betas",
    "locality_diagnostic",
    "logistic_technology",
    "ratio_to_omega",
    "run_pipeline",
    "simulate_cross_section",
    "tech_a",
    "validate_assumptions",
]
