"""Identifiable factor analysis for mixed continuous and binary variables."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CapacityError,
    Dataset,
    ModelParams,
    Schema,
    log_joint_observed,
    log_marginal_partial,
    mixing_table,
    model_moments,
    posterior,
    sample,
)
from .fit import FitConfig, FitResult, bic_scan, fit, log_likelihood  # noqa: E402
from .canon import canonicalize, verify_identifiability_conditions  # noqa: E402
