"""Catalog of ordered-exponential identities and their randomized checks."""

from .catalog import (CATALOG, DEFAULT_K, PARAMETRIC, IdentityEntry, TrialContext,
                      UnknownIdentityError, catalog_ids, get_entry, parse_identity_id,
                      truncation_discrepancy)
from .generators import (TrigMatrixFunction, random_constant, random_generator,
                         random_invertible, trial_rng)
from .harness import (REPORT_SCHEMA_VERSION, TrialConfig, VerificationReport, relative_error,
                      reports_to_json, run_suite, verify_identity)

__all__ = [
    "CATALOG", "DEFAULT_K", "PARAMETRIC", "IdentityEntry", "TrialContext",
    "UnknownIdentityError", "catalog_ids", "get_entry", "parse_identity_id",
    "truncation_discrepancy",
    "TrigMatrixFunction", "random_constant", "random_generator", "random_invertible",
    "trial_rng",
    "REPORT_SCHEMA_VERSION", "TrialConfig", "VerificationReport", "relative_error",
    "reports_to_json", "run_suite", "verify_identity",
]
