"""Weak thresholds, certificates and Monte Carlo checks for block-sparse l2/l1 recovery."""

__version__ = "0.1.0"

from .certify import (FAILURE, SUCCESS, UNDECIDED, Certificate, NullSpaceCertifier, certify,
                      minimize_dual, primal_tau, verify_failure_witness)
from .core import (BlockStructure, ProblemInstance, RngSpec, deserialize_instance,
                   generate_instance, serialize_instance)
from .recovery import GroupBasisPursuit, check_recovery, solve_group_bp
from .thresholds import (ThresholdPoint, alpha_weak, finite_n_alpha_estimate, sample_gbar,
                         solve_theta, threshold_curve, waterfill)

__all__ = [
    "BlockStructure",
    "ProblemInstance",
    "RngSpec",
    "generate_instance",
    "serialize_instance",
    "deserialize_instance",
    "ThresholdPoint",
    "alpha_weak",
    "solve_theta",
    "threshold_curve",
    "sample_gbar",
    "waterfill",
    "finite_n_alpha_estimate",
    "GroupBasisPursuit",
    "solve_group_bp",
    "check_recovery",
    "Certificate",
    "NullSpaceCertifier",
    "certify",
    "minimize_dual",
    "primal_tau",
    "verify_failure_witness",
    "SUCCESS",
    "FAILURE",
    "UNDECIDED",
]
