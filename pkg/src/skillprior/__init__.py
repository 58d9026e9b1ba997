"""Skill-prior learning from heterogeneous demonstrations and skill-based SAC."""

from skillprior.core import (
    ContractViolation,
    DiagGaussian,
    Rng,
    SkillWindow,
    Trajectory,
    extract_windows,
    kl_diag_gaussian,
    reparam_sample,
)

__all__ = [
    "ContractViolation",
    "DiagGaussian",
    "Rng",
    "SkillWindow",
    "Trajectory",
    "extract_windows",
    "kl_diag_gaussian",
    "reparam_sample",
]

__version__ = "0.1.0"
