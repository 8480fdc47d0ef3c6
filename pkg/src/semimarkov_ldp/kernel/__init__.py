"""Waiting-law algebra and semi-Markov model definition."""

from .families import alternator, birth_death, builtin_examples, explicit, lattice_random_walk
from .laws import (
    Dirac,
    Exponential,
    Gamma,
    LawError,
    Mixture,
    NumericDensity,
    QuadratureError,
    Rayleigh,
    WaitingLaw,
    ess_bounds,
    law_from_params,
    mixture,
    mgf,
    relative_entropy_waiting,
    theta,
    tilt_normalizer,
    zeta,
)
from .model import (
    Check,
    Family,
    ModelError,
    SemiMarkovModel,
    Truncation,
    TruncationEscape,
    ValidationReport,
    validate_model,
)

__all__ = [
    "Check", "Dirac", "Exponential", "Family", "Gamma", "LawError", "Mixture", "ModelError", "NumericDensity",
    "QuadratureError", "Rayleigh", "SemiMarkovModel", "Truncation", "TruncationEscape", "ValidationReport",
    "WaitingLaw", "alternator", "birth_death", "builtin_examples", "ess_bounds", "explicit",
    "lattice_random_walk", "law_from_params", "mgf", "mixture", "relative_entropy_waiting", "theta", "tilt_normalizer",
    "validate_model", "zeta",
]
