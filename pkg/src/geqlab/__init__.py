"""Numerical laboratory for two-layer networks trained on generated data.

Subpackages cover: activation integrals, latent->input generators and
their second moments, Gaussian-equivalence audits, order-parameter ODEs
with a matched one-pass SGD simulator, and a saddle-point solver for
empirical risk minimization on random features, with an ERM trainer to
check it.
"""
from .activations import (
    ActivationKind,
    HermiteTriple,
    deriv,
    evaluate,
    gaussian_expectation_mc,
    hermite_coefficients,
    i2,
    i3,
    i4,
)
from .seeds import derive_seed

__all__ = [
    "ActivationKind",
    "HermiteTriple",
    "deriv",
    "evaluate",
    "gaussian_expectation_mc",
    "hermite_coefficients",
    "i2",
    "i3",
    "i4",
    "derive_seed",
]

__version__ = "0.1.0"
