"""Linear-quadratic mean-field control and games toolkit.

Solvers for the backward Riccati systems of the LQ mean-field-type-control
and mean-field-games problems, a McKean-Vlasov particle simulator with
common noise, measure-derivative identity checks on the lifted Hilbert
space, master-equation residual verifiers, and a 1D HJB-Fokker-Planck
finite-difference cross-check.
"""

from . import hjbfp_1d, lift_calculus, lq_model, master_verifier, mkv_simulator, riccati

__all__ = [
    "lq_model",
    "riccati",
    "lift_calculus",
    "mkv_simulator",
    "master_verifier",
    "hjbfp_1d",
]

__version__ = "0.1.0"
