"""Gaussian matching of softmax and logistic likelihoods.

Class labels are turned into Gaussian pseudo-observations on the logits, so
conjugate Gaussian machinery (Bayesian linear regression, exact GP
regression, least-squares network training) can stand in for the softmax or
logistic likelihood.
"""

from .errors import ConvergenceError, DomainError, NumericalError, SelectionError, UsageError
from .likelihood_approx import ApproxConfig, logistic_pseudo_obs, softmax_pseudo_obs
from .matching import BetaLogit, ChiSqLog, ExpLog, GammaLog, GaussianApprox, InvGammaLog, MatchMethod, match

__version__ = "0.1.0"

__all__ = [
    "ApproxConfig",
    "BetaLogit",
    "ChiSqLog",
    "ConvergenceError",
    "DomainError",
    "ExpLog",
    "GammaLog",
    "GaussianApprox",
    "InvGammaLog",
    "MatchMethod",
    "NumericalError",
    "SelectionError",
    "UsageError",
    "logistic_pseudo_obs",
    "match",
    "softmax_pseudo_obs",
]
