"""Swing-leg joint impedance identification and perturbator simulation."""

from .dynamics import ImpedanceParams, Trajectory, inverse_dynamics, simulate
from .ident import IdentProblem, ImpedanceEstimator, identify, prediction_error, vaf
from .model import BodyModel, SegmentParams, default_model

__version__ = "0.1.0"

__all__ = [
    "BodyModel",
    "IdentProblem",
    "ImpedanceEstimator",
    "ImpedanceParams",
    "SegmentParams",
    "Trajectory",
    "default_model",
    "identify",
    "inverse_dynamics",
    "prediction_error",
    "simulate",
    "vaf",
]
