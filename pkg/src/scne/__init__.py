"""Decorrelated ensembles of stochastic configuration networks.

Base learners are grown on heterogeneous feature groups and their output
weights are coupled through negative correlation learning, solved by a
direct pseudo-inverse or by block Jacobi / Gauss-Seidel iterations.
"""
from .dataio import Dataset, FeatureGroupSpec, NormParams, SplitSpec
from .ncl import EnsembleModel, NclSystem, SolveReport, SolverConfig
from .scn import RvflConfig, ScnConfig, ScnModel

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FeatureGroupSpec",
    "NormParams",
    "SplitSpec",
    "EnsembleModel",
    "NclSystem",
    "SolveReport",
    "SolverConfig",
    "RvflConfig",
    "ScnConfig",
    "ScnModel",
]
