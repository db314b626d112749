"""Unsupervised identification of polyconvex hyperelastic laws from full-field data.

Modules
-------
kinematics   meshes, datasets, quadrature and deformation gradients
invariants   invariant features of F and their derivatives
icnn         input-convex network with analytic input/parameter gradients
material     normalised network energy and the Neo-Hookean baseline
equilibrium  nodal forces and the equilibrium-gap loss
datagen      synthetic experiments from a Newton finite-element solver
training     splitting, Adam training, sweeps, evaluation
cli          command-line pipeline
"""
from .errors import (
    ConfigError,
    DomainError,
    InvertedDeformationError,
    MeshError,
    NumericalError,
    PannIdError,
    SolverError,
)
from .icnn import DEFAULT_SWEEP, IcnnArch, count_parameters
from .kinematics import KinematicMode, load_dataset, load_mesh
from .material import NeoHookeanModel, PannModel, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DEFAULT_SWEEP",
    "DomainError",
    "IcnnArch",
    "InvertedDeformationError",
    "KinematicMode",
    "MeshError",
    "NeoHookeanModel",
    "NumericalError",
    "PannIdError",
    "PannModel",
    "SolverError",
    "count_parameters",
    "load_dataset",
    "load_mesh",
    "load_model",
    "save_model",
]
