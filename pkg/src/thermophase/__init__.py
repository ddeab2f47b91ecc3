"""Structure-preserving finite elements for a thermodynamically consistent
sintering phase-field model in inverse-temperature variables."""

from .mesh import PeriodicMesh, Prolongation, build_uniform, refine
from .model import ModelParams, MobilityMatrix
from .scheme import State, SolverConfig, Stepper, run

__version__ = "0.1.0"

__all__ = [
    "PeriodicMesh",
    "Prolongation",
    "build_uniform",
    "refine",
    "ModelParams",
    "MobilityMatrix",
    "State",
    "SolverConfig",
    "Stepper",
    "run",
]
