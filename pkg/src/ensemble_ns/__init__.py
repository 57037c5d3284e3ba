"""Ensemble finite element solvers for Navier-Stokes flows with random viscosity."""

from .mesh import TriMesh, barycentric_refine, remove_step, structured_rect_mesh
from .schemes import BlowUpError, EnsembleProblem, Operators, RunResult, SchemeConfig, run
from .stochastic import (
    RandomViscosityField,
    SparseGridRule,
    clenshaw_curtis_sparse_grid,
    expectation,
    kl_viscosity,
)

__version__ = "0.1.0"
