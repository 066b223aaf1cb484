"""Explicit solution operators for the non-stationary Stokes system in a half-space.

Modules: fields (grids, fields, HSF1 I/O), transforms (Fourier multipliers and
heat/Poisson kernels), fractime (Riemann-Liouville calculus), norms
(Littlewood-Paley, Besov, Sobolev and mixed norms), stokes (forced and
initial-value solvers), verify (residuals and estimate-ratio experiments),
cli/api (command runner and HTTP service).
"""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.0.0"

from .errors import *  # noqa: F401,F403
from .fields import GridSpec, ScalarField, TimeSeriesField, TimeSpec, VectorField, make_grid, read_hsf1, write_hsf1
from .stokes import ForcingSpec, SolverConstants, StokesSolution, solve_forced, solve_full, solve_initial

__all__ = [
    "GridSpec",
    "TimeSpec",
    "ScalarField",
    "VectorField",
    "TimeSeriesField",
    "make_grid",
    "read_hsf1",
    "write_hsf1",
    "ForcingSpec",
    "SolverConstants",
    "StokesSolution",
    "solve_forced",
    "solve_initial",
    "solve_full",
]
