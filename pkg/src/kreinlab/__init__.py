"""Boundary-condition realizations of -Laplace + m^2 on slabs and half-cylinders.

Model-level computations of Dirichlet-to-Neumann symbols, Krein resolvent
formulas, M-functions, singular-value asymptotics and lower bounds, all
diagonalized over the boundary Fourier modes.
"""

from kreinlab.asymptotics import (
    DirichletWeylTable,
    FitResult,
    SingularValueSeries,
    counting_function,
    dirichlet_weyl,
    schatten_partial_sum,
    svalues_iterates,
    svalues_robin_pair,
    svalues_vs_dirichlet,
    weyl_constant,
    weyl_fit,
)
from kreinlab.errors import ConfigError, DomainError, NearEigenvalueError
from kreinlab.extension import (
    BoundarySymbol,
    DiagramResidual,
    MFunctionSample,
    Realization,
    cauchy_defect,
    diagram_check,
    krein_apply,
    krein_apply_fiber,
    l_symbol,
    m_function,
    perturbation_bound,
    pole_scan,
    reduced_green_check,
    shifted_l_symbol,
)
from kreinlab.fiber import (
    Dirichlet,
    Discretization1D,
    FiberSolution,
    Geometry,
    Mode,
    ModelOperator,
    NeumannType,
    Robin,
    dirichlet_resolvent_fiber,
    dtn_symbol,
    fiber_eigenvalues,
    oracle_solve,
    poisson_fiber,
    poisson_fiber_normsq,
)
from kreinlab.lattice import Lattice, lattice_points
from kreinlab.lower_bounds import (
    GardingResult,
    LowerBoundReport,
    birman_check,
    garding_check,
    lower_bound_symbol,
    q_mu_scan,
)

__version__ = "0.1.0"
