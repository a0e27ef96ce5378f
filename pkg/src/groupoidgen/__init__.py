"""Numerical local symplectic groupoids over coordinate Poisson structures.

The package constructs, for a polynomial Poisson structure pi on R^d,
the canonical realization map, the coordinate generating function of the
induced local groupoid and its structure maps, and cross-validates the
construction against rooted-tree/graph expansions and the variational
(sigma-model) characterization on triangles.
"""

from .errors import (
    DomainExitError,
    GroupoidGenError,
    IntegrationToleranceError,
    IterationDivergedError,
    NonComposableError,
    NotASolutionError,
    OutsideLocalDomainError,
    SignUndeterminedError,
)
from .flows import OdeConfig, PhasePoint, ham_flow, ham_flow_with_integral, spray_flow, spray_flow_average
from .genfun import (
    GenfunConfig,
    GenfunPoint,
    SgaSolveReport,
    cocycle_C,
    cocycle_naturality_gap,
    dS,
    genfun_S,
    genfun_S_batch,
    genfun_S_route2,
    multiply,
    pi_from_S,
    sga_residual,
)
from .poisson import (
    MultiIndex,
    PoissonStructure,
    eval_dpi,
    eval_pi,
    eval_pi_partial,
    jacobi_residual,
    load_structure,
    make_constant,
    make_linear,
    make_polynomial,
    probe_grid,
    save_structure,
)
from .realization import NewtonConfig, alpha, beta, inversion, realization_poisson_residual

__version__ = "0.1.0"
