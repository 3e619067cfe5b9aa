"""Conformal-flow simulator for asymptotically flat initial data with horizons.

Evolves conformally flat, asymptotically flat 3-manifolds with nonnegative
scalar curvature, tracks horizon area and ADM mass along the flow, and checks
the quantitative identities relating them (area constancy, mass monotonicity,
the mass-derivative/monopole identity, the doubling identity, and the Penrose
quotient limit) at desk scale.
"""

from .geometry import (
    CurvatureEstimate,
    ExpansionCoefficients,
    ExpansionError,
    GridField,
    PointMassSum,
    RadialProfile,
    SCHWARZSCHILD_QUOTIENT,
    Sphere,
    VoxelRegion,
    adm_mass_expansion,
    adm_mass_surface_integral,
    area_of_surface,
    asymptotic_expansion,
    energy_density,
    load_conformal_factor,
    make_brill_lindquist,
    make_flat,
    make_schwarzschild,
    mean_curvature,
    save_conformal_factor,
    scalar_curvature,
)
from .laplace import (
    GridExteriorSolver,
    HarmonicSolution,
    SolverError,
    extract_monopole,
    solve_exterior_dirichlet,
)
from .horizon import (
    EnclosureResult,
    find_outermost_minimal_surface,
    is_outer_minimizing,
    mincut_enclosure,
    outermost_minimal_area_enclosure,
)
from .flow import (
    FlowParams,
    FlowState,
    FlowTrace,
    JumpEvent,
    detect_jump,
    flow_step,
    mass_derivative_check,
    penrose_quotient,
    rebase_check,
    run_flow,
)

__version__ = "0.1.0"
