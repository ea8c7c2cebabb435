"""Hierarchic (leader/follower) boundary control of the wave equation on an
interval whose length scales in time.

The moving interval ``(0, k(t))`` is mapped to the unit cylinder, where the
state solves ``v'' + L v = 0``.  A follower control minimises a tracking
cost for any leader control; the leader steers the terminal pair into
prescribed balls with minimal norm, computed through a Fenchel dual.
"""

from .discretization import (
    BoundaryControl,
    Grid,
    SpaceTimeField,
    TerminalPair,
    WaveSolver,
    norm_h01_omega,
    norm_hm1_omega,
    norm_l2_omega,
    norm_l2_sigma,
    riesz_h01,
)
from .errors import (
    CflViolation,
    ConfigError,
    GeometryGate,
    HolmgrenViolation,
    HyperbolicityViolation,
    NoConvergence,
    NonhomogeneousBoundary,
    OutOfDomain,
    SingularStep,
    StackwaveError,
)
from .follower import (
    FollowerProblem,
    FollowerSolution,
    j2_gradient,
    j2_value,
    solve_follower,
    solve_optimality_system,
)
from .leader import (
    ControllabilityTarget,
    DualVariable,
    HierarchicProblem,
    LeaderOptions,
    LeaderResult,
    apply_A,
    apply_A_star,
    assemble_leader_optimality_system,
    check_variational_inequality,
    dual_functional,
    minimize_dual,
    solve_affine_part,
    solve_cascade,
)
from .scale import (
    Geometry,
    ScaleFunction,
    Segment,
    eval_adjoint_coefficients,
    eval_coefficients,
    holmgren_time_ok,
    pull_back_state,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryControl",
    "CflViolation",
    "ConfigError",
    "ControllabilityTarget",
    "DualVariable",
    "FollowerProblem",
    "FollowerSolution",
    "Geometry",
    "GeometryGate",
    "Grid",
    "HierarchicProblem",
    "HolmgrenViolation",
    "HyperbolicityViolation",
    "LeaderOptions",
    "LeaderResult",
    "NoConvergence",
    "NonhomogeneousBoundary",
    "OutOfDomain",
    "ScaleFunction",
    "Segment",
    "SingularStep",
    "SpaceTimeField",
    "StackwaveError",
    "TerminalPair",
    "WaveSolver",
    "apply_A",
    "apply_A_star",
    "assemble_leader_optimality_system",
    "check_variational_inequality",
    "dual_functional",
    "eval_adjoint_coefficients",
    "eval_coefficients",
    "holmgren_time_ok",
    "j2_gradient",
    "j2_value",
    "minimize_dual",
    "norm_h01_omega",
    "norm_hm1_omega",
    "norm_l2_omega",
    "norm_l2_sigma",
    "pull_back_state",
    "riesz_h01",
    "solve_affine_part",
    "solve_cascade",
    "solve_follower",
    "solve_optimality_system",
]
