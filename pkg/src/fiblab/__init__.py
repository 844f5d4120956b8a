"""fiblab: a numerical laboratory for Fibonacci unimodal maps x^l + c1.

The package locates parameters with Fibonacci closest-return combinatorics to
arbitrary depth, computes the ladder of dynamically defined level points,
stress-tests real cross-ratio/distortion bounds, renormalization asymptotics
against an exactly solvable cubic flow, and builds nested complex disc
ladders around the critical orbit.
"""

from .core import (
    MapParams,
    OrbitRecord,
    Precision,
    DynamicsError,
    PrecisionExhausted,
    BracketError,
    default_bits_for_depth,
    escape_radius,
    eval_map,
    deriv_map,
    schwarzian,
    iterate,
    iterate_adaptive,
)
from .combinatorics import (
    FibSchedule,
    ClosestReturnTrace,
    FibVerdict,
    fibonacci_times,
    closest_returns,
    check_fibonacci,
    target_kneading,
    itinerary,
    parity_lex_compare,
    bisect_parameter,
)
from .branches import (
    BranchCertificate,
    SolveResult,
    verify_branch,
    solve_on_branch,
    fixed_point_q,
    apply_iterate,
)
from .levels import (
    SIDE_PATTERN,
    return_side,
    LevelPoints,
    compute_level_points,
    first_passage,
    verify_ordering,
    verify_identities,
    real_bounds_report,
    CoveringFn,
    covering_Fn,
    covering_orbit_check,
    bounded_geometry_stats,
)

__version__ = "0.1.0"
