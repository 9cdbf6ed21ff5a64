"""Descending-clock versus posted-price matching: reduced forms,
dominance thresholds, entry equilibria, and a session simulator."""

from .types import (
    Distribution,
    DutchExp,
    DutchLinear,
    EntryPrimitives,
    Lognormal,
    MarketPrimitives,
    Mechanism,
    PointMass,
    PostedBatch,
    PostedImmediate,
    Uniform,
    contact_rates,
    eligibility_time,
    price_path,
)
from .reduced_forms import (
    HazardProfile,
    ReducedFormBundle,
    avg_price_DA,
    bundle,
    driver_objects,
    hazard_DA,
    hazard_profile,
    match_volume,
    rider_objects,
)
from .dominance import (
    ALL_LAMBDA,
    CEILING_THRESHOLD,
    FLOOR_THRESHOLD,
    NEVER_DOMINATES,
    DominanceVerdict,
    GapReport,
    arm_posted_price,
    batch_margin,
    classify_driver,
    classify_rider,
    classify_values,
    dominance_margin,
    gaps_from_bundles,
    rider_kappa0,
)
from .equilibrium import (
    ConvergenceError,
    EntryMapEvaluation,
    EquilibriumResult,
    MonotoneIterationResult,
    contraction_check,
    driver_cutoff,
    entry_map,
    monotone_iteration,
    propagation_check,
    rider_cutoff,
    solve_one_sided,
    solve_two_sided,
)
from .outcomes import (
    RevenueReport,
    WelfareReport,
    revenue,
    revenue_frontier,
    revenue_report,
    slow_clock_bound,
    welfare_equilibrium,
    welfare_fixed,
)
from .simulator import (
    EmpiricalEquilibrium,
    SessionRecord,
    SimConfig,
    draw_streams,
    mech_tag,
    read_session_csv,
    run_grid,
    run_session,
    simulate_equilibrium,
    write_session_csv,
    write_summary_csv,
)
from .estimators import (
    DominanceTestReport,
    EstimatedBundle,
    LambdaStarReport,
    MonotonicityReport,
    ThicknessBin,
    dominance_test,
    estimate_bundle,
    lambda_star_hat,
    make_bins,
    monotonicity_test,
    write_estimates_csv,
)
from . import presets
from .checks import CheckResult, format_report, run_checks

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
