"""Rate functions: joint, flow marginal and occupation marginal."""

from .legendre import (
    FlowRate,
    LegendreError,
    LegendrePoint,
    condition4_certificate,
    flow_marginal_rate,
    fq,
    gq,
    gq_star,
    legendre_point,
    solve_tilted_mean,
    weighted_laws,
    zeta_q,
)
from .occupation import DVResult, OccupationRate, OptimizationError, dv_functional, measure_marginal_rate, single_gstar
from .pair import MeasureFlowPair, RateBreakdown, joint_rate, optimal_measure

__all__ = [
    "DVResult", "FlowRate", "LegendreError", "LegendrePoint", "MeasureFlowPair", "OccupationRate",
    "OptimizationError", "RateBreakdown", "condition4_certificate", "dv_functional", "flow_marginal_rate", "fq",
    "gq", "gq_star", "joint_rate", "legendre_point", "measure_marginal_rate", "optimal_measure", "single_gstar",
    "solve_tilted_mean", "weighted_laws", "zeta_q",
]
