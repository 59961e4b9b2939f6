"""Online least-squares baseline learning for incentive-based demand response."""

__version__ = "0.1.0"

from .agents import (
    OLDRM,
    POLICY_NAMES,
    AveragingETC,
    ConsumerPolicy,
    NoDR,
    PerfectInformation,
    brute_force_best_response,
    consumer_consumption,
    make_policy,
    so_decide,
)
from .analysis import InsufficientDataError, compare_policies, fit_growth
from .config import load_config
from .engine import (
    Ensemble,
    SimulationConfig,
    Trajectory,
    ir_check,
    regret,
    run,
    run_ensemble,
    standard_config,
)
from .estimator import (
    BaselineEstimate,
    EstimatorState,
    LeastSquaresBaseline,
    SingularDesignError,
    baseline_sensitivity,
    delta_b,
    delta_tk_diagnostic,
    inflation_term,
    ls_estimate,
    update,
    upfront_payment,
)
from .model import (
    ConsumerParams,
    DayRecord,
    InvalidConfigError,
    MarketConfig,
    RegretReport,
    correct_baseline,
    hypothetical_consumption,
    no_dr_utility,
    optimal_expected_cost,
    optimal_price,
    price_schedule,
    so_day_cost,
)

__all__ = [
    "AveragingETC",
    "BaselineEstimate",
    "ConsumerParams",
    "InsufficientDataError",
    "compare_policies",
    "fit_growth",
    "load_config",
    "ConsumerPolicy",
    "DayRecord",
    "Ensemble",
    "EstimatorState",
    "InvalidConfigError",
    "LeastSquaresBaseline",
    "MarketConfig",
    "NoDR",
    "OLDRM",
    "POLICY_NAMES",
    "PerfectInformation",
    "RegretReport",
    "SimulationConfig",
    "SingularDesignError",
    "Trajectory",
    "baseline_sensitivity",
    "brute_force_best_response",
    "consumer_consumption",
    "correct_baseline",
    "delta_b",
    "delta_tk_diagnostic",
    "hypothetical_consumption",
    "inflation_term",
    "ir_check",
    "ls_estimate",
    "make_policy",
    "no_dr_utility",
    "optimal_expected_cost",
    "optimal_price",
    "price_schedule",
    "regret",
    "run",
    "run_ensemble",
    "so_day_cost",
    "so_decide",
    "standard_config",
    "update",
    "upfront_payment",
]
