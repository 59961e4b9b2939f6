"""Domain types and closed-form, history-free formulas of the DR market.

A consumer ``i`` with private parameters ``(a, d)`` derives utility
``(a + eps) q - d q^2 / 2`` from consuming ``q`` kWh, pays the retail price
``p0`` per kWh and, on a DR day, is paid ``p (b_hat - q)`` for curtailing
below the assigned baseline ``b_hat``.  The system operator (SO) buys
energy at unit cost ``c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.typing import ArrayLike


class InvalidConfigError(ValueError):
    """A configuration value violates its documented domain.

    The offending field name is kept in ``field`` so callers (the CLI in
    particular) can report it.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ConsumerParams:
    """Private utility parameters of one consumer.

    Attributes:
        a: Utility slope (value/kWh).
        d: Utility curvature (value/kWh^2), strictly positive.
        noise_sd: Standard deviation of the daily Gaussian shock ``eps``.
        id: 1-based consumer index.
    """

    a: float
    d: float
    noise_sd: float = 0.0
    id: int = 1

    def __post_init__(self) -> None:
        if not math.isfinite(self.a):
            raise InvalidConfigError("a", f"must be finite, got {self.a}")
        if not (math.isfinite(self.d) and self.d > 0):
            raise InvalidConfigError("d", f"must be > 0, got {self.d}")
        if not (math.isfinite(self.noise_sd) and self.noise_sd >= 0):
            raise InvalidConfigError("noise_sd", f"must be >= 0, got {self.noise_sd}")


@dataclass(frozen=True)
class MarketConfig:
    """SO-side constants of one DR program.

    ``delta_p == 0`` is accepted here on purpose: it is a legal market but
    the least-squares estimator cannot identify baselines under it, which
    surfaces later as :class:`oldrm.estimator.SingularDesignError`.
    """

    p0: float = 1.0
    c: float = 2.0
    delta_p: float = 0.5
    m: int = 3
    T: int = 1000
    n_consumers: int = 5
    b_init: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.p0) and self.p0 >= 0):
            raise InvalidConfigError("p0", f"must be >= 0, got {self.p0}")
        if not (math.isfinite(self.c) and self.c > 0):
            raise InvalidConfigError("c", f"must be > 0, got {self.c}")
        if not (math.isfinite(self.delta_p) and self.delta_p >= 0):
            raise InvalidConfigError("delta_p", f"must be >= 0, got {self.delta_p}")
        if int(self.m) != self.m or self.m < 0:
            raise InvalidConfigError("m", f"must be an integer >= 0, got {self.m}")
        if int(self.T) != self.T or self.T < 1:
            raise InvalidConfigError("T", f"must be an integer >= 1, got {self.T}")
        if int(self.n_consumers) != self.n_consumers or self.n_consumers < 1:
            raise InvalidConfigError(
                "n_consumers", f"must be an integer >= 1, got {self.n_consumers}"
            )
        if not math.isfinite(self.b_init):
            raise InvalidConfigError("b_init", f"must be finite, got {self.b_init}")

    @property
    def p_star(self) -> float:
        return optimal_price(self.c)


@dataclass
class DayRecord:
    """Everything that happened on one day of one replication."""

    t: int
    price: float
    baselines: np.ndarray
    consumptions: np.ndarray
    shocks: np.ndarray
    dr_payments: np.ndarray
    realized_cost: float
    conditional_expected_cost: float
    consumer_net_utilities: np.ndarray


@dataclass
class RegretReport:
    """Regret curve, its four-way decomposition and the IR ledger.

    ``decomposition`` maps ``"inflation"``, ``"exploration"`` and
    ``"baseline_error"`` to per-day arrays (summing them reproduces the
    regret increments) and ``"upfront"`` to the total upfront payment,
    which is charged once on day 1.
    """

    cumulative_regret: np.ndarray
    decomposition: dict[str, Any]
    ir_ledger: np.ndarray
    upfront_payments: np.ndarray
    fitted_log2_coeff: float | None = None
    fitted_power_exponent: float | None = None
    optimal_cost: float = 0.0
    so_knows_curvature: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(self.cumulative_regret[-1])

    def decomposition_total(self) -> float:
        d = self.decomposition
        return float(
            np.sum(d["inflation"])
            + np.sum(d["exploration"])
            + np.sum(d["baseline_error"])
            + d["upfront"]
        )

    def to_dict(self) -> dict[str, Any]:
        d = self.decomposition
        return {
            "cumulative_regret": self.cumulative_regret.tolist(),
            "regret_T": self.total,
            "optimal_expected_cost_per_day": self.optimal_cost,
            "decomposition": {
                "inflation": d["inflation"].tolist(),
                "exploration": d["exploration"].tolist(),
                "baseline_error": d["baseline_error"].tolist(),
                "upfront": float(d["upfront"]),
                "totals": {
                    "inflation": float(np.sum(d["inflation"])),
                    "exploration": float(np.sum(d["exploration"])),
                    "baseline_error": float(np.sum(d["baseline_error"])),
                    "upfront": float(d["upfront"]),
                },
                "upfront_charged_on_day": 1,
            },
            "ir_ledger": self.ir_ledger.tolist(),
            "upfront_payments": self.upfront_payments.tolist(),
            "fitted_log2_coeff": self.fitted_log2_coeff,
            "fitted_power_exponent": self.fitted_power_exponent,
            "so_knows_curvature": self.so_knows_curvature,
            "notes": list(self.notes),
        }


def optimal_price(c: float) -> float:
    """Cost-minimising DR price ``p* = c / 2`` under correct baselines."""
    if not c > 0:
        raise InvalidConfigError("c", f"must be > 0, got {c}")
    return c / 2.0


def price_schedule(t: ArrayLike, p_star: float, delta_p: float) -> np.ndarray | float:
    """Announced DR price ``p_t = p* + delta_p * exp(-t)``; vectorised over ``t``."""
    t_arr = np.asarray(t, dtype=float)
    out = p_star + delta_p * np.exp(-t_arr)
    return float(out) if out.ndim == 0 else out


def correct_baseline(params: ConsumerParams, p0: float) -> float:
    """Expected consumption without a DR event, ``(a - p0) / d``."""
    if not params.d > 0:
        raise InvalidConfigError("d", f"must be > 0, got {params.d}")
    return (params.a - p0) / params.d


def hypothetical_consumption(params: ConsumerParams, p0: float, p: ArrayLike, eps: ArrayLike):
    """Myopic consumption ``(a + eps - p0 - p) / d`` facing DR price ``p``.

    Negative values are returned as-is; the quadratic model does not clamp.
    """
    return (params.a + np.asarray(eps, dtype=float) - p0 - np.asarray(p, dtype=float)) / params.d


def utility(params: ConsumerParams, q: ArrayLike, eps: ArrayLike):
    q = np.asarray(q, dtype=float)
    return (params.a + np.asarray(eps, dtype=float)) * q - params.d * q * q / 2.0


def net_utility(params: ConsumerParams, q, eps, p0: float, price, baseline):
    """Consumer's daily net utility: utility minus retail bill plus DR payment."""
    q = np.asarray(q, dtype=float)
    payment = np.asarray(price, dtype=float) * (np.asarray(baseline, dtype=float) - q)
    return utility(params, q, eps) - p0 * q + payment


def so_day_cost(c: float, p_t: float, total_baseline, total_consumption):
    """Daily SO cost: procurement ``c q`` plus DR outlay ``p (b_hat - q)``."""
    return c * total_consumption + p_t * (total_baseline - total_consumption)


def optimal_expected_cost(config: MarketConfig, all_params: Sequence[ConsumerParams]) -> float:
    """Per-day expected SO cost with correct baselines at price ``p*``.

    Time-invariant.  With ``s_i = b_i - p*/d_i`` the cost is
    ``c * sum(s_i) + p* * sum(p*/d_i)``.
    """
    p_star = config.p_star
    b_tilde = sum(correct_baseline(p, config.p0) for p in all_params)
    inv_d = sum(1.0 / p.d for p in all_params)
    s_star = b_tilde - p_star * inv_d
    return config.c * s_star + p_star * (b_tilde - s_star)


def no_dr_utility(params: ConsumerParams, p0: float) -> float:
    """Expected daily net utility of a consumer outside the DR program.

    Closed form of ``E[u(s(0), eps) - p0 s(0)]`` for Gaussian shocks; the
    shock contributes ``sigma^2 / (2 d)``.
    """
    b = correct_baseline(params, p0)
    return (
        params.a * b
        - params.d * b * b / 2.0
        - p0 * b
        + params.noise_sd**2 / (2.0 * params.d)
    )


def aggregate_inverse_curvature(all_params: Sequence[ConsumerParams]) -> float:
    """``sum(1/d_i)``: the population-level price sensitivity of consumption."""
    return float(sum(1.0 / p.d for p in all_params))
