"""Consumer response rules and SO pricing/baseline policies.

Every SO policy exposes the same small surface:

* ``prices(T)``: the announced price of every day (no policy here lets
  prices depend on observed consumption),
* ``baseline_sensitivity(t, j, T)``: how the baseline of day ``t + j``
  moves with consumption on day ``t``; this is what a strategic consumer
  needs to know about the estimation rule,
* ``decide(t, state)``: price and baselines for day ``t``,
* ``observes(t)``: whether day ``t`` feeds the estimator,
* ``upfront(m, T)``: per-consumer participation payment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import estimator as est
from .estimator import EstimatorState, SingularDesignError
from .model import (
    ConsumerParams,
    InvalidConfigError,
    MarketConfig,
    correct_baseline,
    hypothetical_consumption,
    price_schedule,
)

CONSUMER_KINDS = ("strategic", "myopic")


class OracleFailure(RuntimeError):
    """The brute-force best-response search did not converge."""


@dataclass(frozen=True)
class ConsumerPolicy:
    """How consumers choose consumption.

    ``strategic`` consumers look ``m`` days ahead and inflate today's
    consumption to move future baselines; ``myopic`` ones ignore the
    future.  ``strategic`` with ``m == 0`` behaves exactly like ``myopic``.
    """

    kind: str = "strategic"
    m: int = 3

    def __post_init__(self) -> None:
        if self.kind not in CONSUMER_KINDS:
            raise InvalidConfigError("consumer_policy", f"unknown kind {self.kind!r}")
        if self.m < 0:
            raise InvalidConfigError("m", f"must be >= 0, got {self.m}")

    @property
    def lookahead(self) -> int:
        return self.m if self.kind == "strategic" else 0


class SOPolicy:
    """Base class; subclasses override what differs."""

    name = "base"

    def __init__(self, market: MarketConfig, consumers: Sequence[ConsumerParams]):
        self.market = market
        self.consumers = list(consumers)
        self.b_tilde = np.array([correct_baseline(c, market.p0) for c in self.consumers])
        self.d = np.array([c.d for c in self.consumers])

    def prices(self, T: int) -> np.ndarray:
        raise NotImplementedError

    def baseline_sensitivity(self, t: int, j: int, T: int) -> float:
        return 0.0

    def inflation(self, m: int, T: int) -> np.ndarray:
        """Strategic inflation of every consumer on every day, shape ``(T, N)``."""
        return np.zeros((T, len(self.consumers)))

    def observes(self, t: int) -> bool:
        return True

    def decide(self, t: int, state: EstimatorState) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def upfront(self, m: int, T: int) -> np.ndarray:
        return np.zeros(len(self.consumers))

    def delta_b(self, m: int, T: int) -> np.ndarray:
        """Per-day baseline correction behind the upfront payment, ``(T, N)``."""
        return np.zeros((T, len(self.consumers)))

    def _full(self, state: EstimatorState, values) -> np.ndarray:
        return np.broadcast_to(np.asarray(values, dtype=float), np.shape(state.sum_q)).copy()

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class OLDRM(SOPolicy):
    """Least-squares baselines with an exponentially decaying price perturbation.

    With ``known_baselines=True`` the SO skips estimation and assigns the
    correct baselines; only the price exploration cost remains.
    """

    name = "oldrm"

    def __init__(self, market, consumers, known_baselines: bool = False):
        super().__init__(market, consumers)
        self.known_baselines = known_baselines

    def prices(self, T: int) -> np.ndarray:
        return price_schedule(np.arange(1, T + 1), self.market.p_star, self.market.delta_p)

    def baseline_sensitivity(self, t: int, j: int, T: int) -> float:
        if self.known_baselines or t + j < est.FIRST_LS_DAY:
            return 0.0
        return est.baseline_sensitivity(t, j, self.prices(t + j))

    def inflation(self, m: int, T: int) -> np.ndarray:
        if self.known_baselines or m == 0:
            return super().inflation(m, T)
        return est.inflation_terms(self.prices(T), self.d, m, T)

    def decide(self, t, state):
        p_t = float(price_schedule(t, self.market.p_star, self.market.delta_p))
        if self.known_baselines:
            return p_t, self._full(state, self.b_tilde)
        if t < est.FIRST_LS_DAY:
            return p_t, self._full(state, self.market.b_init)
        try:
            return p_t, np.asarray(est.ls_estimate(state).b_hat, dtype=float)
        except SingularDesignError as exc:
            raise SingularDesignError(str(exc), day=t) from exc

    def delta_b(self, m: int, T: int) -> np.ndarray:
        if self.known_baselines or T < est.FIRST_LS_DAY:
            return super().delta_b(m, T)
        p = self.prices(T)
        infl = est.inflation_terms(p, self.d, m, T)
        return est.delta_b_path(p, infl, self.market.p_star, self.market.delta_p)

    def upfront(self, m: int, T: int) -> np.ndarray:
        return self.prices(T) @ self.delta_b(m, T)

    def __repr__(self):
        return f"OLDRM(known_baselines={self.known_baselines})"


def default_n_explore(T: int, exponent: float = 2.0 / 3.0) -> int:
    # the epsilon guards against T**e landing a hair above an exact integer
    return max(1, min(T - 1, math.ceil(T**exponent - 1e-9)))


class AveragingETC(SOPolicy):
    """Explore-then-commit comparator built on averaging.

    Days ``1..n_explore`` carry no DR event (price 0); afterwards the price
    is ``p*`` and each baseline is frozen at the consumer's mean
    exploration-phase consumption.
    """

    name = "etc"

    def __init__(self, market, consumers, n_explore: int):
        super().__init__(market, consumers)
        if not 1 <= n_explore <= market.T - 1:
            raise InvalidConfigError(
                "n_explore", f"must lie in [1, T-1] = [1, {market.T - 1}], got {n_explore}"
            )
        self.n_explore = int(n_explore)

    def prices(self, T: int) -> np.ndarray:
        t = np.arange(1, T + 1)
        return np.where(t <= self.n_explore, 0.0, self.market.p_star)

    def baseline_sensitivity(self, t: int, j: int, T: int) -> float:
        n = self.n_explore
        if t <= n < t + j <= T:
            return 1.0 / n
        return 0.0

    def inflation(self, m: int, T: int) -> np.ndarray:
        out = np.zeros(T)
        p = self.prices(T)
        for t in range(max(1, self.n_explore - m + 1), self.n_explore + 1):
            for j in range(1, min(m, T - t) + 1):
                out[t - 1] += p[t + j - 1] * self.baseline_sensitivity(t, j, T)
        return out[:, None] / self.d[None, :]

    def observes(self, t: int) -> bool:
        return t <= self.n_explore

    def decide(self, t, state):
        if t <= self.n_explore:
            return 0.0, self._full(state, 0.0)
        return self.market.p_star, state.total_q / state.n_days

    def __repr__(self):
        return f"AveragingETC(n_explore={self.n_explore})"


class PerfectInformation(SOPolicy):
    """Benchmark SO that knows every baseline and posts ``p*`` daily."""

    name = "oracle"

    def prices(self, T):
        return np.full(T, self.market.p_star)

    def decide(self, t, state):
        return self.market.p_star, self._full(state, self.b_tilde)


class NoDR(SOPolicy):
    """No DR events at all: zero price, zero payments."""

    name = "no-dr"

    def prices(self, T):
        return np.zeros(T)

    def decide(self, t, state):
        return 0.0, self._full(state, 0.0)


POLICY_NAMES = ("oldrm", "etc", "etc-1/3", "etc-1/2", "etc-2/3", "oracle", "no-dr", "oldrm-known")


def make_policy(
    name: str,
    market: MarketConfig,
    consumers: Sequence[ConsumerParams],
    n_explore: int | None = None,
) -> SOPolicy:
    """Build an SO policy from its CLI/config name.

    ``etc`` explores for ``n_explore`` days (default ``ceil(T^(2/3))``);
    ``etc-1/3`` and friends pick the exponent instead.
    """
    if name == "oldrm":
        return OLDRM(market, consumers)
    if name == "oldrm-known":
        return OLDRM(market, consumers, known_baselines=True)
    if name == "oracle":
        return PerfectInformation(market, consumers)
    if name == "no-dr":
        return NoDR(market, consumers)
    if name.startswith("etc"):
        if market.T < 2:
            raise InvalidConfigError("T", "explore-then-commit needs T >= 2")
        exponents = {"etc": 2 / 3, "etc-1/3": 1 / 3, "etc-1/2": 1 / 2, "etc-2/3": 2 / 3}
        if name not in exponents:
            raise InvalidConfigError("so_policy", f"unknown policy {name!r}; valid: {POLICY_NAMES}")
        if n_explore is None or name != "etc":
            n_explore = default_n_explore(market.T, exponents[name])
        return AveragingETC(market, consumers, n_explore)
    raise InvalidConfigError("so_policy", f"unknown policy {name!r}; valid: {', '.join(POLICY_NAMES)}")


def so_decide(policy: SOPolicy, t: int, state: EstimatorState) -> tuple[float, np.ndarray]:
    return policy.decide(t, state)


def consumer_consumption(
    policy: ConsumerPolicy,
    params: ConsumerParams,
    t: int,
    eps_t: float,
    p0: float,
    prices: np.ndarray,
    so_policy: SOPolicy,
    T: int,
) -> float:
    """Optimal day-``t`` consumption given the SO's announced rules.

    The myopic part is ``(a + eps - p0 - p_t) / d``; a strategic consumer
    adds ``(1/d) * sum_j p_{t+j} * d b_{t+j} / d q_t`` over the days it
    looks ahead.  Quadratic utility makes certainty equivalence exact, so
    future shocks do not enter.
    """
    q = float(hypothetical_consumption(params, p0, prices[t - 1], eps_t))
    m = policy.lookahead
    if m == 0:
        return q
    extra = 0.0
    for j in range(1, min(m, T - t) + 1):
        extra += prices[t + j - 1] * so_policy.baseline_sensitivity(t, j, T)
    return q + extra / params.d


def _lstsq_baseline(prices: np.ndarray, q: np.ndarray) -> float:
    A = np.column_stack([np.ones(len(prices)), -prices])
    coef, *_ = np.linalg.lstsq(A, q, rcond=None)
    return float(coef[0])


def brute_force_best_response(
    t: int,
    params: ConsumerParams,
    eps_t: float,
    prices: np.ndarray,
    past_q: np.ndarray,
    m: int,
    T: int,
    p0: float,
    b_init: float = 0.0,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> float:
    """Test oracle: maximise the consumer's ``m``-day objective numerically.

    Baselines are refitted with a dense least-squares solve on the explicit
    history for every objective evaluation, so nothing here shares code
    with the closed-form response.  Future shocks are set to zero.  Returns
    the day-``t`` coordinate of the joint maximiser.
    """
    prices = np.asarray(prices, dtype=float)
    past_q = np.asarray(past_q, dtype=float)
    if len(past_q) != t - 1:
        raise ValueError(f"past_q must hold {t - 1} days, got {len(past_q)}")
    H = min(m, T - t)
    days = np.arange(t, t + H + 1)
    eps = np.zeros(H + 1)
    eps[0] = eps_t

    def baseline(s: int, plan: np.ndarray) -> float:
        if s < est.FIRST_LS_DAY:
            return b_init
        hist = np.concatenate([past_q, plan[: s - t]])[: s - 1]
        return _lstsq_baseline(prices[: s - 1], hist)

    def J(plan: np.ndarray) -> float:
        total = 0.0
        for k, s in enumerate(days):
            q = plan[k]
            p = prices[s - 1]
            total += (params.a + eps[k]) * q - params.d * q * q / 2 - p0 * q + p * (baseline(s, plan) - q)
        return total

    x = np.array([(params.a + eps[k] - p0 - prices[s - 1]) / params.d for k, s in enumerate(days)])
    # J is quadratic, so central differences are exact for any step; a unit
    # step keeps the roundoff in the difference quotient smallest
    h = 1.0
    for _ in range(max_iter):
        grad = np.empty_like(x)
        for i in range(len(x)):
            e = np.zeros_like(x)
            e[i] = h
            f_plus, f_0, f_minus = J(x + e), J(x), J(x - e)
            g = (f_plus - f_minus) / (2 * h)
            curv = (f_plus - 2 * f_0 + f_minus) / h**2
            if not curv < 0:
                raise OracleFailure(f"objective not concave along day {days[i]}: {curv}")
            x[i] -= g / curv
            grad[i] = g
        if np.max(np.abs(grad)) <= tol:
            return float(x[0])
    raise OracleFailure(f"coordinate ascent did not converge in {max_iter} sweeps")
