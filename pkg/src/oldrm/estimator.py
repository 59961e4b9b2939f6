"""Least-squares baseline learning and the strategic-response terms it induces.

The SO regresses each consumer's consumption on the DR price,
``q_k ~ b - b1 * p_k``, and uses the intercept ``b`` (consumption at zero
incentive) as the next day's baseline.  Because that intercept depends
linearly on past consumption, a forward-looking consumer gains by shifting
today's consumption; :func:`inflation_term` is the size of that shift and
:func:`upfront_payment` is the participation payment that offsets the
resulting estimator drift.

Day indices are 1-based throughout; ``prices[k - 1]`` is the price of day
``k``.  Baselines for days 1 and 2 are the configured initial value, so
least squares only drives baselines from day 3 on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import ConsumerParams

SINGULAR_RTOL = 1e-12
FIRST_LS_DAY = 3


class SingularDesignError(ArithmeticError):
    """The price history has no variation, so the 2-parameter fit is undetermined.

    ``day`` is the 1-based day at which the failure surfaced, if known.
    """

    def __init__(self, message: str, day: int | None = None):
        super().__init__(message)
        self.day = day


def _neumaier(total, comp, x):
    t = total + x
    comp = comp + np.where(np.abs(total) >= np.abs(x), (total - t) + x, (x - t) + total)
    return t, comp


@dataclass(frozen=True)
class EstimatorState:
    """Running sufficient statistics of the (price, consumption) history.

    Sums are accumulated with Neumaier compensation; the ``comp_*`` fields
    hold the carried rounding error and the ``total_*`` properties add it
    back.  ``sum_q`` and ``sum_pq`` may have any shape (one entry per
    consumer, optionally batched over replications); prices are shared.
    """

    n_days: int
    sum_p: float
    sum_p2: float
    sum_q: np.ndarray
    sum_pq: np.ndarray
    comp_p: float = field(default=0.0, repr=False)
    comp_p2: float = field(default=0.0, repr=False)
    comp_q: np.ndarray | float = field(default=0.0, repr=False)
    comp_pq: np.ndarray | float = field(default=0.0, repr=False)

    @classmethod
    def empty(cls, shape: int | tuple[int, ...] = ()) -> "EstimatorState":
        z = np.zeros(shape)
        return cls(0, 0.0, 0.0, z, z.copy(), 0.0, 0.0, z.copy(), z.copy())

    @property
    def total_p(self) -> float:
        return self.sum_p + self.comp_p

    @property
    def total_p2(self) -> float:
        return self.sum_p2 + self.comp_p2

    @property
    def total_q(self) -> np.ndarray:
        return self.sum_q + self.comp_q

    @property
    def total_pq(self) -> np.ndarray:
        return self.sum_pq + self.comp_pq

    @property
    def denominator(self) -> float:
        """``n * sum((p - mean p)^2)``, the determinant of the normal equations."""
        return self.n_days * self.total_p2 - self.total_p**2


def update(state: EstimatorState, p_t: float, q_t: ArrayLike) -> EstimatorState:
    """Return a new state with day ``(p_t, q_t)`` appended."""
    q_t = np.asarray(q_t, dtype=float)
    sp, cp = _neumaier(state.sum_p, state.comp_p, p_t)
    sp2, cp2 = _neumaier(state.sum_p2, state.comp_p2, p_t * p_t)
    sq, cq = _neumaier(state.sum_q, state.comp_q, q_t)
    spq, cpq = _neumaier(state.sum_pq, state.comp_pq, p_t * q_t)
    return replace(
        state,
        n_days=state.n_days + 1,
        sum_p=float(sp),
        sum_p2=float(sp2),
        sum_q=sq,
        sum_pq=spq,
        comp_p=float(cp),
        comp_p2=float(cp2),
        comp_q=cq,
        comp_pq=cpq,
    )


@dataclass(frozen=True)
class BaselineEstimate:
    """Intercept (baseline) and price slope of the consumption regression."""

    b_hat: np.ndarray | float
    b1_hat: np.ndarray | float


def ls_estimate(
    state: EstimatorState, consumer: int | None = None, rtol: float = SINGULAR_RTOL
) -> BaselineEstimate:
    """Closed-form least-squares fit of ``q = b - b1 * p`` over the history.

    Args:
        state: Accumulated statistics; needs at least two days.
        consumer: Optional index into the last axis of ``sum_q``.  When
            omitted all consumers are estimated at once.

    Raises:
        SingularDesignError: fewer than two days, or all prices equal.
    """
    n = state.n_days
    if n < 2:
        raise SingularDesignError(f"need at least 2 days of history, have {n}")
    sp, sp2 = state.total_p, state.total_p2
    den = state.denominator
    if den <= rtol * n * sp2:
        raise SingularDesignError("price perturbation delta_p must be > 0")
    sq, spq = state.total_q, state.total_pq
    if consumer is not None:
        sq, spq = sq[..., consumer], spq[..., consumer]
    b_hat = (sp2 * sq - sp * spq) / den
    b1_hat = (sp * sq - n * spq) / den
    if np.ndim(b_hat) == 0:
        return BaselineEstimate(float(b_hat), float(b1_hat))
    return BaselineEstimate(b_hat, b1_hat)


def baseline_sensitivity(t: int, j: int, prices: ArrayLike) -> float:
    """Derivative of the day ``t + j`` baseline with respect to ``q_t``.

    The day ``t + j`` baseline is fitted on days ``1 .. t + j - 1``.  The
    result depends on prices only, never on consumption.
    """
    n = t + j - 1
    if j < 1 or t < 1:
        raise ValueError(f"need t >= 1 and j >= 1, got t={t}, j={j}")
    if n < 2:
        raise SingularDesignError(f"baseline of day {t + j} is not a least-squares fit", day=t + j)
    p = np.asarray(prices, dtype=float)[:n].tolist()
    if len(p) < n:
        raise ValueError(f"price sequence shorter than {n} days")
    s1 = math.fsum(p)
    s2 = math.fsum(x * x for x in p)
    p_bar = s1 / n
    den = n * math.fsum((x - p_bar) ** 2 for x in p)
    if den <= SINGULAR_RTOL * n * s2:
        raise SingularDesignError("price perturbation delta_p must be > 0", day=t + j)
    p_t = p[t - 1]
    return math.fsum([s2, -p_t * s1]) / den


def _lookahead(t: int, m: int, T: int) -> range:
    # baselines of days 1 and 2 are fixed, so they carry no sensitivity
    return range(max(1, FIRST_LS_DAY - t), min(m, T - t) + 1)


def inflation_term(t: int, params: ConsumerParams, prices: ArrayLike, m: int, T: int) -> float:
    """Extra consumption a consumer with lookahead ``m`` adds on day ``t``.

    ``(1/d) * sum_j p_{t+j} * d b_{t+j} / d q_t`` over future days that
    exist (``j <= T - t``) and whose baseline is a least-squares fit.
    """
    p = np.asarray(prices, dtype=float)
    total = 0.0
    for j in _lookahead(t, m, T):
        total += p[t + j - 1] * baseline_sensitivity(t, j, p)
    return total / params.d


def _shifted_prefix(prices: np.ndarray):
    # shifting by a constant leaves every variance-type expression unchanged
    # and removes the cancellation in n*sum(p^2) - sum(p)^2
    h = float(prices[-1])
    x = prices - h
    x1 = np.concatenate([[0.0], np.cumsum(x)])
    x2 = np.concatenate([[0.0], np.cumsum(x * x)])
    return h, x, x1, x2


def inflation_terms(prices: ArrayLike, d: ArrayLike, m: int, T: int | None = None) -> np.ndarray:
    """Vectorised :func:`inflation_term` for every day ``1..T``.

    Returns shape ``(T,)`` for scalar ``d`` and ``(T, N)`` for a vector of
    curvatures.
    """
    p = np.asarray(prices, dtype=float)
    T = len(p) if T is None else T
    p = p[:T]
    d = np.asarray(d, dtype=float)
    acc = np.zeros(T)
    if m > 0 and T >= FIRST_LS_DAY:
        h, x, x1, x2 = _shifted_prefix(p)
        t = np.arange(1, T + 1)
        for j in range(1, m + 1):
            n = t + j - 1
            ok = (n >= 2) & (t + j <= T)
            if not ok.any():
                continue
            tt, nn = t[ok], n[ok]
            xt = x[tt - 1]
            num = x2[nn] - xt * x1[nn] + h * (x1[nn] - nn * xt)
            den = nn * x2[nn] - x1[nn] ** 2
            raw2 = x2[nn] + 2 * h * x1[nn] + nn * h * h
            bad = den <= SINGULAR_RTOL * nn * raw2
            if bad.any():
                day = int(tt[bad][0] + j)
                raise SingularDesignError("price perturbation delta_p must be > 0", day=day)
            acc[ok] += p[tt + j - 1] * num / den
    if d.ndim == 0:
        return acc / float(d)
    return acc[:, None] / d[None, :]


def _price_variance_sums(prices: np.ndarray) -> np.ndarray:
    """``S[n] = sum_{k<=n} (p_k - mean_n p)^2`` for n = 0..T (index 0 unused)."""
    _, _, x1, x2 = _shifted_prefix(prices)
    n = np.arange(len(x1), dtype=float)
    out = np.zeros(len(x1))
    out[1:] = x2[1:] - x1[1:] ** 2 / n[1:]
    return out


def delta_b_path(
    prices: ArrayLike,
    inflation: ArrayLike,
    p_star: float,
    delta_p: float,
) -> np.ndarray:
    """Baseline correction ``delta_b_t`` for days ``1..T`` given the inflation path.

    ``delta_b_{t+1} = sum_{k<=t} p* dp e^{-k} Dtilde_k / sum_{k<=t} (p_k - pbar)^2``.
    Days 1 and 2 carry no correction (their baselines are not fitted).
    ``inflation`` may be ``(T,)`` or ``(T, N)``.
    """
    p = np.asarray(prices, dtype=float)
    infl = np.asarray(inflation, dtype=float)
    T = len(p)
    out = np.zeros(infl.shape)
    if T < FIRST_LS_DAY:
        return out
    k = np.arange(1, T + 1, dtype=float)
    w = p_star * delta_p * np.exp(-k)
    w = w.reshape((T,) + (1,) * (infl.ndim - 1))
    num = np.cumsum(w * infl, axis=0)
    S = _price_variance_sums(p)
    raw2 = np.concatenate([[0.0], np.cumsum(p * p)])
    n = np.arange(2, T)  # history length for days 3..T
    den = S[n]
    bad = den * n <= SINGULAR_RTOL * n * raw2[n]
    if bad.any():
        raise SingularDesignError(
            "price perturbation delta_p must be > 0", day=int(n[bad][0] + 1)
        )
    den = den.reshape((-1,) + (1,) * (infl.ndim - 1))
    out[FIRST_LS_DAY - 1 :] = num[n - 1] / den
    return out


def delta_b(
    t: int,
    params: ConsumerParams,
    prices: ArrayLike,
    p_star: float,
    delta_p: float,
    m: int,
    T: int,
) -> float:
    """Scalar baseline correction for day ``t`` (``t >= 3``)."""
    if t < FIRST_LS_DAY:
        raise SingularDesignError(f"day {t} baseline is not a least-squares fit", day=t)
    p = np.asarray(prices, dtype=float)
    hist = p[: t - 1].tolist()
    p_bar = math.fsum(hist) / len(hist)
    den = math.fsum((x - p_bar) ** 2 for x in hist)
    if den * len(hist) <= SINGULAR_RTOL * len(hist) * math.fsum(x * x for x in hist):
        raise SingularDesignError("price perturbation delta_p must be > 0", day=t)
    num = math.fsum(
        p_star * delta_p * math.exp(-k) * inflation_term(k, params, p, m, T)
        for k in range(1, t)
    )
    return num / den


def upfront_payment(
    params: ConsumerParams,
    prices: ArrayLike,
    p_star: float,
    delta_p: float,
    m: int,
    T: int | None = None,
) -> float:
    """Participation payment ``P_o = sum_{t>=3} p_t * delta_b_t``.

    Can be negative: the first day's response is a deflation (raising
    ``q_1`` lowers the two-point fit that sets day 3's baseline), and it
    carries the largest weight ``e^{-1}``.
    """
    p = np.asarray(prices, dtype=float)
    T = len(p) if T is None else T
    p = p[:T]
    if T < FIRST_LS_DAY:
        return 0.0
    infl = inflation_terms(p, params.d, m, T)
    db = delta_b_path(p, infl, p_star, delta_p)
    return float(np.dot(p, db))


def delta_tk_diagnostic(t: int, k: int, prices: ArrayLike, d: float) -> float:
    """Single-lag inflation kernel ``Delta_{t,k}`` used in the O(1/t) argument.

    ``(p_{t+1}/d) * [sum_{s<=t} p_s^2 - p_{t-k} sum_{s<=t} p_s] / (t * sum (p_s - pbar)^2)``.
    """
    if t < 2:
        raise SingularDesignError("need t >= 2", day=t)
    if not 0 <= k < t:
        raise ValueError(f"need 0 <= k < t, got k={k}, t={t}")
    p = np.asarray(prices, dtype=float)
    if len(p) < t + 1:
        raise ValueError(f"price sequence shorter than {t + 1} days")
    h, x, x1, x2 = _shifted_prefix(p[:t])
    xk = x[t - k - 1]
    num = x2[t] - xk * x1[t] + h * (x1[t] - t * xk)
    den = t * x2[t] - x1[t] ** 2
    if den <= SINGULAR_RTOL * t * (x2[t] + 2 * h * x1[t] + t * h * h):
        raise SingularDesignError("price perturbation delta_p must be > 0", day=t)
    return p[t] / d * num / den


class LeastSquaresBaseline(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper around the online baseline regression.

    ``X`` holds one DR price per day (shape ``(n_days,)`` or
    ``(n_days, 1)``); ``y`` holds consumption, one column per consumer.
    After fitting, ``baseline_`` is the estimated consumption at zero
    incentive and ``slope_`` the estimated reduction per unit price.
    ``partial_fit`` appends days to the running statistics, mirroring how
    the SO updates after every DR day.

    Args:
        singular_rtol: Relative floor on the design determinant below
            which the price history is declared constant.
    """

    def __init__(self, singular_rtol: float = SINGULAR_RTOL):
        self.singular_rtol = singular_rtol

    def _validate(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"X must hold a single price column, got {X.shape[1]}")
        return X[:, 0], np.asarray(y, dtype=float)

    def fit(self, X, y):
        self.state_ = None
        return self.partial_fit(X, y)

    def partial_fit(self, X, y):
        prices, q = self._validate(X, y)
        state = getattr(self, "state_", None)
        if state is None:
            state = EstimatorState.empty(q.shape[1:])
        for p_k, q_k in zip(prices, q):
            state = update(state, float(p_k), q_k)
        self.state_ = state
        self.n_days_ = state.n_days
        est = ls_estimate(state, rtol=self.singular_rtol)
        self.baseline_ = est.b_hat
        self.slope_ = est.b1_hat
        return self

    def predict(self, X):
        check_is_fitted(self, ["baseline_", "slope_"])
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        X = check_array(X)
        p = X[:, 0]
        if np.ndim(self.baseline_) == 0:
            return self.baseline_ - self.slope_ * p
        return self.baseline_[None, :] - self.slope_[None, :] * p[:, None]
