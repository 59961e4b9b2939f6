"""T-day program simulation, regret accounting and individual-rationality checks.

Replications are simulated in fixed-size chunks, vectorised over the
replications and consumers of a chunk.  Chunk boundaries depend only on
``chunk_size`` (never on the thread count) and partial sums are merged in
chunk order, so results are bit-identical for any ``threads`` value.

Shocks for replication ``r`` come from ``SeedSequence(seed, spawn_key=(r,))``
and are laid out day-major, so a shorter horizon sees a prefix of a longer
one's shocks and different policies share shocks under the same seed.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Sequence

import numpy as np

from . import estimator as est
from .agents import CONSUMER_KINDS, SOPolicy, make_policy
from .model import (
    ConsumerParams,
    DayRecord,
    InvalidConfigError,
    MarketConfig,
    RegretReport,
    correct_baseline,
    no_dr_utility,
    optimal_expected_cost,
)


@dataclass(frozen=True)
class SimulationConfig:
    """Everything needed to reproduce a simulation.

    ``consumer_policy`` is ``"strategic"`` (lookahead ``market.m``) or
    ``"myopic"``.  ``so_policy`` is any name accepted by
    :func:`oldrm.agents.make_policy`.  ``include_upfront=False`` drops the
    participation payment from the books without changing behaviour (it is
    sunk before day 1).
    """

    market: MarketConfig
    consumers: tuple[ConsumerParams, ...]
    consumer_policy: str = "strategic"
    so_policy: str = "oldrm"
    n_explore: int | None = None
    seed: int = 42
    n_replications: int = 200
    include_upfront: bool = True
    clamp_nonneg: bool = False
    chunk_size: int = 25

    def __post_init__(self) -> None:
        object.__setattr__(self, "consumers", tuple(self.consumers))
        if not self.consumers:
            raise InvalidConfigError("consumers", "need at least one consumer")
        if len(self.consumers) != self.market.n_consumers:
            raise InvalidConfigError(
                "n_consumers",
                f"market declares {self.market.n_consumers} consumers, got {len(self.consumers)}",
            )
        for c in self.consumers:
            if not c.a > self.market.p0:
                raise InvalidConfigError("a", f"consumer {c.id}: need a > p0, got a={c.a}")
        if self.consumer_policy not in CONSUMER_KINDS:
            raise InvalidConfigError(
                "consumer_policy", f"must be one of {CONSUMER_KINDS}, got {self.consumer_policy!r}"
            )
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise InvalidConfigError("seed", f"must be an integer in [0, 2^64), got {self.seed!r}")
        if not (isinstance(self.n_replications, int) and self.n_replications >= 1):
            raise InvalidConfigError("n_replications", f"must be >= 1, got {self.n_replications!r}")
        if not (isinstance(self.chunk_size, int) and self.chunk_size >= 1):
            raise InvalidConfigError("chunk_size", f"must be >= 1, got {self.chunk_size!r}")
        # fail fast on unknown policy names / bad n_explore
        self.policy()

    def policy(self) -> SOPolicy:
        return make_policy(self.so_policy, self.market, self.consumers, self.n_explore)

    @property
    def T(self) -> int:
        return self.market.T

    @property
    def lookahead(self) -> int:
        return self.market.m if self.consumer_policy == "strategic" else 0

    def with_market(self, **changes) -> "SimulationConfig":
        return replace(self, market=replace(self.market, **changes))

    def to_dict(self) -> dict[str, Any]:
        return {
            "market": asdict(self.market),
            "consumers": [asdict(c) for c in self.consumers],
            "consumer_policy": self.consumer_policy,
            "so_policy": self.so_policy,
            "n_explore": self.n_explore,
            "seed": self.seed,
            "n_replications": self.n_replications,
            "include_upfront": self.include_upfront,
            "clamp_nonneg": self.clamp_nonneg,
            "chunk_size": self.chunk_size,
        }


def standard_consumers(n: int = 5, noise_sd: float = 0.1) -> tuple[ConsumerParams, ...]:
    """Evenly spread population with ``a`` in [2, 4] and ``d`` in [1, 3]."""
    a = np.linspace(2.0, 4.0, n) if n > 1 else np.array([3.0])
    d = np.linspace(1.0, 3.0, n) if n > 1 else np.array([2.0])
    return tuple(ConsumerParams(float(a[i]), float(d[i]), noise_sd, i + 1) for i in range(n))


def standard_config(**overrides) -> SimulationConfig:
    """N=5, p0=1, c=2, delta_p=0.5, sigma=0.1, m=3, seed 42, 200 replications."""
    market_keys = {f for f in MarketConfig.__dataclass_fields__}
    market_kw = {k: overrides.pop(k) for k in list(overrides) if k in market_keys}
    n = market_kw.get("n_consumers", 5)
    market = MarketConfig(**{"p0": 1.0, "c": 2.0, "delta_p": 0.5, "m": 3, "T": 1000, **market_kw})
    noise_sd = overrides.pop("noise_sd", 0.1)
    consumers = overrides.pop("consumers", standard_consumers(n, noise_sd))
    return SimulationConfig(market=market, consumers=consumers, **overrides)


@dataclass
class _Plan:
    """Deterministic, replication-independent quantities of one config."""

    policy: SOPolicy
    prices: np.ndarray
    inflation: np.ndarray
    expected_consumption: np.ndarray
    p_o: np.ndarray
    delta_b: np.ndarray
    a: np.ndarray
    d: np.ndarray
    noise_sd: np.ndarray
    b_tilde: np.ndarray


def _plan(config: SimulationConfig) -> _Plan:
    m, T = config.market, config.T
    policy = config.policy()
    prices = policy.prices(T)
    inflation = policy.inflation(config.lookahead, T)
    b_tilde = np.array([correct_baseline(c, m.p0) for c in config.consumers])
    d = np.array([c.d for c in config.consumers])
    expected = b_tilde[None, :] - prices[:, None] / d[None, :] + inflation
    delta_b = policy.delta_b(m.m, T)
    p_o = prices @ delta_b if config.include_upfront else np.zeros(len(d))
    return _Plan(
        policy=policy,
        prices=prices,
        inflation=inflation,
        expected_consumption=expected,
        p_o=p_o,
        delta_b=delta_b,
        a=np.array([c.a for c in config.consumers]),
        d=d,
        noise_sd=np.array([c.noise_sd for c in config.consumers]),
        b_tilde=b_tilde,
    )


def replication_shocks(config: SimulationConfig, replication: int) -> np.ndarray:
    """Shocks ``eps[t-1, i]`` of one replication, shape ``(T, N)``."""
    ss = np.random.SeedSequence(config.seed, spawn_key=(replication,))
    z = np.random.default_rng(ss).standard_normal((config.T, len(config.consumers)))
    sd = np.array([c.noise_sd for c in config.consumers])
    return z * sd[None, :]


@dataclass
class _Batch:
    prices: np.ndarray  # (T,)
    baselines: np.ndarray  # (B, T, N)
    consumptions: np.ndarray
    shocks: np.ndarray
    payments: np.ndarray
    utilities: np.ndarray
    realized_cost: np.ndarray  # (B, T)
    conditional_cost: np.ndarray  # (B, T)
    final_state: est.EstimatorState


def _simulate(config: SimulationConfig, plan: _Plan, reps: Sequence[int]) -> _Batch:
    mk = config.market
    T, N, B = config.T, len(config.consumers), len(reps)
    shocks = np.stack([replication_shocks(config, r) for r in reps])
    baselines = np.empty((B, T, N))
    q = np.empty((B, T, N))
    prices = np.empty(T)
    state = est.EstimatorState.empty((B, N))
    for t in range(1, T + 1):
        p_t, b_t = plan.policy.decide(t, state)
        q_t = (plan.a + shocks[:, t - 1] - mk.p0 - p_t) / plan.d + plan.inflation[t - 1]
        if config.clamp_nonneg:
            q_t = np.maximum(q_t, 0.0)
        prices[t - 1] = p_t
        baselines[:, t - 1] = b_t
        q[:, t - 1] = q_t
        if plan.policy.observes(t):
            state = est.update(state, p_t, q_t)
    pcol = prices[None, :, None]
    payments = pcol * (baselines - q)
    utilities = (plan.a + shocks) * q - plan.d * q * q / 2.0 - mk.p0 * q + payments
    tot_q = q.sum(axis=2)
    tot_b = baselines.sum(axis=2)
    realized = mk.c * tot_q + prices[None, :] * (tot_b - tot_q)
    q_exp = plan.expected_consumption[None, :, :]
    conditional = (mk.c * q_exp + pcol * (baselines - q_exp)).sum(axis=2)
    return _Batch(prices, baselines, q, shocks, payments, utilities, realized, conditional, state)


@dataclass
class Trajectory:
    """One replication of the program, stored column-wise.

    ``days`` materialises :class:`DayRecord` objects on demand.
    """

    prices: np.ndarray
    baselines: np.ndarray
    consumptions: np.ndarray
    shocks: np.ndarray
    dr_payments: np.ndarray
    net_utilities: np.ndarray
    realized_cost: np.ndarray
    conditional_expected_cost: np.ndarray
    expected_consumption: np.ndarray
    inflation: np.ndarray
    delta_b: np.ndarray
    p_o: np.ndarray
    final_estimates: est.BaselineEstimate | None = None
    replication: int = 0

    def __len__(self) -> int:
        return len(self.prices)

    @property
    def days(self) -> list[DayRecord]:
        return [
            DayRecord(
                t=k + 1,
                price=float(self.prices[k]),
                baselines=self.baselines[k],
                consumptions=self.consumptions[k],
                shocks=self.shocks[k],
                dr_payments=self.dr_payments[k],
                realized_cost=float(self.realized_cost[k]),
                conditional_expected_cost=float(self.conditional_expected_cost[k]),
                consumer_net_utilities=self.net_utilities[k],
            )
            for k in range(len(self))
        ]

    # a single trajectory is an ensemble of one; regret() reads these
    @property
    def n_replications(self) -> int:
        return 1

    @property
    def mean_baselines(self) -> np.ndarray:
        return self.baselines

    @property
    def utility_totals(self) -> np.ndarray:
        return self.net_utilities.sum(axis=0)[None, :]

    @property
    def conditional_cost_totals(self) -> np.ndarray:
        return np.array([self.conditional_expected_cost.sum()])

    def to_dict(self) -> dict[str, Any]:
        fe = self.final_estimates
        return {
            "replication": self.replication,
            "days": [
                {
                    "t": r.t,
                    "price": r.price,
                    "baselines": r.baselines.tolist(),
                    "consumptions": r.consumptions.tolist(),
                    "shocks": r.shocks.tolist(),
                    "dr_payments": r.dr_payments.tolist(),
                    "realized_cost": r.realized_cost,
                    "conditional_expected_cost": r.conditional_expected_cost,
                    "consumer_net_utilities": r.consumer_net_utilities.tolist(),
                }
                for r in self.days
            ],
            "p_o": self.p_o.tolist(),
            "final_estimates": None
            if fe is None
            else {"b_hat": np.ravel(fe.b_hat).tolist(), "b1_hat": np.ravel(fe.b1_hat).tolist()},
        }


def _final_estimate(state: est.EstimatorState):
    try:
        return est.ls_estimate(state)
    except est.SingularDesignError:
        return None


def run(config: SimulationConfig, replication: int = 0) -> Trajectory:
    """Simulate one replication of the program in full detail."""
    plan = _plan(config)
    b = _simulate(config, plan, [replication])
    fe = _final_estimate(b.final_state)
    if fe is not None:
        fe = est.BaselineEstimate(np.asarray(fe.b_hat)[0], np.asarray(fe.b1_hat)[0])
    return Trajectory(
        prices=b.prices,
        baselines=b.baselines[0],
        consumptions=b.consumptions[0],
        shocks=b.shocks[0],
        dr_payments=b.payments[0],
        net_utilities=b.utilities[0],
        realized_cost=b.realized_cost[0],
        conditional_expected_cost=b.conditional_cost[0],
        expected_consumption=plan.expected_consumption,
        inflation=plan.inflation,
        delta_b=plan.delta_b,
        p_o=plan.p_o,
        final_estimates=fe,
        replication=replication,
    )


@dataclass
class Ensemble:
    """Replication-averaged statistics of one configuration.

    ``mean_*`` arrays are per day (and per consumer where applicable);
    ``*_totals`` are per replication and keep what paired comparisons and
    Monte-Carlo error bars need.  ``mean_abs_baseline_gap`` is the average
    of ``|b_hat_t - b_tilde + delta_b_t|``.
    """

    config: SimulationConfig
    n_replications: int
    prices: np.ndarray
    inflation: np.ndarray
    expected_consumption: np.ndarray
    delta_b: np.ndarray
    p_o: np.ndarray
    mean_baselines: np.ndarray
    mean_consumptions: np.ndarray
    mean_payments: np.ndarray
    mean_utilities: np.ndarray
    mean_realized_cost: np.ndarray
    mean_conditional_cost: np.ndarray
    mean_abs_baseline_gap: np.ndarray
    utility_totals: np.ndarray
    conditional_cost_totals: np.ndarray
    realized_cost_totals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def per_replication_regret(self) -> np.ndarray:
        c_star = optimal_expected_cost(self.config.market, self.config.consumers)
        T = len(self.prices)
        return self.conditional_cost_totals - T * c_star + self.p_o.sum()


@dataclass
class _ChunkSums:
    baselines: np.ndarray
    consumptions: np.ndarray
    payments: np.ndarray
    utilities: np.ndarray
    realized: np.ndarray
    conditional: np.ndarray
    abs_gap: np.ndarray
    utility_totals: np.ndarray
    conditional_totals: np.ndarray
    realized_totals: np.ndarray


def _chunk(config: SimulationConfig, plan: _Plan, reps: Sequence[int]) -> _ChunkSums:
    b = _simulate(config, plan, reps)
    gap = np.abs(b.baselines - plan.b_tilde[None, None, :] + plan.delta_b[None, :, :])
    return _ChunkSums(
        baselines=b.baselines.sum(axis=0),
        consumptions=b.consumptions.sum(axis=0),
        payments=b.payments.sum(axis=0),
        utilities=b.utilities.sum(axis=0),
        realized=b.realized_cost.sum(axis=0),
        conditional=b.conditional_cost.sum(axis=0),
        abs_gap=gap.sum(axis=0),
        utility_totals=b.utilities.sum(axis=1),
        conditional_totals=b.conditional_cost.sum(axis=1),
        realized_totals=b.realized_cost.sum(axis=1),
    )


def run_ensemble(config: SimulationConfig, threads: int = 1) -> Ensemble:
    """Simulate ``config.n_replications`` replications and reduce them."""
    plan = _plan(config)
    R = config.n_replications
    chunks = [range(s, min(s + config.chunk_size, R)) for s in range(0, R, config.chunk_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda reps: _chunk(config, plan, reps), chunks))
    else:
        parts = [_chunk(config, plan, reps) for reps in chunks]

    def total(name):
        acc = getattr(parts[0], name).copy()
        for part in parts[1:]:
            acc += getattr(part, name)
        return acc

    def stack(name):
        return np.concatenate([getattr(p, name) for p in parts])

    return Ensemble(
        config=config,
        n_replications=R,
        prices=plan.prices,
        inflation=plan.inflation,
        expected_consumption=plan.expected_consumption,
        delta_b=plan.delta_b,
        p_o=plan.p_o,
        mean_baselines=total("baselines") / R,
        mean_consumptions=total("consumptions") / R,
        mean_payments=total("payments") / R,
        mean_utilities=total("utilities") / R,
        mean_realized_cost=total("realized") / R,
        mean_conditional_cost=total("conditional") / R,
        mean_abs_baseline_gap=total("abs_gap") / R,
        utility_totals=stack("utility_totals"),
        conditional_cost_totals=stack("conditional_totals"),
        realized_cost_totals=stack("realized_totals"),
    )


def regret(source: Ensemble | Trajectory, config: SimulationConfig, fit: bool = True) -> RegretReport:
    """Expected regret curve with its decomposition and the IR ledger.

    Day costs are conditional expectations given the posted price and the
    assigned baselines, with consumption replaced by its closed-form mean;
    the expectation over baselines is the replication average.  The
    upfront payment is charged on day 1.
    """
    mk = config.market
    consumers = config.consumers
    p = np.asarray(source.prices, dtype=float)
    T = len(p)
    d = np.array([c.d for c in consumers])
    b_tilde = np.array([correct_baseline(c, mk.p0) for c in consumers])
    c_star = optimal_expected_cost(mk, consumers)
    q_exp = source.expected_consumption
    b_mean = source.mean_baselines

    cond = (mk.c * q_exp + p[:, None] * (b_mean - q_exp)).sum(axis=1)
    p_o = np.asarray(source.p_o, dtype=float)
    curve = np.cumsum(cond - c_star) + p_o.sum()

    decomposition = {
        "inflation": (mk.c - p) * source.inflation.sum(axis=1),
        "exploration": (p - mk.p_star) ** 2 * np.sum(1.0 / d),
        "baseline_error": p * (b_mean - b_tilde[None, :]).sum(axis=1),
        "upfront": float(p_o.sum()),
    }
    u_star = np.array([no_dr_utility(c, mk.p0) for c in consumers])
    ir = source.utility_totals.mean(axis=0) + p_o - T * u_star

    report = RegretReport(
        cumulative_regret=curve,
        decomposition=decomposition,
        ir_ledger=ir,
        upfront_payments=p_o,
        optimal_cost=c_star,
        so_knows_curvature=bool(np.any(p_o != 0)),
    )
    if report.so_knows_curvature:
        report.notes.append("upfront payments computed with SO access to consumer curvature d")
    if fit:
        from .analysis import InsufficientDataError, fit_growth

        try:
            g = fit_growth(np.arange(1, T + 1), curve)
            report.fitted_log2_coeff = g.c2
            report.fitted_power_exponent = g.alpha
        except InsufficientDataError:
            pass
    return report


@dataclass
class IRResult:
    """Per-consumer individual-rationality margins with Monte-Carlo error bars."""

    margins: np.ndarray
    std_errors: np.ndarray
    upfront: np.ndarray

    @property
    def passes(self) -> np.ndarray:
        return self.margins >= -3.0 * self.std_errors

    @property
    def positive(self) -> np.ndarray:
        return self.margins > 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "margins": self.margins.tolist(),
            "std_errors": self.std_errors.tolist(),
            "upfront": self.upfront.tolist(),
            "passes": self.passes.tolist(),
            "positive": self.positive.tolist(),
        }


def ir_check(source: Ensemble | Trajectory, config: SimulationConfig) -> IRResult:
    """Estimate ``E[sum_t U_t] + P_o - T U*`` per consumer.

    A consumer passes when the margin is at least ``-3`` Monte-Carlo
    standard errors.
    """
    mk = config.market
    totals = np.asarray(source.utility_totals)
    T = len(source.prices)
    u_star = np.array([no_dr_utility(c, mk.p0) for c in config.consumers])
    R = totals.shape[0]
    se = totals.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(totals.shape[1])
    margins = totals.mean(axis=0) + source.p_o - T * u_star
    return IRResult(margins=margins, std_errors=se, upfront=np.asarray(source.p_o))


DAILY_COLUMNS = (
    "t",
    "price",
    "baseline_total",
    "consumption_total",
    "expected_consumption_total",
    "dr_payment_total",
    "realized_cost",
    "conditional_expected_cost",
    "optimal_expected_cost",
    "cumulative_regret",
    "cumulative_regret_ex_upfront",
)


def daily_rows(source: Ensemble | Trajectory, report: RegretReport) -> tuple[list[str], list[list]]:
    """Flat per-day table (header, rows) of a trajectory or ensemble mean."""
    if isinstance(source, Trajectory):
        base, cons, pay = source.baselines, source.consumptions, source.dr_payments
        realized, cond = source.realized_cost, source.conditional_expected_cost
    else:
        base, cons, pay = source.mean_baselines, source.mean_consumptions, source.mean_payments
        realized, cond = source.mean_realized_cost, source.mean_conditional_cost
    N = base.shape[1]
    upfront = float(report.decomposition["upfront"])
    header = list(DAILY_COLUMNS)
    header += [f"baseline_{i + 1}" for i in range(N)] + [f"consumption_{i + 1}" for i in range(N)]
    rows = []
    for k in range(len(source.prices)):
        rows.append(
            [
                k + 1,
                float(source.prices[k]),
                float(base[k].sum()),
                float(cons[k].sum()),
                float(source.expected_consumption[k].sum()),
                float(pay[k].sum()),
                float(realized[k]),
                float(cond[k]),
                report.optimal_cost,
                float(report.cumulative_regret[k]),
                float(report.cumulative_regret[k] - upfront),
                *map(float, base[k]),
                *map(float, cons[k]),
            ]
        )
    return header, rows


def daily_csv(source: Ensemble | Trajectory, report: RegretReport) -> str:
    header, rows = daily_rows(source, report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()
