"""Regret-growth fits and paired policy comparisons.

Two growth models are fitted to a regret curve ``R_t``::

    R_t = c2 * (log t)^2 + c0          (polylog)
    log R_t = alpha * log t + beta     (power law)

and their r^2 values compared.  :func:`compare_policies` runs several SO
policies on the same seeds over a grid of horizons.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from .engine import SimulationConfig, regret, run_ensemble
from .model import InvalidConfigError


class InsufficientDataError(ValueError):
    """Too few usable points for a growth fit."""


def _as_t(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return X[:, 0] if X.ndim == 2 else X


class LogSquaredRegressor(RegressorMixin, BaseEstimator):
    """Fits ``R = c2 (log t)^2 + c0``; ``X`` is the day index ``t``."""

    def fit(self, X, y):
        t = _as_t(X)
        lin = LinearRegression().fit(np.log(t)[:, None] ** 2, np.asarray(y, dtype=float))
        self.c2_ = float(lin.coef_[0])
        self.c0_ = float(lin.intercept_)
        return self

    def predict(self, X):
        check_is_fitted(self, "c2_")
        return self.c2_ * np.log(_as_t(X)) ** 2 + self.c0_


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Fits ``log R = alpha log t + beta``; requires ``R > 0``.

    ``score`` is the r^2 of the log-log regression.
    """

    def fit(self, X, y):
        t = _as_t(X)
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise ValueError("power-law fit needs positive targets")
        lin = LinearRegression().fit(np.log(t)[:, None], np.log(y))
        self.alpha_ = float(lin.coef_[0])
        self.beta_ = float(lin.intercept_)
        return self

    def predict(self, X):
        check_is_fitted(self, "alpha_")
        return np.exp(self.beta_) * _as_t(X) ** self.alpha_

    def score(self, X, y, sample_weight=None):
        check_is_fitted(self, "alpha_")
        pred = self.alpha_ * np.log(_as_t(X)) + self.beta_
        return r2_score(np.log(np.asarray(y, dtype=float)), pred, sample_weight=sample_weight)


@dataclass
class GrowthFit:
    """Both growth models fitted to one curve.

    ``r2_log2`` is measured on ``R`` and ``r2_power`` on ``log R``, each in
    the space its model was fitted in.
    """

    c2: float
    c0: float
    alpha: float
    beta: float
    r2_log2: float
    r2_power: float
    n_points: int
    t_min: float

    @property
    def log2_preferred(self) -> bool:
        return self.r2_log2 >= self.r2_power

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def fit_growth(t, R, t_min: float = 50, min_points: int = 5) -> GrowthFit:
    """Fit both growth models to ``R_t`` over ``t >= t_min``.

    Points with ``R_t <= 0`` are dropped from both fits (the power law
    cannot use them and the two fits are compared on the same points).

    Raises:
        InsufficientDataError: fewer than ``min_points`` usable points.
    """
    t = np.asarray(t, dtype=float)
    R = np.asarray(R, dtype=float)
    if t.shape != R.shape or t.ndim != 1:
        raise ValueError("t and R must be 1-D arrays of equal length")
    keep = (t >= t_min) & (t > 0) & (R > 0) & np.isfinite(R)
    if keep.sum() < min_points:
        raise InsufficientDataError(
            f"need at least {min_points} points with t >= {t_min} and R > 0, got {int(keep.sum())}"
        )
    t, R = t[keep], R[keep]
    ls = LogSquaredRegressor().fit(t, R)
    pw = PowerLawRegressor().fit(t, R)
    return GrowthFit(
        c2=ls.c2_,
        c0=ls.c0_,
        alpha=pw.alpha_,
        beta=pw.beta_,
        r2_log2=float(ls.score(t, R)),
        r2_power=float(pw.score(t, R)),
        n_points=int(keep.sum()),
        t_min=float(t_min),
    )


def fitted_curve(t, R, fit: GrowthFit) -> tuple[list[str], list[list[float]]]:
    """Plot-ready table of a curve and both fitted models."""
    t = np.asarray(t, dtype=float)
    header = ["t", "R", "fit_log2", "fit_power"]
    rows = [
        [ti, float(ri), fit.c2 * math.log(ti) ** 2 + fit.c0, math.exp(fit.beta) * ti**fit.alpha]
        for ti, ri in zip(t, R)
    ]
    return header, rows


@dataclass
class PolicyResult:
    name: str
    T: list[int]
    regret: list[float]
    regret_se: list[float]
    per_seed: list[np.ndarray]
    fit: GrowthFit | None
    fit_error: str | None = None


@dataclass
class Comparison:
    """Output of :func:`compare_policies`.

    ``crossover_T`` is the smallest grid horizon from which the first
    policy's regret stays below the second's for the rest of the grid
    (``None`` if it never does).  Paired statistics refer to the largest
    horizon and the first two policies.
    """

    t_grid: list[int]
    results: list[PolicyResult]
    crossover_T: int | None
    paired_win_fraction: float | None
    paired_sd: float | None
    unpaired_sd: float | None
    seed: int
    n_replications: int

    def table(self) -> tuple[list[str], list[list]]:
        header = ["policy", "T", "regret", "regret_se", "fit_log2", "fit_power"]
        rows = []
        for r in self.results:
            for T, R, se in zip(r.T, r.regret, r.regret_se):
                if r.fit is None:
                    f2 = fp = None
                else:
                    f2 = r.fit.c2 * math.log(T) ** 2 + r.fit.c0
                    fp = math.exp(r.fit.beta) * T**r.fit.alpha
                rows.append([r.name, T, R, se, f2, fp])
        return header, rows

    def to_csv(self) -> str:
        header, rows = self.table()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()

    def summary(self) -> dict[str, Any]:
        policies = {}
        for r in self.results:
            entry: dict[str, Any] = {"regret": dict(zip(map(str, r.T), r.regret))}
            if r.fit is None:
                entry.update(alpha=None, c2=None, r2_log2=None, r2_power=None,
                             fit_unavailable=r.fit_error)
            else:
                entry.update(alpha=r.fit.alpha, c2=r.fit.c2, r2_log2=r.fit.r2_log2,
                             r2_power=r.fit.r2_power)
            policies.setdefault(r.name, entry)
        return {
            "t_grid": self.t_grid,
            "policy_order": [r.name for r in self.results],
            "policies": policies,
            "crossover_T": self.crossover_T,
            "paired_win_fraction": self.paired_win_fraction,
            "paired_sd": self.paired_sd,
            "unpaired_sd": self.unpaired_sd,
            "seed": self.seed,
            "n_replications": self.n_replications,
        }


def compare_policies(
    config: SimulationConfig,
    policies: Sequence[str],
    t_grid: Sequence[int],
    threads: int = 1,
    fit_min_points: int = 3,
) -> Comparison:
    """Run every policy at every horizon on common random numbers.

    Exponents are fitted across the grid horizons (``t_min = 0``); with
    fewer than ``fit_min_points`` horizons they are reported unavailable.
    """
    t_grid = [int(T) for T in t_grid]
    if not t_grid:
        raise InvalidConfigError("t_grid", "must contain at least one horizon")
    if any(T < 1 for T in t_grid):
        raise InvalidConfigError("t_grid", f"horizons must be >= 1, got {t_grid}")
    if not policies:
        raise InvalidConfigError("policies", "need at least one policy")
    t_grid = sorted(set(t_grid))
    cache: dict[str, PolicyResult] = {}
    results = []
    for name in policies:
        if name not in cache:
            cache[name] = _run_policy(config, name, t_grid, threads, fit_min_points)
        results.append(cache[name])

    crossover = win = psd = usd = None
    if len(results) >= 2:
        a, b = results[0], results[1]
        crossover = next(
            (T for k, T in enumerate(t_grid)
             if all(x < y for x, y in zip(a.regret[k:], b.regret[k:]))),
            None,
        )
        ra, rb = a.per_seed[-1], b.per_seed[-1]
        win = float(np.mean(ra < rb))
        if len(ra) > 1:
            psd = float(np.std(ra - rb, ddof=1))
            usd = float(math.sqrt(np.var(ra, ddof=1) + np.var(rb, ddof=1)))
    return Comparison(t_grid, results, crossover, win, psd, usd, config.seed, config.n_replications)


def _run_policy(config, name, t_grid, threads, fit_min_points) -> PolicyResult:
    Rs, ses, seeds = [], [], []
    for T in t_grid:
        cfg = replace(config, so_policy=name, market=replace(config.market, T=T))
        ens = run_ensemble(cfg, threads)
        rep = regret(ens, cfg, fit=False)
        per = ens.per_replication_regret
        Rs.append(rep.total)
        ses.append(float(np.std(per, ddof=1) / math.sqrt(len(per))) if len(per) > 1 else 0.0)
        seeds.append(per)
    fit, err = None, None
    try:
        fit = fit_growth(t_grid, Rs, t_min=0, min_points=fit_min_points)
    except InsufficientDataError as exc:
        err = str(exc)
    return PolicyResult(name, list(t_grid), Rs, ses, seeds, fit, err)
