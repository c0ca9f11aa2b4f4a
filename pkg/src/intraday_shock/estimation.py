"""Tick ingestion, cleaning, realized-covariation diagnostics and the
three-stage moment calibration.

The calibration pipeline is:

1. outlier cleaning per delivery period (drop returns beyond 5x the pooled
   return dispersion, re-chaining returns across dropped ticks),
2. jump-size law from the empirical distribution of absolute returns on the
   0.01 EUR/MWh tick grid, pooled over products and sessions,
3. ``kappa`` from a least-squares contrast on jump arrival times,
   re-parameterized by the observed average jump rate so that only the decay
   shape matters,
4. ``mu + mu_c`` from a closed-form regression of realized variances on the
   model variance profile,
5. ``mu_c / (mu + mu_c)`` from a closed-form regression of pairwise realized
   correlations on the exponential correlation profile.

All realized quantities sample last-tick prices on a step grid anchored at
the session open; before a product's first tick its first traded price is
carried backward, which contributes zero increments.
"""
from __future__ import annotations

import datetime as dt
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from .model import (InitialPrices, JumpLaw, MaturityGrid, ModelParams,
                    correlation_proxy, exp_window_integral, hourly_grid,
                    volatility_proxy)
from .rng import path_rng
from .simulation import EventPath, simulate_thinning

__all__ = [
    "SessionTicks",
    "TickDataset",
    "CleaningReport",
    "EstimationWindow",
    "FittedParams",
    "clean",
    "sampled_prices",
    "realized_covariation",
    "signature_plot",
    "epps_correlation",
    "pairwise_correlations",
    "fit_jump_law",
    "estimate_kappa",
    "estimate_mu_sum",
    "estimate_mu_ratio",
    "estimate",
    "rolling_estimate",
    "rolling_to_frame",
    "CommonShockEstimator",
    "event_path_to_session",
    "make_synthetic_dataset",
    "read_ticks_csv",
    "write_ticks_csv",
]

TICK_SIZE = 0.01


@dataclass(frozen=True)
class SessionTicks:
    """Cleaned transactions of one trading session.

    ``times[m]`` / ``prices[m]`` hold the (strictly increasing) transaction
    times in session hours and traded prices of product m+1.
    """

    delivery_date: dt.date
    times: tuple[np.ndarray, ...]
    prices: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.times) != len(self.prices):
            raise ValueError("times and prices must have one entry per product")
        for t, p in zip(self.times, self.prices):
            if len(t) != len(p):
                raise ValueError("times and prices must align per product")
            if len(t) and (np.any(np.diff(t) <= 0) or t[0] < 0):
                raise ValueError("tick times must be non-negative and strictly "
                                 "increasing per product")

    @property
    def n_products(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class TickDataset:
    """A collection of sessions plus market metadata."""

    sessions: tuple[SessionTicks, ...]
    tick_size: float = TICK_SIZE
    country: str = ""

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        if self.sessions:
            n = self.sessions[0].n_products
            if any(s.n_products != n for s in self.sessions):
                raise ValueError("all sessions must cover the same product count")

    @property
    def n_products(self) -> int:
        return self.sessions[0].n_products if self.sessions else 0

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    def subset(self, start: dt.date, end: dt.date) -> "TickDataset":
        """Sessions with start <= delivery_date <= end."""
        keep = tuple(s for s in self.sessions if start <= s.delivery_date <= end)
        return TickDataset(keep, self.tick_size, self.country)


@dataclass(frozen=True)
class CleaningReport:
    """Per-product outlier-removal accounting."""

    removed_count: tuple[int, ...]
    total_count: tuple[int, ...]
    threshold: tuple[float, ...]

    @property
    def removed_fraction(self) -> tuple[float, ...]:
        return tuple(r / t if t else 0.0
                     for r, t in zip(self.removed_count, self.total_count))


@dataclass(frozen=True)
class EstimationWindow:
    """Per-product estimation windows plus the sampling steps.

    t_begin[m] / t_end[m] bound the part of the session used for product
    m+1; ``delta`` is the realized-covariation sampling step and
    ``min_overlap`` the smallest pair-window length admitted into the
    correlation regression.
    """

    t_begin: tuple[float, ...]
    t_end: tuple[float, ...]
    delta: float = 0.5
    min_overlap: float = 1.0

    def __post_init__(self):
        b = tuple(float(x) for x in self.t_begin)
        e = tuple(float(x) for x in self.t_end)
        object.__setattr__(self, "t_begin", b)
        object.__setattr__(self, "t_end", e)
        if len(b) != len(e):
            raise ValueError("t_begin and t_end must align")
        if any(x < 0 or x >= y for x, y in zip(b, e)):
            raise ValueError("need 0 <= t_begin < t_end per product")
        if self.delta <= 0 or self.min_overlap < 0:
            raise ValueError("delta must be positive and min_overlap non-negative")

    @classmethod
    def canonical(cls, grid: MaturityGrid, begin: float = 0.0,
                  end_lead: float = 1.0, delta: float = 0.5,
                  min_overlap: float = 1.0) -> "EstimationWindow":
        """Windows [begin, T_m - end_lead] for every product."""
        ends = tuple(t - end_lead for t in grid.maturities)
        begins = (float(begin),) * grid.n_products
        return cls(begins, ends, delta, min_overlap)

    def pair_window(self, k: int, l: int) -> tuple[float, float]:
        """Intersection of the windows of products k and l (1-based)."""
        return (max(self.t_begin[k - 1], self.t_begin[l - 1]),
                min(self.t_end[k - 1], self.t_end[l - 1]))


@dataclass(frozen=True)
class FittedParams:
    """Calibrated model plus the intermediate statistics behind the fit."""

    params: ModelParams
    mu_sum: float
    mu_ratio: float
    jump_rates: tuple[float, ...]       # average jumps per hour per product
    rho_pairs: np.ndarray               # pairwise realized correlations
    correlation_residuals: np.ndarray   # rho_pairs - fitted exponential decay
    variance_residuals: np.ndarray      # realized window variance - fitted
    n_sessions: int
    cleaning: CleaningReport

    def to_dict(self) -> dict:
        doc = self.params.to_dict()
        doc["diagnostics"] = {
            "mu_sum": self.mu_sum,
            "mu_ratio": self.mu_ratio,
            "n_sessions": self.n_sessions,
            "jump_rates_per_hour": list(self.jump_rates),
            "rho_pairs": [[None if not math.isfinite(v) else v for v in row]
                          for row in self.rho_pairs.tolist()],
            "removed_returns": list(self.cleaning.removed_count),
            "total_returns": list(self.cleaning.total_count),
        }
        return doc


# ---------------------------------------------------------------------------
# Cleaning
# ---------------------------------------------------------------------------

def _chain_returns(times: np.ndarray, prices: np.ndarray,
                   threshold: float) -> tuple[np.ndarray, int]:
    """Keep mask after dropping outlier returns, re-chaining to the last
    surviving tick; the first tick is always kept."""
    keep = np.ones(times.size, dtype=bool)
    last = prices[0]
    removed = 0
    for i in range(1, times.size):
        if abs(prices[i] - last) > threshold:
            keep[i] = False
            removed += 1
        else:
            last = prices[i]
    return keep, removed


def clean(raw: TickDataset) -> tuple[TickDataset, CleaningReport]:
    """Drop transactions whose return magnitude exceeds 5x the pooled
    return dispersion of that delivery period.

    The dispersion is the root mean square of all returns of the product
    pooled across sessions (returns are centered by construction).  After a
    drop, the next return is chained to the previous surviving tick.
    """
    if not raw.sessions:
        raise ValueError("cannot clean an empty dataset")
    M = raw.n_products
    thresholds = np.zeros(M)
    totals = np.zeros(M, dtype=int)
    for m in range(M):
        sq_sum = 0.0
        count = 0
        for s in raw.sessions:
            r = np.diff(s.prices[m])
            sq_sum += float((r * r).sum())
            count += r.size
        totals[m] = count
        thresholds[m] = 5.0 * math.sqrt(sq_sum / count) if count else 0.0

    removed = np.zeros(M, dtype=int)
    new_sessions = []
    for s in raw.sessions:
        times_out, prices_out = [], []
        for m in range(M):
            t, p = s.times[m], s.prices[m]
            if t.size >= 2 and thresholds[m] > 0.0:
                r = np.abs(np.diff(p))
                if r.max() > thresholds[m]:
                    keep, n_rm = _chain_returns(t, p, thresholds[m])
                    removed[m] += n_rm
                    t, p = t[keep], p[keep]
            times_out.append(t)
            prices_out.append(p)
        new_sessions.append(SessionTicks(s.delivery_date, tuple(times_out),
                                         tuple(prices_out)))
    report = CleaningReport(tuple(int(x) for x in removed),
                            tuple(int(x) for x in totals),
                            tuple(float(x) for x in thresholds))
    return TickDataset(tuple(new_sessions), raw.tick_size, raw.country), report


# ---------------------------------------------------------------------------
# Realized covariation measures
# ---------------------------------------------------------------------------

def _floor_steps(t: float, delta: float) -> int:
    return int(math.floor(t / delta + 1e-9))


def sampled_prices(session: SessionTicks, m: int, delta: float,
                   n_steps: int) -> np.ndarray | None:
    """Last-tick prices of product m (1-based) at 0, delta, ..., n_steps*delta.

    Before the first tick the first traded price is carried backward.
    Returns None when the product has no ticks at all.
    """
    t, p = session.times[m - 1], session.prices[m - 1]
    if t.size == 0:
        return None
    grid = np.arange(n_steps + 1) * delta
    idx = np.searchsorted(t, grid, side="right")
    padded = np.concatenate([[p[0]], p])
    return padded[idx]


def realized_covariation(session: SessionTicks, k: int, l: int, delta: float,
                         t_start: float, t_end: float) -> float:
    """Sum of cross increment products of products k and l over the sampling
    cells inside (floor(t_start/delta), floor(t_end/delta)] * delta.

    The sampling grid is anchored at the session open.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not 0 <= t_start <= t_end:
        raise ValueError("need 0 <= t_start <= t_end")
    i0, i1 = _floor_steps(t_start, delta), _floor_steps(t_end, delta)
    if i1 <= i0:
        return 0.0
    pk = sampled_prices(session, k, delta, i1)
    pl = pk if l == k else sampled_prices(session, l, delta, i1)
    if pk is None or pl is None:
        return 0.0
    return float((np.diff(pk)[i0:i1] * np.diff(pl)[i0:i1]).sum())


def signature_plot(dataset: TickDataset, m: int, deltas: Sequence[float],
                   window_end: float) -> list[tuple[float, float]]:
    """Session-averaged realized variance of product m per sampling step,
    normalised by the window length.  Flat in delta under the pure jump
    model; rising toward coarse steps under bounce-back microstructure noise.
    """
    out = []
    for delta in deltas:
        values = [realized_covariation(s, m, m, delta, 0.0, window_end)
                  for s in dataset.sessions]
        out.append((float(delta), float(np.mean(values)) / window_end))
    return out


def epps_correlation(dataset: TickDataset, l: int, m: int, delta: float,
                     windows: EstimationWindow) -> float:
    """Pooled realized correlation of products l and m at sampling step delta.

    Numerator and denominator sums run over sessions on the intersection of
    the two products' windows.  Returns NaN when a denominator vanishes
    (missing pair).
    """
    if l == m:
        return 1.0
    b, e = windows.pair_window(l, m)
    if e - b < windows.min_overlap:
        raise ValueError("pair window shorter than the minimal overlap")
    num = den_l = den_m = 0.0
    for s in dataset.sessions:
        num += realized_covariation(s, l, m, delta, b, e)
        den_l += realized_covariation(s, l, l, delta, b, e)
        den_m += realized_covariation(s, m, m, delta, b, e)
    if den_l <= 0.0 or den_m <= 0.0:
        return math.nan
    return num / math.sqrt(den_l * den_m)


def _window_indices(windows: EstimationWindow) -> tuple[np.ndarray, np.ndarray]:
    delta = windows.delta
    j0 = np.asarray([_floor_steps(b, delta) for b in windows.t_begin])
    j1 = np.asarray([_floor_steps(e, delta) for e in windows.t_end])
    return j0, j1


def _pooled_cumulative_cross(dataset: TickDataset, windows: EstimationWindow
                             ) -> np.ndarray:
    """cum[l, m, j]: sum over sessions of the first j cross increment
    products of products l+1 and m+1 on the anchored delta grid.  Any
    realized covariation window is a difference of two entries."""
    M = len(windows.t_begin)
    delta = windows.delta
    _, j1 = _window_indices(windows)
    n_max = int(j1.max())
    total = np.zeros((M, M, n_max + 1))
    for s in dataset.sessions:
        rows = []
        for m in range(M):
            p = sampled_prices(s, m + 1, delta, n_max)
            rows.append(np.zeros(n_max) if p is None else np.diff(p))
        X = np.asarray(rows)
        total[:, :, 1:] += np.cumsum(np.einsum("li,mi->lmi", X, X), axis=2)
    return total


def _own_window_sums(cum: np.ndarray, windows: EstimationWindow) -> np.ndarray:
    j0, j1 = _window_indices(windows)
    M = cum.shape[0]
    return np.asarray([cum[m, m, j1[m]] - cum[m, m, j0[m]] for m in range(M)])


def pairwise_correlations(dataset: TickDataset, windows: EstimationWindow
                          ) -> np.ndarray:
    """Matrix of pooled realized correlations; NaN where the pair window is
    shorter than min_overlap or a denominator vanishes; 1 on the diagonal."""
    M = len(windows.t_begin)
    cum = _pooled_cumulative_cross(dataset, windows)
    j0, j1 = _window_indices(windows)
    rho = np.full((M, M), math.nan)
    for l in range(M):
        rho[l, l] = 1.0
        for m in range(l + 1, M):
            b, e = windows.pair_window(l + 1, m + 1)
            if e - b < windows.min_overlap:
                continue
            lo, hi = max(j0[l], j0[m]), min(j1[l], j1[m])
            if hi <= lo:
                continue
            num = cum[l, m, hi] - cum[l, m, lo]
            den_l = cum[l, l, hi] - cum[l, l, lo]
            den_m = cum[m, m, hi] - cum[m, m, lo]
            rho_lm = math.nan
            if den_l > 0 and den_m > 0:
                rho_lm = num / math.sqrt(den_l * den_m)
            rho[l, m] = rho[m, l] = rho_lm
    return rho


# ---------------------------------------------------------------------------
# Jump-based statistics
# ---------------------------------------------------------------------------

def _jump_times(session: SessionTicks, m: int, tick_size: float) -> np.ndarray:
    """Times of price-change events: every tick whose price differs from the
    previous tick counts as one jump, whatever the move size."""
    t, p = session.times[m - 1], session.prices[m - 1]
    if t.size < 2:
        return np.empty(0)
    moved = np.abs(np.diff(p)) > 0.5 * tick_size
    return t[1:][moved]


def fit_jump_law(dataset: TickDataset) -> JumpLaw:
    """Empirical law of absolute returns on the tick grid, pooled over
    products, sessions and both signs."""
    tick = dataset.tick_size
    counts: dict[int, int] = {}
    for s in dataset.sessions:
        for m in range(s.n_products):
            r = np.abs(np.diff(s.prices[m]))
            r = r[r > 0.5 * tick]
            ticks, n = np.unique(np.round(r / tick).astype(int),
                                 return_counts=True)
            for k, c in zip(ticks, n):
                counts[int(k)] = counts.get(int(k), 0) + int(c)
    if not counts:
        raise ValueError("no nonzero returns: cannot fit a jump law")
    total = sum(counts.values())
    sizes = sorted(counts)
    return JumpLaw(tuple(k * tick for k in sizes),
                   tuple(counts[k] / total for k in sizes))


@dataclass
class _JumpPool:
    offsets: list[np.ndarray]   # per product: pooled (T_m - t) over sessions
    rates: np.ndarray           # per product: jumps per hour (Lambda hat)
    widths: np.ndarray          # window lengths


def _pool_jumps(dataset: TickDataset, windows: EstimationWindow,
                grid: MaturityGrid) -> _JumpPool:
    M = grid.n_products
    D = dataset.n_sessions
    offsets: list[np.ndarray] = []
    counts = np.zeros(M)
    widths = np.asarray([e - b for b, e in zip(windows.t_begin, windows.t_end)])
    for m in range(M):
        T_m = grid.maturity(m + 1)
        b, e = windows.t_begin[m], windows.t_end[m]
        per = []
        for s in dataset.sessions:
            t = _jump_times(s, m + 1, dataset.tick_size)
            t = t[(t >= b) & (t <= e)]
            per.append(T_m - t)
        pooled = np.concatenate(per) if per else np.empty(0)
        offsets.append(pooled)
        counts[m] = pooled.size
    rates = counts / (D * widths)
    return _JumpPool(offsets, rates, widths)


def _kappa_contrast(kappa: float, pool: _JumpPool, windows: EstimationWindow,
                    grid: MaturityGrid, n_sessions: int) -> float:
    """Least-squares intensity contrast summed over products, parameterized
    so that the average jump count is matched exactly at every kappa."""
    total = 0.0
    for m in range(grid.n_products):
        lam = pool.rates[m]
        if lam == 0.0:
            continue
        T_m = grid.maturity(m + 1)
        b, e = windows.t_begin[m], windows.t_end[m]
        w = pool.widths[m]
        i1 = exp_window_integral(kappa, T_m, b, e)
        i2 = exp_window_integral(2.0 * kappa, T_m, b, e)
        weight = np.exp(-kappa * pool.offsets[m]).sum() / n_sessions
        total += (-2.0 * w * lam / i1 * weight
                  + (w * lam / i1) ** 2 * i2)
    return total


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def estimate_kappa(dataset: TickDataset, windows: EstimationWindow,
                   grid: MaturityGrid, kappa_max: float = 5.0,
                   coarse_step: float = 0.05, tol: float = 1e-4) -> float:
    """Decay rate from jump arrival times: coarse scan of the contrast on
    [0, kappa_max] followed by golden-section refinement.

    Consumes only jump times, so it is invariant to rescaling all prices.
    """
    pool = _pool_jumps(dataset, windows, grid)
    if all(off.size == 0 for off in pool.offsets):
        raise ValueError("cannot identify kappa: no jumps in any window")
    D = dataset.n_sessions

    def objective(kappa: float) -> float:
        return _kappa_contrast(kappa, pool, windows, grid, D)

    ks = np.arange(0.0, kappa_max + 0.5 * coarse_step, coarse_step)
    values = [objective(float(k)) for k in ks]
    best = int(np.argmin(values))
    lo = float(ks[max(best - 1, 0)])
    hi = float(ks[min(best + 1, len(ks) - 1)])
    if hi <= lo:
        return float(ks[best])
    return _golden_section(objective, lo, hi, tol)


def estimate_mu_sum(dataset: TickDataset, windows: EstimationWindow,
                    kappa_hat: float, jump_law: JumpLaw,
                    grid: MaturityGrid) -> float:
    """Total intensity scale mu + mu_c: closed-form least squares of
    session-averaged realized window variances on the model variance
    profile at the fitted kappa.  Floors negative values at zero."""
    M = grid.n_products
    D = dataset.n_sessions
    delta = windows.delta
    own_sums = _own_window_sums(_pooled_cumulative_cross(dataset, windows),
                                windows)
    j0, j1 = _window_indices(windows)
    num = 0.0
    den = 0.0
    for m in range(M):
        integral = exp_window_integral(kappa_hat, grid.maturity(m + 1),
                                       j0[m] * delta, j1[m] * delta)
        num += (own_sums[m] / D) * integral
        den += integral * integral
    den *= 2.0 * jump_law.m2
    if den <= 0.0:
        return 0.0
    value = num / den
    if value < 0.0:
        warnings.warn("negative intensity regression flattened to 0")
        return 0.0
    return value


def estimate_mu_ratio(dataset: TickDataset, windows: EstimationWindow,
                      kappa_hat: float, grid: MaturityGrid,
                      rho_pairs: np.ndarray | None = None) -> float:
    """Common-shock share mu_c / (mu + mu_c): closed-form ratio of the
    correlation regression, clipped into [0, 1].

    Negative empirical correlations enter the sums as-is; only the final
    ratio is clipped.
    """
    if rho_pairs is None:
        rho_pairs = pairwise_correlations(dataset, windows)
    M = grid.n_products
    num = den = 0.0
    for l in range(M):
        for m in range(l + 1, M):
            rho = rho_pairs[l, m]
            if not math.isfinite(rho):
                continue
            gap = abs(grid.maturity(l + 1) - grid.maturity(m + 1))
            decay = math.exp(-0.5 * kappa_hat * gap)
            num += rho * decay
            den += decay * decay
    if den <= 0.0:
        return 0.0
    ratio = num / den
    if ratio < 0.0:
        warnings.warn("negative correlation regression clipped to 0")
        return 0.0
    return min(ratio, 1.0)


def estimate(dataset: TickDataset, grid: MaturityGrid | None = None,
             windows: EstimationWindow | None = None,
             kappa_max: float = 5.0) -> FittedParams:
    """Full pipeline: clean, fit the jump law, then kappa, mu + mu_c and the
    common share; returns the calibrated model with diagnostics."""
    if grid is None:
        grid = hourly_grid(dataset.n_products)
    if windows is None:
        windows = EstimationWindow.canonical(grid)
    cleaned, report = clean(dataset)
    law = fit_jump_law(cleaned)
    kappa_hat = estimate_kappa(cleaned, windows, grid, kappa_max=kappa_max)
    mu_sum = estimate_mu_sum(cleaned, windows, kappa_hat, law, grid)
    rho_pairs = pairwise_correlations(cleaned, windows)
    mu_ratio = estimate_mu_ratio(cleaned, windows, kappa_hat, grid, rho_pairs)
    mu_c = mu_sum * mu_ratio
    mu = mu_sum - mu_c
    params = ModelParams(kappa=kappa_hat, mu=mu, mu_c=mu_c, grid=grid,
                         jump_law=law)

    pool = _pool_jumps(cleaned, windows, grid)
    mats = np.asarray(grid.maturities)
    gaps = np.abs(mats[:, None] - mats[None, :])
    corr_fit = mu_ratio * np.exp(-0.5 * kappa_hat * gaps)
    corr_resid = rho_pairs - corr_fit
    np.fill_diagonal(corr_resid, 0.0)

    D = cleaned.n_sessions
    delta = windows.delta
    own_sums = _own_window_sums(_pooled_cumulative_cross(cleaned, windows),
                                windows)
    j0, j1 = _window_indices(windows)
    var_resid = np.asarray([
        own_sums[m] / D - 2.0 * law.m2 * mu_sum * exp_window_integral(
            kappa_hat, grid.maturity(m + 1), j0[m] * delta, j1[m] * delta)
        for m in range(grid.n_products)
    ])
    return FittedParams(params=params, mu_sum=mu_sum, mu_ratio=mu_ratio,
                        jump_rates=tuple(float(x) for x in pool.rates),
                        rho_pairs=rho_pairs,
                        correlation_residuals=corr_resid,
                        variance_residuals=var_resid,
                        n_sessions=D, cleaning=report)


def rolling_estimate(dataset: TickDataset, grid: MaturityGrid | None = None,
                     windows: EstimationWindow | None = None,
                     lookback_days: int = 28,
                     dates: Sequence[dt.date] | None = None
                     ) -> list[tuple[dt.date, FittedParams]]:
    """Weekly re-estimation: one fit per Monday whose trailing window of
    ``lookback_days`` calendar days (ending on that Monday, inclusive) is
    fully covered by the dataset.  Each window is re-cleaned from scratch.
    """
    if not dataset.sessions:
        return []
    if dates is None:
        first = min(s.delivery_date for s in dataset.sessions)
        last = max(s.delivery_date for s in dataset.sessions)
        day = first + dt.timedelta(days=(7 - first.weekday()) % 7)  # first Monday
        dates = []
        while day <= last:
            if day - dt.timedelta(days=lookback_days - 1) >= first:
                dates.append(day)
            day += dt.timedelta(days=7)
    out = []
    for day in dates:
        window_data = dataset.subset(day - dt.timedelta(days=lookback_days - 1),
                                     day)
        if not window_data.sessions:
            continue
        out.append((day, estimate(window_data, grid, windows)))
    return out


def rolling_to_frame(rows: list[tuple[dt.date, FittedParams]]) -> pd.DataFrame:
    """Rolling results as a frame (week_start, kappa, mu, mu_c, sigma_proxy,
    rho_proxy)."""
    records = []
    for day, fit in rows:
        p = fit.params
        sigma = volatility_proxy(p) if p.kappa > 0 else math.nan
        records.append({
            "week_start": day.isoformat(),
            "kappa": p.kappa,
            "mu": p.mu,
            "mu_c": p.mu_c,
            "sigma_proxy": sigma,
            "rho_proxy": correlation_proxy(p, 1.0),
        })
    return pd.DataFrame.from_records(
        records, columns=["week_start", "kappa", "mu", "mu_c",
                          "sigma_proxy", "rho_proxy"])


class CommonShockEstimator(BaseEstimator):
    """Moment-method calibrator with a scikit-learn estimator surface.

    Parameters
    ----------
    grid : MaturityGrid or None
        Product maturities; defaults to the canonical 24-hour session.
    delta : float
        Realized-covariation sampling step in hours.
    min_overlap : float
        Minimal pair-window length admitted into the correlation regression.
    window_begin, window_end_lead : float
        Estimation windows [window_begin, T_m - window_end_lead].
    kappa_max : float
        Upper bound of the decay-rate search.

    After ``fit`` the calibrated values are available as ``kappa_``, ``mu_``,
    ``mu_c_``, ``jump_law_``, ``params_`` and the full ``result_``.
    """

    def __init__(self, grid: MaturityGrid | None = None, delta: float = 0.5,
                 min_overlap: float = 1.0, window_begin: float = 0.0,
                 window_end_lead: float = 1.0, kappa_max: float = 5.0):
        self.grid = grid
        self.delta = delta
        self.min_overlap = min_overlap
        self.window_begin = window_begin
        self.window_end_lead = window_end_lead
        self.kappa_max = kappa_max

    def fit(self, X: TickDataset, y=None) -> "CommonShockEstimator":
        if not isinstance(X, TickDataset):
            raise TypeError("X must be a TickDataset (see read_ticks_csv)")
        if not X.sessions:
            raise ValueError("cannot fit on an empty dataset")
        grid = self.grid if self.grid is not None else hourly_grid(X.n_products)
        windows = EstimationWindow.canonical(
            grid, begin=self.window_begin, end_lead=self.window_end_lead,
            delta=self.delta, min_overlap=self.min_overlap)
        result = estimate(X, grid, windows, kappa_max=self.kappa_max)
        self.result_ = result
        self.params_ = result.params
        self.kappa_ = result.params.kappa
        self.mu_ = result.params.mu
        self.mu_c_ = result.params.mu_c
        self.jump_law_ = result.params.jump_law
        self.n_sessions_ = result.n_sessions
        return self


# ---------------------------------------------------------------------------
# Synthetic data and file I/O
# ---------------------------------------------------------------------------

def event_path_to_session(path: EventPath, delivery_date: dt.date,
                          tick_size: float = TICK_SIZE) -> SessionTicks:
    """One transaction tick per price-change event, truncated at each
    product's trading cutoff and rounded to the tick grid.

    The session-open quote is written as a tick at t = 0, so realized
    measures computed from the synthetic ticks see the full path from the
    initial price onward.
    """
    times, prices = [], []
    for m in range(path.n_products):
        cutoff = path.params.grid.cutoff(m + 1)
        keep = (path.times[m] <= cutoff) & (path.times[m] > 0.0)
        t = np.concatenate([[0.0], path.times[m][keep]])
        p = path.f0.f0[m] + np.concatenate([[0.0],
                                            np.cumsum(path.sizes[m][keep])])
        prices.append(np.round(p / tick_size) * tick_size)
        times.append(t)
    return SessionTicks(delivery_date, tuple(times), tuple(prices))


def make_synthetic_dataset(params: ModelParams, f0: InitialPrices,
                           n_sessions: int, master_seed: int,
                           start_date: dt.date = dt.date(2022, 1, 1),
                           country: str = "synthetic") -> TickDataset:
    """Simulated sessions on consecutive delivery dates; session d uses the
    path stream (master_seed, d)."""
    sessions = []
    for d in range(n_sessions):
        rng = path_rng(master_seed, d)
        path = simulate_thinning(params, f0, rng)
        sessions.append(event_path_to_session(
            path, start_date + dt.timedelta(days=d)))
    return TickDataset(tuple(sessions), country=country)


def read_ticks_csv(path: str) -> TickDataset:
    """Load transactions from CSV with columns delivery_date (ISO-8601),
    product (1-based), timestamp_s (seconds since session open), price
    (EUR/MWh).  Ties on (product, timestamp) keep the last record."""
    frame = pd.read_csv(path, dtype=str)
    required = ["delivery_date", "product", "timestamp_s", "price"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"tick CSV is missing columns {missing}")
    parsed = {}
    for col in ("product", "timestamp_s", "price"):
        parsed[col] = pd.to_numeric(frame[col], errors="coerce")
        bad = parsed[col].isna()
        if bad.any():
            line = int(np.argmax(bad.to_numpy())) + 2  # 1-based + header
            raise ValueError(f"malformed value in column {col!r} at line {line}")
    date_col = pd.to_datetime(frame["delivery_date"], errors="coerce")
    if date_col.isna().any():
        line = int(np.argmax(date_col.isna().to_numpy())) + 2
        raise ValueError(f"malformed delivery_date at line {line}")
    dates = date_col.dt.date
    product_f = parsed["product"].to_numpy()
    off_grid = (product_f < 1) | (product_f != np.round(product_f))
    if off_grid.any():
        line = int(np.argmax(off_grid)) + 2
        raise ValueError(f"product index must be a positive integer at line {line}")
    product = product_f.astype(int)
    hours = parsed["timestamp_s"].to_numpy() / 3600.0
    price = parsed["price"].to_numpy()

    n_products = int(product.max())
    sessions = []
    date_arr = dates.to_numpy()
    for day in sorted(set(date_arr.tolist())):
        day_mask = date_arr == day
        times_out, prices_out = [], []
        for m in range(1, n_products + 1):
            sel = day_mask & (product == m)
            t, p = hours[sel], price[sel]
            order = np.argsort(t, kind="stable")
            t, p = t[order], p[order]
            if t.size:
                last = np.concatenate([t[1:] != t[:-1], [True]])  # keep last tie
                t, p = t[last], p[last]
            times_out.append(t)
            prices_out.append(p)
        sessions.append(SessionTicks(day, tuple(times_out), tuple(prices_out)))
    return TickDataset(tuple(sessions))


def write_ticks_csv(dataset: TickDataset, path: str) -> None:
    frames = []
    for s in dataset.sessions:
        for m in range(s.n_products):
            if s.times[m].size == 0:
                continue
            frames.append(pd.DataFrame({
                "delivery_date": s.delivery_date.isoformat(),
                "product": m + 1,
                "timestamp_s": s.times[m] * 3600.0,
                "price": s.prices[m],
            }))
    if frames:
        pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    else:
        pd.DataFrame(columns=["delivery_date", "product", "timestamp_s",
                              "price"]).to_csv(path, index=False)
