"""Battery valuation over one trading session by regression-based backward
dynamic programming on simulated paths, plus the deterministic day-ahead
("Spot") benchmark and backtesting utilities.

One unit decision (charge one power-hour, do nothing, discharge one) is
taken per product at its trading cutoff.  The continuation value after step
i is regressed, per reachable stock level, on the prices of the next few
products observed at the following decision time, using piecewise affine
fits on an equal-count quantile partition of the feature space (4 cells per
dimension for the first four dimensions, one beyond).  The backward rollup
accumulates realized path gains, not fitted values.

Ties between controls always break toward doing nothing, then discharging,
then charging, both here and in the deterministic benchmark.
"""
from __future__ import annotations

import datetime as dt
import io
import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .model import InitialPrices, MaturityGrid, ModelParams
from .simulation import GeneratorName, simulate_price_matrix
from .estimation import SessionTicks, TickDataset

__all__ = [
    "BatterySpec",
    "DecisionSchedule",
    "LocalLinearFit",
    "Policy",
    "BacktestDay",
    "ValuationReport",
    "cashflow",
    "admissible_controls",
    "fit_local_linear",
    "optimize",
    "optimize_on_paths",
    "backtest",
    "apply_controls",
    "spot_strategy",
    "backtest_campaign",
    "save_policy",
    "load_policy",
    "read_spot_csv",
    "write_spot_csv",
]

# Control preference under exact ties: hold, then discharge, then charge.
_CONTROL_ORDER = (0, -1, 1)


@dataclass(frozen=True)
class BatterySpec:
    """Physical battery description.

    capacity_mwh is an integer multiple of power_mw (one-hour dispatch
    grid); the session starts empty.
    """

    capacity_mwh: float
    power_mw: float = 1.0
    efficiency: float = 0.92

    def __post_init__(self):
        if not 0.0 < self.efficiency <= 1.0:
            raise ValueError("efficiency must be in (0, 1]")
        if self.power_mw <= 0 or self.capacity_mwh <= 0:
            raise ValueError("power and capacity must be positive")
        ratio = self.capacity_mwh / self.power_mw
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("capacity must be an integer multiple of power")

    @property
    def n_levels(self) -> int:
        """Number of reachable stock levels above empty."""
        return int(round(self.capacity_mwh / self.power_mw))

    def to_dict(self) -> dict:
        return {"capacity_mwh": self.capacity_mwh, "power_mw": self.power_mw,
                "efficiency": self.efficiency}


@dataclass(frozen=True)
class DecisionSchedule:
    """Per-product decision times and the feature-window width.

    The decision for product i executes at ``decision_times[i-1]``; the
    continuation value after step i is regressed on the prices of products
    i+1 .. i+p observed at ``decision_times[i]`` (the next decision time).
    """

    decision_times: tuple[float, ...]
    n_features: int

    def __post_init__(self):
        times = tuple(float(t) for t in self.decision_times)
        object.__setattr__(self, "decision_times", times)
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("decision times must be strictly increasing")
        if not 1 <= self.n_features <= 6:
            raise ValueError("the feature count p must be between 1 and 6")

    @classmethod
    def from_grid(cls, grid: MaturityGrid, n_features: int) -> "DecisionSchedule":
        return cls(tuple(grid.cutoff(m + 1) for m in range(grid.n_products)),
                   n_features)

    @property
    def n_steps(self) -> int:
        return len(self.decision_times)

    def features_at(self, i: int) -> range:
        """1-based products whose prices feed the step-i regression."""
        return range(i + 1, min(i + self.n_features, self.n_steps) + 1)


def cashflow(control_mwh: float, price: float, efficiency: float) -> float:
    """EUR received for a dispatch decision at the given price.

    Storing E MWh costs E/efficiency bought from the grid; releasing E MWh
    sells efficiency*E.  Positive control = store.
    """
    if control_mwh > 0:
        return -control_mwh / efficiency * price
    if control_mwh < 0:
        return -control_mwh * efficiency * price
    return 0.0


def admissible_controls(spec: BatterySpec, stock_level: int) -> tuple[int, ...]:
    """Unit controls {-1, 0, +1} keeping the stock inside [0, capacity]."""
    out = []
    for c in (-1, 0, 1):
        if 0 <= stock_level + c <= spec.n_levels:
            out.append(c)
    return tuple(out)


# ---------------------------------------------------------------------------
# Local adaptive linear regression
# ---------------------------------------------------------------------------

def _mesh_for(p_eff: int) -> tuple[int, ...]:
    return tuple(4 if d < 4 else 1 for d in range(p_eff))


@dataclass
class LocalLinearFit:
    """Equal-count quantile partition with one affine function per cell.

    thresholds[d] has one row of split points per cell of the partition of
    the first d dimensions; coefs holds (intercept, slopes...) per cell in
    lexicographic cell order.  Cells that had fewer than dim+2 training
    samples (or singular normal equations) fall back to a constant.
    """

    mesh: tuple[int, ...]
    thresholds: list[np.ndarray]
    coefs: np.ndarray

    @property
    def n_dims(self) -> int:
        return len(self.mesh)

    def cell_of(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cell = np.zeros(X.shape[0], dtype=np.int64)
        for d, n_blocks in enumerate(self.mesh):
            if n_blocks == 1:
                continue
            rows = self.thresholds[d][cell]           # (n, n_blocks - 1)
            idx = (X[:, d][:, None] >= rows).sum(axis=1)
            cell = cell * n_blocks + idx
        return cell

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.n_dims == 0:
            n = 1 if np.ndim(X) == 0 else np.shape(X)[0]
            return np.full(n, self.coefs[0, 0])
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cell = self.cell_of(X)
        beta = self.coefs[cell]
        return beta[:, 0] + (beta[:, 1:] * X).sum(axis=1)


def _split_points(values: np.ndarray, n_blocks: int) -> np.ndarray:
    """Equal-count split thresholds (midpoints between sorted neighbours)."""
    if values.size == 0:
        return np.zeros(n_blocks - 1)
    srt = np.sort(values)
    out = np.empty(n_blocks - 1)
    for k in range(1, n_blocks):
        pos = min(max(k * values.size // n_blocks, 1), values.size - 1) \
            if values.size > 1 else 0
        out[k - 1] = 0.5 * (srt[pos - 1] + srt[pos]) if values.size > 1 else srt[0]
    return out


def fit_local_linear(X: np.ndarray, y: np.ndarray,
                     mesh: tuple[int, ...]) -> LocalLinearFit:
    """Fit the piecewise affine surface on an equal-count quantile partition.

    The partition is built dimension by dimension: split on quantiles of the
    first feature, then on quantiles of the second feature within each
    block, and so on.  Assignment is by value against the stored split
    points, so prediction reproduces the training partition.
    """
    y = np.asarray(y, dtype=float)
    if len(mesh) == 0:
        return LocalLinearFit((), [], np.array([[float(y.mean())]]))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if d != len(mesh):
        raise ValueError("mesh must have one entry per feature dimension")

    thresholds: list[np.ndarray] = []
    cell = np.zeros(n, dtype=np.int64)
    n_cells = 1
    for dim, n_blocks in enumerate(mesh):
        if n_blocks == 1:
            thresholds.append(np.zeros((n_cells, 0)))
            continue
        thr = np.zeros((n_cells, n_blocks - 1))
        for c in range(n_cells):
            thr[c] = _split_points(X[cell == c, dim], n_blocks)
        thresholds.append(thr)
        idx = (X[:, dim][:, None] >= thr[cell]).sum(axis=1)
        cell = cell * n_blocks + idx
        n_cells *= n_blocks

    global_mean = float(y.mean()) if n else 0.0
    coefs = np.zeros((n_cells, 1 + d))
    for c in range(n_cells):
        mask = cell == c
        count = int(mask.sum())
        if count == 0:
            coefs[c, 0] = global_mean
            continue
        yc = y[mask]
        if count < d + 2:
            coefs[c, 0] = yc.mean()
            continue
        xc = X[mask]
        x_mean = xc.mean(axis=0)
        y_mean = yc.mean()
        xd = xc - x_mean
        gram = np.einsum("ni,nj->ij", xd, xd)
        rhs = np.einsum("ni,n->i", xd, yc - y_mean)
        try:
            slope = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            coefs[c, 0] = y_mean
            continue
        if not np.all(np.isfinite(slope)):
            coefs[c, 0] = y_mean
            continue
        coefs[c, 0] = y_mean - slope @ x_mean
        coefs[c, 1:] = slope
    return LocalLinearFit(tuple(mesh), thresholds, coefs)


# ---------------------------------------------------------------------------
# Optimization (backward induction on simulated paths)
# ---------------------------------------------------------------------------

@dataclass
class Policy:
    """Trained per-step, per-stock continuation surfaces plus everything
    needed to replay decisions deterministically."""

    spec: BatterySpec
    schedule: DecisionSchedule
    generator: str
    surfaces: list[dict[int, LocalLinearFit]]  # per step: stock level -> fit
    value: float

    def continuation(self, step: int, stock_level: int,
                     features: np.ndarray) -> np.ndarray:
        return self.surfaces[step - 1][stock_level].predict(features)

    def decide(self, step: int, stock_level: int, exec_price: float,
               features: np.ndarray) -> int:
        """Best unit control at a decision point, with the standard tie-break."""
        best_c = 0
        best_v = -math.inf
        for c in _CONTROL_ORDER:
            if not 0 <= stock_level + c <= self.spec.n_levels:
                continue
            value = cashflow(c * self.spec.power_mw, exec_price,
                             self.spec.efficiency)
            value += float(self.continuation(step, stock_level + c,
                                             np.atleast_2d(features))[0])
            if value > best_v:
                best_v, best_c = value, c
        return best_c


def optimize_on_paths(prices: np.ndarray, schedule: DecisionSchedule,
                      spec: BatterySpec, generator: str = "external"
                      ) -> tuple[Policy, float]:
    """Backward induction on a pre-simulated price cube.

    prices has shape (n_paths, n_products, n_steps) where column j holds the
    prices observed at ``schedule.decision_times[j]``.  Step i executes at
    prices[:, i-1, i-1] and regresses its continuation on
    prices[:, i:i+p_eff, i].  The rollup carries realized gains.
    """
    n_paths, n_products, n_cols = prices.shape
    M = schedule.n_steps
    if n_products != M or n_cols != M:
        raise ValueError("price cube must be (n_paths, n_steps, n_steps)")
    n_levels = spec.n_levels
    floor = 100 * 4 ** min(schedule.n_features, 4)
    if n_paths < floor:
        warnings.warn(f"{n_paths} training paths is below the recommended "
                      f"floor of {floor} for p={schedule.n_features}")

    gains = np.zeros((n_paths, n_levels + 1))
    surfaces: list[dict[int, LocalLinearFit]] = [dict() for _ in range(M)]
    for i in range(M, 0, -1):
        exec_price = prices[:, i - 1, i - 1]
        feat_products = schedule.features_at(i)
        p_eff = len(feat_products)
        feats = prices[:, feat_products.start - 1:feat_products.stop - 1, i] \
            if p_eff else np.zeros((n_paths, 0))
        mesh = _mesh_for(p_eff)

        reachable_post = min(n_levels, i)
        cont = np.zeros((n_paths, n_levels + 1))
        for s_post in range(reachable_post + 1):
            fit = fit_local_linear(feats, gains[:, s_post], mesh)
            surfaces[i - 1][s_post] = fit
            cont[:, s_post] = fit.predict(feats)

        new_gains = np.zeros_like(gains)
        for s in range(min(n_levels, i - 1) + 1):
            best_value = None
            best_c = None
            for c in _CONTROL_ORDER:
                if not 0 <= s + c <= n_levels:
                    continue
                cash = cashflow(c * spec.power_mw, 1.0, spec.efficiency)
                value = cash * exec_price + cont[:, s + c]
                if best_value is None:
                    best_value = value.copy()
                    best_c = np.full(n_paths, c, dtype=np.int8)
                else:
                    better = value > best_value
                    best_value[better] = value[better]
                    best_c[better] = c
            rows = np.arange(n_paths)
            chosen_cash = np.zeros(n_paths)
            for c in _CONTROL_ORDER:
                mask = best_c == c
                if mask.any():
                    chosen_cash[mask] = cashflow(c * spec.power_mw, 1.0,
                                                 spec.efficiency) \
                        * exec_price[mask]
            new_gains[:, s] = chosen_cash + gains[rows, s + best_c]
        gains = new_gains

    value = float(gains[:, 0].mean())
    policy = Policy(spec=spec, schedule=schedule, generator=generator,
                    surfaces=surfaces, value=value)
    return policy, value


def optimize(params: ModelParams, f0: InitialPrices, spec: BatterySpec,
             n_features: int, n_paths: int, seed: int,
             generator: str = "poisson") -> tuple[Policy, float]:
    """Train a dispatch policy on simulated sessions.

    generator "poisson" (alias of "thinning"), "decomposition" or
    "diffusion" selects the training path law.  Returns the policy and the
    optimisation value (mean realized gain over training paths from empty
    stock).
    """
    if generator not in ("poisson", "thinning", "decomposition", "diffusion"):
        raise ValueError(f"unknown generator {generator!r}")
    gen: GeneratorName = "thinning" if generator == "poisson" else generator  # type: ignore[assignment]
    schedule = DecisionSchedule.from_grid(params.grid, n_features)
    prices = simulate_price_matrix(params, f0, np.asarray(schedule.decision_times),
                                   n_paths, seed, gen)
    return optimize_on_paths(prices, schedule, spec, generator=generator)


# ---------------------------------------------------------------------------
# Backtest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BacktestDay:
    """Realized gain of one day plus the replayed controls."""

    gain: float
    controls: tuple[int, ...]
    fallback_products: tuple[int, ...]  # products priced from day-ahead


def _last_trade_before(session: SessionTicks, m: int, t: float) -> float | None:
    times, prices = session.times[m - 1], session.prices[m - 1]
    idx = int(np.searchsorted(times, t, side="right"))
    if idx == 0:
        return None
    return float(prices[idx - 1])


def backtest(policy: Policy, observed: SessionTicks,
             day_ahead: Sequence[float]) -> BacktestDay:
    """Replay a trained policy against observed ticks.

    Execution and feature prices are the last trades at or before the
    relevant decision times; a product that has not traded yet falls back to
    its day-ahead price and is flagged.
    """
    schedule = policy.schedule
    M = schedule.n_steps
    day_ahead = np.asarray(day_ahead, dtype=float)
    if observed.n_products != M or day_ahead.size != M:
        raise ValueError("observed session and day-ahead prices must cover "
                         "every scheduled product")
    fallbacks: set[int] = set()

    def price_at(m: int, t: float) -> float:
        p = _last_trade_before(observed, m, t)
        if p is None:
            fallbacks.add(m)
            return float(day_ahead[m - 1])
        return p

    stock = 0
    gain = 0.0
    controls = []
    for i in range(1, M + 1):
        exec_price = price_at(i, schedule.decision_times[i - 1])
        feat_products = schedule.features_at(i)
        feats = np.asarray([
            price_at(j, schedule.decision_times[i]) for j in feat_products
        ]) if len(feat_products) else np.zeros(0)
        c = policy.decide(i, stock, exec_price, feats)
        gain += cashflow(c * policy.spec.power_mw, exec_price,
                         policy.spec.efficiency)
        stock += c
        assert 0 <= stock <= policy.spec.n_levels
        controls.append(c)
    return BacktestDay(gain=gain, controls=tuple(controls),
                       fallback_products=tuple(sorted(fallbacks)))


def apply_controls(controls: Sequence[int], executed_prices: Sequence[float],
                   spec: BatterySpec) -> float:
    """Gain of a fixed (open-loop) control sequence at the given prices."""
    return float(sum(
        cashflow(c * spec.power_mw, p, spec.efficiency)
        for c, p in zip(controls, executed_prices)
    ))


def spot_strategy(spot_prices: Sequence[float],
                  spec: BatterySpec) -> tuple[tuple[int, ...], float]:
    """Exact deterministic dispatch against a known price vector.

    Backward stock-grid dynamic programming; ties break toward holding,
    then discharging.  Returns (unit controls, optimal value).
    """
    prices = np.asarray(spot_prices, dtype=float)
    M = prices.size
    n = spec.n_levels
    values = np.zeros((M + 2, n + 1))
    choice = np.zeros((M + 1, n + 1), dtype=np.int8)
    for i in range(M, 0, -1):
        for s in range(n + 1):
            best_v = -math.inf
            best_c = 0
            for c in _CONTROL_ORDER:
                if not 0 <= s + c <= n:
                    continue
                v = cashflow(c * spec.power_mw, prices[i - 1],
                             spec.efficiency) + values[i + 1, s + c]
                if v > best_v:
                    best_v, best_c = v, c
            values[i, s] = best_v
            choice[i, s] = best_c
    controls = []
    s = 0
    for i in range(1, M + 1):
        c = int(choice[i, s])
        controls.append(c)
        s += c
    return tuple(controls), float(values[1, 0])


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

@dataclass
class ValuationReport:
    """Daily gains, annual sums and training values, all in EUR."""

    daily: pd.DataFrame    # delivery_date, p, strategy, gain, fallbacks
    annual: pd.DataFrame   # year, p, spot, poisson, diffusion
    training: pd.DataFrame  # p, strategy, optimisation_value (per policy)


def backtest_campaign(dataset: TickDataset,
                      params_schedule: Sequence[tuple[dt.date, ModelParams]],
                      spot_prices: dict[dt.date, np.ndarray],
                      spec: BatterySpec, p_list: Sequence[int],
                      n_paths: int, seed: int,
                      generators: Sequence[str] = ("poisson", "diffusion"),
                      ) -> ValuationReport:
    """Daily optimize-then-backtest protocol.

    For every session, the most recent calibration at or before its delivery
    date trains one policy per (p, generator) with the day's day-ahead
    prices as initial prices (policies are cached on identical inputs), the
    policy is replayed against the day's ticks, and the day-ahead benchmark
    is dispatched deterministically and executed at the observed prices.
    """
    schedule_sorted = sorted(params_schedule, key=lambda kv: kv[0])
    if not schedule_sorted:
        raise ValueError("params_schedule must not be empty")
    cache: dict[tuple, Policy] = {}
    rows = []
    training_rows = []
    for session in dataset.sessions:
        day = session.delivery_date
        applicable = [p for d, p in schedule_sorted if d <= day]
        if not applicable:
            continue
        params = applicable[-1]
        if day not in spot_prices:
            raise ValueError(f"no day-ahead prices for {day}")
        day_ahead = np.asarray(spot_prices[day], dtype=float)
        f0 = InitialPrices(tuple(day_ahead))

        spot_controls, _ = spot_strategy(day_ahead, spec)
        exec_prices = []
        sched = DecisionSchedule.from_grid(params.grid, 1)
        for i in range(1, sched.n_steps + 1):
            p_obs = _last_trade_before(session, i, sched.decision_times[i - 1])
            exec_prices.append(day_ahead[i - 1] if p_obs is None else p_obs)
        spot_gain = apply_controls(spot_controls, exec_prices, spec)
        rows.append({"delivery_date": day, "p": 0, "strategy": "spot",
                     "gain": spot_gain, "fallbacks": 0})

        for p in p_list:
            for gen in generators:
                key = (params.to_json(indent=None), f0.f0, p, gen, n_paths, seed)
                if key not in cache:
                    cache[key], value = optimize(params, f0, spec, p, n_paths,
                                                 seed, generator=gen)
                    training_rows.append({"p": p, "strategy": gen,
                                          "optimisation_value": value})
                day_result = backtest(cache[key], session, day_ahead)
                rows.append({"delivery_date": day, "p": p, "strategy": gen,
                             "gain": day_result.gain,
                             "fallbacks": len(day_result.fallback_products)})

    daily = pd.DataFrame.from_records(
        rows, columns=["delivery_date", "p", "strategy", "gain", "fallbacks"])
    annual = summarize_annual(daily)
    training = pd.DataFrame.from_records(
        training_rows, columns=["p", "strategy", "optimisation_value"])
    return ValuationReport(daily=daily, annual=annual, training=training)


def summarize_annual(daily: pd.DataFrame) -> pd.DataFrame:
    """Annual gain sums in the (year, p, spot, poisson, diffusion) layout."""
    if daily.empty:
        return pd.DataFrame(columns=["year", "p", "spot", "poisson", "diffusion"])
    df = daily.copy()
    df["year"] = pd.to_datetime(df["delivery_date"]).dt.year
    spot = df[df["strategy"] == "spot"].groupby("year")["gain"].sum()
    rows = []
    p_values = sorted(set(df.loc[df["strategy"] != "spot", "p"]))
    for year in sorted(set(df["year"])):
        for p in p_values:
            sel = df[(df["year"] == year) & (df["p"] == p)]
            rows.append({
                "year": year, "p": p,
                "spot": float(spot.get(year, 0.0)),
                "poisson": float(sel[sel["strategy"] == "poisson"]["gain"].sum()),
                "diffusion": float(sel[sel["strategy"] == "diffusion"]["gain"].sum()),
            })
    return pd.DataFrame.from_records(
        rows, columns=["year", "p", "spot", "poisson", "diffusion"])


# ---------------------------------------------------------------------------
# Policy persistence and spot-price files
# ---------------------------------------------------------------------------

def save_policy(policy: Policy, path: str) -> None:
    """Persist a policy as an npz archive with reproducible bytes.

    Layout: entry "meta" holds a JSON document (battery spec, decision
    times, p, generator, value); per step i and stock level s,
    "step{i}_stock{s}_mesh", "..._coefs" and "..._thr{d}" hold the partition
    mesh, the affine coefficients and the split points of dimension d.
    Zip entries carry a fixed timestamp so identical policies produce
    bit-identical files.
    """
    arrays: dict[str, np.ndarray] = {}
    meta = {
        "spec": policy.spec.to_dict(),
        "decision_times": list(policy.schedule.decision_times),
        "p": policy.schedule.n_features,
        "generator": policy.generator,
        "value": policy.value,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    for i, level_map in enumerate(policy.surfaces, start=1):
        for s, fit in level_map.items():
            base = f"step{i:02d}_stock{s}"
            arrays[f"{base}_mesh"] = np.asarray(fit.mesh, dtype=np.int64)
            arrays[f"{base}_coefs"] = fit.coefs
            for d, thr in enumerate(fit.thresholds):
                arrays[f"{base}_thr{d}"] = thr

    import zipfile
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_policy(path: str) -> Policy:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        schedule = DecisionSchedule(tuple(meta["decision_times"]), meta["p"])
        spec = BatterySpec(**meta["spec"])
        surfaces: list[dict[int, LocalLinearFit]] = \
            [dict() for _ in range(schedule.n_steps)]
        for name in data.files:
            if not name.endswith("_mesh"):
                continue
            base = name[:-5]
            step = int(base[4:6])
            stock = int(base.split("_stock")[1])
            mesh = tuple(int(x) for x in data[name])
            thresholds = [data[f"{base}_thr{d}"] for d in range(len(mesh))]
            surfaces[step - 1][stock] = LocalLinearFit(
                mesh, thresholds, data[f"{base}_coefs"])
    return Policy(spec=spec, schedule=schedule, generator=meta["generator"],
                  surfaces=surfaces, value=meta["value"])


def read_spot_csv(path: str) -> dict[dt.date, np.ndarray]:
    """Day-ahead prices from CSV (delivery_date, product, spot_price)."""
    frame = pd.read_csv(path)
    required = ["delivery_date", "product", "spot_price"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ValueError(f"spot CSV is missing columns {missing}")
    out: dict[dt.date, np.ndarray] = {}
    for day, group in frame.groupby("delivery_date"):
        day_date = pd.to_datetime(day).date()
        g = group.sort_values("product")
        products = g["product"].to_numpy()
        if not np.array_equal(products, np.arange(1, products.size + 1)):
            raise ValueError(f"spot CSV must list products 1..M once for {day}")
        out[day_date] = g["spot_price"].to_numpy(dtype=float)
    return out


def write_spot_csv(prices: dict[dt.date, Sequence[float]], path: str) -> None:
    rows = []
    for day in sorted(prices):
        for m, p in enumerate(prices[day], start=1):
            rows.append({"delivery_date": day.isoformat(), "product": m,
                         "spot_price": float(p)})
    pd.DataFrame.from_records(
        rows, columns=["delivery_date", "product", "spot_price"]
    ).to_csv(path, index=False)
