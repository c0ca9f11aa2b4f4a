"""File-based command line pipeline.

Each stage reads files, writes files plus a run manifest, and is
deterministic given identical inputs and seed.  Exit codes: 0 success,
2 input validation, 3 numerical failure; errors go to stderr as one JSON
object per failure.
"""
from __future__ import annotations

import datetime as dt
import functools
import hashlib
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import __version__
from .model import InitialPrices, ModelParams
from .simulation import (SimConfig, grid_batch_to_csv, simulate_batch,
                         write_grid_binary)
from .estimation import (EstimationWindow, estimate, make_synthetic_dataset,
                         read_ticks_csv, rolling_estimate, rolling_to_frame,
                         signature_plot, epps_correlation, write_ticks_csv,
                         hourly_grid)
from .battery import (BatterySpec, backtest, load_policy, optimize,
                      read_spot_csv, save_policy, spot_strategy,
                      apply_controls, summarize_annual, write_spot_csv,
                      _last_trade_before)

_UNITS_NOTE = "times in hours since session open (15:00 day D-1); prices EUR/MWh"


def _fail(code: int, kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": {"type": kind, "message": message}})
                     + "\n")
    sys.exit(code)


def _guarded(fn):
    """Map validation errors to exit 2 and numerical failures to exit 3."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, TypeError, KeyError, FileNotFoundError) as exc:
            _fail(2, type(exc).__name__, str(exc))
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            _fail(3, type(exc).__name__, str(exc))

    return wrapper


def _sha256(path: str | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_path: str, subcommand: str, inputs: dict,
                    seed: int | None, started: float, threads: int) -> None:
    manifest = {
        "subcommand": subcommand,
        "inputs": inputs,
        "params_hash": inputs.get("params_sha256"),
        "master_seed": seed,
        "tool_version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 3),
        "threads": threads,
        "units": _UNITS_NOTE,
    }
    Path(str(out_path) + ".manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")


def _limit_threads(n: int):
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _parse_grid(spec: str, params: ModelParams) -> np.ndarray:
    from .simulation import decision_grid
    if spec == "auto":
        return decision_grid(params)
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        return np.arange(start, stop + 1e-9, step)
    return np.asarray([float(x) for x in spec.split(",")])


@click.group()
@click.version_option(__version__)
def main():
    """Simulation, calibration and battery valuation for intraday power
    prices under the common-shock jump model."""


@main.command("simulate")
@click.argument("params_json", type=click.Path(exists=True))
@click.option("--n-paths", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--generator", type=click.Choice(["thinning", "decomposition",
                                                "diffusion"]),
              default="thinning", show_default=True)
@click.option("--grid", default="auto", show_default=True,
              help="Sampling times: 'auto' (the per-product cutoffs), "
                   "'start:stop:step', or a comma list of hours.")
@click.option("--f0", default=None,
              help="Comma list of initial prices; default 100 for every product.")
@click.option("--out", required=True, type=click.Path(),
              help="Output batch; .bin selects the binary layout, else CSV.")
@click.option("--ticks-out", type=click.Path(), default=None,
              help="Also write the paths as a synthetic tick CSV "
                   "(one session per path).")
@click.option("--spot-out", type=click.Path(), default=None,
              help="Also write synthetic day-ahead prices (equal to f0).")
@click.option("--start-date", default="2022-01-01", show_default=True,
              help="Delivery date of the first synthetic session.")
@click.option("--threads", type=int, default=1, show_default=True)
@_guarded
def cmd_simulate(params_json, n_paths, seed, generator, grid, f0, out,
                 ticks_out, spot_out, start_date, threads):
    """Write a batch of simulated sessions sampled on a time grid."""
    started = time.monotonic()
    params = ModelParams.from_json(Path(params_json).read_text())
    M = params.grid.n_products
    f0_prices = InitialPrices.flat(100.0, M) if f0 is None else \
        InitialPrices(tuple(float(x) for x in f0.split(",")))
    f0_prices.check_grid(params.grid)
    grid_times = _parse_grid(grid, params)
    config = SimConfig(n_paths=n_paths, master_seed=seed, generator=generator)

    with _limit_threads(threads):
        paths = simulate_batch(params, f0_prices, config, grid_times)
        if str(out).endswith(".bin"):
            with open(out, "wb") as fh:
                write_grid_binary(paths, fh)
        else:
            with open(out, "w") as fh:
                grid_batch_to_csv(paths, fh)
        if ticks_out is not None or spot_out is not None:
            first_day = dt.date.fromisoformat(start_date)
            dataset = make_synthetic_dataset(params, f0_prices, n_paths, seed,
                                             start_date=first_day)
            if ticks_out is not None:
                write_ticks_csv(dataset, ticks_out)
            if spot_out is not None:
                write_spot_csv({s.delivery_date: f0_prices.f0
                                for s in dataset.sessions}, spot_out)

    _write_manifest(out, "simulate",
                    {"params": str(params_json),
                     "params_sha256": _sha256(params_json)},
                    seed, started, threads)
    click.echo(f"wrote {n_paths} paths to {out}")


@main.command("estimate")
@click.argument("ticks_csv", type=click.Path(exists=True))
@click.option("--windows", default="0.0,1.0", show_default=True,
              help="'begin,end_lead': per product use [begin, T_m - end_lead].")
@click.option("--delta", type=float, default=0.5, show_default=True,
              help="Realized-covariation sampling step, hours.")
@click.option("--small-delta", type=float, default=1.0, show_default=True,
              help="Minimal pair-window overlap admitted, hours.")
@click.option("--rolling", type=click.Choice(["none", "weekly"]),
              default="none", show_default=True)
@click.option("--kappa-max", type=float, default=5.0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--threads", type=int, default=1, show_default=True)
@_guarded
def cmd_estimate(ticks_csv, windows, delta, small_delta, rolling, kappa_max,
                 out, threads):
    """Calibrate the model from transaction ticks; write the parameter JSON,
    cleaning/diagnostic side files and, optionally, weekly rolling fits."""
    started = time.monotonic()
    dataset = read_ticks_csv(ticks_csv)
    begin, end_lead = (float(x) for x in windows.split(","))
    grid = hourly_grid(dataset.n_products)
    win = EstimationWindow.canonical(grid, begin=begin, end_lead=end_lead,
                                     delta=delta, min_overlap=small_delta)
    stem = str(Path(out).with_suffix(""))

    with _limit_threads(threads):
        fitted = estimate(dataset, grid, win, kappa_max=kappa_max)
        Path(out).write_text(json.dumps(fitted.to_dict(), indent=2) + "\n")

        deltas = [1 / 60, 2 / 60, 5 / 60, 10 / 60, 0.25, 0.5, 1.0]
        sig_rows = []
        for m in range(1, grid.n_products + 1):
            for d_, v in signature_plot(dataset, m, deltas, win.t_end[m - 1]):
                sig_rows.append({"product": m, "delta_hours": d_,
                                 "variance_per_hour": v})
        pd.DataFrame.from_records(sig_rows).to_csv(stem + "_signature.csv",
                                                   index=False)
        epps_rows = []
        for l in range(1, grid.n_products + 1):
            for gap in (1, 2, 3):
                m = l + gap
                if m > grid.n_products:
                    continue
                b, e = win.pair_window(l, m)
                if e - b < win.min_overlap:
                    continue
                for d_ in deltas:
                    epps_rows.append({
                        "product_a": l, "product_b": m, "delta_hours": d_,
                        "correlation": epps_correlation(dataset, l, m, d_, win),
                    })
        pd.DataFrame.from_records(epps_rows).to_csv(stem + "_epps.csv",
                                                    index=False)
        if rolling == "weekly":
            rows = rolling_estimate(dataset, grid, win)
            rolling_to_frame(rows).to_csv(stem + "_rolling.csv", index=False)

    _write_manifest(out, "estimate",
                    {"ticks": str(ticks_csv),
                     "params_sha256": _sha256(ticks_csv)},
                    None, started, threads)
    click.echo(f"estimated kappa={fitted.params.kappa:.4f} "
               f"mu={fitted.params.mu:.3f} mu_c={fitted.params.mu_c:.3f} "
               f"from {fitted.n_sessions} sessions")


@main.command("value")
@click.argument("params_json", type=click.Path(exists=True))
@click.argument("battery_json", type=click.Path(exists=True))
@click.option("--p", type=int, default=None,
              help="Number of forward-price features (1..6); overrides the "
                   "battery file.")
@click.option("--n-paths", type=int, default=None,
              help="Training paths; overrides the battery file "
                   "[default 500000].")
@click.option("--seed", type=int, default=None,
              help="Master seed; overrides the battery file [default 0].")
@click.option("--generator", type=click.Choice(["poisson", "decomposition",
                                                "diffusion"]),
              default="poisson", show_default=True)
@click.option("--f0", default=None,
              help="Comma list of initial prices; overrides the battery file.")
@click.option("--out", required=True, type=click.Path(),
              help="Policy file (npz layout).")
@click.option("--threads", type=int, default=1, show_default=True)
@_guarded
def cmd_value(params_json, battery_json, p, n_paths, seed, generator, f0,
              out, threads):
    """Train a dispatch policy by regression dynamic programming and write
    the policy plus an optimisation-value report."""
    started = time.monotonic()
    params = ModelParams.from_json(Path(params_json).read_text())
    battery_doc = json.loads(Path(battery_json).read_text())
    spec = BatterySpec(capacity_mwh=battery_doc["capacity_mwh"],
                       power_mw=battery_doc.get("power_mw", 1.0),
                       efficiency=battery_doc.get("efficiency", 0.92))
    p = p if p is not None else int(battery_doc.get("p", 3))
    n_paths = n_paths if n_paths is not None else \
        int(battery_doc.get("n_paths", 500_000))
    seed = seed if seed is not None else int(battery_doc.get("seed", 0))
    if not 1 <= p <= 6:
        raise ValueError("p must be between 1 and 6")
    if f0 is not None:
        f0_prices = InitialPrices(tuple(float(x) for x in f0.split(",")))
    elif "f0" in battery_doc:
        f0_prices = InitialPrices(tuple(battery_doc["f0"]))
    else:
        raise ValueError("initial prices are required: pass --f0 or put an "
                         "'f0' array in the battery file")
    f0_prices.check_grid(params.grid)

    with _limit_threads(threads):
        policy, value = optimize(params, f0_prices, spec, p, n_paths, seed,
                                 generator=generator)
        save_policy(policy, out)
    report = {"optimisation_value_eur": value, "p": p, "n_paths": n_paths,
              "seed": seed, "generator": generator,
              "battery": spec.to_dict(),
              "units": "EUR; battery capacity MWh, power MW"}
    Path(str(Path(out).with_suffix("")) + "_value.json").write_text(
        json.dumps(report, indent=2) + "\n")

    _write_manifest(out, "value",
                    {"params": str(params_json), "battery": str(battery_json),
                     "params_sha256": _sha256(params_json)},
                    seed, started, threads)
    click.echo(f"optimisation value {value:.2f} EUR (p={p}, {n_paths} paths)")


@main.command("backtest")
@click.argument("policy_file", type=click.Path(exists=True))
@click.argument("ticks_csv", type=click.Path(exists=True))
@click.argument("spot_csv", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(),
              help="Daily gain CSV; an annual summary lands next to it.")
@click.option("--threads", type=int, default=1, show_default=True)
@_guarded
def cmd_backtest(policy_file, ticks_csv, spot_csv, out, threads):
    """Replay a trained policy against observed ticks, day by day, alongside
    the deterministic day-ahead benchmark."""
    started = time.monotonic()
    policy = load_policy(policy_file)
    dataset = read_ticks_csv(ticks_csv)
    spot = read_spot_csv(spot_csv)
    strategy = "diffusion" if policy.generator == "diffusion" else "poisson"

    rows = []
    with _limit_threads(threads):
        for session in dataset.sessions:
            day = session.delivery_date
            if day not in spot:
                raise ValueError(f"no day-ahead prices for {day}")
            day_ahead = spot[day]
            result = backtest(policy, session, day_ahead)
            rows.append({"delivery_date": day.isoformat(),
                         "p": policy.schedule.n_features,
                         "strategy": strategy, "gain": result.gain,
                         "fallbacks": len(result.fallback_products)})
            controls, _ = spot_strategy(day_ahead, policy.spec)
            exec_prices = []
            for i in range(1, policy.schedule.n_steps + 1):
                traded = _last_trade_before(
                    session, i, policy.schedule.decision_times[i - 1])
                exec_prices.append(day_ahead[i - 1] if traded is None
                                   else traded)
            rows.append({"delivery_date": day.isoformat(), "p": 0,
                         "strategy": "spot",
                         "gain": apply_controls(controls, exec_prices,
                                                policy.spec),
                         "fallbacks": 0})

    daily = pd.DataFrame.from_records(
        rows, columns=["delivery_date", "p", "strategy", "gain", "fallbacks"])
    daily.to_csv(out, index=False)
    summarize_annual(daily).to_csv(
        str(Path(out).with_suffix("")) + "_summary.csv", index=False)
    _write_manifest(out, "backtest",
                    {"policy": str(policy_file), "ticks": str(ticks_csv),
                     "spot": str(spot_csv),
                     "params_sha256": _sha256(policy_file)},
                    None, started, threads)
    total = daily.loc[daily.strategy != "spot", "gain"].sum()
    click.echo(f"backtested {dataset.n_sessions} days, policy gain {total:.2f} EUR")


@main.command("report")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True))
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]),
              default="csv", show_default=True)
@click.option("--out", required=True, type=click.Path())
@_guarded
def cmd_report(inputs, fmt, out):
    """Merge daily-gain files into the annual (year, p, spot, poisson,
    diffusion) table."""
    started = time.monotonic()
    frames = [pd.read_csv(path) for path in inputs]
    if frames:
        daily = pd.concat(frames, ignore_index=True)
        dup = daily.duplicated(subset=["delivery_date", "p", "strategy"])
        if dup.any():
            first = daily[dup].iloc[0]
            raise ValueError(
                f"duplicate day in inputs: {first['delivery_date']} "
                f"(p={first['p']}, strategy={first['strategy']})")
        table = summarize_annual(daily)
    else:
        table = summarize_annual(pd.DataFrame(
            columns=["delivery_date", "p", "strategy", "gain", "fallbacks"]))
    if fmt == "csv":
        table.to_csv(out, index=False)
    else:
        Path(out).write_text(table.to_json(orient="records", indent=2) + "\n")
    _write_manifest(out, "report", {"inputs": [str(p) for p in inputs]},
                    None, started, 1)
    click.echo(f"wrote {len(table)} summary rows to {out}")


if __name__ == "__main__":
    main()
