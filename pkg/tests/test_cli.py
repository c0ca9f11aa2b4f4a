import datetime as dt
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from intraday_shock.cli import main
from intraday_shock.model import (InitialPrices, JumpLaw, MaturityGrid,
                                  ModelParams, hourly_grid)
from intraday_shock.estimation import make_synthetic_dataset, write_ticks_csv
from intraday_shock.battery import write_spot_csv
from conftest import day_ahead_shape


@pytest.fixture()
def runner():
    return CliRunner()


def small_params(tmp_path, kappa=0.5, n_products=3) -> Path:
    p = ModelParams(kappa=kappa, mu=4.0, mu_c=3.0,
                    grid=MaturityGrid(tuple(9.0 + i for i in range(n_products))),
                    jump_law=JumpLaw((1.0, 2.0), (0.7, 0.3)))
    path = tmp_path / "params.json"
    path.write_text(p.to_json())
    return path


def synth_inputs(tmp_path, n_products=4, n_days=40, mu=10.0, mu_c=6.0,
                 start=dt.date(2022, 1, 4), seed=7):
    law = JumpLaw((1.0, 2.0), (0.7, 0.3))
    p = ModelParams(kappa=0.5, mu=mu, mu_c=mu_c, grid=hourly_grid(n_products),
                    jump_law=law)
    f0_arr = day_ahead_shape(n_products)
    ds = make_synthetic_dataset(p, InitialPrices(tuple(f0_arr)), n_days, seed,
                                start_date=start)
    ticks = tmp_path / "ticks.csv"
    spot = tmp_path / "spot.csv"
    write_ticks_csv(ds, str(ticks))
    write_spot_csv({s.delivery_date: f0_arr for s in ds.sessions}, str(spot))
    params_file = tmp_path / "true_params.json"
    params_file.write_text(p.to_json())
    return p, f0_arr, ticks, spot, params_file


class TestSimulate:
    def test_zero_paths_ok(self, runner, tmp_path):
        params = small_params(tmp_path)
        out = tmp_path / "batch.csv"
        result = runner.invoke(main, ["simulate", str(params), "--n-paths", "0",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.read_text().strip() == "path_id,product,time,price"
        assert (tmp_path / "batch.csv.manifest.json").exists()

    def test_same_seed_same_hash(self, runner, tmp_path):
        params = small_params(tmp_path)
        hashes = []
        for name in ("a.bin", "b.bin"):
            out = tmp_path / name
            result = runner.invoke(main, ["simulate", str(params),
                                          "--n-paths", "50", "--seed", "9",
                                          "--out", str(out)])
            assert result.exit_code == 0, result.output
            hashes.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

    def test_decomposition_rejects_kappa_zero(self, runner, tmp_path):
        params = small_params(tmp_path, kappa=0.0)
        result = runner.invoke(main, ["simulate", str(params),
                                      "--generator", "decomposition",
                                      "--n-paths", "5",
                                      "--out", str(tmp_path / "x.csv")])
        assert result.exit_code == 2
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert "thinning" in err["error"]["message"]

    def test_binary_round_trip(self, runner, tmp_path):
        from intraday_shock.simulation import read_grid_binary
        params = small_params(tmp_path)
        out = tmp_path / "batch.bin"
        result = runner.invoke(main, ["simulate", str(params), "--n-paths", "7",
                                      "--grid", "2.0,4.0,8.0",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        with open(out, "rb") as fh:
            grid, f0, prices = read_grid_binary(fh)
        assert prices.shape == (7, 3, 3)
        assert np.array_equal(grid, [2.0, 4.0, 8.0])

    def test_ticks_and_spot_out(self, runner, tmp_path):
        from intraday_shock.estimation import read_ticks_csv
        from intraday_shock.battery import read_spot_csv
        params = small_params(tmp_path)
        result = runner.invoke(main, [
            "simulate", str(params), "--n-paths", "3", "--out",
            str(tmp_path / "b.csv"), "--ticks-out", str(tmp_path / "t.csv"),
            "--spot-out", str(tmp_path / "s.csv"),
            "--start-date", "2022-02-01"])
        assert result.exit_code == 0, result.output
        ds = read_ticks_csv(str(tmp_path / "t.csv"))
        assert ds.n_sessions == 3
        assert ds.sessions[0].delivery_date == dt.date(2022, 2, 1)
        spot = read_spot_csv(str(tmp_path / "s.csv"))
        assert len(spot) == 3


class TestEstimate:
    def test_round_trip_recovery(self, runner, tmp_path):
        p, _, ticks, _, _ = synth_inputs(tmp_path, n_days=150)
        out = tmp_path / "fit.json"
        result = runner.invoke(main, ["estimate", str(ticks), "--out", str(out)])
        assert result.exit_code == 0, result.output
        doc = json.loads(out.read_text())
        assert abs(doc["kappa"] - 0.5) < 0.15
        total = doc["mu"] + doc["mu_c"]
        assert abs(total - 16.0) / 16.0 < 0.15
        assert (tmp_path / "fit_signature.csv").exists()
        assert (tmp_path / "fit_epps.csv").exists()
        loaded = ModelParams.from_dict(doc)
        assert loaded.grid.n_products == 4

    def test_malformed_row_fails_with_line(self, runner, tmp_path):
        ticks = tmp_path / "bad.csv"
        ticks.write_text("delivery_date,product,timestamp_s,price\n"
                         "2022-01-01,1,3600,50.0\n"
                         "2022-01-01,1,xyz,51.0\n")
        result = runner.invoke(main, ["estimate", str(ticks),
                                      "--out", str(tmp_path / "o.json")])
        assert result.exit_code == 2
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert "line 3" in err["error"]["message"]

    def test_rolling_weekly_eight_weeks_gives_five_rows(self, runner, tmp_path):
        import pandas as pd
        # 56 days starting on a Tuesday: first Monday with a full trailing
        # 28-day window is day 28
        _, _, ticks, _, _ = synth_inputs(tmp_path, n_products=2, n_days=56,
                                         start=dt.date(2022, 1, 4))
        out = tmp_path / "fit.json"
        result = runner.invoke(main, ["estimate", str(ticks), "--rolling",
                                      "weekly", "--out", str(out)])
        assert result.exit_code == 0, result.output
        rolling = pd.read_csv(tmp_path / "fit_rolling.csv")
        assert len(rolling) == 5
        assert list(rolling.columns) == ["week_start", "kappa", "mu", "mu_c",
                                         "sigma_proxy", "rho_proxy"]


class TestValueAndBacktest:
    def test_p_out_of_range_rejected(self, runner, tmp_path):
        params = small_params(tmp_path)
        battery = tmp_path / "battery.json"
        battery.write_text(json.dumps({"capacity_mwh": 2, "f0": [100.0] * 3}))
        result = runner.invoke(main, ["value", str(params), str(battery),
                                      "--p", "7", "--n-paths", "500",
                                      "--out", str(tmp_path / "pol.npz")])
        assert result.exit_code == 2

    def test_missing_f0_rejected(self, runner, tmp_path):
        params = small_params(tmp_path)
        battery = tmp_path / "battery.json"
        battery.write_text(json.dumps({"capacity_mwh": 2}))
        result = runner.invoke(main, ["value", str(params), str(battery),
                                      "--p", "2", "--n-paths", "500",
                                      "--out", str(tmp_path / "pol.npz")])
        assert result.exit_code == 2

    def test_tiny_path_count_warns(self, runner, tmp_path):
        params = small_params(tmp_path)
        battery = tmp_path / "battery.json"
        battery.write_text(json.dumps(
            {"capacity_mwh": 2, "f0": [100.0, 100.0, 100.0]}))
        with pytest.warns(UserWarning, match="floor"):
            result = runner.invoke(main, [
                "value", str(params), str(battery), "--p", "2",
                "--n-paths", "300", "--seed", "3",
                "--out", str(tmp_path / "pol.npz")])
        assert result.exit_code == 0, result.output

    def test_value_then_backtest_pipeline(self, runner, tmp_path):
        import pandas as pd
        p, f0_arr, ticks, spot, params_file = synth_inputs(tmp_path, n_days=12)
        battery = tmp_path / "battery.json"
        battery.write_text(json.dumps(
            {"capacity_mwh": 2, "power_mw": 1, "efficiency": 0.92,
             "f0": list(f0_arr), "p": 2, "n_paths": 4000, "seed": 11}))
        pol = tmp_path / "policy.npz"
        result = runner.invoke(main, ["value", str(params_file), str(battery),
                                      "--out", str(pol)])
        assert result.exit_code == 0, result.output
        value_doc = json.loads((tmp_path / "policy_value.json").read_text())
        assert value_doc["p"] == 2
        assert value_doc["optimisation_value_eur"] > 0

        daily_out = tmp_path / "daily.csv"
        result = runner.invoke(main, ["backtest", str(pol), str(ticks),
                                      str(spot), "--out", str(daily_out)])
        assert result.exit_code == 0, result.output
        daily = pd.read_csv(daily_out)
        assert len(daily) == 2 * 12  # policy row + spot row per day
        assert set(daily.strategy) == {"poisson", "spot"}
        summary = pd.read_csv(tmp_path / "daily_summary.csv")
        assert list(summary.columns) == ["year", "p", "spot", "poisson",
                                         "diffusion"]


class TestReport:
    def test_empty_inputs_header_only(self, runner, tmp_path):
        out = tmp_path / "report.csv"
        result = runner.invoke(main, ["report", "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.read_text().strip() == "year,p,spot,poisson,diffusion"

    def test_merges_p_values(self, runner, tmp_path):
        import pandas as pd
        files = []
        for i, p_val in enumerate((1, 3, 5)):
            daily = pd.DataFrame({
                "delivery_date": ["2022-01-01", "2022-01-02"],
                "p": [p_val] * 2,
                "strategy": ["poisson"] * 2,
                "gain": [10.0 + i, 20.0 + i],
                "fallbacks": [0, 0],
            })
            f = tmp_path / f"daily_{p_val}.csv"
            daily.to_csv(f, index=False)
            files.append(str(f))
        out = tmp_path / "report.csv"
        result = runner.invoke(main, ["report", *files, "--out", str(out)])
        assert result.exit_code == 0, result.output
        table = pd.read_csv(out)
        assert len(table) == 3
        assert sorted(table.p) == [1, 3, 5]

    def test_duplicate_day_rejected(self, runner, tmp_path):
        import pandas as pd
        daily = pd.DataFrame({
            "delivery_date": ["2022-01-01"], "p": [3],
            "strategy": ["poisson"], "gain": [1.0], "fallbacks": [0]})
        f1 = tmp_path / "a.csv"
        f2 = tmp_path / "b.csv"
        daily.to_csv(f1, index=False)
        daily.to_csv(f2, index=False)
        result = runner.invoke(main, ["report", str(f1), str(f2),
                                      "--out", str(tmp_path / "r.csv")])
        assert result.exit_code == 2
        err = json.loads(result.stderr.strip().splitlines()[-1])
        assert "duplicate day" in err["error"]["message"]

    def test_json_format(self, runner, tmp_path):
        out = tmp_path / "report.json"
        result = runner.invoke(main, ["report", "--format", "json",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert json.loads(out.read_text()) == []


class TestManifest:
    def test_manifest_fields(self, runner, tmp_path):
        params = small_params(tmp_path)
        out = tmp_path / "batch.csv"
        result = runner.invoke(main, ["simulate", str(params), "--n-paths", "2",
                                      "--seed", "5", "--threads", "2",
                                      "--out", str(out)])
        assert result.exit_code == 0, result.output
        doc = json.loads((tmp_path / "batch.csv.manifest.json").read_text())
        assert doc["subcommand"] == "simulate"
        assert doc["master_seed"] == 5
        assert doc["threads"] == 2
        assert doc["params_hash"] == hashlib.sha256(
            params.read_bytes()).hexdigest()
        assert "units" in doc


class TestThreadCountInvariance:
    def test_simulate_hash_stable_across_thread_env(self, tmp_path):
        params = small_params(tmp_path)
        hashes = []
        for threads, blas in (("1", "1"), ("4", "4")):
            out = tmp_path / f"batch_{threads}.bin"
            env = {"OPENBLAS_NUM_THREADS": blas, "OMP_NUM_THREADS": blas,
                   "PATH": "/usr/bin:/bin:/usr/local/bin"}
            proc = subprocess.run(
                [sys.executable, "-m", "intraday_shock.cli", "simulate",
                 str(params), "--n-paths", "40", "--seed", "3",
                 "--threads", threads, "--out", str(out)],
                capture_output=True, env=env, text=True)
            assert proc.returncode == 0, proc.stderr
            hashes.append(hashlib.sha256(out.read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]
