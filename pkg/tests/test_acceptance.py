"""Acceptance criteria.

Each test runs one criterion at its stated tolerance and registers a
PASS/FAIL line (printed in the terminal summary).  Monte Carlo sizes follow
the stated budgets; seeds are fixed so the suite is deterministic.
"""
import datetime as dt
import hashlib
import itertools
import json
import math

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from intraday_shock.model import (InitialPrices, JumpLaw, MaturityGrid,
                                  ModelParams, common_jump_probability,
                                  expected_covariation, hourly_grid)
from intraday_shock.rng import path_rng
from intraday_shock.simulation import (SimConfig, sample_onto_grid,
                                       simulate_batch, simulate_decomposition,
                                       simulate_price_matrix,
                                       simulate_thinning)
from intraday_shock.estimation import estimate, make_synthetic_dataset
from intraday_shock.battery import (BatterySpec, backtest, backtest_campaign,
                                    cashflow, optimize, save_policy,
                                    spot_strategy)
from conftest import ACCEPTANCE_LINES, day_ahead_shape, law_de_2022, law_fr_2019
from stat_helpers import two_sample_chisquare

DE_2022 = dict(kappa=0.50, mu=71.96, mu_c=65.68)
FR_2019 = dict(kappa=0.36, mu=7.12, mu_c=2.57)


def _criterion(number: int, label: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    line = f"criterion {number:2d} [{status}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Reusable criterion computations (criterion 12 reruns them with a different
# thread cap and compares output bytes)
# ---------------------------------------------------------------------------

MOMENT_SETS = [
    ("de-2022", dict(**DE_2022, law=law_de_2022())),
    ("fr-2019", dict(**FR_2019, law=law_fr_2019())),
    ("flat", dict(kappa=0.0, mu=3.0, mu_c=2.0, law=JumpLaw((1.0,), (1.0,)))),
    ("pure-common", dict(kappa=0.8, mu=0.0, mu_c=4.0,
                         law=JumpLaw((1.0, 2.0), (0.6, 0.4)))),
    ("independent", dict(kappa=1.2, mu=5.0, mu_c=0.0,
                         law=JumpLaw((0.5, 1.5), (0.5, 0.5)))),
]


def run_moment_oracle(threads: int):
    """Criterion 1 computation: 1e4 thinning paths per parameter set,
    realized covariations on [0, 8] against the closed form."""
    grid3 = MaturityGrid((9.0, 10.0, 11.0))
    f0 = InitialPrices.flat(100.0, 3)
    rows = []
    means = []
    with threadpool_limits(threads):
        for name, cfg in MOMENT_SETS:
            params = ModelParams(kappa=cfg["kappa"], mu=cfg["mu"],
                                 mu_c=cfg["mu_c"], grid=grid3,
                                 jump_law=cfg["law"])
            n = 10_000
            grid_times = np.arange(0.5, 8.01, 0.5)
            values = {pair: np.empty(n) for pair in ((1, 1), (2, 2), (1, 2))}
            for i in range(n):
                path = simulate_thinning(params, f0, path_rng(20220101, i))
                gp = sample_onto_grid(path, grid_times)
                incr = np.diff(np.concatenate(
                    [np.full((3, 1), 100.0), gp.prices], axis=1), axis=1)
                values[(1, 1)][i] = (incr[0] ** 2).sum()
                values[(2, 2)][i] = (incr[1] ** 2).sum()
                values[(1, 2)][i] = (incr[0] * incr[1]).sum()
            for (k, l), sample in values.items():
                target = expected_covariation(params, k, l, 0.0, 8.0)
                se = sample.std(ddof=1) / math.sqrt(n)
                z = (sample.mean() - target) / se if se > 0 else 0.0
                rows.append((name, k, l, sample.mean(), target, z))
                means.append(sample.mean())
    canonical = np.asarray(means).tobytes()
    return rows, canonical


def make_de_dataset():
    params = ModelParams(grid=hourly_grid(24), jump_law=law_de_2022(),
                         **DE_2022)
    f0 = InitialPrices.flat(150.0, 24)
    return params, make_synthetic_dataset(params, f0, 1000, 20220106)


def run_estimation_recovery(dataset, threads: int):
    """Criterion 6 computation: full moment pipeline on the fixed synthetic
    dataset."""
    with threadpool_limits(threads):
        fitted = estimate(dataset)
    canonical = json.dumps(fitted.to_dict(), sort_keys=True).encode()
    return fitted, canonical


def run_valuation(tmp_path, threads: int):
    """Criterion 9 computation: train the 2h battery at p=3 on 50k paths."""
    params = ModelParams(grid=hourly_grid(24), jump_law=law_de_2022(),
                         **DE_2022)
    f0_arr = day_ahead_shape(24)
    f0 = InitialPrices(tuple(f0_arr))
    spec = BatterySpec(capacity_mwh=2, power_mw=1, efficiency=0.92)
    with threadpool_limits(threads):
        policy, value = optimize(params, f0, spec, 3, 50_000, 1234, "poisson")
    out = tmp_path / f"policy_threads{threads}.npz"
    save_policy(policy, str(out))
    return params, f0_arr, policy, value, out.read_bytes()


# ---------------------------------------------------------------------------
# Session fixtures shared across criteria
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def moment_oracle_run():
    return run_moment_oracle(threads=1)


@pytest.fixture(scope="session")
def de_dataset():
    return make_de_dataset()


@pytest.fixture(scope="session")
def recovery_run(de_dataset):
    _, dataset = de_dataset
    return run_estimation_recovery(dataset, threads=1)


@pytest.fixture(scope="session")
def valuation_run(tmp_path_factory):
    return run_valuation(tmp_path_factory.mktemp("valuation"), threads=1)


@pytest.fixture(scope="session")
def backtest_days(valuation_run):
    params, f0_arr, _, _, _ = valuation_run
    f0 = InitialPrices(tuple(f0_arr))
    return make_synthetic_dataset(params, f0, 250, 999,
                                  start_date=dt.date(2022, 1, 3))


@pytest.fixture(scope="session")
def campaign_report(valuation_run, backtest_days):
    params, f0_arr, _, _, _ = valuation_run
    monday = dt.date(2022, 1, 3)
    spot = {s.delivery_date: f0_arr for s in backtest_days.sessions}
    return backtest_campaign(
        backtest_days, [(monday, params)], spot,
        BatterySpec(capacity_mwh=2, power_mw=1, efficiency=0.92),
        p_list=[1, 3, 4, 5], n_paths=50_000, seed=1234,
        generators=("poisson", "diffusion"))


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_01_moment_oracle(moment_oracle_run):
    rows, _ = moment_oracle_run
    worst = max(abs(r[5]) for r in rows)
    ok = worst < 3.0
    _criterion(1, "realized covariation matches the closed form",
               ok, f"15 (set, pair) checks over 1e4 thinning paths, "
                   f"worst |z| = {worst:.2f} < 3")


def test_criterion_02_generator_equivalence(params_pair):
    f0 = InitialPrices.flat(50.0, 2)
    n = 100_000
    sample_a, sample_b = [], []
    for i in range(n):
        a = simulate_thinning(params_pair, f0, path_rng(20220102, i))
        b = simulate_decomposition(params_pair, f0, path_rng(20220103, i))
        sample_a.append(a.signed_counts(1) + a.signed_counts(2))
        sample_b.append(b.signed_counts(1) + b.signed_counts(2))
    p_value = two_sample_chisquare(sample_a, sample_b)
    ok = p_value > 0.01
    _criterion(2, "thinning and layer decomposition agree in law",
               ok, f"joint terminal counts, 1e5 paths each, "
                   f"chi-square p = {p_value:.3f} > 0.01")


def _common_jump_frequency(params, group1, group2, u, t, n_trials, seed):
    """Vectorized acceptance-rejection of the shared '+' measure on [u, t]:
    frequency of 'every product of group1 jumps, none of group2 does'."""
    rng = path_rng(seed, 0)
    mats = np.asarray(params.grid.maturities)
    counts = rng.poisson(params.mu_c * (t - u), size=n_trials)
    total = int(counts.sum())
    times = rng.uniform(u, t, size=total)
    heights = rng.uniform(0.0, params.mu_c, size=total)
    trial = np.repeat(np.arange(n_trials), counts)
    far = max(group1) - 1
    block = min(group2) - 1
    hit_far = heights <= params.mu_c * np.exp(-params.kappa * (mats[far] - times))
    hit_block = heights <= params.mu_c * np.exp(-params.kappa
                                                * (mats[block] - times))
    far_only = np.bincount(trial[hit_far & ~hit_block], minlength=n_trials)
    blocked = np.bincount(trial[hit_block], minlength=n_trials)
    return float(((far_only > 0) & (blocked == 0)).mean())


def test_criterion_03_common_jump_probability():
    grid3 = MaturityGrid((9.0, 10.0, 11.0))
    law = JumpLaw((1.0,), (1.0,))
    n = 1_000_000
    configs = [
        (ModelParams(kappa=0.5, mu=0.0, mu_c=1.0, grid=grid3, jump_law=law),
         [1], [2], 0.0, 1.0),
        (ModelParams(kappa=0.7, mu=0.0, mu_c=2.0, grid=grid3, jump_law=law),
         [1, 2], [3], 0.5, 2.0),
        (ModelParams(kappa=0.9, mu=0.0, mu_c=1.5, grid=grid3, jump_law=law),
         [1], [3], 0.0, 3.0),
    ]
    details = []
    ok = True
    for seed, (params, g1, g2, u, t) in enumerate(configs, start=31):
        prob = common_jump_probability(params, g1, g2, u, t, "+")
        freq = _common_jump_frequency(params, g1, g2, u, t, n, seed)
        se = math.sqrt(prob * (1 - prob) / n)
        z = (freq - prob) / se
        ok = ok and abs(z) < 3.0
        details.append(f"z={z:+.2f}")
    # interleaved groups: the closed form is null and no realization can
    # produce the event
    params = configs[0][0]
    prob_null = common_jump_probability(params, [2], [1], 0.0, 1.0)
    freq_null = _common_jump_frequency(params, [2], [1], 0.0, 1.0, 200_000, 34)
    ok = ok and prob_null == 0.0 and freq_null == 0.0
    _criterion(3, "common-jump probability matches Monte Carlo",
               ok, f"1e6 trials per configuration, {', '.join(details)}, "
                   f"interleaved case exactly null")


def test_criterion_04_martingale():
    params = ModelParams(kappa=0.5, mu=0.8, mu_c=0.5,
                         grid=MaturityGrid((9.0, 10.0)),
                         jump_law=JumpLaw((1.0, 2.0), (0.7, 0.3)))
    f0 = InitialPrices.flat(100.0, 2)
    grid_times = np.asarray([1.0, 3.0, 5.0, 7.0, 8.0])
    n = 100_000
    worst = 0.0
    for gen, seed in (("thinning", 20220104), ("decomposition", 20220105)):
        drift = np.empty((n, grid_times.size))
        for i, gp in enumerate(simulate_batch(
                params, f0, SimConfig(n, seed, gen), grid_times)):
            drift[i] = gp.prices[0] - 100.0
        for j in range(grid_times.size):
            se = drift[:, j].std(ddof=1) / math.sqrt(n)
            worst = max(worst, abs(drift[:, j].mean()) / se if se else 0.0)
    ok = worst < 3.0
    _criterion(4, "prices are driftless for both generators",
               ok, f"1e5 paths x 5 grid times x 2 generators, "
                   f"worst |z| = {worst:.2f} < 3")


def test_criterion_05_diffusion_limit_convergence():
    # The model's population correlation equals the limit matrix at every
    # intensity scale; convergence in law shows up as the shrinking
    # dispersion of the realized correlation.  We measure the mean absolute
    # gap of per-block correlation estimates from the limit value.
    kappa, mu_t, muc_t = 0.5, 0.0014, 0.0028
    grid2 = MaturityGrid((9.0, 10.0))
    law = JumpLaw((1.0,), (1.0,))
    f0 = InitialPrices.flat(0.0, 2)
    rho = muc_t / (mu_t + muc_t) * math.exp(-kappa / 2)
    n_paths, block = 160_000, 4000
    gaps = []
    for i, scale in enumerate((1, 10, 100)):
        params = ModelParams(kappa=kappa, mu=scale * mu_t, mu_c=scale * muc_t,
                             grid=grid2, jump_law=law)
        X = simulate_price_matrix(params, f0, np.asarray([8.0]), n_paths,
                                  20220100 + 10 * i, "thinning")
        u, v = X[:, 0, 0], X[:, 1, 0]
        block_gaps = []
        for b in range(n_paths // block):
            ub = u[b * block:(b + 1) * block]
            vb = v[b * block:(b + 1) * block]
            if ub.std() == 0 or vb.std() == 0:
                continue
            block_gaps.append(abs(np.corrcoef(ub, vb)[0, 1] - rho))
        gaps.append(float(np.mean(block_gaps)))
    ok = gaps[0] > gaps[1] > gaps[2] and gaps[2] < 0.02
    _criterion(5, "terminal correlation approaches the diffusion limit",
               ok, "mean |corr gap| at n=1,10,100: "
                   + ", ".join(f"{g:.4f}" for g in gaps)
                   + f"; final {gaps[2]:.4f} < 0.02")


def test_criterion_06_parameter_recovery(recovery_run):
    fitted, _ = recovery_run
    law = law_de_2022()
    fitted_map = dict(zip(fitted.params.jump_law.sizes,
                          fitted.params.jump_law.probs))
    tv = 0.5 * sum(abs(fitted_map.get(s, 0.0) - p)
                   for s, p in zip(law.sizes, law.probs))
    tv += 0.5 * sum(p for s, p in fitted_map.items() if s not in law.sizes)
    kappa_err = abs(fitted.params.kappa - 0.50)
    mu_sum_rel = abs(fitted.mu_sum - 137.64) / 137.64
    ratio_rel = abs(fitted.mu_ratio - 0.4772) / 0.4772
    ok = kappa_err <= 0.05 and mu_sum_rel <= 0.10 and ratio_rel <= 0.10 \
        and tv < 0.01
    _criterion(6, "moment pipeline recovers the generating parameters",
               ok, f"D=1000: |kappa-0.5|={kappa_err:.4f}<=0.05, "
                   f"mu_sum rel err {mu_sum_rel:.3%}<=10%, "
                   f"mu_ratio rel err {ratio_rel:.3%}<=10%, TV={tv:.4f}<0.01")


def test_criterion_07_correlation_structure_shape(recovery_run):
    fitted, _ = recovery_run
    kappa_hat = fitted.params.kappa
    rho = fitted.rho_pairs
    M = rho.shape[0]
    by_gap: dict[int, list[float]] = {}
    for l in range(M):
        for m in range(l + 1, M):
            if math.isfinite(rho[l, m]):
                by_gap.setdefault(m - l, []).append(rho[l, m])
    gaps = np.asarray(sorted(by_gap))
    curve = np.asarray([np.mean(by_gap[g]) for g in gaps])
    decay = np.exp(-0.5 * kappa_hat * gaps)
    amplitude = float((curve * decay).sum() / (decay * decay).sum())
    target = 65.68 / 137.64
    rel = abs(amplitude - target) / target
    ok = rel <= 0.10
    _criterion(7, "pairwise correlations follow a*exp(-kappa*gap/2)",
               ok, f"least-squares amplitude {amplitude:.4f} vs "
                   f"mu_c/(mu+mu_c)={target:.4f}, rel err {rel:.3%} <= 10%")


def test_criterion_08_spot_dp_exactness():
    spec = BatterySpec(capacity_mwh=1, power_mw=1, efficiency=0.92)
    rng = path_rng(20220108, 0)
    worst = 0.0
    for _ in range(100):
        prices = rng.uniform(5.0, 120.0, 6)
        _, value = spot_strategy(prices, spec)
        best = -math.inf
        for seq in itertools.product((-1, 0, 1), repeat=6):
            stock, total, feasible = 0, 0.0, True
            for c, price in zip(seq, prices):
                stock += c
                if not 0 <= stock <= 1:
                    feasible = False
                    break
                total += cashflow(c, price, 0.92)
            if feasible and total > best:
                best = total
        worst = max(worst, abs(value - best))
    ok = worst < 1e-9
    _criterion(8, "deterministic dispatch equals exhaustive enumeration",
               ok, f"100 random 6-step instances (3^6 sequences each), "
                   f"max |difference| = {worst:.1e}")


def test_criterion_09_battery_in_model_consistency(valuation_run,
                                                   backtest_days):
    _, f0_arr, policy, value, _ = valuation_run
    gains = np.asarray([backtest(policy, s, f0_arr).gain
                        for s in backtest_days.sessions])
    se = gains.std(ddof=1) / math.sqrt(gains.size)
    z = (gains.mean() - value) / se
    ok = abs(z) < 3.0
    _criterion(9, "backtest gain agrees with the optimisation value",
               ok, f"50k training paths, 250 fresh days: mean gain "
                   f"{gains.mean():.2f} vs value {value:.2f} EUR, "
                   f"|z| = {abs(z):.2f} < 3")


def test_criterion_10_p_shape_and_spot_ordering(campaign_report):
    annual = campaign_report.annual
    spot = float(annual["spot"].iloc[0])
    poisson = {int(row.p): float(row.poisson) for row in annual.itertuples()}
    increase = poisson[1] < poisson[3]
    plateau = abs(poisson[5] - poisson[4]) / abs(poisson[4])
    beats_spot = all(poisson[p] > spot for p in (3, 4, 5))
    ok = increase and plateau < 0.05 and beats_spot
    _criterion(10, "annual gain grows with p then flattens, beating the "
                   "day-ahead dispatch",
               ok, f"annual gains p=1..5: {poisson[1]:.0f} < {poisson[3]:.0f}"
                   f", p4->p5 change {plateau:.2%} < 5%, spot {spot:.0f} "
                   f"beaten for p>=3")


def test_criterion_11_generator_valuation_parity(campaign_report):
    annual = campaign_report.annual
    rels = []
    for row in annual.itertuples():
        if row.poisson != 0:
            rels.append(abs(row.diffusion - row.poisson) / abs(row.poisson))
    worst = max(rels)
    ok = worst < 0.02
    _criterion(11, "jump-trained and diffusion-trained policies earn alike",
               ok, f"annual gains per p agree within {worst:.3%} < 2%")


def test_criterion_12_determinism(moment_oracle_run, de_dataset, recovery_run,
                                  valuation_run, tmp_path):
    _, moments_a = moment_oracle_run
    _, moments_b = run_moment_oracle(threads=4)
    _, dataset = de_dataset
    _, recovery_a = recovery_run
    _, recovery_b = run_estimation_recovery(dataset, threads=4)
    *_, value_a_bytes = valuation_run
    *_, value_b_bytes = run_valuation(tmp_path, threads=4)
    pairs = {
        "moment oracle": (moments_a, moments_b),
        "estimation": (recovery_a, recovery_b),
        "valuation policy": (value_a_bytes, value_b_bytes),
    }
    mismatch = [name for name, (a, b) in pairs.items() if _sha(a) != _sha(b)]
    ok = not mismatch
    _criterion(12, "criteria 1, 6 and 9 outputs are thread-count invariant",
               ok, "sha256 equal across thread caps 1 and 4 for "
                   + ", ".join(pairs) if ok else f"mismatch in {mismatch}")
