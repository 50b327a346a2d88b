"""Reduced-scale oracle and invariant suites behind ``barrier-subsim validate``.

Every check looks functions up through their module at call time, so a
patched implementation (for example a sign-flipped performance function)
is what gets validated.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps

from . import analytic, contract as contract_mod, mcs, mlmc, mma, model, stats, subsim
from ._kernels import mma_sweep

SEED = 20_240_614


def _close(a, b, rel=1e-12, abs_=0.0):
    return math.isclose(a, b, rel_tol=rel, abs_tol=abs_)


def suite_model():
    p = model.GbmParams(100, 0.1, 0.2, 250)
    z = np.zeros(250)
    z[0] = 1.0
    s1 = model.evolve(p, z)[0]
    expect = 100 * math.exp(0.08 * 0.004 + 0.2 * math.sqrt(0.004))
    yield "exact step", _close(s1, expect, 1e-14)
    flat = model.evolve(p.replace(sigma=0.0), np.random.default_rng(1).standard_normal(250))
    yield "zero volatility", np.allclose(flat, 100 * np.exp(0.1 * p.dt * np.arange(1, 251)), rtol=1e-13)
    a = model.sample_normal_vector(250, model.RngStream(SEED, 3))
    b = model.sample_normal_vector(250, model.RngStream(SEED, 3))
    yield "stream determinism", np.array_equal(a, b)
    draws = model.sample_normal_vector(1, model.RngStream(SEED, 4), size=100_000).ravel()
    yield "normal KS", sps.kstest(draws, "norm").pvalue > 0.01


def suite_performance():
    c = contract_mod.BarrierContract(90, 110, 100, 0.1)
    perf = contract_mod.performance
    yield "upper breach", perf(c, [105.0, 115.0, 108.0]) == -5.0
    yield "strike floor", perf(c, [105.0, 108.0, 95.0]) == -5.0
    yield "inside", perf(c, [100.0, 95.0, 104.0]) == 0.0
    yield "touching survives", perf(c, [90.0, 110.0, 100.0]) == 0.0
    rng = np.random.default_rng(SEED)
    paths = 100 * np.exp(np.cumsum(0.03 * rng.standard_normal((2000, 12)), axis=1))
    g = perf(c, paths)
    yield "non-positive", bool(np.all(np.asarray(g) <= 0))
    pay = np.where(np.asarray(g) >= 0, paths[:, -1] - 100, 0.0)
    alive = np.all((paths >= 90) & (paths <= 110), axis=1) & (paths[:, -1] >= 100)
    yield "payoff form", np.array_equal(pay, np.where(alive, np.maximum(paths[:, -1] - 100, 0), 0.0))


def suite_mcs():
    p = model.GbmParams(100, 0.1, 0.3, 1)
    c = contract_mod.BarrierContract(80, 135, 100, 0.1)
    exact = analytic.single_date_probability(p, c)
    est = mcs.estimate_mcs(p, c, 200_000, model.RngStream(SEED, 10))
    se = math.sqrt(exact * (1 - exact) / est.total_samples)
    yield "closed-form oracle", abs(est.p_hat - exact) <= 3 * se
    yield "theoretical CV", _close(mcs.mcs_theoretical_cv(0.5, 2), math.sqrt(0.5), 1e-15)


def suite_mma():
    def score(z):
        return float(np.asarray(z)[0] - 1.5)

    prop = mma.MmaProposal(1.0)
    gen = model.RngStream(SEED, 20).generator()
    chain = mma.run_chain(np.array([1.6]), 100_000, 0.0, score, prop, gen)
    states = np.array([s[0] for s, _ in chain[::20]])
    trunc = sps.truncnorm(1.5, np.inf)
    yield "closure", all(g >= 0 for _, g in chain)
    yield "truncated-normal KS", sps.kstest(states, trunc.cdf).pvalue > 0.01

    p = model.GbmParams(100, 0.1, 0.2, 20)
    c = contract_mod.BarrierContract(80, 120, 100, 0.1)
    rng = np.random.default_rng(SEED)
    z = rng.standard_normal((64, 20))
    g, sn = mcs.score_paths(p, c, z)
    thr = float(np.quantile(g, 0.3))
    keep = g >= thr
    z, g, sn = z[keep].copy(), g[keep].copy(), sn[keep].copy()
    noise, unif = rng.standard_normal(z.shape), rng.random(z.shape)
    ref = []
    for i in range(len(z)):
        psi = z[i] + 0.5 * noise[i]
        cand = np.where(unif[i] < np.exp(0.5 * (z[i] ** 2 - psi**2)), psi, z[i])
        cg = contract_mod.performance(c, model.evolve(p, cand))
        ref.append(cand if cg >= thr else z[i])
    lo, up = c.barriers(20)
    acc = np.zeros(len(z), dtype=bool)
    mma_sweep(z, g, sn, noise, unif, 0.5, thr, p.s0, p.log_drift, p.log_vol, lo, up,
              c.terminal_floor(20), acc)
    yield "compiled sweep", np.allclose(z, np.array(ref), rtol=0, atol=0)


def suite_subsim():
    g = np.array([-1.0, -2, -3, -4, -5, -6])
    yield "threshold", subsim.alpha_threshold(g, 1 / 3, 6) == -2.5
    yield "total samples", subsim.total_samples(50_000, 0.1, 5) == 230_000
    p = model.GbmParams(100, 0.1, 0.3, 1)
    c = contract_mod.BarrierContract(60, 200, 170, 0.1)
    exact = analytic.single_date_probability(p, c)
    cfg = subsim.SubSimConfig(m=2000, beta=0.1, proposal=mma.MmaProposal(1.0))
    summ = stats.replicate("subsim", cfg, p, c, 20, SEED)
    yield "closed-form oracle", abs(summ.mean_p - exact) <= 3 * summ.se_p


def suite_bridge():
    rng = np.random.default_rng(SEED)
    ok_max = ok_min = True
    for _ in range(5):
        lo, up = 90.0, 110.0
        a, c = rng.uniform(92, 108, size=2)
        b, h = rng.uniform(5, 40), rng.uniform(0.002, 0.05)
        n = 200_000
        mx = mlmc.sample_bridge_maximum(a, c, b, h, rng, size=n)
        mn = mlmc.sample_bridge_minimum(a, c, b, h, rng, size=n)
        pu = 1 - math.exp(-2 * (up - a) * (up - c) / (b * b * h))
        pl = math.exp(-2 * (a - lo) * (c - lo) / (b * b * h))
        ok_max &= abs((mx <= up).mean() - pu) <= 3 * math.sqrt(pu * (1 - pu) / n) + 1e-12
        ok_min &= abs((mn <= lo).mean() - pl) <= 3 * math.sqrt(pl * (1 - pl) / n) + 1e-12
    yield "maximum duality", bool(ok_max)
    yield "minimum duality", bool(ok_min)
    v = mlmc.survival_prob_fine(100, 100, 200, 1 / 250, 110, 90)
    yield "fine survival", _close(v, (1 - math.exp(-1.25)) ** 2, 1e-13)
    v = mlmc.survival_prob_coarse(100, 100, 100, 200, 1 / 250, 110, 90)
    yield "coarse survival", _close(v, (1 - math.exp(-1.25)) ** 4, 1e-13)


def suite_mlmc():
    p = model.GbmParams(100, 0.1, 0.0, 250)
    c = contract_mod.BarrierContract(60, 140, 100, 0.1)
    f, cc, _, _ = mlmc.mlmc_level_sample(2, p, c, mlmc.MlmcConfig(n0=4, refine=2), 1, 3)
    # Euler-type compounding (1 + mu h)^n on both grids, close to 100 e^0.1 - 100
    target = 100 * math.exp(0.1) - 100
    yield "zero volatility", np.allclose(f, target, rtol=0.02) and np.allclose(cc, target, rtol=0.02)
    p = model.GbmParams(100, 0.1, 0.2, 1)
    c = contract_mod.BarrierContract(1e-6, 1e6, 100, 0.1)
    cfg = mlmc.MlmcConfig(n0=64, refine=2, n_levels=1, samples_per_level=(100_000,))
    res = mlmc.run_mlmc(p, c, cfg, model.RngStream(SEED, 30))
    vanilla = mcs.estimate_mcs(p, c, 100_000, model.RngStream(SEED, 31))
    se = math.hypot(res.price_se, 15.0 / math.sqrt(100_000))
    yield "vanilla limit", abs(res.price_hat - vanilla.price_hat) <= 3 * se


def suite_stats():
    recs = [stats.RunRecord(i, 0.5, 2.0, 10) for i in range(5)]
    s = stats.summarise("mcs", recs, reference=1.5)
    yield "constant estimator", s.cv_price == 0 and _close(s.mse_price, 0.25)
    x = np.random.default_rng(SEED).normal(3, 1, 50)
    identity = stats.mse(x, 2.5) - (x.var() + (x.mean() - 2.5) ** 2)
    yield "mse identity", abs(identity) <= 8 * np.finfo(float).eps * stats.mse(x, 2.5)
    p = np.logspace(-8, -2, 6)
    fit = stats.fit_complexity(p, 5.0 / np.abs(np.log(p)) ** 3, "mse")
    yield "exact recovery", abs(fit.k_exp - 3) < 1e-6


SUITES = {
    "model": suite_model,
    "performance": suite_performance,
    "mcs": suite_mcs,
    "mma": suite_mma,
    "subsim": suite_subsim,
    "bridge": suite_bridge,
    "mlmc": suite_mlmc,
    "stats": suite_stats,
}


def run_suites(names=None) -> list[tuple[str, bool, str]]:
    """Run the named suites (all by default); returns ``(suite, ok, detail)``."""
    names = list(names or SUITES)
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown suite {n!r}; available: {', '.join(SUITES)}")
    out = []
    for n in names:
        try:
            checks = list(SUITES[n]())
        except Exception as exc:  # a crashing suite is a failing suite
            out.append((n, False, f"raised {type(exc).__name__}: {exc}"))
            continue
        failed = [c for c, ok in checks if not ok]
        detail = f"{len(checks) - len(failed)}/{len(checks)} checks" + (
            f"; failed: {', '.join(failed)}" if failed else "")
        out.append((n, not failed, detail))
    return out
