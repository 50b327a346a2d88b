"""Replication harness and estimator-quality metrics.

``replicate`` runs an estimator on independent keyed streams and summarises
the spread of its outputs. The complexity helpers turn summaries over a grid
of execution probabilities into the power-law fits of MSE and cost.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .contract import BarrierContract
from .mcs import McsConfig, estimate_mcs
from .mlmc import BudgetExceededError, MlmcConfig, run_mlmc
from .model import GbmParams, RngStream
from .subsim import NonConvergenceError, SubSimConfig, ThresholdStagnationError, run_subsim

METHODS = ("mcs", "subsim", "mlmc")
# spawn-key prefix per method, so methods sharing a seed draw independent streams
_METHOD_KEY = {"mcs": 1, "subsim": 2, "mlmc": 3}
MAX_FAILURE_RATE = 0.05

RECOVERABLE = (NonConvergenceError, ThresholdStagnationError, BudgetExceededError)


@dataclass(frozen=True)
class RunRecord:
    index: int
    p_hat: float
    price_hat: float
    total_samples: float
    levels: int = 1
    flagged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def cv(values) -> float:
    """Sample standard deviation over ``|mean|``; NaN when the mean is 0."""
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        return float("nan")
    mean = x.mean()
    if mean == 0:
        return float("nan")
    return float(x.std(ddof=1) / abs(mean))


def mse(values, reference: float) -> float:
    """Mean squared deviation of ``values`` from ``reference``."""
    x = np.asarray(values, dtype=float)
    if x.size < 1:
        raise ValueError("mse needs at least one value")
    if not math.isfinite(reference):
        raise ValueError("reference must be finite")
    return float(np.mean((x - reference) ** 2))


@dataclass
class ReplicationSummary:
    """Cross-run statistics for one estimator on one configuration.

    ``mse_price`` and ``bias_price`` are NaN unless a reference price is
    given. CV fields are NaN when the mean is zero.
    """

    method: str
    n_runs: int
    n_failures: int
    mean_p: float
    cv_p: float
    mean_price: float
    cv_price: float
    mean_total_samples: float
    reference: float = float("nan")
    mse_price: float = float("nan")
    bias_price: float = float("nan")
    records: list[RunRecord] = field(default_factory=list, repr=False)

    @property
    def failure_rate(self) -> float:
        return self.n_failures / self.n_runs

    @property
    def ok_records(self) -> list[RunRecord]:
        return [r for r in self.records if r.ok]

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.ok_records], dtype=float)

    @property
    def se_p(self) -> float:
        x = self.values("p_hat")
        return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")

    @property
    def se_price(self) -> float:
        x = self.values("price_hat")
        return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")

    @property
    def any_flagged(self) -> bool:
        return any(r.flagged for r in self.ok_records)


def summarise(method: str, records: list[RunRecord], reference: float | None = None) -> ReplicationSummary:
    records = sorted(records, key=lambda r: r.index)
    good = [r for r in records if r.ok]
    p = np.array([r.p_hat for r in good], dtype=float)
    price = np.array([r.price_hat for r in good], dtype=float)
    samples = np.array([r.total_samples for r in good], dtype=float)
    nan = float("nan")
    out = ReplicationSummary(
        method=method,
        n_runs=len(records),
        n_failures=len(records) - len(good),
        mean_p=float(p.mean()) if good else nan,
        cv_p=cv(p),
        mean_price=float(price.mean()) if good else nan,
        cv_price=cv(price),
        mean_total_samples=float(samples.mean()) if good else nan,
        records=records,
    )
    if reference is not None and good:
        out.reference = float(reference)
        out.mse_price = mse(price, reference)
        out.bias_price = float(price.mean() - reference)
    return out


def make_config(method: str, options: dict | None = None):
    """Build the estimator config for ``method`` from plain keyword options."""
    options = dict(options or {})
    if method == "mcs":
        return McsConfig(**options)
    if method == "subsim":
        return SubSimConfig(**options)
    if method == "mlmc":
        if isinstance(options.get("samples_per_level"), list):
            options["samples_per_level"] = tuple(options["samples_per_level"])
        return MlmcConfig(**options)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def run_once(method: str, config, params: GbmParams, contract: BarrierContract,
             stream: RngStream, index: int) -> RunRecord:
    """One estimator run; recoverable estimator errors become failure records."""
    try:
        if method == "mcs":
            est = estimate_mcs(params, contract, config, stream)
            return RunRecord(index, est.p_hat, est.price_hat, est.total_samples, 1, est.zero_hits)
        if method == "subsim":
            res = run_subsim(params, contract, config, stream)
            return RunRecord(index, res.p_hat, res.price_hat, res.total_samples, res.L)
        if method == "mlmc":
            res = run_mlmc(params, contract, config, stream)
            return RunRecord(index, res.p_hat, res.price_hat, res.total_cost / params.n_steps,
                             config.n_levels, res.flagged)
    except RECOVERABLE as exc:
        nan = float("nan")
        return RunRecord(index, nan, nan, nan, 0, False, f"{type(exc).__name__}: {exc}")
    raise ValueError(f"unknown method {method!r}")


def run_stream(master_seed: int, method: str, index: int) -> RngStream:
    return RngStream(master_seed, (_METHOD_KEY[method], index))


def _task(args):
    method, config, params, contract, master_seed, index = args
    return run_once(method, config, params, contract, run_stream(master_seed, method, index), index)


def replicate(method: str, config, params: GbmParams, contract: BarrierContract, n_runs: int,
              master_seed: int, workers: int = 1, reference: float | None = None) -> ReplicationSummary:
    """Run an estimator ``n_runs`` times on independent streams.

    Run ``i`` always uses the stream ``(method, i)`` under ``master_seed``,
    so the summary is identical for any ``workers`` count.
    """
    if n_runs < 2:
        raise ValueError(f"n_runs must be >= 2, got {n_runs}")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    if config is None or isinstance(config, dict):
        config = make_config(method, config)
    tasks = [(method, config, params, contract, master_seed, i) for i in range(n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_task, tasks))
    else:
        records = [_task(t) for t in tasks]
    return summarise(method, records, reference)


def cv_ratio(a: ReplicationSummary, b: ReplicationSummary) -> tuple[float, float]:
    """How many times more accurate ``a`` is than ``b``: ``(cv_p_b / cv_p_a, cv_price_b / cv_price_a)``."""
    def ratio(num, den):
        return num / den if den and math.isfinite(den) and math.isfinite(num) else float("nan")
    return ratio(b.cv_p, a.cv_p), ratio(b.cv_price, a.cv_price)


def cv_ratio_table(points, summaries: dict[str, list[ReplicationSummary]],
                   pairs: list[tuple[str, str]] | None = None) -> list[dict]:
    """Per-grid-point CV ratios for each ``(method_a, method_b)`` pair.

    ``points`` is a list of dicts describing each grid point (copied into
    the rows); ``summaries[method][i]`` belongs to ``points[i]``.
    """
    methods = list(summaries)
    if len(methods) < 2:
        raise ValueError("cv_ratio_table needs at least two methods")
    if pairs is None:
        pairs = [(a, b) for i, a in enumerate(methods) for b in methods[i + 1:]]
    rows = []
    for i, point in enumerate(points):
        for a, b in pairs:
            rp, rv = cv_ratio(summaries[a][i], summaries[b][i])
            rows.append({**point, "method_a": a, "method_b": b,
                         "p_hat_cv_ratio": rp, "price_cv_ratio": rv})
    return rows


# ---------------------------------------------------------------------------
# Complexity fits


@dataclass(frozen=True)
class ComplexityParams:
    """Fitted scaling exponents; fields not determined by a fit are NaN.

    ``k_exp = r_exp - 1`` always holds; ``c1`` is the MSE constant and
    ``c2`` the cost constant.
    """

    r_exp: float
    c1: float = float("nan")
    c2: float = float("nan")
    gamma: float = float("nan")
    d: float = float("nan")

    @property
    def k_exp(self) -> float:
        return self.r_exp - 1.0


def _loglog_fit(x, y) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 4:
        raise ValueError("a scaling fit needs at least 4 points")
    if np.unique(x).size < 2 or np.ptp(x) == 0:
        raise ValueError("a scaling fit needs spread in the abscissa")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("fitted quantities must be positive and finite")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def fit_complexity(p_e, values, mode: str) -> ComplexityParams:
    """Least-squares power law in ``|log p_E|``.

    ``mode="mse"`` fits ``MSE = c1 |log p_E|^-k`` and ``mode="cost"`` fits
    ``cost = c2 |log p_E|^r``.
    """
    p_e = np.asarray(p_e, dtype=float)
    if np.any((p_e <= 0) | (p_e >= 1)):
        raise ValueError("execution probabilities must lie in (0, 1)")
    slope, intercept = _loglog_fit(np.abs(np.log(p_e)), values)
    if mode == "mse":
        return ComplexityParams(r_exp=-slope + 1.0, c1=math.exp(intercept))
    if mode == "cost":
        return ComplexityParams(r_exp=slope, c2=math.exp(intercept))
    raise ValueError(f"mode must be 'mse' or 'cost', got {mode!r}")


def fit_inverse_probability_exponent(p_e, cost) -> float:
    """Exponent ``a`` in ``cost ∝ p_E^-a`` (1 for plain Monte Carlo)."""
    slope, _ = _loglog_fit(p_e, cost)
    return -slope


def fixed_cv_cost(summary: ReplicationSummary, target_cv: float) -> float:
    """Samples the estimator would need for price CV ``target_cv``.

    Uses the ``1/samples`` scaling of the squared CV.
    """
    return summary.mean_total_samples * summary.cv_price**2 / target_cv**2


def fixed_cv_mse(summary: ReplicationSummary, target_cv: float, m: int) -> float:
    """Relative MSE scale ``1 / m_needed`` at price CV ``target_cv``.

    ``m_needed = m * cv**2 / target_cv**2`` is the per-level sample size
    that would reach the target, and the MSE bound is ``O(1 / m_needed)``.
    """
    return 1.0 / (m * summary.cv_price**2 / target_cv**2)
