"""Multilevel Monte Carlo for the double knock-out call.

Paths are discretised with the Milstein scheme on grids of ``n0 * refine**l``
steps. Instead of a hard barrier check, each interval contributes the
Brownian-bridge probability of staying inside the corridor given its two
endpoints, which smooths the payoff and keeps level corrections small. The
coarse path of a level is driven by the summed fine increments, and its
interval midpoints are interpolated from the same increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .contract import BarrierContract, discount
from .model import GbmParams, RngStream, as_generator

MAX_BLOCK_ELEMENTS = 2_000_000


class BudgetExceededError(RuntimeError):
    """Adaptive MLMC could not reach its target CV within the cost budget."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class MlmcConfig:
    """Level hierarchy and sample allocation.

    ``budget`` is expressed in full-resolution path equivalents: the total
    cost allowance is ``budget * params.n_steps`` Milstein steps. When
    ``samples_per_level`` is a sequence those counts are used as-is;
    otherwise it is the pilot size per level and the remaining budget is
    split in proportion to ``sqrt(V_l / C_l)``. Setting ``target_cv``
    switches to adaptive mode, where samples are added until the estimated
    CV of the price drops below it (``budget`` then caps the cost).
    ``objective="probability"`` allocates on the variance of the execution
    probability instead (and the adaptive target then applies to it).
    """

    n0: int = 1
    refine: int = 2
    n_levels: int = 8
    target_cv: float | None = None
    samples_per_level: int | tuple[int, ...] = 2000
    budget: int = 200_000
    coarse_half_step: bool = True
    diffusion_scale: str = "local"
    monitoring: str = "continuous"
    objective: str = "price"

    def __post_init__(self):
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")
        if self.refine < 2 or self.refine % 2:
            raise ValueError("refine must be an even integer >= 2")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")
        if self.target_cv is not None and not self.target_cv > 0:
            raise ValueError("target_cv must be positive")
        if self.diffusion_scale not in ("local", "initial"):
            raise ValueError("diffusion_scale must be 'local' or 'initial'")
        if self.monitoring not in ("continuous", "discrete"):
            raise ValueError("monitoring must be 'continuous' or 'discrete'")
        if self.objective not in ("price", "probability"):
            raise ValueError("objective must be 'price' or 'probability'")
        if not isinstance(self.samples_per_level, int):
            counts = tuple(int(c) for c in self.samples_per_level)
            if len(counts) != self.n_levels or min(counts) < 2:
                raise ValueError("samples_per_level needs one count >= 2 per level")
            if self.target_cv is not None:
                raise ValueError("fixed per-level counts cannot be combined with target_cv")
            object.__setattr__(self, "samples_per_level", counts)
        elif self.samples_per_level < 2:
            raise ValueError("pilot sample count must be >= 2")

    def steps(self, level: int) -> int:
        return self.n0 * self.refine**level


@dataclass
class MlmcResult:
    price_hat: float
    p_hat: float
    level_means: np.ndarray
    level_vars: np.ndarray
    level_samples: np.ndarray
    level_costs: np.ndarray
    total_cost: float
    cv_hat: float
    price_se: float
    p_level_means: np.ndarray = field(repr=False)
    p_level_vars: np.ndarray = field(repr=False)
    p_se: float = float("nan")
    consistent: bool = True

    @property
    def flagged(self) -> bool:
        """True when the estimate should not be trusted at face value.

        Raised when the coarse payoff of some level disagrees with the fine
        payoff of the level below (the telescoping sum is then biased) or
        the estimated CV exceeds 10%.
        """
        return (not self.consistent) or not self.cv_hat <= 0.1

    @property
    def total_samples(self) -> int:
        """Fine-path equivalents; used for cross-method bookkeeping."""
        return int(self.level_samples.sum())


# ---------------------------------------------------------------------------
# Brownian-bridge building blocks


def _check_bridge(b, h):
    if np.any(np.asarray(h) <= 0):
        raise ValueError("time step h must be positive")
    if np.any(np.asarray(b) <= 0):
        raise ValueError("diffusion scale b must be positive")


def _stay_below(a, c, upper, var_h):
    return 1.0 - np.exp(-2.0 * (upper - a) * (upper - c) / var_h)


def _stay_above(a, c, lower, var_h):
    return 1.0 - np.exp(-2.0 * (a - lower) * (c - lower) / var_h)


def survival_prob_fine(s_i, s_ip1, b, h, upper, lower):
    """Probability that the bridge between two grid values stays in ``(L, U)``.

    Zero when either endpoint is on or beyond a barrier.
    """
    _check_bridge(b, h)
    s_i, s_ip1 = np.asarray(s_i, float), np.asarray(s_ip1, float)
    var_h = np.asarray(b, float) ** 2 * h
    with np.errstate(over="ignore", invalid="ignore"):
        p = _stay_below(s_i, s_ip1, upper, var_h) * _stay_above(s_i, s_ip1, lower, var_h)
    inside = (s_i > lower) & (s_i < upper) & (s_ip1 > lower) & (s_ip1 < upper)
    p = np.where(inside, np.clip(p, 0.0, 1.0), 0.0)
    return float(p) if p.ndim == 0 else p


def survival_prob_coarse(s_i, s_mid, s_ip1, b, h, upper, lower):
    """Coarse-interval survival built from two half-interval bridges.

    ``h`` is used as given in every factor; pass half the coarse step for
    the half-step convention.
    """
    _check_bridge(b, h)
    s_i, s_mid, s_ip1 = (np.asarray(x, float) for x in (s_i, s_mid, s_ip1))
    var_h = np.asarray(b, float) ** 2 * h
    with np.errstate(over="ignore", invalid="ignore"):
        p = (_stay_below(s_i, s_mid, upper, var_h) * _stay_below(s_mid, s_ip1, upper, var_h)
             * _stay_above(s_i, s_mid, lower, var_h) * _stay_above(s_mid, s_ip1, lower, var_h))
    inside = np.ones(np.shape(p), dtype=bool)
    for x in (s_i, s_mid, s_ip1):
        inside &= (x > lower) & (x < upper)
    p = np.where(inside, np.clip(p, 0.0, 1.0), 0.0)
    return float(p) if p.ndim == 0 else p


def _bridge_radical(s_i, s_ip1, b, h, x):
    return np.sqrt((s_ip1 - s_i) ** 2 - 2.0 * b**2 * h * np.log(x))


def _uniform_open_left(gen, size):
    # X ~ U(0, 1]: log X must stay finite
    return 1.0 - gen.random(size)


def sample_bridge_maximum(s_i, s_ip1, b, h, rng, size=None, x=None):
    """Sample the maximum of a Brownian bridge with the given endpoints.

    ``x`` overrides the uniform draw (useful for checking the inverse map).
    """
    _check_bridge(b, h)
    if x is None:
        x = _uniform_open_left(as_generator(rng), size)
    return 0.5 * (s_i + s_ip1 + _bridge_radical(s_i, s_ip1, b, h, x))


def sample_bridge_minimum(s_i, s_ip1, b, h, rng, size=None, x=None):
    """Sample the minimum of a Brownian bridge with the given endpoints."""
    _check_bridge(b, h)
    if x is None:
        x = _uniform_open_left(as_generator(rng), size)
    return 0.5 * (s_i + s_ip1 - _bridge_radical(s_i, s_ip1, b, h, x))


# ---------------------------------------------------------------------------
# Level sampling


def _constant_barriers(contract: BarrierContract) -> tuple[float, float]:
    if contract.lower.ndim or contract.upper.ndim:
        raise ValueError("multilevel pricing supports constant barriers only")
    return float(contract.lower), float(contract.upper)


def _monitor_stride(level_steps: int, params: GbmParams, config: MlmcConfig) -> int:
    if config.monitoring == "continuous":
        return 0
    if config.n0 % params.n_steps:
        raise ValueError(
            f"discrete monitoring needs n0 to be a multiple of n_steps={params.n_steps}"
        )
    return level_steps // params.n_steps


def mlmc_level_sample(level: int, params: GbmParams, contract: BarrierContract,
                      config: MlmcConfig, rng, n_samples: int = 1):
    """Undiscounted fine and coarse payoffs for ``n_samples`` coupled paths.

    Returns ``(fine, coarse, fine_digital, coarse_digital)``; the digital
    arrays carry the survival-weighted indicator of finishing at or above
    strike. At level 0 the coarse arrays are zero.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    lower, upper = _constant_barriers(contract)
    gen = as_generator(rng)
    nf = config.steps(level)
    hf = params.maturity / nf
    stride = _monitor_stride(nf, params, config)
    block = max(1, MAX_BLOCK_ELEMENTS // nf)
    outs = [np.empty(n_samples) for _ in range(4)]
    for start in range(0, n_samples, block):
        stop = min(n_samples, start + block)
        dw = gen.standard_normal((stop - start, nf)) * math.sqrt(hf)
        _kernels.mlmc_level(
            dw, float(params.s0), float(params.mu), float(params.sigma), hf,
            int(config.refine), lower, upper, float(contract.strike),
            level > 0, bool(config.coarse_half_step),
            config.diffusion_scale == "local", stride,
            *(o[start:stop] for o in outs),
        )
    return tuple(outs)


class _LevelAccumulator:
    """Running sums for one level: correction, digital correction, and the
    fine and coarse payoffs separately (for the consistency check)."""

    def __init__(self):
        self.n = 0
        # y, y^2, yd, yd^2, fine, fine^2, coarse, coarse^2
        self.sums = np.zeros(8)

    def add(self, fine, coarse, dfine, dcoarse):
        y = fine - coarse
        yd = dfine - dcoarse
        self.n += y.size
        self.sums += (y.sum(), (y * y).sum(), yd.sum(), (yd * yd).sum(),
                      fine.sum(), (fine * fine).sum(), coarse.sum(), (coarse * coarse).sum())

    def _mv(self, k):
        n = self.n
        mean = self.sums[k] / n
        return mean, max(self.sums[k + 1] / n - mean**2, 0.0) * n / max(n - 1, 1)

    def moments(self):
        return (*self._mv(0), *self._mv(2))

    def fine(self):
        return self._mv(4)

    def coarse(self):
        return self._mv(6)


def _level_cost(config: MlmcConfig, level: int) -> int:
    return config.steps(level) + (config.steps(level - 1) if level else 0)


def _optimal_counts(variances, costs, cost_budget):
    weights = np.sqrt(variances * costs)
    total = weights.sum()
    if total == 0:
        return np.zeros_like(variances)
    return cost_budget * np.sqrt(variances / costs) / total


def run_mlmc(params: GbmParams, contract: BarrierContract, config: MlmcConfig | None = None,
             rng=None) -> MlmcResult:
    """Telescoping MLMC estimate of the discounted option price.

    Level streams are derived from ``rng`` when it is an :class:`RngStream`
    (one child per level and batch), so results do not depend on how the
    samples are batched internally.
    """
    config = config or MlmcConfig()
    contract.check_model(params)
    stream = rng if isinstance(rng, RngStream) else RngStream(
        int(as_generator(rng).integers(2**63)))
    n_levels = config.n_levels
    costs = np.array([_level_cost(config, l) for l in range(n_levels)], dtype=float)
    accs = [_LevelAccumulator() for _ in range(n_levels)]
    batches = [0] * n_levels

    def draw(level, count):
        if count <= 0:
            return
        sub = stream.child(level, batches[level])
        batches[level] += 1
        accs[level].add(*mlmc_level_sample(level, params, contract, config, sub, int(count)))

    if not isinstance(config.samples_per_level, int):
        for level, count in enumerate(config.samples_per_level):
            draw(level, count)
    else:
        for level in range(n_levels):
            draw(level, config.samples_per_level)
        cost_budget = float(config.budget) * params.n_steps
        col = 1 if config.objective == "price" else 3
        if config.target_cv is None:
            variances = np.array([a.moments()[col] for a in accs])
            wanted = np.floor(_optimal_counts(variances, costs, cost_budget))
            for level in range(n_levels):
                draw(level, int(wanted[level]) - accs[level].n)
        else:
            _adaptive(accs, costs, cost_budget, config, draw, params, contract, col)

    return _summarise(accs, costs, params, contract)


def _adaptive(accs, costs, cost_budget, config, draw, params, contract, col=1):
    for _ in range(50):
        moments = np.array([a.moments() for a in accs])
        means, variances = moments[:, col - 1], moments[:, col]
        price = abs(means.sum())
        counts = np.array([a.n for a in accs], dtype=float)
        if price > 0 and math.sqrt((variances / counts).sum()) <= config.target_cv * price:
            return
        if price == 0:
            wanted = 2 * counts
        else:
            eps2 = (config.target_cv * price) ** 2
            wanted = np.ceil(np.sqrt(variances / costs) * np.sqrt(variances * costs).sum() / eps2)
        wanted = np.maximum(wanted, counts)
        extra = np.minimum(wanted - counts, np.maximum(counts, 1.0))  # at most double per round
        spent = (counts * costs).sum()
        if spent + (extra * costs).sum() > cost_budget:
            partial = _summarise(accs, costs, params, contract)
            raise BudgetExceededError(
                f"target CV {config.target_cv} not reached within cost budget "
                f"{cost_budget:.3g} (estimated CV {partial.cv_hat:.3g})", partial)
        for level, e in enumerate(extra):
            draw(level, int(e))
    partial = _summarise(accs, costs, params, contract)
    raise BudgetExceededError("adaptive MLMC did not converge in 50 rounds", partial)


def _summarise(accs, costs, params, contract) -> MlmcResult:
    moments = np.array([a.moments() for a in accs])
    counts = np.array([a.n for a in accs])
    disc = math.exp(-contract.rate * contract.maturity)
    means, variances = moments[:, 0] * disc, moments[:, 1] * disc**2
    price = float(means.sum())
    se = float(math.sqrt((variances / counts).sum()))
    p_means, p_vars = moments[:, 2], moments[:, 3]
    consistent = True
    for lvl in range(1, len(accs)):
        mf, vf = accs[lvl - 1].fine()
        mc, vc = accs[lvl].coarse()
        gap_se = math.sqrt(vf / accs[lvl - 1].n + vc / accs[lvl].n)
        if abs(mf - mc) > 3.0 * gap_se + 1e-12 * max(abs(mf), abs(mc)):
            consistent = False
    return MlmcResult(
        consistent=consistent,
        price_hat=price,
        p_hat=float(p_means.sum()),
        level_means=means,
        level_vars=variances,
        level_samples=counts,
        level_costs=costs,
        total_cost=float((counts * costs).sum()),
        cv_hat=se / abs(price) if price else float("inf"),
        price_se=se,
        p_level_means=p_means,
        p_level_vars=p_vars,
        p_se=float(math.sqrt((p_vars / counts).sum())),
    )


def with_budget(config: MlmcConfig, budget: int) -> MlmcConfig:
    return replace(config, budget=int(budget))
