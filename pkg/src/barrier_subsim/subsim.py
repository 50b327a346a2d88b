"""Subset Simulation for the execution probability and price.

The execution event ``{g = 0}`` is reached through nested events
``{g >= alpha_1} ⊃ {g >= alpha_2} ⊃ ...`` whose thresholds are set
adaptively so that each holds with conditional probability ``beta``. The
``beta * m`` best samples of a level seed Modified Metropolis chains that
populate the next one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .contract import BarrierContract, discount
from .mcs import _as_stream, score_paths
from .mma import MmaProposal
from .model import GbmParams


class NonConvergenceError(RuntimeError):
    """The event was not reached within ``max_levels`` levels."""

    def __init__(self, message, levels):
        super().__init__(message)
        self.levels = levels


class ThresholdStagnationError(RuntimeError):
    """An intermediate threshold failed to increase."""

    def __init__(self, message, levels):
        super().__init__(message)
        self.levels = levels


def _integral(x: float, tol: float = 1e-9) -> int | None:
    r = round(x)
    return int(r) if abs(x - r) <= tol * max(1.0, abs(x)) else None


@dataclass(frozen=True)
class SubSimConfig:
    """Samples per level ``m``, level probability ``beta`` and level cap."""

    m: int = 50_000
    beta: float = 0.1
    max_levels: int = 20
    proposal: MmaProposal = field(default_factory=MmaProposal)

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m}")
        n_seeds = _integral(self.beta * self.m)
        if n_seeds is None or n_seeds < 1:
            raise ValueError(f"beta*m must be a positive integer, got {self.beta * self.m:g}")
        if _integral(1.0 / self.beta) is None:
            raise ValueError(f"1/beta must be an integer (chain length), got {1.0 / self.beta:g}")
        if self.max_levels < 1:
            raise ValueError(f"max_levels must be >= 1, got {self.max_levels}")
        if isinstance(self.proposal, dict):
            object.__setattr__(self, "proposal", MmaProposal(**self.proposal))

    @property
    def n_seeds(self) -> int:
        return _integral(self.beta * self.m)

    @property
    def chain_length(self) -> int:
        return _integral(1.0 / self.beta)


@dataclass(frozen=True)
class LevelRecord:
    """One level of a run. ``alpha`` is 0 on the final level."""

    level_index: int
    alpha: float
    conditional_prob: float
    n_in_E: int
    acceptance_rate: float = float("nan")


@dataclass
class SubSimResult:
    p_hat: float
    expected_terminal: float
    price_hat: float
    levels: list[LevelRecord]
    L: int
    m_star: int
    total_samples: int

    @property
    def m_E(self) -> int:
        # same count as m_star: final-level samples in the event
        return self.m_star


def alpha_threshold(sorted_g, beta: float, m: int) -> float:
    """Midpoint between the ``beta*m``-th and next largest performance values."""
    g = np.asarray(sorted_g, dtype=float)
    k = _integral(beta * m)
    if k is None or k < 1:
        raise ValueError("beta*m must be a positive integer")
    if k + 1 > m or g.size < k + 1:
        raise ValueError(f"need at least beta*m + 1 = {k + 1} values, got {min(m, g.size)}")
    return 0.5 * (g[k - 1] + g[k])


def total_samples(m: int, beta: float, L: int) -> int:
    """Samples drawn by a run with ``L`` levels: ``m + m(1 - beta)(L - 1)``."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    return int(round(m + m * (1.0 - beta) * (L - 1)))


def subsim_theoretical_cv(p: float, M: float, beta: float, gamma: float = 0.0, d: float = 2.0) -> float:
    """Approximate CV of the probability estimate for ``M`` total samples.

    ``gamma`` absorbs chain correlation; ``2 <= d <= 3``.
    """
    if not 0 < p < 1:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if not 0 < beta < 1:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not 2 <= d <= 3:
        raise ValueError(f"d must lie in [2, 3], got {d}")
    num = (1 + gamma) * (1 - beta) * abs(math.log(p)) ** d
    return math.sqrt(num / (M * beta * abs(math.log(beta)) ** d))


def _propagate(z_seeds, g_seeds, sn_seeds, threshold, config, params, contract, stream, level):
    """Grow one chain per seed; returns the level's ``m`` states chain by chain."""
    n_seeds, n = z_seeds.shape
    length = config.chain_length
    lo, up = contract.barriers(n)
    floor = contract.terminal_floor(n)
    z = np.ascontiguousarray(z_seeds, dtype=float).copy()
    g = g_seeds.copy()
    sn = sn_seeds.copy()
    z_out = np.empty((n_seeds, length, n))
    g_out = np.empty((n_seeds, length))
    sn_out = np.empty((n_seeds, length))
    accepted = np.zeros(n_seeds, dtype=bool)
    n_accepted = 0
    for step in range(length):
        if step:
            gen = stream.child(level, step).generator()
            noise = gen.standard_normal((n_seeds, n))
            unif = gen.random((n_seeds, n))
            _kernels.mma_sweep(z, g, sn, noise, unif, config.proposal.spread, threshold,
                               params.s0, params.log_drift, params.log_vol, lo, up, floor, accepted)
            n_accepted += int(accepted.sum())
        z_out[:, step] = z
        g_out[:, step] = g
        sn_out[:, step] = sn
    moves = n_seeds * (length - 1)
    rate = n_accepted / moves if moves else float("nan")
    return z_out.reshape(-1, n), g_out.reshape(-1), sn_out.reshape(-1), rate


def run_subsim(params: GbmParams, contract: BarrierContract, config: SubSimConfig | None = None,
               rng=None) -> SubSimResult:
    """One Subset Simulation run.

    Raises
    ------
    NonConvergenceError
        If ``max_levels`` levels pass without enough samples in the event.
    ThresholdStagnationError
        If a threshold does not strictly exceed the previous one.
    """
    config = config or SubSimConfig()
    contract.check_model(params)
    stream = _as_stream(rng)
    m, beta, n_seeds = config.m, config.beta, config.n_seeds

    z = stream.child(0, 0).generator().standard_normal((m, params.n_steps))
    g, sn = score_paths(params, contract, z)
    levels: list[LevelRecord] = []
    prev_alpha = -math.inf
    rate = float("nan")
    for level in range(config.max_levels):
        order = np.argsort(-g, kind="stable")
        n_in = int(np.count_nonzero(g >= 0))
        if n_in >= n_seeds:
            levels.append(LevelRecord(level, 0.0, n_in / m, n_in, rate))
            L = level + 1
            p_hat = beta ** (L - 1) * n_in / m
            terminal = float(sn[g >= 0].mean())
            price = discount(p_hat * (terminal - contract.strike), contract.rate, contract.maturity)
            return SubSimResult(p_hat, terminal, price, levels, L, n_in, total_samples(m, beta, L))
        alpha = alpha_threshold(g[order], beta, m)
        if not alpha > prev_alpha:
            raise ThresholdStagnationError(
                f"threshold {alpha:g} at level {level} does not exceed {prev_alpha:g}", levels)
        levels.append(LevelRecord(level, alpha, beta, n_in, rate))
        prev_alpha = alpha
        if level + 1 == config.max_levels:
            break
        seeds = order[:n_seeds]
        z, g, sn, rate = _propagate(z[seeds], g[seeds], sn[seeds], alpha, config, params,
                                    contract, stream, level + 1)
    raise NonConvergenceError(
        f"event not reached after {config.max_levels} levels "
        f"(last threshold {prev_alpha:g})", levels)
