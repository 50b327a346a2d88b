"""Plain Monte Carlo baseline for the execution probability and the price."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .contract import BarrierContract, discount
from .model import GbmParams, RngStream, as_generator

# rows per random block; fixed so that results never depend on batching
BLOCK_ROWS = 8192


@dataclass(frozen=True)
class McsConfig:
    m: int = 50_000

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be an integer >= 1, got {self.m}")


@dataclass(frozen=True)
class McEstimate:
    """Outcome of one plain Monte Carlo run.

    ``terminal_mean_in_E`` is NaN when no sample landed in the event; the
    price is then reported as 0 and :attr:`zero_hits` is set.
    """

    p_hat: float
    price_hat: float
    n_hits: int
    total_samples: int
    terminal_mean_in_E: float

    @property
    def zero_hits(self) -> bool:
        return self.n_hits == 0


def score_paths(params: GbmParams, contract: BarrierContract, z) -> tuple[np.ndarray, np.ndarray]:
    """Performance and terminal price of each row of ``z`` (compiled)."""
    lo, up = contract.barriers(params.n_steps)
    floor = contract.terminal_floor(params.n_steps)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != params.n_steps:
        raise ValueError(f"normal vectors have length {z.shape[1]}, expected {params.n_steps}")
    return _kernels.scores(z, params.s0, params.log_drift, params.log_vol, lo, up, floor)


def _as_stream(rng) -> RngStream:
    if isinstance(rng, RngStream):
        return rng
    return RngStream(int(as_generator(rng).integers(2**63)))


def estimate_mcs(params: GbmParams, contract: BarrierContract, m: int | McsConfig, rng) -> McEstimate:
    """Estimate ``p_E`` and the discounted price from ``m`` independent paths.

    Samples are drawn in fixed-size blocks, each from its own child stream of
    ``rng``, so the estimate depends only on the stream and ``m``.
    """
    m = m.m if isinstance(m, McsConfig) else int(m)
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    contract.check_model(params)
    stream = _as_stream(rng)
    hits = 0
    terminal_sum = 0.0
    for block, start in enumerate(range(0, m, BLOCK_ROWS)):
        rows = min(BLOCK_ROWS, m - start)
        z = stream.child(block).generator().standard_normal((rows, params.n_steps))
        g, sn = score_paths(params, contract, z)
        inside = g >= 0
        hits += int(inside.sum())
        terminal_sum += float(sn[inside].sum())
    p_hat = hits / m
    if hits == 0:
        return McEstimate(0.0, 0.0, 0, m, float("nan"))
    terminal_mean = terminal_sum / hits
    price = discount(p_hat * (terminal_mean - contract.strike), contract.rate, contract.maturity)
    return McEstimate(p_hat, price, hits, m, terminal_mean)


def mcs_theoretical_cv(p: float, m: int) -> float:
    """CV of the Monte Carlo probability estimator, ``sqrt((1 - p) / (m p))``."""
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return math.sqrt((1.0 - p) / (m * p))
