"""Geometric Brownian motion on a fixed monitoring grid.

A trajectory is a deterministic function of a vector of i.i.d. standard
normal inputs ``z``; all the estimators in this package work either on that
``z``-space (Monte Carlo, Subset Simulation) or on Brownian increments
(multilevel Monte Carlo).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GbmParams:
    """Constant-coefficient GBM sampled at ``n_steps`` equally spaced dates.

    Parameters
    ----------
    s0 : float
        Spot price, strictly positive.
    mu : float
        Drift per year.
    sigma : float
        Volatility per square-root year, non-negative.
    n_steps : int
        Number of monitoring dates ``N`` on ``(0, T]``.
    maturity : float
        Horizon ``T`` in years.
    """

    s0: float
    mu: float
    sigma: float
    n_steps: int
    maturity: float = 1.0

    def __post_init__(self):
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be an integer >= 1, got {self.n_steps}")
        if not self.maturity > 0:
            raise ValueError(f"maturity must be > 0, got {self.maturity}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.maturity / self.n_steps

    @property
    def log_drift(self) -> float:
        """Per-step drift of ``log S``: ``(mu - sigma**2 / 2) * dt``."""
        return (self.mu - 0.5 * self.sigma**2) * self.dt

    @property
    def log_vol(self) -> float:
        """Per-step standard deviation of ``log S``: ``sigma * sqrt(dt)``."""
        return self.sigma * math.sqrt(self.dt)

    def replace(self, **changes) -> "GbmParams":
        fields = dict(s0=self.s0, mu=self.mu, sigma=self.sigma,
                      n_steps=self.n_steps, maturity=self.maturity)
        fields.update(changes)
        return GbmParams(**fields)


@dataclass(frozen=True)
class RngStream:
    """A keyed, reproducible source of random draws.

    The same ``(master_seed, stream_id)`` always yields the same sequence;
    different ids give statistically independent sequences (they are mapped
    to distinct :class:`numpy.random.SeedSequence` spawn keys).
    """

    master_seed: int
    stream_id: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if isinstance(self.stream_id, int):
            object.__setattr__(self, "stream_id", (self.stream_id,))
        else:
            object.__setattr__(self, "stream_id", tuple(int(k) for k in self.stream_id))
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in an unsigned 64-bit integer")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_id + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=self.stream_id)
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngStream`, a ``Generator`` or an integer seed."""
    if isinstance(rng, np.random.Generator) or hasattr(rng, "standard_normal"):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def sample_normal_vector(n: int, rng, size: int | None = None) -> np.ndarray:
    """Draw i.i.d. standard normal inputs of length ``n``.

    With ``size`` given, returns a ``(size, n)`` batch of such vectors.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    gen = as_generator(rng)
    shape = (n,) if size is None else (size, n)
    return gen.standard_normal(shape)


def evolve(params: GbmParams, z) -> np.ndarray:
    """Map normal inputs to prices ``S_1..S_N`` with the exact lognormal step.

    ``S_n = S_{n-1} * exp(log_drift + log_vol * z_n)``, applied sequentially
    from ``s0``. ``z`` may be a single vector of length ``N`` or a batch with
    trailing dimension ``N``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] != params.n_steps:
        raise ValueError(
            f"normal vector length {z.shape[-1] if z.ndim else 0} does not match "
            f"n_steps={params.n_steps}"
        )
    growth = np.exp(params.log_drift + params.log_vol * z)
    start = np.full(z.shape[:-1] + (1,), params.s0)
    return np.multiply.accumulate(np.concatenate([start, growth], axis=-1), axis=-1)[..., 1:]
