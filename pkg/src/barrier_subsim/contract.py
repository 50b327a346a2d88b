"""Double knock-out call: terms, payoff and the performance function.

The performance function ``g`` scores how far a trajectory is from paying
off. Each monitoring date contributes the (negative) distance by which the
price sits outside its corridor; at maturity the strike replaces the lower
barrier. ``g <= 0`` always, and ``g == 0`` exactly on the execution event.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import GbmParams


@dataclass(frozen=True, eq=False)
class BarrierContract:
    """Discretely monitored double knock-out call.

    Barriers may be scalars or length-``N`` vectors; scalars are broadcast
    against the monitoring grid when the contract meets its model.
    Touching a barrier does not knock the option out.
    """

    lower: float | np.ndarray
    upper: float | np.ndarray
    strike: float
    rate: float
    maturity: float = 1.0

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim > 1 or upper.ndim > 1:
            raise ValueError("barriers must be scalars or 1-d vectors")
        if lower.ndim == 1 and upper.ndim == 1 and lower.shape != upper.shape:
            raise ValueError("lower and upper barrier vectors differ in length")
        if np.any(np.broadcast_to(lower, np.broadcast_shapes(lower.shape, upper.shape))
                  >= np.broadcast_to(upper, np.broadcast_shapes(lower.shape, upper.shape))):
            raise ValueError("lower barrier must be strictly below upper barrier at every date")
        if not self.strike > 0:
            raise ValueError(f"strike must be > 0, got {self.strike}")
        if not self.strike < float(np.atleast_1d(upper)[-1]):
            raise ValueError("strike must lie below the terminal upper barrier")
        if not self.maturity > 0:
            raise ValueError(f"maturity must be > 0, got {self.maturity}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "strike", float(self.strike))

    def barriers(self, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(lower, upper)`` as length-``n_steps`` arrays."""
        lo = np.broadcast_to(self.lower, (n_steps,)) if self.lower.ndim == 0 else self.lower
        up = np.broadcast_to(self.upper, (n_steps,)) if self.upper.ndim == 0 else self.upper
        if lo.shape[0] != n_steps or up.shape[0] != n_steps:
            raise ValueError(
                f"barrier vectors have length {lo.shape[0]}, monitoring grid has {n_steps} dates"
            )
        return np.ascontiguousarray(lo, dtype=float), np.ascontiguousarray(up, dtype=float)

    def check_model(self, params: GbmParams) -> None:
        """Validate the contract against a model before pricing."""
        self.barriers(params.n_steps)
        if not math.isclose(self.maturity, params.maturity, rel_tol=1e-12):
            raise ValueError(
                f"contract maturity {self.maturity} differs from model maturity {params.maturity}"
            )
        lo0 = float(np.atleast_1d(self.lower)[0])
        up0 = float(np.atleast_1d(self.upper)[0])
        if not lo0 <= params.s0 <= up0:
            warnings.warn(
                f"spot {params.s0} lies outside the first corridor [{lo0}, {up0}]",
                stacklevel=2,
            )

    def terminal_floor(self, n_steps: int) -> float:
        """Lower bound applied at maturity: the strike, or the barrier if higher."""
        lo, _ = self.barriers(n_steps)
        return max(float(lo[-1]), self.strike)


def _check_path(contract: BarrierContract, path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = np.asarray(path, dtype=float)
    if s.ndim == 0:
        raise ValueError("path must have at least one monitoring date")
    lo, up = contract.barriers(s.shape[-1])
    return s, lo, up


def performance(contract: BarrierContract, path) -> np.ndarray | float:
    """Performance ``g(S)`` of one path or a batch of paths (last axis = time)."""
    s, lo, up = _check_path(contract, path)
    lo = lo.copy()
    lo[-1] = contract.terminal_floor(s.shape[-1])
    g = np.where(s > up, up - s, np.where(s < lo, s - lo, 0.0)).sum(axis=-1)
    return float(g) if np.ndim(g) == 0 else g


def in_event(contract: BarrierContract, path) -> np.ndarray | bool:
    """True where the path survives every date and ends at or above strike."""
    g = performance(contract, path)
    if np.ndim(g) == 0:
        return bool(g >= 0)
    return np.asarray(g) >= 0


def payoff(contract: BarrierContract, path) -> np.ndarray | float:
    """``S_N - K`` on the execution event, zero elsewhere."""
    s = np.asarray(path, dtype=float)
    value = np.where(in_event(contract, s), s[..., -1] - contract.strike, 0.0)
    return float(value) if np.ndim(value) == 0 else value


def discount(value, rate: float, t: float):
    """Discount ``value`` from time ``t`` back to zero at a flat rate."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return value * math.exp(-rate * t)
