"""Modified Metropolis sampling of a standard normal vector conditioned on
``g(z) >= threshold``.

Each component is proposed and accepted on its own against the standard
normal density; the assembled candidate then replaces the state as a whole
only if it stays inside the conditioning event.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contract import BarrierContract
from .model import GbmParams, as_generator


class OutsideLevelError(ValueError):
    """A chain was asked to start from a state below its threshold."""


@dataclass(frozen=True)
class MmaProposal:
    """Symmetric Gaussian component proposal with standard deviation ``spread``.

    The default keeps per-step acceptance healthy on 250-dimensional
    inputs at deep levels; 1.0 collapses acceptance there.
    """

    spread: float = 0.15

    def __post_init__(self):
        if not self.spread > 0:
            raise ValueError(f"spread must be > 0, got {self.spread}")


class PathScore:
    """Callable mapping normal inputs to ``(g, S_N)`` for one contract.

    Accepts a single vector (returns floats) or a batch of rows.
    """

    def __init__(self, params: GbmParams, contract: BarrierContract):
        # imported here to keep mma importable on its own in the tests
        from .mcs import score_paths

        contract.check_model(params)
        self.params = params
        self.contract = contract
        self._score = score_paths

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        g, sn = self._score(self.params, self.contract, z)
        if z.ndim == 1:
            return float(g[0]), float(sn[0])
        return g, sn


def _evaluate(score, z):
    out = score(z)
    return out[0] if isinstance(out, tuple) else out


def mma_step(current, threshold: float, score, proposal: MmaProposal, rng, current_g=None):
    """One Modified Metropolis transition.

    Parameters
    ----------
    current : ndarray
        State with ``score(current) >= threshold``.
    threshold : float
        Level of the conditioning event.
    score : callable
        Performance function of ``z``; may return ``g`` or ``(g, extra)``.
    proposal : MmaProposal
    rng : RngStream, Generator or int
    current_g : float, optional
        Performance of ``current`` if already known.

    Returns
    -------
    next_state, next_g, accepted
        ``accepted`` is True only if the state actually moved.
    """
    current = np.asarray(current, dtype=float)
    if current_g is None:
        current_g = _evaluate(score, current)
    if current_g < threshold:
        raise OutsideLevelError(f"chain state has g={current_g} below threshold {threshold}")
    gen = as_generator(rng)
    psi = current + proposal.spread * gen.standard_normal(current.shape)
    unif = gen.random(current.shape)
    keep = unif < np.exp(0.5 * (current**2 - psi**2))
    if not keep.any():
        return current, current_g, False
    candidate = np.where(keep, psi, current)
    cand_g = _evaluate(score, candidate)
    if cand_g >= threshold:
        return candidate, cand_g, True
    return current, current_g, False


def run_chain(seed_state, length: int, threshold: float, score, proposal: MmaProposal, rng):
    """Grow a chain of ``length`` states from ``seed_state`` (which counts as the first)."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    gen = as_generator(rng)
    state = np.asarray(seed_state, dtype=float)
    g = _evaluate(score, state)
    if g < threshold:
        raise OutsideLevelError(f"seed has g={g} below threshold {threshold}")
    chain = [(state, g)]
    for _ in range(length - 1):
        state, g, _ = mma_step(state, threshold, score, proposal, gen, current_g=g)
        chain.append((state, g))
    return chain
