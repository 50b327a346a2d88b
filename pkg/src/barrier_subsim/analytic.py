"""Closed forms for a single monitoring date, used as exact oracles.

With ``N = 1`` the contract pays ``S_T - K`` iff ``max(L, K) <= S_T <= U``
and ``S_T`` is lognormal, so both the execution probability and the price
are available in closed form.
"""

from __future__ import annotations

import math

from scipy.special import ndtr

from .contract import BarrierContract
from .model import GbmParams


def _single_date(params: GbmParams, contract: BarrierContract):
    if params.n_steps != 1:
        raise ValueError("closed forms need a single monitoring date (n_steps=1)")
    lo = contract.terminal_floor(1)
    up = float(contract.barriers(1)[1][0])
    return lo, up, params.log_drift, params.log_vol


def single_date_probability(params: GbmParams, contract: BarrierContract) -> float:
    """``P(max(L, K) <= S_T <= U)``."""
    lo, up, m, s = _single_date(params, contract)
    if s == 0:
        st = params.s0 * math.exp(m)
        return float(lo <= st <= up)

    def d(x):
        return (math.log(x / params.s0) - m) / s

    return float(ndtr(d(up)) - ndtr(d(lo)))


def single_date_price(params: GbmParams, contract: BarrierContract) -> float:
    """Discounted ``E[(S_T - K) 1{max(L, K) <= S_T <= U}]``."""
    lo, up, m, s = _single_date(params, contract)
    disc = math.exp(-contract.rate * contract.maturity)
    if s == 0:
        st = params.s0 * math.exp(m)
        return disc * (st - contract.strike) * float(lo <= st <= up)

    def d(x):
        return (math.log(x / params.s0) - m) / s

    # E[S 1{a<=S<=b}] = s0 e^{m + s^2/2} [Phi(d(b) - s) - Phi(d(a) - s)]
    first = params.s0 * math.exp(m + 0.5 * s * s) * (ndtr(d(up) - s) - ndtr(d(lo) - s))
    prob = ndtr(d(up)) - ndtr(d(lo))
    return float(disc * (first - contract.strike * prob))
