import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from barrier_subsim.contract import BarrierContract, discount, in_event, payoff, performance
from barrier_subsim.model import GbmParams, evolve

# 100 e^0.1 - 100 and e^-0.1, mpmath at 30 digits
DETERMINISTIC_PAYOFF = 10.517091807564762481170782649
DISCOUNT_ONE_YEAR = 0.904837418035959573164249059446

C = BarrierContract(90, 110, 100, 0.1)


def test_hand_evaluated_performance():
    assert performance(C, [105.0, 115.0, 108.0]) == -5.0
    assert performance(C, [105.0, 108.0, 95.0]) == -5.0
    assert performance(C, np.full(5, 100.0)) == 0.0


def test_boundaries_survive():
    assert in_event(C, [90.0, 110.0, 100.0])
    assert payoff(C, [90.0, 110.0, 100.0]) == 0.0
    assert not in_event(C, [100.0, 110.0001, 105.0])


def test_payoff_examples():
    assert payoff(C, [100.0, 104.0, 107.3]) == pytest.approx(7.3)
    assert payoff(C, [100.0, 89.0, 107.3]) == 0.0


def test_deterministic_path_payoff():
    p = GbmParams(100, 0.1, 0.0, 250)
    c = BarrierContract(90, 140, 100, 0.1)
    assert payoff(c, evolve(p, np.zeros(250))) == pytest.approx(DETERMINISTIC_PAYOFF, rel=1e-12)


def test_discount():
    assert discount(3.0, 0.1, 0) == 3.0
    assert discount(1.0, 0.1, 1.0) == pytest.approx(DISCOUNT_ONE_YEAR, rel=1e-15)
    assert discount(0.0, 0.3, 2.0) == 0.0
    with pytest.raises(ValueError):
        discount(1.0, 0.1, -1)


def test_indicator_form_agrees_on_random_paths():
    rng = np.random.default_rng(0)
    paths = 100 * np.exp(np.cumsum(0.02 * rng.standard_normal((10_000, 10)), axis=1))
    alive = np.all((paths >= 90) & (paths <= 110), axis=1)
    expected = np.maximum(paths[:, -1] - 100, 0) * alive
    assert np.array_equal(payoff(C, paths), expected)
    assert np.array_equal(in_event(C, paths), alive & (paths[:, -1] >= 100))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(50, 150), min_size=1, max_size=20), st.floats(0, 20), st.floats(0, 20))
def test_nonpositive_and_monotone_in_width(path, widen_lo, widen_up):
    g = performance(C, path)
    assert g <= 0
    wide = BarrierContract(90 - widen_lo, 110 + widen_up, 100, 0.1)
    assert performance(wide, path) >= g - 1e-9


def test_vector_barriers_and_errors():
    c = BarrierContract([80, 85, 90], [120, 115, 110], 100, 0.1)
    assert performance(c, [81.0, 116.0, 100.0]) == -1.0
    with pytest.raises(ValueError, match="length"):
        performance(c, [100.0, 100.0])
    with pytest.raises(ValueError):
        BarrierContract(110, 90, 100, 0.1)
    with pytest.raises(ValueError):
        BarrierContract(90, 110, 120, 0.1)
    with pytest.raises(ValueError):
        BarrierContract(90, 110, 0, 0.1)


def test_strike_below_lower_barrier_uses_barrier_at_maturity():
    c = BarrierContract(90, 110, 80, 0.1)
    assert performance(c, [100.0, 85.0]) == -5.0


def test_model_checks():
    c = BarrierContract(90, 110, 100, 0.1)
    with pytest.raises(ValueError, match="maturity"):
        c.check_model(GbmParams(100, 0.1, 0.2, 10, maturity=2.0))
    with pytest.warns(UserWarning, match="outside"):
        c.check_model(GbmParams(120, 0.1, 0.2, 10))
    assert math.isfinite(c.terminal_floor(10))
