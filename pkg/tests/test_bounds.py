import numpy as np
import pytest

from chatterlab.bounds import psi, psi_bounds, t1_bounds
from chatterlab.fluid import find_T1
from chatterlab.model import ModelParams, full_pools_state

P3 = ModelParams(0.98, 0.1, 0.01, 0.1, 0.01)
P1 = ModelParams(0.98, 0.1, 0.0, 0.1, 0.01)


def test_psi_bounds_values():
    b = psi_bounds(P3)
    assert b.lower == pytest.approx(1.1 - 0.9 * 0.01)
    assert b.upper == 2.0
    # the alternative lower bound is negative for these parameters and unusable
    assert b.printed_lower == pytest.approx(0.2 - 0.9 * 0.99)
    assert not b.printed_lower_positive


def test_psi_within_bounds_on_grid():
    b = psi_bounds(P3)
    t = np.linspace(0.0, 60.0, 6001)
    for z21 in (0.0, 0.004, 0.0099):
        for z12 in (0.0, 0.005, 0.01):
            v = psi(t, z21, P3, z12_0=z12)
            assert np.all(v <= -b.lower + 1e-15)
            assert np.all(v >= -b.upper - 1e-15)


@pytest.mark.parametrize("p", [P1, P3])
def test_t1_bracket_contains_root(p):
    for d0 in (0.5, 4.0, 8.76, 30.0):
        lo, hi = t1_bounds(d0, p)
        T1 = find_T1(full_pools_state(5.0, 5.0 + d0, p.tau, 0.005), p)
        assert lo <= T1 <= hi


def test_t1_bounds_theta_zero_limit():
    lo0, hi0 = t1_bounds(5.0, P1)
    lo, hi = t1_bounds(5.0, ModelParams(0.98, 0.1, 1e-9, 0.1, 0.01))
    assert lo == pytest.approx(lo0, rel=1e-6) and hi == pytest.approx(hi0, rel=1e-6)
    with pytest.raises(ValueError):
        t1_bounds(0.05, P1)
