import numpy as np
import pytest

from chatterlab.equilibrium import Verdict, certify_endless, iterate_periodic
from chatterlab.fluid import simulate
from chatterlab.model import ModelParams, StateVector, full_pools_state, stationary_point
from oracles import ode_fixed_point

P1 = ModelParams(0.98, 0.1, 0.0, 0.1, 0.01)
P2 = ModelParams(0.98, 0.3, 0.0, 0.1, 0.01)
P3 = ModelParams(0.98, 0.1, 0.01, 0.1, 0.01)

# fixed points of the half-cycle map from event-driven DOP853 integration (rtol 1e-13)
ODE_NO_ABANDONMENT = {"delta": 8.75871814011, "z": 0.9991713585055311, "T1": 7.09567372407409,
                      "T2": 46.04341200979963}
ODE_SMALL_ABANDONMENT = {"delta": 11.334104935474707 - 5.289779363818536, "q1": 5.289779363818536,
                         "T1": 4.509939456766942, "T2": 45.94110838577575}


def test_periodic_equilibrium_without_abandonment():
    r = iterate_periodic((5.0, 9.0, 0.005), P1)
    assert r.verdict == Verdict.OSCILLATORY
    e = r.periodic
    assert e.delta_star == pytest.approx(ODE_NO_ABANDONMENT["delta"], abs=1e-8)
    assert e.z_at_T1 == pytest.approx(ODE_NO_ABANDONMENT["z"], abs=1e-10)
    assert e.T_star[0] == pytest.approx(ODE_NO_ABANDONMENT["T1"], abs=1e-8)
    assert e.T_star[1] == pytest.approx(ODE_NO_ABANDONMENT["T2"], abs=1e-8)
    assert e.T_star[2:] == pytest.approx(e.T_star[:2], abs=1e-8)
    assert e.closure_residual < 1e-6
    assert "q1" not in e.closure_components


def test_periodic_equilibrium_small_abandonment():
    r = iterate_periodic((5.0, 9.0, 0.005), P3)
    assert r.verdict == Verdict.OSCILLATORY
    e = r.periodic
    assert e.delta_star == pytest.approx(ODE_SMALL_ABANDONMENT["delta"], abs=1e-7)
    assert e.state_at_switch[0].q1 == pytest.approx(ODE_SMALL_ABANDONMENT["q1"], abs=1e-7)
    assert e.T_star[0] == pytest.approx(ODE_SMALL_ABANDONMENT["T1"], abs=1e-7)
    assert e.T_star[1] == pytest.approx(ODE_SMALL_ABANDONMENT["T2"], abs=1e-7)
    assert e.closure_residual < 1e-6
    assert "q1" in e.closure_components


def test_independent_of_start():
    a = iterate_periodic((1.0, 1.2, 0.005), P1).periodic.delta_star
    b = iterate_periodic((1.0, 21.0, 0.0), P1).periodic.delta_star
    assert a == pytest.approx(b, abs=1e-8)


def test_oracle_agrees_small_abandonment_recomputed():
    x, T, _ = ode_fixed_point((5.0, 9.0, 0.005), P3.lam, P3.mu, P3.theta, P3.kappa, P3.tau, iters=60)
    assert x[1] - x[0] == pytest.approx(ODE_SMALL_ABANDONMENT["delta"], abs=1e-6)


def test_inward_spiral_is_stationary():
    r = iterate_periodic((10.0, 30.0, 0.0), P2)
    assert r.verdict == Verdict.STATIONARY
    assert r.stop_reason.startswith("restart failed")
    d = r.delta_sequence
    assert all(b < a for a, b in zip(d, d[1:]))


def test_small_queue_reaches_zero_and_is_stationary():
    r = iterate_periodic((0.05, 0.5, 0.0), ModelParams(0.7, 0.3, 0.0, 0.1, 0.01))
    assert r.verdict == Verdict.STATIONARY
    assert r.stop_reason == "queue hit zero"


def test_undetermined_when_iterations_run_out():
    r = iterate_periodic((5.0, 9.0, 0.005), P3, max_iter=3)
    assert r.verdict == Verdict.UNDETERMINED


def test_invalid_starts():
    with pytest.raises(ValueError):
        iterate_periodic((5.0, 5.05, 0.0), P1)
    with pytest.raises(ValueError):
        iterate_periodic((5.0, 9.0, 0.02), P1)
    with pytest.raises(ValueError):
        iterate_periodic((0.0, 9.0, 0.0), P1)


# -- certificate ----------------------------------------------------------

def test_certificate_box_values():
    c = certify_endless((4.0, 7.0), (1.0, 20.0), P3)
    assert c.verdict
    assert all(c.conditions.values())
    assert c.A_U_constant == pytest.approx(-0.891, abs=1e-12)
    assert c.t1_bounds == pytest.approx((1.9303, 6.1271), abs=1e-4)
    assert c.t2_bounds == pytest.approx((44.4839, 46.0301), abs=1e-4)
    assert c.A_bounds == pytest.approx((-0.8932, -0.7620), abs=1e-4)
    assert c.delta_next_bounds == pytest.approx((5.194, 6.1815), abs=1e-3)
    assert c.delta_next_lower_small_kappa == pytest.approx(6.2460, abs=1e-4)
    lo, hi = c.delta_next_bounds
    assert 4.0 <= lo <= hi <= 7.0
    # the periodic equilibrium lies in the limit box
    dstar = iterate_periodic((5.0, 9.0, 0.005), P3).periodic.delta_star
    assert c.limit_box[0] <= dstar <= c.limit_box[1]


def test_nested_bounds_monotone():
    c = certify_endless((4.0, 7.0), (1.0, 20.0), P3)
    tr = c.nested_bounds_trace
    assert len(tr) >= 2
    for a, b in zip(tr, tr[1:]):
        assert b["delta_bounds"][0] >= a["delta_bounds"][0] - 1e-15
        assert b["delta_bounds"][1] <= a["delta_bounds"][1] + 1e-15
        assert b["q1_bounds"][0] >= a["q1_bounds"][0] - 1e-15
        assert b["q1_bounds"][1] <= a["q1_bounds"][1] + 1e-15


def test_certified_box_starts_oscillate():
    rng = np.random.default_rng(11)
    for _ in range(10):
        d = rng.uniform(4.0, 7.0)
        q1 = rng.uniform(1.0, 20.0)
        z21 = rng.uniform(0.0, P3.tau)
        assert iterate_periodic((q1, q1 + d, z21), P3).verdict == Verdict.OSCILLATORY


def test_certificate_fails_outside_range():
    c = certify_endless((0.5, 7.0), (1.0, 20.0), P3)
    assert not c.verdict
    with pytest.raises(ValueError):
        certify_endless((4.0, 7.0), (1.0, 200.0), P3)


def test_only_two_behaviours_from_random_states():
    # every run either relaxes to the stationary point, keeps cycling to the
    # horizon, or stops at a detected exit from the cycle regime
    rng = np.random.default_rng(3)
    exits = {"queue hit zero", "sliding detected",
             "unsupported regime: idle pool facing a long queue",
             "unsupported regime: sharing admissible with an idle pool"}
    for _ in range(100):
        lam = rng.uniform(0.5, 0.98)
        mu = rng.uniform(0.05, 0.9)
        tau = rng.uniform(0.005, min(0.2, 1 - lam))
        kap = rng.uniform(0.01, 1.0)
        th = rng.choice([0.0, rng.uniform(0, mu)])
        p = ModelParams(lam, mu, th, kap, tau)
        q1, q2 = rng.uniform(0, 20, 2)
        z12 = rng.uniform(0, 1)
        z21 = rng.uniform(0, 1 - z12)
        x = StateVector(q1, q2, 1 - z21, z12, z21, 1 - z12)
        tr = simulate(x, p, 2000.0, sample_dt=None)
        end = np.array(tr.state(len(tr) - 1).as_tuple())
        at_rest = np.max(np.abs(end - np.array(stationary_point(p).as_tuple()))) < 1e-3
        cycling = tr.stop_reason == "horizon" and tr.classification_hint == "oscillating"
        assert at_rest or cycling or tr.stop_reason in exits, tr.stop_reason
