import numpy as np
import pytest
from scipy import integrate

from chatterlab.fluid import (
    Termination,
    Trajectory,
    delta_is_decreasing,
    eval_delta1,
    eval_interval1,
    eval_interval2,
    find_sigma_q,
    find_T1,
    find_T2,
    gfun,
    half_cycle,
    simulate,
)
from chatterlab.model import ModelParams, Phase, StateVector, full_pools_state, mirror, stationary_point
from oracles import g_quad, ode_state, rk4_cycle, vector_field

P1 = ModelParams(0.98, 0.1, 0.0, 0.1, 0.01)
P3 = ModelParams(0.98, 0.1, 0.01, 0.1, 0.01)
X0 = full_pools_state(5.0, 9.0, 0.01, 0.005)

# switching epochs of one cycle from X0, computed with the RK4 oracle at step 1e-4
RK4_SWITCHES = {
    0.0: [2.800814611984009, 48.22890228129494, 54.81374443439014, 100.85162640802886],
    0.01: [2.7559589040728154, 48.15448250458468, 52.39983686893319, 98.30720721190491],
}


@pytest.mark.parametrize("a", [0.0, 1e-12, 1e-9, 1e-6, 0.09, 0.1, 1.0, -0.05])
def test_gfun_against_quadrature(a):
    for t in (0.0, 0.3, 7.0, 46.0):
        assert gfun(a, t) == pytest.approx(g_quad(a, t), rel=1e-11, abs=1e-14)


@pytest.mark.parametrize("p", [P1, P3])
def test_interval1_matches_ode(p):
    T1 = find_T1(X0, p)
    for t in np.linspace(0.0, T1, 7):
        want = ode_state(np.array(X0.as_tuple()), "share_to_1", p.lam, p.mu, p.theta, t)
        got = np.array(eval_interval1(X0, t, p).as_tuple())
        assert np.max(np.abs(got - want)) < 1e-9


@pytest.mark.parametrize("p", [P1, P3])
def test_interval2_matches_ode(p):
    x1 = eval_interval1(X0, find_T1(X0, p), p)
    T2 = find_T2(x1, p)
    for t in np.linspace(0.0, T2, 7):
        want = ode_state(np.array(x1.as_tuple()), "none", p.lam, p.mu, p.theta, t)
        got = np.array(eval_interval2(x1, t, p).as_tuple())
        assert np.max(np.abs(got - want)) < 1e-8
    with pytest.raises(ValueError):
        eval_interval2(x1, T2 + 1.0, p)


@pytest.mark.parametrize("theta", [0.0, 0.01])
def test_switching_epochs_frozen(theta):
    p = P1 if theta == 0 else P3
    tr = simulate(X0, p, 101.0, sample_dt=None)
    assert tr.switching_epochs[1:5] == pytest.approx(RK4_SWITCHES[theta], abs=1e-7)
    rec = tr.cycle_records[0]
    assert rec.Sigma4 == pytest.approx(RK4_SWITCHES[theta][3], abs=1e-7)
    assert rec.T1 + rec.T2 + rec.T3 + rec.T4 == pytest.approx(rec.Sigma4)


def test_rk4_oracle_sup_gap_short():
    # a coarser oracle run keeps this unit test quick; the acceptance suite uses h = 1e-4
    tt, X, sw = rk4_cycle(X0.as_tuple(), P3.lam, P3.mu, P3.theta, P3.kappa, P3.tau, h=1e-3, store_every=10)
    tr = simulate(X0, P3, sw[-1] + 1.0, sample_dt=None)
    assert np.max(np.abs(tr.evaluate(tt) - X)) < 1e-6


def test_eval_delta1_matches_interval1():
    t = np.linspace(0.0, 2.0, 11)
    d = eval_delta1(X0.delta, X0.z21, t, P3)
    want = [eval_interval1(X0, s, P3).delta for s in t]
    assert np.allclose(d, want, atol=1e-13)


def test_find_T1_root_and_errors():
    T1 = find_T1(X0, P3)
    assert abs(eval_interval1(X0, T1, P3).delta - P3.kappa) < 1e-12
    with pytest.raises(ValueError):
        find_T1(full_pools_state(5.0, 5.05, 0.01, 0.0), P3)


def _ode_queue_zero(x0, p):
    # event-driven integration: share until delta = kappa, then no sharing until a queue empties
    A1 = vector_field("share_to_1", p.lam, p.mu, p.theta)
    A2 = vector_field("none", p.lam, p.mu, p.theta)
    ev1 = lambda t, y: y[1] - y[0] - p.kappa  # noqa: E731
    ev1.terminal = True
    s1 = integrate.solve_ivp(lambda t, y: A1 @ y, (0, 100), np.append(x0, 1.0), events=ev1,
                             rtol=1e-12, atol=1e-13)
    T1 = s1.t_events[0][0]
    ev2 = lambda t, y: min(y[0], y[1])  # noqa: E731
    ev2.terminal = True
    s2 = integrate.solve_ivp(lambda t, y: A2 @ y, (0, 500), s1.y_events[0][0], events=ev2,
                             rtol=1e-12, atol=1e-13)
    return T1, s2.t_events[0][0]


def test_queue_hit_zero_matches_event_oracle():
    p = ModelParams(0.7, 0.3, 0.0, 0.1, 0.01)
    x0 = full_pools_state(0.5, 3.0, 0.01, 0.0)
    T1_ref, tq_ref = _ode_queue_zero(np.array(x0.as_tuple()), p)
    rec = half_cycle(x0, p)
    assert rec.terminated_by == Termination.QUEUE_HIT_ZERO
    assert rec.T1 == pytest.approx(T1_ref, abs=1e-8)
    assert rec.sigma_q - rec.T1 == pytest.approx(tq_ref, abs=1e-7)
    x1 = rec.states_at_switch[1]
    assert find_sigma_q(x1, Phase.I2, 500.0, p) == pytest.approx(tq_ref, abs=1e-7)
    assert find_sigma_q(x1, Phase.I1, 500.0, p) is None
    tr = simulate(x0, p, 50.0)
    assert tr.stop_reason == "queue hit zero"
    assert tr.end_time == pytest.approx(rec.sigma_q)


def test_half_cycle_requires_cycle_start():
    with pytest.raises(ValueError):
        half_cycle(full_pools_state(5.0, 9.0, 0.5, 0.0), P3)


def test_horizon_zero_single_sample():
    tr = simulate(X0, P3, 0.0)
    assert len(tr) == 1
    assert tr.state(0) == X0
    assert tr.evaluate([0.0]).shape == (1, 6)


def test_delta_decreases_on_first_two_intervals_without_abandonment():
    tr = simulate(X0, P1, RK4_SWITCHES[0.0][1] - 1e-6, sample_dt=0.01)
    assert delta_is_decreasing(tr, tr.end_time + 1.0)


def test_queues_grow_at_cycle_starts_without_abandonment():
    tr = simulate(X0, P1, 10 * 101.0, sample_dt=None)
    starts = [min(h.states_at_switch[0].q1, h.states_at_switch[0].q2) for h in tr.half_cycles[::2]]
    assert len(starts) >= 5
    assert all(b > a for a, b in zip(starts, starts[1:]))


def test_mirror_equivariance_of_half_cycle():
    rec = half_cycle(X0, P3)
    x2 = rec.states_at_switch[2]
    tr = simulate(X0, P3, rec.Sigma2 + 10.0, sample_dt=None)
    direct = tr.evaluate([rec.Sigma2 + 5.0])[0]
    restarted = simulate(x2, P3, 5.0, sample_dt=None).evaluate([5.0])[0]
    assert np.max(np.abs(direct - restarted)) < 1e-9
    mirrored = simulate(mirror(X0), P3, rec.Sigma2 + 10.0, sample_dt=None).evaluate([rec.Sigma2 + 5.0])[0]
    assert np.max(np.abs(mirrored - direct[[1, 0, 5, 4, 3, 2]])) < 1e-9


def test_relaxation_to_stationary_point():
    p = P3
    x0 = StateVector(0.05, 0.02, 1.0, 0.0, 0.0, 1.0)
    tr = simulate(x0, p, 2000.0, sample_dt=10.0)
    end = np.array(tr.state(len(tr) - 1).as_tuple())
    assert np.max(np.abs(end - np.array(stationary_point(p).as_tuple()))) < 1e-6


def test_relaxation_with_shared_leftovers_hands_over_or_settles():
    # shared occupancy above tau and a large difference: decay until release, then a cycle
    x0 = full_pools_state(2.0, 8.0, 0.3, 0.0)
    tr = simulate(x0, P3, 200.0)
    assert tr.half_cycles, "sharing should start once z12 decays to tau"
    assert tr.half_cycles[0].states_at_switch[0].z12 == pytest.approx(P3.tau, abs=1e-12)


def test_csv_round_trip(tmp_path):
    tr = simulate(X0, P3, 60.0, sample_dt=0.37)
    path = tmp_path / "traj.csv"
    tr.to_csv(path)
    back = Trajectory.from_csv(str(path))
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.states, tr.states)
    assert back.phases == tr.phases
    assert back.to_csv() == tr.to_csv()


def test_sample_times_include_exact_epochs():
    tr = simulate(X0, P3, 100.0, sample_dt=1.0)
    for e in tr.switching_epochs:
        assert np.min(np.abs(tr.times - e)) == 0.0


def test_invalid_inputs():
    with pytest.raises(ValueError):
        simulate(X0, P3, -1.0)
    with pytest.raises(ValueError):
        simulate(StateVector(1.0, 0.0, 0.5, 0.0, 0.0, 1.0), P3, 1.0)
    with pytest.raises(ValueError):
        simulate(X0, ModelParams(1.5, 0.1, 0.0, 0.1, 0.01), 1.0)
