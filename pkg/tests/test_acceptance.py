"""Acceptance criteria, each run at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

import test_properties as props
from chatterlab.approx import (contraction_rate, heuristic_iterate, iterate_approx, solve_T1a,
                               t2a, throughput_L)
from chatterlab.ctmc import CtmcParams, CtmcState, run_ctmc
from chatterlab.equilibrium import Verdict, certify_endless, iterate_periodic
from chatterlab.experiments import (CERT_DELTA_RANGE, CERT_Q1_RANGE, DEFAULT_START,
                                    INWARD_SPIRAL, NO_ABANDONMENT, REFERENCE_L,
                                    SMALL_ABANDONMENT, SPIRAL_START, TABLE1_APPROX,
                                    TABLE1_FLUID, fwlln_experiment)
from chatterlab.fluid import simulate
from chatterlab.model import StateVector, full_pools_state, stationary_point
from conftest import ACCEPTANCE
from oracles import birth_death_mean, rk4_cycle


def record(ac, ok, detail):
    ACCEPTANCE.append(f"AC{ac:<3}{'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t


def test_ac1_equilibrium_table():
    p = NO_ABANDONMENT
    ra, ta = timed(iterate_approx, DEFAULT_START[1] - DEFAULT_START[0], p)
    rf, tf = timed(iterate_periodic, DEFAULT_START, p)
    e, f = ra.periodic, rf.periodic
    approx = (e.delta_star, e.z_at_T1, e.t1a, e.t2a)
    fluid = (f.delta_star, f.z_at_T1, f.T_star[0], f.T_star[1])
    want_a = tuple(TABLE1_APPROX[k] for k in ("delta_star", "z_at_T1", "T1", "T2"))
    want_f = tuple(TABLE1_FLUID[k] for k in ("delta_star", "z_at_T1", "T1", "T2"))
    tol_a = (0.001, 0.0005, 0.001, 0.001)
    ok_a = all(abs(c - w) <= t for c, w, t in zip(approx, want_a, tol_a))
    ok_f = all(abs(c - w) <= 0.005 for c, w in zip(fluid, want_f))
    ok = record(1, ok_a and ok_f and ta < 1 and tf < 1,
                f"approx {np.round(approx, 4).tolist()} ({'ok' if ok_a else 'off'}, {ta:.3f}s); "
                f"fluid {np.round(fluid, 4).tolist()} vs {list(want_f)} "
                f"({'ok' if ok_f else 'off'}, {tf:.3f}s)")
    assert ok


def test_ac2_fixed_point_residuals():
    e = iterate_approx(4.0, NO_ABANDONMENT).periodic
    worst = 0.0
    for p in (NO_ABANDONMENT, SMALL_ABANDONMENT):
        f = iterate_periodic(DEFAULT_START, p).periodic
        worst = max(worst, f.closure_residual)
    ok = record(2, e.residual < 1e-9 and worst < 1e-6,
                f"map residual {e.residual:.2e}, worst closure component {worst:.2e} (theta 0 and 0.01)")
    assert ok


@pytest.mark.parametrize("p", [NO_ABANDONMENT, SMALL_ABANDONMENT], ids=["theta0", "theta001"])
def test_ac3_rk4_oracle(p):
    x0 = full_pools_state(DEFAULT_START[0], DEFAULT_START[1], p.tau, DEFAULT_START[2])
    tt, X, sw = rk4_cycle(x0.as_tuple(), p.lam, p.mu, p.theta, p.kappa, p.tau, h=1e-4)
    tr, el = timed(simulate, x0, p, sw[-1] + 1.0, sample_dt=None)
    gap = float(np.max(np.abs(tr.evaluate(tt) - X)))
    ok = record(3, gap < 1e-6 and el < 10,
                f"theta={p.theta}: sup-gap {gap:.2e} over one cycle, closed form {el:.3f}s")
    assert ok


def test_ac4_geometric_convergence():
    p = NO_ABANDONMENT
    rc = contraction_rate(p)
    star = iterate_approx(4.0, p).periodic.delta_star
    ratios, lengths = [], []
    for start in rc.S_mu:
        seq = iterate_approx(start, p, accelerate=False).delta_sequence
        err = [abs(d - star) for d in seq]
        ratios += [b / a for a, b in zip(err, err[1:]) if a > 1e-10]
        for d in seq[:-1]:
            T1 = solve_T1a(d, p)
            lengths.append(2.0 * (T1 + t2a(T1, p)))
    ok = record(4, rc.contraction_certified and rc.rho < 1 and max(ratios) <= rc.rho
                and max(lengths) <= 2 * rc.R,
                f"rho={rc.rho:.5f}, max ratio {max(ratios):.5f}, max cycle {max(lengths):.3f} "
                f"<= 2R={2 * rc.R:.3f} (starts at both ends of S_mu)")
    assert ok


def test_ac5_bifurcation():
    p = INWARD_SPIRAL
    rf = iterate_periodic(SPIRAL_START, p)
    h = heuristic_iterate(SPIRAL_START[1] - SPIRAL_START[0], p)
    last = h.result.delta_sequence[-1]
    ok = record(5, rf.verdict == Verdict.STATIONARY and h.stopped_at <= 5 and last < 0,
                f"fluid verdict {rf.verdict.value}; heuristic stopped at {h.stopped_at} with {last:.4f}")
    assert ok


def test_ac6_congestion_collapse():
    p = NO_ABANDONMENT
    h = heuristic_iterate(DEFAULT_START[1] - DEFAULT_START[0], p)
    rep = throughput_L(h.xi_star, p, reference_value=REFERENCE_L)
    x0 = full_pools_state(DEFAULT_START[0], DEFAULT_START[1], p.tau, DEFAULT_START[2])
    tr = simulate(x0, p, 700.0, sample_dt=None)
    starts = [min(c.states_at_switch[0].q1, c.states_at_switch[0].q2) for c in tr.cycle_records]
    increasing = len(starts) >= 5 and all(b > a for a, b in zip(starts, starts[1:]))
    agree = abs(rep.closed_form - rep.oracle) <= 0.05
    ok = record(6, rep.collapse and rep.oracle < p.lam and agree and increasing,
                f"oracle L {rep.oracle:.4f} < {p.lam}; closed form {rep.closed_form:.4f}; "
                f"rederived {rep.rederived:.4f}; reference {REFERENCE_L}; agree within 0.05: {agree}; "
                f"cycle-start queues increasing over {len(starts)} cycles: {increasing}")
    assert ok


def test_ac7_certificate():
    p = SMALL_ABANDONMENT
    cert = certify_endless(CERT_DELTA_RANGE, CERT_Q1_RANGE, p)
    rng = np.random.default_rng(7)
    verdicts = []
    for _ in range(10):
        d = rng.uniform(*CERT_DELTA_RANGE)
        q1 = rng.uniform(*CERT_Q1_RANGE)
        verdicts.append(iterate_periodic((q1, q1 + d, rng.uniform(0, p.tau)), p).verdict)
    all_osc = all(v == Verdict.OSCILLATORY for v in verdicts)
    ok = record(7, cert.verdict and abs(cert.A_U_constant + 0.891) <= 0.01
                and cert.delta_next_lower_small_kappa >= 6.21 and all_osc,
                f"verdict {cert.verdict}, A_U {cert.A_U_constant:.4f}, "
                f"next-delta lower {cert.delta_next_lower_small_kappa:.4f}, 10 starts oscillate: {all_osc}")
    assert ok


def test_ac8_empirical_fluid_limit():
    table, el = timed(fwlln_experiment, reps=20, base_seed=0)
    med = table.medians
    ok = record(8, table.strictly_decreasing() and el < 300,
                f"medians {[round(m, 4) for m in med]} for n={[r.n for r in table.rows]}, "
                f"IQR {[round(r.iqr, 4) for r in table.rows]}, {el:.1f}s")
    assert ok


def test_ac9_stationary_point():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for p in (NO_ABANDONMENT, SMALL_ABANDONMENT):
        target = np.array(stationary_point(p).as_tuple())
        for _ in range(20):
            q = rng.uniform(0.0, p.kappa, 2) * (rng.random(2) < 0.7)
            z11 = 1.0 if q[0] > 0 else rng.uniform()
            z22 = 1.0 if q[1] > 0 else rng.uniform()
            tr = simulate(StateVector(q[0], q[1], z11, 0.0, 0.0, z22), p, 2000.0, sample_dt=100.0)
            end = np.array(tr.state(len(tr) - 1).as_tuple())
            worst = max(worst, float(np.max(np.abs(end - target))))
    big = 10 ** 9
    cp = CtmcParams(n=20, m1=20, m2=20, lam1=18.0, lam2=18.0, mu12=0.5, mu21=0.5,
                    theta1=0.5, theta2=0.5, k12=big, k21=big)
    c = run_ctmc(CtmcState(0, 0, 0, 0, 0, 0), cp, 20000.0, 99, sample_dt=0.5).counts[200:]
    ref = birth_death_mean(18.0, 20, 1.0, 0.5)
    rel = max(abs((c[:, 0] + c[:, 2]).mean() / ref - 1), abs((c[:, 1] + c[:, 5]).mean() / ref - 1))
    ok = record(9, worst < 1e-6 and rel < 0.01,
                f"fluid distance at t=2000 {worst:.1e} over 40 starts; CTMC vs birth-death {100 * rel:.2f}%")
    assert ok


PROPERTY_SUITES = [
    ("mirror involution", props.test_mirror_involution),
    ("delta monotone on [0, Sigma2)", props.test_delta_strictly_decreasing_until_sigma2),
    ("pools-full conservation", props.test_pools_full_before_queue_hit),
    ("solve_T1a monotone", props.test_solve_T1a_monotone),
    ("delta_map bound", props.test_delta_map_image_bound),
    ("delta_map gate", props.test_delta_map_gate),
    ("psi-bound sampling", props.test_psi_bounds_sampling),
]


def test_ac10_property_suites():
    results = []
    for name, fn in PROPERTY_SUITES:
        try:
            fn()
            results.append((name, True))
        except AssertionError:
            results.append((name, False))
    failed = [n for n, ok in results if not ok]
    ok = record(10, not failed, f"{len(results) - len(failed)}/{len(results)} suites pass at "
                f"{props.N} instances each" + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok
