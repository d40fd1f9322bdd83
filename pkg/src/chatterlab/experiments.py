"""Preconfigured experiments and their comparison reports.

Every experiment is deterministic: seeds are fixed here and all outputs are
written with a stable layout, so repeated runs produce identical files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import svg
from .approx import (
    contraction_rate,
    delta_bound,
    heuristic_iterate,
    iterate_approx,
    simulate_approx,
    throughput_L,
)
from .ctmc import (
    CtmcParams,
    CtmcState,
    fwlln_gap,
    oscillation_detector,
    replication_seed,
    simulate_ctmc,
)
from .equilibrium import Verdict, certify_endless, iterate_periodic
from .fluid import Trajectory, simulate
from .model import ModelParams, StateVector, full_pools_state

# parameter presets
NO_ABANDONMENT = ModelParams(lam=0.98, mu=0.1, theta=0.0, kappa=0.1, tau=0.01)
INWARD_SPIRAL = ModelParams(lam=0.98, mu=0.3, theta=0.0, kappa=0.1, tau=0.01)
SMALL_ABANDONMENT = ModelParams(lam=0.98, mu=0.1, theta=0.01, kappa=0.1, tau=0.01)

PRESETS: Dict[str, ModelParams] = {
    "no_abandonment": NO_ABANDONMENT,
    "inward_spiral": INWARD_SPIRAL,
    "small_abandonment": SMALL_ABANDONMENT,
}

# cycle-start triples (q1, q2, z21)
DEFAULT_START = (5.0, 9.0, 0.005)
SPIRAL_START = (10.0, 30.0, 0.0)

# reference values used as comparison targets
TABLE1_APPROX = {"delta_star": 8.802, "z_at_T1": 0.9992, "T1": 7.093, "T2": 46.044}
TABLE1_FLUID = {"delta_star": 8.663, "z_at_T1": 0.9992, "T1": 7.270, "T2": 46.044}
REFERENCE_L = 0.44

UNSTABLE_POINT_CTMC = CtmcParams(n=100, m1=100, m2=100, lam1=98.0, lam2=98.0, mu12=0.1, mu21=0.1,
                                 theta1=0.01, theta2=0.01, k12=10, k21=10, tau12=1, tau21=1)
NO_OSCILLATION_CTMC = CtmcParams(n=100, m1=100, m2=100, lam1=98.0, lam2=98.0, mu12=0.5, mu21=0.5,
                                 theta1=0.5, theta2=0.5, k12=10, k21=10, tau12=1, tau21=1)
UNSTABLE_POINT_HORIZON = 500.0
UNSTABLE_POINT_SEEDS = 50
NO_OSCILLATION_HORIZON = 1500.0
CTMC_BASE_SEED = 20240


def round9(obj):
    """Round every float in a nested structure to 9 significant digits."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return str(obj)
        return float(format(obj, ".9g"))
    if isinstance(obj, dict):
        return {str(k): round9(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round9(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return round9(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def dumps(obj) -> str:
    return json.dumps(round9(obj), indent=2, sort_keys=True) + "\n"


def _write(out_dir: Optional[str], name: str, text: str, files: List[str]) -> None:
    if out_dir is None:
        return
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    files.append(path)


def _compare(name: str, computed: float, expected: float, tol: float) -> Dict:
    return {"quantity": name, "computed": computed, "expected": expected, "tolerance": tol,
            "pass": bool(abs(computed - expected) <= tol)}


@dataclass
class Reproduction:
    target: str
    report: Dict
    files: List[str]

    @property
    def passed(self) -> bool:
        checks = self.report.get("checks", [])
        return all(c["pass"] for c in checks)


# ---------------------------------------------------------------------------

def table1(out_dir: Optional[str] = None) -> Reproduction:
    """Equilibria of the approximating system and of the fluid model without abandonment."""
    p = NO_ABANDONMENT
    ra = iterate_approx(DEFAULT_START[1] - DEFAULT_START[0], p)
    rf = iterate_periodic(DEFAULT_START, p)
    checks = []
    rows = {}
    if ra.periodic is not None:
        e = ra.periodic
        rows["approx"] = {"delta_star": e.delta_star, "z_at_T1": e.z_at_T1, "T1": e.t1a, "T2": e.t2a,
                          "residual": e.residual, "iterations": ra.iterations_used}
        for key in ("delta_star", "T1", "T2"):
            checks.append(_compare(f"approx {key}", rows["approx"][key], TABLE1_APPROX[key], 0.001))
        checks.append(_compare("approx z_at_T1", e.z_at_T1, TABLE1_APPROX["z_at_T1"], 0.0005))
    if rf.periodic is not None:
        e = rf.periodic
        rows["fluid"] = {"delta_star": e.delta_star, "z_at_T1": e.z_at_T1, "T1": e.T_star[0],
                         "T2": e.T_star[1], "closure_residual": e.closure_residual,
                         "iterations": rf.iterations_used}
        for key in ("delta_star", "z_at_T1", "T1", "T2"):
            checks.append(_compare(f"fluid {key}", rows["fluid"][key], TABLE1_FLUID[key], 0.005))
    report = {"target": "table1", "params": p.to_dict(), "start": list(DEFAULT_START),
              "approx_verdict": ra.verdict.value, "fluid_verdict": rf.verdict.value,
              "rows": rows, "reference": {"approx": TABLE1_APPROX, "fluid": TABLE1_FLUID},
              "checks": checks}
    files: List[str] = []
    _write(out_dir, "table1.json", dumps(report), files)
    return Reproduction("table1", report, files)


def _cycle_start_queues(traj: Trajectory) -> List[float]:
    return [min(h.states_at_switch[0].q1, h.states_at_switch[0].q2) for h in traj.half_cycles]


def fig3_6(out_dir: Optional[str] = None, cycles: int = 10) -> Reproduction:
    """Oscillating fluid and approximating paths without abandonment, plus throughput."""
    p = NO_ABANDONMENT
    ra = iterate_periodic(DEFAULT_START, p)
    period = ra.periodic.period
    horizon = cycles * period
    x0 = full_pools_state(DEFAULT_START[0], DEFAULT_START[1], p.tau, DEFAULT_START[2])
    traj = simulate(x0, p, horizon, sample_dt=0.1)
    d0 = DEFAULT_START[1] - DEFAULT_START[0]
    xa0 = StateVector(DEFAULT_START[0], DEFAULT_START[1], 1.0, 0.0, 0.0, 1.0)
    atraj = simulate_approx(xa0, p, horizon, sample_dt=0.1)
    h = heuristic_iterate(d0, p)
    rep = throughput_L(h.xi_star, p, reference_value=REFERENCE_L)
    starts = _cycle_start_queues(traj)
    full_starts = starts[::2]
    increasing = all(b > a for a, b in zip(full_starts, full_starts[1:]))
    alternations = oscillation_detector(traj, 0.5)
    checks = [
        {"quantity": "collapse verdict", "computed": rep.collapse, "expected": True, "pass": rep.collapse},
        {"quantity": "queue at successive cycle starts increasing", "computed": increasing,
         "expected": True, "pass": increasing and len(full_starts) >= 5},
        _compare("closed-form L vs oracle L", rep.closed_form, rep.oracle, 0.05),
        {"quantity": "alternations (band 0.5)", "computed": alternations, "expected": ">= 10",
         "pass": alternations >= 10},
    ]
    report = {"target": "fig3_6", "params": p.to_dict(), "horizon": horizon, "period": period,
              "cycle_start_queues": full_starts, "throughput": rep.to_dict(),
              "heuristic_delta_star": h.result.delta_sequence[-1], "checks": checks}
    files: List[str] = []
    _write(out_dir, "fig3_6.json", dumps(report), files)
    _write(out_dir, "fig3_6_fluid.csv", traj.to_csv(), files)
    _write(out_dir, "fig3_6_approx.csv", atraj.to_csv(), files)
    _write(out_dir, "fig3_6_delta.svg", svg.line_plot(
        [(traj.times, traj.delta, "fluid"), (atraj.times, atraj.delta, "approx")],
        title="queue difference", xlabel="t", ylabel="q2 - q1"), files)
    _write(out_dir, "fig3_6_queues.svg", svg.time_plot(traj, ["q1", "q2"], title="queues"), files)
    _write(out_dir, "fig3_6_shared.svg", svg.time_plot(traj, ["z12", "z21"], title="shared occupancy"), files)
    _write(out_dir, "fig3_6_phase.svg", svg.phase_plot(traj, title="phase portrait"), files)
    return Reproduction("fig3_6", report, files)


def fig7_8(out_dir: Optional[str] = None, horizon: float = 400.0) -> Reproduction:
    """Inward spiral to the stationary point for a larger cross-service rate."""
    p = INWARD_SPIRAL
    r = iterate_periodic(SPIRAL_START, p)
    h = heuristic_iterate(SPIRAL_START[1] - SPIRAL_START[0], p)
    x0 = full_pools_state(SPIRAL_START[0], SPIRAL_START[1], p.tau, SPIRAL_START[2])
    traj = simulate(x0, p, horizon, sample_dt=0.1)
    negative = [d for d in h.result.delta_sequence if d < 0]
    checks = [
        {"quantity": "fluid verdict", "computed": r.verdict.value,
         "expected": Verdict.STATIONARY.value, "pass": r.verdict == Verdict.STATIONARY},
        {"quantity": "heuristic stop iteration", "computed": h.stopped_at, "expected": "<= 5",
         "pass": h.stopped_at is not None and h.stopped_at <= 5 and bool(negative)},
    ]
    report = {"target": "fig7_8", "params": p.to_dict(), "start": list(SPIRAL_START),
              "classification": r.to_dict(), "heuristic_sequence": h.result.delta_sequence,
              "heuristic_xi": h.xi_sequence, "heuristic_stop_reason": h.result.stop_reason,
              "stop_reason": traj.stop_reason, "checks": checks}
    files: List[str] = []
    _write(out_dir, "fig7_8.json", dumps(report), files)
    _write(out_dir, "fig7_8_fluid.csv", traj.to_csv(), files)
    _write(out_dir, "fig7_8_delta.svg", svg.time_plot(traj, ["delta"], title="queue difference"), files)
    _write(out_dir, "fig7_8_phase.svg", svg.phase_plot(traj, title="phase portrait"), files)
    return Reproduction("fig7_8", report, files)


def fig9_10(out_dir: Optional[str] = None, cycles: int = 10) -> Reproduction:
    """Outward spiral to the limit cycle with a small abandonment rate."""
    p = SMALL_ABANDONMENT
    r = iterate_periodic(DEFAULT_START, p)
    period = r.periodic.period if r.periodic is not None else 100.0
    x0 = full_pools_state(DEFAULT_START[0], DEFAULT_START[1], p.tau, DEFAULT_START[2])
    traj = simulate(x0, p, cycles * period, sample_dt=0.1)
    checks = [
        {"quantity": "fluid verdict", "computed": r.verdict.value,
         "expected": Verdict.OSCILLATORY.value, "pass": r.verdict == Verdict.OSCILLATORY},
    ]
    if r.periodic is not None:
        checks.append({"quantity": "closure residual", "computed": r.periodic.closure_residual,
                       "expected": "< 1e-6", "pass": r.periodic.closure_residual < 1e-6})
    report = {"target": "fig9_10", "params": p.to_dict(), "start": list(DEFAULT_START),
              "classification": r.to_dict(), "stop_reason": traj.stop_reason, "checks": checks}
    files: List[str] = []
    _write(out_dir, "fig9_10.json", dumps(report), files)
    _write(out_dir, "fig9_10_fluid.csv", traj.to_csv(), files)
    _write(out_dir, "fig9_10_delta.svg", svg.time_plot(traj, ["delta"], title="queue difference"), files)
    _write(out_dir, "fig9_10_phase.svg", svg.phase_plot(traj, title="phase portrait"), files)
    return Reproduction("fig9_10", report, files)


def sec7_4(out_dir: Optional[str] = None, seeds: int = UNSTABLE_POINT_SEEDS) -> Reproduction:
    """Stochastic oscillations around a fluid-stable stationary point."""
    pa = UNSTABLE_POINT_CTMC
    counts = []
    first = None
    for r in range(seeds):
        seed = replication_seed(CTMC_BASE_SEED, r)
        tr = simulate_ctmc(CtmcState(0, 0, 0, 0, 0, 0), pa, UNSTABLE_POINT_HORIZON, seed, sample_dt=0.5)
        counts.append(oscillation_detector(tr, 0.3))
        if first is None:
            first = tr
    frac = float(np.mean(np.array(counts) >= 3))

    pb = NO_OSCILLATION_CTMC
    seed_b = replication_seed(CTMC_BASE_SEED, 1000)
    x0b = CtmcState(0, 0, pb.m1 - 20, 0, 20, int(pb.lam2))
    trb = simulate_ctmc(x0b, pb, NO_OSCILLATION_HORIZON, seed_b, sample_dt=0.5)
    last = trb.times >= NO_OSCILLATION_HORIZON - 500.0
    tail = Trajectory(times=trb.times[last], states=trb.states[last],
                      phases=[ph for ph, k in zip(trb.phases, last) if k])
    alt_b = oscillation_detector(trb, 0.1)
    alt_b_tail = oscillation_detector(tail, 0.1)
    qmax = float(trb.states[:, :2].max())
    checks = [
        {"quantity": "fraction of seeds with >= 3 alternations", "computed": frac, "expected": ">= 0.8",
         "pass": frac >= 0.8},
        {"quantity": "alternations over the last 500 time units", "computed": alt_b_tail,
         "expected": ">= 3", "pass": alt_b_tail >= 3},
    ]
    report = {"target": "sec7_4",
              "unstable_point": {"params": pa.to_dict(), "horizon": UNSTABLE_POINT_HORIZON,
                                 "band": 0.3, "alternations": counts, "fraction": frac},
              "no_oscillating_fluid": {"params": pb.to_dict(), "horizon": NO_OSCILLATION_HORIZON,
                                       "band": 0.1, "alternations": alt_b,
                                       "alternations_last_500": alt_b_tail,
                                       "max_scaled_queue": qmax},
              "checks": checks}
    files: List[str] = []
    _write(out_dir, "sec7_4.json", dumps(report), files)
    _write(out_dir, "sec7_4_unstable_point.csv", first.to_csv(), files)
    _write(out_dir, "sec7_4_no_oscillating_fluid.csv", trb.to_csv(), files)
    _write(out_dir, "sec7_4_unstable_point_shared.svg",
           svg.time_plot(first, ["z12", "z21"], title="shared occupancy (scaled)"), files)
    _write(out_dir, "sec7_4_unstable_point_q1.svg", svg.time_plot(first, ["q1"], title="queue 1 (scaled)"), files)
    window = trb.times <= 100.0
    _write(out_dir, "sec7_4_no_oscillating_fluid_shared.svg", svg.line_plot(
        [(trb.times[window], trb.column("z12")[window], "z12"),
         (trb.times[window], trb.column("z21")[window], "z21")],
        title="shared occupancy (scaled)", xlabel="t"), files)
    return Reproduction("sec7_4", report, files)


CERT_DELTA_RANGE = (4.0, 7.0)
CERT_Q1_RANGE = (1.0, 20.0)
CERT_A_U = -0.891
CERT_DELTA_LOWER = 6.21
CERT_SEED = 7


def appendixA_example(out_dir: Optional[str] = None, starts: int = 10) -> Reproduction:
    """Certificate of endless oscillation for the small-abandonment preset."""
    p = SMALL_ABANDONMENT
    cert = certify_endless(CERT_DELTA_RANGE, CERT_Q1_RANGE, p)
    rng = np.random.default_rng(CERT_SEED)
    verdicts = []
    for _ in range(starts):
        d = rng.uniform(*CERT_DELTA_RANGE)
        q1 = rng.uniform(*CERT_Q1_RANGE)
        z21 = rng.uniform(0.0, p.tau)
        r = iterate_periodic((q1, q1 + d, z21), p)
        verdicts.append({"delta0": d, "q1": q1, "z21": z21, "verdict": r.verdict.value})
    all_osc = all(v["verdict"] == Verdict.OSCILLATORY.value for v in verdicts)
    checks = [
        {"quantity": "certificate verdict", "computed": cert.verdict, "expected": True, "pass": cert.verdict},
        _compare("A_U", cert.A_U_constant, CERT_A_U, 0.01),
        {"quantity": "next delta lower estimate", "computed": cert.delta_next_lower_small_kappa,
         "expected": f">= {CERT_DELTA_LOWER}", "pass": cert.delta_next_lower_small_kappa >= CERT_DELTA_LOWER},
        {"quantity": "random starts oscillate", "computed": all_osc, "expected": True, "pass": all_osc},
    ]
    report = {"target": "appendixA_example", "params": p.to_dict(), "certificate": cert.to_dict(),
              "random_starts": verdicts, "checks": checks}
    files: List[str] = []
    _write(out_dir, "appendixA_example.json", dumps(report), files)
    return Reproduction("appendixA_example", report, files)


TARGETS: Dict[str, Callable[..., Reproduction]] = {
    "table1": table1,
    "fig3_6": fig3_6,
    "fig7_8": fig7_8,
    "fig9_10": fig9_10,
    "sec7_4": sec7_4,
    "appendixA_example": appendixA_example,
}


def reproduce(target: str, out_dir: Optional[str] = None) -> Reproduction:
    """Run a preconfigured experiment and write its comparison report."""
    if target not in TARGETS:
        raise ValueError(f"unknown target {target!r}; choose from {sorted(TARGETS)}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    return TARGETS[target](out_dir)


# ---------------------------------------------------------------------------

FWLLN_SCALES = (100, 400, 1600)


def fwlln_experiment(reps: int = 20, base_seed: int = 0, scales=FWLLN_SCALES):
    """Gap between scaled stochastic paths and the fluid path over one cycle."""
    p = SMALL_ABANDONMENT
    x0 = full_pools_state(DEFAULT_START[0], DEFAULT_START[1], p.tau, DEFAULT_START[2])
    ref = simulate(x0, p, 150.0, sample_dt=None)
    cycle = ref.half_cycles[1].Sigma2
    family = [CtmcParams.from_fluid(p, n) for n in scales]
    return fwlln_gap(family, ref, p, cycle, reps, base_seed=base_seed, x0=x0)


def contraction_report(p: ModelParams = NO_ABANDONMENT) -> Dict:
    rc = contraction_rate(p)
    return {"params": p.to_dict(), "rates": rc.to_dict(), "delta_bound": delta_bound(p)}
