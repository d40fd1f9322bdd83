"""Discrete-event simulation of the prelimit two-class, two-pool system.

The chain is simulated exactly by the direct method: draw an exponential
holding time from the total rate, then pick one of eight aggregated events
(two arrivals, four service completions, two abandonments) in proportion to
its rate.  Freed agents pick their next customer with
:func:`route_on_service_completion`.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .fluid import Trajectory
from .model import ModelParams, Phase, StateVector

EVENT_NAMES = ("arrival1", "arrival2", "service11", "service12", "service21",
               "service22", "abandon1", "abandon2")

_BATCH = 8192


@dataclass(frozen=True)
class CtmcParams:
    """Parameters of the stochastic system at scale ``n``.

    ``mu_ij`` is the service rate of a class-i customer in pool j.  ``k12``
    and ``tau21`` control sending class 1 to pool 2; ``k21`` and ``tau12``
    control sending class 2 to pool 1.
    """

    n: int
    m1: int
    m2: int
    lam1: float
    lam2: float
    mu11: float = 1.0
    mu12: float = 1.0
    mu21: float = 1.0
    mu22: float = 1.0
    theta1: float = 0.0
    theta2: float = 0.0
    k12: int = 0
    k21: int = 0
    tau12: int = 0
    tau21: int = 0
    r12: float = 1.0
    r21: float = 1.0

    def __post_init__(self):
        problems = []
        if self.n <= 0:
            problems.append("n must be positive")
        if self.m1 < 0 or self.m2 < 0:
            problems.append("pool sizes must be nonnegative")
        for name in ("lam1", "lam2", "theta1", "theta2"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be nonnegative")
        for name in ("mu11", "mu12", "mu21", "mu22"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        for name in ("k12", "k21", "tau12", "tau21"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                problems.append(f"{name} must be a nonnegative integer")
        if not (self.r12 > 0 and self.r21 > 0):
            problems.append("queue ratios must be positive")
        if problems:
            raise ValueError("; ".join(problems))

    @classmethod
    def from_fluid(cls, p: ModelParams, n: int, k: Optional[int] = None,
                   tau: Optional[int] = None, lam: Optional[float] = None) -> "CtmcParams":
        """Scale symmetric fluid parameters to an ``n``-agent-per-pool system.

        Thresholds default to ``round(kappa n)`` and ``round(tau n)``.
        """
        k = int(round(p.kappa * n)) if k is None else int(k)
        tau = int(round(p.tau * n)) if tau is None else int(tau)
        lam = p.lam * n if lam is None else float(lam)
        return cls(n=n, m1=n, m2=n, lam1=lam, lam2=lam, mu11=1.0, mu12=p.mu,
                   mu21=p.mu, mu22=1.0, theta1=p.theta, theta2=p.theta,
                   k12=k, k21=k, tau12=tau, tau21=tau)

    def limits(self) -> Dict[str, float]:
        """Fluid-scaled limiting quantities used to match a fluid reference."""
        n = self.n
        return {"lambda1": self.lam1 / n, "lambda2": self.lam2 / n, "m1": self.m1 / n,
                "m2": self.m2 / n, "kappa12": self.k12 / n, "kappa21": self.k21 / n,
                "tau12": self.tau12 / n, "tau21": self.tau21 / n, "mu12": self.mu12,
                "mu21": self.mu21, "theta1": self.theta1, "theta2": self.theta2}

    def to_dict(self) -> Dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: Dict) -> "CtmcParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown CTMC parameter fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class CtmcState:
    """Integer state of the stochastic system."""

    Q1: int
    Q2: int
    Z11: int
    Z12: int
    Z21: int
    Z22: int
    clock: float = 0.0

    def as_tuple(self) -> Tuple[int, int, int, int, int, int]:
        return (self.Q1, self.Q2, self.Z11, self.Z12, self.Z21, self.Z22)

    def d12(self, p: CtmcParams) -> float:
        return self.Q1 - p.r12 * self.Q2 - p.k12

    def d21(self, p: CtmcParams) -> float:
        return p.r21 * self.Q2 - self.Q1 - p.k21

    def check(self, p: CtmcParams) -> List[str]:
        """Return the violated state invariants."""
        problems = []
        if min(self.as_tuple()) < 0:
            problems.append("negative count")
        if self.Z11 + self.Z21 > p.m1:
            problems.append("pool 1 over capacity")
        if self.Z12 + self.Z22 > p.m2:
            problems.append("pool 2 over capacity")
        if self.Q1 > 0 and self.Z11 + self.Z21 < p.m1:
            problems.append("class 1 waits while pool 1 idles")
        if self.Q2 > 0 and self.Z12 + self.Z22 < p.m2:
            problems.append("class 2 waits while pool 2 idles")
        return problems

    @classmethod
    def from_fluid(cls, x: StateVector, n: int) -> "CtmcState":
        """Round ``n x`` to integers, trimming so that pool capacities hold."""
        vals = [int(round(v * n)) for v in x.as_tuple()]
        q1, q2, z11, z12, z21, z22 = vals
        z11 = min(z11, n - z21)
        z22 = min(z22, n - z12)
        return cls(q1, q2, z11, z12, z21, z22)


def _route(pool, Q1, Q2, Z12, Z21, r12, r21, k12, k21, tau12, tau21):
    # class to serve next by a freed agent of `pool`, 0 to idle
    if pool == 2:
        if Q1 > 0 and Q1 - r12 * Q2 - k12 > 0 and Z21 <= tau21:
            return 1
        if Q2 > 0:
            return 2
        if Q1 > 0 and Q1 >= k12:
            return 1
        return 0
    if Q2 > 0 and r21 * Q2 - Q1 - k21 > 0 and Z12 <= tau12:
        return 2
    if Q1 > 0:
        return 1
    if Q2 > 0 and Q2 >= k21:
        return 2
    return 0


def route_on_service_completion(s: CtmcState, pool: int, p: CtmcParams) -> int:
    """Class (1 or 2) a just-freed agent of ``pool`` serves next, or 0 to idle.

    Sharing toward ``pool`` is used when the corresponding difference process
    is positive and the reverse occupancy is at most its release threshold.
    Otherwise the agent serves its own queue.  With its own queue empty it
    still takes the other class when that queue is at least the activation
    threshold (spare capacity).
    """
    if pool not in (1, 2):
        raise ValueError("pool must be 1 or 2")
    if min(s.as_tuple()) < 0:
        raise ValueError("inconsistent state: negative count")
    if (pool == 1 and s.Z11 + s.Z21 >= p.m1) or (pool == 2 and s.Z12 + s.Z22 >= p.m2):
        raise ValueError("inconsistent state: no free agent in pool")
    return _route(pool, s.Q1, s.Q2, s.Z12, s.Z21, p.r12, p.r21, p.k12, p.k21, p.tau12, p.tau21)


def _phase_label(Q1, Q2, Z12, Z21, p: CtmcParams) -> Phase:
    # direction of active sharing, if any
    if p.r21 * Q2 - Q1 - p.k21 > 0 and Z12 <= p.tau12:
        return Phase.I1
    if Q1 - p.r12 * Q2 - p.k12 > 0 and Z21 <= p.tau21:
        return Phase.I3
    return Phase.RELAXATION


@dataclass
class CtmcRun:
    """Raw output of one replication in unscaled counts."""

    times: np.ndarray
    counts: np.ndarray
    final: CtmcState
    n_events: int
    events: Optional[List[Tuple[float, int, Tuple[int, ...]]]] = None


def run_ctmc(x0: CtmcState, p: CtmcParams, horizon: float, seed, sample_dt: float = 0.1,
             record_events: bool = False) -> CtmcRun:
    """Simulate the chain and record the counts on a regular time grid.

    Parameters
    ----------
    seed : int or numpy.random.SeedSequence
        Seeds the single generator used by this replication.
    record_events : bool
        Keep ``(time, event index, state before the event)`` for every jump.
    """
    problems = x0.check(p)
    if problems:
        raise ValueError("invalid initial state: " + "; ".join(problems))
    if not horizon >= 0:
        raise ValueError("horizon must be nonnegative")
    if not sample_dt > 0:
        raise ValueError("sample_dt must be positive")
    rng = np.random.default_rng(seed)

    Q1, Q2, Z11, Z12, Z21, Z22 = x0.as_tuple()
    m1, m2 = p.m1, p.m2
    l1, l2 = p.lam1, p.lam2
    u11, u12, u21, u22 = p.mu11, p.mu12, p.mu21, p.mu22
    th1, th2 = p.theta1, p.theta2
    r12, r21, k12, k21, tau12, tau21 = p.r12, p.r21, p.k12, p.k21, p.tau12, p.tau21
    route = _route
    la = l1 + l2

    t0 = float(x0.clock)
    n_grid = int(math.floor(horizon / sample_dt + 1e-9)) + 1
    grid = t0 + sample_dt * np.arange(n_grid)
    rec = np.empty((n_grid, 6), dtype=np.int64)
    gi = 0
    g_next = grid[0]
    t_end = t0 + horizon
    log = [] if record_events else None

    E = rng.standard_exponential(_BATCH).tolist()
    U = rng.random(_BATCH).tolist()
    bi = 0
    t = t0
    n_events = 0
    while True:
        R = la + u11 * Z11 + u12 * Z12 + u21 * Z21 + u22 * Z22 + th1 * Q1 + th2 * Q2
        if R <= 0.0:
            t_next = math.inf
        else:
            t_next = t + E[bi] / R
        while gi < n_grid and g_next < t_next:
            rec[gi] = (Q1, Q2, Z11, Z12, Z21, Z22)
            gi += 1
            if gi < n_grid:
                g_next = grid[gi]
        if t_next > t_end:
            break
        t = t_next
        x = U[bi] * R
        bi += 1
        if bi == _BATCH:
            E = rng.standard_exponential(_BATCH).tolist()
            U = rng.random(_BATCH).tolist()
            bi = 0
        n_events += 1

        if x < l1:
            ev = 0
        elif x < la:
            ev = 1
        else:
            x -= la
            a = u11 * Z11
            if x < a:
                ev = 2
            else:
                x -= a
                a = u12 * Z12
                if x < a:
                    ev = 3
                else:
                    x -= a
                    a = u21 * Z21
                    if x < a:
                        ev = 4
                    else:
                        x -= a
                        a = u22 * Z22
                        if x < a:
                            ev = 5
                        else:
                            x -= a
                            ev = 6 if x < th1 * Q1 else 7
                            # guard against round-off picking an empty queue
                            if ev == 6 and Q1 == 0:
                                ev = 7
                            elif ev == 7 and Q2 == 0:
                                ev = 6
        if log is not None:
            log.append((t, ev, (Q1, Q2, Z11, Z12, Z21, Z22)))

        if ev == 0:
            Q1 += 1
            if Z11 + Z21 < m1:
                Q1 -= 1
                Z11 += 1
            elif Z12 + Z22 < m2 and route(2, Q1, Q2, Z12, Z21, r12, r21, k12, k21, tau12, tau21) == 1:
                Q1 -= 1
                Z12 += 1
        elif ev == 1:
            Q2 += 1
            if Z12 + Z22 < m2:
                Q2 -= 1
                Z22 += 1
            elif Z11 + Z21 < m1 and route(1, Q1, Q2, Z12, Z21, r12, r21, k12, k21, tau12, tau21) == 2:
                Q2 -= 1
                Z21 += 1
        elif ev == 6:
            Q1 -= 1
        elif ev == 7:
            Q2 -= 1
        else:
            if ev == 2:
                Z11 -= 1
                pool = 1
            elif ev == 3:
                Z12 -= 1
                pool = 2
            elif ev == 4:
                Z21 -= 1
                pool = 1
            else:
                Z22 -= 1
                pool = 2
            c = route(pool, Q1, Q2, Z12, Z21, r12, r21, k12, k21, tau12, tau21)
            if c == 1:
                Q1 -= 1
                if pool == 1:
                    Z11 += 1
                else:
                    Z12 += 1
            elif c == 2:
                Q2 -= 1
                if pool == 1:
                    Z21 += 1
                else:
                    Z22 += 1

    final = CtmcState(Q1, Q2, Z11, Z12, Z21, Z22, clock=t_end)
    return CtmcRun(times=grid - t0, counts=rec, final=final, n_events=n_events, events=log)


def replication_seed(base_seed: int, rep: int) -> int:
    """Independent integer seed for replication ``rep`` of a base seed."""
    return int(np.random.SeedSequence([int(base_seed), int(rep)]).generate_state(1, np.uint64)[0])


def simulate_ctmc(x0: CtmcState, p: CtmcParams, horizon: float, seed: int,
                  sample_dt: float = 0.1) -> Trajectory:
    """Simulate and return the fluid-scaled path ``X(t) / n`` on a time grid.

    The same ``(x0, p, horizon, seed)`` always yields the same path.
    """
    run = run_ctmc(x0, p, horizon, seed, sample_dt=sample_dt)
    return _to_trajectory(run, p, seed)


def _to_trajectory(run: CtmcRun, p: CtmcParams, seed: int) -> Trajectory:
    c = run.counts
    phases = [_phase_label(r[0], r[1], r[3], r[4], p) for r in c]
    return Trajectory(times=run.times.copy(), states=c / float(p.n), phases=phases,
                      stop_reason="horizon", meta={"n": int(p.n), "seed": int(seed)})


# -- empirical fluid-limit check -------------------------------------------

@dataclass
class GapRow:
    n: int
    gaps: List[float]
    median: float
    iqr: float
    events: int

    def to_dict(self) -> Dict:
        return {"n": self.n, "median": self.median, "iqr": self.iqr,
                "gaps": list(self.gaps), "events": self.events}


@dataclass
class GapTable:
    rows: List[GapRow]
    horizon: float
    reps: int
    base_seed: int

    @property
    def medians(self) -> List[float]:
        return [r.median for r in self.rows]

    def strictly_decreasing(self) -> bool:
        m = self.medians
        return all(b < a for a, b in zip(m, m[1:]))

    def to_dict(self) -> Dict:
        return {"horizon": self.horizon, "reps": self.reps, "base_seed": self.base_seed,
                "rows": [r.to_dict() for r in self.rows],
                "strictly_decreasing": self.strictly_decreasing()}


def _check_limits(p: CtmcParams, fluid: ModelParams, tol: float) -> None:
    lim = p.limits()
    want = {"lambda1": fluid.lam, "lambda2": fluid.lam, "m1": 1.0, "m2": 1.0,
            "kappa12": fluid.kappa, "kappa21": fluid.kappa, "tau12": fluid.tau,
            "tau21": fluid.tau, "mu12": fluid.mu, "mu21": fluid.mu,
            "theta1": fluid.theta, "theta2": fluid.theta}
    bad = [k for k, v in want.items() if abs(lim[k] - v) > tol]
    if bad or p.mu11 != 1.0 or p.mu22 != 1.0 or p.r12 != 1.0 or p.r21 != 1.0:
        raise ValueError(f"CTMC parameters do not match the fluid limit: {bad}")


def _gap_job(args):
    x0, p, horizon, seed, sample_dt, ref = args
    run = run_ctmc(x0, p, horizon, seed, sample_dt=sample_dt)
    scaled = run.counts / float(p.n)
    return float(np.max(np.abs(scaled - ref))), run.n_events


def worker_count() -> int:
    """Parallel replication cap from ``CHATTERLAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("CHATTERLAB_THREADS", "1")))
    except ValueError:
        return 1


def fwlln_gap(p_family: Sequence[CtmcParams], fluid_ref: Trajectory, fluid_params: ModelParams,
              horizon: float, reps: int, base_seed: int = 0, sample_dt: float = 0.02,
              x0: Optional[StateVector] = None, limit_tol: float = 0.02) -> GapTable:
    """Median over replications of the sup-norm gap to a fluid reference.

    For each scale the gap ``max_t |X(t)/n - x(t)|`` is taken over a grid of
    step ``sample_dt`` on ``[0, horizon]``; ``horizon`` is cut at the first
    time a fluid queue empties.  The fluid reference must carry closed-form
    segments (as produced by ``fluid.simulate``).
    """
    if reps <= 0:
        raise ValueError("reps must be positive")
    if x0 is None:
        x0 = fluid_ref.state(0)
    sigma_q = _first_empty_queue(fluid_ref)
    if sigma_q is not None:
        horizon = min(horizon, sigma_q)
    horizon = min(horizon, fluid_ref.end_time)
    rows = []
    workers = worker_count()
    for p in p_family:
        _check_limits(p, fluid_params, limit_tol)
        start = CtmcState.from_fluid(x0, p.n)
        n_grid = int(math.floor(horizon / sample_dt + 1e-9)) + 1
        ref = fluid_ref.evaluate(sample_dt * np.arange(n_grid))
        jobs = [(start, p, horizon, replication_seed(base_seed, r), sample_dt, ref)
                for r in range(reps)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                out = list(ex.map(_gap_job, jobs))
        else:
            out = [_gap_job(j) for j in jobs]
        gaps = [g for g, _ in out]
        q25, q50, q75 = np.percentile(gaps, [25, 50, 75])
        rows.append(GapRow(n=p.n, gaps=gaps, median=float(q50), iqr=float(q75 - q25),
                           events=int(sum(e for _, e in out))))
    return GapTable(rows=rows, horizon=float(horizon), reps=reps, base_seed=base_seed)


def _first_empty_queue(traj: Trajectory) -> Optional[float]:
    for rec in traj.half_cycles:
        if rec.sigma_q is not None:
            return float(rec.sigma_q)
    if traj.stop_reason == "queue hit zero":
        return traj.end_time
    return None


# -- oscillation detection ------------------------------------------------

def oscillation_detector(traj: Trajectory, band: float, hysteresis: float = 0.5) -> int:
    """Count alternations between the two sharing directions.

    The path is in state A when ``z12 >= band`` and ``z21 <= hysteresis *
    band``, in state B for the mirrored condition, and keeps its last state
    otherwise.  Every change of state, including the first entry, counts.
    """
    if band <= 0:
        raise ValueError("band must be positive")
    z12 = traj.column("z12")
    z21 = traj.column("z21")
    low = hysteresis * band
    in_a = (z12 >= band) & (z21 <= low)
    in_b = (z21 >= band) & (z12 <= low)
    label = np.where(in_a, 1, np.where(in_b, -1, 0))
    hits = label[label != 0]
    if hits.size == 0:
        return 0
    return int(1 + np.count_nonzero(np.diff(hits)))


# -- birth-death reference ------------------------------------------------

def erlang_a_mean(lam: float, m: int, mu: float, theta: float, tol: float = 1e-14) -> float:
    """Stationary mean number in system of an M/M/m queue with abandonment.

    Solved by truncating the birth-death chain once the probabilities fall
    below ``tol`` relative to their running maximum.
    """
    if theta <= 0 and lam >= m * mu:
        raise ValueError("unstable without abandonment")
    logp = [0.0]
    k = 0
    peak = 0.0
    while True:
        death = min(k + 1, m) * mu + max(k + 1 - m, 0) * theta
        logp.append(logp[-1] + math.log(lam) - math.log(death))
        k += 1
        peak = max(peak, logp[-1])
        if k > m and logp[-1] - peak < math.log(tol):
            break
    lp = np.array(logp)
    w = np.exp(lp - lp.max())
    w /= w.sum()
    return float(np.dot(np.arange(len(w)), w))


def independent_system_means(p: CtmcParams) -> Tuple[float, float]:
    """Means of ``Q_i + Z_i`` for the two classes when sharing never starts."""
    return (erlang_a_mean(p.lam1, p.m1, p.mu11, p.theta1),
            erlang_a_mean(p.lam2, p.m2, p.mu22, p.theta2))
