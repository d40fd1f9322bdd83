"""Exact piecewise solution of the switching fluid model.

The state follows one of two affine vector fields inside a half cycle:

* interval 1: class 2 is helped by pool 1, ``delta`` falls from its start
  value down to ``kappa``;
* interval 2: no sharing, ``z21`` decays at rate ``mu`` until it reaches
  ``tau`` and the roles of the two classes swap.

Everything is written for this canonical orientation.  The second half of a
cycle is obtained by evaluating the canonical formulas on the mirrored state
and mirroring the result back.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bounds import t1_bounds
from .model import (
    EQ_TOL,
    STATE_FIELDS,
    ModelParams,
    Phase,
    StateVector,
    check_initial_condition,
    check_state,
    mirror,
    require_valid,
)

ROOT_TOL = 1e-12


class NonConvergenceError(RuntimeError):
    """A root or fixed point could not be located to the requested accuracy."""


class Termination(str, Enum):
    COMPLETED = "Completed"
    QUEUE_HIT_ZERO = "QueueHitZero"
    OSCILLATION_FAILED = "OscillationFailed"
    SLIDING = "SlidingDetected"


# ---------------------------------------------------------------------------
# numerically stable building blocks

def gfun(a: float, t):
    """``(1 - exp(-a t)) / a`` with the limit ``t`` at ``a = 0``.

    ``expm1`` keeps full relative precision for small ``a t``; a short series
    is used when ``|a| < 1e-8`` so that ``a = mu - theta`` close to zero does
    not lose digits.
    """
    t = np.asarray(t, dtype=float)
    if a == 0.0:
        return t.copy()
    if abs(a) < 1e-8:
        at = a * t
        return t * (1.0 - at / 2.0 + at * at / 6.0)
    return -np.expm1(-a * t) / a


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


# ---------------------------------------------------------------------------
# canonical closed forms; arrays of shape (6, n) or (6,)

def _interval1_arrays(x0: StateVector, t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    lam, mu, th = p.lam, p.mu, p.theta
    eth = np.exp(-th * t)
    z11 = (1.0 - x0.z21) * np.exp(-t)
    z21 = 1.0 - z11
    z12 = x0.z12 * np.exp(-mu * t)
    z22 = 1.0 - z12
    q1 = x0.q1 * eth + lam * gfun(th, t)
    q2 = (x0.q2 * eth + (lam - 1.0 - mu) * gfun(th, t)
          - (1.0 - mu) * (1.0 - x0.z21) * eth * gfun(1.0 - th, t)
          + (1.0 - mu) * x0.z12 * eth * gfun(mu - th, t))
    return np.array([q1, q2, z11, z12, z21, z22])


def _delta1(delta0: float, z21_0: float, z12_0: float, t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    mu, th = p.mu, p.theta
    eth = np.exp(-th * t)
    return (delta0 * eth - (1.0 + mu) * gfun(th, t)
            - (1.0 - mu) * (1.0 - z21_0) * eth * gfun(1.0 - th, t)
            + (1.0 - mu) * z12_0 * eth * gfun(mu - th, t))


def _full_pool_queue(q0: float, zf0: float, t, p: ModelParams):
    """Queue of a full pool that only refills with its own class.

    ``zf0`` is the other class's occupancy in that pool, decaying at ``mu``.
    """
    t = np.asarray(t, dtype=float)
    eth = np.exp(-p.theta * t)
    return (q0 * eth + (p.lam - 1.0) * gfun(p.theta, t)
            + (1.0 - p.mu) * zf0 * eth * gfun(p.mu - p.theta, t))


def _interval2_arrays(x1: StateVector, t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    dec = np.exp(-p.mu * t)
    z21 = x1.z21 * dec
    z12 = x1.z12 * dec
    q1 = _full_pool_queue(x1.q1, x1.z21, t, p)
    q2 = _full_pool_queue(x1.q2, x1.z12, t, p)
    return np.array([q1, q2, 1.0 - z21, z12, z21, 1.0 - z12])


def _to_state(arr) -> StateVector:
    return StateVector(*(float(v) for v in arr))


# ---------------------------------------------------------------------------
# public closed-form evaluators

def _check_sharing_start(x0: StateVector, p: ModelParams) -> None:
    problems = check_state(x0)
    if problems:
        raise ValueError("invalid state: " + "; ".join(problems))
    if not x0.pools_full():
        raise ValueError("both pools must be full on the first interval")
    if not x0.delta > p.kappa:
        raise ValueError("q2 - q1 > kappa required on the first interval")
    if x0.z12 > p.tau + EQ_TOL:
        raise ValueError("z12 <= tau required on the first interval")


def eval_interval1(x0: StateVector, t: float, p: ModelParams) -> StateVector:
    """State at time ``t`` after the start of the first interval.

    Parameters
    ----------
    x0 : StateVector
        Start state with both pools full, ``q2 - q1 > kappa`` and
        ``z12 <= tau`` (normally ``z12 = tau``).
    t : float
        Elapsed time, ``0 <= t <= T1``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_sharing_start(x0, p)
    if t == 0:
        return x0
    return _to_state(_interval1_arrays(x0, t, p))


def eval_delta1(delta0: float, z21_0: float, t, p: ModelParams, z12_0: Optional[float] = None):
    """Queue difference on the first interval as a function of its start values.

    ``z12_0`` defaults to ``tau``.  Accepts scalar or array ``t``.
    """
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be nonnegative")
    if z12_0 is None:
        z12_0 = p.tau
    return _scalar(_delta1(delta0, z21_0, z12_0, t, p))


def _bisect(f: Callable[[float], float], lo: float, hi: float, flo: float,
            max_iter: int = 300) -> Tuple[float, float]:
    """Bisection for a sign change of ``f`` on ``[lo, hi]`` given ``f(lo)``.

    Returns the best point found and its residual.
    """
    best, fbest = lo, flo
    fhi = f(hi)
    if abs(fhi) < abs(fbest):
        best, fbest = hi, fhi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = f(mid)
        if abs(fm) < abs(fbest):
            best, fbest = mid, fm
        if fm == 0.0:
            break
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return best, fbest


def find_T1(x0: StateVector, p: ModelParams) -> float:
    """Length of the first interval, the unique root of ``delta(t) = kappa``.

    The queue difference is strictly decreasing on this interval, so
    bisection inside an analytic bracket is guaranteed to converge.
    """
    require_valid(p)
    delta0 = x0.delta
    if not delta0 > p.kappa:
        raise ValueError("q2 - q1 > kappa required")
    z21_0, z12_0 = x0.z21, min(x0.z12, p.tau)

    def f(t):
        return float(_delta1(delta0, z21_0, z12_0, t, p)) - p.kappa

    lo, hi = t1_bounds(delta0, p)
    lo = max(0.0, lo * (1.0 - 1e-12) - 1e-15)
    if p.theta > 0:
        hi = hi * (1.0 + 1e-12) + 1e-15
    # widen if rounding left the bracket without a sign change
    while f(lo) < 0 and lo > 0:
        lo = max(0.0, lo / 2.0 - 1e-15)
    hi = max(hi, lo + 1e-15)
    n = 0
    while f(hi) > 0:
        hi *= 2.0
        n += 1
        if n > 200:
            raise NonConvergenceError("could not bracket T1")
    flo = f(lo)
    if flo <= 0:
        return lo
    t, res = _bisect(f, lo, hi, flo)
    if abs(res) >= ROOT_TOL:
        raise NonConvergenceError(f"T1 residual {res:.3e} above tolerance")
    return t


def find_T2(x_at_T1: StateVector, p: ModelParams) -> float:
    """Length of the second interval: time for ``z21`` to decay to ``tau``."""
    if x_at_T1.z21 > p.tau:
        return math.log(x_at_T1.z21 / p.tau) / p.mu
    return 0.0


def eval_interval2(x_at_T1: StateVector, t: float, p: ModelParams,
                   T2: Optional[float] = None) -> StateVector:
    """State at time ``t`` after the start of the second interval."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if T2 is None:
        T2 = find_T2(x_at_T1, p)
    if t > T2 * (1 + 1e-12) + 1e-12:
        raise ValueError(f"t = {t} beyond the end of the interval ({T2})")
    if t == 0:
        return x_at_T1
    return _to_state(_interval2_arrays(x_at_T1, t, p))


def _first_queue_zero(q_of_t: Callable, horizon: float) -> Optional[float]:
    """First zero of a queue path that rises at most once and then falls.

    Such a path is positive on ``[0, horizon]`` iff it is positive at both
    ends, so checking the end value decides existence.
    """
    if horizon <= 0:
        return None
    if float(q_of_t(horizon)) > 0:
        return None
    f = lambda s: float(q_of_t(s))
    f0 = f(0.0)
    if f0 <= 0:
        return 0.0
    t, _ = _bisect(f, 0.0, horizon, f0)
    # return a point at which the queue is not positive
    if f(t) > 0:
        step = max(abs(t), 1.0) * 1e-15
        while f(t) > 0 and t < horizon:
            t = min(horizon, t + step)
            step *= 2
    return t


def find_sigma_q(x_segment_start: StateVector, phase: Phase, horizon: float,
                 p: ModelParams) -> Optional[float]:
    """Earliest time within a phase at which a queue empties, or ``None``.

    On the sharing intervals (I1, I3) queues cannot empty.  On the
    no-sharing intervals each queue path rises at most once and then falls,
    so a single bisection locates the hit.
    """
    if phase in (Phase.I1, Phase.I3):
        return None
    x = mirror(x_segment_start) if phase == Phase.I4 else x_segment_start
    hits = []
    for q0, zf0 in ((x.q1, x.z21), (x.q2, x.z12)):
        hit = _first_queue_zero(lambda s, q0=q0, zf0=zf0: _full_pool_queue(q0, zf0, s, p), horizon)
        if hit is not None:
            hits.append(hit)
    return min(hits) if hits else None


# ---------------------------------------------------------------------------
# cycle records

@dataclass
class CycleRecord:
    """Holding times, switching epochs and switching states of a (half) cycle.

    ``holding_times[k]`` is ``T_{k+1}``; ``switching_times[k]`` is
    ``Sigma_k`` so there is one more epoch than holding time.
    """

    holding_times: Tuple[float, ...]
    switching_times: Tuple[float, ...]
    states_at_switch: Tuple[StateVector, ...]
    terminated_by: Termination = Termination.COMPLETED
    sigma_q: Optional[float] = None
    state_at_sigma_q: Optional[StateVector] = None

    def _T(self, k):
        return self.holding_times[k - 1] if len(self.holding_times) >= k else None

    def _S(self, k):
        return self.switching_times[k] if len(self.switching_times) > k else None

    T1 = property(lambda self: self._T(1))
    T2 = property(lambda self: self._T(2))
    T3 = property(lambda self: self._T(3))
    T4 = property(lambda self: self._T(4))
    Sigma0 = property(lambda self: self._S(0))
    Sigma1 = property(lambda self: self._S(1))
    Sigma2 = property(lambda self: self._S(2))
    Sigma3 = property(lambda self: self._S(3))
    Sigma4 = property(lambda self: self._S(4))

    def to_dict(self) -> Dict:
        return {
            "holding_times": list(self.holding_times),
            "switching_times": list(self.switching_times),
            "states_at_switch": [s.to_dict() for s in self.states_at_switch],
            "terminated_by": self.terminated_by.value,
            "sigma_q": self.sigma_q,
            "state_at_sigma_q": None if self.state_at_sigma_q is None else self.state_at_sigma_q.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Dict) -> "CycleRecord":
        sq = d.get("state_at_sigma_q")
        return cls(
            holding_times=tuple(d["holding_times"]),
            switching_times=tuple(d["switching_times"]),
            states_at_switch=tuple(StateVector.from_dict(s) for s in d["states_at_switch"]),
            terminated_by=Termination(d["terminated_by"]),
            sigma_q=d.get("sigma_q"),
            state_at_sigma_q=None if sq is None else StateVector.from_dict(sq),
        )


def _half_cycle_canonical(x0: StateVector, p: ModelParams, t0: float = 0.0) -> CycleRecord:
    T1 = find_T1(x0, p)
    x1 = _to_state(_interval1_arrays(x0, T1, p)) if T1 > 0 else x0
    T2 = find_T2(x1, p)
    sq = None
    for q0, zf0 in ((x1.q1, x1.z21), (x1.q2, x1.z12)):
        hit = _first_queue_zero(lambda s, q0=q0, zf0=zf0: _full_pool_queue(q0, zf0, s, p), T2)
        if hit is not None and (sq is None or hit < sq):
            sq = hit
    if sq is not None:
        xq = _to_state(_interval2_arrays(x1, sq, p))
        return CycleRecord((T1,), (t0, t0 + T1), (x0, x1), Termination.QUEUE_HIT_ZERO,
                           sigma_q=t0 + T1 + sq, state_at_sigma_q=xq)
    if T2 > 0:
        a = _interval2_arrays(x1, T2, p)
        # z21 reaches tau by construction of T2
        a[4], a[2] = p.tau, 1.0 - p.tau
        x2 = _to_state(a)
    else:
        x2 = x1
    term = Termination.COMPLETED if -x2.delta > p.kappa else Termination.OSCILLATION_FAILED
    return CycleRecord((T1, T2), (t0, t0 + T1, t0 + T1 + T2), (x0, x1, x2), term)


def half_cycle(x0: StateVector, p: ModelParams, t0: float = 0.0) -> CycleRecord:
    """Run the first two intervals of a cycle from a cycle-start state.

    The record ends with ``QueueHitZero`` if a queue empties on the second
    interval, with ``OscillationFailed`` if the mirrored state does not
    restart sharing (``-delta <= kappa`` at the end), and with ``Completed``
    otherwise.
    """
    require_valid(p)
    chk = check_initial_condition(x0, p)
    if not chk:
        raise ValueError("invalid cycle start: " + "; ".join(chk.reasons))
    return _half_cycle_canonical(x0, p, t0)


def _mirror_record(rec: CycleRecord) -> CycleRecord:
    return CycleRecord(
        rec.holding_times, rec.switching_times,
        tuple(mirror(s) for s in rec.states_at_switch),
        rec.terminated_by, rec.sigma_q,
        None if rec.state_at_sigma_q is None else mirror(rec.state_at_sigma_q))


def join_half_cycles(first: CycleRecord, second: CycleRecord) -> CycleRecord:
    """Concatenate two consecutive half-cycle records (actual orientation)."""
    return CycleRecord(
        first.holding_times + second.holding_times,
        first.switching_times + second.switching_times[1:],
        first.states_at_switch + second.states_at_switch[1:],
        second.terminated_by, second.sigma_q, second.state_at_sigma_q)


# ---------------------------------------------------------------------------
# relaxation without sharing

def _pool_regime(q: float, own: float, foreign: float, p: ModelParams) -> str:
    """'A': pool full and refilling from its queue; 'B': empty queue, pool not full."""
    if q > 0:
        return "A"
    if own + foreign < 1.0 - 1e-12:
        return "B"
    net = p.lam - (own + p.mu * foreign)
    return "A" if net > 0 else "B"


def _relax_arrays(x: StateVector, t, p: ModelParams, regimes: Tuple[str, str]):
    t = np.asarray(t, dtype=float)
    dec = np.exp(-p.mu * t)
    e1 = np.exp(-t)
    out = []
    # pool 1: own z11, foreign z21, queue q1; pool 2: own z22, foreign z12, queue q2
    for q0, own0, zf0, reg in ((x.q1, x.z11, x.z21, regimes[0]), (x.q2, x.z22, x.z12, regimes[1])):
        zf = zf0 * dec
        if reg == "A":
            own = 1.0 - zf
            q = _full_pool_queue(q0, zf0, t, p)
        else:
            own = p.lam + (own0 - p.lam) * e1
            q = np.zeros_like(t)
        out.append((q, own, zf))
    (q1, z11, z21), (q2, z22, z12) = out
    return np.array([q1, q2, z11, z12, z21, z22])


@dataclass
class _Segment:
    t0: float
    t1: float
    phase: Phase
    evaluate: Callable  # elapsed-time array -> (6, n) array, actual orientation


def _first_true(flags: np.ndarray) -> Optional[int]:
    idx = np.flatnonzero(flags)
    return int(idx[0]) if idx.size else None


def _relax_chunk(x: StateVector, p: ModelParams, H: float, n_grid: int = 2000):
    """Evolve the no-sharing dynamics for at most ``H``.

    Returns ``(t_end, regimes, kind, detail)`` where ``kind`` is ``None`` if
    nothing happened before ``H``.
    """
    regimes = (_pool_regime(x.q1, x.z11, x.z21, p), _pool_regime(x.q2, x.z22, x.z12, p))
    f = lambda t: _relax_arrays(x, t, p, regimes)
    tt = np.linspace(0.0, H, n_grid + 1)
    X = f(tt)
    q1, q2, z11, z12, z21, z22 = X
    delta = q2 - q1
    events = []

    def refine(g, k):
        lo, hi = tt[k - 1], tt[k]
        glo = float(g(lo))
        t, _ = _bisect(lambda s: float(g(s)), lo, hi, glo)
        return t

    # a queue empties
    for i, (reg, q) in enumerate(zip(regimes, (q1, q2))):
        if reg == "A":
            k = _first_true(q[1:] <= 0)
            if k is not None:
                k += 1
                t = refine(lambda s, i=i: f(s)[i], k)
                events.append((t, "empty", i))
    # a pool fills
    for i, (reg, s) in enumerate(zip(regimes, (z11 + z21, z22 + z12))):
        if reg == "B":
            k = _first_true(s[1:] >= 1.0)
            if k is not None:
                k += 1
                own, fo = (2, 4) if i == 0 else (5, 3)
                t = refine(lambda u: f(u)[own] + f(u)[fo] - 1.0, k)
                events.append((t, "fill", i))
    # sharing becomes admissible in either direction
    for sign, zname, zi in ((1.0, "z12", 3), (-1.0, "z21", 4)):
        d = sign * delta
        if abs(d[0] - p.kappa) <= EQ_TOL and X[zi][0] <= p.tau + EQ_TOL and d[1] > p.kappa:
            # on the switching surface and pushed back across it: sliding
            events.append((0.0, "sliding", sign))
            continue
        cond = (d > p.kappa) & (X[zi] <= p.tau)
        k = _first_true(cond[1:])
        if k is None:
            continue
        k += 1
        if d[k - 1] > p.kappa:
            # already over the threshold: occupancy released
            z0 = getattr(x, zname)
            t = math.log(z0 / p.tau) / p.mu if z0 > p.tau else tt[k - 1]
            t = min(max(t, tt[k - 1]), tt[k])
            events.append((t, "activate", sign))
        else:
            t = refine(lambda u: sign * (f(u)[1] - f(u)[0]) - p.kappa, k)
            zt = float(f(t)[zi])
            if zt <= p.tau + EQ_TOL:
                events.append((t, "sliding", sign))
            else:
                z0 = getattr(x, zname)
                ta = math.log(z0 / p.tau) / p.mu
                events.append((min(ta, tt[k]), "activate", sign))
    # an empty pool could take the other class's queue
    for i, reg in enumerate(regimes):
        if reg == "B":
            other_q = q2 if i == 0 else q1
            k = _first_true(other_q[1:] >= p.kappa)
            if k is not None:
                events.append((tt[k + 1], "spare", i))
    if not events:
        return H, regimes, None, None
    t, kind, detail = min(events, key=lambda e: e[0])
    return t, regimes, kind, detail


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Sampled path plus the cycle bookkeeping that produced it.

    ``times`` is strictly increasing; ``states`` has one row
    ``(q1, q2, z11, z12, z21, z22)`` per sample.
    """

    times: np.ndarray
    states: np.ndarray
    phases: List[Phase]
    cycle_records: List[CycleRecord] = field(default_factory=list)
    half_cycles: List[CycleRecord] = field(default_factory=list)
    switching_epochs: List[float] = field(default_factory=list)
    stop_reason: str = "horizon"
    classification_hint: str = ""
    jumps: List[Tuple[float, StateVector, StateVector]] = field(default_factory=list)
    meta: Dict[str, int] = field(default_factory=dict)
    holding_times: List[Tuple[float, float]] = field(default_factory=list)
    _segments: List[_Segment] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def delta(self) -> np.ndarray:
        return self.states[:, 1] - self.states[:, 0]

    def column(self, name: str) -> np.ndarray:
        if name == "delta":
            return self.delta
        return self.states[:, STATE_FIELDS.index(name)]

    @property
    def samples(self) -> List[Tuple[float, StateVector, Phase]]:
        return [(float(t), StateVector(*map(float, s)), ph)
                for t, s, ph in zip(self.times, self.states, self.phases)]

    def state(self, i: int) -> StateVector:
        return StateVector(*map(float, self.states[i]))

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def evaluate(self, times) -> np.ndarray:
        """Exact states at arbitrary times within the simulated range."""
        if not self._segments:
            raise ValueError("trajectory carries no closed-form segments")
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.empty((times.size, 6))
        starts = np.array([s.t0 for s in self._segments])
        idx = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(self._segments) - 1)
        for j in np.unique(idx):
            seg = self._segments[j]
            sel = idx == j
            out[sel] = np.asarray(seg.evaluate(times[sel] - seg.t0)).T
        return out

    # -- CSV -------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        extra = ["n", "seed"] if self.meta else []
        w.writerow(["t", *STATE_FIELDS, "delta", "phase", *extra])
        tail = [str(self.meta.get("n", "")), str(self.meta.get("seed", ""))] if self.meta else []
        for t, s, ph in zip(self.times, self.states, self.phases):
            row = [repr(float(t))] + [repr(float(v)) for v in s]
            row.append(repr(float(s[1] - s[0])))
            row.append(ph.value)
            w.writerow(row + tail)
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Trajectory":
        """Parse a CSV written by :meth:`to_csv` (path or text)."""
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        expected = ["t", *STATE_FIELDS, "delta", "phase"]
        if header[:9] != expected:
            raise ValueError(f"unexpected CSV header {header}")
        meta = {}
        if len(header) > 9:
            if header[9:] != ["n", "seed"]:
                raise ValueError(f"unexpected CSV header {header}")
            if body:
                meta = {"n": int(body[0][9]), "seed": int(body[0][10])}
        times = np.array([float(r[0]) for r in body])
        states = np.array([[float(v) for v in r[1:7]] for r in body]).reshape(-1, 6)
        phases = [Phase(r[8]) for r in body]
        return cls(times=times, states=states, phases=phases, meta=meta)


def _sample(segments: List[_Segment], end: float, dt: float) -> Tuple[np.ndarray, np.ndarray, List[Phase]]:
    epochs = [s.t0 for s in segments]
    if dt is None or dt <= 0 or end == 0:
        grid = np.array([0.0])
    else:
        grid = np.arange(0.0, end, dt)
    times_all, states_all, phases_all = [], [], []
    for j, seg in enumerate(segments):
        hi = seg.t1
        last = j == len(segments) - 1
        sel = grid[(grid > seg.t0) & (grid < hi)]
        # avoid near-duplicates of the exact epochs
        sel = sel[(sel - seg.t0 > 1e-9) & (hi - sel > 1e-9)]
        tt = np.concatenate([[seg.t0], sel, [hi] if last and hi > seg.t0 else []])
        X = np.asarray(seg.evaluate(tt - seg.t0)).reshape(6, -1).T
        times_all.append(tt)
        states_all.append(X)
        ph = [seg.phase] * len(tt)
        phases_all.extend(ph)
    times = np.concatenate(times_all)
    states = np.vstack(states_all)
    # zero-length segments can repeat an epoch; keep the later sample
    keep = np.ones(len(times), dtype=bool)
    keep[:-1] = np.diff(times) > 0
    phases = [ph for ph, k in zip(phases_all, keep) if k]
    return times[keep], states[keep], phases


def _canonical_eval(kind: str, xc: StateVector, p: ModelParams, flipped: bool):
    fn = _interval1_arrays if kind == "I1" else _interval2_arrays
    if not flipped:
        return lambda t: fn(xc, t, p)
    perm = [1, 0, 5, 4, 3, 2]  # mirror permutation of coordinates
    return lambda t: np.asarray(fn(xc, t, p))[perm]


def _validate_start(x0: StateVector) -> None:
    problems = check_state(x0)
    if problems:
        raise ValueError("invalid state: " + "; ".join(problems))
    if x0.q1 > 0 and abs(x0.z11 + x0.z21 - 1.0) > EQ_TOL:
        raise ValueError("q1 > 0 requires pool 1 to be full")
    if x0.q2 > 0 and abs(x0.z22 + x0.z12 - 1.0) > EQ_TOL:
        raise ValueError("q2 > 0 requires pool 2 to be full")


def simulate(x0: StateVector, p: ModelParams, horizon: float, sample_dt: float = 0.1,
             relax_chunk: float = 50.0) -> Trajectory:
    """Simulate the switching fluid model.

    Cycles are concatenated by label reversal until the horizon, a queue
    emptying, or a failed restart.  After a failed restart (or from a start
    without active sharing) the no-sharing relaxation is followed; it hands
    back to the cycle engine if sharing is released by occupancy decay, and
    stops with ``SlidingDetected`` if the queue difference reaches the
    threshold while sharing is admissible.
    """
    require_valid(p)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    _validate_start(x0)
    if horizon == 0:
        return Trajectory(times=np.array([0.0]), states=np.array([x0.as_tuple()]),
                          phases=[Phase.I1 if x0.delta > p.kappa and x0.z12 <= p.tau + EQ_TOL
                                  else Phase.RELAXATION],
                          stop_reason="horizon",
                          _segments=[_Segment(0.0, 0.0, Phase.RELAXATION,
                                              lambda t: np.tile(np.array(x0.as_tuple())[:, None], (1, np.size(t))))])

    segments: List[_Segment] = []
    halves: List[CycleRecord] = []
    epochs: List[float] = []
    t, x = 0.0, x0
    stop_reason = "horizon"
    hint = ""
    sliding_state = None

    def cycle_entry(state):
        if state.delta > p.kappa and state.z12 <= p.tau + EQ_TOL:
            return False
        if -state.delta > p.kappa and state.z21 <= p.tau + EQ_TOL:
            return True
        return None

    flipped = cycle_entry(x)
    mode = "cycle" if flipped is not None else "relax"
    guard = 0
    while t < horizon:
        guard += 1
        if guard > 1_000_000:
            raise NonConvergenceError("too many segments")
        if mode == "cycle":
            xc = mirror(x) if flipped else x
            if not (xc.q1 > 0 and xc.pools_full()):
                stop_reason = "unsupported regime: sharing admissible with an idle pool"
                break
            rec = _half_cycle_canonical(xc, p, t)
            actual = _mirror_record(rec) if flipped else rec
            halves.append(actual)
            ph1, ph2 = (Phase.I3, Phase.I4) if flipped else (Phase.I1, Phase.I2)
            s0, s1 = rec.switching_times[0], rec.switching_times[1]
            epochs.append(s0)
            segments.append(_Segment(s0, min(s1, horizon), ph1, _canonical_eval("I1", xc, p, flipped)))
            if s1 >= horizon:
                t = horizon
                break
            x1c = rec.states_at_switch[1]
            epochs.append(s1)
            if rec.terminated_by == Termination.QUEUE_HIT_ZERO:
                end = min(rec.sigma_q, horizon)
                segments.append(_Segment(s1, end, ph2, _canonical_eval("I2", x1c, p, flipped)))
                t = end
                if rec.sigma_q <= horizon:
                    stop_reason = "queue hit zero"
                    hint = "queue hit zero"
                break
            s2 = rec.switching_times[2]
            if s2 > s1:
                segments.append(_Segment(s1, min(s2, horizon), ph2, _canonical_eval("I2", x1c, p, flipped)))
            if s2 >= horizon:
                t = horizon
                break
            x2 = mirror(rec.states_at_switch[2]) if flipped else rec.states_at_switch[2]
            t, x = s2, x2
            if rec.terminated_by == Termination.OSCILLATION_FAILED:
                mode = "relax"
                hint = "oscillation failed"
                continue
            flipped = not flipped
            hint = "oscillating"
            continue

        # relaxation
        H = min(relax_chunk, horizon - t)
        dt_ev, regimes, kind, detail = _relax_chunk(x, p, H)
        xs = x
        segments.append(_Segment(t, t + dt_ev, Phase.RELAXATION,
                                 lambda u, xs=xs, rg=regimes: _relax_arrays(xs, u, p, rg)))
        arr = _relax_arrays(x, dt_ev, p, regimes)
        if kind == "empty":
            arr[detail] = 0.0
        elif kind == "fill":
            if detail == 0:
                arr[2] = 1.0 - arr[4]
            else:
                arr[5] = 1.0 - arr[3]
        elif kind == "activate":
            if detail > 0:
                arr[3], arr[5] = p.tau, 1.0 - p.tau
            else:
                arr[4], arr[2] = p.tau, 1.0 - p.tau
        t = t + dt_ev
        x = _to_state(np.clip(arr, 0.0, None))
        if kind == "sliding":
            epochs.append(t)
            stop_reason = "sliding detected"
            hint = "sliding"
            sliding_state = x
            break
        if kind == "spare":
            epochs.append(t)
            stop_reason = "unsupported regime: idle pool facing a long queue"
            break
        if kind == "activate":
            epochs.append(t)
            flipped = detail < 0
            mode = "cycle"
            continue
        if kind is not None:
            epochs.append(t)
        if hint in ("", "oscillation failed"):
            hint = "relaxing"

    end = min(t, horizon) if segments else 0.0
    if segments:
        segments[-1].t1 = max(segments[-1].t0, end)
    times, states, phases = _sample(segments, end, sample_dt)
    if sliding_state is not None:
        times = np.append(times, end) if times[-1] < end else times
        if len(states) < len(times):
            states = np.vstack([states, sliding_state.as_tuple()])
            phases.append(Phase.SLIDING)
        else:
            states[-1] = sliding_state.as_tuple()
            phases[-1] = Phase.SLIDING

    records = []
    i = 0
    while i + 1 < len(halves):
        a, b = halves[i], halves[i + 1]
        if a.terminated_by != Termination.COMPLETED:
            break
        records.append(join_half_cycles(a, b))
        i += 2
    if i < len(halves) and halves[i].terminated_by != Termination.COMPLETED:
        records.append(halves[i])

    return Trajectory(times=times, states=states, phases=phases, cycle_records=records,
                      half_cycles=halves, switching_epochs=sorted(set(e for e in epochs if e <= end)),
                      stop_reason=stop_reason, classification_hint=hint, _segments=segments)


def delta_is_decreasing(traj: Trajectory, upto: float) -> bool:
    """True when the sampled queue difference strictly decreases before ``upto``."""
    sel = traj.times < upto
    d = traj.delta[sel]
    return bool(np.all(np.diff(d) < 0))
