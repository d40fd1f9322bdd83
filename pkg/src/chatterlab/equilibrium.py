"""Periodic equilibria, long-run classification and oscillation certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bounds import PsiBounds, psi_bounds, t1_bounds
from .fluid import CycleRecord, Termination, _half_cycle_canonical, gfun
from .model import (
    STATE_FIELDS,
    ModelParams,
    StateVector,
    full_pools_state,
    mirror,
    require_valid,
    stationary_point,
)

__all__ = [
    "Verdict", "PeriodicEquilibrium", "ClassificationResult", "OscillationCertificate",
    "stationary_point", "iterate_periodic", "psi_bounds", "t1_bounds", "certify_endless",
    "EPS_GUARD",
]


class Verdict(str, Enum):
    OSCILLATORY = "Oscillatory"
    STATIONARY = "StationaryConvergent"
    UNDETERMINED = "Undetermined"


@dataclass
class PeriodicEquilibrium:
    """One period of the limit cycle, started at a cycle-start epoch."""

    delta_star: float
    z_at_T1: float
    state_at_switch: Tuple[StateVector, ...]
    T_star: Tuple[float, float, float, float]
    period: float
    closure_residual: float
    closure_components: Tuple[str, ...]

    def to_dict(self) -> Dict:
        return {
            "delta_star": self.delta_star,
            "z_at_T1": self.z_at_T1,
            "T_star": list(self.T_star),
            "period": self.period,
            "closure_residual": self.closure_residual,
            "closure_components": list(self.closure_components),
            "state_at_switch": [s.to_dict() for s in self.state_at_switch],
        }


@dataclass
class ClassificationResult:
    """Outcome of a cycle-map iteration.

    ``delta_sequence[k]`` is the queue difference at the start of the k-th
    half cycle (``k = 0`` is the initial value).  ``queue_sequence`` holds the
    smaller queue at the same epochs.
    """

    verdict: Verdict
    periodic: Optional[PeriodicEquilibrium]
    iterations_used: int
    stop_reason: str
    delta_sequence: List[float] = field(default_factory=list)
    queue_sequence: List[float] = field(default_factory=list)
    half_cycles: List[CycleRecord] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "verdict": self.verdict.value,
            "iterations_used": self.iterations_used,
            "stop_reason": self.stop_reason,
            "delta_sequence": list(self.delta_sequence),
            "queue_sequence": list(self.queue_sequence),
            "periodic": None if self.periodic is None else self.periodic.to_dict(),
        }


def EPS_GUARD(p: ModelParams) -> float:
    """Width above ``kappa`` inside which the approximating map stops at once."""
    return -math.log(1.0 - p.tau)


def _assemble_equilibrium(x: StateVector, p: ModelParams) -> PeriodicEquilibrium:
    first = _half_cycle_canonical(x, p, 0.0)
    x2 = first.states_at_switch[2]
    second = _half_cycle_canonical(mirror(x2), p, first.switching_times[2])
    states = (x, first.states_at_switch[1], x2,
              mirror(second.states_at_switch[1]), mirror(second.states_at_switch[2]))
    T = (first.T1, first.T2, second.T1, second.T2)
    # closure: the state at the half-period is the mirror image of the start
    comps = list(STATE_FIELDS) if p.theta > 0 else ["z11", "z12", "z21", "z22"]
    target = mirror(x)
    res = [abs(getattr(x2, c) - getattr(target, c)) for c in comps]
    res.append(abs(x2.delta - target.delta))
    comps.append("delta")
    return PeriodicEquilibrium(
        delta_star=x.delta,
        z_at_T1=first.states_at_switch[1].z21,
        state_at_switch=states,
        T_star=T,
        period=first.T1 + first.T2 + second.T1 + second.T2,
        closure_residual=max(res),
        closure_components=tuple(comps),
    )


def iterate_periodic(x3_0: Sequence[float], p: ModelParams, tol: float = 1e-9,
                     max_iter: int = 200) -> ClassificationResult:
    """Search for the periodic equilibrium by iterating the half-cycle map.

    Parameters
    ----------
    x3_0 : (q1, q2, z21)
        Cycle-start triple; ``z12 = tau`` and both pools full are implied.
    tol : float
        Convergence tolerance on successive cycle-start values of ``delta``
        and ``z21`` (and of ``q1`` when ``theta > 0``).

    Returns
    -------
    ClassificationResult
        ``Oscillatory`` with the assembled equilibrium, ``StationaryConvergent``
        if a restart fails or a queue empties, ``Undetermined`` otherwise.
    """
    require_valid(p)
    q1, q2, z21 = (float(v) for v in x3_0)
    if not q2 - q1 > p.kappa:
        raise ValueError("q2 - q1 > kappa required")
    if not 0 <= z21 < p.tau:
        raise ValueError("0 <= z21 < tau required")
    if not q1 > 0:
        raise ValueError("q1 > 0 required")

    x = full_pools_state(q1, q2, p.tau, z21)
    deltas, queues, halves = [x.delta], [x.q1], []
    prev = x
    for k in range(1, max_iter + 1):
        rec = _half_cycle_canonical(x, p, 0.0)
        halves.append(rec)
        if rec.terminated_by == Termination.QUEUE_HIT_ZERO:
            return ClassificationResult(Verdict.STATIONARY, None, k, "queue hit zero",
                                        deltas, queues, halves)
        x2 = rec.states_at_switch[2]
        nxt = mirror(x2)
        deltas.append(nxt.delta)
        queues.append(nxt.q1)
        if rec.terminated_by == Termination.OSCILLATION_FAILED:
            return ClassificationResult(Verdict.STATIONARY, None, k,
                                        "restart failed: delta <= kappa", deltas, queues, halves)
        # nxt has z12 = tau by construction
        x = full_pools_state(nxt.q1, nxt.q2, p.tau, nxt.z21)
        diffs = [abs(x.delta - prev.delta), abs(x.z21 - prev.z21)]
        if p.theta > 0:
            diffs.append(abs(x.q1 - prev.q1))
        if max(diffs) < tol:
            eq = _assemble_equilibrium(x, p)
            return ClassificationResult(Verdict.OSCILLATORY, eq, k, "converged",
                                        deltas, queues, halves)
        prev = x
    return ClassificationResult(Verdict.UNDETERMINED, None, max_iter, "max_iter reached",
                                deltas, queues, halves)


# ---------------------------------------------------------------------------
# certificate of endless oscillation

def _phi(t: float, p: ModelParams) -> float:
    """``(e^{-theta t} - e^{-mu t}) / (mu - theta)``."""
    return float(math.exp(-p.theta * t) * gfun(p.mu - p.theta, t))


def _phi_range(lo: float, hi: float, p: ModelParams) -> Tuple[float, float]:
    """Min and max of ``_phi`` on ``[lo, hi]``; the function rises then falls."""
    a, b = _phi(lo, p), _phi(hi, p)
    vmin, vmax = min(a, b), max(a, b)
    if p.theta > 0 and p.theta != p.mu:
        peak = math.log(p.mu / p.theta) / (p.mu - p.theta)
        if lo < peak < hi:
            vmax = max(vmax, _phi(peak, p))
    return vmin, vmax


@dataclass
class CertificateStep:
    delta_bounds: Tuple[float, float]
    q1_bounds: Tuple[float, float]
    t1_bounds: Tuple[float, float]
    z21_T1_bounds: Tuple[float, float]
    t2_bounds: Tuple[float, float]
    z12_T1_bounds: Tuple[float, float]
    A_bounds: Tuple[float, float]
    q1_T1_bounds: Tuple[float, float]
    queue_lower_end: float
    delta_next_bounds: Tuple[float, float]
    q1_next_bounds: Tuple[float, float]
    release_ok: bool
    queues_positive: bool
    delta_box_invariant: bool
    q1_box_invariant: bool

    @property
    def ok(self) -> bool:
        return self.release_ok and self.queues_positive and self.delta_box_invariant and self.q1_box_invariant

    def to_dict(self) -> Dict:
        d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}
        d["ok"] = self.ok
        return d


def _certificate_step(dL: float, dU: float, qL: float, qU: float, p: ModelParams) -> CertificateStep:
    lam, mu, th, tau, kap = p.lam, p.mu, p.theta, p.tau, p.kappa
    T1L = t1_bounds(dL, p)[0]
    T1U = t1_bounds(dU, p)[1]
    # z21 at the end of the first interval, for any 0 <= z21(0) < tau
    zL = 1.0 - math.exp(-T1L)
    zU = 1.0 - (1.0 - tau) * math.exp(-T1U)
    release_ok = zL > tau
    T2L = math.log(zL / tau) / mu if release_ok else 0.0
    T2U = math.log(zU / tau) / mu if zU > tau else 0.0
    z12L, z12U = tau * math.exp(-mu * T1U), tau * math.exp(-mu * T1L)
    A_L = (1.0 - mu) * (z12L - zU)
    A_U = (1.0 - mu) * (z12U - zL)
    phimin, phimax = _phi_range(T2L, T2U, p)
    # at the end of the second interval, -delta = -kappa e^{-theta T2} - A phi(T2)
    dnL = -kap * math.exp(-th * T2L) + (-A_U) * phimin
    dnU = -kap * math.exp(-th * T2U) + (-A_L) * phimax
    # q1 at T1 grows in both q1(0) and T1
    q1T1L = qL * math.exp(-th * T1L) + lam * float(gfun(th, T1L))
    q1T1U = qU * math.exp(-th * T1U) + lam * float(gfun(th, T1U)) if math.isfinite(qU) else math.inf
    # lowest possible queue on the second interval (both queues start at or above q1(T1))
    qend = q1T1L * math.exp(-th * T2U) + (lam - 1.0) * float(gfun(th, T2U))
    queues_positive = qend > 0
    # the smaller queue after the swap is q2 at the end of the second interval
    if math.isfinite(qU):
        qnU = ((q1T1U + kap) * math.exp(-th * T2L) + (lam - 1.0) * float(gfun(th, T2L))
               + (1.0 - mu) * z12U * phimax)
    else:
        qnU = math.inf
    qnL = qend
    return CertificateStep(
        delta_bounds=(dL, dU), q1_bounds=(qL, qU), t1_bounds=(T1L, T1U),
        z21_T1_bounds=(zL, zU), t2_bounds=(T2L, T2U), z12_T1_bounds=(z12L, z12U),
        A_bounds=(A_L, A_U), q1_T1_bounds=(q1T1L, q1T1U), queue_lower_end=qend,
        delta_next_bounds=(dnL, dnU), q1_next_bounds=(qnL, qnU),
        release_ok=release_ok, queues_positive=queues_positive,
        delta_box_invariant=(dnL >= dL and dnU <= dU),
        q1_box_invariant=(qnL >= qL and qnU <= qU),
    )


@dataclass
class OscillationCertificate:
    """Interval bounds that imply endless oscillation from every start in a box.

    ``A_U_constant`` is the parameter-only bound ``(1 - mu)(tau - 1)`` on the
    amplitude coefficient, and ``delta_next_lower_small_kappa`` the lower
    estimate of the next cycle-start difference obtained from it when the
    ``kappa`` term is dropped.  Both are reported for comparison; the verdict
    uses only the rigorous interval arithmetic in ``steps``.
    """

    delta_bounds: Tuple[float, float]
    q1_bounds: Tuple[float, float]
    psi: PsiBounds
    t1_bounds: Tuple[float, float]
    t2_bounds: Tuple[float, float]
    z21_T1_bounds: Tuple[float, float]
    z12_T1_bounds: Tuple[float, float]
    A_bounds: Tuple[float, float]
    A_U_constant: float
    delta_next_bounds: Tuple[float, float]
    delta_next_lower_small_kappa: float
    q1_next_bounds: Tuple[float, float]
    conditions: Dict[str, bool]
    verdict: bool
    nested_bounds_trace: List[Dict] = field(default_factory=list)
    limit_box: Optional[Tuple[float, float, float, float]] = None

    def to_dict(self) -> Dict:
        return {
            "delta_bounds": list(self.delta_bounds),
            "q1_bounds": list(self.q1_bounds),
            "psi_lower": self.psi.lower,
            "psi_upper": self.psi.upper,
            "psi_lower_printed": self.psi.printed_lower,
            "t1_bounds": list(self.t1_bounds),
            "t2_bounds": list(self.t2_bounds),
            "z21_T1_bounds": list(self.z21_T1_bounds),
            "z12_T1_bounds": list(self.z12_T1_bounds),
            "A_bounds": list(self.A_bounds),
            "A_U_constant": self.A_U_constant,
            "delta_next_bounds": list(self.delta_next_bounds),
            "delta_next_lower_small_kappa": self.delta_next_lower_small_kappa,
            "q1_next_bounds": list(self.q1_next_bounds),
            "conditions": dict(self.conditions),
            "verdict": self.verdict,
            "limit_box": None if self.limit_box is None else list(self.limit_box),
            "nested_bounds_trace": list(self.nested_bounds_trace),
        }


def certify_endless(delta_range: Tuple[float, float], q1_range: Tuple[float, float],
                    p: ModelParams, nested_iters: int = 100,
                    nested_tol: float = 1e-10) -> OscillationCertificate:
    """Check sufficient conditions for endless oscillation from a box of starts.

    The box is ``delta(0) in delta_range``, ``q1(0) in q1_range``,
    ``z12(0) = tau`` and ``0 <= z21(0) < tau``.  The conditions are

    * release: ``z21`` exceeds ``tau`` at the end of the shortest first interval;
    * positivity: no queue can empty during the second interval;
    * invariance: the next cycle-start ``delta`` (and smaller queue) lie in
      the box again.

    With ``nested_iters > 0`` the box is repeatedly intersected with its
    image, giving monotone nested intervals.
    """
    require_valid(p)
    dL, dU = (float(v) for v in delta_range)
    qL, qU = (float(v) for v in q1_range)
    if not (p.kappa < dL <= dU):
        raise ValueError("kappa < delta_L <= delta_U required")
    if not (0 < qL <= qU):
        raise ValueError("0 < q1_L <= q1_U required")
    if p.theta > 0 and not qU < p.lam / p.theta:
        raise ValueError("q1_U < lambda / theta required")

    step = _certificate_step(dL, dU, qL, qU, p)
    T2L, T2U = step.t2_bounds
    A_const = (1.0 - p.mu) * (p.tau - 1.0)
    small_kappa = -A_const * (math.exp(-p.theta * T2L) - math.exp(-p.mu * T2U)) / (p.mu - p.theta)
    conditions = {
        "release": step.release_ok,
        "queue_positivity": step.queues_positive,
        "delta_invariance": step.delta_box_invariant,
        "q1_invariance": step.q1_box_invariant,
    }
    verdict = step.ok

    trace = [step.to_dict()]
    limit = None
    if verdict and nested_iters > 0:
        box = (dL, dU, qL, qU)
        cur = step
        for _ in range(nested_iters):
            nb = (max(box[0], cur.delta_next_bounds[0]), min(box[1], cur.delta_next_bounds[1]),
                  max(box[2], cur.q1_next_bounds[0]), min(box[3], cur.q1_next_bounds[1]))
            change = max(abs(a - b) for a, b in zip(nb, box) if math.isfinite(a) and math.isfinite(b))
            box = nb
            cur = _certificate_step(*box, p)
            trace.append(cur.to_dict())
            if change < nested_tol:
                break
        limit = box

    return OscillationCertificate(
        delta_bounds=(dL, dU), q1_bounds=(qL, qU), psi=psi_bounds(p),
        t1_bounds=step.t1_bounds, t2_bounds=step.t2_bounds,
        z21_T1_bounds=step.z21_T1_bounds, z12_T1_bounds=step.z12_T1_bounds,
        A_bounds=step.A_bounds, A_U_constant=A_const,
        delta_next_bounds=step.delta_next_bounds,
        delta_next_lower_small_kappa=small_kappa,
        q1_next_bounds=step.q1_next_bounds, conditions=conditions, verdict=verdict,
        nested_bounds_trace=trace, limit_box=limit,
    )
