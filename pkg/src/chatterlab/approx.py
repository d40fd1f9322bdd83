"""Approximating jump system with a one-dimensional cycle map.

Abandonment is dropped (``theta = 0``) and the release threshold is ignored
while sharing is active, so every cycle starts with both off-diagonal
occupancies at zero.  The cycle is then summarised by the map
``delta -> delta'`` between successive cycle starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .equilibrium import ClassificationResult, Verdict
from .fluid import (
    NonConvergenceError,
    Trajectory,
    _Segment,
    _bisect,
    _sample,
    gfun,
    simulate,
)
from .model import ModelParams, Phase, StateVector, mirror, require_valid

ROOT_TOL = 1e-12


# ---------------------------------------------------------------------------
# holding times and the cycle map

def _t1a_residual(T: float, delta: float, p: ModelParams) -> float:
    mu, kap = p.mu, p.kappa
    return (delta - 1.0 + mu - kap) / (1.0 + mu) + (1.0 - mu) / (1.0 + mu) * math.exp(-T) - T


def solve_T1a(delta: float, p: ModelParams) -> float:
    """Time for the queue difference to fall from ``delta`` to ``kappa``.

    Solves ``T = (delta - 1 + mu - kappa)/(1 + mu) + (1 - mu)/(1 + mu) e^{-T}``
    by Newton's method safeguarded with bisection; the right-hand side minus
    ``T`` is strictly decreasing, so the positive root is unique.
    """
    require_valid(p)
    if not delta > p.kappa:
        raise ValueError("delta > kappa required")
    mu, kap = p.mu, p.kappa
    a = (delta - 1.0 + mu - kap) / (1.0 + mu)
    if delta > 1.0 - mu + kap:
        lo, hi = a, a + 1.0
    else:
        lo, hi = 0.0, delta / (1.0 + mu) + 1.0
    f = lambda T: _t1a_residual(T, delta, p)
    flo, fhi = f(lo), f(hi)
    if flo < 0 or fhi > 0:
        raise NonConvergenceError("bracket for T1 does not straddle the root")
    T = 0.5 * (lo + hi)
    for _ in range(100):
        fT = f(T)
        if abs(fT) < ROOT_TOL * 1e-2:
            break
        if fT > 0:
            lo = T
        else:
            hi = T
        dfT = -(1.0 - mu) / (1.0 + mu) * math.exp(-T) - 1.0
        Tn = T - fT / dfT
        if not (lo < Tn < hi):
            Tn = 0.5 * (lo + hi)
        if Tn == T:
            break
        T = Tn
    if abs(f(T)) >= ROOT_TOL:
        T, res = _bisect(f, lo, hi, f(lo))
        if abs(res) >= ROOT_TOL:
            raise NonConvergenceError(f"T1 residual {res:.3e}")
    return T


def t2a(t1a: float, p: ModelParams) -> float:
    """Time for the shared occupancy ``1 - e^{-t1a}`` to decay to ``tau``."""
    if t1a < 0:
        raise ValueError("t1a must be nonnegative")
    z = -math.expm1(-t1a)
    if z > p.tau:
        return math.log(z / p.tau) / p.mu
    return 0.0


def delta_map(delta: float, p: ModelParams) -> float:
    """Queue difference at the next cycle start.

    ``((1 - mu)/mu)(1 - e^{-T1} - tau) - kappa`` when the shared occupancy
    exceeds ``tau`` at the end of the first interval; otherwise the second
    interval is empty and the next value is ``-kappa``.
    """
    T1 = solve_T1a(delta, p)
    z = -math.expm1(-T1)
    if z <= p.tau:
        return -p.kappa
    return (1.0 - p.mu) / p.mu * (z - p.tau) - p.kappa


def delta_bound(p: ModelParams) -> float:
    """Supremum ``(1 - mu)(1 - tau)/mu`` of the map's image."""
    return (1.0 - p.mu) * (1.0 - p.tau) / p.mu


def eps_guard(p: ModelParams) -> float:
    """``-log(1 - tau)``: starts within this distance above ``kappa`` stop at once."""
    return -math.log1p(-p.tau)


@dataclass
class ApproxEquilibrium:
    delta_star: float
    t1a: float
    t2a: float
    z_at_T1: float
    period: float
    residual: float

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def _equilibrium(delta: float, p: ModelParams) -> ApproxEquilibrium:
    T1 = solve_T1a(delta, p)
    T2 = t2a(T1, p)
    return ApproxEquilibrium(delta_star=delta, t1a=T1, t2a=T2, z_at_T1=-math.expm1(-T1),
                             period=2.0 * (T1 + T2), residual=abs(delta_map(delta, p) - delta))


def iterate_approx(delta0: float, p: ModelParams, tol: float = 1e-9, max_iter: int = 200,
                   accelerate: bool = True) -> ClassificationResult:
    """Iterate the cycle map from ``delta0``.

    The iterates are monotone.  Once three successive steps move in the same
    direction, an Aitken/secant extrapolation is tried and kept only if it
    lies ahead of the current iterate and has a smaller map residual.
    """
    require_valid(p)
    if not delta0 > p.kappa:
        raise ValueError("delta0 > kappa required")
    seq = [delta0]
    x = delta0
    for k in range(1, max_iter + 1):
        nxt = delta_map(x, p)
        seq.append(nxt)
        if nxt <= p.kappa:
            return ClassificationResult(Verdict.STATIONARY, None, k, "iterate at or below kappa",
                                        delta_sequence=seq)
        if abs(nxt - x) < tol:
            return ClassificationResult(Verdict.OSCILLATORY, _equilibrium(nxt, p), k, "converged",
                                        delta_sequence=seq)
        x = nxt
        if accelerate and len(seq) >= 4:
            d = np.diff(seq[-4:])
            if np.all(d > 0) or np.all(d < 0):
                x0, x1, x2 = seq[-3:]
                den = (x2 - x1) - (x1 - x0)
                if den != 0:
                    cand = x2 - (x2 - x1) ** 2 / den
                    ahead = (cand - x2) * (x2 - x1) > 0
                    if ahead and cand > p.kappa and cand < delta_bound(p):
                        if abs(delta_map(cand, p) - cand) < abs(x2 - x1):
                            x = cand
                            seq.append(cand)
    return ClassificationResult(Verdict.UNDETERMINED, None, max_iter, "max_iter reached",
                                delta_sequence=seq)


# ---------------------------------------------------------------------------
# rate constants

def mu_roots(kappa: float, tau: float) -> Tuple[float, float]:
    """Values of ``mu`` where ``1 - mu + kappa`` equals ``(1 - mu)(1 - tau)/mu``."""
    if not (kappa > 0 and tau > 0):
        raise ValueError("kappa and tau must be positive")
    b = 2.0 + kappa - tau
    disc = math.sqrt((kappa - tau) ** 2 + 4.0 * kappa)
    # product of the roots is 1 - tau; use it for the small root to avoid cancellation
    mu2 = (b + disc) / 2.0
    mu1 = (1.0 - tau) / mu2
    return mu1, mu2


@dataclass
class RateConstants:
    """Contraction and exponential-stability constants of the cycle map.

    ``S_mu = [delta_bound - delta_mu, delta_bound]`` is the interval the map
    is checked to send into itself, ``lipschitz_K`` bounds
    ``e^{-delta/(1 + mu)}/(1 + mu)`` on it and ``rho`` is the resulting
    contraction factor.
    """

    mu1: float
    mu2: float
    c: float
    mu_star: float
    delta_mu: float
    S_mu: Tuple[float, float]
    lipschitz_K: float
    rho: float
    vartheta: float
    beta: float
    R: float
    eps_kappa: float
    maps_into_itself: bool
    contraction_certified: bool

    def to_dict(self) -> Dict:
        d = dict(self.__dict__)
        d["S_mu"] = list(self.S_mu)
        return d


def contraction_rate(p: ModelParams, c: float = 0.05, mu_star: Optional[float] = None) -> RateConstants:
    """Certified contraction factor of the cycle map near its fixed point.

    Parameters
    ----------
    c : float
        Margin in ``(0, 1 - tau)`` defining the width of ``S_mu``.
    mu_star : float, optional
        Reference value ``>= mu`` used in the width; defaults to ``mu``.
    """
    require_valid(p)
    mu, kap, tau = p.mu, p.kappa, p.tau
    mu1, mu2 = mu_roots(kap, tau)
    if not mu < mu1:
        raise ValueError(f"mu must lie below mu1 = {mu1:.9g}")
    if not 0 < c < 1.0 - tau:
        raise ValueError("0 < c < 1 - tau required")
    ms = mu if mu_star is None else float(mu_star)
    if not mu <= ms < 1:
        raise ValueError("mu <= mu_star < 1 required")
    dmu = (1.0 - ms) / ms * c + kap
    top = delta_bound(p)
    left = top - dmu
    maps = left > kap and delta_map(left, p) >= left
    K = math.exp(-left / (1.0 + mu)) / (1.0 + mu)
    rho = K * (1.0 - mu) / mu * math.exp((1.0 - mu + kap) / (1.0 + mu))
    R = (top - 1.0 + mu - kap) / (1.0 + mu) + 1.0 + math.log(1.0 / tau) / mu
    certified = maps and rho < 1.0
    beta = -math.log(rho) / (2.0 * R) if 0 < rho < 1 else float("nan")
    vartheta = dmu / (1.0 - rho) if rho < 1 else float("inf")
    return RateConstants(mu1=mu1, mu2=mu2, c=c, mu_star=ms, delta_mu=dmu, S_mu=(left, top),
                         lipschitz_K=K, rho=rho, vartheta=vartheta, beta=beta, R=R,
                         eps_kappa=eps_guard(p), maps_into_itself=maps,
                         contraction_certified=certified)


# ---------------------------------------------------------------------------
# sample paths of the approximating system

def _approx_i1(x: StateVector, t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    e1 = np.exp(-t)
    q1 = x.q1 + p.lam * t
    q2 = x.q2 + (p.lam - 1.0 - p.mu) * t - (1.0 - p.mu) * (-np.expm1(-t))
    z0 = np.zeros_like(t)
    return np.array([q1, q2, e1, z0, 1.0 - e1, 1.0 + z0])


def _approx_i2(x1: StateVector, t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    z21 = x1.z21 * np.exp(-p.mu * t)
    q1 = x1.q1 + (p.lam - 1.0) * t + (1.0 - p.mu) * x1.z21 * gfun(p.mu, t)
    q2 = x1.q2 + (p.lam - 1.0) * t
    z0 = np.zeros_like(t)
    return np.array([q1, q2, 1.0 - z21, z0, z21, 1.0 + z0])


def _approx_queue_hit(x1: StateVector, T2: float, p: ModelParams) -> Optional[float]:
    hits = []
    if x1.q2 + (p.lam - 1.0) * T2 <= 0:
        hits.append(x1.q2 / (1.0 - p.lam))
    f = lambda s: float(_approx_i2(x1, s, p)[0])
    if T2 > 0 and f(T2) <= 0:
        t, _ = _bisect(f, 0.0, T2, f(0.0))
        hits.append(t)
    return min(hits) if hits else None


def _wrap(fn, x, p, flipped):
    if not flipped:
        return lambda t: fn(x, t, p)
    perm = [1, 0, 5, 4, 3, 2]
    return lambda t: np.asarray(fn(x, t, p))[perm]


def simulate_approx(x0: StateVector, p: ModelParams, horizon: float,
                    sample_dt: float = 0.1) -> Trajectory:
    """Sample path of the approximating system (abandonment ignored).

    The off-diagonal occupancy released at the end of each half cycle jumps
    from ``tau`` to zero; jump epochs are listed in ``Trajectory.jumps`` with
    their left and right limits, and the samples hold the right limits.
    """
    require_valid(p)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if x0.z12 != 0 or x0.z21 != 0:
        raise ValueError("off-diagonal occupancies must start at zero")
    if x0.q1 < 0 or x0.q2 < 0:
        raise ValueError("queues must be nonnegative")
    if (x0.q1 > 0 and x0.z11 != 1.0) or (x0.q2 > 0 and x0.z22 != 1.0):
        raise ValueError("a nonempty queue requires its pool to be full")
    p0 = ModelParams(p.lam, p.mu, 0.0, p.kappa, p.tau)

    segments: List[_Segment] = []
    jumps = []
    epochs = []
    halves = []
    t, x = 0.0, x0
    stop = "horizon"
    if x.delta > p.kappa:
        flipped = False
    elif -x.delta > p.kappa:
        flipped = True
    else:
        flipped = None
    while flipped is not None and t < horizon:
        xc = mirror(x) if flipped else x
        if xc.q1 <= 0:
            stop = "unsupported regime: sharing admissible with an idle pool"
            break
        ph1, ph2 = (Phase.I3, Phase.I4) if flipped else (Phase.I1, Phase.I2)
        T1 = solve_T1a(xc.delta, p)
        epochs.append(t)
        segments.append(_Segment(t, min(t + T1, horizon), ph1, _wrap(_approx_i1, xc, p, flipped)))
        if t + T1 >= horizon:
            t = horizon
            break
        x1 = StateVector(*map(float, _approx_i1(xc, T1, p)))
        T2 = t2a(T1, p)
        epochs.append(t + T1)
        hit = _approx_queue_hit(x1, T2, p)
        end2 = t + T1 + (hit if hit is not None else T2)
        if end2 > t + T1:
            segments.append(_Segment(t + T1, min(end2, horizon), ph2, _wrap(_approx_i2, x1, p, flipped)))
        halves.append((T1, T2))
        if end2 >= horizon:
            t = horizon
            break
        if hit is not None:
            t = end2
            stop = "queue hit zero"
            break
        x2 = StateVector(*map(float, _approx_i2(x1, T2, p)))
        left = StateVector(x2.q1, x2.q2, 1.0 - p.tau, 0.0, p.tau, 1.0) if T2 > 0 else x2
        right = StateVector(x2.q1, x2.q2, 1.0, 0.0, 0.0, 1.0)
        t = end2
        jumps.append((t, mirror(left) if flipped else left, mirror(right) if flipped else right))
        xc_next = mirror(right)
        x = mirror(right) if flipped else right
        if xc_next.delta > p.kappa:
            flipped = not flipped
            continue
        flipped = None

    tail = None
    if flipped is None and t < horizon and stop == "horizon":
        epochs.append(t)
        tail = simulate(x, p0, horizon - t, sample_dt)
        for seg in tail._segments:
            segments.append(_Segment(seg.t0 + t, seg.t1 + t, seg.phase, seg.evaluate))
        stop = tail.stop_reason
        t = horizon
    end = min(t, horizon)
    if not segments:
        segments.append(_Segment(0.0, 0.0, Phase.RELAXATION,
                                 lambda u: np.tile(np.array(x0.as_tuple())[:, None], (1, np.size(u)))))
    segments[-1].t1 = max(segments[-1].t0, end)
    times, states, phases = _sample(segments, end, sample_dt)
    traj = Trajectory(times=times, states=states, phases=phases, switching_epochs=sorted(set(epochs)),
                      stop_reason=stop, jumps=jumps, _segments=segments)
    traj.classification_hint = "oscillating" if halves and tail is None else "relaxing"
    traj.holding_times = halves
    return traj


# ---------------------------------------------------------------------------
# heuristic map and throughput

def xi(delta, p: ModelParams):
    """``exp(-(delta - 1 + mu - kappa)/(1 + mu))``."""
    d = np.asarray(delta, dtype=float)
    out = np.exp(-(d - 1.0 + p.mu - p.kappa) / (1.0 + p.mu))
    return float(out) if out.ndim == 0 else out


@dataclass
class HeuristicResult:
    result: ClassificationResult
    xi_star: Optional[float]
    xi_sequence: List[float] = field(default_factory=list)
    stopped_at: Optional[int] = None


def heuristic_iterate(delta0: float, p: ModelParams, max_iter: int = 200,
                      tol: float = 1e-9) -> HeuristicResult:
    """Iterate the simplified map ``((1 - mu)/mu)(1 - xi(delta) - tau) - kappa``.

    Stops on convergence or on an illegitimate value: ``xi > 1`` (negative
    first holding time) or an iterate at or below ``kappa``.  The iterate is
    computed and recorded even when ``xi > 1``.
    """
    require_valid(p)
    if not xi(delta0, p) < 1.0:
        raise ValueError("delta0 gives a nonpositive first holding time")
    seq, xs = [delta0], []
    d = delta0
    for k in range(1, max_iter + 1):
        x = xi(d, p)
        xs.append(x)
        nxt = (1.0 - p.mu) / p.mu * (1.0 - x - p.tau) - p.kappa
        seq.append(nxt)
        if x > 1.0 or nxt <= p.kappa:
            res = ClassificationResult(Verdict.STATIONARY, None, k,
                                       "xi > 1" if x > 1.0 else "iterate at or below kappa",
                                       delta_sequence=seq)
            return HeuristicResult(res, None, xs, stopped_at=k)
        if abs(nxt - d) < tol:
            res = ClassificationResult(Verdict.OSCILLATORY, None, k, "converged", delta_sequence=seq)
            return HeuristicResult(res, xi(nxt, p), xs, stopped_at=k)
        d = nxt
    res = ClassificationResult(Verdict.UNDETERMINED, None, max_iter, "max_iter reached",
                               delta_sequence=seq)
    return HeuristicResult(res, None, xs)


@dataclass
class ThroughputReport:
    """Long-run service rate of one pool over the limit cycle.

    ``closed_form`` evaluates the simplified closed expression,
    ``rederived`` integrates the same approximate cycle directly, and
    ``oracle`` time-averages ``1 - (1 - mu) z21`` along a simulated converged
    cycle.  The collapse verdict uses the oracle.
    """

    xi_star: float
    closed_form: float
    rederived: float
    oracle: float
    lam: float
    collapse: bool
    reference_value: Optional[float] = None

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


def throughput_closed_form(xi_star: float, p: ModelParams) -> float:
    mu, tau = p.mu, p.tau
    lx = -math.log(xi_star)
    num = (1.0 - mu) * (lx + xi_star - 1.0 + (1.0 + xi_star - tau) / mu)
    den = 2.0 * (lx + math.log((1.0 - xi_star) / tau) / mu)
    return (1.0 + mu) / 2.0 - num / den


def throughput_rederived(xi_star: float, p: ModelParams) -> float:
    """Average of ``1 - (1 - mu) z21`` over a cycle with ``T1 = -log xi``.

    The shared occupancy is ``1 - e^{-s}`` on the first interval, decays
    from ``1 - xi`` to ``tau`` on the second and is zero on the other half.
    """
    mu, tau = p.mu, p.tau
    T1 = -math.log(xi_star)
    T2 = math.log((1.0 - xi_star) / tau) / mu
    integral = T1 - (1.0 - xi_star) + (1.0 - xi_star - tau) / mu
    return 1.0 - (1.0 - mu) * integral / (2.0 * (T1 + T2))


def throughput_oracle(p: ModelParams, delta_star: Optional[float] = None,
                      points_per_unit: int = 1000) -> float:
    """Time average of ``1 - (1 - mu) z21`` over one converged simulated cycle."""
    if delta_star is None:
        # starting at the top of the image gives the largest fixed point
        r = iterate_approx(delta_bound(p) * (1.0 - 1e-12), p)
        if r.periodic is None:
            raise NonConvergenceError("no periodic equilibrium for the approximating system")
        delta_star = r.periodic.delta_star
    T1 = solve_T1a(delta_star, p)
    period = 2.0 * (T1 + t2a(T1, p))
    qbig = 10.0 * period
    x0 = StateVector(qbig, qbig + delta_star, 1.0, 0.0, 0.0, 1.0)
    traj = simulate_approx(x0, p, period, sample_dt=None)
    total = 0.0
    for seg in traj._segments:
        L = seg.t1 - seg.t0
        if L <= 0:
            continue
        n = max(2, int(math.ceil(L * points_per_unit)) + 1)
        tt = np.linspace(0.0, L, n)
        z21 = np.asarray(seg.evaluate(tt))[4]
        zeta = 1.0 - (1.0 - p.mu) * z21
        total += float(np.sum((zeta[1:] + zeta[:-1]) * np.diff(tt)) / 2.0)
    return total / period


def throughput_L(xi_star: float, p: ModelParams, reference_value: Optional[float] = None,
                 delta_star: Optional[float] = None) -> ThroughputReport:
    """Throughput estimates and the congestion-collapse verdict (oracle below ``lam``)."""
    if not 0 < xi_star < 1:
        raise ValueError("xi_star must lie in (0, 1)")
    cf = throughput_closed_form(xi_star, p)
    rd = throughput_rederived(xi_star, p)
    orc = throughput_oracle(p, delta_star)
    return ThroughputReport(xi_star=xi_star, closed_form=cf, rederived=rd, oracle=orc, lam=p.lam,
                            collapse=orc < p.lam, reference_value=reference_value)
