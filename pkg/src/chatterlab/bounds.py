"""Analytic bounds on the forcing term and on the first holding time."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

from .model import ModelParams


@dataclass(frozen=True)
class PsiBounds:
    """Magnitude bounds ``-upper <= psi(t) <= -lower`` on the first interval.

    ``printed_lower`` is the alternative lower bound ``2 mu - (1 - mu)(1 - tau)``
    kept for reporting only; ``printed_lower_positive`` flags whether it is
    usable at all.
    """

    lower: float
    upper: float
    printed_lower: float

    @property
    def printed_lower_positive(self) -> bool:
        return self.printed_lower > 0

    def as_tuple(self) -> Tuple[float, float]:
        return (self.lower, self.upper)


def psi(t, z21_0: float, p: ModelParams, z12_0: float = None):
    """Forcing term of the queue-difference equation on the first interval.

    ``d delta / dt = -theta * delta + psi(t)``.
    """
    import numpy as np
    if z12_0 is None:
        z12_0 = p.tau
    t = np.asarray(t, dtype=float)
    return (-(1.0 + p.mu) - (1.0 - p.mu) * (1.0 - z21_0) * np.exp(-t)
            + (1.0 - p.mu) * z12_0 * np.exp(-p.mu * t))


def psi_bounds(p: ModelParams, z21_0: float = 0.0) -> PsiBounds:
    """Bounds on ``|psi|`` valid for any ``z21_0 in [0, 1]`` and ``z12_0 <= tau``.

    ``psi(t) <= -(1 + mu) + (1 - mu) tau`` because the ``e^{-t}`` term is
    nonpositive, and ``psi(t) >= -2`` because the ``e^{-mu t}`` term is
    nonnegative and ``(1 - z21_0) e^{-t} <= 1``.
    """
    lower = (1.0 + p.mu) - (1.0 - p.mu) * p.tau
    upper = 2.0
    printed = 2.0 * p.mu - (1.0 - p.mu) * (1.0 - p.tau)
    return PsiBounds(lower=lower, upper=upper, printed_lower=printed)


def t1_bounds(delta0: float, p: ModelParams) -> Tuple[float, float]:
    """Bracket ``[T1_lower, T1_upper]`` for the time at which ``delta`` falls to ``kappa``.

    Uses the sandwich ``delta0 e^{-theta t} - psi_U (1 - e^{-theta t}) / theta
    <= delta(t) <= delta0 e^{-theta t} - psi_L (1 - e^{-theta t}) / theta``.
    For ``theta = 0`` the limits ``(delta0 - kappa) / psi_U`` and
    ``(delta0 - kappa) / psi_L`` are returned.
    """
    if delta0 < p.kappa:
        raise ValueError("delta0 must be at least kappa")
    b = psi_bounds(p)
    if p.theta == 0.0:
        return ((delta0 - p.kappa) / b.upper, (delta0 - p.kappa) / b.lower)
    th = p.theta
    lo = math.log((th * delta0 + b.upper) / (th * p.kappa + b.upper)) / th
    hi = math.log((th * delta0 + b.lower) / (th * p.kappa + b.lower)) / th
    return (lo, hi)
