"""Parameter and state containers for the symmetric two-class, two-pool fluid model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

# absolute tolerance used for equality checks such as z12 == tau or delta == kappa
EQ_TOL = 1e-9

PARAM_FIELDS = ("lambda", "mu", "theta", "kappa", "tau")
STATE_FIELDS = ("q1", "q2", "z11", "z12", "z21", "z22")

PARAMS_SCHEMA = {
    "type": "object",
    "required": list(PARAM_FIELDS),
    "properties": {name: {"type": "number"} for name in PARAM_FIELDS},
    "additionalProperties": False,
}

STATE_SCHEMA = {
    "type": "object",
    "required": list(STATE_FIELDS),
    "properties": {name: {"type": "number"} for name in STATE_FIELDS},
    "additionalProperties": False,
}


class Phase(str, Enum):
    """Cycle interval labels used on trajectory samples."""

    I1 = "I1"
    I2 = "I2"
    I3 = "I3"
    I4 = "I4"
    RELAXATION = "Relaxation"
    SLIDING = "SlidingDetected"

    def mirrored(self) -> "Phase":
        swap = {Phase.I1: Phase.I3, Phase.I2: Phase.I4, Phase.I3: Phase.I1, Phase.I4: Phase.I2}
        return swap.get(self, self)


@dataclass(frozen=True)
class ModelParams:
    """Symmetric model parameters.

    Designated service rates and pool sizes are normalised to one.

    Attributes
    ----------
    lam : float
        Arrival rate per class.
    mu : float
        Service rate of a customer served in the other class's pool.
    theta : float
        Abandonment rate; ``0`` is admitted as a limit mode.
    kappa : float
        Activation threshold on the queue difference.
    tau : float
        Release threshold on the shared occupancy.
    """

    lam: float
    mu: float
    theta: float
    kappa: float
    tau: float

    def to_dict(self) -> Dict[str, float]:
        return {"lambda": self.lam, "mu": self.mu, "theta": self.theta,
                "kappa": self.kappa, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> "ModelParams":
        missing = [k for k in PARAM_FIELDS if k not in d]
        if missing:
            raise ValueError(f"missing parameter fields: {missing}")
        extra = [k for k in d if k not in PARAM_FIELDS]
        if extra:
            raise ValueError(f"unknown parameter fields: {extra}")
        return cls(lam=float(d["lambda"]), mu=float(d["mu"]), theta=float(d["theta"]),
                   kappa=float(d["kappa"]), tau=float(d["tau"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class StateVector:
    """Fluid state ``(q1, q2, z11, z12, z21, z22)``.

    ``zij`` is the amount of class-i fluid in service in pool j.
    """

    q1: float
    q2: float
    z11: float
    z12: float
    z21: float
    z22: float

    @property
    def delta(self) -> float:
        """Queue difference ``q2 - q1``."""
        return self.q2 - self.q1

    def d12(self, kappa: float) -> float:
        return self.q1 - self.q2 - kappa

    def d21(self, kappa: float) -> float:
        return self.q2 - self.q1 - kappa

    def as_tuple(self):
        return (self.q1, self.q2, self.z11, self.z12, self.z21, self.z22)

    def as_array(self):
        import numpy as np
        return np.array(self.as_tuple(), dtype=float)

    def pools_full(self, tol: float = 1e-9) -> bool:
        return abs(self.z11 + self.z21 - 1.0) <= tol and abs(self.z22 + self.z12 - 1.0) <= tol

    def sharing_allowed_to_pool1(self, p: ModelParams) -> bool:
        """Class 2 may be routed to pool 1."""
        return self.delta > p.kappa and self.z12 <= p.tau + EQ_TOL

    def sharing_allowed_to_pool2(self, p: ModelParams) -> bool:
        """Class 1 may be routed to pool 2."""
        return -self.delta > p.kappa and self.z21 <= p.tau + EQ_TOL

    def to_dict(self) -> Dict[str, float]:
        return dict(zip(STATE_FIELDS, self.as_tuple()))

    @classmethod
    def from_dict(cls, d: Dict[str, float]) -> "StateVector":
        missing = [k for k in STATE_FIELDS if k not in d]
        if missing:
            raise ValueError(f"missing state fields: {missing}")
        extra = [k for k in d if k not in STATE_FIELDS]
        if extra:
            raise ValueError(f"unknown state fields: {extra}")
        return cls(*(float(d[k]) for k in STATE_FIELDS))

    @classmethod
    def from_seq(cls, values) -> "StateVector":
        values = [float(v) for v in values]
        if len(values) != 6:
            raise ValueError("a state has six coordinates")
        return cls(*values)


def mirror(x: StateVector) -> StateVector:
    """Swap the class/pool labels: ``(q2, q1, z22, z21, z12, z11)``."""
    return StateVector(x.q2, x.q1, x.z22, x.z21, x.z12, x.z11)


def full_pools_state(q1: float, q2: float, z12: float, z21: float) -> StateVector:
    """Build a state with both pools fully occupied."""
    return StateVector(q1, q2, 1.0 - z21, z12, z21, 1.0 - z12)


@dataclass
class ValidationReport:
    ok: bool
    violations: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def validate_params(p: ModelParams, strict: bool = True) -> ValidationReport:
    """Check parameter constraints.

    The basic constraints (``0 < lam < 1``, ``0 < mu < 1``, ``theta >= 0``,
    ``kappa > 0``, ``0 < tau < 1``) always apply.  The standing assumptions
    ``lam <= 1 - tau`` and ``theta < mu`` are enforced only in strict mode; in
    limit mode they are listed as warnings.
    """
    basic = []
    values = (p.lam, p.mu, p.theta, p.kappa, p.tau)
    if not all(math.isfinite(v) for v in values):
        basic.append("parameters must be finite")
    if not p.lam > 0:
        basic.append(f"lambda > 0 fails at lambda={p.lam}")
    if not p.lam < 1:
        basic.append(f"lambda < 1 fails at lambda={p.lam}")
    if not 0 < p.mu < 1:
        basic.append(f"0 < mu < 1 fails at mu={p.mu}")
    if not p.theta >= 0:
        basic.append(f"theta >= 0 fails at theta={p.theta}")
    if not p.kappa > 0:
        basic.append(f"kappa > 0 fails at kappa={p.kappa}")
    if not 0 < p.tau < 1:
        basic.append(f"0 < tau < 1 fails at tau={p.tau}")

    standing = []
    if not p.lam <= 1 - p.tau + 1e-15:
        standing.append(f"lambda <= 1 - tau fails at lambda={p.lam}, tau={p.tau}")
    if not p.theta < p.mu:
        standing.append(f"theta < mu fails at theta={p.theta}")

    if strict:
        violations = basic + standing
        return ValidationReport(ok=not violations, violations=violations)
    return ValidationReport(ok=not basic, violations=basic, warnings=standing)


def require_valid(p: ModelParams) -> None:
    """Raise ``ValueError`` when the basic constraints fail (limit mode)."""
    rep = validate_params(p, strict=False)
    if not rep.ok:
        raise ValueError("; ".join(rep.violations))


@dataclass
class InitialConditionCheck:
    ok: bool
    reasons: List[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def check_state(x: StateVector) -> List[str]:
    """Return a list of problems with a state's basic ranges."""
    problems = []
    for name, v in zip(STATE_FIELDS, x.as_tuple()):
        if not math.isfinite(v):
            problems.append(f"{name} is not finite")
    for name in ("q1", "q2"):
        if getattr(x, name) < 0:
            problems.append(f"{name} < 0")
    for name in ("z11", "z12", "z21", "z22"):
        v = getattr(x, name)
        if v < -EQ_TOL or v > 1 + EQ_TOL:
            problems.append(f"{name} outside [0, 1]")
    if x.z11 + x.z21 > 1 + EQ_TOL:
        problems.append("pool 1 over capacity")
    if x.z22 + x.z12 > 1 + EQ_TOL:
        problems.append("pool 2 over capacity")
    return problems


def check_initial_condition(x: StateVector, p: ModelParams) -> InitialConditionCheck:
    """Check the cycle-start condition.

    True iff ``q1 > 0``, ``q2 > q1 + kappa``, ``z12 == tau`` (within
    ``EQ_TOL``), ``0 <= z21 < tau`` and both pools are full.
    """
    reasons = check_state(x)
    if not x.q1 > 0:
        reasons.append("q1 > 0 required")
    if not x.delta > p.kappa:
        reasons.append(f"q2 - q1 > kappa required (q2 - q1 = {x.delta:.9g})")
    if abs(x.z12 - p.tau) > EQ_TOL:
        reasons.append("z12 = tau required")
    if not (0 <= x.z21 < p.tau):
        reasons.append("0 <= z21 < tau required")
    if not x.pools_full():
        reasons.append("both pools must be full")
    return InitialConditionCheck(ok=not reasons, reasons=reasons)


def stationary_point(p: ModelParams) -> StateVector:
    """No-sharing rest state ``(0, 0, lam, 0, 0, lam)``."""
    return StateVector(0.0, 0.0, p.lam, 0.0, 0.0, p.lam)


def queue_ceiling(x0: StateVector, p: ModelParams) -> Optional[float]:
    """Upper bound ``max(q_i(0), lam/theta)`` on queues when ``theta > 0``."""
    if p.theta <= 0:
        return None
    return max(x0.q1, x0.q2, p.lam / p.theta)


def state_from_json(text: str) -> StateVector:
    return StateVector.from_dict(json.loads(text))


def state_to_json(x: StateVector) -> str:
    return json.dumps(x.to_dict())

