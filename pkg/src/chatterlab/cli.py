"""Command-line front end.

Exit status is 0 on success, 2 on invalid input and 3 when a numerical
procedure fails to converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional, Sequence

from . import svg
from .approx import (
    contraction_rate,
    heuristic_iterate,
    iterate_approx,
    simulate_approx,
    throughput_L,
)
from .ctmc import CtmcParams, CtmcState, oscillation_detector, replication_seed, simulate_ctmc
from .equilibrium import Verdict, certify_endless, iterate_periodic
from .experiments import (
    DEFAULT_START,
    NO_ABANDONMENT,
    PRESETS,
    TARGETS,
    dumps,
    fwlln_experiment,
    reproduce,
)
from .fluid import NonConvergenceError, simulate
from .model import ModelParams, StateVector, full_pools_state, require_valid

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3

COMMANDS = ("fluid", "periodic", "approx", "heuristic", "certify", "ctmc", "collapse", "reproduce")
FORMATS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


def _floats(text: str, k: int, name: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{name}: expected {k} comma-separated numbers") from exc
    if len(vals) != k:
        raise ConfigError(f"{name}: expected {k} comma-separated numbers")
    return vals


def _load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _model_params(args) -> ModelParams:
    if args.params:
        p = ModelParams.from_dict(_load_json(args.params))
    elif args.preset:
        p = PRESETS[args.preset]
    else:
        p = NO_ABANDONMENT
    require_valid(p)
    return p


def _formats(args) -> Sequence[str]:
    if not args.format:
        return FORMATS
    return args.format


class _Output:
    def __init__(self, out_dir: Optional[str], formats: Sequence[str]):
        self.out_dir = out_dir
        self.formats = formats
        self.files: List[str] = []
        if out_dir is not None:
            try:
                os.makedirs(out_dir, exist_ok=True)
            except OSError as exc:
                raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
            if not os.access(out_dir, os.W_OK):
                raise ConfigError(f"output directory {out_dir} is not writable")

    def write(self, name: str, text: str, kind: str) -> None:
        if self.out_dir is None or kind not in self.formats:
            return
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        self.files.append(path)


def _emit(report, out: _Output, name: str) -> None:
    text = dumps(report)
    out.write(name, text, "json")
    sys.stdout.write(text)


def _trajectory_outputs(traj, out: _Output, stem: str) -> None:
    out.write(f"{stem}.csv", traj.to_csv(), "csv")
    if "svg" in out.formats and len(traj) > 1:
        out.write(f"{stem}_time.svg", svg.time_plot(traj, ["q1", "q2", "delta"], title=stem), "svg")
        out.write(f"{stem}_shared.svg", svg.time_plot(traj, ["z12", "z21"], title=stem), "svg")
        out.write(f"{stem}_phase.svg", svg.phase_plot(traj, title=stem), "svg")


# ---------------------------------------------------------------------------

def cmd_fluid(args, out: _Output) -> int:
    p = _model_params(args)
    if args.x0:
        x0 = StateVector.from_seq(_floats(args.x0, 6, "--x0"))
    else:
        q1, q2, z21 = DEFAULT_START
        x0 = full_pools_state(q1, q2, p.tau, z21)
    horizon = 100.0 if args.horizon is None else args.horizon
    traj = simulate(x0, p, horizon, sample_dt=args.dt)
    _trajectory_outputs(traj, out, "fluid")
    report = {"command": "fluid", "params": p.to_dict(), "x0": x0.to_dict(), "horizon": horizon,
              "stop_reason": traj.stop_reason, "samples": len(traj),
              "switching_epochs": traj.switching_epochs,
              "half_cycles": [h.to_dict() for h in traj.half_cycles]}
    _emit(report, out, "fluid.json")
    return EXIT_OK


def cmd_periodic(args, out: _Output) -> int:
    p = _model_params(args)
    x3 = _floats(args.x3, 3, "--x3") if args.x3 else DEFAULT_START
    r = iterate_periodic(x3, p, max_iter=args.max_iter)
    report = {"command": "periodic", "params": p.to_dict(), "start": list(x3), **r.to_dict()}
    _emit(report, out, "periodic.json")
    if r.verdict == Verdict.UNDETERMINED:
        return EXIT_NONCONVERGENCE
    if r.periodic is not None and args.horizon is not None:
        x0 = r.periodic.state_at_switch[0]
        _trajectory_outputs(simulate(x0, p, args.horizon, sample_dt=args.dt), out, "periodic")
    return EXIT_OK


def cmd_approx(args, out: _Output) -> int:
    p = _model_params(args)
    d0 = args.delta0 if args.delta0 is not None else DEFAULT_START[1] - DEFAULT_START[0]
    r = iterate_approx(d0, p, max_iter=args.max_iter)
    report = {"command": "approx", "params": p.to_dict(), "delta0": d0,
              "verdict": r.verdict.value, "iterations_used": r.iterations_used,
              "stop_reason": r.stop_reason, "delta_sequence": r.delta_sequence,
              "equilibrium": None if r.periodic is None else r.periodic.to_dict()}
    try:
        report["contraction"] = contraction_rate(p).to_dict()
    except ValueError as exc:
        report["contraction"] = {"unavailable": str(exc)}
    _emit(report, out, "approx.json")
    if r.verdict == Verdict.UNDETERMINED:
        return EXIT_NONCONVERGENCE
    if args.horizon is not None:
        x0 = StateVector(1.0, 1.0 + d0, 1.0, 0.0, 0.0, 1.0)
        _trajectory_outputs(simulate_approx(x0, p, args.horizon, sample_dt=args.dt), out, "approx")
    return EXIT_OK


def cmd_heuristic(args, out: _Output) -> int:
    p = _model_params(args)
    d0 = args.delta0 if args.delta0 is not None else DEFAULT_START[1] - DEFAULT_START[0]
    h = heuristic_iterate(d0, p, max_iter=args.max_iter)
    report = {"command": "heuristic", "params": p.to_dict(), "delta0": d0,
              "verdict": h.result.verdict.value, "stop_reason": h.result.stop_reason,
              "stopped_at": h.stopped_at, "delta_sequence": h.result.delta_sequence,
              "xi_sequence": h.xi_sequence, "xi_star": h.xi_star}
    _emit(report, out, "heuristic.json")
    if h.result.verdict == Verdict.UNDETERMINED:
        return EXIT_NONCONVERGENCE
    return EXIT_OK


def cmd_certify(args, out: _Output) -> int:
    p = _model_params(args)
    dr = _floats(args.delta_range, 2, "--delta-range")
    qr = _floats(args.q1_range, 2, "--q1-range")
    cert = certify_endless(tuple(dr), tuple(qr), p)
    _emit({"command": "certify", "params": p.to_dict(), **cert.to_dict()}, out, "certify.json")
    return EXIT_OK


def cmd_collapse(args, out: _Output) -> int:
    p = _model_params(args)
    d0 = args.delta0 if args.delta0 is not None else DEFAULT_START[1] - DEFAULT_START[0]
    h = heuristic_iterate(d0, p, max_iter=args.max_iter)
    if h.xi_star is None:
        report = {"command": "collapse", "params": p.to_dict(), "verdict": False,
                  "reason": f"heuristic stopped: {h.result.stop_reason}"}
        _emit(report, out, "collapse.json")
        return EXIT_OK
    rep = throughput_L(h.xi_star, p, reference_value=args.reference)
    report = {"command": "collapse", "params": p.to_dict(), "verdict": rep.collapse, **rep.to_dict()}
    _emit(report, out, "collapse.json")
    return EXIT_OK


def cmd_ctmc(args, out: _Output) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.fwlln:
        scales = [int(v) for v in args.fwlln.split(",")]
        table = fwlln_experiment(reps=args.reps, base_seed=seed, scales=scales)
        _emit({"command": "ctmc", "mode": "fwlln", **table.to_dict()}, out, "fwlln.json")
        return EXIT_OK
    if args.ctmc_params:
        cp = CtmcParams.from_dict(_load_json(args.ctmc_params))
    else:
        cp = CtmcParams.from_fluid(_model_params(args), args.n)
    if args.counts:
        vals = [int(v) for v in args.counts.split(",")]
        if len(vals) != 6:
            raise ConfigError("--counts: expected 6 comma-separated integers")
        x0 = CtmcState(*vals)
    else:
        x0 = CtmcState(0, 0, 0, 0, 0, 0)
    horizon = 100.0 if args.horizon is None else args.horizon
    runs = []
    for r in range(args.reps):
        s = replication_seed(seed, r)
        traj = simulate_ctmc(x0, cp, horizon, s, sample_dt=args.dt)
        _trajectory_outputs(traj, out, f"ctmc_rep{r}")
        runs.append({"rep": r, "seed": s, "alternations": oscillation_detector(traj, args.band),
                     "final": traj.state(len(traj) - 1).to_dict()})
    report = {"command": "ctmc", "params": cp.to_dict(), "x0": list(x0.as_tuple()), "horizon": horizon,
              "band": args.band, "runs": runs}
    _emit(report, out, "ctmc.json")
    return EXIT_OK


def cmd_reproduce(args, out: _Output) -> int:
    r = reproduce(args.target, out.out_dir)
    sys.stdout.write(dumps({"target": r.target, "passed": r.passed, "checks": r.report["checks"],
                            "files": [os.path.basename(f) for f in r.files]}))
    return EXIT_OK


HANDLERS = {
    "fluid": cmd_fluid,
    "periodic": cmd_periodic,
    "approx": cmd_approx,
    "heuristic": cmd_heuristic,
    "certify": cmd_certify,
    "ctmc": cmd_ctmc,
    "collapse": cmd_collapse,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--params", help="JSON file with lambda, mu, theta, kappa, tau")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
    common.add_argument("--out", help="output directory")
    common.add_argument("--horizon", type=float, help="simulation horizon")
    common.add_argument("--seed", type=int, help="base random seed")
    common.add_argument("--reps", type=int, default=1, help="number of replications")
    common.add_argument("--format", action="append", choices=FORMATS,
                        help="output kinds to write (repeatable; default all)")
    common.add_argument("--dt", type=float, default=0.1, help="sampling step")
    common.add_argument("--max-iter", type=int, default=200)

    parser = argparse.ArgumentParser(prog="chatterlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fluid", parents=[common], help="simulate the fluid model")
    p.add_argument("--x0", help="initial state q1,q2,z11,z12,z21,z22")
    p = sub.add_parser("periodic", parents=[common], help="search for the periodic equilibrium")
    p.add_argument("--x3", help="cycle start q1,q2,z21")
    p = sub.add_parser("approx", parents=[common], help="iterate the approximating cycle map")
    p.add_argument("--delta0", type=float)
    p = sub.add_parser("heuristic", parents=[common], help="iterate the simplified heuristic map")
    p.add_argument("--delta0", type=float)
    p = sub.add_parser("certify", parents=[common], help="certify endless oscillation on a box")
    p.add_argument("--delta-range", default="4,7")
    p.add_argument("--q1-range", default="1,20")
    p = sub.add_parser("ctmc", parents=[common], help="simulate the stochastic system")
    p.add_argument("--ctmc-params", help="JSON file with CTMC parameters")
    p.add_argument("--n", type=int, default=100, help="scale when deriving from fluid parameters")
    p.add_argument("--counts", help="initial counts Q1,Q2,Z11,Z12,Z21,Z22")
    p.add_argument("--band", type=float, default=0.3, help="oscillation detector band")
    p.add_argument("--fwlln", help="comma-separated scales for the fluid-limit gap experiment")
    p = sub.add_parser("collapse", parents=[common], help="throughput and collapse verdict")
    p.add_argument("--delta0", type=float)
    p.add_argument("--reference", type=float, help="reference throughput value to report")
    p = sub.add_parser("reproduce", parents=[common], help="run a preconfigured experiment")
    p.add_argument("target", choices=sorted(TARGETS))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.reps <= 0:
        sys.stderr.write("error: --reps must be positive\n")
        return EXIT_INVALID
    try:
        out = _Output(args.out, _formats(args))
        return HANDLERS[args.command](args, out)
    except NonConvergenceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NONCONVERGENCE
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INVALID


def main_entry() -> None:
    sys.exit(main())
