import json
import os

import pytest

from chatterlab.approx import heuristic_iterate, throughput_L
from chatterlab.cli import main
from chatterlab.equilibrium import iterate_periodic
from chatterlab.experiments import DEFAULT_START, NO_ABANDONMENT
from chatterlab.fluid import Trajectory


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_fluid_horizon_zero_single_row(tmp_path, capsys):
    code, out, _ = run(capsys, "fluid", "--horizon", "0", "--out", str(tmp_path), "--format", "csv")
    assert code == 0
    lines = (tmp_path / "fluid.csv").read_text().strip().splitlines()
    assert len(lines) == 2
    assert json.loads(out)["samples"] == 1


def test_fluid_csv_round_trip(tmp_path, capsys):
    code, _, _ = run(capsys, "fluid", "--horizon", "150", "--out", str(tmp_path))
    assert code == 0
    text = (tmp_path / "fluid.csv").read_text()
    assert Trajectory.from_csv(text).to_csv() == text
    for name in ("fluid.json", "fluid_time.svg", "fluid_shared.svg", "fluid_phase.svg"):
        assert (tmp_path / name).exists()


def test_periodic_json_matches_library(capsys):
    code, out, _ = run(capsys, "periodic")
    assert code == 0
    rep = json.loads(out)
    lib = iterate_periodic(DEFAULT_START, NO_ABANDONMENT)
    assert rep["verdict"] == "Oscillatory"
    assert rep["periodic"]["delta_star"] == pytest.approx(lib.periodic.delta_star, rel=1e-8)


def test_approx_nonconvergence_exit_code(capsys):
    code, out, _ = run(capsys, "approx", "--max-iter", "1")
    assert code == 3
    assert json.loads(out)["verdict"] == "Undetermined"


def test_heuristic_reports_stop(capsys):
    code, out, _ = run(capsys, "heuristic", "--preset", "inward_spiral")
    assert code == 0
    rep = json.loads(out)
    assert rep["verdict"] == "StationaryConvergent"
    assert rep["delta_sequence"][-1] < 0


def test_collapse_verdict(capsys):
    code, out, _ = run(capsys, "collapse", "--reference", "0.44")
    assert code == 0
    rep = json.loads(out)
    assert rep["verdict"] is True
    h = heuristic_iterate(4.0, NO_ABANDONMENT)
    lib = throughput_L(h.xi_star, NO_ABANDONMENT)
    for key in ("closed_form", "rederived", "oracle"):
        assert rep[key] == pytest.approx(lib.__dict__[key], rel=1e-8)
    assert rep["reference_value"] == 0.44


def test_certify_command(capsys):
    code, out, _ = run(capsys, "certify", "--preset", "small_abandonment")
    assert code == 0
    assert json.loads(out)["verdict"] is True


def test_ctmc_command(tmp_path, capsys):
    code, out, _ = run(capsys, "ctmc", "--n", "20", "--horizon", "5", "--reps", "2", "--seed", "3",
                       "--out", str(tmp_path), "--format", "csv", "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert len(rep["runs"]) == 2
    back = Trajectory.from_csv(str(tmp_path / "ctmc_rep1.csv"))
    assert back.meta == {"n": 20, "seed": rep["runs"][1]["seed"]}


def test_invalid_params_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"lambda": 0.9, "mu": 1.5, "theta": 0.0, "kappa": 0.1, "tau": 0.01}))
    code, _, err = run(capsys, "fluid", "--params", str(bad))
    assert code == 2
    assert "mu" in err


def test_missing_params_file_exit_code(tmp_path, capsys):
    code, _, _ = run(capsys, "fluid", "--params", str(tmp_path / "none.json"))
    assert code == 2


def test_bad_state_exit_code(capsys):
    code, _, _ = run(capsys, "fluid", "--x0", "1,2,3")
    assert code == 2


def test_unwritable_output_exit_code(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, _ = run(capsys, "fluid", "--out", str(blocker / "sub"))
    assert code == 2


def test_nonpositive_reps_exit_code(capsys):
    code, _, _ = run(capsys, "ctmc", "--reps", "0")
    assert code == 2


def test_unknown_command():
    with pytest.raises(SystemExit) as exc:
        main(["bogus"])
    assert exc.value.code == 2


def test_unknown_target():
    with pytest.raises(SystemExit) as exc:
        main(["reproduce", "fig99"])
    assert exc.value.code == 2


@pytest.mark.parametrize("target", ["table1", "fig7_8", "fig9_10"])
def test_reproduce_byte_identical(tmp_path, capsys, target):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "reproduce", target, "--out", str(a))[0] == 0
    assert run(capsys, "reproduce", target, "--out", str(b))[0] == 0
    names = sorted(os.listdir(a))
    assert names and names == sorted(os.listdir(b))
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        if name.endswith(".csv"):
            text = (a / name).read_text()
            assert Trajectory.from_csv(text).to_csv() == text
