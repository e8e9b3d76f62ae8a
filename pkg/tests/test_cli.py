"""End-to-end command-line runs on desk-size meshes."""
import json
import os

import numpy as np
import pytest

from bifrb.cli import RunConfig, main

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

FAST = ["--mesh", "41", "--train", "11", "--test", "11"]


def run_cli(argv):
    return main(argv)


def read_report(out_dir):
    with open(os.path.join(out_dir, "report.json")) as f:
        return json.load(f)


def test_run_config_round_trip():
    cfg = RunConfig(model_kind="bratu", train_size=13)
    again = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_run_config_rejects_unknown_fields():
    with pytest.raises(ValueError, match="unknown config field"):
        RunConfig.from_dict({"mesh": 33})


def test_validate_collects_all_problems():
    cfg = RunConfig(train_size=1, tol=-1.0, strategy="magic")
    problems = cfg.validate()
    assert len(problems) == 3
    assert any("train_size" in p for p in problems)
    assert any("tol" in p for p in problems)
    assert any("strategy" in p for p in problems)


def test_bad_flag_value_exits_one(tmp_path, capsys):
    code = run_cli(["diagram", "--train", "1", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "train_size must be >= 2" in capsys.readouterr().err


def test_half_open_interval_exits_one(tmp_path, capsys):
    code = run_cli(["diagram", "--mu-min", "5.0", "--out", str(tmp_path / "o")])
    assert code == 1
    assert "must be given together" in capsys.readouterr().err


def test_inverted_interval_exits_one(tmp_path, capsys):
    code = run_cli(["diagram", "--mu-min", "3.0", "--mu-max", "2.0",
                    "--out", str(tmp_path / "o")])
    assert code == 1
    assert "mu_min must be less than mu_max" in capsys.readouterr().err


def test_unknown_config_field_exits_one(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"mesh": 41}))
    code = run_cli(["diagram", "--config", str(cfg_path)])
    assert code == 1
    assert "unknown config field" in capsys.readouterr().err


def test_missing_config_file_exits_one(tmp_path, capsys):
    code = run_cli(["diagram", "--config", str(tmp_path / "absent.json")])
    assert code == 1
    assert "config error" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({"model_kind": "bratu", "mesh_size": 41,
                                    "test_size": 5, "tol": 0.5}))
    out = tmp_path / "out"
    code = run_cli(["diagram", "--config", str(cfg_path), "--test", "7",
                    "--out", str(out)])
    assert code == 0
    config = read_report(out)["config"]
    assert config["test_size"] == 7  # flag wins
    assert config["tol"] == 0.5  # config file survives where no flag given
    assert config["model_kind"] == "bratu"


def test_env_var_overrides_out_dir(tmp_path, monkeypatch):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("BIFRB_OUT_DIR", str(env_dir))
    code = run_cli(["diagram", "--model", "bratu"] + FAST
                   + ["--out", str(tmp_path / "from_flag")])
    assert code == 0
    assert env_dir.is_dir()
    assert not (tmp_path / "from_flag").exists()
    assert read_report(env_dir)["config"]["out_dir"] == str(env_dir)


def test_diagram_command_labels_branches(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["diagram", "--model", "chafee"] + FAST + ["--out", str(out)])
    assert code == 0
    report = read_report(out)
    assert report["branches"] == [0, 1, 2]
    lines = (out / "diagram.csv").read_text().splitlines()
    assert lines[0] == "mu,branch,value"
    assert len(lines) == report["n_points"] + 1


def test_deflated_run_writes_complete_manifest(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["run", "--model", "chafee", "--strategy", "deflated"]
                   + FAST + ["--out", str(out)])
    assert code == 0
    report = read_report(out)
    assert report["report"]["status"] == "tolerance_met"
    assert report["deflated_test_sweep"] is True
    assert report["n_basis"] >= 2
    assert report["errors"]["max_unflagged_error"] <= 1e-3
    for name in ("basis.csv", "basis.json", "diagram.csv", "errors.csv"):
        assert (out / name).is_file()
    iter_files = sorted(p.name for p in out.glob("estimators_iter_*.csv"))
    assert len(iter_files) == report["report"]["n_iterations"]
    head = (out / iter_files[0]).read_text().splitlines()[0]
    assert head == "mu,branch,delta,beta,tau,valid"
    head = (out / "errors.csv").read_text().splitlines()[0]
    assert head.startswith("mu,branch,reduced_error")


def test_rerun_is_byte_identical(tmp_path):
    args = ["run", "--model", "chafee", "--strategy", "deflated"] + FAST
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(args + ["--out", str(out1)]) == 0
    assert run_cli(args + ["--out", str(out2)]) == 0
    names1 = sorted(p.name for p in out1.iterdir())
    assert names1 == sorted(p.name for p in out2.iterdir())
    for name in names1:
        if name == "report.json":
            # identical except for the differing out_dir setting itself
            r1, r2 = read_report(out1), read_report(out2)
            r1["config"].pop("out_dir"), r2["config"].pop("out_dir")
            assert r1 == r2
        else:
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_run_aborts_with_failure_record(tmp_path, capsys):
    out = tmp_path / "out"
    # below the pitchfork no snapshot can initialize a basis
    code = run_cli(["run", "--model", "chafee", "--mu-min", "5", "--mu-max", "8"]
                   + FAST + ["--out", str(out)])
    assert code == 2
    assert "aborted" in capsys.readouterr().err
    report = read_report(out)
    assert "failure" in report
    assert report["config"]["mu_min"] == 5.0


def test_uncertified_run_exits_two(tmp_path):
    out = tmp_path / "out"
    code = run_cli(["run", "--model", "bratu", "--strategy", "vanilla",
                    "--nmax", "1", "--tol", "1e-12"] + FAST + ["--out", str(out)])
    assert code == 2
    assert read_report(out)["report"]["status"] == "n_max_reached"


def test_error_sweep_scores_saved_basis(tmp_path):
    build = tmp_path / "build"
    args = ["run", "--model", "chafee", "--strategy", "deflated"] + FAST
    assert run_cli(args + ["--out", str(build)]) == 0
    score = tmp_path / "score"
    code = run_cli(["error-sweep", "--basis-dir", str(build),
                    "--strategy", "deflated"] + FAST + ["--out", str(score)])
    assert code == 0
    report = read_report(score)
    assert report["basis_dir"] == str(build)
    assert report["errors"]["max_unflagged_error"] <= 1e-3
    assert (score / "errors.csv").is_file()


def test_error_sweep_rejects_missing_basis(tmp_path, capsys):
    code = run_cli(["error-sweep", "--basis-dir", str(tmp_path / "nowhere"),
                    "--out", str(tmp_path / "o")])
    assert code == 1
    assert "cannot load basis" in capsys.readouterr().err


def test_compare_argument_validation(tmp_path, capsys):
    out = ["--out", str(tmp_path / "o")]
    assert run_cli(["compare", "--strategies", "deflated"] + FAST + out) == 1
    assert "at least 2" in capsys.readouterr().err
    assert run_cli(["compare", "--strategies", "deflated,magic"] + FAST + out) == 1
    assert "unknown strategy" in capsys.readouterr().err
    assert run_cli(["compare", "--strategies", "vanilla,pod"] + FAST + out) == 1
    assert "requires --n-modes or --matched-n" in capsys.readouterr().err
    assert run_cli(["compare", "--strategies", "vanilla,pod", "--matched-n"]
                   + FAST + out) == 1
    assert "needs the deflated strategy" in capsys.readouterr().err


def test_compare_matched_n_table(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(["compare", "--model", "chafee",
                    "--strategies", "deflated,pod", "--matched-n"]
                   + FAST + ["--out", str(out)])
    assert code == 0
    report = read_report(out)
    assert report["strategies"][0] == "deflated"
    by_strategy = {row["strategy"]: row for row in report["summary"]}
    assert set(by_strategy) == {"deflated", "pod"}
    # matched mode count: both final table rows sit at the same N
    assert by_strategy["pod"]["n"] == by_strategy["deflated"]["n"]
    lines = (out / "error_vs_n.csv").read_text().splitlines()
    assert lines[0] == "strategy,n,max_error,avg_error,n_flagged"
    assert "certified" in capsys.readouterr().out
