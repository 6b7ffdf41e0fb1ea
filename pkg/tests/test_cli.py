import json
import shutil

import pytest

from drivemoe import cli
from drivemoe.checkpoint import read_header
from drivemoe.dataset import load_dataset


def run(*argv, env=None):
    return cli.main([str(a) for a in argv], env=env or {})


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """A tiny run directory carried through every stage."""
    out = tmp_path_factory.mktemp("run")
    assert run("gen-data", "--outdir", out, "--skill", "give_way", "--seeds", 1, "--max-steps", 40) == 0
    assert run("annotate", "--outdir", out) == 0
    assert run("train", "--stage", 1, "--outdir", out, "--max-steps", 2) == 0
    assert run("train", "--stage", 2, "--outdir", out, "--max-steps", 2) == 0
    return out


def test_layer_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "outdir": "from_config", "train": {"batch_size": 8}}))
    args = cli.build_parser().parse_args(["report", "--config", str(cfg)])
    assert cli.resolve_config(args, {})["seed"] == 1
    resolved = cli.resolve_config(args, {cli.ENV_SEED: "2", cli.ENV_OUTDIR: "from_env"})
    assert (resolved["seed"], resolved["outdir"], resolved["train"]["batch_size"]) == (2, "from_env", 8)
    args = cli.build_parser().parse_args(["report", "--config", str(cfg), "--seed", "3"])
    assert cli.resolve_config(args, {cli.ENV_SEED: "2"})["seed"] == 3
    args = cli.build_parser().parse_args(["report"])
    assert cli.resolve_config(args, {}) == cli.DEFAULTS


def test_model_section_accepts_config_fields(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"preset": "small", "k_top": 2}}))
    args = cli.build_parser().parse_args(["report", "--config", str(cfg)])
    assert cli.model_config(cli.resolve_config(args, {})).k_top == 2


@pytest.mark.parametrize("text", ["{bad", "[1, 2]", '{"nope": 1}', '{"train": 5}', '{"seed": "x"}'])
def test_malformed_config_exit_code(tmp_path, text, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(text)
    assert run("report", "--outdir", tmp_path, "--config", cfg) == cli.EXIT_CONFIG
    assert "error" in capsys.readouterr().err


def test_bad_model_config_exit_code(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"k_top": 0}}))
    (tmp_path / "data").mkdir()
    assert run("train", "--stage", 1, "--outdir", tmp_path, "--config", cfg) == cli.EXIT_CONFIG


def test_usage_and_missing_inputs(tmp_path):
    assert run("bogus") == cli.EXIT_USAGE
    assert run("train", "--outdir", tmp_path) == cli.EXIT_USAGE  # --stage is required
    assert run("report", "--config", tmp_path / "absent.json") == cli.EXIT_MISSING
    assert run("annotate", "--outdir", tmp_path) == cli.EXIT_MISSING
    assert run("report", "--outdir", tmp_path) == cli.EXIT_MISSING
    assert run("gen-data", "--outdir", tmp_path, "--skill", "Drifting") == cli.EXIT_CONFIG
    assert run("report", "--outdir", tmp_path, env={cli.ENV_SEED: "abc"}) == cli.EXIT_CONFIG


def test_env_outdir(tmp_path):
    assert run("report", env={cli.ENV_OUTDIR: str(tmp_path / "envrun")}) == cli.EXIT_MISSING
    assert (tmp_path / "envrun" / "config.json").exists()


def test_stage2_requires_stage1_checkpoint(pipeline, tmp_path, capsys):
    fresh = tmp_path / "fresh"
    shutil.copytree(pipeline / "data", fresh / "data")
    assert run("train", "--stage", 2, "--outdir", fresh) == cli.EXIT_MISSING
    assert "stage-1 checkpoint" in capsys.readouterr().err
    assert not (fresh / "checkpoints" / "stage2.ckpt").exists()
    # a stage-2 file in the stage-1 slot is rejected as a precondition failure
    (fresh / "checkpoints").mkdir(exist_ok=True)
    shutil.copy(pipeline / "checkpoints" / "stage2.ckpt", fresh / "checkpoints" / "stage1.ckpt")
    assert run("train", "--stage", 2, "--outdir", fresh) == cli.EXIT_PRECONDITION


def test_unlabeled_data_is_a_precondition_error(pipeline, tmp_path):
    fresh = tmp_path / "fresh"
    assert run("gen-data", "--outdir", fresh, "--skill", "Merging", "--seeds", 1, "--max-steps", 10) == 0
    assert run("train", "--stage", 1, "--outdir", fresh) == cli.EXIT_PRECONDITION
    # the dense baseline has no routers and trains on unlabeled frames
    assert run("train", "--stage", 1, "--outdir", fresh, "--dense", "--max-steps", 1) == 0


def test_layout_and_provenance(pipeline):
    cfg = json.loads((pipeline / "config.json").read_text())
    assert cfg["seed"] == 0 and cfg["outdir"] == str(pipeline)
    ds = load_dataset(pipeline / "data" / "dataset")
    assert ds.labeled and ds.meta["seed"] == 0 and ds.meta["run_config"]["data"]["skill"] == "give_way"
    assert ds.meta["annotation"]["seed"] == 0
    assert {e["scenario_id"] for e in ds.episodes} == {"InvadingTurn", "YieldToEmergencyVehicle"}
    for stage in (1, 2):
        header = read_header(pipeline / "checkpoints" / f"stage{stage}.ckpt")
        assert header["stage"] == stage and header["seed"] == 0 and "run_config" in header
        first = json.loads((pipeline / "logs" / f"stage{stage}.jsonl").read_text().splitlines()[0])
        assert first["kind"] == "config" and first["run_config"]["seed"] == 0


def test_eval_and_report(pipeline, capsys):
    assert run("eval-open", "--outdir", pipeline) == 0
    doc = json.loads((pipeline / "reports" / "open_loop.json").read_text())
    assert doc["checkpoint_stage"] == 2 and doc["seed"] == 0 and doc["open_loop_l2"] > 0
    assert 0 <= doc["vision_acc"] <= 1 and 0 <= doc["action_acc"] <= 1
    assert run("eval-closed", "--outdir", pipeline, "--policy", "zero", "--route-seeds", 1) == 0
    rep = json.loads((pipeline / "reports" / "closed_loop_zero.json").read_text())
    assert rep["summary"]["n_episodes"] == 20 and rep["summary"]["success_rate"] == 0.0
    assert rep["config"]["policy"] == "zero" and rep["seed"] == 0
    capsys.readouterr()
    assert run("report", "--outdir", pipeline) == 0
    assert json.loads(capsys.readouterr().out) == {"rows": 2}
    lines = (pipeline / "reports" / "summary.csv").read_text().splitlines()
    assert lines[0].startswith("# seed=0 config=") and "source" in lines[1]


def test_repeated_run_is_bit_identical(pipeline):
    assert run("eval-closed", "--outdir", pipeline, "--policy", "oracle", "--route-seeds", 1) == 0
    first = {p.name: p.read_bytes() for p in (pipeline / "reports").glob("closed_loop_oracle.*")}
    assert run("eval-closed", "--outdir", pipeline, "--policy", "oracle", "--route-seeds", 1) == 0
    assert first == {p.name: p.read_bytes() for p in (pipeline / "reports").glob("closed_loop_oracle.*")}
    assert len(first) == 2
