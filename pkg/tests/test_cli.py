import csv
import json
import time

import pytest
import yaml
from click.testing import CliRunner

from slpseg.cli import main

TINY = {
    "dataset": {"n_tiles": 12, "tile_size": 16, "channels_per_modality": [2, 1, 1]},
    "model": {
        "encoder": {"base_width": 4, "level_widths": [4, 4, 8, 8, 8, 8]},
        "attention": {"embed_dim": 8, "heads": 2, "n_layers": 1},
        "inter_channels": 8, "latent_channels": 4, "decoder_widths": [8, 8, 4, 4],
    },
    "training": {"epochs": 2, "batch_size": 4},
    "probe": {"steps": 20},
}


def write_config(path, data=TINY):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(*args):
    res = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    return res


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "tiny.yaml")
    assert run("gen-data", "--config", cfg, "--out", root / "data").exit_code == 0
    for variant in ("slp", "baseline"):
        res = run("train", "--config", cfg, "--data", root / "data", "--variant", variant, "--out", root / variant)
        assert res.exit_code == 0, res.output
    return root, cfg


def test_gen_data_files(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "data").iterdir()}
    assert {"meta.json", "train.bin", "val.bin", "test.bin"} <= names


def test_gen_data_reproducible(workspace, tmp_path):
    root, cfg = workspace
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "again").exit_code == 0
    for name in ("train.bin", "val.bin", "test.bin"):
        assert (tmp_path / "again" / name).read_bytes() == (root / "data" / name).read_bytes()


def test_bad_split_fraction_exit_code(tmp_path):
    cfg = write_config(tmp_path / "bad.yaml", {**TINY, "split": {"fractions": [0.5, 0.3, 0.3]}})
    res = run("gen-data", "--config", cfg, "--out", tmp_path / "d")
    assert res.exit_code == 2


def test_unknown_key_exit_code(tmp_path):
    cfg = write_config(tmp_path / "bad.yaml", {"training": {"epochz": 3}})
    res = run("gen-data", "--config", cfg, "--out", tmp_path / "d")
    assert res.exit_code == 2
    assert "training" in res.output and "epochz" in res.output


def test_train_outputs(workspace):
    root, _ = workspace
    for variant in ("slp", "baseline"):
        names = {p.name for p in (root / variant).iterdir()}
        assert {"best.ckpt", "last.ckpt", "history.csv", "loss_curve.png"} <= names


def test_train_smoke_is_fast(workspace, tmp_path):
    root, cfg = workspace
    t0 = time.time()
    res = run("train", "--config", cfg, "--data", root / "data", "--out", tmp_path / "t")
    assert res.exit_code == 0 and time.time() - t0 < 60
    assert json.loads(res.output)["best_epoch"] >= 0


def test_resume_extends_history(workspace, tmp_path):
    root, _ = workspace
    first = write_config(tmp_path / "a.yaml")
    assert run("train", "--config", first, "--data", root / "data", "--out", tmp_path / "r").exit_code == 0
    res = run("train", "--config", first, "--data", root / "data", "--out", tmp_path / "r", "--resume")
    assert res.exit_code == 0
    rows = list(csv.DictReader(open(tmp_path / "r" / "history.csv")))
    assert [r["epoch"] for r in rows] == ["0", "1"]


def test_resume_without_checkpoint(workspace, tmp_path):
    root, cfg = workspace
    res = run("train", "--config", cfg, "--data", root / "data", "--out", tmp_path / "none", "--resume")
    assert res.exit_code == 2


def test_eval_report(workspace, tmp_path):
    root, cfg = workspace
    res = run("eval", "--config", cfg, "--checkpoint", root / "slp" / "best.ckpt", "--data", root / "data",
              "--out", tmp_path)
    assert res.exit_code == 0, res.output
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["rows"]) == 7
    assert (tmp_path / "report.csv").exists() and (tmp_path / "scenario_scores.png").exists()
    assert (tmp_path / "predictions" / "probs_111.bin").exists()
    assert (tmp_path / "predictions" / "001_000.png").exists()


def test_eval_single_scenario(workspace, tmp_path):
    root, cfg = workspace
    res = run("eval", "--config", cfg, "--checkpoint", root / "slp" / "best.ckpt", "--data", root / "data",
              "--scenario", "1,0,1", "--out", tmp_path)
    assert res.exit_code == 0
    rows = json.loads((tmp_path / "report.json").read_text())["rows"]
    assert [r["scenario_mask"] for r in rows] == [[1, 0, 1]]
    bad = run("eval", "--config", cfg, "--checkpoint", root / "slp" / "best.ckpt", "--data", root / "data",
              "--scenario", "1,0", "--out", tmp_path)
    assert bad.exit_code == 2


def test_eval_refuses_other_dataset(workspace, tmp_path):
    root, _ = workspace
    other = write_config(tmp_path / "other.yaml", {**TINY, "dataset": {**TINY["dataset"], "n_tiles": 14}})
    assert run("gen-data", "--config", other, "--out", tmp_path / "data2").exit_code == 0
    res = run("eval", "--checkpoint", root / "slp" / "best.ckpt", "--data", tmp_path / "data2", "--out", tmp_path / "e")
    assert res.exit_code == 2
    assert "dataset" in res.output


def test_infogap_command(workspace, tmp_path):
    root, cfg = workspace
    res = run("infogap", "--config", cfg, "--baseline", root / "baseline" / "best.ckpt",
              "--slp", root / "slp" / "best.ckpt", "--data", root / "data", "--out", tmp_path)
    assert res.exit_code == 0, res.output
    rows = json.loads((tmp_path / "infogap.json").read_text())["rows"]
    assert len(rows) == 7
    for r in rows:
        assert r["h_baseline"] >= 0 and r["h_slp"] >= 0
        assert r["delta_p"] == pytest.approx(r["h_baseline"] - r["h_slp"], abs=1e-12)
    assert (tmp_path / "infogap.png").exists()


def test_theorem1_command(tmp_path):
    res = run("theorem1", "--instances", 100, "--seed", 3, "--out", tmp_path / "a")
    assert res.exit_code == 0 and "100/100" in res.output
    rows = list(csv.DictReader(open(tmp_path / "a" / "theorem1_sweep.csv")))
    assert len(rows) == 100 and all(r["holds"] == "true" for r in rows)
    run("theorem1", "--instances", 100, "--seed", 3, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "theorem1_sweep.csv").read_bytes() == (tmp_path / "b" / "theorem1_sweep.csv").read_bytes()


def test_theorem1_zero_instances(tmp_path):
    assert run("theorem1", "--instances", 0, "--out", tmp_path).exit_code == 0
    lines = (tmp_path / "theorem1_sweep.csv").read_text().splitlines()
    assert lines == ["instance,kind,n_inputs,lhs_gap,delta_p,holds"]


def test_print_config_round_trips():
    res = run("--print-config")
    assert res.exit_code == 0
    data = yaml.safe_load(res.output)
    assert data["training"]["lr0"] == 1e-4 and data["seed"] == 0
    assert "seed" not in data["training"]


def test_output_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SLPSEG_OUT", str(tmp_path))
    assert run("theorem1", "--instances", 2).exit_code == 0
    assert (tmp_path / "theorem1" / "theorem1_sweep.csv").exists()
