import hashlib
import json
import os

import pytest
import yaml

from actor.cli import main


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


TINY_TRAIN_ARGS = [
    "--set", "model.latent_dim=32", "--set", "model.layers=1", "--set", "model.heads=2",
    "--set", "model.ff_dim=64", "--set", "train.fixed_duration=12",
    "--set", "train.batch_size=8",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    rc = main([
        "gen-data", "--out", str(data),
        "--set", "actions=[squat, walk-in-place]",
        "--set", "sequences_per_action=6",
        "--set", "duration=[12, 16]", "--set", "seed=3",
    ])
    assert rc == 0
    ckpt = root / "model.npz"
    rc = main(["train", "--data", str(data), "--out", str(ckpt), "--epochs", "2",
               *TINY_TRAIN_ARGS])
    assert rc == 0
    return root, data, ckpt


def test_gen_data_writes_manifest(workspace):
    _, data, _ = workspace
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["actions"] == ["squat", "walk-in-place"]
    assert len(manifest["files"]) == 12


def test_train_writes_history(workspace):
    root, _, ckpt = workspace
    with open(str(ckpt) + ".history.json") as f:
        history = json.load(f)
    assert len(history["epochs"]) == 2


def test_config_file_with_flag_overrides(workspace, tmp_path):
    root, data, _ = workspace
    config = tmp_path / "config.yaml"
    config.write_text(yaml.safe_dump({
        "model": {"latent_dim": 32, "layers": 1, "heads": 2, "ff_dim": 64},
        "train": {"epochs": 9, "fixed_duration": 12, "batch_size": 8,
                  "loss": {"lambda_kl": 0.001}},
    }))
    out = tmp_path / "m.npz"
    rc = main(["train", "--config", str(config), "--data", str(data),
               "--out", str(out), "--epochs", "1", "--set", "train.seed=5"])
    assert rc == 0
    history = json.loads(open(str(out) + ".history.json").read())
    assert len(history["epochs"]) == 1  # CLI flag beat the file value
    from actor.training import load_checkpoint
    ckpt = load_checkpoint(out)
    assert ckpt.train_config.epochs == 1
    assert ckpt.train_config.seed == 5
    assert ckpt.train_config.loss.lambda_kl == 0.001


def test_generate_deterministic_across_runs(workspace, tmp_path):
    _, _, ckpt = workspace
    a, b = tmp_path / "a.npz", tmp_path / "b.npz"
    for out in (a, b):
        rc = main(["generate", "--ckpt", str(ckpt), "--action", "squat",
                   "--duration", "14", "--seed", "11", "--out", str(out)])
        assert rc == 0
    assert sha(a) == sha(b)
    c = tmp_path / "c.npz"
    main(["generate", "--ckpt", str(ckpt), "--action", "squat", "--duration", "14",
          "--seed", "12", "--out", str(c)])
    assert sha(a) != sha(c)


def test_generate_accepts_action_id(workspace, tmp_path):
    _, _, ckpt = workspace
    out = tmp_path / "byid.npz"
    rc = main(["generate", "--ckpt", str(ckpt), "--action", "1", "--duration", "12",
               "--seed", "0", "--out", str(out)])
    assert rc == 0
    from actor.data import load_motion
    assert load_motion(out).action == 1


def test_finetune_var_and_denoise_and_plot(workspace, tmp_path):
    root, data, ckpt = workspace
    var = tmp_path / "var.npz"
    rc = main(["finetune-var", "--ckpt", str(ckpt), "--data", str(data),
               "--range", "12", "16", "--epochs", "1", "--out", str(var)])
    assert rc == 0
    gen = tmp_path / "g.npz"
    main(["generate", "--ckpt", str(var), "--action", "squat", "--duration", "16",
          "--seed", "1", "--out", str(gen)])
    den = tmp_path / "den.npz"
    rc = main(["denoise", "--ckpt", str(var), "--in", str(gen), "--action", "squat",
               "--out", str(den), "--report-jitter"])
    assert rc == 0
    png = tmp_path / "strip.png"
    rc = main(["plot", "--in", str(gen), "--out", str(png)])
    assert rc == 0 and png.stat().st_size > 1000


def test_evaluate_emits_reports(workspace, tmp_path):
    _, data, ckpt = workspace
    out = tmp_path / "report"
    rc = main(["evaluate", "--ckpt", str(ckpt), "--data", str(data), "--seeds", "2",
               "--per-action", "3", "--duration", "12", "--recognizer-epochs", "4",
               "--out", str(out)])
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report) == {"real", "generated"}
    for key in ("fid_train", "fid_test", "accuracy", "diversity", "multimodality"):
        assert key in report["generated"]
    text = (tmp_path / "report.txt").read_text()
    assert "FID_test" in text


def test_ablate_kl_runs_exact_grid(workspace, tmp_path):
    _, data, _ = workspace
    out = tmp_path / "abl"
    rc = main(["ablate", "--suite", "kl", "--data", str(data), "--epochs", "1",
               "--seeds", "1", "--per-action", "2", "--recognizer-epochs", "2",
               "--out", str(out)])
    assert rc == 0
    result = json.loads((tmp_path / "abl.json").read_text())
    labels = [row["label"] for row in result["rows"]]
    assert labels == [f"λ_KL = 1e-{k}" for k in (3, 4, 5, 6, 7)]


def test_usage_errors_exit_1(workspace, tmp_path):
    _, data, ckpt = workspace
    assert main(["generate", "--ckpt", str(ckpt), "--action", "sprint",
                 "--duration", "10", "--seed", "0", "--out", str(tmp_path / "x.npz")]) == 1
    assert main(["ablate", "--suite", "nonsense", "--data", str(data)]) == 1
    assert main(["train", "--data", str(data)]) == 1  # missing --out


def test_data_errors_exit_2(workspace, tmp_path):
    _, data, ckpt = workspace
    assert main(["train", "--data", str(tmp_path / "nope"), "--out",
                 str(tmp_path / "m.npz")]) == 2
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a checkpoint")
    assert main(["generate", "--ckpt", str(bad), "--action", "0", "--duration", "5",
                 "--seed", "0", "--out", str(tmp_path / "y.npz")]) == 2


def test_divergence_exits_3(workspace, tmp_path):
    _, data, _ = workspace
    out = tmp_path / "div.npz"
    rc = main(["train", "--data", str(data), "--out", str(out), "--epochs", "40",
               "--learning-rate", "1e12", *TINY_TRAIN_ARGS])
    assert rc == 3
    assert out.exists()  # last good checkpoint still written
