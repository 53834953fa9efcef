import json
from pathlib import Path

import pytest

from sgspen.cli import ConfigError, load_config, main


def write_config(path: Path, body: str) -> str:
    path.write_text(body, encoding="utf-8")
    return str(path)


FAST_ML = """
[task]
name = multilabel
[data]
n = 40
num_features = 8
num_labels = 6
num_clusters = 2
[train]
epochs = 2
batch_size = 10
eta = 0.5
budget = 20
alpha = 10
lambda = 0.02
[run]
seed = 3
"""


def test_defaults_resolve_per_task():
    cfg = load_config(None)
    assert cfg["train"]["delta"] == 0.01
    assert cfg["train"]["inference_steps"] == 20
    cfg = load_config(None, ["task.name=shapes"])
    assert cfg["train"]["delta"] == 0.1
    assert cfg["train"]["inference_steps"] == 25


def test_unknown_keys_rejected(tmp_path):
    path = write_config(tmp_path / "c.ini", "[train]\nepocs = 3\n")
    with pytest.raises(ConfigError, match="epocs"):
        load_config(path)
    with pytest.raises(ConfigError, match="nope"):
        load_config(None, ["train.nope=1"])
    with pytest.raises(ConfigError, match="section"):
        load_config(write_config(tmp_path / "d.ini", "[wat]\nx = 1\n"))


def test_overrides_beat_file_keys(tmp_path):
    path = write_config(tmp_path / "c.ini", "[train]\nepochs = 9\n")
    cfg = load_config(path, ["train.epochs=2"])
    assert cfg["train"]["epochs"] == 2


def test_gen_data_writes_files_and_is_seed_reproducible(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out_a = tmp_path / "a" / "deep"  # missing dirs get created
    out_b = tmp_path / "b"
    assert main(["gen-data", "--config", path, "--set", f"run.out_dir={out_a}"]) == 0
    assert main(["gen-data", "--config", path, "--set", f"run.out_dir={out_b}"]) == 0
    man_a = json.loads((out_a / "manifest.json").read_text())
    man_b = json.loads((out_b / "manifest.json").read_text())
    assert man_a["dataset_checksums"] == man_b["dataset_checksums"]
    assert (out_a / "data" / "train.txt").exists()


def test_train_epochs_zero_writes_manifest_only(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "run"
    assert main(["train", "--config", path, "--set", f"run.out_dir={out}",
                 "--set", "train.epochs=0"]) == 0
    assert (out / "manifest.json").exists()
    assert not (out / "metrics.csv").exists()
    assert not (out / "model_final.ckpt").exists()


def test_train_same_seed_gives_identical_metrics_csv(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["train", "--config", path, "--set", f"run.out_dir={out}"]) == 0
        outs.append((out / "metrics.csv").read_bytes())
    assert outs[0] == outs[1]


def test_train_r_spen_dispatch(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "rspen"
    assert main(["train", "--config", path, "--set", f"run.out_dir={out}",
                 "--set", "train.algorithm=r_spen", "--set", "train.epochs=1"]) == 0
    header = (out / "constraints.csv").read_text().splitlines()[0]
    assert header.startswith("step,example,source")


def test_eval_reproduces_trainer_logged_train_reward(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "run"
    assert main(["train", "--config", path, "--set", f"run.out_dir={out}"]) == 0
    metrics = (out / "metrics.csv").read_text().strip().splitlines()
    final_train_reward = float(metrics[-1].split(",")[2])
    eval_out = tmp_path / "eval"
    assert main([
        "eval", "--config", path, "--set", f"run.out_dir={eval_out}",
        "--set", "eval.split=train", "--checkpoint", str(out / "model_final.ckpt"),
    ]) == 0
    summary = json.loads((eval_out / "eval_summary.json").read_text())
    assert abs(summary["mean_reward"] - final_train_reward) <= 1e-9


def test_eval_empty_split_is_data_error(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "run"
    code = main([
        "eval", "--config", path, "--set", f"run.out_dir={out}",
        "--set", "data.fractions=0.9,0.1,0.0", "--checkpoint", "unused.ckpt",
    ])
    assert code == 3


def test_eval_beam_dispatch(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "beam"
    assert main([
        "eval", "--config", path, "--set", f"run.out_dir={out}",
        "--set", "train.algorithm=beam", "--set", "eval.beam_width=2",
        "--set", "eval.beam_restarts=2", "--set", "eval.beam_max_rounds=10",
    ]) == 0
    rows = (out / "eval.csv").read_text().strip().splitlines()
    assert rows[0] == "example,metric,reward,queries,seconds"
    assert len(rows) > 1
    assert int(rows[1].split(",")[3]) > 0  # beam reports reward queries


def test_sweep_single_value_is_single_run_with_named_dir(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "sweep"
    assert main([
        "sweep", "--config", path, "--set", f"run.out_dir={out}",
        "--set", "train.epochs=1", "--key", "train.delta", "--values", "0.01",
    ]) == 0
    assert (out / "delta=0.01" / "metrics.csv").exists()
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(rows) == 2
    assert rows[1].startswith("0.01,")


def test_sweep_unknown_key_is_config_error(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    assert main(["sweep", "--config", path, "--key", "train.nope", "--values", "1"]) == 2


def test_inspect_prints_manifest(tmp_path, capsys):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    out = tmp_path / "run"
    assert main(["train", "--config", path, "--set", f"run.out_dir={out}",
                 "--set", "train.epochs=1"]) == 0
    assert main(["inspect", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "dataset_checksums" in captured
    assert "constraint records" in captured


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.ini")]) == 2


def test_data_dir_round_trip(tmp_path):
    path = write_config(tmp_path / "c.ini", FAST_ML)
    gen_out = tmp_path / "gen"
    assert main(["gen-data", "--config", path, "--set", f"run.out_dir={gen_out}"]) == 0
    run_out = tmp_path / "run"
    assert main([
        "train", "--config", path, "--set", f"run.out_dir={run_out}",
        "--set", f"data.dir={gen_out / 'data'}", "--set", "train.epochs=1",
    ]) == 0
    assert (run_out / "metrics.csv").exists()
