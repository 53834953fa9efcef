"""Reproducible experiment runner.

Subcommands: gen-data, train, eval, sweep, inspect. Config files are flat
``key = value`` text with sections (see _SCHEMA); ``--set section.key=value``
overrides file keys. Every run directory is self-describing: the resolved
config, seed, and dataset checksums in manifest.json are enough to reproduce
the metrics CSV bitwise.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as datamod
from . import shapes as shapesmod
from .beam import BeamConfig, iterative_beam_search
from .data import DataError
from .energies import EnergyModel, MultiLabelEnergy, ProgramEnergy, SequenceEnergy
from .inference import InferenceError, predict
from .outputs import OutputSpace
from .rewards import IouReward, OracleF1Reward, RuleBasedReward, f1_score
from .seeding import stream
from .trainer import TrainConfig, TrainingError, train


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "task": {"name": (str, "multilabel")},
    "data": {
        "n": (int, 300),
        "num_features": (int, 32),
        "num_labels": (int, 16),
        "num_clusters": (int, 4),
        "feature_noise": (float, 0.3),
        "label_noise": (float, 0.0),
        "num_fields": (int, 4),
        "tokens_per_field": (int, 8),
        "max_len": (int, 16),
        "max_run": (int, 4),
        "vocab": (str, "reduced"),  # reduced | full
        "image_size": (int, 64),
        "program_length": (int, 5),
        "image_format": (str, "binary"),  # binary | text
        "fractions": ("floatlist", (0.7, 0.15, 0.15)),
        "label_fraction": (float, 0.0),
        "dir": (str, ""),
    },
    "model": {
        "feature_hidden": (int, 64),
        "global_hidden": (int, 15),
        "embed_dim": (int, 16),
        "pair_hidden": (int, 32),
        "token_dim": (int, 32),
        "prog_embed": (int, 64),
        "image_hidden": (int, 128),
        "image_embed": (int, 64),
        "joint_hidden": (int, 128),
    },
    "train": {
        "algorithm": (str, "sg_spen"),
        "epochs": (int, 50),
        "batch_size": (int, 16),
        "eta": (float, 1.0),
        "sigma": ("optfloat", None),
        "inference_steps": (int, None),  # per-task default
        "delta": (float, None),  # per-task default
        "budget": (int, 100),
        "reset_on_decrease": (bool, False),
        "alpha": (float, 100.0),
        "c": (float, 1e-4),
        "lambda": (float, 0.05),
        "semi_supervised": (bool, False),
        "dvn_literal_sign": (bool, False),
        "checkpoint_every": (int, 0),
    },
    "eval": {
        "beam_width": (int, 5),
        "beam_restarts": (int, 10),
        "beam_stall_rounds": (int, 10),
        "beam_max_rounds": (int, 200),
        "split": (str, "test"),  # train | val | test
    },
    "run": {"seed": (int, 0), "out_dir": (str, "runs/out")},
}

# keys whose defaults depend on the task
_TASK_DEFAULTS = {
    "multilabel": {"inference_steps": 20, "delta": 0.01},
    "tagging": {"inference_steps": 25, "delta": 0.01},
    "shapes": {"inference_steps": 25, "delta": 0.1},
}


def _parse_value(raw: str, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "floatlist":
        return tuple(float(t) for t in raw.replace(",", " ").split())
    if kind == "optfloat":
        return None if raw == "" else float(raw)
    return kind(raw)


def load_config(path: str | None, overrides=()) -> dict:
    """Resolve a config file plus overrides against the schema; unknown keys
    are rejected, per-task defaults filled in."""
    values = {sec: dict() for sec in _SCHEMA}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for sec in parser.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown config key {sec}.{key}")
                try:
                    values[sec][key] = _parse_value(raw, _SCHEMA[sec][key][0])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, raw = item.split("=", 1)
        sec, key = target.split(".", 1)
        if sec not in _SCHEMA or key not in _SCHEMA[sec]:
            raise ConfigError(f"unknown config key {sec}.{key}")
        try:
            values[sec][key] = _parse_value(raw, _SCHEMA[sec][key][0])
        except ValueError as exc:
            raise ConfigError(f"bad value for {sec}.{key}: {exc}") from exc

    task = values["task"].get("name", _SCHEMA["task"]["name"][1])
    if task not in _TASK_DEFAULTS:
        raise ConfigError(f"unknown task {task!r}")
    resolved = {}
    for sec, keys in _SCHEMA.items():
        resolved[sec] = {}
        for key, (kind, default) in keys.items():
            if key in values[sec]:
                resolved[sec][key] = values[sec][key]
            elif default is None and key in _TASK_DEFAULTS[task]:
                resolved[sec][key] = _TASK_DEFAULTS[task][key]
            else:
                resolved[sec][key] = default
    return resolved


def train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        algorithm=t["algorithm"],
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        seed=cfg["run"]["seed"],
        eta=t["eta"],
        sigma=t["sigma"],
        inference_steps=t["inference_steps"],
        delta=t["delta"],
        budget=t["budget"],
        reset_on_decrease=t["reset_on_decrease"],
        alpha=t["alpha"],
        c=t["c"],
        lam=t["lambda"],
        semi_supervised=t["semi_supervised"],
        dvn_literal_sign=t["dvn_literal_sign"],
        checkpoint_every=t["checkpoint_every"],
    )


# -- task assembly ----------------------------------------------------------


class TaskBundle:
    """Everything one run needs: splits, reward, model factory, gold access."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.task = cfg["task"]["name"]
        d = cfg["data"]
        seed = cfg["run"]["seed"]
        self.vocabulary = None
        loaded_splits = None
        if self.task == "multilabel":
            if d["dir"]:
                parts = [
                    datamod.load_sparse_multilabel(Path(d["dir"]) / f"{name}.txt")
                    for name in ("train", "val", "test")
                ]
                self.dataset = parts[0]
                loaded_splits = tuple(p.examples for p in parts)
            else:
                self.dataset = datamod.gen_multilabel(
                    d["n"], d["num_features"], d["num_labels"], d["num_clusters"],
                    stream(seed, "data"), d["feature_noise"], d["label_noise"],
                )
            self.reward = OracleF1Reward()
            self.space = OutputSpace.uniform(self.dataset.num_labels, 2)
        elif self.task == "tagging":
            if d["dir"]:
                rules = datamod.make_tagging_rules(d["num_fields"], d["tokens_per_field"])
                vocab_size = 1 + d["num_fields"] * d["tokens_per_field"]
                parts = [
                    datamod.load_tagging(
                        Path(d["dir"]) / f"{name}.tokens.txt", Path(d["dir"]) / f"{name}.tags.txt",
                        vocab_size, d["num_fields"] + 1, d["max_len"], rules,
                    )
                    for name in ("train", "val", "test")
                ]
                self.dataset = parts[0]
                loaded_splits = tuple(p.examples for p in parts)
            else:
                self.dataset = datamod.gen_tagging(
                    d["n"], d["num_fields"], d["tokens_per_field"], d["max_len"],
                    stream(seed, "data"), d["max_run"],
                )
            self.reward = RuleBasedReward(self.dataset.rules)
            self.space = OutputSpace.uniform(d["max_len"], self.dataset.num_tags)
        elif self.task == "shapes":
            grid = shapesmod.REDUCED_GRID if d["vocab"] == "reduced" else None
            self.vocabulary = shapesmod.Vocabulary.build(grid, d["image_size"])
            if d["dir"]:
                loaded = []
                for name in ("train", "val", "test"):
                    images = shapesmod.load_images(Path(d["dir"]) / f"{name}.images")
                    programs = shapesmod.load_programs(Path(d["dir"]) / f"{name}.programs.txt")
                    loaded.append(
                        [datamod.ShapeExample(img, prog) for img, prog in zip(images, programs)]
                    )
                self.dataset = datamod.ShapeDataset(loaded[0], self.vocabulary)
                loaded_splits = tuple(loaded)
            else:
                self.dataset = datamod.gen_shapes(
                    d["n"], stream(seed, "data"), self.vocabulary, d["program_length"]
                )
            self.reward = IouReward(self.vocabulary)
            self.space = OutputSpace.uniform(d["program_length"], len(self.vocabulary))
        else:
            raise ConfigError(f"unknown task {self.task!r}")
        if loaded_splits is not None:
            self.train, self.val, self.test = loaded_splits
        else:
            self.train, self.val, self.test = datamod.split(
                self.dataset.examples, d["fractions"], stream(seed, "split")
            )

    def build_model(self) -> EnergyModel:
        cfg, d, m = self.cfg, self.cfg["data"], self.cfg["model"]
        rng = stream(cfg["run"]["seed"], "init")
        if self.task == "multilabel":
            return MultiLabelEnergy(
                d["num_features"], d["num_labels"], m["feature_hidden"], m["global_hidden"], rng
            )
        if self.task == "tagging":
            return SequenceEnergy(
                self.dataset.vocab_size, self.dataset.num_tags, d["max_len"],
                m["embed_dim"], m["pair_hidden"], rng,
            )
        return ProgramEnergy(
            len(self.vocabulary), d["program_length"], d["image_size"],
            token_dim=m["token_dim"], prog_embed=m["prog_embed"],
            image_hidden=m["image_hidden"], image_embed=m["image_embed"],
            joint_hidden=m["joint_hidden"], rng=rng,
        )

    def gold(self, ex):
        if self.task == "multilabel":
            return datamod.multilabel_gold(ex, self.space)
        if self.task == "tagging":
            return datamod.tagging_gold(ex, self.space)
        return datamod.shapes_gold(ex, self.space)

    def golds_for(self, examples):
        """Gold outputs for the seeded labeled subset (label_fraction)."""
        frac = self.cfg["data"]["label_fraction"]
        n = len(examples)
        count = int(round(frac * n))
        chosen = set(
            int(i) for i in stream(self.cfg["run"]["seed"], "labels").permutation(n)[:count]
        )
        return [self.gold(ex) if i in chosen else None for i, ex in enumerate(examples)]

    def metric(self, ex, pred) -> float:
        """Task metric: F1 / non-pad token accuracy / IOU."""
        if self.task == "multilabel":
            return f1_score(ex.labels, {i for i, s in enumerate(pred.states) if s == 1})
        if self.task == "tagging":
            if ex.gold is None:
                return float("nan")
            return datamod.token_accuracy(ex.gold, pred.states, ex.tokens)
        return self.reward(ex, pred)

    def write_data_files(self, out: Path) -> dict:
        """Materialize the splits under `out` and return their checksums."""
        out.mkdir(parents=True, exist_ok=True)
        sums = {}
        names = ("train", "val", "test")
        if self.task == "multilabel":
            for name, part in zip(names, (self.train, self.val, self.test)):
                p = out / f"{name}.txt"
                datamod.save_sparse_multilabel(
                    p, datamod.MultiLabelDataset(part, self.dataset.num_features, self.dataset.num_labels)
                )
                sums[p.name] = shapesmod.file_sha256(p)
        elif self.task == "tagging":
            rules_path = out / "rules.txt"
            rules_path.write_text(self.dataset.rules.format(), encoding="utf-8")
            sums[rules_path.name] = shapesmod.file_sha256(rules_path)
            for name, part in zip(names, (self.train, self.val, self.test)):
                toks, tags = out / f"{name}.tokens.txt", out / f"{name}.tags.txt"
                datamod.save_tagging(
                    toks, tags,
                    datamod.TaggingDataset(part, self.dataset.vocab_size, self.dataset.num_tags,
                                           self.dataset.max_len, self.dataset.rules),
                )
                sums[toks.name] = shapesmod.file_sha256(toks)
                sums[tags.name] = shapesmod.file_sha256(tags)
        else:
            manifest = out / "vocabulary.tsv"
            self.vocabulary.save_manifest(manifest)
            sums[manifest.name] = shapesmod.file_sha256(manifest)
            text = self.cfg["data"]["image_format"] == "text"
            for name, part in zip(names, (self.train, self.val, self.test)):
                img_path = out / (f"{name}.images" if not text else f"{name}.images.d")
                shapesmod.save_images(img_path, [ex.image for ex in part], text=text)
                if not text:
                    sums[img_path.name] = shapesmod.file_sha256(img_path)
                prog_path = out / f"{name}.programs.txt"
                shapesmod.save_programs(prog_path, [ex.program for ex in part])
                sums[prog_path.name] = shapesmod.file_sha256(prog_path)
        return sums


def _write_manifest(out_dir: Path, cfg: dict, checksums: dict, wall_clock: float) -> None:
    manifest = {
        "config": cfg,
        "seed": cfg["run"]["seed"],
        "dataset_checksums": checksums,
        "wall_clock_seconds": wall_clock,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(cfg: dict) -> int:
    started = time.monotonic()
    bundle = TaskBundle(cfg)
    out_dir = Path(cfg["run"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sums = bundle.write_data_files(out_dir / "data")
    _write_manifest(out_dir, cfg, sums, time.monotonic() - started)
    print(f"wrote {len(sums)} dataset files to {out_dir / 'data'}")
    return 0


def cmd_train(cfg: dict) -> int:
    started = time.monotonic()
    bundle = TaskBundle(cfg)
    out_dir = Path(cfg["run"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sums = bundle.write_data_files(out_dir / "data")
    tcfg = train_config(cfg)
    if tcfg.epochs == 0:
        _write_manifest(out_dir, cfg, sums, time.monotonic() - started)
        print("epochs=0: manifest only")
        return 0
    model = bundle.build_model()
    golds = bundle.golds_for(bundle.train) if tcfg.semi_supervised else None
    model, history = train(model, bundle.train, bundle.reward, tcfg, bundle.val, golds)
    (out_dir / "metrics.csv").write_text(
        history.METRICS_HEADER + "\n" + "\n".join(history.metrics_rows()) + "\n",
        encoding="utf-8",
    )
    (out_dir / "constraints.csv").write_text(
        history.records[0].CSV_HEADER + "\n" + "\n".join(r.csv_row() for r in history.records) + "\n"
        if history.records
        else "step,example,source,success,violated,xi,reward_start,reward_found,queries\n",
        encoding="utf-8",
    )
    for epoch, params in history.checkpoints:
        snap = bundle.build_model()
        for name, arr in params.items():
            snap.params[name] = arr
        snap.save(out_dir / f"model_epoch_{epoch:04d}.ckpt")
    model.save(out_dir / "model_final.ckpt")
    _write_manifest(out_dir, cfg, sums, time.monotonic() - started)
    last = history.epochs[-1]
    print(
        f"trained {tcfg.algorithm} for {tcfg.epochs} epochs: "
        f"train_reward={last.train_reward:.4f} eval_reward={last.eval_reward:.4f}"
    )
    return 0


def _eval_split(bundle: TaskBundle, name: str):
    return {"train": bundle.train, "val": bundle.val, "test": bundle.test}[name]


def cmd_eval(cfg: dict, checkpoint: str | None) -> int:
    bundle = TaskBundle(cfg)
    examples = _eval_split(bundle, cfg["eval"]["split"])
    if not examples:
        raise DataError(f"empty {cfg['eval']['split']} split")
    out_dir = Path(cfg["run"]["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    algorithm = cfg["train"]["algorithm"]
    rows = ["example,metric,reward,queries,seconds"]
    metrics, rewards = [], []
    if algorithm == "beam":
        bcfg = BeamConfig(
            cfg["eval"]["beam_width"], cfg["eval"]["beam_restarts"],
            cfg["eval"]["beam_stall_rounds"], cfg["eval"]["beam_max_rounds"],
        )
        for i, ex in enumerate(examples):
            rng = stream(cfg["run"]["seed"], "beam", i)
            t0 = time.monotonic()
            pred, best_reward, queries = iterative_beam_search(bundle.reward, ex, bundle.space, bcfg, rng)
            dt = time.monotonic() - t0
            m = bundle.metric(ex, pred)
            metrics.append(m)
            rewards.append(best_reward)
            rows.append(f"{i},{m!r},{best_reward!r},{queries},{dt!r}")
    else:
        if not checkpoint:
            raise ConfigError("eval needs --checkpoint (or algorithm=beam)")
        model = EnergyModel.load(checkpoint)
        if model.space != bundle.space:
            raise ConfigError(
                f"checkpoint space {model.space} does not match task space {bundle.space}"
            )
        pcfg = train_config(cfg).predict_cfg()
        for i, ex in enumerate(examples):
            t0 = time.monotonic()
            pred = predict(model, ex, pcfg)
            dt = time.monotonic() - t0
            m = bundle.metric(ex, pred)
            r = bundle.reward(ex, pred)
            metrics.append(m)
            rewards.append(r)
            rows.append(f"{i},{m!r},{r!r},0,{dt!r}")
    (out_dir / "eval.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    summary = {
        "split": cfg["eval"]["split"],
        "algorithm": algorithm,
        "mean_metric": float(np.nanmean(metrics)),
        "mean_reward": float(np.mean(rewards)),
        "examples": len(examples),
    }
    (out_dir / "eval_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(f"eval {algorithm} on {summary['split']}: mean_metric={summary['mean_metric']:.4f}")
    return 0


def cmd_sweep(cfg: dict, key: str, values: list[str]) -> int:
    if "." not in key:
        raise ConfigError("sweep key must look like section.key")
    sec, k = key.split(".", 1)
    if sec not in _SCHEMA or k not in _SCHEMA[sec]:
        raise ConfigError(f"unknown sweep key {key}")
    base_out = Path(cfg["run"]["out_dir"])
    rows = ["value,out_dir,final_train_reward,final_eval_reward"]
    for raw in values:
        kind = _SCHEMA[sec][k][0]
        try:
            value = _parse_value(raw, kind)
        except ValueError as exc:
            raise ConfigError(f"bad sweep value {raw!r} for {key}: {exc}") from exc
        sub = json.loads(json.dumps(cfg))  # deep copy
        sub[sec][k] = value
        sub["run"]["out_dir"] = str(base_out / f"{k}={raw}")
        code = cmd_train(sub)
        if code != 0:
            return code
        metrics = (Path(sub["run"]["out_dir"]) / "metrics.csv").read_text().strip().splitlines()
        final = metrics[-1].split(",")
        rows.append(f"{raw},{sub['run']['out_dir']},{final[2]},{final[3]}")
    base_out.mkdir(parents=True, exist_ok=True)
    (base_out / "sweep.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"swept {key} over {len(values)} values; comparison in {base_out / 'sweep.csv'}")
    return 0


def cmd_inspect(run_dir: str) -> int:
    root = Path(run_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    print(json.dumps(manifest, indent=2))
    constraints = root / "constraints.csv"
    if constraints.exists():
        lines = constraints.read_text().strip().splitlines()[1:]
        total = len(lines)
        by_source: dict[str, int] = {}
        successes = 0
        queriesved = []
        for line in lines:
            parts = line.split(",")
            by_source[parts[2]] = by_source.get(parts[2], 0) + 1
            if parts[3] == "1":
                successes += 1
            if parts[2] == "search":
                queriesved.append(int(parts[8]))
        print(f"constraint records: {total} (by source: {by_source})")
        if total:
            print(f"successful pairs: {successes} ({successes / total:.1%})")
        if queriesved:
            print(f"mean search queries: {float(np.mean(queriesved)):.2f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="sgspen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", default=None, help="config file (ini-style sections)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key")

    p = sub.add_parser("gen-data", help="generate dataset files")
    add_config_args(p)
    p = sub.add_parser("train", help="train a model and write metrics/checkpoints")
    add_config_args(p)
    p = sub.add_parser("eval", help="evaluate a checkpoint (or the beam baseline)")
    add_config_args(p)
    p.add_argument("--checkpoint", default=None)
    p = sub.add_parser("sweep", help="run one training per value of a config key")
    add_config_args(p)
    p.add_argument("--key", required=True, help="e.g. train.delta")
    p.add_argument("--values", required=True, help="comma-separated values")
    p = sub.add_parser("inspect", help="pretty-print a run's manifest and constraint stats")
    p.add_argument("run_dir")

    args = parser.parse_args(argv)
    try:
        if args.command == "inspect":
            return cmd_inspect(args.run_dir)
        cfg = load_config(args.config, args.set)
        if args.command == "gen-data":
            return cmd_gen_data(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.key, [v for v in args.values.split(",") if v])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (TrainingError, InferenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
