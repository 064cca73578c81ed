"""Command line entry point: ``hgt {synthesize,train,evaluate,predict,validate-schema}``.

Settings resolve as flags > config file > built-in defaults. Every run writes
one ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import yaml

from . import data as data_mod
from . import metrics, simulator
from .backbone import read_feature_matrix
from .errors import ConfigError, DataError, HGTError, ShapeError
from .schema import TASKS, build_task_schema, load_schema, validate_schema, TaskSpec
from .seeding import component_seed

log = logging.getLogger("hgt")

MANIFEST = "manifest.json"


def code_version() -> str:
    try:
        return "artifact " + metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "artifact (not installed)"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    schema_hash: str | None
    code_version: str
    started: str
    finished: str = ""
    outputs: dict = dataclasses.field(default_factory=dict)

    def write(self, directory) -> Path:
        self.finished = _now()
        path = Path(directory) / MANIFEST
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _read_yaml(path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _load_dataset(directory, task: str):
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    if task == "triplet":
        return data_mod.load_triplet_annotations(directory)
    return data_mod.load_annotations(directory)


# -- synthesize ------------------------------------------------------------


def cmd_synthesize(args) -> int:
    if args.config:
        raw = _read_yaml(args.config)
        sim_config = simulator.config_from_dict(raw)
    else:
        sim_config = simulator.default_config()
    overrides = {}
    for key in ("seed", "n_sequences", "length", "feature_noise", "label_noise"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    sim_config = dataclasses.replace(sim_config, **overrides)
    if args.p_obey is not None:
        sim_config.precedence = [dataclasses.replace(r, p_obey=args.p_obey) for r in sim_config.precedence]
    sim_config.check()

    started = _now()
    out = _out_dir(args.out)
    sequences = simulator.simulate(sim_config)
    data_mod.write_dataset(out, sequences, sim_config.labels)
    simulator.save_config(sim_config, out / "simulator.yaml")
    RunManifest("synthesize", simulator.config_to_dict(sim_config), sim_config.seed, None, code_version(), started,
                outputs={"dataset": str(out), "n_sequences": len(sequences)}).write(out)
    print(f"wrote {len(sequences)} sequences to {out}")
    return 0


# -- train -----------------------------------------------------------------

TRAIN_FLAGS = ("seed", "variant", "task", "horizon", "past_window", "phase1_epochs", "phase2_epochs",
               "learning_rate", "batch_size", "hidden_dim")


def resolve_train_config(args):
    """(TrainConfig, data dir) from defaults, the config file and flags."""
    from .training import TrainConfig

    raw = _read_yaml(args.config) if args.config else {}
    data_dir = raw.pop("data", None)
    raw.pop("out", None)
    for key in TRAIN_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "data", None):
        data_dir = args.data
    if data_dir is None:
        raise ConfigError("no dataset given (use --data or a 'data' entry in the config)")
    if args.config and not Path(data_dir).is_absolute():
        candidate = Path(args.config).parent / data_dir
        if candidate.exists():
            data_dir = candidate
    try:
        return TrainConfig.from_dict(raw), Path(data_dir)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _split(sequences, config):
    return data_mod.split(sequences, config.train_fraction, component_seed(config.seed, "split"))


def cmd_train(args) -> int:
    from .training import train

    config, data_dir = resolve_train_config(args)
    schema = build_task_schema(config.task)
    sequences = _load_dataset(data_dir, config.task)
    train_seqs, val_seqs = _split(sequences, config)
    started = _now()
    out = _out_dir(args.out)
    result = train(config, train_seqs, val_seqs, schema, out_dir=out, resume=args.resume)
    RunManifest("train", dataclasses.asdict(config), config.seed, schema.digest(), code_version(), started,
                outputs={"checkpoint": str(out / "best.pt"), "last": str(out / "last.pt"),
                         "metrics_log": str(out / "metrics.jsonl"), "data": str(data_dir),
                         "best_epoch": result.best_epoch, "steps": result.step}).write(out)
    print(f"best val mAP {result.best_val_map:.4f} at epoch {result.best_epoch}; checkpoint {out / 'best.pt'}")
    return 0


# -- evaluate --------------------------------------------------------------


def cmd_evaluate(args) -> int:
    from .evaluation import baseline_maps, evaluate_model
    from .training import TrainConfig, load_checkpoint

    _, ckpt_raw = load_checkpoint(args.checkpoint)
    config = TrainConfig.from_dict(ckpt_raw["config"]) if ckpt_raw.get("config") else TrainConfig()
    task = args.task or config.task
    past_window = args.past_window if args.past_window is not None else config.past_window
    horizon = args.horizon if args.horizon is not None else config.horizon
    spec = TaskSpec(task, past_window, horizon)
    schema = build_task_schema(task)
    model, _ = load_checkpoint(args.checkpoint, schema)  # refuses on hash mismatch

    sequences = _load_dataset(args.data, task)
    if args.split == "val":
        train_seqs, eval_seqs = _split(sequences, config)
    else:
        train_seqs, eval_seqs = sequences, sequences
    if not eval_seqs:
        raise DataError("evaluation set is empty")
    horizons = args.horizons if args.horizons else sorted({0, horizon})
    started = _now()
    out = _out_dir(args.out)
    reports, probs, truth, clipset = evaluate_model(model, eval_seqs, spec, horizons, stride=args.stride)

    outputs = {"reports": [], "table": str(out / "table.csv")}
    baselines = {"marginal": {}, "persistence": {}}
    for h, report in sorted(reports.items()):
        path = out / f"report_hp{h}.json"
        report.save_json(path)
        outputs["reports"].append(str(path))
        for name, value in baseline_maps(train_seqs, clipset, truth, h, component_seed(config.seed, "baseline")).items():
            baselines[name][h] = value
    metrics.write_table([reports[h] for h in sorted(reports)], out / "table.csv")
    (out / "baselines.json").write_text(json.dumps(baselines, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    outputs["baselines"] = str(out / "baselines.json")
    if args.plots:
        from . import plotting

        for h in sorted(reports):
            p = plotting.pr_curves(probs[:, h], truth[:, h], spec.labels, out / f"pr_hp{h}.png", title=f"hp={h}")
            outputs.setdefault("figures", []).append(str(p))
        outputs["figures"].append(str(plotting.ap_vs_horizon(reports, out / "ap_vs_horizon.png", baselines)))
    RunManifest("evaluate", {"checkpoint": str(args.checkpoint), "data": str(args.data), "task": task,
                             "past_window": past_window, "horizon": horizon, "horizons": list(horizons),
                             "split": args.split, "stride": args.stride, "train_config": dataclasses.asdict(config)},
                config.seed, schema.digest(), code_version(), started, outputs=outputs).write(out)
    for h in sorted(reports):
        r = reports[h]
        print(f"hp={h}: mAP {r.mean_ap:.4f}  acc {r.mean_accuracy:.4f}  "
              f"(marginal {baselines['marginal'][h]:.4f}, persistence {baselines['persistence'][h]:.4f})")
    return 0


# -- predict ---------------------------------------------------------------


def prediction_rows(times, probs, names):
    for t, block in zip(times, probs):
        for k, row in enumerate(block):
            yield [int(t), k, int(t) + k] + [f"{v:.6f}" for v in row]


def cmd_predict(args) -> int:
    from .training import TrainConfig, load_checkpoint, predict_sequence

    model, ckpt = load_checkpoint(args.checkpoint)
    config = TrainConfig.from_dict(ckpt["config"]) if ckpt.get("config") else TrainConfig()
    past_window = args.past_window if args.past_window is not None else config.past_window
    horizon = args.horizon if args.horizon is not None else config.horizon
    features = read_feature_matrix(args.features)
    if features.shape[1] != model.backbone_dim:
        raise ShapeError(f"feature dim {features.shape[1]} does not match checkpoint backbone_dim {model.backbone_dim}")
    times, probs = predict_sequence(model, features, past_window, horizon)
    names = list(TaskSpec(config.task, past_window, horizon).labels)

    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["t", "offset", "target_t"] + names)
        writer.writerows(prediction_rows(times, probs, names))
    finally:
        if args.out:
            fh.close()
    return 0


# -- validate-schema -------------------------------------------------------


def cmd_validate_schema(args) -> int:
    if args.schema:
        schema = load_schema(args.schema)
        task = args.task or schema.task
    elif args.task:
        schema = build_task_schema(args.task) if args.task in TASKS else None
        task = args.task
    else:
        raise ConfigError("give --schema or --task")
    if schema is None:
        raise ConfigError(f"unknown task {task!r}")
    labels = TaskSpec(task).labels if task in TASKS else None
    problems = validate_schema(schema, labels)
    for p in problems:
        print(p)
    if problems:
        print(f"{len(problems)} violation(s)", file=sys.stderr)
        return ConfigError.exit_code
    print(f"ok: {task} schema, {len(schema.nodes)} nodes, {len(schema.edges)} edges, hash {schema.digest()[:12]}")
    return 0


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgt", description="Hypergraph-transformer detection and forecasting.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="simulate a labelled dataset")
    p.add_argument("--config", help="simulator YAML (default: built-in clipping/CVS workflow)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-sequences", type=int)
    p.add_argument("--length", type=int)
    p.add_argument("--p-obey", type=float)
    p.add_argument("--feature-noise", type=float)
    p.add_argument("--label-noise", type=float)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train", help="two-phase training")
    p.add_argument("--config", help="training YAML; may name the dataset under 'data'")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from (usually OUT/last.pt)")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=["transformer", "recurrent_cell"])
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--horizon", type=int)
    p.add_argument("--past-window", type=int)
    p.add_argument("--phase1-epochs", type=int)
    p.add_argument("--phase2-epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--horizons", type=int, nargs="+", help="offsets to report (default: 0 and the horizon)")
    p.add_argument("--split", choices=["val", "all"], default="val",
                   help="score the training run's validation split or every sequence")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--plots", action="store_true", help="also write PR-curve and mAP-vs-horizon PNGs")
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--horizon", type=int)
    p.add_argument("--past-window", type=int)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-offset probabilities for a feature file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--past-window", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate-schema", help="check a schema file or a built-in task schema")
    p.add_argument("--schema")
    p.add_argument("--task", choices=TASKS)
    p.set_defaults(func=cmd_validate_schema)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except HGTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
