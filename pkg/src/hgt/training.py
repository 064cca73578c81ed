"""Two-phase training.

Phase 1 fits node-bound labels only, with every edge-side parameter frozen.
Phase 2 fits all labels jointly. Each epoch draws clips with replacement,
weighting clips that contain rare positive classes more heavily.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import pickle
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import metrics
from .errors import ConfigError, DataError, NumericError, ShapeError
from .model import HGT, VARIANTS, PredictionBatch
from .schema import GraphSchema, TaskSpec, parse, serialize, validate_schema
from .seeding import component_seed, seed_torch

log = logging.getLogger(__name__)

EPS = 1e-7
CHECKPOINT_FORMAT = "hgt-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    task: str = "clipping_with_cvs_prior"
    past_window: int = 4
    horizon: int = 4
    phase1_epochs: int = 3
    phase2_epochs: int = 12
    learning_rate: float = 1e-3
    batch_size: int = 64
    resample_target: float = 0.2
    resample_cap: float = 20.0
    seed: int = 0
    variant: str = "transformer"
    hidden_dim: int = 128
    dropout: float = 0.1
    train_fraction: float = 0.8
    patience: int = 10
    focal_gamma: float = 0.0
    freeze_edges_in_phase1: bool = True
    clip_stride: int = 1
    val_stride: int = 1
    max_steps_per_epoch: Optional[int] = None

    def __post_init__(self):
        TaskSpec(self.task, self.past_window, self.horizon)
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be > 0 and batch_size >= 1")
        if not 0 < self.resample_target < 1:
            raise ConfigError("resample_target must lie in (0, 1)")
        if self.resample_cap < 1:
            raise ConfigError("resample_cap must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be even and >= 2")
        if self.clip_stride < 1 or self.val_stride < 1:
            raise ConfigError("strides must be >= 1")

    @property
    def task_spec(self) -> TaskSpec:
        return TaskSpec(self.task, self.past_window, self.horizon)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown training option(s) {sorted(unknown)}")
        return cls(**raw)


# -- clips -----------------------------------------------------------------


@dataclass
class ClipIndex:
    """A training window: frames t-P..t of one sequence, targets t..t+F."""

    sequence_id: str
    start: int
    positives: np.ndarray = field(repr=False)
    seq_pos: int = 0


class ClipSet:
    """Sequences as tensors plus the list of valid clip windows."""

    def __init__(self, sequences, label_names, past_window: int, horizon: int, stride: int = 1):
        self.sequences = list(sequences)
        self.label_names = tuple(label_names)
        self.past_window = past_window
        self.horizon = horizon
        self.features = []
        self.labels = []
        self.index = []
        for pos, seq in enumerate(self.sequences):
            if seq.features is None:
                raise DataError(f"sequence {seq.id} has no features")
            feats = torch.from_numpy(np.ascontiguousarray(seq.features, dtype=np.float32))
            labels = seq.select(self.label_names).astype(np.float32)
            self.features.append(feats)
            self.labels.append(torch.from_numpy(labels))
            for t in range(past_window, len(seq) - horizon, stride):
                window = labels[t:t + horizon + 1]
                self.index.append(ClipIndex(seq.id, t, window.max(axis=0) > 0, pos))

    def __len__(self):
        return len(self.index)

    def batch(self, clips, dtype=torch.float32):
        p, f = self.past_window, self.horizon
        frames = torch.stack([self.features[c.seq_pos][c.start - p:c.start + 1] for c in clips])
        truth = torch.stack([self.labels[c.seq_pos][c.start:c.start + f + 1] for c in clips])
        return frames.to(dtype), truth.to(dtype)

    def condition_masks(self, clips=None) -> dict:
        """Target-frame masks for conditional metrics (currently: before first CVS)."""
        from .vocab import CVS_ACHIEVED

        clips = self.index if clips is None else clips
        if not all(CVS_ACHIEVED in s.vocabulary for s in self.sequences):
            return {}
        before = [metrics.absence_of_cvs_mask(s) for s in self.sequences]
        mask = np.stack([before[c.seq_pos][c.start:c.start + self.horizon + 1] for c in clips])
        return {"no_cvs_yet": mask}


# -- loss ------------------------------------------------------------------


def bce_loss(pred, truth, columns=None, eps: float = EPS, gamma: float = 0.0) -> torch.Tensor:
    """Mean binary cross-entropy over offsets and label columns.

    ``pred`` holds probabilities (tensor or PredictionBatch) and is clamped to
    [eps, 1 - eps]. ``columns`` restricts the mean to a subset of label
    columns. ``gamma`` > 0 adds the focal modulation (1 - p_t) ** gamma.
    """
    probs = pred.probs if isinstance(pred, PredictionBatch) else pred
    truth = torch.as_tensor(truth, dtype=probs.dtype, device=probs.device)
    if probs.shape != truth.shape:
        raise ShapeError(f"prediction shape {tuple(probs.shape)} != truth shape {tuple(truth.shape)}")
    if columns is not None:
        idx = torch.as_tensor(list(columns), dtype=torch.long, device=probs.device)
        probs = probs.index_select(-1, idx)
        truth = truth.index_select(-1, idx)
    p = probs.clamp(eps, 1.0 - eps)
    loss = -(truth * torch.log(p) + (1.0 - truth) * torch.log1p(-p))
    if gamma:
        p_t = truth * p + (1.0 - truth) * (1.0 - p)
        loss = loss * (1.0 - p_t) ** gamma
    return loss.mean()


# -- resampling ------------------------------------------------------------


def clip_weights(index, target: float, cap: float = 20.0) -> np.ndarray:
    """Sampling weight per clip.

    A class with clip frequency f below ``target`` gets weight
    target(1-f) / (f(1-target)), the odds ratio that lifts it to ``target``
    on its own, clipped to [1, cap]. A clip takes the largest weight among
    its positive classes; clips without positives weigh 1.
    """
    pos = np.stack([c.positives for c in index]).astype(bool)
    freq = pos.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        w_class = np.where(freq > 0, target * (1 - freq) / (freq * (1 - target)), 1.0)
    w_class = np.clip(w_class, 1.0, cap)
    weights = np.where(pos, w_class, 1.0).max(axis=1)
    return weights


def resample_epoch(index, target: float, seed: int, cap: float = 20.0) -> list:
    """Draw len(index) clips with replacement using :func:`clip_weights`."""
    if not index:
        raise DataError("cannot resample an empty clip index")
    gen = np.random.default_rng(seed)
    pos = np.stack([c.positives for c in index])
    if not pos.any():
        log.warning("no positive labels in any clip; sampling uniformly")
        weights = np.ones(len(index))
    else:
        weights = clip_weights(index, target, cap)
    draws = gen.choice(len(index), size=len(index), replace=True, p=weights / weights.sum())
    return [index[i] for i in draws]


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(path, model: HGT, phase: int, step: int, epoch: int, config: Optional[TrainConfig] = None,
                    optimizer_state=None, extra=None) -> None:
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "schema_hash": model.schema.digest(),
        "schema": serialize(model.schema),
        "variant": model.variant,
        "hparams": model.hparams,
        "state_dict": model.state_dict(),
        "phase": phase,
        "step": step,
        "epoch": epoch,
        "config": asdict(config) if config is not None else None,
        "optimizer": optimizer_state,
        "extra": extra or {},
    }, path)


def load_checkpoint(path, schema: Optional[GraphSchema] = None):
    """Rebuild the model from a checkpoint; returns (model, checkpoint dict).

    Refuses (ConfigError) when ``schema`` is given and its hash differs from
    the one the checkpoint was trained with.
    """
    try:
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not an HGT checkpoint")
    if ckpt["version"] != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {ckpt['version']}")
    stored = parse(ckpt["schema"])
    if stored.digest() != ckpt["schema_hash"]:
        raise DataError(f"{path}: stored schema does not match its hash")
    if schema is not None and schema.digest() != ckpt["schema_hash"]:
        raise ConfigError(f"checkpoint schema hash {ckpt['schema_hash'][:12]} does not match "
                          f"schema {schema.task} ({schema.digest()[:12]})")
    model = HGT(stored, **ckpt["hparams"])
    model.load_state_dict(ckpt["state_dict"])
    model.eval()
    return model, ckpt


# -- inference helpers -----------------------------------------------------


@torch.no_grad()
def predict_clips(model: HGT, clipset: ClipSet, clips=None, batch_size: int = 256):
    """(probs, truth) arrays of shape (N, F+1, C) for the given clips."""
    clips = clipset.index if clips is None else clips
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    probs, truth = [], []
    for i in range(0, len(clips), batch_size):
        frames, y = clipset.batch(clips[i:i + batch_size], dtype)
        probs.append(model(frames, clipset.horizon, clipset.past_window).numpy())
        truth.append(y.numpy())
    model.train(was_training)
    if not probs:
        c = len(clipset.label_names)
        return np.zeros((0, clipset.horizon + 1, c)), np.zeros((0, clipset.horizon + 1, c))
    return np.concatenate(probs), np.concatenate(truth)


@torch.no_grad()
def predict_sequence(model: HGT, features, past_window: int, horizon: int, batch_size: int = 256):
    """Slide over a (T, D) feature matrix; returns (times, probs (n, F+1, C)).

    One prediction per time t with a full past window (t >= P).
    """
    feats = torch.as_tensor(np.asarray(features), dtype=next(model.parameters()).dtype)
    if feats.ndim != 2 or feats.shape[1] != model.backbone_dim:
        raise ShapeError(f"features must be (T, {model.backbone_dim}), got {tuple(feats.shape)}")
    if feats.shape[0] < past_window + 1:
        raise DataError(f"sequence of {feats.shape[0]} frames is shorter than past window + 1 = {past_window + 1}")
    model.eval()
    times = list(range(past_window, feats.shape[0]))
    out = []
    for i in range(0, len(times), batch_size):
        chunk = times[i:i + batch_size]
        frames = torch.stack([feats[t - past_window:t + 1] for t in chunk])
        out.append(model(frames, horizon, past_window).numpy())
    return np.asarray(times), np.concatenate(out)


def validation_metrics(model: HGT, clipset: ClipSet, batch_size: int = 256, clips=None) -> dict:
    probs, truth = predict_clips(model, clipset, clips, batch_size)
    if probs.shape[0] == 0:
        return {"val_loss": math.nan, "val_mAP": math.nan, "val_acc": math.nan}
    loss = float(bce_loss(torch.from_numpy(probs), torch.from_numpy(truth)))
    reports = metrics.evaluate(probs, truth, clipset.label_names)
    maps = [r.mean_ap for r in reports.values() if not math.isnan(r.mean_ap)]
    accs = [r.mean_accuracy for r in reports.values()]
    return {
        "val_loss": loss,
        "val_mAP": float(np.mean(maps)) if maps else math.nan,
        "val_acc": float(np.mean(accs)),
    }


# -- training loop ---------------------------------------------------------


@dataclass
class TrainResult:
    model: HGT
    log: list
    best_epoch: int
    best_val_map: float
    step: int
    checkpoint: Optional[Path] = None


def build_model(config: TrainConfig, schema: GraphSchema, backbone_dim: int) -> HGT:
    seed_torch(config.seed, "model.init")
    return HGT(schema, backbone_dim, hidden_dim=config.hidden_dim, variant=config.variant, dropout=config.dropout)


def _grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def train(config: TrainConfig, train_data, val_data, schema: GraphSchema, out_dir=None,
          resume=None, on_step: Optional[Callable] = None, model: Optional[HGT] = None) -> TrainResult:
    """Run phase 1 then phase 2 and keep the best validation-mAP weights.

    ``train_data``/``val_data`` are lists of LabeledSequence. When ``out_dir``
    is given, ``metrics.jsonl``, ``last.pt`` and ``best.pt`` are written
    there. ``on_step(phase, step, model, loss)`` runs after each backward
    pass, before the optimizer update.
    """
    if not train_data:
        raise DataError("empty training set")
    train_ids = {s.id for s in train_data}
    leaked = train_ids & {s.id for s in val_data}
    if leaked:
        raise DataError(f"sequences in both splits: {sorted(leaked)[:5]}")
    labels = config.task_spec.labels
    problems = validate_schema(schema, labels)
    if problems:
        raise ConfigError(f"schema does not fit task {config.task}: {problems}")

    train_set = ClipSet(train_data, labels, config.past_window, config.horizon, config.clip_stride)
    val_set = ClipSet(val_data, labels, config.past_window, config.horizon, config.val_stride) if val_data else None
    if not len(train_set):
        raise DataError("no training clip fits the past window and horizon")
    backbone_dim = train_set.features[0].shape[1]

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.jsonl"

    if model is None:
        model = build_model(config, schema, backbone_dim)
    start_epoch, step, history = 0, 0, []
    opt_state = None
    best = {"val_mAP": -math.inf, "epoch": 0, "state": None}
    if resume is not None:
        model, ckpt = load_checkpoint(resume, schema)
        start_epoch, step = ckpt["epoch"], ckpt["step"]
        opt_state = ckpt.get("optimizer")
        extra = ckpt.get("extra") or {}
        history = list(extra.get("log", []))
        if "best_val_map" in extra:
            best = {"val_mAP": extra["best_val_map"], "epoch": extra["best_epoch"], "state": None}
            best_path = out_dir / "best.pt" if out_dir is not None else None
            if best_path is not None and best_path.exists():
                best["state"] = torch.load(best_path, map_location="cpu", weights_only=False)["state_dict"]
    elif log_path is not None and log_path.exists():
        log_path.unlink()

    node_cols = schema.node_label_columns()
    edge_params = set(model.edge_side_parameters())
    total_epochs = config.phase1_epochs + config.phase2_epochs
    stale = 0

    def phase_of(epoch):
        return 1 if epoch < config.phase1_epochs else 2

    optimizer = scheduler = None
    current_phase = None
    for epoch in range(start_epoch, total_epochs):
        phase = phase_of(epoch)
        if phase != current_phase:
            freeze = phase == 1 and config.freeze_edges_in_phase1
            for p in model.parameters():
                p.requires_grad_(not (freeze and p in edge_params))
            trainable = [p for p in model.parameters() if p.requires_grad]
            optimizer = torch.optim.Adam(trainable, lr=config.learning_rate)
            phase_epochs = config.phase1_epochs if phase == 1 else config.phase2_epochs
            steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
            if config.max_steps_per_epoch:
                steps_per_epoch = min(steps_per_epoch, config.max_steps_per_epoch)
            scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, phase_epochs * steps_per_epoch))
            if opt_state is not None and opt_state.get("phase") == phase:
                optimizer.load_state_dict(opt_state["optimizer"])
                scheduler.load_state_dict(opt_state["scheduler"])
            opt_state = None
            current_phase = phase

        seed_torch(config.seed, f"train.epoch{epoch}")
        sample = resample_epoch(train_set.index, config.resample_target,
                                component_seed(config.seed, f"resample.epoch{epoch}"), config.resample_cap)
        columns = node_cols if phase == 1 else None
        model.train()
        losses = []
        n_batches = math.ceil(len(sample) / config.batch_size)
        if config.max_steps_per_epoch:
            n_batches = min(n_batches, config.max_steps_per_epoch)
        for b in range(n_batches):
            clips = sample[b * config.batch_size:(b + 1) * config.batch_size]
            frames, truth = train_set.batch(clips, next(model.parameters()).dtype)
            probs = model(frames, config.horizon, config.past_window)
            loss = bce_loss(probs, truth, columns, gamma=config.focal_gamma)
            if not torch.isfinite(loss):
                raise NumericError(f"loss is {loss.item()} at phase {phase}, epoch {epoch + 1}, step {step + 1}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if on_step is not None:
                on_step(phase, step + 1, model, loss.item())
            optimizer.step()
            scheduler.step()
            step += 1
            losses.append(loss.item())

        record = {"epoch": epoch + 1, "phase": phase, "step": step, "train_loss": float(np.mean(losses))}
        if val_set is not None and len(val_set):
            record.update(validation_metrics(model, val_set))
        else:
            record.update({"val_loss": None, "val_mAP": None, "val_acc": None})
        history.append(record)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record) + "\n")
        log.info("epoch %d phase %d: %s", epoch + 1, phase, record)

        score = record["val_mAP"]
        # phase-1 weights only count as "best" when there is no phase 2
        eligible = phase == 2 or config.phase2_epochs == 0
        if eligible and score is not None and not math.isnan(score) and score > best["val_mAP"]:
            best = {"val_mAP": score, "epoch": epoch + 1, "state": copy.deepcopy(model.state_dict())}
            stale = 0
            if out_dir is not None:
                save_checkpoint(out_dir / "best.pt", model, phase, step, epoch + 1, config)
        elif eligible:
            stale += 1

        if out_dir is not None:
            opt_payload = {"phase": phase, "optimizer": optimizer.state_dict(), "scheduler": scheduler.state_dict()}
            save_checkpoint(out_dir / "last.pt", model, phase, step, epoch + 1, config, opt_payload,
                            extra={"log": history, "best_val_map": best["val_mAP"], "best_epoch": best["epoch"]})
        if phase == 2 and stale >= config.patience:
            log.info("early stop after %d stale epochs", stale)
            break

    for p in model.parameters():
        p.requires_grad_(True)
    if best["state"] is not None:
        model.load_state_dict(best["state"])
    model.eval()
    ckpt_path = None
    if out_dir is not None:
        ckpt_path = out_dir / "best.pt"
        if best["state"] is None:
            save_checkpoint(ckpt_path, model, phase_of(max(total_epochs - 1, 0)), step, total_epochs, config)
    return TrainResult(model, history, best["epoch"], best["val_mAP"], step, ckpt_path)
