"""Evaluation: average precision, accuracy, conditional AP, label correlation.

AP is the uninterpolated mean of the precision at each positive, with
frames pooled per class. Tied scores keep their input order (stable sort),
so a constant scorer's AP depends on frame order; the baselines below
shuffle frames with a fixed seed before scoring.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import vocab


def average_precision(scores, labels) -> float:
    """Mean precision at the rank of each positive; NaN when there are no positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} must be equal-length 1-D")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] > 0
    n_pos = int(hits.sum())
    if n_pos == 0:
        return math.nan
    ranks = np.flatnonzero(hits) + 1
    precisions = np.arange(1, n_pos + 1) / ranks
    return math.fsum(precisions.tolist()) / n_pos


def precision_recall_curve(scores, labels):
    """Precision and recall after each rank (same ordering rule as AP)."""
    scores = np.asarray(scores, dtype=np.float64)
    hits = np.asarray(labels)[np.argsort(-scores, kind="stable")] > 0
    tp = np.cumsum(hits)
    n_pos = max(int(hits.sum()), 1)
    return tp / np.arange(1, len(hits) + 1), tp / n_pos


def accuracy_at_threshold(probs, labels, threshold: float = 0.5) -> float:
    """Fraction of frames with (prob >= threshold) == label. A prob equal to
    the threshold counts as positive."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape:
        raise ValueError("probs and labels must have equal shape")
    if probs.size == 0:
        return math.nan
    return float(np.mean((probs >= threshold) == (labels > 0)))


def conditional_ap(scores, labels, condition_mask) -> float:
    """AP over the frames where ``condition_mask`` is set; NaN if undefined."""
    mask = np.asarray(condition_mask, dtype=bool)
    scores = np.asarray(scores)
    if mask.shape != scores.shape:
        raise ValueError("condition_mask must match scores")
    if not mask.any():
        return math.nan
    return average_precision(scores[mask], np.asarray(labels)[mask])


def before_first(column) -> np.ndarray:
    """Mask of frames strictly before the first positive (all frames if none)."""
    column = np.asarray(column)
    hits = np.flatnonzero(column > 0)
    mask = np.ones(len(column), dtype=bool)
    if hits.size:
        mask[hits[0]:] = False
    return mask


def absence_of_cvs_mask(sequence) -> np.ndarray:
    """Frames of a sequence before CVS is first achieved."""
    return before_first(sequence.column(vocab.CVS_ACHIEVED))


# -- correlation diagnostic -------------------------------------------------


@dataclass
class CorrelationReport:
    edge: str
    nodes: tuple
    p_e: float
    p_v: float
    p_ev: float
    p_e_given_v: Optional[float]
    covariance: float
    sign: int
    band: float
    n_frames: int

    @property
    def significant(self) -> bool:
        return abs(self.covariance) > self.band


def _covariance(e, v):
    return float(np.mean(e * v) - np.mean(e) * np.mean(v))


def label_correlation(edge_label: str, node_labels, data, n_perm: int = 200, level: float = 0.99,
                      seed: int = 0) -> CorrelationReport:
    """Empirical co-occurrence of an edge label with a set of node labels.

    ``v`` is the event that all ``node_labels`` are on. ``band`` is the
    ``level`` quantile of |covariance| when each sequence's edge track is
    paired with another sequence's node track (a null that keeps temporal
    autocorrelation but breaks within-sequence dependence).
    """
    if isinstance(node_labels, str):
        node_labels = (node_labels,)
    node_labels = tuple(node_labels)
    e_tracks = [seq.column(edge_label).astype(np.float64) for seq in data]
    v_tracks = [seq.select(node_labels).all(axis=1).astype(np.float64) for seq in data]
    e = np.concatenate(e_tracks)
    v = np.concatenate(v_tracks)
    p_e, p_v = float(e.mean()), float(v.mean())
    p_ev = float(np.mean(e * v))
    p_e_given_v = p_ev / p_v if p_v > 0 else None
    cov = p_ev - p_e * p_v

    band = math.nan
    if len(data) >= 2 and n_perm > 0:
        gen = np.random.default_rng(seed)
        stats = []
        n = len(data)
        for _ in range(n_perm):
            perm = gen.permutation(n)
            while np.any(perm == np.arange(n)):
                perm = gen.permutation(n)
            pe, pv = [], []
            for i, j in enumerate(perm):
                length = min(len(e_tracks[i]), len(v_tracks[j]))
                pe.append(e_tracks[i][:length])
                pv.append(v_tracks[j][:length])
            stats.append(abs(_covariance(np.concatenate(pe), np.concatenate(pv))))
        band = float(np.quantile(stats, level))
    return CorrelationReport(edge_label, node_labels, p_e, p_v, p_ev, p_e_given_v, cov,
                             int(np.sign(cov)), band, int(e.size))


# -- reports ---------------------------------------------------------------


@dataclass
class EvalReport:
    horizon: int
    per_class_ap: dict
    mean_ap: float
    accuracy: dict
    mean_accuracy: float
    conditional: dict = field(default_factory=dict)
    n_frames: int = 0
    n_positives: dict = field(default_factory=dict)
    undefined: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, allow_nan=False, default=_json_default) + "\n",
                              encoding="utf-8")

    def rows(self) -> list:
        """Flat table rows: one per class, plus one per conditional metric."""
        out = []
        for name in self.accuracy:
            out.append({
                "horizon": self.horizon, "label": name, "condition": "",
                "ap": self.per_class_ap.get(name, ""), "accuracy": self.accuracy[name],
                "n_frames": self.n_frames, "n_positives": self.n_positives.get(name, 0),
            })
        for key, ap in self.conditional.items():
            event, condition = key.split("|", 1)
            out.append({
                "horizon": self.horizon, "label": event, "condition": condition,
                "ap": "" if ap is None else ap, "accuracy": "",
                "n_frames": "", "n_positives": "",
            })
        return out


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(type(obj).__name__)


TABLE_FIELDS = ("horizon", "label", "condition", "ap", "accuracy", "n_frames", "n_positives")


def write_table(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        writer.writeheader()
        for report in reports:
            writer.writerows(report.rows())


def read_table(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def mean_ap(per_class_ap: dict) -> float:
    values = [v for v in per_class_ap.values() if v is not None and not math.isnan(v)]
    return math.fsum(values) / len(values) if values else math.nan


def evaluate(probs, truth, names, offsets=None, conditions=None, events=None, threshold=0.5) -> dict:
    """Per-offset reports for (N, F+1, C) probabilities against labels.

    ``conditions`` maps a condition name to an (N, F+1) boolean mask over the
    target frames; conditional AP is reported for each label in ``events``
    (default: all labels) under each condition.
    """
    probs = np.asarray(probs, dtype=np.float64)
    truth = np.asarray(truth)
    if probs.shape != truth.shape or probs.ndim != 3:
        raise ValueError(f"probs {probs.shape} and truth {truth.shape} must be equal (N, F+1, C)")
    names = list(names)
    if offsets is None:
        offsets = range(probs.shape[1])
    conditions = conditions or {}
    events = list(events) if events is not None else names
    reports = {}
    for h in offsets:
        p, y = probs[:, h], truth[:, h]
        per_class, acc, n_pos, undefined = {}, {}, {}, []
        for c, name in enumerate(names):
            n_pos[name] = int(y[:, c].sum())
            acc[name] = accuracy_at_threshold(p[:, c], y[:, c], threshold)
            ap = average_precision(p[:, c], y[:, c])
            if math.isnan(ap):
                undefined.append(name)
            else:
                per_class[name] = ap
        conditional = {}
        for cond_name, mask in conditions.items():
            m = np.asarray(mask, dtype=bool)[:, h]
            for name in events:
                c = names.index(name)
                ap = conditional_ap(p[:, c], y[:, c], m)
                conditional[f"{name}|{cond_name}"] = None if math.isnan(ap) else ap
        reports[h] = EvalReport(
            horizon=int(h), per_class_ap=per_class, mean_ap=mean_ap(per_class), accuracy=acc,
            mean_accuracy=float(np.mean(list(acc.values()))) if acc else math.nan,
            conditional=conditional, n_frames=int(p.shape[0]), n_positives=n_pos, undefined=undefined,
        )
    return reports


# -- reference scorers -----------------------------------------------------


def shuffled_ap(scores, labels, seed: int = 0) -> float:
    """AP after a seeded shuffle, i.e. with ties broken at random."""
    order = np.random.default_rng(seed).permutation(len(scores))
    return average_precision(np.asarray(scores)[order], np.asarray(labels)[order])


def marginal_baseline_map(train_rate, truth, seed: int = 0) -> float:
    """mAP of scoring every frame with the training-set class frequency."""
    truth = np.asarray(truth)
    aps = {}
    for c in range(truth.shape[1]):
        scores = np.full(truth.shape[0], float(np.asarray(train_rate)[c]))
        aps[c] = shuffled_ap(scores, truth[:, c], seed)
    return mean_ap(aps)


def persistence_baseline_map(current, future, seed: int = 0) -> float:
    """mAP of predicting the future label to equal the current one."""
    current, future = np.asarray(current), np.asarray(future)
    aps = {c: shuffled_ap(current[:, c].astype(float), future[:, c], seed) for c in range(future.shape[1])}
    return mean_ap(aps)
