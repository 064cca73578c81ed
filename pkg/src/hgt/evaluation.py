"""Model evaluation over labelled sequences, plus reference baselines."""

from __future__ import annotations

import numpy as np

from . import metrics, vocab
from .errors import DataError
from .training import ClipSet, predict_clips


def evaluate_model(model, sequences, task_spec, horizons=None, stride: int = 1, batch_size: int = 256):
    """Score every valid clip of ``sequences``.

    Returns (reports by horizon, probs, truth, clipset). Conditional AP for
    the clipping events before CVS achievement is included whenever the
    sequences carry a CVS-achieved column.
    """
    clipset = ClipSet(sequences, task_spec.labels, task_spec.past_window, task_spec.horizon, stride)
    if not len(clipset):
        raise DataError("no evaluation clip fits the past window and horizon")
    horizons = list(range(task_spec.horizon + 1)) if horizons is None else list(horizons)
    bad = [h for h in horizons if not 0 <= h <= task_spec.horizon]
    if bad:
        raise DataError(f"horizons {bad} outside 0..{task_spec.horizon}")
    probs, truth = predict_clips(model, clipset, batch_size=batch_size)
    events = [e for e in vocab.CLIPPING_EVENT_LABELS if e in task_spec.labels]
    conditions = clipset.condition_masks() if events else {}
    reports = metrics.evaluate(probs, truth, task_spec.labels, horizons, conditions, events or None)
    return reports, probs, truth, clipset


def baseline_maps(train_sequences, clipset: ClipSet, truth, horizon: int, seed: int = 0) -> dict:
    """mAP at ``horizon`` of the marginal-frequency and last-label baselines."""
    names = clipset.label_names
    rate = np.concatenate([s.select(names) for s in train_sequences]).mean(axis=0)
    future = truth[:, horizon]
    current = truth[:, 0]
    return {
        "marginal": metrics.marginal_baseline_map(rate, future, seed),
        "persistence": metrics.persistence_baseline_map(current, future, seed),
    }
