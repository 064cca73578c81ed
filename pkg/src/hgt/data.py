"""Labelled frame sequences and the normalized on-disk dataset layout.

A dataset directory holds::

    vocabulary.txt          one class name per line; class id = line number
    annotations/<id>.txt    one row per 1-FPS frame: "<time_index>\\t<id> <id> ..."
    features/<id>.feat      optional precomputed frame features (see backbone)

Triplet datasets list the 100 triplet classes in ``vocabulary.txt`` and
annotate triplet ids only; the loader derives the tool/action/target
columns. CVS datasets list the four CVS labels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import vocab
from .backbone import FrameFeature, read_feature_matrix, save_precomputed
from .errors import DataError

log = logging.getLogger(__name__)

VOCAB_FILE = "vocabulary.txt"
ANNOTATION_DIR = "annotations"
FEATURE_DIR = "features"


@dataclass
class LabeledSequence:
    """One video clip: (T, D) features and (T, C) binary labels at 1 FPS."""

    id: str
    labels: np.ndarray
    vocabulary: tuple
    features: Optional[np.ndarray] = None
    start_time: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        self.vocabulary = tuple(self.vocabulary)
        if self.labels.ndim != 2 or self.labels.shape[1] != len(self.vocabulary):
            raise DataError(f"{self.id}: labels shape {self.labels.shape} does not match "
                            f"vocabulary of {len(self.vocabulary)}")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise DataError(f"{self.id}: duplicate vocabulary names")
        if self.labels.size and self.labels.max() > 1:
            raise DataError(f"{self.id}: labels must be 0/1")
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float32)
            if self.features.shape[0] != self.labels.shape[0]:
                raise DataError(f"{self.id}: {self.features.shape[0]} feature rows but "
                                f"{self.labels.shape[0]} label rows")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def frames(self) -> list:
        if self.features is None:
            return []
        return [FrameFeature(self.features[i], self.start_time + i) for i in range(len(self))]

    def column(self, name: str) -> np.ndarray:
        return self.labels[:, self.vocabulary.index(name)]

    def select(self, names) -> np.ndarray:
        """Label matrix restricted to ``names`` in that order."""
        missing = [n for n in names if n not in self.vocabulary]
        if missing:
            raise DataError(f"{self.id}: labels {missing} not in vocabulary")
        return self.labels[:, [self.vocabulary.index(n) for n in names]]


# -- raw layout ------------------------------------------------------------


def _read_vocabulary(directory: Path) -> tuple:
    path = directory / VOCAB_FILE
    if not path.exists():
        raise DataError(f"{directory}: missing {VOCAB_FILE}")
    names = tuple(line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate class names")
    return names


def _read_rows(path: Path, n_classes: int):
    """Parse an annotation table into (start_time, list of active-id lists)."""
    rows = []
    start = None
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        tokens = line.split()
        try:
            t = int(tokens[0])
            ids = [int(tok) for tok in tokens[1:]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed row {line!r}") from exc
        if start is None:
            start = t
        expected = start + len(rows)
        if t != expected:
            raise DataError(f"{path}:{lineno}: time index {t} off the 1 FPS grid (expected {expected})")
        for k in ids:
            if not 0 <= k < n_classes:
                raise DataError(f"{path}:{lineno}: unknown class id {k}")
        rows.append(ids)
    return (start or 0), rows


def _write_rows(path: Path, labels: np.ndarray, start_time: int = 0) -> None:
    lines = []
    for i, row in enumerate(labels):
        ids = " ".join(str(k) for k in np.flatnonzero(row))
        lines.append(f"{start_time + i}\t{ids}")
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _sequence_files(directory: Path):
    ann = directory / ANNOTATION_DIR
    if not ann.is_dir():
        return []
    return sorted(ann.glob("*.txt"))


def _load_features(directory: Path, seq_id: str, n_rows: int):
    path = directory / FEATURE_DIR / f"{seq_id}.feat"
    if not path.exists():
        return None
    matrix = read_feature_matrix(path)
    if matrix.shape[0] != n_rows:
        raise DataError(f"{path}: {matrix.shape[0]} frames but annotation has {n_rows} rows")
    return matrix


def load_annotations(directory) -> list:
    """Load a dataset in the generic layout; columns follow ``vocabulary.txt``."""
    directory = Path(directory)
    files = _sequence_files(directory)
    if not files:
        log.warning("no annotation files under %s", directory)
        return []
    names = _read_vocabulary(directory)
    out = []
    for path in files:
        start, rows = _read_rows(path, len(names))
        labels = np.zeros((len(rows), len(names)), dtype=np.uint8)
        for i, ids in enumerate(rows):
            labels[i, ids] = 1
        seq_id = path.stem
        out.append(LabeledSequence(seq_id, labels, names, _load_features(directory, seq_id, len(rows)), start))
    return out


def write_dataset(directory, sequences, vocabulary=None) -> None:
    """Write sequences in the generic layout (inverse of load_annotations)."""
    directory = Path(directory)
    if not sequences and vocabulary is None:
        raise DataError("nothing to write")
    names = tuple(vocabulary or sequences[0].vocabulary)
    (directory / ANNOTATION_DIR).mkdir(parents=True, exist_ok=True)
    (directory / VOCAB_FILE).write_text("\n".join(names) + "\n", encoding="utf-8")
    for seq in sequences:
        labels = seq.select(names)
        _write_rows(directory / ANNOTATION_DIR / f"{seq.id}.txt", labels, seq.start_time)
        if seq.features is not None:
            (directory / FEATURE_DIR).mkdir(exist_ok=True)
            save_precomputed(directory / FEATURE_DIR / f"{seq.id}.feat", seq.features)


# -- task adapters ---------------------------------------------------------


def load_triplet_annotations(directory) -> list:
    """CholecT45-style triplet annotations -> 131-column sequences.

    Columns are tools, actions, targets, then the 100 triplets. A component
    column is on whenever any active triplet uses that component.
    """
    directory = Path(directory)
    files = _sequence_files(directory)
    if not files:
        log.warning("no annotation files under %s", directory)
        return []
    names = _read_vocabulary(directory)
    if names != vocab.TRIPLET_NAMES:
        raise DataError(f"{directory / VOCAB_FILE}: does not match the 100-class triplet table")
    cols = {n: i for i, n in enumerate(vocab.TRIPLET_LABELS)}
    expand = [
        [cols[tool], cols[action], cols[target], cols[vocab.triplet_name((tool, action, target))]]
        for tool, action, target in vocab.TRIPLET_CLASSES
    ]
    out = []
    for path in files:
        start, rows = _read_rows(path, len(names))
        labels = np.zeros((len(rows), len(vocab.TRIPLET_LABELS)), dtype=np.uint8)
        for i, ids in enumerate(rows):
            for k in ids:
                labels[i, expand[k]] = 1
        seq_id = path.stem
        out.append(LabeledSequence(seq_id, labels, vocab.TRIPLET_LABELS,
                                   _load_features(directory, seq_id, len(rows)), start))
    return out


def write_triplet_annotations(directory, sequences) -> None:
    """Write triplet columns only; components are re-derived on load."""
    directory = Path(directory)
    (directory / ANNOTATION_DIR).mkdir(parents=True, exist_ok=True)
    (directory / VOCAB_FILE).write_text("\n".join(vocab.TRIPLET_NAMES) + "\n", encoding="utf-8")
    for seq in sequences:
        _write_rows(directory / ANNOTATION_DIR / f"{seq.id}.txt", seq.select(vocab.TRIPLET_NAMES), seq.start_time)
        if seq.features is not None:
            (directory / FEATURE_DIR).mkdir(exist_ok=True)
            save_precomputed(directory / FEATURE_DIR / f"{seq.id}.feat", seq.features)


def load_cvs_annotations(directory) -> list:
    """Cholec80-CVS-style criterion annotations -> 4-column sequences.

    Frames where CVS-achieved is on without all three criteria are logged,
    not corrected (see :func:`cvs_inconsistencies`).
    """
    seqs = load_annotations(directory)
    out = []
    for seq in seqs:
        if set(seq.vocabulary) != set(vocab.CVS_LABELS):
            raise DataError(f"{directory}: vocabulary {seq.vocabulary} is not the CVS label set")
        out.append(LabeledSequence(seq.id, seq.select(vocab.CVS_LABELS), vocab.CVS_LABELS,
                                   seq.features, seq.start_time))
    bad = cvs_inconsistencies(out)
    if bad:
        log.warning("CVS-achieved without all criteria in %d frame(s)", sum(len(v) for v in bad.values()))
    return out


def cvs_inconsistencies(sequences) -> dict:
    """Sequence id -> time indices where CVS-achieved=1 but some criterion is 0."""
    out = {}
    for seq in sequences:
        achieved = seq.column(vocab.CVS_ACHIEVED).astype(bool)
        criteria = seq.select(vocab.CVS_CRITERIA).all(axis=1)
        rows = np.flatnonzero(achieved & ~criteria)
        if rows.size:
            out[seq.id] = [int(seq.start_time + r) for r in rows]
    return out


def label_frequencies(sequences) -> dict:
    """Positive frame count per label name, pooled over sequences."""
    if not sequences:
        return {}
    names = sequences[0].vocabulary
    total = np.zeros(len(names), dtype=np.int64)
    for seq in sequences:
        total += seq.select(names).sum(axis=0, dtype=np.int64)
    return dict(zip(names, (int(c) for c in total)))


def align_sequences(triplet_seqs, cvs_seqs):
    """Join triplet and CVS annotations on (sequence id, time index).

    Returns (merged sequences over the union vocabulary, report) where the
    report lists unmatched sequence ids and per-sequence unmatched frame
    counts. Only frames present in both sources are kept.
    """
    cvs_by_id = {s.id: s for s in cvs_seqs}
    merged = []
    report = {"unmatched_sequences": [], "unmatched_frames": {}}
    for tseq in triplet_seqs:
        cseq = cvs_by_id.pop(tseq.id, None)
        if cseq is None:
            report["unmatched_sequences"].append(tseq.id)
            continue
        t_times = np.arange(len(tseq)) + tseq.start_time
        c_times = np.arange(len(cseq)) + cseq.start_time
        lo, hi = max(t_times[0], c_times[0]), min(t_times[-1], c_times[-1])
        if hi < lo:
            report["unmatched_frames"][tseq.id] = len(tseq) + len(cseq)
            continue
        ti = slice(lo - tseq.start_time, hi - tseq.start_time + 1)
        ci = slice(lo - cseq.start_time, hi - cseq.start_time + 1)
        n_drop = len(tseq) + len(cseq) - 2 * (hi - lo + 1)
        if n_drop:
            report["unmatched_frames"][tseq.id] = int(n_drop)
        names = tseq.vocabulary + tuple(n for n in cseq.vocabulary if n not in tseq.vocabulary)
        labels = np.concatenate([tseq.labels[ti], cseq.select(names[len(tseq.vocabulary):])[ci]], axis=1)
        feats = tseq.features[ti] if tseq.features is not None else None
        merged.append(LabeledSequence(tseq.id, labels, names, feats, int(lo)))
    report["unmatched_sequences"] += sorted(cvs_by_id)
    return merged, report


def split(data, train_fraction: float = 0.8, seed: int = 0):
    """Sequence-level train/validation split, deterministic given ``seed``."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    if len(data) < 2:
        raise DataError("need at least 2 sequences to split")
    order = np.random.default_rng(seed).permutation(len(data))
    n_train = int(round(train_fraction * len(data)))
    n_train = min(max(n_train, 1), len(data) - 1)
    train = [data[i] for i in sorted(order[:n_train])]
    val = [data[i] for i in sorted(order[n_train:])]
    return train, val
