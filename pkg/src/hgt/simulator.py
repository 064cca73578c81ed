"""Synthetic surgical-workflow generator.

The workflow is the product of independent Markov components (by default a
CVS-progression chain and a clipping chain) stepped once per second. Each
component state switches labels on with given probabilities. Precedence
rules couple the components: in a sequence that obeys a rule (probability
``p_obey``), a state that can emit one of the rule's ``after`` labels is only
entered from a frame where the ``before`` label is on, and ``after`` labels
are never emitted before the first ``before`` frame. With ``p_obey = 0`` the
components stay independent.

Frame features are a fixed random affine image of the joint state one-hot
plus Gaussian noise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import vocab
from .data import LabeledSequence
from .errors import ConfigError
from .seeding import rng as component_rng


def stationary_distribution(transitions: np.ndarray) -> np.ndarray:
    """Left eigenvector of a row-stochastic matrix for eigenvalue 1."""
    n = transitions.shape[0]
    a = np.vstack([transitions.T - np.eye(n), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass
class Machine:
    states: list
    initial: list
    transitions: list
    emissions: dict = field(default_factory=dict)

    def initial_distribution(self) -> np.ndarray:
        if isinstance(self.initial, str):
            if self.initial != "stationary":
                raise ConfigError(f"initial must be a probability list or 'stationary', got {self.initial!r}")
            return stationary_distribution(np.asarray(self.transitions, dtype=float))
        return np.asarray(self.initial, dtype=float)

    def check(self, where="machine"):
        n = len(self.states)
        if n == 0:
            raise ConfigError(f"{where}: no states")
        trans = np.asarray(self.transitions, dtype=float)
        if trans.shape != (n, n):
            raise ConfigError(f"{where}: transitions do not match {n} states")
        init = self.initial_distribution()
        if init.shape != (n,):
            raise ConfigError(f"{where}: initial does not match {n} states")
        for name, arr in (("initial", init), ("transitions", trans)):
            if (arr < 0).any() or (arr > 1).any():
                raise ConfigError(f"{where}: {name} probabilities must lie in [0, 1]")
        if not np.isclose(init.sum(), 1.0, atol=1e-9):
            raise ConfigError(f"{where}: initial distribution sums to {init.sum()}")
        bad = np.flatnonzero(~np.isclose(trans.sum(axis=1), 1.0, atol=1e-9))
        if bad.size:
            raise ConfigError(f"{where}: transition row for {self.states[bad[0]]!r} sums to "
                              f"{trans[bad[0]].sum()}")
        for state, em in self.emissions.items():
            if state not in self.states:
                raise ConfigError(f"{where}: emissions for unknown state {state!r}")
            for label, p in em.items():
                if not 0 <= p <= 1:
                    raise ConfigError(f"{where}: emission {state}/{label} = {p} outside [0, 1]")


@dataclass
class PrecedenceRule:
    before: str
    after: list
    p_obey: float = 1.0


@dataclass
class WorkflowSimConfig:
    labels: list
    components: list
    precedence: list = field(default_factory=list)
    label_noise: float = 0.0
    feature_dim: int = 16
    feature_noise: float = 1.0
    length: int = 120
    n_sequences: int = 10
    seed: int = 0

    def check(self):
        if len(set(self.labels)) != len(self.labels):
            raise ConfigError("simulator labels must be unique")
        for i, m in enumerate(self.components):
            m.check(f"components[{i}]")
            for em in m.emissions.values():
                for label in em:
                    if label not in self.labels:
                        raise ConfigError(f"components[{i}]: emits unknown label {label!r}")
        for rule in self.precedence:
            if not 0 <= rule.p_obey <= 1:
                raise ConfigError("p_obey must lie in [0, 1]")
            for label in [rule.before, *rule.after]:
                if label not in self.labels:
                    raise ConfigError(f"precedence rule names unknown label {label!r}")
        if not 0 <= self.label_noise <= 1:
            raise ConfigError("label_noise must lie in [0, 1]")
        if self.feature_noise < 0 or self.feature_dim < 1:
            raise ConfigError("feature_noise must be >= 0 and feature_dim >= 1")
        if self.length < 1 or self.n_sequences < 0:
            raise ConfigError("length must be >= 1 and n_sequences >= 0")


# -- joint machine ---------------------------------------------------------


class JointMachine:
    """Product of the configured components, flattened to one chain."""

    def __init__(self, config: WorkflowSimConfig):
        self.config = config
        comps = config.components
        self.state_tuples = list(itertools.product(*(range(len(m.states)) for m in comps)))
        self.names = ["|".join(m.states[i] for m, i in zip(comps, t)) for t in self.state_tuples]
        init = np.ones(1)
        trans = np.ones((1, 1))
        for m in comps:
            init = np.kron(init, m.initial_distribution())
            trans = np.kron(trans, np.asarray(m.transitions, dtype=float))
        self.initial = init
        self.transitions = trans
        # emit[s, k] = P(label k on | joint state s); components emit independently.
        n_labels = len(config.labels)
        off = np.ones((len(self.state_tuples), n_labels))
        for s, t in enumerate(self.state_tuples):
            for m, i in zip(comps, t):
                for label, p in m.emissions.get(m.states[i], {}).items():
                    off[s, config.labels.index(label)] *= 1.0 - p
        self.emit = 1.0 - off

    @property
    def n_states(self) -> int:
        return len(self.state_tuples)

    def expected_marginals(self, length: int, label_noise: float = 0.0) -> np.ndarray:
        """Per-label P(on), averaged over frames 0..length-1, ignoring precedence rules."""
        dist = self.initial.copy()
        acc = np.zeros(self.n_states)
        for _ in range(length):
            acc += dist
            dist = dist @ self.transitions
        clean = (acc / length) @ self.emit
        return clean * (1 - label_noise) + (1 - clean) * label_noise


def simulate(config: WorkflowSimConfig):
    """Generate ``config.n_sequences`` labelled sequences.

    Returns a list of LabeledSequence with ``vocabulary = config.labels``.
    """
    config.check()
    machine = JointMachine(config)
    labels = list(config.labels)
    n_labels = len(labels)
    projection = component_rng(config.seed, "sim.projection").standard_normal((machine.n_states, config.feature_dim))
    gen = component_rng(config.seed, "sim.sequences")

    rules = [(labels.index(r.before), [labels.index(a) for a in r.after], r.p_obey) for r in config.precedence]
    # gated[r, s]: joint state s can emit an "after" label of rule r
    gated = np.array([machine.emit[:, after].max(axis=1) > 0 for _, after, _ in rules]).reshape(len(rules), -1)

    width = len(str(max(config.n_sequences - 1, 0)))
    out = []
    for n in range(config.n_sequences):
        obey = [gen.random() < p for _, _, p in rules]
        seen = np.zeros(n_labels, dtype=bool)
        current = np.zeros(n_labels, dtype=bool)
        states = np.empty(config.length, dtype=np.int64)
        clean = np.zeros((config.length, n_labels), dtype=np.uint8)
        state = -1
        for t in range(config.length):
            probs = machine.initial if t == 0 else machine.transitions[state]
            blocked = np.zeros(machine.n_states, dtype=bool)
            for r, (before, _, _) in enumerate(rules):
                # moves inside the gated set are free; entering it needs `before` on
                if obey[r] and not current[before] and not (t > 0 and gated[r][state]):
                    blocked |= gated[r]
            probs = np.where(blocked, 0.0, probs)
            total = probs.sum()
            if total > 0:
                state = int(gen.choice(machine.n_states, p=probs / total))
            elif state < 0:
                state = int(gen.choice(machine.n_states, p=machine.initial))
            states[t] = state
            row = gen.random(n_labels) < machine.emit[state]
            for r, (before, after, _) in enumerate(rules):
                if obey[r] and not seen[before]:
                    row[after] = False
            clean[t] = row
            seen |= row
            current = row
        flips = gen.random(clean.shape) < config.label_noise
        observed = np.where(flips, 1 - clean, clean).astype(np.uint8)
        features = projection[states] + config.feature_noise * gen.standard_normal((config.length, config.feature_dim))
        seq = LabeledSequence(f"sim{n:0{width}d}", observed, labels, features.astype(np.float32))
        seq.states = states
        seq.clean_labels = clean
        out.append(seq)
    return out


# -- default clipping/CVS workflow -----------------------------------------


def _cycle(mean_durations):
    """Cyclic chain: state i persists ~mean_durations[i] s, then moves to i + 1."""
    n = len(mean_durations)
    rows = []
    for i, d in enumerate(mean_durations):
        row = [0.0] * n
        row[i] = 1.0 - 1.0 / d
        row[(i + 1) % n] += 1.0 / d
        rows.append(row)
    return rows


def cvs_machine(mean_durations=(30.0, 10.0, 10.0, 60.0)) -> Machine:
    """Criteria are established one by one until CVS is achieved; the view is
    eventually lost and the cycle restarts. Starts at stationarity."""
    two, plate, tri = vocab.CVS_CRITERIA
    return Machine(
        states=["cvs-none", "cvs-1", "cvs-2", "cvs-achieved"],
        initial="stationary",
        transitions=_cycle(mean_durations),
        emissions={
            "cvs-1": {two: 1.0},
            "cvs-2": {two: 1.0, plate: 1.0},
            "cvs-achieved": {two: 1.0, plate: 1.0, tri: 1.0, vocab.CVS_ACHIEVED: 1.0},
        },
    )


def clipping_machine(mean_durations=(60.0, 6.0, 5.0, 4.0, 5.0, 10.0)) -> Machine:
    """Clip-applier enters, clips the duct, then the artery, then leaves.
    Starts at stationarity."""
    duct = vocab.triplet_name(vocab.CLIP_DUCT)
    artery = vocab.triplet_name(vocab.CLIP_ARTERY)
    return Machine(
        states=["idle", "applier-in", "clip-duct", "between", "clip-artery", "done"],
        initial="stationary",
        transitions=_cycle(mean_durations),
        emissions={
            "applier-in": {"clip-applier": 1.0},
            "clip-duct": {"clip-applier": 1.0, "clip": 1.0, "cystic-duct": 1.0, duct: 1.0},
            "between": {"clip-applier": 1.0},
            "clip-artery": {"clip-applier": 1.0, "clip": 1.0, "cystic-artery": 1.0, artery: 1.0},
        },
    )


def default_config(p_obey=0.9, n_sequences=200, length=120, feature_dim=16, feature_noise=1.0,
                   label_noise=0.0, seed=0) -> WorkflowSimConfig:
    """CVS progression x clipping, with CVS-achieved required before any clipping label."""
    return WorkflowSimConfig(
        labels=list(vocab.CLIPPING_PRIOR_LABELS),
        components=[cvs_machine(), clipping_machine()],
        precedence=[PrecedenceRule(vocab.CVS_ACHIEVED, ["clip", *vocab.CLIPPING_EVENT_LABELS], p_obey)],
        label_noise=label_noise,
        feature_dim=feature_dim,
        feature_noise=feature_noise,
        length=length,
        n_sequences=n_sequences,
        seed=seed,
    )


# -- config file -----------------------------------------------------------

_TOP = {"labels", "components", "precedence", "label_noise", "feature_dim", "feature_noise",
        "length", "n_sequences", "seed"}
_MACHINE = {"states", "initial", "transitions", "emissions"}
_RULE = {"before", "after", "p_obey"}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")


def config_from_dict(raw: dict) -> WorkflowSimConfig:
    _reject_unknown(raw, _TOP, "simulator config")
    for key in ("labels", "components"):
        if key not in raw:
            raise ConfigError(f"simulator config: missing {key!r}")
    comps = []
    for i, m in enumerate(raw["components"]):
        _reject_unknown(m, _MACHINE, f"components[{i}]")
        try:
            initial = m["initial"] if isinstance(m["initial"], str) else list(m["initial"])
            comps.append(Machine(list(m["states"]), initial, [list(r) for r in m["transitions"]],
                                 {k: dict(v) for k, v in (m.get("emissions") or {}).items()}))
        except KeyError as exc:
            raise ConfigError(f"components[{i}]: missing {exc}") from exc
    rules = []
    for i, r in enumerate(raw.get("precedence") or []):
        _reject_unknown(r, _RULE, f"precedence[{i}]")
        after = r["after"] if isinstance(r["after"], list) else [r["after"]]
        rules.append(PrecedenceRule(r["before"], after, float(r.get("p_obey", 1.0))))
    kw = {k: raw[k] for k in ("label_noise", "feature_dim", "feature_noise", "length", "n_sequences", "seed")
          if k in raw}
    config = WorkflowSimConfig(labels=list(raw["labels"]), components=comps, precedence=rules, **kw)
    config.check()
    return config


def config_to_dict(config: WorkflowSimConfig) -> dict:
    return {
        "labels": list(config.labels),
        "components": [
            {"states": m.states, "initial": m.initial if isinstance(m.initial, str) else list(m.initial),
             "transitions": [list(r) for r in m.transitions],
             "emissions": m.emissions}
            for m in config.components
        ],
        "precedence": [{"before": r.before, "after": list(r.after), "p_obey": r.p_obey} for r in config.precedence],
        "label_noise": config.label_noise,
        "feature_dim": config.feature_dim,
        "feature_noise": config.feature_noise,
        "length": config.length,
        "n_sequences": config.n_sequences,
        "seed": config.seed,
    }


def load_config(path) -> WorkflowSimConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read simulator config {path}: {exc}") from exc
    return config_from_dict(raw)


def save_config(config: WorkflowSimConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False), encoding="utf-8")
