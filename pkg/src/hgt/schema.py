"""Expert-knowledge hypergraph schemas.

A schema lists typed concept nodes and hyperedges over them, and binds
dataset label columns to graph elements. Canonical schemas for the four
tasks ship as YAML files under ``hgt/schemas``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import yaml

from . import vocab
from .errors import ConfigError

SCHEMA_VERSION = 1
TASKS = ("triplet", "cvs", "clipping", "clipping_with_cvs_prior")
NODE_KINDS = ("tool", "action", "target", "criterion", "composite")
CVS_TASKS = ("cvs", "clipping_with_cvs_prior")
STRICT_TASKS = ("cvs", "clipping", "clipping_with_cvs_prior")


@dataclass(frozen=True)
class TaskSpec:
    """Task identity plus the temporal window.

    ``past_window`` P counts seconds of history before the current frame, so a
    model consumes P + 1 frames. ``horizon`` F is the number of future steps.
    """

    task: str
    past_window: int = 4
    horizon: int = 4

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.past_window < 0 or self.horizon < 0:
            raise ConfigError("past_window and horizon must be >= 0")

    @property
    def labels(self) -> tuple:
        return vocab.TASK_LABELS[self.task]


@dataclass(frozen=True)
class ConceptNode:
    id: str
    kind: str
    label_binding: Optional[int] = None


@dataclass(frozen=True)
class HyperEdge:
    id: str
    incident_nodes: tuple
    label_binding: Optional[int] = None

    @property
    def arity(self) -> int:
        return len(self.incident_nodes)


@dataclass(frozen=True)
class GraphSchema:
    task: str
    nodes: tuple
    edges: tuple
    version: int = SCHEMA_VERSION

    @property
    def label_dim(self) -> int:
        return sum(
            1 for el in self.nodes + self.edges if el.label_binding is not None
        )

    @property
    def node_ids(self) -> tuple:
        return tuple(n.id for n in self.nodes)

    @property
    def edge_ids(self) -> tuple:
        return tuple(e.id for e in self.edges)

    def node_position(self, node_id: str) -> int:
        return self.node_ids.index(node_id)

    def node_label_columns(self) -> list:
        return sorted(n.label_binding for n in self.nodes if n.label_binding is not None)

    def edge_label_columns(self) -> list:
        return sorted(e.label_binding for e in self.edges if e.label_binding is not None)

    def to_dict(self) -> dict:
        nodes = []
        for n in self.nodes:
            d = {"id": n.id, "kind": n.kind}
            if n.label_binding is not None:
                d["label_binding"] = n.label_binding
            nodes.append(d)
        edges = []
        for e in self.edges:
            d = {"id": e.id, "incident_nodes": list(e.incident_nodes)}
            if e.label_binding is not None:
                d["label_binding"] = e.label_binding
            edges.append(d)
        return {"version": self.version, "task": self.task, "nodes": nodes, "edges": edges}

    def digest(self) -> str:
        """Stable content hash; checkpoints record it."""
        return hashlib.sha256(serialize(self).encode("utf-8")).hexdigest()


# -- file format -----------------------------------------------------------

_TOP_FIELDS = {"version", "task", "nodes", "edges"}
_NODE_FIELDS = {"id", "kind", "label_binding"}
_EDGE_FIELDS = {"id", "incident_nodes", "label_binding"}


class _FlowList(list):
    pass


def _flow_list_representer(dumper, data):
    return dumper.represent_sequence("tag:yaml.org,2002:seq", data, flow_style=True)


class _Dumper(yaml.SafeDumper):
    pass


_Dumper.add_representer(_FlowList, _flow_list_representer)


def serialize(schema: GraphSchema) -> str:
    d = schema.to_dict()
    for e in d["edges"]:
        e["incident_nodes"] = _FlowList(e["incident_nodes"])
    return yaml.dump(d, Dumper=_Dumper, sort_keys=False, allow_unicode=True, width=100)


def _check_fields(obj, allowed, required, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(obj).__name__}")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing field(s) {sorted(missing)}")


def _binding(value, where):
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigError(f"{where}: label_binding must be a non-negative integer")
    return value


def parse(text: str) -> GraphSchema:
    """Parse schema text. Structural problems raise ConfigError; semantic
    problems are left to :func:`validate_schema`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"schema is not valid YAML: {exc}") from exc
    _check_fields(raw, _TOP_FIELDS, _TOP_FIELDS, "schema")
    if raw["version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {raw['version']!r}")
    nodes = []
    for i, n in enumerate(raw["nodes"] or []):
        where = f"nodes[{i}]"
        _check_fields(n, _NODE_FIELDS, {"id", "kind"}, where)
        nodes.append(ConceptNode(str(n["id"]), str(n["kind"]), _binding(n.get("label_binding"), where)))
    edges = []
    for i, e in enumerate(raw["edges"] or []):
        where = f"edges[{i}]"
        _check_fields(e, _EDGE_FIELDS, {"id", "incident_nodes"}, where)
        if not isinstance(e["incident_nodes"], list):
            raise ConfigError(f"{where}: incident_nodes must be a list")
        edges.append(
            HyperEdge(
                str(e["id"]),
                tuple(str(v) for v in e["incident_nodes"]),
                _binding(e.get("label_binding"), where),
            )
        )
    return GraphSchema(task=str(raw["task"]), nodes=tuple(nodes), edges=tuple(edges), version=raw["version"])


def load_schema(path) -> GraphSchema:
    return parse(Path(path).read_text(encoding="utf-8"))


def save_schema(schema: GraphSchema, path) -> None:
    Path(path).write_text(serialize(schema), encoding="utf-8")


# -- operations ------------------------------------------------------------


def build_task_schema(task) -> GraphSchema:
    """Load the canonical schema for ``task`` (a task id or TaskSpec)."""
    task_id = task.task if isinstance(task, TaskSpec) else task
    if task_id not in TASKS:
        raise ConfigError(f"unknown task {task_id!r}; expected one of {TASKS}")
    text = resources.files("hgt").joinpath("schemas", f"{task_id}.yaml").read_text(encoding="utf-8")
    schema = parse(text)
    problems = validate_schema(schema)
    if problems:
        raise ConfigError(f"shipped schema {task_id} is invalid: {problems}")
    return schema


def incidence(schema: GraphSchema):
    """Return (edge id -> incident node ids, node id -> incident edge ids).

    Edge lists keep the schema's incidence order; node lists are sorted by
    edge id.
    """
    edge_to_nodes = {e.id: list(e.incident_nodes) for e in schema.edges}
    node_to_edges = {n.id: [] for n in schema.nodes}
    for e in schema.edges:
        for v in e.incident_nodes:
            if v in node_to_edges and e.id not in node_to_edges[v]:
                node_to_edges[v].append(e.id)
    for v in node_to_edges:
        node_to_edges[v].sort()
    return edge_to_nodes, node_to_edges


def validate_schema(schema: GraphSchema, labels=None) -> list:
    """Return a list of human-readable violations (empty when valid).

    ``labels`` is the dataset's label vocabulary; it defaults to the task's
    declared vocabulary when the task is known.
    """
    problems = []
    if schema.task not in TASKS:
        problems.append(f"schema: unknown task {schema.task!r}")
    if labels is None and schema.task in TASKS:
        labels = vocab.TASK_LABELS[schema.task]

    seen = {}
    for el_type, elements in (("node", schema.nodes), ("edge", schema.edges)):
        for el in elements:
            if el.id in seen:
                problems.append(f"{el_type} {el.id!r}: duplicate id (also a {seen[el.id]})")
            else:
                seen[el.id] = el_type

    node_ids = set(schema.node_ids)
    for n in schema.nodes:
        if n.kind not in NODE_KINDS:
            problems.append(f"node {n.id!r}: unknown kind {n.kind!r}")
        elif n.kind in ("criterion", "composite") and schema.task not in CVS_TASKS:
            problems.append(f"node {n.id!r}: kind {n.kind!r} only allowed in CVS schemas")

    for e in schema.edges:
        if e.arity < 2:
            problems.append(f"edge {e.id!r}: arity {e.arity} < 2")
        if len(set(e.incident_nodes)) != e.arity:
            problems.append(f"edge {e.id!r}: repeated incident node")
        for v in e.incident_nodes:
            if v not in node_ids:
                problems.append(f"edge {e.id!r}: incident node {v!r} does not exist")

    if schema.task in STRICT_TASKS:
        touched = {v for e in schema.edges for v in e.incident_nodes}
        for n in schema.nodes:
            if n.id not in touched:
                problems.append(f"node {n.id!r}: dangling (no incident edge)")

    bound = {}
    for el in schema.nodes + schema.edges:
        if el.label_binding is None:
            continue
        if el.label_binding in bound:
            problems.append(
                f"element {el.id!r}: label column {el.label_binding} already bound to {bound[el.label_binding]!r}"
            )
        else:
            bound[el.label_binding] = el.id
    if labels is not None:
        for col in sorted(bound):
            if col >= len(labels):
                problems.append(f"element {bound[col]!r}: label column {col} outside vocabulary of {len(labels)}")
        for col, name in enumerate(labels):
            if col not in bound:
                problems.append(f"label column {col} ({name!r}): not bound to any element")
    return problems
