import dataclasses

import pytest
import yaml

from hgt import vocab
from hgt.errors import ConfigError
from hgt.schema import (TASKS, ConceptNode, GraphSchema, HyperEdge, TaskSpec, build_task_schema, incidence,
                        load_schema, parse, save_schema, serialize, validate_schema)

from conftest import toy_schema


def test_triplet_schema_shape():
    s = build_task_schema("triplet")
    kinds = [n.kind for n in s.nodes]
    assert len(s.nodes) == 31
    assert (kinds.count("tool"), kinds.count("action"), kinds.count("target")) == (6, 10, 15)
    assert len(s.edges) == 100
    assert all(e.arity == 3 for e in s.edges)
    assert s.label_dim == 131


def test_cvs_schema_shape():
    s = build_task_schema("cvs")
    assert {n.id for n in s.nodes} == {"two-structures", "cystic-plate", "hepatocystic-triangle"}
    assert all(n.kind == "criterion" for n in s.nodes)
    (edge,) = s.edges
    assert edge.arity == 3
    assert vocab.CVS_LABELS[edge.label_binding] == "CVS-achieved"


def test_clipping_with_prior_schema_nodes():
    s = build_task_schema("clipping_with_cvs_prior")
    assert set(s.node_ids) == {"clip-applier", "clip", "cystic-duct", "cystic-artery", "CVS",
                               "two-structures", "cystic-plate", "hepatocystic-triangle"}
    assert len(s.edges) == 2
    labels = TaskSpec("clipping_with_cvs_prior").labels
    assert sorted(labels[e.label_binding] for e in s.edges) == sorted(vocab.CLIPPING_EVENT_LABELS)
    cvs = next(n for n in s.nodes if n.id == "CVS")
    assert labels[cvs.label_binding] == "CVS-achieved"


def test_unknown_task_rejected():
    with pytest.raises(ConfigError):
        build_task_schema("appendectomy")
    with pytest.raises(ConfigError):
        TaskSpec("appendectomy")


@pytest.mark.parametrize("task", TASKS)
def test_build_is_deterministic_and_round_trips(task, tmp_path):
    a, b = build_task_schema(task), build_task_schema(task)
    assert a == b
    assert serialize(a) == serialize(b)
    assert parse(serialize(a)) == a
    save_schema(a, tmp_path / "s.yaml")
    assert load_schema(tmp_path / "s.yaml") == a
    assert a.digest() == b.digest()


@pytest.mark.parametrize("task", TASKS)
def test_label_coverage_exact(task):
    s = build_task_schema(task)
    bound = sorted(el.label_binding for el in s.nodes + s.edges if el.label_binding is not None)
    assert bound == list(range(len(TaskSpec(task).labels)))
    assert validate_schema(s) == []


def test_incidence_cvs():
    s = build_task_schema("cvs")
    e2n, n2e = incidence(s)
    (eid,) = e2n
    assert set(e2n[eid]) == set(vocab.CVS_CRITERIA)
    assert all(n2e[c] == [eid] for c in vocab.CVS_CRITERIA)


def test_incidence_single_edge():
    s = toy_schema(2, (("ab", ("a", "b")),))
    e2n, n2e = incidence(s)
    assert n2e["a"] == ["ab"] and n2e["b"] == ["ab"]
    assert e2n["ab"] == ["a", "b"]


def test_incidence_grasper_count_by_scan():
    s = build_task_schema("triplet")
    _, n2e = incidence(s)
    by_scan = 0
    for tool, _action, _target in vocab.TRIPLET_CLASSES:
        if tool == "grasper":
            by_scan += 1
    assert len(n2e["grasper"]) == by_scan == 23


def test_incidence_lists_sorted_and_consistent():
    s = build_task_schema("triplet")
    e2n, n2e = incidence(s)
    for v, edges in n2e.items():
        assert edges == sorted(edges)
        assert all(v in e2n[e] for e in edges)
    for e, nodes in e2n.items():
        assert all(e in n2e[v] for v in nodes)


def test_incidence_order_persisted_in_file():
    s = build_task_schema("triplet")
    text = serialize(s)
    raw = yaml.safe_load(text)
    for e, d in zip(s.edges, raw["edges"]):
        assert tuple(d["incident_nodes"]) == e.incident_nodes
    # slots are tool, action, target
    for e, triplet in zip(s.edges, vocab.TRIPLET_CLASSES):
        assert e.incident_nodes == triplet


def test_validate_ghost_node_named():
    s = build_task_schema("cvs")
    e = s.edges[0]
    bad = dataclasses.replace(s, edges=(dataclasses.replace(e, incident_nodes=e.incident_nodes + ("ghost",)),))
    problems = validate_schema(bad)
    assert len(problems) == 1
    assert "ghost" in problems[0]


def test_validate_duplicate_id():
    s = build_task_schema("cvs")
    dup = ConceptNode(s.nodes[0].id, "criterion", None)
    problems = validate_schema(dataclasses.replace(s, nodes=s.nodes + (dup,)))
    assert len(problems) == 1
    assert "duplicate" in problems[0]


def test_validate_other_rules():
    s = toy_schema(3, (("e", ("a", "b")),))
    assert any("dangling" in p and "'c'" in p for p in validate_schema(s, ["x"] * 4))
    crit_in_clipping = toy_schema(2, (("e", ("a", "b")),), task="clipping")
    assert any("only allowed in CVS" in p for p in validate_schema(crit_in_clipping, ["x"] * 3))
    unary = GraphSchema("cvs", (ConceptNode("a", "criterion", 0),), (HyperEdge("e", ("a",), 1),))
    assert any("arity 1" in p for p in validate_schema(unary, ["x", "y"]))
    double = GraphSchema("cvs", (ConceptNode("a", "criterion", 0), ConceptNode("b", "criterion", 0)),
                         (HyperEdge("e", ("a", "b"), 1),))
    problems = validate_schema(double, ["x", "y"])
    assert any("already bound" in p for p in problems)


def test_parse_rejects_unknown_fields():
    text = serialize(build_task_schema("cvs"))
    raw = yaml.safe_load(text)
    raw["nodes"][0]["colour"] = "red"
    with pytest.raises(ConfigError, match="colour"):
        parse(yaml.safe_dump(raw))
    raw = yaml.safe_load(text)
    raw["extra"] = 1
    with pytest.raises(ConfigError, match="extra"):
        parse(yaml.safe_dump(raw))


def test_triplet_components_exist_in_vocabularies():
    for tool, action, target in vocab.TRIPLET_CLASSES:
        assert tool in vocab.TOOLS and action in vocab.ACTIONS and target in vocab.TARGETS
    assert len(set(vocab.TRIPLET_CLASSES)) == 100
