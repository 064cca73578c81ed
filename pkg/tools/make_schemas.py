"""Regenerate the shipped schema files from the label vocabularies.

    python tools/make_schemas.py

The YAML files under src/hgt/schemas are the source of truth at runtime;
this script exists so the 100-edge triplet schema need not be hand-edited.
"""

from pathlib import Path

from hgt import vocab
from hgt.schema import ConceptNode, GraphSchema, HyperEdge, save_schema, validate_schema

OUT = Path(__file__).resolve().parents[1] / "src" / "hgt" / "schemas"


def triplet_schema():
    labels = vocab.TRIPLET_LABELS
    nodes = []
    for kind, names in (("tool", vocab.TOOLS), ("action", vocab.ACTIONS), ("target", vocab.TARGETS)):
        nodes += [ConceptNode(n, kind, labels.index(n)) for n in names]
    edges = [
        HyperEdge(vocab.triplet_name(t), t, labels.index(vocab.triplet_name(t)))
        for t in vocab.TRIPLET_CLASSES
    ]
    return GraphSchema("triplet", tuple(nodes), tuple(edges))


def cvs_schema():
    labels = vocab.CVS_LABELS
    nodes = tuple(ConceptNode(c, "criterion", labels.index(c)) for c in vocab.CVS_CRITERIA)
    edges = (HyperEdge(vocab.CVS_ACHIEVED, vocab.CVS_CRITERIA, labels.index(vocab.CVS_ACHIEVED)),)
    return GraphSchema("cvs", nodes, edges)


def _clip_nodes(labels):
    return [
        ConceptNode("clip-applier", "tool", labels.index("clip-applier")),
        ConceptNode("clip", "action", labels.index("clip")),
        ConceptNode("cystic-duct", "target", labels.index("cystic-duct")),
        ConceptNode("cystic-artery", "target", labels.index("cystic-artery")),
    ]


def clipping_schema():
    labels = vocab.CLIPPING_LABELS
    edges = tuple(
        HyperEdge(vocab.triplet_name(t), t, labels.index(vocab.triplet_name(t)))
        for t in (vocab.CLIP_DUCT, vocab.CLIP_ARTERY)
    )
    return GraphSchema("clipping", tuple(_clip_nodes(labels)), edges)


def clipping_prior_schema():
    labels = vocab.CLIPPING_PRIOR_LABELS
    nodes = _clip_nodes(labels)
    nodes.append(ConceptNode("CVS", "composite", labels.index(vocab.CVS_ACHIEVED)))
    nodes += [ConceptNode(c, "criterion", labels.index(c)) for c in vocab.CVS_CRITERIA]
    prior = ("CVS",) + vocab.CVS_CRITERIA
    edges = tuple(
        HyperEdge(vocab.triplet_name(t), t + prior, labels.index(vocab.triplet_name(t)))
        for t in (vocab.CLIP_DUCT, vocab.CLIP_ARTERY)
    )
    return GraphSchema("clipping_with_cvs_prior", tuple(nodes), edges)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for schema in (triplet_schema(), cvs_schema(), clipping_schema(), clipping_prior_schema()):
        problems = validate_schema(schema)
        if problems:
            raise SystemExit(f"{schema.task}: {problems}")
        save_schema(schema, OUT / f"{schema.task}.yaml")
        print(f"wrote {schema.task}: {len(schema.nodes)} nodes, {len(schema.edges)} edges")


if __name__ == "__main__":
    main()
