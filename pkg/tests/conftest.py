import numpy as np
import pytest
import torch

from hgt.schema import ConceptNode, GraphSchema, HyperEdge


def toy_schema(n_nodes=3, edges=(("e0", ("a", "b", "c")),), task="cvs", node_kind="criterion"):
    """Nodes a, b, c, ... bound to columns 0..; edges bound after them."""
    names = "abcdefgh"[:n_nodes]
    nodes = tuple(ConceptNode(n, node_kind, i) for i, n in enumerate(names))
    hyper = tuple(HyperEdge(eid, tuple(inc), n_nodes + j) for j, (eid, inc) in enumerate(edges))
    return GraphSchema(task, nodes, hyper)


@pytest.fixture
def tiny_schema():
    return toy_schema()


@pytest.fixture
def two_edge_schema():
    # d is incident to e1 only, a to e0 only; b sits on both
    return toy_schema(4, (("e0", ("a", "b")), ("e1", ("b", "c", "d"))))


@pytest.fixture(autouse=True)
def _torch_defaults():
    dtype = torch.get_default_dtype()
    torch.manual_seed(0)
    np.random.seed(0)
    yield
    torch.set_default_dtype(dtype)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
