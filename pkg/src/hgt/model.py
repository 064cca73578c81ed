"""Hypergraph-transformer: message passing, temporal prediction, projection.

Tensors use the layout ``(batch, [time,] element, hidden)``. Edge updates
concatenate incident node embeddings in schema incidence order; node updates
average the embeddings of incident edges. Each element's temporal history is
forecast independently (no attention across elements), by a causal
transformer or, for the Graph-LSTM ablation, an LSTM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .backbone import ElementEncoder
from .errors import ConfigError, ShapeError, StateError
from .schema import GraphSchema, incidence

VARIANTS = ("transformer", "recurrent_cell")


@dataclass
class ElementState:
    """Per-element embedding histories for a batch of sequences.

    ``nodes`` is (B, L, Nv, H), ``edges`` is (B, L, Ne, H); ``clock`` is the
    time index of the last history entry.
    """

    nodes: torch.Tensor
    edges: torch.Tensor
    clock: int = 0

    def __post_init__(self):
        if self.nodes.shape[:2] != self.edges.shape[:2]:
            raise StateError("node and edge histories differ in batch or length")

    @property
    def length(self) -> int:
        return self.nodes.shape[1]

    def append(self, nodes: torch.Tensor, edges: torch.Tensor) -> "ElementState":
        return ElementState(
            torch.cat([self.nodes, nodes.unsqueeze(1)], dim=1),
            torch.cat([self.edges, edges.unsqueeze(1)], dim=1),
            self.clock + 1,
        )

    def at(self, step: int):
        return self.nodes[:, step], self.edges[:, step]


@dataclass
class PredictionBatch:
    """probs: (B, F+1, C) with columns in label-binding order."""

    probs: torch.Tensor
    horizon: int
    columns: tuple = field(default=())


class TwoLayerBlock(nn.Module):
    """Linear -> BatchNorm -> ReLU, twice. Rows are normalised jointly."""

    def __init__(self, in_dim: int, hidden_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden_dim)
        self.bn1 = nn.BatchNorm1d(hidden_dim)
        self.fc2 = nn.Linear(hidden_dim, hidden_dim)
        self.bn2 = nn.BatchNorm1d(hidden_dim)

    def forward(self, x):
        shape = x.shape[:-1]
        h = x.reshape(-1, x.shape[-1])
        h = torch.relu(self.bn1(self.fc1(h)))
        h = torch.relu(self.bn2(self.fc2(h)))
        return h.reshape(*shape, -1)


class EdgeUpdate(nn.Module):
    """New edge state from (incident node states..., current edge state).

    One block per arity, shared by all edges of that arity.
    """

    def __init__(self, schema: GraphSchema, hidden_dim: int):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.n_edges = len(schema.edges)
        node_pos = {nid: i for i, nid in enumerate(schema.node_ids)}
        groups = {}
        for j, e in enumerate(schema.edges):
            groups.setdefault(e.arity, []).append(j)
        self.arities = sorted(groups)
        self.blocks = nn.ModuleDict()
        for a in self.arities:
            edges = groups[a]
            self.blocks[str(a)] = TwoLayerBlock((a + 1) * hidden_dim, hidden_dim)
            self.register_buffer(f"edge_pos_{a}", torch.tensor(edges, dtype=torch.long), persistent=False)
            gather = [[node_pos[v] for v in schema.edges[j].incident_nodes] for j in edges]
            self.register_buffer(f"node_idx_{a}", torch.tensor(gather, dtype=torch.long), persistent=False)

    def forward(self, nodes: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        out = torch.zeros_like(edges)
        batch = nodes.shape[:-2]
        for a in self.arities:
            pos = getattr(self, f"edge_pos_{a}")
            idx = getattr(self, f"node_idx_{a}")
            incident = nodes[..., idx, :].reshape(*batch, len(pos), a * self.hidden_dim)
            x = torch.cat([incident, edges[..., pos, :]], dim=-1)
            out = out.index_copy(-2, pos, self.blocks[str(a)](x))
        return out


class NodeUpdate(nn.Module):
    """New node state from (mean of incident edge states, current node state).

    Nodes without incident edges see a zero aggregate.
    """

    def __init__(self, schema: GraphSchema, hidden_dim: int):
        super().__init__()
        _, node_to_edges = incidence(schema)
        edge_pos = {eid: j for j, eid in enumerate(schema.edge_ids)}
        mean = torch.zeros(len(schema.nodes), len(schema.edges))
        for i, nid in enumerate(schema.node_ids):
            incident = node_to_edges[nid]
            for eid in incident:
                mean[i, edge_pos[eid]] = 1.0 / len(incident)
        self.register_buffer("mean_matrix", mean, persistent=False)
        self.block = TwoLayerBlock(2 * hidden_dim, hidden_dim)

    def forward(self, nodes: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        agg = torch.einsum("ve,...eh->...vh", self.mean_matrix.to(edges.dtype), edges)
        return self.block(torch.cat([agg, nodes], dim=-1))


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    rate = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * rate)
    pe[:, 1::2] = torch.cos(pos * rate[: dim // 2])
    return pe.to(dtype)


class TemporalPredictor(nn.Module):
    """Next-step embedding from one element's own history.

    ``sequence`` maps (N, L, H) to (N, L, H) where output k depends only on
    inputs 0..k and forecasts position k + 1.
    """

    def __init__(self, hidden_dim: int, variant: str = "transformer", n_heads: int = 2,
                 n_layers: int = 2, ff_mult: int = 4, dropout: float = 0.1):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.variant = variant
        self.hidden_dim = hidden_dim
        if variant == "transformer":
            layer = nn.TransformerEncoderLayer(
                hidden_dim, n_heads, dim_feedforward=ff_mult * hidden_dim,
                dropout=dropout, batch_first=True,
            )
            self.net = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)
        else:
            self.net = nn.LSTM(hidden_dim, hidden_dim, batch_first=True)
            self.out = nn.Linear(hidden_dim, hidden_dim)

    def sequence(self, history: torch.Tensor) -> torch.Tensor:
        length = history.shape[1]
        if length == 0:
            raise StateError("empty history")
        if self.variant == "transformer":
            x = history + sinusoidal_encoding(length, self.hidden_dim, history.dtype).to(history.device)
            mask = torch.triu(torch.full((length, length), float("-inf"), dtype=history.dtype,
                                         device=history.device), diagonal=1)
            return self.net(x, mask=mask, is_causal=True)
        y, _ = self.net(history)
        return self.out(y)

    def forward(self, history: torch.Tensor) -> torch.Tensor:
        return self.sequence(history)[:, -1]


class Projector(nn.Module):
    """Per-element affine read-out to one logit per bound element."""

    def __init__(self, n_bound: int, hidden_dim: int):
        super().__init__()
        self.weight = nn.Parameter(0.1 * torch.randn(n_bound, hidden_dim) / math.sqrt(hidden_dim))
        self.bias = nn.Parameter(torch.zeros(n_bound))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (x * self.weight).sum(-1) + self.bias


class HGT(nn.Module):
    """The full model for one schema.

    ``variant`` selects the temporal predictor: ``transformer`` (default) or
    ``recurrent_cell`` (Graph-LSTM ablation). Everything else is shared.
    """

    def __init__(self, schema: GraphSchema, backbone_dim: int, hidden_dim: int = 128,
                 variant: str = "transformer", n_heads: int = 2, n_layers: int = 2,
                 ff_mult: int = 4, dropout: float = 0.1):
        super().__init__()
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.schema = schema
        self.variant = variant
        self.hparams = dict(backbone_dim=backbone_dim, hidden_dim=hidden_dim, variant=variant,
                            n_heads=n_heads, n_layers=n_layers, ff_mult=ff_mult, dropout=dropout)
        n_nodes, n_edges = len(schema.nodes), len(schema.edges)
        self.encoder = ElementEncoder(backbone_dim, hidden_dim, n_nodes, n_edges)
        self.edge_update = EdgeUpdate(schema, hidden_dim)
        self.node_update = NodeUpdate(schema, hidden_dim)
        kw = dict(variant=variant, n_heads=n_heads, n_layers=n_layers, ff_mult=ff_mult, dropout=dropout)
        self.node_predictor = TemporalPredictor(hidden_dim, **kw)
        self.edge_predictor = TemporalPredictor(hidden_dim, **kw)

        bound_nodes = [(i, n.label_binding) for i, n in enumerate(schema.nodes) if n.label_binding is not None]
        bound_edges = [(j, e.label_binding) for j, e in enumerate(schema.edges) if e.label_binding is not None]
        self.label_dim = schema.label_dim
        for name, bound in (("node", bound_nodes), ("edge", bound_edges)):
            self.register_buffer(f"{name}_bound_pos", torch.tensor([p for p, _ in bound], dtype=torch.long),
                                 persistent=False)
            self.register_buffer(f"{name}_bound_col", torch.tensor([c for _, c in bound], dtype=torch.long),
                                 persistent=False)
        self.node_projector = Projector(len(bound_nodes), hidden_dim)
        self.edge_projector = Projector(len(bound_edges), hidden_dim)

    @property
    def backbone_dim(self) -> int:
        return self.encoder.backbone_dim

    def edge_side_parameters(self):
        """Parameters that only shape edge states or edge outputs."""
        mods = [self.edge_update, self.edge_predictor, self.edge_projector, self.encoder.edge_map]
        params = [p for m in mods for p in m.parameters()]
        return params + [self.encoder.edge_identity]

    # -- message passing ---------------------------------------------------

    def message_pass(self, nodes, edges):
        """One pass: update edges from nodes, then nodes from the new edges."""
        edges = self.edge_update(nodes, edges)
        nodes = self.node_update(nodes, edges)
        return nodes, edges

    def encode(self, frames: torch.Tensor, start_time: int = 0) -> ElementState:
        """Encode (B, T, D) frames into a T-step state, one message pass per frame."""
        if frames.ndim != 3:
            raise ShapeError(f"frames must be (batch, time, dim), got {tuple(frames.shape)}")
        if frames.shape[1] == 0:
            raise StateError("no frames to encode")
        nodes_t, edges_t = [], []
        for t in range(frames.shape[1]):
            nodes, edges = self.encoder(frames[:, t])
            nodes, edges = self.message_pass(nodes, edges)
            nodes_t.append(nodes)
            edges_t.append(edges)
        return ElementState(torch.stack(nodes_t, 1), torch.stack(edges_t, 1), start_time + frames.shape[1] - 1)

    # -- temporal prediction -----------------------------------------------

    def _per_element(self, predictor, history):
        b, length, n, h = history.shape
        seq = history.permute(0, 2, 1, 3).reshape(b * n, length, h)
        return predictor(seq).reshape(b, n, h)

    def predict_step(self, state: ElementState):
        """Next-step embeddings (nodes (B, Nv, H), edges (B, Ne, H)) from history."""
        if state.length < 1:
            raise StateError("predict_step needs a history of length >= 1")
        return (self._per_element(self.node_predictor, state.nodes),
                self._per_element(self.edge_predictor, state.edges))

    def rollout(self, state: ElementState, steps: int) -> ElementState:
        """Extend the state ``steps`` seconds: predict, then one message pass, per step."""
        if steps < 0:
            raise ValueError(f"rollout steps must be >= 0, got {steps}")
        if state.length < 1:
            raise StateError("rollout needs an encoded state")
        for _ in range(steps):
            nodes, edges = self.predict_step(state)
            nodes, edges = self.message_pass(nodes, edges)
            state = state.append(nodes, edges)
        return state

    # -- read-out ----------------------------------------------------------

    def project_logits(self, nodes: torch.Tensor, edges: torch.Tensor) -> torch.Tensor:
        """(..., Nv, H), (..., Ne, H) -> logits (..., C) in label-column order."""
        batch = nodes.shape[:-2]
        out = nodes.new_zeros(*batch, self.label_dim)
        node_logits = self.node_projector(nodes[..., self.node_bound_pos, :])
        edge_logits = self.edge_projector(edges[..., self.edge_bound_pos, :])
        out = out.index_copy(-1, self.node_bound_col, node_logits)
        return out.index_copy(-1, self.edge_bound_col, edge_logits)

    def project(self, state: ElementState, step: int = -1) -> torch.Tensor:
        nodes, edges = state.at(step)
        return torch.sigmoid(self.project_logits(nodes, edges))

    def forward_logits(self, frames: torch.Tensor, horizon: int, past_window: int | None = None):
        """(B, P+1, D) frames -> (B, F+1, C) logits for offsets 0..F."""
        if past_window is not None and frames.shape[1] != past_window + 1:
            raise ValueError(f"expected {past_window + 1} frames for past window {past_window}, "
                             f"got {frames.shape[1]}")
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        state = self.encode(frames)
        encoded = state.length
        state = self.rollout(state, horizon)
        return self.project_logits(state.nodes[:, encoded - 1:], state.edges[:, encoded - 1:])

    def forward(self, frames: torch.Tensor, horizon: int, past_window: int | None = None) -> torch.Tensor:
        return torch.sigmoid(self.forward_logits(frames, horizon, past_window))

    def predict(self, frames, horizon: int, past_window: int | None = None) -> PredictionBatch:
        probs = self.forward(frames, horizon, past_window)
        return PredictionBatch(probs, horizon, tuple(range(self.label_dim)))
