"""Frame features and the per-element image encoders.

Frames arrive as fixed-length feature vectors, either read from a
precomputed feature file or produced by any upstream vision model. Two
shared maps (one for nodes, one for edges) lift a frame vector to
``hidden_dim``; a learned identity vector per element is added so the
shared maps can specialise without per-element weight matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import DataError, ShapeError

FEATURE_MAGIC = b"HGTF"
_HEADER = struct.Struct("<4sII")


@dataclass
class FrameFeature:
    vector: np.ndarray
    time_index: int


@dataclass
class ElementEmbedding:
    per_node: dict
    per_edge: dict


def check_features(features) -> int:
    """Validate a frame sequence and return its backbone_dim."""
    if not features:
        return 0
    dim = len(features[0].vector)
    prev = None
    for f in features:
        if len(f.vector) != dim:
            raise ShapeError(f"frame t={f.time_index} has dim {len(f.vector)}, expected {dim}")
        if prev is not None and f.time_index <= prev:
            raise DataError(f"time index not strictly increasing at t={f.time_index}")
        prev = f.time_index
    return dim


def save_precomputed(path, features) -> None:
    """Write frames in the little-endian feature file layout.

    ``features`` is a list of FrameFeature or an (n, dim) array. Row i is the
    frame at time index i.
    """
    if isinstance(features, np.ndarray):
        matrix = features
    else:
        check_features(features)
        matrix = np.stack([f.vector for f in features]) if features else np.zeros((0, 0))
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ShapeError("feature matrix must be 2-D")
    n, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, n, dim))
        fh.write(matrix.tobytes())


def read_feature_matrix(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, dim = _HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    payload = raw[_HEADER.size:]
    if len(payload) != n * dim * 4:
        raise DataError(f"{path}: payload is {len(payload)} bytes, header implies n*dim*4 = {n * dim * 4}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float32)


def load_precomputed(path) -> list:
    matrix = read_feature_matrix(path)
    return [FrameFeature(matrix[i], i) for i in range(matrix.shape[0])]


def _mlp(in_dim, hidden_dim):
    return nn.Sequential(nn.Linear(in_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, hidden_dim))


class ElementEncoder(nn.Module):
    """Image embeddings for every node and edge of a schema.

    ``node_map`` and ``edge_map`` are the element-type-specific encoders; the
    identity tables hold one learned vector per element.
    """

    def __init__(self, backbone_dim: int, hidden_dim: int, n_nodes: int, n_edges: int):
        super().__init__()
        self.backbone_dim = backbone_dim
        self.hidden_dim = hidden_dim
        self.node_map = _mlp(backbone_dim, hidden_dim)
        self.edge_map = _mlp(backbone_dim, hidden_dim)
        self.node_identity = nn.Parameter(0.02 * torch.randn(n_nodes, hidden_dim))
        self.edge_identity = nn.Parameter(0.02 * torch.randn(n_edges, hidden_dim))

    def forward(self, frames: torch.Tensor):
        """frames (..., backbone_dim) -> nodes (..., Nv, H), edges (..., Ne, H)."""
        if frames.shape[-1] != self.backbone_dim:
            raise ShapeError(f"frame dim {frames.shape[-1]} != backbone_dim {self.backbone_dim}")
        nodes = self.node_map(frames).unsqueeze(-2) + self.node_identity
        edges = self.edge_map(frames).unsqueeze(-2) + self.edge_identity
        return nodes, edges


def encode_frame(feature: FrameFeature, schema, encoder: ElementEncoder) -> ElementEmbedding:
    """Encode one frame and key the result by schema element id."""
    p = next(encoder.parameters())
    x = torch.as_tensor(np.asarray(feature.vector), dtype=p.dtype, device=p.device)
    if x.ndim != 1 or x.shape[0] != encoder.backbone_dim:
        raise ShapeError(f"feature has shape {tuple(x.shape)}, expected ({encoder.backbone_dim},)")
    with torch.no_grad():
        nodes, edges = encoder(x)
    return ElementEmbedding(
        per_node={nid: nodes[i].cpu().numpy() for i, nid in enumerate(schema.node_ids)},
        per_edge={eid: edges[i].cpu().numpy() for i, eid in enumerate(schema.edge_ids)},
    )
