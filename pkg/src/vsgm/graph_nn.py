"""GCN forward pass and language-conditioned attention readout (numpy, no training).

Per layer the GCN computes ``h = A relu(A h W1) W2`` with ``A`` the symmetric
normalised adjacency with self-loops; a row softmax follows the last layer
only. The readout scores node ``j`` by ``<h_j W2, H_lang W3>``, softmaxes the
scores into ``alpha``, and returns ``relu(sum_j alpha_j h_j W1)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .feature_bank import NODE_DIM
from .semantic_graphs import SemanticGraph
from .spatial_map import SpatialSemanticMap, active_node_graph
from .weights import GcnWeights, ReadoutWeights, WeightSet

logger = logging.getLogger(__name__)

#: Fixed concatenation order of graph embeddings.
EMBED_ORDER: Tuple[str, ...] = ("prior", "current", "global", "map")


@dataclass(frozen=True, eq=False)
class GraphEmbedding:
    """Readout of one graph.

    Attributes:
        role: Which graph produced it.
        x: Graph embedding vector.
        alpha: Attention per node; empty when the graph had no nodes.

    """

    role: str
    x: np.ndarray
    alpha: np.ndarray

    @property
    def empty(self) -> bool:
        """True when the graph had no nodes and ``x`` is the zero block."""
        return self.alpha.size == 0


@dataclass(frozen=True, eq=False)
class EmbeddingResult:
    """Concatenated embedding plus its per-graph parts."""

    vector: np.ndarray
    parts: Dict[str, GraphEmbedding] = field(default_factory=dict)

    def alphas(self) -> Dict[str, list]:
        """Attention per role as plain lists."""
        return {role: part.alpha.tolist() for role, part in self.parts.items()}


def relu(x: np.ndarray) -> np.ndarray:
    """Rectifier."""
    return np.maximum(x, 0.0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Softmax of a 1-D vector."""
    z = np.asarray(x, dtype=np.float64)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def row_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax applied to every row of a 2-D array."""
    z = np.asarray(x, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    return a_hat * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]


def gcn_forward(features: np.ndarray, adjacency: np.ndarray, weights: GcnWeights) -> np.ndarray:
    """Run the layer stack over one graph.

    Args:
        features: ``(N, d_in)`` node features.
        adjacency: ``(N, N)`` 0/1 matrix.
        weights: Layer stack whose first layer takes ``d_in``.

    Returns:
        np.ndarray: ``(N, d_out)`` node embeddings whose rows each sum to 1.

    Raises:
        ValueError: ``N == 0``, a dimension mismatch, or a NaN in any layer.

    """
    h = np.asarray(features, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError(f"gcn_forward needs at least one node, got features {h.shape}")
    if h.shape[1] != weights.d_in:
        raise ValueError(
            f"dimension mismatch: features have width {h.shape[1]}, GCN expects {weights.d_in}"
        )
    if np.shape(adjacency) != (h.shape[0], h.shape[0]):
        raise ValueError(
            f"dimension mismatch: adjacency {np.shape(adjacency)} for {h.shape[0]} nodes"
        )
    a_norm = normalized_adjacency(adjacency)
    for k, layer in enumerate(weights.layers):
        h = a_norm @ relu(a_norm @ h @ layer.w1) @ layer.w2
        if np.isnan(h).any():
            raise ValueError(f"NaN detected in GCN layer {k}")
    out = row_softmax(h)
    if np.isnan(out).any():
        raise ValueError("NaN detected in final softmax")
    return out


def graph_embed(
    node_embeddings: np.ndarray,
    lang_hidden: np.ndarray,
    weights: ReadoutWeights,
) -> Tuple[np.ndarray, np.ndarray]:
    """Attention-pool node embeddings into one vector.

    Returns:
        tuple: ``(x, alpha)``; ``alpha`` sums to 1 over the nodes.

    Raises:
        ValueError: No nodes ("empty readout") or a dimension mismatch.

    """
    h = np.asarray(node_embeddings, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("empty readout: graph has no nodes")
    lang = np.asarray(lang_hidden, dtype=np.float64)
    if lang.shape != (weights.lang_dim,):
        raise ValueError(
            f"dimension mismatch: lang_hidden has shape {lang.shape}, expected ({weights.lang_dim},)"
        )
    if h.shape[1] != weights.w1.shape[0]:
        raise ValueError(
            f"dimension mismatch: node embeddings width {h.shape[1]}, readout expects "
            f"{weights.w1.shape[0]}"
        )
    scores = (h @ weights.w2) @ (lang @ weights.w3)
    alpha = softmax(scores)
    x = relu(alpha @ (h @ weights.w1))
    return x, alpha


def _graph_inputs(
    role: str,
    prior: SemanticGraph,
    current: SemanticGraph,
    global_graph: SemanticGraph,
    spatial_map: Optional[SpatialSemanticMap],
) -> Tuple[np.ndarray, np.ndarray]:
    if role == "map":
        if spatial_map is None:
            return np.zeros((0, NODE_DIM)), np.zeros((0, 0))
        return active_node_graph(spatial_map)
    graph = {"prior": prior, "current": current, "global": global_graph}[role]
    return graph.features, graph.adjacency


def embed_all(
    prior: SemanticGraph,
    current: SemanticGraph,
    global_graph: SemanticGraph,
    spatial_map: Optional[SpatialSemanticMap],
    lang_hidden: np.ndarray,
    weights: WeightSet,
) -> EmbeddingResult:
    """Embed every configured graph and concatenate in ``prior, current, global, map`` order.

    A graph with no nodes contributes a zero block and an empty ``alpha``.
    """
    unknown = [r for r in weights.graphs if r not in EMBED_ORDER]
    if unknown:
        raise ValueError(f"unknown graph roles {unknown}")
    parts: Dict[str, GraphEmbedding] = {}
    blocks = []
    for role in (r for r in EMBED_ORDER if r in weights.graphs):
        features, adjacency = _graph_inputs(role, prior, current, global_graph, spatial_map)
        readout = weights.readout[role]
        if features.shape[0] == 0:
            part = GraphEmbedding(role=role, x=np.zeros(readout.out_dim), alpha=np.zeros(0))
        else:
            h = gcn_forward(features, adjacency, weights.gcn[role])
            x, alpha = graph_embed(h, lang_hidden, readout)
            part = GraphEmbedding(role=role, x=x, alpha=alpha)
        parts[role] = part
        blocks.append(part.x)
        logger.debug("embedded %s: %d nodes", role, part.alpha.size)
    return EmbeddingResult(vector=np.concatenate(blocks), parts=parts)


def embedding_dump(result: EmbeddingResult) -> list:
    """JSON-ready ``[{graph_role, alpha, X}]`` in concatenation order."""
    return [
        {"graph_role": role, "alpha": part.alpha.tolist(), "X": part.x.tolist()}
        for role, part in result.parts.items()
    ]

