"""Semantic Prior, Current, and Global graphs.

Graphs are immutable snapshots. Every update returns a new
:class:`SemanticGraph`; the Prior graph is built once from a relation
knowledge base and never changes during a run.

Edges are directed and unlabeled. ``adjacency[dst, src] == 1`` encodes the
edge ``src -> dst`` so that ``adjacency @ h`` aggregates at the destination.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from .feature_bank import (
    NODE_DIM,
    VISUAL_DIM,
    FeatureBank,
    compose_node_feature,
    cosine_similarity,
)

logger = logging.getLogger(__name__)

RelationPair = Tuple[int, int]


class GraphRole(str, Enum):
    """Which of the three semantic graphs a snapshot represents."""

    PRIOR = "prior"
    CURRENT = "current"
    GLOBAL = "global"


@dataclass(frozen=True)
class Detection:
    """One detected object of a frame.

    Attributes:
        class_id: Object class index.
        visual: 2048-d detector embedding.
        attributes: 23 attribute flags.
        bbox: Optional ``(x_min, y_min, x_max, y_max)`` half-open pixel box; only
            the spatial map needs it.

    """

    class_id: int
    visual: np.ndarray
    attributes: np.ndarray
    bbox: Optional[Tuple[int, int, int, int]] = None


def _readonly(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SemanticGraph:
    """Directed graph of object nodes in insertion order.

    Attributes:
        role: Prior, current, or global.
        class_ids: ``(N,)`` class index per node.
        features: ``(N, 2371)`` node features.
        adjacency: ``(N, N)`` 0/1 matrix, ``adjacency[dst, src]`` for ``src -> dst``.

    """

    role: GraphRole
    class_ids: np.ndarray
    features: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.class_ids)
        if self.features.shape != (n, NODE_DIM):
            raise ValueError(
                f"dimension mismatch: features {self.features.shape}, expected ({n}, {NODE_DIM})"
            )
        if self.adjacency.shape != (n, n):
            raise ValueError(f"adjacency must be ({n}, {n}), got {self.adjacency.shape}")
        object.__setattr__(self, "role", GraphRole(self.role))
        object.__setattr__(self, "class_ids", _readonly(self.class_ids, np.int64))
        object.__setattr__(self, "features", _readonly(self.features, np.float64))
        object.__setattr__(self, "adjacency", _readonly(self.adjacency, np.uint8))

    @classmethod
    def empty(cls, role: GraphRole) -> "SemanticGraph":
        """Return a graph with no nodes."""
        return cls(
            role=role,
            class_ids=np.zeros(0, dtype=np.int64),
            features=np.zeros((0, NODE_DIM), dtype=np.float64),
            adjacency=np.zeros((0, 0), dtype=np.uint8),
        )

    @property
    def num_nodes(self) -> int:
        """Node count."""
        return int(self.class_ids.shape[0])

    @property
    def num_edges(self) -> int:
        """Directed edge count."""
        return int(self.adjacency.sum())

    def edges(self) -> List[RelationPair]:
        """Return ``(src, dst)`` pairs sorted by ``(src, dst)``."""
        dst, src = np.nonzero(self.adjacency)
        return sorted(zip(src.tolist(), dst.tolist()))

    def class_set(self) -> Set[int]:
        """Distinct class ids present in the graph."""
        return set(self.class_ids.tolist())

    def digest(self) -> str:
        """Return a sha256 over role, classes, features, and adjacency."""
        h = hashlib.sha256()
        h.update(self.role.value.encode())
        h.update(np.ascontiguousarray(self.class_ids, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.adjacency, dtype=np.uint8).tobytes())
        return h.hexdigest()


# -----------------------------------------------------------------------------
# Prior graph
# -----------------------------------------------------------------------------
def read_relation_kb(relation_kb: Union[str, Path]) -> List[RelationPair]:
    """Read ``src_id,dst_id`` pairs from a CSV knowledge file (header required)."""
    path = Path(relation_kb)
    if not path.exists():
        raise FileNotFoundError(f"relation knowledge file not found: {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return []
    if list(df.columns[:2]) != ["src_id", "dst_id"]:
        raise ValueError(
            f"relation file {path} must have columns 'src_id,dst_id', got {list(df.columns)}"
        )
    return [(int(s), int(d)) for s, d in zip(df["src_id"], df["dst_id"])]


def build_prior_graph(
    relation_kb: Optional[Union[str, Path, Iterable[RelationPair]]],
    bank: FeatureBank,
) -> SemanticGraph:
    """Build the static Prior graph: one node per class, edges from the KB.

    Node features are ``zeros(2048) | attribute prior | word embedding``; no
    visual observation exists for a class prior.

    Args:
        relation_kb: Path to the KB CSV, an iterable of pairs, or ``None`` for no edges.
        bank: Loaded feature bank.

    Raises:
        ValueError: A KB entry references an unknown class.

    """
    if relation_kb is None:
        pairs: List[RelationPair] = []
    elif isinstance(relation_kb, (str, Path)):
        pairs = read_relation_kb(relation_kb)
    else:
        pairs = [(int(s), int(d)) for s, d in relation_kb]

    n = bank.num_classes
    zeros = np.zeros(VISUAL_DIM, dtype=np.float64)
    features = np.stack(
        [compose_node_feature(zeros, bank.attribute_prior(c), c, bank) for c in range(n)]
    )
    adjacency = np.zeros((n, n), dtype=np.uint8)
    for src, dst in pairs:
        for cid in (src, dst):
            if cid < 0 or cid >= n:
                raise ValueError(f"unknown class {cid} in relation knowledge base")
        adjacency[dst, src] = 1

    graph = SemanticGraph(
        role=GraphRole.PRIOR,
        class_ids=np.arange(n, dtype=np.int64),
        features=features,
        adjacency=adjacency,
    )
    logger.debug("prior graph: %d nodes, %d edges", graph.num_nodes, graph.num_edges)
    return graph


# -----------------------------------------------------------------------------
# Current graph (rebuilt every frame)
# -----------------------------------------------------------------------------
def update_current_graph(
    detections: Sequence[Detection],
    relations: Sequence[RelationPair],
    bank: FeatureBank,
) -> SemanticGraph:
    """Build the Current graph of one frame from its detections and relations.

    Node ``i`` carries the composed feature of detection ``i``; each relation
    ``(src, dst)`` sets ``adjacency[dst, src]``. No earlier state is used.

    Raises:
        ValueError: A relation index is out of bounds, or a detection is malformed.

    """
    n = len(detections)
    for src, dst in relations:
        if not (0 <= src < n and 0 <= dst < n):
            raise ValueError(
                f"relation index out of bounds: ({src}, {dst}) with {n} detections"
            )
    if n == 0:
        return SemanticGraph.empty(GraphRole.CURRENT)

    features = np.stack(
        [compose_node_feature(d.visual, d.attributes, d.class_id, bank) for d in detections]
    )
    adjacency = np.zeros((n, n), dtype=np.uint8)
    for src, dst in relations:
        adjacency[dst, src] = 1
    return SemanticGraph(
        role=GraphRole.CURRENT,
        class_ids=np.array([bank.check_class(d.class_id) for d in detections]),
        features=features,
        adjacency=adjacency,
    )


# -----------------------------------------------------------------------------
# Global graph
# -----------------------------------------------------------------------------
def _check_threshold(threshold: float) -> float:
    thr = float(threshold)
    if not (0.0 <= thr <= 1.0):
        raise ValueError(f"threshold out of range: {threshold} (expected [0, 1])")
    return thr


def _merge_candidates(
    prev_global: SemanticGraph,
    current: SemanticGraph,
    candidates: Sequence[int],
    threshold: float,
    same_class_only: bool,
) -> SemanticGraph:
    """Add every candidate whose best similarity to ``prev_global`` is below threshold.

    Candidates are compared against the previous global nodes only, never
    against nodes added earlier in the same update.
    """
    base_n = prev_global.num_nodes
    mapping: Dict[int, int] = {}
    added: List[int] = []

    for k in candidates:
        feat = current.features[k]
        if same_class_only:
            pool = np.nonzero(prev_global.class_ids == current.class_ids[k])[0]
        else:
            pool = np.arange(base_n)

        best_sim = -np.inf
        best_idx = -1
        for g in pool.tolist():
            sim = cosine_similarity(feat, prev_global.features[g])
            if sim > best_sim:
                best_sim, best_idx = sim, g

        if best_sim < threshold:
            mapping[k] = base_n + len(added)
            added.append(k)
        else:
            mapping[k] = best_idx

    if not added:
        return prev_global

    new_n = base_n + len(added)
    class_ids = np.concatenate([prev_global.class_ids, current.class_ids[added]])
    features = np.concatenate([prev_global.features, current.features[added]], axis=0)
    adjacency = np.zeros((new_n, new_n), dtype=np.uint8)
    adjacency[:base_n, :base_n] = prev_global.adjacency

    added_set = set(added)
    for src, dst in current.edges():
        if src not in added_set and dst not in added_set:
            continue
        if src in mapping and dst in mapping:
            adjacency[mapping[dst], mapping[src]] = 1

    logger.debug("global graph: +%d nodes -> %d", len(added), new_n)
    return SemanticGraph(
        role=GraphRole.GLOBAL,
        class_ids=class_ids,
        features=features,
        adjacency=adjacency,
    )


def update_global_graph(
    prev_global: SemanticGraph,
    current: SemanticGraph,
    threshold: float,
    same_class_only: bool = True,
) -> SemanticGraph:
    """Merge the Current graph into the Global graph by cosine deduplication.

    Each current node is compared with the previous global nodes (only those of
    the same class when ``same_class_only``). It is added when its maximum
    similarity is below ``threshold``; with nothing to compare against it is
    always added. Edges touching an added node are carried over when both of
    their endpoints resolve to a global node: an added node, or the global node
    a deduplicated endpoint matched best.

    Raises:
        ValueError: ``threshold`` outside ``[0, 1]`` or ``prev_global`` is not global.

    """
    thr = _check_threshold(threshold)
    if prev_global.role is not GraphRole.GLOBAL:
        raise ValueError(f"prev_global must have role 'global', got '{prev_global.role.value}'")
    return _merge_candidates(
        prev_global, current, range(current.num_nodes), thr, same_class_only
    )


def jaccard_similarity(a: Set[int], b: Set[int]) -> float:
    """Jaccard index of two class sets; two empty sets count as identical (1.0)."""
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


def update_global_graph_jaccard(
    prev_global: SemanticGraph,
    prev_current: SemanticGraph,
    current: SemanticGraph,
    threshold: float,
    same_class_only: bool = True,
) -> SemanticGraph:
    """Global update gated by the Jaccard similarity of consecutive class sets.

    When the class sets of ``prev_current`` and ``current`` are identical the
    global graph is returned unchanged. Otherwise only nodes whose class is new
    relative to ``prev_current`` go through the cosine test of
    :func:`update_global_graph`.
    """
    thr = _check_threshold(threshold)
    if prev_global.role is not GraphRole.GLOBAL:
        raise ValueError(f"prev_global must have role 'global', got '{prev_global.role.value}'")

    prev_classes = prev_current.class_set()
    cur_classes = current.class_set()
    if jaccard_similarity(prev_classes, cur_classes) >= 1.0:
        return prev_global

    new_classes = cur_classes - prev_classes
    candidates = [
        k for k in range(current.num_nodes) if int(current.class_ids[k]) in new_classes
    ]
    return _merge_candidates(prev_global, current, candidates, thr, same_class_only)

