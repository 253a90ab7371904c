"""Inspection exports: graphs as DOT or JSON, the map as PGMs or JSON."""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .imaging import write_gray_pgm
from .semantic_graphs import SemanticGraph
from .spatial_map import SpatialSemanticMap

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("dot", "json", "pgm")
#: Pixel value of an occupied cell in a layer render.
OCCUPIED = 255
BACKGROUND = 0


def _feature_digest(feature: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(feature, dtype="<f8").tobytes()).hexdigest()[:16]


# -----------------------------------------------------------------------------
# Graphs
# -----------------------------------------------------------------------------
def graph_to_dot(graph: SemanticGraph, class_names: Optional[Sequence[str]] = None) -> str:
    """Graphviz ``digraph`` with one node statement per node and one edge per relation."""
    lines = [f"digraph {graph.role.value} {{"]
    for idx, cid in enumerate(graph.class_ids.tolist()):
        label = class_names[cid] if class_names is not None else f"class {cid}"
        lines.append(f'  n{idx} [label="{idx}: {label}"];')
    for src, dst in graph.edges():
        lines.append(f"  n{src} -> n{dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: SemanticGraph) -> Dict[str, Any]:
    """``{role, nodes: [{id, class, feature_digest}], edges: [[src, dst]]}``."""
    return {
        "role": graph.role.value,
        "nodes": [
            {"id": idx, "class": int(cid), "feature_digest": _feature_digest(graph.features[idx])}
            for idx, cid in enumerate(graph.class_ids.tolist())
        ],
        "edges": [list(e) for e in graph.edges()],
    }


# -----------------------------------------------------------------------------
# Map
# -----------------------------------------------------------------------------
def map_layer_images(spatial_map: SpatialSemanticMap) -> np.ndarray:
    """``(c, s, s)`` uint8 stack; pixel ``[k, i, j]`` is 255 when ``(i, j, k)`` is occupied."""
    s, c = spatial_map.size, spatial_map.layers
    images = np.full((c, s, s), BACKGROUND, dtype=np.uint8)
    for i, j, k in spatial_map.occupancy:
        images[k, i, j] = OCCUPIED
    return images


def map_argmax_image(spatial_map: SpatialSemanticMap) -> np.ndarray:
    """Flattened ``(s, s)`` render: lowest occupied class + 1, or 0 for an empty cell."""
    s = spatial_map.size
    image = np.zeros((s, s), dtype=np.int64)
    for i, j, k in sorted(spatial_map.occupancy, key=lambda key: key[2], reverse=True):
        image[i, j] = k + 1
    return np.minimum(image, 255).astype(np.uint8)


def write_map_pgms(spatial_map: SpatialSemanticMap, target_dir: Union[str, Path]) -> List[Path]:
    """Write ``layer_KKK.pgm`` for every layer plus ``argmax.pgm``."""
    target_dir = Path(target_dir)
    target_dir.mkdir(parents=True, exist_ok=True)
    written = [
        write_gray_pgm(target_dir / f"layer_{k:03d}.pgm", layer)
        for k, layer in enumerate(map_layer_images(spatial_map))
    ]
    written.append(write_gray_pgm(target_dir / "argmax.pgm", map_argmax_image(spatial_map)))
    logger.debug("wrote %d map renders to %s", len(written), target_dir.name)
    return written


def map_to_json(spatial_map: SpatialSemanticMap) -> Dict[str, Any]:
    """Occupancy dump without features."""
    return {
        "size": spatial_map.size,
        "layers": spatial_map.layers,
        "cell_size": spatial_map.cell_size,
        "anchor": list(spatial_map.anchor),
        "cells": [
            {
                "i": i,
                "j": j,
                "layer": k,
                "feature_digest": _feature_digest(spatial_map.occupancy[(i, j, k)]),
            }
            for i, j, k in sorted(spatial_map.occupancy)
        ],
    }


def write_json(path: Union[str, Path], payload: Any) -> Path:
    """Write indented, key-sorted JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
