"""Named weight matrices for the GCNs, readouts, and prediction heads.

Weights are never trained here. Every matrix has a stable name

* ``gcn.<role>.<layer>.w1`` / ``gcn.<role>.<layer>.w2``
* ``readout.<role>.w1`` / ``readout.<role>.w2`` / ``readout.<role>.w3``
* ``head.action`` / ``head.object``

and is generated from ``uniform(-k, k)`` with ``k = 1 / sqrt(fan_in)`` by a
generator seeded with ``(seed, crc32(name))``. A weights file (``.npz`` or
``.json``) may override any subset of them.
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .feature_bank import NODE_DIM

logger = logging.getLogger(__name__)

NUM_ACTIONS = 13
NUM_OBJECTS = 119

Shape = Tuple[int, ...]


def _checked(name: str, values, shape: Shape) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.shape != tuple(shape):
        raise ValueError(
            f"dimension mismatch: weight '{name}' has shape {arr.shape}, expected {tuple(shape)}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"weight '{name}' contains non-finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GcnLayer:
    """One ``h -> A relu(A h W1) W2`` layer."""

    w1: np.ndarray
    w2: np.ndarray

    @property
    def d_in(self) -> int:
        """Input feature width."""
        return int(self.w1.shape[0])

    @property
    def d_out(self) -> int:
        """Output feature width."""
        return int(self.w2.shape[1])


@dataclass(frozen=True, eq=False)
class GcnWeights:
    """Layer stack of one graph's GCN."""

    layers: Tuple[GcnLayer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("a GCN needs at least one layer")
        for k, layer in enumerate(self.layers):
            if layer.w1.shape[1] != layer.w2.shape[0]:
                raise ValueError(f"dimension mismatch inside GCN layer {k}")
            if k and self.layers[k - 1].d_out != layer.d_in:
                raise ValueError(f"dimension mismatch between GCN layers {k - 1} and {k}")

    @property
    def d_in(self) -> int:
        """Input width of the first layer."""
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        """Output width of the last layer."""
        return self.layers[-1].d_out


@dataclass(frozen=True, eq=False)
class ReadoutWeights:
    """Attention readout matrices.

    Attributes:
        w1: ``(d, r)`` projection summed into the graph embedding.
        w2: ``(d, r)`` node projection for attention logits.
        w3: ``(lang_dim, r)`` language projection for attention logits.

    """

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray

    def __post_init__(self) -> None:
        if self.w2.shape[1] != self.w3.shape[1]:
            raise ValueError(
                f"dimension mismatch: readout w2 {self.w2.shape} vs w3 {self.w3.shape}"
            )
        if self.w1.shape[0] != self.w2.shape[0]:
            raise ValueError(
                f"dimension mismatch: readout w1 {self.w1.shape} vs w2 {self.w2.shape}"
            )

    @property
    def out_dim(self) -> int:
        """Width of the graph embedding."""
        return int(self.w1.shape[1])

    @property
    def lang_dim(self) -> int:
        """Expected language hidden-state length."""
        return int(self.w3.shape[0])


@dataclass(frozen=True, eq=False)
class HeadWeights:
    """Action (13 logits) and object (119 logits) head matrices."""

    action: np.ndarray
    object: np.ndarray

    def __post_init__(self) -> None:
        if self.action.shape[1] != NUM_ACTIONS or self.object.shape[1] != NUM_OBJECTS:
            raise ValueError(
                f"dimension mismatch: heads must emit {NUM_ACTIONS} and {NUM_OBJECTS} "
                f"logits, got {self.action.shape[1]} and {self.object.shape[1]}"
            )
        if self.action.shape[0] != self.object.shape[0]:
            raise ValueError("dimension mismatch: heads disagree on input width")

    @property
    def in_dim(self) -> int:
        """Shared input width."""
        return int(self.action.shape[0])


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Everything the engine multiplies by, keyed by graph role.

    Attributes:
        graphs: Roles feeding the readout, in concatenation order.
        gcn: Per-role GCN stacks.
        readout: Per-role readout matrices.
        heads: Prediction heads.
        seed: Seed used for generated matrices.
        overridden: Names loaded from a weights file, sorted.

    """

    graphs: Tuple[str, ...]
    gcn: Mapping[str, GcnWeights]
    readout: Mapping[str, ReadoutWeights]
    heads: HeadWeights
    seed: int
    overridden: Tuple[str, ...] = ()

    @property
    def embed_dim(self) -> int:
        """Length of the concatenated graph embedding."""
        return sum(self.readout[r].out_dim for r in self.graphs)


# -----------------------------------------------------------------------------
# Shapes and generation
# -----------------------------------------------------------------------------
def weight_shapes(
    graphs: Sequence[str],
    gcn_hidden: Sequence[int],
    readout_dim: int,
    lang_dim: int,
) -> Dict[str, Shape]:
    """Return the name -> shape table for a layer plan."""
    if not gcn_hidden:
        raise ValueError("gcn_hidden must list at least one layer width")
    shapes: Dict[str, Shape] = {}
    for role in graphs:
        d_in = NODE_DIM
        for k, d_out in enumerate(gcn_hidden):
            shapes[f"gcn.{role}.{k}.w1"] = (d_in, d_out)
            shapes[f"gcn.{role}.{k}.w2"] = (d_out, d_out)
            d_in = d_out
        shapes[f"readout.{role}.w1"] = (d_in, readout_dim)
        shapes[f"readout.{role}.w2"] = (d_in, readout_dim)
        shapes[f"readout.{role}.w3"] = (lang_dim, readout_dim)
    head_in = len(graphs) * readout_dim + lang_dim
    shapes["head.action"] = (head_in, NUM_ACTIONS)
    shapes["head.object"] = (head_in, NUM_OBJECTS)
    return shapes


def generate_matrix(name: str, shape: Shape, seed: int) -> np.ndarray:
    """Seeded ``uniform(-k, k)`` matrix with ``k = 1 / sqrt(shape[0])``."""
    rng = np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
    k = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-k, k, size=shape)


# -----------------------------------------------------------------------------
# Files
# -----------------------------------------------------------------------------
def load_weights_file(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Read named matrices from ``.npz`` or ``.json``.

    The JSON layout is ``{name: {"shape": [r, c], "data": [...row-major...]}}``.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ValueError: Unknown extension or a malformed entry.

    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weights file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".npz":
        with np.load(path, allow_pickle=False) as data:
            return {name: np.asarray(data[name], dtype=np.float64) for name in data.files}
    if suffix == ".json":
        raw = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"weights file {path} must hold a JSON object")
        out: Dict[str, np.ndarray] = {}
        for name, entry in raw.items():
            try:
                shape = tuple(int(s) for s in entry["shape"])
                data = np.asarray(entry["data"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed weight '{name}' in {path}: {exc}") from exc
            if data.size != math.prod(shape):
                raise ValueError(
                    f"dimension mismatch: weight '{name}' has {data.size} values for shape {shape}"
                )
            out[name] = data.reshape(shape)
        return out
    raise ValueError(f"unsupported weights file extension '{path.suffix}' (use .npz or .json)")


def save_weights_file(path: Union[str, Path], weights: Mapping[str, np.ndarray]) -> Path:
    """Write named matrices to ``.npz`` or ``.json`` (see :func:`load_weights_file`)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        np.savez(path, **{k: np.asarray(v, dtype=np.float64) for k, v in weights.items()})
    elif suffix == ".json":
        payload = {
            name: {
                "shape": list(np.shape(arr)),
                "data": np.asarray(arr, dtype=np.float64).ravel().tolist(),
            }
            for name, arr in sorted(weights.items())
        }
        path.write_text(json.dumps(payload), encoding="utf-8")
    else:
        raise ValueError(f"unsupported weights file extension '{path.suffix}' (use .npz or .json)")
    return path


# -----------------------------------------------------------------------------
# Assembly
# -----------------------------------------------------------------------------
def build_weight_set(
    graphs: Sequence[str],
    gcn_hidden: Sequence[int],
    readout_dim: int,
    lang_dim: int,
    seed: int = 0,
    weights_path: Optional[Union[str, Path]] = None,
) -> WeightSet:
    """Generate every matrix from ``seed`` and overlay those found in ``weights_path``.

    Raises:
        ValueError: The file names an unknown matrix or one with the wrong shape.

    """
    shapes = weight_shapes(graphs, gcn_hidden, readout_dim, lang_dim)
    loaded: Dict[str, np.ndarray] = {}
    if weights_path is not None:
        loaded = load_weights_file(weights_path)
        unknown = sorted(set(loaded) - set(shapes))
        if unknown:
            raise ValueError(f"unknown weight names in {weights_path}: {unknown}")

    mats = {
        name: _checked(name, loaded[name] if name in loaded else generate_matrix(name, shape, seed), shape)
        for name, shape in shapes.items()
    }
    if loaded:
        logger.info("loaded %d of %d weight matrices from file", len(loaded), len(shapes))

    gcn = {
        role: GcnWeights(
            layers=tuple(
                GcnLayer(w1=mats[f"gcn.{role}.{k}.w1"], w2=mats[f"gcn.{role}.{k}.w2"])
                for k in range(len(gcn_hidden))
            )
        )
        for role in graphs
    }
    readout = {
        role: ReadoutWeights(
            w1=mats[f"readout.{role}.w1"],
            w2=mats[f"readout.{role}.w2"],
            w3=mats[f"readout.{role}.w3"],
        )
        for role in graphs
    }
    heads = HeadWeights(action=mats["head.action"], object=mats["head.object"])
    return WeightSet(
        graphs=tuple(graphs),
        gcn=gcn,
        readout=readout,
        heads=heads,
        seed=int(seed),
        overridden=tuple(sorted(loaded)),
    )
