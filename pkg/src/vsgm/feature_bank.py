"""Object vocabulary, word embeddings, and node-feature composition.

A :class:`FeatureBank` is loaded once per run from two tables:

* a class file (CSV ``id,name``) listing the 106 object classes, and
* an embedding file (TSV ``name<tab>f0 ... f299``, no header).

An optional attribute file (CSV ``id,a0..a22``) supplies per-class attribute
priors used by the Prior graph. The bank is immutable after loading.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

VISUAL_DIM = 2048
ATTRIBUTE_DIM = 23
WORD_DIM = 300
NODE_DIM = VISUAL_DIM + ATTRIBUTE_DIM + WORD_DIM
NUM_CLASSES = 106

#: Slices of a node feature: (visual, attribute, word).
VISUAL_SLICE = slice(0, VISUAL_DIM)
ATTRIBUTE_SLICE = slice(VISUAL_DIM, VISUAL_DIM + ATTRIBUTE_DIM)
WORD_SLICE = slice(VISUAL_DIM + ATTRIBUTE_DIM, NODE_DIM)


@dataclass(frozen=True)
class ObjectClass:
    """One entry of the object vocabulary."""

    id: int
    name: str


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Immutable lookup of class names, word embeddings, and attribute priors.

    Attributes:
        classes: Classes ordered by id (ids are dense, ``0..n-1``).
        embeddings: ``(n, 300)`` word-embedding table, row ``i`` for class ``i``.
        attribute_priors: ``(n, 23)`` per-class attribute flags (zeros if unknown).
        warnings: Messages produced while loading (e.g. missing embeddings).

    """

    classes: Tuple[ObjectClass, ...]
    embeddings: np.ndarray
    attribute_priors: np.ndarray
    warnings: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        n = len(self.classes)
        for idx, cls in enumerate(self.classes):
            if cls.id != idx:
                raise ValueError(f"class ids must be dense; position {idx} has id {cls.id}")
        if self.embeddings.shape != (n, WORD_DIM):
            raise ValueError(
                f"dimension mismatch: embedding table is {self.embeddings.shape}, "
                f"expected ({n}, {WORD_DIM})"
            )
        if self.attribute_priors.shape != (n, ATTRIBUTE_DIM):
            raise ValueError(
                f"dimension mismatch: attribute table is {self.attribute_priors.shape}, "
                f"expected ({n}, {ATTRIBUTE_DIM})"
            )
        object.__setattr__(self, "embeddings", _frozen(self.embeddings))
        object.__setattr__(self, "attribute_priors", _frozen(self.attribute_priors))

    @property
    def num_classes(self) -> int:
        """Number of classes in the vocabulary."""
        return len(self.classes)

    def check_class(self, class_id: int) -> int:
        """Return ``class_id`` as ``int`` or raise ``ValueError`` if unknown."""
        cid = int(class_id)
        if cid < 0 or cid >= self.num_classes:
            raise ValueError(f"unknown class id {class_id}")
        return cid

    def class_name(self, class_id: int) -> str:
        """Resolve a class id to its name."""
        return self.classes[self.check_class(class_id)].name

    def word_embedding(self, class_id: int) -> np.ndarray:
        """Resolve a class id to its 300-d word embedding (read-only view)."""
        return self.embeddings[self.check_class(class_id)]

    def attribute_prior(self, class_id: int) -> np.ndarray:
        """Resolve a class id to its 23-d attribute prior (read-only view)."""
        return self.attribute_priors[self.check_class(class_id)]


# -----------------------------------------------------------------------------
# Loading
# -----------------------------------------------------------------------------
def _read_class_table(class_file: Path, num_classes: int) -> Tuple[ObjectClass, ...]:
    try:
        df = pd.read_csv(class_file, dtype={"name": str}, keep_default_na=False)
    except Exception as exc:
        raise ValueError(f"Failed to read class file {class_file}: {exc}") from exc

    if list(df.columns[:2]) != ["id", "name"]:
        raise ValueError(
            f"class file {class_file} must have columns 'id,name', got {list(df.columns)}"
        )
    ids = pd.to_numeric(df["id"], errors="coerce")
    if ids.isna().any():
        raise ValueError(f"class file {class_file} has non-integer ids")
    ids = ids.astype(int)

    dup = ids[ids.duplicated()]
    if not dup.empty:
        raise ValueError(f"duplicate class id {int(dup.iloc[0])} in {class_file}")
    if len(ids) != num_classes:
        raise ValueError(
            f"class file {class_file} lists {len(ids)} classes, expected {num_classes}"
        )
    by_id = dict(zip(ids.tolist(), df["name"].str.strip().tolist()))
    missing = [i for i in range(num_classes) if i not in by_id]
    if missing:
        raise ValueError(f"class ids are not dense 0..{num_classes - 1}; missing {missing[:5]}")
    return tuple(ObjectClass(id=i, name=by_id[i]) for i in range(num_classes))


def _read_embedding_table(embedding_file: Path) -> Dict[str, np.ndarray]:
    try:
        df = pd.read_csv(
            embedding_file,
            sep="\t",
            header=None,
            dtype={0: str},
            keep_default_na=False,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return {}
    except pd.errors.ParserError as exc:
        raise ValueError(f"dimension mismatch in {embedding_file}: {exc}") from exc

    values = df.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    table: Dict[str, np.ndarray] = {}
    for row, name in enumerate(df.iloc[:, 0].tolist()):
        vec = values[row]
        finite = np.isfinite(vec)
        count = int(finite.sum())
        if count != WORD_DIM or not finite[:WORD_DIM].all():
            raise ValueError(
                f"dimension mismatch: embedding for '{name}' (row {row + 1}) has "
                f"{count} values, expected {WORD_DIM}"
            )
        if name in table:
            logger.warning("duplicate embedding for '%s'; keeping the first", name)
            continue
        table[name] = vec[:WORD_DIM]
    return table


def _read_attribute_table(attribute_file: Path, num_classes: int) -> np.ndarray:
    df = pd.read_csv(attribute_file)
    if "id" not in df.columns or df.shape[1] != ATTRIBUTE_DIM + 1:
        raise ValueError(
            f"dimension mismatch: attribute file {attribute_file} needs 'id' plus "
            f"{ATTRIBUTE_DIM} columns, got {df.shape[1]}"
        )
    priors = np.zeros((num_classes, ATTRIBUTE_DIM), dtype=np.float64)
    for row in df.itertuples(index=False):
        cid = int(row[0])
        if cid < 0 or cid >= num_classes:
            raise ValueError(f"unknown class id {cid} in {attribute_file}")
        priors[cid] = np.asarray(row[1:], dtype=np.float64)
    if not np.all((priors >= 0.0) & (priors <= 1.0)):
        raise ValueError(f"attribute values in {attribute_file} must lie in [0, 1]")
    return priors


def load_vocab(
    class_file: Union[str, Path],
    embedding_file: Union[str, Path],
    attribute_file: Optional[Union[str, Path]] = None,
    num_classes: int = NUM_CLASSES,
) -> FeatureBank:
    """Load the object vocabulary and word embeddings into a :class:`FeatureBank`.

    Classes absent from the embedding file get a zero vector and one warning each.

    Args:
        class_file: CSV with header ``id,name``.
        embedding_file: TSV rows ``name<tab>f0<tab>...<tab>f299``.
        attribute_file: Optional CSV ``id,a0..a22`` of class attribute priors.
        num_classes: Expected class count.

    Returns:
        FeatureBank: The loaded, immutable bank.

    Raises:
        ValueError: Duplicate ids, wrong class count, or wrong embedding dimension.
        FileNotFoundError: A file does not exist.

    """
    class_file = Path(class_file)
    embedding_file = Path(embedding_file)
    for p in (class_file, embedding_file):
        if not p.exists():
            raise FileNotFoundError(f"vocabulary file not found: {p}")

    classes = _read_class_table(class_file, num_classes)
    table = _read_embedding_table(embedding_file)

    embeddings = np.zeros((num_classes, WORD_DIM), dtype=np.float64)
    warnings = []
    for cls in classes:
        vec = table.get(cls.name)
        if vec is None:
            msg = f"no word embedding for class {cls.id} '{cls.name}'; using zeros"
            logger.warning(msg)
            warnings.append(msg)
            continue
        embeddings[cls.id] = vec

    if attribute_file is not None:
        priors = _read_attribute_table(Path(attribute_file), num_classes)
    else:
        priors = np.zeros((num_classes, ATTRIBUTE_DIM), dtype=np.float64)

    logger.info(
        "loaded %d classes, %d embeddings, %d warnings",
        num_classes,
        num_classes - len(warnings),
        len(warnings),
    )
    return FeatureBank(
        classes=classes,
        embeddings=embeddings,
        attribute_priors=priors,
        warnings=tuple(warnings),
    )


# -----------------------------------------------------------------------------
# Node features and similarity
# -----------------------------------------------------------------------------
def _as_vector(values, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise ValueError(
            f"dimension mismatch: {what} has shape {arr.shape}, expected ({dim},)"
        )
    return arr


def compose_node_feature(
    visual: np.ndarray, attributes: np.ndarray, class_id: int, bank: FeatureBank
) -> np.ndarray:
    """Concatenate visual feature, attribute flags, and class word embedding.

    Returns:
        np.ndarray: ``(2371,)`` float64 vector laid out as
        ``visual[0:2048] | attributes[2048:2071] | word[2071:2371]``.

    """
    v = _as_vector(visual, VISUAL_DIM, "visual feature")
    a = _as_vector(attributes, ATTRIBUTE_DIM, "attribute vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("visual feature contains non-finite values")
    return np.concatenate([v, a, bank.word_embedding(class_id)])


def split_node_feature(feature: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the (visual, attributes, word) segments of a node feature."""
    f = _as_vector(feature, NODE_DIM, "node feature")
    return f[VISUAL_SLICE], f[ATTRIBUTE_SLICE], f[WORD_SLICE]


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity in ``[-1, 1]``; ``0.0`` when either vector has zero norm.

    Both vectors are divided by their largest magnitude first, so very large or
    very small finite features neither overflow nor underflow.

    Raises:
        ValueError: Shapes differ, or a vector holds non-finite values.

    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("cosine similarity of non-finite values")
    mx = float(np.max(np.abs(x))) if x.size else 0.0
    my = float(np.max(np.abs(y))) if y.size else 0.0
    if mx == 0.0 or my == 0.0:
        return 0.0
    x, y = x / mx, y / my
    xx = float(np.dot(x, x))
    yy = float(np.dot(y, y))
    sim = float(np.dot(x, y)) / float(np.sqrt(xx * yy))
    if math.isnan(sim):
        raise ValueError("cosine similarity is undefined for these vectors")
    return min(1.0, max(-1.0, sim))
