"""Action and object prediction heads, action selection, and imitation loss."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .graph_nn import softmax
from .weights import NUM_ACTIONS, NUM_OBJECTS, HeadWeights

logger = logging.getLogger(__name__)

ACTIONS: Tuple[str, ...] = (
    "Stop",
    "LookDown",
    "LookUp",
    "MoveAhead",
    "RotateLeft",
    "RotateRight",
    "PickupObject",
    "SliceObject",
    "OpenObject",
    "PutObject",
    "CloseObject",
    "ToggleObjectOn",
    "ToggleObjectOff",
)

#: Lower bound applied to probabilities before taking logs.
LOG_CLAMP = 1e-12
_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ActionLabel:
    """Index into :data:`ACTIONS`."""

    index: int

    def __post_init__(self) -> None:
        if not (0 <= int(self.index) < NUM_ACTIONS):
            raise ValueError(f"action index {self.index} outside [0, {NUM_ACTIONS - 1}]")
        object.__setattr__(self, "index", int(self.index))

    @property
    def name(self) -> str:
        """Canonical action name."""
        return ACTIONS[self.index]

    @classmethod
    def from_name(cls, name: str) -> "ActionLabel":
        """Look an action up by its canonical name."""
        try:
            return cls(ACTIONS.index(name))
        except ValueError:
            raise ValueError(f"unknown action '{name}'") from None


def actions_json() -> str:
    """The action list as canonical JSON."""
    return json.dumps(list(ACTIONS), separators=(",", ":"))


def one_hot(index: int, size: int) -> np.ndarray:
    """Float one-hot vector of length ``size``."""
    if not (0 <= index < size):
        raise ValueError(f"label {index} outside [0, {size - 1}]")
    v = np.zeros(size, dtype=np.float64)
    v[index] = 1.0
    return v


# -----------------------------------------------------------------------------
# Heads
# -----------------------------------------------------------------------------
def head_forward(embedding: np.ndarray, heads: HeadWeights) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``(p_a, p_c)``: softmax of ``x W_action`` and of ``x W_object``.

    ``embedding`` is the graph embedding concatenated with the language hidden state.
    """
    x = np.asarray(embedding, dtype=np.float64)
    if x.shape != (heads.in_dim,):
        raise ValueError(
            f"dimension mismatch: head input has shape {x.shape}, expected ({heads.in_dim},)"
        )
    return softmax(x @ heads.action), softmax(x @ heads.object)


def select_action(p_a: np.ndarray, p_c: np.ndarray) -> Tuple[ActionLabel, int]:
    """Argmax of each head; ties go to the lowest index."""
    return ActionLabel(int(np.argmax(p_a))), int(np.argmax(p_c))


# -----------------------------------------------------------------------------
# Loss
# -----------------------------------------------------------------------------
def _check_one_hot(y: np.ndarray, size: int, what: str) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape != (size,) or not np.all((arr == 0.0) | (arr == 1.0)) or arr.sum() != 1.0:
        raise ValueError(f"malformed one-hot for {what}: expected {size} entries with a single 1")
    return arr


def _check_distribution(p: np.ndarray, size: int, what: str) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape != (size,):
        raise ValueError(f"dimension mismatch: {what} has shape {arr.shape}, expected ({size},)")
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > _SUM_TOL:
        raise ValueError(f"{what} is not a probability distribution")
    return arr


@dataclass(frozen=True, eq=False)
class TrajectoryStep:
    """Expert one-hots and predicted distributions for one step."""

    y_a: np.ndarray
    y_c: np.ndarray
    p_a: np.ndarray
    p_c: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "y_a", _check_one_hot(self.y_a, NUM_ACTIONS, "action"))
        object.__setattr__(self, "y_c", _check_one_hot(self.y_c, NUM_OBJECTS, "object"))
        object.__setattr__(self, "p_a", _check_distribution(self.p_a, NUM_ACTIONS, "p_a"))
        object.__setattr__(self, "p_c", _check_distribution(self.p_c, NUM_OBJECTS, "p_c"))

    @classmethod
    def from_labels(
        cls, action: int, obj: int, p_a: np.ndarray, p_c: np.ndarray
    ) -> "TrajectoryStep":
        """Build a step from expert label indices."""
        return cls(
            y_a=one_hot(action, NUM_ACTIONS),
            y_c=one_hot(obj, NUM_OBJECTS),
            p_a=p_a,
            p_c=p_c,
        )

    def terms(self) -> Tuple[float, float]:
        """Cross-entropy of the action and object heads."""
        action = -float(np.dot(self.y_a, np.log(np.maximum(self.p_a, LOG_CLAMP)))) + 0.0
        obj = -float(np.dot(self.y_c, np.log(np.maximum(self.p_c, LOG_CLAMP)))) + 0.0
        return action, obj


def trajectory_loss(steps: Sequence[TrajectoryStep]) -> float:
    """Sum of action and object cross-entropies over all steps."""
    return math.fsum(a + c for a, c in (s.terms() for s in steps)) + 0.0


@dataclass(frozen=True)
class LossReport:
    """Loss broken down by head and step."""

    total: float
    action_term: float
    object_term: float
    per_step: Tuple[Dict[str, float], ...]

    def to_dict(self) -> dict:
        """JSON-ready mapping."""
        return {
            "total": self.total,
            "action_term": self.action_term,
            "object_term": self.object_term,
            "per_step": list(self.per_step),
        }


def loss_report(
    steps: Sequence[TrajectoryStep], timesteps: Optional[Sequence[int]] = None
) -> LossReport:
    """Compute :func:`trajectory_loss` with per-head and per-step terms."""
    if timesteps is not None and len(timesteps) != len(steps):
        raise ValueError("timesteps and steps differ in length")
    per_step: List[Dict[str, float]] = []
    for k, step in enumerate(steps):
        a, c = step.terms()
        entry: Dict[str, float] = {"action": a, "object": c, "total": a + c}
        if timesteps is not None:
            entry = {"t": int(timesteps[k]), **entry}
        per_step.append(entry)
    action_term = math.fsum(e["action"] for e in per_step) + 0.0
    object_term = math.fsum(e["object"] for e in per_step) + 0.0
    return LossReport(
        total=trajectory_loss(steps),
        action_term=action_term,
        object_term=object_term,
        per_step=tuple(per_step),
    )


# -----------------------------------------------------------------------------
# Object names
# -----------------------------------------------------------------------------
def load_object_names(path: Union[str, Path], count: int = NUM_OBJECTS) -> Tuple[str, ...]:
    """Read the optional ``id,name`` table for the object head.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ValueError: Ids are not exactly ``0..count-1``.

    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"object name file not found: {path}")
    df = pd.read_csv(path, dtype={"name": str}, keep_default_na=False)
    if list(df.columns[:2]) != ["id", "name"]:
        raise ValueError(f"object name file {path} must have columns 'id,name'")
    by_id = dict(zip(df["id"].astype(int).tolist(), df["name"].str.strip().tolist()))
    if sorted(by_id) != list(range(count)) or len(df) != count:
        raise ValueError(f"object name file {path} must list ids 0..{count - 1} exactly once")
    return tuple(by_id[i] for i in range(count))
