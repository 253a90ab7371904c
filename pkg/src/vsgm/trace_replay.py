"""Detection-trace ingestion, the per-step engine, snapshots, and the replay run.

A trace is JSON Lines: a header ``{"format": "vsgm-trace", "version": 1}``
followed by one frame per line. Each step runs

    current graph -> global graph (cosine or Jaccard-gated) -> spatial map
    -> graph embeddings -> heads -> action selection

and yields a new immutable :class:`EngineState`. States serialise to versioned
JSON snapshots from which a replay can resume.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .config import RunConfig
from .export import write_json, write_map_pgms
from .feature_bank import ATTRIBUTE_DIM, NODE_DIM, VISUAL_DIM, FeatureBank, load_vocab
from .graph_nn import EmbeddingResult, embed_all, embedding_dump
from .heads_loss import (
    ActionLabel,
    LossReport,
    TrajectoryStep,
    head_forward,
    load_object_names,
    loss_report,
    select_action,
)
from .imaging import read_depth_pgm
from .semantic_graphs import (
    Detection,
    GraphRole,
    RelationPair,
    SemanticGraph,
    build_prior_graph,
    update_current_graph,
    update_global_graph,
    update_global_graph_jaccard,
)
from .spatial_map import (
    AgentPose,
    BoundingBox,
    CameraConfig,
    DepthImage,
    SpatialSemanticMap,
    init_map,
    update_map,
)
from .weights import NUM_OBJECTS, WeightSet, build_weight_set

logger = logging.getLogger(__name__)

TRACE_FORMAT = "vsgm-trace"
TRACE_VERSION = 1
SNAPSHOT_FORMAT = "vsgm-snapshot"
SNAPSHOT_VERSION = 1
REPORT_FORMAT = "vsgm-report"
REPORT_VERSION = 1


# -----------------------------------------------------------------------------
# Trace
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class ExpertLabel:
    """Expert action index and object index of a frame."""

    action: int
    object: int


@dataclass(frozen=True, eq=False)
class Frame:
    """One validated trace line."""

    index: int
    t: int
    detections: Tuple[Detection, ...]
    relations: Tuple[RelationPair, ...]
    depth_ref: str
    depth_path: Path
    pose: AgentPose
    lang_hidden: np.ndarray
    expert: Optional[ExpertLabel] = None


@dataclass(frozen=True, eq=False)
class DetectionTrace:
    """Ordered frames with strictly increasing ``t`` starting at 0."""

    frames: Tuple[Frame, ...]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def lang_dim(self) -> Optional[int]:
        """Length of ``lang_hidden``; ``None`` for an empty trace."""
        return int(self.frames[0].lang_hidden.shape[0]) if self.frames else None

    @property
    def has_labels(self) -> bool:
        """True when any frame carries expert labels."""
        return any(f.expert is not None for f in self.frames)


def _vector(raw: Any, dim: int, what: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ValueError(f"{what} must be a list of numbers") from None
    if arr.ndim != 1 or arr.shape[0] != dim:
        got = arr.shape[0] if arr.ndim == 1 else arr.shape
        raise ValueError(f"dimension mismatch: {what} has {got} values, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


def _parse_detection(raw: Dict[str, Any], camera: Optional[CameraConfig]) -> Detection:
    if not isinstance(raw, dict):
        raise ValueError("detection must be an object")
    try:
        class_id = raw["class_id"]
    except KeyError:
        raise ValueError("missing class_id") from None
    if isinstance(class_id, bool) or not isinstance(class_id, int):
        raise ValueError(f"class_id must be an integer, got {class_id!r}")
    visual = _vector(raw.get("visual"), VISUAL_DIM, "visual")
    attributes = _vector(raw.get("attributes"), ATTRIBUTE_DIM, "attributes")
    bbox = raw.get("bbox")
    if bbox is not None:
        if len(bbox) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in bbox):
            raise ValueError(f"bbox must be four integers, got {bbox!r}")
        bbox = tuple(bbox)
        if camera is not None:
            BoundingBox(*bbox).check_within(camera.width, camera.height)
    return Detection(class_id=class_id, visual=visual, attributes=attributes, bbox=bbox)


def _parse_frame(
    raw: Dict[str, Any], index: int, base_dir: Path, camera: Optional[CameraConfig]
) -> Frame:
    t = raw.get("t")
    if isinstance(t, bool) or not isinstance(t, int):
        raise ValueError(f"t must be an integer, got {t!r}")

    detections = []
    for j, det in enumerate(raw.get("detections", [])):
        try:
            detections.append(_parse_detection(det, camera))
        except ValueError as exc:
            raise ValueError(f"detection {j}: {exc}") from exc

    relations = []
    for rel in raw.get("relations", []):
        if not isinstance(rel, (list, tuple)) or len(rel) != 2:
            raise ValueError(f"relation must be [src, dst], got {rel!r}")
        if any(isinstance(k, bool) or not isinstance(k, int) for k in rel):
            raise ValueError(f"relation indices must be integers, got {list(rel)!r}")
        src, dst = rel
        if not (0 <= src < len(detections) and 0 <= dst < len(detections)):
            raise ValueError(
                f"relation index out of bounds: ({src}, {dst}) with {len(detections)} detections"
            )
        relations.append((src, dst))

    depth_ref = raw.get("depth")
    if not isinstance(depth_ref, str) or not depth_ref:
        raise ValueError("missing depth reference")
    depth_path = base_dir / depth_ref
    if not depth_path.exists():
        raise FileNotFoundError(f"depth file not found: {depth_ref}")

    pose_raw = raw.get("pose")
    if not isinstance(pose_raw, dict):
        raise ValueError("missing pose")
    pose_values = {}
    for key in ("x", "z", "yaw", "pitch"):
        if key not in pose_raw:
            raise ValueError(f"missing pose key {key!r}")
        value = pose_raw[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"pose {key} must be a number, got {value!r}")
        pose_values[key] = float(value)
    pose = AgentPose(
        x=pose_values["x"],
        z=pose_values["z"],
        yaw=pose_values["yaw"],
        camera_pitch=pose_values["pitch"],
    )

    lang_raw = raw.get("lang_hidden")
    if not isinstance(lang_raw, list) or not lang_raw:
        raise ValueError("lang_hidden must be a non-empty list")
    lang = _vector(lang_raw, len(lang_raw), "lang_hidden")
    lang.setflags(write=False)

    expert = None
    if raw.get("expert") is not None:
        ex = raw["expert"]
        action = ex.get("action")
        action_idx = (
            ActionLabel.from_name(action).index if isinstance(action, str) else ActionLabel(action).index
        )
        obj = ex.get("object")
        if isinstance(obj, bool) or not isinstance(obj, int) or not (0 <= obj < NUM_OBJECTS):
            raise ValueError(f"expert object must be an index in [0, {NUM_OBJECTS - 1}], got {obj!r}")
        expert = ExpertLabel(action=action_idx, object=obj)

    return Frame(
        index=index,
        t=t,
        detections=tuple(detections),
        relations=tuple(relations),
        depth_ref=depth_ref,
        depth_path=depth_path,
        pose=pose,
        lang_hidden=lang,
        expert=expert,
    )


def load_trace(
    path: Union[str, Path],
    lang_dim: Optional[int] = None,
    camera: Optional[CameraConfig] = None,
) -> DetectionTrace:
    """Read and validate a JSON Lines detection trace.

    All checks run eagerly: feature dimensions, relation bounds, depth file
    existence, ``t`` ordering, and (when ``camera`` is given) bbox bounds.

    Args:
        path: Trace file; depth references resolve against its directory.
        lang_dim: Expected ``lang_hidden`` length, if known.
        camera: Image size used to check boxes.

    Raises:
        FileNotFoundError: The trace or a depth file is missing.
        ValueError: Schema mismatch or an invalid frame (message names the frame).

    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"schema mismatch: {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"schema mismatch: bad header in {path}: {exc}") from exc
    if (
        not isinstance(header, dict)
        or header.get("format") != TRACE_FORMAT
        or header.get("version") != TRACE_VERSION
    ):
        raise ValueError(
            f"schema mismatch: expected header {{'format': '{TRACE_FORMAT}', "
            f"'version': {TRACE_VERSION}}}, got {header!r}"
        )

    frames: List[Frame] = []
    for index, line in enumerate(lines[1:]):
        try:
            raw = json.loads(line)
            if not isinstance(raw, dict):
                raise ValueError("frame must be a JSON object")
            frame = _parse_frame(raw, index, path.parent, camera)
        except json.JSONDecodeError as exc:
            raise ValueError(f"frame {index}: invalid JSON: {exc}") from exc
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"frame {index}: {exc}") from exc
        except (ValueError, TypeError) as exc:
            raise ValueError(f"frame {index}: {exc}") from exc

        expected_t = 0 if not frames else frames[-1].t + 1
        if (not frames and frame.t != 0) or (frames and frame.t < expected_t):
            raise ValueError(
                f"frame {index}: non-monotonic timestep t={frame.t} "
                f"(previous {frames[-1].t if frames else 'none'})"
            )
        width = lang_dim if lang_dim is not None else (frames[0].lang_hidden.shape[0] if frames else None)
        if width is not None and frame.lang_hidden.shape[0] != width:
            raise ValueError(
                f"frame {index}: dimension mismatch: lang_hidden has "
                f"{frame.lang_hidden.shape[0]} values, expected {width}"
            )
        frames.append(frame)

    logger.info("loaded trace with %d frames", len(frames))
    return DetectionTrace(frames=tuple(frames))


# -----------------------------------------------------------------------------
# Engine state and snapshots
# -----------------------------------------------------------------------------
def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _unb64(text: str, shape: Tuple[int, ...]) -> np.ndarray:
    data = np.frombuffer(base64.b64decode(text), dtype="<f8")
    return data.reshape(shape).astype(np.float64)


def graph_to_dict(graph: SemanticGraph) -> Dict[str, Any]:
    """Serialise a semantic graph (features as base64 little-endian float64)."""
    return {
        "role": graph.role.value,
        "class_ids": graph.class_ids.tolist(),
        "features": _b64(graph.features),
        "edges": [list(e) for e in graph.edges()],
    }


def graph_from_dict(data: Dict[str, Any]) -> SemanticGraph:
    """Inverse of :func:`graph_to_dict`."""
    class_ids = np.asarray(data["class_ids"], dtype=np.int64)
    n = class_ids.shape[0]
    adjacency = np.zeros((n, n), dtype=np.uint8)
    for src, dst in data["edges"]:
        adjacency[dst, src] = 1
    return SemanticGraph(
        role=GraphRole(data["role"]),
        class_ids=class_ids,
        features=_unb64(data["features"], (n, NODE_DIM)),
        adjacency=adjacency,
    )


def map_to_dict(spatial_map: SpatialSemanticMap) -> Dict[str, Any]:
    """Serialise the map geometry and its occupied cells in ``(i, j, layer)`` order."""
    return {
        "size": spatial_map.size,
        "layers": spatial_map.layers,
        "cell_size": spatial_map.cell_size,
        "cells": [
            {"i": i, "j": j, "layer": k, "feature": _b64(spatial_map.occupancy[(i, j, k)])}
            for i, j, k in sorted(spatial_map.occupancy)
        ],
    }


def map_from_dict(data: Dict[str, Any]) -> SpatialSemanticMap:
    """Inverse of :func:`map_to_dict`."""
    base = init_map(int(data["size"]), int(data["layers"]), float(data["cell_size"]))
    occupancy = {}
    for cell in data["cells"]:
        feature = _unb64(cell["feature"], (NODE_DIM,))
        feature.setflags(write=False)
        occupancy[(int(cell["i"]), int(cell["j"]), int(cell["layer"]))] = feature
    return SpatialSemanticMap(
        size=base.size, layers=base.layers, cell_size=base.cell_size, occupancy=occupancy
    )


def _pose_to_dict(pose: Optional[AgentPose]) -> Optional[Dict[str, float]]:
    if pose is None:
        return None
    return {"x": pose.x, "z": pose.z, "yaw": pose.yaw}


def _pose_from_dict(data: Optional[Dict[str, Any]]) -> Optional[AgentPose]:
    if data is None:
        return None
    return AgentPose(x=float(data["x"]), z=float(data["z"]), yaw=float(data["yaw"]))


@dataclass(frozen=True, eq=False)
class EngineState:
    """Everything carried between steps.

    Attributes:
        prior: Static Prior graph.
        global_graph: Accumulated Global graph.
        current: Current graph of the last processed frame.
        spatial_map: Persistent layered map.
        step: Frames processed so far.
        last_t: ``t`` of the last processed frame (``None`` before the first).
        config_digest: Digest of the configuration that produced this state.
        origin: Pose of the first processed frame; the map is anchored to it.

    """

    prior: SemanticGraph
    global_graph: SemanticGraph
    current: SemanticGraph
    spatial_map: SpatialSemanticMap
    step: int
    last_t: Optional[int]
    config_digest: str
    origin: Optional[AgentPose] = None

    def to_dict(self) -> Dict[str, Any]:
        """Versioned snapshot mapping; the prior graph is stored by digest only."""
        return {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "config_digest": self.config_digest,
            "step": self.step,
            "last_t": self.last_t,
            "origin": _pose_to_dict(self.origin),
            "prior_digest": self.prior.digest(),
            "current": graph_to_dict(self.current),
            "global": graph_to_dict(self.global_graph),
            "map": map_to_dict(self.spatial_map),
        }

    def to_json(self) -> str:
        """Canonical snapshot JSON."""
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        """sha256 of :meth:`to_json`."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def save_snapshot(state: EngineState, path: Union[str, Path]) -> Path:
    """Write ``state`` as canonical JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(state.to_json() + "\n", encoding="utf-8")
    return path


def read_snapshot(path: Union[str, Path]) -> Dict[str, Any]:
    """Load and version-check a snapshot file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"snapshot not found: {path}")
    data = json.loads(path.read_text(encoding="utf-8"))
    if data.get("format") != SNAPSHOT_FORMAT or data.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"schema mismatch: {path} is not a version {SNAPSHOT_VERSION} snapshot")
    return data


# -----------------------------------------------------------------------------
# Engine
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class StepOutput:
    """What one step produced."""

    step: int
    t: int
    current: SemanticGraph
    embedding: EmbeddingResult
    p_a: np.ndarray
    p_c: np.ndarray
    action: ActionLabel
    object_index: int
    state_digest: str

    def record(self, state: EngineState, object_names: Optional[Sequence[str]] = None) -> Dict[str, Any]:
        """JSON-ready per-step summary."""
        out: Dict[str, Any] = {
            "step": self.step,
            "t": self.t,
            "current_nodes": self.current.num_nodes,
            "current_edges": self.current.num_edges,
            "global_nodes": state.global_graph.num_nodes,
            "global_edges": state.global_graph.num_edges,
            "map_occupied": state.spatial_map.occupied_count,
            "action": self.action.name,
            "action_index": self.action.index,
            "object_index": self.object_index,
            "p_action": self.p_a.tolist(),
            "p_object": self.p_c.tolist(),
            "alpha": self.embedding.alphas(),
            "state_digest": self.state_digest,
        }
        if object_names is not None:
            out["object_name"] = object_names[self.object_index]
        return out


class Engine:
    """Runs the per-step pipeline for one configuration.

    The feature bank, Prior graph, and weights are loaded once and shared by
    every state the engine produces.
    """

    def __init__(
        self,
        config: RunConfig,
        bank: Optional[FeatureBank] = None,
        weights: Optional[WeightSet] = None,
    ) -> None:
        config.validate(require_paths=bank is None)
        self.config = config
        self.bank = bank or load_vocab(
            config.class_file,
            config.embedding_file,
            config.attribute_file,
            num_classes=config.map_layers,
        )
        self.weights = weights or build_weight_set(
            config.graphs,
            config.gcn_hidden,
            config.readout_dim,
            config.lang_dim,
            seed=config.seed,
            weights_path=config.weights_path,
        )
        self.prior = build_prior_graph(config.relation_kb, self.bank)
        self.camera = config.camera
        self.object_names = (
            load_object_names(config.object_names) if config.object_names else None
        )
        self.config_digest = config.digest()

    def initial_state(self) -> EngineState:
        """State before the first frame."""
        return EngineState(
            prior=self.prior,
            global_graph=SemanticGraph.empty(GraphRole.GLOBAL),
            current=SemanticGraph.empty(GraphRole.CURRENT),
            spatial_map=init_map(self.config.map_size, self.config.map_layers, self.config.cell_size),
            step=0,
            last_t=None,
            config_digest=self.config_digest,
        )

    def restore(self, snapshot: Union[str, Path, Dict[str, Any]]) -> EngineState:
        """Rebuild a state from a snapshot written under the same configuration.

        Raises:
            ValueError: Different configuration digest or Prior graph, or a
                missing map origin.

        """
        data = snapshot if isinstance(snapshot, dict) else read_snapshot(snapshot)
        if data["config_digest"] != self.config_digest:
            raise ValueError("snapshot was written with a different configuration")
        if data["prior_digest"] != self.prior.digest():
            raise ValueError("snapshot prior graph does not match the configured vocabulary")
        if data["step"] and data.get("origin") is None:
            raise ValueError("schema mismatch: snapshot has no map origin")
        return EngineState(
            prior=self.prior,
            global_graph=graph_from_dict(data["global"]),
            current=graph_from_dict(data["current"]),
            spatial_map=map_from_dict(data["map"]),
            step=int(data["step"]),
            last_t=data["last_t"],
            config_digest=self.config_digest,
            origin=_pose_from_dict(data.get("origin")),
        )

    def _advance(self, state: EngineState, frame: Frame) -> Tuple[EngineState, StepOutput]:
        cfg = self.config
        current = update_current_graph(frame.detections, frame.relations, self.bank)
        if cfg.global_mode == "jaccard":
            global_graph = update_global_graph_jaccard(
                state.global_graph, state.current, current, cfg.threshold, cfg.same_class_only
            )
        else:
            global_graph = update_global_graph(
                state.global_graph, current, cfg.threshold, cfg.same_class_only
            )

        origin = state.origin
        if origin is None:
            origin = AgentPose(x=frame.pose.x, z=frame.pose.z, yaw=frame.pose.yaw)
        spatial_map = state.spatial_map
        if frame.detections:
            depth = DepthImage(read_depth_pgm(frame.depth_path))
            spatial_map = update_map(
                spatial_map,
                frame.detections,
                depth,
                frame.pose,
                self.bank,
                self.camera,
                cfg.pixel_stride,
                origin=origin,
            )

        embedding = embed_all(
            state.prior, current, global_graph, spatial_map, frame.lang_hidden, self.weights
        )
        p_a, p_c = head_forward(
            np.concatenate([embedding.vector, frame.lang_hidden]), self.weights.heads
        )
        action, obj = select_action(p_a, p_c)

        new_state = EngineState(
            prior=state.prior,
            global_graph=global_graph,
            current=current,
            spatial_map=spatial_map,
            step=state.step + 1,
            last_t=frame.t,
            config_digest=state.config_digest,
            origin=origin,
        )
        output = StepOutput(
            step=new_state.step,
            t=frame.t,
            current=current,
            embedding=embedding,
            p_a=p_a,
            p_c=p_c,
            action=action,
            object_index=obj,
            state_digest=new_state.digest(),
        )
        return new_state, output

    def step(self, state: EngineState, frame: Frame) -> Tuple[EngineState, StepOutput]:
        """Process one frame; errors are re-raised naming the frame."""
        try:
            return self._advance(state, frame)
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"frame {frame.index} (t={frame.t}): {exc}") from exc
        except ValueError as exc:
            raise ValueError(f"frame {frame.index} (t={frame.t}): {exc}") from exc

    def replay(
        self, trace: DetectionTrace, state: Optional[EngineState] = None
    ) -> Iterator[Tuple[Frame, EngineState, StepOutput]]:
        """Step through the frames of ``trace`` newer than ``state.last_t``."""
        state = state or self.initial_state()
        for frame in trace.frames:
            if state.last_t is not None and frame.t <= state.last_t:
                continue
            state, output = self.step(state, frame)
            yield frame, state, output


# -----------------------------------------------------------------------------
# Run
# -----------------------------------------------------------------------------
@dataclass
class RunReport:
    """Result of :func:`run`: the report mapping and the final state."""

    report: Dict[str, Any]
    final_state: EngineState
    loss: Optional[LossReport] = None
    outputs: List[StepOutput] = field(default_factory=list)

    @property
    def steps(self) -> List[Dict[str, Any]]:
        """Per-step records."""
        return self.report["steps"]


def evaluate_loss(engine: Engine, trace: DetectionTrace) -> LossReport:
    """Replay ``trace`` without writing anything and score the labelled frames.

    Raises:
        ValueError: No frame carries expert labels.

    """
    if not trace.has_labels:
        raise ValueError("trace has no expert labels")
    steps, ts = [], []
    for frame, _state, out in engine.replay(trace):
        if frame.expert is not None:
            steps.append(TrajectoryStep.from_labels(frame.expert.action, frame.expert.object, out.p_a, out.p_c))
            ts.append(frame.t)
    return loss_report(steps, ts)


def run(
    trace: Union[str, Path, DetectionTrace],
    config: RunConfig,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
    progress_callback: Optional[Callable[[int], None]] = None,
    engine: Optional[Engine] = None,
) -> RunReport:
    """Replay a trace and write report, step table, snapshots, and optional extras.

    Outputs under ``out_dir``: ``report.json``, ``steps.csv``,
    ``snapshots/step_NNNN.json`` every ``snapshot_every`` steps,
    ``snapshots/final.json``, and when enabled ``embeddings/step_NNNN.json``
    and ``renders/``. Nothing time- or location-dependent is written.

    Args:
        trace: Trace path or a loaded trace.
        config: Run configuration.
        out_dir: Output directory (created).
        resume: Snapshot to continue from; frames up to its ``t`` are skipped.
        progress_callback: Called with an integer percentage.
        engine: Prebuilt engine (defaults to one built from ``config``).

    """
    engine = engine or Engine(config)
    if not isinstance(trace, DetectionTrace):
        trace = load_trace(trace, lang_dim=config.lang_dim, camera=config.camera)
    elif trace.lang_dim not in (None, config.lang_dim):
        raise ValueError(
            f"dimension mismatch: trace lang_hidden has {trace.lang_dim} values, "
            f"expected {config.lang_dim}"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    state = engine.restore(resume) if resume is not None else engine.initial_state()
    start_step = state.step
    pending = sum(1 for f in trace.frames if state.last_t is None or f.t > state.last_t)
    if progress_callback is not None:
        progress_callback(0)

    records: List[Dict[str, Any]] = []
    outputs: List[StepOutput] = []
    labelled: List[TrajectoryStep] = []
    labelled_t: List[int] = []
    for done, (frame, state, out) in enumerate(engine.replay(trace, state), start=1):
        record = out.record(state, engine.object_names)
        if frame.expert is not None:
            ts = TrajectoryStep.from_labels(frame.expert.action, frame.expert.object, out.p_a, out.p_c)
            a, c = ts.terms()
            record["expert"] = {"action": frame.expert.action, "object": frame.expert.object}
            record["loss"] = a + c
            labelled.append(ts)
            labelled_t.append(frame.t)
        records.append(record)
        outputs.append(out)

        if config.snapshot_every and state.step % config.snapshot_every == 0:
            save_snapshot(state, out_dir / "snapshots" / f"step_{state.step:04d}.json")
        if config.dump_embeddings:
            write_json(out_dir / "embeddings" / f"step_{state.step:04d}.json", embedding_dump(out.embedding))
        if progress_callback is not None and pending:
            progress_callback(min(int(100 * done / pending), 99))

    save_snapshot(state, out_dir / "snapshots" / "final.json")
    if config.render:
        write_map_pgms(state.spatial_map, out_dir / "renders")

    report: Dict[str, Any] = {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "config_digest": engine.config_digest,
        "seed": config.seed,
        "global_mode": config.global_mode,
        "threshold": config.threshold,
        "graphs": list(config.graphs),
        "weights_overridden": list(engine.weights.overridden),
        "frames": len(trace),
        "steps": records,
        "final": {
            "step": state.step,
            "global_nodes": state.global_graph.num_nodes,
            "global_edges": state.global_graph.num_edges,
            "map_occupied": state.spatial_map.occupied_count,
            "state_digest": state.digest(),
        },
    }
    if resume is not None:
        report["resumed_from_step"] = start_step
    loss = None
    if labelled:
        loss = loss_report(labelled, labelled_t)
        report["loss"] = loss.to_dict()

    write_json(out_dir / "report.json", report)
    _write_steps_csv(out_dir / "steps.csv", records)
    if progress_callback is not None:
        progress_callback(100)
    logger.info("replayed %d frames into %s", len(records), out_dir.name)
    return RunReport(report=report, final_state=state, loss=loss, outputs=outputs)


def _write_steps_csv(path: Path, records: Sequence[Dict[str, Any]]) -> None:
    columns = [
        "step",
        "t",
        "current_nodes",
        "current_edges",
        "global_nodes",
        "global_edges",
        "map_occupied",
        "action",
        "object_index",
    ]
    df = pd.DataFrame([{k: r[k] for k in columns} for r in records], columns=columns)
    df["p_action"] = [max(r["p_action"]) for r in records]
    df["p_object"] = [max(r["p_object"]) for r in records]
    if any("loss" in r for r in records):
        df["loss"] = [r.get("loss") for r in records]
    df.to_csv(path, index=False, lineterminator="\n")
