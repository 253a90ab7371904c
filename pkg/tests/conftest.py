import json
from pathlib import Path

import numpy as np
import pytest

from vsgm.config import RunConfig
from vsgm.feature_bank import (
    ATTRIBUTE_DIM,
    NUM_CLASSES,
    VISUAL_DIM,
    WORD_DIM,
    FeatureBank,
    ObjectClass,
)
from vsgm.imaging import write_depth_pgm

# Small network so full replays stay fast.
SMALL_NET = {"gcn_hidden": [16, 16], "readout_dim": 8, "lang_dim": 8}


def basis(k, dim=VISUAL_DIM):
    """Unit vector ``e_k``."""
    v = np.zeros(dim)
    v[k] = 1.0
    return v


def make_bank(embeddings=None, attribute_priors=None):
    """Bank of 106 classes named ``obj<i>`` (zero embeddings unless given)."""
    classes = tuple(ObjectClass(id=i, name=f"obj{i}") for i in range(NUM_CLASSES))
    if embeddings is None:
        embeddings = np.zeros((NUM_CLASSES, WORD_DIM))
    if attribute_priors is None:
        attribute_priors = np.zeros((NUM_CLASSES, ATTRIBUTE_DIM))
    return FeatureBank(classes=classes, embeddings=embeddings, attribute_priors=attribute_priors)


@pytest.fixture
def zero_bank():
    """Feature bank whose word embeddings are all zero."""
    return make_bank()


@pytest.fixture
def small_config():
    """Config with a small network and no vocabulary paths (bank is injected)."""
    return RunConfig(**SMALL_NET)


@pytest.fixture
def vocab_files(tmp_path):
    """Class CSV and embedding TSV for 106 classes with seeded embeddings."""
    rng = np.random.default_rng(123)
    vocab = tmp_path / "vocab"
    vocab.mkdir()
    class_file = vocab / "classes.csv"
    class_file.write_text(
        "id,name\n" + "".join(f"{i},obj{i}\n" for i in range(NUM_CLASSES)), encoding="utf-8"
    )
    embedding_file = vocab / "embeddings.tsv"
    rows = []
    for i in range(NUM_CLASSES):
        vec = np.round(rng.normal(size=WORD_DIM), 4)
        rows.append("\t".join([f"obj{i}"] + [repr(float(x)) for x in vec]))
    embedding_file.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return class_file, embedding_file


@pytest.fixture
def file_config(vocab_files):
    """Config backed by the on-disk vocabulary files."""
    class_file, embedding_file = vocab_files
    return RunConfig(class_file=str(class_file), embedding_file=str(embedding_file), **SMALL_NET)


def detection(class_id, visual, bbox=(140, 140, 160, 160), attributes=None):
    """JSON-ready detection record."""
    if attributes is None:
        attributes = np.zeros(ATTRIBUTE_DIM)
    return {
        "class_id": int(class_id),
        "visual": [float(x) for x in visual],
        "attributes": [float(x) for x in attributes],
        "bbox": list(bbox),
    }


class TraceWriter:
    """Writes JSON Lines traces plus their depth PGMs into one directory."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)

    def depth(self, name="depth.pgm", metres=1.5, shape=(300, 300)):
        path = self.root / name
        if not path.exists():
            write_depth_pgm(path, np.full(shape, metres))
        return name

    def frame(
        self,
        t,
        detections=(),
        relations=(),
        depth=None,
        pose=None,
        lang=None,
        expert=None,
        lang_dim=8,
    ):
        rec = {
            "t": t,
            "detections": list(detections),
            "relations": [list(r) for r in relations],
            "depth": depth or self.depth(),
            "pose": pose or {"x": 0.0, "z": 0.0, "yaw": 0.0, "pitch": 0.0},
            "lang_hidden": list(lang) if lang is not None else [0.1 * (k + 1) for k in range(lang_dim)],
        }
        if expert is not None:
            rec["expert"] = expert
        return rec

    def write(self, frames, name="trace.jsonl", header=None):
        path = self.root / name
        header = header or {"format": "vsgm-trace", "version": 1}
        lines = [json.dumps(header)] + [json.dumps(f) for f in frames]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


@pytest.fixture
def trace_writer(tmp_path):
    """Factory for traces under ``tmp_path / 'trace'``."""
    return TraceWriter(tmp_path / "trace")


def dedup_frames(writer):
    """Five frames: 1 and 3 repeat objects of frame 0; 2 adds a same-class object; 3 a new class."""
    a = detection(1, basis(0))
    b = detection(2, basis(1))
    c = detection(1, basis(2))
    d = detection(3, basis(3))
    return [
        writer.frame(0, [a, b], relations=[(0, 1)]),
        writer.frame(1, [a, c], relations=[(0, 1)]),
        writer.frame(2, [a, b]),
        writer.frame(3, [d]),
        writer.frame(4, [a, b]),
    ]


@pytest.fixture
def golden_trace(trace_writer):
    """Seeded 20-frame trace with repeats, moving poses, and expert labels."""
    rng = np.random.default_rng(2024)
    pool = [(int(rng.integers(0, 12)), np.round(rng.normal(size=VISUAL_DIM), 3)) for _ in range(8)]
    trace_writer.depth("near.pgm", metres=1.0)
    trace_writer.depth("far.pgm", metres=2.0)
    frames = []
    for t in range(20):
        picks = rng.choice(len(pool), size=int(rng.integers(0, 4)), replace=False)
        dets = []
        for p in picks:
            cid, vis = pool[p]
            x0, y0 = int(rng.integers(0, 260)), int(rng.integers(0, 260))
            dets.append(detection(cid, vis, bbox=(x0, y0, x0 + 20, y0 + 20)))
        rels = [(k, k + 1) for k in range(len(dets) - 1)]
        pose = {
            "x": round(float(rng.uniform(-0.5, 0.5)), 3),
            "z": round(float(rng.uniform(-0.5, 0.5)), 3),
            "yaw": float(rng.choice([0.0, 90.0, 180.0, 270.0])),
            "pitch": float(rng.choice([0.0, 30.0])),
        }
        frames.append(
            trace_writer.frame(
                t,
                dets,
                relations=rels,
                depth="near.pgm" if t % 2 else "far.pgm",
                pose=pose,
                lang=np.round(rng.normal(size=8), 3).tolist(),
                expert={"action": int(rng.integers(0, 13)), "object": int(rng.integers(0, 119))},
            )
        )
    return trace_writer.write(frames, name="golden.jsonl")
