"""Run configuration: a declarative field table, file loading, and argparse wiring.

:data:`CONFIG_SPEC` is the single source of truth for every option. Each entry
names the dataclass field (``key``), its command-line ``flag``, a ``type`` tag,
optional bounds or choices, and the default. The same table drives validation,
the argument parser, and config-file checking.

Precedence is ``defaults < config file (YAML or JSON) < command-line flags``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from .spatial_map import CameraConfig

logger = logging.getLogger(__name__)

GRAPH_ROLES = ("prior", "current", "global", "map")

# -----------------------------------------------------------------------------
# Option table
# -----------------------------------------------------------------------------
CONFIG_SPEC: List[Dict[str, Any]] = [
    {
        "group": "Global graph",
        "key": "threshold",
        "flag": "--threshold",
        "type": "float",
        "min": 0.0,
        "max": 1.0,
        "default": 0.9,
        "help": "Cosine similarity below which a node counts as new",
    },
    {
        "group": "Global graph",
        "key": "global_mode",
        "flag": "--global-mode",
        "type": "choice",
        "choices": ["cosine", "jaccard"],
        "default": "cosine",
        "help": "Per-frame cosine dedup, or dedup gated by class-set change",
    },
    {
        "group": "Global graph",
        "key": "same_class_only",
        "flag": "--same-class-only",
        "type": "bool",
        "default": True,
        "help": "Compare only against global nodes of the same class",
    },
    {
        "group": "Map",
        "key": "map_size",
        "flag": "--map-size",
        "type": "int",
        "min": 1,
        "max": 1000,
        "default": 10,
        "help": "Cells per map side",
    },
    {
        "group": "Map",
        "key": "map_layers",
        "flag": "--map-layers",
        "type": "int",
        "min": 1,
        "max": 10000,
        "default": 106,
        "help": "Map layers (one per object class)",
    },
    {
        "group": "Map",
        "key": "cell_size",
        "flag": "--cell-size",
        "type": "float",
        "min": 1e-6,
        "max": 1e6,
        "default": 0.25,
        "help": "Metres per map cell",
    },
    {
        "group": "Camera",
        "key": "fov",
        "flag": "--fov",
        "type": "float",
        "min": 1e-6,
        "max": 179.999,
        "default": 90.0,
        "help": "Horizontal field of view in degrees",
    },
    {
        "group": "Camera",
        "key": "image_width",
        "flag": "--image-width",
        "type": "int",
        "min": 1,
        "max": 100000,
        "default": 300,
    },
    {
        "group": "Camera",
        "key": "image_height",
        "flag": "--image-height",
        "type": "int",
        "min": 1,
        "max": 100000,
        "default": 300,
    },
    {
        "group": "Camera",
        "key": "pixel_stride",
        "flag": "--pixel-stride",
        "type": "int",
        "min": 1,
        "max": 10000,
        "default": 1,
        "help": "Sample every n-th bbox pixel when projecting",
    },
    {
        "group": "Network",
        "key": "gcn_hidden",
        "flag": "--gcn-hidden",
        "type": "ints",
        "min": 1,
        "max": 100000,
        "default": (128, 128),
        "help": "Output width of each GCN layer",
    },
    {
        "group": "Network",
        "key": "readout_dim",
        "flag": "--readout-dim",
        "type": "int",
        "min": 1,
        "max": 100000,
        "default": 128,
    },
    {
        "group": "Network",
        "key": "lang_dim",
        "flag": "--lang-dim",
        "type": "int",
        "min": 1,
        "max": 100000,
        "default": 512,
        "help": "Length of the per-frame language hidden state",
    },
    {
        "group": "Network",
        "key": "graphs",
        "flag": "--graphs",
        "type": "choices",
        "choices": list(GRAPH_ROLES),
        "default": GRAPH_ROLES,
        "help": "Graphs fed to the heads",
    },
    {
        "group": "Network",
        "key": "seed",
        "flag": "--seed",
        "type": "int",
        "min": 0,
        "max": 2**32 - 1,
        "default": 0,
        "help": "Seed for generated weights",
    },
    {
        "group": "Network",
        "key": "weights_path",
        "flag": "--weights",
        "type": "path_in",
        "default": None,
        "help": "Optional .npz/.json overriding named weight matrices",
    },
    {
        "group": "Vocabulary",
        "key": "class_file",
        "flag": "--class-file",
        "type": "path_in",
        "required": True,
        "default": None,
        "help": "CSV id,name of the object classes",
    },
    {
        "group": "Vocabulary",
        "key": "embedding_file",
        "flag": "--embedding-file",
        "type": "path_in",
        "required": True,
        "default": None,
        "help": "TSV name, 300 floats",
    },
    {
        "group": "Vocabulary",
        "key": "attribute_file",
        "flag": "--attribute-file",
        "type": "path_in",
        "default": None,
        "help": "Optional CSV id,a0..a22 of class attribute priors",
    },
    {
        "group": "Vocabulary",
        "key": "relation_kb",
        "flag": "--relation-kb",
        "type": "path_in",
        "default": None,
        "help": "Optional CSV src_id,dst_id of prior relations",
    },
    {
        "group": "Vocabulary",
        "key": "object_names",
        "flag": "--object-names",
        "type": "path_in",
        "default": None,
        "help": "Optional CSV id,name for the 119 object-head indices",
    },
    {
        "group": "Output",
        "key": "snapshot_every",
        "flag": "--snapshot-every",
        "type": "int",
        "min": 0,
        "max": 10**9,
        "default": 0,
        "help": "Write a snapshot every n steps (0 = final only)",
    },
    {
        "group": "Output",
        "key": "render",
        "flag": "--render",
        "type": "bool",
        "default": False,
        "help": "Write map PGMs of the final state",
    },
    {
        "group": "Output",
        "key": "dump_embeddings",
        "flag": "--dump-embeddings",
        "type": "bool",
        "default": False,
        "help": "Write per-step graph embeddings and attention",
    },
]

_SPEC_BY_KEY = {s["key"]: s for s in CONFIG_SPEC}
_PATH_KEYS = tuple(s["key"] for s in CONFIG_SPEC if s["type"] == "path_in")
#: Fields that change what is written but not what is computed.
OUTPUT_ONLY_KEYS = ("snapshot_every", "render", "dump_embeddings")


def _default(key: str) -> Any:
    return _SPEC_BY_KEY[key]["default"]


# -----------------------------------------------------------------------------
# Dataclass
# -----------------------------------------------------------------------------
@dataclass(frozen=True)
class RunConfig:
    """Validated, immutable run configuration (see :data:`CONFIG_SPEC`)."""

    threshold: float = _default("threshold")
    global_mode: str = _default("global_mode")
    same_class_only: bool = _default("same_class_only")
    map_size: int = _default("map_size")
    map_layers: int = _default("map_layers")
    cell_size: float = _default("cell_size")
    fov: float = _default("fov")
    image_width: int = _default("image_width")
    image_height: int = _default("image_height")
    pixel_stride: int = _default("pixel_stride")
    gcn_hidden: Tuple[int, ...] = _default("gcn_hidden")
    readout_dim: int = _default("readout_dim")
    lang_dim: int = _default("lang_dim")
    graphs: Tuple[str, ...] = _default("graphs")
    seed: int = _default("seed")
    weights_path: Optional[str] = _default("weights_path")
    class_file: Optional[str] = _default("class_file")
    embedding_file: Optional[str] = _default("embedding_file")
    attribute_file: Optional[str] = _default("attribute_file")
    relation_kb: Optional[str] = _default("relation_kb")
    object_names: Optional[str] = _default("object_names")
    snapshot_every: int = _default("snapshot_every")
    render: bool = _default("render")
    dump_embeddings: bool = _default("dump_embeddings")

    def __post_init__(self) -> None:
        for f in fields(self):
            spec = _SPEC_BY_KEY[f.name]
            object.__setattr__(self, f.name, _coerce(spec, getattr(self, f.name)))

    def validate(self, require_paths: bool = True) -> "RunConfig":
        """Check required files exist; return ``self`` for chaining.

        Raises:
            ValueError: A required path is unset.
            FileNotFoundError: A configured file is missing.

        """
        for key in _PATH_KEYS:
            value = getattr(self, key)
            if value is None:
                if require_paths and _SPEC_BY_KEY[key].get("required"):
                    raise ValueError(f"{key} is required")
                continue
            if not Path(value).exists():
                raise FileNotFoundError(f"{key} not found: {value}")
        return self

    @property
    def camera(self) -> CameraConfig:
        """Pinhole camera described by the camera fields."""
        return CameraConfig(width=self.image_width, height=self.image_height, fov=self.fov)

    def to_dict(self) -> Dict[str, Any]:
        """Plain mapping with lists in place of tuples."""
        out = asdict(self)
        for key in ("gcn_hidden", "graphs"):
            out[key] = list(out[key])
        return out

    def digest(self) -> str:
        """sha256 over computation-relevant fields and the contents of referenced files.

        Output-only fields and path spellings are excluded, so the same inputs
        reached through different paths share a digest.
        """
        payload = {
            k: v
            for k, v in self.to_dict().items()
            if k not in OUTPUT_ONLY_KEYS and k not in _PATH_KEYS
        }
        for key in _PATH_KEYS:
            value = getattr(self, key)
            payload[key] = None if value is None else _file_sha256(value)
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _coerce(spec: Dict[str, Any], value: Any) -> Any:
    """Convert ``value`` to the spec's type and check bounds/choices."""
    key, t = spec["key"], spec["type"]
    if t == "bool":
        if not isinstance(value, bool):
            raise ValueError(f"{key} must be true or false, got {value!r}")
        return value
    if t == "path_in":
        return None if value in (None, "") else str(value)
    if t == "choice":
        if value not in spec["choices"]:
            raise ValueError(f"{key} must be one of {spec['choices']}, got {value!r}")
        return value
    if t == "choices":
        items = [value] if isinstance(value, str) else list(value)
        bad = [v for v in items if v not in spec["choices"]]
        if bad or not items:
            raise ValueError(f"{key} must be a non-empty subset of {spec['choices']}, got {items}")
        if len(set(items)) != len(items):
            raise ValueError(f"{key} lists a value twice: {items}")
        return tuple(c for c in spec["choices"] if c in items)
    if t == "ints":
        items = [value] if isinstance(value, int) else list(value)
        if not items:
            raise ValueError(f"{key} must list at least one value")
        return tuple(_bounded(spec, _as_int(key, v)) for v in items)
    if t == "int":
        return _bounded(spec, _as_int(key, value))
    if t == "float":
        if isinstance(value, bool):
            raise ValueError(f"{key} must be a number, got {value!r}")
        try:
            num = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key} must be a number, got {value!r}") from None
        if key == "threshold" and not (spec["min"] <= num <= spec["max"]):
            raise ValueError(f"threshold out of range: {num} (expected [0, 1])")
        return _bounded(spec, num)
    raise ValueError(f"unknown option type {t!r} for {key}")


def _as_int(key: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f"{key} must be an integer, got {value!r}")
    if isinstance(value, float) and not value.is_integer():
        raise ValueError(f"{key} must be an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError(f"{key} must be an integer, got {value!r}") from None


def _bounded(spec: Dict[str, Any], value):
    lo, hi = spec.get("min"), spec.get("max")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ValueError(f"{spec['key']} must lie in [{lo}, {hi}], got {value}")
    return value


# -----------------------------------------------------------------------------
# Files and flags
# -----------------------------------------------------------------------------
def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read a YAML or JSON mapping of field names.

    Relative file paths inside it are resolved against the file's directory.

    Raises:
        FileNotFoundError: ``path`` does not exist.
        ValueError: Not a mapping, or an unknown key.

    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping")
    unknown = sorted(set(data) - set(_SPEC_BY_KEY))
    if unknown:
        raise ValueError(f"unknown config keys in {path}: {unknown}")
    for key in _PATH_KEYS:
        value = data.get(key)
        if value not in (None, "") and not Path(value).is_absolute():
            data[key] = str(path.parent / value)
    return data


def load_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge defaults, an optional config file, and overrides into a :class:`RunConfig`."""
    values: Dict[str, Any] = {}
    if config_path is not None:
        values.update(read_config_file(config_path))
    if overrides:
        unknown = sorted(set(overrides) - set(_SPEC_BY_KEY))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        values.update(overrides)
    logger.debug("config keys set: %s", sorted(values))
    return RunConfig(**values)


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Add one flag per :data:`CONFIG_SPEC` entry, grouped as in the table.

    Flags default to ``argparse.SUPPRESS`` so that only options actually given
    on the command line override the config file.
    """
    groups: Dict[str, Any] = {}
    for spec in CONFIG_SPEC:
        group = groups.get(spec["group"])
        if group is None:
            group = groups[spec["group"]] = parser.add_argument_group(spec["group"])
        kwargs: Dict[str, Any] = {
            "dest": spec["key"],
            "default": argparse.SUPPRESS,
            "help": _help_text(spec),
        }
        t = spec["type"]
        if t == "bool":
            kwargs["action"] = argparse.BooleanOptionalAction
        elif t == "int":
            kwargs["type"] = int
        elif t == "float":
            kwargs["type"] = float
        elif t == "choice":
            kwargs["choices"] = spec["choices"]
        elif t == "choices":
            kwargs["nargs"] = "+"
            kwargs["choices"] = spec["choices"]
        elif t == "ints":
            kwargs["nargs"] = "+"
            kwargs["type"] = int
        group.add_argument(spec["flag"], **kwargs)


def _help_text(spec: Dict[str, Any]) -> str:
    text = spec.get("help", spec["key"].replace("_", " "))
    default = spec.get("default")
    if isinstance(default, tuple):
        default = " ".join(str(d) for d in default)
    if default is not None:
        text += f" (default: {default})"
    return text


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Pick the config fields present on a parsed namespace."""
    return {key: getattr(args, key) for key in _SPEC_BY_KEY if hasattr(args, key)}
