"""Command-line surface: ``vsgm replay | export | loss | actions``.

Every ``cmd_*`` function returns a process exit code and never raises; errors
are logged and mapped to a nonzero status. Verbosity comes from ``-v`` or the
``VSGM_LOG`` environment variable (level name or number).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Union

from .config import RunConfig, add_config_arguments, load_config, overrides_from_args
from .export import (
    EXPORT_FORMATS,
    graph_to_dot,
    graph_to_json,
    map_to_json,
    write_json,
    write_map_pgms,
)
from .feature_bank import load_vocab
from .heads_loss import actions_json
from .trace_replay import (
    Engine,
    evaluate_loss,
    graph_from_dict,
    load_trace,
    map_from_dict,
    read_snapshot,
    run,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"
EXPORT_GRAPHS = ("global", "current", "map")


def configure_logging(verbose: int = 0) -> int:
    """Configure the root logger on stderr and return the chosen level."""
    if verbose:
        level = logging.INFO if verbose == 1 else logging.DEBUG
    else:
        env = os.environ.get("VSGM_LOG", "").strip()
        if not env:
            level = logging.WARNING
        elif env.isdigit():
            level = int(env)
        else:
            level = logging.getLevelName(env.upper())
            if not isinstance(level, int):
                level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    return level


# -----------------------------------------------------------------------------
# Commands
# -----------------------------------------------------------------------------
def cmd_replay(
    trace: Union[str, Path],
    config: RunConfig,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
) -> int:
    """Replay ``trace`` into ``out_dir``; 0 on success."""
    try:
        report = run(
            trace,
            config,
            out_dir,
            resume=resume,
            progress_callback=lambda pct: logger.info("replay %d%%", pct),
        )
    except Exception as exc:
        logger.error("replay failed: %s", exc)
        return 1
    logger.info(
        "replay finished: %d steps, %d global nodes",
        len(report.steps),
        report.final_state.global_graph.num_nodes,
    )
    return 0


def cmd_export(
    snapshot: Union[str, Path],
    fmt: str,
    target: Union[str, Path],
    graph: str = "global",
    config: Optional[RunConfig] = None,
) -> int:
    """Export one graph (DOT/JSON) or the map (JSON/PGMs) from a snapshot.

    ``target`` is a file for DOT and JSON and a directory for PGMs. With a
    ``config`` naming the vocabulary, DOT labels carry class names.
    """
    try:
        if fmt not in EXPORT_FORMATS:
            raise ValueError(f"unknown format '{fmt}' (choose from {', '.join(EXPORT_FORMATS)})")
        if graph not in EXPORT_GRAPHS:
            raise ValueError(f"unknown graph '{graph}' (choose from {', '.join(EXPORT_GRAPHS)})")
        class_names = None
        if config is not None and config.class_file and config.embedding_file:
            bank = load_vocab(
                config.class_file,
                config.embedding_file,
                config.attribute_file,
                num_classes=config.map_layers,
            )
            class_names = [c.name for c in bank.classes]
        data = read_snapshot(snapshot)
        target = Path(target)
        if fmt == "pgm":
            write_map_pgms(map_from_dict(data["map"]), target)
        elif graph == "map":
            if fmt == "dot":
                raise ValueError("dot export needs a semantic graph, not the map")
            write_json(target, map_to_json(map_from_dict(data["map"])))
        else:
            sg = graph_from_dict(data[graph])
            if fmt == "dot":
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(graph_to_dot(sg, class_names), encoding="utf-8")
            else:
                write_json(target, graph_to_json(sg))
    except Exception as exc:
        logger.error("export failed: %s", exc)
        return 1
    return 0


def cmd_loss(trace: Union[str, Path], config: RunConfig, usage: str = "") -> int:
    """Print the loss JSON of a labelled trace; 2 with usage when labels are absent."""
    try:
        loaded = load_trace(trace, lang_dim=config.lang_dim, camera=config.camera)
        if not loaded.has_labels:
            logger.error("trace has no expert labels")
            if usage:
                print(usage, file=sys.stderr, end="")
            return 2
        report = evaluate_loss(Engine(config), loaded)
    except Exception as exc:
        logger.error("loss failed: %s", exc)
        return 1
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_actions() -> int:
    """Print the canonical action list."""
    print(actions_json())
    return 0


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    """Top-level parser with one subparser per command."""
    parser = argparse.ArgumentParser(
        prog="vsgm",
        description="Replay detection traces through the visual semantic graph memory engine.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_replay = sub.add_parser("replay", help="Replay a trace and write report and snapshots")
    p_replay.add_argument("--trace", required=True, help="JSON Lines detection trace")
    p_replay.add_argument("--config", help="YAML or JSON config file")
    p_replay.add_argument("--out-dir", required=True, help="Output directory")
    p_replay.add_argument("--resume", help="Snapshot to continue from")
    add_config_arguments(p_replay)

    p_export = sub.add_parser("export", help="Export a graph or the map from a snapshot")
    p_export.add_argument("--snapshot", required=True, help="Snapshot JSON")
    p_export.add_argument("--format", required=True, help="dot | json | pgm")
    p_export.add_argument("--target", required=True, help="Output file (dot/json) or directory (pgm)")
    p_export.add_argument("--graph", default="global", help="global | current | map (default: global)")
    p_export.add_argument("--config", help="YAML or JSON config file; its vocabulary names DOT nodes")

    p_loss = sub.add_parser("loss", help="Print the imitation loss of a labelled trace")
    p_loss.add_argument("--trace", required=True, help="JSON Lines detection trace with expert labels")
    p_loss.add_argument("--config", help="YAML or JSON config file")
    add_config_arguments(p_loss)
    p_loss.set_defaults(usage=p_loss.format_usage())

    sub.add_parser("actions", help="Print the action list as JSON")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run the command, and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    if args.command == "actions":
        return cmd_actions()
    if args.command == "export" and not args.config:
        return cmd_export(args.snapshot, args.format, args.target, args.graph)

    try:
        config = load_config(args.config, overrides_from_args(args))
    except Exception as exc:
        logger.error("invalid configuration: %s", exc)
        return 2
    if args.command == "export":
        return cmd_export(args.snapshot, args.format, args.target, args.graph, config=config)
    if args.command == "replay":
        return cmd_replay(args.trace, config, args.out_dir, resume=args.resume)
    return cmd_loss(args.trace, config, usage=args.usage)
