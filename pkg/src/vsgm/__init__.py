"""VSGM: visual semantic graph memory for replaying embodied-agent detection traces."""

__version__ = "0.1.0"

__all__: list[str] = [
    "feature_bank",
    "semantic_graphs",
    "spatial_map",
    "imaging",
    "weights",
    "graph_nn",
    "heads_loss",
    "trace_replay",
    "export",
    "config",
    "cli",
]
