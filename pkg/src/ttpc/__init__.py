"""Lightweight point cloud networks for event cameras, with tensor-train
compressed feature extractors and a self-contained gradient engine.

The pipeline: event streams are cut into overlapping sliding windows, each
window is sampled into a fixed-size normalized point cloud (with an optional
subwindow quota rule that keeps slow motion represented), and the clouds are
classified by a hierarchical residual point network whose linear layers can
be stored as tensor trains.
"""

__version__ = "0.1.0"

from ttpc.errors import ConfigError, DataError

__all__ = ["ConfigError", "DataError", "__version__"]
