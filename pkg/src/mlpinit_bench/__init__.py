"""MLPInit benchmark harness: train GNNs from their PeerMLP weights and measure the speedup."""

import os

from .config import settings

# BLAS/OpenMP read these once, at first import of numpy; explicit variables win.
for _var, _value in settings.thread_env().items():
    os.environ.setdefault(_var, _value)

from .gnn import ParamSet, backward, derive_peermlp, forward, init_params  # noqa: E402
from .graph import Graph, generate_synthetic  # noqa: E402
from .protocol import benchmark, run_mlpinit, transfer_weights  # noqa: E402
from .train import train_model  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "ParamSet",
    "__version__",
    "backward",
    "benchmark",
    "derive_peermlp",
    "forward",
    "generate_synthetic",
    "init_params",
    "run_mlpinit",
    "train_model",
    "transfer_weights",
]
