"""Training networks whose weights are random ternary or binary variables.

Each weight carries a small discrete distribution instead of a point value.
Training propagates the per-unit pre-activation mean and variance and samples
Gaussian noise there (one draw per unit, not per weight), which keeps the
gradient pathwise and cheap. Trained distributions are evaluated by sampling
concrete discrete weights.
"""

from lrnet.config import (
    DataConfig,
    NetworkConfig,
    RunConfig,
    TrainConfig,
    load_config,
    save_config,
)
from lrnet.errors import LrnetError
from lrnet.evaluate import accuracy, evaluate_sampled
from lrnet.network import Network, build_network, network_from_pretrained
from lrnet.training import fit, make_streams

__version__ = "0.1.0"

__all__ = [
    "DataConfig",
    "NetworkConfig",
    "RunConfig",
    "TrainConfig",
    "load_config",
    "save_config",
    "LrnetError",
    "accuracy",
    "evaluate_sampled",
    "Network",
    "build_network",
    "network_from_pretrained",
    "fit",
    "make_streams",
    "__version__",
]
