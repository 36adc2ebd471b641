"""Spiking and hybrid networks with temporally delayed skip connections.

Build layer graphs whose skip edges carry explicit timestep delays, train them
with surrogate-gradient backpropagation through time, search the skip
configuration space without training, and estimate inference energy from
measured spike activity.
"""

from .engine import SurrogateConfig, Tape, Tensor
from .graph import (
    ArchSpec,
    LayerSpec,
    Network,
    TSkip,
    from_shorthand,
    load_spec,
    mlp_spec,
    param_count,
    run_forward,
    save_spec,
    validate,
)
from .data import Dataset, gen_delayed_recall, inject_noise
from .metrics import EnergyModel, accuracy, aee, energy_total
from .nas import SearchSpace, kendall_tau, random_search, sahd_score
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ArchSpec",
    "Dataset",
    "EnergyModel",
    "LayerSpec",
    "Network",
    "SearchSpace",
    "SurrogateConfig",
    "TSkip",
    "Tape",
    "Tensor",
    "TrainConfig",
    "accuracy",
    "aee",
    "energy_total",
    "evaluate",
    "from_shorthand",
    "gen_delayed_recall",
    "inject_noise",
    "kendall_tau",
    "load_spec",
    "mlp_spec",
    "param_count",
    "random_search",
    "run_forward",
    "sahd_score",
    "save_spec",
    "train",
    "validate",
]
