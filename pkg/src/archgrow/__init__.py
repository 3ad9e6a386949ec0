"""Neural networks whose layer graph grows and shrinks during training.

Structural changes are picked by a time-limited Monte Carlo tree search over
layer add/remove actions; greedy and random policies exist for ablations.
"""

from archgrow.actions import Action, enumerate_actions, execute
from archgrow.graph import Layer, LayerGraph, new_base_model
from archgrow.propagation import backward, forward, loss, sgd_step
from archgrow.training import History, TrainConfig, train

__all__ = [
    "Action",
    "History",
    "Layer",
    "LayerGraph",
    "TrainConfig",
    "backward",
    "enumerate_actions",
    "execute",
    "forward",
    "loss",
    "new_base_model",
    "sgd_step",
    "train",
]

__version__ = "0.1.0"
