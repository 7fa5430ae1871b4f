"""Minimal NHWC network runtime: layers, optimizers and a gradient checker."""

from cgpcnn.nn.gradcheck import grad_check
from cgpcnn.nn.network import Network, he_init, load_weights, save_weights
from cgpcnn.nn.optim import Adam, SGDMomentum, adam_step, sgd_momentum_step

__all__ = [
    "Adam",
    "Network",
    "SGDMomentum",
    "adam_step",
    "grad_check",
    "he_init",
    "load_weights",
    "save_weights",
    "sgd_momentum_step",
]
