"""Deterministic simulator for personalized federated learning with Moreau envelopes.

Subpackages and modules
-----------------------
rng         counter-based random streams
params      flat parameter-vector arithmetic
models      MLR, two-layer ReLU network and quadratic oracles
prox        inexact proximal solves and envelope gradients
federation  client updates, aggregation and the round loop
data        MNIST/synthetic datasets, batching and the binary container
config      JSON run configurations and presets
experiment  repeated runs, sweeps and comparisons
"""
from .federation import (FedAvg, Federation, PerFedAvg, PFedMe, RoundReport, aggregate,
                         run_training)
from .models import DNN2, MLR, Batch, Quadratic
from .prox import DivergenceError, ProxMethod, ProxOptions, prox_solve

__version__ = "0.1.0"

__all__ = [
    "Batch", "DNN2", "DivergenceError", "FedAvg", "Federation", "MLR", "PFedMe", "PerFedAvg",
    "ProxMethod", "ProxOptions", "Quadratic", "RoundReport", "aggregate", "prox_solve",
    "run_training",
]
