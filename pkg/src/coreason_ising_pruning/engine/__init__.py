# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

from coreason_ising_pruning.engine.ops import (
    add,
    conv2d,
    dense,
    flatten,
    max_pool2d,
    mul,
    relu,
    scale,
    softmax_cross_entropy,
    sum_all,
    unit_mask,
)
from coreason_ising_pruning.engine.optim import SGD, sgd_step
from coreason_ising_pruning.engine.tensor import ComputationTape, Tensor, backward

__all__ = [
    "SGD",
    "ComputationTape",
    "Tensor",
    "add",
    "backward",
    "conv2d",
    "dense",
    "flatten",
    "max_pool2d",
    "mul",
    "relu",
    "scale",
    "sgd_step",
    "softmax_cross_entropy",
    "sum_all",
    "unit_mask",
]
