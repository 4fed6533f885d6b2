# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

from coreason_ising_pruning.model.checkpoint import load_checkpoint, save_checkpoint
from coreason_ising_pruning.model.network import LayerSpec, Network, NetworkSpec, toy_network_spec
from coreason_ising_pruning.model.units import (
    Mask,
    MaskedNetwork,
    UnitRegistry,
    apply_mask,
    enumerate_units,
    kept_rate,
    masked_param_count,
    materialize_pruned,
    trainable_masks,
)

__all__ = [
    "LayerSpec",
    "Mask",
    "MaskedNetwork",
    "Network",
    "NetworkSpec",
    "UnitRegistry",
    "apply_mask",
    "enumerate_units",
    "kept_rate",
    "load_checkpoint",
    "masked_param_count",
    "materialize_pruned",
    "save_checkpoint",
    "toy_network_spec",
    "trainable_masks",
]
