# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

from typing import Dict, List, Optional, Sequence

import numpy as np

from coreason_ising_pruning.engine.tensor import Tensor
from coreason_ising_pruning.exceptions import ConfigError


class SGD:
    """
    Stochastic gradient descent with momentum and L2 weight decay.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    Args:
        params: Tensors to update; each must have ``requires_grad`` set.
        lr: Positive learning rate.
        momentum: Momentum coefficient in [0, 1).
        weight_decay: Non-negative L2 coefficient.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity: Dict[int, np.ndarray] = {id(p): np.zeros_like(p.data) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, trainable: Optional[Sequence[np.ndarray]] = None) -> None:
        """
        Apply one update.

        Args:
            trainable: Optional boolean masks aligned with ``params``. Entries outside a mask
                keep their value and velocity bit-identical.
        """
        if trainable is not None and len(trainable) != len(self.params):
            raise ConfigError(f"{len(trainable)} trainable masks for {len(self.params)} parameters")
        for index, p in enumerate(self.params):
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            velocity = self._velocity[id(p)]
            new_velocity = self.momentum * velocity + grad + self.weight_decay * p.data
            new_data = p.data - self.lr * new_velocity
            if trainable is None:
                self._velocity[id(p)] = new_velocity
                p.data = new_data
            else:
                mask = trainable[index]
                self._velocity[id(p)] = np.where(mask, new_velocity, velocity)
                p.data = np.where(mask, new_data, p.data)


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    velocities: Optional[List[np.ndarray]] = None,
) -> List[np.ndarray]:
    """
    Functional single step: writes ``grads`` into the parameters and updates them in place.

    Returns:
        The new velocity buffers, to pass back in on the next call.
    """
    optimizer = SGD(params, lr=lr, momentum=momentum, weight_decay=weight_decay)
    if velocities is not None:
        for p, v in zip(optimizer.params, velocities, strict=True):
            optimizer._velocity[id(p)] = v
    for p, g in zip(optimizer.params, grads, strict=True):
        p.grad = np.asarray(g, dtype=np.float64)
    optimizer.step()
    return [optimizer._velocity[id(p)] for p in optimizer.params]
