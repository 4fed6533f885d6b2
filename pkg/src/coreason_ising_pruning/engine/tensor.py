# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

"""
Tensor container and the computation tape used for reverse-mode differentiation.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from coreason_ising_pruning.exceptions import UsageError

GradFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    An n-dimensional float64 array with an optional accumulated gradient.

    Args:
        data: Array-like values, converted to a float64 array.
        requires_grad: Whether gradients should flow into this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data: ArrayLike, requires_grad: bool = False) -> None:
        self.data: np.ndarray = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        # Set when the tensor is the output of an operation recorded on a tape.
        self.tape: Optional["ComputationTape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeEntry:
    name: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    grad_fn: GradFn


class ComputationTape:
    """
    Ordered record of executed operations.

    Operations append themselves through :meth:`record`; :func:`backward`
    replays the entries in reverse, visiting each exactly once.
    """

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, name: str, inputs: Sequence[Tensor], output: Tensor, grad_fn: GradFn) -> None:
        output.tape = self
        self.entries.append(TapeEntry(name=name, inputs=tuple(inputs), output=output, grad_fn=grad_fn))

    def clear(self) -> None:
        for entry in self.entries:
            entry.output.tape = None
        self.entries.clear()


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=np.float64).reshape(tensor.shape)
    else:
        tensor.grad = tensor.grad + grad.reshape(tensor.shape)


def backward(loss: Tensor, tape: ComputationTape) -> None:
    """
    Populate ``grad`` on every tensor that requires gradients and contributed to ``loss``.

    Parameter gradients accumulate, so callers zero them between steps.

    Args:
        loss: A scalar tensor produced by an operation recorded on ``tape``.
        tape: The tape that recorded the forward pass.

    Raises:
        UsageError: If ``loss`` is not a scalar or was not produced through ``tape``.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape:
        raise UsageError("backward called on a tensor that was not produced through this tape (detached)")

    # Intermediate gradients are scratch; only leaves keep theirs.
    for entry in tape.entries:
        entry.output.grad = None
    loss.grad = np.ones(loss.shape, dtype=np.float64)

    for entry in reversed(tape.entries):
        upstream = entry.output.grad
        if upstream is None:
            continue
        input_grads = entry.grad_fn(upstream)
        for tensor, grad in zip(entry.inputs, input_grads, strict=True):
            if grad is None or not tensor.requires_grad:
                continue
            _accumulate(tensor, grad)

    for entry in tape.entries:
        if entry.output is not loss:
            entry.output.grad = None
