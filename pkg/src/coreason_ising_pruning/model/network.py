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
Layered network description and its parameters.

A network is a run of convolutional layers (each conv -> ReLU, optionally
followed by a 2x2 max pool) and then dense layers; the final dense layer
produces the logits.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from coreason_ising_pruning.engine import ComputationTape, Tensor
from coreason_ising_pruning.engine.ops import (
    conv2d,
    conv_output_size,
    dense,
    flatten,
    max_pool2d,
    relu,
    unit_mask,
)
from coreason_ising_pruning.exceptions import DimensionError, InputError

CONV = "conv"
DENSE = "dense"


@dataclass(frozen=True)
class LayerSpec:
    """One layer. ``out_units`` is N^[l]: kernels for conv layers, hidden units for dense layers."""

    kind: str
    out_units: int
    in_units: int
    kernel_size: Tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    pool: bool = False
    is_logits: bool = False

    @classmethod
    def conv(
        cls,
        out_kernels: int,
        in_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
        padding: int = 1,
        pool: bool = False,
    ) -> "LayerSpec":
        return cls(CONV, out_kernels, in_channels, (kernel_size, kernel_size), stride, padding, pool, False)

    @classmethod
    def dense(cls, out_units: int, in_units: int, is_logits: bool = False) -> "LayerSpec":
        return cls(DENSE, out_units, in_units, is_logits=is_logits)

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind == CONV:
            return (self.out_units, self.in_units, *self.kernel_size)
        return (self.out_units, self.in_units)

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.weight_shape[1:]))


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]

    def validate(self) -> None:
        """
        Check the layer ordering and the shape chain.

        Raises:
            InputError: Empty network, misplaced logits layer or conv after dense.
            DimensionError: Consecutive layers do not fit together.
        """
        if not self.layers:
            raise InputError("network has no layers")
        logits = [i for i, layer in enumerate(self.layers) if layer.is_logits]
        if logits != [len(self.layers) - 1] or self.layers[-1].kind != DENSE:
            raise InputError("exactly one dense logits layer is required and it must be the final layer")
        seen_dense = False
        for layer in self.layers:
            if layer.kind not in (CONV, DENSE):
                raise InputError(f"unknown layer kind {layer.kind!r}")
            if layer.out_units < 1 or layer.in_units < 1:
                raise InputError(f"layer {layer} must have at least one input and one output unit")
            if layer.kind == CONV and seen_dense:
                raise InputError("convolutional layers must precede all dense layers")
            seen_dense = seen_dense or layer.kind == DENSE
        self.feature_shapes()

    def feature_shapes(self) -> List[Tuple[int, ...]]:
        """Shape of each layer's output (after pooling) for a single sample."""
        shape: Tuple[int, ...] = tuple(self.input_shape)
        shapes: List[Tuple[int, ...]] = []
        for index, layer in enumerate(self.layers):
            if layer.kind == CONV:
                channels, height, width = shape
                if channels != layer.in_units:
                    raise DimensionError(f"layer {index}: expects {layer.in_units} input channels, gets {channels}")
                k1, k2 = layer.kernel_size
                height = conv_output_size(height, k1, layer.stride, layer.padding)
                width = conv_output_size(width, k2, layer.stride, layer.padding)
                if height == 0 or width == 0:
                    raise DimensionError(f"layer {index}: kernel {k1}x{k2} does not fit the {shape} input")
                if layer.pool:
                    height, width = height // 2, width // 2
                    if height == 0 or width == 0:
                        raise DimensionError(f"layer {index}: pooling collapses the feature map")
                shape = (layer.out_units, height, width)
            else:
                flat = int(np.prod(shape))
                if flat != layer.in_units:
                    raise DimensionError(f"layer {index}: expects {layer.in_units} inputs, gets {flat}")
                shape = (layer.out_units,)
            shapes.append(shape)
        return shapes


def toy_network_spec(in_channels: int = 1, image_size: int = 16, classes: int = 4) -> NetworkSpec:
    """conv(8, 3x3) -> pool -> conv(16, 3x3) -> pool -> dense(32) -> logits."""
    spatial = image_size // 2 // 2
    return NetworkSpec(
        input_shape=(in_channels, image_size, image_size),
        layers=(
            LayerSpec.conv(8, in_channels, kernel_size=3, padding=1, pool=True),
            LayerSpec.conv(16, 8, kernel_size=3, padding=1, pool=True),
            LayerSpec.dense(32, 16 * spatial * spatial),
            LayerSpec.dense(classes, 32, is_logits=True),
        ),
    )


KeepVectors = Sequence[Optional[np.ndarray]]


class Network:
    """
    Parameters for a :class:`NetworkSpec`, one (weight, bias) pair per layer.

    Args:
        spec: Architecture; validated on construction.
        params: Existing (weight, bias) arrays; when omitted, weights are He-normal
            initialized from ``seed`` and biases start at zero.
        seed: Seed for initialization.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        params: Optional[Sequence[Tuple[np.ndarray, np.ndarray]]] = None,
        seed: int = 0,
    ) -> None:
        spec.validate()
        self.spec = spec
        self.weights: List[Tensor] = []
        self.biases: List[Tensor] = []
        if params is None:
            self.initialize(seed)
        else:
            if len(params) != len(spec.layers):
                raise DimensionError(f"{len(params)} parameter pairs for {len(spec.layers)} layers")
            for layer, (weight, bias) in zip(spec.layers, params, strict=True):
                if tuple(np.shape(weight)) != layer.weight_shape or tuple(np.shape(bias)) != (layer.out_units,):
                    raise DimensionError(
                        f"parameters {np.shape(weight)}/{np.shape(bias)} do not match layer {layer.weight_shape}"
                    )
                self.weights.append(Tensor(weight, requires_grad=True))
                self.biases.append(Tensor(bias, requires_grad=True))

    def initialize(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for layer in self.spec.layers:
            std = np.sqrt(2.0 / layer.fan_in)
            self.weights.append(Tensor(rng.normal(0.0, std, size=layer.weight_shape), requires_grad=True))
            self.biases.append(Tensor(np.zeros(layer.out_units), requires_grad=True))

    def parameters(self) -> List[Tensor]:
        """Parameters in layer order: weight then bias."""
        out: List[Tensor] = []
        for weight, bias in zip(self.weights, self.biases, strict=True):
            out.extend((weight, bias))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "Network":
        params = [(w.data.copy(), b.data.copy()) for w, b in zip(self.weights, self.biases, strict=True)]
        return Network(self.spec, params)

    def forward(
        self,
        x: Union[np.ndarray, Tensor],
        keep: Optional[KeepVectors] = None,
        tape: Optional[ComputationTape] = None,
        capture: Optional[List[np.ndarray]] = None,
    ) -> Tensor:
        """
        Compute logits for a batch.

        Args:
            x: Images [B, C, H, W].
            keep: Optional per-layer 0/1 vectors; a zero silences that unit's post-activation output.
                ``None`` entries (and the logits layer) are left untouched.
            tape: Tape to record on for a later backward pass.
            capture: When given, receives each hidden layer's post-activation output (before masking
                and pooling), in layer order.
        """
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.shape[1:] != tuple(self.spec.input_shape):
            raise DimensionError(f"input samples have shape {h.shape[1:]}, network expects {self.spec.input_shape}")
        for index, layer in enumerate(self.spec.layers):
            weight, bias = self.weights[index], self.biases[index]
            if layer.kind == CONV:
                h = relu(conv2d(h, weight, bias, layer.stride, layer.padding, tape), tape)
            else:
                if h.data.ndim > 2:
                    h = flatten(h, tape)
                h = dense(h, weight, bias, tape)
                if layer.is_logits:
                    return h
                h = relu(h, tape)
            if capture is not None:
                capture.append(h.data)
            if keep is not None and keep[index] is not None:
                h = unit_mask(h, keep[index], tape)
            if layer.kind == CONV and layer.pool:
                h = max_pool2d(h, tape)
        return h
