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
Prunable units, pruning masks and their structural consequences.

Units are the convolutional kernels and dense hidden units of every non-logits
layer, indexed d = 0..D-1 in forward order. The logits layer is always active
and has no entry.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike

from coreason_ising_pruning.engine import ComputationTape, Tensor
from coreason_ising_pruning.exceptions import InputError, StructuralError
from coreason_ising_pruning.model.network import CONV, LayerSpec, Network, NetworkSpec


@dataclass(frozen=True)
class UnitEntry:
    index: int
    layer: int
    unit: int
    kind: str


@dataclass(frozen=True)
class UnitRegistry:
    """Bijection between state-vector positions and (layer, unit) pairs."""

    entries: Tuple[UnitEntry, ...]
    layer_sizes: Tuple[int, ...]
    layer_kinds: Tuple[str, ...]
    _offsets: Dict[int, int] = field(default_factory=dict, compare=False, repr=False)

    @property
    def D(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def layer_range(self, layer: int) -> range:
        """State indices belonging to ``layer`` (empty for the logits layer)."""
        start = self._offsets.get(layer)
        if start is None:
            return range(0)
        return range(start, start + self.layer_sizes[layer])

    @property
    def prunable_layers(self) -> List[int]:
        return sorted(self._offsets)

    def split(self, state: ArrayLike) -> List[Optional[np.ndarray]]:
        """Per-layer keep vectors; ``None`` for the logits layer."""
        bits = np.asarray(state).reshape(-1)
        if bits.shape[0] != self.D:
            raise InputError(f"state has length {bits.shape[0]}, registry has D={self.D}")
        keeps: List[Optional[np.ndarray]] = []
        for layer in range(len(self.layer_sizes)):
            units = self.layer_range(layer)
            keeps.append(bits[units.start : units.stop].astype(np.float64) if len(units) else None)
        return keeps


def enumerate_units(spec: NetworkSpec) -> UnitRegistry:
    """
    Build the unit registry: layers in forward order, units in index order.

    Raises:
        InputError: If the network has no layers.
    """
    if not spec.layers:
        raise InputError("cannot enumerate units of an empty network")
    entries: List[UnitEntry] = []
    offsets: Dict[int, int] = {}
    for layer_index, layer in enumerate(spec.layers):
        if layer.is_logits:
            continue
        offsets[layer_index] = len(entries)
        for unit in range(layer.out_units):
            entries.append(UnitEntry(len(entries), layer_index, unit, layer.kind))
    return UnitRegistry(
        entries=tuple(entries),
        layer_sizes=tuple(layer.out_units for layer in spec.layers),
        layer_kinds=tuple(layer.kind for layer in spec.layers),
        _offsets=offsets,
    )


@dataclass(frozen=True)
class Mask:
    """Binary pruning state; ``state[d] == 0`` drops unit d."""

    state: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.state)
        if bits.ndim != 1 or not np.isin(bits, (0, 1)).all():
            raise InputError("mask state must be a 1-D vector of 0/1 values")
        object.__setattr__(self, "state", bits.astype(np.uint8))

    @classmethod
    def ones(cls, size: int) -> "Mask":
        return cls(np.ones(size, dtype=np.uint8))

    @classmethod
    def zeros(cls, size: int) -> "Mask":
        return cls(np.zeros(size, dtype=np.uint8))

    def __len__(self) -> int:
        return int(self.state.shape[0])

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Mask) and np.array_equal(self.state, other.state)

    def __hash__(self) -> int:
        return hash(self.state.tobytes())


class MaskedNetwork:
    """
    Non-destructive view of a network with some units silenced.

    The underlying weights are shared, not copied: training through the view
    updates the base network.
    """

    def __init__(self, base: Network, mask: Mask) -> None:
        self.base = base
        self.mask = mask
        self.registry = enumerate_units(base.spec)
        self.keep = self.registry.split(mask.state)

    @property
    def spec(self) -> NetworkSpec:
        return self.base.spec

    def forward(
        self,
        x: Union[np.ndarray, Tensor],
        tape: Optional[ComputationTape] = None,
        capture: Optional[List[np.ndarray]] = None,
    ) -> Tensor:
        return self.base.forward(x, keep=self.keep, tape=tape, capture=capture)


def apply_mask(network: Union[Network, MaskedNetwork], mask: Mask) -> MaskedNetwork:
    """
    Silence every unit with ``state[d] == 0``.

    Applying a mask to a masked view replaces the previous mask, so applying the
    same mask twice equals applying it once.

    Raises:
        InputError: If the mask length differs from D.
    """
    base = network.base if isinstance(network, MaskedNetwork) else network
    registry = enumerate_units(base.spec)
    if len(mask) != registry.D:
        raise InputError(f"mask has length {len(mask)}, network has D={registry.D}")
    return MaskedNetwork(base, mask)


def _input_keep(spec: NetworkSpec, keeps: Sequence[Optional[np.ndarray]], layer_index: int) -> np.ndarray:
    layer = spec.layers[layer_index]
    if layer_index == 0:
        return np.ones(layer.in_units)
    previous = keeps[layer_index - 1]
    if previous is None:
        previous = np.ones(spec.layers[layer_index - 1].out_units)
    if layer.kind != CONV and spec.layers[layer_index - 1].kind == CONV:
        # Flattening is channel-major, so each channel owns a contiguous block of columns.
        _, height, width = spec.feature_shapes()[layer_index - 1]
        return np.repeat(previous, height * width)
    return previous


def _layer_keeps(network: Network, mask: Mask) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    spec = network.spec
    registry = enumerate_units(spec)
    keeps = registry.split(mask.state)
    outs: List[np.ndarray] = []
    ins: List[np.ndarray] = []
    for index, layer in enumerate(spec.layers):
        keep = keeps[index]
        outs.append(np.ones(layer.out_units) if keep is None else keep)
        ins.append(_input_keep(spec, keeps, index))
    return outs, ins


def trainable_masks(network: Network, mask: Mask) -> List[np.ndarray]:
    """
    Boolean masks, aligned with ``network.parameters()``, of the scalars that survive pruning.

    A weight survives when both the unit it feeds and the unit (or channel) it reads
    from are kept; a bias survives with its unit.
    """
    outs, ins = _layer_keeps(network, mask)
    masks: List[np.ndarray] = []
    for layer, out_keep, in_keep in zip(network.spec.layers, outs, ins, strict=True):
        weight = np.outer(out_keep, in_keep).astype(bool)
        if layer.kind == CONV:
            weight = np.broadcast_to(weight[:, :, None, None], layer.weight_shape).copy()
        masks.append(weight)
        masks.append(out_keep.astype(bool))
    return masks


def masked_param_count(network: Network, mask: Mask) -> Tuple[int, int]:
    """Return ``(kept, total)`` trainable scalars under ``mask``."""
    masks = trainable_masks(network, mask)
    return int(sum(int(m.sum()) for m in masks)), int(sum(m.size for m in masks))


def kept_rate(network: Network, mask: Mask) -> float:
    kept, total = masked_param_count(network, mask)
    return kept / total


def materialize_pruned(network: Network, mask: Mask) -> Network:
    """
    Physically remove dropped units and their connections.

    Raises:
        StructuralError: If a layer would be left without units.
    """
    registry = enumerate_units(network.spec)
    if len(mask) != registry.D:
        raise InputError(f"mask has length {len(mask)}, network has D={registry.D}")
    outs, ins = _layer_keeps(network, mask)
    layers: List[LayerSpec] = []
    params = []
    for index, layer in enumerate(network.spec.layers):
        out_idx = np.flatnonzero(outs[index])
        in_idx = np.flatnonzero(ins[index])
        if out_idx.size == 0:
            raise StructuralError(f"layer {index} ({layer.kind}) has no surviving units")
        layers.append(
            LayerSpec(
                kind=layer.kind,
                out_units=int(out_idx.size),
                in_units=int(in_idx.size),
                kernel_size=layer.kernel_size,
                stride=layer.stride,
                padding=layer.padding,
                pool=layer.pool,
                is_logits=layer.is_logits,
            )
        )
        weight = network.weights[index].data[out_idx][:, in_idx].copy()
        bias = network.biases[index].data[out_idx].copy()
        params.append((weight, bias))
    compact = NetworkSpec(input_shape=network.spec.input_shape, layers=tuple(layers))
    return Network(compact, params)
