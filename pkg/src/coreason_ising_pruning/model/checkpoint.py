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
Binary ``.iprn`` checkpoints: architecture, weights and a pruning mask.

All header integers are little-endian; weights are little-endian float64.
"""

import struct
from typing import BinaryIO, List, Optional, Tuple

import fsspec
import numpy as np
from loguru import logger

from coreason_ising_pruning.exceptions import ParseError
from coreason_ising_pruning.model.network import CONV, DENSE, LayerSpec, Network, NetworkSpec
from coreason_ising_pruning.model.units import Mask, enumerate_units

MAGIC = b"IPRN"
VERSION = 1

_HEADER = struct.Struct("<4sIIIII")  # magic, version, C, H, W, layer count
_LAYER = struct.Struct("<BBIIIIII")  # kind, flags, out, in, K1, K2, stride, padding
_KINDS = {CONV: 0, DENSE: 1}
_FLAG_LOGITS = 0b01
_FLAG_POOL = 0b10


def _pack_mask(mask: Mask) -> bytes:
    return struct.pack("<I", len(mask)) + np.packbits(mask.state, bitorder="little").tobytes()


def write_checkpoint(stream: BinaryIO, network: Network, mask: Optional[Mask] = None) -> None:
    spec = network.spec
    if mask is None:
        mask = Mask.ones(enumerate_units(spec).D)
    stream.write(_HEADER.pack(MAGIC, VERSION, *spec.input_shape, len(spec.layers)))
    for layer in spec.layers:
        flags = (_FLAG_LOGITS if layer.is_logits else 0) | (_FLAG_POOL if layer.pool else 0)
        stream.write(
            _LAYER.pack(
                _KINDS[layer.kind],
                flags,
                layer.out_units,
                layer.in_units,
                *layer.kernel_size,
                layer.stride,
                layer.padding,
            )
        )
    for weight, bias in zip(network.weights, network.biases, strict=True):
        stream.write(weight.data.astype("<f8").tobytes())
        stream.write(bias.data.astype("<f8").tobytes())
    stream.write(_pack_mask(mask))


class _Reader:
    def __init__(self, payload: bytes) -> None:
        self.payload = payload
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise ParseError(f"checkpoint truncated while reading {what}", offset=self.offset)
        chunk = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk


def read_checkpoint(payload: bytes) -> Tuple[Network, Mask]:
    """
    Decode a checkpoint.

    Raises:
        ParseError: Bad magic, unsupported version, unknown layer kind, truncation or trailing bytes.
    """
    reader = _Reader(payload)
    magic, version, channels, height, width, count = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise ParseError(f"bad checkpoint magic {magic!r}", offset=0)
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", offset=4)

    layers: List[LayerSpec] = []
    kinds = {code: name for name, code in _KINDS.items()}
    for _ in range(count):
        start = reader.offset
        kind, flags, out_units, in_units, k1, k2, stride, padding = _LAYER.unpack(reader.take(_LAYER.size, "layer"))
        if kind not in kinds:
            raise ParseError(f"unknown layer kind code {kind}", offset=start)
        layers.append(
            LayerSpec(
                kind=kinds[kind],
                out_units=out_units,
                in_units=in_units,
                kernel_size=(k1, k2),
                stride=stride,
                padding=padding,
                pool=bool(flags & _FLAG_POOL),
                is_logits=bool(flags & _FLAG_LOGITS),
            )
        )
    spec = NetworkSpec(input_shape=(channels, height, width), layers=tuple(layers))

    params = []
    for index, layer in enumerate(layers):
        n_weight = int(np.prod(layer.weight_shape))
        weight = np.frombuffer(reader.take(8 * n_weight, f"layer {index} weights"), dtype="<f8")
        bias = np.frombuffer(reader.take(8 * layer.out_units, f"layer {index} bias"), dtype="<f8")
        params.append((weight.reshape(layer.weight_shape).astype(np.float64), bias.astype(np.float64)))

    mask_offset = reader.offset
    (size,) = struct.unpack("<I", reader.take(4, "mask length"))
    expected = enumerate_units(spec).D
    if size != expected:
        raise ParseError(f"mask length {size} does not match the {expected} prunable units", offset=mask_offset)
    packed = np.frombuffer(reader.take((size + 7) // 8, "mask bits"), dtype=np.uint8)
    state = np.unpackbits(packed, count=size, bitorder="little")
    if reader.offset != len(payload):
        raise ParseError("unexpected trailing bytes after mask", offset=reader.offset)
    return Network(spec, params), Mask(state)


def save_checkpoint(path: str, network: Network, mask: Optional[Mask] = None) -> None:
    with fsspec.open(path, "wb") as f:
        write_checkpoint(f, network, mask)
    logger.info(f"Checkpoint written to {path}")


def load_checkpoint(path: str) -> Tuple[Network, Mask]:
    with fsspec.open(path, "rb") as f:
        payload = f.read()
    logger.info(f"Loaded checkpoint {path} ({len(payload)} bytes)")
    return read_checkpoint(payload)
