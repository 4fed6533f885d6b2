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
The pruning graph over units and its Ising energy.

Edge weights:
  * ordered pairs within one conv layer: KL(N_d || N_d') - 1
  * conv layer l -> conv layer l+1: H_d - 1
  * dense layer l -> dense layer l+1: A_d - 1
  * last hidden dense layer -> logits: A_d - 1, stored once per unit as a linear term
  * everything else (including conv -> dense): no edge

The bias either balances the whole graph (``global``: b = -sum(gamma) / D) or each
prunable layer on its own (``layer``: the units of layer l share b_l = -gamma_l / D_l,
where gamma_l sums the weights of edges leaving layer l). Both zero the all-active energy.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import fsspec
import numpy as np
from loguru import logger
from numpy.typing import ArrayLike

from coreason_ising_pruning.exceptions import ConsistencyError, InputError
from coreason_ising_pruning.ising.stats import KernelDistribution, pairwise_kl
from coreason_ising_pruning.model.network import CONV
from coreason_ising_pruning.model.units import UnitRegistry

GLOBAL = "global"
LAYER = "layer"
BALANCE_MODES = (GLOBAL, LAYER)


@dataclass(frozen=True)
class UnitStats:
    kind: str
    entropy: Optional[float] = None
    kernel: Optional[KernelDistribution] = None
    activity: Optional[float] = None


@dataclass(frozen=True)
class BatchStats:
    """One :class:`UnitStats` per registry index."""

    units: Dict[int, UnitStats]


@dataclass(frozen=True)
class PruningGraph:
    """
    ``bias`` is always the global -gamma_sum / D. ``groups`` holds ``(start, stop, gamma_l)``
    per layer under layer balance; empty means one group spanning all D units.
    """

    size: int
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    linear: np.ndarray
    bias: float
    gamma_sum: float
    groups: Tuple[Tuple[int, int, float], ...] = ()

    @property
    def D(self) -> int:
        return self.size

    @property
    def edges(self) -> List[Tuple[int, int, float]]:
        return [(int(a), int(b), float(w)) for a, b, w in zip(self.src, self.dst, self.weight, strict=True)]

    @property
    def balance_groups(self) -> Tuple[Tuple[int, int, float], ...]:
        return self.groups or ((0, self.size, self.gamma_sum),)

    @property
    def unit_bias(self) -> np.ndarray:
        """The bias b_d acting on each unit."""
        result = np.full(self.size, self.bias, dtype=np.float64)
        if self.groups:
            for start, stop, gamma in self.groups:
                result[start:stop] = compute_bias(gamma, stop - start)
        return result


def compute_bias(gamma_sum: float, size: int) -> float:
    """
    Bias that zeroes the energy of the all-active state: b = -|gamma| / D.

    Raises:
        InputError: If D < 1.
    """
    if size < 1:
        raise InputError(f"bias needs at least one unit, got D={size}")
    return -gamma_sum / size


def _record(stats: BatchStats, d: int, kind: str) -> UnitStats:
    record = stats.units.get(d)
    if record is None or record.kind != kind:
        raise ConsistencyError(f"missing {kind} statistics for unit {d}")
    return record


def build_graph(
    registry: UnitRegistry,
    stats: BatchStats,
    kl_ceiling: Optional[float] = None,
    balance: str = GLOBAL,
) -> PruningGraph:
    """
    Build edge weights from batch statistics and balance them with the bias.

    Args:
        registry: Unit registry of the network.
        stats: Statistics for every registry unit.
        kl_ceiling: When set, within-layer KL values are clipped to it before subtracting 1.
        balance: ``global`` for one bias over all units, ``layer`` for one bias per prunable layer.

    Raises:
        ConsistencyError: If a unit has no (or the wrong kind of) statistics record.
        InputError: On an unknown balance mode.
    """
    if balance not in BALANCE_MODES:
        raise InputError(f"balance must be one of {BALANCE_MODES}, got {balance!r}")
    src: List[np.ndarray] = []
    dst: List[np.ndarray] = []
    weight: List[np.ndarray] = []
    linear = np.zeros(registry.D)
    layers = registry.prunable_layers
    n_layers = len(registry.layer_sizes)
    groups: List[Tuple[int, int, float]] = []

    for layer in layers:
        span = registry.layer_range(layer)
        units = np.arange(span.start, span.stop)
        first = len(weight)
        kind = registry.layer_kinds[layer]
        following = layer + 1
        following_units = registry.layer_range(following) if following < n_layers else range(0)
        following_kind = registry.layer_kinds[following] if following < n_layers else None

        if kind == CONV:
            records = [_record(stats, int(d), CONV) for d in units]
            kernels = []
            for d, record in zip(units, records, strict=True):
                if record.kernel is None or record.entropy is None:
                    raise ConsistencyError(f"unit {d} lacks a kernel distribution or entropy")
                kernels.append(record.kernel)
            divergence = pairwise_kl(kernels)
            if kl_ceiling is not None:
                divergence = np.minimum(divergence, kl_ceiling)
            rows, cols = np.nonzero(~np.eye(len(units), dtype=bool))
            src.append(units[rows])
            dst.append(units[cols])
            weight.append(divergence[rows, cols] - 1.0)

            if following_kind == CONV and len(following_units):
                entropies = np.array([r.entropy for r in records], dtype=np.float64)
                targets = np.arange(following_units.start, following_units.stop)
                src.append(np.repeat(units, len(targets)))
                dst.append(np.tile(targets, len(units)))
                weight.append(np.repeat(entropies - 1.0, len(targets)))
        else:
            activities = []
            for d in units:
                record = _record(stats, int(d), kind)
                if record.activity is None:
                    raise ConsistencyError(f"unit {d} lacks an activation measure")
                activities.append(record.activity)
            gamma = np.asarray(activities, dtype=np.float64) - 1.0
            if len(following_units):
                targets = np.arange(following_units.start, following_units.stop)
                src.append(np.repeat(units, len(targets)))
                dst.append(np.tile(targets, len(units)))
                weight.append(np.repeat(gamma, len(targets)))
            elif following_kind is not None:
                # Logits units are always active, so their edges act on s_d alone.
                linear[units] += gamma
        if len(units):
            groups.append((span.start, span.stop, math.fsum(np.concatenate(weight[first:] + [linear[units]]))))

    src_all = np.concatenate(src).astype(np.int64) if src else np.zeros(0, dtype=np.int64)
    dst_all = np.concatenate(dst).astype(np.int64) if dst else np.zeros(0, dtype=np.int64)
    weight_all = np.concatenate(weight) if weight else np.zeros(0)
    gamma_sum = math.fsum(np.concatenate((weight_all, linear)))
    bias = compute_bias(gamma_sum, registry.D) if registry.D else 0.0
    logger.debug(
        f"Built pruning graph: D={registry.D}, edges={weight_all.size}, gamma_sum={gamma_sum:.6g}, balance={balance}"
    )
    return PruningGraph(
        size=registry.D,
        src=src_all,
        dst=dst_all,
        weight=weight_all,
        linear=linear,
        bias=bias,
        gamma_sum=gamma_sum,
        groups=tuple(groups) if balance == LAYER else (),
    )


def _state_vector(graph: PruningGraph, state: ArrayLike) -> np.ndarray:
    s = np.asarray(state, dtype=np.float64).reshape(-1)
    if s.shape[0] != graph.size:
        raise InputError(f"state has length {s.shape[0]}, graph has D={graph.size}")
    return s


def energy(graph: PruningGraph, state: ArrayLike) -> float:
    """
    Ising energy -sum(gamma * s_d * s_d') - sum(h_d * s_d) - b * sum(s_d).

    The interaction sum is exactly rounded and each balance group contributes
    gamma_l * (sum(s_l) / D_l), so the all-active state scores zero (exactly under
    global balance).
    """
    s = _state_vector(graph, state)
    if graph.size == 0:
        return 0.0
    interaction = math.fsum(np.concatenate((graph.weight * s[graph.src] * s[graph.dst], graph.linear * s)))
    balance = math.fsum(
        gamma * (float(s[start:stop].sum()) / (stop - start)) for start, stop, gamma in graph.balance_groups
    )
    return -interaction + balance


def energies(graph: PruningGraph, states: ArrayLike) -> np.ndarray:
    """Energy of each row of an S x D state matrix."""
    matrix = np.asarray(states)
    if matrix.ndim != 2:
        raise InputError(f"states must be an S x D matrix, got shape {matrix.shape}")
    return np.array([energy(graph, row) for row in matrix], dtype=np.float64)


def coupling_matrix(graph: PruningGraph) -> np.ndarray:
    """Dense D x D matrix J with J[d, d'] = gamma_{d,d'} (zero where there is no edge)."""
    matrix = np.zeros((graph.size, graph.size))
    np.add.at(matrix, (graph.src, graph.dst), graph.weight)
    return matrix


def flip_delta(graph: PruningGraph, state: ArrayLike, d: int) -> float:
    """Energy change caused by flipping bit ``d`` of ``state``."""
    s = _state_vector(graph, state)
    matrix = coupling_matrix(graph)
    sign = 1.0 if s[d] == 0 else -1.0
    field = float((matrix[d, :] + matrix[:, d]) @ s) + graph.linear[d]
    return -sign * field - float(graph.unit_bias[d]) * sign


def dump_graph(graph: PruningGraph, path: str) -> None:
    """
    Write ``d d' gamma`` lines, ``linear d h`` lines for non-zero linear terms,
    ``group start stop b_l`` lines under layer balance and a final ``bias b`` line.
    """
    with fsspec.open(path, "w") as f:
        for a, b, w in graph.edges:
            f.write(f"{a} {b} {w!r}\n")
        for d in np.flatnonzero(graph.linear):
            f.write(f"linear {int(d)} {float(graph.linear[d])!r}\n")
        for start, stop, gamma in graph.groups:
            f.write(f"group {start} {stop} {compute_bias(gamma, stop - start)!r}\n")
        f.write(f"bias {graph.bias!r}\n")
    logger.info(f"Pruning graph ({graph.weight.size} edges) dumped to {path}")
