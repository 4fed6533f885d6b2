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
Per-unit activity and redundancy measures.

Feature-map activity is the entropy of the map quantized to 8 bits; kernel
redundancy is the KL divergence between Gaussians fitted to the kernels'
filters; dense activity is tanh of the mean activation.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.stats
from numpy.typing import ArrayLike

from coreason_ising_pruning.engine import Tensor
from coreason_ising_pruning.exceptions import DimensionError, InputError, NumericalError

LEVELS = 256
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class QuantizedMap:
    values: np.ndarray
    unit: Optional[int] = None


@dataclass(frozen=True)
class Pmf256:
    p: np.ndarray
    counts: np.ndarray
    size: int


@dataclass(frozen=True)
class KernelDistribution:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def _as_array(values: Union[Tensor, ArrayLike]) -> np.ndarray:
    return values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)


def quantize_feature_map(feature_map: Union[Tensor, ArrayLike], unit: Optional[int] = None) -> QuantizedMap:
    """
    Map non-negative activations onto {0..255} by round(255 * f / max(f)), halves away from zero.

    A dead map (max 0) quantizes to all zeros.

    Raises:
        InputError: If any value is negative.
    """
    values = _as_array(feature_map).reshape(-1)
    if values.size and values.min() < 0:
        raise InputError(f"feature map has negative value {values.min()}; expected post-ReLU activations")
    peak = values.max() if values.size else 0.0
    if peak <= 0:
        return QuantizedMap(np.zeros(values.shape, dtype=np.int64), unit)
    scaled = (LEVELS - 1) * values / peak
    return QuantizedMap(np.floor(scaled + 0.5).astype(np.int64), unit)


def pmf(quantized: QuantizedMap) -> Pmf256:
    """
    Exact count ratios over the 256 levels.

    Raises:
        InputError: If the map is empty.
    """
    if quantized.values.size == 0:
        raise InputError("cannot build a pmf from an empty map")
    counts = np.bincount(quantized.values.reshape(-1), minlength=LEVELS)
    return Pmf256(counts / quantized.values.size, counts, int(quantized.values.size))


def entropy(feature_map: Union[Tensor, ArrayLike]) -> float:
    """Entropy in bits of the quantized feature map, in [0, 8]."""
    dist = pmf(quantize_feature_map(feature_map))
    return float(scipy.stats.entropy(dist.counts, base=2)) + 0.0


def feature_map_entropies(maps: np.ndarray) -> np.ndarray:
    """
    Entropy of every channel of a [B, C, ...] batch, pooling all samples and positions of a channel.
    """
    if maps.ndim < 2:
        raise DimensionError(f"feature maps need a channel axis, got shape {maps.shape}")
    per_channel = np.moveaxis(maps, 1, 0).reshape(maps.shape[1], -1)
    return np.array([entropy(channel) for channel in per_channel])


def fit_kernel_distribution(kernel: Union[Tensor, ArrayLike], epsilon: float = DEFAULT_EPSILON) -> KernelDistribution:
    """
    Fit a K-variate Gaussian (K = K1*K2) to the Cin filters of one kernel.

    Each filter is one sample; the covariance is the biased (divide-by-N) sample
    covariance plus ``epsilon * I``.
    """
    weights = _as_array(kernel)
    if weights.ndim != 3:
        raise DimensionError(f"kernel must be [Cin, K1, K2], got shape {weights.shape}")
    samples = weights.reshape(weights.shape[0], -1)
    n, k = samples.shape
    if n < 1:
        raise InputError("kernel has no filters")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T) + epsilon * np.eye(k)
    return KernelDistribution(mean=mean, cov=cov, n=n)


def _cholesky(cov: np.ndarray, which: str) -> Tuple[np.ndarray, bool]:
    try:
        return scipy.linalg.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"covariance {which} is not positive definite (condition number {np.linalg.cond(cov):.3e}): {e}"
        ) from e


def _factorize(dist: KernelDistribution, which: str) -> Tuple[Tuple[np.ndarray, bool], float]:
    factor = _cholesky(dist.cov, which)
    return factor, 2.0 * float(np.log(np.diag(factor[0])).sum())


def _kl_from_factors(
    first: KernelDistribution,
    second: KernelDistribution,
    logdet_first: float,
    factor_second: Tuple[np.ndarray, bool],
    logdet_second: float,
) -> float:
    trace = float(np.trace(scipy.linalg.cho_solve(factor_second, first.cov)))
    diff = second.mean - first.mean
    mahalanobis = float(diff @ scipy.linalg.cho_solve(factor_second, diff))
    value = 0.5 * (trace + mahalanobis - first.dim + logdet_second - logdet_first)
    # Rounding can leave a tiny negative value for near-identical distributions.
    return max(value, 0.0)


def kl_divergence(first: KernelDistribution, second: KernelDistribution) -> float:
    """
    KL(first || second) between two K-variate Gaussians, via Cholesky factors (no explicit inverse).

    Raises:
        DimensionError: If the dimensions differ.
        NumericalError: If a covariance is not positive definite.
    """
    if first.dim != second.dim:
        raise DimensionError(f"KL needs equal dimensions, got {first.dim} and {second.dim}")
    _, logdet_first = _factorize(first, "of the first distribution")
    factor_second, logdet_second = _factorize(second, "of the second distribution")
    return _kl_from_factors(first, second, logdet_first, factor_second, logdet_second)


def pairwise_kl(dists: Sequence[KernelDistribution]) -> np.ndarray:
    """Matrix M with M[i, j] = KL(dists[i] || dists[j]); each covariance is factorized once."""
    if len({d.dim for d in dists}) > 1:
        raise DimensionError("all distributions must share one dimension")
    factors = [_factorize(d, f"of unit {i}") for i, d in enumerate(dists)]
    out = np.zeros((len(dists), len(dists)))
    for i, first in enumerate(dists):
        for j, second in enumerate(dists):
            if i != j:
                out[i, j] = _kl_from_factors(first, second, factors[i][1], *factors[j])
    return out


def dense_activation_measure(activation: ArrayLike) -> Union[float, np.ndarray]:
    """tanh of a non-negative mean activation; a dead unit maps to 0."""
    result = np.tanh(np.asarray(activation, dtype=np.float64))
    return float(result) if result.ndim == 0 else result
