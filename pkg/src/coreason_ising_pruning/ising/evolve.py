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
Binary differential evolution over pruning states.

mutation:  v_d = 1 - s_i1,d  if s_i2,d != s_i3,d and r_d < F, else s_i1,d
crossover: s~_d = v_d        if r'_d <= C,                    else s_i,d
selection: keep the candidate when its energy is <= the parent's
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import fsspec
import numpy as np
from loguru import logger
from numpy.typing import ArrayLike

from coreason_ising_pruning.exceptions import ConfigError, ConsistencyError, InputError
from coreason_ising_pruning.ising.graph import PruningGraph, energies

MIN_POPULATION = 4

EnergyFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class StatePopulation:
    """
    S x D binary states with their energies.

    ``tag`` identifies the graph the energies were computed against; ``None``
    means the energies are not valid yet.
    """

    states: np.ndarray
    energies: np.ndarray
    t: int = 0
    tag: Optional[int] = None

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def dim(self) -> int:
        return int(self.states.shape[1])


def spawn_streams(seed: Union[int, np.random.SeedSequence], count: int) -> List[np.random.Generator]:
    """Independent, reproducible generators split from one master seed."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in root.spawn(count)]


def init_population(size: int, dim: int, rng: np.random.Generator) -> StatePopulation:
    """
    Draw every bit from Bernoulli(0.5).

    Raises:
        ConfigError: If S < 4 or D < 1.
    """
    if size < MIN_POPULATION:
        raise ConfigError(f"population size must be at least {MIN_POPULATION}, got {size}")
    if dim < 1:
        raise ConfigError(f"state dimension must be at least 1, got {dim}")
    states = (rng.random((size, dim)) < 0.5).astype(np.uint8)
    return StatePopulation(states=states, energies=np.full(size, np.nan))


def mutate(pop: StatePopulation, i: int, factor: float, rng: np.random.Generator) -> np.ndarray:
    """
    Mutation vector for row ``i`` from three distinct rows other than ``i``.

    Raises:
        ConfigError: If the population is too small to draw distinct rows.
    """
    if pop.size < MIN_POPULATION:
        raise ConfigError(f"mutation needs at least {MIN_POPULATION} states, got {pop.size}")
    others = np.delete(np.arange(pop.size), i)
    i1, i2, i3 = rng.choice(others, size=3, replace=False)
    base = pop.states[i1]
    flip = (pop.states[i2] != pop.states[i3]) & (rng.random(pop.dim) < factor)
    return np.where(flip, 1 - base, base).astype(np.uint8)


def crossover(mutant: ArrayLike, parent: ArrayLike, rate: float, rng: np.random.Generator) -> np.ndarray:
    """
    Uniform crossover between a mutation vector and its parent.

    Raises:
        InputError: If the vectors differ in length.
    """
    v = np.asarray(mutant, dtype=np.uint8)
    s = np.asarray(parent, dtype=np.uint8)
    if v.shape != s.shape:
        raise InputError(f"crossover of vectors with shapes {v.shape} and {s.shape}")
    return np.where(rng.random(v.shape[0]) <= rate, v, s).astype(np.uint8)


def rescore(pop: StatePopulation, energy_fn: EnergyFn, tag: int) -> StatePopulation:
    """Re-evaluate the parents against the current graph and stamp the population with its tag."""
    pop.energies = np.asarray(energy_fn(pop.states), dtype=np.float64)
    pop.tag = tag
    return pop


def select(pop: StatePopulation, candidates: ArrayLike, candidate_energies: ArrayLike, tag: int) -> StatePopulation:
    """
    Replace each row by its candidate when the candidate's energy is <= the parent's.

    Raises:
        ConsistencyError: If the parent energies were computed against another graph.
    """
    if pop.tag != tag:
        raise ConsistencyError(f"population energies are stale (scored on graph {pop.tag}, candidates on {tag})")
    cand = np.asarray(candidates, dtype=np.uint8)
    cand_energies = np.asarray(candidate_energies, dtype=np.float64)
    if cand.shape != pop.states.shape or cand_energies.shape != pop.energies.shape:
        raise InputError("candidates must match the population shape")
    accept = cand_energies <= pop.energies
    pop.states = np.where(accept[:, None], cand, pop.states)
    pop.energies = np.where(accept, cand_energies, pop.energies)
    pop.t += 1
    return pop


def best_state(pop: StatePopulation) -> Tuple[np.ndarray, float]:
    """Lowest-energy row (first one on ties) and its energy."""
    index = int(np.argmin(pop.energies))
    return pop.states[index].copy(), float(pop.energies[index])


def state_spread(pop: StatePopulation) -> float:
    """Best energy minus mean energy; never positive, zero exactly at consensus."""
    if np.all(pop.energies == pop.energies[0]):
        return 0.0
    return min(float(pop.energies.min() - pop.energies.mean()), 0.0)


def evolve_step(
    pop: StatePopulation,
    graph: PruningGraph,
    tag: int,
    factor: float,
    rate: float,
    row_rngs: Sequence[np.random.Generator],
) -> StatePopulation:
    """Rescore parents on ``graph``, then mutate, cross over, score and select every row."""
    if len(row_rngs) != pop.size:
        raise ConfigError(f"{len(row_rngs)} row generators for {pop.size} states")
    rescore(pop, lambda states: energies(graph, states), tag)
    candidates = np.empty_like(pop.states)
    for i in range(pop.size):
        mutant = mutate(pop, i, factor, row_rngs[i])
        candidates[i] = crossover(mutant, pop.states[i], rate, row_rngs[i])
    return select(pop, candidates, energies(graph, candidates), tag)


def dump_population(pop: StatePopulation, path: str) -> None:
    """One line per row: hex-packed bits (little bit order) and the row's energy."""
    with fsspec.open(path, "w") as f:
        f.write(f"# t={pop.t} S={pop.size} D={pop.dim}\n")
        for row, value in zip(pop.states, pop.energies, strict=True):
            f.write(f"{np.packbits(row, bitorder='little').tobytes().hex()} {float(value)!r}\n")
    logger.info(f"Population snapshot written to {path}")
