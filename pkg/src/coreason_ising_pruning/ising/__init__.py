# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

from coreason_ising_pruning.ising.evolve import (
    StatePopulation,
    best_state,
    crossover,
    evolve_step,
    init_population,
    mutate,
    rescore,
    select,
    spawn_streams,
    state_spread,
)
from coreason_ising_pruning.ising.graph import (
    BatchStats,
    PruningGraph,
    UnitStats,
    build_graph,
    compute_bias,
    energies,
    energy,
)

__all__ = [
    "BatchStats",
    "PruningGraph",
    "StatePopulation",
    "UnitStats",
    "best_state",
    "build_graph",
    "compute_bias",
    "crossover",
    "energies",
    "energy",
    "evolve_step",
    "init_population",
    "mutate",
    "rescore",
    "select",
    "spawn_streams",
    "state_spread",
]
