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
Training with an evolving pruning state.

Each mini-batch: an unmasked, gradient-free pass gathers unit statistics; the
pruning graph is rebuilt from them; one differential-evolution step runs over the
state population; the best state masks the network for a forward/backward pass
that updates only surviving weights. After every epoch the population spread is
checked and, once it stays within the threshold, the best state is frozen and the
remaining epochs fine-tune that subnetwork.
"""

import math
import os
import statistics
from dataclasses import replace
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from coreason_ising_pruning.engine import SGD, ComputationTape, Tensor, backward, softmax_cross_entropy
from coreason_ising_pruning.exceptions import ConfigError, TrainingDivergedError
from coreason_ising_pruning.ising.evolve import (
    StatePopulation,
    best_state,
    evolve_step,
    init_population,
    rescore,
    spawn_streams,
    state_spread,
)
from coreason_ising_pruning.ising.graph import BatchStats, PruningGraph, UnitStats, build_graph, energies
from coreason_ising_pruning.ising.stats import dense_activation_measure, feature_map_entropies, fit_kernel_distribution
from coreason_ising_pruning.model.checkpoint import save_checkpoint
from coreason_ising_pruning.model.network import CONV, Network, toy_network_spec
from coreason_ising_pruning.model.units import (
    Mask,
    UnitRegistry,
    enumerate_units,
    masked_param_count,
    trainable_masks,
)
from coreason_ising_pruning.pipelines.idx_utils import Dataset
from coreason_ising_pruning.pipelines.reporting import (
    EpochRecord,
    EvalMetrics,
    FinalMetrics,
    IterationRecord,
    RunReport,
    write_report,
    write_summary,
)
from coreason_ising_pruning.utils.config import TrainConfig

DEFAULT_KS = (1, 3, 5)
INITIAL_TAG = -1

# Child stream order under SeedSequence(config.seed).
_SHUFFLE, _INIT, _ROWS = range(3)


def _streams(seed: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(3)


def report_ks(classes: int) -> Tuple[int, ...]:
    """The Top-k cut-offs that make sense for ``classes`` classes."""
    return tuple(k for k in DEFAULT_KS if k <= classes)


def build_network(config: TrainConfig, dataset: Dataset) -> Network:
    channels, height, width = dataset.sample_shape
    if height != width:
        raise ConfigError(f"the toy network expects square images, got {height}x{width}")
    return Network(toy_network_spec(channels, height, dataset.classes), seed=config.seed)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    if config.lr_step_epochs <= 0:
        return config.learning_rate
    return float(config.learning_rate * config.lr_gamma ** (epoch // config.lr_step_epochs))


def _batches(size: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(size)
    for start in range(0, size, batch_size):
        yield order[start : start + batch_size]


def collect_batch_stats(
    network: Network, registry: UnitRegistry, x: np.ndarray, epsilon: float = 1e-6
) -> BatchStats:
    """
    Unmasked, gradient-free forward pass producing one statistics record per unit.

    Convolutional units get the entropy of their batch-pooled feature map and the
    Gaussian fit of their kernel; dense hidden units get tanh of their batch-mean activation.
    """
    maps: List[np.ndarray] = []
    network.forward(x, capture=maps)
    units: Dict[int, UnitStats] = {}
    for layer in registry.prunable_layers:
        span = registry.layer_range(layer)
        activations = maps[layer]
        if registry.layer_kinds[layer] == CONV:
            entropies = feature_map_entropies(activations)
            dead = int((activations.max(axis=(0, 2, 3)) <= 0).sum())
            if dead:
                logger.warning(f"Layer {layer}: {dead} of {len(span)} feature maps are dead on this batch")
            kernels = network.weights[layer].data
            for i, d in enumerate(span):
                units[d] = UnitStats(
                    kind=CONV,
                    entropy=float(entropies[i]),
                    kernel=fit_kernel_distribution(kernels[i], epsilon),
                )
        else:
            activity = dense_activation_measure(activations.mean(axis=0))
            for i, d in enumerate(span):
                units[d] = UnitStats(kind=registry.layer_kinds[layer], activity=float(activity[i]))
    return BatchStats(units=units)


def batch_graph(network: Network, registry: UnitRegistry, x: np.ndarray, config: TrainConfig) -> PruningGraph:
    stats = collect_batch_stats(network, registry, x, config.kl_epsilon)
    return build_graph(registry, stats, config.kl_ceiling, config.balance)


def _train_step(
    network: Network, optimizer: SGD, registry: UnitRegistry, mask: Mask, x: np.ndarray, y: np.ndarray
) -> float:
    tape = ComputationTape()
    optimizer.zero_grad()
    logits = network.forward(Tensor(x), keep=registry.split(mask.state), tape=tape)
    loss = softmax_cross_entropy(logits, y, tape)
    value = loss.item()
    if not math.isfinite(value):
        logger.error(f"Loss diverged to {value}")
        raise TrainingDivergedError(f"training loss is {value}; lower the learning rate")
    backward(loss, tape)
    optimizer.step(trainable_masks(network, mask))
    return value


def _check_dataset(dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ConfigError(f"{dataset.split} dataset is empty")


def make_optimizer(config: TrainConfig, network: Network) -> SGD:
    return SGD(
        network.parameters(),
        lr=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def finetune(
    network: Network,
    mask: Mask,
    config: TrainConfig,
    dataset: Dataset,
    epochs: Optional[int] = None,
    optimizer: Optional[SGD] = None,
    shuffle_rng: Optional[np.random.Generator] = None,
    first_epoch: int = 0,
) -> Network:
    """
    Masked training of a fixed subnetwork; no evolution and no statistics passes.

    The network is updated in place and returned.
    """
    _check_dataset(dataset)
    registry = enumerate_units(network.spec)
    optimizer = optimizer or make_optimizer(config, network)
    rng = shuffle_rng or np.random.default_rng(_streams(config.seed)[_SHUFFLE])
    total = config.epochs if epochs is None else epochs
    for epoch in range(first_epoch, first_epoch + total):
        optimizer.lr = learning_rate(config, epoch)
        losses = [
            _train_step(network, optimizer, registry, mask, dataset.images[idx], dataset.labels[idx])
            for idx in _batches(len(dataset), config.batch_size, rng)
        ]
        logger.info(f"Fine-tune epoch {epoch + 1}: loss={statistics.fmean(losses):.4f}")
    return network


def train_baseline(config: TrainConfig, network: Network, dataset: Dataset) -> Network:
    """Unpruned training for the same number of epochs as a pruning run."""
    return finetune(network, Mask.ones(enumerate_units(network.spec).D), config, dataset)


def logits(network: Network, x: np.ndarray, mask: Optional[Mask] = None) -> np.ndarray:
    keep = enumerate_units(network.spec).split(mask.state) if mask is not None else None
    return network.forward(x, keep=keep).data


def topk_hits(scores: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    """Whether each label is among the ``k`` largest scores; ties go to the lower class index."""
    order = np.argsort(-scores, axis=1, kind="stable")
    return np.asarray((order[:, :k] == labels[:, None]).any(axis=1))


def evaluate(
    network: Network,
    mask: Optional[Mask],
    dataset: Dataset,
    ks: Sequence[int] = DEFAULT_KS,
    batch_size: int = 256,
) -> EvalMetrics:
    """
    Mean cross-entropy and Top-k accuracy.

    With ``mask=None`` the full network is used (mode "F"), otherwise the masked one (mode "P").

    Raises:
        ConfigError: If a k exceeds the class count or the dataset is empty.
    """
    _check_dataset(dataset)
    classes = network.spec.layers[-1].out_units
    for k in ks:
        if not 1 <= k <= classes:
            raise ConfigError(f"top-{k} accuracy is undefined for {classes} classes")
    loss_sum = 0.0
    hits = {k: 0 for k in ks}
    for start in range(0, len(dataset), batch_size):
        x = dataset.images[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        scores = logits(network, x, mask)
        loss_sum += softmax_cross_entropy(Tensor(scores), y).item() * y.shape[0]
        for k in ks:
            hits[k] += int(topk_hits(scores, y, k).sum())
    n = len(dataset)
    return EvalMetrics(mode="F" if mask is None else "P", loss=loss_sum / n, topk={k: hits[k] / n for k in ks})


def _final_metrics(
    network: Network, mask: Mask, config: TrainConfig, train_set: Dataset, test_set: Dataset
) -> FinalMetrics:
    ks = report_ks(network.spec.layers[-1].out_units)
    target = test_set if len(test_set) else train_set
    kept, total = masked_param_count(network, mask)
    return FinalMetrics(
        train_loss=evaluate(network, mask, train_set, ks, config.eval_batch_size).loss,
        full=evaluate(network, None, target, ks, config.eval_batch_size),
        pruned=evaluate(network, mask, target, ks, config.eval_batch_size),
        kept_rate=kept / total,
        kept_params=kept,
        total_params=total,
        kept_units=int(mask.state.sum()),
        units=len(mask),
    )


def _score_initial(
    pop: StatePopulation, network: Network, registry: UnitRegistry, config: TrainConfig, dataset: Dataset
) -> Mask:
    """Score the t=0 population on the first (unshuffled) batch and return its best state."""
    graph = batch_graph(network, registry, dataset.images[: config.batch_size], config)
    rescore(pop, lambda states: energies(graph, states), INITIAL_TAG)
    state, value = best_state(pop)
    logger.debug(f"Initial population scored: best energy {value:.6g}")
    return Mask(state)


def run_ipruning(
    config: TrainConfig,
    network: Network,
    train_set: Dataset,
    test_set: Optional[Dataset] = None,
) -> Tuple[Network, Mask, RunReport]:
    """
    Train ``network`` while evolving its pruning state.

    Returns:
        The trained network (updated in place), the final best mask and the run report.

    Raises:
        ConfigError: On an empty training set or an invalid configuration.
        TrainingDivergedError: If the loss becomes NaN or infinite.
    """
    config.validate()
    _check_dataset(train_set)
    registry = enumerate_units(network.spec)
    streams = _streams(config.seed)
    shuffle_rng = np.random.default_rng(streams[_SHUFFLE])
    pop = init_population(config.pop_size, registry.D, np.random.default_rng(streams[_INIT]))
    row_rngs = spawn_streams(streams[_ROWS], config.pop_size)
    optimizer = make_optimizer(config, network)
    report = RunReport(config=config.to_dict())

    converged = math.isinf(config.early_threshold)
    mask: Optional[Mask] = None
    if converged or config.epochs == 0:
        mask = _score_initial(pop, network, registry, config, train_set)
    if converged:
        report.converged_epoch = 0
        logger.info("State search disabled from the start; training the initial best subnetwork")

    logger.info(
        f"IPruning run: D={registry.D}, S={config.pop_size}, epochs={config.epochs}, "
        f"batches/epoch={math.ceil(len(train_set) / config.batch_size)}"
    )
    t = 0
    calm_epochs = 0
    for epoch in range(config.epochs):
        optimizer.lr = learning_rate(config, epoch)
        losses: List[float] = []
        for idx in _batches(len(train_set), config.batch_size, shuffle_rng):
            x, y = train_set.images[idx], train_set.labels[idx]
            if not converged:
                graph = batch_graph(network, registry, x, config)
                evolve_step(pop, graph, t, config.mutation_factor, config.crossover, row_rngs)
                state, best_energy = best_state(pop)
                mask = Mask(state)
                logger.debug(f"t={t}: edges={graph.weight.size}, bias={graph.bias:.6g}, best={best_energy:.6g}")
            assert mask is not None
            loss = _train_step(network, optimizer, registry, mask, x, y)
            losses.append(loss)
            kept, total = masked_param_count(network, mask)
            report.add_iteration(
                IterationRecord(
                    t=t,
                    mean_energy=float(pop.energies.mean()),
                    best_energy=float(pop.energies.min()),
                    kept_rate=kept / total,
                    loss=loss,
                )
            )
            t += 1

        spread = state_spread(pop)
        if not converged:
            calm_epochs = calm_epochs + 1 if abs(spread) <= config.early_threshold else 0
            if calm_epochs >= config.patience:
                converged = True
                report.converged_epoch = epoch + 1
                logger.info(f"Early state convergence after epoch {epoch + 1}; fine-tuning the best subnetwork")
        mean_loss = statistics.fmean(losses) if losses else float("nan")
        report.epochs.append(EpochRecord(epoch=epoch + 1, mean_loss=mean_loss, spread=spread, converged=converged))
        logger.info(
            f"Epoch {epoch + 1}/{config.epochs}: loss={mean_loss:.4f}, spread={spread:.6g}, "
            f"kept_rate={report.iterations[-1].kept_rate if report.iterations else 1.0:.4f}"
        )

    assert mask is not None
    report.final = _final_metrics(network, mask, config, train_set, test_set or train_set)
    report.status = "completed"
    full_top1 = report.final.full.topk.get(1, float("nan"))
    pruned_top1 = report.final.pruned.topk.get(1, float("nan"))
    logger.info(f"Run finished: R={report.final.kept_rate:.4f}, top1 F={full_top1:.4f} P={pruned_top1:.4f}")
    return network, mask, report


def save_run(out_dir: str, network: Network, mask: Mask, report: RunReport) -> Dict[str, str]:
    """Write report.json, curves.csv and model.iprn into ``out_dir``."""
    paths = write_report(report, out_dir)
    paths["model"] = os.path.join(out_dir, "model.iprn")
    save_checkpoint(paths["model"], network, mask)
    return paths


def _mean_std(values: Sequence[float]) -> Dict[str, float]:
    return {
        "mean": statistics.fmean(values),
        "std": statistics.pstdev(values) if len(values) > 1 else 0.0,
    }


def run_experiment(
    config: TrainConfig,
    train_set: Dataset,
    test_set: Dataset,
    out_dir: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Seed-averaged comparison of pruning runs against unpruned baselines.

    Runs seeds ``seed .. seed + runs - 1``; every run gets its own network
    initialization, and the baseline of a seed starts from the same weights.
    """
    config.validate()
    ks = report_ks(train_set.classes)
    target = test_set if len(test_set) else train_set
    per_run: List[Dict[str, Any]] = []
    for run_seed in range(config.seed, config.seed + config.runs):
        run_config = replace(config, seed=run_seed)
        network = build_network(run_config, train_set)
        baseline = train_baseline(run_config, network.copy(), train_set)
        network, mask, report = run_ipruning(run_config, network, train_set, test_set)
        assert report.final is not None
        base_metrics = evaluate(baseline, None, target, ks, config.eval_batch_size)
        if out_dir is not None:
            save_run(os.path.join(out_dir, f"run-{run_seed}"), network, mask, report)
        per_run.append(
            {
                "seed": run_seed,
                "R": report.final.kept_rate,
                "F_top1": report.final.full.topk[1],
                "P_top1": report.final.pruned.topk[1],
                "P_loss": report.final.pruned.loss,
                "baseline_top1": base_metrics.topk[1],
                "baseline_loss": base_metrics.loss,
                "converged_epoch": report.converged_epoch,
            }
        )
        logger.info(f"Experiment run seed={run_seed} done: R={report.final.kept_rate:.4f}")

    metrics = ("R", "F_top1", "P_top1", "P_loss", "baseline_top1", "baseline_loss")
    summary: Dict[str, Any] = {
        "config": config.to_dict(),
        "runs": per_run,
        "aggregate": {name: _mean_std([run[name] for run in per_run]) for name in metrics},
    }
    if out_dir is not None:
        write_summary(summary, out_dir)
    return summary
