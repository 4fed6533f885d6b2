# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

import math
import os
import tempfile
import unittest
from dataclasses import replace
from typing import Any, Tuple

import numpy as np

from coreason_ising_pruning.exceptions import ConfigError, TrainingDivergedError
from coreason_ising_pruning.ising.graph import energy, flip_delta
from coreason_ising_pruning.model import Mask, load_checkpoint, masked_param_count, materialize_pruned, trainable_masks
from coreason_ising_pruning.model.network import CONV, DENSE
from coreason_ising_pruning.model.units import enumerate_units
from coreason_ising_pruning.pipelines.idx_utils import Dataset, SyntheticSpec, generate_synthetic
from coreason_ising_pruning.pipelines.pruning_pipeline import (
    batch_graph,
    build_network,
    collect_batch_stats,
    evaluate,
    finetune,
    learning_rate,
    report_ks,
    run_experiment,
    run_ipruning,
    save_run,
    topk_hits,
)
from coreason_ising_pruning.pipelines.reporting import read_curves, read_json
from coreason_ising_pruning.utils.config import TrainConfig


def small_config(**overrides: Any) -> TrainConfig:
    config = TrainConfig(
        epochs=2,
        batch_size=10,
        pop_size=4,
        classes=3,
        samples_per_class=10,
        test_samples_per_class=4,
        image_size=8,
        noise=0.05,
        eval_batch_size=16,
        runs=2,
    )
    return replace(config, **overrides).validate()


def small_data(config: TrainConfig) -> Tuple[Dataset, Dataset]:
    return generate_synthetic(SyntheticSpec.from_config(config))


def every_other_unit(size: int) -> Mask:
    return Mask((np.arange(size) % 2 == 0).astype(np.uint8))


class TestHelpers(unittest.TestCase):
    def test_report_ks(self) -> None:
        self.assertEqual(report_ks(2), (1,))
        self.assertEqual(report_ks(4), (1, 3))
        self.assertEqual(report_ks(10), (1, 3, 5))

    def test_learning_rate_schedule(self) -> None:
        config = small_config(learning_rate=0.05, lr_step_epochs=2, lr_gamma=0.1)
        self.assertEqual(learning_rate(config, 0), 0.05)
        self.assertEqual(learning_rate(config, 1), 0.05)
        self.assertAlmostEqual(learning_rate(config, 2), 0.005)
        self.assertEqual(learning_rate(small_config(), 7), small_config().learning_rate)

    def test_topk_ties_go_to_lower_index(self) -> None:
        scores = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 2.0]])
        np.testing.assert_array_equal(topk_hits(scores, np.array([1, 2]), 1), [False, False])
        np.testing.assert_array_equal(topk_hits(scores, np.array([0, 1]), 1), [True, True])
        np.testing.assert_array_equal(topk_hits(scores, np.array([1, 2]), 2), [True, True])

    def test_build_network_shape(self) -> None:
        config = small_config()
        train, _ = small_data(config)
        network = build_network(config, train)
        self.assertEqual(network.spec.input_shape, (1, 8, 8))
        self.assertEqual(network.spec.layers[-1].out_units, 3)
        self.assertEqual(enumerate_units(network.spec).D, 56)


class TestBatchStatistics(unittest.TestCase):
    def test_one_record_per_unit(self) -> None:
        config = small_config()
        train, _ = small_data(config)
        network = build_network(config, train)
        registry = enumerate_units(network.spec)
        stats = collect_batch_stats(network, registry, train.images[:10])
        self.assertEqual(sorted(stats.units), list(range(56)))
        for d in range(24):
            record = stats.units[d]
            self.assertEqual(record.kind, CONV)
            self.assertTrue(0.0 <= record.entropy <= 8.0)
            self.assertEqual(record.kernel.dim, 9)
        for d in range(24, 56):
            record = stats.units[d]
            self.assertEqual(record.kind, DENSE)
            self.assertTrue(0.0 <= record.activity < 1.0)

    def test_graph_is_balanced(self) -> None:
        config = small_config()
        train, _ = small_data(config)
        network = build_network(config, train)
        graph = batch_graph(network, enumerate_units(network.spec), train.images[:10], config)
        self.assertEqual(graph.D, 56)
        self.assertEqual(graph.bias, -graph.gamma_sum / 56)
        self.assertEqual([(a, b) for a, b, _ in graph.groups], [(0, 8), (8, 24), (24, 56)])
        self.assertAlmostEqual(energy(graph, np.ones(56)), 0.0, delta=1e-9)
        # KL clipped at 1 nat: within-layer weights never reward keeping a pair.
        within = graph.weight[(graph.src < 24) & (graph.dst < 24) & ((graph.src < 8) == (graph.dst < 8))]
        self.assertTrue(np.all(within <= 0.0))

    def dense_flip_deltas(self, config: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
        train, _ = small_data(config)
        network = build_network(config, train)
        graph = batch_graph(network, enumerate_units(network.spec), train.images[:10], config)
        zeros = np.zeros(56)
        deltas = np.array([flip_delta(graph, zeros, d) for d in range(24, 56)])
        return deltas, graph.linear[24:56]

    def test_layer_balance_keeps_above_mean_dense_units(self) -> None:
        deltas, h = self.dense_flip_deltas(small_config())
        np.testing.assert_allclose(deltas, -(h - h.mean()), atol=1e-12)
        self.assertTrue(np.any(deltas < 0.0))
        self.assertTrue(np.any(deltas > 0.0))

    def test_global_balance_prices_out_dense_units(self) -> None:
        # Single-channel kernel fits are nearly degenerate; their KL values dwarf every other weight.
        deltas, _ = self.dense_flip_deltas(small_config(balance="global", kl_ceiling=None))
        self.assertTrue(np.all(deltas > 1.0))


class TestEvaluate(unittest.TestCase):
    def setUp(self) -> None:
        self.config = small_config()
        self.train, self.test = small_data(self.config)
        self.network = build_network(self.config, self.train)

    def test_modes(self) -> None:
        full = evaluate(self.network, None, self.test, (1, 3))
        pruned = evaluate(self.network, Mask.ones(56), self.test, (1, 3))
        self.assertEqual(full.mode, "F")
        self.assertEqual(pruned.mode, "P")
        self.assertAlmostEqual(full.loss, pruned.loss, delta=1e-12)
        self.assertEqual(full.topk[3], 1.0)

    def test_masked_equals_materialized(self) -> None:
        mask = every_other_unit(56)
        masked = evaluate(self.network, mask, self.test, (1, 3), batch_size=5)
        small = evaluate(materialize_pruned(self.network, mask), None, self.test, (1, 3), batch_size=5)
        self.assertAlmostEqual(masked.loss, small.loss, delta=1e-9)
        self.assertEqual(masked.topk, small.topk)

    def test_k_out_of_range(self) -> None:
        with self.assertRaises(ConfigError):
            evaluate(self.network, None, self.test, (5,))
        with self.assertRaises(ConfigError):
            evaluate(self.network, None, self.test, (0,))

    def test_empty_dataset(self) -> None:
        empty = Dataset(np.zeros((0, 1, 8, 8)), np.zeros(0), "test", 3)
        with self.assertRaises(ConfigError):
            evaluate(self.network, None, empty)


class TestFinetune(unittest.TestCase):
    def test_frozen_units_keep_their_weights(self) -> None:
        config = small_config(weight_decay=1e-3)
        train, _ = small_data(config)
        network = build_network(config, train)
        before = network.copy()
        mask = every_other_unit(56)
        finetune(network, mask, config, train)
        keep = trainable_masks(network, mask)
        for after_p, before_p, trainable in zip(network.parameters(), before.parameters(), keep, strict=True):
            np.testing.assert_array_equal(after_p.data[~trainable], before_p.data[~trainable])
        self.assertFalse(np.array_equal(network.weights[0].data, before.weights[0].data))

    def test_non_finite_loss(self) -> None:
        config = small_config()
        train, _ = small_data(config)
        network = build_network(config, train)
        images = train.images.copy()
        images[0, 0, 0, 0] = np.nan
        poisoned = Dataset(images, train.labels, "train", train.classes)
        with self.assertRaises(TrainingDivergedError):
            finetune(network, Mask.ones(56), replace(config, batch_size=len(train)), poisoned)


class TestRunIPruning(unittest.TestCase):
    def test_zero_epochs(self) -> None:
        config = small_config(epochs=0)
        train, test = small_data(config)
        network = build_network(config, train)
        before = network.copy()
        _, mask, report = run_ipruning(config, network, train, test)
        self.assertEqual(report.iterations, [])
        self.assertEqual(report.epochs, [])
        self.assertEqual(len(mask), 56)
        self.assertEqual(report.status, "completed")
        self.assertIsNotNone(report.final)
        for after_p, before_p in zip(network.parameters(), before.parameters(), strict=True):
            np.testing.assert_array_equal(after_p.data, before_p.data)

    def test_disabled_search_matches_plain_finetune(self) -> None:
        config = small_config(early_threshold=math.inf)
        train, test = small_data(config)
        network, mask, report = run_ipruning(config, build_network(config, train), train, test)
        self.assertEqual(report.converged_epoch, 0)
        self.assertTrue(all(e.converged for e in report.epochs))

        reference = finetune(build_network(config, train), mask, config, train)
        for ours, theirs in zip(network.parameters(), reference.parameters(), strict=True):
            np.testing.assert_array_equal(ours.data, theirs.data)

        kept, total = masked_param_count(network, mask)
        self.assertTrue(all(r.kept_rate == kept / total for r in report.iterations))
        assert report.final is not None
        self.assertEqual(report.final.kept_rate, kept / total)

    def test_iteration_records(self) -> None:
        config = small_config(epochs=2)
        train, test = small_data(config)
        _, mask, report = run_ipruning(config, build_network(config, train), train, test)
        self.assertEqual(len(report.iterations), 6)
        self.assertEqual([r.t for r in report.iterations], list(range(6)))
        for record in report.iterations:
            self.assertLessEqual(record.best_energy, record.mean_energy)
            self.assertTrue(0.0 < record.kept_rate <= 1.0)
        self.assertEqual([e.epoch for e in report.epochs], [1, 2])
        self.assertTrue(all(e.spread <= 0.0 for e in report.epochs))
        assert report.final is not None
        self.assertEqual(report.final.units, 56)
        self.assertEqual(report.final.kept_units, int(mask.state.sum()))
        self.assertEqual(report.final.kept_rate, report.final.kept_params / report.final.total_params)

    def test_early_convergence_freezes_the_state(self) -> None:
        config = small_config(epochs=3, early_threshold=1e300)
        train, test = small_data(config)
        _, mask, report = run_ipruning(config, build_network(config, train), train, test)
        self.assertEqual(report.converged_epoch, 1)
        self.assertEqual([e.converged for e in report.epochs], [True, True, True])
        assert report.final is not None
        later = {r.kept_rate for r in report.iterations[3:]}
        self.assertEqual(later, {report.final.kept_rate})

    def test_patience(self) -> None:
        config = small_config(epochs=3, early_threshold=1e300, patience=2)
        train, test = small_data(config)
        _, _, report = run_ipruning(config, build_network(config, train), train, test)
        self.assertEqual(report.converged_epoch, 2)
        self.assertEqual([e.converged for e in report.epochs], [False, True, True])

    def test_deterministic(self) -> None:
        config = small_config()
        train, test = small_data(config)
        first_net, first_mask, first = run_ipruning(config, build_network(config, train), train, test)
        second_net, second_mask, second = run_ipruning(config, build_network(config, train), train, test)
        self.assertEqual(first_mask, second_mask)
        self.assertEqual(first.iterations, second.iterations)
        for a, b in zip(first_net.parameters(), second_net.parameters(), strict=True):
            np.testing.assert_array_equal(a.data, b.data)

    def test_artifacts_are_byte_identical(self) -> None:
        config = small_config()
        train, test = small_data(config)
        with tempfile.TemporaryDirectory() as tmp:
            for name in ("a", "b"):
                network, mask, report = run_ipruning(config, build_network(config, train), train, test)
                save_run(os.path.join(tmp, name), network, mask, report)
            for artifact in ("report.json", "curves.csv", "model.iprn"):
                with open(os.path.join(tmp, "a", artifact), "rb") as f:
                    first = f.read()
                with open(os.path.join(tmp, "b", artifact), "rb") as f:
                    self.assertEqual(f.read(), first, artifact)

    def test_empty_training_set(self) -> None:
        config = small_config()
        train, _ = small_data(config)
        empty = Dataset(np.zeros((0, 1, 8, 8)), np.zeros(0), "train", 3)
        with self.assertRaises(ConfigError):
            run_ipruning(config, build_network(config, train), empty)

    def test_save_run(self) -> None:
        config = small_config(epochs=1)
        train, test = small_data(config)
        network, mask, report = run_ipruning(config, build_network(config, train), train, test)
        with tempfile.TemporaryDirectory() as tmp:
            paths = save_run(os.path.join(tmp, "out"), network, mask, report)
            loaded_net, loaded_mask = load_checkpoint(paths["model"])
            rows = read_curves(paths["curves"])
            payload = read_json(paths["report"])
        self.assertEqual(loaded_mask, mask)
        np.testing.assert_array_equal(loaded_net.weights[2].data, network.weights[2].data)
        self.assertEqual(len(rows), len(report.iterations))
        self.assertEqual(payload["iterations"], 3)
        self.assertEqual(payload["final"]["R"], rows[-1]["kept_rate"])


class TestRunExperiment(unittest.TestCase):
    def test_two_seeds(self) -> None:
        config = small_config(epochs=1, runs=2, seed=3)
        train, test = small_data(config)
        with tempfile.TemporaryDirectory() as tmp:
            summary = run_experiment(config, train, test, tmp)
            self.assertTrue(os.path.exists(os.path.join(tmp, "summary.json")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "run-3", "report.json")))
            self.assertTrue(os.path.exists(os.path.join(tmp, "run-4", "model.iprn")))
        self.assertEqual([run["seed"] for run in summary["runs"]], [3, 4])
        aggregate = summary["aggregate"]
        self.assertEqual(set(aggregate), {"R", "F_top1", "P_top1", "P_loss", "baseline_top1", "baseline_loss"})
        rates = [run["R"] for run in summary["runs"]]
        self.assertAlmostEqual(aggregate["R"]["mean"], sum(rates) / 2)
        self.assertTrue(all(0.0 < r <= 1.0 for r in rates))


@unittest.skipUnless(os.environ.get("IPRUNING_SLOW") == "1", "desk-scale experiment; set IPRUNING_SLOW=1")
class TestDeskScaleExperiment(unittest.TestCase):
    def test_default_synthetic_experiment(self) -> None:
        config = TrainConfig().validate()
        train, test = small_data(config)
        summary = run_experiment(config, train, test)
        aggregate = summary["aggregate"]
        self.assertTrue(0.35 <= aggregate["R"]["mean"] <= 0.65)
        self.assertGreaterEqual(aggregate["P_top1"]["mean"], aggregate["baseline_top1"]["mean"] - 0.10)
        self.assertLessEqual(abs(aggregate["F_top1"]["mean"] - aggregate["P_top1"]["mean"]), 0.02)
