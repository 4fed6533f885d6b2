# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

import importlib
import json
import os
import tempfile
import unittest
from typing import List
from unittest.mock import MagicMock, patch

import numpy as np

from coreason_ising_pruning.exceptions import TrainingDivergedError, UsageError
from coreason_ising_pruning.main import get_args, main, resolve_config
from coreason_ising_pruning.model import Mask, load_checkpoint, save_checkpoint
from coreason_ising_pruning.model.units import enumerate_units

# The package re-exports main(), which shadows the module attribute on some interpreters.
cli = importlib.import_module("coreason_ising_pruning.main")

TINY = [
    "--epochs",
    "1",
    "--batch-size",
    "10",
    "--pop-size",
    "4",
    "--set",
    "classes=3",
    "--set",
    "samples_per_class=5",
    "--set",
    "test_samples_per_class=2",
    "--set",
    "image_size=8",
]


class TestArguments(unittest.TestCase):
    def test_get_args(self) -> None:
        args = get_args(["train", "--epochs", "3", "--seed", "1", "--set", "noise=0.2"])
        self.assertEqual(args.command, "train")
        self.assertEqual(args.epochs, 3)
        self.assertEqual(args.seed, 1)
        self.assertEqual(args.assignments, ["noise=0.2"])
        self.assertIsNone(args.pop_size)

    def test_usage_errors(self) -> None:
        with self.assertRaises(UsageError):
            get_args([])
        with self.assertRaises(UsageError):
            get_args(["train", "--no-such-flag"])
        with self.assertRaises(UsageError):
            get_args(["train", "--epochs", "three"])

    def test_repeated_flags_are_audited(self) -> None:
        config = resolve_config(get_args(["train", "--seed", "1", "--seed", "2", "--epochs", "4"]))
        self.assertEqual(config.seed, 2)
        self.assertEqual(config.epochs, 4)
        self.assertEqual(config.cli_audit, {"seed": ["1", "2"]})

    def test_flags_override_file(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "run.cfg")
            with open(path, "w") as f:
                f.write("epochs = 3\nseed = 9\n")
            config = resolve_config(get_args(["train", "--config", path, "--epochs", "5", "--set", "seed=11"]))
        self.assertEqual(config.epochs, 5)
        self.assertEqual(config.seed, 11)


class TestExitCodes(unittest.TestCase):
    def test_usage_is_one(self) -> None:
        self.assertEqual(main([]), 1)
        self.assertEqual(main(["train", "--set", "epochz=3"]), 1)
        self.assertEqual(main(["train", "--set", "epochs"]), 1)

    def test_invalid_config_is_one(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(main(["train", "--pop-size", "3", "--out", tmp]), 1)

    @patch.object(cli, "run_ipruning")
    def test_runtime_failure_is_two(self, mock_run: MagicMock) -> None:
        mock_run.side_effect = TrainingDivergedError("training loss is nan")
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(main(["train", "--out", tmp, *TINY]), 2)
        mock_run.assert_called_once()

    def test_missing_run_is_two(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(main(["evaluate", "--out", os.path.join(tmp, "absent")]), 2)

    @patch.object(cli, "run_experiment")
    def test_experiment_dispatch(self, mock_experiment: MagicMock) -> None:
        mock_experiment.return_value = {"aggregate": {"R": {"mean": 0.5, "std": 0.1}}}
        with tempfile.TemporaryDirectory() as tmp:
            self.assertEqual(main(["experiment", "--out", tmp, "--runs", "3", *TINY]), 0)
        config = mock_experiment.call_args.args[0]
        self.assertEqual(config.runs, 3)


class TestCommands(unittest.TestCase):
    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = os.path.join(self.tmp.name, "run")

    def _files(self) -> List[str]:
        return sorted(os.listdir(self.out))

    def test_train_evaluate_prune_dump(self) -> None:
        self.assertEqual(main(["train", "--out", self.out, *TINY]), 0)
        for name in ("report.json", "curves.csv", "model.iprn", "run.log"):
            self.assertIn(name, self._files())
        with open(os.path.join(self.out, "report.json")) as f:
            report = json.load(f)
        self.assertEqual(report["status"], "completed")
        self.assertEqual(report["config"]["image_size"], 8)

        self.assertEqual(main(["evaluate", "--out", self.out]), 0)
        with open(os.path.join(self.out, "evaluation.json")) as f:
            evaluation = json.load(f)
        self.assertAlmostEqual(evaluation["P"]["loss"], report["final"]["P"]["loss"], delta=1e-12)
        self.assertEqual(evaluation["P"]["top1"], report["final"]["P"]["top1"])
        self.assertEqual(evaluation["F"]["top1"], report["final"]["F"]["top1"])

        self.assertEqual(main(["dump-graph", "--out", self.out]), 0)
        with open(os.path.join(self.out, "graph.txt")) as f:
            self.assertTrue(f.read().splitlines()[-1].startswith("bias "))

        network, _ = load_checkpoint(os.path.join(self.out, "model.iprn"))
        custom = os.path.join(self.tmp.name, "custom.iprn")
        save_checkpoint(custom, network, Mask((np.arange(56) % 2 == 0).astype(np.uint8)))
        self.assertEqual(main(["prune", "--out", self.out, "--checkpoint", custom]), 0)
        compact, compact_mask = load_checkpoint(os.path.join(self.out, "pruned.iprn"))
        self.assertEqual(enumerate_units(compact.spec).D, 28)
        self.assertEqual(int(compact_mask.state.sum()), 28)
