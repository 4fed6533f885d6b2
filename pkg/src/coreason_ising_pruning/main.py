# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

import argparse
import os
import sys
from typing import Any, Callable, Dict, List, Optional, Sequence

from coreason_ising_pruning.exceptions import ConfigError, IPruningError, UsageError
from coreason_ising_pruning.ising.graph import dump_graph
from coreason_ising_pruning.model.checkpoint import load_checkpoint, save_checkpoint
from coreason_ising_pruning.model.units import Mask, enumerate_units, materialize_pruned
from coreason_ising_pruning.pipelines.idx_utils import load_dataset
from coreason_ising_pruning.pipelines.pruning_pipeline import (
    batch_graph,
    build_network,
    evaluate,
    report_ks,
    run_experiment,
    run_ipruning,
    save_run,
)
from coreason_ising_pruning.pipelines.reporting import REPORT_FILE, read_json, write_evaluation
from coreason_ising_pruning.utils.config import (
    CONFIG_KEYS,
    TrainConfig,
    build_config,
    coerce_value,
    load_config_file,
)
from coreason_ising_pruning.utils.logger import add_run_sink, logger

# (flag, config key, type)
OVERRIDE_FLAGS = (
    ("--epochs", "epochs", int),
    ("--batch-size", "batch_size", int),
    ("--pop-size", "pop_size", int),
    ("--mutation-factor", "mutation_factor", float),
    ("--crossover", "crossover", float),
    ("--seed", "seed", int),
    ("--dataset", "dataset", str),
    ("--early-threshold", "early_threshold", float),
    ("--runs", "runs", int),
    ("--out", "out", str),
)


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that raises :class:`UsageError` instead of exiting."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


class AuditedStore(argparse.Action):
    """Store the value and remember every occurrence so repeated flags can be reported."""

    def __call__(
        self,
        parser: argparse.ArgumentParser,
        namespace: argparse.Namespace,
        values: Any,
        option_string: Optional[str] = None,
    ) -> None:
        seen: Dict[str, List[str]] = getattr(namespace, "flag_history", None) or {}
        seen.setdefault(self.dest, []).append(str(values))
        namespace.flag_history = seen
        setattr(namespace, self.dest, values)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat 'key = value' configuration file.")
    for flag, key, kind in OVERRIDE_FLAGS:
        parser.add_argument(flag, dest=key, type=kind, default=None, action=AuditedStore)
    parser.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override any configuration key.",
    )
    parser.add_argument("--checkpoint", help="Checkpoint path (default: <out>/model.iprn).")


def get_args(args: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = CliParser(prog="ipruning", description="Ising-energy structured pruning of small CNNs")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    for name, help_text in (
        ("train", "Train while evolving the pruning state."),
        ("evaluate", "Report full (F) and pruned (P) metrics of a checkpoint."),
        ("prune", "Materialize the compact pruned network of a checkpoint."),
        ("dump-graph", "Write the pruning graph of a checkpoint on the first training batch."),
        ("experiment", "Seed-averaged pruning runs against unpruned baselines."),
    ):
        _add_common(commands.add_parser(name, help=help_text))
    return parser.parse_args(args)


def _cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {key: getattr(args, key) for _, key, _ in OVERRIDE_FLAGS if getattr(args, key) is not None}
    for assignment in args.assignments:
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {assignment!r}")
        overrides[key.strip()] = coerce_value(key.strip(), raw)
    return overrides


def _audit(args: argparse.Namespace) -> Dict[str, List[str]]:
    history: Dict[str, List[str]] = getattr(args, "flag_history", None) or {}
    return {key: values for key, values in history.items() if len(values) > 1}


def resolve_config(args: argparse.Namespace, from_report: bool = False) -> TrainConfig:
    """
    Defaults < config file < CLI flags.

    With ``from_report`` and no ``--config``, the configuration recorded in
    ``<out>/report.json`` takes the place of the file.
    """
    overrides = _cli_overrides(args)
    audit = _audit(args)
    for key, values in audit.items():
        logger.warning(f"Flag for {key!r} given {len(values)} times {values}; using the last one")
    file_values: Dict[str, Any] = {}
    if args.config:
        file_values = load_config_file(args.config)
    elif from_report:
        out = overrides.get("out", TrainConfig.out)
        recorded = read_json(os.path.join(out, REPORT_FILE)).get("config", {})
        file_values = {
            key: coerce_value(key, str(value)) if value is not None else None
            for key, value in recorded.items()
            if key in CONFIG_KEYS
        }
    return build_config(file_values, overrides, audit)


def _checkpoint_path(args: argparse.Namespace, config: TrainConfig) -> str:
    return str(args.checkpoint or os.path.join(config.out, "model.iprn"))


def command_train(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    sink = add_run_sink(config.out)
    try:
        train_set, test_set = load_dataset(config)
        network = build_network(config, train_set)
        network, mask, report = run_ipruning(config, network, train_set, test_set)
        for name, path in save_run(config.out, network, mask, report).items():
            logger.info(f"{name}: {path}")
    finally:
        logger.remove(sink)


def command_evaluate(args: argparse.Namespace) -> None:
    config = resolve_config(args, from_report=True)
    network, mask = load_checkpoint(_checkpoint_path(args, config))
    train_set, test_set = load_dataset(config)
    target = test_set if len(test_set) else train_set
    ks = report_ks(network.spec.layers[-1].out_units)
    metrics = [
        evaluate(network, None, target, ks, config.eval_batch_size),
        evaluate(network, mask, target, ks, config.eval_batch_size),
    ]
    for m in metrics:
        logger.info(f"({m.mode}) loss={m.loss:.6f} " + " ".join(f"top{k}={v:.4f}" for k, v in sorted(m.topk.items())))
    write_evaluation(metrics, config.out)


def command_prune(args: argparse.Namespace) -> None:
    config = resolve_config(args, from_report=True)
    network, mask = load_checkpoint(_checkpoint_path(args, config))
    compact = materialize_pruned(network, mask)
    path = os.path.join(config.out, "pruned.iprn")
    os.makedirs(config.out, exist_ok=True)
    save_checkpoint(path, compact, Mask.ones(enumerate_units(compact.spec).D))
    logger.info(f"Pruned network: {compact.parameter_count()} of {network.parameter_count()} parameters")


def command_dump_graph(args: argparse.Namespace) -> None:
    config = resolve_config(args, from_report=True)
    network, _ = load_checkpoint(_checkpoint_path(args, config))
    train_set, _ = load_dataset(config)
    graph = batch_graph(network, enumerate_units(network.spec), train_set.images[: config.batch_size], config)
    os.makedirs(config.out, exist_ok=True)
    dump_graph(graph, os.path.join(config.out, "graph.txt"))


def command_experiment(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    sink = add_run_sink(config.out)
    try:
        train_set, test_set = load_dataset(config)
        summary = run_experiment(config, train_set, test_set, config.out)
        for name, value in summary["aggregate"].items():
            logger.info(f"{name}: mean={value['mean']:.4f} std={value['std']:.4f}")
    finally:
        logger.remove(sink)


COMMANDS: Dict[str, Callable[[argparse.Namespace], None]] = {
    "train": command_train,
    "evaluate": command_evaluate,
    "prune": command_prune,
    "dump-graph": command_dump_graph,
    "experiment": command_experiment,
}


@logger.catch(reraise=True)
def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI; returns 0 on success, 1 on usage or configuration errors, 2 on runtime failures."""
    try:
        args = get_args(argv)
        COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        logger.error(str(e))
        return 1
    except (IPruningError, OSError):
        logger.exception("Run failed")
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
