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
Run records and their on-disk form.

``report.json`` echoes the configuration and holds the per-epoch records and the
final metrics; ``curves.csv`` has one row per training iteration with the columns
``t,mean_energy,best_energy,kept_rate``.
"""

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import fsspec
from loguru import logger

from coreason_ising_pruning.exceptions import ConsistencyError, ParseError

REPORT_FILE = "report.json"
CURVES_FILE = "curves.csv"
SUMMARY_FILE = "summary.json"
EVALUATION_FILE = "evaluation.json"
CURVE_COLUMNS = ("t", "mean_energy", "best_energy", "kept_rate")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class IterationRecord:
    t: int
    mean_energy: float
    best_energy: float
    kept_rate: float
    loss: float


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    mean_loss: float
    spread: float
    converged: bool


@dataclass(frozen=True)
class EvalMetrics:
    """Loss and Top-k accuracies for one inference mode ("F" full, "P" pruned)."""

    mode: str
    loss: float
    topk: Dict[int, float]

    def to_dict(self) -> Dict[str, Any]:
        values: Dict[str, Any] = {"mode": self.mode, "loss": self.loss}
        values.update({f"top{k}": acc for k, acc in sorted(self.topk.items())})
        return values


@dataclass(frozen=True)
class FinalMetrics:
    train_loss: float
    full: EvalMetrics
    pruned: EvalMetrics
    kept_rate: float
    kept_params: int
    total_params: int
    kept_units: int
    units: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "train_loss": self.train_loss,
            "F": self.full.to_dict(),
            "P": self.pruned.to_dict(),
            "R": self.kept_rate,
            "kept_params": self.kept_params,
            "total_params": self.total_params,
            "kept_units": self.kept_units,
            "units": self.units,
        }


@dataclass
class RunReport:
    config: Dict[str, Any]
    iterations: List[IterationRecord] = field(default_factory=list)
    epochs: List[EpochRecord] = field(default_factory=list)
    final: Optional[FinalMetrics] = None
    converged_epoch: Optional[int] = None
    status: str = "running"

    def add_iteration(self, record: IterationRecord) -> None:
        if self.iterations and record.t <= self.iterations[-1].t:
            raise ConsistencyError(f"iteration {record.t} does not follow {self.iterations[-1].t}")
        self.iterations.append(record)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "status": self.status,
            "config": self.config,
            "epochs": [asdict(e) for e in self.epochs],
            "converged_epoch": self.converged_epoch,
            "iterations": len(self.iterations),
            "final": self.final.to_dict() if self.final is not None else None,
        }


def _dump_json(payload: Mapping[str, Any], path: str) -> None:
    with fsspec.open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def write_curves(report: RunReport, path: str) -> None:
    with fsspec.open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for record in report.iterations:
            writer.writerow([record.t, repr(record.mean_energy), repr(record.best_energy), repr(record.kept_rate)])


def write_report(report: RunReport, out_dir: str) -> Dict[str, str]:
    """
    Write ``report.json`` and ``curves.csv`` into ``out_dir``.

    Returns:
        Mapping of artifact name to the path written.
    """
    os.makedirs(out_dir, exist_ok=True)
    if not report.iterations:
        logger.warning("Run has no training iterations; curves.csv holds only the header")
    paths = {"report": os.path.join(out_dir, REPORT_FILE), "curves": os.path.join(out_dir, CURVES_FILE)}
    _dump_json(report.to_dict(), paths["report"])
    write_curves(report, paths["curves"])
    logger.info(f"Report written to {paths['report']}")
    return paths


def read_json(path: str) -> Dict[str, Any]:
    try:
        with fsspec.open(path, "r") as f:
            payload: Dict[str, Any] = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e.msg}", offset=e.pos) from e
    return payload


def read_curves(path: str) -> List[Dict[str, float]]:
    """Parse ``curves.csv`` back into rows keyed by column name."""
    with fsspec.open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != CURVE_COLUMNS:
            raise ParseError(f"{path}: unexpected header {header}", offset=1)
        rows = []
        for number, row in enumerate(reader, start=2):
            if len(row) != len(CURVE_COLUMNS):
                raise ParseError(f"{path}: expected {len(CURVE_COLUMNS)} columns, got {len(row)}", offset=number)
            rows.append({name: float(value) for name, value in zip(CURVE_COLUMNS, row, strict=True)})
    return rows


def write_evaluation(metrics: List[EvalMetrics], out_dir: str) -> str:
    path = os.path.join(out_dir, EVALUATION_FILE)
    _dump_json({m.mode: m.to_dict() for m in metrics}, path)
    logger.info(f"Evaluation written to {path}")
    return path


def write_summary(summary: Mapping[str, Any], out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, SUMMARY_FILE)
    _dump_json(summary, path)
    logger.info(f"Experiment summary written to {path}")
    return path
