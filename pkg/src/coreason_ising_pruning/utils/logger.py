# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

import os
import sys

from loguru import logger

LOG_DIR = os.environ.get("IPRUNING_LOG_DIR", "logs")

logger.remove()

# Console
logger.add(
    sys.stderr,
    level=os.environ.get("IPRUNING_LOG_LEVEL", "INFO"),
    format=(
        "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
        "<level>{message}</level>"
    ),
)

os.makedirs(LOG_DIR, exist_ok=True)

# Structured file log, includes per-batch DEBUG records
logger.add(
    os.path.join(LOG_DIR, "app.log"),
    rotation="500 MB",
    retention="10 days",
    serialize=True,
    enqueue=True,
    level="DEBUG",
)


def add_run_sink(out_dir: str) -> int:
    """Mirror INFO and above into ``<out_dir>/run.log``; returns the sink id for ``logger.remove``."""
    os.makedirs(out_dir, exist_ok=True)
    return logger.add(os.path.join(out_dir, "run.log"), level="INFO", mode="w", enqueue=False)


__all__ = ["add_run_sink", "logger"]
