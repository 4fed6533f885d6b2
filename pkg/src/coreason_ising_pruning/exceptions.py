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
Exception hierarchy shared by every sub-package.

Library code raises these; only the CLI in ``main`` turns them into exit codes.
"""

from typing import Optional


class IPruningError(Exception):
    """Base class for all errors raised by coreason_ising_pruning."""


class DimensionError(IPruningError, ValueError):
    """Tensor shapes do not line up."""


class InputError(IPruningError, ValueError):
    """An argument value violates an operation's contract."""


class UsageError(IPruningError):
    """The API or the command line was used incorrectly."""


class ConfigError(IPruningError, ValueError):
    """A run configuration or dataset cannot be used."""


class NumericalError(IPruningError, ArithmeticError):
    """A numerical routine failed (e.g. a Cholesky factorization)."""


class TrainingDivergedError(NumericalError):
    """The training loss became NaN or infinite."""


class ParseError(IPruningError, ValueError):
    """A file could not be parsed.

    Args:
        message: Human readable description.
        offset: Byte offset (binary formats) or line number (text formats) of the failure.
    """

    def __init__(self, message: str, offset: Optional[int] = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class StructuralError(IPruningError):
    """A pruned network would be structurally invalid."""


class ConsistencyError(IPruningError):
    """Internal state is inconsistent (missing records, stale energies)."""
