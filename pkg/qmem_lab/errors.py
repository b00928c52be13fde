"""Exception hierarchy shared by every module.

Errors caused by bad arguments or bad files also subclass ``ValueError`` so
callers that only know about ``ValueError`` keep working.
"""
from __future__ import annotations

from typing import Dict, Optional, Tuple


class QmemError(Exception):
    """Root of all errors raised by qmem_lab."""


class ArgumentError(QmemError, ValueError):
    pass


class ZeroMassConditionError(QmemError, ValueError):
    """Conditioning on an assignment whose marginal mass is (nearly) zero."""

    def __init__(self, assignment: Dict[int, int], mass: float):
        self.assignment = dict(assignment)
        self.mass = float(mass)
        pretty = ', '.join(f"q{q}={v}" for q, v in sorted(self.assignment.items()))
        super().__init__(f"Cannot condition on {{{pretty}}}: mass {self.mass:.3e} is below threshold.")


class IncompleteModelError(QmemError, ValueError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"Missing factor for {key!r}.")


class PartitionError(QmemError, ValueError):
    pass


class ConditioningError(QmemError):
    """Calibration matrix is numerically singular."""

    def __init__(self, condition_number: float):
        self.condition_number = float(condition_number)
        super().__init__(f"Calibration matrix is singular (condition number ~ {self.condition_number:.3e}).")


class DatasetLoadError(QmemError, ValueError):
    pass


class VersionMismatchError(DatasetLoadError):
    pass


class HashMismatchError(DatasetLoadError):
    pass


class MalformedLineError(DatasetLoadError):
    def __init__(self, line_number: int, reason: str):
        self.line_number = int(line_number)
        super().__init__(f"Malformed line {self.line_number}: {reason}")


class DatasetValidationError(DatasetLoadError):
    pass


class TrainingError(QmemError):
    def __init__(self, slice_key: Tuple[int, int], message: Optional[str] = None):
        self.slice_key = slice_key
        leaf, assignment = slice_key
        super().__init__(message or f"No usable training pairs for leaf {leaf}, context assignment {assignment}.")


class TransferError(QmemError, ValueError):
    pass


class UndefinedRateError(QmemError, ValueError):
    pass


class ConfigError(QmemError, ValueError):
    pass


class StageError(QmemError):
    """Experiment stage failure; carries the stage name and repetition seed."""

    def __init__(self, stage: str, seed: int, cause: BaseException):
        self.stage = stage
        self.seed = int(seed)
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed (seed {self.seed}): {cause}")
