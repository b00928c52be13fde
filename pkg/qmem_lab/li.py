"""Linear-inversion mitigation from a basis-state calibration matrix."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, Tuple

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import ArgumentError, ConditioningError
from .io_utils import read_json_content, write_json
from .probdist import ProbDist
from .simulator import AngleVector, Executor

logger = logging.getLogger(__name__)

WARN_CONDITION = 1e8
SINGULAR_CONDITION = 1e15


@dataclass(frozen=True, eq=False)
class CalibrationMatrix:
    n: int
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.shape != (2 ** self.n, 2 ** self.n):
            raise ArgumentError(f"calibration matrix must be {2 ** self.n} x {2 ** self.n}")
        matrix.setflags(write=False)
        object.__setattr__(self, 'matrix', matrix)

    @cached_property
    def factorization(self) -> Tuple[Tuple[np.ndarray, np.ndarray], float]:
        """LU factors with partial pivoting and the 1-norm condition estimate."""
        lu_piv = linalg.lu_factor(self.matrix, check_finite=True)
        anorm = np.abs(self.matrix).sum(axis=0).max()
        rcond, info = lapack.dgecon(lu_piv[0], anorm, norm='1')
        condition = np.inf if rcond == 0 or info != 0 else 1.0 / rcond
        return lu_piv, condition

    @property
    def condition_number(self) -> float:
        return self.factorization[1]

    def to_dict(self) -> Dict[str, Any]:
        return {'n': self.n, 'values': self.matrix.reshape(-1).tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CalibrationMatrix':
        try:
            n = int(data['n'])
            return cls(n, np.asarray(data['values'], dtype=np.float64).reshape(2 ** n, 2 ** n))
        except (KeyError, TypeError, ValueError) as exc:
            raise ArgumentError(f"invalid calibration file: {exc}") from exc


def calibrate(executor: Executor, n: int, shots: int) -> CalibrationMatrix:
    """Column ``t`` is the device response to the prepared basis state ``t``."""
    dim = 2 ** n
    matrix = np.empty((dim, dim))
    for t in range(dim):
        matrix[:, t] = executor(AngleVector.basis_state(t, n), shots, t).values
    logger.info("Calibrated %d basis states on %d qubits (shots=%d).", dim, n, shots)
    return CalibrationMatrix(n, matrix)


def li_mitigate_batch(cal: CalibrationMatrix, noisy: np.ndarray) -> np.ndarray:
    """Invert every row of ``noisy``, clip negatives and renormalize."""
    noisy = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
    if noisy.shape[1] != 2 ** cal.n:
        raise ArgumentError("distribution width does not match the calibration matrix")
    lu_piv, condition = cal.factorization
    if condition > SINGULAR_CONDITION:
        raise ConditioningError(condition)
    if condition > WARN_CONDITION:
        logger.warning("Calibration matrix is ill-conditioned (condition number ~ %.3e).", condition)
    solved = linalg.lu_solve(lu_piv, noisy.T).T
    clipped = int(np.count_nonzero(solved < 0))
    if clipped:
        logger.warning("Linear inversion clipped %d negative quasi-probabilities.", clipped)
    solved = np.clip(solved, 0.0, None)
    totals = solved.sum(axis=1, keepdims=True)
    empty = totals[:, 0] <= 0
    solved[empty] = 1.0
    totals[empty] = solved.shape[1]
    return solved / totals


def li_mitigate(cal: CalibrationMatrix, noisy: ProbDist) -> ProbDist:
    if noisy.width != cal.n:
        raise ArgumentError("distribution width does not match the calibration matrix")
    return ProbDist(noisy.width, li_mitigate_batch(cal, noisy.values)[0])


def save_calibration(cal: CalibrationMatrix, path):
    return write_json(path, cal.to_dict())


def load_calibration(ref) -> CalibrationMatrix:
    return CalibrationMatrix.from_dict(read_json_content(ref))
