"""Probability distributions over qubit bitstrings.

Bit ordering is little-endian everywhere: qubit ``i`` contributes ``2**i`` to
the index of a basis outcome. Internally a width-``n`` vector is viewed as an
``n``-dimensional ``(2, ..., 2)`` tensor in C order, so qubit ``i`` lives on
axis ``n - 1 - i``.

Most functions come in two flavours: one on a single :class:`ProbDist` and an
``*_batch`` variant on a ``(samples, 2**n)`` array used by dataset-scale code.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import ArgumentError, IncompleteModelError, ZeroMassConditionError

if TYPE_CHECKING:
    from .topology import PartitionSpec

BitString = Tuple[int, ...]

NORM_TOL = 1e-9
TAU_COND = 1e-9


def bits_of(index: int, width: int) -> BitString:
    if not 0 <= index < 2 ** width:
        raise ArgumentError(f"index {index} out of range for width {width}")
    return tuple((index >> i) & 1 for i in range(width))


def index_of(bits: Sequence[int]) -> int:
    index = 0
    for i, b in enumerate(bits):
        if b not in (0, 1):
            raise ArgumentError(f"bit {i} is {b!r}, expected 0 or 1")
        index |= int(b) << i
    return index


@lru_cache(maxsize=32)
def bit_table(width: int) -> np.ndarray:
    table = (np.arange(2 ** width)[:, None] >> np.arange(width)[None, :]) & 1
    table = table.astype(np.int64)
    table.setflags(write=False)
    return table


def sub_index(width: int, qubits: Sequence[int]) -> np.ndarray:
    """For every full index, the little-endian index of the bits on ``qubits``."""
    table = bit_table(width)
    out = np.zeros(2 ** width, dtype=np.int64)
    for j, q in enumerate(qubits):
        out |= table[:, q] << j
    return out


@dataclass(frozen=True, eq=False)
class ProbDist:
    width: int
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.shape[0] != 2 ** self.width:
            raise ArgumentError(f"expected {2 ** self.width} values for width {self.width}, got {values.shape[0]}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ArgumentError("probabilities must be finite and non-negative")
        total = values.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ArgumentError(f"probabilities sum to {total!r}, not 1")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def normalized(cls, values, width: Optional[int] = None) -> 'ProbDist':
        values = np.clip(np.asarray(values, dtype=np.float64).reshape(-1), 0.0, None)
        if width is None:
            width = int(round(np.log2(values.shape[0])))
        total = values.sum()
        if total <= 0:
            raise ArgumentError("cannot normalize a vector with zero mass")
        return cls(width, values / total)

    @classmethod
    def uniform(cls, width: int) -> 'ProbDist':
        return cls(width, np.full(2 ** width, 1.0 / 2 ** width))

    @classmethod
    def point_mass(cls, width: int, index: int) -> 'ProbDist':
        values = np.zeros(2 ** width)
        values[index] = 1.0
        return cls(width, values)

    def __len__(self):
        return self.values.shape[0]


def _check_qubits(width: int, qubits: Sequence[int], what: str, allow_empty: bool = False) -> Tuple[int, ...]:
    qubits = tuple(int(q) for q in qubits)
    if not qubits and not allow_empty:
        raise ArgumentError(f"{what} must not be empty")
    if any(q < 0 or q >= width for q in qubits):
        raise ArgumentError(f"{what} {qubits} out of range for width {width}")
    if any(b <= a for a, b in zip(qubits, qubits[1:])):
        raise ArgumentError(f"{what} {qubits} must be strictly ascending")
    return qubits


def _as_batch(values: np.ndarray, width: int) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[None, :]
    if values.shape[1] != 2 ** width:
        raise ArgumentError(f"expected rows of length {2 ** width}, got {values.shape[1]}")
    return values


def marginalize_batch(values: np.ndarray, width: int, keep: Iterable[int]) -> np.ndarray:
    """Marginal over ``keep`` for every row of ``values``."""
    keep = _check_qubits(width, keep, 'keep')
    batch = _as_batch(values, width)
    if len(keep) == width:
        return batch.copy()
    tensor = batch.reshape((batch.shape[0],) + (2,) * width)
    drop_axes = tuple(1 + width - 1 - q for q in range(width) if q not in keep)
    return tensor.sum(axis=drop_axes).reshape(batch.shape[0], 2 ** len(keep))


def marginalize(p: ProbDist, keep: Iterable[int]) -> ProbDist:
    keep = tuple(keep)
    out = marginalize_batch(p.values, p.width, keep)[0]
    if len(keep) == p.width:
        return p
    return ProbDist(len(keep), out / out.sum())


def condition_batch(
    values: np.ndarray,
    width: int,
    target: Iterable[int],
    given: Mapping[int, int],
) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized slices ``p(target, given)`` and their masses."""
    target = _check_qubits(width, target, 'target')
    given = {int(q): int(v) for q, v in given.items()}
    if set(target) & set(given):
        raise ArgumentError("target and conditioning qubits must be disjoint")
    if any(v not in (0, 1) for v in given.values()):
        raise ArgumentError("conditioning values must be 0 or 1")
    keep = tuple(sorted(set(target) | set(given)))
    marginal = marginalize_batch(values, width, keep)
    k = len(keep)
    tensor = marginal.reshape((marginal.shape[0],) + (2,) * k)
    index = [slice(None)] * (k + 1)
    for pos, q in enumerate(keep):
        if q in given:
            index[1 + k - 1 - pos] = given[q]
    slices = tensor[tuple(index)].reshape(marginal.shape[0], 2 ** len(target))
    return slices, slices.sum(axis=1)


def condition(p: ProbDist, target: Iterable[int], given: Mapping[int, int], tau: float = TAU_COND) -> ProbDist:
    target = tuple(target)
    slices, masses = condition_batch(p.values, p.width, target, given)
    mass = masses[0]
    if mass < tau:
        raise ZeroMassConditionError(dict(given), mass)
    return ProbDist(len(target), slices[0] / mass)


def recombine_batch(
    spec: 'PartitionSpec',
    leaf_tables: Mapping[Tuple[int, int], np.ndarray],
    cond_tables: Mapping[int, np.ndarray],
) -> np.ndarray:
    """Row-wise product of factor tables, one joint distribution per row.

    ``leaf_tables[(leaf_index, assignment)]`` has shape ``(rows, 2**|leaf|)``
    and ``cond_tables[c]`` has shape ``(rows, 2)``.
    """
    n = spec.qubit_count
    rows = None
    joint = None
    for li, leaf in enumerate(spec.leaves):
        stacked = []
        for a in range(2 ** len(leaf.context)):
            table = leaf_tables.get((li, a))
            if table is None:
                raise IncompleteModelError((li, a))
            table = np.atleast_2d(table)
            if table.shape[1] != 2 ** len(leaf.qubits):
                raise ArgumentError(f"factor {(li, a)} has {table.shape[1]} entries, leaf needs {2 ** len(leaf.qubits)}")
            stacked.append(table)
        stacked = np.stack(stacked, axis=1)
        rows = stacked.shape[0] if rows is None else rows
        factor = stacked[:, sub_index(n, leaf.context), sub_index(n, leaf.qubits)]
        joint = factor if joint is None else joint * factor
    bits = bit_table(n)
    for c in spec.conditional_qubits:
        table = cond_tables.get(c)
        if table is None:
            raise IncompleteModelError(c)
        joint = joint * np.atleast_2d(table)[:, bits[:, c]]
    return joint


def recombine(
    spec: 'PartitionSpec',
    leaf_conditionals: Mapping[Tuple[int, int], ProbDist],
    cond_marginals: Mapping[int, ProbDist],
) -> ProbDist:
    """Rebuild the joint from ``p(leaf | context)`` tables and conditional-qubit marginals.

    Leaf keys are ``(leaf_index, assignment)`` with ``assignment`` the
    little-endian index of the context bits.
    """
    joint = recombine_batch(
        spec,
        {key: dist.values for key, dist in leaf_conditionals.items()},
        {c: dist.values for c, dist in cond_marginals.items()},
    )
    return ProbDist(spec.qubit_count, joint[0])


def extract_factors(
    spec: 'PartitionSpec',
    p: ProbDist,
    tau: float = TAU_COND,
) -> Tuple[Dict[Tuple[int, int], ProbDist], Dict[int, ProbDist]]:
    """Inverse of :func:`recombine` on a given joint: its leaf conditionals and conditional marginals."""
    leaf_conditionals: Dict[Tuple[int, int], ProbDist] = {}
    for li, leaf in enumerate(spec.leaves):
        for a, assignment in enumerate(spec.context_assignments(li)):
            leaf_conditionals[(li, a)] = condition(p, leaf.qubits, assignment, tau)
    cond_marginals = {c: marginalize(p, [c]) for c in spec.conditional_qubits}
    return leaf_conditionals, cond_marginals
