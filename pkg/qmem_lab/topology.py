"""Coupling graphs and conditional-independence partitions.

A partition is stored flat: the conditional qubits plus a list of leaves, each
leaf carrying the conditional qubits on its path to the root (its context).
Both files are JSON::

    graph:     {"qubit_count": 7, "edges": [[0, 1], [1, 2], ...]}
    partition: {"qubit_count": 7, "conditional_qubits": [3],
                "leaves": [{"qubits": [0, 1, 2], "context": [3]}, ...]}
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, List, Tuple

import networkx as nx

from .errors import PartitionError
from .io_utils import read_json_content, resolve_preset, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CouplingGraph:
    qubit_count: int
    edges: FrozenSet[Tuple[int, int]]

    def __post_init__(self):
        normalized = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise PartitionError(f"self-loop on qubit {a}")
            if not (0 <= a < self.qubit_count and 0 <= b < self.qubit_count):
                raise PartitionError(f"edge ({a}, {b}) out of range for {self.qubit_count} qubits")
            normalized.add((min(a, b), max(a, b)))
        object.__setattr__(self, 'edges', frozenset(normalized))

    def has_edge(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.edges

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.qubit_count))
        g.add_edges_from(self.edges)
        return g

    def to_dict(self) -> Dict[str, Any]:
        return {'qubit_count': self.qubit_count, 'edges': sorted([list(e) for e in self.edges])}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'CouplingGraph':
        try:
            return cls(int(data['qubit_count']), frozenset(tuple(e) for e in data['edges']))
        except (KeyError, TypeError, ValueError) as exc:
            raise PartitionError(f"invalid coupling graph: {exc}") from exc

    @classmethod
    def line(cls, qubit_count: int) -> 'CouplingGraph':
        return cls(qubit_count, frozenset((i, i + 1) for i in range(qubit_count - 1)))


@dataclass(frozen=True)
class Leaf:
    qubits: Tuple[int, ...]
    context: Tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'qubits', tuple(sorted(int(q) for q in self.qubits)))
        object.__setattr__(self, 'context', tuple(sorted(int(q) for q in self.context)))

    @property
    def width(self) -> int:
        return len(self.qubits)


@dataclass(frozen=True)
class PartitionSpec:
    qubit_count: int
    conditional_qubits: Tuple[int, ...]
    leaves: Tuple[Leaf, ...]

    def __post_init__(self):
        object.__setattr__(self, 'conditional_qubits', tuple(sorted(int(q) for q in self.conditional_qubits)))
        object.__setattr__(self, 'leaves', tuple(
            leaf if isinstance(leaf, Leaf) else Leaf(**leaf) for leaf in self.leaves
        ))

    @property
    def is_trivial(self) -> bool:
        return len(self.leaves) == 1 and not self.conditional_qubits and not self.leaves[0].context

    def context_assignments(self, leaf_index: int) -> List[Dict[int, int]]:
        """Context assignments of a leaf, ordered by their little-endian index."""
        context = self.leaves[leaf_index].context
        return [{q: (a >> j) & 1 for j, q in enumerate(context)} for a in range(2 ** len(context))]

    def slice_keys(self) -> List[Tuple[int, int]]:
        return [(li, a) for li, leaf in enumerate(self.leaves) for a in range(2 ** len(leaf.context))]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'qubit_count': self.qubit_count,
            'conditional_qubits': list(self.conditional_qubits),
            'leaves': [{'qubits': list(l.qubits), 'context': list(l.context)} for l in self.leaves],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PartitionSpec':
        try:
            leaves = tuple(Leaf(tuple(l['qubits']), tuple(l.get('context', ()))) for l in data['leaves'])
            return cls(int(data['qubit_count']), tuple(data.get('conditional_qubits', ())), leaves)
        except (KeyError, TypeError, ValueError) as exc:
            raise PartitionError(f"invalid partition: {exc}") from exc


def trivial_partition(qubit_count: int) -> PartitionSpec:
    """One leaf holding every qubit; mitigating with it is the full-network method."""
    return PartitionSpec(qubit_count, (), (Leaf(tuple(range(qubit_count))),))


@dataclass
class LeafViolation:
    leaf_index: int
    witness_path: List[int]

    def describe(self) -> str:
        path = ' - '.join(f"q{q}" for q in self.witness_path)
        return f"leaf {self.leaf_index} is not separated by its context: {path}"


@dataclass
class ValidationReport:
    structural_errors: List[str] = field(default_factory=list)
    violations: List[LeafViolation] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.structural_errors and not self.violations

    def messages(self) -> List[str]:
        return list(self.structural_errors) + [v.describe() for v in self.violations]

    def raise_if_invalid(self):
        if not self.valid:
            raise PartitionError('; '.join(self.messages()))


def structural_errors(spec: PartitionSpec) -> List[str]:
    errors: List[str] = []
    n = spec.qubit_count
    seen: Dict[int, str] = {}

    def claim(q: int, owner: str):
        if not 0 <= q < n:
            errors.append(f"{owner}: qubit {q} out of range")
        elif q in seen:
            errors.append(f"{owner}: qubit {q} already used by {seen[q]}")
        else:
            seen[q] = owner

    for q in spec.conditional_qubits:
        claim(q, 'conditional qubits')
    for li, leaf in enumerate(spec.leaves):
        if not leaf.qubits:
            errors.append(f"leaf {li}: has no qubits")
        for q in leaf.qubits:
            claim(q, f"leaf {li}")
        stray = [q for q in leaf.context if q not in spec.conditional_qubits]
        if stray:
            errors.append(f"leaf {li}: context {stray} not among conditional qubits")
    missing = sorted(set(range(n)) - set(seen))
    if missing:
        errors.append(f"qubits {missing} belong to no leaf and are not conditional")
    return errors


def validate_partition(graph: CouplingGraph, spec: PartitionSpec) -> ValidationReport:
    """Check that each leaf is cut off from the rest of the device by its context.

    Structural problems (overlap, coverage, stray context) are reported first;
    the connectivity check only runs on a structurally sound spec.
    """
    report = ValidationReport()
    if graph.qubit_count != spec.qubit_count:
        report.structural_errors.append(
            f"graph has {graph.qubit_count} qubits but partition has {spec.qubit_count}"
        )
        return report
    report.structural_errors.extend(structural_errors(spec))
    if report.structural_errors:
        return report

    g = graph.to_networkx()
    for li, leaf in enumerate(spec.leaves):
        outside = set(range(spec.qubit_count)) - set(leaf.qubits) - set(leaf.context)
        if not outside:
            continue
        cut = g.copy()
        cut.remove_nodes_from(leaf.context)
        distances, paths = nx.multi_source_dijkstra(cut, set(leaf.qubits))
        reached = sorted((distances[q], q) for q in outside if q in distances)
        if reached:
            _, nearest = reached[0]
            report.violations.append(LeafViolation(li, list(paths[nearest])))
    if report.violations:
        for v in report.violations:
            logger.warning(v.describe())
    return report


def network_count(spec: PartitionSpec) -> int:
    return sum(2 ** len(leaf.context) for leaf in spec.leaves) + len(spec.conditional_qubits)


def load_graph(ref) -> CouplingGraph:
    return CouplingGraph.from_dict(read_json_content(resolve_preset('graphs', ref)))


def load_partition(ref) -> PartitionSpec:
    return PartitionSpec.from_dict(read_json_content(resolve_preset('partitions', ref)))


def save_graph(graph: CouplingGraph, path):
    return write_json(path, graph.to_dict())


def save_partition(spec: PartitionSpec, path):
    return write_json(path, spec.to_dict())
