"""Synthetic stand-in for a noisy quantum device.

Training circuits prepare product states with one ``R_y(theta)`` per qubit.
Readout noise has two stages:

1. linear: every qubit is misread with probability ``eps01[i]`` (true 0) or
   ``eps10[i]`` (true 1), raised by ``delta[i, j]`` for every coupled
   neighbor ``j`` whose *true* state is 1;
2. non-linear: ``q_k = p_k * (1 + alpha * p_k)`` followed by renormalization.

Noise model files are JSON::

    {"eps01": [...], "eps10": [...],
     "crosstalk": [{"from": j, "to": i, "delta": 0.01}, ...],
     "alpha": 0.1, "seed": 1234}

where ``from``/``to`` means qubit ``to`` is disturbed by neighbor ``from``.
"""
from __future__ import annotations

import logging
import string
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .errors import ArgumentError
from .io_utils import fingerprint, read_json_content, resolve_preset, write_json
from .probdist import ProbDist, bits_of
from .rng import derive_stream
from .topology import CouplingGraph

logger = logging.getLogger(__name__)

_BATCH = 'Z'
_LETTERS = [c for c in string.ascii_letters if c != _BATCH]
_CHUNK = 512
# Strong enough that linear inversion leaves a visible residual on 7 qubits.
DEFAULT_ALPHA = 1.2


@dataclass(frozen=True)
class AngleVector:
    thetas: np.ndarray

    def __post_init__(self):
        thetas = np.array(self.thetas, dtype=np.float64).reshape(-1)
        if thetas.size == 0 or np.any(thetas < 0) or np.any(thetas > np.pi):
            raise ArgumentError("rotation angles must lie in [0, pi]")
        thetas.setflags(write=False)
        object.__setattr__(self, 'thetas', thetas)

    @property
    def qubit_count(self) -> int:
        return self.thetas.shape[0]

    @classmethod
    def basis_state(cls, index: int, qubit_count: int) -> 'AngleVector':
        return cls(np.array(bits_of(index, qubit_count), dtype=np.float64) * np.pi)


@dataclass(frozen=True)
class NoiseModel:
    eps01: Tuple[float, ...]
    eps10: Tuple[float, ...]
    crosstalk: Dict[Tuple[int, int], float] = field(default_factory=dict)
    alpha: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'eps01', tuple(float(e) for e in self.eps01))
        object.__setattr__(self, 'eps10', tuple(float(e) for e in self.eps10))
        object.__setattr__(self, 'crosstalk', {(int(i), int(j)): float(d) for (i, j), d in self.crosstalk.items()})
        if len(self.eps01) != len(self.eps10):
            raise ArgumentError("eps01 and eps10 must have one entry per qubit")
        if any(not 0 <= e < 0.5 for e in self.eps01 + self.eps10):
            raise ArgumentError("confusion rates must lie in [0, 0.5)")
        if any(d < 0 for d in self.crosstalk.values()):
            raise ArgumentError("crosstalk terms must be non-negative")
        if self.alpha < 0:
            raise ArgumentError("alpha must be non-negative")

    @property
    def qubit_count(self) -> int:
        return len(self.eps01)

    def linear_only(self) -> 'NoiseModel':
        return NoiseModel(self.eps01, self.eps10, self.crosstalk, 0.0, self.seed)

    def check_graph(self, graph: CouplingGraph):
        if graph.qubit_count != self.qubit_count:
            raise ArgumentError(f"noise model covers {self.qubit_count} qubits, graph has {graph.qubit_count}")
        off_graph = [k for k in self.crosstalk if not graph.has_edge(*k)]
        if off_graph:
            raise ArgumentError(f"crosstalk pairs {sorted(off_graph)} are not coupled in the graph")

    def sources_of(self, qubit: int) -> List[int]:
        """Neighbors whose true state disturbs ``qubit``."""
        return sorted(j for (i, j) in self.crosstalk if i == qubit)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eps01': list(self.eps01),
            'eps10': list(self.eps10),
            'crosstalk': [{'from': j, 'to': i, 'delta': d} for (i, j), d in sorted(self.crosstalk.items())],
            'alpha': self.alpha,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'NoiseModel':
        try:
            crosstalk = {(int(c['to']), int(c['from'])): float(c['delta']) for c in data.get('crosstalk', [])}
            return cls(data['eps01'], data['eps10'], crosstalk, float(data.get('alpha', 0.0)), int(data.get('seed', 0)))
        except (KeyError, TypeError) as exc:
            raise ArgumentError(f"invalid noise model: {exc}") from exc

    def fingerprint(self) -> str:
        return fingerprint(self.to_dict())


@dataclass
class NoiseDiagnostics:
    """Counts flip probabilities that had to be clamped into [0, 1]."""
    clamped_cells: int = 0
    calls: int = 0


def load_noise_model(ref) -> NoiseModel:
    return NoiseModel.from_dict(read_json_content(resolve_preset('noise', ref)))


def save_noise_model(model: NoiseModel, path):
    return write_json(path, model.to_dict())


def default_noise_model(graph: CouplingGraph, seed: int, alpha: float = DEFAULT_ALPHA, delta: float = 0.01) -> NoiseModel:
    rng = derive_stream(seed, 'noise-model')
    n = graph.qubit_count
    eps01 = rng.uniform(0.01, 0.05, n)
    eps10 = rng.uniform(0.01, 0.05, n)
    crosstalk = {}
    for a, b in sorted(graph.edges):
        crosstalk[(a, b)] = delta
        crosstalk[(b, a)] = delta
    return NoiseModel(tuple(eps01), tuple(eps10), crosstalk, alpha, seed)


def sample_angles(qubit_count: int, rng: np.random.Generator) -> AngleVector:
    """Angles whose outcome-1 probabilities ``(1 - z) / 2`` are uniform on [0, 1]."""
    if qubit_count < 1:
        raise ArgumentError("qubit_count must be at least 1")
    z = rng.uniform(-1.0, 1.0, qubit_count)
    return AngleVector(np.arccos(z))


def ideal_dist(angles: AngleVector) -> ProbDist:
    half = angles.thetas / 2.0
    per_qubit = [np.array([np.cos(h) ** 2, np.sin(h) ** 2]) for h in half]
    # np.kron puts its first factor on the most significant bit.
    values = reduce(np.kron, reversed(per_qubit))
    return ProbDist(angles.qubit_count, values / values.sum())


def _qubit_kernel(model: NoiseModel, qubit: int, diagnostics: Optional[NoiseDiagnostics]) -> np.ndarray:
    """``K[r, t, t_j1, t_j2, ...] = P(read r | true t, true neighbor bits)``."""
    sources = model.sources_of(qubit)
    k = len(sources)
    kernel = np.empty((2, 2) + (2,) * k)
    for config in range(2 ** k):
        nbr = bits_of(config, k)
        extra = sum(model.crosstalk[(qubit, j)] for j, b in zip(sources, nbr) if b)
        for t, base in ((0, model.eps01[qubit]), (1, model.eps10[qubit])):
            flip = base + extra
            if not 0.0 <= flip <= 1.0:
                flip = min(max(flip, 0.0), 1.0)
                if diagnostics is not None:
                    diagnostics.clamped_cells += 1
            idx = tuple(nbr)
            kernel[(1 - t, t) + idx] = flip
            kernel[(t, t) + idx] = 1.0 - flip
    return kernel


def _linear_stage(model: NoiseModel, batch: np.ndarray, kernels: List[np.ndarray]) -> np.ndarray:
    n = model.qubit_count
    rows = batch.shape[0]
    tensor = batch.reshape((rows,) + (2,) * n)
    pool = iter(_LETTERS)
    # Axis labels after the batch axis: ('s', q) is qubit q's slot (true bit
    # until processed, read bit afterwards); ('c', q) keeps a copy of qubit
    # q's true bit while later qubits still need it.
    labels: List[Tuple[str, int]] = [('s', q) for q in reversed(range(n))]
    letter = {lab: next(pool) for lab in labels}
    needed_by = {q: [i for i in range(n) if q in model.sources_of(i)] for q in range(n)}
    processed = set()

    def spec(labs):
        return _BATCH + ''.join(letter[l] for l in labs)

    for i in range(n):
        if any(k > i for k in needed_by[i]):
            copy = ('c', i)
            letter[copy] = next(pool)
            out_labels = labels + [copy]
            tensor = np.einsum(
                f"{spec(labels)},{letter[('s', i)]}{letter[copy]}->{spec(out_labels)}",
                tensor, np.eye(2),
            )
            labels = out_labels

        kernel = kernels[i]
        nbr_labels = [('c', j) if j in processed else ('s', j) for j in model.sources_of(i)]
        read = next(pool)
        out_letters = spec(labels).replace(letter[('s', i)], read)
        kernel_letters = read + letter[('s', i)] + ''.join(letter[l] for l in nbr_labels)
        tensor = np.einsum(f"{spec(labels)},{kernel_letters}->{out_letters}", tensor, kernel)
        letter[('s', i)] = read
        processed.add(i)

        for lab in [l for l in labels if l[0] == 'c']:
            if all(k in processed for k in needed_by[lab[1]]):
                tensor = tensor.sum(axis=1 + labels.index(lab))
                labels.remove(lab)
    return tensor.reshape(rows, 2 ** n)


def apply_noise_batch(
    model: NoiseModel,
    graph: CouplingGraph,
    values: np.ndarray,
    diagnostics: Optional[NoiseDiagnostics] = None,
    linear: bool = False,
) -> np.ndarray:
    """Noisy images of every row of ``values`` (shape ``(rows, 2**n)``)."""
    model.check_graph(graph)
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[1] != 2 ** model.qubit_count:
        raise ArgumentError("distribution width does not match the noise model")
    local = NoiseDiagnostics()
    kernels = [_qubit_kernel(model, i, local) for i in range(model.qubit_count)]
    if local.clamped_cells:
        logger.warning("Noise model clamped %d flip probabilities into [0, 1]; check the crosstalk terms.",
                       local.clamped_cells)
    out = np.empty_like(values)
    for start in range(0, values.shape[0], _CHUNK):
        out[start:start + _CHUNK] = _linear_stage(model, values[start:start + _CHUNK], kernels)
    if not linear and model.alpha > 0:
        out = out * (1.0 + model.alpha * out)
    out = np.clip(out, 0.0, None)
    out /= out.sum(axis=1, keepdims=True)
    if diagnostics is not None:
        diagnostics.clamped_cells += local.clamped_cells
        diagnostics.calls += values.shape[0]
    return out


def apply_noise(
    model: NoiseModel,
    graph: CouplingGraph,
    p: ProbDist,
    diagnostics: Optional[NoiseDiagnostics] = None,
) -> ProbDist:
    return ProbDist(p.width, apply_noise_batch(model, graph, p.values, diagnostics)[0])


def sample_shots(p: ProbDist, shots: int, rng: np.random.Generator) -> ProbDist:
    """Empirical frequencies of ``shots`` draws; ``shots == 0`` is analytic mode."""
    if shots < 0:
        raise ArgumentError("shots must be non-negative")
    if shots == 0:
        return p
    pvals = p.values / p.values.sum()
    counts = rng.multinomial(shots, pvals)
    return ProbDist(p.width, counts / shots)


def full_lambda(model: NoiseModel, graph: CouplingGraph, qubit_count: int) -> np.ndarray:
    """The linear stage as a column-stochastic ``2**n x 2**n`` matrix."""
    if qubit_count != model.qubit_count:
        raise ArgumentError("qubit_count does not match the noise model")
    dim = 2 ** qubit_count
    columns = np.empty((dim, dim))
    for start in range(0, dim, _CHUNK):
        stop = min(dim, start + _CHUNK)
        basis = np.zeros((stop - start, dim))
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        columns[start:stop] = apply_noise_batch(model, graph, basis, linear=True)
    return columns.T


Executor = Callable[[AngleVector, int, int], ProbDist]


def simulator_executor(model: NoiseModel, graph: CouplingGraph, seed: int, label: str = 'calibration') -> Executor:
    """Run circuits on the simulator: ``executor(angles, shots, index)``.

    ``index`` selects the random stream so results do not depend on the
    order in which circuits are submitted.
    """
    def run(angles: AngleVector, shots: int, index: int) -> ProbDist:
        noisy = apply_noise(model, graph, ideal_dist(angles))
        return sample_shots(noisy, shots, derive_stream(seed, label, index))
    return run
