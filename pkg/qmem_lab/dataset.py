"""Training corpora of (noisy, ideal) distribution pairs.

On disk a dataset is JSON Lines: one metadata object followed by one object
per sample::

    {"format": "qmem-dataset", "version": 1, "qubit_count": 7, ...}
    {"thetas": [...], "ideal": [...], "noisy": [...]}
    ...

Floats are written with Python's shortest round-trip repr, so saving and
loading is lossless.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ArgumentError,
    DatasetValidationError,
    HashMismatchError,
    MalformedLineError,
    VersionMismatchError,
)
from .probdist import NORM_TOL, ProbDist
from .rng import derive_stream
from .simulator import (
    AngleVector,
    NoiseDiagnostics,
    NoiseModel,
    apply_noise_batch,
    ideal_dist,
    sample_angles,
    sample_shots,
)
from .topology import CouplingGraph

logger = logging.getLogger(__name__)

FORMAT_NAME = 'qmem-dataset'
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Sample:
    thetas: AngleVector
    ideal: ProbDist
    noisy: ProbDist


@dataclass(frozen=True)
class DatasetMeta:
    qubit_count: int
    sample_count: int
    shots: int
    noise_fingerprint: str
    master_seed: int
    created: str


class Dataset:
    """Column-oriented store: ``thetas`` (N, n), ``ideal`` and ``noisy`` (N, 2**n)."""

    def __init__(self, meta: DatasetMeta, thetas: np.ndarray, ideal: np.ndarray, noisy: np.ndarray):
        self.meta = meta
        self.thetas = np.asarray(thetas, dtype=np.float64)
        self.ideal = np.asarray(ideal, dtype=np.float64)
        self.noisy = np.asarray(noisy, dtype=np.float64)
        n = meta.qubit_count
        if self.thetas.shape[1:] != (n,) or self.ideal.shape[1:] != (2 ** n,) or self.noisy.shape[1:] != (2 ** n,):
            raise DatasetValidationError(f"array shapes do not match qubit_count={n}")
        if not (self.thetas.shape[0] == self.ideal.shape[0] == self.noisy.shape[0]):
            raise DatasetValidationError("thetas, ideal and noisy hold different numbers of samples")

    @property
    def qubit_count(self) -> int:
        return self.meta.qubit_count

    def __len__(self):
        return self.ideal.shape[0]

    def __getitem__(self, i: int) -> Sample:
        n = self.qubit_count
        return Sample(AngleVector(self.thetas[i]), ProbDist(n, self.ideal[i]), ProbDist(n, self.noisy[i]))

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        idx = np.asarray(indices, dtype=np.int64)
        meta = DatasetMeta(**{**asdict(self.meta), 'sample_count': int(idx.shape[0])})
        return Dataset(meta, self.thetas[idx], self.ideal[idx], self.noisy[idx])

    def head(self, count: int) -> 'Dataset':
        return self.subset(np.arange(min(count, len(self))))


def generate(
    qubit_count: int,
    sample_count: int,
    shots: int,
    model: NoiseModel,
    graph: CouplingGraph,
    master_seed: int,
    created: Optional[str] = None,
    diagnostics: Optional[NoiseDiagnostics] = None,
) -> Dataset:
    """Random product states, their ideal distributions and noisy readouts.

    Sample ``i`` draws its angles and its shots from the stream
    ``(master_seed, 'sample', i)``.
    """
    if sample_count < 1:
        raise ArgumentError("sample_count must be at least 1")
    if model.qubit_count != qubit_count:
        raise ArgumentError(f"noise model covers {model.qubit_count} qubits, expected {qubit_count}")
    streams = [derive_stream(master_seed, 'sample', i) for i in range(sample_count)]
    thetas = np.empty((sample_count, qubit_count))
    ideal = np.empty((sample_count, 2 ** qubit_count))
    for i, rng in enumerate(streams):
        angles = sample_angles(qubit_count, rng)
        thetas[i] = angles.thetas
        ideal[i] = ideal_dist(angles).values
    noisy = apply_noise_batch(model, graph, ideal, diagnostics)
    if shots:
        for i, rng in enumerate(streams):
            noisy[i] = sample_shots(ProbDist(qubit_count, noisy[i]), shots, rng).values
    meta = DatasetMeta(
        qubit_count=qubit_count,
        sample_count=sample_count,
        shots=shots,
        noise_fingerprint=model.fingerprint(),
        master_seed=master_seed,
        created=created or datetime.now(timezone.utc).isoformat(timespec='seconds'),
    )
    logger.info("Generated %d samples on %d qubits (shots=%d, seed=%d).", sample_count, qubit_count, shots, master_seed)
    return Dataset(meta, thetas, ideal, noisy)


def split(dataset: Dataset, train_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Shuffle and cut into train/test; sizes round to the nearest integer."""
    if not 0 < train_fraction < 1:
        raise ArgumentError("train_fraction must lie strictly between 0 and 1")
    total = len(dataset)
    n_train = int(np.floor(total * train_fraction + 0.5))
    if n_train == 0 or n_train == total:
        raise ArgumentError(f"split of {total} samples at {train_fraction} leaves one side empty")
    order = derive_stream(seed, 'split').permutation(total)
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


def save(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {'format': FORMAT_NAME, 'version': FORMAT_VERSION, **asdict(dataset.meta)}
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(header) + '\n')
        for i in range(len(dataset)):
            row = {
                'thetas': dataset.thetas[i].tolist(),
                'ideal': dataset.ideal[i].tolist(),
                'noisy': dataset.noisy[i].tolist(),
            }
            f.write(json.dumps(row) + '\n')
    return path


def _check_dist(values: np.ndarray, what: str, line_number: int):
    if np.any(values < 0) or abs(values.sum() - 1.0) > NORM_TOL:
        raise DatasetValidationError(f"line {line_number}: {what} is not a probability distribution")


def load(path, noise_model: Optional[NoiseModel] = None) -> Dataset:
    """Read a JSONL dataset, verifying format version, shapes and ideals.

    When ``noise_model`` is given its fingerprint must match the one recorded
    at generation time.
    """
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    if not lines:
        raise MalformedLineError(1, "empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise MalformedLineError(1, str(exc)) from exc
    if header.get('format') != FORMAT_NAME:
        raise MalformedLineError(1, "not a qmem dataset header")
    if header.get('version') != FORMAT_VERSION:
        raise VersionMismatchError(f"dataset version {header.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        meta = DatasetMeta(**{k: header[k] for k in DatasetMeta.__dataclass_fields__})
    except KeyError as exc:
        raise MalformedLineError(1, f"missing metadata field {exc}") from exc
    if noise_model is not None and noise_model.fingerprint() != meta.noise_fingerprint:
        raise HashMismatchError("dataset was generated with a different noise model")

    n = meta.qubit_count
    thetas, ideal, noisy = [], [], []
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            t = np.asarray(row['thetas'], dtype=np.float64)
            p = np.asarray(row['ideal'], dtype=np.float64)
            q = np.asarray(row['noisy'], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedLineError(line_number, str(exc)) from exc
        if t.shape != (n,) or p.shape != (2 ** n,) or q.shape != (2 ** n,):
            raise DatasetValidationError(f"line {line_number}: vector lengths inconsistent with qubit_count={n}")
        _check_dist(p, 'ideal', line_number)
        _check_dist(q, 'noisy', line_number)
        if np.max(np.abs(ideal_dist(AngleVector(t)).values - p)) > 1e-12:
            raise DatasetValidationError(f"line {line_number}: stored ideal does not match its angles")
        thetas.append(t)
        ideal.append(p)
        noisy.append(q)
    if len(ideal) != meta.sample_count:
        raise MalformedLineError(len(lines) + 1, f"expected {meta.sample_count} samples, found {len(ideal)}")
    return Dataset(meta, np.array(thetas).reshape(-1, n), np.array(ideal).reshape(-1, 2 ** n),
                   np.array(noisy).reshape(-1, 2 ** n))
