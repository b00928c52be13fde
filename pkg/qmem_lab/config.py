"""Experiment configuration: YAML files merged under command-line overrides.

Precedence, lowest first: dataclass defaults, the config file, explicitly
given flags, then the ``QMEM_THREADS`` environment variable for the worker
count. Unknown keys and ill-typed values raise :class:`ConfigError`.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from .ci import TRANSFER_SCOPES, TrainConfig
from .errors import ConfigError, QmemError
from .io_utils import fingerprint, resolve_preset
from .mlp import AdamConfig
from .simulator import NoiseModel, load_noise_model
from .topology import CouplingGraph, PartitionSpec, load_graph, load_partition, validate_partition

METHODS = ('unmitigated', 'LI', 'NN', 'CI', 'CITL')
THREADS_ENV = 'QMEM_THREADS'

# Fields that do not influence any reported number.
_UNHASHED = ('output_dir', 'workers')


@dataclass
class ExperimentConfig:
    name: str = 'experiment-7q'
    qubit_count: int = 7
    graph: str = 'line-7'
    partition: str = 'ci-7q'
    noise: str = 'realistic-7q'
    dataset: Optional[str] = None
    samples: int = 7500
    shots: int = 32000
    calibration_shots: Optional[int] = None
    train_fraction: float = 0.8
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    citl_sources: Dict[int, int] = field(default_factory=lambda: {1: 0})
    transfer_scope: str = 'last_hidden'
    train_sizes: List[int] = field(default_factory=list)
    repetitions: int = 5
    seed: int = 1234
    epochs: int = 300
    finetune_epochs: Optional[int] = None
    learning_rate: float = 1e-4
    batch_size: int = 16
    max_nn_qubits: int = 10
    workers: int = 1
    output_dir: str = 'runs/experiment-7q'

    def check(self):
        """Range checks that need no files."""
        problems = []
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            problems.append(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not 0 < self.train_fraction < 1:
            problems.append("train_fraction must lie strictly between 0 and 1")
        for name in ('qubit_count', 'samples', 'repetitions', 'batch_size', 'workers'):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be at least 1")
        for name in ('shots', 'epochs', 'seed'):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.transfer_scope not in TRANSFER_SCOPES:
            problems.append(f"transfer_scope must be one of {TRANSFER_SCOPES}")
        n_train = int(self.samples * self.train_fraction + 0.5)
        too_big = [s for s in self.train_sizes if not 0 < s <= n_train]
        if too_big:
            problems.append(f"train_sizes {too_big} must lie in 1..{n_train}")
        if problems:
            raise ConfigError("; ".join(problems))

    def train_config(self, epochs: Optional[int] = None) -> TrainConfig:
        adam = AdamConfig(lr=self.learning_rate, batch_size=self.batch_size,
                          epochs=self.epochs if epochs is None else epochs)
        return TrainConfig(adam=adam, transfer_scope=self.transfer_scope,
                           finetune_epochs=self.finetune_epochs, workers=self.workers)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def fingerprint(self) -> str:
        return fingerprint({k: v for k, v in self.to_dict().items() if k not in _UNHASHED})


@dataclass
class Device:
    graph: CouplingGraph
    partition: PartitionSpec
    noise: NoiseModel


def load_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Merge defaults, ``path`` and the non-``None`` entries of ``overrides``."""
    layers = [OmegaConf.structured(ExperimentConfig)]
    try:
        if path is not None:
            layers.append(OmegaConf.load(resolve_preset('configs', path)))
        if overrides:
            layers.append(OmegaConf.create({k: v for k, v in overrides.items() if v is not None}))
        merged = OmegaConf.merge(*layers)
        config = OmegaConf.to_object(merged)
    except OmegaConfBaseException as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc

    threads = os.environ.get(THREADS_ENV)
    if threads:
        try:
            config.workers = int(threads)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV}={threads!r} is not an integer") from exc
    config.check()
    return config


def load_device(config: ExperimentConfig) -> Device:
    """Load the graph, partition and noise presets and cross-check them."""
    try:
        graph = load_graph(config.graph)
        partition = load_partition(config.partition)
        noise = load_noise_model(config.noise)
    except ConfigError:
        raise
    except (QmemError, OSError, ValueError) as exc:
        raise ConfigError(f"cannot load device preset: {exc}") from exc

    counts = {'config': config.qubit_count, 'graph': graph.qubit_count,
              'partition': partition.qubit_count, 'noise': noise.qubit_count}
    if len(set(counts.values())) != 1:
        raise ConfigError(f"qubit counts disagree: {counts}")
    try:
        noise.check_graph(graph)
    except QmemError as exc:
        raise ConfigError(str(exc)) from exc
    validate_partition(graph, partition).raise_if_invalid()
    if 'CITL' in config.methods:
        leaves = len(partition.leaves)
        bad = {t: s for t, s in config.citl_sources.items() if not (0 <= t < leaves and 0 <= s < leaves)}
        if not config.citl_sources or bad:
            raise ConfigError(f"citl_sources must map target leaves to source leaves among 0..{leaves - 1}")
    return Device(graph, partition, noise)
