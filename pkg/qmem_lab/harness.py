"""End-to-end experiments on a simulated device.

One run generates (or loads) a dataset, then for every repetition splits it
with a fresh seed, trains each requested method on the training part (or on
the first ``size`` training samples for every entry of ``train_sizes``) and
scores it on the test part. The unmitigated baseline is always scored; every
improvement rate is relative to it.
"""
from __future__ import annotations

import logging
import math
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np
import pandas as pd

from . import dataset as ds
from .ci import TrainConfig, mitigate_ci_batch, train_ci, train_citl, train_nn
from .config import METHODS, Device, ExperimentConfig, load_device
from .errors import QmemError, StageError
from .li import CalibrationMatrix, calibrate, li_mitigate_batch
from .metrics import METRIC_NAMES, evaluate, rate_or_nan
from .mlp import count_parameters
from .rng import derive_seed
from .simulator import save_noise_model, simulator_executor
from .topology import save_graph, save_partition

logger = logging.getLogger(__name__)

T = TypeVar('T')


@dataclass
class MethodResult:
    method: str
    repetition: int
    seed: int
    train_size: int
    distances: Dict[str, float]
    rates: Dict[str, float]
    parameters: Optional[int] = None
    seconds: float = 0.0


@dataclass
class RunReport:
    config: Dict[str, Any]
    config_hash: str
    results: List[MethodResult] = field(default_factory=list)
    parameter_counts: Dict[str, Optional[int]] = field(default_factory=dict)
    skipped: Dict[str, str] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        """One row per method, metric and repetition."""
        rows = []
        for r in self.results:
            for metric in METRIC_NAMES:
                rows.append({
                    'method': r.method,
                    'metric': metric,
                    'repetition': r.repetition,
                    'seed': r.seed,
                    'train_size': r.train_size,
                    'distance': r.distances[metric],
                    'rate': r.rates.get(metric, math.nan),
                })
        columns = ['method', 'metric', 'repetition', 'seed', 'train_size', 'distance', 'rate']
        return pd.DataFrame(rows, columns=columns)

    def summary(self) -> pd.DataFrame:
        """Mean, std and min of every distance across repetitions, plus the rate of the means."""
        df = self.frame()
        grouped = df.groupby(['train_size', 'method', 'metric'], sort=False)['distance']
        table = grouped.agg(mean='mean', std=lambda s: s.std(ddof=0), min='min').reset_index()
        baseline = table[table['method'] == 'unmitigated'].set_index(['train_size', 'metric'])['mean']
        table['rate'] = [
            rate_or_nan(baseline[(size, metric)], mean)
            for size, metric, mean in zip(table['train_size'], table['metric'], table['mean'])
        ]
        table['parameters'] = table['method'].map(lambda m: self.parameter_counts.get(m))
        return table

    def numbers(self) -> List[Tuple]:
        """Every reported number in a fixed order; timings excluded."""
        return [(r.method, r.repetition, r.train_size, tuple(r.distances[m] for m in METRIC_NAMES),
                 tuple(r.rates.get(m) for m in METRIC_NAMES)) for r in self.results]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunReport':
        results = [MethodResult(**r) for r in data.get('results', [])]
        return cls(data['config'], data['config_hash'], results, dict(data.get('parameter_counts', {})),
                   dict(data.get('skipped', {})), dict(data.get('timings', {})))


def _stage(name: str, seed: int, fn: Callable[[], T]) -> T:
    try:
        return fn()
    except StageError:
        raise
    except (QmemError, ValueError, OSError, ArithmeticError) as exc:
        logger.error("Stage '%s' failed (seed %d): %s", name, seed, exc)
        raise StageError(name, seed, exc) from exc


def _dataset(config: ExperimentConfig, device: Device, out_dir: Path) -> ds.Dataset:
    if config.dataset:
        data = ds.load(config.dataset, device.noise)
        if data.qubit_count != config.qubit_count:
            raise QmemError(f"dataset has {data.qubit_count} qubits, config says {config.qubit_count}")
        return data
    data = ds.generate(config.qubit_count, config.samples, config.shots, device.noise, device.graph, config.seed)
    ds.save(data, out_dir / 'dataset.jsonl')
    return data


def _save_device(device: Device, out_dir: Path):
    save_graph(device.graph, out_dir / 'graph.json')
    save_partition(device.partition, out_dir / 'partition.json')
    save_noise_model(device.noise, out_dir / 'noise.json')


def _run_method(
    method: str,
    train: ds.Dataset,
    test: ds.Dataset,
    config: ExperimentConfig,
    device: Device,
    train_config: TrainConfig,
    seed: int,
    calibration: Optional[CalibrationMatrix],
) -> Tuple[np.ndarray, Optional[int]]:
    if method == 'unmitigated':
        return test.noisy, None
    if method == 'LI':
        return li_mitigate_batch(calibration, test.noisy), None
    if method == 'NN':
        model = train_nn(train, train_config, derive_seed(seed, 'NN'))
    elif method == 'CI':
        model = train_ci(train, device.partition, train_config, derive_seed(seed, 'CI'))
    elif method == 'CITL':
        model = train_citl(train, device.partition, config.citl_sources, train_config, derive_seed(seed, 'CITL'))
    else:
        raise QmemError(f"unknown method {method!r}")
    mitigated, diagnostics = mitigate_ci_batch(model, test.noisy)
    if diagnostics.total:
        logger.warning("%s: %d inference fallbacks on the test set.", method, diagnostics.total)
    return mitigated, model.trainable_param_count()


def run_experiment(config: ExperimentConfig, device: Optional[Device] = None) -> RunReport:
    """Run every repetition of ``config`` and collect the scores.

    Failures abort with :class:`StageError` naming the stage and the seed;
    files written so far (the dataset) stay in ``config.output_dir``.
    """
    config.check()
    device = device or load_device(config)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(config.to_dict(), config.fingerprint())
    timings: Dict[str, float] = defaultdict(float)
    started = time.perf_counter()

    _stage('device', config.seed, lambda: _save_device(device, out_dir))
    data = _stage('dataset', config.seed, lambda: _dataset(config, device, out_dir))
    timings['dataset'] = time.perf_counter() - started
    train_config = config.train_config()
    n = config.qubit_count
    methods = ['unmitigated'] + [m for m in METHODS if m in config.methods and m != 'unmitigated']
    if 'NN' in methods and n > config.max_nn_qubits:
        needed = count_parameters(train_config.layer_dims(n))
        report.skipped['NN'] = f"{n} qubits exceeds max_nn_qubits={config.max_nn_qubits} ({needed} parameters)"
        report.parameter_counts['NN'] = needed
        logger.warning("Skipping NN: a %d-qubit network would need %d trainable parameters.", n, needed)
        methods.remove('NN')

    for rep in range(config.repetitions):
        seed = derive_seed(config.seed, 'repetition', rep)
        train, test = _stage('split', seed, lambda: ds.split(data, config.train_fraction, seed))
        calibration = None
        if 'LI' in methods:
            t0 = time.perf_counter()
            shots = config.shots if config.calibration_shots is None else config.calibration_shots
            executor = simulator_executor(device.noise, device.graph, derive_seed(seed, 'calibration'))
            calibration = _stage('LI calibration', seed, lambda: calibrate(executor, n, shots))
            timings['LI'] += time.perf_counter() - t0

        for size in config.train_sizes or [len(train)]:
            subset = train.head(size)
            baseline = None
            for method in methods:
                t0 = time.perf_counter()
                stage = f"{method} (repetition {rep}, train size {size})"
                mitigated, params = _stage(stage, seed, lambda: _run_method(
                    method, subset, test, config, device, train_config, seed, calibration))
                scores = evaluate(test.ideal, mitigated)
                if baseline is None:
                    baseline = scores
                rates = scores.with_rates(baseline).rates
                elapsed = time.perf_counter() - t0
                timings[method] += elapsed
                if params is not None:
                    report.parameter_counts[method] = params
                report.results.append(MethodResult(method, rep, seed, size, scores.distances(), rates,
                                                   params, elapsed))
                logger.info("Repetition %d, size %d, %s: mse=%.4e kld=%.4e infidelity=%.4e (%.1fs).",
                            rep, size, method, scores.mse, scores.kld, scores.infidelity, elapsed)
        logger.info("Repetition %d/%d done.", rep + 1, config.repetitions)

    timings['total'] = time.perf_counter() - started
    report.timings = dict(timings)
    return report
