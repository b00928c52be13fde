"""Callbacks behind the Gradio tabs in ``app.py``.

Handlers never raise: failures come back as a status string next to empty
outputs.
"""
from __future__ import annotations

import logging
import os
import tempfile
from typing import Any, Dict, List

import numpy as np
import pandas as pd

from . import dataset as ds
from .config import load_config
from .harness import run_experiment
from .io_utils import PRESET_DIR, upload_path
from .li import calibrate, li_mitigate_batch
from .metrics import METRIC_NAMES, evaluate, mse_batch
from .report import emit_report
from .simulator import load_noise_model, simulator_executor
from .topology import load_graph

logger = logging.getLogger(__name__)


def preset_names(kind: str) -> List[str]:
    folder = PRESET_DIR / kind
    if not folder.is_dir():
        return []
    return sorted(p.stem for p in folder.iterdir() if p.suffix in ('.json', '.yaml'))


def _load_device(graph_name, noise_name):
    graph = load_graph(graph_name)
    model = load_noise_model(noise_name)
    model.check_graph(graph)
    return graph, model


def dataset_preview_rows(data: ds.Dataset, limit: int = 3) -> List[Dict[str, Any]]:
    rows: List[Dict[str, Any]] = []
    errors = mse_batch(data.ideal, data.noisy)
    for i in range(min(max(1, int(limit)), len(data))):
        top = int(np.argmax(data.ideal[i]))
        rows.append({
            'sample': i,
            'thetas': ", ".join(f"{t:.3f}" for t in data.thetas[i]),
            'most likely outcome': format(top, f"0{data.qubit_count}b")[::-1],
            'ideal p': round(float(data.ideal[i, top]), 6),
            'noisy p': round(float(data.noisy[i, top]), 6),
            'mse': float(errors[i]),
        })
    return rows


def generate_dataset_handler(graph_name, noise_name, samples, shots, seed):
    try:
        graph, model = _load_device(graph_name, noise_name)
        data = ds.generate(graph.qubit_count, int(samples), int(shots), model, graph, int(seed))
    except Exception as e:
        return None, None, f"Error generating dataset: {str(e)}"

    path = os.path.join(tempfile.gettempdir(), f"qmem-{graph_name}-{int(seed)}.jsonl")
    try:
        ds.save(data, path)
    except Exception as e:
        return None, None, f"Error saving dataset: {str(e)}"
    return path, dataset_preview_rows(data), f"Generated {len(data)} samples on {graph.qubit_count} qubits."


def calibrate_and_mitigate_handler(dataset_file, graph_name, noise_name, shots, seed):
    if dataset_file is None:
        return None, "No dataset uploaded."
    try:
        graph, model = _load_device(graph_name, noise_name)
        data = ds.load(upload_path(dataset_file))
        if data.qubit_count != graph.qubit_count:
            return None, f"Dataset has {data.qubit_count} qubits but the device has {graph.qubit_count}."
        cal = calibrate(simulator_executor(model, graph, int(seed)), graph.qubit_count, int(shots))
        baseline = evaluate(data.ideal, data.noisy)
        mitigated = evaluate(data.ideal, li_mitigate_batch(cal, data.noisy)).with_rates(baseline)
    except Exception as e:
        return None, f"Error during mitigation: {str(e)}"

    rows = [[m, baseline.distances()[m], mitigated.distances()[m], mitigated.rates[m]] for m in METRIC_NAMES]
    table = pd.DataFrame(rows, columns=['Metric', 'Unmitigated', 'LI', 'Improvement %'])
    return table, f"Mitigated {len(data)} samples (condition number {cal.condition_number:.3e})."


def run_experiment_handler(config_file, preset_name, epochs, repetitions):
    source = upload_path(config_file) if config_file is not None else preset_name
    if not source:
        return None, None, "No config selected."
    overrides = {
        'epochs': int(epochs) if epochs else None,
        'repetitions': int(repetitions) if repetitions else None,
    }
    try:
        config = load_config(source, overrides)
        report = run_experiment(config)
        paths = emit_report(report, config.output_dir, ['csv', 'summary', 'json'])
    except Exception as e:
        return None, None, f"Error running experiment: {str(e)}"

    csv_path = next((str(p) for p in paths if p.suffix == '.csv'), None)
    status = f"Finished {config.repetitions} repetitions; report written to {config.output_dir}."
    if report.skipped:
        status += " Skipped: " + "; ".join(f"{m} ({why})" for m, why in report.skipped.items())
    return report.summary(), csv_path, status
