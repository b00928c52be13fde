from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable, List

import pandas as pd

from .errors import QmemError
from .harness import RunReport
from .io_utils import read_json_content, write_json
from .metrics import METRIC_NAMES

logger = logging.getLogger(__name__)

FORMATS = ('csv', 'summary', 'json', 'curves')
FLOAT_FORMAT = '%.17g'


def _summary_text(report: RunReport) -> str:
    table = report.summary()
    lines = [
        f"Experiment {report.config.get('name', '')}  (config {report.config_hash[:12]})",
        f"repetitions={report.config.get('repetitions')}  seed={report.config.get('seed')}",
        '',
    ]
    for size, block in table.groupby('train_size', sort=False):
        lines.append(f"Training samples: {size}")
        wide = block.pivot(index='method', columns='metric', values=['mean', 'std', 'min', 'rate'])
        wide = wide.reindex(index=list(dict.fromkeys(block['method'])))
        out = pd.DataFrame(index=wide.index)
        for metric in METRIC_NAMES:
            out[f"D_{metric}"] = wide[('mean', metric)]
            out[f"sd_{metric}"] = wide[('std', metric)]
            out[f"min_{metric}"] = wide[('min', metric)]
            out[f"R_{metric} %"] = wide[('rate', metric)]
        lines.append(out.to_string(float_format=lambda v: f"{v:.6g}"))
        lines.append('')

    lines.append("Trainable parameters:")
    for method, count in report.parameter_counts.items():
        lines.append(f"  {method:<12} {'-' if count is None else f'{count:,}'}")
    for method, reason in report.skipped.items():
        lines.append(f"Skipped {method}: {reason}")
    if report.timings:
        lines.append('')
        lines.append("Wall-clock seconds: " + ", ".join(f"{k}={v:.1f}" for k, v in report.timings.items()))
    return '\n'.join(lines) + '\n'


def _write_curves(report: RunReport, out_dir: Path) -> List[Path]:
    """Mean and min distance against training size, one data file per metric."""
    table = report.summary()
    methods = list(dict.fromkeys(table['method']))
    paths: List[Path] = []
    plots = []
    for metric in METRIC_NAMES:
        block = table[table['metric'] == metric]
        mean = block.pivot(index='train_size', columns='method', values='mean')[methods]
        low = block.pivot(index='train_size', columns='method', values='min')[methods]
        data = pd.concat([mean.add_suffix('_mean'), low.add_suffix('_min')], axis=1).sort_index()
        path = out_dir / f"curve-{metric}.dat"
        with open(path, 'w', encoding='utf-8') as f:
            f.write('# train_size ' + ' '.join(data.columns) + '\n')
            data.to_csv(f, sep=' ', header=False, float_format=FLOAT_FORMAT)
        paths.append(path)
        series = [f"'{path.name}' using 1:{k + 2} with linespoints title '{col}'"
                  for k, col in enumerate(data.columns) if col.endswith('_mean')]
        plots.append((metric, series))

    script = out_dir / 'curves.gp'
    with open(script, 'w', encoding='utf-8') as f:
        f.write("set terminal pngcairo size 900,600\nset logscale y\nset xlabel 'training samples'\n")
        for metric, series in plots:
            f.write(f"set output 'curve-{metric}.png'\nset ylabel '{metric}'\n")
            f.write('plot ' + ', \\\n     '.join(series) + '\n')
    paths.append(script)
    return paths


def emit_report(report: RunReport, out_dir, formats: Iterable[str] = FORMATS) -> List[Path]:
    """Write the requested artifacts into ``out_dir`` and return their paths."""
    formats = list(formats)
    unknown = [f for f in formats if f not in FORMATS]
    if unknown:
        raise QmemError(f"unknown report formats {unknown}; choose from {list(FORMATS)}")
    out_dir = Path(out_dir)
    written: List[Path] = []
    target = out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if 'csv' in formats:
            target = out_dir / 'results.csv'
            report.frame().to_csv(target, index=False, float_format=FLOAT_FORMAT)
            written.append(target)
        if 'summary' in formats:
            target = out_dir / 'summary.txt'
            target.write_text(_summary_text(report), encoding='utf-8')
            written.append(target)
        if 'json' in formats:
            target = out_dir / 'report.json'
            written.append(write_json(target, report.to_dict()))
        if 'curves' in formats:
            target = out_dir
            written.extend(_write_curves(report, out_dir))
    except OSError as exc:
        raise QmemError(f"cannot write report to {target}: {exc}") from exc
    logger.info("Wrote %d report files to %s.", len(written), out_dir)
    return written


def load_report(ref) -> RunReport:
    return RunReport.from_dict(read_json_content(ref))
