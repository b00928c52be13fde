"""``python -m qmem_lab <command>``: generate data, calibrate, train, mitigate, evaluate, run experiments.

Every command accepts ``--config FILE`` (YAML) plus flags named after the
config fields; flags given on the command line win over the file.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Dict, List, Optional

import numpy as np

from . import dataset as ds
from .ci import load_ci_model, mitigate_ci_batch, save_ci_model, train_ci, train_citl, train_nn
from .config import METHODS, load_config, load_device
from .errors import ConfigError, PartitionError, QmemError
from .harness import run_experiment
from .io_utils import read_json_content, write_json
from .li import calibrate, li_mitigate_batch, load_calibration, save_calibration
from .metrics import evaluate
from .report import FORMATS, emit_report, load_report
from .simulator import simulator_executor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _sources(text: str) -> Dict[int, int]:
    """``"1:0,3:2"`` -> ``{1: 0, 3: 2}`` (target leaf : source leaf)."""
    try:
        pairs = [item.split(':') for item in text.split(',') if item.strip()]
        return {int(t): int(s) for t, s in pairs}
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected target:source pairs, got {text!r}") from exc


def _config_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    group = parent.add_argument_group('configuration')
    group.add_argument('--config', help="YAML config file or shipped preset name")
    group.add_argument('--name')
    group.add_argument('--qubits', dest='qubit_count', type=int)
    group.add_argument('--graph', help="coupling graph file or preset")
    group.add_argument('--partition', help="partition file or preset")
    group.add_argument('--noise', help="noise model file or preset")
    group.add_argument('--samples', type=int)
    group.add_argument('--shots', type=int, help="0 means exact distributions")
    group.add_argument('--calibration-shots', type=int)
    group.add_argument('--train-fraction', type=float)
    group.add_argument('--methods', nargs='+', choices=METHODS)
    group.add_argument('--citl-sources', type=_sources, help="target:source leaf pairs, e.g. 1:0")
    group.add_argument('--transfer-scope', choices=('last_hidden', 'output_only'))
    group.add_argument('--train-sizes', nargs='+', type=int)
    group.add_argument('--repetitions', type=int)
    group.add_argument('--seed', type=int)
    group.add_argument('--epochs', type=int)
    group.add_argument('--finetune-epochs', type=int)
    group.add_argument('--learning-rate', type=float)
    group.add_argument('--batch-size', type=int)
    group.add_argument('--max-nn-qubits', type=int)
    group.add_argument('--workers', type=int)
    group.add_argument('--output-dir')
    return parent


_CONFIG_KEYS = (
    'name', 'qubit_count', 'graph', 'partition', 'noise', 'samples', 'shots', 'calibration_shots',
    'train_fraction', 'methods', 'citl_sources', 'transfer_scope', 'train_sizes', 'repetitions', 'seed',
    'epochs', 'finetune_epochs', 'learning_rate', 'batch_size', 'max_nn_qubits', 'workers', 'output_dir',
)


def _config(args):
    overrides = {key: getattr(args, key) for key in _CONFIG_KEYS}
    if getattr(args, 'dataset', None) and args.command == 'experiment':
        overrides['dataset'] = args.dataset
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='qmem_lab', description="Measurement-error mitigation lab.")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help="debug logging")
    verbosity.add_argument('-q', '--quiet', action='store_true', help="warnings only")
    sub = parser.add_subparsers(dest='command', required=True)
    flags = _config_flags()

    p = sub.add_parser('gen', parents=[flags], help="generate a dataset")
    p.add_argument('--out', required=True)

    p = sub.add_parser('calibrate', parents=[flags], help="measure the LI calibration matrix")
    p.add_argument('--out', required=True)

    p = sub.add_parser('train', parents=[flags], help="train NN, CI or CITL networks")
    p.add_argument('--dataset', required=True)
    p.add_argument('--method', choices=('NN', 'CI', 'CITL'), default='CI')
    p.add_argument('--out', required=True)

    p = sub.add_parser('mitigate', parents=[flags], help="mitigate the noisy side of a dataset")
    p.add_argument('--dataset', required=True)
    p.add_argument('--method', choices=('LI', 'NN', 'CI', 'CITL'), required=True)
    p.add_argument('--model', required=True, help="calibration file for LI, model bundle otherwise")
    p.add_argument('--out', required=True)

    p = sub.add_parser('evaluate', parents=[flags], help="score mitigated distributions against ideals")
    p.add_argument('--dataset', required=True)
    p.add_argument('--mitigated', help="output of 'mitigate'; omit to score the raw noisy data")

    p = sub.add_parser('experiment', parents=[flags], help="run a full experiment and write the report")
    p.add_argument('--dataset', help="reuse a saved dataset instead of generating one")
    p.add_argument('--formats', nargs='+', choices=FORMATS, default=list(FORMATS))

    p = sub.add_parser('report', help="re-emit report files from a saved report.json")
    p.add_argument('--input', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--formats', nargs='+', choices=FORMATS, default=list(FORMATS))
    return parser


def cmd_gen(args) -> int:
    config = _config(args)
    device = load_device(config)
    data = ds.generate(config.qubit_count, config.samples, config.shots, device.noise, device.graph, config.seed)
    path = ds.save(data, args.out)
    print(f"Wrote {len(data)} samples to {path}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _config(args)
    device = load_device(config)
    shots = config.shots if config.calibration_shots is None else config.calibration_shots
    cal = calibrate(simulator_executor(device.noise, device.graph, config.seed), config.qubit_count, shots)
    path = save_calibration(cal, args.out)
    print(f"Wrote calibration to {path} (condition number {cal.condition_number:.3e})")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    device = load_device(config)
    data = ds.load(args.dataset, device.noise)
    train_config = config.train_config()
    if args.method == 'NN':
        model = train_nn(data, train_config, config.seed)
    elif args.method == 'CI':
        model = train_ci(data, device.partition, train_config, config.seed)
    else:
        model = train_citl(data, device.partition, config.citl_sources, train_config, config.seed)
    path = save_ci_model(model, args.out)
    print(f"Wrote {model.network_count} networks ({model.trainable_param_count():,} trainable parameters) to {path}")
    return EXIT_OK


def cmd_mitigate(args) -> int:
    data = ds.load(args.dataset)
    if args.method == 'LI':
        mitigated = li_mitigate_batch(load_calibration(args.model), data.noisy)
    else:
        mitigated, diagnostics = mitigate_ci_batch(load_ci_model(args.model), data.noisy)
        if diagnostics.total:
            logger.warning("%d inference fallbacks.", diagnostics.total)
    path = write_json(args.out, {'method': args.method, 'mitigated': mitigated})
    print(f"Wrote {mitigated.shape[0]} mitigated distributions to {path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = ds.load(args.dataset)
    baseline = evaluate(data.ideal, data.noisy)
    if args.mitigated:
        mitigated = np.asarray(read_json_content(args.mitigated)['mitigated'], dtype=np.float64)
        if mitigated.shape != data.ideal.shape:
            raise QmemError(f"mitigated array has shape {mitigated.shape}, dataset needs {data.ideal.shape}")
        scores = evaluate(data.ideal, mitigated).with_rates(baseline)
    else:
        scores = baseline.with_rates(baseline)
    for metric, value in scores.distances().items():
        print(f"{metric:<11} D={value:.6e}  R={scores.rates[metric]:.2f}%")
    return EXIT_OK


def cmd_experiment(args) -> int:
    config = _config(args)
    report = run_experiment(config)
    for path in emit_report(report, config.output_dir, args.formats):
        print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    for path in emit_report(load_report(args.input), args.out, args.formats):
        print(path)
    return EXIT_OK


COMMANDS = {
    'gen': cmd_gen,
    'calibrate': cmd_calibrate,
    'train': cmd_train,
    'mitigate': cmd_mitigate,
    'evaluate': cmd_evaluate,
    'experiment': cmd_experiment,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PartitionError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except (QmemError, OSError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
