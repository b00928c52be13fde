from dataclasses import replace
from pathlib import Path

import pytest

from qmem_lab import harness
from qmem_lab.config import ExperimentConfig, load_config, load_device
from qmem_lab.dataset import load, split
from qmem_lab.errors import ConfigError, PartitionError, StageError, TrainingError
from qmem_lab.harness import RunReport, run_experiment
from qmem_lab.metrics import METRIC_NAMES, evaluate, improvement_rate


@pytest.fixture
def tiny_report(tiny_config, tiny_device):
    return run_experiment(tiny_config, tiny_device)


class TestRunExperiment:

    def test_baseline_rates_are_zero(self, tiny_report):
        for r in tiny_report.results:
            if r.method == 'unmitigated':
                assert r.rates == {m: 0.0 for m in METRIC_NAMES}
                assert r.parameters is None

    def test_every_method_every_repetition(self, tiny_report):
        seen = {(r.method, r.repetition) for r in tiny_report.results}
        assert seen == {(m, rep) for m in ('unmitigated', 'LI', 'NN', 'CI', 'CITL') for rep in (0, 1)}
        assert tiny_report.results[0].method == 'unmitigated'

    def test_deterministic(self, tiny_config, tiny_device, tiny_report, tmp_path):
        again = run_experiment(replace(tiny_config, output_dir=str(tmp_path / 'again')), tiny_device)
        assert again.numbers() == tiny_report.numbers()
        assert again.config_hash == tiny_report.config_hash

    def test_summary_shape_and_rates(self, tiny_report):
        table = tiny_report.summary()
        assert len(table) == 15
        baseline = table[table['method'] == 'unmitigated'].set_index('metric')['mean']
        for _, row in table.iterrows():
            assert row['rate'] == pytest.approx(improvement_rate(baseline[row['metric']], row['mean']))
            assert row['min'] <= row['mean']

    def test_rates_recompute_from_distances(self, tiny_report):
        by_rep = {}
        for r in tiny_report.results:
            by_rep.setdefault(r.repetition, {})[r.method] = r
        for methods in by_rep.values():
            base = methods['unmitigated'].distances
            for r in methods.values():
                for m in METRIC_NAMES:
                    assert r.rates[m] == pytest.approx(improvement_rate(base[m], r.distances[m]))

    def test_unmitigated_matches_recompute(self, tiny_config, tiny_report):
        data = load(Path(tiny_config.output_dir) / 'dataset.jsonl')
        _, test = split(data, tiny_config.train_fraction, tiny_report.results[0].seed)
        assert evaluate(test.ideal, test.noisy).distances() == tiny_report.results[0].distances

    def test_device_files_reload(self, tiny_config, tiny_device, tiny_report):
        out = Path(tiny_config.output_dir)
        config = replace(tiny_config, graph=str(out / 'graph.json'), partition=str(out / 'partition.json'),
                         noise=str(out / 'noise.json'))
        assert load_device(config) == tiny_device
        load(out / 'dataset.jsonl', load_device(config).noise)

    def test_parameter_counts(self, tiny_report):
        counts = tiny_report.parameter_counts
        assert counts['CI'] == 5 * 382
        assert counts['CITL'] == 3 * 382 + 2 * 132
        assert counts['NN'] == 5608
        assert counts['CITL'] < counts['CI']
        assert 'LI' not in counts

    def test_nn_skipped_above_limit(self, tiny_config, tiny_device):
        report = run_experiment(replace(tiny_config, max_nn_qubits=2, repetitions=1), tiny_device)
        assert 'NN' in report.skipped
        assert report.parameter_counts['NN'] == 5608
        assert all(r.method != 'NN' for r in report.results)

    def test_train_size_sweep(self, tiny_config, tiny_device):
        report = run_experiment(replace(tiny_config, train_sizes=[8, 16], repetitions=1,
                                        methods=['unmitigated', 'CI']), tiny_device)
        assert sorted({r.train_size for r in report.results}) == [8, 16]
        assert len(report.summary()) == 2 * 2 * 3

    def test_stage_error_names_stage_and_seed(self, tiny_config, tiny_device, monkeypatch):
        def broken(*args, **kwargs):
            raise TrainingError((0, 1))
        monkeypatch.setattr(harness, 'train_ci', broken)
        with pytest.raises(StageError) as info:
            run_experiment(replace(tiny_config, methods=['CI']), tiny_device)
        assert info.value.stage.startswith('CI')
        assert isinstance(info.value.cause, TrainingError)
        assert (Path(tiny_config.output_dir) / 'dataset.jsonl').exists()

    def test_report_dict_round_trip(self, tiny_report):
        again = RunReport.from_dict(tiny_report.to_dict())
        assert again.numbers() == tiny_report.numbers()


class TestConfig:

    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text('name: custom\nsamples: 200\nepochs: 10\nmethods: [unmitigated, CI]\n', encoding='utf-8')
        config = load_config(path, {'epochs': 3, 'seed': None})
        assert (config.name, config.samples, config.epochs, config.seed) == ('custom', 200, 3, 1234)
        assert config.methods == ['unmitigated', 'CI']

    def test_unknown_key(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text('bogus: 1\n', encoding='utf-8')
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_type(self):
        with pytest.raises(ConfigError):
            load_config(overrides={'samples': 'many'})

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            load_config(overrides={'methods': ['CI', 'magic']})

    def test_threads_env(self, monkeypatch):
        monkeypatch.setenv('QMEM_THREADS', '4')
        assert load_config().workers == 4
        monkeypatch.setenv('QMEM_THREADS', 'four')
        with pytest.raises(ConfigError):
            load_config()

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            load_config('no-such-config')

    @pytest.mark.parametrize('name,n', [('smoke-7q', 7), ('experiment-7q', 7), ('experiment-13q', 13)])
    def test_shipped_configs(self, name, n):
        config = load_config(name)
        device = load_device(config)
        assert config.qubit_count == device.graph.qubit_count == n

    def test_thirteen_qubit_split(self):
        config = load_config('experiment-13q')
        assert int(config.samples * config.train_fraction + 0.5) == 5950
        assert config.citl_sources == {2: 0, 3: 1}

    def test_device_mismatch(self):
        with pytest.raises(ConfigError):
            load_device(load_config('smoke-7q', {'graph': 'heavy-hex-13'}))

    def test_invalid_partition(self, tmp_path):
        bad = tmp_path / 'bad.json'
        bad.write_text('{"qubit_count": 7, "conditional_qubits": [3], "leaves": ['
                       '{"qubits": [0, 1, 2], "context": []}, {"qubits": [4, 5, 6], "context": [3]}]}',
                       encoding='utf-8')
        with pytest.raises(PartitionError):
            load_device(load_config('smoke-7q', {'partition': str(bad)}))

    def test_fingerprint(self):
        config = ExperimentConfig()
        assert replace(config, output_dir='elsewhere', workers=8).fingerprint() == config.fingerprint()
        assert replace(config, seed=1).fingerprint() != config.fingerprint()
