import json

import numpy as np
import pytest

from qmem_lab.dataset import generate, load, save, split
from qmem_lab.errors import (
    ArgumentError,
    DatasetValidationError,
    HashMismatchError,
    MalformedLineError,
    VersionMismatchError,
)
from qmem_lab.metrics import mse_batch
from qmem_lab.simulator import ideal_dist

from conftest import CREATED


@pytest.fixture
def saved(small_dataset, tmp_path):
    return save(small_dataset, tmp_path / 'data.jsonl')


def rewrite(path, edit):
    lines = path.read_text(encoding='utf-8').splitlines()
    edit(lines)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


class TestGenerate:

    def test_shapes_and_meta(self, small_dataset, realistic_7q):
        assert len(small_dataset) == 64
        assert small_dataset.thetas.shape == (64, 7)
        assert small_dataset.noisy.shape == (64, 128)
        assert small_dataset.meta.noise_fingerprint == realistic_7q.fingerprint()
        assert small_dataset.meta.created == CREATED

    def test_ideals_match_angles(self, small_dataset):
        sample = small_dataset[5]
        np.testing.assert_allclose(ideal_dist(sample.thetas).values, sample.ideal.values, atol=1e-15)

    def test_deterministic(self, realistic_7q, line7):
        a = generate(7, 10, 1000, realistic_7q, line7, master_seed=4, created=CREATED)
        b = generate(7, 10, 1000, realistic_7q, line7, master_seed=4, created=CREATED)
        np.testing.assert_array_equal(a.noisy, b.noisy)
        np.testing.assert_array_equal(a.thetas, b.thetas)

    def test_sample_stream_independent_of_count(self, realistic_7q, line7):
        a = generate(7, 5, 0, realistic_7q, line7, master_seed=4, created=CREATED)
        b = generate(7, 12, 0, realistic_7q, line7, master_seed=4, created=CREATED)
        np.testing.assert_array_equal(a.thetas, b.thetas[:5])
        np.testing.assert_allclose(a.noisy, b.noisy[:5], rtol=0, atol=1e-15)

    def test_noise_band(self, realistic_7q, line7):
        data = generate(7, 500, 32000, realistic_7q, line7, master_seed=1, created=CREATED)
        mean_mse = mse_batch(data.ideal, data.noisy).mean()
        assert 0 < mean_mse < 0.01

    def test_qubit_count_mismatch(self, realistic_7q, line7):
        with pytest.raises(ArgumentError):
            generate(5, 10, 0, realistic_7q, line7, master_seed=1)


class TestSplit:

    def test_sizes_round_to_nearest(self, small_dataset):
        train, test = split(small_dataset.head(10), 0.75, seed=2)
        assert (len(train), len(test)) == (8, 2)

    def test_disjoint_cover(self, small_dataset):
        train, test = split(small_dataset, 0.8, seed=2)
        rows = {tuple(t) for t in train.thetas} | {tuple(t) for t in test.thetas}
        assert len(train) + len(test) == len(small_dataset)
        assert len(rows) == len(small_dataset)

    def test_deterministic(self, small_dataset):
        a, _ = split(small_dataset, 0.8, seed=2)
        b, _ = split(small_dataset, 0.8, seed=2)
        c, _ = split(small_dataset, 0.8, seed=3)
        np.testing.assert_array_equal(a.thetas, b.thetas)
        assert not np.array_equal(a.thetas, c.thetas)

    def test_empty_side(self, small_dataset):
        with pytest.raises(ArgumentError):
            split(small_dataset.head(3), 0.9, seed=1)


class TestPersistence:

    def test_round_trip_is_lossless(self, small_dataset, saved, realistic_7q):
        again = load(saved, realistic_7q)
        np.testing.assert_array_equal(again.noisy, small_dataset.noisy)
        np.testing.assert_array_equal(again.ideal, small_dataset.ideal)
        np.testing.assert_array_equal(again.thetas, small_dataset.thetas)
        assert again.meta == small_dataset.meta

    def test_wrong_noise_model(self, saved, realistic_7q):
        with pytest.raises(HashMismatchError):
            load(saved, realistic_7q.linear_only())

    def test_version_mismatch(self, saved):
        def bump(lines):
            header = json.loads(lines[0])
            header['version'] = 2
            lines[0] = json.dumps(header)
        rewrite(saved, bump)
        with pytest.raises(VersionMismatchError):
            load(saved)

    def test_truncated(self, saved):
        rewrite(saved, lambda lines: lines.pop())
        with pytest.raises(MalformedLineError):
            load(saved)

    def test_garbled_line(self, saved):
        def garble(lines):
            lines[3] = lines[3][:20]
        rewrite(saved, garble)
        with pytest.raises(MalformedLineError) as info:
            load(saved)
        assert info.value.line_number == 4

    def test_tampered_ideal(self, saved):
        def tamper(lines):
            row = json.loads(lines[1])
            row['ideal'] = row['ideal'][::-1]
            lines[1] = json.dumps(row)
        rewrite(saved, tamper)
        with pytest.raises(DatasetValidationError):
            load(saved)

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'empty.jsonl'
        path.write_text('', encoding='utf-8')
        with pytest.raises(MalformedLineError):
            load(path)
