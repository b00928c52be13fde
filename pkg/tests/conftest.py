import numpy as np
import pytest

from qmem_lab.config import Device, ExperimentConfig
from qmem_lab.dataset import generate
from qmem_lab.probdist import ProbDist
from qmem_lab.simulator import AngleVector, NoiseModel, default_noise_model, ideal_dist, load_noise_model
from qmem_lab.topology import CouplingGraph, Leaf, PartitionSpec, load_partition

CREATED = '2026-01-01T00:00:00+00:00'


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


@pytest.fixture
def line7():
    return CouplingGraph.line(7)


@pytest.fixture
def ci7():
    return load_partition('ci-7q')


@pytest.fixture
def ci13():
    return load_partition('ci-13q')


@pytest.fixture
def realistic_7q():
    return load_noise_model('realistic-7q')


@pytest.fixture
def identity_noise_7q():
    return NoiseModel((0.0,) * 7, (0.0,) * 7)


def random_product(n, rng) -> ProbDist:
    return ideal_dist(AngleVector(rng.uniform(0.0, np.pi, n)))


@pytest.fixture
def product():
    return random_product


@pytest.fixture
def small_dataset(realistic_7q, line7):
    """64 analytic samples on the 7-qubit line with the shipped noise."""
    return generate(7, 64, 0, realistic_7q, line7, master_seed=3, created=CREATED)


@pytest.fixture
def tiny_device():
    graph = CouplingGraph.line(3)
    partition = PartitionSpec(3, (1,), (Leaf((0,), (1,)), Leaf((2,), (1,))))
    return Device(graph, partition, default_noise_model(graph, seed=5))


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig(
        name='tiny',
        qubit_count=3,
        graph='unused',
        partition='unused',
        noise='unused',
        samples=40,
        shots=0,
        train_fraction=0.8,
        methods=['unmitigated', 'LI', 'NN', 'CI', 'CITL'],
        citl_sources={1: 0},
        repetitions=2,
        seed=99,
        epochs=2,
        output_dir=str(tmp_path / 'run'),
    )
