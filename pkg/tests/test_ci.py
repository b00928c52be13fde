import numpy as np
import pytest

from qmem_lab.ci import (
    CiModel,
    TrainConfig,
    extract_pairs,
    load_ci_model,
    marginal_pairs,
    mitigate_ci,
    mitigate_ci_batch,
    save_ci_model,
    train_ci,
    train_citl,
    train_nn,
    transfer,
)
from qmem_lab.dataset import Dataset, DatasetMeta, generate, split
from qmem_lab.errors import ArgumentError, IncompleteModelError, TrainingError, TransferError
from qmem_lab.metrics import evaluate
from qmem_lab.mlp import AdamConfig, default_layer_dims, forward, init
from qmem_lab.probdist import ProbDist, condition, marginalize_batch
from qmem_lab.simulator import AngleVector, ideal_dist, load_noise_model
from qmem_lab.topology import CouplingGraph, Leaf, PartitionSpec, load_graph, load_partition

from conftest import CREATED, random_product

QUICK = TrainConfig(adam=AdamConfig(epochs=2))


def identity(net, x):
    return x


def untrained_model(spec, seed=0):
    leaf_nets = {(li, a): init(default_layer_dims(leaf.width), seed + li * 4 + a)
                 for li, leaf in enumerate(spec.leaves)
                 for a in range(2 ** len(leaf.context))}
    cond_nets = {c: init(default_layer_dims(1), seed + 100 + c) for c in spec.conditional_qubits}
    return CiModel(spec, leaf_nets, cond_nets)


@pytest.fixture
def identity_dataset(identity_noise_7q, line7):
    return generate(7, 32, 0, identity_noise_7q, line7, master_seed=8, created=CREATED)


@pytest.fixture(scope='module')
def citl_model():
    data = generate(7, 64, 0, load_noise_model('realistic-7q'), CouplingGraph.line(7), master_seed=3, created=CREATED)
    return train_citl(data, load_partition('ci-7q'), {1: 0}, QUICK, seed=5)


class TestTrainConfig:

    def test_tau_skip_floor(self):
        with pytest.raises(ArgumentError):
            TrainConfig(tau_skip=1e-10)

    def test_tau_skip_defaults(self):
        config = TrainConfig()
        assert config.resolve_tau_skip(0) == 1e-6
        assert config.resolve_tau_skip(32000) == pytest.approx(3.125e-5)
        assert config.resolve_tau_skip(100) == pytest.approx(0.01)
        assert TrainConfig(tau_skip=1e-3).resolve_tau_skip(0) == 1e-3

    def test_rejects_unknown_options(self):
        with pytest.raises(ArgumentError):
            TrainConfig(fallback='zero')
        with pytest.raises(ArgumentError):
            TrainConfig(transfer_scope='everything')

    def test_adam_from_mapping(self):
        assert TrainConfig(adam={'epochs': 7}).adam.epochs == 7


class TestExtractPairs:

    def test_identity_noise_gives_equal_pairs(self, identity_dataset, ci7):
        x, t, stats = extract_pairs(identity_dataset, ci7, 0, 1, 1e-6)
        assert stats.kept == 32
        np.testing.assert_allclose(x, t, atol=1e-12)

    def test_product_targets_are_leaf_marginals(self, small_dataset, ci7):
        _, t, stats = extract_pairs(small_dataset, ci7, 1, 0, 1e-6)
        assert stats.skipped == 0
        expected = marginalize_batch(small_dataset.ideal, 7, [4, 5, 6])
        np.testing.assert_allclose(t, expected, atol=1e-12)

    def test_matches_single_sample_conditional(self, small_dataset, ci7):
        x, _, stats = extract_pairs(small_dataset, ci7, 0, 1, 1e-6)
        assert stats.skipped == 0
        for i in (0, 17, 63):
            expected = condition(small_dataset[i].noisy, [0, 1, 2], {3: 1})
            np.testing.assert_allclose(x[i], expected.values, atol=1e-14)

    def test_two_qubit_context(self, small_dataset):
        spec = PartitionSpec(7, (2, 4), (Leaf((0, 1), (2,)), Leaf((3,), (2, 4)), Leaf((5, 6), (4,))))
        x, t, _ = extract_pairs(small_dataset, spec, 1, 3, 1e-6)
        expected = condition(small_dataset[0].noisy, [3], {2: 1, 4: 1})
        np.testing.assert_allclose(x[0], expected.values, atol=1e-14)
        np.testing.assert_allclose(x.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)

    def test_marginal_pairs(self, small_dataset):
        x, t = marginal_pairs(small_dataset, 3)
        assert x.shape == t.shape == (64, 2)

    def test_bad_indices(self, small_dataset, ci7):
        with pytest.raises(ArgumentError):
            extract_pairs(small_dataset, ci7, 2, 0, 1e-6)
        with pytest.raises(ArgumentError):
            extract_pairs(small_dataset, ci7, 0, 2, 1e-6)


class TestTrainCi:

    @pytest.mark.parametrize('partition,graph,noise', [
        ('ci-7q', 'line-7', 'realistic-7q'),
        ('ci-13q', 'heavy-hex-13', 'realistic-13q'),
    ])
    def test_every_slice_keeps_pairs(self, partition, graph, noise):
        spec = load_partition(partition)
        data = generate(spec.qubit_count, 1000, 32000, load_noise_model(noise), load_graph(graph),
                        master_seed=12, created=CREATED)
        model = train_ci(data, spec, TrainConfig(adam=AdamConfig(epochs=0)), seed=1)
        assert set(model.leaf_nets) == set(spec.slice_keys())
        for net in model.leaf_nets.values():
            assert net.provenance['pairs'] >= 1

    def test_network_and_parameter_counts(self, small_dataset, ci7):
        model = train_ci(small_dataset, ci7, QUICK, seed=1)
        assert model.network_count == 5
        assert model.trainable_param_count() == 22_814
        assert model.leaf_nets[(1, 1)].provenance['pairs'] == 64

    def test_independent_of_worker_count(self, small_dataset, ci7):
        a = train_ci(small_dataset, ci7, TrainConfig(adam=AdamConfig(epochs=2), workers=1), seed=4)
        b = train_ci(small_dataset, ci7, TrainConfig(adam=AdamConfig(epochs=2), workers=3), seed=4)
        for net_a, net_b in zip(a.networks(), b.networks()):
            for wa, wb in zip(net_a.weights, net_b.weights):
                np.testing.assert_array_equal(wa, wb)

    def test_empty_slice(self, ci7, identity_noise_7q):
        thetas = np.random.default_rng(1).uniform(0.0, np.pi, (10, 7))
        thetas[:, 3] = 0.0
        ideal = np.array([ideal_dist(AngleVector(row)).values for row in thetas])
        meta = DatasetMeta(7, 10, 0, identity_noise_7q.fingerprint(), 0, CREATED)
        with pytest.raises(TrainingError) as info:
            train_ci(Dataset(meta, thetas, ideal, ideal.copy()), ci7, QUICK)
        assert info.value.slice_key == (0, 1)

    def test_qubit_count_mismatch(self, small_dataset, ci13):
        with pytest.raises(ArgumentError):
            train_ci(small_dataset, ci13, QUICK)

    def test_nn_is_one_full_network(self, small_dataset):
        model = train_nn(small_dataset, TrainConfig(adam=AdamConfig(epochs=1)), seed=2)
        assert model.network_count == 1
        assert model.trainable_param_count() == 1_395_328
        out, diag = mitigate_ci_batch(model, small_dataset.noisy)
        np.testing.assert_array_equal(out, forward(model.leaf_nets[(0, 0)], small_dataset.noisy))
        assert diag.total == 0


class TestTransfer:

    def test_width_mismatch(self):
        nets = {a: init(default_layer_dims(3), a) for a in range(2)}
        with pytest.raises(TransferError):
            transfer(nets, Leaf((0, 1, 2), (3,)), Leaf((4, 5), (3,)))

    def test_context_size_mismatch(self):
        nets = {a: init(default_layer_dims(2), a) for a in range(2)}
        with pytest.raises(TransferError):
            transfer(nets, Leaf((0, 1), (3,)), Leaf((4, 5), (3, 6)))

    def test_freeze_flags(self):
        nets = {a: init(default_layer_dims(3), a) for a in range(2)}
        out = transfer(nets, Leaf((0, 1, 2), (3,)), Leaf((4, 5, 6), (3,)))
        assert out[0].freeze == [True, True, True, False, False]
        out = transfer(nets, Leaf((0, 1, 2), (3,)), Leaf((4, 5, 6), (3,)), scope='output_only')
        assert out[1].freeze == [True, True, True, True, False]
        assert nets[0].freeze == [False] * 5

    def test_bad_sources(self, small_dataset, ci7):
        with pytest.raises(TransferError):
            train_citl(small_dataset, ci7, {0: 0}, QUICK)
        with pytest.raises(TransferError):
            train_citl(small_dataset, ci7, {1: 0, 0: 1}, QUICK)
        with pytest.raises(TransferError):
            train_citl(small_dataset, ci7, {1: 5}, QUICK)


class TestTrainCitl:

    def test_parameter_count(self, citl_model):
        assert citl_model.network_count == 5
        assert citl_model.trainable_param_count() == 15_534

    def test_output_only_count(self, small_dataset, ci7):
        config = TrainConfig(adam=AdamConfig(epochs=1), transfer_scope='output_only')
        assert train_citl(small_dataset, ci7, {1: 0}, config, seed=5).trainable_param_count() == 12_254

    def test_frozen_layers_equal_source(self, citl_model):
        for a in range(2):
            source, target = citl_model.leaf_nets[(0, a)], citl_model.leaf_nets[(1, a)]
            for l in range(3):
                np.testing.assert_array_equal(target.weights[l], source.weights[l])
                np.testing.assert_array_equal(target.biases[l], source.biases[l])
            assert not np.array_equal(target.weights[4], source.weights[4])
            assert target.provenance['transferred_from']['qubits'] == [0, 1, 2]

    def test_zero_finetune_copies_source(self, small_dataset, ci7):
        config = TrainConfig(adam=AdamConfig(epochs=1), finetune_epochs=0)
        model = train_citl(small_dataset, ci7, {1: 0}, config, seed=5)
        for a in range(2):
            for ws, wt in zip(model.leaf_nets[(0, a)].weights, model.leaf_nets[(1, a)].weights):
                np.testing.assert_array_equal(ws, wt)

    def test_thirteen_qubit_sources(self, ci13):
        data = generate(13, 24, 0, load_noise_model('realistic-13q'), load_graph('heavy-hex-13'),
                        master_seed=2, created=CREATED)
        model = train_citl(data, ci13, {2: 0, 3: 1}, TrainConfig(adam=AdamConfig(epochs=1)), seed=1)
        assert model.network_count == 19
        assert model.config['sources'] == {'2': 0, '3': 1}


class TestMitigate:

    @pytest.mark.parametrize('spec_name,n', [('ci7', 7), ('ci13', 13)])
    def test_identity_oracle_recovers_product_states(self, request, spec_name, n, rng):
        spec = request.getfixturevalue(spec_name)
        model = untrained_model(spec)
        p = np.array([random_product(n, rng).values for _ in range(5)])
        out, diag = mitigate_ci_batch(model, p, apply=identity)
        np.testing.assert_allclose(out, p, atol=1e-9)
        assert diag.total == 0

    def test_output_is_distribution(self, ci7, rng):
        model = untrained_model(ci7)
        noisy = rng.dirichlet(np.ones(128), size=6)
        out, _ = mitigate_ci_batch(model, noisy)
        assert np.all(out >= 0)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)

    def test_fallback_on_empty_context(self, ci7):
        model = untrained_model(ci7)
        out, diag = mitigate_ci_batch(model, ProbDist.point_mass(7, 0).values[None, :])
        assert diag.fallbacks == {(0, 1): 1, (1, 1): 1}
        assert diag.total == 2
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        marginal, _ = mitigate_ci_batch(model, ProbDist.point_mass(7, 0).values[None, :], fallback='leaf-marginal')
        assert np.all(np.isfinite(marginal))

    def test_single_distribution(self, ci7, rng):
        model = untrained_model(ci7)
        p = random_product(7, rng)
        out = mitigate_ci(model, p, apply=identity)
        np.testing.assert_allclose(out.values, p.values, atol=1e-9)
        with pytest.raises(ArgumentError):
            mitigate_ci(model, ProbDist.uniform(3))

    def test_missing_network(self, ci7):
        model = untrained_model(ci7)
        leaf_nets = dict(model.leaf_nets)
        del leaf_nets[(1, 0)]
        with pytest.raises(IncompleteModelError):
            CiModel(ci7, leaf_nets, model.cond_nets)

    def test_wrong_network_dims(self, ci7):
        model = untrained_model(ci7)
        leaf_nets = dict(model.leaf_nets)
        leaf_nets[(0, 0)] = init(default_layer_dims(2), 0)
        with pytest.raises(ArgumentError):
            CiModel(ci7, leaf_nets, model.cond_nets)


def test_model_round_trip(citl_model, small_dataset, tmp_path):
    again = load_ci_model(save_ci_model(citl_model, tmp_path / 'model.json'))
    assert again.spec == citl_model.spec
    np.testing.assert_array_equal(mitigate_ci_batch(again, small_dataset.noisy)[0],
                                  mitigate_ci_batch(citl_model, small_dataset.noisy)[0])


@pytest.mark.slow
def test_ci_beats_unmitigated(realistic_7q, line7, ci7):
    data = generate(7, 1500, 32000, realistic_7q, line7, master_seed=17)
    train, test = split(data, 0.8, seed=1)
    model = train_ci(train, ci7, TrainConfig(adam=AdamConfig(epochs=100)), seed=1)
    mitigated, _ = mitigate_ci_batch(model, test.noisy)
    baseline = evaluate(test.ideal, test.noisy)
    report = evaluate(test.ideal, mitigated).with_rates(baseline)
    assert report.rates['mse'] > 0
