"""Conditional-independence mitigation: one small network per factor.

A :class:`~qmem_lab.topology.PartitionSpec` splits the joint distribution into
leaf conditionals ``p(leaf | context = a)`` and single-qubit marginals of the
conditional qubits. Each factor gets its own :class:`~qmem_lab.mlp.Mlp`,
trained on (noisy factor, ideal factor) pairs cut out of full-system data.
At inference the noisy factors are mitigated separately and multiplied back
together.

The full-joint network method is the trivial partition (one leaf, no
conditional qubits); transfer learning re-uses the networks of a source leaf
to initialise a structurally identical target leaf.
"""
from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .dataset import Dataset
from .errors import (
    ArgumentError,
    IncompleteModelError,
    PartitionError,
    TrainingError,
    TransferError,
)
from .io_utils import fingerprint, read_json_content, write_json
from .mlp import (
    AdamConfig,
    Mlp,
    default_layer_dims,
    forward,
    init,
    mlp_from_dict,
    mlp_to_dict,
    new_adam_state,
    train,
    trainable_param_count,
)
from .probdist import TAU_COND, ProbDist, condition_batch, marginalize_batch, recombine_batch
from .rng import derive_seed
from .topology import Leaf, PartitionSpec, structural_errors, trivial_partition

logger = logging.getLogger(__name__)

SliceKey = Tuple[int, int]
FALLBACKS = ('uniform', 'leaf-marginal')
TRANSFER_SCOPES = ('last_hidden', 'output_only')
MODEL_FORMAT = 'qmem-ci-model'
MODEL_VERSION = 1


@dataclass
class TrainConfig:
    adam: AdamConfig = field(default_factory=AdamConfig)
    hidden_layers: int = 4
    width_factor: int = 5
    tau_skip: Optional[float] = None
    fallback: str = 'uniform'
    transfer_scope: str = 'last_hidden'
    finetune_epochs: Optional[int] = None
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.adam, Mapping):
            self.adam = AdamConfig(**self.adam)
        if self.tau_skip is not None and self.tau_skip < TAU_COND:
            raise ArgumentError(f"tau_skip must be at least {TAU_COND}")
        if self.fallback not in FALLBACKS:
            raise ArgumentError(f"fallback must be one of {FALLBACKS}")
        if self.transfer_scope not in TRANSFER_SCOPES:
            raise ArgumentError(f"transfer_scope must be one of {TRANSFER_SCOPES}")
        if self.workers < 1:
            raise ArgumentError("workers must be at least 1")

    def resolve_tau_skip(self, shots: int) -> float:
        """Explicit ``tau_skip``, else ``1e-6`` for analytic data and ``max(1e-6, 1/shots)`` otherwise."""
        if self.tau_skip is not None:
            return self.tau_skip
        return 1e-6 if shots == 0 else max(1e-6, 1.0 / shots)

    def layer_dims(self, width: int) -> Tuple[int, ...]:
        return default_layer_dims(width, self.hidden_layers, self.width_factor)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ExtractionStats:
    leaf_index: int
    assignment: int
    kept: int
    skipped: int


@dataclass
class MitigationDiagnostics:
    fallbacks: Dict[SliceKey, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.fallbacks.values())


@dataclass
class CiModel:
    spec: PartitionSpec
    leaf_nets: Dict[SliceKey, Mlp]
    cond_nets: Dict[int, Mlp]
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for key in self.spec.slice_keys():
            if key not in self.leaf_nets:
                raise IncompleteModelError(key)
        for c in self.spec.conditional_qubits:
            if c not in self.cond_nets:
                raise IncompleteModelError(c)
        extra = set(self.leaf_nets) - set(self.spec.slice_keys())
        extra |= set(self.cond_nets) - set(self.spec.conditional_qubits)
        if extra:
            raise ArgumentError(f"networks without a matching factor: {sorted(extra, key=str)}")
        for (li, a), net in self.leaf_nets.items():
            d = 2 ** self.spec.leaves[li].width
            if net.layer_dims[0] != d or net.layer_dims[-1] != d:
                raise ArgumentError(f"network {(li, a)} has dims {net.layer_dims}, leaf needs {d}")
        for c, net in self.cond_nets.items():
            if net.layer_dims[0] != 2 or net.layer_dims[-1] != 2:
                raise ArgumentError(f"marginal network for qubit {c} must map 2 -> 2")

    @property
    def network_count(self) -> int:
        return len(self.leaf_nets) + len(self.cond_nets)

    def networks(self) -> List[Mlp]:
        return list(self.leaf_nets.values()) + list(self.cond_nets.values())

    def trainable_param_count(self) -> int:
        return sum(trainable_param_count(net) for net in self.networks())


# -- pair extraction -------------------------------------------------------

def extract_pairs(
    dataset: Dataset,
    spec: PartitionSpec,
    leaf_index: int,
    assignment: int,
    tau_skip: float,
) -> Tuple[np.ndarray, np.ndarray, ExtractionStats]:
    """(noisy conditional, ideal conditional) rows of one leaf slice.

    A sample contributes only if both its noisy and its ideal context mass
    reach ``tau_skip``.
    """
    if not 0 <= leaf_index < len(spec.leaves):
        raise ArgumentError(f"leaf index {leaf_index} out of range")
    assignments = spec.context_assignments(leaf_index)
    if not 0 <= assignment < len(assignments):
        raise ArgumentError(f"assignment {assignment} out of range for leaf {leaf_index}")
    leaf = spec.leaves[leaf_index]
    given = assignments[assignment]
    n = spec.qubit_count
    noisy, noisy_mass = condition_batch(dataset.noisy, n, leaf.qubits, given)
    ideal, ideal_mass = condition_batch(dataset.ideal, n, leaf.qubits, given)
    keep = (noisy_mass >= tau_skip) & (ideal_mass >= tau_skip)
    x = noisy[keep] / noisy_mass[keep, None]
    t = ideal[keep] / ideal_mass[keep, None]
    stats = ExtractionStats(leaf_index, assignment, int(keep.sum()), int((~keep).sum()))
    if stats.skipped:
        logger.warning("Leaf %d assignment %d: skipped %d of %d samples below context mass %.3g.",
                       leaf_index, assignment, stats.skipped, len(dataset), tau_skip)
    return x, t, stats


def marginal_pairs(dataset: Dataset, qubit: int) -> Tuple[np.ndarray, np.ndarray]:
    n = dataset.qubit_count
    return marginalize_batch(dataset.noisy, n, [qubit]), marginalize_batch(dataset.ideal, n, [qubit])


# -- training --------------------------------------------------------------

@dataclass
class _Job:
    key: Union[SliceKey, int]
    net: Mlp
    x: np.ndarray
    target: np.ndarray
    adam: AdamConfig
    seed: int


def _array_digest(*arrays: np.ndarray) -> str:
    digest = hashlib.sha256()
    for a in arrays:
        digest.update(np.ascontiguousarray(a, dtype='<f8').tobytes())
    return digest.hexdigest()


def _run(job: _Job) -> Mlp:
    start = time.perf_counter()
    net, trace = train(job.net, job.x, job.target, new_adam_state(job.net, job.adam), shuffle_seed=job.seed)
    net.provenance.update({
        'pairs': int(job.x.shape[0]),
        'epochs': job.adam.epochs,
        'final_loss': trace[-1] if trace else None,
        'data_fingerprint': _array_digest(job.x, job.target),
    })
    logger.info("Trained network %s on %d pairs in %.1fs.", job.key, job.x.shape[0], time.perf_counter() - start)
    return net


def _run_all(jobs: List[_Job], workers: int) -> List[Mlp]:
    if workers == 1 or len(jobs) <= 1:
        return [_run(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, jobs))


def _check_inputs(dataset: Dataset, spec: PartitionSpec):
    errors = structural_errors(spec)
    if errors:
        raise PartitionError("; ".join(errors))
    if dataset.qubit_count != spec.qubit_count:
        raise ArgumentError(f"dataset has {dataset.qubit_count} qubits, partition covers {spec.qubit_count}")


def _leaf_jobs(dataset, spec, leaf_index, config, seed, tau_skip, provenance) -> List[_Job]:
    jobs = []
    dims = config.layer_dims(spec.leaves[leaf_index].width)
    for a in range(len(spec.context_assignments(leaf_index))):
        x, t, stats = extract_pairs(dataset, spec, leaf_index, a, tau_skip)
        if stats.kept == 0:
            raise TrainingError((leaf_index, a))
        net_seed = derive_seed(seed, 'leaf', leaf_index, a)
        net = init(dims, net_seed)
        net.provenance = {**provenance, 'kind': 'leaf', 'leaf': leaf_index, 'assignment': a,
                          'seed': net_seed, 'skipped': stats.skipped}
        jobs.append(_Job((leaf_index, a), net, x, t, config.adam, net_seed))
    return jobs


def _cond_jobs(dataset, spec, config, seed, provenance) -> List[_Job]:
    jobs = []
    for c in spec.conditional_qubits:
        x, t = marginal_pairs(dataset, c)
        net_seed = derive_seed(seed, 'cond', c)
        net = init(config.layer_dims(1), net_seed)
        net.provenance = {**provenance, 'kind': 'cond', 'qubit': c, 'seed': net_seed}
        jobs.append(_Job(c, net, x, t, config.adam, net_seed))
    return jobs


def _assemble(spec: PartitionSpec, jobs: List[_Job], nets: List[Mlp], config: TrainConfig) -> CiModel:
    leaf_nets, cond_nets = {}, {}
    for job, net in zip(jobs, nets):
        if isinstance(job.key, tuple):
            leaf_nets[job.key] = net
        else:
            cond_nets[job.key] = net
    return CiModel(spec, leaf_nets, cond_nets, config.to_dict())


def train_ci(dataset: Dataset, spec: PartitionSpec, config: Optional[TrainConfig] = None, seed: int = 0) -> CiModel:
    """Train every leaf-slice network and every conditional-qubit marginal network.

    Each network draws its initial weights and batch order from its own
    stream ``derive_seed(seed, 'leaf', leaf, assignment)`` or
    ``derive_seed(seed, 'cond', qubit)``, so the result does not depend on
    training order or on ``config.workers``.
    """
    config = config or TrainConfig()
    _check_inputs(dataset, spec)
    tau_skip = config.resolve_tau_skip(dataset.meta.shots)
    provenance = {'config_fingerprint': fingerprint(config.to_dict()), 'master_seed': seed}
    jobs: List[_Job] = []
    for li in range(len(spec.leaves)):
        jobs.extend(_leaf_jobs(dataset, spec, li, config, seed, tau_skip, provenance))
    jobs.extend(_cond_jobs(dataset, spec, config, seed, provenance))
    start = time.perf_counter()
    nets = _run_all(jobs, config.workers)
    model = _assemble(spec, jobs, nets, config)
    logger.info("Trained %d networks (%d trainable parameters) in %.1fs.",
                model.network_count, model.trainable_param_count(), time.perf_counter() - start)
    return model


def train_nn(dataset: Dataset, config: Optional[TrainConfig] = None, seed: int = 0) -> CiModel:
    """The full-joint network: :func:`train_ci` on the trivial partition."""
    return train_ci(dataset, trivial_partition(dataset.qubit_count), config, seed)


def transfer(
    source_nets: Mapping[int, Mlp],
    source_leaf: Leaf,
    target_leaf: Leaf,
    scope: str = 'last_hidden',
) -> Dict[int, Mlp]:
    """Copy a source leaf's networks for a target leaf and freeze the lower layers.

    ``scope='last_hidden'`` leaves the last hidden layer and the output layer
    trainable; ``scope='output_only'`` only the output layer.
    """
    if scope not in TRANSFER_SCOPES:
        raise ArgumentError(f"scope must be one of {TRANSFER_SCOPES}")
    if source_leaf.width != target_leaf.width or len(source_leaf.context) != len(target_leaf.context):
        raise TransferError(
            f"leaf {source_leaf.qubits}|{source_leaf.context} cannot seed leaf {target_leaf.qubits}|{target_leaf.context}"
        )
    if sorted(source_nets) != list(range(2 ** len(target_leaf.context))):
        raise TransferError("source networks do not cover every context assignment")
    d = 2 ** target_leaf.width
    out: Dict[int, Mlp] = {}
    for a, source in source_nets.items():
        if source.layer_dims[0] != d or source.layer_dims[-1] != d:
            raise TransferError(f"source network dims {source.layer_dims} do not fit a {target_leaf.width}-qubit leaf")
        net = source.copy()
        layers = net.layer_count
        trainable = {layers - 1} if scope == 'output_only' else {layers - 2, layers - 1}
        net.freeze = [l not in trainable for l in range(layers)]
        net.provenance = {'transferred_from': {'qubits': list(source_leaf.qubits), 'assignment': a,
                                               'seed': source.provenance.get('seed')},
                          'transfer_scope': scope}
        out[a] = net
    return out


def train_citl(
    dataset: Dataset,
    spec: PartitionSpec,
    sources: Mapping[int, int],
    config: Optional[TrainConfig] = None,
    seed: int = 0,
) -> CiModel:
    """Train source leaves from scratch, then fine-tune transferred copies on target leaves.

    ``sources`` maps each target leaf index to its source leaf index. Leaves
    that are neither sources nor targets, and all conditional-qubit networks,
    are trained from scratch exactly as in :func:`train_ci`.
    """
    config = config or TrainConfig()
    _check_inputs(dataset, spec)
    sources = {int(t): int(s) for t, s in sources.items()}
    for target, source in sources.items():
        for li in (target, source):
            if not 0 <= li < len(spec.leaves):
                raise TransferError(f"leaf index {li} out of range")
        if source in sources:
            raise TransferError(f"leaf {source} cannot be both a source and a target")
        if target == source:
            raise TransferError(f"leaf {target} cannot be its own source")
    tau_skip = config.resolve_tau_skip(dataset.meta.shots)
    provenance = {'config_fingerprint': fingerprint(config.to_dict()), 'master_seed': seed}

    jobs: List[_Job] = []
    for li in range(len(spec.leaves)):
        if li not in sources:
            jobs.extend(_leaf_jobs(dataset, spec, li, config, seed, tau_skip, provenance))
    jobs.extend(_cond_jobs(dataset, spec, config, seed, provenance))
    start = time.perf_counter()
    nets = _run_all(jobs, config.workers)
    trained = {job.key: net for job, net in zip(jobs, nets)}
    logger.info("Trained %d from-scratch networks in %.1fs.", len(jobs), time.perf_counter() - start)

    epochs = config.adam.epochs if config.finetune_epochs is None else config.finetune_epochs
    finetune = replace(config.adam, epochs=epochs)
    tuning: List[_Job] = []
    for target, source in sorted(sources.items()):
        source_nets = {a: trained[(source, a)] for a in range(len(spec.context_assignments(source)))}
        seeded = transfer(source_nets, spec.leaves[source], spec.leaves[target], config.transfer_scope)
        for a, net in seeded.items():
            x, t, stats = extract_pairs(dataset, spec, target, a, tau_skip)
            if stats.kept == 0:
                raise TrainingError((target, a))
            net_seed = derive_seed(seed, 'leaf', target, a)
            net.provenance.update({**provenance, 'kind': 'leaf', 'leaf': target, 'assignment': a,
                                   'seed': net_seed, 'skipped': stats.skipped})
            tuning.append(_Job((target, a), net, x, t, finetune, net_seed))
    start = time.perf_counter()
    tuned = _run_all(tuning, config.workers)
    logger.info("Fine-tuned %d transferred networks in %.1fs.", len(tuning), time.perf_counter() - start)
    model = _assemble(spec, jobs + tuning, nets + tuned, config)
    model.config['sources'] = {str(t): s for t, s in sources.items()}
    return model


# -- inference -------------------------------------------------------------

Apply = Callable[[Mlp, np.ndarray], np.ndarray]


def mitigate_ci_batch(
    model: CiModel,
    noisy: np.ndarray,
    apply: Apply = forward,
    fallback: Optional[str] = None,
) -> Tuple[np.ndarray, MitigationDiagnostics]:
    """Mitigate every row of ``noisy``; returns the joint rows and fallback counts.

    A context slice whose noisy mass is below ``TAU_COND`` is replaced by a
    uniform conditional (or the leaf marginal, per ``fallback``) before it
    goes through its network.
    """
    spec = model.spec
    n = spec.qubit_count
    noisy = np.atleast_2d(np.asarray(noisy, dtype=np.float64))
    if noisy.shape[1] != 2 ** n:
        raise ArgumentError(f"expected rows of length {2 ** n}, got {noisy.shape[1]}")
    fallback = fallback or model.config.get('fallback', 'uniform')
    diagnostics = MitigationDiagnostics()
    if spec.is_trivial:
        return apply(model.leaf_nets[(0, 0)], noisy), diagnostics

    leaf_tables = {}
    for li, leaf in enumerate(spec.leaves):
        for a, given in enumerate(spec.context_assignments(li)):
            slices, masses = condition_batch(noisy, n, leaf.qubits, given)
            low = masses < TAU_COND
            inputs = slices / np.where(low, 1.0, masses)[:, None]
            if np.any(low):
                if fallback == 'leaf-marginal':
                    inputs[low] = marginalize_batch(noisy[low], n, leaf.qubits)
                else:
                    inputs[low] = 1.0 / 2 ** leaf.width
                diagnostics.fallbacks[(li, a)] = int(low.sum())
                logger.warning("Leaf %d assignment %d: %d rows below context mass %.0e, using %s input.",
                               li, a, int(low.sum()), TAU_COND, fallback)
            leaf_tables[(li, a)] = apply(model.leaf_nets[(li, a)], inputs)
    cond_tables = {c: apply(net, marginalize_batch(noisy, n, [c])) for c, net in model.cond_nets.items()}
    joint = np.clip(recombine_batch(spec, leaf_tables, cond_tables), 0.0, None)
    return joint / joint.sum(axis=1, keepdims=True), diagnostics


def mitigate_ci(model: CiModel, noisy: ProbDist, apply: Apply = forward) -> ProbDist:
    if noisy.width != model.spec.qubit_count:
        raise ArgumentError(f"distribution has {noisy.width} qubits, model covers {model.spec.qubit_count}")
    out, _ = mitigate_ci_batch(model, noisy.values, apply)
    return ProbDist(noisy.width, out[0])


# -- persistence -----------------------------------------------------------

def ci_model_to_dict(model: CiModel) -> Dict[str, Any]:
    return {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'spec': model.spec.to_dict(),
        'config': model.config,
        'leaf_nets': [{'leaf': li, 'assignment': a, 'net': mlp_to_dict(net)}
                      for (li, a), net in sorted(model.leaf_nets.items())],
        'cond_nets': [{'qubit': c, 'net': mlp_to_dict(net)} for c, net in sorted(model.cond_nets.items())],
    }


def ci_model_from_dict(data: Dict[str, Any]) -> CiModel:
    if data.get('format') != MODEL_FORMAT or data.get('version') != MODEL_VERSION:
        raise ArgumentError("not a qmem CI model bundle of a supported version")
    try:
        spec = PartitionSpec.from_dict(data['spec'])
        leaf_nets = {(int(e['leaf']), int(e['assignment'])): mlp_from_dict(e['net']) for e in data['leaf_nets']}
        cond_nets = {int(e['qubit']): mlp_from_dict(e['net']) for e in data['cond_nets']}
    except (KeyError, TypeError) as exc:
        raise ArgumentError(f"invalid model bundle: {exc}") from exc
    return CiModel(spec, leaf_nets, cond_nets, dict(data.get('config', {})))


def save_ci_model(model: CiModel, path):
    return write_json(path, ci_model_to_dict(model))


def load_ci_model(ref) -> CiModel:
    return ci_model_from_dict(read_json_content(ref))
