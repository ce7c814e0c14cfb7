"""
The cortex network: samples are routed by (input shape, output shape) into association
areas; each area trains a general network, reflects on the samples it gets wrong by
clustering them and training one specialist per cluster, and fits a task classifier
that picks the network for each input at prediction time.
"""
import dataclasses
import typing

import numpy as np
from prefect.utilities.logging import get_logger

from crtxnn import clustering, nets, tree
from crtxnn.seeding import sub_seed
from crtxnn.tensor import Shape, shape_of

logger = get_logger("crtxnn.cortex")

REGRESSION = "regression"
CLASSIFICATION = "classification"

QUANTILE = "quantile"
ABSOLUTE = "absolute"


class CortexError(ValueError):
    pass


class RoutingError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


@dataclasses.dataclass(frozen=True)
class SenseKey:
    input_shape: Shape
    output_shape: Shape

    def __str__(self) -> str:
        return f"{self.input_shape}->{self.output_shape}"

    @classmethod
    def parse(cls, text: str) -> "SenseKey":
        source, _, target = text.partition("->")
        if not target:
            raise CortexError(f"cannot parse sense key {text!r}, expected '<input>-><output>'")
        return cls(Shape.parse(source), Shape.parse(target))


@dataclasses.dataclass
class LabeledDataset:
    """
    Samples of one task, stacked: ``inputs`` has shape ``(n, *input_shape)`` and
    ``targets`` has shape ``(n, *output_shape)``.
    """
    inputs: np.ndarray
    targets: np.ndarray
    kind: str = REGRESSION

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise CortexError(f"unknown task kind {self.kind!r}")
        if len(self.inputs) != len(self.targets):
            raise CortexError(f"{len(self.inputs)} inputs but {len(self.targets)} targets")
        if self.inputs.ndim < 2 or self.targets.ndim < 2:
            raise CortexError("inputs and targets must be stacked with the sample axis first")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def sense_key(self) -> SenseKey:
        return SenseKey(Shape(self.inputs.shape[1:]), Shape(self.targets.shape[1:]))

    @property
    def flat_targets(self) -> np.ndarray:
        return self.targets.reshape(len(self), -1)

    def subset(self, rows: typing.Sequence[int]) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(inputs=self.inputs[rows], targets=self.targets[rows], kind=self.kind)

    def pairs(self) -> typing.List[typing.Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.inputs, self.targets))


@dataclasses.dataclass
class TrainParams:
    epochs: int = 1000
    batch_size: int = 0
    learning_rate: float = 1e-3
    seed: int = 0


@dataclasses.dataclass
class ReflectionParams:
    """
    How an area reflects on its mistakes.

    ``k = 0`` disables reflection. In ``quantile`` mode epsilon is chosen so that a
    fraction ``delta`` of the training samples count as correct; in ``absolute`` mode
    ``epsilon`` is used as given. Specialists train for ``epochs`` at ``learning_rate``,
    or at the general network's learning rate when it is unset.
    """
    mode: str = QUANTILE
    delta: float = 0.8
    epsilon: typing.Optional[float] = None
    k: int = 2
    epochs: int = 1000
    learning_rate: typing.Optional[float] = None
    rounds: int = 1
    seed: int = 0
    kmeans_restarts: int = 5
    kmeans_max_iter: int = 100
    tree_max_depth: int = 12
    tree_min_samples_leaf: int = 5
    tree_features: str = "flatten"

    def __post_init__(self):
        problems = []
        if self.mode not in (QUANTILE, ABSOLUTE):
            problems.append(f"mode must be {QUANTILE!r} or {ABSOLUTE!r}, got {self.mode!r}")
        if self.mode == QUANTILE and not 0 < self.delta < 1:
            problems.append(f"quantile delta must be in (0, 1), got {self.delta}")
        if self.mode == ABSOLUTE and not (self.epsilon is not None and self.epsilon > 0):
            problems.append(f"absolute epsilon must be > 0, got {self.epsilon}")
        if self.learning_rate is not None and not self.learning_rate > 0:
            problems.append(f"specialist learning rate must be > 0, got {self.learning_rate}")
        if self.k < 0:
            problems.append(f"k must be >= 0 (0 disables reflection), got {self.k}")
        if self.tree_features not in tree.TREE_FEATURES:
            problems.append(f"unknown tree features {self.tree_features!r}")
        if problems:
            raise CortexError("; ".join(problems))


@dataclasses.dataclass
class ReflectionStats:
    epsilon: float
    delta: float
    err_max: float
    t: float
    k: int
    correct_count: int
    wrong_count: int
    cluster_networks: typing.List[int] = dataclasses.field(default_factory=list)
    loss_before: float = float("nan")
    loss_after: float = float("nan")
    rounds: int = 0
    rolled_back: bool = False
    skipped: typing.Optional[str] = None


@dataclasses.dataclass
class AssociationArea:
    key: SenseKey
    kind: str
    networks: typing.List[nets.BaseNetwork]
    classifier: typing.Optional[tree.TaskClassifier] = None
    stats: typing.Optional[ReflectionStats] = None
    tree_features: str = "flatten"

    def network(self, network_id: int) -> nets.BaseNetwork:
        return self.networks[network_id]

    def features(self, X: np.ndarray) -> np.ndarray:
        return tree.TREE_FEATURES[self.tree_features](X)

    def route(self, X: np.ndarray) -> np.ndarray:
        if self.classifier is None:
            return np.zeros(len(X), dtype=np.int64)
        return tree.classify_many(self.classifier, self.features(X))

    def without_reflection(self) -> "AssociationArea":
        return AssociationArea(key=self.key, kind=self.kind, networks=self.networks[:1],
                               stats=self.stats, tree_features=self.tree_features)


@dataclasses.dataclass
class CortexModel:
    areas: typing.Dict[SenseKey, AssociationArea]
    config: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for key, area in self.areas.items():
            if area.key != key:
                raise CortexError(f"area keyed {key} carries sense key {area.key}")

    def network_count(self) -> int:
        return sum(len(area.networks) for area in self.areas.values())

    def without_reflection(self) -> "CortexModel":
        return CortexModel(areas={key: area.without_reflection() for key, area in self.areas.items()},
                           config=self.config)


class ErrorEvents(typing.NamedTuple):
    correct: np.ndarray
    wrong: np.ndarray
    err_max: float


class Routing(typing.NamedTuple):
    output: np.ndarray
    key: SenseKey
    network_id: int


# Sensing #####################################################################

def _is_one_hot(targets: np.ndarray) -> bool:
    rows = targets.reshape(len(targets), -1)
    return rows.shape[1] > 1 and bool(np.all((rows == 0) | (rows == 1)) and np.all(rows.sum(axis=1) == 1))


def sense_partition(
        mixed: typing.Sequence[typing.Tuple[np.ndarray, np.ndarray]],
        kinds: typing.Optional[typing.Mapping[SenseKey, str]] = None
) -> typing.Dict[SenseKey, LabeledDataset]:
    """
    Group samples by (input shape, output shape), keeping their relative order.
    The task kind of a group is taken from ``kinds`` or inferred: classification when
    every target is one-hot with more than one component.
    """
    if len(mixed) == 0:
        raise CortexError("nothing to partition")
    groups: typing.Dict[SenseKey, typing.List[int]] = {}
    for index, (x, y) in enumerate(mixed):
        key = SenseKey(shape_of(np.asarray(x)), shape_of(np.asarray(y)))
        groups.setdefault(key, []).append(index)
    partition = {}
    for key, rows in groups.items():
        inputs = np.stack([np.asarray(mixed[i][0], dtype=np.float64) for i in rows])
        targets = np.stack([np.asarray(mixed[i][1], dtype=np.float64) for i in rows])
        if kinds is not None and key in kinds:
            kind = kinds[key]
        else:
            kind = CLASSIFICATION if _is_one_hot(targets) else REGRESSION
        partition[key] = LabeledDataset(inputs=inputs, targets=targets, kind=kind)
    logger.info("sensed %d sample(s) into %d area(s): %s", len(mixed), len(partition),
                ", ".join(f"{key} ({len(d)})" for key, d in partition.items()))
    return partition


# Error accounting ############################################################

def area_outputs(area: AssociationArea, X: np.ndarray) -> typing.Tuple[np.ndarray, np.ndarray]:
    """Outputs of the routed networks for every row of ``X`` and the id used for each."""
    ids = area.route(X)
    outputs = np.zeros((len(X), area.networks[0].config.output_size))
    for network_id in np.unique(ids):
        rows = np.flatnonzero(ids == network_id)
        outputs[rows] = nets.predict_batch(area.network(int(network_id)), X[rows])
    return outputs, ids


def _loss_kind(area: AssociationArea) -> str:
    return area.networks[0].loss_kind


def _events_from_errors(errors: np.ndarray, epsilon: float) -> ErrorEvents:
    correct = np.flatnonzero(errors < epsilon)
    wrong = np.flatnonzero(errors >= epsilon)
    err_max = float(errors[wrong].max()) if len(wrong) else 0.0
    return ErrorEvents(correct=correct, wrong=wrong, err_max=err_max)


def error_events(net: nets.BaseNetwork, dataset: LabeledDataset, epsilon: float) -> ErrorEvents:
    """
    Split sample indices into correct events (error scalar < epsilon) and wrong events.
    ``err_max`` is the largest error among the wrong events, 0 when there are none.
    """
    if epsilon <= 0:
        raise CortexError(f"epsilon must be > 0, got {epsilon}")
    if len(dataset) == 0:
        raise CortexError("error events of an empty dataset")
    return _events_from_errors(nets.per_sample_errors(net, dataset.inputs, dataset.flat_targets), epsilon)


def choose_epsilon(errors: np.ndarray, params: ReflectionParams) -> float:
    """
    Epsilon for the given per-sample errors: the configured value in absolute mode;
    in quantile mode the smallest value that makes ceil(delta * n) samples correct.
    """
    if params.mode == ABSOLUTE:
        return float(params.epsilon)
    ordered = np.sort(errors)
    correct = min(len(ordered), max(1, int(np.ceil(params.delta * len(ordered)))))
    return float(np.nextafter(ordered[correct - 1], np.inf))


def area_loss(area: AssociationArea, dataset: LabeledDataset) -> float:
    """
    Two-term reflected loss: mean loss over the samples routed to the general network
    plus mean loss over the samples routed to specialists. An empty group contributes 0,
    so an area without reflection scores its plain mean loss.
    """
    if len(dataset) == 0:
        raise CortexError("area loss of an empty dataset")
    outputs, ids = area_outputs(area, dataset.inputs)
    losses = nets.sample_losses(outputs, dataset.flat_targets, _loss_kind(area))
    return _two_term(losses, ids)


def _two_term(losses: np.ndarray, ids: np.ndarray) -> float:
    general = ids == 0
    first = float(losses[general].mean()) if general.any() else 0.0
    second = float(losses[~general].mean()) if (~general).any() else 0.0
    return first + second


def _check_keys(model: CortexModel, datasets: typing.Mapping[SenseKey, LabeledDataset]):
    if set(model.areas) != set(datasets):
        missing = sorted(str(k) for k in set(model.areas) ^ set(datasets))
        raise CortexError(f"key mismatch between model and datasets: {', '.join(missing)}")


def cortex_loss(model: CortexModel, datasets: typing.Mapping[SenseKey, LabeledDataset]) -> float:
    """Unweighted mean of the area losses."""
    _check_keys(model, datasets)
    losses = [area_loss(area, datasets[key]) for key, area in model.areas.items()]
    return float(np.mean(losses))


# Reflection ##################################################################

def fit_task_classifier(
        area: AssociationArea,
        dataset: LabeledDataset,
        correct: np.ndarray,
        wrong: np.ndarray,
        assignments: np.ndarray,
        cluster_networks: typing.Optional[typing.Sequence[int]] = None,
        base_labels: typing.Optional[np.ndarray] = None,
        params: typing.Optional[ReflectionParams] = None
) -> tree.TaskClassifier:
    """
    Fit the area's routing tree. Correct samples keep their current network (id 0
    unless ``base_labels`` says otherwise); a wrong sample in cluster ``j`` is labelled
    ``cluster_networks[j]`` (by default ``1 + j``); a negative entry leaves the
    cluster's samples on their current network.
    """
    params = params or ReflectionParams()
    if len(correct) + len(wrong) != len(dataset):
        raise CortexError("correct and wrong indices do not cover the dataset")
    labels = np.zeros(len(dataset), dtype=np.int64) if base_labels is None else np.array(base_labels, dtype=np.int64)
    wrong = np.asarray(wrong, dtype=np.int64)
    assignments = np.asarray(assignments, dtype=np.int64)
    if cluster_networks is None:
        cluster_networks = [1 + j for j in range(int(np.max(assignments, initial=-1)) + 1)]
    mapped = np.asarray(cluster_networks, dtype=np.int64)[assignments]
    reassigned = mapped >= 0
    labels[wrong[reassigned]] = mapped[reassigned]
    return tree.fit(
        area.features(dataset.inputs),
        labels,
        max_depth=params.tree_max_depth,
        min_samples_leaf=params.tree_min_samples_leaf,
    )


def reflect(
        area: AssociationArea,
        dataset: LabeledDataset,
        wrong: np.ndarray,
        params: ReflectionParams,
        train_params: typing.Optional[TrainParams] = None,
        round_index: int = 0
) -> AssociationArea:
    """
    Cluster the wrong samples' inputs into ``params.k`` groups, train one fresh
    specialist per group and refit the task classifier.

    Every specialist joins the area, so a round always adds ``params.k`` networks with
    consecutive ids. A cluster is routed to its specialist only if the specialist's
    loss there is strictly lower than that of the network currently answering for
    those samples; otherwise it keeps its current label. If the new routing scores a
    higher training ``area_loss`` than before, the previous routing is kept.
    ``stats.cluster_networks`` holds the routed specialist id per cluster, -1 where
    the cluster was not handed over. With fewer wrong samples than clusters the area
    is returned unchanged.
    """
    train_params = train_params or TrainParams()
    stats = dataclasses.replace(area.stats) if area.stats is not None else None
    wrong = np.asarray(wrong, dtype=np.int64)
    if len(wrong) < max(params.k, 1):
        reason = f"{len(wrong)} wrong sample(s) cannot fill k={params.k} cluster(s)"
        logger.warning("area %s: reflection skipped, %s", area.key, reason)
        if stats is not None:
            stats.skipped = reason
        return dataclasses.replace(area, stats=stats)

    key_name = str(area.key)
    X, Y = dataset.inputs, dataset.flat_targets
    loss_kind = _loss_kind(area)
    current_outputs, current_ids = area_outputs(area, X)
    current_losses = nets.sample_losses(current_outputs, Y, loss_kind)
    loss_before = _two_term(current_losses, current_ids)

    clusters = clustering.kmeans(
        tree.flatten_features(X[wrong]),
        params.k,
        max_iter=params.kmeans_max_iter,
        seed=sub_seed(params.seed, "kmeans", key_name, round_index),
        n_init=params.kmeans_restarts,
    )
    networks = list(area.networks)
    cluster_networks = []
    for cluster in range(params.k):
        rows = wrong[clusters.assignments == cluster]
        specialist = nets.init_network(
            area.networks[0].config,
            sub_seed(train_params.seed, "init", key_name, round_index, cluster + 1),
            id=len(networks),
        )
        nets.train(
            specialist, X[rows], Y[rows],
            epochs=params.epochs,
            batch_size=train_params.batch_size,
            learning_rate=params.learning_rate or train_params.learning_rate,
            seed=sub_seed(train_params.seed, "shuffle", key_name, round_index, cluster + 1),
        )
        networks.append(specialist)
        specialist_loss = nets.dataset_loss(specialist, X[rows], Y[rows])
        incumbent_loss = float(current_losses[rows].mean())
        if specialist_loss < incumbent_loss:
            cluster_networks.append(specialist.id)
            logger.info("area %s: specialist %d accepted on %d sample(s), loss %.4g < %.4g",
                        area.key, specialist.id, len(rows), specialist_loss, incumbent_loss)
        else:
            cluster_networks.append(-1)
            logger.warning("area %s: specialist %d rejected, cluster %d stays routed as before, loss %.4g >= %.4g",
                           area.key, specialist.id, cluster, specialist_loss, incumbent_loss)

    if stats is not None:
        stats.rounds = round_index + 1
        stats.loss_before = loss_before
        stats.loss_after = loss_before
        stats.cluster_networks = [-1] * params.k
    unrouted = dataclasses.replace(area, networks=networks, stats=stats)
    if all(n < 0 for n in cluster_networks):
        return unrouted

    correct = np.setdiff1d(np.arange(len(dataset)), wrong)
    classifier = fit_task_classifier(
        area, dataset, correct, wrong, clusters.assignments,
        cluster_networks=cluster_networks,
        base_labels=current_ids,
        params=params,
    )
    reflected = dataclasses.replace(area, networks=networks, classifier=classifier)
    loss_after = area_loss(reflected, dataset)
    if loss_after > loss_before:
        logger.warning("area %s: routing rolled back, training loss %.4g > %.4g",
                       area.key, loss_after, loss_before)
        if stats is not None:
            stats.rolled_back = True
        return unrouted
    if stats is not None:
        stats.loss_after = loss_after
        stats.cluster_networks = list(cluster_networks)
    logger.info("area %s: reflection round %d, %d network(s), training loss %.4g -> %.4g",
                area.key, round_index + 1, len(networks), loss_before, loss_after)
    return dataclasses.replace(reflected, stats=stats)


# Learning ####################################################################

def _check_config(key: SenseKey, config: nets.NetworkConfig):
    if config.input_shape != key.input_shape.dims or config.output_size != key.output_shape.size:
        raise CortexError(
            f"network config for {key} expects input {Shape(config.input_shape)} "
            f"and {config.output_size} output(s)"
        )


def learn_area(
        key: SenseKey,
        dataset: LabeledDataset,
        config: nets.NetworkConfig,
        train_params: TrainParams,
        reflection_params: ReflectionParams
) -> AssociationArea:
    """Train the general network of one area, then run the configured reflection rounds."""
    if len(dataset) == 0:
        raise CortexError(f"area {key} has no samples")
    _check_config(key, config)
    key_name = str(key)
    X, Y = dataset.inputs, dataset.flat_targets

    general = nets.init_network(config, sub_seed(train_params.seed, "init", key_name, 0, 0), id=0)
    report = nets.train(
        general, X, Y,
        epochs=train_params.epochs,
        batch_size=train_params.batch_size,
        learning_rate=train_params.learning_rate,
        seed=sub_seed(train_params.seed, "shuffle", key_name, 0, 0),
    )
    logger.info("area %s: general network trained on %d sample(s) for %d epoch(s), loss %.6g",
                key, len(dataset), report.epochs, report.final_loss)

    area = AssociationArea(key=key, kind=dataset.kind, networks=[general],
                           tree_features=reflection_params.tree_features)
    errors = nets.per_sample_errors(general, X, Y)
    epsilon = choose_epsilon(errors, reflection_params)
    events = _events_from_errors(errors, epsilon)
    plain_loss = report.final_loss
    area.stats = ReflectionStats(
        epsilon=epsilon,
        delta=len(events.correct) / len(dataset),
        err_max=events.err_max,
        t=events.err_max / epsilon,
        k=reflection_params.k,
        correct_count=len(events.correct),
        wrong_count=len(events.wrong),
        loss_before=plain_loss,
        loss_after=plain_loss,
    )
    if reflection_params.k == 0 or reflection_params.rounds < 1:
        area.stats.skipped = "reflection disabled"
        return area

    for round_index in range(reflection_params.rounds):
        if round_index > 0:
            outputs, _ = area_outputs(area, X)
            errors = nets.sample_errors(outputs, Y, general.loss_kind)
            events = _events_from_errors(errors, choose_epsilon(errors, reflection_params))
        if len(events.wrong) == 0:
            area.stats.skipped = "no wrong events"
            break
        area = reflect(area, dataset, events.wrong, reflection_params, train_params, round_index)
        if area.stats.skipped or area.stats.rolled_back:
            break
    return area


def learn(
        mixed: typing.Sequence[typing.Tuple[np.ndarray, np.ndarray]],
        net_configs: typing.Mapping[SenseKey, nets.NetworkConfig],
        train_params: typing.Union[TrainParams, typing.Mapping[SenseKey, TrainParams]],
        reflection_params: ReflectionParams,
        kinds: typing.Optional[typing.Mapping[SenseKey, str]] = None,
        config: typing.Optional[dict] = None
) -> CortexModel:
    """
    Sense, train and reflect: partition ``mixed`` by shape, then build one association
    area per sense key. Deterministic given the seeds in the parameter objects.

    Raises
    ------
    CortexError
        If a sense key has no network config (all missing keys are listed).
    """
    groups = sense_partition(mixed, kinds)
    missing = [str(key) for key in groups if key not in net_configs]
    if missing:
        raise CortexError(f"no network config for sense key(s): {', '.join(missing)}")
    areas = {}
    for key, dataset in groups.items():
        params = train_params if isinstance(train_params, TrainParams) else train_params[key]
        areas[key] = learn_area(key, dataset, net_configs[key], params, reflection_params)
    model = CortexModel(areas=areas, config=dict(config or {}))
    logger.info("cortex learned: %d area(s), %d network(s)", len(areas), model.network_count())
    return model


# Prediction ##################################################################

def find_area(model: CortexModel, input_shape: Shape, output_shape: Shape) -> AssociationArea:
    key = SenseKey(input_shape, output_shape)
    if key not in model.areas:
        known = ", ".join(str(k) for k in model.areas) or "none"
        raise RoutingError(f"no association area for input {input_shape} -> output {output_shape}; known keys: {known}")
    return model.areas[key]


def predict_with_provenance(
        model: CortexModel,
        x: np.ndarray,
        output_shape: typing.Union[Shape, typing.Sequence[int]]
) -> Routing:
    """Route ``x`` to its area and network and return the output with where it came from."""
    x = np.asarray(x, dtype=np.float64)
    output_shape = output_shape if isinstance(output_shape, Shape) else Shape(tuple(output_shape))
    area = find_area(model, shape_of(x), output_shape)
    network_id = int(area.route(x[None])[0])
    output = nets.forward(area.network(network_id), x).reshape(output_shape.dims)
    output.setflags(write=False)
    return Routing(output=output, key=area.key, network_id=network_id)


def predict(model: CortexModel, x: np.ndarray, output_shape: typing.Union[Shape, typing.Sequence[int]]) -> np.ndarray:
    return predict_with_provenance(model, x, output_shape).output


# Evaluation ##################################################################

@dataclasses.dataclass
class AreaMetrics:
    key: SenseKey
    kind: str
    samples: int
    accuracy: float
    loss: float
    baseline_accuracy: float
    baseline_loss: float
    loss_reduction_pct: float
    epsilon: float
    delta: float
    err_max: float
    t: float
    network_count: int
    routing: typing.Dict[int, int]

    def to_record(self) -> dict:
        record = dataclasses.asdict(self)
        record["key"] = str(self.key)
        record["routing"] = ";".join(f"{network}:{count}" for network, count in sorted(self.routing.items()))
        return record


def _accuracy(area: AssociationArea, outputs: np.ndarray, dataset: LabeledDataset) -> float:
    Y = dataset.flat_targets
    if area.kind == CLASSIFICATION:
        return float(np.mean(outputs.argmax(axis=1) == Y.argmax(axis=1)))
    if area.stats is None:
        return float("nan")
    errors = nets.sample_errors(outputs, Y, _loss_kind(area))
    return float(np.mean(errors < area.stats.epsilon))


def evaluate(model: CortexModel, datasets: typing.Mapping[SenseKey, LabeledDataset]) -> typing.List[AreaMetrics]:
    """
    Per-area accuracy and loss of the reflected model next to the network-0-only
    baseline, with the loss reduction and how many samples each network answered.
    """
    _check_keys(model, datasets)
    metrics = []
    for key, area in model.areas.items():
        dataset = datasets[key]
        if len(dataset) == 0:
            raise CortexError(f"no evaluation samples for area {key}")
        outputs, ids = area_outputs(area, dataset.inputs)
        losses = nets.sample_losses(outputs, dataset.flat_targets, _loss_kind(area))
        loss = _two_term(losses, ids)
        baseline = area.without_reflection()
        baseline_outputs, _ = area_outputs(baseline, dataset.inputs)
        baseline_loss = area_loss(baseline, dataset)
        reduction = 100.0 * (baseline_loss - loss) / baseline_loss if baseline_loss > 0 else 0.0
        counts = np.bincount(ids, minlength=len(area.networks))
        stats = area.stats
        metrics.append(AreaMetrics(
            key=key,
            kind=area.kind,
            samples=len(dataset),
            accuracy=_accuracy(area, outputs, dataset),
            loss=loss,
            baseline_accuracy=_accuracy(baseline, baseline_outputs, dataset),
            baseline_loss=baseline_loss,
            loss_reduction_pct=reduction,
            epsilon=stats.epsilon if stats else float("nan"),
            delta=stats.delta if stats else float("nan"),
            err_max=stats.err_max if stats else float("nan"),
            t=stats.t if stats else float("nan"),
            network_count=len(area.networks),
            routing={network: int(count) for network, count in enumerate(counts)},
        ))
    return metrics
