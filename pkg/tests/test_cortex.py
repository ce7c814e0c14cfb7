import dataclasses

import numpy as np
import pytest

from crtxnn import cortex, data, nets, tree
from crtxnn.seeding import rng
from crtxnn.tensor import Shape

FAST_TRAIN = cortex.TrainParams(epochs=200, learning_rate=1e-2, seed=0)
FAST_REFLECTION = cortex.ReflectionParams(k=2, epochs=200, kmeans_restarts=2, tree_min_samples_leaf=2)

SHAPES = [(1,), (2,), (2, 2), (3,)]


def _stats(samples):
    return cortex.ReflectionStats(epsilon=0.1, delta=0.5, err_max=1.0, t=10.0, k=2,
                                  correct_count=samples // 2, wrong_count=samples - samples // 2)


def _general_area(dataset, config, seed=0):
    key = dataset.sense_key
    general = nets.init_network(config, seed, id=0)
    nets.train(general, dataset.inputs, dataset.flat_targets, epochs=FAST_TRAIN.epochs,
               learning_rate=FAST_TRAIN.learning_rate, seed=seed)
    return cortex.AssociationArea(key=key, kind=dataset.kind, networks=[general])


@pytest.fixture
def learned(step_dataset, small_regressor):
    return cortex.learn(step_dataset.pairs(), {step_dataset.sense_key: small_regressor},
                        FAST_TRAIN, FAST_REFLECTION)


class TestSenseKey:

    def test_str_and_parse(self):
        key = cortex.SenseKey(Shape.of(28, 28, 1), Shape.of(10))
        assert str(key) == "28x28x1->10"
        assert cortex.SenseKey.parse(str(key)) == key

    def test_parse_without_arrow(self):
        with pytest.raises(cortex.CortexError):
            cortex.SenseKey.parse("28x28x1")


class TestLabeledDataset:

    def test_length_mismatch(self):
        with pytest.raises(cortex.CortexError):
            cortex.LabeledDataset(inputs=np.zeros((3, 1)), targets=np.zeros((2, 1)))

    def test_unknown_kind(self):
        with pytest.raises(cortex.CortexError):
            cortex.LabeledDataset(inputs=np.zeros((1, 1)), targets=np.zeros((1, 1)), kind="ranking")

    def test_sense_key(self, step_dataset):
        assert step_dataset.sense_key == cortex.SenseKey(Shape.of(1), Shape.of(1))


class TestSensePartition:

    def test_groups_by_shape_pair(self):
        mixed = [
            (np.zeros(1), np.zeros(1)),
            (np.zeros((2, 2)), np.eye(3)[0]),
            (np.ones(1), np.ones(1)),
        ]
        groups = cortex.sense_partition(mixed)
        assert set(groups) == {
            cortex.SenseKey(Shape.of(1), Shape.of(1)),
            cortex.SenseKey(Shape.of(2, 2), Shape.of(3)),
        }
        np.testing.assert_array_equal(groups[cortex.SenseKey(Shape.of(1), Shape.of(1))].inputs, [[0.0], [1.0]])

    def test_kind_inference(self):
        mixed = [(np.zeros(2), np.eye(3)[1]), (np.zeros(1), np.array([0.5]))]
        groups = cortex.sense_partition(mixed)
        kinds = {key.output_shape.dims: dataset.kind for key, dataset in groups.items()}
        assert kinds == {(3,): cortex.CLASSIFICATION, (1,): cortex.REGRESSION}

    def test_given_kinds_win(self):
        key = cortex.SenseKey(Shape.of(2), Shape.of(3))
        groups = cortex.sense_partition([(np.zeros(2), np.eye(3)[1])], kinds={key: cortex.REGRESSION})
        assert groups[key].kind == cortex.REGRESSION

    def test_empty(self):
        with pytest.raises(cortex.CortexError):
            cortex.sense_partition([])

    def test_partition_property_on_random_mixtures(self):
        generator = rng(0, "partition")
        for case in range(1000):
            mixed = []
            for index in range(int(generator.integers(1, 12))):
                input_shape = SHAPES[int(generator.integers(len(SHAPES)))]
                output_shape = SHAPES[int(generator.integers(len(SHAPES)))]
                mixed.append((np.full(input_shape, float(index)), np.full(output_shape, float(case))))
            groups = cortex.sense_partition(mixed)
            assert sum(len(dataset) for dataset in groups.values()) == len(mixed)
            for key, dataset in groups.items():
                expected = [i for i, (x, y) in enumerate(mixed)
                            if x.shape == key.input_shape.dims and y.shape == key.output_shape.dims]
                # sample i carries i in every input component, so order is visible
                assert dataset.inputs.reshape(len(dataset), -1)[:, 0].tolist() == expected
                assert dataset.inputs.shape[1:] == key.input_shape.dims
                assert dataset.targets.shape[1:] == key.output_shape.dims


class TestErrorAccounting:

    def test_error_events_cover_the_dataset(self, step_dataset, small_regressor):
        net = nets.init_network(small_regressor, seed=0)
        events = cortex.error_events(net, step_dataset, epsilon=0.2)
        errors = nets.per_sample_errors(net, step_dataset.inputs, step_dataset.flat_targets)
        assert sorted(events.correct.tolist() + events.wrong.tolist()) == list(range(len(step_dataset)))
        assert np.all(errors[events.correct] < 0.2)
        assert np.all(errors[events.wrong] >= 0.2)
        assert events.err_max == (errors[events.wrong].max() if len(events.wrong) else 0.0)

    def test_error_events_need_positive_epsilon(self, step_dataset, small_regressor):
        net = nets.init_network(small_regressor, seed=0)
        with pytest.raises(cortex.CortexError):
            cortex.error_events(net, step_dataset, epsilon=0.0)

    def test_quantile_epsilon(self):
        errors = np.array([0.5, 0.1, 0.4, 0.2, 0.3])
        epsilon = cortex.choose_epsilon(errors, cortex.ReflectionParams(delta=0.8))
        assert np.sum(errors < epsilon) == 4
        assert epsilon == pytest.approx(0.4)

    def test_absolute_epsilon(self):
        params = cortex.ReflectionParams(mode=cortex.ABSOLUTE, epsilon=0.25)
        assert cortex.choose_epsilon(np.array([1.0, 2.0]), params) == 0.25

    @pytest.mark.parametrize("kwargs", [
        {"mode": "median"},
        {"delta": 1.0},
        {"mode": cortex.ABSOLUTE},
        {"k": -1},
        {"tree_features": "pixels"},
    ])
    def test_invalid_reflection_params(self, kwargs):
        with pytest.raises(cortex.CortexError):
            cortex.ReflectionParams(**kwargs)


class TestLosses:

    def test_unreflected_area_scores_its_mean_loss(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        expected = nets.dataset_loss(area.networks[0], step_dataset.inputs, step_dataset.flat_targets)
        assert cortex.area_loss(area, step_dataset) == pytest.approx(expected)

    def test_two_terms_average_separately(self, step_dataset, small_regressor):
        general = nets.init_network(small_regressor, seed=0, id=0)
        specialist = nets.init_network(small_regressor, seed=1, id=1)
        classifier = tree.TaskClassifier(root=tree.Split(0, 0.0, tree.Leaf(0), tree.Leaf(1)), input_length=1)
        area = cortex.AssociationArea(key=step_dataset.sense_key, kind=cortex.REGRESSION,
                                      networks=[general, specialist], classifier=classifier)
        X, Y = step_dataset.inputs, step_dataset.flat_targets
        left = X[:, 0] < 0
        expected = nets.dataset_loss(general, X[left], Y[left]) + nets.dataset_loss(specialist, X[~left], Y[~left])
        assert cortex.area_loss(area, step_dataset) == pytest.approx(expected)

    def test_cortex_loss_is_the_mean_of_area_losses(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        model = cortex.CortexModel(areas={area.key: area})
        assert cortex.cortex_loss(model, {area.key: step_dataset}) == cortex.area_loss(area, step_dataset)

    def test_cortex_loss_key_mismatch(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        model = cortex.CortexModel(areas={area.key: area})
        other = cortex.SenseKey(Shape.of(2), Shape.of(1))
        with pytest.raises(cortex.CortexError, match="key mismatch"):
            cortex.cortex_loss(model, {other: step_dataset})


class TestTaskClassifier:

    def test_wrong_samples_get_their_cluster_network(self, small_regressor):
        x = np.linspace(-1, 1, 40, endpoint=False)[:, None]
        dataset = cortex.LabeledDataset(inputs=x, targets=np.zeros_like(x))
        area = cortex.AssociationArea(key=dataset.sense_key, kind=cortex.REGRESSION,
                                      networks=[nets.init_network(small_regressor, seed=0)])
        wrong = np.arange(30, 40)
        correct = np.arange(30)
        classifier = cortex.fit_task_classifier(
            area, dataset, correct, wrong, np.zeros(10, dtype=int),
            params=cortex.ReflectionParams(tree_min_samples_leaf=1),
        )
        np.testing.assert_array_equal(tree.classify_many(classifier, x), (np.arange(40) >= 30).astype(int))

    def test_rejected_clusters_keep_their_network(self, small_regressor):
        x = np.linspace(-1, 1, 20, endpoint=False)[:, None]
        dataset = cortex.LabeledDataset(inputs=x, targets=np.zeros_like(x))
        area = cortex.AssociationArea(key=dataset.sense_key, kind=cortex.REGRESSION,
                                      networks=[nets.init_network(small_regressor, seed=0)])
        classifier = cortex.fit_task_classifier(
            area, dataset, np.arange(10), np.arange(10, 20), np.zeros(10, dtype=int), cluster_networks=[-1],
        )
        assert classifier.leaf_ids() == {0}

    def test_indices_must_cover_the_dataset(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        with pytest.raises(cortex.CortexError, match="cover"):
            cortex.fit_task_classifier(area, step_dataset, np.arange(3), np.arange(3, 5), np.zeros(2, dtype=int))


class TestReflect:

    def test_too_few_wrong_samples_leave_the_area_alone(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        reflected = cortex.reflect(area, step_dataset, np.array([0]), FAST_REFLECTION, FAST_TRAIN)
        assert reflected.networks == area.networks
        assert reflected.classifier is None

    def test_reflection_never_raises_the_training_loss(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        before = cortex.area_loss(area, step_dataset)
        errors = nets.per_sample_errors(area.networks[0], step_dataset.inputs, step_dataset.flat_targets)
        wrong = np.flatnonzero(errors >= cortex.choose_epsilon(errors, FAST_REFLECTION))
        reflected = cortex.reflect(area, step_dataset, wrong, FAST_REFLECTION, FAST_TRAIN)
        assert cortex.area_loss(reflected, step_dataset) <= before
        if reflected.classifier is not None:
            assert reflected.classifier.leaf_ids() <= set(range(len(reflected.networks)))
        assert [net.id for net in reflected.networks] == [0, 1, 2]

    def test_general_network_is_untouched(self, step_dataset, small_regressor):
        area = _general_area(step_dataset, small_regressor)
        general = area.networks[0].params.copy()
        errors = nets.per_sample_errors(area.networks[0], step_dataset.inputs, step_dataset.flat_targets)
        cortex.reflect(area, step_dataset, np.flatnonzero(errors >= np.median(errors)), FAST_REFLECTION, FAST_TRAIN)
        np.testing.assert_array_equal(area.networks[0].params, general)

    def test_rejected_specialists_stay_but_are_not_routed(self, small_regressor):
        general = nets.init_network(small_regressor, seed=0)
        x = np.linspace(-1, 1, 40, endpoint=False)[:, None]
        # the general network reproduces its targets, so no specialist can beat it
        dataset = cortex.LabeledDataset(inputs=x, targets=nets.predict_batch(general, x))
        area = cortex.AssociationArea(key=dataset.sense_key, kind=cortex.REGRESSION, networks=[general],
                                      stats=_stats(len(dataset)))
        reflected = cortex.reflect(area, dataset, np.arange(20, 40), FAST_REFLECTION, FAST_TRAIN)
        assert [net.id for net in reflected.networks] == [0, 1, 2]
        assert reflected.classifier is None
        assert reflected.stats.cluster_networks == [-1, -1]
        assert not reflected.stats.rolled_back
        assert set(reflected.route(x).tolist()) == {0}
        assert cortex.area_loss(reflected, dataset) == cortex.area_loss(area, dataset)

    def test_rolled_back_routing_keeps_the_networks(self, step_dataset, small_regressor, monkeypatch):
        # an untrained general network, so the specialists are accepted
        area = cortex.AssociationArea(key=step_dataset.sense_key, kind=cortex.REGRESSION,
                                      networks=[nets.init_network(small_regressor, seed=0)],
                                      stats=_stats(len(step_dataset)))
        wrong = np.arange(len(step_dataset))
        monkeypatch.setattr(cortex, "area_loss", lambda *args: float("inf"))
        reflected = cortex.reflect(area, step_dataset, wrong, FAST_REFLECTION, FAST_TRAIN)
        assert len(reflected.networks) == 3
        assert reflected.classifier is None
        assert reflected.stats.rolled_back
        assert reflected.stats.cluster_networks == [-1, -1]
        assert reflected.stats.loss_after == reflected.stats.loss_before

    def test_specialist_learning_rate(self, step_dataset, small_regressor, monkeypatch):
        area = _general_area(step_dataset, small_regressor)
        rates = []
        original = nets.train

        def recording(*args, **kwargs):
            rates.append(kwargs["learning_rate"])
            return original(*args, **kwargs)

        monkeypatch.setattr(nets, "train", recording)
        params = dataclasses.replace(FAST_REFLECTION, epochs=5, learning_rate=0.05)
        cortex.reflect(area, step_dataset, np.arange(60, 120), params, FAST_TRAIN)
        assert rates == [0.05, 0.05]
        rates.clear()
        cortex.reflect(area, step_dataset, np.arange(60, 120), dataclasses.replace(params, learning_rate=None), FAST_TRAIN)
        assert rates == [FAST_TRAIN.learning_rate] * 2


class TestPiecewiseReflection:
    """Two specialists on the two halves of the piecewise target."""

    @pytest.fixture(scope="class")
    def reflected(self):
        # symmetric about 0 and never on it
        x = np.linspace(-0.995, 0.995, 200)[:, None]
        dataset = cortex.LabeledDataset(inputs=x, targets=data.FUNCTIONS["piecewise"].evaluate(x))
        # every sample counts as wrong, so the clusters cover the whole domain
        params = cortex.ReflectionParams(mode=cortex.ABSOLUTE, epsilon=1e-12, k=2, epochs=3000, learning_rate=1e-2,
                                         kmeans_restarts=2, tree_min_samples_leaf=2)
        area = cortex.learn_area(dataset.sense_key, dataset, nets.mlp_regressor(1, (8,), 1),
                                 cortex.TrainParams(epochs=300, learning_rate=1e-2, seed=0), params)
        return area, dataset

    def test_three_networks(self, reflected):
        area, _ = reflected
        assert len(area.networks) == 3
        assert area.stats.cluster_networks == [1, 2]
        assert not area.stats.rolled_back

    def test_clusters_follow_the_sign_of_x(self, reflected):
        area, dataset = reflected
        ids = area.route(dataset.inputs)
        negative = dataset.inputs[:, 0] < 0
        left = np.bincount(ids[negative]).argmax()
        right = np.bincount(ids[~negative]).argmax()
        assert {left, right} == {1, 2}
        agree = np.sum(ids[negative] == left) + np.sum(ids[~negative] == right)
        assert agree >= 0.95 * len(dataset)

    def test_halves_route_to_different_specialists(self, reflected):
        area, _ = reflected
        ids = area.route(np.array([[-0.5], [0.5]]))
        assert ids[0] != ids[1]
        assert 0 not in ids

    def test_loss_drops(self, reflected):
        area, dataset = reflected
        assert area.stats.loss_after < area.stats.loss_before
        assert cortex.area_loss(area, dataset) < cortex.area_loss(area.without_reflection(), dataset)


class TestLearn:

    def test_one_area_per_sense_key(self, learned, step_dataset):
        assert list(learned.areas) == [step_dataset.sense_key]
        area = learned.areas[step_dataset.sense_key]
        assert area.stats.correct_count + area.stats.wrong_count == len(step_dataset)
        assert area.stats.t >= 1.0 or area.stats.wrong_count == 0

    def test_never_worse_than_the_general_network(self, learned, step_dataset):
        area = learned.areas[step_dataset.sense_key]
        baseline = cortex.area_loss(area.without_reflection(), step_dataset)
        assert cortex.area_loss(area, step_dataset) <= baseline

    def test_every_specialist_joins_the_area(self, learned, step_dataset):
        area = learned.areas[step_dataset.sense_key]
        assert len(area.networks) == 1 + FAST_REFLECTION.k
        assert learned.network_count() == 3
        assert all(n == -1 or n in (1, 2) for n in area.stats.cluster_networks)

    def test_deterministic(self, learned, step_dataset, small_regressor):
        again = cortex.learn(step_dataset.pairs(), {step_dataset.sense_key: small_regressor},
                             FAST_TRAIN, FAST_REFLECTION)
        first, second = learned.areas[step_dataset.sense_key], again.areas[step_dataset.sense_key]
        assert len(first.networks) == len(second.networks)
        for a, b in zip(first.networks, second.networks):
            np.testing.assert_array_equal(a.params, b.params)
        assert first.classifier == second.classifier

    def test_reflection_disabled(self, step_dataset, small_regressor):
        params = dataclasses.replace(FAST_REFLECTION, k=0)
        model = cortex.learn(step_dataset.pairs(), {step_dataset.sense_key: small_regressor}, FAST_TRAIN, params)
        area = model.areas[step_dataset.sense_key]
        assert len(area.networks) == 1
        assert area.stats.skipped == "reflection disabled"

    def test_missing_network_config(self, step_dataset):
        with pytest.raises(cortex.CortexError, match="no network config"):
            cortex.learn(step_dataset.pairs(), {}, FAST_TRAIN, FAST_REFLECTION)

    def test_config_must_match_the_key(self, step_dataset):
        config = nets.mlp_regressor(input_size=2, hidden=(4,), output_size=1)
        with pytest.raises(cortex.CortexError, match="expects input"):
            cortex.learn(step_dataset.pairs(), {step_dataset.sense_key: config}, FAST_TRAIN, FAST_REFLECTION)


class TestPredict:

    def test_output_shape_and_provenance(self, learned):
        routing = cortex.predict_with_provenance(learned, np.array([0.3]), (1,))
        assert routing.output.shape == (1,)
        assert routing.key == cortex.SenseKey(Shape.of(1), Shape.of(1))
        area = learned.areas[routing.key]
        np.testing.assert_array_equal(routing.output, nets.forward(area.network(routing.network_id), np.array([0.3])))

    def test_outputs_are_read_only(self, learned):
        output = cortex.predict(learned, np.array([0.3]), Shape.of(1))
        with pytest.raises(ValueError):
            output[0] = 1.0

    def test_unknown_shapes(self, learned):
        with pytest.raises(cortex.RoutingError, match="no association area"):
            cortex.predict(learned, np.zeros((2, 2)), (1,))

    def test_routing_agrees_with_the_classifier(self, learned, step_dataset):
        area = learned.areas[step_dataset.sense_key]
        for x in step_dataset.inputs[::7]:
            expected = 0 if area.classifier is None else tree.classify(area.classifier, x)
            assert cortex.predict_with_provenance(learned, x, (1,)).network_id == expected


class TestEvaluate:

    def test_metrics_match_the_losses(self, learned, step_dataset):
        (metrics,) = cortex.evaluate(learned, {step_dataset.sense_key: step_dataset})
        area = learned.areas[step_dataset.sense_key]
        assert metrics.samples == len(step_dataset)
        assert metrics.loss == pytest.approx(cortex.area_loss(area, step_dataset))
        assert metrics.baseline_loss == pytest.approx(cortex.area_loss(area.without_reflection(), step_dataset))
        assert metrics.loss_reduction_pct >= -1e-9
        assert sum(metrics.routing.values()) == len(step_dataset)
        assert 0.0 <= metrics.accuracy <= 1.0

    def test_record_is_flat(self, learned, step_dataset):
        (metrics,) = cortex.evaluate(learned, {step_dataset.sense_key: step_dataset})
        record = metrics.to_record()
        assert record["key"] == "1->1"
        assert record["routing"].startswith("0:")

    def test_classification_accuracy(self):
        config = nets.cnn_classifier((8, 8, 1), classes=3, conv_channels=(2,), kernel_size=3, hidden=(4,))
        net = nets.init_network(config, seed=0)
        images = rng(0, "images").random((6, 8, 8, 1))
        probabilities = nets.predict_batch(net, images)
        dataset = cortex.LabeledDataset(inputs=images, targets=np.eye(3)[probabilities.argmax(axis=1)],
                                        kind=cortex.CLASSIFICATION)
        area = cortex.AssociationArea(key=dataset.sense_key, kind=cortex.CLASSIFICATION, networks=[net])
        (metrics,) = cortex.evaluate(cortex.CortexModel(areas={area.key: area}), {area.key: dataset})
        assert metrics.accuracy == 1.0
        assert metrics.loss_reduction_pct == 0.0
