import numpy as np
import pytest

from crtxnn import tree
from crtxnn.seeding import rng


def _brute_force_split(X, Y):
    """Every (feature, midpoint) candidate, scored with the scalar measures."""
    best = None
    parent_entropy = tree.entropy(Y)
    for feature in range(X.shape[1]):
        values = np.unique(X[:, feature])
        for lower, upper in zip(values[:-1], values[1:]):
            threshold = (lower + upper) / 2.0
            left = [y for x, y in zip(X[:, feature], Y) if x < threshold]
            right = [y for x, y in zip(X[:, feature], Y) if x >= threshold]
            gain = parent_entropy - (len(left) * tree.entropy(left) + len(right) * tree.entropy(right)) / len(Y)
            if gain <= tree.MIN_GAIN:
                continue
            ratio = tree.gain_ratio(list(Y), [left, right])
            if best is None or ratio > best[0] + tree.TIE_TOLERANCE:
                best = (ratio, feature, threshold)
    return None if best is None else (best[1], best[2])


class TestEntropy:

    @pytest.mark.parametrize("labels, expected", [
        ([0, 0, 1, 1], 1.0),
        ([7, 7, 7], 0.0),
        ([0, 0, 0, 1], 0.811278),
    ])
    def test_values(self, labels, expected):
        assert tree.entropy(labels) == pytest.approx(expected, abs=1e-6)

    def test_empty(self):
        with pytest.raises(tree.TreeError):
            tree.entropy([])


class TestGainRatio:

    def test_perfect_split(self):
        assert tree.gain_ratio([0, 0, 1, 1], [[0, 0], [1, 1]]) == pytest.approx(1.0)

    def test_useless_split(self):
        assert tree.gain_ratio([0, 0, 1, 1], [[0, 1], [0, 1]]) == pytest.approx(0.0)

    def test_pure_parent(self):
        assert tree.gain_ratio([0, 0, 0, 0], [[0], [0, 0, 0]]) == 0.0

    def test_not_a_cover(self):
        with pytest.raises(tree.TreeError, match="cover"):
            tree.gain_ratio([0, 0, 1, 1], [[0, 0], [1]])

    def test_single_part(self):
        with pytest.raises(tree.TreeError):
            tree.gain_ratio([0, 1], [[0, 1], []])

    def test_binary_ratios_stay_in_unit_interval(self):
        generator = rng(0, "gain-ratio")
        for _ in range(200):
            labels = generator.integers(0, 2, size=int(generator.integers(2, 12))).tolist()
            cut = int(generator.integers(1, len(labels)))
            assert 0.0 <= tree.gain_ratio(labels, [labels[:cut], labels[cut:]]) <= 1.0 + 1e-12


class TestBestSplit:

    def test_four_points(self):
        assert tree.best_split([[0], [1], [2], [3]], [0, 0, 1, 1]) == (0, 1.5)

    def test_pure_labels(self):
        assert tree.best_split([[0], [1], [2]], [4, 4, 4]) is None

    def test_picks_the_separating_feature(self):
        X = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
        assert tree.best_split(X, [0, 1, 0, 1]) == (1, 0.5)

    def test_length_mismatch(self):
        with pytest.raises(tree.TreeError):
            tree.best_split([[0], [1]], [0])

    def test_equal_ratios_go_to_the_lowest_feature(self):
        X = [[0.0, 0.0], [1.0, 1.0]]
        assert tree.best_split(X, [0, 1]) == (0, 0.5)

    def test_matches_brute_force_on_small_binary_datasets(self):
        generator = rng(0, "best-split-oracle")
        for _ in range(600):
            n = int(generator.integers(2, 9))
            X = generator.integers(0, 4, size=(n, 1)).astype(float)
            Y = generator.integers(0, 2, size=n)
            assert tree.best_split(X, Y, min_samples_leaf=1) == _brute_force_split(X, Y)

    def test_matches_brute_force_on_two_features(self):
        generator = rng(1, "best-split-oracle")
        for _ in range(200):
            n = int(generator.integers(2, 9))
            X = generator.integers(0, 3, size=(n, 2)).astype(float)
            Y = generator.integers(0, 3, size=n)
            assert tree.best_split(X, Y, min_samples_leaf=1) == _brute_force_split(X, Y)


class TestFit:

    def test_identical_labels_give_a_single_leaf(self):
        classifier = tree.fit([[0.0], [1.0], [2.0]], [3, 3, 3])
        assert classifier.root == tree.Leaf(3)

    def test_sign_split_on_200_points(self):
        x = np.linspace(-1, 1, 200, endpoint=False)[:, None]
        y = (x[:, 0] >= 0).astype(int)
        classifier = tree.fit(x, y)
        assert classifier.node_count() <= 3
        np.testing.assert_array_equal(tree.classify_many(classifier, x), y)

    def test_xor_needs_two_levels(self):
        quadrants = [((-1.0, -1.0), 0, 10), ((-1.0, 1.0), 1, 10), ((1.0, -1.0), 1, 5), ((1.0, 1.0), 0, 20)]
        X = np.array([point for point, _, count in quadrants for _ in range(count)])
        Y = np.array([label for _, label, count in quadrants for _ in range(count)])
        classifier = tree.fit(X, Y, max_depth=2, min_samples_leaf=1)
        np.testing.assert_array_equal(tree.classify_many(classifier, X), Y)

    def test_consistent_data_is_fitted_exactly(self):
        generator = rng(2, "fit")
        X = generator.normal(size=(60, 3))
        Y = generator.integers(0, 3, size=60)
        classifier = tree.fit(X, Y, max_depth=60, min_samples_leaf=1)
        for x, y in zip(X, Y):
            assert tree.classify(classifier, x) == y

    def test_majority_ties_go_to_the_smallest_id(self):
        classifier = tree.fit([[0.0], [0.0]], [2, 1])
        assert classifier.root == tree.Leaf(1)

    def test_depth_limit(self):
        x = np.arange(16.0)[:, None]
        classifier = tree.fit(x, np.arange(16) % 2, max_depth=1, min_samples_leaf=1)
        assert classifier.node_count() <= 3

    def test_deterministic(self):
        generator = rng(3, "fit")
        X = generator.normal(size=(50, 2))
        Y = generator.integers(0, 2, size=50)
        assert tree.fit(X, Y) == tree.fit(X, Y)

    def test_empty(self):
        with pytest.raises(tree.TreeError):
            tree.fit(np.zeros((0, 1)), [])


class TestClassify:

    def test_single_leaf(self):
        classifier = tree.TaskClassifier(root=tree.Leaf(0), input_length=1)
        assert tree.classify(classifier, [42.0]) == 0

    def test_threshold_goes_right_when_equal_or_above(self):
        classifier = tree.TaskClassifier(root=tree.Split(0, 1.5, tree.Leaf(0), tree.Leaf(1)), input_length=1)
        assert tree.classify(classifier, [2.0]) == 1
        assert tree.classify(classifier, [1.5]) == 1
        assert tree.classify(classifier, [1.0]) == 0

    def test_length_mismatch(self):
        classifier = tree.TaskClassifier(root=tree.Leaf(0), input_length=2)
        with pytest.raises(tree.TreeError):
            tree.classify(classifier, [1.0])

    def test_classify_many_agrees_with_classify(self):
        generator = rng(4, "classify")
        X = generator.normal(size=(40, 2))
        classifier = tree.fit(X, (X[:, 0] * X[:, 1] > 0).astype(int), min_samples_leaf=1)
        np.testing.assert_array_equal(
            tree.classify_many(classifier, X),
            [tree.classify(classifier, x) for x in X],
        )


class TestArrays:

    def test_round_trip_preserves_routing(self):
        generator = rng(5, "arrays")
        X = generator.normal(size=(80, 2))
        classifier = tree.fit(X, (X[:, 0] > 0.3).astype(int) + (X[:, 1] > 0).astype(int), min_samples_leaf=2)
        restored = tree.from_arrays(tree.to_arrays(classifier))
        assert restored == classifier


class TestFeatures:

    def test_block_mean_of_images(self):
        images = np.arange(2 * 8 * 8 * 1, dtype=float).reshape(2, 8, 8, 1)
        features = tree.block_mean_features(images)
        assert features.shape == (2, 4)
        assert features[0, 0] == pytest.approx(images[0, :4, :4, 0].mean())

    def test_flatten(self):
        assert tree.flatten_features(np.zeros((3, 4, 4, 2))).shape == (3, 32)
