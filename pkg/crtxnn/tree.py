"""
The task classifier: a binary threshold decision tree grown greedily on gain ratio.
It maps an input vector to the id of the network in its area that should predict it.
"""
import collections
import dataclasses
import typing

import numpy as np
from prefect.utilities.logging import get_logger

logger = get_logger("crtxnn.tree")

TIE_TOLERANCE = 1e-12
MIN_GAIN = 1e-12


class TreeError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Leaf:
    network_id: int


@dataclasses.dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = typing.Union[Leaf, Split]


@dataclasses.dataclass
class TaskClassifier:
    root: TreeNode
    input_length: int
    max_depth: int = 12
    min_samples_leaf: int = 5

    def node_count(self) -> int:
        return sum(1 for _ in _walk(self.root))

    def leaf_ids(self) -> typing.Set[int]:
        return {node.network_id for node in _walk(self.root) if isinstance(node, Leaf)}


def _walk(node: TreeNode):
    stack = [node]
    while stack:
        current = stack.pop()
        yield current
        if isinstance(current, Split):
            stack.extend([current.right, current.left])


# Information measures ########################################################

def _entropy_from_counts(counts: np.ndarray) -> float:
    counts = counts[counts > 0]
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def entropy(labels: typing.Sequence[int]) -> float:
    """Shannon entropy of ``labels`` in bits."""
    if len(labels) == 0:
        raise TreeError("entropy of an empty label list")
    _, counts = np.unique(np.asarray(labels), return_counts=True)
    return _entropy_from_counts(counts.astype(np.float64))


def gain_ratio(parent: typing.Sequence[int], parts: typing.Sequence[typing.Sequence[int]]) -> float:
    """
    Information gain of splitting ``parent`` into ``parts``, divided by the split's
    intrinsic information.

    Raises
    ------
    TreeError
        If ``parts`` is not a disjoint cover of ``parent`` or has fewer than two
        non-empty parts.
    """
    if collections.Counter(parent) != collections.Counter(label for part in parts for label in part):
        raise TreeError("partition is not a cover of the parent labels")
    non_empty = [part for part in parts if len(part) > 0]
    if len(non_empty) < 2:
        raise TreeError("a split needs at least two non-empty parts")
    n = float(len(parent))
    weights = np.array([len(part) / n for part in non_empty])
    gain = entropy(parent) - sum(w * entropy(part) for w, part in zip(weights, non_empty))
    split_info = float(-(weights * np.log2(weights)).sum())
    return max(gain, 0.0) / split_info


def _entropy_rows(counts: np.ndarray, totals: np.ndarray) -> np.ndarray:
    p = counts / totals[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        X = X.reshape(len(X), -1)
    return X


def best_split(
        X: typing.Sequence,
        Y: typing.Sequence[int],
        min_samples_leaf: int = 1
) -> typing.Optional[typing.Tuple[int, float]]:
    """
    The (feature, threshold) with the highest gain ratio among midpoints between
    consecutive distinct sorted values of each feature.

    Ties (within ``TIE_TOLERANCE``) go to the lowest feature index, then the smallest
    threshold. Returns ``None`` when no candidate has positive information gain.
    """
    X = _as_matrix(X)
    Y = np.asarray(Y)
    if len(X) != len(Y):
        raise TreeError(f"length mismatch: {len(X)} inputs, {len(Y)} labels")
    n = len(Y)
    if n < 2:
        return None
    classes, label_index = np.unique(Y, return_inverse=True)
    if len(classes) < 2:
        return None
    one_hot = np.eye(len(classes))[label_index]
    totals = one_hot.sum(axis=0)
    parent_entropy = _entropy_from_counts(totals)
    n_left_all = np.arange(1, n, dtype=np.float64)

    best = None
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind="mergesort")
        values = X[order, feature]
        valid = (values[1:] != values[:-1]) \
            & (n_left_all >= min_samples_leaf) & (n - n_left_all >= min_samples_leaf)
        if not valid.any():
            continue
        left_counts = np.cumsum(one_hot[order], axis=0)[:-1][valid]
        right_counts = totals - left_counts
        n_left = n_left_all[valid]
        n_right = n - n_left
        gain = parent_entropy \
            - (n_left / n) * _entropy_rows(left_counts, n_left) \
            - (n_right / n) * _entropy_rows(right_counts, n_right)
        positive = gain > MIN_GAIN
        if not positive.any():
            continue
        p_left, p_right = n_left / n, n_right / n
        split_info = -(p_left * np.log2(p_left) + p_right * np.log2(p_right))
        ratio = np.where(positive, gain / split_info, -np.inf)
        top = ratio.max()
        candidate = int(np.flatnonzero(ratio >= top - TIE_TOLERANCE)[0])
        lower, upper = values[:-1][valid][candidate], values[1:][valid][candidate]
        threshold = (lower + upper) / 2.0
        if threshold <= lower:
            threshold = upper
        if best is None or top > best[0] + TIE_TOLERANCE:
            best = (top, feature, float(threshold))
    if best is None:
        return None
    return best[1], best[2]


# Fitting and routing #########################################################

def _majority(Y: np.ndarray) -> int:
    ids, counts = np.unique(Y, return_counts=True)
    return int(ids[np.argmax(counts)])


def fit(
        X: typing.Sequence,
        Y: typing.Sequence[int],
        max_depth: int = 12,
        min_samples_leaf: int = 5
) -> TaskClassifier:
    """
    Grow a tree greedily. A node becomes a leaf (labelled with its majority id,
    smallest id on ties) when it is pure, at ``max_depth``, smaller than
    ``2 * min_samples_leaf``, or has no split with positive information gain.
    """
    X = _as_matrix(X)
    Y = np.asarray(Y, dtype=np.int64)
    if len(Y) == 0:
        raise TreeError("cannot fit a task classifier on empty data")
    if len(X) != len(Y):
        raise TreeError(f"length mismatch: {len(X)} inputs, {len(Y)} labels")

    def grow(rows: np.ndarray, depth: int) -> TreeNode:
        labels = Y[rows]
        if len(np.unique(labels)) == 1 or depth >= max_depth or len(rows) < 2 * min_samples_leaf:
            return Leaf(_majority(labels))
        split = best_split(X[rows], labels, min_samples_leaf=min_samples_leaf)
        if split is None:
            return Leaf(_majority(labels))
        feature, threshold = split
        goes_left = X[rows, feature] < threshold
        return Split(
            feature=feature,
            threshold=threshold,
            left=grow(rows[goes_left], depth + 1),
            right=grow(rows[~goes_left], depth + 1),
        )

    classifier = TaskClassifier(
        root=grow(np.arange(len(Y)), 0),
        input_length=X.shape[1],
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
    )
    logger.debug("task classifier fitted: %d nodes over %d samples", classifier.node_count(), len(Y))
    return classifier


def classify(tc: TaskClassifier, x: typing.Sequence[float]) -> int:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != tc.input_length:
        raise TreeError(f"length mismatch: classifier expects {tc.input_length} features, got {x.shape[0]}")
    node = tc.root
    while isinstance(node, Split):
        node = node.left if x[node.feature] < node.threshold else node.right
    return node.network_id


def classify_many(tc: TaskClassifier, X: typing.Sequence) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != tc.input_length:
        raise TreeError(f"length mismatch: classifier expects {tc.input_length} features, got {X.shape[1]}")
    ids = np.empty(len(X), dtype=np.int64)
    stack = [(tc.root, np.arange(len(X)))]
    while stack:
        node, rows = stack.pop()
        if isinstance(node, Leaf):
            ids[rows] = node.network_id
            continue
        goes_left = X[rows, node.feature] < node.threshold
        stack.append((node.left, rows[goes_left]))
        stack.append((node.right, rows[~goes_left]))
    return ids


# Feature hooks ###############################################################

def flatten_features(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(len(X), -1)


def block_mean_features(X: np.ndarray, block: int = 4) -> np.ndarray:
    """Mean of each non-overlapping ``block``x``block`` patch per channel of HWC images."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4:
        return flatten_features(X)
    n, height, width, channels = X.shape
    height, width = height - height % block, width - width % block
    patches = X[:, :height, :width, :].reshape(n, height // block, block, width // block, block, channels)
    return patches.mean(axis=(2, 4)).reshape(n, -1)


TREE_FEATURES = {
    "flatten": flatten_features,
    "block-mean": block_mean_features,
}


# Array form ##################################################################

def to_arrays(tc: TaskClassifier) -> typing.Dict[str, np.ndarray]:
    """Pre-order arrays; ``feature == -1`` marks a leaf whose id is in ``value``."""
    nodes = list(_walk(tc.root))
    position = {id(node): i for i, node in enumerate(nodes)}
    feature = np.full(len(nodes), -1, dtype=np.int64)
    threshold = np.zeros(len(nodes))
    left = np.full(len(nodes), -1, dtype=np.int64)
    right = np.full(len(nodes), -1, dtype=np.int64)
    value = np.full(len(nodes), -1, dtype=np.int64)
    for i, node in enumerate(nodes):
        if isinstance(node, Leaf):
            value[i] = node.network_id
        else:
            feature[i], threshold[i] = node.feature, node.threshold
            left[i], right[i] = position[id(node.left)], position[id(node.right)]
    return {
        "feature": feature, "threshold": threshold, "left": left, "right": right, "value": value,
        "params": np.array([tc.input_length, tc.max_depth, tc.min_samples_leaf], dtype=np.int64),
    }


def from_arrays(arrays: typing.Mapping[str, np.ndarray]) -> TaskClassifier:
    feature, threshold = arrays["feature"], arrays["threshold"]
    left, right, value = arrays["left"], arrays["right"], arrays["value"]

    def build(i: int, depth: int) -> TreeNode:
        if depth > len(feature):
            raise TreeError("serialized tree contains a cycle")
        if feature[i] < 0:
            return Leaf(int(value[i]))
        return Split(int(feature[i]), float(threshold[i]), build(int(left[i]), depth + 1), build(int(right[i]), depth + 1))

    input_length, max_depth, min_samples_leaf = (int(v) for v in arrays["params"])
    return TaskClassifier(root=build(0, 0), input_length=input_length,
                          max_depth=max_depth, min_samples_leaf=min_samples_leaf)
