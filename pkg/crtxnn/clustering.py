"""
K-means over the wrong-prediction set. Points are the (flattened) inputs of the
samples the general network got wrong; the resulting clusters each get a specialist.
"""
import dataclasses
import typing

import numpy as np
from prefect.utilities.logging import get_logger

from crtxnn.seeding import rng

logger = get_logger("crtxnn.clustering")


class ClusteringError(ValueError):
    pass


@dataclasses.dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    objective: float


def _as_points(points) -> np.ndarray:
    try:
        array = np.array(points, dtype=np.float64)
    except ValueError:
        raise ClusteringError("inconsistent vector lengths")
    if array.dtype == object:
        raise ClusteringError("inconsistent vector lengths")
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ClusteringError(f"points must be a list of vectors, got an array of shape {array.shape}")
    return array


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)


def _objective(points: np.ndarray, centroids: np.ndarray, assignments: np.ndarray) -> float:
    return float(((points - centroids[assignments]) ** 2).sum())


def _plus_plus_init(points: np.ndarray, k: int, generator: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(generator.integers(n))]
    for _ in range(1, k):
        nearest = _squared_distances(points, points[chosen]).min(axis=1)
        total = nearest.sum()
        if total == 0:
            remaining = [i for i in range(n) if i not in chosen]
            chosen.append(int(generator.choice(remaining)))
        else:
            chosen.append(int(generator.choice(n, p=nearest / total)))
    return points[chosen].copy()


def _repair_empty(points: np.ndarray, centroids: np.ndarray, assignments: np.ndarray, k: int) -> None:
    # Move the point farthest from its centroid into each empty cluster.
    for cluster in range(k):
        if np.any(assignments == cluster):
            continue
        distance = ((points - centroids[assignments]) ** 2).sum(axis=1)
        counts = np.bincount(assignments, minlength=k)
        distance[counts[assignments] <= 1] = -1.0
        farthest = int(np.argmax(distance))
        assignments[farthest] = cluster
        centroids[cluster] = points[farthest]


def _lloyd(points: np.ndarray, centroids: np.ndarray, k: int, max_iter: int) -> ClusterModel:
    assignments = np.argmin(_squared_distances(points, centroids), axis=1)
    _repair_empty(points, centroids, assignments, k)
    objective = _objective(points, centroids, assignments)
    for iteration in range(max_iter):
        for cluster in range(k):
            centroids[cluster] = points[assignments == cluster].mean(axis=0)
        updated = _objective(points, centroids, assignments)
        assert updated <= objective + 1e-9 * max(1.0, objective), "k-means objective increased on update"
        objective = updated

        new_assignments = np.argmin(_squared_distances(points, centroids), axis=1)
        _repair_empty(points, centroids, new_assignments, k)
        updated = _objective(points, centroids, new_assignments)
        assert updated <= objective + 1e-9 * max(1.0, objective), "k-means objective increased on assignment"
        objective = updated
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    else:
        logger.debug("k-means stopped at max_iter=%d before assignments settled", max_iter)
    for cluster in range(k):
        centroids[cluster] = points[assignments == cluster].mean(axis=0)
    return ClusterModel(k=k, centroids=centroids, assignments=assignments,
                        objective=_objective(points, centroids, assignments))


def kmeans(
        points: typing.Sequence,
        k: int,
        max_iter: int = 100,
        seed: int = 0,
        n_init: int = 5
) -> ClusterModel:
    """
    Lloyd's algorithm with k-means++ seeding, restarted ``n_init`` times; the restart
    with the lowest objective J wins (earliest restart on ties).

    Parameters
    ----------
    points : sequence of vectors
        All of the same length; scalars are treated as 1-D vectors.
    k : int
        Number of clusters, ``1 <= k <= len(points)``. No cluster is left empty.
    seed : int
        Seeds the k-means++ draws of every restart.

    Returns
    -------
    ClusterModel
    """
    points = _as_points(points)
    if k < 1:
        raise ClusteringError(f"k must be at least 1, got {k}")
    if k > len(points):
        raise ClusteringError(f"k={k} exceeds the number of points ({len(points)})")
    best = None
    for restart in range(max(1, n_init)):
        generator = rng(seed, "kmeans", restart)
        model = _lloyd(points, _plus_plus_init(points, k, generator), k, max_iter)
        if best is None or model.objective < best.objective:
            best = model
    logger.debug("k-means k=%d over %d points: J=%.6g", k, len(points), best.objective)
    return best


def assign(model: ClusterModel, x: typing.Sequence[float]) -> int:
    """Index of the nearest centroid; ties go to the lowest index."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.shape[0] != model.centroids.shape[1]:
        raise ClusteringError(f"length mismatch: point has {x.shape[0]} values, centroids have {model.centroids.shape[1]}")
    return int(np.argmin(((model.centroids - x) ** 2).sum(axis=1)))
