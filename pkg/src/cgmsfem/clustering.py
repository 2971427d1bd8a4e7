"""Coarsening of the realization set, one partition per neighborhood.

The reduced local solution coefficients of each realization form a feature
vector whose Euclidean distance is exactly the local solution-space distance;
k-means (k-means++ seeding, Lloyd iterations, multiple restarts) groups the
realizations, and each cluster is represented by the arithmetic mean of its
member coefficient fields.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._util import STREAM_KMEANS, substream
from .grid import Neighborhood
from .localreduce import ReducedCoefficients


@dataclass(eq=False)
class FeatureTable:
    """Per-realization feature rows; row distances realize the local metric."""

    neighborhood_id: int
    rows: np.ndarray  # (M, k*L)


def build_features(reduced: ReducedCoefficients) -> FeatureTable:
    """Flatten reduced coefficients so row distances equal the local distance.

    d(omega_n, omega_m) = sqrt(sum_{j,l} (p[n,j,l] - p[m,j,l])^2) is the
    Euclidean distance between rows n and m by construction.
    """
    M = reduced.coeffs.shape[0]
    return FeatureTable(reduced.neighborhood_id, reduced.coeffs.reshape(M, -1).copy())


def distance_matrix(features: FeatureTable) -> np.ndarray:
    """All pairwise distances (for inspection and tests)."""
    return cdist(features.rows, features.rows)


@dataclass(eq=False)
class KMeansResult:
    labels: np.ndarray  # (M,)
    centers: np.ndarray  # (J, d)
    objective: float  # within-cluster sum of squared distances
    n_iter: int
    objective_trace: tuple  # objective after each Lloyd update
    J: int  # actual cluster count (may be reduced)


def _kmeanspp_init(rows, J, rng):
    n = rows.shape[0]
    centers = np.empty((J, rows.shape[1]))
    centers[0] = rows[rng.integers(n)]
    d2 = cdist(rows, centers[:1], "sqeuclidean")[:, 0]
    for j in range(1, J):
        total = d2.sum()
        if total <= 0.0:
            centers[j] = rows[rng.integers(n)]
            continue
        r = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), r))
        centers[j] = rows[min(idx, n - 1)]
        d2 = np.minimum(d2, cdist(rows, centers[j : j + 1], "sqeuclidean")[:, 0])
    return centers


def _lloyd(rows, J, rng, max_iter):
    centers = _kmeanspp_init(rows, J, rng)
    labels = np.full(rows.shape[0], -1)
    trace = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = cdist(rows, centers, "sqeuclidean")
        new_labels = np.argmin(d2, axis=1)
        # repair empty clusters by reseeding at the point farthest from its center
        for j in range(J):
            if not np.any(new_labels == j):
                far = int(np.argmax(d2[np.arange(len(rows)), new_labels]))
                centers[j] = rows[far]
                d2[:, j] = cdist(rows, centers[j : j + 1], "sqeuclidean")[:, 0]
                new_labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(len(rows)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(J):
            centers[j] = rows[labels == j].mean(axis=0)
    return KMeansResult(labels, centers, trace[-1], n_iter, tuple(trace), J)


def kmeans(
    rows: np.ndarray,
    J: int,
    seed: int = 0,
    max_iter: int = 100,
    restarts: int = 10,
) -> KMeansResult:
    """Deterministic k-means with k-means++ seeding and restarts.

    Keeps the restart with the smallest within-cluster sum of squares.  If J
    exceeds the number of distinct rows it is reduced to that count with a
    warning (duplicate centers cannot be separated).
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2:
        raise ValueError("feature rows must form a 2-D array")
    if not 1 <= J <= rows.shape[0]:
        raise ValueError(f"need 1 <= J <= {rows.shape[0]}, got {J}")
    distinct = np.unique(rows, axis=0).shape[0]
    if J > distinct:
        warnings.warn(
            f"J={J} exceeds the {distinct} distinct feature rows; reducing",
            stacklevel=2,
        )
        J = distinct
    if J == 1:
        center = rows.mean(axis=0, keepdims=True)
        obj = float(cdist(rows, center, "sqeuclidean").sum())
        return KMeansResult(np.zeros(rows.shape[0], dtype=int), center, obj, 0, (obj,), 1)
    best = None
    for r in range(restarts):
        res = _lloyd(rows, J, substream(seed, STREAM_KMEANS, r), max_iter)
        if best is None or res.objective < best.objective:
            best = res
    return best


def cluster_mean_field(ensemble, labels, region, n_clusters: int) -> np.ndarray:
    """Arithmetic mean of the member coefficient fields per cluster, on region.

    Member realizations are averaged unweighted (the ensemble measure plays
    no role in forming the representative field).
    """
    labels = np.asarray(labels)
    cells = region.cell_ids
    out = np.empty((n_clusters, len(cells)))
    for j in range(n_clusters):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            raise ValueError(f"cluster {j} is empty")
        out[j] = ensemble.values[np.ix_(members, cells)].mean(axis=0)
    return out


@dataclass(eq=False)
class ClusterPartition:
    """Realization clusters of one neighborhood with their mean fields."""

    neighborhood_id: int
    n_clusters: int
    labels: np.ndarray  # (M,) values in 0..n_clusters-1
    members: tuple  # tuple of index arrays
    mean_fields: np.ndarray  # (J, n_region_cells)
    weight_mass: np.ndarray  # (J,) summed ensemble weights


def partition_realizations(
    nb: Neighborhood, ensemble, labels, n_clusters: int
) -> ClusterPartition:
    """Assemble the full partition record from k-means labels."""
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (ensemble.M,):
        raise ValueError("labels must assign every realization")
    members = tuple(np.flatnonzero(labels == j) for j in range(n_clusters))
    if any(m.size == 0 for m in members):
        raise ValueError("every cluster must be nonempty")
    means = cluster_mean_field(ensemble, labels, nb.region, n_clusters)
    mass = np.array([ensemble.weights[m].sum() for m in members])
    return ClusterPartition(nb.node_id, n_clusters, labels, members, means, mass)
