"""k-means subdivision of the C' super-class and cluster-to-class matching."""
import logging

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from s2osc.errors import InfeasibleError, PreconditionError
from s2osc.models.cluster_assignment import ClusterAssignment
from s2osc.models.example import sort_labels

logger = logging.getLogger(__name__)


def kmeans_plusplus_init(X, k, rng):
    """D^2-weighted seeding"""
    n_samples = X.shape[0]
    chosen = [int(rng.integers(0, n_samples))]
    dist_sq = cdist(X, X[chosen], metric='sqeuclidean').min(axis=1)
    for _ in range(1, k):
        total = dist_sq.sum()
        if total > 0:
            next_idx = int(rng.choice(n_samples, p=dist_sq / total))
        else:
            # every point coincides with a chosen center
            free = np.setdiff1d(np.arange(n_samples), chosen)
            next_idx = int(rng.choice(free))
        chosen.append(next_idx)
        dist_sq = np.minimum(dist_sq, cdist(X, X[[next_idx]], metric='sqeuclidean')[:, 0])
    return X[chosen].copy()


def within_cluster_ss(X, labels, centroids):
    return float(((X - centroids[labels]) ** 2).sum())


def _lloyd(X, B, rng, max_iter, tol):
    centroids = kmeans_plusplus_init(X, B, rng)
    labels = cdist(X, centroids, metric='sqeuclidean').argmin(axis=1)
    history = [within_cluster_ss(X, labels, centroids)]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        for j in range(B):
            members = labels == j
            if members.any():
                new_centroids[j] = X[members].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum()))
        centroids = new_centroids
        labels = cdist(X, centroids, metric='sqeuclidean').argmin(axis=1)
        history.append(within_cluster_ss(X, labels, centroids))
        if shift < tol:
            break
    return labels, centroids, iterations, history


def kmeans(embeddings, B, seed, max_iter=100, tol=1e-6, instance_ids=None, n_init=10):
    """Lloyd's algorithm with k-means++ seeding; the restart with the lowest WCSS wins"""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise PreconditionError("embeddings must be an N x d matrix")
    if B < 1:
        raise PreconditionError(f"B must be at least 1, got {B}")
    if n_init < 1:
        raise PreconditionError(f"n_init must be at least 1, got {n_init}")
    if X.shape[0] < B:
        raise InfeasibleError(f"cannot form {B} clusters from {X.shape[0]} points")

    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        run = _lloyd(X, B, np.random.default_rng(child), max_iter, tol)
        if best is None or run[3][-1] < best[3][-1]:
            best = run
    labels, centroids, iterations, history = best
    logger.debug("kmeans: B=%d, %d restarts, %d iterations, WCSS %s", B, n_init, iterations, history[-1])
    return ClusterAssignment(labels, centroids, iterations, instance_ids, history)


def contingency_table(assignment, truth):
    """(clusters x classes) counts and the class order used for columns"""
    missing = [i for i in assignment.instance_ids if i not in truth]
    if missing:
        raise PreconditionError(f"truth does not cover {len(missing)} clustered instances")
    classes = sort_labels({truth[i] for i in assignment.instance_ids})
    column = {c: k for k, c in enumerate(classes)}
    table = np.zeros((assignment.n_clusters, len(classes)), dtype=np.int64)
    for i, cluster in zip(assignment.instance_ids, assignment.labels):
        table[cluster, column[truth[i]]] += 1
    return table, classes


def match_clusters(assignment, truth):
    """Hungarian matching maximizing matched counts; unmatched clusters map to None"""
    table, classes = contingency_table(assignment, truth)
    mapping = {j: None for j in range(assignment.n_clusters)}
    if table.size == 0:
        return mapping
    rows, cols = linear_sum_assignment(table, maximize=True)
    for r, c in zip(rows, cols):
        mapping[int(r)] = classes[c]
    return mapping


def matched_count(assignment, truth, mapping):
    return sum(1 for i, c in zip(assignment.instance_ids, assignment.labels)
               if mapping.get(int(c)) is not None and mapping[int(c)] == truth[i])
