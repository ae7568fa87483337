"""Spectral clustering of anime embeddings and logically opposite clusters.

The affinity graph connects each title to its nearest neighbours in embedding
space. Clustering happens in the eigenspace of the symmetric normalized
Laplacian, with the cluster count picked by the eigengap ranked against a
minimum-cluster-size constraint. The "logically opposite" search scores every
other title by how well it mirrors a query title through the catalog centroid
(a distance-ratio term plus a direction term) and takes the minimum.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .embedding import EmbeddingSet

log = logging.getLogger(__name__)

# graphs up to this many nodes use the dense symmetric eigensolver; larger
# ones switch to Lanczos iteration for just the eigenpairs needed
DENSE_EIGH_MAX = 3000

DIV_GUARD = 1e-9


class SpectralError(Exception):
    pass


@dataclass
class AffinityGraph:
    anime_ids: list[int]
    adjacency: np.ndarray   # symmetric, zero diagonal, weights in {0,1}
    k_neighbors: int

    @property
    def n(self) -> int:
        return len(self.anime_ids)


@dataclass
class ClusterModel:
    assignment: dict[int, int]
    k: int
    min_cluster_size: int
    centroid: np.ndarray
    opposite: dict[int, int]
    seed: int


def knn_affinity(embeddings: EmbeddingSet, k_neighbors: int) -> AffinityGraph:
    """Union-symmetrized k-nearest-neighbour graph with unit weights.

    Neighbours by Euclidean distance; equidistant candidates resolve to the
    lower anime_id so graph construction is reproducible.
    """
    ids = embeddings.ordered_ids()
    n = len(ids)
    if not (1 <= k_neighbors < n):
        raise SpectralError(
            f"k_neighbors must be in [1, {n - 1}], got {k_neighbors}")
    X = embeddings.as_array()
    sq = (X ** 2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d2, np.inf)
    adjacency = np.zeros((n, n))
    order_key = np.arange(n)   # rows are already in ascending-id order
    for i in range(n):
        # stable sort on (distance, id) gives the deterministic tie-break
        nearest = np.lexsort((order_key, d2[i]))[:k_neighbors]
        adjacency[i, nearest] = 1.0
    adjacency = np.maximum(adjacency, adjacency.T)
    np.fill_diagonal(adjacency, 0.0)
    return AffinityGraph(ids, adjacency, k_neighbors)


def _laplacian_sym(adjacency: np.ndarray) -> np.ndarray:
    degrees = adjacency.sum(axis=1)
    if np.any(degrees <= 0):
        raise SpectralError("graph has an isolated node")
    inv_sqrt = 1.0 / np.sqrt(degrees)
    lap = -adjacency * inv_sqrt[:, None] * inv_sqrt[None, :]
    np.fill_diagonal(lap, 1.0)
    return (lap + lap.T) / 2.0


def smallest_eigenpairs(lap: np.ndarray, m: int):
    """The m smallest eigenvalues/vectors of a symmetric matrix.

    Dense solve below DENSE_EIGH_MAX nodes, Lanczos above it.
    """
    n = lap.shape[0]
    if n <= DENSE_EIGH_MAX or m >= n:
        w, v = np.linalg.eigh(lap)
        return w[:m], v[:, :m]
    try:
        w, v = scipy.sparse.linalg.eigsh(lap, k=m, which="SA")
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise SpectralError(
            f"eigensolver did not converge ({len(exc.eigenvalues)} of {m} "
            "eigenpairs found)") from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def _kmeans(points: np.ndarray, k: int, seed: int, n_iter: int = 300):
    """Seeded k-means with k-means++ init. Every cluster ends non-empty."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest_sq = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = closest_sq.sum()
        if total <= 0:
            idx = int(rng.integers(n))   # duplicated points
        else:
            idx = int(rng.choice(n, p=closest_sq / total))
        centers[j] = points[idx]
        closest_sq = np.minimum(
            closest_sq, ((points - centers[j]) ** 2).sum(axis=1))
    assign = None
    for _ in range(n_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                # hand the emptied cluster the worst-fit point
                far = int(d2[np.arange(n), new_assign].argmax())
                new_assign[far] = c
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for c in range(k):
            members = points[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


def spectral_cluster(graph: AffinityGraph, k: int,
                     seed: int) -> dict[int, int]:
    """Cluster in the row-normalized space of the k smallest eigenvectors."""
    if k < 2:
        raise SpectralError("k must be at least 2")
    if k > graph.n:
        raise SpectralError("more clusters than nodes")
    lap = _laplacian_sym(graph.adjacency)
    _, vectors = smallest_eigenpairs(lap, k)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    spectral_coords = np.divide(vectors, norms,
                                out=vectors.copy(), where=norms > 0)
    assign = _kmeans(spectral_coords, k, seed)
    return {a: int(assign[i]) for i, a in enumerate(graph.anime_ids)}


def cluster_sizes(assignment: dict[int, int]) -> dict[int, int]:
    sizes: dict[int, int] = {}
    for c in assignment.values():
        sizes[c] = sizes.get(c, 0) + 1
    return sizes


def optimal_k_candidates(graph: AffinityGraph, min_cluster_size: int,
                         k_max: int, seed: int = 0):
    """Eigengap-ranked cluster counts that respect the size constraint.

    Ranks k = 2..k_max by the gap between consecutive Laplacian eigenvalues,
    test-clusters candidates in that order, drops any whose smallest cluster
    falls under min_cluster_size, and returns up to the top 3 survivors as
    (k, significance) pairs.
    """
    if not (2 <= k_max < graph.n):
        raise SpectralError("need 2 <= k_max < n")
    lap = _laplacian_sym(graph.adjacency)
    values, _ = smallest_eigenpairs(lap, k_max + 1)
    gaps = [(float(values[k] - values[k - 1]), k) for k in range(2, k_max + 1)]
    gaps.sort(key=lambda pair: (-pair[0], pair[1]))
    survivors = []
    for significance, k in gaps:
        assignment = spectral_cluster(graph, k, seed)
        if min(cluster_sizes(assignment).values()) >= min_cluster_size:
            survivors.append((k, significance))
            if len(survivors) == 3:
                break
    if not survivors:
        raise SpectralError(
            "no cluster count passed the size constraint; lower "
            f"min_cluster_size (currently {min_cluster_size})")
    return survivors


def _opposite_row(V: np.ndarray, norms: np.ndarray, i0: int):
    """Score every candidate against title i0 per the opposite-search rules.

    V holds centroid-relative vectors. The score of candidate i is
    d-metric + cosine-metric where d-metric = 1 - min(r, 1/r) with
    r = d_i / (d_0 + guard), and cosine-metric = cos(angle) + 1. A title
    sitting exactly on the centroid has no direction; if that title is the
    query the cosine term is dropped for everyone (d-metric-only ranking),
    and if it is a candidate its cosine falls back to neutral 0.
    """
    d0 = norms[i0]
    r = norms / (d0 + DIV_GUARD)
    with np.errstate(divide="ignore"):
        dmetric = 1.0 - np.minimum(r, np.divide(
            1.0, r, out=np.full_like(r, np.inf), where=r > 0))
    if d0 == 0.0:
        log.warning("query title sits on the catalog centroid; ranking by "
                    "distance metric only")
        return dmetric
    denom = norms * d0
    cos = np.divide(V @ V[i0], denom, out=np.zeros_like(denom),
                    where=denom > 0)
    return dmetric + (cos + 1.0)


def opposite_anime(embeddings: EmbeddingSet, a0: int) -> int:
    """The title that best mirrors a0 through the catalog centroid."""
    ids = embeddings.ordered_ids()
    if len(ids) < 2:
        raise SpectralError("opposite search needs at least 2 titles")
    if a0 not in embeddings.vectors:
        raise SpectralError(f"unknown anime_id {a0}")
    X = embeddings.as_array()
    V = X - X.mean(axis=0)
    norms = np.linalg.norm(V, axis=1)
    i0 = ids.index(a0)
    scores = _opposite_row(V, norms, i0)
    scores[i0] = np.inf
    # ids ascend with row index, so argmin's first-hit rule is the tie-break
    return ids[int(np.argmin(scores))]


def opposite_clusters_all(embeddings: EmbeddingSet,
                          model_or_assignment) -> dict[int, int]:
    """Every title's logically opposite cluster, precomputed eagerly."""
    assignment = getattr(model_or_assignment, "assignment",
                         model_or_assignment)
    ids = embeddings.ordered_ids()
    X = embeddings.as_array()
    V = X - X.mean(axis=0)
    norms = np.linalg.norm(V, axis=1)
    out = {}
    for i0, a0 in enumerate(ids):
        scores = _opposite_row(V, norms, i0)
        scores[i0] = np.inf
        out[a0] = assignment[ids[int(np.argmin(scores))]]
    return out


def cluster_catalog(embeddings: EmbeddingSet, k_neighbors: int = 10,
                    min_cluster_size: int = 4, k_max: int = 30,
                    seed: int = 0, forced_k: int | None = None):
    """Full clustering pass: affinity, k selection, assignment, opposites.

    Returns (ClusterModel, candidates) where candidates is the ranked
    (k, significance) list the winning k came from. A forced_k overrides
    the automatic choice (and tolerates an empty candidate list), the way
    a human would handpick the count from the candidate table.
    """
    graph = knn_affinity(embeddings, k_neighbors)
    if forced_k is None:
        candidates = optimal_k_candidates(graph, min_cluster_size, k_max,
                                          seed)
        k = candidates[0][0]
    else:
        try:
            candidates = optimal_k_candidates(graph, min_cluster_size,
                                              k_max, seed)
        except SpectralError:
            candidates = []
        k = forced_k
    assignment = spectral_cluster(graph, k, seed)
    opposite = opposite_clusters_all(embeddings, assignment)
    centroid = embeddings.as_array().mean(axis=0)
    model = ClusterModel(assignment, k, min_cluster_size, centroid,
                         opposite, seed)
    return model, candidates
