"""Neighbor graphs over the cloud: MST, adaptive thresholds, connectivity,
and k-means seeding of candidate part locations.

The distance scale of everything downstream comes from the minimum spanning
tree: each point's d_max (largest incident MST edge) yields a locally adaptive
threshold delta_cnct = 1.5 * d_max, which drives both the point connectivity
graph and the per-cluster plane band width.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, minimum_spanning_tree

from .cloud import PointCloud, SpatialIndex

CNCT_FACTOR = 1.5  # delta_cnct = 1.5 * d_max


@dataclass
class EdgeList:
    """Undirected weighted edges (u[i], v[i], length[i]); u < v everywhere."""

    u: np.ndarray
    v: np.ndarray
    length: np.ndarray
    n_points: int
    n_components: int = 1

    def __len__(self) -> int:
        return len(self.u)

    def __iter__(self):
        for a, b, w in zip(self.u.tolist(), self.v.tolist(), self.length.tolist()):
            yield a, b, w

    def total_length(self) -> float:
        return float(self.length.sum())


@dataclass
class AdaptiveThresholds:
    """Per-point d_max and the derived connectivity threshold."""

    d_max: np.ndarray
    delta_cnct: np.ndarray


@dataclass
class ConnectivityGraph:
    """Sparse undirected adjacency over point indices.

    neighbors[i] is a sorted array of the points j with
    dist(i, j) <= max(delta_cnct[i], delta_cnct[j]).
    """

    neighbors: list[np.ndarray]
    n_edges: int

    def __len__(self) -> int:
        return len(self.neighbors)

    def has_edge(self, i: int, j: int) -> bool:
        nbrs = self.neighbors[i]
        pos = int(np.searchsorted(nbrs, j))
        return pos < len(nbrs) and nbrs[pos] == j


@dataclass
class Clustering:
    """k-means partition plus per-cluster seed points and adjacency.

    seeds[c] is the member of cluster c closest to centers[c]; cluster a and b
    are adjacent when any member of a is connectivity-adjacent to a member
    of b.
    """

    labels: np.ndarray
    centers: np.ndarray
    seeds: np.ndarray
    cluster_neighbors: list[np.ndarray] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.centers)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.where(self.labels == cluster_id)[0]


# ---------------------------------------------------------------------------
# MST and thresholds
# ---------------------------------------------------------------------------

def build_mst(cloud: PointCloud, knn: int = 100) -> EdgeList:
    """Minimum spanning tree (or forest) of the k-nearest-neighbor graph.

    Args:
        cloud: at least 2 points.
        knn: neighbor count for the underlying graph; clipped to n - 1.

    Returns:
        EdgeList with n_components > 1 when the kNN graph is disconnected
        (the result is then a spanning forest).
    """
    n = len(cloud)
    if n < 2:
        raise ValueError("MST needs at least 2 points")
    k = min(knn, n - 1)
    index = SpatialIndex(cloud.positions)
    nbrs = index.k_nearest_all(k)
    rows = np.repeat(np.arange(n, dtype=np.intp), k)
    cols = nbrs.ravel()
    dists = np.linalg.norm(cloud.positions[rows] - cloud.positions[cols], axis=1)
    # coincident points produce zero-length edges; sparse storage drops
    # explicit zeros, so give them a negligible positive weight
    dists = np.maximum(dists, 1e-300)
    graph = coo_matrix((dists, (rows, cols)), shape=(n, n)).tocsr()
    n_comp, _ = connected_components(graph, directed=False)
    tree = coo_matrix(minimum_spanning_tree(graph))

    u = np.minimum(tree.row, tree.col).astype(np.intp)
    v = np.maximum(tree.row, tree.col).astype(np.intp)
    order = np.lexsort((v, u))
    u, v = u[order], v[order]
    length = np.linalg.norm(cloud.positions[u] - cloud.positions[v], axis=1)
    return EdgeList(u, v, length, n_points=n, n_components=int(n_comp))


def compute_thresholds(mst: EdgeList, n_points: int) -> AdaptiveThresholds:
    """d_max[i] = longest MST edge at point i; delta_cnct = 1.5 * d_max.

    Raises:
        ValueError: some index has no incident edge (tree does not cover it).
    """
    d_max = np.zeros(n_points, dtype=np.float64)
    touched = np.zeros(n_points, dtype=bool)
    np.maximum.at(d_max, mst.u, mst.length)
    np.maximum.at(d_max, mst.v, mst.length)
    touched[mst.u] = True
    touched[mst.v] = True
    if not touched.all():
        missing = int(np.where(~touched)[0][0])
        raise ValueError(f"point {missing} has no spanning-tree edge")
    return AdaptiveThresholds(d_max=d_max, delta_cnct=CNCT_FACTOR * d_max)


def build_connectivity(cloud: PointCloud, thr: AdaptiveThresholds) -> ConnectivityGraph:
    """Edges (i, j) with dist <= max(delta_cnct[i], delta_cnct[j]).

    A pair qualifies under the max rule exactly when at least one endpoint
    sees the other within its own threshold, so per-point radius queries at
    each point's own delta_cnct enumerate every edge without a global-radius
    blowup.
    """
    n = len(cloud)
    index = SpatialIndex(cloud.positions)
    balls = index.balls(thr.delta_cnct)
    adjacency: list[set[int]] = [set() for _ in range(n)]
    for i in range(n):
        for j in balls[i]:
            if j != i:
                adjacency[i].add(int(j))
                adjacency[j].add(int(i))
    neighbors = [np.asarray(sorted(a), dtype=np.intp) for a in adjacency]
    n_edges = sum(len(a) for a in neighbors) // 2
    return ConnectivityGraph(neighbors=neighbors, n_edges=n_edges)


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def _kmeans_pp_init(positions: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = len(positions)
    centers = np.empty((m, 3), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = positions[first]
    closest_sq = np.einsum("ij,ij->i", positions - centers[0], positions - centers[0])
    for c in range(1, m):
        total = closest_sq.sum()
        if total <= 0.0:
            # all remaining points coincide with a center; any choice works
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=closest_sq / total))
        centers[c] = positions[pick]
        diff = positions - centers[c]
        closest_sq = np.minimum(closest_sq, np.einsum("ij,ij->i", diff, diff))
    return centers


def _assign(positions: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # full distance matrix keeps the assignment argmin (and its tie-break by
    # lowest center id) independent of any spatial data structure
    d2 = (
        np.einsum("ij,ij->i", positions, positions)[:, None]
        - 2.0 * positions @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.argmin(d2, axis=1)


def cluster_cloud(cloud: PointCloud, m: int, rng_seed: int, cnct: ConnectivityGraph | None = None) -> Clustering:
    """Lloyd k-means over positions with k-means++ initialization.

    Deterministic given rng_seed. Seeds are the members nearest their
    centroids (ties by index). Cluster adjacency is populated when a
    connectivity graph is supplied.

    Raises:
        ValueError: m > n, or an empty cluster persists after 5 re-seeds.
    """
    n = len(cloud)
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= {n}, got {m}")
    positions = cloud.positions
    rng = np.random.default_rng(rng_seed)
    centers = _kmeans_pp_init(positions, m, rng)
    tol = 1e-6 * max(cloud.bbox_diagonal(), 1e-30)

    def fix_empty(labels: np.ndarray) -> np.ndarray:
        # re-seed empty clusters from the point farthest from all centers
        for reseeds in range(6):
            counts = np.bincount(labels, minlength=m)
            empty = np.where(counts == 0)[0]
            if len(empty) == 0:
                return labels
            if reseeds == 5:
                raise ValueError(f"cluster {int(empty[0])} stayed empty after 5 re-seeds")
            d2 = (
                np.einsum("ij,ij->i", positions, positions)[:, None]
                - 2.0 * positions @ centers.T
                + np.einsum("ij,ij->i", centers, centers)[None, :]
            )
            centers[int(empty[0])] = positions[int(np.argmax(d2.min(axis=1)))]
            labels = _assign(positions, centers)
        return labels

    labels = _assign(positions, centers)
    for _ in range(100):
        labels = fix_empty(labels)
        new_centers = np.empty_like(centers)
        for c in range(m):
            new_centers[c] = positions[labels == c].mean(axis=0)
        shift = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        labels = _assign(positions, centers)
        if shift < tol:
            break
    labels = fix_empty(labels)

    seeds = np.empty(m, dtype=np.intp)
    for c in range(m):
        members = np.where(labels == c)[0]
        diff = positions[members] - centers[c]
        sq = np.einsum("ij,ij->i", diff, diff)
        seeds[c] = members[int(np.lexsort((members, sq))[0])]

    cluster_neighbors: list[np.ndarray] = [np.empty(0, dtype=np.intp) for _ in range(m)]
    if cnct is not None:
        pairs: set[tuple[int, int]] = set()
        for i in range(n):
            li = int(labels[i])
            for j in cnct.neighbors[i]:
                if j <= i:
                    continue
                lj = int(labels[j])
                if li != lj:
                    pairs.add((min(li, lj), max(li, lj)))
        sets: list[set[int]] = [set() for _ in range(m)]
        for a, b in pairs:
            sets[a].add(b)
            sets[b].add(a)
        cluster_neighbors = [np.asarray(sorted(s), dtype=np.intp) for s in sets]

    return Clustering(labels=labels, centers=centers, seeds=seeds, cluster_neighbors=cluster_neighbors)


def cluster_plane_threshold(clustering: Clustering, thr: AdaptiveThresholds, cluster_id: int) -> float:
    """Median of members' d_max (lower median for even counts)."""
    members = clustering.members(cluster_id)
    if len(members) == 0:
        raise ValueError(f"cluster {cluster_id} is empty")
    values = np.sort(thr.d_max[members])
    return float(values[(len(values) - 1) // 2])
