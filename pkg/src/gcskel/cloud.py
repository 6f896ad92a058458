"""Oriented point clouds: representation, file I/O, neighbor queries, normals.

A cloud is an ordered array of 3D positions, optionally carrying unit surface
normals. Point indices are stable identifiers for an entire pipeline run, so
every query here is exact and deterministic: nearest-neighbor results match a
brute-force distance sort with ties broken by ascending point index.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

UNIT_NORMAL_ATOL = 1e-6


class CloudFormatError(ValueError):
    """A cloud file failed to parse; message names the offending line."""


class DisconnectedCloudError(ValueError):
    """An operation requiring a spanning tree got a forest."""


@dataclass
class PointCloud:
    """Positions shaped (n, 3) with optional unit normals shaped (n, 3).

    Attributes:
        positions: float64 array, one row per point.
        normals: unit vectors per point, or None when absent.
        degenerate_normals: boolean mask set by estimate_normals for points
            whose neighborhood covariance was rank-deficient (their normal is
            an arbitrary placeholder).
    """

    positions: np.ndarray
    normals: np.ndarray | None = None
    degenerate_normals: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (n, 3), got {self.positions.shape}")
        if len(self.positions) == 0:
            raise ValueError("empty cloud")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")
        if self.normals is not None:
            self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
            if self.normals.shape != self.positions.shape:
                raise ValueError("normals shape must match positions")
            lengths = np.linalg.norm(self.normals, axis=1)
            if not np.allclose(lengths, 1.0, atol=UNIT_NORMAL_ATOL):
                worst = int(np.argmax(np.abs(lengths - 1.0)))
                raise ValueError(f"normal {worst} has length {lengths[worst]:.9f}, must be unit")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, indices: np.ndarray) -> "PointCloud":
        """New cloud holding the given points, in the given order."""
        idx = np.asarray(indices, dtype=np.intp)
        return PointCloud(
            self.positions[idx],
            None if self.normals is None else self.normals[idx],
            None if self.degenerate_normals is None else self.degenerate_normals[idx],
        )

    def transformed(self, rotation: np.ndarray | None = None, translation=None, scale: float = 1.0) -> "PointCloud":
        """Similarity-transformed copy; normals rotate but never scale."""
        pos = self.positions * float(scale)
        nrm = self.normals
        if rotation is not None:
            rotation = np.asarray(rotation, dtype=np.float64)
            pos = pos @ rotation.T
            if nrm is not None:
                nrm = nrm @ rotation.T
        if translation is not None:
            pos = pos + np.asarray(translation, dtype=np.float64)
        return PointCloud(pos, nrm, self.degenerate_normals)

    def bbox_diagonal(self) -> float:
        span = self.positions.max(axis=0) - self.positions.min(axis=0)
        return float(np.linalg.norm(span))


def concat_clouds(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds; normals kept only if every input has them."""
    if not clouds:
        raise ValueError("nothing to concatenate")
    pos = np.vstack([c.positions for c in clouds])
    if all(c.has_normals for c in clouds):
        nrm = np.vstack([c.normals for c in clouds])
    else:
        nrm = None
    return PointCloud(pos, nrm)


# ---------------------------------------------------------------------------
# spatial queries
# ---------------------------------------------------------------------------

class SpatialIndex:
    """Exact k-nearest and radius queries with (distance, index) tie order.

    Backed by a k-d tree for candidate generation; candidates are re-ranked by
    squared distance then index, so results are reproducible regardless of
    tree internals.
    """

    def __init__(self, positions: np.ndarray):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self._tree = cKDTree(self.positions)

    def __len__(self) -> int:
        return len(self.positions)

    def k_nearest(self, point: np.ndarray, k: int, exclude: int | None = None) -> np.ndarray:
        """Indices of the k nearest points to `point`, tie-broken by index."""
        n = len(self.positions)
        want = k + (1 if exclude is not None else 0)
        if want > n:
            raise ValueError(f"asked for {k} neighbors of {n} points")
        dists, _ = self._tree.query(point, k=want)
        dists = np.atleast_1d(dists)
        kth = dists[-1]
        cand = np.asarray(self._tree.query_ball_point(point, kth * (1.0 + 1e-12)), dtype=np.intp)
        if exclude is not None:
            cand = cand[cand != exclude]
        diff = self.positions[cand] - np.asarray(point, dtype=np.float64)
        sq = np.einsum("ij,ij->i", diff, diff)
        order = np.lexsort((cand, sq))
        return cand[order[:k]]

    def k_nearest_all(self, k: int, include_self: bool = False) -> np.ndarray:
        """(n, k) neighbor indices for every point, excluding self by default."""
        n = len(self.positions)
        limit = k if include_self else k + 1
        if limit > n:
            raise ValueError(f"asked for {k} neighbors of {n} points")
        dists, _ = self._tree.query(self.positions, k=limit)
        out = np.empty((n, k), dtype=np.intp)
        radii = dists[:, -1] * (1.0 + 1e-12)
        balls = self._tree.query_ball_point(self.positions, radii)
        for i in range(n):
            cand = np.asarray(balls[i], dtype=np.intp)
            if not include_self:
                cand = cand[cand != i]
            diff = self.positions[cand] - self.positions[i]
            sq = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, sq))
            out[i] = cand[order[:k]]
        return out

    def within(self, point: np.ndarray, radius: float) -> np.ndarray:
        """Indices with distance <= radius, ascending index order."""
        cand = self._tree.query_ball_point(point, radius)
        return np.sort(np.asarray(cand, dtype=np.intp))

    def balls(self, radii: np.ndarray) -> list[np.ndarray]:
        """Per-point radius query: balls[i] = indices within radii[i] of point i."""
        hits = self._tree.query_ball_point(self.positions, np.asarray(radii, dtype=np.float64))
        return [np.sort(np.asarray(h, dtype=np.intp)) for h in hits]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------
#
# xyz:  "x y z" per line
# xyzn: "x y z nx ny nz" per line
# ply:  ascii PLY 1.0 with a vertex element carrying x,y,z and optionally
#       nx,ny,nz properties
#
# In every format blank lines are skipped and '#' starts a comment.

_FORMATS = ("xyz", "xyzn", "ply")


def _infer_format(path: Path) -> str:
    suffix = path.suffix.lower().lstrip(".")
    if suffix in _FORMATS:
        return suffix
    raise CloudFormatError(f"cannot infer cloud format from suffix {path.suffix!r}")


def _clean_lines(path: Path):
    """Yield (line_number, stripped_text) for content lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield lineno, text


def _parse_floats(text: str, count: int, lineno: int, path: Path) -> list[float]:
    parts = text.split()
    if len(parts) != count:
        raise CloudFormatError(f"{path.name} line {lineno}: expected {count} fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise CloudFormatError(f"{path.name} line {lineno}: {exc}") from None


def _normalize_rows(vectors: np.ndarray, lines: list[int], path: Path) -> np.ndarray:
    lengths = np.linalg.norm(vectors, axis=1)
    bad = np.where(lengths < 1e-12)[0]
    if len(bad):
        raise CloudFormatError(f"{path.name} line {lines[bad[0]]}: zero-length normal")
    return vectors / lengths[:, None]


def load_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud file; has_normals reflects what the format carried.

    Args:
        path: file to read.
        format: one of 'xyz', 'xyzn', 'ply'; inferred from the suffix when
            omitted.

    Raises:
        CloudFormatError: parse failure (message names the line), unknown
            format, or an empty file.
    """
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt not in _FORMATS:
        raise CloudFormatError(f"unknown cloud format {fmt!r}")
    if fmt == "ply":
        return _load_ply(path)

    width = 3 if fmt == "xyz" else 6
    rows, lines = [], []
    for lineno, text in _clean_lines(path):
        rows.append(_parse_floats(text, width, lineno, path))
        lines.append(lineno)
    if not rows:
        raise CloudFormatError(f"{path.name}: no points")
    data = np.asarray(rows, dtype=np.float64)
    if fmt == "xyz":
        return PointCloud(data)
    return PointCloud(data[:, :3], _normalize_rows(data[:, 3:], lines, path))


def _load_ply(path: Path) -> PointCloud:
    content = list(_clean_lines(path))
    if not content or content[0][1] != "ply":
        raise CloudFormatError(f"{path.name} line 1: missing 'ply' magic")

    n_vertices = None
    vertex_props: list[str] = []
    elements: list[tuple[str, int]] = []  # declaration order, with counts
    body_at = None
    for pos, (lineno, text) in enumerate(content[1:], start=1):
        parts = text.split()
        if parts[0] == "format":
            if parts[1:3] != ["ascii", "1.0"]:
                raise CloudFormatError(f"{path.name} line {lineno}: only ascii 1.0 supported")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path.name} line {lineno}: malformed element")
            elements.append((parts[1], int(parts[2])))
            if parts[1] == "vertex":
                n_vertices = int(parts[2])
        elif parts[0] == "property":
            if elements and elements[-1][0] == "vertex":
                vertex_props.append(parts[-1])
        elif parts[0] == "end_header":
            body_at = pos + 1
            break
        elif parts[0] == "comment":
            continue
        else:
            raise CloudFormatError(f"{path.name} line {lineno}: unexpected header line {parts[0]!r}")
    if body_at is None:
        raise CloudFormatError(f"{path.name}: no end_header")
    if n_vertices is None or n_vertices < 1:
        raise CloudFormatError(f"{path.name}: no vertex element")
    for name in ("x", "y", "z"):
        if name not in vertex_props:
            raise CloudFormatError(f"{path.name}: vertex element lacks property {name}")
    with_normals = all(n in vertex_props for n in ("nx", "ny", "nz"))

    body = content[body_at:]
    cursor = 0
    rows, lines = [], []
    for elem_name, count in elements:
        if cursor + count > len(body):
            raise CloudFormatError(f"{path.name}: truncated data for element {elem_name}")
        if elem_name == "vertex":
            for lineno, text in body[cursor:cursor + count]:
                rows.append(_parse_floats(text, len(vertex_props), lineno, path))
                lines.append(lineno)
        cursor += count

    data = np.asarray(rows, dtype=np.float64)
    cols = {name: i for i, name in enumerate(vertex_props)}
    positions = data[:, [cols["x"], cols["y"], cols["z"]]]
    if not with_normals:
        return PointCloud(positions)
    normals = data[:, [cols["nx"], cols["ny"], cols["nz"]]]
    return PointCloud(positions, _normalize_rows(normals, lines, path))


def write_cloud(cloud: PointCloud, path, format: str | None = None) -> None:
    """Write a cloud in one of the supported ascii formats."""
    path = Path(path)
    fmt = format or _infer_format(path)
    if fmt == "xyzn" and not cloud.has_normals:
        raise ValueError("xyzn output needs normals")
    def row_of(values) -> str:
        # plain-float repr: shortest round-trip text, no numpy scalar wrapper
        return " ".join(repr(float(v)) for v in values)

    with open(path, "w", encoding="utf-8") as fh:
        if fmt == "xyz":
            for p in cloud.positions:
                fh.write(row_of(p) + "\n")
        elif fmt == "xyzn":
            for p, n in zip(cloud.positions, cloud.normals):
                fh.write(row_of(p) + " " + row_of(n) + "\n")
        elif fmt == "ply":
            with_normals = cloud.has_normals
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(cloud)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            if with_normals:
                fh.write("property float nx\nproperty float ny\nproperty float nz\n")
            fh.write("end_header\n")
            for i, p in enumerate(cloud.positions):
                row = row_of(p)
                if with_normals:
                    row += " " + row_of(cloud.normals[i])
                fh.write(row + "\n")
        else:
            raise ValueError(f"unknown cloud format {fmt!r}")


# ---------------------------------------------------------------------------
# normal estimation and orientation
# ---------------------------------------------------------------------------

def estimate_normals(cloud: PointCloud, k: int = 15) -> PointCloud:
    """Plane-fit normals from the covariance of each point's neighborhood.

    The neighborhood is the point itself plus its k nearest neighbors. The
    normal is the eigenvector of the smallest covariance eigenvalue; signs are
    NOT yet consistent (see orient_normals). Rank-deficient neighborhoods get
    a placeholder +z normal and a True entry in degenerate_normals.

    Args:
        cloud: input positions; any existing normals are replaced.
        k: neighbor count, 3 <= k < len(cloud).
    """
    n = len(cloud)
    if not 3 <= k < n:
        raise ValueError(f"need 3 <= k < n, got k={k}, n={n}")
    index = SpatialIndex(cloud.positions)
    nbrs = index.k_nearest_all(k)
    hood = np.concatenate([np.arange(n, dtype=np.intp)[:, None], nbrs], axis=1)
    pts = cloud.positions[hood]                          # (n, k+1, 3)
    centered = pts - pts.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
    eigvals, eigvecs = np.linalg.eigh(cov)               # ascending eigenvalues
    normals = eigvecs[:, :, 0].copy()

    # canonical sign: first component of largest magnitude made positive
    lead = np.argmax(np.abs(normals), axis=1)
    signs = np.sign(normals[np.arange(n), lead])
    signs[signs == 0] = 1.0
    normals *= signs[:, None]

    # rank < 2 means the neighborhood does not define a plane
    scale_ref = np.maximum(eigvals[:, 2], 1e-300)
    degenerate = eigvals[:, 1] <= 1e-12 * scale_ref
    if degenerate.any():
        normals[degenerate] = (0.0, 0.0, 1.0)
    lengths = np.linalg.norm(normals, axis=1)
    normals /= lengths[:, None]
    return PointCloud(cloud.positions, normals, degenerate)


def _mst_adjacency(n: int, edge_u: np.ndarray, edge_v: np.ndarray) -> list[np.ndarray]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in zip(edge_u.tolist(), edge_v.tolist()):
        adj[u].append(v)
        adj[v].append(u)
    return [np.sort(np.asarray(a, dtype=np.intp)) for a in adj]


def _propagate_signs(normals: np.ndarray, adjacency: list[np.ndarray], root: int, visited: np.ndarray) -> None:
    # breadth-first; child flipped when it disagrees with its parent
    queue = [root]
    visited[root] = True
    while queue:
        nxt = []
        for u in queue:
            for v in adjacency[u]:
                if visited[v]:
                    continue
                visited[v] = True
                if float(normals[u] @ normals[v]) < 0.0:
                    normals[v] = -normals[v]
                nxt.append(v)
        queue = nxt


def orient_normals(cloud: PointCloud, mst) -> PointCloud:
    """Propagate a consistent normal sign over a spanning tree.

    Traversal starts at the lowest point index; a normal is flipped whenever
    its dot product with its already-oriented tree parent is negative.
    Idempotent: a second application changes nothing.

    Raises:
        DisconnectedCloudError: mst does not span the cloud (component count
            in the message).
        ValueError: cloud lacks normals.
    """
    if not cloud.has_normals:
        raise ValueError("orient_normals needs normals")
    n = len(cloud)
    adjacency = _mst_adjacency(n, mst.u, mst.v)
    normals = cloud.normals.copy()
    visited = np.zeros(n, dtype=bool)
    _propagate_signs(normals, adjacency, 0, visited)
    if not visited.all():
        # count components for the error message
        count = 1
        for i in range(n):
            if not visited[i]:
                count += 1
                _propagate_signs(normals, adjacency, i, visited)
        raise DisconnectedCloudError(f"spanning tree has {count} components, expected 1")
    return PointCloud(cloud.positions, normals, cloud.degenerate_normals)


def orient_normals_per_component(cloud: PointCloud, mst) -> tuple[PointCloud, int]:
    """orient_normals applied independently inside each forest component.

    Returns the oriented cloud and the component count. Used when the
    neighbor graph is disconnected and a global error would be unhelpful.
    """
    if not cloud.has_normals:
        raise ValueError("orient_normals needs normals")
    n = len(cloud)
    adjacency = _mst_adjacency(n, mst.u, mst.v)
    normals = cloud.normals.copy()
    visited = np.zeros(n, dtype=bool)
    components = 0
    for i in range(n):
        if not visited[i]:
            components += 1
            _propagate_signs(normals, adjacency, i, visited)
    return PointCloud(cloud.positions, normals, cloud.degenerate_normals), components
