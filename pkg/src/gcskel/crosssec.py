"""Cross-sectional cluster detection.

A cross-section of a tubular region is a thin band of points around a plane,
restricted to the connected component of a seed point. Candidate plane
orientations are scored by how well member normals lie inside the plane: the
cost is the mean absolute projection of point normals onto the plane normal,
zero for a perfect cut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .graphs import ConnectivityGraph

# exhaustive search grid: azimuth every pi/6 over the full turn, zenith
# {0, pi/6, pi/3, pi/2}; orientations are sign-symmetric so zenith stops at
# the equator
GRID_THETAS = tuple(k * math.pi / 6.0 for k in range(12))
GRID_PHIS = (0.0, math.pi / 6.0, math.pi / 3.0, math.pi / 2.0)

DEFAULT_DELTA_ANG_DEG = 12.5
DEFAULT_K_STEP = 3
MIN_SECTION_POINTS = 3


class CrossSectionError(ValueError):
    """No usable cross-section could be built at a seed."""


def normal_from_angles(theta: float, phi: float) -> np.ndarray:
    return np.array(
        [math.cos(theta) * math.sin(phi), math.sin(theta) * math.sin(phi), math.cos(phi)],
        dtype=np.float64,
    )


@dataclass
class PlaneHypothesis:
    """A plane through `anchor` with unit normal given by (theta, phi)."""

    theta: float
    phi: float
    anchor: np.ndarray
    normal: np.ndarray

    @classmethod
    def from_angles(cls, theta: float, phi: float, anchor: np.ndarray) -> "PlaneHypothesis":
        return cls(theta=float(theta), phi=float(phi), anchor=np.asarray(anchor, dtype=np.float64),
                   normal=normal_from_angles(theta, phi))

    @classmethod
    def from_normal(cls, normal: np.ndarray, anchor: np.ndarray) -> "PlaneHypothesis":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        phi = math.acos(max(-1.0, min(1.0, float(n[2]))))
        theta = math.atan2(float(n[1]), float(n[0])) % (2.0 * math.pi)
        return cls(theta=theta, phi=phi, anchor=np.asarray(anchor, dtype=np.float64), normal=n)

    def signed_distances(self, positions: np.ndarray) -> np.ndarray:
        return (positions - self.anchor) @ self.normal


@dataclass
class CrossSection:
    """One detected cross-sectional cluster.

    Attributes:
        member_indices: sorted point indices of the band component.
        plane: the plane it was detected with; plane.normal may be re-signed
            by growth to track travel direction.
        center: arithmetic mean of member positions.
        scale_eigs: (e1, e2), the two largest covariance eigenvalues of the
            member positions, e1 >= e2.
        seed_index: the point the connectivity filtering started from.
    """

    member_indices: np.ndarray
    plane: PlaneHypothesis
    center: np.ndarray
    scale_eigs: tuple[float, float]
    seed_index: int

    @property
    def n_members(self) -> int:
        return len(self.member_indices)


def plane_cost(cloud: PointCloud, inliers: np.ndarray, normal: np.ndarray) -> float:
    """Mean |normal . point_normal| over the inliers; 0 = all in-plane."""
    if len(inliers) == 0:
        raise ValueError("plane_cost over empty inliers")
    if not cloud.has_normals:
        raise ValueError("plane_cost needs normals")
    return float(np.mean(np.abs(cloud.normals[inliers] @ np.asarray(normal, dtype=np.float64))))


def connected_within(cnct: ConnectivityGraph, seed: int, mask: np.ndarray) -> np.ndarray:
    """Seed's connected component inside the masked subgraph, sorted."""
    if not mask[seed]:
        raise ValueError("seed not in candidate set")
    seen = np.zeros(len(mask), dtype=bool)
    seen[seed] = True
    queue = [seed]
    out = [seed]
    while queue:
        nxt = []
        for u in queue:
            for v in cnct.neighbors[u]:
                if mask[v] and not seen[v]:
                    seen[v] = True
                    out.append(int(v))
                    nxt.append(int(v))
        queue = nxt
    return np.sort(np.asarray(out, dtype=np.intp))


def get_inliers(
    cloud: PointCloud,
    cnct: ConnectivityGraph,
    delta_pd: float,
    seed: int,
    normal: np.ndarray,
    anchor: np.ndarray | None = None,
) -> np.ndarray:
    """Band of points within delta_pd of the plane, filtered to the seed's
    connected component.

    The plane passes through the seed point unless an explicit anchor is
    given. The seed is always a member when it lies in the band; with the
    default anchor it always does.
    """
    positions = cloud.positions
    ref = positions[seed] if anchor is None else np.asarray(anchor, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    dist = np.abs((positions - ref) @ n)
    mask = dist <= delta_pd
    if not mask[seed]:
        return np.empty(0, dtype=np.intp)
    return connected_within(cnct, seed, mask)


def cluster_scale(cloud: PointCloud, members: np.ndarray) -> tuple[float, float]:
    """Two largest covariance eigenvalues (e1 >= e2) of member positions."""
    members = np.asarray(members, dtype=np.intp)
    if len(members) < 3:
        raise ValueError(f"cluster_scale needs >= 3 members, got {len(members)}")
    pts = cloud.positions[members]
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(members)
    eig = np.linalg.eigvalsh(cov)  # ascending
    return float(eig[2]), float(eig[1])


def scale_jump(
    prev: tuple[float, float],
    next: tuple[float, float],
    delta_eg: float,
    form: str = "verbatim",
) -> bool:
    """Stop test on the (e1, e2) scale vectors of consecutive sections.

    form='verbatim': abs(1 - d_eucl(prev, next) / ||prev||) > delta_eg.
    This expression is 1 for identical scales and 0 when the distance equals
    the magnitude, so its calibrated threshold is above 1 (default 1.5: fires
    when the jump distance exceeds 2.5x the current magnitude).

    form='ratio': abs(1 - ||next|| / ||prev||) > delta_eg, a plain relative
    magnitude change (calibrated default 0.5).
    """
    pv = np.asarray(prev, dtype=np.float64)
    nv = np.asarray(next, dtype=np.float64)
    mag = float(np.linalg.norm(pv))
    if mag == 0.0:
        raise ValueError("scale_jump with zero previous scale")
    if form == "verbatim":
        expr = abs(1.0 - float(np.linalg.norm(nv - pv)) / mag)
    elif form == "ratio":
        expr = abs(1.0 - float(np.linalg.norm(nv)) / mag)
    else:
        raise ValueError(f"unknown scale-jump form {form!r}")
    return expr > delta_eg


def find_cross_section(
    cloud: PointCloud,
    cnct: ConnectivityGraph,
    delta_pd: float,
    seed: int,
) -> CrossSection:
    """Exhaustive plane search at a seed point.

    Every (theta, phi) on the coarse grid is scored by plane_cost over its
    inlier band; the minimum wins, ties broken by smaller theta then smaller
    phi (iteration order). Candidates with fewer than 3 inliers cannot carry
    a scale descriptor and are skipped.

    Raises:
        CrossSectionError: every candidate had < 3 usable inliers.
    """
    if not cloud.has_normals:
        raise ValueError("find_cross_section needs normals")
    best: tuple[float, float, float, np.ndarray] | None = None
    for theta in GRID_THETAS:
        for phi in GRID_PHIS:
            n = normal_from_angles(theta, phi)
            inliers = get_inliers(cloud, cnct, delta_pd, seed, n)
            if len(inliers) < MIN_SECTION_POINTS:
                continue
            cost = plane_cost(cloud, inliers, n)
            if best is None or cost < best[0]:
                best = (cost, theta, phi, inliers)
    if best is None:
        raise CrossSectionError(f"no usable cross-section at seed {seed}")
    _, theta, phi, inliers = best
    plane = PlaneHypothesis.from_angles(theta, phi, cloud.positions[seed])
    center = cloud.positions[inliers].mean(axis=0)
    return CrossSection(
        member_indices=inliers,
        plane=plane,
        center=center,
        scale_eigs=cluster_scale(cloud, inliers),
        seed_index=seed,
    )


def local_plane_set(
    base_theta: float,
    base_phi: float,
    delta_ang_deg: float = DEFAULT_DELTA_ANG_DEG,
    k_step: int = DEFAULT_K_STEP,
) -> list[tuple[float, float]]:
    """k_step^2 (theta, phi) pairs spanning +-delta_ang around the base.

    Offsets are symmetric and include the interval endpoints for k_step >= 2;
    k_step = 1 degenerates to the base orientation alone.
    """
    if k_step < 1:
        raise ValueError("k_step must be >= 1")
    delta = math.radians(delta_ang_deg)
    if k_step == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-delta, delta, k_step)
    return [(base_theta + dt, base_phi + dp) for dt in offsets for dp in offsets]
