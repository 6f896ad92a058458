"""Synthetic generalized cylinders with exact ground truth.

A GC is built from three ingredients: a parametric 3D axis
(C1 cos t, C2 sin t, C3 t), a smooth closed 2D contour interpolating eight
control points at equal pi/4 angular spacing, and a sinusoidal scale function
with min >= 1. At each axis sample the contour is scaled, rotated by the
Frenet frame (columns [normal, binormal, tangent]) and translated to the
axis point. Contour normals ride along, giving exactly unit point normals
perpendicular to the local tangent.

Also here: the registration evaluation harness (trial records, paired
with/without-normals runs, the neighborhood-size experiment) and the
composite test shapes built from straight tubes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .cloud import PointCloud, concat_clouds
from .register import RegConfig, RegistrationError, register

TWO_PI = 2.0 * math.pi


@dataclass
class GCSpec:
    """Everything needed to reproduce one synthetic GC point cloud."""

    c1: float
    c2: float
    c3: float
    scale_offset: float
    scale_amplitude: float
    scale_phase: float
    radii: tuple[float, ...]
    n_axis: int = 60
    n_contour: int = 60
    sampling: str = "regular"
    seed: int = 0
    t_start: float = 0.0
    t_end: float = TWO_PI

    def __post_init__(self) -> None:
        for name in ("c1", "c2", "c3"):
            if not 0.0 <= getattr(self, name) < 50.0:
                raise ValueError(f"{name} must lie in [0, 50)")
        if self.scale_offset - self.scale_amplitude < 1.0 - 1e-12:
            raise ValueError("scale function must stay >= 1")
        if self.scale_amplitude < 0.0:
            raise ValueError("negative scale amplitude")
        if len(self.radii) != 8 or any(r <= 0.0 for r in self.radii):
            raise ValueError("need 8 positive contour radii")
        if self.n_axis < 2:
            raise ValueError("need at least 2 axis samples")
        if self.n_contour < 8:
            raise ValueError("need at least 8 contour samples")
        if self.sampling not in ("regular", "random"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")

    def scale_at(self, t: np.ndarray) -> np.ndarray:
        return self.scale_offset + self.scale_amplitude * np.sin(t + self.scale_phase)


def random_gc_spec(rng: np.random.Generator, sampling: str = "regular",
                   n_axis: int = 60, n_contour: int = 60) -> GCSpec:
    """Draw a GC: axis coefficients in (0, 50), radii in (2, 8), sinusoid
    scale with offset in (1.5, 3) and amplitude in (0, offset - 1]."""
    c1, c2, c3 = rng.uniform(0.0, 50.0, size=3)
    offset = float(rng.uniform(1.5, 3.0))
    amplitude = float(rng.uniform(0.0, offset - 1.0))
    phase = float(rng.uniform(0.0, TWO_PI))
    radii = tuple(float(r) for r in rng.uniform(2.0, 8.0, size=8))
    seed = int(rng.integers(0, 2**63 - 1))
    return GCSpec(c1=float(c1), c2=float(c2), c3=float(c3), scale_offset=offset,
                  scale_amplitude=amplitude, scale_phase=phase, radii=radii,
                  n_axis=n_axis, n_contour=n_contour, sampling=sampling, seed=seed)


# ---------------------------------------------------------------------------
# contour
# ---------------------------------------------------------------------------

class Contour:
    """Closed 2D contour through 8 control points at pi/4 spacing.

    A periodic cubic spline interpolates the control points. When all radii
    coincide the exact circle is used instead: the interpolating spline of a
    circle misses it by about 1e-3, which matters for fixtures whose normals
    must be radial to machine precision.
    """

    def __init__(self, radii: tuple[float, ...]):
        self.radii = tuple(float(r) for r in radii)
        self._circle = len(set(self.radii)) == 1
        if not self._circle:
            knots = np.arange(9) * (math.pi / 4.0)
            pts = np.array([
                [r * math.cos(a), r * math.sin(a)]
                for r, a in zip(self.radii, knots[:8])
            ])
            pts = np.vstack([pts, pts[:1]])    # exact wrap for the periodic end condition
            self._spline = CubicSpline(knots, pts, bc_type="periodic", axis=0)
            self._deriv = self._spline.derivative()

    def points(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64) % TWO_PI
        if self._circle:
            r = self.radii[0]
            return np.column_stack([r * np.cos(thetas), r * np.sin(thetas)])
        return self._spline(thetas)

    def outward_normals(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64) % TWO_PI
        if self._circle:
            return np.column_stack([np.cos(thetas), np.sin(thetas)])
        d = self._deriv(thetas)
        # counterclockwise parameterization: outward = (y', -x') normalized
        normals = np.column_stack([d[:, 1], -d[:, 0]])
        lengths = np.linalg.norm(normals, axis=1)
        lengths[lengths < 1e-300] = 1.0
        return normals / lengths[:, None]


# ---------------------------------------------------------------------------
# frames and generation
# ---------------------------------------------------------------------------

def _axis_points(spec: GCSpec, ts: np.ndarray) -> np.ndarray:
    return np.column_stack([spec.c1 * np.cos(ts), spec.c2 * np.sin(ts), spec.c3 * ts])


def _axis_d1(spec: GCSpec, ts: np.ndarray) -> np.ndarray:
    return np.column_stack([-spec.c1 * np.sin(ts), spec.c2 * np.cos(ts),
                            np.full_like(ts, spec.c3)])


def _axis_d2(spec: GCSpec, ts: np.ndarray) -> np.ndarray:
    return np.column_stack([-spec.c1 * np.cos(ts), -spec.c2 * np.sin(ts),
                            np.zeros_like(ts)])


def _frames(spec: GCSpec, ts: np.ndarray) -> tuple[np.ndarray, bool]:
    """Per-sample rotation with columns [normal, binormal, tangent], det +1.

    Falls back to a parallel-transport (rotation-minimizing) frame for the
    whole curve when the curvature vanishes anywhere, e.g. a straight axis.
    """
    d1 = _axis_d1(spec, ts)
    d2 = _axis_d2(spec, ts)
    t_len = np.linalg.norm(d1, axis=1)
    if np.any(t_len < 1e-12):
        raise ValueError("axis tangent vanished; degenerate spec")
    T = d1 / t_len[:, None]
    cross = np.cross(d1, d2)
    c_len = np.linalg.norm(cross, axis=1)
    degenerate = bool(np.any(c_len < 1e-9 * t_len ** 2))

    frames = np.empty((len(ts), 3, 3), dtype=np.float64)
    if not degenerate:
        B = cross / c_len[:, None]
        N = np.cross(B, T)
        frames[:, :, 0] = N
        frames[:, :, 1] = B
        frames[:, :, 2] = T
        return frames, False

    # parallel transport: drag an initial normal along, re-orthogonalizing
    # against each tangent
    e = np.array([1.0, 0.0, 0.0])
    if abs(float(T[0] @ e)) > 0.9:
        e = np.array([0.0, 1.0, 0.0])
    n = e - (e @ T[0]) * T[0]
    n /= np.linalg.norm(n)
    for k in range(len(ts)):
        n = n - (n @ T[k]) * T[k]
        length = np.linalg.norm(n)
        if length < 1e-12:
            # tangent flipped by ~90 degrees in one step; restart from a
            # perpendicular of the current tangent
            n = e - (e @ T[k]) * T[k]
            length = np.linalg.norm(n)
        n = n / length
        b = np.cross(T[k], n)
        frames[k, :, 0] = n
        frames[k, :, 1] = b
        frames[k, :, 2] = T[k]
    return frames, True


@dataclass
class GroundTruth:
    """Per-slice transforms and per-point ownership of a generated GC."""

    centers: np.ndarray            # (K, 3)
    rotations: np.ndarray          # (K, 3, 3)
    scales: np.ndarray             # (K,)
    owner: np.ndarray              # (n_points,) slice index per point
    frames_degenerate: bool = False

    @property
    def n_slices(self) -> int:
        return len(self.centers)

    @property
    def tangents(self) -> np.ndarray:
        return self.rotations[:, :, 2]

    def slice_indices(self, k: int) -> np.ndarray:
        return np.where(self.owner == k)[0]


def generate_gc(spec: GCSpec) -> tuple[PointCloud, GroundTruth]:
    """Sample a GC point cloud with exact normals and its ground truth.

    Regular mode uses one equispaced contour parameter set for every slice
    (slice k is then exactly the similarity transform of slice 0); random
    mode draws fresh uniform parameters per slice, so no slice-to-slice
    point correspondence exists.
    """
    ts = np.linspace(spec.t_start, spec.t_end, spec.n_axis)
    centers = _axis_points(spec, ts)
    frames, degenerate = _frames(spec, ts)
    scales = spec.scale_at(ts)
    contour = Contour(spec.radii)
    rng = np.random.default_rng(spec.seed)

    base_thetas = np.linspace(0.0, TWO_PI, spec.n_contour, endpoint=False)
    positions = np.empty((spec.n_axis * spec.n_contour, 3), dtype=np.float64)
    normals = np.empty_like(positions)
    owner = np.repeat(np.arange(spec.n_axis, dtype=np.intp), spec.n_contour)
    for k in range(spec.n_axis):
        thetas = base_thetas if spec.sampling == "regular" else rng.uniform(0.0, TWO_PI, spec.n_contour)
        p2 = contour.points(thetas)
        n2 = contour.outward_normals(thetas)
        lifted = np.column_stack([p2, np.zeros(len(p2))])
        lifted_n = np.column_stack([n2, np.zeros(len(n2))])
        rows = slice(k * spec.n_contour, (k + 1) * spec.n_contour)
        positions[rows] = centers[k] + scales[k] * lifted @ frames[k].T
        normals[rows] = lifted_n @ frames[k].T

    gt = GroundTruth(centers=centers, rotations=frames, scales=scales,
                     owner=owner, frames_degenerate=degenerate)
    return PointCloud(positions, normals), gt


def relative_transform(gt: GroundTruth, from_slice: int, to_slice: int) -> tuple[np.ndarray, float, np.ndarray]:
    """(R, s, t) carrying slice from_slice onto slice to_slice.

    Exact for regular sampling: applying it to the source slice's points
    reproduces the target slice point-for-point.
    """
    R = gt.rotations[to_slice] @ gt.rotations[from_slice].T
    s = float(gt.scales[to_slice] / gt.scales[from_slice])
    t = gt.centers[to_slice] - s * R @ gt.centers[from_slice]
    return R, s, t


def rotation_error(R1: np.ndarray, R2: np.ndarray) -> float:
    """Frobenius metric ||I - R1 R2^T||_F, range [0, 2 sqrt(2)]."""
    for R in (R1, R2):
        R = np.asarray(R, dtype=np.float64)
        if R.shape != (3, 3) or np.linalg.norm(R.T @ R - np.eye(3)) > 1e-6 or np.linalg.det(R) <= 0:
            raise ValueError("rotation_error needs proper rotations")
    return float(np.linalg.norm(np.eye(3) - np.asarray(R1) @ np.asarray(R2).T))


# ---------------------------------------------------------------------------
# registration trials
# ---------------------------------------------------------------------------

@dataclass
class TrialRecord:
    trial_index: int
    sampling: str
    use_normals: bool
    rot_err: float = math.nan
    plane_err_deg: float = math.nan
    reg_cost_deg: float = math.nan
    scale_err: float = math.nan
    converged: bool = False
    failed: bool = False


def run_registration_trial(spec: GCSpec, source_slice: int, dest_slice: int,
                           use_normals: bool, dest_width: int = 1,
                           config: RegConfig | None = None,
                           trial_index: int = 0) -> TrialRecord:
    """Register one source slice against a destination band of dest_width
    slices centered on dest_slice, the way growth collects points around a
    predicted section center.

    The recorded errors compare against the exact transform onto the center
    slice: rotation by the Frobenius metric, plane orientation as the angle
    between the propagated tangent R_hat^T T_src and the true destination
    tangent, registration cost as the mean best-match normal angle, and
    scale as |s_hat / s_rel - 1|.
    """
    lo = dest_slice - dest_width // 2
    hi = lo + dest_width
    if not 0 <= source_slice < spec.n_axis:
        raise ValueError("slice index out of range")
    if not (0 <= lo and hi <= spec.n_axis):
        raise ValueError("destination band out of range")
    if lo <= source_slice < hi or source_slice == dest_slice:
        raise ValueError("source slice must lie outside the destination band")
    cloud, gt = generate_gc(spec)
    record = TrialRecord(trial_index=trial_index, sampling=spec.sampling, use_normals=use_normals)

    X = cloud.subset(gt.slice_indices(source_slice))
    y_idx = np.concatenate([gt.slice_indices(k) for k in range(lo, hi)])
    Y = cloud.subset(y_idx)

    cfg = config or RegConfig()
    cfg = RegConfig(**{**cfg.__dict__, "use_normals": use_normals})
    try:
        report = register(X, Y, cfg)
    except RegistrationError:
        record.failed = True
        return record

    R_star, s_star, _ = relative_transform(gt, dest_slice, source_slice)
    record.rot_err = rotation_error(report.params.rotation, R_star)
    propagated = report.params.rotation.T @ gt.tangents[source_slice]
    dot = float(np.clip(propagated @ gt.tangents[dest_slice], -1.0, 1.0))
    record.plane_err_deg = math.degrees(math.acos(dot))
    record.reg_cost_deg = report.mean_best_match_angle
    record.scale_err = abs(report.params.scale / s_star - 1.0)
    record.converged = report.converged
    return record


def plan_trial(seed: int, index: int, sampling: str, dest_width: int = 1,
               n_axis: int = 60, n_contour: int = 60) -> tuple[GCSpec, int, int]:
    """Deterministic (spec, source, dest) for trial `index`; independent of
    which registration variants later run on it, so paired comparisons share
    the exact same data.

    The destination sits just past the source with enough headroom that a
    band of dest_width slices centered on it stays inside the axis range."""
    rng = np.random.default_rng((seed, index))
    spec = random_gc_spec(rng, sampling, n_axis=n_axis, n_contour=n_contour)
    source = int(rng.integers(1, spec.n_axis - dest_width))
    return spec, source, source + 1 + dest_width // 2


def run_trials(n_trials: int, sampling: str, use_normals: bool, seed: int,
               dest_width: int = 1, config: RegConfig | None = None) -> list[TrialRecord]:
    records = []
    for idx in range(n_trials):
        spec, source, dest = plan_trial(seed, idx, sampling, dest_width)
        records.append(run_registration_trial(spec, source, dest, use_normals,
                                              dest_width, config, trial_index=idx))
    return records


def run_neighborhood_size_experiment(n_trials: int, seed: int,
                                     small_width: int = 1, large_width: int = 3,
                                     sampling: str = "random",
                                     config: RegConfig | None = None) -> dict:
    """Proportion of trials where a wider destination worsened the rotation
    estimate, with and without normals.

    Each trial picks one source slice and two neighboring destination
    clusters, a small and a large band, and registers the source against
    both under both objective variants; a trial counts toward a variant's
    proportion when the large-band rotation error exceeds the small-band
    one. Trials where any leg fails are excluded and counted.
    """
    if n_trials < 30:
        raise ValueError("need at least 30 trials for a stable proportion")
    worsened = {True: 0, False: 0}
    valid = {True: 0, False: 0}
    failed_trials = 0
    for idx in range(n_trials):
        spec, source, dest_large = plan_trial(seed, idx, sampling, large_width)
        dest_small = source + 1 + small_width // 2
        legs = {}
        for use_normals in (True, False):
            small = run_registration_trial(spec, source, dest_small, use_normals, small_width,
                                           config, trial_index=idx)
            large = run_registration_trial(spec, source, dest_large, use_normals, large_width,
                                           config, trial_index=idx)
            legs[use_normals] = (small, large)
        if any(rec.failed for pair in legs.values() for rec in pair):
            failed_trials += 1
            continue
        for use_normals, (small, large) in legs.items():
            valid[use_normals] += 1
            if large.rot_err > small.rot_err:
                worsened[use_normals] += 1
    return {
        "proportion_with": worsened[True] / max(valid[True], 1),
        "proportion_without": worsened[False] / max(valid[False], 1),
        "n_valid": valid[True],
        "n_failed": failed_trials,
    }


# ---------------------------------------------------------------------------
# composite test shapes
# ---------------------------------------------------------------------------

def straight_tube(radius: float, length: float, n_axis: int, n_contour: int,
                  seed: int = 0, sampling: str = "regular") -> tuple[PointCloud, GroundTruth]:
    """Right circular cylinder along +z from 0 to length."""
    spec = GCSpec(c1=0.0, c2=0.0, c3=length / TWO_PI, scale_offset=1.0,
                  scale_amplitude=0.0, scale_phase=0.0, radii=(radius,) * 8,
                  n_axis=n_axis, n_contour=n_contour, sampling=sampling, seed=seed)
    return generate_gc(spec)


def _rot_y(deg: float) -> np.ndarray:
    a = math.radians(deg)
    return np.array([[math.cos(a), 0.0, math.sin(a)], [0.0, 1.0, 0.0],
                     [-math.sin(a), 0.0, math.cos(a)]])


@dataclass
class Tube:
    """A placed straight tube: world-space axis segment and radius."""

    p0: np.ndarray
    direction: np.ndarray          # unit
    length: float
    radius: float

    def contains(self, points: np.ndarray, margin: float = 0.02) -> np.ndarray:
        rel = points - self.p0
        along = rel @ self.direction
        radial = np.linalg.norm(rel - np.outer(along, self.direction), axis=1)
        inside_r = radial < self.radius * (1.0 - margin)
        return (along > 0.0) & (along < self.length) & inside_r

    def axis_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the axis segment (clamped ends)."""
        rel = points - self.p0
        along = np.clip(rel @ self.direction, 0.0, self.length)
        foot = self.p0 + np.outer(along, self.direction)
        return np.linalg.norm(points - foot, axis=1)


def _place(cloud: PointCloud, rotation: np.ndarray | None, offset: np.ndarray) -> PointCloud:
    return cloud.transformed(rotation=rotation, translation=offset)


def _weld(limbs: list[tuple[PointCloud, Tube]]) -> PointCloud:
    """Union of tube surfaces: points strictly inside any other tube's solid
    are dropped, leaving a clean seam where surfaces meet."""
    kept = []
    for i, (cloud, _) in enumerate(limbs):
        keep = np.ones(len(cloud), dtype=bool)
        for j, (_, tube) in enumerate(limbs):
            if i != j:
                keep &= ~tube.contains(cloud.positions)
        kept.append(cloud.subset(np.where(keep)[0]))
    return concat_clouds(kept)


def make_cylinder(radius: float = 1.0, length: float = 8.0, n_axis: int = 40,
                  n_contour: int = 60, seed: int = 11) -> tuple[PointCloud, dict]:
    cloud, gt = straight_tube(radius, length, n_axis, n_contour, seed)
    info = {
        "axis_p0": np.zeros(3),
        "axis_p1": np.array([0.0, 0.0, length]),
        "radius": radius,
        "true_centers": gt.centers,
        "n_points": len(cloud),
    }
    return cloud, info


def make_tee(seed: int = 23) -> tuple[PointCloud, dict]:
    """Vertical stem meeting a horizontal bar, welded at the junction.

    The stem is thinner and more coarsely sampled than the bar: growth along
    the bar then crosses the junction instead of stalling against the wall of
    stem points, and the adaptive connectivity radius comfortably bridges the
    seam. With equal radii the bar-grown parts stop on either side of the
    junction and the decomposition falls apart into two components.
    """
    stem_r, stem_len = 0.5, 3.6
    bar_r = 0.8
    stem, _ = straight_tube(stem_r, stem_len, 30, 24, seed)
    stem_tube = Tube(np.zeros(3), np.array([0.0, 0.0, 1.0]), stem_len, stem_r)
    bar_z = stem_len + bar_r - 0.3
    bar_raw, _ = straight_tube(bar_r, 6.0, 48, 40, seed + 1)
    bar = _place(bar_raw, _rot_y(90.0), np.array([-3.0, 0.0, bar_z]))
    bar_tube = Tube(np.array([-3.0, 0.0, bar_z]), np.array([1.0, 0.0, 0.0]), 6.0, bar_r)

    cloud = _weld([(stem, stem_tube), (bar, bar_tube)])
    info = {
        "tubes": {"stem": stem_tube, "bar": bar_tube},
        "junction": np.array([0.0, 0.0, bar_z]),
        "n_points": len(cloud),
    }
    return cloud, info


def make_quadruped(seed: int = 37) -> tuple[PointCloud, dict]:
    """Torso with four legs, a neck and a tail; six skeleton leaves.

    Every limb is perpendicular to the torso and stops just short of its
    wall, so the seam is a narrow gap the adaptive connectivity radius
    bridges while separate limbs stay far apart. Limb rings are spaced
    wider than 1.5 contour steps: consecutive rings are not
    connectivity-adjacent, so a torso-axis band picks up only the one limb
    ring facing it instead of a wall of limb points, and growth along the
    torso passes every limb without stalling.
    """
    up = np.array([0.0, 0.0, 1.0])
    xdir = np.array([1.0, 0.0, 0.0])
    limbs: list[tuple[PointCloud, Tube]] = []

    torso_raw, _ = straight_tube(1.0, 8.0, 54, 40, seed)
    torso = _place(torso_raw, _rot_y(90.0), np.array([-4.0, 0.0, 0.0]))
    limbs.append((torso, Tube(np.array([-4.0, 0.0, 0.0]), xdir, 8.0, 1.0)))

    leg_at = [(2.792, 0.65), (2.792, -0.65), (-2.792, 0.65), (-2.792, -0.65)]
    for i, (lx, ly) in enumerate(leg_at):
        leg_raw, _ = straight_tube(0.45, 2.65, 15, 34, seed + 10 + i)
        base = np.array([lx, ly, -3.8])
        limbs.append((_place(leg_raw, None, base), Tube(base, up, 2.65, 0.45)))

    neck_raw, _ = straight_tube(0.45, 2.65, 15, 34, seed + 20)
    neck_base = np.array([3.3, 0.0, 1.15])
    limbs.append((_place(neck_raw, None, neck_base), Tube(neck_base, up, 2.65, 0.45)))

    tail_raw, _ = straight_tube(0.35, 1.85, 11, 34, seed + 30)
    tail_base = np.array([-3.3, 0.0, 1.15])
    limbs.append((_place(tail_raw, None, tail_base), Tube(tail_base, up, 1.85, 0.35)))

    cloud = _weld(limbs)
    tubes = {
        "torso": limbs[0][1],
        "legs": [limbs[i][1] for i in range(1, 5)],
        "neck": limbs[5][1],
        "tail": limbs[6][1],
    }
    info = {"tubes": tubes, "expected_leaves": 6, "n_points": len(cloud)}
    return cloud, info
