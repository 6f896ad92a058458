"""Growing a part from a seed cluster, one cross-section at a time.

From the seed's best cross-section the part extends in both directions along
the plane normal. Each step centers a candidate plane one stride ahead of
the current section and either scores a small fan of tilted planes by normal
alignment (method 1) or registers the current section against the points
near the stepped plane and carries its frame forward (method 2). Small
sections cannot support a stable registration, so the step method is chosen
per step from the current section's population.

Every stop is recorded with a reason; growth in a direction halts on the
first stop. Sections never share points: a step keeps only points no earlier
section claimed, and stops when too little is new.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .crosssec import (
    CrossSection,
    PlaneHypothesis,
    cluster_scale,
    find_cross_section,
    get_inliers,
    local_plane_set,
    normal_from_angles,
    plane_cost,
    scale_jump,
)
from .graphs import AdaptiveThresholds, Clustering, ConnectivityGraph, cluster_plane_threshold
from .register import RegConfig, RegistrationError, register, select_matched_points


class StopReason(enum.Enum):
    NO_POINTS = "no-points"
    SCALE_JUMP = "scale-jump"
    REGISTRATION_MISMATCH = "registration-mismatch"


@dataclass
class StepStop:
    reason: StopReason
    detail: str = ""


@dataclass
class GrowConfig:
    """Growth knobs; scale_jump_threshold None picks the form's calibrated
    default (1.5 verbatim, 0.5 ratio)."""

    step_factor: float = 2.0           # stride in units of the plane threshold:
                                       # consecutive bands abut without overlap
    delta_ang_deg: float = 12.5
    k_step: int = 3
    min_section_points: int = 3
    method_switch_floor: int = 100     # fewer members than this: method 1
    mismatch_angle_deg: float = 15.0
    scale_jump_form: str = "ratio"
    scale_jump_threshold: float | None = None
    visited_stop_fraction: float = 0.9
    registration: RegConfig = field(default_factory=RegConfig)

    def resolved_scale_jump_threshold(self) -> float:
        if self.scale_jump_threshold is not None:
            return float(self.scale_jump_threshold)
        return 1.5 if self.scale_jump_form == "verbatim" else 0.5


@dataclass
class StepOutcome:
    section: CrossSection | None = None
    stop: StepStop | None = None
    method: str = ""
    registration_cost: float | None = None   # degrees, method 2 only


@dataclass
class Part:
    """An ordered chain of disjoint cross-sections.

    pair_registration_costs collects the mean best-match angles of every
    registration that stitched this part together (method-2 growth steps and
    later merges); it is unordered and may be shorter than the section count.
    merge_seams lists indices i whose edge sections[i] -> sections[i+1] came
    from joining two grown parts.
    """

    part_id: int
    seed_cluster_id: int
    sections: list[CrossSection]
    provenance: list[str]
    pair_registration_costs: list[float] = field(default_factory=list)
    stop_reasons: dict[str, StepStop] = field(default_factory=dict)
    merge_seams: list[int] = field(default_factory=list)

    @property
    def n_sections(self) -> int:
        return len(self.sections)

    @property
    def axis(self) -> np.ndarray:
        """(n_sections, 3) polyline of section centers."""
        return np.array([s.center for s in self.sections])

    @property
    def member_set(self) -> np.ndarray:
        """Sorted union of all section members (sections are disjoint)."""
        if not self.sections:
            return np.empty(0, dtype=np.intp)
        return np.sort(np.concatenate([s.member_indices for s in self.sections]))

    @property
    def n_members(self) -> int:
        return sum(s.n_members for s in self.sections)

    def reversed_copy(self) -> "Part":
        last = self.n_sections - 2
        return Part(
            part_id=self.part_id,
            seed_cluster_id=self.seed_cluster_id,
            sections=list(reversed(self.sections)),
            provenance=list(reversed(self.provenance)),
            pair_registration_costs=list(self.pair_registration_costs),
            stop_reasons=dict(self.stop_reasons),
            merge_seams=sorted(last - i for i in self.merge_seams),
        )


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

def choose_method(n_current_members: int, config: GrowConfig) -> str:
    return "method1" if n_current_members < config.method_switch_floor else "method2"


def _band_seed(positions: np.ndarray, band: np.ndarray, target: np.ndarray) -> int:
    """Band point nearest the stepped center; ties fall to the lowest index
    because the band is sorted."""
    d = np.linalg.norm(positions[band] - target, axis=1)
    return int(band[int(np.argmin(d))])


def _touches(cnct: ConnectivityGraph, candidate: np.ndarray, current_set: frozenset) -> bool:
    """True when the candidate section continues the current one: shares a
    point with it or sits within one connectivity edge of it. A band far
    from the current section can capture an unrelated fragment (the nearest
    point to the stepped center may lie across a gap, e.g. on a parallel
    limb); such a component is not a continuation and must not be stepped to.
    """
    for idx in candidate.tolist():
        if idx in current_set:
            return True
        for nb in cnct.neighbors[idx].tolist():
            if nb in current_set:
                return True
    return False


def method1_step(cloud: PointCloud, cnct: ConnectivityGraph, delta_pd: float,
                 current: CrossSection, config: GrowConfig) -> StepOutcome:
    """Score a fan of planes around the stepped center by normal alignment.

    Stops on a scale jump between the current section and the winner, or
    when no candidate plane collects enough connected points adjacent to
    the current section.
    """
    target = current.center + config.step_factor * delta_pd * current.plane.normal
    base = PlaneHypothesis.from_normal(current.plane.normal, target)
    current_set = frozenset(current.member_indices.tolist())
    best: tuple[float, float, float, np.ndarray, int] | None = None
    for theta, phi in local_plane_set(base.theta, base.phi, config.delta_ang_deg, config.k_step):
        n = normal_from_angles(theta, phi)
        dist = np.abs((cloud.positions - target) @ n)
        band = np.where(dist <= delta_pd)[0]
        if len(band) == 0:
            continue
        seed = _band_seed(cloud.positions, band, target)
        inliers = get_inliers(cloud, cnct, delta_pd, seed, n)
        if len(inliers) < config.min_section_points:
            continue
        if not _touches(cnct, inliers, current_set):
            continue
        cost = plane_cost(cloud, inliers, n)
        if best is None or cost < best[0]:
            best = (cost, theta, phi, inliers, seed)
    if best is None:
        return StepOutcome(stop=StepStop(StopReason.NO_POINTS, "no populated plane at stepped center"),
                           method="method1")
    _, theta, phi, inliers, seed = best
    eigs = cluster_scale(cloud, inliers)
    if scale_jump(current.scale_eigs, eigs, config.resolved_scale_jump_threshold(),
                  config.scale_jump_form):
        detail = f"scale {current.scale_eigs} -> {eigs}"
        return StepOutcome(stop=StepStop(StopReason.SCALE_JUMP, detail), method="method1")
    section = CrossSection(
        member_indices=inliers,
        plane=PlaneHypothesis.from_angles(theta, phi, cloud.positions[seed]),
        center=cloud.positions[inliers].mean(axis=0),
        scale_eigs=eigs,
        seed_index=seed,
    )
    return StepOutcome(section=section, method="method1")


def method2_step(cloud: PointCloud, cnct: ConnectivityGraph, delta_pd: float,
                 current: CrossSection, config: GrowConfig) -> StepOutcome:
    """Register the current section against the stepped neighborhood and
    keep the points it explains; the section frame rides the rotation.

    The neighborhood is the union of the banded components of the same plane
    fan method 1 would try, minus the current section's own points. Stops on
    a failed or non-converged registration, a mean best-match angle above
    the gate, or too few matched points.
    """
    target = current.center + config.step_factor * delta_pd * current.plane.normal
    base = PlaneHypothesis.from_normal(current.plane.normal, target)
    current_set = frozenset(current.member_indices.tolist())
    pool: set[int] = set()
    for theta, phi in local_plane_set(base.theta, base.phi, config.delta_ang_deg, config.k_step):
        n = normal_from_angles(theta, phi)
        dist = np.abs((cloud.positions - target) @ n)
        band = np.where(dist <= delta_pd)[0]
        if len(band) == 0:
            continue
        seed = _band_seed(cloud.positions, band, target)
        inliers = get_inliers(cloud, cnct, delta_pd, seed, n)
        if not _touches(cnct, inliers, current_set):
            continue
        pool.update(inliers.tolist())
    pool.difference_update(current.member_indices.tolist())
    y_indices = np.array(sorted(pool), dtype=np.intp)
    if len(y_indices) < config.min_section_points:
        return StepOutcome(stop=StepStop(StopReason.NO_POINTS, "stepped neighborhood empty"),
                           method="method2")

    X = cloud.subset(current.member_indices)
    Y = cloud.subset(y_indices)
    try:
        report = register(X, Y, config.registration)
    except RegistrationError as err:
        return StepOutcome(stop=StepStop(StopReason.REGISTRATION_MISMATCH, str(err)),
                           method="method2")
    if not report.converged:
        return StepOutcome(stop=StepStop(StopReason.REGISTRATION_MISMATCH,
                                         f"no convergence in {report.iterations} iterations"),
                           method="method2")
    if report.mean_best_match_angle > config.mismatch_angle_deg:
        return StepOutcome(stop=StepStop(StopReason.REGISTRATION_MISMATCH,
                                         f"best-match angle {report.mean_best_match_angle:.1f} deg"),
                           method="method2")

    selected = select_matched_points(X, Y, report, config.registration)
    members = np.sort(y_indices[selected])
    if len(members) < config.min_section_points:
        return StepOutcome(stop=StepStop(StopReason.NO_POINTS,
                                         f"only {len(members)} matched points"),
                           method="method2")
    center = cloud.positions[members].mean(axis=0)
    normal = report.params.rotation.T @ current.plane.normal
    section = CrossSection(
        member_indices=members,
        plane=PlaneHypothesis.from_normal(normal, center),
        center=center,
        scale_eigs=cluster_scale(cloud, members),
        seed_index=_band_seed(cloud.positions, members, center),
    )
    return StepOutcome(section=section, method="method2",
                       registration_cost=report.mean_best_match_angle)


# ---------------------------------------------------------------------------
# part growth
# ---------------------------------------------------------------------------

def _resigned(section: CrossSection, direction: np.ndarray) -> CrossSection:
    """Copy with the plane normal pointing along `direction`."""
    n = section.plane.normal
    if float(n @ direction) < 0.0:
        n = -n
    return CrossSection(
        member_indices=section.member_indices,
        plane=PlaneHypothesis.from_normal(n, section.plane.anchor),
        center=section.center,
        scale_eigs=section.scale_eigs,
        seed_index=section.seed_index,
    )


def _dedupe(cloud: PointCloud, section: CrossSection, visited: np.ndarray,
            config: GrowConfig, prev_center: np.ndarray) -> CrossSection | StepStop:
    """Drop already-claimed points; rebuild the section on what is fresh."""
    raw = section.member_indices
    n_old = int(visited[raw].sum())
    if n_old >= config.visited_stop_fraction * len(raw):
        return StepStop(StopReason.NO_POINTS,
                        f"{n_old}/{len(raw)} candidate points already claimed")
    fresh = raw[~visited[raw]]
    if len(fresh) < config.min_section_points:
        return StepStop(StopReason.NO_POINTS, f"only {len(fresh)} unclaimed points")
    if len(fresh) == len(raw):
        rebuilt = section
    else:
        center = cloud.positions[fresh].mean(axis=0)
        rebuilt = CrossSection(
            member_indices=fresh,
            plane=PlaneHypothesis.from_normal(section.plane.normal, center),
            center=center,
            scale_eigs=cluster_scale(cloud, fresh),
            seed_index=_band_seed(cloud.positions, fresh, center),
        )
    disp = rebuilt.center - prev_center
    if float(np.linalg.norm(disp)) > 0.0:
        rebuilt = _resigned(rebuilt, disp)
    return rebuilt


def grow_part(cloud: PointCloud, cnct: ConnectivityGraph, thr: AdaptiveThresholds,
              clustering: Clustering, seed_cluster_id: int,
              config: GrowConfig | None = None, part_id: int | None = None) -> Part:
    """Grow one part from a seed cluster's best cross-section.

    Raises:
        CrossSectionError: the seed admits no usable starting section; the
            caller is expected to drop this candidate.
    """
    config = config or GrowConfig()
    delta_pd = cluster_plane_threshold(clustering, thr, seed_cluster_id)
    seed_point = int(clustering.seeds[seed_cluster_id])
    seed_section = find_cross_section(cloud, cnct, delta_pd, seed_point)

    visited = np.zeros(len(cloud), dtype=bool)
    visited[seed_section.member_indices] = True
    costs: list[float] = []
    stops: dict[str, StepStop] = {}
    runs: dict[str, list[tuple[CrossSection, str]]] = {}

    for label, sign in (("backward", -1.0), ("forward", 1.0)):
        grown: list[tuple[CrossSection, str]] = []
        current = _resigned(seed_section, sign * seed_section.plane.normal)
        while True:
            step = method1_step if choose_method(current.n_members, config) == "method1" else method2_step
            outcome = step(cloud, cnct, delta_pd, current, config)
            if outcome.stop is not None:
                stops[label] = outcome.stop
                break
            result = _dedupe(cloud, outcome.section, visited, config, current.center)
            if isinstance(result, StepStop):
                stops[label] = result
                break
            visited[result.member_indices] = True
            grown.append((result, outcome.method))
            if outcome.registration_cost is not None:
                costs.append(outcome.registration_cost)
            current = result
        runs[label] = grown

    ordered = list(reversed(runs["backward"])) + [(seed_section, "seed")] + runs["forward"]
    return Part(
        part_id=seed_cluster_id if part_id is None else part_id,
        seed_cluster_id=seed_cluster_id,
        sections=[s for s, _ in ordered],
        provenance=[tag for _, tag in ordered],
        pair_registration_costs=costs,
        stop_reasons=stops,
    )
