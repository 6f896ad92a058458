"""Part scoring and the exact covering selection.

Each candidate part gets four raw costs: mean pairwise registration cost,
mean plane fit, axis length, and mean turning angle. These are z-scored
across the candidate population and combined with the length sign flipped
(longer parts are preferred, everything else equal):

    c_ovr = z_reg + z_fit - z_len + z_ang

Selection then minimizes total combined cost subject to covering at least
k1 percent of the points while keeping pairwise overlap below k2 percent,
solved exactly by depth-first branch and bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cloud import PointCloud
from .crosssec import plane_cost
from .grow import Part


@dataclass
class PartCosts:
    """Raw and normalized score components for one candidate part.

    c_reg is None when the part accumulated no pairwise registrations (a
    single section, or grown purely by plane stepping); normalization fills
    it with the worst observed value so such parts are never rewarded for
    missing evidence.
    """

    part_id: int
    n_sections: int
    c_reg: float | None
    c_fit: float
    c_len: float
    c_ang: float
    z_reg: float = math.nan
    z_fit: float = math.nan
    z_len: float = math.nan
    z_ang: float = math.nan
    c_ovr: float = math.nan

    @property
    def normalized(self) -> tuple[float, float, float, float]:
        return (self.z_reg, self.z_fit, self.z_len, self.z_ang)


def part_costs(part: Part, cloud: PointCloud) -> PartCosts:
    """Raw cost components; turning angles average over interior vertices."""
    fit = float(np.mean([plane_cost(cloud, s.member_indices, s.plane.normal)
                         for s in part.sections]))
    reg = float(np.mean(part.pair_registration_costs)) if part.pair_registration_costs else None
    axis = part.axis
    segments = np.diff(axis, axis=0)
    seg_len = np.linalg.norm(segments, axis=1)
    length = float(seg_len.sum())
    interior = len(axis) - 2
    if interior < 1:
        ang = 0.0
    else:
        total = 0.0
        for i in range(interior):
            a, b = segments[i], segments[i + 1]
            na, nb = seg_len[i], seg_len[i + 1]
            if na == 0.0 or nb == 0.0:
                continue
            dot = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
            total += math.degrees(math.acos(dot))
        ang = total / interior
    return PartCosts(part_id=part.part_id, n_sections=part.n_sections,
                     c_reg=reg, c_fit=fit, c_len=length, c_ang=ang)


def normalize_costs(all_costs: list[PartCosts],
                    include_single_sections: bool = True) -> list[PartCosts]:
    """Fill z-scores and c_ovr across the candidate population.

    With include_single_sections False, single-section parts are excluded
    from the mean/std estimation but still scored against it.

    Raises:
        ValueError: fewer than 2 parts in the normalization population.
    """
    if include_single_sections:
        pop_idx = list(range(len(all_costs)))
    else:
        pop_idx = [i for i, c in enumerate(all_costs) if c.n_sections > 1]
    if len(pop_idx) < 2:
        raise ValueError("normalization needs at least 2 candidate parts")

    observed = [c.c_reg for c in all_costs if c.c_reg is not None]
    reg_fill = max(observed) if observed else 0.0
    filled_reg = np.array([c.c_reg if c.c_reg is not None else reg_fill for c in all_costs])

    out = []
    columns = {}
    for name, values in (("reg", filled_reg),
                         ("fit", np.array([c.c_fit for c in all_costs])),
                         ("len", np.array([c.c_len for c in all_costs])),
                         ("ang", np.array([c.c_ang for c in all_costs]))):
        pop = values[pop_idx]
        std = float(pop.std())
        if std == 0.0:
            columns[name] = np.zeros(len(all_costs))
        else:
            columns[name] = (values - pop.mean()) / std
    for i, c in enumerate(all_costs):
        z_reg, z_fit = float(columns["reg"][i]), float(columns["fit"][i])
        z_len, z_ang = float(columns["len"][i]), float(columns["ang"][i])
        out.append(replace(c, z_reg=z_reg, z_fit=z_fit, z_len=z_len, z_ang=z_ang,
                           c_ovr=z_reg + z_fit - z_len + z_ang))
    return out


# ---------------------------------------------------------------------------
# the covering program
# ---------------------------------------------------------------------------

@dataclass
class SelectionProblem:
    """min c.x  s.t.  x.a >= (k1/100) N  and  x.Q.x <= (k2/100) N, x binary.

    Q is strictly upper triangular; a_i >= 1 for every candidate.
    """

    costs: np.ndarray              # (M,)
    coverage: np.ndarray           # (M,) int
    overlap: np.ndarray            # (M, M) int, strictly upper triangular
    n_points: int
    k1: float
    k2: float
    part_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        M = len(self.costs)
        if self.overlap.shape != (M, M) or len(self.coverage) != M:
            raise ValueError("inconsistent problem dimensions")
        if np.any(np.tril(self.overlap) != 0):
            raise ValueError("overlap matrix must be strictly upper triangular")
        if np.any(self.coverage < 1):
            raise ValueError("every candidate must cover at least one point")
        if not (0.0 <= self.k1 <= 100.0 and 0.0 <= self.k2 <= 100.0):
            raise ValueError("k1 and k2 are percentages")

    @property
    def n_candidates(self) -> int:
        return len(self.costs)


@dataclass
class Selection:
    chosen: np.ndarray             # (M,) bool
    objective: float
    covered_points: int
    overlap_points: int
    feasible: bool

    @property
    def chosen_indices(self) -> np.ndarray:
        return np.where(self.chosen)[0]


def build_selection_problem(parts: list[Part], costs: list[PartCosts],
                            n_points: int, k1: float, k2: float) -> SelectionProblem:
    if len(parts) != len(costs):
        raise ValueError("parts and costs misaligned")
    members = [p.member_set for p in parts]
    M = len(parts)
    Q = np.zeros((M, M), dtype=np.int64)
    for i in range(M):
        for j in range(i + 1, M):
            Q[i, j] = len(np.intersect1d(members[i], members[j], assume_unique=True))
    return SelectionProblem(
        costs=np.array([c.c_ovr for c in costs], dtype=np.float64),
        coverage=np.array([len(m) for m in members], dtype=np.int64),
        overlap=Q,
        n_points=n_points,
        k1=float(k1),
        k2=float(k2),
        part_ids=[p.part_id for p in parts],
    )


def solve_selection(problem: SelectionProblem) -> Selection:
    """Provably optimal selection by depth-first branch and bound.

    Parts are visited in ascending cost order, include-branch first. Bounds:
    the overlap constraint is monotone (prune once the budget is blown), the
    coverage still reachable is the suffix sum of remaining coverages, and
    no extension can improve the objective by more than the sum of negative
    remaining costs. Exhaustive over ties, so the optimum is exact; the
    first optimum in DFS order is returned, which fixes ties
    deterministically.
    """
    M = problem.n_candidates
    N = problem.n_points
    need_cov = problem.k1 * N          # compare as 100 * cov >= k1 * N
    max_ovl = problem.k2 * N
    order = sorted(range(M), key=lambda i: (problem.costs[i], i))
    cost_o = problem.costs[order]
    cov_o = problem.coverage[order]
    # symmetric lookup so overlapping pairs can be accumulated incrementally
    Qs = problem.overlap + problem.overlap.T
    Qs_o = Qs[np.ix_(order, order)]

    suffix_cov = np.zeros(M + 1, dtype=np.int64)
    suffix_neg = np.zeros(M + 1, dtype=np.float64)
    for i in range(M - 1, -1, -1):
        suffix_cov[i] = suffix_cov[i + 1] + cov_o[i]
        suffix_neg[i] = suffix_neg[i + 1] + min(cost_o[i], 0.0)

    best_x: np.ndarray | None = None
    best_obj = math.inf
    x = np.zeros(M, dtype=bool)

    def dfs(idx: int, cost: float, cov: int, ovl: int) -> None:
        nonlocal best_x, best_obj
        if 100.0 * ovl > max_ovl:
            return
        if 100.0 * cov >= need_cov and cost < best_obj:
            best_obj = cost
            best_x = x.copy()
        if idx == M:
            return
        if 100.0 * (cov + suffix_cov[idx]) < need_cov:
            return
        if cost + suffix_neg[idx] >= best_obj:
            return
        added = int(Qs_o[idx, :idx][x[:idx]].sum())
        x[idx] = True
        dfs(idx + 1, cost + cost_o[idx], cov + cov_o[idx], ovl + added)
        x[idx] = False
        dfs(idx + 1, cost, cov, ovl)

    dfs(0, 0.0, 0, 0)

    if best_x is None:
        return Selection(chosen=np.zeros(M, dtype=bool), objective=math.nan,
                         covered_points=0, overlap_points=0, feasible=False)
    chosen = np.zeros(M, dtype=bool)
    chosen[[order[i] for i in range(M) if best_x[i]]] = True
    cov = int(problem.coverage[chosen].sum())
    ovl = int(chosen @ problem.overlap @ chosen)
    return Selection(chosen=chosen, objective=float(best_obj),
                     covered_points=cov, overlap_points=ovl, feasible=True)


def _max_coverage(problem: SelectionProblem) -> int:
    """Largest x.a attainable within the overlap budget (exact)."""
    M = problem.n_candidates
    max_ovl = problem.k2 * problem.n_points
    order = sorted(range(M), key=lambda i: (-problem.coverage[i], i))
    cov_o = problem.coverage[order]
    Qs = problem.overlap + problem.overlap.T
    Qs_o = Qs[np.ix_(order, order)]
    suffix_cov = np.zeros(M + 1, dtype=np.int64)
    for i in range(M - 1, -1, -1):
        suffix_cov[i] = suffix_cov[i + 1] + cov_o[i]

    best = 0
    x = np.zeros(M, dtype=bool)

    def dfs(idx: int, cov: int, ovl: int) -> None:
        nonlocal best
        if 100.0 * ovl > max_ovl:
            return
        best = max(best, cov)
        if idx == M or cov + suffix_cov[idx] <= best:
            return
        added = int(Qs_o[idx, :idx][x[:idx]].sum())
        x[idx] = True
        dfs(idx + 1, cov + cov_o[idx], ovl + added)
        x[idx] = False
        dfs(idx + 1, cov, ovl)

    dfs(0, 0, 0)
    return best


def max_feasible_k1(problem: SelectionProblem, start: float = 90.0) -> int:
    """Largest whole-percent k1 for which the program stays feasible.

    Equivalent to probing the 1-point grid up and down from `start` (the
    k1 axis of feasibility is monotone), but computed from one exact
    max-coverage solve: k1 is feasible iff k1 * N <= 100 * max_cov.
    """
    if not 0.0 <= start <= 100.0:
        raise ValueError("start is a percentage")
    if problem.n_points <= 0:
        raise ValueError("empty problem")
    cov = _max_coverage(problem)
    return int(min(100, (100 * cov) // problem.n_points))
