"""Part scoring, z-score normalization and the covering selection solver."""

import itertools

import numpy as np
import pytest

from gcskel.cloud import PointCloud
from gcskel.crosssec import CrossSection, PlaneHypothesis
from gcskel.grow import Part
from gcskel.select import (
    PartCosts,
    SelectionProblem,
    max_feasible_k1,
    normalize_costs,
    part_costs,
    solve_selection,
)

Z = np.array([0.0, 0.0, 1.0])


def _ring_cloud(centers, r=0.5, k=6):
    """k-point rings with radial normals stacked at the given centers."""
    t = np.linspace(0, 2 * np.pi, k, endpoint=False)
    ring = np.column_stack([r * np.cos(t), r * np.sin(t), np.zeros(k)])
    nrm = np.column_stack([np.cos(t), np.sin(t), np.zeros(k)])
    pos = np.vstack([ring + c for c in centers])
    return PointCloud(pos, np.vstack([nrm] * len(centers)))


def _part_at(centers, pair_costs=(), part_id=0, normal=Z):
    centers = [np.asarray(c, dtype=np.float64) for c in centers]
    k = 6
    sections = []
    for i, c in enumerate(centers):
        idx = np.arange(i * k, (i + 1) * k, dtype=np.intp)
        sections.append(CrossSection(
            member_indices=idx,
            plane=PlaneHypothesis.from_normal(np.asarray(normal, float), c),
            center=c,
            scale_eigs=(0.125, 0.125),
            seed_index=int(idx[0]),
        ))
    provenance = ["seed"] + ["method1"] * (len(sections) - 1)
    return Part(part_id=part_id, seed_cluster_id=part_id, sections=sections,
                provenance=provenance, pair_registration_costs=list(pair_costs),
                stop_reasons={})


def _costs(part_id, reg, fit, length, ang, n_sections=4):
    return PartCosts(part_id=part_id, n_sections=n_sections, c_reg=reg,
                     c_fit=fit, c_len=length, c_ang=ang)


def _problem(costs, coverage, overlap, n, k1, k2):
    coverage = np.asarray(coverage, dtype=np.intp)
    m = len(coverage)
    Q = np.zeros((m, m))
    for (i, j), v in overlap.items():
        Q[min(i, j), max(i, j)] = v
    return SelectionProblem(costs=np.asarray(costs, dtype=np.float64),
                            coverage=coverage, overlap=Q, n_points=n,
                            k1=k1, k2=k2, part_ids=list(range(m)))


def _brute(problem):
    """Exhaustive Eq.-style optimum: (objective, chosen tuple) or None."""
    m = len(problem.coverage)
    best = None
    need = problem.k1 / 100.0 * problem.n_points
    budget = problem.k2 / 100.0 * problem.n_points
    for bits in itertools.product([0, 1], repeat=m):
        x = np.array(bits, dtype=np.float64)
        if x @ problem.coverage < need - 1e-9:
            continue
        if x @ problem.overlap @ x > budget + 1e-9:
            continue
        obj = float(problem.costs @ x)
        if best is None or obj < best[0] - 1e-12:
            best = (obj, bits)
    return best


# ---------------------------------------------------------------------------
# raw cost components
# ---------------------------------------------------------------------------

def test_straight_part_costs():
    d = 0.7
    centers = [[0.0, 0, i * d] for i in range(4)]
    cloud = _ring_cloud(centers)
    part = _part_at(centers, pair_costs=[5.0, 15.0])
    pc = part_costs(part, cloud)
    assert pc.c_len == pytest.approx(3 * d, abs=1e-12)
    assert pc.c_ang == pytest.approx(0.0, abs=1e-9)
    assert pc.c_fit < 1e-6
    assert pc.c_reg == pytest.approx(10.0)


def test_right_angle_turning_cost():
    centers = [[0.0, 0, 0], [1.0, 0, 0], [1.0, 1.0, 0]]
    cloud = _ring_cloud(centers)
    part = _part_at(centers, normal=[1.0, 0, 0])
    pc = part_costs(part, cloud)
    assert pc.c_ang == pytest.approx(90.0, abs=1e-9)
    assert pc.c_len == pytest.approx(2.0, abs=1e-12)


def test_single_section_part_has_no_pair_cost():
    centers = [[0.0, 0, 0]]
    cloud = _ring_cloud(centers)
    pc = part_costs(_part_at(centers), cloud)
    assert pc.c_reg is None
    assert pc.c_len == 0.0
    assert pc.c_ang == 0.0


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_two_point_z_scores():
    a = _costs(0, reg=10.0, fit=0.2, length=5.0, ang=30.0)
    b = _costs(1, reg=20.0, fit=0.4, length=9.0, ang=50.0)
    na, nb = normalize_costs([a, b])
    assert na.z_reg == pytest.approx(-1.0)
    assert nb.z_reg == pytest.approx(1.0)
    assert na.c_ovr == pytest.approx(na.z_reg + na.z_fit - na.z_len + na.z_ang)
    assert nb.c_ovr == pytest.approx(nb.z_reg + nb.z_fit - nb.z_len + nb.z_ang)


def test_constant_component_contributes_nothing():
    parts = [_costs(i, reg=7.0, fit=0.1 * i, length=3.0 + i, ang=10.0 * i)
             for i in range(4)]
    out = normalize_costs(parts)
    assert all(c.z_reg == 0.0 for c in out)


def test_missing_registration_filled_with_worst_observed():
    a = _costs(0, reg=4.0, fit=0.1, length=2.0, ang=5.0)
    b = _costs(1, reg=12.0, fit=0.2, length=3.0, ang=6.0)
    c = _costs(2, reg=None, fit=0.3, length=4.0, ang=7.0, n_sections=1)
    na, nb, nc = normalize_costs([a, b, c])
    assert nc.z_reg == pytest.approx(nb.z_reg)
    assert nc.z_reg > na.z_reg


def test_lowering_registration_cost_never_hurts():
    others = [_costs(1, reg=15.0, fit=0.3, length=4.0, ang=20.0),
              _costs(2, reg=25.0, fit=0.5, length=6.0, ang=40.0)]
    prev = None
    for reg in (30.0, 20.0, 10.0, 5.0, 1.0):
        me = _costs(0, reg=reg, fit=0.2, length=5.0, ang=30.0)
        mine = normalize_costs([me] + others)[0]
        if prev is not None:
            assert mine.c_ovr <= prev + 1e-9
        prev = mine.c_ovr


def test_normalization_needs_two_parts():
    with pytest.raises(ValueError):
        normalize_costs([_costs(0, reg=1.0, fit=0.1, length=1.0, ang=1.0)])


# ---------------------------------------------------------------------------
# selection solver
# ---------------------------------------------------------------------------

def test_three_disjoint_parts_pick_the_cheap_pair():
    p = _problem([1.0, 2.0, 3.0], [10, 10, 10], {}, n=20, k1=90.0, k2=5.0)
    sel = solve_selection(p)
    assert sel.feasible
    np.testing.assert_array_equal(sel.chosen, [True, True, False])
    assert sel.objective == pytest.approx(3.0)
    assert sel.covered_points == 20


def test_zero_coverage_floor_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = 5
        costs = rng.normal(size=m)
        coverage = rng.integers(1, 30, size=m)
        overlap = {(i, j): int(rng.integers(0, 5))
                   for i in range(m) for j in range(i + 1, m)}
        p = _problem(costs, coverage, overlap, n=60, k1=0.0, k2=10.0)
        sel = solve_selection(p)
        obj, bits = _brute(p)
        assert sel.feasible
        assert sel.objective == pytest.approx(obj, abs=1e-9)


def test_identical_twins_cannot_both_be_kept():
    p = _problem([1.0, 1.5], [10, 10], {(0, 1): 10}, n=10, k1=90.0, k2=5.0)
    sel = solve_selection(p)
    assert sel.feasible
    assert sel.chosen.sum() == 1
    assert sel.chosen[0]


def test_unreachable_coverage_reports_infeasible():
    p = _problem([1.0], [5], {}, n=10, k1=100.0, k2=5.0)
    sel = solve_selection(p)
    assert not sel.feasible


def test_solver_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(42)
    for trial in range(30):
        m = int(rng.integers(2, 9))
        costs = rng.normal(size=m) * 2.0
        coverage = rng.integers(1, 40, size=m)
        overlap = {}
        for i in range(m):
            for j in range(i + 1, m):
                if rng.random() < 0.4:
                    overlap[(i, j)] = int(rng.integers(1, min(coverage[i], coverage[j]) + 1))
        n = int(coverage.sum() * rng.uniform(0.7, 1.2)) + 1
        p = _problem(costs, coverage, overlap, n=n,
                     k1=float(rng.uniform(0, 100)), k2=float(rng.uniform(0, 15)))
        sel = solve_selection(p)
        brute = _brute(p)
        if brute is None:
            assert not sel.feasible
        else:
            assert sel.feasible
            assert sel.objective == pytest.approx(brute[0], abs=1e-9)


def test_reported_slack_matches_recomputation():
    rng = np.random.default_rng(7)
    m = 6
    coverage = rng.integers(5, 25, size=m)
    overlap = {(i, j): int(rng.integers(0, 4)) for i in range(m) for j in range(i + 1, m)}
    p = _problem(rng.normal(size=m), coverage, overlap, n=80, k1=40.0, k2=8.0)
    sel = solve_selection(p)
    x = sel.chosen.astype(np.float64)
    assert sel.covered_points == int(x @ p.coverage)
    assert sel.overlap_points == int(x @ p.overlap @ x)


def test_selection_invariant_under_affine_cost_rescaling():
    raws = [_costs(0, reg=5.0, fit=0.1, length=8.0, ang=10.0),
            _costs(1, reg=9.0, fit=0.4, length=3.0, ang=35.0),
            _costs(2, reg=2.0, fit=0.7, length=5.0, ang=20.0)]
    rescaled = [_costs(c.part_id, reg=3.0 * c.c_reg + 7.0, fit=11.0 * c.c_fit + 0.5,
                       length=2.0 * c.c_len + 1.0, ang=0.5 * c.c_ang + 4.0)
                for c in raws]
    cov, ov, n = [12, 9, 14], {(0, 1): 2, (1, 2): 1}, 30

    def solve(costs):
        norm = normalize_costs(costs)
        return solve_selection(_problem([c.c_ovr for c in norm], cov, ov, n,
                                        k1=60.0, k2=10.0))

    np.testing.assert_array_equal(solve(raws).chosen, solve(rescaled).chosen)


# ---------------------------------------------------------------------------
# coverage probing
# ---------------------------------------------------------------------------

def test_partial_cover_caps_the_threshold():
    p = _problem([1.0, 1.0], [50, 37], {}, n=100, k1=90.0, k2=5.0)
    assert max_feasible_k1(p) == 87


def test_full_cover_allows_everything():
    p = _problem([1.0, 1.0], [60, 40], {}, n=100, k1=90.0, k2=5.0)
    assert max_feasible_k1(p) == 100


def test_threshold_matches_oracle_scan():
    rng = np.random.default_rng(3)
    m = 5
    coverage = rng.integers(5, 30, size=m)
    overlap = {(i, j): int(rng.integers(0, 6)) for i in range(m) for j in range(i + 1, m)}
    p = _problem(rng.normal(size=m), coverage, overlap, n=70, k1=90.0, k2=6.0)
    got = max_feasible_k1(p)
    feasible = [k1 for k1 in range(101)
                if _brute(_problem(p.costs, p.coverage,
                                   {(i, j): p.overlap[i, j] for i in range(m)
                                    for j in range(i + 1, m)},
                                   70, float(k1), 6.0)) is not None]
    assert got == max(feasible)


# ---------------------------------------------------------------------------
# problem validation
# ---------------------------------------------------------------------------

def test_problem_rejects_empty_parts_and_bad_percentages():
    with pytest.raises(ValueError):
        _problem([1.0, 1.0], [10, 0], {}, n=20, k1=50.0, k2=5.0)
    with pytest.raises(ValueError):
        _problem([1.0], [10], {}, n=20, k1=101.0, k2=5.0)
    with pytest.raises(ValueError):
        _problem([1.0], [10], {}, n=20, k1=50.0, k2=-1.0)
