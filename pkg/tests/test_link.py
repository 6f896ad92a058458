"""Joining grown parts: adjacency, end-to-end merges, junctions, skeleton."""

import numpy as np
import pytest
from scipy.spatial import Delaunay

from gcskel.cloud import PointCloud
from gcskel.crosssec import CrossSection, PlaneHypothesis
from gcskel.grow import Part
from gcskel.link import (
    Junction,
    PartAdjacency,
    assemble_skeleton,
    build_skeleton,
    junction_point,
    merge_pass,
    potential_links,
    resolve_components,
    try_merge,
)

from conftest import graph_stack

Z = np.array([0.0, 0.0, 1.0])


def _section(indices, center, normal=Z, eigs=(0.5, 0.5)):
    indices = np.sort(np.asarray(indices, dtype=np.intp))
    return CrossSection(
        member_indices=indices,
        plane=PlaneHypothesis.from_normal(np.asarray(normal, dtype=np.float64),
                                          np.asarray(center, dtype=np.float64)),
        center=np.asarray(center, dtype=np.float64),
        scale_eigs=eigs,
        seed_index=int(indices[0]),
    )


def _part(sections, part_id):
    return Part(part_id=part_id, seed_cluster_id=part_id, sections=sections,
                provenance=["seed"] + ["method1"] * (len(sections) - 1),
                stop_reasons={})


def _ring_part(cloud, gt, slice_ids, part_id):
    """One section per sampled ring of a straight tube."""
    sections = []
    for k in slice_ids:
        idx = np.sort(gt.slice_indices(k))
        sections.append(_section(idx, cloud.positions[idx].mean(axis=0)))
    return _part(sections, part_id)


def _ring_points(center, radius, tilt_deg=0.0, n=30):
    """Circle in the xy-plane; normals tilted out of plane by tilt_deg."""
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    radial = np.column_stack([np.cos(t), np.sin(t), np.zeros_like(t)])
    a = np.radians(tilt_deg)
    normals = np.cos(a) * radial + np.sin(a) * Z
    return np.asarray(center, dtype=np.float64) + radius * radial, normals


def _halfline_distance(p, origin, direction):
    s = max(0.0, float((p - origin) @ direction))
    return float(np.linalg.norm(p - origin - s * direction))


@pytest.fixture(scope="module")
def tube_halves(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    a = _ring_part(cloud, gt, range(0, 10), 0)
    b = _ring_part(cloud, gt, range(10, 20), 1)
    return cloud, gt, cnct, a, b


# ---------------------------------------------------------------------------
# potential links
# ---------------------------------------------------------------------------

def test_abutting_halves_share_an_edge(tube_halves):
    cloud, _, cnct, a, b = tube_halves
    adjacency = potential_links([a, b], cnct)
    assert adjacency.part_ids == [0, 1]
    assert set(adjacency.endpoints) == {(0, 1)}
    # the facing ends: top of the lower half, bottom of the upper half
    assert adjacency.endpoints[(0, 1)] == (1, 0)


def test_distant_parts_have_no_edge(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    a = _ring_part(cloud, gt, range(0, 5), 0)
    b = _ring_part(cloud, gt, range(15, 20), 1)
    adjacency = potential_links([a, b], cnct)
    assert adjacency.endpoints == {}
    assert adjacency.components() == [[0], [1]]


def test_adjacency_matches_brute_force_neighbor_check():
    # five gaussian blobs: a chain of three, a touching pair, and a gap
    rng = np.random.default_rng(7)
    centers = np.array([[0, 0, 0], [0.9, 0, 0], [1.8, 0, 0],
                        [7, 0, 0], [7, 0.9, 0]], dtype=np.float64)
    pos = np.vstack([c + rng.normal(scale=0.22, size=(60, 3)) for c in centers])
    cloud = PointCloud(pos)
    _, _, cnct = graph_stack(cloud)

    parts = []
    for k in range(5):
        idx = np.arange(k * 60, (k + 1) * 60, dtype=np.intp)
        halves = (idx[:30], idx[30:])
        parts.append(_part([_section(h, pos[h].mean(axis=0)) for h in halves], k))

    adjacency = potential_links(parts, cnct)

    owner = np.repeat(np.arange(5), 60)
    oracle = set()
    for i in range(len(cloud)):
        for q in cnct.neighbors[i]:
            if owner[i] != owner[q]:
                oracle.add((int(min(owner[i], owner[q])), int(max(owner[i], owner[q]))))
    assert {(int(a), int(b)) for a, b in adjacency.endpoints} == oracle
    # the fixture is only informative if some pairs touch and some do not
    assert oracle == {(0, 1), (1, 2), (3, 4)}


def test_duplicate_part_ids_rejected(tube_halves):
    cloud, gt, cnct, a, _ = tube_halves
    twin = _ring_part(cloud, gt, range(10, 20), 0)
    with pytest.raises(ValueError):
        potential_links([a, twin], cnct)


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

def test_split_tube_merges_back_together(tube_halves):
    cloud, _, cnct, a, b = tube_halves
    outcome = try_merge(cloud, a, 1, b, 0, cnct)
    assert outcome.reason is None
    merged = outcome.part
    assert merged.part_id == 0
    assert merged.n_sections == 20
    assert merged.merge_seams == [9]
    assert np.array_equal(merged.member_set,
                          np.sort(np.concatenate([a.member_set, b.member_set])))
    # joined axis stays a straight line through the seam
    segs = np.diff(merged.axis, axis=0)
    segs /= np.linalg.norm(segs, axis=1, keepdims=True)
    kinks = np.degrees(np.arccos(np.clip(np.sum(segs[:-1] * segs[1:], axis=1), -1, 1)))
    assert np.all(kinks < 5.0)
    assert np.all(np.diff(merged.axis[:, 2]) > 0)


def test_merge_is_symmetric_in_argument_order(tube_halves):
    cloud, _, cnct, a, b = tube_halves
    fwd = try_merge(cloud, a, 1, b, 0, cnct)
    rev = try_merge(cloud, b, 0, a, 1, cnct)
    assert rev.reason is None
    assert rev.part.part_id == fwd.part.part_id
    assert rev.cost == fwd.cost
    assert np.allclose(rev.part.axis, fwd.part.axis)


def test_contact_gate_blocks_distant_ends(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    a = _ring_part(cloud, gt, range(0, 5), 0)
    b = _ring_part(cloud, gt, range(15, 20), 1)
    blocked = try_merge(cloud, a, 1, b, 0, cnct)
    assert blocked.part is None
    assert blocked.reason == "no-contact"
    # identical rings register across any gap; distance is policed by the
    # contact gate alone, so dropping the graph lets the same pair through
    free = try_merge(cloud, a, 1, b, 0, None)
    assert free.reason is None


def test_mismatched_orientations_rejected_by_angle():
    # a cylinder ring meeting a steep cone: positions align at the identity
    # but no similarity maps one normal fan onto the other, so the
    # registration reports the tilt itself as its angle cost
    pa, na = _ring_points(np.zeros(3), 0.5, tilt_deg=0.0)
    pb, nb = _ring_points(np.array([0.0, 0.0, 0.3]), 0.5, tilt_deg=50.0)
    cloud = PointCloud(np.vstack([pa, pb]), np.vstack([na, nb]))
    a = _part([_section(np.arange(30), np.zeros(3), eigs=(0.125, 0.125))], 0)
    b = _part([_section(np.arange(30, 60), [0.0, 0.0, 0.3], eigs=(0.125, 0.125))], 1)
    outcome = try_merge(cloud, a, 0, b, 0)
    assert outcome.part is None
    assert outcome.reason == "angle"
    assert outcome.cost == pytest.approx(50.0, abs=1.0)


def test_perpendicular_rings_register_in_spite_of_orientation():
    # circular sections are degenerate for this test: some 90-degree
    # similarity maps any ring onto any other, and the registration finds
    # it, so perpendicular tube ends pass the angle gate; keeping separate
    # limbs apart falls to the contact gate and endpoint designation
    pa, na = _ring_points(np.zeros(3), 0.5)
    t = np.linspace(0.0, 2.0 * np.pi, 30, endpoint=False)
    radial = np.column_stack([np.zeros_like(t), np.cos(t), np.sin(t)])
    pb = np.array([0.0, 0.0, 0.9]) + 0.8 * radial
    cloud = PointCloud(np.vstack([pa, pb]), np.vstack([na, radial]))
    a = _part([_section(np.arange(30), np.zeros(3))], 0)
    b = _part([_section(np.arange(30, 60), [0.0, 0.0, 0.9],
                        normal=np.array([1.0, 0.0, 0.0]))], 1)
    outcome = try_merge(cloud, a, 0, b, 0)
    assert outcome.reason is None
    assert outcome.cost < 35.0


def test_scale_mismatch_rejected():
    pa, na = _ring_points(np.zeros(3), 0.5)
    pb, nb = _ring_points(np.array([0.0, 0.0, 0.3]), 1.25)
    cloud = PointCloud(np.vstack([pa, pb]), np.vstack([na, nb]))
    a = _part([_section(np.arange(30), np.zeros(3))], 0)
    b = _part([_section(np.arange(30, 60), [0.0, 0.0, 0.3])], 1)
    outcome = try_merge(cloud, a, 0, b, 0)
    assert outcome.part is None
    assert outcome.reason == "scale"
    # the normals still lined up; only the 2.5x factor was at fault
    assert outcome.cost < 35.0


def test_tiny_end_section_fails_registration(small_tube):
    cloud, gt = small_tube
    stub = _part([_section([0, 1], cloud.positions[[0, 1]].mean(axis=0))], 0)
    other = _ring_part(cloud, gt, range(0, 2), 1)
    outcome = try_merge(cloud, stub, 0, other, 0)
    assert outcome.part is None
    assert outcome.reason == "registration-failure"


def test_chain_merge_order_is_commutative(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    p0 = _ring_part(cloud, gt, range(0, 6), 0)
    p1 = _ring_part(cloud, gt, range(6, 13), 1)
    p2 = _ring_part(cloud, gt, range(13, 20), 2)

    left_first = try_merge(cloud, try_merge(cloud, p0, 1, p1, 0, cnct).part,
                           1, p2, 0, cnct).part
    right_first = try_merge(cloud, p0, 1,
                            try_merge(cloud, p1, 1, p2, 0, cnct).part, 0, cnct).part
    assert np.array_equal(left_first.member_set, right_first.member_set)
    assert np.allclose(left_first.axis, right_first.axis)
    assert left_first.merge_seams == right_first.merge_seams == [5, 12]


def test_merge_pass_collapses_a_chain(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    pieces = [_ring_part(cloud, gt, range(0, 6), 0),
              _ring_part(cloud, gt, range(6, 13), 1),
              _ring_part(cloud, gt, range(13, 20), 2)]
    parts, adjacency = merge_pass(cloud, pieces, cnct)
    assert len(parts) == 1
    assert parts[0].n_sections == 20
    assert parts[0].merge_seams == [5, 12]
    assert adjacency.endpoints == {}


def test_merge_pass_leaves_distant_parts_alone(small_tube, small_tube_graphs):
    cloud, gt = small_tube
    _, _, cnct = small_tube_graphs
    pieces = [_ring_part(cloud, gt, range(0, 5), 0),
              _ring_part(cloud, gt, range(15, 20), 1)]
    parts, adjacency = merge_pass(cloud, pieces, cnct)
    assert [p.part_id for p in parts] == [0, 1]
    assert [p.n_sections for p in parts] == [5, 5]
    assert adjacency.endpoints == {}


# ---------------------------------------------------------------------------
# junction points
# ---------------------------------------------------------------------------

def test_concurrent_rays_meet_at_the_common_point():
    angles = [0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0]
    rays = []
    for t in angles:
        origin = np.array([2.0 * np.cos(t), 2.0 * np.sin(t), 0.0])
        rays.append((origin, -origin / np.linalg.norm(origin)))
    vertex = junction_point(rays)
    assert np.linalg.norm(vertex) < 1e-6


def test_parallel_rays_settle_on_one_ray_at_the_offset_cost():
    offset = 0.8
    r1 = (np.zeros(3), Z.copy())
    r2 = (np.array([offset, 0.0, 0.0]), Z.copy())
    vertex = junction_point([r1, r2])
    d1 = _halfline_distance(vertex, *r1)
    d2 = _halfline_distance(vertex, *r2)
    # the winner sits on one of the rays, and its whole cost is the offset
    assert min(d1, d2) < 1e-7
    assert max(d1, d2) == pytest.approx(offset, abs=1e-6)


def test_four_ray_bundle_lands_inside_the_endpoint_hull():
    origins = np.array([[2.0, 2.0, 2.0], [2.0, -2.0, -2.0],
                        [-2.0, 2.0, -2.0], [-2.0, -2.0, 2.0]])
    rng = np.random.default_rng(3)
    rays = []
    for origin in origins:
        d = -origin + rng.normal(scale=0.1, size=3)
        rays.append((origin, d / np.linalg.norm(d)))
    vertex = junction_point(rays)
    assert Delaunay(origins).find_simplex(vertex) >= 0


def test_fewer_than_two_rays_rejected():
    with pytest.raises(ValueError):
        junction_point([])
    with pytest.raises(ValueError):
        junction_point([(np.zeros(3), Z.copy())])


# ---------------------------------------------------------------------------
# component resolution
# ---------------------------------------------------------------------------

def _stick(far, near, part_id):
    """Two-section part with its end 1 at `near`; geometry only."""
    far = np.asarray(far, dtype=np.float64)
    near = np.asarray(near, dtype=np.float64)
    k = part_id * 12
    return _part([_section(np.arange(k, k + 6), far),
                  _section(np.arange(k + 6, k + 12), near)], part_id)


def _star_fixture():
    """Four sticks whose inner ends point straight at the origin."""
    tips = np.array([[-2, 0, 0], [2, 0, 0], [0, -2, 0], [0, 2, 0]], dtype=np.float64)
    parts = [_stick(tip, tip * 0.2, k) for k, tip in enumerate(tips)]
    endpoints = {(a, b): (1, 1) for a in range(4) for b in range(a + 1, 4)}
    return parts, PartAdjacency(part_ids=[0, 1, 2, 3], endpoints=endpoints)


def test_star_component_resolves_to_one_junction():
    parts, adjacency = _star_fixture()
    junctions, links = resolve_components(adjacency, parts)
    assert links == []
    assert len(junctions) == 1
    assert junctions[0].attachments == [(0, 1), (1, 1), (2, 1), (3, 1)]
    # the four inward rays are exactly concurrent at the origin
    assert np.linalg.norm(junctions[0].vertex) < 1e-6


def test_ring_of_parts_degrades_to_pairwise_links():
    # a triangle of parts: part 0 participates with both of its ends, which
    # disqualifies the component from getting a junction vertex
    corners = np.array([[0, 0, 0], [4, 0, 0], [2, 3, 0]], dtype=np.float64)
    parts = [_stick(corners[0], corners[1], 0),
             _stick(corners[1], corners[2], 1),
             _stick(corners[2], corners[0], 2)]
    adjacency = PartAdjacency(
        part_ids=[0, 1, 2],
        endpoints={(0, 1): (1, 0), (1, 2): (1, 0), (0, 2): (0, 1)},
    )
    junctions, links = resolve_components(adjacency, parts)
    assert junctions == []
    assert links == [((0, 1), (1, 0)), ((0, 0), (2, 1)), ((1, 1), (2, 0))]


def test_two_part_component_gets_a_single_link():
    parts = [_stick([0, 0, 0], [1, 0, 0], 0), _stick([3, 0, 0], [1.4, 0, 0], 1)]
    adjacency = PartAdjacency(part_ids=[0, 1], endpoints={(0, 1): (1, 1)})
    junctions, links = resolve_components(adjacency, parts)
    assert junctions == []
    assert links == [((0, 1), (1, 1))]


# ---------------------------------------------------------------------------
# skeleton assembly
# ---------------------------------------------------------------------------

def test_single_part_skeleton_is_its_axis():
    centers = [[0, 0, 0], [0, 0, 1], [0, 0, 2], [0, 0, 3]]
    part = _part([_section(np.arange(k * 6, (k + 1) * 6), c)
                  for k, c in enumerate(centers)], 0)
    skeleton = assemble_skeleton([part], [], [])
    assert np.allclose(skeleton.vertices, part.axis)
    assert skeleton.edges == [(0, 1), (1, 2), (2, 3)]
    assert skeleton.kinds == ["axis"] * 3
    assert skeleton.provenance == [0] * 3
    assert skeleton.leaf_count == 2
    assert skeleton.n_components == 1
    assert np.array_equal(skeleton.degree(), [1, 2, 2, 1])


def test_shared_endpoints_pool_to_one_vertex():
    a = _part([_section([0, 1, 2], [0, 0, 0]), _section([3, 4, 5], [1, 0, 0])], 0)
    b = _part([_section([6, 7, 8], [1, 0, 0]), _section([9, 10, 11], [2, 0, 0])], 1)
    skeleton = assemble_skeleton([a, b], [], [((0, 1), (1, 0))])
    # the coincident endpoints collapse, and the link becomes a no-op loop
    assert skeleton.n_vertices == 3
    assert sorted(skeleton.edges) == [(0, 1), (1, 2)]
    assert skeleton.kinds == ["axis", "axis"]
    assert len(set(skeleton.edges)) == len(skeleton.edges)
    assert skeleton.n_components == 1


def test_star_assembly_wires_a_degree_four_junction():
    parts, adjacency = _star_fixture()
    junctions, links = resolve_components(adjacency, parts)
    skeleton = assemble_skeleton(parts, junctions, links)
    assert skeleton.n_vertices == 9
    assert skeleton.n_components == 1
    assert skeleton.leaf_count == 4
    assert skeleton.kinds.count("axis") == 4
    assert skeleton.kinds.count("link") == 4
    for kind, pid in zip(skeleton.kinds, skeleton.provenance):
        assert (pid is None) == (kind == "link")
    # the junction vertex is the only one allowed degree >= 3
    degrees = skeleton.degree()
    junction_vertex = int(np.argmax(degrees))
    assert degrees[junction_vertex] == 4
    assert np.linalg.norm(skeleton.vertices[junction_vertex]) < 1e-6
    assert np.all(np.delete(degrees, junction_vertex) <= 2)


def test_skeleton_serialization_round_trip():
    parts, adjacency = _star_fixture()
    junctions, links = resolve_components(adjacency, parts)
    skeleton = assemble_skeleton(parts, junctions, links)

    payload = skeleton.to_json_dict()
    assert payload["schema"] == "skeleton/1"
    assert len(payload["vertices"]) == skeleton.n_vertices
    assert len(payload["edges"]) == len(skeleton.edges)
    for record, (u, v), kind, pid in zip(payload["edges"], skeleton.edges,
                                         skeleton.kinds, skeleton.provenance):
        assert (record["u"], record["v"]) == (u, v)
        assert record["kind"] == kind
        assert record["part"] == pid

    text = skeleton.to_obj_str()
    lines = text.strip().splitlines()
    assert lines[0].startswith("#")
    v_lines = [l for l in lines if l.startswith("v ")]
    l_lines = [l for l in lines if l.startswith("l ")]
    assert len(v_lines) == skeleton.n_vertices
    assert len(l_lines) == len(skeleton.edges)
    parsed = [tuple(int(tok) - 1 for tok in l.split()[1:]) for l in l_lines]
    assert parsed == skeleton.edges


def test_build_skeleton_merges_then_assembles(tube_halves):
    cloud, _, cnct, a, b = tube_halves
    skeleton, merged = build_skeleton(cloud, cnct, [a, b])
    assert len(merged) == 1
    assert merged[0].n_sections == 20
    assert skeleton.n_vertices == 20
    assert skeleton.n_components == 1
    assert skeleton.leaf_count == 2
    assert skeleton.kinds.count("merge") == 1
    assert "link" not in skeleton.kinds
    # every axis vertex appears exactly once
    assert len({tuple(np.round(v, 9)) for v in skeleton.vertices}) == 20
