"""Skeleton assembly: merging collinear parts, junctions, and links.

Selected parts first try to merge end-to-end wherever their point sets touch
in the connectivity graph: the two end sections are registered and the merge
is accepted under an angle gate and a scale-near-one gate. What remains is a
graph of parts; each connected component either earns a junction vertex
(three or more parts, every part meeting the others at one consistent
endpoint) or plain endpoint-to-endpoint links per adjacency edge. Part axes
are emitted verbatim, so the final graph contains every section center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cloud import PointCloud
from .graphs import ConnectivityGraph
from .grow import Part
from .register import RegConfig, RegistrationError, register


@dataclass
class LinkConfig:
    merge_angle_deg: float = 35.0
    merge_scale_tol: float = 0.5       # on |1 - s|
    junction_scan: int = 50            # coarse samples before golden section
    junction_tol: float = 1e-9
    junction_range_factor: float = 3.0  # of the component diameter
    registration: RegConfig = field(default_factory=RegConfig)


@dataclass
class PartAdjacency:
    """Undirected potential-link graph over part ids.

    endpoints[(a, b)] with a < b holds the designated (end_a, end_b) pair,
    ends tagged 0 (first section) and 1 (last section).
    """

    part_ids: list[int]
    endpoints: dict[tuple[int, int], tuple[int, int]]

    def edges_of(self, part_id: int) -> list[tuple[int, int]]:
        return [e for e in self.endpoints if part_id in e]

    def components(self) -> list[list[int]]:
        remaining = set(self.part_ids)
        comps = []
        while remaining:
            start = min(remaining)
            stack, comp = [start], set()
            while stack:
                i = stack.pop()
                if i in comp:
                    continue
                comp.add(i)
                for a, b in self.endpoints:
                    if a == i and b not in comp:
                        stack.append(b)
                    elif b == i and a not in comp:
                        stack.append(a)
            comps.append(sorted(comp))
            remaining -= comp
        return comps


def _end_vertex(part: Part, end: int) -> np.ndarray:
    return part.axis[0] if end == 0 else part.axis[-1]


def _end_section_members(part: Part, end: int) -> np.ndarray:
    return part.sections[0 if end == 0 else -1].member_indices


def potential_links(parts: list[Part], cnct: ConnectivityGraph) -> PartAdjacency:
    """Parts are potentially linked iff some point of one neighbors a point
    of the other. Each edge designates one endpoint per side: an end whose
    terminal section touches the other part participates; if neither end of
    a side touches, both its ends stay candidates; the nearest candidate
    pair wins, ties toward lower end tags."""
    ids = [p.part_id for p in parts]
    if len(set(ids)) != len(ids):
        raise ValueError("parts must have distinct ids")
    by_id = {p.part_id: p for p in parts}
    owner = np.full(len(cnct), -1, dtype=np.int64)
    for p in parts:
        owner[p.member_set] = p.part_id

    touching: dict[tuple[int, int], None] = {}
    for p in parts:
        for i in p.member_set:
            for q in cnct.neighbors[i]:
                other = owner[q]
                if other >= 0 and other != p.part_id:
                    key = (min(p.part_id, other), max(p.part_id, other))
                    touching[key] = None

    endpoints: dict[tuple[int, int], tuple[int, int]] = {}
    for a, b in sorted(touching):
        pa, pb = by_id[a], by_id[b]
        cand_a = _participating_ends(pa, pb, cnct, owner)
        cand_b = _participating_ends(pb, pa, cnct, owner)
        best = min(
            ((float(np.linalg.norm(_end_vertex(pa, ea) - _end_vertex(pb, eb))), ea, eb)
             for ea in cand_a for eb in cand_b),
            key=lambda t: t,
        )
        endpoints[(a, b)] = (best[1], best[2])
    return PartAdjacency(part_ids=sorted(ids), endpoints=endpoints)


def _participating_ends(part: Part, other: Part, cnct: ConnectivityGraph,
                        owner: np.ndarray) -> list[int]:
    ends = []
    for end in (0, 1):
        members = _end_section_members(part, end)
        hit = any(owner[q] == other.part_id for i in members for q in cnct.neighbors[i])
        if hit and end not in ends:
            ends.append(end)
    if len(part.sections) == 1:
        return [0]
    return ends or [0, 1]


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

@dataclass
class MergeOutcome:
    part: Part | None
    reason: str | None                 # no-contact | angle | scale | registration-failure
    cost: float = math.nan             # mean best-match angle, degrees


def _oriented(part: Part, join_end: int, as_head: bool) -> Part:
    """Orient so the joining end sits last (tail side) or first (head)."""
    wants_reverse = (join_end == 0) if not as_head else (join_end == 1)
    return part.reversed_copy() if wants_reverse else part


def _sections_touch(cnct: ConnectivityGraph, xa: np.ndarray, xb: np.ndarray) -> bool:
    in_b = set(xb.tolist())
    for i in xa.tolist():
        if i in in_b:
            return True
        for q in cnct.neighbors[i].tolist():
            if q in in_b:
                return True
    return False


def try_merge(cloud: PointCloud, part_a: Part, end_a: int, part_b: Part, end_b: int,
              cnct: ConnectivityGraph | None = None,
              config: LinkConfig | None = None) -> MergeOutcome:
    """Join two parts end-to-end when their end sections register well.

    The lower-id part's end section is the fixed set; acceptance needs the
    two end sections in contact (merging is for a cylinder split across
    growers, and a split leaves the halves abutting), a converged
    registration with mean best-match angle under the angle gate, and
    |1 - s| under the scale gate, making the test symmetric in the
    argument order. Without a connectivity graph the contact check is
    skipped.
    """
    config = config or LinkConfig()
    if part_a.part_id > part_b.part_id:
        flipped = try_merge(cloud, part_b, end_b, part_a, end_a, cnct, config)
        return flipped

    xa = _end_section_members(part_a, end_a)
    xb = _end_section_members(part_b, end_b)
    if len(xa) < 3 or len(xb) < 3:
        return MergeOutcome(None, "registration-failure")
    if cnct is not None and not _sections_touch(cnct, xa, xb):
        return MergeOutcome(None, "no-contact")
    try:
        report = register(cloud.subset(xa), cloud.subset(xb), config.registration)
    except RegistrationError:
        return MergeOutcome(None, "registration-failure")
    if not report.converged:
        return MergeOutcome(None, "registration-failure")
    cost = report.mean_best_match_angle
    if cost >= config.merge_angle_deg:
        return MergeOutcome(None, "angle", cost)
    if abs(1.0 - report.params.scale) >= config.merge_scale_tol:
        return MergeOutcome(None, "scale", cost)

    left = _oriented(part_a, end_a, as_head=False)
    right = _oriented(part_b, end_b, as_head=True)
    seam = left.n_sections - 1
    merged = Part(
        part_id=part_a.part_id,
        seed_cluster_id=part_a.seed_cluster_id,
        sections=left.sections + right.sections,
        provenance=left.provenance + right.provenance,
        pair_registration_costs=(left.pair_registration_costs
                                 + right.pair_registration_costs + [cost]),
        stop_reasons={k: v for k, v in (("backward", left.stop_reasons.get("backward")),
                                        ("forward", right.stop_reasons.get("forward")))
                      if v is not None},
        merge_seams=sorted(left.merge_seams + [seam]
                           + [s + left.n_sections for s in right.merge_seams]),
    )
    return MergeOutcome(merged, None, cost)


def merge_pass(cloud: PointCloud, parts: list[Part], cnct: ConnectivityGraph,
               config: LinkConfig | None = None) -> tuple[list[Part], PartAdjacency]:
    """Apply accepted merges greedily, cheapest first, re-deriving the
    adjacency after each one; returns the surviving parts and their final
    adjacency."""
    config = config or LinkConfig()
    parts = sorted(parts, key=lambda p: p.part_id)
    while True:
        adjacency = potential_links(parts, cnct)
        by_id = {p.part_id: p for p in parts}
        candidates = []
        for (a, b), (ea, eb) in sorted(adjacency.endpoints.items()):
            outcome = try_merge(cloud, by_id[a], ea, by_id[b], eb, cnct, config)
            if outcome.part is not None:
                candidates.append((outcome.cost, a, b, outcome.part))
        if not candidates:
            return parts, adjacency
        _, a, b, merged = min(candidates, key=lambda t: (t[0], t[1], t[2]))
        parts = sorted([p for p in parts if p.part_id not in (a, b)] + [merged],
                       key=lambda p: p.part_id)


# ---------------------------------------------------------------------------
# junctions and links
# ---------------------------------------------------------------------------

def _point_ray_distance(p: np.ndarray, origin: np.ndarray, direction: np.ndarray) -> float:
    s = max(0.0, float((p - origin) @ direction))
    return float(np.linalg.norm(p - origin - s * direction))


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


def junction_point(rays: list[tuple[np.ndarray, np.ndarray]],
                   t_max: float | None = None,
                   config: LinkConfig | None = None) -> np.ndarray:
    """Point minimizing the sum of distances to the other rays.

    Each ray proposes its own best point by a 1-D search along itself
    (coarse scan, then golden section); the proposal with the smallest sum
    wins. Rays are half-lines: distance clamps at the origin.
    """
    if len(rays) < 2:
        raise ValueError("need at least 2 rays")
    config = config or LinkConfig()
    rays = [(np.asarray(o, dtype=np.float64), np.asarray(d, dtype=np.float64) / np.linalg.norm(d))
            for o, d in rays]
    if t_max is None:
        origins = np.array([o for o, _ in rays])
        t_max = config.junction_range_factor * float(
            np.linalg.norm(origins.max(axis=0) - origins.min(axis=0)))

    best_point: np.ndarray | None = None
    best_sum = math.inf
    for k, (origin, direction) in enumerate(rays):
        others = [rays[j] for j in range(len(rays)) if j != k]

        def total(t: float) -> float:
            p = origin + t * direction
            return sum(_point_ray_distance(p, o, d) for o, d in others)

        if t_max <= 0.0:
            t_star = 0.0
        else:
            samples = np.linspace(0.0, t_max, config.junction_scan)
            values = [total(t) for t in samples]
            i = int(np.argmin(values))
            lo = samples[max(i - 1, 0)]
            hi = samples[min(i + 1, len(samples) - 1)]
            t_star = _golden_section(total, float(lo), float(hi), config.junction_tol)
        value = total(t_star)
        if value < best_sum:
            best_sum = value
            best_point = origin + t_star * direction
    return best_point


@dataclass
class Junction:
    vertex: np.ndarray
    attachments: list[tuple[int, int]]   # (part_id, end)


def _outward_ray(part: Part, end: int) -> tuple[np.ndarray, np.ndarray] | None:
    axis = part.axis
    if len(axis) < 2:
        return None
    if end == 0:
        d = axis[0] - axis[1]
    else:
        d = axis[-1] - axis[-2]
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return None
    return _end_vertex(part, end), d / n


def resolve_components(adjacency: PartAdjacency, parts: list[Part],
                       config: LinkConfig | None = None
                       ) -> tuple[list[Junction], list[tuple[tuple[int, int], tuple[int, int]]]]:
    """Junctions for qualifying components, straight links everywhere else.

    A component of >= 3 parts gets a junction only when every part in it
    meets all its component neighbors at one consistent endpoint (a part
    whose two ends both participate disqualifies the component). Components
    failing the test, and 2-part components, contribute one link per
    adjacency edge between the designated endpoints.
    """
    config = config or LinkConfig()
    by_id = {p.part_id: p for p in parts}
    junctions: list[Junction] = []
    links: list[tuple[tuple[int, int], tuple[int, int]]] = []

    for comp in adjacency.components():
        comp_edges = [((a, b), adjacency.endpoints[(a, b)])
                      for (a, b) in sorted(adjacency.endpoints)
                      if a in comp and b in comp]
        if len(comp) < 2:
            continue
        used_end: dict[int, set[int]] = {pid: set() for pid in comp}
        for (a, b), (ea, eb) in comp_edges:
            used_end[a].add(ea)
            used_end[b].add(eb)
        one_end = all(len(ends) == 1 for ends in used_end.values())

        if len(comp) >= 3 and one_end:
            attach = [(pid, next(iter(used_end[pid]))) for pid in comp]
            rays = []
            for pid, end in attach:
                ray = _outward_ray(by_id[pid], end)
                if ray is not None:
                    rays.append(ray)
            if len(rays) >= 2:
                span = np.vstack([by_id[pid].axis for pid in comp])
                diameter = float(np.linalg.norm(span.max(axis=0) - span.min(axis=0)))
                vertex = junction_point(rays, t_max=config.junction_range_factor * diameter,
                                        config=config)
                junctions.append(Junction(vertex=vertex, attachments=attach))
                continue
        for (a, b), (ea, eb) in comp_edges:
            links.append((((a, ea)), ((b, eb))))
    return junctions, links


# ---------------------------------------------------------------------------
# final graph
# ---------------------------------------------------------------------------

@dataclass
class SkeletonGraph:
    """Vertices, edges and their origins; kind is axis, merge or link."""

    vertices: np.ndarray               # (V, 3)
    edges: list[tuple[int, int]]
    kinds: list[str]
    provenance: list[int | None]       # part id for axis/merge edges

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    @property
    def leaf_count(self) -> int:
        return int((self.degree() == 1).sum())

    @property
    def n_components(self) -> int:
        parent = list(range(self.n_vertices))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for u, v in self.edges:
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
        return len({find(i) for i in range(self.n_vertices)})

    def to_json_dict(self) -> dict:
        return {
            "schema": "skeleton/1",
            "vertices": [[float(c) for c in v] for v in self.vertices],
            "edges": [
                {"u": int(u), "v": int(v), "kind": kind,
                 "part": None if pid is None else int(pid)}
                for (u, v), kind, pid in zip(self.edges, self.kinds, self.provenance)
            ],
        }

    def to_obj_str(self) -> str:
        lines = ["# curve skeleton"]
        for v in self.vertices:
            lines.append("v " + " ".join(repr(float(c)) for c in v))
        for u, v in self.edges:
            lines.append(f"l {u + 1} {v + 1}")
        return "\n".join(lines) + "\n"


class _VertexPool:
    """Deduplicates vertices within 1e-9 by rounding to integer keys."""

    def __init__(self) -> None:
        self.coords: list[np.ndarray] = []
        self._index: dict[tuple[int, int, int], int] = {}

    def add(self, v: np.ndarray) -> int:
        key = tuple(int(round(float(c) * 1e9)) for c in v)
        if key in self._index:
            return self._index[key]
        self._index[key] = len(self.coords)
        self.coords.append(np.asarray(v, dtype=np.float64))
        return self._index[key]


def assemble_skeleton(parts: list[Part], junctions: list[Junction],
                      links: list[tuple[tuple[int, int], tuple[int, int]]]) -> SkeletonGraph:
    pool = _VertexPool()
    edges: list[tuple[int, int]] = []
    kinds: list[str] = []
    provenance: list[int | None] = []
    seen: set[tuple[int, int]] = set()
    by_id = {p.part_id: p for p in parts}

    def add_edge(u: int, v: int, kind: str, pid: int | None) -> None:
        if u == v:
            return
        key = (min(u, v), max(u, v))
        if key in seen:
            return
        seen.add(key)
        edges.append(key)
        kinds.append(kind)
        provenance.append(pid)

    for part in sorted(parts, key=lambda p: p.part_id):
        ids = [pool.add(v) for v in part.axis]
        for i in range(len(ids) - 1):
            kind = "merge" if i in part.merge_seams else "axis"
            add_edge(ids[i], ids[i + 1], kind, part.part_id)

    for junction in junctions:
        j = pool.add(junction.vertex)
        for pid, end in junction.attachments:
            add_edge(j, pool.add(_end_vertex(by_id[pid], end)), "link", None)

    for (a, ea), (b, eb) in links:
        add_edge(pool.add(_end_vertex(by_id[a], ea)),
                 pool.add(_end_vertex(by_id[b], eb)), "link", None)

    return SkeletonGraph(vertices=np.array(pool.coords) if pool.coords else np.zeros((0, 3)),
                         edges=edges, kinds=kinds, provenance=provenance)


def build_skeleton(cloud: PointCloud, cnct: ConnectivityGraph, parts: list[Part],
                   config: LinkConfig | None = None) -> tuple[SkeletonGraph, list[Part]]:
    """Merge, resolve components, assemble; returns the skeleton and the
    post-merge parts list."""
    config = config or LinkConfig()
    merged, adjacency = merge_pass(cloud, parts, cnct, config)
    junctions, links = resolve_components(adjacency, merged, config)
    return assemble_skeleton(merged, junctions, links), merged
