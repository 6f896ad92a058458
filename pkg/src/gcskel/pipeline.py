"""End-to-end orchestration and artifact persistence.

A run executes: load -> normals -> graph -> cluster -> grow -> costs ->
select -> link. Growth fans out across seed clusters on a thread pool; all
other stages are sequential. Every artifact is deterministic JSON (sorted
keys, no timestamps), self-describing via a schema name, the stage that
produced it, and a hash of the effective configuration; rerunning the same
configuration on the same input reproduces every artifact byte for byte.

The session object keeps the live state the review server mutates: the
candidate parts, the current selection, removed candidates, and the last
linked skeleton with its staleness flag.
"""

from __future__ import annotations

import hashlib
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cloud import PointCloud, load_cloud, estimate_normals, orient_normals_per_component
from .crosssec import CrossSectionError
from .graphs import (
    AdaptiveThresholds,
    Clustering,
    ConnectivityGraph,
    build_connectivity,
    build_mst,
    cluster_cloud,
    compute_thresholds,
)
from .grow import GrowConfig, Part, grow_part
from .link import LinkConfig, SkeletonGraph, build_skeleton
from .register import RegConfig
from .select import (
    PartCosts,
    Selection,
    build_selection_problem,
    max_feasible_k1,
    normalize_costs,
    part_costs,
    solve_selection,
)

STAGES = ("load", "normals", "graph", "cluster", "grow", "costs", "select", "link")


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    """Run parameters; the user surface is clusters, k1, k2 and the seed."""

    input_path: str | None = None
    out_dir: str | None = None
    clusters: int = 50
    k1: float | str = "auto"
    k2: float = 5.0
    seed: int = 7
    normals_k: int = 15
    mst_knn: int = 100
    include_single_sections: bool = True
    max_workers: int = 8
    grow: GrowConfig = field(default_factory=GrowConfig)
    link: LinkConfig = field(default_factory=LinkConfig)

    def echo(self) -> dict:
        """Full effective configuration as emitted into the manifest; the
        output directory stays out (it is wherever the manifest lives)."""
        d = asdict(self)
        d.pop("out_dir")
        return _jsonable(d)

    def content_hash(self) -> str:
        payload = self.echo()
        payload.pop("input_path")
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _jsonable(obj):
    """Recursively coerce numpy scalars/arrays so json.dumps accepts them."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _dump_json(payload: dict, path: Path) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


# ---------------------------------------------------------------------------
# session state
# ---------------------------------------------------------------------------

class SelectionValidationError(ValueError):
    def __init__(self, unknown: list[int], removed: list[int]):
        super().__init__(f"invalid selection: unknown={unknown} removed={removed}")
        self.unknown = unknown
        self.removed = removed


@dataclass
class SessionState:
    """Live run state; selection only ever references non-removed parts."""

    cloud: PointCloud
    cnct: ConnectivityGraph
    thr: AdaptiveThresholds
    clustering: Clustering
    parts: list[Part]
    costs: list[PartCosts]
    selection: Selection
    k1_resolved: float
    config: PipelineConfig
    selection_ids: set[int] = field(default_factory=set)
    removed_ids: set[int] = field(default_factory=set)
    skeleton: SkeletonGraph | None = None
    skeleton_stale: bool = False
    selection_edited: bool = False
    out_dir: Path | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def part_ids(self) -> list[int]:
        return [p.part_id for p in self.parts]

    def visible_parts(self) -> list[Part]:
        return [p for p in self.parts if p.part_id not in self.removed_ids]

    def set_selection(self, ids: list[int]) -> None:
        known = set(self.part_ids)
        unknown = sorted(set(ids) - known)
        removed = sorted(set(ids) & self.removed_ids)
        if unknown or removed:
            raise SelectionValidationError(unknown, removed)
        new_ids = set(int(i) for i in ids)
        if new_ids != self.selection_ids:
            self.selection_ids = new_ids
            self.selection_edited = True
            self.skeleton_stale = True

    def remove_part(self, part_id: int) -> None:
        if part_id not in self.part_ids:
            raise KeyError(part_id)
        self.removed_ids.add(int(part_id))
        if part_id in self.selection_ids:
            self.selection_ids.discard(int(part_id))
            self.selection_edited = True
            self.skeleton_stale = True

    def relink(self) -> SkeletonGraph:
        chosen = [p for p in self.parts
                  if p.part_id in self.selection_ids and p.part_id not in self.removed_ids]
        skeleton, _ = build_skeleton(self.cloud, self.cnct, chosen, self.config.link)
        self.skeleton = skeleton
        self.skeleton_stale = False
        if self.out_dir is not None:
            write_selection_artifact(self, self.out_dir)
            write_skeleton_artifacts(self, self.out_dir)
        return skeleton

    def member_sample(self, part: Part, cap: int = 400) -> np.ndarray:
        members = part.member_set
        if len(members) <= cap:
            return members
        rng = np.random.default_rng((self.config.seed, part.part_id))
        return np.sort(rng.choice(members, size=cap, replace=False))

    def cloud_sample(self, cap: int = 50000) -> np.ndarray:
        n = len(self.cloud)
        if n <= cap:
            return np.arange(n, dtype=np.intp)
        rng = np.random.default_rng((self.config.seed, 9973))
        return np.sort(rng.choice(n, size=cap, replace=False))


# ---------------------------------------------------------------------------
# artifact writers
# ---------------------------------------------------------------------------

def parts_payload(session: SessionState) -> dict:
    out = []
    cost_by_id = {c.part_id: c for c in session.costs}
    for part in session.visible_parts():
        c = cost_by_id[part.part_id]
        out.append({
            "id": part.part_id,
            "seed_cluster_id": part.seed_cluster_id,
            "n_sections": part.n_sections,
            "n_members": part.n_members,
            "provenance": list(part.provenance),
            "stop_reasons": {k: {"reason": v.reason.value, "detail": v.detail}
                             for k, v in part.stop_reasons.items()},
            "axis": part.axis,
            "member_sample": session.member_sample(part),
            "costs": {
                "c_reg": c.c_reg, "c_fit": c.c_fit, "c_len": c.c_len, "c_ang": c.c_ang,
                "z_reg": c.z_reg, "z_fit": c.z_fit, "z_len": c.z_len, "z_ang": c.z_ang,
                "c_ovr": c.c_ovr,
            },
            "selected": part.part_id in session.selection_ids,
        })
    return {
        "schema": "parts/1",
        "stage": "costs",
        "config_hash": session.config.content_hash(),
        "n_points": len(session.cloud),
        "selection_stale": session.skeleton_stale,
        "parts": out,
    }


def selection_payload(session: SessionState) -> dict:
    return {
        "schema": "selection/1",
        "stage": "select",
        "config_hash": session.config.content_hash(),
        "k1": session.k1_resolved,
        "k2": session.config.k2,
        "auto_k1": session.config.k1 == "auto",
        "edited": session.selection_edited,
        "chosen_ids": sorted(session.selection_ids),
        "removed_ids": sorted(session.removed_ids),
        "objective": session.selection.objective,
        "covered_points": session.selection.covered_points,
        "overlap_points": session.selection.overlap_points,
        "feasible": session.selection.feasible,
    }


def skeleton_payload(session: SessionState) -> dict:
    body = session.skeleton.to_json_dict()
    body["stage"] = "link"
    body["config_hash"] = session.config.content_hash()
    body["stale"] = session.skeleton_stale
    return body


def write_parts_artifact(session: SessionState, out_dir: Path) -> None:
    _dump_json(parts_payload(session), out_dir / "parts.json")


def write_selection_artifact(session: SessionState, out_dir: Path) -> None:
    _dump_json(selection_payload(session), out_dir / "selection.json")


def write_skeleton_artifacts(session: SessionState, out_dir: Path) -> None:
    _dump_json(skeleton_payload(session), out_dir / "skeleton.json")
    (out_dir / "skeleton.obj").write_text(session.skeleton.to_obj_str(), encoding="utf-8")


# ---------------------------------------------------------------------------
# the run
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    session: SessionState
    skeleton: SkeletonGraph
    manifest: dict
    out_dir: Path | None


def run_pipeline(config: PipelineConfig, cloud: PointCloud | None = None) -> PipelineResult:
    """Execute every stage; on failure, persist what completed plus a
    manifest naming the failing stage, then raise StageError."""
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    completed: list[str] = []
    skipped_seeds: list[dict] = []
    session: SessionState | None = None
    stage = "load"

    def manifest_dict(complete: bool, error: dict | None) -> dict:
        counts = {}
        if session is not None:
            counts = {
                "n_points": len(session.cloud),
                "n_candidates": len(session.parts),
                "n_selected": len(session.selection_ids),
            }
        return {
            "schema": "manifest/1",
            "config": config.echo(),
            "config_hash": config.content_hash(),
            "stages_completed": completed,
            "skipped_seeds": skipped_seeds,
            "counts": counts,
            "complete": complete,
            "error": error,
        }

    try:
        if cloud is None:
            if not config.input_path:
                raise ValueError("no input path and no in-memory cloud")
            cloud = load_cloud(config.input_path)
        completed.append("load")

        stage = "normals"
        mst = None
        if not cloud.has_normals:
            cloud = estimate_normals(cloud, k=config.normals_k)
            mst = build_mst(cloud, knn=config.mst_knn)
            cloud, _ = orient_normals_per_component(cloud, mst)
        completed.append("normals")

        stage = "graph"
        if mst is None:
            mst = build_mst(cloud, knn=config.mst_knn)
        thr = compute_thresholds(mst, len(cloud))
        cnct = build_connectivity(cloud, thr)
        completed.append("graph")

        stage = "cluster"
        clustering = cluster_cloud(cloud, config.clusters, config.seed, cnct)
        completed.append("cluster")

        stage = "grow"

        def grow_one(cid: int):
            try:
                return grow_part(cloud, cnct, thr, clustering, cid, config.grow)
            except CrossSectionError as err:
                return {"seed_cluster_id": cid, "reason": str(err)}

        with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
            results = list(pool.map(grow_one, range(clustering.n_clusters)))
        parts = [r for r in results if isinstance(r, Part)]
        skipped_seeds.extend(r for r in results if not isinstance(r, Part))
        if not parts:
            raise RuntimeError("no seed cluster produced a usable part")
        completed.append("grow")

        stage = "costs"
        raw = [part_costs(p, cloud) for p in parts]
        costs = normalize_costs(raw, config.include_single_sections)
        completed.append("costs")

        stage = "select"
        problem = build_selection_problem(parts, costs, len(cloud), 0.0, config.k2)
        if config.k1 == "auto":
            k1_resolved = float(max_feasible_k1(problem))
        else:
            k1_resolved = float(config.k1)
        problem.k1 = k1_resolved
        selection = solve_selection(problem)
        if not selection.feasible:
            ceiling = max_feasible_k1(problem)
            raise RuntimeError(
                f"no selection covers {k1_resolved:.0f}% within the overlap budget"
                f" (max feasible k1 is {ceiling}%)")
        session = SessionState(
            cloud=cloud, cnct=cnct, thr=thr, clustering=clustering,
            parts=parts, costs=costs, selection=selection,
            k1_resolved=k1_resolved, config=config, out_dir=out_dir,
            selection_ids={parts[i].part_id for i in selection.chosen_indices},
        )
        if out_dir is not None:
            write_parts_artifact(session, out_dir)
            write_selection_artifact(session, out_dir)
        completed.append("select")

        stage = "link"
        chosen = [p for p in parts if p.part_id in session.selection_ids]
        skeleton, _ = build_skeleton(cloud, cnct, chosen, config.link)
        session.skeleton = skeleton
        session.skeleton_stale = False
        if out_dir is not None:
            write_skeleton_artifacts(session, out_dir)
        completed.append("link")

    except Exception as err:
        if out_dir is not None:
            _dump_json(manifest_dict(False, {"stage": stage, "message": str(err)}),
                       out_dir / "manifest.json")
        raise StageError(stage, str(err)) from err

    manifest = manifest_dict(True, None)
    if out_dir is not None:
        _dump_json(manifest, out_dir / "manifest.json")
    return PipelineResult(session=session, skeleton=session.skeleton,
                          manifest=manifest, out_dir=out_dir)


def load_session(session_dir) -> SessionState:
    """Rebuild the live session a saved run describes.

    The manifest carries the full effective configuration and the input
    path; the deterministic pipeline is re-executed in memory, which lands
    in exactly the state that produced the artifacts.
    """
    session_dir = Path(session_dir)
    manifest_path = session_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {session_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if not manifest.get("complete"):
        raise ValueError("cannot serve an incomplete run "
                         f"(failed at stage {manifest.get('error', {}).get('stage')})")
    config = config_from_echo(manifest["config"])
    config.out_dir = str(session_dir)
    if not config.input_path:
        raise ValueError("manifest records no input path (in-memory run); rerun with a file")
    result = run_pipeline(config)
    return result.session


def config_from_echo(echo: dict) -> PipelineConfig:
    """Inverse of PipelineConfig.echo for nested dataclasses."""
    grow_d = dict(echo["grow"])
    grow_d["registration"] = RegConfig(**grow_d["registration"])
    link_d = dict(echo["link"])
    link_d["registration"] = RegConfig(**link_d["registration"])
    top = {k: v for k, v in echo.items() if k not in ("grow", "link")}
    return PipelineConfig(**top, grow=GrowConfig(**grow_d), link=LinkConfig(**link_d))
