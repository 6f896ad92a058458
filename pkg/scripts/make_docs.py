"""Regenerate the derived halves of docs/: the effective-config schema and
the example artifacts.

    python scripts/make_docs.py

The config schema is built from the shipped dataclass defaults, so the two
cannot drift; a table below supplies the JSON types and wording, and the
build fails if the table and the dataclasses disagree about field names.
The examples come from a real run on a small synthetic tube (fixed seed,
byte-stable across reruns). The artifact schemas in docs/schemas/ are
maintained by hand; tests/test_docs.py holds them against live payloads.
"""

from __future__ import annotations

import json
import sys
from dataclasses import fields
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from gcskel.grow import GrowConfig
from gcskel.link import LinkConfig
from gcskel.pipeline import PipelineConfig, _dump_json, _jsonable, run_pipeline
from gcskel.register import RegConfig
from gcskel.synth import straight_tube

DOCS = Path(__file__).resolve().parent.parent / "docs"

NUM = {"type": "number"}
INT = {"type": "integer"}
BOOL = {"type": "boolean"}

TOP_FIELDS = {
    "input_path": ({"type": ["string", "null"]},
                   "Input cloud path (.xyz, .xyzn, or ascii .ply); null when a"
                   " cloud object is handed to run_pipeline directly."),
    "clusters": ({**INT, "minimum": 1},
                 "Seed cluster count: the cloud is split into this many"
                 " clusters and each seeds one candidate part. The main"
                 " resolution knob."),
    "k1": ({"oneOf": [{"type": "number", "minimum": 0, "maximum": 100},
                      {"const": "auto"}]},
           "Required coverage, percent of cloud points the chosen parts must"
           " jointly claim; auto resolves to the largest feasible value."),
    "k2": ({**NUM, "minimum": 0},
           "Overlap budget, percent of cloud points allowed inside more than"
           " one chosen part."),
    "seed": (INT,
             "Seed for every stochastic stage; equal configurations produce"
             " byte-identical artifacts."),
    "normals_k": ({**INT, "minimum": 2},
                  "Neighborhood size for normal estimation when the input"
                  " carries no normals."),
    "mst_knn": ({**INT, "minimum": 1},
                "Neighbor cap for the spanning tree behind the adaptive"
                " distance thresholds and normal orientation."),
    "include_single_sections": (BOOL,
                                "Keep seed sections that never grew as"
                                " selectable single-section candidates."),
    "max_workers": ({**INT, "minimum": 1},
                    "Thread pool width for the growth stage, the only"
                    " parallel stage."),
    "grow": None,
    "link": None,
}

GROW_FIELDS = {
    "step_factor": ({**NUM, "exclusiveMinimum": 0},
                    "Stride between consecutive section centers in units of"
                    " the adaptive plane threshold; 2.0 makes neighboring"
                    " bands abut without overlap."),
    "delta_ang_deg": ({**NUM, "minimum": 0},
                      "Half-width in degrees of the orientation search around"
                      " the previous section plane."),
    "k_step": ({**INT, "minimum": 1},
               "Resolution of that search; k_step squared candidate"
               " orientations per step."),
    "min_section_points": ({**INT, "minimum": 1},
                           "Fewest members a cross-section may have and still"
                           " extend the part."),
    "method_switch_floor": ({**INT, "minimum": 0},
                            "Member count below which a step searches planes"
                            " directly instead of registering the grown"
                            " section onto the next band."),
    "mismatch_angle_deg": ({**NUM, "minimum": 0},
                           "Mean best-match angle of a step's registration,"
                           " degrees, above which growth stops rather than"
                           " accept the step."),
    "scale_jump_form": ({"enum": ["ratio", "verbatim"]},
                        "How the scale-jump stop compares consecutive section"
                        " scales: relative change (ratio) or absolute"
                        " difference (verbatim)."),
    "scale_jump_threshold": ({"type": ["number", "null"]},
                             "Explicit stop threshold; null picks the form's"
                             " calibrated default, 0.5 for ratio and 1.5 for"
                             " verbatim."),
    "visited_stop_fraction": ({**NUM, "minimum": 0, "maximum": 1},
                              "Stop once this fraction of a step's collected"
                              " points already belongs to earlier sections."),
    "registration": None,
}

LINK_FIELDS = {
    "merge_angle_deg": ({**NUM, "minimum": 0},
                        "Largest angle, degrees, between the facing end"
                        " directions of two parts that may still merge into"
                        " one."),
    "merge_scale_tol": ({**NUM, "minimum": 0},
                        "Largest |1 - s| of the end-to-end registration scale"
                        " a merge tolerates."),
    "junction_scan": ({**INT, "minimum": 2},
                      "Coarse samples along the junction search segment before"
                      " golden-section refinement."),
    "junction_tol": ({**NUM, "exclusiveMinimum": 0},
                     "Convergence tolerance of that refinement."),
    "junction_range_factor": ({**NUM, "exclusiveMinimum": 0},
                              "Length of the junction search segment in units"
                              " of the component diameter."),
    "registration": None,
}

REG_FIELDS = {
    "max_iterations": ({**INT, "minimum": 1},
                       "Cap on alternation rounds per registration."),
    "tol": ({**NUM, "exclusiveMinimum": 0},
            "Relative likelihood change under which a registration counts as"
            " converged."),
    "bfgs_max_iter": ({**INT, "minimum": 1},
                      "Iteration cap of the inner quasi-Newton solve per"
                      " round."),
    "bfgs_gtol": ({**NUM, "exclusiveMinimum": 0},
                  "Gradient tolerance of the inner solve."),
    "alpha0": ({**NUM, "exclusiveMinimum": 0},
               "Initial concentration of the normal-alignment term."),
    "alpha_cap": ({**NUM, "exclusiveMinimum": 0},
                  "Upper bound on that concentration; keeps the normal term"
                  " from dominating positions."),
    "use_normals": (BOOL,
                    "Score normal alignment alongside positions; off is the"
                    " ablation arm of the synth harness."),
    "select_dist_factor": ({**NUM, "exclusiveMinimum": 0},
                           "Distance gate for matched points, units of the"
                           " fitted sigma."),
    "select_angle_deg": ({**NUM, "minimum": 0},
                         "Angle gate for matched points, degrees."),
    "chart_recenter_norm": ({**NUM, "exclusiveMinimum": 0},
                            "Rotation parameter norm that triggers"
                            " re-anchoring the chart at the current"
                            " rotation."),
    "sigma_floor_rel": ({**NUM, "minimum": 0},
                        "Lower bound on sigma relative to its start value;"
                        " below it the fit statistics lose precision faster"
                        " than the fit gains."),
    "trace_path": ({"type": ["string", "null"]},
                   "Per-iteration CSV dump for debugging one registration;"
                   " leave null in runs."),
}


def object_schema(instance, specs, skip=()):
    names = [f.name for f in fields(instance) if f.name not in skip]
    if set(names) != set(specs):
        raise SystemExit(f"field table drift on {type(instance).__name__}: "
                         f"{sorted(set(names) ^ set(specs))}")
    props = {}
    for name in names:
        if specs[name] is None:
            props[name] = {"$ref": "#/$defs/registration"}
            continue
        spec, description = specs[name]
        props[name] = {**spec,
                       "default": _jsonable(getattr(instance, name)),
                       "description": description}
    return {"type": "object", "additionalProperties": False,
            "required": names, "properties": props}


def config_schema() -> dict:
    top = object_schema(PipelineConfig(), TOP_FIELDS, skip=("out_dir",))
    grow = object_schema(GrowConfig(), GROW_FIELDS)
    grow["description"] = "Growth-stage knobs."
    link = object_schema(LinkConfig(), LINK_FIELDS)
    link["description"] = "Linking-stage knobs."
    top["properties"]["grow"] = grow
    top["properties"]["link"] = link
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "config.schema.json",
        "title": "Effective run configuration",
        "description": "The config block echoed into the run manifest,"
                       " defaults injected. Every property records its"
                       " default; omitted CLI flags take exactly these"
                       " values. Regenerated by scripts/make_docs.py from the"
                       " shipped dataclasses.",
        **top,
        "$defs": {
            "registration": {
                **object_schema(RegConfig(), REG_FIELDS),
                "description": "Registration knobs; growth and linking carry"
                               " independent copies.",
            },
        },
    }


def write_examples() -> None:
    out = DOCS / "examples"
    out.mkdir(parents=True, exist_ok=True)
    cloud, _ = straight_tube(1.0, 5.0, 12, 14, seed=5)
    config = PipelineConfig(clusters=4, seed=3, out_dir=str(out))
    result = run_pipeline(config, cloud=cloud)
    if not result.manifest["complete"]:
        raise SystemExit("example run failed; examples not refreshed")
    idx = result.session.cloud_sample()
    _dump_json({
        "schema": "cloud/1",
        "n_points_full": len(result.session.cloud),
        "indices": idx,
        "positions": result.session.cloud.positions[idx],
    }, out / "cloud.json")


def main() -> None:
    (DOCS / "schemas").mkdir(parents=True, exist_ok=True)
    path = DOCS / "schemas" / "config.schema.json"
    path.write_text(json.dumps(config_schema(), indent=2) + "\n",
                    encoding="utf-8")
    write_examples()
    print(f"wrote {path}")
    print(f"wrote {DOCS / 'examples'} (manifest, parts, selection, skeleton,"
          " obj, cloud)")


if __name__ == "__main__":
    main()
