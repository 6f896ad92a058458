"""The shipped schemas stay in lockstep with what the code emits."""

import json
from pathlib import Path

import pytest
from jsonschema import Draft202012Validator
from referencing import Registry, Resource

from gcskel.pipeline import (
    PipelineConfig,
    StageError,
    _jsonable,
    parts_payload,
    run_pipeline,
    selection_payload,
    skeleton_payload,
)
from gcskel.synth import straight_tube

DOCS = Path(__file__).resolve().parent.parent / "docs"
SCHEMAS = DOCS / "schemas"

EXAMPLES = [
    ("manifest.json", "manifest.schema.json"),
    ("parts.json", "parts.schema.json"),
    ("selection.json", "selection.schema.json"),
    ("skeleton.json", "skeleton.schema.json"),
    ("cloud.json", "cloud.schema.json"),
]


def _validator(name: str) -> Draft202012Validator:
    resources = [(p.name, Resource.from_contents(json.loads(p.read_text())))
                 for p in SCHEMAS.glob("*.schema.json")]
    schema = json.loads((SCHEMAS / name).read_text())
    return Draft202012Validator(schema, registry=Registry().with_resources(resources))


def _check(schema_name: str, payload) -> None:
    errors = sorted(_validator(schema_name).iter_errors(payload), key=str)
    assert not errors, "\n".join(e.json_path + ": " + e.message for e in errors[:5])


@pytest.fixture(scope="module")
def tube_run():
    cloud, _ = straight_tube(1.0, 5.0, 12, 14, seed=5)
    return run_pipeline(PipelineConfig(clusters=4, seed=3), cloud=cloud)


@pytest.mark.parametrize("example,schema", EXAMPLES)
def test_shipped_examples_validate(example, schema):
    _check(schema, json.loads((DOCS / "examples" / example).read_text()))


def test_live_payloads_validate(tube_run):
    session = tube_run.session
    _check("manifest.schema.json", _jsonable(tube_run.manifest))
    _check("parts.schema.json", _jsonable(parts_payload(session)))
    _check("selection.schema.json", _jsonable(selection_payload(session)))
    _check("skeleton.schema.json", _jsonable(skeleton_payload(session)))
    idx = session.cloud_sample()
    _check("cloud.schema.json", _jsonable({
        "schema": "cloud/1",
        "n_points_full": len(session.cloud),
        "indices": idx,
        "positions": session.cloud.positions[idx],
    }))


def test_failure_manifest_validates(tmp_path):
    out = tmp_path / "broken"
    with pytest.raises(StageError):
        run_pipeline(PipelineConfig(input_path=str(tmp_path / "missing.xyz"),
                                    out_dir=str(out)))
    doc = json.loads((out / "manifest.json").read_text())
    assert doc["complete"] is False
    _check("manifest.schema.json", doc)


def _defaults_tree(prop: dict, root: dict):
    if "$ref" in prop:
        name = prop["$ref"].rsplit("/", 1)[-1]
        return _defaults_tree(root["$defs"][name], root)
    if "properties" in prop:
        return {k: _defaults_tree(v, root) for k, v in prop["properties"].items()}
    return prop["default"]


def test_config_schema_defaults_match_code():
    schema = json.loads((SCHEMAS / "config.schema.json").read_text())
    assert _defaults_tree(schema, schema) == PipelineConfig().echo()
