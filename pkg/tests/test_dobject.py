import dataclasses
import json

import pytest

from conftest import half_half
from strukt._canon import canonical_json
from strukt.bench import SceneSpec, make_synthetic
from strukt.criterion import CriterionSpec
from strukt.dobject import (REQUIRED_ITEMS, DOError, build_do, compute_do_id, do_lineage,
                            export_do, verify_do)
from strukt.errors import LineageError
from strukt.extract import extract
from strukt.perturb import PerturbationSpec, perturbation_hash
from strukt.validate import stability_envelope

OTSU = CriterionSpec("threshold_separation", {"channel": 0, "bins": 64})
NOISE = PerturbationSpec("gaussian_noise", {"sigma": 0.05}, seed=1)
TS = "2024-01-01T00:00:00Z"


@pytest.fixture(scope="module")
def scene():
    return make_synthetic(SceneSpec(side=32, n_blobs=2, seed=5))[0]


@pytest.fixture(scope="module")
def result(scene):
    return extract(scene, OTSU)


@pytest.fixture(scope="module")
def envelope(scene):
    return stability_envelope(scene, OTSU, NOISE, 3)


def _export(tmp_path, scene, result, envelope=None, **kw):
    kw.setdefault("stability", {"perturbations": [perturbation_hash(NOISE)]})
    do_id = export_do(result, OTSU, scene, tmp_path, envelope=envelope, timestamp=TS, **kw)
    return do_id, tmp_path / f"{do_id}.do.json"


def test_do_id_is_content_addressed(tmp_path, scene, result):
    a, path = _export(tmp_path, scene, result)
    b, _ = _export(tmp_path / "other", scene, result)
    assert a == b
    later = build_do(result, OTSU, scene, stability={"perturbations": ["x"]},
                     timestamp="2099-01-01T00:00:00Z")
    earlier = build_do(result, OTSU, scene, stability={"perturbations": ["x"]}, timestamp=TS)
    assert later["do_id"] == earlier["do_id"]
    assert json.loads(path.read_text())["do_id"] == a


def test_repeat_export_keeps_first_document(tmp_path, scene, result):
    do_id, path = _export(tmp_path, scene, result)
    first = path.read_bytes()
    export_do(result, OTSU, scene, tmp_path, timestamp="2030-01-01T00:00:00Z",
              stability={"perturbations": [perturbation_hash(NOISE)]})
    assert path.read_bytes() == first


def test_different_criterion_gives_different_id(scene):
    other = CriterionSpec("threshold_separation", {"channel": 0, "bins": 32})
    a = build_do(extract(scene, OTSU), OTSU, scene, stability={"scale_factors": [1]})
    b = build_do(extract(scene, other), other, scene, stability={"scale_factors": [1]})
    assert a["do_id"] != b["do_id"]


def test_build_refuses_incomplete_metadata(scene, result):
    with pytest.raises(DOError, match=r"item \(ii\)"):
        build_do(dataclasses.replace(result, implementation_id=""), OTSU, scene,
                 stability={"scale_factors": [1]})
    with pytest.raises(DOError, match=r"item \(iii\)"):
        build_do(result, OTSU, scene)
    with pytest.raises(DOError, match="criterion"):
        build_do(result, CriterionSpec("threshold_separation", {"bins": 8}), scene,
                 stability={"scale_factors": [1]})


def test_envelope_implies_stability_declaration(scene, result, envelope):
    doc = build_do(result, OTSU, scene, envelope=envelope)
    assert doc["stability_declaration"] == {"perturbations": [envelope.perturbation_digest]}
    assert doc["envelope"]["n_replicates"] == 3


def test_do_id_ignores_key_order(scene, result):
    doc = build_do(result, OTSU, scene, stability={"scale_factors": [1]}, timestamp=TS)
    reordered = dict(reversed(list(doc.items())))
    assert compute_do_id(reordered) == doc["do_id"]


# -- verification -------------------------------------------------------------------------

def test_fresh_export_verifies(tmp_path, scene, result, envelope):
    _, path = _export(tmp_path, scene, result, envelope)
    report = verify_do(path)
    assert report.ok, report.failures()
    assert [c.name for c in report.checks] == [
        "readable", "schema", *REQUIRED_ITEMS, "do_id", "payload_hash", "envelope_summary"]


def test_payload_tamper_is_isolated(tmp_path, scene, result):
    _, path = _export(tmp_path, scene, result)
    doc = json.loads(path.read_text())
    payload = tmp_path / doc["payload"]["file"]
    data = bytearray(payload.read_bytes())
    data[-1] ^= 0x01
    payload.write_bytes(bytes(data))
    report = verify_do(path)
    failed = {c.name for c in report.failures()}
    assert failed == {"payload_hash"}
    assert len(report.checks) == 10  # every other check still ran


def test_envelope_summary_tamper(tmp_path, scene, result, envelope):
    _, path = _export(tmp_path, scene, result, envelope)
    doc = json.loads(path.read_text())
    doc["envelope"]["summary"]["vi_nats"]["mean"] += 0.5
    doc["do_id"] = compute_do_id(doc)  # keep the id honest so only the summary is wrong
    path.write_bytes(canonical_json(doc))
    assert {c.name for c in verify_do(path).failures()} == {"envelope_summary"}


@pytest.mark.parametrize("item", list(REQUIRED_ITEMS))
def test_missing_required_item_is_named(tmp_path, scene, result, envelope, item):
    _, path = _export(tmp_path, scene, result, envelope)
    doc = json.loads(path.read_text())
    del doc[item]
    doc["do_id"] = compute_do_id(doc)
    path.write_bytes(canonical_json(doc))
    failures = verify_do(path).failures()
    assert [c.name for c in failures] == [item]
    assert REQUIRED_ITEMS[item] in failures[0].detail


def test_unreadable_document(tmp_path):
    bad = tmp_path / "x.do.json"
    bad.write_text("{not json")
    report = verify_do(bad)
    assert not report.ok and report.checks[0].name == "readable"
    assert not verify_do(tmp_path / "missing.do.json").ok


def test_extra_field_and_id_mismatch(tmp_path, scene, result):
    _, path = _export(tmp_path, scene, result)
    doc = json.loads(path.read_text())
    doc["comment"] = "hi"
    path.write_bytes(canonical_json(doc))
    assert {c.name for c in verify_do(path).failures()} == {"schema", "do_id"}


# -- lineage ---------------------------------------------------------------------------------

def _doc(name, version, parents=()):
    return {"do_id": name, "version": version, "provenance": {"parents": list(parents)}}


def test_single_node_lineage():
    g = do_lineage([_doc("a", 1)])
    assert list(g.nodes) == ["a"] and g.number_of_edges() == 0


def test_chain_lineage():
    g = do_lineage([_doc("c", 3, ["b"]), _doc("a", 1), _doc("b", 2, ["a"])])
    assert sorted(g.edges) == [("a", "b"), ("b", "c")]


def test_external_parent_is_flagged():
    g = do_lineage([_doc("b", 2, ["ghost"])])
    assert g.nodes["ghost"]["external"]


def test_cycle_and_regression_are_rejected():
    with pytest.raises(LineageError, match="cycle"):
        do_lineage([_doc("a", 1, ["b"]), _doc("b", 2, ["a"])])
    with pytest.raises(LineageError, match="regression"):
        do_lineage([_doc("a", 2), _doc("b", 2, ["a"])])


def test_exported_lineage(tmp_path, scene, result):
    parent, ppath = _export(tmp_path, scene, result)
    child_res = extract(scene, OTSU)
    child, cpath = _export(tmp_path, scene, child_res, parents=[parent], version=2)
    assert parent != child
    g = do_lineage([json.loads(ppath.read_text()), json.loads(cpath.read_text())])
    assert list(g.edges) == [(parent, child)]
