"""Versioned, content-addressed digital objects wrapping structural products.

A digital object (DO) is a canonical JSON document plus payload attachments
stored by hash under ``payloads/``. Its ``do_id`` is the SHA-256 of the
document with ``do_id`` removed and the provenance timestamp blanked, so the
identifier depends on content only.

Every DO carries five required reporting items:

    (i)   criterion              canonical criterion bytes and digest
    (ii)  implementation         toolkit version, build hash, seed if any
    (iii) stability_declaration  perturbation digests or scale factors
    (iv)  quality_metrics        objective, description length, boundary stats
    (v)   envelope               stability envelope, or the string "none"
"""

from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import networkx as nx

from . import __version__
from ._build import build_hash
from ._canon import canonical_json, load_json_bytes, sha256_hex
from .criterion import canonicalize, criterion_hash
from .errors import LineageError, StruktError
from .extract import as_partition
from .products import (Hierarchy, attachment_name, boundary_length,
                       description_length, load_product, product_hash, product_type,
                       save_product)
from .validate import envelope_problems

SCHEMA_VERSION = "strukt-do/1"
PAYLOAD_DIR = "payloads"
MANIFEST = "manifest.json"

REQUIRED_ITEMS = {
    "criterion": "item (i) declared criterion",
    "implementation": "item (ii) implementation identifier",
    "stability_declaration": "item (iii) perturbation family or scale envelope",
    "quality_metrics": "item (iv) structural quality metrics",
    "envelope": "item (v) stability/uncertainty envelope",
}
_TOP_LEVEL = ("do_id", "schema_version", "payload", "provenance", "version",
              *REQUIRED_ITEMS)


class DOError(StruktError, ValueError):
    """A digital object cannot be built from the given inputs."""


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def compute_do_id(doc) -> str:
    body = {k: v for k, v in doc.items() if k != "do_id"}
    prov = dict(body.get("provenance") or {})
    if "timestamp" in prov:
        prov["timestamp"] = ""
    body["provenance"] = prov
    return sha256_hex(canonical_json(body))


def quality_metrics(result, field, level=None) -> dict:
    metrics = {"objective": result.objective}
    try:
        part = as_partition(result.product, level)
    except StruktError:
        part = None
    if part is not None and part.shape == field.shape:
        metrics["description_length_bits"] = description_length(field, part)
        metrics["boundary_pixel_edges"] = boundary_length(part)
        metrics["n_regions"] = part.n_regions
    else:
        metrics["description_length_bits"] = None
        metrics["boundary_pixel_edges"] = None
        metrics["n_regions"] = None
    return metrics


def build_do(result, cspec, field, *, stability=None, envelope=None, command_line=(),
             parents=(), version=1, seed=None, level=None, timestamp=None) -> dict:
    """Assemble the DO document for ``result`` (payload paths are relative)."""
    digest = criterion_hash(cspec)
    if result.criterion_digest != digest:
        raise DOError(f"extraction used criterion {result.criterion_digest[:12]}, "
                      f"metadata declares {digest[:12]}")
    if not result.implementation_id:
        raise DOError(f"missing {REQUIRED_ITEMS['implementation']}")
    if stability is None and envelope is not None:
        stability = {"perturbations": [envelope.perturbation_digest]}
    if not stability:
        raise DOError(f"missing {REQUIRED_ITEMS['stability_declaration']}")
    if version < 1:
        raise DOError("version must be a positive integer")
    product = result.product
    doc = {
        "schema_version": SCHEMA_VERSION,
        "payload": {
            "type": product_type(product),
            "product_hash": product_hash(product),
            "file": f"{PAYLOAD_DIR}/{attachment_name(product)}",
            "attachments": ([f"{PAYLOAD_DIR}/{attachment_name(p)}" for p in product.levels]
                            if isinstance(product, Hierarchy) else []),
        },
        "criterion": {"canonical": canonicalize(cspec).decode("utf-8"), "digest": digest},
        "implementation": {"id": result.implementation_id, "toolkit_version": __version__,
                           "build_hash": build_hash(), "seed": seed},
        "stability_declaration": dict(stability),
        "quality_metrics": quality_metrics(result, field, level),
        "envelope": envelope.to_dict() if envelope is not None else "none",
        "provenance": {
            "field_hash": field.field_hash,
            "command_line": list(command_line),
            "timestamp": timestamp or utc_timestamp(),
            "parents": sorted(parents),
            "level": level,
        },
        "version": int(version),
    }
    doc["do_id"] = compute_do_id(doc)
    return doc


def _update_manifest(out, do_id, files):
    path = out / MANIFEST
    manifest = load_json_bytes(path.read_bytes()) if path.is_file() else {"objects": {}}
    manifest["objects"][do_id] = sorted(files)
    path.write_bytes(canonical_json(manifest))


def export_do(result, cspec, field, out, **kwargs) -> str:
    """Write the DO for ``result`` under directory ``out`` and return its id.

    An existing document with the same id is left untouched, so repeated
    exports of identical content keep the first provenance timestamp.
    """
    out = Path(out)
    doc = build_do(result, cspec, field, **kwargs)
    (out / PAYLOAD_DIR).mkdir(parents=True, exist_ok=True)
    written = save_product(result.product, out / doc["payload"]["file"])
    if product_hash(load_product(written[0])) != doc["payload"]["product_hash"]:
        raise DOError("payload hash mismatch after writing attachment")
    name = f"{doc['do_id']}.do.json"
    if not (out / name).is_file():
        (out / name).write_bytes(canonical_json(doc))
    files = [name] + [p.relative_to(out).as_posix() for p in written]
    _update_manifest(out, doc["do_id"], files)
    return doc["do_id"]


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class ConformanceReport:
    path: str
    checks: tuple

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.ok]

    def to_dict(self):
        return {"path": self.path, "ok": self.ok,
                "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail}
                           for c in self.checks]}


def _check_item(doc, key):
    label = REQUIRED_ITEMS[key]
    if key not in doc:
        return f"missing {label}"
    value = doc[key]
    if key == "criterion":
        if not isinstance(value, dict) or not isinstance(value.get("canonical"), str):
            return f"malformed {label}"
        if sha256_hex(value["canonical"].encode("utf-8")) != value.get("digest"):
            return f"{label}: digest does not match canonical bytes"
    elif key == "implementation":
        if not isinstance(value, dict) or not value.get("toolkit_version") \
                or not value.get("build_hash"):
            return f"missing {label}: toolkit version and build hash required"
    elif key == "stability_declaration":
        if not isinstance(value, dict) or not any(value.values()):
            return f"missing {label}: no perturbation digests or scale factors"
    elif key == "quality_metrics":
        if not isinstance(value, dict) or "objective" not in value:
            return f"malformed {label}"
    elif key == "envelope":
        if value != "none" and not isinstance(value, dict):
            return f"malformed {label}: expected an envelope or \"none\""
    return None


def _check_payload(doc, base):
    payload = doc["payload"]
    path = base / payload["file"]
    if not path.is_file():
        return f"payload file {payload['file']} not found"
    product = load_product(path)
    if product_type(product) != payload["type"]:
        return f"payload type is {product_type(product)}, declared {payload['type']}"
    got = product_hash(product)
    if got != payload["product_hash"]:
        return f"payload hash {got[:12]} does not match declared {payload['product_hash'][:12]}"
    return None


def verify_do(path) -> ConformanceReport:
    """Run every conformance check independently; never raises."""
    path = Path(path)
    checks = []

    def run(name, fn):
        try:
            problem = fn()
        except Exception as exc:  # report, do not propagate
            problem = f"{type(exc).__name__}: {exc}"
        checks.append(Check(name, problem is None, problem or ""))

    try:
        doc = load_json_bytes(path.read_bytes())
        if not isinstance(doc, dict):
            raise ValueError("document is not a JSON object")
    except Exception as exc:
        checks.append(Check("readable", False, f"{type(exc).__name__}: {exc}"))
        return ConformanceReport(str(path), tuple(checks))
    checks.append(Check("readable", True))

    def schema():
        missing = [k for k in ("do_id", "schema_version", "payload", "provenance", "version")
                   if k not in doc]
        if missing:
            return f"missing fields {missing}"
        if doc["schema_version"] != SCHEMA_VERSION:
            return f"unsupported schema_version {doc['schema_version']!r}"
        if not isinstance(doc["version"], int) or doc["version"] < 1:
            return "version must be a positive integer"
        extra = sorted(set(doc) - set(_TOP_LEVEL))
        if extra:
            return f"unexpected fields {extra}"
        return None

    run("schema", schema)
    for key in REQUIRED_ITEMS:
        run(key, lambda key=key: _check_item(doc, key))
    run("do_id", lambda: None if compute_do_id(doc) == doc.get("do_id")
        else "do_id does not match document content")
    run("payload_hash", lambda: _check_payload(doc, path.parent))

    def envelope():
        env = doc.get("envelope")
        if not isinstance(env, dict):
            return None
        problems = envelope_problems(env)
        return "; ".join(problems) if problems else None

    run("envelope_summary", envelope)
    return ConformanceReport(str(path), tuple(checks))


def load_do(path) -> dict:
    return load_json_bytes(Path(path).read_bytes())


def do_lineage(docs) -> nx.DiGraph:
    """Parent-to-child graph over DO ids.

    Parents missing from ``docs`` become nodes flagged ``external``. Raises
    :class:`LineageError` on cycles or when a version does not increase
    along an edge between known objects.
    """
    g = nx.DiGraph()
    by_id = {d["do_id"]: d for d in docs}
    for do_id, d in sorted(by_id.items()):
        g.add_node(do_id, version=d["version"], external=False)
    for do_id, d in sorted(by_id.items()):
        for parent in d["provenance"].get("parents", []):
            if parent not in by_id:
                g.add_node(parent, version=None, external=True)
            g.add_edge(parent, do_id)
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        raise LineageError(f"lineage cycle among {[a[:12] for a, _ in cycle]}")
    for parent, child in g.edges:
        if g.nodes[parent]["external"]:
            continue
        pv, cv = g.nodes[parent]["version"], g.nodes[child]["version"]
        if not cv > pv:
            raise LineageError(f"version regression {parent[:12]} v{pv} -> {child[:12]} v{cv}")
    return g


__all__ = ["build_do", "export_do", "verify_do", "do_lineage", "compute_do_id",
           "REQUIRED_ITEMS", "ConformanceReport", "Check", "DOError"]
