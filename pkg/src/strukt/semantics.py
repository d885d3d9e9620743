"""Downstream semantic mappings from structural products into ontologies.

Mappings are declarative rule lists over region statistics. They never
modify a structural product: every labeled output refers to its product by
``product_hash`` only, so any number of mappings (and crosswalks between
their ontologies) can coexist on top of one extraction.
"""

from dataclasses import dataclass, field
from pathlib import Path

from ._canon import canonical_json, load_json_bytes, sha256_hex
from .errors import CompatibilityError, FormatError, StruktError
from .products import Partition, product_hash, region_graph, relabel_canonical

UNMAPPED = "unmapped"
CROSSWALK_POLICIES = ("strict", "to_unmapped")


class MappingError(StruktError, ValueError):
    """A mapping or crosswalk refers to terms its ontology does not define."""


def _doc_hash(doc):
    return sha256_hex(canonical_json(doc))


@dataclass(frozen=True)
class Ontology:
    ontology_id: str
    version: str
    terms: tuple  # ((term_id, display_name), ...)

    def __post_init__(self):
        terms = tuple((str(t), str(name)) for t, name in self.terms)
        ids = [t for t, _ in terms]
        if not ids:
            raise MappingError(f"ontology {self.ontology_id} has no terms")
        if len(set(ids)) != len(ids):
            dupes = sorted({t for t in ids if ids.count(t) > 1})
            raise MappingError(f"ontology {self.ontology_id} repeats term ids {dupes}")
        if UNMAPPED in ids:
            raise MappingError(f"'{UNMAPPED}' is reserved and cannot be declared as a term")
        object.__setattr__(self, "terms", terms)

    @property
    def ref(self):
        return (self.ontology_id, self.version)

    @property
    def term_ids(self):
        return frozenset(t for t, _ in self.terms) | {UNMAPPED}

    def to_dict(self):
        return {"ontology_id": self.ontology_id, "version": self.version,
                "terms": [{"id": t, "name": n} for t, n in self.terms]}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["ontology_id"], doc["version"],
                   tuple((t["id"], t.get("name", t["id"])) for t in doc["terms"]))

    def content_hash(self):
        return _doc_hash(self.to_dict())


def _range(pair):
    lo, hi = (None, None) if pair is None else pair
    return (None if lo is None else float(lo), None if hi is None else float(hi))


def _in_range(x, bounds):
    lo, hi = bounds
    return (lo is None or x >= lo) and (hi is None or x < hi)


@dataclass(frozen=True)
class Rule:
    """Assign ``term`` when every stated range holds (``lo <= x < hi``; None is open)."""

    term: str
    mean: tuple = ()  # ((channel, (lo, hi)), ...)
    count: tuple = (None, None)

    def __post_init__(self):
        mean = tuple(sorted((int(c), _range(r)) for c, r in dict(self.mean).items()))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "count", _range(self.count))

    def matches(self, node) -> bool:
        for ch, bounds in self.mean:
            if ch >= len(node.mean) or not _in_range(node.mean[ch], bounds):
                return False
        return _in_range(node.pixel_count, self.count)

    def to_dict(self):
        return {"term": self.term,
                "mean": {str(c): list(r) for c, r in self.mean},
                "count": list(self.count)}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["term"], {int(c): r for c, r in doc.get("mean", {}).items()},
                   doc.get("count", (None, None)))


@dataclass(frozen=True)
class SemanticMapping:
    mapping_id: str
    ontology_ref: tuple  # (ontology_id, version)
    rules: tuple = ()
    default_term: str = UNMAPPED

    def __post_init__(self):
        object.__setattr__(self, "ontology_ref", tuple(self.ontology_ref))
        object.__setattr__(self, "rules", tuple(self.rules))

    def problems(self, ontology: Ontology) -> list:
        out = []
        if ontology.ref != self.ontology_ref:
            out.append(f"mapping {self.mapping_id} targets ontology {self.ontology_ref}, "
                       f"got {ontology.ref}")
        known = ontology.term_ids
        for i, rule in enumerate(self.rules):
            if rule.term not in known:
                out.append(f"rule {i} term '{rule.term}' is not in ontology "
                           f"{ontology.ontology_id}")
        if self.default_term not in known:
            out.append(f"default term '{self.default_term}' is not in ontology "
                       f"{ontology.ontology_id}")
        return out

    def assign(self, node) -> str:
        for rule in self.rules:
            if rule.matches(node):
                return rule.term
        return self.default_term

    def to_dict(self):
        return {"mapping_id": self.mapping_id,
                "ontology": {"id": self.ontology_ref[0], "version": self.ontology_ref[1]},
                "rules": [r.to_dict() for r in self.rules],
                "default_term": self.default_term}

    @classmethod
    def from_dict(cls, doc):
        ref = (doc["ontology"]["id"], doc["ontology"]["version"])
        return cls(doc["mapping_id"], ref, tuple(Rule.from_dict(r) for r in doc["rules"]),
                   doc.get("default_term", UNMAPPED))

    def content_hash(self):
        return _doc_hash(self.to_dict())


@dataclass(frozen=True)
class LabeledProduct:
    product_hash: str
    terms: tuple  # term per canonical region id
    mapping_id: str
    ontology_ref: tuple
    provenance: tuple = ()

    def to_dict(self):
        return {"product_hash": self.product_hash,
                "mapping_id": self.mapping_id,
                "ontology": {"id": self.ontology_ref[0], "version": self.ontology_ref[1]},
                "regions": list(self.terms),
                "provenance": [dict(p) for p in self.provenance]}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["product_hash"], tuple(doc["regions"]), doc["mapping_id"],
                   (doc["ontology"]["id"], doc["ontology"]["version"]),
                   tuple(doc.get("provenance", ())))

    def content_hash(self):
        return _doc_hash(self.to_dict())


@dataclass(frozen=True)
class Crosswalk:
    crosswalk_id: str
    source_ref: tuple
    target_ref: tuple
    term_map: dict = field(default_factory=dict)
    policy: str = "strict"

    def __post_init__(self):
        if self.policy not in CROSSWALK_POLICIES:
            raise MappingError(f"unknown crosswalk policy {self.policy!r}")
        object.__setattr__(self, "source_ref", tuple(self.source_ref))
        object.__setattr__(self, "target_ref", tuple(self.target_ref))
        object.__setattr__(self, "term_map", dict(sorted(self.term_map.items())))

    def problems(self, source: Ontology, target: Ontology) -> list:
        out = []
        if source.ref != self.source_ref:
            out.append(f"crosswalk source is {self.source_ref}, got {source.ref}")
        if target.ref != self.target_ref:
            out.append(f"crosswalk target is {self.target_ref}, got {target.ref}")
        for s, t in self.term_map.items():
            if s not in source.term_ids:
                out.append(f"source term '{s}' is not in ontology {source.ontology_id}")
            if t not in target.term_ids:
                out.append(f"target term '{t}' is not in ontology {target.ontology_id}")
        if self.policy == "strict":
            for s in sorted(source.term_ids - {UNMAPPED} - set(self.term_map)):
                out.append(f"source term '{s}' has no target under strict policy")
        return out

    def translate(self, term: str) -> str:
        if term in self.term_map:
            return self.term_map[term]
        if term == UNMAPPED or self.policy == "to_unmapped":
            return UNMAPPED
        raise MappingError(f"crosswalk {self.crosswalk_id} has no target for '{term}' "
                           "under strict policy")

    def to_dict(self):
        return {"crosswalk_id": self.crosswalk_id,
                "source": {"id": self.source_ref[0], "version": self.source_ref[1]},
                "target": {"id": self.target_ref[0], "version": self.target_ref[1]},
                "map": dict(self.term_map), "policy": self.policy}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["crosswalk_id"], (doc["source"]["id"], doc["source"]["version"]),
                   (doc["target"]["id"], doc["target"]["version"]), dict(doc["map"]),
                   doc.get("policy", "strict"))

    def content_hash(self):
        return _doc_hash(self.to_dict())


def apply_mapping(field, p: Partition, mapping: SemanticMapping,
                  ontology: Ontology) -> LabeledProduct:
    """Label every region of ``p`` with the first matching rule's term."""
    problems = mapping.problems(ontology)
    if problems:
        raise MappingError("; ".join(problems))
    p = relabel_canonical(p)
    graph = region_graph(field, p)
    terms = tuple(mapping.assign(node) for node in graph.nodes)
    step = {"step": "mapping", "mapping_id": mapping.mapping_id,
            "mapping_hash": mapping.content_hash()}
    return LabeledProduct(product_hash(p), terms, mapping.mapping_id, ontology.ref, (step,))


def apply_crosswalk(lp: LabeledProduct, cw: Crosswalk) -> LabeledProduct:
    if lp.ontology_ref != cw.source_ref:
        raise MappingError(f"labeled product uses ontology {lp.ontology_ref}, crosswalk "
                           f"{cw.crosswalk_id} expects {cw.source_ref}")
    terms = tuple(cw.translate(t) for t in lp.terms)
    step = {"step": "crosswalk", "crosswalk_id": cw.crosswalk_id,
            "crosswalk_hash": cw.content_hash()}
    return LabeledProduct(lp.product_hash, terms, lp.mapping_id, cw.target_ref,
                          lp.provenance + (step,))


def mapping_agreement(a: LabeledProduct, b: LabeledProduct,
                      crosswalk_a: Crosswalk | None = None,
                      crosswalk_b: Crosswalk | None = None) -> float:
    """Fraction of regions given the same term, after optional crosswalks."""
    if a.product_hash != b.product_hash:
        raise CompatibilityError("labeled products refer to different structural products")
    if crosswalk_a is not None:
        a = apply_crosswalk(a, crosswalk_a)
    if crosswalk_b is not None:
        b = apply_crosswalk(b, crosswalk_b)
    if a.ontology_ref != b.ontology_ref:
        raise CompatibilityError(f"labels live in different ontologies {a.ontology_ref} and "
                                 f"{b.ontology_ref}; supply a crosswalk")
    if len(a.terms) != len(b.terms):
        raise CompatibilityError("labeled products disagree on the region count")
    same = sum(x == y for x, y in zip(a.terms, b.terms))
    return same / len(a.terms)


_LOADERS = {"ontology": Ontology, "mapping": SemanticMapping,
            "labeled": LabeledProduct, "crosswalk": Crosswalk}


def save_document(obj, path):
    Path(path).write_bytes(canonical_json(obj.to_dict()))


def load_document(kind, path):
    """Read an ontology, mapping, labeled product, or crosswalk JSON file."""
    try:
        doc = load_json_bytes(Path(path).read_bytes())
        return _LOADERS[kind].from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, StruktError):
            raise
        raise FormatError(f"malformed {kind} document {Path(path).name}: {exc}") from None
