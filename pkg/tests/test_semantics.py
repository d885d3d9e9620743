import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import half_half, halves_partition
from strukt.field import MeasurementField
from strukt.errors import CompatibilityError, FormatError
from strukt.products import Partition, product_hash
from strukt.semantics import (UNMAPPED, Crosswalk, LabeledProduct, MappingError, Ontology,
                              Rule, SemanticMapping, apply_crosswalk, apply_mapping,
                              load_document, mapping_agreement, save_document)

TONE = Ontology("tone", "1", (("dark", "Dark"), ("bright", "Bright")))
COVER = Ontology("cover", "1", (("water", "Water"), ("land", "Land")))
TONE_MAP = SemanticMapping("tone-by-mean", TONE.ref, (
    Rule("dark", {0: (None, 0.5)}),
    Rule("bright", {0: (0.5, None)}),
))
TONE_TO_COVER = Crosswalk("tone-cover", TONE.ref, COVER.ref,
                          {"dark": "water", "bright": "land"})


@pytest.fixture
def halves():
    return half_half(8, 8, 0.1, 0.9), halves_partition(8, 8)


def test_rules_label_dark_and_bright(halves):
    field, part = halves
    lp = apply_mapping(field, part, TONE_MAP, TONE)
    assert lp.terms == ("dark", "bright")
    assert lp.product_hash == product_hash(part)


def test_empty_rule_list_leaves_regions_unmapped(halves):
    field, part = halves
    lp = apply_mapping(field, part, SemanticMapping("none", TONE.ref), TONE)
    assert lp.terms == (UNMAPPED, UNMAPPED)


def test_two_mappings_share_one_product(halves):
    field, part = halves
    before = product_hash(part)
    by_size = SemanticMapping("by-size", TONE.ref, (Rule("bright", count=(32, None)),))
    a = apply_mapping(field, part, TONE_MAP, TONE)
    b = apply_mapping(field, part, by_size, TONE)
    assert a.product_hash == b.product_hash == product_hash(part) == before
    assert b.terms == ("bright", "bright")
    assert mapping_agreement(a, b) == 0.5


def test_unknown_rule_term_is_named(halves):
    field, part = halves
    bad = SemanticMapping("bad", TONE.ref, (Rule("lava", {0: (0.9, None)}),))
    with pytest.raises(MappingError, match="lava"):
        apply_mapping(field, part, bad, TONE)


def test_ontology_mismatch_rejected(halves):
    field, part = halves
    with pytest.raises(MappingError, match="targets ontology"):
        apply_mapping(field, part, TONE_MAP, COVER)


def test_ontology_validation():
    with pytest.raises(MappingError):
        Ontology("x", "1", ())
    with pytest.raises(MappingError, match="repeats"):
        Ontology("x", "1", (("a", "A"), ("a", "B")))
    with pytest.raises(MappingError, match="reserved"):
        Ontology("x", "1", ((UNMAPPED, "U"),))


def test_rule_ranges_are_half_open():
    class Node:
        mean = (0.5,)
        pixel_count = 10
    assert Rule("t", {0: (0.5, 1.0)}).matches(Node)
    assert not Rule("t", {0: (0.0, 0.5)}).matches(Node)
    assert not Rule("t", {3: (None, None)}).matches(Node)  # channel absent
    assert Rule("t", count=(10, 11)).matches(Node)


# -- crosswalks -----------------------------------------------------------------------

def test_identity_crosswalk(halves):
    field, part = halves
    lp = apply_mapping(field, part, TONE_MAP, TONE)
    ident = Crosswalk("id", TONE.ref, TONE.ref, {"dark": "dark", "bright": "bright"})
    assert apply_crosswalk(lp, ident).terms == lp.terms
    assert ident.problems(TONE, TONE) == []


def test_crosswalk_translates_and_records_provenance(halves):
    field, part = halves
    out = apply_crosswalk(apply_mapping(field, part, TONE_MAP, TONE), TONE_TO_COVER)
    assert out.terms == ("water", "land")
    assert out.ontology_ref == COVER.ref
    assert [s["step"] for s in out.provenance] == ["mapping", "crosswalk"]


def test_strict_crosswalk_names_missing_term(halves):
    field, part = halves
    partial = Crosswalk("partial", TONE.ref, COVER.ref, {"bright": "land"})
    assert any("'dark'" in p for p in partial.problems(TONE, COVER))
    with pytest.raises(MappingError, match="dark"):
        apply_crosswalk(apply_mapping(field, part, TONE_MAP, TONE), partial)


def test_to_unmapped_policy(halves):
    field, part = halves
    lenient = Crosswalk("partial", TONE.ref, COVER.ref, {"bright": "land"}, "to_unmapped")
    out = apply_crosswalk(apply_mapping(field, part, TONE_MAP, TONE), lenient)
    assert out.terms == (UNMAPPED, "land")
    with pytest.raises(MappingError):
        Crosswalk("x", TONE.ref, COVER.ref, {}, "guess")


def test_crosswalk_source_mismatch(halves):
    field, part = halves
    lp = apply_mapping(field, part, TONE_MAP, TONE)
    back = Crosswalk("cover-tone", COVER.ref, TONE.ref, {"water": "dark", "land": "bright"})
    with pytest.raises(MappingError, match="expects"):
        apply_crosswalk(lp, back)


# -- agreement -------------------------------------------------------------------------

def _lp(terms, ref=TONE.ref, h="h"):
    return LabeledProduct(h, tuple(terms), "m", ref)


def test_agreement_identical_and_complementary():
    a = _lp(["dark", "bright", "dark"])
    b = _lp(["bright", "dark", "bright"])
    assert mapping_agreement(a, a) == 1.0
    assert mapping_agreement(a, b) == 0.0


@given(st.lists(st.tuples(st.sampled_from(["dark", "bright"]),
                          st.sampled_from(["dark", "bright"])), min_size=1, max_size=40))
def test_agreement_counts_matches(pairs):
    a = _lp([x for x, _ in pairs])
    b = _lp([y for _, y in pairs])
    assert mapping_agreement(a, b) == sum(x == y for x, y in pairs) / len(pairs)


def test_agreement_across_ontologies_needs_crosswalk():
    a = _lp(["dark", "bright"])
    b = _lp(["water", "land"], ref=COVER.ref)
    with pytest.raises(CompatibilityError, match="crosswalk"):
        mapping_agreement(a, b)
    assert mapping_agreement(a, b, crosswalk_a=TONE_TO_COVER) == 1.0


def test_agreement_requires_same_product():
    with pytest.raises(CompatibilityError):
        mapping_agreement(_lp(["dark"], h="a"), _lp(["dark"], h="b"))


@given(st.permutations([0, 1, 2, 3]))
def test_disjoint_rule_order_is_irrelevant(order):
    rng = np.random.default_rng(3)
    vals = rng.random((1, 6, 6))
    field = MeasurementField(vals)
    part = Partition(np.arange(36).reshape(6, 6) // 9)
    onto = Ontology("q", "1", tuple((f"q{i}", f"Q{i}") for i in range(4)))
    rules = [Rule(f"q{i}", {0: (i / 4, (i + 1) / 4)}) for i in range(4)]
    base = apply_mapping(field, part, SemanticMapping("m", onto.ref, tuple(rules)), onto)
    shuffled = apply_mapping(field, part, SemanticMapping("m", onto.ref,
                                                          tuple(rules[i] for i in order)), onto)
    assert shuffled.terms == base.terms


# -- documents ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind,obj", [
    ("ontology", TONE), ("mapping", TONE_MAP), ("crosswalk", TONE_TO_COVER),
    ("labeled", _lp(["dark", UNMAPPED])),
])
def test_document_round_trip(tmp_path, kind, obj):
    path = tmp_path / f"{kind}.json"
    save_document(obj, path)
    back = load_document(kind, path)
    assert back.to_dict() == obj.to_dict()
    assert back.content_hash() == obj.content_hash()


def test_malformed_document(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"ontology_id": "x"}')
    with pytest.raises(FormatError, match="malformed ontology"):
        load_document("ontology", path)
