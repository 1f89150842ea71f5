import json
import random
from fractions import Fraction

import pytest

from _instances import random_model
from conftest import FIXTURES, RAC_MODEL, ROOT
from retrofit.ingest import (
    FINDING_CODES,
    Finding,
    Severity,
    load_model,
    parse_model,
    serialize_model,
    validate_model,
)
from retrofit.model import Model, TreeNode

GOLDEN_CANONICAL = ROOT / "tests" / "golden" / "rac.canonical.json"
DEFECTS = json.loads((FIXTURES / "defects_expected.json").read_text())


def codes(findings):
    return [f.code for f in findings]


def test_parse_well_formed(three_measures):
    assert isinstance(three_measures, Model)
    assert len(three_measures.threats) == 3
    assert len(three_measures.countermeasures) == 3
    assert three_measures.countermeasure("m2").factor_for("t2") == Fraction(1)


@pytest.mark.parametrize("name", sorted(DEFECTS))
def test_seeded_defect_yields_expected_code(name):
    result = parse_model((FIXTURES / "defects" / name).read_bytes())
    assert isinstance(result, list)
    assert codes(result) == [DEFECTS[name]]
    assert result[0].severity is Severity.ERROR


def test_dangling_leaf_reference_location():
    (finding,) = parse_model((FIXTURES / "defects" / "dangling-leaf-ref.json").read_bytes())
    assert finding.code == "E-BAD-REF"
    assert finding.location == "/tree/children/1/threats/1"
    assert "t-ghost" in finding.message


def test_syntax_error_reports_line_and_column():
    (finding,) = parse_model(b'{\n  "version": 1,\n  oops\n}')
    assert finding.code == "E-SYNTAX"
    assert finding.message.startswith("line 3 column 3")


def test_codes_are_documented():
    for name, code in DEFECTS.items():
        assert code in FINDING_CODES, name


def test_uncovered_is_only_a_warning():
    model, findings = load_model((FIXTURES / "uncovered.json").read_bytes())
    assert model is not None
    assert codes(findings) == ["W-UNCOVERED"]
    assert findings[0].location == "/threats/3"


def test_zero_factor_does_not_count_as_coverage(three_measures):
    doc = json.loads(serialize_model(three_measures))
    doc["countermeasures"][0]["mitigates"][0]["factor"] = 0
    model, findings = load_model(json.dumps(doc).encode())
    assert codes(findings) == ["W-UNCOVERED"]


def test_blank_notes_warn(three_measures):
    doc = json.loads(serialize_model(three_measures))
    doc["threats"][0]["notes"] = "  "
    model, findings = load_model(json.dumps(doc).encode())
    assert model is not None
    assert codes(findings) == ["W-EMPTY-NOTES"]


def test_validate_clean_models_empty(three_measures, rac):
    assert validate_model(three_measures) == []
    assert validate_model(rac) == []


def test_validate_orphan_on_constructed_model(three_measures):
    tree = TreeNode("root", "root", threat_refs=("t1", "t2"))
    model = Model(three_measures.threats, tree, three_measures.countermeasures, three_measures.config)
    assert codes(validate_model(model)) == ["E-ORPHAN-THREAT"]


def test_findings_sorted_by_position_then_code(three_measures):
    doc = json.loads(serialize_model(three_measures))
    doc["tree"]["children"][0]["threats"] = ["t1"]  # t2 orphaned
    doc["countermeasures"][2]["mitigates"][0]["threat"] = "t-gone"  # t3 uncovered, bad ref
    findings = validate_model(_structural(doc))
    assert [(f.code, f.location) for f in findings] == [
        ("E-ORPHAN-THREAT", "/threats/1"),
        ("W-UNCOVERED", "/threats/2"),
        ("E-BAD-REF", "/countermeasures/2/mitigates/0/threat"),
    ]


def _structural(doc) -> Model:
    from retrofit.ingest import _Collector, _parse_structure

    out = _Collector()
    model = _parse_structure(json.dumps(doc).encode(), out)
    assert model is not None, out.findings
    return model


def test_round_trip_all_fixtures(three_measures, uncovered, rac):
    for model in (three_measures, uncovered, rac):
        data = serialize_model(model)
        again = load_model(data)[0]
        assert again == model
        assert serialize_model(again) == data
        assert data.endswith(b"\n")


def test_round_trip_random_models():
    rng = random.Random(7)
    for _ in range(50):
        model = random_model(rng)
        assert parse_model(serialize_model(model)) == model


def test_key_order_does_not_matter(three_measures):
    doc = json.loads(serialize_model(three_measures))

    def reverse(obj):
        if isinstance(obj, dict):
            return {k: reverse(obj[k]) for k in reversed(list(obj))}
        if isinstance(obj, list):
            return [reverse(v) for v in obj]
        return obj

    shuffled = json.dumps(reverse(doc)).encode()
    assert serialize_model(parse_model(shuffled)) == serialize_model(three_measures)


def test_factor_decimal_precision_survives_round_trip(three_measures):
    doc = json.loads(serialize_model(three_measures))
    doc["countermeasures"][0]["mitigates"][0]["factor"] = 0.1234
    doc["countermeasures"][1]["mitigates"][0]["factor"] = 0.0001
    model = parse_model(json.dumps(doc).encode())
    assert model.countermeasure("m1").factor_for("t1") == Fraction(1234, 10_000)
    text = serialize_model(model).decode()
    assert '"factor": 0.1234' in text and '"factor": 0.0001' in text
    assert parse_model(text.encode()) == model


def test_rac_matches_golden_canonical_file(rac):
    assert serialize_model(rac) == GOLDEN_CANONICAL.read_bytes()


def _mutate(rng: random.Random, data: bytes) -> bytes:
    buf = bytearray(data)
    for _ in range(rng.randint(1, 4)):
        op = rng.randrange(4)
        pos = rng.randrange(len(buf) + 1)
        if op == 0 and buf:
            buf[min(pos, len(buf) - 1)] = rng.randrange(256)
        elif op == 1:
            buf.insert(pos, rng.choice(b'{}[]",:0123456789-.eE \n\xff'))
        elif op == 2 and buf:
            del buf[min(pos, len(buf) - 1)]
        else:
            end = min(len(buf), pos + rng.randint(1, 40))
            buf[pos:pos] = buf[pos:end]
    return bytes(buf)


def test_parse_is_total_under_mutation():
    rng = random.Random(20240611)
    sources = [(FIXTURES / "three_measures.json").read_bytes(), RAC_MODEL.read_bytes()]
    outcomes = {"model": 0, "findings": 0}
    for i in range(10_000):
        data = _mutate(rng, sources[i % 2])
        result = parse_model(data)
        if isinstance(result, Model):
            outcomes["model"] += 1
        else:
            assert result and any(f.is_error for f in result)
            assert all(isinstance(f, Finding) for f in result)
            outcomes["findings"] += 1
    assert outcomes["findings"] > 0


def _brute_counts(node, counts):
    if node.is_leaf:
        for ref in node.threat_refs:
            counts[ref] = counts.get(ref, 0) + 1
    for child in node.children:
        _brute_counts(child, counts)
    return counts


def test_completeness_agrees_with_brute_force_count():
    rng = random.Random(11)
    for _ in range(300):
        model = random_model(rng, max_measures=3, max_threats=8)
        ids = [t.id for t in model.threats]
        # scramble leaf contents so some threats vanish and others repeat
        leaves = []
        for i in range(rng.randint(1, 5)):
            refs = tuple(rng.choice(ids) for _ in range(rng.randint(1, 3)))
            leaves.append(TreeNode(f"l{i}", "leaf", threat_refs=refs))
        tree = TreeNode("root", "root", children=tuple(leaves))
        scrambled = Model(model.threats, tree, model.countermeasures, model.config)
        counts = _brute_counts(tree, {})
        findings = validate_model(scrambled)
        orphans = {f.location for f in findings if f.code == "E-ORPHAN-THREAT"}
        dups = sum(1 for f in findings if f.code == "E-DUP-LEAF")
        assert orphans == {f"/threats/{i}" for i, t in enumerate(ids) if counts.get(t, 0) == 0}
        assert dups == sum(1 for t in ids if counts.get(t, 0) > 1)
