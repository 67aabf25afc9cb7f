from __future__ import annotations

import random

import pytest

from conftest import DATA_DIR, fixture_endpoint, simple_scenario, write_scenarios
from crosscap.correction import (
    CorrectionRequest,
    assemble_corrected,
    build_correction_prompt,
    correct_document,
    correct_sentence,
    restrict_entities,
)
from crosscap.crosscheck import Branch, Decision, Verdict, VerdictLedger
from crosscap.errors import MissingVerdict
from crosscap.gateway import BackendRole, BinaryAnswer, BinaryValue, Gateway
from crosscap.text_analysis import Stage, make_document

YES = BinaryAnswer(BinaryValue.YES, "yes")
NO = BinaryAnswer(BinaryValue.NO, "no")


def ledger_for(image: str, decisions: dict[str, Decision]) -> VerdictLedger:
    verdicts = [
        Verdict(
            entity,
            decision,
            Branch.BOTH_YES if decision is Decision.PRESENT else Branch.BOTH_NO,
            (YES, YES, None) if decision is Decision.PRESENT else (NO, NO, None),
        )
        for entity, decision in decisions.items()
    ]
    return VerdictLedger(image=image, verdicts=verdicts)


# ── restrict_entities ──────────────────────────────────────────────────

def test_restrict_filters_absent():
    ledger = ledger_for("i", {"car": Decision.PRESENT, "bench": Decision.ABSENT})
    assert restrict_entities(["car", "bench"], ledger) == ["car"]


def test_restrict_empty():
    assert restrict_entities([], ledger_for("i", {})) == []


def test_restrict_missing_verdict():
    with pytest.raises(MissingVerdict):
        restrict_entities(["car"], ledger_for("i", {}))


def test_restrict_matches_set_difference_oracle():
    rng = random.Random(3)
    entities = [f"e{i}" for i in range(20)]
    for _ in range(25):
        sentence_entities = rng.sample(entities, rng.randint(0, 12))
        decisions = {e: rng.choice([Decision.PRESENT, Decision.ABSENT]) for e in entities}
        ledger = ledger_for("i", decisions)
        expected = [e for e in sentence_entities if decisions[e] is Decision.PRESENT]
        assert restrict_entities(sentence_entities, ledger) == expected


# ── correction prompt ──────────────────────────────────────────────────

def test_prompt_fields_each_appear_once():
    req = CorrectionRequest(
        sentence="An unusual zebra stands next to a vivid kiosk.",
        entity_1=("zebra", "kiosk"),
        entity_2=("zebra",),
    )
    prompt = build_correction_prompt(req)
    assert prompt.count(req.sentence) == 1
    assert prompt.count("zebra, kiosk") == 1


def test_prompt_golden():
    req = CorrectionRequest(
        sentence="There is a car and a bench near the road.",
        entity_1=("car", "bench", "road"),
        entity_2=("car", "road"),
    )
    golden = (DATA_DIR / "correction_prompt.golden.txt").read_text(encoding="utf-8")
    assert build_correction_prompt(req) == golden


def test_prompt_empty_entity_2_renders_none():
    req = CorrectionRequest(sentence="A bench stands here.", entity_1=("bench",), entity_2=())
    prompt = build_correction_prompt(req)
    golden = (DATA_DIR / "correction_prompt_none.golden.txt").read_text(encoding="utf-8")
    assert prompt == golden
    assert "Verified entities: None" in prompt


def test_prompt_requires_difference():
    req = CorrectionRequest(sentence="s", entity_1=("car",), entity_2=("car",))
    with pytest.raises(ValueError):
        build_correction_prompt(req)


def test_entity_2_must_be_subset():
    with pytest.raises(ValueError):
        CorrectionRequest(sentence="s", entity_1=("car",), entity_2=("bench",))


# ── correct_sentence ───────────────────────────────────────────────────

class CountingScript:
    def __init__(self, reply):
        self.reply = reply
        self.calls = 0

    def call(self, op, request):
        self.calls += 1
        return {"text": self.reply, "tags": None, "detections": None, "latency_ms": 0}


def textgen_gateway(reply):
    from crosscap.gateway import BackendEndpoint, TransportKind

    ep = BackendEndpoint(
        id="tg", role=BackendRole.TEXT_GEN, transport=TransportKind.HTTP, address="http://localhost:1/x"
    )
    transport = CountingScript(reply)
    return Gateway([ep], transports={"tg": transport}), ep, transport


def test_identical_entity_lists_skip_the_call():
    gateway, ep, transport = textgen_gateway("should not be used")
    req = CorrectionRequest(
        sentence="There are two cars on the street.",
        entity_1=("car", "street"),
        entity_2=("street", "car"),  # same set, different order
    )
    assert correct_sentence(gateway, ep, req) == req.sentence
    assert transport.calls == 0


def test_scripted_rewrite_passes_through():
    gateway, ep, _ = textgen_gateway("A car is parked.")
    req = CorrectionRequest(sentence="x", entity_1=("car", "bench"), entity_2=("car",))
    assert correct_sentence(gateway, ep, req) == "A car is parked."


def test_empty_rewrite_drops_sentence():
    gateway, ep, _ = textgen_gateway("")
    req = CorrectionRequest(sentence="A bench.", entity_1=("bench",), entity_2=())
    assert correct_sentence(gateway, ep, req) == ""


# ── document-level correction and assembly ─────────────────────────────

def make_checked_document(caption, entity_lists):
    doc = make_document("img1", caption)
    for sentence, entities in zip(doc.sentences, entity_lists):
        sentence.entity_1 = entities
    doc.advance(Stage.CHECKED)
    return doc


def test_correct_document_call_count_matches_changed_sentences(tmp_path):
    path = write_scenarios(tmp_path / "f.json", {"img1": simple_scenario(present=("car",), tag_pool=(), captions={})})
    ep = fixture_endpoint("tg", BackendRole.TEXT_GEN, path)
    gateway = Gateway([ep])

    doc = make_checked_document(
        "There is a car. There is a bench. Just scenery words here.",
        [["car"], ["bench"], []],
    )
    ledger = ledger_for("img1", {"car": Decision.PRESENT, "bench": Decision.ABSENT})
    audit = correct_document(doc, gateway, ep, ledger)
    # zero-call property: only the bench sentence differs in entity sets
    assert gateway.call_count("tg", "generate") == 1
    assert [a["dropped"] for a in audit] == [False, True, False]
    text = assemble_corrected(doc)
    assert text == "There is a car. Just scenery words here."
    assert doc.stage is Stage.CORRECTED
    # no absent entity token survives in the corrected caption
    assert "bench" not in text


def test_assemble_middle_dropped():
    doc = make_checked_document("One here. Two here. Three here.", [[], [], []])
    for sentence, corrected in zip(doc.sentences, ["One here.", "", "Three here."]):
        sentence.corrected_text = corrected
    assert assemble_corrected(doc) == "One here. Three here."


def test_assemble_all_dropped_empty():
    doc = make_checked_document("One. Two.", [[], []])
    for sentence in doc.sentences:
        sentence.corrected_text = ""
    assert assemble_corrected(doc) == ""
    assert all(s.dropped for s in doc.sentences)


def test_assemble_unmodified_equals_normalized_caption():
    caption = "A car  waits. A person   walks."
    doc = make_checked_document(caption, [[], []])
    for sentence in doc.sentences:
        sentence.corrected_text = sentence.text
    assert assemble_corrected(doc) == " ".join(caption.split())


def test_assemble_requires_corrections():
    doc = make_checked_document("One. Two.", [[], []])
    with pytest.raises(ValueError):
        assemble_corrected(doc)


def test_faithful_fixture_rewrite_removes_hallucinated_tokens(tmp_path):
    path = write_scenarios(tmp_path / "f.json", {"img1": simple_scenario(present=("car", "road"), tag_pool=(), captions={})})
    ep = fixture_endpoint("tg", BackendRole.TEXT_GEN, path)
    gateway = Gateway([ep])
    req = CorrectionRequest(
        sentence="There is a car and a bench near the road.",
        entity_1=("car", "bench", "road"),
        entity_2=("car", "road"),
    )
    rewritten = correct_sentence(gateway, ep, req)
    assert "bench" not in rewritten
    assert "car" in rewritten and "road" in rewritten
