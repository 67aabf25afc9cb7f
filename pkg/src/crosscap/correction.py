"""Sentence rewriting: drop descriptions of entities that failed the vote."""

from __future__ import annotations

from dataclasses import dataclass

from .crosscheck import Decision, VerdictLedger
from .errors import EmptyResponse, MissingVerdict
from .text_analysis import CaptionDocument, Stage, load_prompt_template

CORRECTION_TEMPLATE_NAME = "correction_v1.txt"

# rendering of an empty entity list inside the prompt
NONE_TOKEN = "None"


@dataclass(frozen=True)
class CorrectionRequest:
    sentence: str
    entity_1: tuple[str, ...]
    entity_2: tuple[str, ...]

    def __post_init__(self):
        if not set(self.entity_2) <= set(self.entity_1):
            raise ValueError("entity_2 must be a subset of entity_1")

    @property
    def unchanged(self) -> bool:
        return set(self.entity_1) == set(self.entity_2)


def restrict_entities(sentence_entities: list[str], ledger: VerdictLedger) -> list[str]:
    """Keep the entities the ledger marks Present, order preserved."""
    kept = []
    for entity in sentence_entities:
        decision = ledger.decision_for(entity)
        if decision is None:
            raise MissingVerdict(f"entity {entity!r} has no verdict in the ledger")
        if decision is Decision.PRESENT:
            kept.append(entity)
    return kept


def _render_entities(entities: tuple[str, ...]) -> str:
    return ", ".join(entities) if entities else NONE_TOKEN


def build_correction_prompt(req: CorrectionRequest) -> str:
    if req.unchanged:
        raise ValueError("correction prompt requested for an unchanged sentence")
    template = load_prompt_template(CORRECTION_TEMPLATE_NAME)
    # the sentence is substituted last so its content is never re-scanned
    return (
        template.replace("{entity_1}", _render_entities(req.entity_1))
        .replace("{entity_2}", _render_entities(req.entity_2))
        .replace("{sentence}", req.sentence)
    )


def correct_sentence(gateway, endpoint, req: CorrectionRequest) -> str:
    """Rewrite one sentence; returns "" (the drop marker) when the rewrite
    comes back empty. No TextGen call is made when nothing was filtered."""
    if req.unchanged:
        return req.sentence
    try:
        return gateway.generate_text(endpoint, build_correction_prompt(req)).strip()
    except EmptyResponse:
        return ""


def correct_document(doc: CaptionDocument, gateway, endpoint, ledger: VerdictLedger) -> list[dict]:
    """Fill entity_2/corrected_text on every sentence; returns the per-
    sentence audit records."""
    audit: list[dict] = []
    for sent in doc.sentences:
        sent.entity_2 = restrict_entities(sent.entity_1, ledger)
        req = CorrectionRequest(
            sentence=sent.text, entity_1=tuple(sent.entity_1), entity_2=tuple(sent.entity_2)
        )
        sent.corrected_text = correct_sentence(gateway, endpoint, req)
        audit.append(
            {
                "index": sent.index,
                "original": sent.text,
                "entity_1": list(sent.entity_1),
                "entity_2": list(sent.entity_2),
                "corrected": sent.corrected_text,
                "dropped": sent.dropped,
            }
        )
    return audit


def assemble_corrected(doc: CaptionDocument) -> str:
    """Join the surviving rewrites in original order; advances the stage."""
    pending = [s.index for s in doc.sentences if s.corrected_text is None]
    if pending:
        raise ValueError(f"sentences not corrected yet: {pending}")
    text = " ".join(s.corrected_text for s in doc.sentences if not s.dropped)
    doc.advance(Stage.CORRECTED)
    return text
