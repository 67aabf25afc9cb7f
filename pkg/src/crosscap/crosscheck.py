"""Three-verifier existence voting over extracted entities.

Two primary yes/no verifiers answer independently; agreement decides
immediately, disagreement consults the tie-breaker. Decision table
(U = unparseable, which counts as disagreement between primaries and as a
conservative "absent" from the tie-breaker):

    primaries (No, No)            -> Absent,  tie-breaker not queried
    primaries (Yes, Yes)          -> Present, tie-breaker not queried
    anything else, tie-break Yes  -> Present
    anything else, tie-break No   -> Absent
    anything else, tie-break U    -> Absent (UnparseableFallback)
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

from .errors import StageError
from .gateway import BinaryAnswer, BinaryValue
from .text_analysis import canonicalize


class Decision(Enum):
    PRESENT = "present"
    ABSENT = "absent"


class Branch(Enum):
    BOTH_NO = "both_no"
    BOTH_YES = "both_yes"
    TIE_BREAK_YES = "tie_break_yes"
    TIE_BREAK_NO = "tie_break_no"
    UNPARSEABLE_FALLBACK = "unparseable_fallback"


@dataclass(frozen=True)
class Verdict:
    entity: str
    decision: Decision
    branch: Branch
    answers: tuple[BinaryAnswer, BinaryAnswer, BinaryAnswer | None]


@dataclass
class VerdictLedger:
    image: str
    verdicts: list[Verdict]

    def __post_init__(self):
        entities = [v.entity for v in self.verdicts]
        if len(set(entities)) != len(entities):
            raise ValueError("ledger entities must be unique")

    def decision_for(self, entity: str) -> Decision | None:
        for verdict in self.verdicts:
            if verdict.entity == entity:
                return verdict.decision
        return None

    def present_entities(self) -> list[str]:
        return [v.entity for v in self.verdicts if v.decision is Decision.PRESENT]

    def absent_entities(self) -> list[str]:
        return [v.entity for v in self.verdicts if v.decision is Decision.ABSENT]

    def canonical_present(self) -> set[str]:
        return {canonicalize(e) for e in self.present_entities()}

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image,
            "verdicts": [
                {"entity": v.entity, "decision": v.decision.value, "branch": v.branch.value}
                for v in self.verdicts
            ],
        }


def decide(
    primary_a: BinaryValue, primary_b: BinaryValue, tie_break: BinaryValue | None
) -> tuple[Decision, Branch]:
    """Pure decision function; `tie_break` must be None exactly when the
    primaries agree on yes or no."""
    if primary_a is BinaryValue.NO and primary_b is BinaryValue.NO:
        return Decision.ABSENT, Branch.BOTH_NO
    if primary_a is BinaryValue.YES and primary_b is BinaryValue.YES:
        return Decision.PRESENT, Branch.BOTH_YES
    if tie_break is None:
        raise ValueError("primaries disagree: tie-break answer required")
    if tie_break is BinaryValue.YES:
        return Decision.PRESENT, Branch.TIE_BREAK_YES
    if tie_break is BinaryValue.NO:
        return Decision.ABSENT, Branch.TIE_BREAK_NO
    return Decision.ABSENT, Branch.UNPARSEABLE_FALLBACK


def _primaries_agree(a: BinaryValue, b: BinaryValue) -> bool:
    return (a is BinaryValue.NO and b is BinaryValue.NO) or (
        a is BinaryValue.YES and b is BinaryValue.YES
    )


def verify_entity(
    gateway,
    image: str,
    entity: str,
    verifiers: Sequence,
    timer: Callable[[str, float], None] | None = None,
) -> Verdict:
    """Run the vote for one entity. `verifiers` is (primary-A, primary-B,
    tie-breaker); the tie-breaker is queried only when the primaries
    disagree. `timer` receives ("check_a"|"check_b"|"check_tie", ms)."""

    def ask(slot: str, endpoint) -> BinaryAnswer:
        start = time.perf_counter()
        try:
            return gateway.query_binary_vqa(endpoint, image, entity)
        finally:
            if timer is not None:
                timer(slot, (time.perf_counter() - start) * 1000.0)

    answer_a = ask("check_a", verifiers[0])
    answer_b = ask("check_b", verifiers[1])
    answer_c: BinaryAnswer | None = None
    if not _primaries_agree(answer_a.value, answer_b.value):
        answer_c = ask("check_tie", verifiers[2])
    decision, branch = decide(answer_a.value, answer_b.value, answer_c.value if answer_c else None)
    return Verdict(entity=entity, decision=decision, branch=branch, answers=(answer_a, answer_b, answer_c))


def filter_entities(
    gateway,
    image: str,
    entities: Iterable[str],
    verifiers: Sequence,
    timer: Callable[[str, float], None] | None = None,
) -> VerdictLedger:
    """One verdict per entity, ledger order = input order. Entities must
    arrive deduplicated (union of per-sentence lists, first occurrence)."""
    entities = list(entities)
    if len(set(entities)) != len(entities):
        raise ValueError("entities must be deduplicated upstream")
    verdicts: list[Verdict] = []
    for entity in entities:
        try:
            verdicts.append(verify_entity(gateway, image, entity, verifiers, timer))
        except Exception as err:
            raise StageError(f"crosscheck[{entity}]", image, err) from err
    return VerdictLedger(image=image, verdicts=verdicts)
