"""Sentence splitting, entity-word extraction, and text normalization.

The splitter is rule-based and deterministic: captions are cut at '.', '!'
or '?' unless the terminator sits inside a protected abbreviation or a
decimal number. Entity extraction delegates the language work to a TextGen
backend through a fixed few-shot template and normalizes the reply
(lowercase, singular, deduplicated).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

from .errors import MalformedReply, StageError

# Periods inside these tokens never end a sentence. Case-sensitive on
# purpose: "No." protects "No. 5" while a sentence-final "no." still splits.
DEFAULT_ABBREVIATIONS = frozenset({"e.g.", "i.e.", "etc.", "Mr.", "No."})

_TERMINATORS = ".!?"

EXTRACTION_TEMPLATE_NAME = "extraction_v1.txt"


def _read_asset(subdir: str, name: str) -> str:
    return (
        resources.files("crosscap").joinpath(subdir).joinpath(name).read_text(encoding="utf-8")
    )


@lru_cache(maxsize=None)
def load_prompt_template(name: str) -> str:
    return _read_asset("prompts", name)


@lru_cache(maxsize=None)
def _singular_exceptions() -> dict[str, str]:
    return json.loads(_read_asset("config", "singular_forms.json"))


@lru_cache(maxsize=None)
def default_merge_table() -> dict[str, str]:
    return json.loads(_read_asset("config", "merge_table.json"))


def singularize(word: str) -> str:
    """Map a plural noun to its singular form.

    Finite exception table first, then suffix rules (-ies -> -y,
    -ses -> -s, trailing -s dropped). Unknown irregulars pass through.
    """
    w = word.strip().lower()
    exceptions = _singular_exceptions()
    if w in exceptions:
        return exceptions[w]
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("ses") and len(w) > 4:
        return w[:-2]
    if w.endswith(("ss", "us", "is")):
        return w
    if w.endswith("s") and len(w) > 3:
        return w[:-1]
    return w


def canonicalize(phrase: str, merge_table: dict[str, str] | None = None) -> str:
    """Canonical form of an entity phrase: lowercase, last word singular,
    then category-merge lookup (e.g. automobile -> car)."""
    merge = default_merge_table() if merge_table is None else merge_table
    words = phrase.lower().split()
    if not words:
        return ""
    words[-1] = singularize(words[-1])
    joined = " ".join(words)
    return merge.get(joined, joined)


def canonical_tokens(text: str, merge_table: dict[str, str] | None = None) -> list[str]:
    """Word tokens of `text`, each singularized and category-merged.

    Apostrophes keep contractions whole ("isn't" stays one token, so its
    "n" never reads as "no"); possessive "'s" is dropped before
    singularizing.
    """
    merge = default_merge_table() if merge_table is None else merge_table
    out = []
    for tok in re.findall(r"[a-z0-9']+", text.lower()):
        tok = tok.strip("'")
        if tok.endswith("'s"):
            tok = tok[:-2]
        if not tok:
            continue
        tok = singularize(tok)
        out.append(merge.get(tok, tok))
    return out


def phrase_in_text(phrase: str, text: str, merge_table: dict[str, str] | None = None) -> bool:
    """True when the canonicalized phrase occurs as a consecutive token run
    in the canonicalized text."""
    needle = canonical_tokens(canonicalize(phrase, merge_table), merge_table)
    if not needle:
        return False
    hay = canonical_tokens(text, merge_table)
    n = len(needle)
    return any(hay[i : i + n] == needle for i in range(len(hay) - n + 1))


def _protected_period(text: str, i: int, abbreviations: frozenset[str]) -> bool:
    # Decimal number: digit on both sides.
    if 0 < i < len(text) - 1 and text[i - 1].isdigit() and text[i + 1].isdigit():
        return True
    # Abbreviation: the whole whitespace-delimited token containing this
    # period (so both dots of "e.g." are covered), stripped of surrounding
    # quotes/brackets and trailing comma-like punctuation.
    left = i
    while left > 0 and not text[left - 1].isspace():
        left -= 1
    right = i + 1
    while right < len(text) and not text[right].isspace():
        right += 1
    token = text[left:right].lstrip("\"'([{").rstrip("\"')]},;:")
    return token in abbreviations


def split_sentences(
    caption: str, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
) -> list[str]:
    """Split a caption into sentence fragments.

    Fragments end at '.', '!' or '?' (runs of terminators count once)
    unless the period is protected; whitespace inside fragments is
    collapsed. Joining the fragments with single spaces reproduces the
    caption modulo whitespace normalization.
    """
    fragments: list[str] = []
    start = 0
    i = 0
    n = len(caption)
    while i < n:
        ch = caption[i]
        if ch in _TERMINATORS and not (
            ch == "." and _protected_period(caption, i, abbreviations)
        ):
            # absorb the rest of the terminator run
            j = i
            while j + 1 < n and caption[j + 1] in _TERMINATORS:
                j += 1
            fragment = " ".join(caption[start : j + 1].split())
            if fragment:
                fragments.append(fragment)
            start = j + 1
            i = j + 1
        else:
            i += 1
    tail = " ".join(caption[start:].split())
    if tail:
        fragments.append(tail)
    return fragments


class Stage(Enum):
    RAW = 0
    SPLIT = 1
    EXTRACTED = 2
    CHECKED = 3
    CORRECTED = 4
    ENHANCED = 5


@dataclass
class Sentence:
    index: int
    text: str
    entity_1: list[str] = field(default_factory=list)
    entity_2: list[str] = field(default_factory=list)
    # None = not corrected yet; "" = dropped entirely.
    corrected_text: str | None = None

    @property
    def dropped(self) -> bool:
        return self.corrected_text == ""


@dataclass
class CaptionDocument:
    image: str
    initial_caption: str
    sentences: list[Sentence] = field(default_factory=list)
    stage: Stage = Stage.RAW

    def advance(self, to: Stage) -> None:
        if to.value < self.stage.value:
            raise ValueError(f"stage may not move backwards: {self.stage} -> {to}")
        self.stage = to

    def unique_entities(self) -> list[str]:
        """Union of entity_1 across sentences, first-occurrence order."""
        seen: dict[str, None] = {}
        for sent in self.sentences:
            for entity in sent.entity_1:
                seen.setdefault(entity, None)
        return list(seen)


def make_document(
    image: str, caption: str, abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS
) -> CaptionDocument:
    """Build a document at stage Split from an image ref and its caption."""
    doc = CaptionDocument(image=image, initial_caption=caption)
    doc.sentences = [
        Sentence(index=i, text=text) for i, text in enumerate(split_sentences(caption, abbreviations))
    ]
    doc.advance(Stage.SPLIT)
    return doc


def build_extraction_prompt(sentence: str) -> str:
    """Few-shot extraction prompt with `sentence` as the final query."""
    return load_prompt_template(EXTRACTION_TEMPLATE_NAME).replace("{sentence}", sentence)


_NONE_REPLY = "none"
_TOKEN_EDGE_CHARS = " \t\"'.;:*-•"


def parse_entities(reply: str) -> list[str]:
    """Normalize a TextGen extraction reply into canonical entity words.

    "None" (trimmed, case-insensitive) means no entities. Otherwise the
    reply is split on commas/newlines; each token is lowercased, its last
    word singularized, and duplicates are removed keeping first occurrence.
    """
    text = reply.strip()
    text = re.sub(r"^entities\s*:\s*", "", text, flags=re.IGNORECASE)
    if text.strip().lower() == _NONE_REPLY:
        return []
    if not re.search(r"[A-Za-z]", text):
        raise MalformedReply(f"extraction reply has no alphabetic content: {reply!r}")
    out: list[str] = []
    seen: set[str] = set()
    for raw in re.split(r"[,\n]+", text):
        token = raw.strip(_TOKEN_EDGE_CHARS)
        if not token or not re.search(r"[A-Za-z]", token):
            continue
        words = token.lower().split()
        words[-1] = singularize(words[-1])
        entity = " ".join(words)
        if entity not in seen:
            seen.add(entity)
            out.append(entity)
    return out


def extract_entities(doc: CaptionDocument, gateway, endpoint) -> CaptionDocument:
    """Populate entity_1 for every sentence via one TextGen call each."""
    if doc.stage is not Stage.SPLIT:
        raise ValueError(f"extract_entities requires stage Split, got {doc.stage}")
    for sent in doc.sentences:
        try:
            reply = gateway.generate_text(endpoint, build_extraction_prompt(sent.text))
            sent.entity_1 = parse_entities(reply)
        except Exception as err:  # gateway/parse errors carry the sentence index
            raise StageError(f"extract[sentence {sent.index}]", doc.image, err) from err
    doc.advance(Stage.EXTRACTED)
    return doc
