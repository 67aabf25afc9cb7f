"""Deterministic fixture backends standing in for live models.

A fixture scenario file describes, per image, which objects actually exist,
what the tagger would propose, and how each object would be described. The
fixture backend answers every gateway operation as a pure function of
(scenario, seed, request): VQA answers follow set membership (optionally
flipped by a seeded per-(image, entity, endpoint) hash to emulate verifier
noise), and the text-generation role recognizes the first-party prompt
templates and answers them faithfully, so the whole pipeline runs offline.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, TransportError
from .text_analysis import canonical_tokens, canonicalize, phrase_in_text

# Nouns the faithful extractor recognizes besides scenario-defined objects;
# covers hallucinated caption entities that exist in no scenario.
DEFAULT_LEXICON = frozenset(
    {
        "animal", "backpack", "barrier", "bench", "bicycle", "bird", "boat",
        "bridge", "building", "bus", "car", "cat", "crosswalk", "cyclist",
        "dog", "fence", "grass", "handbag", "helmet", "house", "intersection",
        "lamp", "motorcycle", "mountain", "pedestrian", "person", "pole",
        "river", "road", "sidewalk", "sign", "sky", "street", "streetlight",
        "stroller", "traffic cone", "traffic light", "traffic sign", "train",
        "tree", "truck", "umbrella", "van", "wall",
    }
)

DESCRIBE_IMAGE_PROMPT = "Please describe the image in detail."

_VQA_RE = re.compile(r"^Is there a (.+) in the image\? Please answer only with yes or no\.$")
_SENTENCE_RE = re.compile(r"^Sentence: (.*)$", re.MULTILINE)
_CORRECTION_RE = re.compile(
    r"^Sentence: (.*)\nInitial entities: (.*)\nVerified entities: (.*)\nCorrected:",
    re.MULTILINE,
)
_JUDGE_RE = re.compile(
    r"^Description: (.*)\nQuestion: Is there a (.+) in the image\?$", re.MULTILINE
)

_ARTICLES = {"a", "an", "the", "one", "two", "three", "some", "several", "many"}


def noise_flip(seed: int, image_id: str, entity: str, endpoint_id: str, rate: float) -> bool:
    """Stateless seeded coin: flip the membership answer with probability
    `rate`, keyed by (seed, image, entity, endpoint)."""
    if rate <= 0.0:
        return False
    key = f"{seed}:{image_id}:{entity}:{endpoint_id}".encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64 < rate


@dataclass(frozen=True)
class FixtureScenario:
    image_id: str
    present_objects: frozenset[str]
    tag_pool: tuple[tuple[str, float], ...]
    object_captions: dict[str, str]
    vqa_error_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.vqa_error_rate < 1.0:
            raise ConfigError(f"{self.image_id}: vqa_error_rate must be in [0,1)")
        for tag, score in self.tag_pool:
            if not 0.0 <= score <= 1.0:
                raise ConfigError(f"{self.image_id}: tag {tag!r} score {score} not in [0,1]")

    @property
    def canonical_present(self) -> frozenset[str]:
        return frozenset(canonicalize(obj) for obj in self.present_objects)

    @classmethod
    def from_dict(cls, image_id: str, data: dict) -> "FixtureScenario":
        declared = data.get("image_id", image_id)
        if declared != image_id:
            raise ConfigError(f"scenario key {image_id!r} declares image_id {declared!r}")
        try:
            return cls(
                image_id=image_id,
                present_objects=frozenset(data["present_objects"]),
                tag_pool=tuple((str(t), float(s)) for t, s in data.get("tag_pool", [])),
                object_captions=dict(data.get("object_captions", {})),
                vqa_error_rate=float(data.get("vqa_error_rate", 0.0)),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"scenario {image_id!r} is malformed: {err}") from err


def load_scenarios(path: str | Path) -> dict[str, FixtureScenario]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise ConfigError(f"cannot read fixture file {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"fixture file {path} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"fixture file {path} must map image ids to scenarios")
    return {image_id: FixtureScenario.from_dict(image_id, data) for image_id, data in raw.items()}


def validate_fixture_file(path: str | Path) -> list[str]:
    """Return a list of problems; empty means the file is usable."""
    problems: list[str] = []
    try:
        scenarios = load_scenarios(path)
    except ConfigError as err:
        return [str(err)]
    for image_id, scenario in scenarios.items():
        if not scenario.present_objects:
            problems.append(f"{image_id}: present_objects is empty")
        for tag, score in scenario.tag_pool:
            if score >= 0.35 and tag not in scenario.object_captions:
                problems.append(
                    f"{image_id}: tag {tag!r} (score {score}) has no object_captions entry"
                )
    return problems


class FixtureBackend:
    """Transport that serves scenario-derived answers for every role.

    Pure: identical (scenario file, request) pairs always produce identical
    responses. `textgen_script` (keyed by exact prompt or its sha256
    hexdigest) and `echo` are test knobs layered over the faithful
    template-aware behavior.
    """

    def __init__(
        self,
        scenarios: dict[str, FixtureScenario],
        endpoint_id: str,
        textgen_script: dict[str, str] | None = None,
        echo: bool = False,
        lexicon: frozenset[str] | None = None,
    ):
        self.scenarios = scenarios
        self.endpoint_id = endpoint_id
        self.textgen_script = dict(textgen_script or {})
        self.echo = echo
        base = set(DEFAULT_LEXICON if lexicon is None else lexicon)
        for scenario in scenarios.values():
            base.update(scenario.present_objects)
            base.update(tag for tag, _ in scenario.tag_pool)
            base.update(scenario.object_captions)
        self._lexicon = {canonicalize(term): term for term in base}

    @classmethod
    def from_file(cls, path: str | Path, endpoint_id: str, **kwargs) -> "FixtureBackend":
        return cls(load_scenarios(path), endpoint_id, **kwargs)

    # ── wire protocol surface ────────────────────────────────────────

    def call(self, op: str, request: dict) -> dict:
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise TransportError(f"fixture backend has no route for op {op!r}", status_code=404)
        return handler(request)

    def _scenario(self, request: dict) -> FixtureScenario:
        image_id = request.get("image_id")
        scenario = self.scenarios.get(image_id)
        if scenario is None:
            raise TransportError(f"fixture has no scenario for image {image_id!r}", status_code=404)
        return scenario

    @staticmethod
    def _response(text=None, tags=None, detections=None) -> dict:
        return {"text": text, "tags": tags, "detections": detections, "latency_ms": 0.0}

    def _op_vqa(self, request: dict) -> dict:
        scenario = self._scenario(request)
        prompt = request.get("prompt") or ""
        match = _VQA_RE.match(prompt)
        if match is None:
            raise TransportError(f"fixture vqa cannot parse prompt: {prompt!r}", status_code=400)
        entity = match.group(1)
        present = canonicalize(entity) in scenario.canonical_present
        if noise_flip(scenario.seed, scenario.image_id, entity, self.endpoint_id, scenario.vqa_error_rate):
            present = not present
        return self._response(text="yes" if present else "no")

    def _op_generate(self, request: dict) -> dict:
        prompt = request.get("prompt") or ""
        if prompt in self.textgen_script:
            return self._response(text=self.textgen_script[prompt])
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        if digest in self.textgen_script:
            return self._response(text=self.textgen_script[digest])
        if self.echo:
            return self._response(text=prompt)
        if "Verified entities:" in prompt:
            return self._response(text=self._faithful_correction(prompt))
        if prompt.startswith("Extract the key entity words"):
            return self._response(text=self._faithful_extraction(prompt))
        if "Description:" in prompt and "Question:" in prompt:
            return self._response(text=self._faithful_judge(prompt))
        if prompt.startswith(DESCRIBE_IMAGE_PROMPT):
            return self._response(text=self._faithful_scene_caption(request))
        raise TransportError(
            f"fixture textgen does not recognize the prompt: {prompt[:80]!r}", status_code=400
        )

    def _op_tag(self, request: dict) -> dict:
        scenario = self._scenario(request)
        return self._response(tags=[tag for tag, _ in scenario.tag_pool])

    def _op_detect(self, request: dict) -> dict:
        scenario = self._scenario(request)
        wanted = canonicalize(request.get("tag") or "")
        detections = [
            {"tag": tag, "score": score, "box": None}
            for tag, score in scenario.tag_pool
            if canonicalize(tag) == wanted
        ]
        return self._response(detections=detections)

    def _op_caption(self, request: dict) -> dict:
        scenario = self._scenario(request)
        tag = request.get("tag") or ""
        caption = scenario.object_captions.get(tag)
        if caption is None:
            # no canned description: empty text surfaces as EmptyResponse
            return self._response(text="")
        return self._response(text=caption)

    # ── faithful text-generation behaviors ───────────────────────────

    def _faithful_extraction(self, prompt: str) -> str:
        matches = _SENTENCE_RE.findall(prompt)
        if not matches:
            raise TransportError("fixture extraction found no sentence line", status_code=400)
        sentence = matches[-1]
        tokens = canonical_tokens(sentence)
        found: list[str] = []
        i = 0
        while i < len(tokens):
            best: str | None = None
            best_len = 0
            for length in (3, 2, 1):
                phrase = " ".join(tokens[i : i + length])
                if len(tokens[i : i + length]) == length and phrase in self._lexicon:
                    best, best_len = phrase, length
                    break
            if best is not None:
                if best not in found:
                    found.append(best)
                i += best_len
            else:
                i += 1
        return ", ".join(found) if found else "None"

    def _faithful_correction(self, prompt: str) -> str:
        matches = _CORRECTION_RE.findall(prompt)
        if not matches:
            raise TransportError("fixture correction found no request block", status_code=400)
        sentence, initial_raw, verified_raw = matches[-1]
        initial = [e.strip() for e in initial_raw.split(",") if e.strip()]
        verified_raw = verified_raw.strip()
        verified = (
            []
            if verified_raw.lower() == "none"
            else [e.strip() for e in verified_raw.split(",") if e.strip()]
        )
        if not verified:
            return ""
        kept = {canonicalize(e) for e in verified}
        removed = [e for e in initial if canonicalize(e) not in kept]
        return _remove_phrases(sentence, removed)

    def _faithful_judge(self, prompt: str) -> str:
        match = _JUDGE_RE.search(prompt)
        if match is None:
            raise TransportError("fixture judge cannot parse the prompt", status_code=400)
        caption, obj = match.group(1), match.group(2)
        return "yes" if phrase_in_text(obj, caption) else "no"

    def _faithful_scene_caption(self, request: dict) -> str:
        scenario = self._scenario(request)
        return " ".join(f"There is a {obj}." for obj in sorted(scenario.present_objects))


def _remove_phrases(sentence: str, phrases: list[str]) -> str:
    """Drop every word run matching one of the canonical phrases (plus a
    directly preceding article) from the sentence; returns "" when nothing
    with alphabetic content remains."""
    words = sentence.split()
    canon = [" ".join(canonical_tokens(w)) for w in words]
    keep = [True] * len(words)
    for phrase in phrases:
        needle = canonical_tokens(phrase)
        n = len(needle)
        if n == 0:
            continue
        for i in range(len(words) - n + 1):
            if all(keep[i + k] and canon[i + k] == needle[k] for k in range(n)):
                for k in range(n):
                    keep[i + k] = False
                if i > 0 and keep[i - 1] and canon[i - 1] in _ARTICLES:
                    keep[i - 1] = False
    remaining = [w for w, k in zip(words, keep) if k]
    if not any(re.search(r"[A-Za-z]", w) for w in remaining):
        return ""
    text = " ".join(remaining)
    text = re.sub(r"\s+([,.;:!?])", r"\1", text)
    text = re.sub(r"([,.;:]){2,}", r"\1", text)
    text = text.strip(" ,;")
    if text and not text.endswith((".", "!", "?")):
        text += "."
    return text
