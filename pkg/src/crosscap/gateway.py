"""Uniform access to the five model roles the pipeline consumes.

Every model call goes through a `Gateway`, which owns one transport per
configured endpoint (JSON-over-HTTP for live backends, in-process fixture
for offline runs), builds the exact prompt strings, and normalizes replies.
Gateway handles are immutable after construction and safe to share across
threads; per-endpoint call counters are the only mutable state and are
lock-protected.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol
from urllib.parse import urlparse

import requests

from .errors import ConfigError, EmptyResponse, TimeoutError, TransportError

VQA_PROMPT = "Is there a {entity} in the image? Please answer only with yes or no."
CAPTION_PROMPT = "Describe the {tag} in the image with only one sentence."

ROUTES = {
    "vqa": "/v1/vqa",
    "generate": "/v1/generate",
    "tag": "/v1/tag",
    "detect": "/v1/detect",
    "caption": "/v1/caption",
}

RETRY_BACKOFF_SECONDS = 0.2


def canonical_json(obj) -> str:
    """Stable wire framing: sorted keys, compact separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class BackendRole(Enum):
    BINARY_VQA = "binary_vqa"
    TEXT_GEN = "text_gen"
    TAGGER = "tagger"
    DETECTOR = "detector"
    CAPTIONER = "captioner"


_ROLE_FOR_OP = {
    "vqa": BackendRole.BINARY_VQA,
    "generate": BackendRole.TEXT_GEN,
    "tag": BackendRole.TAGGER,
    "detect": BackendRole.DETECTOR,
    "caption": BackendRole.CAPTIONER,
}


class TransportKind(Enum):
    HTTP = "http"
    FIXTURE = "fixture"


@dataclass(frozen=True)
class BackendEndpoint:
    id: str
    role: BackendRole
    transport: TransportKind
    address: str  # URL for HTTP, scenario-file path for fixtures
    timeout_ms: int = 30_000
    max_retries: int = 0

    def __post_init__(self):
        if not self.id:
            raise ConfigError("endpoint id must be nonempty")
        if self.timeout_ms <= 0:
            raise ConfigError(f"endpoint {self.id}: timeout_ms must be positive")
        if self.max_retries < 0:
            raise ConfigError(f"endpoint {self.id}: max_retries must be non-negative")
        if self.transport is TransportKind.HTTP:
            parsed = urlparse(self.address)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise ConfigError(f"endpoint {self.id}: invalid URL {self.address!r}")


class BinaryValue(Enum):
    YES = "yes"
    NO = "no"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class BinaryAnswer:
    value: BinaryValue
    raw_text: str


def parse_binary_answer(raw_text: str) -> BinaryAnswer:
    """Earliest whole-token "yes"/"no" wins; neither present -> Unparseable.

    Token matching keeps "no" from firing inside "nothing" or "cannot".
    """
    for token in re.findall(r"[a-z]+", raw_text.lower()):
        if token == "yes":
            return BinaryAnswer(BinaryValue.YES, raw_text)
        if token == "no":
            return BinaryAnswer(BinaryValue.NO, raw_text)
    return BinaryAnswer(BinaryValue.UNPARSEABLE, raw_text)


@dataclass(frozen=True)
class DetectionCandidate:
    tag: str
    score: float
    box: tuple[float, float, float, float] | None = None


class Transport(Protocol):
    def call(self, op: str, request: dict) -> dict: ...


class HttpTransport:
    """POSTs canonical JSON frames to {address}/v1/{op} with fixed-backoff
    retries. 4xx is never retried; 5xx, timeouts and connection failures are
    retried up to max_retries."""

    def __init__(self, endpoint: BackendEndpoint):
        self.endpoint = endpoint

    def call(self, op: str, request: dict) -> dict:
        url = self.endpoint.address.rstrip("/") + ROUTES[op]
        body = canonical_json(request).encode("utf-8")
        timeout = self.endpoint.timeout_ms / 1000.0
        last_error: TransportError | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            if attempt:
                time.sleep(RETRY_BACKOFF_SECONDS)
            try:
                resp = requests.post(
                    url,
                    data=body,
                    headers={"Content-Type": "application/json"},
                    timeout=timeout,
                )
            except requests.Timeout as err:
                last_error = TimeoutError(f"{self.endpoint.id}: timeout calling {url}: {err}")
                continue
            except requests.RequestException as err:
                last_error = TransportError(f"{self.endpoint.id}: cannot reach {url}: {err}")
                continue
            if resp.status_code == 200:
                try:
                    payload = resp.json()
                except ValueError as err:
                    raise TransportError(
                        f"{self.endpoint.id}: non-JSON response from {url}: {err}",
                        status_code=200,
                    ) from err
                if not isinstance(payload, dict):
                    raise TransportError(
                        f"{self.endpoint.id}: response is not a JSON object", status_code=200
                    )
                return payload
            error = TransportError(
                f"{self.endpoint.id}: HTTP {resp.status_code} from {url}",
                status_code=resp.status_code,
            )
            if 400 <= resp.status_code < 500:
                raise error
            last_error = error
        assert last_error is not None
        raise last_error


def make_request(
    image_id: str | None = None,
    image_b64: str | None = None,
    prompt: str | None = None,
    tag: str | None = None,
) -> dict:
    return {"image_id": image_id, "image_b64": image_b64, "prompt": prompt, "tag": tag}


class Gateway:
    def __init__(
        self,
        endpoints: Iterable[BackendEndpoint],
        transports: Mapping[str, Transport] | None = None,
    ):
        """Build one transport per endpoint. Fixture scenario files are
        loaded (and thus validated to exist) here. `transports` overrides
        construction for specific endpoint ids, mainly for tests."""
        from .fixtures import FixtureBackend

        self._endpoints: dict[str, BackendEndpoint] = {}
        self._transports: dict[str, Transport] = {}
        self._counts: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()
        overrides = dict(transports or {})
        for ep in endpoints:
            if ep.id in self._endpoints:
                raise ConfigError(f"duplicate endpoint id {ep.id!r}")
            self._endpoints[ep.id] = ep
            if ep.id in overrides:
                self._transports[ep.id] = overrides.pop(ep.id)
            elif ep.transport is TransportKind.HTTP:
                self._transports[ep.id] = HttpTransport(ep)
            else:
                self._transports[ep.id] = FixtureBackend.from_file(ep.address, ep.id)
        if overrides:
            raise ConfigError(f"transport overrides for unknown endpoints: {sorted(overrides)}")

    def endpoint(self, endpoint_id: str) -> BackendEndpoint:
        try:
            return self._endpoints[endpoint_id]
        except KeyError:
            raise ConfigError(f"unknown endpoint {endpoint_id!r}") from None

    def transport(self, endpoint_id: str) -> Transport:
        return self._transports[endpoint_id]

    def call_count(self, endpoint_id: str, op: str | None = None) -> int:
        with self._lock:
            if op is not None:
                return self._counts.get((endpoint_id, op), 0)
            return sum(n for (eid, _), n in self._counts.items() if eid == endpoint_id)

    def _resolve(self, endpoint, op: str) -> tuple[BackendEndpoint, Transport]:
        ep = endpoint if isinstance(endpoint, BackendEndpoint) else self.endpoint(endpoint)
        expected = _ROLE_FOR_OP[op]
        if ep.role is not expected:
            raise ConfigError(f"endpoint {ep.id!r} has role {ep.role}, op {op!r} needs {expected}")
        return ep, self._transports[ep.id]

    def _call(self, endpoint, op: str, request: dict) -> dict:
        ep, transport = self._resolve(endpoint, op)
        with self._lock:
            self._counts[(ep.id, op)] = self._counts.get((ep.id, op), 0) + 1
        return transport.call(op, request)

    # ── role operations ──────────────────────────────────────────────

    def query_binary_vqa(self, endpoint, image: str, entity: str) -> BinaryAnswer:
        if not entity:
            raise ValueError("entity must be nonempty")
        prompt = VQA_PROMPT.format(entity=entity)
        payload = self._call(endpoint, "vqa", make_request(image_id=image, prompt=prompt))
        text = payload.get("text")
        if not isinstance(text, str):
            raise TransportError("vqa response is missing 'text'")
        return parse_binary_answer(text)

    def generate_text(self, endpoint, prompt: str, image: str | None = None) -> str:
        if not prompt:
            raise ValueError("prompt must be nonempty")
        payload = self._call(endpoint, "generate", make_request(prompt=prompt, image_id=image))
        text = payload.get("text")
        if text is None:
            raise EmptyResponse("text generator returned no text")
        if not isinstance(text, str):
            raise TransportError("generate response 'text' is not a string")
        text = text.rstrip()
        if not text:
            raise EmptyResponse("text generator returned empty text")
        return text

    def tag_image(self, endpoint, image: str) -> list[str]:
        payload = self._call(endpoint, "tag", make_request(image_id=image))
        tags = payload.get("tags")
        if tags is None:
            return []
        if not isinstance(tags, list):
            raise TransportError("tag response 'tags' is not a list")
        out: list[str] = []
        seen: set[str] = set()
        for tag in tags:
            if not isinstance(tag, str):
                raise TransportError("tag response contains a non-string tag")
            tag = tag.strip().lower()
            if tag and tag not in seen:
                seen.add(tag)
                out.append(tag)
        return out

    def detect(self, endpoint, image: str, tag: str) -> DetectionCandidate:
        if not tag:
            raise ValueError("tag must be nonempty")
        payload = self._call(endpoint, "detect", make_request(image_id=image, tag=tag))
        detections = payload.get("detections")
        if not detections:
            return DetectionCandidate(tag=tag, score=0.0, box=None)
        if not isinstance(detections, list):
            raise TransportError("detect response 'detections' is not a list")
        best: DetectionCandidate | None = None
        for item in detections:
            candidate = _parse_detection(item)
            if best is None or candidate.score > best.score:
                best = candidate
        assert best is not None
        return best

    def caption_object(self, endpoint, image: str, tag: str) -> str:
        if not tag:
            raise ValueError("tag must be nonempty")
        prompt = CAPTION_PROMPT.format(tag=tag)
        payload = self._call(endpoint, "caption", make_request(image_id=image, prompt=prompt, tag=tag))
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            raise EmptyResponse(f"captioner returned no description for {tag!r}")
        text = text.strip()
        if not text.endswith((".", "!", "?")):
            text += "."
        return text


def _parse_detection(item) -> DetectionCandidate:
    if not isinstance(item, dict) or not isinstance(item.get("tag"), str):
        raise TransportError("detection entry is malformed")
    score = item.get("score")
    if not isinstance(score, (int, float)) or not 0.0 <= float(score) <= 1.0:
        raise TransportError(f"detection score out of range: {score!r}")
    box = item.get("box")
    parsed_box: tuple[float, float, float, float] | None = None
    if box is not None:
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            raise TransportError(f"detection box is malformed: {box!r}")
        x, y, w, h = (float(v) for v in box)
        if not all(0.0 <= v <= 1.0 for v in (x, y, w, h)) or w <= 0 or h <= 0:
            raise TransportError(f"detection box out of range: {box!r}")
        parsed_box = (x, y, w, h)
    return DetectionCandidate(tag=item["tag"], score=float(score), box=parsed_box)
