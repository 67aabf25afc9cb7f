from __future__ import annotations

import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from crosscap.enhancement import DEFAULT_TRAFFIC_ALLOWLIST
from crosscap.gateway import BackendEndpoint, BackendRole, Gateway, TransportKind

DATA_DIR = Path(__file__).parent / "data"


def write_scenarios(path: Path, scenarios: dict) -> Path:
    path.write_text(json.dumps(scenarios), encoding="utf-8")
    return path


def simple_scenario(
    image_id="img1",
    present=("car", "person"),
    tag_pool=(("traffic cone", 0.8),),
    captions=None,
    error_rate=0.0,
    seed=7,
) -> dict:
    if captions is None:
        captions = {tag: f"A {tag} can be seen in the scene." for tag, score in tag_pool if score >= 0.35}
    return {
        "image_id": image_id,
        "present_objects": list(present),
        "tag_pool": [[t, s] for t, s in tag_pool],
        "object_captions": captions,
        "vqa_error_rate": error_rate,
        "seed": seed,
    }


def fixture_endpoint(id_, role, path, **kwargs) -> BackendEndpoint:
    return BackendEndpoint(
        id=id_, role=role, transport=TransportKind.FIXTURE, address=str(path), **kwargs
    )


def full_fixture_endpoints(path: Path) -> list[BackendEndpoint]:
    return [
        fixture_endpoint("va", BackendRole.BINARY_VQA, path),
        fixture_endpoint("vb", BackendRole.BINARY_VQA, path),
        fixture_endpoint("vt", BackendRole.BINARY_VQA, path),
        fixture_endpoint("tg", BackendRole.TEXT_GEN, path),
        fixture_endpoint("tag", BackendRole.TAGGER, path),
        fixture_endpoint("det", BackendRole.DETECTOR, path),
        fixture_endpoint("cap", BackendRole.CAPTIONER, path),
    ]


FULL_BINDINGS = {
    "verifier_a": "va",
    "verifier_b": "vb",
    "tie_breaker": "vt",
    "textgen": "tg",
    "tagger": "tag",
    "detector": "det",
    "captioner": "cap",
}


@pytest.fixture
def scenario_file(tmp_path) -> Path:
    return write_scenarios(tmp_path / "fixtures.json", {"img1": simple_scenario()})


@pytest.fixture
def fixture_gateway(scenario_file) -> Gateway:
    return Gateway(full_fixture_endpoints(scenario_file))


class ScriptedVqaTransport:
    """Transport returning a fixed reply text regardless of the request;
    counts its calls."""

    def __init__(self, reply: str):
        self.reply = reply
        self.calls = 0

    def call(self, op, request):
        self.calls += 1
        return {"text": self.reply, "tags": None, "detections": None, "latency_ms": 0.0}


def scripted_vqa_gateway(reply_a: str, reply_b: str, reply_tie: str):
    """Gateway with three scripted yes/no verifiers; returns (gateway,
    endpoints, transports)."""
    endpoints = [
        BackendEndpoint(id=i, role=BackendRole.BINARY_VQA, transport=TransportKind.HTTP,
                        address="http://localhost:1/unused")
        for i in ("a", "b", "tie")
    ]
    transports = {
        "a": ScriptedVqaTransport(reply_a),
        "b": ScriptedVqaTransport(reply_b),
        "tie": ScriptedVqaTransport(reply_tie),
    }
    gateway = Gateway(endpoints, transports=transports)
    return gateway, endpoints, transports


class ScriptedHttpServer:
    """Local HTTP server whose behavior is a callable
    (path, body_bytes) -> (status, body_bytes)."""

    def __init__(self, handler):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = self.rfile.read(length)
                status, payload = outer.handler(self.path, body)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args):
                pass

        self.handler = handler
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


# ── synthetic corpus shared by pipeline and acceptance tests ──────────

ALLOWLISTED_OBJECTS = sorted(DEFAULT_TRAFFIC_ALLOWLIST)
DISTRACTOR_OBJECTS = ["bench", "bridge", "building", "crosswalk", "fence", "sidewalk", "streetlight", "tree"]
WORLD_VOCAB = sorted(set(ALLOWLISTED_OBJECTS) | set(DISTRACTOR_OBJECTS))


def build_corpus(n_images: int, seed: int = 1234, error_rate: float = 0.0):
    """Deterministic synthetic worlds: per image, present objects, a caption
    mentioning some of them plus 0-2 hallucinated absences, a tag pool whose
    scores are faithful (absent objects always score below threshold), and
    captions for every describable tag.

    Returns (scenarios dict, manifest rows, oracle dict per image)."""
    rng = random.Random(seed)
    scenarios = {}
    manifest = []
    oracle = {}
    for i in range(n_images):
        image_id = f"img_{i:04d}"
        present = rng.sample(WORLD_VOCAB, rng.randint(2, 5))
        absent_pool = [o for o in WORLD_VOCAB if o not in present]
        hallucinated = rng.sample(absent_pool, rng.randint(0, 2))
        mentioned = rng.sample(present, rng.randint(1, len(present)))
        sentences = [f"There is a {obj}." for obj in mentioned]
        sentences += [f"There is a {obj}." for obj in hallucinated]
        if len(mentioned) >= 2 and rng.random() < 0.5:
            sentences.append(f"A {mentioned[0]} and a {mentioned[1]} are visible.")
        rng.shuffle(sentences)
        caption = " ".join(sentences)

        tag_pool = []
        for obj in present:
            if rng.random() < 0.8:
                tag_pool.append([obj, round(rng.uniform(0.35, 0.99), 2)])
            else:
                tag_pool.append([obj, round(rng.uniform(0.05, 0.349), 3)])
        for obj in rng.sample(absent_pool, rng.randint(0, 2)):
            tag_pool.append([obj, round(rng.uniform(0.01, 0.30), 3)])
        rng.shuffle(tag_pool)
        captions = {
            tag: f"A {tag} can be seen in the scene." for tag, score in tag_pool if score >= 0.35
        }
        scenarios[image_id] = {
            "image_id": image_id,
            "present_objects": present,
            "tag_pool": tag_pool,
            "object_captions": captions,
            "vqa_error_rate": error_rate,
            "seed": i,
        }
        manifest.append({"image_id": image_id, "image_path": image_id, "caption": caption})
        oracle[image_id] = {
            "present": set(present),
            "absent": set(absent_pool),
            "hallucinated": set(hallucinated),
            "mentioned": set(mentioned),
            "tag_scores": {tag: score for tag, score in tag_pool},
        }
    return scenarios, manifest, oracle


def write_corpus(tmp_path: Path, n_images: int, seed: int = 1234):
    scenarios, manifest, oracle = build_corpus(n_images, seed)
    fixtures = write_scenarios(tmp_path / "fixtures.json", scenarios)
    manifest_path = tmp_path / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for row in manifest:
            fh.write(json.dumps(row) + "\n")
    return fixtures, manifest_path, oracle


def corpus_stats(oracle: dict):
    """VocabStats derived from the synthetic worlds: frequency = presence
    counts, co-occurrence = joint presence counts."""
    from crosscap.pope import VocabStats

    frequency: dict[str, int] = {}
    pairs: dict[tuple[str, str], int] = {}
    for info in oracle.values():
        present = sorted(info["present"])
        for obj in present:
            frequency[obj] = frequency.get(obj, 0) + 1
        for i, a in enumerate(present):
            for b in present[i + 1 :]:
                pairs[(a, b)] = pairs.get((a, b), 0) + 1
    return VocabStats(WORLD_VOCAB, frequency, pairs)
