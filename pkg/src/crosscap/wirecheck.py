"""Wire-protocol conformance driving, shared by client and server tests.

A golden file freezes, per case, the exact request frame the client must
emit for given operation inputs, the exact response frame a conforming
server must return, and the status codes for error cases. The same file
backs the gateway client tests here and the stub server's own suite, so
both sides stay pinned to identical bytes.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import requests

from .gateway import (
    BackendEndpoint,
    BackendRole,
    Gateway,
    ROUTES,
    TransportKind,
    canonical_json,
    make_request,
)

_OP_ROLE = {
    "vqa": BackendRole.BINARY_VQA,
    "generate": BackendRole.TEXT_GEN,
    "tag": BackendRole.TAGGER,
    "detect": BackendRole.DETECTOR,
    "caption": BackendRole.CAPTIONER,
}


def load_golden(path: str | Path) -> list[dict]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return data["cases"]


def client_request_frame(case: dict) -> bytes:
    """The canonical request bytes the gateway client emits for this case's
    operation inputs."""
    from .gateway import CAPTION_PROMPT, VQA_PROMPT

    op = case["op"]
    params = case.get("params", {})
    if op == "vqa":
        request = make_request(
            image_id=params["image"], prompt=VQA_PROMPT.format(entity=params["entity"])
        )
    elif op == "generate":
        request = make_request(prompt=params["prompt"], image_id=params.get("image"))
    elif op == "tag":
        request = make_request(image_id=params["image"])
    elif op == "detect":
        request = make_request(image_id=params["image"], tag=params["tag"])
    elif op == "caption":
        request = make_request(
            image_id=params["image"],
            prompt=CAPTION_PROMPT.format(tag=params["tag"]),
            tag=params["tag"],
        )
    else:
        raise ValueError(f"unknown op {op!r}")
    return canonical_json(request).encode("utf-8")


def _gateway_result(gateway: Gateway, endpoint: BackendEndpoint, case: dict) -> dict:
    op = case["op"]
    params = case.get("params", {})
    if op == "vqa":
        answer = gateway.query_binary_vqa(endpoint, params["image"], params["entity"])
        return {"value": answer.value.value}
    if op == "generate":
        return {"text": gateway.generate_text(endpoint, params["prompt"], image=params.get("image"))}
    if op == "tag":
        return {"tags": gateway.tag_image(endpoint, params["image"])}
    if op == "detect":
        candidate = gateway.detect(endpoint, params["image"], params["tag"])
        return {"tag": candidate.tag, "score": candidate.score}
    if op == "caption":
        return {"text": gateway.caption_object(endpoint, params["image"], params["tag"])}
    raise ValueError(f"unknown op {op!r}")


def run_conformance(base_url: str, golden_path: str | Path, timeout_ms: int = 5000) -> list[str]:
    """Drive every golden case against a live server; returns problems."""
    problems: list[str] = []
    base = base_url.rstrip("/")
    for case in load_golden(golden_path):
        name = case["name"]
        path = case.get("path") or ROUTES[case["op"]]
        body = (
            case["raw_request"].encode("utf-8")
            if "raw_request" in case
            else client_request_frame(case)
        )
        if "request" in case:
            expected_request = canonical_json(case["request"]).encode("utf-8")
            if body != expected_request:
                problems.append(f"{name}: client frame {body!r} != golden {expected_request!r}")
                continue
        try:
            resp = requests.post(
                base + path,
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=timeout_ms / 1000.0,
            )
        except requests.RequestException as err:
            problems.append(f"{name}: request failed: {err}")
            continue
        if resp.status_code != case["status"]:
            problems.append(f"{name}: status {resp.status_code} != expected {case['status']}")
            continue
        if case["status"] == 200 and "response" in case:
            expected_response = canonical_json(case["response"]).encode("utf-8")
            if resp.content != expected_response:
                problems.append(
                    f"{name}: response bytes {resp.content!r} != golden {expected_response!r}"
                )
                continue
        if case["status"] == 200 and "expect" in case:
            endpoint = BackendEndpoint(
                id=f"conformance-{name}",
                role=_OP_ROLE[case["op"]],
                transport=TransportKind.HTTP,
                address=base,
                timeout_ms=timeout_ms,
            )
            gateway = Gateway([endpoint])
            try:
                result = _gateway_result(gateway, endpoint, case)
            except Exception as err:
                problems.append(f"{name}: gateway op raised {err!r}")
                continue
            for key, expected in case["expect"].items():
                if result.get(key) != expected:
                    problems.append(f"{name}: gateway result {key}={result.get(key)!r} != {expected!r}")
    return problems


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run the wire-protocol conformance suite")
    parser.add_argument("--address", required=True, help="base URL of the server under test")
    parser.add_argument("--golden", required=True, help="golden frames JSON file")
    parser.add_argument("--timeout-ms", type=int, default=5000)
    args = parser.parse_args(argv)
    problems = run_conformance(args.address, args.golden, args.timeout_ms)
    for problem in problems:
        print(f"FAIL {problem}", file=sys.stderr)
    if not problems:
        print("wire protocol conformance: all cases passed")
    return 1 if problems else 0


if __name__ == "__main__":
    raise SystemExit(main())
