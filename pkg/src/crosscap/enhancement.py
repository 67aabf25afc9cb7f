"""Tag-then-detect discovery of objects the corrected caption missed.

Every tagger proposal is gated by the detector at threshold alpha
(score >= alpha retains); retained tags already Present in the verdict
ledger are skipped, the rest get a one-sentence description that is
appended to the corrected caption behind a fixed prefix. All tags are
processed independently: one rejection never abandons the rest.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

from .crosscheck import VerdictLedger
from .errors import CrosscapError, StageError
from .text_analysis import canonicalize

MERGE_PREFIX = "Some additional information includes:"

DEFAULT_TRAFFIC_ALLOWLIST = frozenset(
    {
        "pedestrian", "person", "cyclist", "motorcycle", "bicycle", "car",
        "truck", "bus", "traffic light", "traffic sign", "traffic cone",
        "animal", "barrier", "stroller",
    }
)


@dataclass(frozen=True)
class EnhancementConfig:
    alpha: float = 0.35
    traffic_allowlist: frozenset[str] = DEFAULT_TRAFFIC_ALLOWLIST
    allowlist_enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0,1), got {self.alpha}")


@dataclass
class EnhancementResult:
    retained_tags: list[tuple[str, float]] = field(default_factory=list)
    described: list[tuple[str, str]] = field(default_factory=list)
    skipped_already_present: list[str] = field(default_factory=list)
    rejected_below_threshold: list[tuple[str, float]] = field(default_factory=list)
    filtered_by_allowlist: list[str] = field(default_factory=list)
    to_describe: list[str] = field(default_factory=list)
    describe_failures: list[tuple[str, str]] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "retained_tags": [[t, s] for t, s in self.retained_tags],
            "described": [[t, s] for t, s in self.described],
            "skipped_already_present": list(self.skipped_already_present),
            "rejected_below_threshold": [[t, s] for t, s in self.rejected_below_threshold],
            "filtered_by_allowlist": list(self.filtered_by_allowlist),
            "describe_failures": [[t, msg] for t, msg in self.describe_failures],
        }


def identify_critical_objects(
    gateway,
    image: str,
    ledger: VerdictLedger,
    cfg: EnhancementConfig,
    tagger,
    detector,
    timer: Callable[[str, float], None] | None = None,
) -> EnhancementResult:
    """Tag the image and gate each tag through the detector. `timer`
    receives ("tag"|"detect", ms)."""
    if ledger.image != image:
        raise ValueError(f"ledger is for image {ledger.image!r}, not {image!r}")
    result = EnhancementResult()
    allow = {canonicalize(t) for t in cfg.traffic_allowlist}
    present = ledger.canonical_present()

    start = time.perf_counter()
    tags = gateway.tag_image(tagger, image)
    if timer is not None:
        timer("tag", (time.perf_counter() - start) * 1000.0)

    start = time.perf_counter()
    try:
        for tag in tags:
            if cfg.allowlist_enabled and canonicalize(tag) not in allow:
                result.filtered_by_allowlist.append(tag)
                continue
            try:
                candidate = gateway.detect(detector, image, tag)
            except Exception as err:
                raise StageError(f"detect[{tag}]", image, err) from err
            if candidate.score >= cfg.alpha:
                result.retained_tags.append((tag, candidate.score))
                if canonicalize(tag) in present:
                    result.skipped_already_present.append(tag)
                else:
                    result.to_describe.append(tag)
            else:
                result.rejected_below_threshold.append((tag, candidate.score))
    finally:
        if timer is not None:
            timer("detect", (time.perf_counter() - start) * 1000.0)
    return result


def describe_objects(gateway, image: str, result: EnhancementResult, captioner) -> EnhancementResult:
    """One caption per to-describe tag, retained order; a failed caption is
    recorded and the rest continue."""
    for tag in result.to_describe:
        try:
            sentence = gateway.caption_object(captioner, image, tag)
        except CrosscapError as err:
            result.describe_failures.append((tag, str(err)))
            continue
        result.described.append((tag, sentence))
    return result


def merge_final(corrected_caption: str, result: EnhancementResult) -> str:
    """Append the new descriptions behind the fixed prefix; without any
    description the corrected caption passes through untouched."""
    if not result.described:
        return corrected_caption
    described = " ".join(sentence for _, sentence in result.described)
    lead = f"{corrected_caption} " if corrected_caption else ""
    return f"{lead}{MERGE_PREFIX} {described}"
