"""End-to-end orchestration: split -> extract -> cross-check -> correct ->
(enhance -> merge), plus batch running, dataset export, and evaluation.

The batch runner owns all concurrency (thread pool across images); within
one image the stages run sequentially. Outputs are written in manifest
order and contain nothing time-dependent, so runs with identical
(fixtures, seed, config) are byte-identical at any parallelism.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import __version__
from .correction import assemble_corrected, correct_document
from .crosscheck import VerdictLedger, filter_entities
from .enhancement import (
    EnhancementConfig,
    EnhancementResult,
    describe_objects,
    identify_critical_objects,
    merge_final,
)
from .errors import ConfigError, CrosscapError, EmptyInput, StageError
from .fixtures import DESCRIBE_IMAGE_PROMPT
from .gateway import BackendEndpoint, BackendRole, BinaryValue, Gateway, TransportKind
from .pope import PopeQuestion, Strategy, judge_from_caption, score
from .text_analysis import Stage, extract_entities, make_document

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
AUDIT_FILE = "audit.jsonl"
TIMINGS_FILE = "timings.json"
CONFIG_SNAPSHOT_FILE = "config-snapshot.json"
EVAL_REPORT_FILE = "eval_report.json"


class Mode(Enum):
    FULL = "full"
    CROSSCHECK_ONLY = "hcnet"
    ENHANCE_ONLY = "enhance-only"


SLOT_ROLES = {
    "verifier_a": BackendRole.BINARY_VQA,
    "verifier_b": BackendRole.BINARY_VQA,
    "tie_breaker": BackendRole.BINARY_VQA,
    "textgen": BackendRole.TEXT_GEN,
    "tagger": BackendRole.TAGGER,
    "detector": BackendRole.DETECTOR,
    "captioner": BackendRole.CAPTIONER,
}

MODE_REQUIRED_SLOTS = {
    Mode.FULL: tuple(SLOT_ROLES),
    Mode.CROSSCHECK_ONLY: ("verifier_a", "verifier_b", "tie_breaker", "textgen"),
    Mode.ENHANCE_ONLY: ("tagger", "detector", "captioner"),
}


class StageName(Enum):
    SPLIT = "split"
    EXTRACT = "extract"
    CHECK_A = "check_a"
    CHECK_B = "check_b"
    CHECK_TIE = "check_tie"
    CORRECT = "correct"
    TAG = "tag"
    DETECT = "detect"
    DESCRIBE = "describe"
    MERGE = "merge"


@dataclass(frozen=True)
class StageTiming:
    stage: StageName
    elapsed_ms: float


@dataclass
class PipelineConfig:
    endpoints: list[BackendEndpoint]
    bindings: dict[str, str]
    enhancement: EnhancementConfig = field(default_factory=EnhancementConfig)
    mode: Mode = Mode.FULL
    seed: int = 0
    parallelism: int = 1
    caption_source: str | None = None

    def __post_init__(self):
        if self.parallelism < 1:
            raise ConfigError("parallelism must be positive")
        by_id = {ep.id: ep for ep in self.endpoints}
        if len(by_id) != len(self.endpoints):
            raise ConfigError("endpoint ids must be unique")
        for slot in MODE_REQUIRED_SLOTS[self.mode]:
            endpoint_id = self.bindings.get(slot)
            if endpoint_id is None:
                raise ConfigError(f"mode {self.mode.value!r} requires the {slot!r} binding")
            endpoint = by_id.get(endpoint_id)
            if endpoint is None:
                raise ConfigError(f"binding {slot!r} references unknown endpoint {endpoint_id!r}")
            if endpoint.role is not SLOT_ROLES[slot]:
                raise ConfigError(
                    f"binding {slot!r} needs role {SLOT_ROLES[slot].value}, "
                    f"endpoint {endpoint_id!r} has {endpoint.role.value}"
                )
        if self.caption_source is not None and self.caption_source not in by_id:
            raise ConfigError(f"caption_source references unknown endpoint {self.caption_source!r}")

    def endpoint_id(self, slot: str) -> str:
        return self.bindings[slot]

    @classmethod
    def from_json_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        endpoints = []
        for raw in data.get("endpoints", []):
            address = raw["address"]
            transport = TransportKind(raw.get("transport", "http"))
            if transport is TransportKind.FIXTURE and base_dir is not None:
                address = str((base_dir / address).resolve()) if not Path(address).is_absolute() else address
            endpoints.append(
                BackendEndpoint(
                    id=raw["id"],
                    role=BackendRole(raw["role"]),
                    transport=transport,
                    address=address,
                    timeout_ms=int(raw.get("timeout_ms", 30_000)),
                    max_retries=int(raw.get("max_retries", 0)),
                )
            )
        enh_raw = data.get("enhancement", {})
        allowlist = enh_raw.get("traffic_allowlist")
        enhancement = EnhancementConfig(
            alpha=float(enh_raw.get("alpha", 0.35)),
            traffic_allowlist=(
                frozenset(allowlist)
                if allowlist is not None
                else EnhancementConfig().traffic_allowlist
            ),
            allowlist_enabled=bool(enh_raw.get("allowlist_enabled", True)),
        )
        return cls(
            endpoints=endpoints,
            bindings=dict(data.get("bindings", {})),
            enhancement=enhancement,
            mode=Mode(data.get("mode", "full")),
            seed=int(data.get("seed", 0)),
            parallelism=int(data.get("parallelism", 1)),
            caption_source=data.get("caption_source"),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config {path} is not valid JSON: {err}") from err
        return cls.from_json_dict(data, base_dir=path.parent)

    def to_json_dict(self) -> dict:
        return {
            "endpoints": [
                {
                    "id": ep.id,
                    "role": ep.role.value,
                    "transport": ep.transport.value,
                    "address": ep.address,
                    "timeout_ms": ep.timeout_ms,
                    "max_retries": ep.max_retries,
                }
                for ep in self.endpoints
            ],
            "bindings": dict(self.bindings),
            "enhancement": {
                "alpha": self.enhancement.alpha,
                "traffic_allowlist": sorted(self.enhancement.traffic_allowlist),
                "allowlist_enabled": self.enhancement.allowlist_enabled,
            },
            "mode": self.mode.value,
            "seed": self.seed,
            "parallelism": self.parallelism,
            "caption_source": self.caption_source,
        }


@dataclass
class PipelineResult:
    image: str
    initial_caption: str
    corrected_caption: str
    final_caption: str
    ledger: VerdictLedger
    enhancement: EnhancementResult | None
    timings: list[StageTiming]
    correction_audit: list[dict]
    all_dropped: bool


_STAGE_ORDER = list(StageName)


class _TimingAccumulator:
    def __init__(self):
        self._ms: dict[StageName, float] = {}

    def add(self, key: str | StageName, ms: float) -> None:
        name = key if isinstance(key, StageName) else StageName(key)
        self._ms[name] = self._ms.get(name, 0.0) + ms

    @contextmanager
    def timed(self, name: StageName):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, (time.perf_counter() - start) * 1000.0)

    def as_list(self) -> list[StageTiming]:
        return [StageTiming(name, self._ms[name]) for name in _STAGE_ORDER if name in self._ms]


def run_pipeline(gateway: Gateway, image: str, initial_caption: str, cfg: PipelineConfig) -> PipelineResult:
    """Run the configured stages for one image. Raises StageError naming the
    failing stage; partial work is discarded."""
    if not initial_caption or not initial_caption.strip():
        raise StageError("split", image, ValueError("initial caption is empty"))
    acc = _TimingAccumulator()
    correction_audit: list[dict] = []
    all_dropped = False

    if cfg.mode is Mode.ENHANCE_ONLY:
        ledger = VerdictLedger(image=image, verdicts=[])
        corrected = initial_caption
    else:
        with acc.timed(StageName.SPLIT):
            doc = make_document(image, initial_caption)
        with acc.timed(StageName.EXTRACT):
            extract_entities(doc, gateway, cfg.endpoint_id("textgen"))
        try:
            verifiers = (
                cfg.endpoint_id("verifier_a"),
                cfg.endpoint_id("verifier_b"),
                cfg.endpoint_id("tie_breaker"),
            )
            ledger = filter_entities(gateway, image, doc.unique_entities(), verifiers, timer=acc.add)
            doc.advance(Stage.CHECKED)
        except StageError:
            raise
        except Exception as err:
            raise StageError("crosscheck", image, err) from err
        try:
            with acc.timed(StageName.CORRECT):
                correction_audit = correct_document(doc, gateway, cfg.endpoint_id("textgen"), ledger)
                corrected = assemble_corrected(doc)
        except StageError:
            raise
        except Exception as err:
            raise StageError("correct", image, err) from err
        all_dropped = bool(doc.sentences) and all(s.dropped for s in doc.sentences)
        if all_dropped:
            logger.warning("image %s: every sentence was dropped during correction", image)

    enhancement: EnhancementResult | None = None
    final = corrected
    if cfg.mode in (Mode.FULL, Mode.ENHANCE_ONLY):
        try:
            enhancement = identify_critical_objects(
                gateway,
                image,
                ledger,
                cfg.enhancement,
                cfg.endpoint_id("tagger"),
                cfg.endpoint_id("detector"),
                timer=acc.add,
            )
            with acc.timed(StageName.DESCRIBE):
                describe_objects(gateway, image, enhancement, cfg.endpoint_id("captioner"))
            with acc.timed(StageName.MERGE):
                final = merge_final(corrected, enhancement)
        except StageError:
            raise
        except Exception as err:
            raise StageError("enhance", image, err) from err

    return PipelineResult(
        image=image,
        initial_caption=initial_caption,
        corrected_caption=corrected,
        final_caption=final,
        ledger=ledger,
        enhancement=enhancement,
        timings=acc.as_list(),
        correction_audit=correction_audit,
        all_dropped=all_dropped,
    )


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    caption: str | None
    source_model: str


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}:{lineno}: invalid JSON: {err}") from err
            image_path = row.get("image_path") or row.get("image_id")
            image_id = row.get("image_id") or image_path
            if not image_id:
                raise ConfigError(f"{path}:{lineno}: needs image_id or image_path")
            entries.append(
                ManifestEntry(
                    image_id=str(image_id),
                    image_path=str(image_path),
                    caption=row.get("caption"),
                    source_model=str(row.get("source_model", "unknown")),
                )
            )
    return entries


@dataclass
class BatchSummary:
    out_dir: Path
    total: int
    failed: int


def _json_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def run_batch(manifest_path: str | Path, cfg: PipelineConfig, out_dir: str | Path) -> BatchSummary:
    """Process every manifest row; per-image failures are recorded in the
    results file and do not stop the batch."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = load_manifest(manifest_path)
    gateway = Gateway(cfg.endpoints)

    def process(entry: ManifestEntry) -> tuple[dict, list[dict], dict | None]:
        wall_start = time.perf_counter()
        record = {
            "image_id": entry.image_id,
            "image_path": entry.image_path,
            "source_model": entry.source_model,
            "mode": cfg.mode.value,
            "initial_caption": entry.caption,
            "corrected_caption": None,
            "final_caption": None,
            "all_dropped": False,
            "error": None,
        }
        audit: list[dict] = []
        try:
            caption = entry.caption
            if caption is None:
                if cfg.caption_source is None:
                    raise ConfigError(
                        f"manifest row {entry.image_id!r} has no caption and no caption_source is configured"
                    )
                caption = gateway.generate_text(
                    cfg.caption_source, DESCRIBE_IMAGE_PROMPT, image=entry.image_id
                )
                record["initial_caption"] = caption
            result = run_pipeline(gateway, entry.image_id, caption, cfg)
        except Exception as err:
            stage = err.stage if isinstance(err, StageError) else "pipeline"
            record["error"] = {"stage": stage, "message": str(err)}
            logger.error("image %s failed: %s", entry.image_id, err)
            return record, audit, None
        record["corrected_caption"] = result.corrected_caption
        record["final_caption"] = result.final_caption
        record["all_dropped"] = result.all_dropped
        audit.append({"image_id": entry.image_id, "type": "ledger", "ledger": result.ledger.to_json_dict()})
        audit.append(
            {"image_id": entry.image_id, "type": "correction", "sentences": result.correction_audit}
        )
        if result.enhancement is not None:
            audit.append(
                {
                    "image_id": entry.image_id,
                    "type": "enhancement",
                    "enhancement": result.enhancement.to_json_dict(),
                }
            )
        stage_ms = [
            {"stage": timing.stage.value, "elapsed_ms": timing.elapsed_ms} for timing in result.timings
        ]
        timing_entry = {
            "stages": stage_ms,
            "total_ms": sum(t["elapsed_ms"] for t in stage_ms),
            "wall_ms": (time.perf_counter() - wall_start) * 1000.0,
        }
        return record, audit, timing_entry

    if cfg.parallelism == 1:
        outcomes = [process(entry) for entry in entries]
    else:
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            outcomes = list(pool.map(process, entries))

    failed = 0
    timings: dict[str, dict] = {}
    with open(out / RESULTS_FILE, "w", encoding="utf-8") as results_fh, open(
        out / AUDIT_FILE, "w", encoding="utf-8"
    ) as audit_fh:
        for record, audit, timing_entry in outcomes:
            if record["error"] is not None:
                failed += 1
            results_fh.write(_json_line(record))
            for line in audit:
                audit_fh.write(_json_line(line))
            if timing_entry is not None:
                timings[record["image_id"]] = timing_entry
    (out / TIMINGS_FILE).write_text(
        json.dumps({"images": timings}, indent=2, sort_keys=False), encoding="utf-8"
    )
    (out / CONFIG_SNAPSHOT_FILE).write_text(
        json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    return BatchSummary(out_dir=out, total=len(entries), failed=failed)


def load_results(run_dir: str | Path) -> list[dict]:
    path = Path(run_dir) / RESULTS_FILE
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def export_dataset(
    run_dir: str | Path, out_path: str | Path, allow_missing_images: bool = False
) -> int:
    """Write one annotation record per successfully processed image; returns
    the record count."""
    records = load_results(run_dir)
    exported = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        for record in records:
            if record.get("error") is not None:
                continue
            caption = record.get("final_caption") or ""
            if not caption:
                logger.warning("image %s has an empty final caption; not exported", record["image_id"])
                continue
            image_path = record["image_path"]
            if not Path(image_path).exists():
                if not allow_missing_images:
                    raise CrosscapError(
                        f"image path {image_path!r} does not resolve; "
                        "use allow_missing_images to export anyway"
                    )
                logger.warning("image path %s does not resolve", image_path)
            fh.write(
                _json_line(
                    {
                        "image_path": image_path,
                        "caption": caption,
                        "source_model": record.get("source_model", "unknown"),
                        "pipeline_version": __version__,
                        "audit_ref": f"{AUDIT_FILE}#{record['image_id']}",
                    }
                )
            )
            exported += 1
    return exported


def load_questions(path: str | Path) -> list[PopeQuestion]:
    questions = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                questions.append(PopeQuestion.from_json_dict(json.loads(line)))
    return questions


def resolve_prediction(value: BinaryValue) -> tuple[BinaryValue, bool]:
    """Map a judge answer to a scoreable prediction; unparseable replies
    count as "no" and are flagged so reports can disclose them."""
    if value is BinaryValue.UNPARSEABLE:
        return BinaryValue.NO, True
    return value, False


def _side_report(pairs: list[tuple[BinaryValue, BinaryValue, Strategy]], unparseable: int) -> dict:
    overall = score([(g, p) for g, p, _ in pairs])
    negative_strategies = sorted(
        {s.value for _, _, s in pairs if s is not Strategy.GROUND_TRUTH}
    )
    per_strategy = {}
    for name in negative_strategies:
        strategy = Strategy(name)
        bucket = [(g, p) for g, p, s in pairs if s in (Strategy.GROUND_TRUTH, strategy)]
        per_strategy[name] = score(bucket).as_percent_dict()
    return {
        "overall": overall.as_percent_dict(),
        "per_strategy": per_strategy,
        "unparseable": unparseable,
    }


def evaluate(
    run_dir: str | Path,
    questions_path: str | Path,
    judge_endpoint_id: str,
    cfg: PipelineConfig | None = None,
) -> dict:
    """Judge every question against the before- and after-correction
    captions of its image and score both sides."""
    run_dir = Path(run_dir)
    if cfg is None:
        cfg = PipelineConfig.from_file(run_dir / CONFIG_SNAPSHOT_FILE)
    questions = load_questions(questions_path)
    if not questions:
        raise EmptyInput("questions file is empty")
    captions = {
        r["image_id"]: (r["initial_caption"], r["final_caption"])
        for r in load_results(run_dir)
        if r.get("error") is None and r.get("final_caption")
    }
    gateway = Gateway(cfg.endpoints)
    judge = gateway.endpoint(judge_endpoint_id)
    if judge.role is not BackendRole.TEXT_GEN:
        raise ConfigError(f"judge endpoint {judge_endpoint_id!r} must have the text_gen role")
    unmatched = sorted({q.image for q in questions if q.image not in captions})
    for image in unmatched:
        logger.warning("questions reference image %s absent from the run results", image)

    sides: dict[str, list[tuple[BinaryValue, BinaryValue, Strategy]]] = {"before": [], "after": []}
    unparseable = {"before": 0, "after": 0}
    for question in questions:
        if question.image not in captions:
            continue
        before_caption, after_caption = captions[question.image]
        for side, caption in (("before", before_caption), ("after", after_caption)):
            answer = judge_from_caption(gateway, judge, question, caption)
            predicted, was_unparseable = resolve_prediction(answer.value)
            if was_unparseable:
                unparseable[side] += 1
            sides[side].append((question.gold, predicted, question.strategy))
    if not sides["before"]:
        raise EmptyInput("no question matched an image in the run results")
    report = {
        "questions": len(questions),
        "matched": len(sides["before"]),
        "unmatched_images": unmatched,
        "before": _side_report(sides["before"], unparseable["before"]),
        "after": _side_report(sides["after"], unparseable["after"]),
    }
    (run_dir / EVAL_REPORT_FILE).write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
    )
    return report
