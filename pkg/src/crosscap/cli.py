"""Command-line interface: run, eval, export, gen-questions, fixtures."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .enhancement import DEFAULT_TRAFFIC_ALLOWLIST
from .errors import CrosscapError, InsufficientVocabulary
from .fixtures import load_scenarios, validate_fixture_file
from .pipeline import Mode, PipelineConfig, evaluate, export_dataset, run_batch
from .pope import Strategy, VocabStats, build_questions
from .text_analysis import canonicalize

logger = logging.getLogger(__name__)

CONFIG_ENV_VAR = "HALLU_CONFIG"


def _load_config(args) -> PipelineConfig:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        raise CrosscapError(f"no config file given (use --config or ${CONFIG_ENV_VAR})")
    cfg = PipelineConfig.from_file(path)
    overrides = {}
    if getattr(args, "mode", None):
        overrides["mode"] = Mode(args.mode)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "parallel", None) is not None:
        overrides["parallelism"] = args.parallel
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    summary = run_batch(args.manifest, cfg, args.out_dir)
    print(
        f"processed {summary.total} image(s), {summary.failed} failed; "
        f"outputs in {summary.out_dir}"
    )
    return 1 if summary.failed else 0


def _cmd_eval(args) -> int:
    cfg = PipelineConfig.from_file(args.config) if args.config else None
    report = evaluate(args.run, args.questions, args.judge, cfg)
    for side in ("before", "after"):
        overall = report[side]["overall"]
        print(
            f"{side:6s} F1={overall['f1']:.2f} precision={overall['precision']:.2f} "
            f"recall={overall['recall']:.2f} accuracy={overall['accuracy']:.2f} "
            f"yes_rate={overall['yes_rate']:.2f}"
        )
    if report["unmatched_images"]:
        print(f"warning: {len(report['unmatched_images'])} image id(s) had no run result")
    return 0


def _cmd_export(args) -> int:
    count = export_dataset(args.run, args.out, allow_missing_images=args.allow_missing_images)
    print(f"exported {count} annotation record(s) to {args.out}")
    return 0


def _cmd_gen_questions(args) -> int:
    stats = VocabStats.from_file(args.stats)
    if not args.no_allowlist:
        allowed = {canonicalize(t) for t in DEFAULT_TRAFFIC_ALLOWLIST}
        stats = stats.restrict(allowed)
    scenarios = load_scenarios(args.fixtures)
    strategy = Strategy(args.strategy)
    written = 0
    skipped = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for image_id in sorted(scenarios):
            gt = {canonicalize(o) for o in scenarios[image_id].present_objects} & stats.vocabulary
            try:
                questions = build_questions(image_id, gt, stats, strategy, args.seed)
            except InsufficientVocabulary as err:
                skipped.append(image_id)
                logger.warning("%s: %s", image_id, err)
                continue
            for question in questions:
                fh.write(json.dumps(question.to_json_dict(), sort_keys=True) + "\n")
                written += 1
    print(f"wrote {written} question(s) to {args.out}")
    if skipped:
        print(f"warning: skipped {len(skipped)} image(s) with insufficient vocabulary")
    return 0 if written else 1


def _cmd_fixtures(args) -> int:
    if args.fixtures_command == "validate":
        problems = validate_fixture_file(args.file)
        if problems:
            for problem in problems:
                print(f"INVALID {problem}")
            return 1
        scenarios = load_scenarios(args.file)
        print(f"OK {args.file}: {len(scenarios)} scenario(s)")
        return 0
    raise CrosscapError(f"unknown fixtures subcommand {args.fixtures_command!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crosscap",
        description="Caption hallucination correction, enhancement, and evaluation",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline over a manifest of captions")
    run.add_argument("--manifest", required=True, help="JSONL manifest of image/caption rows")
    run.add_argument("--config", help=f"pipeline config JSON (or ${CONFIG_ENV_VAR})")
    run.add_argument("--mode", choices=[m.value for m in Mode])
    run.add_argument("--seed", type=int)
    run.add_argument("--parallel", type=int)
    run.add_argument("--out-dir", default="run_out", help="run directory to write")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="judge questions against a run's captions")
    ev.add_argument("--run", required=True, help="run directory")
    ev.add_argument("--questions", required=True, help="questions JSONL file")
    ev.add_argument("--judge", required=True, help="text_gen endpoint id acting as judge")
    ev.add_argument("--config", help="config JSON (default: the run's snapshot)")
    ev.set_defaults(func=_cmd_eval)

    ex = sub.add_parser("export", help="export a run as annotation records")
    ex.add_argument("--run", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--allow-missing-images", action="store_true")
    ex.set_defaults(func=_cmd_export)

    gq = sub.add_parser("gen-questions", help="build balanced yes/no questions")
    gq.add_argument("--stats", required=True, help="vocabulary statistics JSON")
    gq.add_argument("--fixtures", required=True, help="fixture scenarios supplying ground truth")
    gq.add_argument(
        "--strategy", required=True, choices=[s.value for s in Strategy if s is not Strategy.GROUND_TRUTH]
    )
    gq.add_argument("--seed", type=int, default=0)
    gq.add_argument("--out", required=True)
    gq.add_argument("--no-allowlist", action="store_true", help="skip the traffic-vocabulary filter")
    gq.set_defaults(func=_cmd_gen_questions)

    fx = sub.add_parser("fixtures", help="fixture file tools")
    fx_sub = fx.add_subparsers(dest="fixtures_command", required=True)
    fx_validate = fx_sub.add_parser("validate", help="check a scenario file")
    fx_validate.add_argument("file")
    fx_validate.set_defaults(func=_cmd_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CrosscapError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
