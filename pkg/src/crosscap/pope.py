"""Balanced yes/no existence questions and the five-metric report.

Question sets are balanced per image: k = min(3, |ground truth|) questions
whose answer is yes (objects sampled from the ground truth) and k whose
answer is no (objects sampled from the vocabulary minus the ground truth
under one of three strategies: uniform random, highest corpus frequency,
or highest co-occurrence with the ground-truth objects).
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import EmptyInput, InsufficientVocabulary
from .gateway import BinaryAnswer, BinaryValue, parse_binary_answer
from .text_analysis import load_prompt_template

QUESTION_TEMPLATE = "Is there a {object} in the image?"
JUDGE_TEMPLATE_NAME = "judge_v1.txt"


class Strategy(Enum):
    GROUND_TRUTH = "ground_truth"
    RANDOM = "random"
    POPULAR = "popular"
    ADVERSARIAL = "adversarial"


NEGATIVE_STRATEGIES = (Strategy.RANDOM, Strategy.POPULAR, Strategy.ADVERSARIAL)


@dataclass(frozen=True)
class PopeQuestion:
    image: str
    object: str
    question: str
    gold: BinaryValue
    strategy: Strategy

    def __post_init__(self):
        if self.question != QUESTION_TEMPLATE.format(object=self.object):
            raise ValueError(f"malformed question text: {self.question!r}")
        if self.gold is BinaryValue.YES and self.strategy is not Strategy.GROUND_TRUTH:
            raise ValueError("gold-yes questions must use the ground-truth strategy")
        if self.gold is BinaryValue.NO and self.strategy not in NEGATIVE_STRATEGIES:
            raise ValueError("gold-no questions need a negative-sampling strategy")

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image,
            "object": self.object,
            "question": self.question,
            "gold": self.gold.value,
            "strategy": self.strategy.value,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PopeQuestion":
        return cls(
            image=data["image_id"],
            object=data["object"],
            question=data["question"],
            gold=BinaryValue(data["gold"]),
            strategy=Strategy(data["strategy"]),
        )


class VocabStats:
    """Vocabulary with corpus frequency and symmetric co-occurrence counts."""

    def __init__(
        self,
        vocabulary: Iterable[str],
        frequency: dict[str, int] | None = None,
        cooccurrence: dict[tuple[str, str], int] | None = None,
    ):
        self.vocabulary = frozenset(vocabulary)
        self.frequency = dict(frequency or {})
        unknown = set(self.frequency) - self.vocabulary
        if unknown:
            raise ValueError(f"frequency keys outside vocabulary: {sorted(unknown)}")
        self._pairs: dict[tuple[str, str], int] = {}
        for (a, b), count in (cooccurrence or {}).items():
            self._pairs[self._key(a, b)] = count

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def pair_count(self, a: str, b: str) -> int:
        return self._pairs.get(self._key(a, b), 0)

    def cooccurrence_with(self, obj: str, others: Iterable[str]) -> int:
        return sum(self.pair_count(obj, other) for other in others)

    def restrict(self, allowed: Iterable[str]) -> "VocabStats":
        allowed = set(allowed)
        vocab = self.vocabulary & allowed
        freq = {k: v for k, v in self.frequency.items() if k in vocab}
        pairs = {k: v for k, v in self._pairs.items() if k[0] in vocab and k[1] in vocab}
        return VocabStats(vocab, freq, pairs)

    @classmethod
    def from_json_dict(cls, data: dict) -> "VocabStats":
        pairs = {(a, b): int(n) for a, b, n in data.get("cooccurrence", [])}
        return cls(data["vocabulary"], data.get("frequency", {}), pairs)

    @classmethod
    def from_file(cls, path) -> "VocabStats":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def to_json_dict(self) -> dict:
        return {
            "vocabulary": sorted(self.vocabulary),
            "frequency": {k: self.frequency[k] for k in sorted(self.frequency)},
            "cooccurrence": [[a, b, n] for (a, b), n in sorted(self._pairs.items())],
        }


def _image_rng(seed: int, image: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{image}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sample_negatives(
    gt_objects: set[str], stats: VocabStats, strategy: Strategy, k: int, rng: random.Random
) -> list[str]:
    """Pick k absent objects. Random is seeded-uniform; popular ranks by
    corpus frequency, adversarial by total co-occurrence with the ground
    truth; ranking ties break lexicographically."""
    pool = sorted(stats.vocabulary - set(gt_objects))
    if len(pool) < k:
        raise InsufficientVocabulary(
            f"need {k} negatives, vocabulary offers {len(pool)} outside the ground truth"
        )
    if strategy is Strategy.RANDOM:
        return rng.sample(pool, k)
    if strategy is Strategy.POPULAR:
        return sorted(pool, key=lambda o: (-stats.frequency.get(o, 0), o))[:k]
    if strategy is Strategy.ADVERSARIAL:
        return sorted(pool, key=lambda o: (-stats.cooccurrence_with(o, gt_objects), o))[:k]
    raise ValueError(f"{strategy} is not a negative-sampling strategy")


def build_questions(
    image: str,
    gt_objects: set[str],
    stats: VocabStats,
    strategy: Strategy,
    seed: int,
) -> list[PopeQuestion]:
    """Balanced question set for one image: k yes + k no, k = min(3, |gt|),
    negatives disjoint from the ground truth, no object repeated."""
    if not gt_objects <= stats.vocabulary:
        missing = sorted(gt_objects - stats.vocabulary)
        raise ValueError(f"ground-truth objects missing from vocabulary: {missing}")
    k = min(3, len(gt_objects))
    if k == 0:
        return []
    rng = _image_rng(seed, image)
    yes_objects = rng.sample(sorted(gt_objects), k)
    no_objects = sample_negatives(gt_objects, stats, strategy, k, rng)
    questions = [
        PopeQuestion(
            image=image,
            object=obj,
            question=QUESTION_TEMPLATE.format(object=obj),
            gold=BinaryValue.YES,
            strategy=Strategy.GROUND_TRUTH,
        )
        for obj in yes_objects
    ]
    questions += [
        PopeQuestion(
            image=image,
            object=obj,
            question=QUESTION_TEMPLATE.format(object=obj),
            gold=BinaryValue.NO,
            strategy=strategy,
        )
        for obj in no_objects
    ]
    return questions


def build_judge_prompt(caption: str, question: str) -> str:
    template = load_prompt_template(JUDGE_TEMPLATE_NAME)
    return template.replace("{question}", question).replace("{caption}", caption)


def judge_from_caption(gateway, endpoint, question: PopeQuestion, caption: str) -> BinaryAnswer:
    """Ask the judge whether the caption supports the question."""
    if not caption or not caption.strip():
        raise ValueError("caption must be nonempty")
    reply = gateway.generate_text(endpoint, build_judge_prompt(caption, question.question))
    return parse_binary_answer(reply)


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    yes_rate: float
    average: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "EvalReport":
        total = tp + fp + fn + tn
        if total == 0:
            raise EmptyInput("cannot score an empty set of answer pairs")
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        accuracy = (tp + tn) / total
        yes_rate = (tp + fp) / total
        average = (precision + recall + f1 + accuracy) / 4
        return cls(tp, fp, fn, tn, precision, recall, f1, accuracy, yes_rate, average)

    def as_percent_dict(self) -> dict:
        """Counts plus the derived metrics as percentages, 2 decimals."""
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
            "precision": round(self.precision * 100, 2),
            "recall": round(self.recall * 100, 2),
            "f1": round(self.f1 * 100, 2),
            "accuracy": round(self.accuracy * 100, 2),
            "yes_rate": round(self.yes_rate * 100, 2),
            "average": round(self.average * 100, 2),
        }


def score(pairs: Sequence[tuple[BinaryValue, BinaryValue]]) -> EvalReport:
    """Confusion counts over (gold, predicted) pairs; gold yes is the
    positive class. Predictions must already be resolved to yes or no."""
    if not pairs:
        raise EmptyInput("cannot score an empty set of answer pairs")
    tp = fp = fn = tn = 0
    for gold, predicted in pairs:
        if predicted not in (BinaryValue.YES, BinaryValue.NO):
            raise ValueError(f"predicted answer must be yes or no, got {predicted}")
        if gold is BinaryValue.YES:
            if predicted is BinaryValue.YES:
                tp += 1
            else:
                fn += 1
        elif gold is BinaryValue.NO:
            if predicted is BinaryValue.YES:
                fp += 1
            else:
                tn += 1
        else:
            raise ValueError(f"gold answer must be yes or no, got {gold}")
    return EvalReport.from_counts(tp, fp, fn, tn)
