"""Dataset attributes, difficulty binning, training-sample selection, manifest.

Each puzzle gets an attribute record: readability and logical coherence
(1-5, from the annotator provider) and a pass rate measured by k independent
solver attempts. Pass rates drive difficulty bins and the training sampler's
eligibility band; the manifest ties every stage count together and is
checked for internal consistency before export.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .assembly import Puzzle, Variant
from .providers import (
    ParseFailure,
    ProviderError,
    ProviderRequest,
    RequestKind,
    TextProvider,
    parse_annotation_tags,
    parse_boxed_answer,
)

FOUR_OPTION_VARIANTS = (Variant.DEFAULT4, Variant.SHUFFLED4)

# Sampler eligibility: challenging yet feasible.
SAMPLE_PASS_MIN = 0.375
SAMPLE_PASS_MAX = 0.875
SAMPLE_MIN_COMBINED_SCORE = 8
FOUR_OPTION_FRACTION = 0.8

DEFAULT_ATTEMPTS = 8  # solver rollouts per puzzle


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    UNBINNED = "unbinned"


class InsufficientPool(ValueError):
    """Eligible pool cannot satisfy the requested sample; carries shortfall detail."""

    def __init__(self, message: str, shortfall: dict):
        super().__init__(message)
        self.shortfall = shortfall


class InconsistentState(ValueError):
    """A manifest identity failed; the message names it."""


@dataclass
class AttributeRecord:
    puzzle_id: str
    variant: Variant
    readability: int
    coherence: int
    pass_rate: float
    attempts: int

    def __post_init__(self):
        for name in ("readability", "coherence"):
            v = getattr(self, name)
            if not 1 <= v <= 5:
                raise ValueError(f"{name} must be in [1, 5], got {v}")
        if self.attempts < 0:
            raise ValueError("attempts must be >= 0")
        if not 0.0 <= self.pass_rate <= 1.0:
            raise ValueError("pass_rate must be in [0, 1]")
        if self.attempts:
            successes = self.pass_rate * self.attempts
            if abs(successes - round(successes)) > 1e-9:
                raise ValueError("pass_rate * attempts must be an integer")

    def to_record(self) -> dict:
        return {
            "puzzle_id": self.puzzle_id,
            "variant": self.variant.value,
            "readability": self.readability,
            "coherence": self.coherence,
            "pass_rate": self.pass_rate,
            "attempts": self.attempts,
        }

    @staticmethod
    def from_record(rec: dict) -> "AttributeRecord":
        return AttributeRecord(
            puzzle_id=rec["puzzle_id"],
            variant=Variant(rec["variant"]),
            readability=rec["readability"],
            coherence=rec["coherence"],
            pass_rate=rec["pass_rate"],
            attempts=rec["attempts"],
        )


def write_records_jsonl(path: str | Path, records: Iterable[AttributeRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_record(), sort_keys=True) + "\n")


def read_records_jsonl(path: str | Path) -> Iterator[AttributeRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield AttributeRecord.from_record(json.loads(line))


def bin_difficulty(rec: AttributeRecord) -> Difficulty:
    """Difficulty from pass rate: hard at exactly 0, medium in [0.25, 0.5),
    easy in [0.5, 0.75]; everything else stays unbinned.

    Interval bounds close on the left and on easy's right edge (the stated
    ranges carry no open/closed markers; this convention is pinned here and
    exercised at the boundary values).
    """
    if rec.attempts <= 0:
        raise ValueError("difficulty needs at least one attempt")
    p = rec.pass_rate
    if p == 0.0:
        return Difficulty.HARD
    if 0.5 <= p <= 0.75:
        return Difficulty.EASY
    if 0.25 <= p < 0.5:
        return Difficulty.MEDIUM
    return Difficulty.UNBINNED


def _eligible(rec: AttributeRecord) -> bool:
    return (
        SAMPLE_PASS_MIN <= rec.pass_rate <= SAMPLE_PASS_MAX
        and rec.readability + rec.coherence >= SAMPLE_MIN_COMBINED_SCORE
    )


def sample_training(
    records: Sequence[AttributeRecord],
    n: int,
    rng: np.random.Generator,
) -> list[str]:
    """Pick n puzzle ids: 80% four-option, 20% ten-option, all eligible.

    Eligibility: pass rate within [0.375, 0.875] and readability+coherence
    >= 8. Raises InsufficientPool with per-constraint shortfall counts when
    either variant pool is too small.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")
    need4 = round(FOUR_OPTION_FRACTION * n)
    need10 = n - need4

    pool4 = sorted(
        (r.puzzle_id for r in records if _eligible(r) and r.variant in FOUR_OPTION_VARIANTS)
    )
    pool10 = sorted(
        (r.puzzle_id for r in records if _eligible(r) and r.variant is Variant.EXPANDED10)
    )
    if len(pool4) < need4 or len(pool10) < need10:
        fails_band = sum(
            1 for r in records if not SAMPLE_PASS_MIN <= r.pass_rate <= SAMPLE_PASS_MAX
        )
        fails_score = sum(
            1 for r in records if r.readability + r.coherence < SAMPLE_MIN_COMBINED_SCORE
        )
        shortfall = {
            "four_option": {"available": len(pool4), "needed": need4},
            "ten_option": {"available": len(pool10), "needed": need10},
            "outside_pass_band": fails_band,
            "below_score_threshold": fails_score,
        }
        raise InsufficientPool(f"eligible pool too small: {shortfall}", shortfall)

    picks4 = [pool4[int(i)] for i in rng.choice(len(pool4), size=need4, replace=False)]
    picks10 = [pool10[int(i)] for i in rng.choice(len(pool10), size=need10, replace=False)]
    return picks4 + picks10


# ---------------------------------------------------------------------------
# Pass rate measurement


def _attempt_seed(base_seed: int, puzzle_id: str, attempt: int) -> int:
    digest = hashlib.sha256(f"{base_seed}|{puzzle_id}|{attempt}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def pass_rate(
    puzzle: Puzzle,
    solver: TextProvider,
    attempts: int = DEFAULT_ATTEMPTS,
    sheet_bytes: bytes | None = None,
    base_seed: int = 0,
    retry_budget: int = 3,
) -> tuple[float, int]:
    """(pass rate, attempts) over k independent solve calls.

    The solver request carries only the sheet image and the question
    bindings, never the answer key. Each attempt retries malformed or
    failed responses up to the budget, then the whole measurement aborts
    with ProviderError.
    """
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    from .assembly import QUESTION_TEXT

    labels = ", ".join(puzzle.option_labels())
    attachments = (sheet_bytes,) if sheet_bytes is not None else ()
    correct = 0
    for k in range(attempts):
        answer: Optional[str] = None
        last: Exception | None = None
        for retry in range(retry_budget):
            request = ProviderRequest(
                RequestKind.SOLVE,
                bindings={"QUESTION": QUESTION_TEXT, "OPTION_LABELS": labels},
                attachments=attachments,
                seed=_attempt_seed(base_seed, puzzle.puzzle_id, k),
                attempt=retry,
            )
            try:
                answer = parse_boxed_answer(solver.complete(request).raw)
                break
            except (ProviderError, ParseFailure) as exc:
                last = exc
        if answer is None:
            raise ProviderError(
                f"solver failed puzzle {puzzle.puzzle_id} attempt {k}: {last}"
            )
        if answer == puzzle.answer:
            correct += 1
    return correct / attempts, attempts


def annotate_puzzle(
    puzzle: Puzzle,
    annotator: TextProvider,
    sheet_bytes: bytes | None = None,
    base_seed: int = 0,
) -> tuple[int, int]:
    """(readability, coherence) from the annotator provider."""
    request = ProviderRequest(
        RequestKind.ANNOTATE,
        bindings={
            "QUESTION": puzzle.prompt,
            "ANSWER": puzzle.answer,
            "RULES": puzzle.provenance.get("rule", ""),
        },
        attachments=(sheet_bytes,) if sheet_bytes is not None else (),
        seed=_attempt_seed(base_seed, puzzle.puzzle_id, 0),
    )
    return parse_annotation_tags(annotator.complete(request).raw)


# ---------------------------------------------------------------------------
# Manifest

PASS_RATE_BUCKET_EDGES = [i / 8 for i in range(9)]  # 0, 0.125, ..., 1.0


@dataclass
class DatasetManifest:
    counts: dict = field(default_factory=dict)
    attribute_histograms: dict = field(default_factory=dict)
    difficulty_bins: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "counts": self.counts,
                "attribute_histograms": self.attribute_histograms,
                "difficulty_bins": self.difficulty_bins,
                "files": self.files,
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        data = json.loads(text)
        return DatasetManifest(
            counts=data["counts"],
            attribute_histograms=data["attribute_histograms"],
            difficulty_bins=data["difficulty_bins"],
            files=data["files"],
        )


def _score_histogram(values: Iterable[int]) -> dict[str, int]:
    hist = {str(s): 0 for s in range(1, 6)}
    for v in values:
        hist[str(v)] += 1
    return hist


def _pass_rate_histogram(values: Iterable[float]) -> dict[str, int]:
    edges = PASS_RATE_BUCKET_EDGES
    hist = {f"[{edges[i]:.3f},{edges[i + 1]:.3f})": 0 for i in range(len(edges) - 1)}
    keys = list(hist)
    for v in values:
        idx = min(int(v * 8), 7)  # the final bucket closes on 1.0
        hist[keys[idx]] += 1
    return hist


def build_manifest(
    seeds: int,
    generated: int,
    retained: int,
    groups_per_style: dict[str, int],
    accepted_groups: int,
    puzzles_by_variant: dict[str, int],
    records: Sequence[AttributeRecord] = (),
    files: dict | None = None,
) -> DatasetManifest:
    """Assemble and validate the manifest; raises InconsistentState naming
    the violated identity."""
    rendered = sum(groups_per_style.values())
    default = puzzles_by_variant.get(Variant.DEFAULT4.value, 0)
    shuffled = puzzles_by_variant.get(Variant.SHUFFLED4.value, 0)
    expanded = puzzles_by_variant.get(Variant.EXPANDED10.value, 0)
    total = default + shuffled + expanded

    if accepted_groups > rendered:
        raise InconsistentState(
            f"accepted groups ({accepted_groups}) exceed rendered groups ({rendered})"
        )
    if shuffled != 4 * default:
        raise InconsistentState(f"shuffled ({shuffled}) != 4 x default ({default})")
    if expanded > default:
        raise InconsistentState(f"expanded ({expanded}) > default ({default})")
    if generated < seeds and generated != 0:
        raise InconsistentState(f"generated pool ({generated}) smaller than seeds ({seeds})")
    if retained > generated:
        raise InconsistentState(f"retained ({retained}) exceeds generated ({generated})")

    counts = {
        "seeds": seeds,
        "generated_rules": generated,
        "retained_rules": retained,
        "groups_per_style": dict(sorted(groups_per_style.items())),
        "rendered_groups": rendered,
        "accepted_groups": accepted_groups,
        "puzzles": {
            "default4": default,
            "shuffled4": shuffled,
            "expanded10": expanded,
        },
        "total_puzzles": total,
    }
    bins = {d.value: 0 for d in Difficulty}
    for rec in records:
        bins[bin_difficulty(rec).value] += 1
    histograms = {
        "readability": _score_histogram(r.readability for r in records),
        "coherence": _score_histogram(r.coherence for r in records),
        "pass_rate": _pass_rate_histogram(r.pass_rate for r in records),
        "pass_rate_bucket_edges": PASS_RATE_BUCKET_EDGES,
    }
    return DatasetManifest(
        counts=counts,
        attribute_histograms=histograms,
        difficulty_bins=bins,
        files=files or {},
    )
