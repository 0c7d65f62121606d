"""Rule genome: class taxonomy, lineage, format validation, JSONL serialization.

A rule is a small ordered set of bullet statements describing one visual
regularity, tagged with a class that names its visual pattern and reasoning
style. The 15 raw (pattern, style) combinations collapse to 8 canonical
classes: 7 concrete ones plus a unified fallback.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional

MIN_BULLETS = 4
MAX_BULLETS = 6
MAX_BULLET_WORDS = 30  # each bullet must stay under this


class VisualPattern(str, Enum):
    NINE_SQUARE_GRID = "nine_square_grid"
    HORIZONTAL_SQUARE = "horizontal_square"
    ANALOGY = "analogy"
    TWO_GROUP = "two_group"
    OTHERS = "others"


class ReasoningStyle(str, Enum):
    DEDUCTIVE = "deductive"
    INDUCTIVE = "inductive"
    OTHERS = "others"


class InvalidCombination(ValueError):
    """Raised for (pattern, style) pairs that name no canonical class."""


@dataclass(frozen=True)
class RuleClass:
    """One of the 8 canonical rule classes.

    Construct via :func:`canonical_class`; direct construction skips the
    collapse logic and is only for deserialization.
    """

    visual: VisualPattern
    reasoning: ReasoningStyle

    @property
    def key(self) -> str:
        if self.visual is VisualPattern.OTHERS or self.reasoning is ReasoningStyle.OTHERS:
            return "others"
        return f"{_VISUAL_KEYS[self.visual]}-{_REASONING_KEYS[self.reasoning]}"

    def __str__(self) -> str:
        return self.key


_VISUAL_KEYS = {
    VisualPattern.NINE_SQUARE_GRID: "nsg",
    VisualPattern.HORIZONTAL_SQUARE: "hsq",
    VisualPattern.ANALOGY: "ana",
    VisualPattern.TWO_GROUP: "two",
}
_REASONING_KEYS = {
    ReasoningStyle.DEDUCTIVE: "ded",
    ReasoningStyle.INDUCTIVE: "ind",
}

OTHERS_CLASS = RuleClass(VisualPattern.OTHERS, ReasoningStyle.OTHERS)


def canonical_class(visual: VisualPattern, reasoning: ReasoningStyle) -> RuleClass:
    """Collapse a raw (pattern, style) pair onto one of the 8 classes.

    Any OTHERS tag on either axis collapses to the unified fallback class.
    TWO_GROUP pairs only with INDUCTIVE; the deductive pairing names no
    class and raises InvalidCombination.
    """
    if visual is VisualPattern.OTHERS or reasoning is ReasoningStyle.OTHERS:
        return OTHERS_CLASS
    if visual is VisualPattern.TWO_GROUP and reasoning is ReasoningStyle.DEDUCTIVE:
        raise InvalidCombination("two_group rules are inductive; no deductive variant exists")
    return RuleClass(visual, reasoning)


def all_classes() -> list[RuleClass]:
    """The 8 canonical classes in a stable order."""
    out = []
    for visual in (
        VisualPattern.HORIZONTAL_SQUARE,
        VisualPattern.NINE_SQUARE_GRID,
        VisualPattern.ANALOGY,
    ):
        for reasoning in (ReasoningStyle.DEDUCTIVE, ReasoningStyle.INDUCTIVE):
            out.append(RuleClass(visual, reasoning))
    out.append(RuleClass(VisualPattern.TWO_GROUP, ReasoningStyle.INDUCTIVE))
    out.append(OTHERS_CLASS)
    return out


def class_from_key(key: str) -> RuleClass:
    for cls in all_classes():
        if cls.key == key:
            return cls
    raise InvalidCombination(f"unknown class key {key!r}")


class LineageOp(str, Enum):
    SEED = "seed"
    MUTATION = "mutation"
    CROSSOVER = "crossover"
    MIGRATION = "migration"


@dataclass(frozen=True)
class ScoreTriple:
    """Rubric scores: format, content quality, feasibility, each 1-5."""

    format: int
    content: int
    feasibility: int

    def __post_init__(self):
        for name in ("format", "content", "feasibility"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 1 <= v <= 5:
                raise ValueError(f"{name} score must be an integer in [1, 5], got {v!r}")

    @property
    def total(self) -> int:
        return self.format + self.content + self.feasibility


@dataclass(frozen=True)
class Rule:
    id: str
    rule_class: RuleClass
    bullets: tuple[str, ...]
    generation: int = 0
    lineage: tuple[tuple[str, LineageOp], ...] = ()
    scores: Optional[ScoreTriple] = None
    program: Optional[str] = None  # rule-program source text, attached by the filter stage

    def with_scores(self, scores: ScoreTriple) -> "Rule":
        return replace(self, scores=scores)

    def with_program(self, program: str) -> "Rule":
        return replace(self, program=program)


def rule_id(rule_class: RuleClass, bullets: Iterable[str]) -> str:
    """Content-addressed id: hash of class key and bullet text.

    Identical content gets an identical id across runs, so lineage links
    survive re-execution.
    """
    h = hashlib.sha256()
    h.update(rule_class.key.encode("utf-8"))
    for b in bullets:
        h.update(b"\x00")
        h.update(b.encode("utf-8"))
    return h.hexdigest()[:16]


def make_rule(
    rule_class: RuleClass,
    bullets: Iterable[str],
    generation: int = 0,
    lineage: Iterable[tuple[str, LineageOp]] = (),
) -> Rule:
    bullets = tuple(bullets)
    return Rule(
        id=rule_id(rule_class, bullets),
        rule_class=rule_class,
        bullets=bullets,
        generation=generation,
        lineage=tuple(lineage),
    )


_WORD_RE = re.compile(r"[0-9A-Za-z]")


def word_count(text: str) -> int:
    """Whitespace tokens that carry at least one alphanumeric character.

    Punctuation-only tokens (a lone dash, an ellipsis) do not count.
    """
    return sum(1 for tok in text.split() if _WORD_RE.search(tok))


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_rule(rule: Rule) -> ValidationReport:
    """Check every format constraint; reports all violations, never raises."""
    report = ValidationReport()
    n = len(rule.bullets)
    if n < MIN_BULLETS:
        report.violations.append(f"bullet count below {MIN_BULLETS} (got {n})")
    if n > MAX_BULLETS:
        report.violations.append(f"bullet count above {MAX_BULLETS} (got {n})")
    for i, bullet in enumerate(rule.bullets):
        if not bullet.strip():
            report.violations.append(f"bullet {i + 1} is empty")
        elif word_count(bullet) >= MAX_BULLET_WORDS:
            report.violations.append(
                f"bullet {i + 1} exceeds word limit ({word_count(bullet)} >= {MAX_BULLET_WORDS})"
            )
    if rule.generation < 0:
        report.violations.append("generation is negative")
    if rule.generation == 0 and rule.lineage:
        report.violations.append("generation 0 rule has non-empty lineage")
    if rule.generation > 0:
        ops = [op for _, op in rule.lineage]
        if ops.count(LineageOp.CROSSOVER) not in (0, 2) or (
            LineageOp.CROSSOVER in ops and len(rule.lineage) != 2
        ):
            report.violations.append("crossover rule must have exactly 2 parents")
        if ops == [LineageOp.MUTATION] and len(rule.lineage) != 1:
            report.violations.append("mutation rule must have exactly 1 parent")
        if not rule.lineage:
            report.violations.append("evolved rule has empty lineage")
    return report


# ---------------------------------------------------------------------------
# JSON-lines serialization (one rule record per line)


def rule_to_record(rule: Rule) -> dict:
    rec = {
        "id": rule.id,
        "class": rule.rule_class.key,
        "visual": rule.rule_class.visual.value,
        "reasoning": rule.rule_class.reasoning.value,
        "bullets": list(rule.bullets),
        "generation": rule.generation,
        "lineage": [[pid, op.value] for pid, op in rule.lineage],
    }
    if rule.scores is not None:
        rec["scores"] = {
            "format": rule.scores.format,
            "content": rule.scores.content,
            "feasibility": rule.scores.feasibility,
        }
    if rule.program is not None:
        rec["program"] = rule.program
    return rec


def rule_from_record(rec: dict) -> Rule:
    cls = RuleClass(VisualPattern(rec["visual"]), ReasoningStyle(rec["reasoning"]))
    scores = None
    if rec.get("scores"):
        s = rec["scores"]
        scores = ScoreTriple(s["format"], s["content"], s["feasibility"])
    return Rule(
        id=rec["id"],
        rule_class=cls,
        bullets=tuple(rec["bullets"]),
        generation=rec["generation"],
        lineage=tuple((pid, LineageOp(op)) for pid, op in rec["lineage"]),
        scores=scores,
        program=rec.get("program"),
    )


def write_rules_jsonl(path: str | Path, rules: Iterable[Rule]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules:
            fh.write(json.dumps(rule_to_record(rule), sort_keys=True) + "\n")


def read_rules_jsonl(path: str | Path) -> Iterator[Rule]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield rule_from_record(json.loads(line))
