"""Near-duplicate removal in embedding space plus rubric filtering.

Rules are embedded as unit vectors; a greedy keep-first pass drops any rule
closer than the threshold to an already-kept rule, so the kept set is
pairwise separated. Distances are Euclidean on unit-normalized vectors
(monotone in cosine distance). nn_distances is exact: block-wise matrix
products, never an approximate index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dsl import ParseError, SemanticError, parse_rule_program, program_warnings
from .rules import Rule, ScoreTriple, validate_rule


class DimensionMismatch(ValueError):
    pass


class MissingScore(ValueError):
    pass


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """Unit-normalize embedding rows; rejects ragged or zero vectors."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    norms = np.linalg.norm(arr, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero embedding vector")
    return arr / norms


_BLOCK = 512


def nn_distances(ids: list[str], vectors: np.ndarray) -> list[tuple[str, float]]:
    """Each pool member's exact Euclidean distance to its nearest neighbor."""
    if len(ids) != vectors.shape[0]:
        raise DimensionMismatch("ids and vectors disagree in length")
    if len(ids) < 2:
        raise ValueError("nearest-neighbor distances need at least 2 vectors")
    v = normalize_rows(vectors)
    n = v.shape[0]
    sq = np.sum(v * v, axis=1)
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = v[start:stop]
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (block @ v.T)
        np.maximum(d2, 0.0, out=d2)
        for local in range(stop - start):
            d2[local, start + local] = np.inf  # exclude self
        out[start:stop] = np.sqrt(np.min(d2, axis=1))
    return list(zip(ids, out.tolist()))


@dataclass
class DedupReport:
    kept: list[str]
    removed: list[tuple[str, str, float]] = field(default_factory=list)  # (id, nearest kept id, distance)
    threshold: float = 0.0

    @property
    def removed_ids(self) -> list[str]:
        return [rid for rid, _, _ in self.removed]

    def to_record(self) -> dict:
        return {
            "kept": self.kept,
            "removed": [{"id": r, "nearest": n, "distance": d} for r, n, d in self.removed],
            "threshold": self.threshold,
        }

    def to_jsonl(self) -> str:
        """One summary line, then one line per kept/removed id."""
        lines = [
            json.dumps(
                {
                    "kind": "summary",
                    "threshold": self.threshold,
                    "kept": len(self.kept),
                    "removed": len(self.removed),
                },
                sort_keys=True,
            )
        ]
        for rid in self.kept:
            lines.append(json.dumps({"kind": "kept", "id": rid}, sort_keys=True))
        for rid, nearest, distance in self.removed:
            lines.append(
                json.dumps(
                    {"kind": "removed", "id": rid, "nearest": nearest, "distance": distance},
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_jsonl(text: str) -> "DedupReport":
        report = DedupReport(kept=[])
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["kind"] == "summary":
                report.threshold = rec["threshold"]
            elif rec["kind"] == "kept":
                report.kept.append(rec["id"])
            else:
                report.removed.append((rec["id"], rec["nearest"], rec["distance"]))
        return report


def dedup(ids: list[str], vectors: np.ndarray, threshold: float) -> DedupReport:
    """Greedy keep-first pass in pool order.

    A rule is removed iff its distance to some already-kept rule is
    strictly below the threshold, so the kept set is pairwise separated by
    at least the threshold. Callers wanting order stability should present
    the pool sorted by rule id.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if len(ids) != vectors.shape[0]:
        raise DimensionMismatch("ids and vectors disagree in length")
    v = normalize_rows(vectors)
    report = DedupReport(kept=[], threshold=threshold)
    kept_rows: list[np.ndarray] = []
    kept_matrix: np.ndarray | None = None
    for i, rid in enumerate(ids):
        if kept_rows:
            if kept_matrix is None or kept_matrix.shape[0] != len(kept_rows):
                kept_matrix = np.vstack(kept_rows)
            d = np.linalg.norm(kept_matrix - v[i], axis=1)
            j = int(np.argmin(d))
            if d[j] < threshold:
                report.removed.append((rid, report.kept[j], float(d[j])))
                continue
        kept_rows.append(v[i])
        kept_matrix = None
        report.kept.append(rid)
    return report


def filter_by_score(rules: list[Rule]) -> list[Rule]:
    """Rubric gate: keep rules with total strictly above 12 and feasibility >= 3."""
    retained = []
    for rule in rules:
        if rule.scores is None:
            raise MissingScore(f"rule {rule.id} has no rubric scores")
        if rule.scores.total > 12 and rule.scores.feasibility >= 3:
            retained.append(rule)
    return retained


def rubric_score_dsl(rule: Rule, program_text: str | None = None) -> ScoreTriple:
    """Deterministic rubric from format validation and rule-program analysis.

    Format loses 2 points per format violation (floor 1). Feasibility is 5
    for a clean parse, 3 when the program parses with warnings, 1 when it
    fails to parse or is missing. Content starts at 5 and loses a point per
    consistency concern (constant progressions, duplicate recipes, overflow
    or out-of-bounds trajectories).
    """
    source = program_text if program_text is not None else rule.program
    report = validate_rule(rule)
    fmt = max(1, 5 - 2 * len(report.violations))
    if source is None:
        return ScoreTriple(fmt, 2 if report.ok else 1, 1)
    try:
        program = parse_rule_program(source)
    except (ParseError, SemanticError):
        return ScoreTriple(fmt, 2 if report.ok else 1, 1)
    warnings = program_warnings(program)
    feasibility = 5 if not warnings else 3
    content = 5
    if any("constant progression" in w for w in warnings):
        content -= 1
    if any("duplicate violation" in w for w in warnings):
        content -= 1
    if any("overflow" in w for w in warnings):
        content -= 1
    if any("leave panel bounds" in w for w in warnings):
        content -= 1
    return ScoreTriple(fmt, max(1, content), feasibility)
