"""Puzzle assembly: three strategies over accepted image groups.

Per accepted group: one default 4-option puzzle (options shuffled), four
shuffled variants placing the correct panel at A, B, C and D, and one
expanded 10-option puzzle whose extra 6 distractors come from two donor
groups of lineage-related rules in the same style. The composed sheet puts
the 4 stem panels plus a question-mark cell on top and the labeled options
below.

Assembly never re-renders: it references panels by (group, name) and pulls
pixels from a PanelStore only when composing sheets. Option order and donor
sampling derive from (seed, group id), so each puzzle is reproducible in
isolation.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .imaging import ImageBuf
from .providers import RequestKind, render_prompt
from .qc import PHash, hamming
from .renderer import ImageGroup, StyleId, _segment_mask
from .rules import Rule

PANEL_NAMES = ("c0", "c1", "c2", "c3", "c4", "x0", "x1", "x2")
ANSWER_PANEL = "c4"
STEM_PANELS = ("c0", "c1", "c2", "c3")
DISTRACTOR_PANELS = ("x0", "x1", "x2")

QUESTION_TEXT = (
    "The top row shows four panels of a visual sequence followed by a "
    "question mark. Exactly one option below continues the sequence "
    "correctly; the rest break its pattern. Answer with the letter of the "
    "correct option."
)


class RejectedGroup(ValueError):
    """Assembly refuses groups that QC did not accept."""


class InsufficientRelatives(LookupError):
    """Fewer than 2 lineage-related donor groups are available."""


class DuplicateOption(ValueError):
    """Donor sampling could not reach 10 hash-distinct options."""


class MissingPanel(FileNotFoundError):
    pass


class Variant(str, Enum):
    DEFAULT4 = "default4"
    SHUFFLED4 = "shuffled4"
    EXPANDED10 = "expanded10"


@dataclass(frozen=True)
class PanelRef:
    group_id: str
    name: str  # c0..c4 or x0..x2

    def __str__(self) -> str:
        return f"{self.group_id}:{self.name}"

    @staticmethod
    def parse(text: str) -> "PanelRef":
        group_id, name = text.rsplit(":", 1)
        return PanelRef(group_id, name)


@dataclass
class GroupInfo:
    """Metadata an assembler needs; pixels stay in the PanelStore."""

    group_id: str
    rule_id: str
    style: StyleId
    accepted: bool
    phashes: dict[str, int] = field(default_factory=dict)  # panel name -> 64-bit hash

    @staticmethod
    def from_image_group(group: ImageGroup, accepted: bool, phashes: dict[str, int]) -> "GroupInfo":
        return GroupInfo(group.group_id, group.rule_id, group.style, accepted, phashes)


class PanelStore:
    """Panel pixels by reference, backed by memory and/or a panel directory."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[PanelRef, ImageBuf] = {}

    def add_group(self, group: ImageGroup) -> None:
        for name, buf in zip(PANEL_NAMES, group.panels):
            self._memory[PanelRef(group.group_id, name)] = buf

    def get(self, ref: PanelRef) -> ImageBuf:
        buf = self._memory.get(ref)
        if buf is not None:
            return buf
        if self.root is not None:
            path = self.root / ref.group_id / f"{ref.name}.png"
            if path.exists():
                return ImageBuf.load_png(path)
        raise MissingPanel(str(ref))


@dataclass
class Puzzle:
    puzzle_id: str
    group_id: str
    variant: Variant
    stem: tuple[PanelRef, ...]  # 4 refs; the question-mark cell is implicit
    options: tuple[tuple[str, PanelRef], ...]  # (label, panel)
    answer: str
    prompt: str
    rng_seed: int
    provenance: dict = field(default_factory=dict)

    def option_labels(self) -> list[str]:
        return [label for label, _ in self.options]

    def answer_ref(self) -> PanelRef:
        for label, ref in self.options:
            if label == self.answer:
                return ref
        raise KeyError(f"answer label {self.answer} not among options")

    def to_record(self) -> dict:
        return {
            "id": self.puzzle_id,
            "group": self.group_id,
            "variant": self.variant.value,
            "stem": [str(r) for r in self.stem],
            "options": [[label, str(ref)] for label, ref in self.options],
            "answer": self.answer,
            "prompt": self.prompt,
            "rng_seed": self.rng_seed,
            "provenance": self.provenance,
        }

    @staticmethod
    def from_record(rec: dict) -> "Puzzle":
        return Puzzle(
            puzzle_id=rec["id"],
            group_id=rec["group"],
            variant=Variant(rec["variant"]),
            stem=tuple(PanelRef.parse(r) for r in rec["stem"]),
            options=tuple((label, PanelRef.parse(ref)) for label, ref in rec["options"]),
            answer=rec["answer"],
            prompt=rec["prompt"],
            rng_seed=rec["rng_seed"],
            provenance=rec["provenance"],
        )


def _rng_for(seed: int, *scope) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join([str(seed), *map(str, scope)]).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _solver_prompt(labels: Sequence[str]) -> str:
    return render_prompt(
        RequestKind.SOLVE,
        {"QUESTION": QUESTION_TEXT, "OPTION_LABELS": ", ".join(labels)},
    )


def _require_accepted(group: GroupInfo) -> None:
    if not group.accepted:
        raise RejectedGroup(f"group {group.group_id} was rejected by QC")


def assemble_default(group: GroupInfo, rng_seed: int) -> Puzzle:
    """Four options (the answer panel plus the group's 3 distractors) in
    seeded-random order."""
    _require_accepted(group)
    rng = _rng_for(rng_seed, group.group_id, "default")
    refs = [PanelRef(group.group_id, ANSWER_PANEL)] + [
        PanelRef(group.group_id, n) for n in DISTRACTOR_PANELS
    ]
    order = rng.permutation(len(refs))
    labels = "ABCD"
    options = tuple((labels[i], refs[order[i]]) for i in range(4))
    answer = next(label for label, ref in options if ref.name == ANSWER_PANEL)
    return Puzzle(
        puzzle_id=f"{group.group_id}-d0",
        group_id=group.group_id,
        variant=Variant.DEFAULT4,
        stem=tuple(PanelRef(group.group_id, n) for n in STEM_PANELS),
        options=options,
        answer=answer,
        prompt=_solver_prompt(list(labels)),
        rng_seed=rng_seed,
        provenance={"rule": group.rule_id, "style": group.style.value},
    )


def assemble_shuffled(group: GroupInfo, rng_seed: int) -> list[Puzzle]:
    """Four puzzles with identical stems, the correct panel at A, B, C, D.

    The distractor arrangement is one seeded permutation reused across all
    four variants, so only the answer position moves.
    """
    _require_accepted(group)
    rng = _rng_for(rng_seed, group.group_id, "shuffled")
    distractors = [PanelRef(group.group_id, n) for n in DISTRACTOR_PANELS]
    base = [distractors[i] for i in rng.permutation(3)]
    labels = "ABCD"
    puzzles = []
    for position in range(4):
        refs = list(base)
        refs.insert(position, PanelRef(group.group_id, ANSWER_PANEL))
        options = tuple((labels[i], refs[i]) for i in range(4))
        puzzles.append(
            Puzzle(
                puzzle_id=f"{group.group_id}-s{position}",
                group_id=group.group_id,
                variant=Variant.SHUFFLED4,
                stem=tuple(PanelRef(group.group_id, n) for n in STEM_PANELS),
                options=options,
                answer=labels[position],
                prompt=_solver_prompt(list(labels)),
                rng_seed=rng_seed,
                provenance={"rule": group.rule_id, "style": group.style.value, "position": labels[position]},
            )
        )
    return puzzles


def find_related_groups(
    group: GroupInfo,
    pool: dict[str, Rule],
    groups: Iterable[GroupInfo],
) -> list[GroupInfo]:
    """Two accepted donor groups of ancestor rules, rendered in the same style.

    Walks the lineage graph breadth-first from the group's rule, nearest
    ancestors first; raises InsufficientRelatives when fewer than two
    ancestors have an accepted same-style group.
    """
    by_rule: dict[str, list[GroupInfo]] = {}
    for g in groups:
        if g.accepted and g.style == group.style and g.group_id != group.group_id:
            by_rule.setdefault(g.rule_id, []).append(g)

    rule = pool.get(group.rule_id)
    if rule is None:
        raise InsufficientRelatives(f"rule {group.rule_id} not in the lineage pool")
    donors: list[GroupInfo] = []
    seen: set[str] = {rule.id}
    frontier = [pid for pid, _ in rule.lineage]
    while frontier and len(donors) < 2:
        next_frontier: list[str] = []
        for pid in frontier:
            if pid in seen:
                continue
            seen.add(pid)
            for candidate in sorted(by_rule.get(pid, []), key=lambda g: g.group_id):
                donors.append(candidate)
                if len(donors) == 2:
                    break
            if len(donors) == 2:
                break
            ancestor = pool.get(pid)
            if ancestor is not None:
                next_frontier.extend(p for p, _ in ancestor.lineage)
        frontier = next_frontier
    if len(donors) < 2:
        raise InsufficientRelatives(
            f"rule {group.rule_id} has {len(donors)} related accepted groups in style {group.style.value}"
        )
    return donors[:2]


def assemble_expanded(
    group: GroupInfo,
    related: Sequence[GroupInfo],
    rng_seed: int,
    duplicate_hamming: int = 10,
) -> Puzzle:
    """Ten options: the answer, the group's 3 distractors, and 3 panels from
    each donor group, all pairwise pHash-distinct at the duplicate threshold."""
    _require_accepted(group)
    if len(related) != 2 or related[0].group_id == related[1].group_id:
        raise ValueError("expanded assembly needs exactly 2 distinct donor groups")
    for donor in related:
        _require_accepted(donor)
        if donor.group_id == group.group_id:
            raise ValueError("donor equals the source group")

    chosen: list[PanelRef] = [PanelRef(group.group_id, ANSWER_PANEL)]
    chosen += [PanelRef(group.group_id, n) for n in DISTRACTOR_PANELS]
    hashes: list[int] = [group.phashes[ANSWER_PANEL]] + [group.phashes[n] for n in DISTRACTOR_PANELS]

    rng = _rng_for(rng_seed, group.group_id, "expanded")
    for donor in related:
        names = [PANEL_NAMES[i] for i in rng.permutation(len(PANEL_NAMES))]
        taken = 0
        for name in names:
            h = donor.phashes[name]
            if all(hamming(PHash(h), PHash(other)) >= duplicate_hamming for other in hashes):
                chosen.append(PanelRef(donor.group_id, name))
                hashes.append(h)
                taken += 1
                if taken == 3:
                    break
        if taken < 3:
            raise DuplicateOption(
                f"donor {donor.group_id} cannot contribute 3 hash-distinct panels"
            )

    labels = "ABCDEFGHIJ"
    order = rng.permutation(10)
    options = tuple((labels[i], chosen[order[i]]) for i in range(10))
    answer = next(
        label for label, ref in options
        if ref.group_id == group.group_id and ref.name == ANSWER_PANEL
    )
    return Puzzle(
        puzzle_id=f"{group.group_id}-e0",
        group_id=group.group_id,
        variant=Variant.EXPANDED10,
        stem=tuple(PanelRef(group.group_id, n) for n in STEM_PANELS),
        options=options,
        answer=answer,
        prompt=_solver_prompt(list(labels)),
        rng_seed=rng_seed,
        provenance={
            "rule": group.rule_id,
            "style": group.style.value,
            "donors": [related[0].group_id, related[1].group_id],
        },
    )


# ---------------------------------------------------------------------------
# Sheet composition


@dataclass
class SheetConfig:
    gutter: int = 8
    border: int = 1
    label_band: int = 20
    background: tuple[int, int, int] = (255, 255, 255)
    border_color: tuple[int, int, int] = (60, 60, 60)


_QMARK_CACHE: dict[int, np.ndarray] = {}


def question_mark_panel(size: int) -> ImageBuf:
    """A question-mark glyph cell drawn procedurally (no font dependency)."""
    coverage = _QMARK_CACHE.get(size)
    if coverage is None:
        ss = 2
        n = size * ss
        axis = (np.arange(n, dtype=np.float64) + 0.5) / ss
        X, Y = np.meshgrid(axis, axis)
        mask = np.zeros((n, n), dtype=bool)
        cx, cy = size * 0.5, size * 0.34
        radius = size * 0.16
        stroke = max(2.0, size * 0.045)
        # open arc of the hook, from the left shoulder around to the chin
        angles = np.linspace(math.radians(150), math.radians(438), 28)
        pts = [(cx + radius * math.cos(a), cy + radius * math.sin(a)) for a in angles]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            mask |= _segment_mask(X, Y, x0, y0, x1, y1, stroke / 2)
        hook_end = pts[-1]
        mask |= _segment_mask(X, Y, hook_end[0], hook_end[1], cx, size * 0.62, stroke / 2)
        dot = (X - cx) ** 2 + (Y - size * 0.76) ** 2 <= (stroke * 0.9) ** 2
        mask |= dot
        coverage = mask.astype(np.float64).reshape(size, ss, size, ss).mean(axis=(1, 3))
        _QMARK_CACHE[size] = coverage
    px = (255.0 * (1.0 - coverage)).round().astype(np.uint8)
    return ImageBuf(np.repeat(px[:, :, None], 3, axis=2))


def _label_tile(label: str, width: int, height: int, cfg: SheetConfig) -> np.ndarray:
    img = Image.new("RGB", (width, height), cfg.background)
    draw = ImageDraw.Draw(img)
    try:
        font = ImageFont.load_default(size=max(10, int(height * 0.7)))
    except TypeError:  # older Pillow: fixed-size bitmap font
        font = ImageFont.load_default()
    bbox = draw.textbbox((0, 0), label, font=font)
    tw, th = bbox[2] - bbox[0], bbox[3] - bbox[1]
    draw.text(((width - tw) / 2 - bbox[0], (height - th) / 2 - bbox[1]), label,
              fill=(20, 20, 20), font=font)
    return np.asarray(img, dtype=np.uint8)


def _paste(canvas: np.ndarray, tile: np.ndarray, top: int, left: int) -> None:
    canvas[top:top + tile.shape[0], left:left + tile.shape[1]] = tile


def _bordered(panel: np.ndarray, cfg: SheetConfig) -> np.ndarray:
    b = cfg.border
    if b <= 0:
        return panel
    out = np.empty((panel.shape[0] + 2 * b, panel.shape[1] + 2 * b, 3), dtype=np.uint8)
    out[:] = cfg.border_color
    out[b:-b, b:-b] = panel
    return out


def compose_sheet(puzzle: Puzzle, panels: PanelStore, cfg: SheetConfig | None = None) -> ImageBuf:
    """Render the puzzle sheet: stem strip on top, labeled options below.

    Option labels live in the margin band under each option cell, never
    inside panel content. Ten options lay out as a 5x2 grid.
    """
    cfg = cfg or SheetConfig()
    stem_bufs = [panels.get(r) for r in puzzle.stem]
    option_bufs = [(label, panels.get(ref)) for label, ref in puzzle.options]
    size = stem_bufs[0].width
    cell = size + 2 * cfg.border
    g = cfg.gutter

    top_cells = [b.pixels for b in stem_bufs] + [question_mark_panel(size).pixels]
    per_row = 5 if len(option_bufs) == 10 else len(option_bufs)
    rows = [option_bufs[i:i + per_row] for i in range(0, len(option_bufs), per_row)]

    top_w = 5 * cell + 6 * g
    opt_w = per_row * cell + (per_row + 1) * g
    width = max(top_w, opt_w)
    row_h = cell + cfg.label_band
    height = g + cell + g + len(rows) * (row_h + g)

    canvas = np.empty((height, width, 3), dtype=np.uint8)
    canvas[:] = cfg.background

    x0 = (width - top_w) // 2 + g
    for i, tile in enumerate(top_cells):
        _paste(canvas, _bordered(tile, cfg), g, x0 + i * (cell + g))

    y = g + cell + g
    for row in rows:
        rw = len(row) * cell + (len(row) + 1) * g
        x0 = (width - rw) // 2 + g
        for i, (label, buf) in enumerate(row):
            left = x0 + i * (cell + g)
            _paste(canvas, _bordered(buf.pixels, cfg), y, left)
            _paste(canvas, _label_tile(label, cell, cfg.label_band, cfg), y + cell, left)
        y += row_h + g
    return ImageBuf(canvas)


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass
class AssemblyResult:
    puzzles: list[Puzzle] = field(default_factory=list)
    expanded_skips: list[tuple[str, str]] = field(default_factory=list)  # (group id, reason)

    def by_variant(self) -> dict[str, int]:
        counts = {v.value: 0 for v in Variant}
        for p in self.puzzles:
            counts[p.variant.value] += 1
        return counts


def _fallback_donors(
    group: GroupInfo,
    pool: dict[str, Rule],
    groups: list[GroupInfo],
    rng_seed: int,
) -> list[GroupInfo]:
    """Donors of the same rule class and style when lineage has none."""
    rule = pool.get(group.rule_id)
    if rule is None:
        raise InsufficientRelatives(f"rule {group.rule_id} unknown")
    candidates = sorted(
        (
            g
            for g in groups
            if g.accepted
            and g.group_id != group.group_id
            and g.style == group.style
            and g.rule_id in pool
            and pool[g.rule_id].rule_class == rule.rule_class
        ),
        key=lambda g: g.group_id,
    )
    if len(candidates) < 2:
        raise InsufficientRelatives(
            f"group {group.group_id} has no 2 same-class donors in style {group.style.value}"
        )
    rng = _rng_for(rng_seed, group.group_id, "fallback")
    picks = rng.choice(len(candidates), size=2, replace=False)
    return [candidates[int(i)] for i in picks]


def assemble_all(
    groups: list[GroupInfo],
    pool: dict[str, Rule],
    rng_seed: int,
    duplicate_hamming: int = 10,
) -> AssemblyResult:
    """1 default + 4 shuffled + 1 expanded puzzle per accepted group.

    Expanded assembly falls back to same-class same-style donors when the
    lineage offers none; groups where even that fails (or where donors
    cannot clear the duplicate threshold) record a skip instead of failing
    the batch.
    """
    result = AssemblyResult()
    accepted = sorted((g for g in groups if g.accepted), key=lambda g: g.group_id)
    for group in accepted:
        result.puzzles.append(assemble_default(group, rng_seed))
        result.puzzles.extend(assemble_shuffled(group, rng_seed))
        try:
            try:
                donors = find_related_groups(group, pool, accepted)
            except InsufficientRelatives:
                donors = _fallback_donors(group, pool, accepted, rng_seed)
            result.puzzles.append(
                assemble_expanded(group, donors, rng_seed, duplicate_hamming)
            )
        except (InsufficientRelatives, DuplicateOption) as exc:
            result.expanded_skips.append((group.group_id, str(exc)))
    return result
