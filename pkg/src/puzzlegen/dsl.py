"""Parser for rule-program text: the executable counterpart of a rule.

A rule program pins down, in a small closed grammar, what a rule's bullets
mean visually: scene layout, the entity drawn, how attributes progress over
the 5-panel sequence, and at least 3 recipes for rule-violating distractor
panels. Programs are plain text (``.vlrule`` files), one per file; the
grammar is documented in docs/rule-dsl.md.

Example::

    layout seq5;
    entity circle solid;
    progress count geometric x2 every 2 start 1;
    violate count_off;
    violate wrong_fill;
    violate order_swap;

The parser is a pure function. Nothing is ever executed; rendering
interprets the AST deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

MIN_VIOLATIONS = 3
PANELS_PER_GROUP = 5
MAX_DRAWABLE_COUNT = 64  # grid placement breaks down past this


class Layout(str, Enum):
    SEQUENCE5 = "seq5"
    GRID3X3 = "grid3x3"
    ANALOGY_PAIR = "analogy"
    TWO_GROUP_SPLIT = "twogroup"


class EntityKind(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    TRIANGLE = "triangle"
    LINE_GROUP = "line_group"
    STICK_FIGURE = "stick_figure"
    COMPOSITE = "composite"


class SizeClass(str, Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class Fill(str, Enum):
    SOLID = "solid"
    HOLLOW = "hollow"


class Attribute(str, Enum):
    COUNT = "count"
    ROTATION_DEG = "rotation_deg"
    POSITION = "position"
    SHADING = "shading"
    PARALLEL_LINE_GROUPS = "parallel_line_groups"


class ViolationKind(str, Enum):
    COUNT_OFF = "count_off"
    ROTATION_OFF = "rotation_off"
    SHIFT_OFF = "shift_off"
    SHADING_FLIP = "shading_flip"
    GROUPS_OFF = "groups_off"
    WRONG_FILL = "wrong_fill"
    ORDER_SWAP = "order_swap"


# Which progression attribute a violation kind perturbs. None means the
# recipe applies to any program: wrong_fill flips the entity fill spec and
# order_swap perturbs the first progression, whichever attribute that is.
VIOLATION_TARGETS: dict[ViolationKind, Optional[Attribute]] = {
    ViolationKind.COUNT_OFF: Attribute.COUNT,
    ViolationKind.ROTATION_OFF: Attribute.ROTATION_DEG,
    ViolationKind.SHIFT_OFF: Attribute.POSITION,
    ViolationKind.SHADING_FLIP: Attribute.SHADING,
    ViolationKind.GROUPS_OFF: Attribute.PARALLEL_LINE_GROUPS,
    ViolationKind.WRONG_FILL: None,
    ViolationKind.ORDER_SWAP: None,
}


class ParseError(ValueError):
    """Syntax error with a position inside the source text."""

    def __init__(self, line: int, column: int, expected: str):
        self.line = line
        self.column = column
        self.expected = expected
        super().__init__(f"{line}:{column}: expected {expected}")


class SemanticError(ValueError):
    """Grammatically valid program that breaks a program invariant."""


class DomainError(ValueError):
    """Progression produced a value outside its attribute's domain."""


@dataclass(frozen=True)
class Arithmetic:
    step: float


@dataclass(frozen=True)
class Geometric:
    factor: float
    every_k: int


@dataclass(frozen=True)
class Toggle:
    pass


@dataclass(frozen=True)
class Shift:
    dx: float
    dy: float


Schedule = Union[Arithmetic, Geometric, Toggle, Shift]

StartValue = Union[float, tuple[float, float]]


@dataclass(frozen=True)
class AttributeProgression:
    attribute: Attribute
    schedule: Schedule
    start: StartValue


@dataclass(frozen=True)
class ViolationRecipe:
    kind: ViolationKind


@dataclass(frozen=True)
class EntitySpec:
    kind: EntityKind
    size: SizeClass
    fill: Fill


@dataclass(frozen=True)
class RuleProgram:
    layout: Layout
    entity: EntitySpec
    progressions: tuple[AttributeProgression, ...]
    violations: tuple[ViolationRecipe, ...]

    def progression_for(self, attribute: Attribute) -> Optional[AttributeProgression]:
        for p in self.progressions:
            if p.attribute is attribute:
                return p
        return None


# ---------------------------------------------------------------------------
# Tokenizer


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":  # line comment
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == ";":
            tokens.append(_Token(";", line, col))
            i += 1
            col += 1
            continue
        j = i
        while j < n and text[j] not in " \t\r\n;#":
            j += 1
        tokens.append(_Token(text[i:j], line, col))
        col += j - i
        i = j
    return tokens


class _TokenStream:
    def __init__(self, tokens: list[_Token], text: str):
        self.tokens = tokens
        self.pos = 0
        # End-of-input position for error reporting.
        if tokens:
            last = tokens[-1]
            self.end = (last.line, last.column + len(last.text))
        else:
            self.end = (1, 1)

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expected: str) -> _Token:
        tok = self.peek()
        if tok is None:
            raise ParseError(self.end[0], self.end[1], expected)
        self.pos += 1
        return tok

    def expect(self, literal: str) -> _Token:
        tok = self.next(repr(literal))
        if tok.text != literal:
            raise ParseError(tok.line, tok.column, f"{literal!r}, got {tok.text!r}")
        return tok


def _parse_number(tok: _Token, what: str) -> float:
    try:
        return float(tok.text)
    except ValueError:
        raise ParseError(tok.line, tok.column, f"a number for {what}, got {tok.text!r}") from None


def _parse_int(tok: _Token, what: str) -> int:
    v = _parse_number(tok, what)
    if v != int(v):
        raise ParseError(tok.line, tok.column, f"an integer for {what}, got {tok.text!r}")
    return int(v)


def _parse_enum(tok: _Token, enum_cls, what: str):
    try:
        return enum_cls(tok.text)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        raise ParseError(tok.line, tok.column, f"{what} ({options}), got {tok.text!r}") from None


# ---------------------------------------------------------------------------
# Parser

_SCHEDULES_BY_ATTRIBUTE = {
    Attribute.COUNT: (Arithmetic, Geometric),
    Attribute.PARALLEL_LINE_GROUPS: (Arithmetic, Geometric),
    Attribute.ROTATION_DEG: (Arithmetic,),
    Attribute.POSITION: (Shift,),
    Attribute.SHADING: (Toggle,),
}


def parse_rule_program(text: str) -> RuleProgram:
    """Parse program text into an AST satisfying all program invariants.

    Raises ParseError at the first syntax violation and SemanticError when
    a grammatically valid program breaks an invariant (no progressions,
    fewer than 3 violation recipes, inapplicable recipe, bad value domain).
    """
    stream = _TokenStream(_tokenize(text), text)
    layout: Optional[Layout] = None
    entity: Optional[EntitySpec] = None
    progressions: list[AttributeProgression] = []
    violations: list[ViolationRecipe] = []

    if stream.peek() is None:
        raise ParseError(1, 1, "a statement (layout/entity/progress/violate)")

    while stream.peek() is not None:
        head = stream.next("a statement keyword")
        if head.text == "layout":
            tok = stream.next("a layout name")
            if layout is not None:
                raise SemanticError("duplicate layout statement")
            layout = _parse_enum(tok, Layout, "a layout name")
        elif head.text == "entity":
            if entity is not None:
                raise SemanticError("duplicate entity statement")
            kind = _parse_enum(stream.next("an entity kind"), EntityKind, "an entity kind")
            tok = stream.next("a size class or fill")
            size = SizeClass.MEDIUM
            if tok.text in [s.value for s in SizeClass]:
                size = SizeClass(tok.text)
                tok = stream.next("a fill (solid/hollow)")
            fill = _parse_enum(tok, Fill, "a fill")
            entity = EntitySpec(kind, size, fill)
        elif head.text == "progress":
            progressions.append(_parse_progression(stream))
        elif head.text == "violate":
            tok = stream.next("a violation kind")
            violations.append(ViolationRecipe(_parse_enum(tok, ViolationKind, "a violation kind")))
        else:
            raise ParseError(
                head.line, head.column, f"layout/entity/progress/violate, got {head.text!r}"
            )
        stream.expect(";")

    program = RuleProgram(
        layout=layout if layout is not None else Layout.SEQUENCE5,
        entity=entity if entity is not None else EntitySpec(EntityKind.CIRCLE, SizeClass.MEDIUM, Fill.SOLID),
        progressions=tuple(progressions),
        violations=tuple(violations),
    )
    _check_semantics(program)
    return program


def _parse_progression(stream: _TokenStream) -> AttributeProgression:
    attr = _parse_enum(stream.next("an attribute"), Attribute, "an attribute")
    sched_tok = stream.next("a schedule (arithmetic/geometric/toggle/shift)")
    schedule: Schedule
    if sched_tok.text == "arithmetic":
        stream.expect("step")
        schedule = Arithmetic(step=_parse_number(stream.next("a step value"), "step"))
    elif sched_tok.text == "geometric":
        tok = stream.next("a factor like x2")
        if not tok.text.startswith("x"):
            raise ParseError(tok.line, tok.column, f"a factor like x2, got {tok.text!r}")
        factor = _parse_number(_Token(tok.text[1:], tok.line, tok.column + 1), "factor")
        stream.expect("every")
        every_k = _parse_int(stream.next("a panel interval"), "every")
        schedule = Geometric(factor=factor, every_k=every_k)
    elif sched_tok.text == "toggle":
        schedule = Toggle()
    elif sched_tok.text == "shift":
        stream.expect("dx")
        dx = _parse_number(stream.next("a dx value"), "dx")
        stream.expect("dy")
        dy = _parse_number(stream.next("a dy value"), "dy")
        schedule = Shift(dx=dx, dy=dy)
    else:
        raise ParseError(
            sched_tok.line, sched_tok.column,
            f"arithmetic/geometric/toggle/shift, got {sched_tok.text!r}",
        )

    stream.expect("start")
    start: StartValue
    if attr is Attribute.POSITION:
        x = _parse_number(stream.next("a start x"), "start x")
        y = _parse_number(stream.next("a start y"), "start y")
        start = (x, y)
    else:
        start = _parse_number(stream.next("a start value"), "start")
    return AttributeProgression(attribute=attr, schedule=schedule, start=start)


def _check_semantics(program: RuleProgram) -> None:
    if not program.progressions:
        raise SemanticError("program needs at least one progression")
    if len(program.violations) < MIN_VIOLATIONS:
        raise SemanticError(
            f"needs >= {MIN_VIOLATIONS} distractor recipes (got {len(program.violations)})"
        )
    seen_attrs = set()
    for p in program.progressions:
        if p.attribute in seen_attrs:
            raise SemanticError(f"duplicate progression for attribute {p.attribute.value}")
        seen_attrs.add(p.attribute)
        allowed = _SCHEDULES_BY_ATTRIBUTE[p.attribute]
        if not isinstance(p.schedule, allowed):
            names = "/".join(a.__name__.lower() for a in allowed)
            raise SemanticError(
                f"attribute {p.attribute.value} takes {names} schedules, "
                f"not {type(p.schedule).__name__.lower()}"
            )
        if isinstance(p.schedule, Geometric):
            if p.schedule.factor <= 0:
                raise SemanticError("geometric factor must be > 0")
            if p.schedule.every_k < 1:
                raise SemanticError("geometric every-interval must be >= 1")
        if isinstance(p.schedule, Toggle) and p.start not in (0.0, 1.0):
            raise SemanticError("toggle start must be 0 or 1")
        if p.attribute in (Attribute.COUNT, Attribute.PARALLEL_LINE_GROUPS):
            try:
                progression_values(p, PANELS_PER_GROUP)
            except DomainError as exc:
                raise SemanticError(str(exc)) from exc
    for recipe in program.violations:
        target = VIOLATION_TARGETS[recipe.kind]
        if target is not None and program.progression_for(target) is None:
            raise SemanticError(
                f"violation {recipe.kind.value} perturbs {target.value}, "
                "which no progression governs"
            )


# ---------------------------------------------------------------------------
# Evaluation


def schedule_value(p: AttributeProgression, index: int):
    """Attribute value at 0-based sequence position ``index``."""
    s = p.schedule
    if isinstance(s, Arithmetic):
        return p.start + index * s.step
    if isinstance(s, Geometric):
        return p.start * s.factor ** (index // s.every_k)
    if isinstance(s, Toggle):
        return p.start if index % 2 == 0 else 1.0 - p.start
    if isinstance(s, Shift):
        x, y = p.start
        return (x + index * s.dx, y + index * s.dy)
    raise TypeError(f"unknown schedule {s!r}")


def progression_values(p: AttributeProgression, n: int) -> list:
    """Evaluate the first ``n`` values of a progression.

    Count-like attributes must stay non-negative integers; DomainError
    otherwise.
    """
    if n < 1:
        raise ValueError("panel count must be >= 1")
    values = [schedule_value(p, i) for i in range(n)]
    if p.attribute in (Attribute.COUNT, Attribute.PARALLEL_LINE_GROUPS):
        out = []
        for i, v in enumerate(values):
            if v < 0:
                raise DomainError(
                    f"{p.attribute.value} goes negative at panel {i + 1} (value {v})"
                )
            if abs(v - round(v)) > 1e-9:
                raise DomainError(
                    f"{p.attribute.value} is not an integer at panel {i + 1} (value {v})"
                )
            out.append(int(round(v)))
        return out
    return values


def program_warnings(program: RuleProgram) -> list[str]:
    """Renderability concerns that are not hard errors."""
    warnings = []
    for p in program.progressions:
        if isinstance(p.schedule, Arithmetic) and p.schedule.step == 0:
            warnings.append(f"constant progression on {p.attribute.value} (step 0)")
        if isinstance(p.schedule, Geometric) and p.schedule.factor == 1:
            warnings.append(f"constant progression on {p.attribute.value} (factor 1)")
        if p.attribute in (Attribute.COUNT, Attribute.PARALLEL_LINE_GROUPS):
            # +1 step of headroom: distractor recipes extrapolate past panel 5
            try:
                values = [schedule_value(p, i) for i in range(PANELS_PER_GROUP + 1)]
            except DomainError:
                continue
            if max(values) > MAX_DRAWABLE_COUNT:
                warnings.append(
                    f"{p.attribute.value} reaches {max(values):.0f}, may overflow the panel"
                )
        if p.attribute is Attribute.POSITION:
            for i in range(PANELS_PER_GROUP + 1):
                x, y = schedule_value(p, i)
                if not (0.05 <= x <= 0.95 and 0.05 <= y <= 0.95):
                    warnings.append("position trajectory may leave panel bounds")
                    break
    kinds = [r.kind for r in program.violations]
    if len(set(kinds)) < len(kinds):
        warnings.append("duplicate violation recipe kinds")
    return warnings


# ---------------------------------------------------------------------------
# Printing (canonical text; parse -> print -> parse is identity on the AST)


def _fmt_num(v: float) -> str:
    if v == int(v):
        return str(int(v))
    return repr(v)


def format_rule_program(program: RuleProgram) -> str:
    lines = [f"layout {program.layout.value};"]
    e = program.entity
    lines.append(f"entity {e.kind.value} {e.size.value} {e.fill.value};")
    for p in program.progressions:
        s = p.schedule
        if isinstance(s, Arithmetic):
            sched = f"arithmetic step {_fmt_num(s.step)}"
        elif isinstance(s, Geometric):
            sched = f"geometric x{_fmt_num(s.factor)} every {s.every_k}"
        elif isinstance(s, Toggle):
            sched = "toggle"
        else:
            sched = f"shift dx {_fmt_num(s.dx)} dy {_fmt_num(s.dy)}"
        if p.attribute is Attribute.POSITION:
            start = f"{_fmt_num(p.start[0])} {_fmt_num(p.start[1])}"
        else:
            start = _fmt_num(p.start)
        lines.append(f"progress {p.attribute.value} {sched} start {start};")
    for r in program.violations:
        lines.append(f"violate {r.kind.value};")
    return "\n".join(lines) + "\n"
