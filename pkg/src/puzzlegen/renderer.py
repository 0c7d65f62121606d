"""Deterministic rule-program renderer: 5 correct + 3 violating panels.

A rule program's progressions define an attribute state per sequence step;
panels 1-5 realize steps 0-4 and each distractor perturbs the extrapolated
step-5 state in exactly one targeted way, so it is plausible (almost the
next panel) but rule-violating. Distractor search guarantees the perturbed
state differs from the true next state and from every other panel of the
group, which keeps the group clean under duplicate QC.

Everything is a pure function of (program, style, rng_seed). Entities sit
on a seeded jittered grid; by default each panel draws its own jitter and
cell assignment (like independently regenerated scenes), while the
"shared" placement mode freezes one frame across all panels for
measurements that difference panels against each other.

Three styles render the same logical content: soft-edged grayscale
(mono_vector), hard-edged grayscale (mono_raster), and a seeded color
palette (free_palette). No style ever draws text inside a panel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .dsl import (
    Arithmetic,
    Attribute,
    EntityKind,
    Fill,
    Layout,
    DomainError,
    RuleProgram,
    Shift,
    SizeClass,
    ViolationKind,
    ViolationRecipe,
    schedule_value,
)
from .imaging import ImageBuf

PANEL_COUNT = 5
DISTRACTOR_COUNT = 3
MAX_ENTITIES = 64
MAX_LINE_GROUPS = 8  # stacked bundles stop resolving past this


class StyleId(str, Enum):
    MONOCHROME_VECTOR = "mono_vector"
    MONOCHROME_RASTER = "mono_raster"
    FREE_PALETTE = "free_palette"


ALL_STYLES = (StyleId.MONOCHROME_VECTOR, StyleId.MONOCHROME_RASTER, StyleId.FREE_PALETTE)


class RenderError(RuntimeError):
    pass


@dataclass
class RenderConfig:
    panel_size: int = 256
    margin_fraction: float = 0.08  # keep at least this border clear
    supersample: int = 2  # antialiasing factor for the soft-edged styles
    # "jittered" (default): every panel draws its own placement jitter, the
    # way independently regenerated scenes would, which keeps panels whose
    # progressive attributes repeat or nearly repeat apart in hash space.
    # "shared": all 8 panels share one frame (single entities sit exactly
    # centered), for measurements that difference panels against each other.
    placement: str = "jittered"


@dataclass(frozen=True)
class PanelState:
    """Resolved attribute values for one panel."""

    count: int = 1
    rotation_deg: float = 0.0
    position: tuple[float, float] = (0.5, 0.5)
    solid: bool = True
    line_groups: int = 1

    def key(self, symmetry_deg: float) -> tuple:
        """Equality key; rotation is reduced modulo the entity's symmetry."""
        if symmetry_deg <= 0:
            rot = 0.0
        else:
            rot = round((self.rotation_deg % symmetry_deg) / 0.25) * 0.25 % symmetry_deg
        return (
            self.count,
            rot,
            round(self.position[0], 3),
            round(self.position[1], 3),
            self.solid,
            self.line_groups,
        )


@dataclass
class ImageGroup:
    group_id: str
    rule_id: str
    style: StyleId
    correct: tuple[ImageBuf, ...]
    incorrect: tuple[ImageBuf, ...]
    qc: Optional[object] = None  # QcVerdict, attached by the QC stage
    states: dict = field(default_factory=dict)  # provenance: panel attribute values

    def __post_init__(self):
        if len(self.correct) != PANEL_COUNT or len(self.incorrect) != DISTRACTOR_COUNT:
            raise ValueError("an image group is exactly 5 correct + 3 incorrect panels")
        dims = {(p.width, p.height) for p in self.correct + self.incorrect}
        if len(dims) != 1:
            raise ValueError("all panels in a group must share dimensions")
        w, h = dims.pop()
        if w != h:
            raise ValueError("panels must be square")

    @property
    def panels(self) -> list[ImageBuf]:
        return list(self.correct) + list(self.incorrect)


# Rotational symmetry of each entity in degrees; 0 means rotation never
# changes the raster (circles), 360 means fully asymmetric.
_SYMMETRY = {
    EntityKind.CIRCLE: 0.0,
    EntityKind.SQUARE: 90.0,
    EntityKind.TRIANGLE: 120.0,
    EntityKind.LINE_GROUP: 180.0,
    EntityKind.STICK_FIGURE: 360.0,
    EntityKind.COMPOSITE: 90.0,
}

_SIZE_FACTOR = {SizeClass.SMALL: 0.45, SizeClass.MEDIUM: 0.60, SizeClass.LARGE: 0.75}


# ---------------------------------------------------------------------------
# State sequences


def _state_at(program: RuleProgram, index: int) -> PanelState:
    count = 1
    rotation = 0.0
    position = (0.5, 0.5)
    groups = 1
    solid = program.entity.fill is Fill.SOLID
    for p in program.progressions:
        value = schedule_value(p, index)
        if p.attribute is Attribute.COUNT:
            if value < 0 or abs(value - round(value)) > 1e-9:
                raise DomainError(f"count value {value} invalid at step {index}")
            count = int(round(value))
        elif p.attribute is Attribute.ROTATION_DEG:
            rotation = float(value)
        elif p.attribute is Attribute.POSITION:
            position = (float(value[0]), float(value[1]))
        elif p.attribute is Attribute.SHADING:
            solid = value >= 0.5
        elif p.attribute is Attribute.PARALLEL_LINE_GROUPS:
            if value < 1 or abs(value - round(value)) > 1e-9:
                raise DomainError(f"line-group value {value} invalid at step {index}")
            groups = int(round(value))
    return PanelState(count, rotation, position, solid, groups)


def correct_states(program: RuleProgram) -> list[PanelState]:
    try:
        return [_state_at(program, i) for i in range(PANEL_COUNT)]
    except DomainError as exc:
        raise RenderError(str(exc)) from exc


def expected_next_state(program: RuleProgram) -> PanelState:
    try:
        return _state_at(program, PANEL_COUNT)
    except DomainError as exc:
        raise RenderError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Distractor synthesis


def _replace(state: PanelState, **kw) -> PanelState:
    values = dict(
        count=state.count,
        rotation_deg=state.rotation_deg,
        position=state.position,
        solid=state.solid,
        line_groups=state.line_groups,
    )
    values.update(kw)
    return PanelState(**values)


def _count_candidates(base: PanelState, attr: str, lo: int, hi: int = MAX_ENTITIES) -> list[PanelState]:
    current = getattr(base, attr)
    out = []
    for delta in (1, -1, 2, -2, 3, -3, 4, 5, 6):
        v = current + delta
        if lo <= v <= hi:
            out.append(_replace(base, **{attr: v}))
    return out


def _rotation_candidates(base: PanelState, program: RuleProgram) -> list[PanelState]:
    deltas = []
    p = program.progression_for(Attribute.ROTATION_DEG)
    if p is not None and isinstance(p.schedule, Arithmetic) and p.schedule.step != 0:
        half = p.schedule.step / 2.0
        deltas.extend([-half, half, -p.schedule.step * 1.5, p.schedule.step * 2.5])
    deltas.extend([37.0, 79.0, 143.0, 191.0, 233.0, 283.0, 311.0])
    return [_replace(base, rotation_deg=base.rotation_deg + d) for d in deltas]


# Positions whose entity block stays renderable for any margin <= 0.09.
_POSITION_LO, _POSITION_HI = 0.23, 0.77


def _position_ok(state: PanelState) -> bool:
    x, y = state.position
    return _POSITION_LO <= x <= _POSITION_HI and _POSITION_LO <= y <= _POSITION_HI


def _position_candidates(base: PanelState, program: RuleProgram) -> list[PanelState]:
    p = program.progression_for(Attribute.POSITION)
    steps: list[tuple[float, float]] = []
    if p is not None and isinstance(p.schedule, Shift):
        dx, dy = p.schedule.dx, p.schedule.dy
        steps.extend([(-2 * dx, -2 * dy), (-dy, dx), (dy, -dx), (dx * 1.5, dy * 1.5), (-3 * dx, -3 * dy)])
    steps.extend([(0.12, 0.0), (-0.12, 0.0), (0.0, 0.12), (0.0, -0.12), (0.1, 0.1)])
    out = []
    for dx, dy in steps:
        x = min(max(base.position[0] + dx, _POSITION_LO), _POSITION_HI)
        y = min(max(base.position[1] + dy, _POSITION_LO), _POSITION_HI)
        out.append(_replace(base, position=(x, y)))
    return out


def _order_swap_candidates(program: RuleProgram, base: PanelState) -> list[PanelState]:
    """States from further along the sequence: they follow the pattern but
    are the wrong next panel."""
    out = []
    for index in (PANEL_COUNT + 1, PANEL_COUNT + 2, PANEL_COUNT + 3):
        try:
            out.append(_state_at(program, index))
        except DomainError:
            continue
    # fallback: generic nudges on the first progression's attribute
    first = program.progressions[0].attribute
    if first in (Attribute.COUNT,):
        out.extend(_count_candidates(base, "count", 0))
    elif first is Attribute.PARALLEL_LINE_GROUPS:
        out.extend(_count_candidates(base, "line_groups", 1, MAX_LINE_GROUPS))
    elif first is Attribute.ROTATION_DEG:
        out.extend(_rotation_candidates(base, program))
    elif first is Attribute.POSITION:
        out.extend(_position_candidates(base, program))
    else:
        out.append(_replace(base, solid=not base.solid))
    return out


def violated_states(program: RuleProgram) -> list[PanelState]:
    """One perturbed state per recipe (first 3), each distinct from every
    correct panel, from the true next state, and from one another.

    When the program governs position, distinctness additionally requires a
    fresh position: recipes that merely inherit (and clamp) the
    extrapolated position would otherwise pile visually-similar panels on
    one spot.
    """
    corrects = correct_states(program)
    expected = expected_next_state(program)
    symmetry = _SYMMETRY[program.entity.kind]
    used = {s.key(symmetry) for s in corrects}
    used.add(expected.key(symmetry))
    governs_position = program.progression_for(Attribute.POSITION) is not None
    # one distractor may claim the expected next spot; corrects are taken
    used_positions = {_pos_key(s) for s in corrects} if governs_position else set()
    out: list[PanelState] = []
    for recipe in program.violations[:DISTRACTOR_COUNT]:
        candidates = [_clamp_position(c) for c in _candidates_for(recipe, program, expected)]
        state = None
        for c in candidates:
            if c.key(symmetry) in used:
                continue
            if governs_position and _pos_key(c) in used_positions:
                continue
            state = c
            break
        if state is None:
            raise RenderError(f"violation recipe {recipe.kind.value} cannot produce a distinct panel")
        used.add(state.key(symmetry))
        if governs_position:
            used_positions.add(_pos_key(state))
        out.append(state)
    return out


def _pos_key(state: PanelState) -> tuple[float, float]:
    return (round(state.position[0], 3), round(state.position[1], 3))


def _clamp_position(state: PanelState) -> PanelState:
    """Pull a candidate whose block left the renderable band back inside.

    Non-position recipes inherit the extrapolated position, which can sit
    outside the drawable range when the schedule walks off the panel;
    relocating them is fine since position is not what they violate.
    """
    if _position_ok(state):
        return state
    x = min(max(state.position[0], _POSITION_LO), _POSITION_HI)
    y = min(max(state.position[1], _POSITION_LO), _POSITION_HI)
    return _replace(state, position=(x, y))


def _candidates_for(
    recipe: ViolationRecipe, program: RuleProgram, expected: PanelState
) -> list[PanelState]:
    kind = recipe.kind
    if kind is ViolationKind.COUNT_OFF:
        return _count_candidates(expected, "count", 0)
    if kind is ViolationKind.GROUPS_OFF:
        return _count_candidates(expected, "line_groups", 1, MAX_LINE_GROUPS)
    if kind is ViolationKind.ROTATION_OFF:
        return _rotation_candidates(expected, program)
    if kind is ViolationKind.SHIFT_OFF:
        return _position_candidates(expected, program)
    if kind is ViolationKind.SHADING_FLIP or kind is ViolationKind.WRONG_FILL:
        flipped = _replace(expected, solid=not expected.solid)
        # compound fallbacks keep the flip while varying a second axis
        out = [flipped] + _count_candidates(flipped, "count", 0)
        out += [
            _replace(c, solid=flipped.solid)
            for c in _position_candidates(flipped, program)
        ]
        return out
    if kind is ViolationKind.ORDER_SWAP:
        return _order_swap_candidates(program, expected)
    raise RenderError(f"unhandled violation kind {kind}")


def _first_fresh(candidates, used, symmetry) -> Optional[PanelState]:
    for c in candidates:
        if c.key(symmetry) not in used:
            return c
    return None


# ---------------------------------------------------------------------------
# Geometry


def _segment_mask(X, Y, x0, y0, x1, y1, half_width):
    """Capsule: points within half_width of the segment (x0,y0)-(x1,y1)."""
    vx, vy = x1 - x0, y1 - y0
    seg2 = vx * vx + vy * vy
    if seg2 == 0:
        return (X - x0) ** 2 + (Y - y0) ** 2 <= half_width * half_width
    t = ((X - x0) * vx + (Y - y0) * vy) / seg2
    t = np.clip(t, 0.0, 1.0)
    dx = X - (x0 + t * vx)
    dy = Y - (y0 + t * vy)
    return dx * dx + dy * dy <= half_width * half_width


def _local(X, Y, cx, cy, theta_deg):
    """World to entity-local coordinates: rotates by -theta so the drawn
    shape appears rotated +theta (clockwise on screen, y pointing down)."""
    t = math.radians(theta_deg)
    ct, st = math.cos(t), math.sin(t)
    dx, dy = X - cx, Y - cy
    return dx * ct + dy * st, -dx * st + dy * ct


def _triangle_inside(u, v, r):
    # equilateral, vertex up, circumradius r, local frame (v grows downward)
    pts = [(r * math.cos(a), r * math.sin(a)) for a in (math.radians(-90), math.radians(30), math.radians(150))]
    inside = np.ones_like(u, dtype=bool)
    for (x0, y0), (x1, y1) in zip(pts, pts[1:] + pts[:1]):
        cross = (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0)
        inside &= cross >= 0
    return inside


def _entity_mask(X, Y, kind: EntityKind, cx, cy, r, rotation, solid, groups, stroke, ring_phase=0.0):
    u, v = _local(X, Y, cx, cy, rotation)
    if kind is EntityKind.CIRCLE:
        d2 = u * u + v * v
        if solid:
            return d2 <= r * r
        return ((r - stroke) ** 2 <= d2) & (d2 <= r * r)
    if kind is EntityKind.SQUARE:
        a = r * 0.88
        m = np.maximum(np.abs(u), np.abs(v))
        if solid:
            return m <= a
        return (a - stroke <= m) & (m <= a)
    if kind is EntityKind.TRIANGLE:
        if solid:
            return _triangle_inside(u, v, r)
        inner = max(r - 2.6 * stroke, r * 0.2)
        return _triangle_inside(u, v, r) & ~_triangle_inside(u, v, inner)
    if kind is EntityKind.LINE_GROUP:
        # one group: a single long parallel pair; several groups: a stack of
        # horizontal pairs, one slot per group, so components never merge
        mask = np.zeros_like(u, dtype=bool)
        phase = math.radians(ring_phase)
        cp, sp = math.cos(phase), math.sin(phase)
        uu = u * cp + v * sp
        vv = -u * sp + v * cp
        if groups == 1:
            length = r * 1.7
            wide = max(stroke, r * 0.16)
            sep = max(r * 0.24, 2.0 * wide)
            for sgn in (-1, 1):
                mask |= _segment_mask(uu, vv, -length / 2, sgn * sep / 2, length / 2, sgn * sep / 2, wide / 2)
            return mask
        span = r * 0.85
        slot = 2.0 * span / groups
        wide = max(1.5, min(stroke, slot * 0.18))
        sep = max(slot * 0.42, 2.0 * wide)
        length = r * 1.5
        for g in range(groups):
            cy = -span + slot * (g + 0.5)
            for sgn in (-1, 1):
                mask |= _segment_mask(
                    uu, vv, -length / 2, cy + sgn * sep / 2, length / 2, cy + sgn * sep / 2, wide / 2
                )
        return mask
    if kind is EntityKind.STICK_FIGURE:
        head_r = r * 0.26
        head_cy = -r * 0.58
        d2 = u * u + (v - head_cy) ** 2
        if solid:
            head = d2 <= head_r * head_r
            limb = stroke / 2
        else:
            # open head and thin limbs so the hollow variant reads clearly
            head = ((head_r - stroke * 0.6) ** 2 <= d2) & (d2 <= head_r * head_r)
            limb = stroke * 0.3
        body = _segment_mask(u, v, 0, head_cy + head_r * 0.9, 0, r * 0.35, limb)
        arms = _segment_mask(u, v, -r * 0.45, -r * 0.02, r * 0.45, -r * 0.02, limb)
        leg1 = _segment_mask(u, v, 0, r * 0.35, -r * 0.4, r * 0.95, limb)
        leg2 = _segment_mask(u, v, 0, r * 0.35, r * 0.4, r * 0.95, limb)
        return head | body | arms | leg1 | leg2
    if kind is EntityKind.COMPOSITE:
        a = r * 0.88
        m = np.maximum(np.abs(u), np.abs(v))
        d2 = u * u + v * v
        if solid:
            # filled square with a circular hole
            return (m <= a) & ~(d2 <= (a * 0.55) ** 2)
        ring = (a - stroke <= m) & (m <= a)
        circle = ((a - stroke) ** 2 <= d2) & (d2 <= a * a)
        return ring | circle
    raise RenderError(f"unhandled entity kind {kind}")


@dataclass
class _Placement:
    cell_centers: list[tuple[float, float]]  # unit offsets from block center, in [-1, 1]
    side: int
    cell_half: float  # in block-half units
    block_half_fraction: float  # block half-size as a fraction of the panel


def _build_placement(program: RuleProgram, max_count: int, cfg: RenderConfig) -> _Placement:
    if max_count > MAX_ENTITIES:
        raise RenderError(f"count {max_count} overflows the drawable area (max {MAX_ENTITIES})")
    side = math.ceil(math.sqrt(max_count)) if max_count > 0 else 1
    if program.layout is Layout.GRID3X3 and max_count >= 3:
        side = max(side, 3)
    has_position = program.progression_for(Attribute.POSITION) is not None
    content_half = 0.5 - cfg.margin_fraction
    block_half = content_half * (0.45 if has_position else 1.0)
    centers = []
    step = 2.0 / side
    for row in range(side):
        for col in range(side):
            centers.append((-1.0 + step * (col + 0.5), -1.0 + step * (row + 0.5)))
    return _Placement(cell_centers=centers, side=side, cell_half=step / 2, block_half_fraction=block_half)


@dataclass
class _Composition:
    """Per-panel placement variation (which cells, how nudged)."""

    jitter: np.ndarray  # (n_cells, 2) offsets in block-half units
    cell_order: np.ndarray  # permutation: entity i occupies cell_order[i]
    ring_phase: float  # extra orientation for line-group rings, degrees


def _panel_composition(
    rng_seed: int, tag: int, n_cells: int, amplitude: float, reshuffle: bool
) -> _Composition:
    """Composition for one panel; independent panels (distinct tags) draw
    independent layouts, the way regenerated scenes would.

    Jitter amplitude is sized so entities can never touch a neighbor or
    leave the block; reshuffling assigns entities to different cells per
    panel so repeated attribute values still yield distinct compositions.
    """
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed & 0x7FFFFFFF, 17, tag]))
    jitter = rng.uniform(-amplitude, amplitude, size=(n_cells, 2)) if amplitude > 0 else np.zeros((n_cells, 2))
    if reshuffle:
        order = rng.permutation(n_cells)
        phase = float(rng.uniform(0.0, 360.0))
    else:
        order = np.arange(n_cells)
        phase = 0.0
    return _Composition(jitter=jitter, cell_order=order, ring_phase=phase)


_PALE_BACKGROUNDS = [(246, 241, 231), (235, 242, 248), (241, 236, 246), (236, 245, 237), (248, 240, 240)]
_SATURATED_INKS = [(172, 44, 44), (34, 92, 166), (24, 118, 64), (150, 84, 18), (94, 48, 142), (12, 110, 116)]


def _style_palette(style: StyleId, rng: np.random.Generator) -> tuple[tuple[int, int, int], tuple[int, int, int]]:
    if style is StyleId.FREE_PALETTE:
        bg = _PALE_BACKGROUNDS[int(rng.integers(len(_PALE_BACKGROUNDS)))]
        fg = _SATURATED_INKS[int(rng.integers(len(_SATURATED_INKS)))]
        return bg, fg
    return (255, 255, 255), (0, 0, 0)


def _render_panel(
    state: PanelState,
    program: RuleProgram,
    style: StyleId,
    placement: _Placement,
    comp: _Composition,
    cfg: RenderConfig,
    palette: tuple[tuple[int, int, int], tuple[int, int, int]],
) -> ImageBuf:
    size = cfg.panel_size
    ss = 1 if style is StyleId.MONOCHROME_RASTER else cfg.supersample
    n = size * ss
    axis = (np.arange(n, dtype=np.float64) + 0.5) / ss
    X, Y = np.meshgrid(axis, axis)

    block_half = placement.block_half_fraction * size
    bx, by = state.position[0] * size, state.position[1] * size
    if not (0.02 * size <= bx - block_half and bx + block_half <= 0.98 * size
            and 0.02 * size <= by - block_half and by + block_half <= 0.98 * size):
        raise RenderError(f"entity block at {state.position} exceeds panel bounds")

    if state.line_groups > MAX_LINE_GROUPS:
        raise RenderError(f"{state.line_groups} line groups exceed the drawable stack")
    cell_half_px = placement.cell_half * block_half
    radius = cell_half_px * _SIZE_FACTOR[program.entity.size] * 0.95
    if radius < 2.0:
        raise RenderError("entities too small to draw at this panel size")
    stroke = max(1.6, radius * 0.18)

    mask = np.zeros((n, n), dtype=bool)
    for i in range(state.count):
        cell = int(comp.cell_order[i])
        ox, oy = placement.cell_centers[cell]
        cx = bx + (ox + comp.jitter[cell, 0]) * block_half
        cy = by + (oy + comp.jitter[cell, 1]) * block_half
        mask |= _entity_mask(
            X, Y, program.entity.kind, cx, cy, radius,
            state.rotation_deg, state.solid, state.line_groups, stroke,
            ring_phase=comp.ring_phase,
        )

    if program.layout in (Layout.ANALOGY_PAIR, Layout.TWO_GROUP_SPLIT):
        mid = size / 2
        mask |= (np.abs(X - mid) <= 0.75) & (Y >= size * 0.06) & (Y <= size * 0.94)

    coverage = mask.astype(np.float64)
    if ss > 1:
        coverage = coverage.reshape(size, ss, size, ss).mean(axis=(1, 3))

    bg, fg = palette
    px = np.empty((size, size, 3), dtype=np.float64)
    for c in range(3):
        px[:, :, c] = bg[c] * (1.0 - coverage) + fg[c] * coverage
    return ImageBuf(np.round(px).clip(0, 255).astype(np.uint8))


def _state_record(state: PanelState) -> dict:
    return {
        "count": state.count,
        "rotation_deg": state.rotation_deg,
        "position": list(state.position),
        "solid": state.solid,
        "line_groups": state.line_groups,
    }


def render_group(
    program: RuleProgram,
    style: StyleId,
    rng_seed: int,
    *,
    rule_id: str = "anon",
    config: RenderConfig | None = None,
) -> ImageGroup:
    """Render one (rule, style) image group, deterministically.

    Correct panels realize the progression over 5 steps; distractor k
    realizes violation recipe k applied to the extrapolated next state.
    """
    cfg = config or RenderConfig()
    corrects = correct_states(program)
    if max(s.count for s in corrects) > MAX_ENTITIES:
        raise RenderError(
            f"count {max(s.count for s in corrects)} overflows the drawable area (max {MAX_ENTITIES})"
        )
    wrongs = violated_states(program)
    max_count = max(s.count for s in corrects + wrongs)

    placement = _build_placement(program, max_count, cfg)
    style_rng = np.random.default_rng(
        np.random.SeedSequence([rng_seed & 0x7FFFFFFF, 13, list(StyleId).index(style)])
    )
    palette = _style_palette(style, style_rng)

    if cfg.placement not in ("jittered", "shared"):
        raise RenderError(f"unknown placement mode {cfg.placement!r}")
    f = _SIZE_FACTOR[program.entity.size] * 0.95
    amplitude = placement.cell_half * (1.0 - f) * 0.9
    if program.progression_for(Attribute.POSITION) is not None:
        # position steps carry the panel-to-panel variation; strong jitter
        # on top can cancel a step and hash two panels together
        amplitude *= 0.2
    n_cells = len(placement.cell_centers)

    if cfg.placement == "shared":
        shared_amp = 0.0 if placement.side == 1 else amplitude
        shared = _panel_composition(rng_seed, 100, n_cells, shared_amp, reshuffle=False)
        correct_comps = [shared] * PANEL_COUNT
        wrong_comps = [shared] * DISTRACTOR_COUNT
    else:
        correct_comps = [
            _panel_composition(rng_seed, i, n_cells, amplitude, reshuffle=True)
            for i in range(PANEL_COUNT)
        ]
        wrong_comps = [
            _panel_composition(rng_seed, 10 + k, n_cells, amplitude, reshuffle=True)
            for k in range(DISTRACTOR_COUNT)
        ]

    correct_bufs = tuple(
        _render_panel(s, program, style, placement, c, cfg, palette)
        for s, c in zip(corrects, correct_comps)
    )
    wrong_bufs = tuple(
        _render_panel(s, program, style, placement, c, cfg, palette)
        for s, c in zip(wrongs, wrong_comps)
    )
    return ImageGroup(
        group_id=f"{rule_id}-{style.value}",
        rule_id=rule_id,
        style=style,
        correct=correct_bufs,
        incorrect=wrong_bufs,
        states={
            "correct": [_state_record(s) for s in corrects],
            "incorrect": [_state_record(s) for s in wrongs],
            "expected_next": _state_record(expected_next_state(program)),
        },
    )


@dataclass
class RenderBatch:
    groups: list[ImageGroup] = field(default_factory=list)
    failures: list[tuple[StyleId, str]] = field(default_factory=list)


def render_all_styles(
    program: RuleProgram,
    rng_seed: int,
    *,
    rule_id: str = "anon",
    config: RenderConfig | None = None,
) -> RenderBatch:
    """One group per style; a failing style is recorded, not fatal."""
    batch = RenderBatch()
    for style in ALL_STYLES:
        try:
            batch.groups.append(
                render_group(program, style, rng_seed, rule_id=rule_id, config=config)
            )
        except RenderError as exc:
            batch.failures.append((style, str(exc)))
    return batch


def save_group_panels(group: ImageGroup, root) -> list[str]:
    """Persist panels as ``{group_id}/c{0..4}.png`` and ``{group_id}/x{0..2}.png``."""
    from pathlib import Path

    base = Path(root) / group.group_id
    paths = []
    for i, buf in enumerate(group.correct):
        p = base / f"c{i}.png"
        buf.save_png(p)
        paths.append(str(p))
    for i, buf in enumerate(group.incorrect):
        p = base / f"x{i}.png"
        buf.save_png(p)
        paths.append(str(p))
    return paths
