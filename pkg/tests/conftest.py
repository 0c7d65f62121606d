from pathlib import Path

import numpy as np
import pytest

from puzzlegen.dsl import parse_rule_program
from puzzlegen.imaging import ImageBuf
from puzzlegen.renderer import RenderConfig, StyleId, render_group

REPO_ROOT = Path(__file__).resolve().parents[1]
FIXTURES = REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def seeds_path() -> Path:
    return FIXTURES / "seed_rules.jsonl"


@pytest.fixture(scope="session")
def small_render() -> RenderConfig:
    return RenderConfig(panel_size=96)


@pytest.fixture(scope="session")
def count_group(small_render):
    """A rendered group for the doubling-count program (jittered placement)."""
    program = parse_rule_program(
        "layout seq5; entity circle solid;"
        " progress count geometric x2 every 2 start 1;"
        " violate count_off; violate wrong_fill; violate order_swap;"
    )
    return render_group(program, StyleId.MONOCHROME_VECTOR, 42, rule_id="count", config=small_render)


@pytest.fixture(scope="session")
def assembly_corpus(small_render):
    """Six rendered, QC'd groups over a small lineage forest (one style).

    Two seed rules, two mutation children, one crossover child, and one
    grandchild; every rule gets a mono_vector group. Returns (infos, pool,
    store) for assembly tests.
    """
    from puzzlegen import qc as qc_mod
    from puzzlegen.assembly import GroupInfo, PANEL_NAMES, PanelStore
    from puzzlegen.rules import (
        LineageOp,
        ReasoningStyle,
        VisualPattern,
        canonical_class,
        make_rule,
    )

    cls = canonical_class(VisualPattern.HORIZONTAL_SQUARE, ReasoningStyle.DEDUCTIVE)

    def bullets(tag):
        return [
            f"Counts advance steadily ({tag})",
            "Shapes stay one kind",
            "No two shapes touch",
            "Backgrounds remain plain",
        ]

    seed_a = make_rule(cls, bullets("a"))
    seed_b = make_rule(cls, bullets("b"))
    child_a = make_rule(cls, bullets("child-a"), 1, [(seed_a.id, LineageOp.MUTATION)])
    child_b = make_rule(cls, bullets("child-b"), 1, [(seed_b.id, LineageOp.MUTATION)])
    cross = make_rule(
        cls, bullets("cross"), 2,
        [(child_a.id, LineageOp.CROSSOVER), (child_b.id, LineageOp.CROSSOVER)],
    )
    grand = make_rule(cls, bullets("grand"), 3, [(cross.id, LineageOp.MUTATION)])
    rules = [seed_a, seed_b, child_a, child_b, cross, grand]
    pool = {r.id: r for r in rules}

    programs = {
        seed_a.id: "layout seq5; entity circle solid; progress count arithmetic step 1 start 1;"
                   " violate count_off; violate wrong_fill; violate order_swap;",
        seed_b.id: "layout seq5; entity square solid; progress count arithmetic step 2 start 1;"
                   " violate count_off; violate wrong_fill; violate order_swap;",
        child_a.id: "layout seq5; entity triangle solid; progress count arithmetic step 1 start 2;"
                    " violate count_off; violate wrong_fill; violate order_swap;",
        child_b.id: "layout seq5; entity circle hollow; progress count geometric x2 every 2 start 1;"
                    " violate count_off; violate wrong_fill; violate order_swap;",
        cross.id: "layout seq5; entity composite solid; progress count arithmetic step 1 start 1;"
                  " violate count_off; violate wrong_fill; violate order_swap;",
        grand.id: "layout seq5; entity stick_figure solid; progress count arithmetic step 1 start 1;"
                  " violate count_off; violate wrong_fill; violate order_swap;",
    }
    store = PanelStore()
    infos = []
    for i, (rid, text) in enumerate(programs.items()):
        group = render_group(
            parse_rule_program(text),
            StyleId.MONOCHROME_VECTOR,
            101 + i,
            rule_id=rid,
            config=small_render,
        )
        verdict = qc_mod.qc_group(group.panels)
        hashes = {name: qc_mod.phash(p).bits for name, p in zip(PANEL_NAMES, group.panels)}
        infos.append(GroupInfo.from_image_group(group, verdict.accepted, hashes))
        store.add_group(group)
    return infos, pool, store


def solid_panel(value: int, size: int = 64) -> ImageBuf:
    px = np.full((size, size, 3), value, dtype=np.uint8)
    return ImageBuf(px)


def checkerboard_panel(size: int = 64, cell: int = 4) -> ImageBuf:
    idx = (np.indices((size, size)).sum(axis=0) // cell) % 2
    px = np.where(idx[..., None] == 0, 0, 255).astype(np.uint8).repeat(3, axis=2)
    return ImageBuf(px)


def circle_panel(cx: float, cy: float, r: float, size: int = 96) -> ImageBuf:
    ax = np.arange(size) + 0.5
    X, Y = np.meshgrid(ax, ax)
    mask = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r
    px = np.where(mask[..., None], 0, 255).astype(np.uint8).repeat(3, axis=2)
    return ImageBuf(px)
