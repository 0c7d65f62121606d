import pytest
from hypothesis import given, strategies as st

from puzzlegen.dsl import (
    Arithmetic,
    Attribute,
    AttributeProgression,
    DomainError,
    EntityKind,
    Fill,
    Geometric,
    Layout,
    ParseError,
    RuleProgram,
    SemanticError,
    Shift,
    SizeClass,
    Toggle,
    ViolationKind,
    format_rule_program,
    parse_rule_program,
    program_warnings,
    progression_values,
)

DOUBLING = (
    "layout seq5; entity circle solid;"
    " progress count geometric x2 every 2 start 1;"
    " violate count_off; violate wrong_fill; violate order_swap;"
)


class TestParse:
    def test_doubling_example(self):
        program = parse_rule_program(DOUBLING)
        assert program.layout is Layout.SEQUENCE5
        assert program.entity.kind is EntityKind.CIRCLE
        assert program.entity.fill is Fill.SOLID
        (p,) = program.progressions
        assert p.schedule == Geometric(factor=2.0, every_k=2)
        assert p.start == 1.0
        assert [v.kind for v in program.violations] == [
            ViolationKind.COUNT_OFF,
            ViolationKind.WRONG_FILL,
            ViolationKind.ORDER_SWAP,
        ]

    def test_empty_input_position(self):
        with pytest.raises(ParseError) as err:
            parse_rule_program("")
        assert err.value.line == 1 and err.value.column == 1

    def test_two_violations_rejected(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count arithmetic step 1 start 1;"
            " violate count_off; violate wrong_fill;"
        )
        with pytest.raises(SemanticError, match="3 distractor recipes"):
            parse_rule_program(text)

    def test_no_progression_rejected(self):
        with pytest.raises(SemanticError, match="at least one progression"):
            parse_rule_program(
                "layout seq5; entity circle solid;"
                " violate count_off; violate wrong_fill; violate order_swap;"
            )

    def test_unknown_token_position(self):
        with pytest.raises(ParseError) as err:
            parse_rule_program("layout seq5; wobble circle;")
        assert err.value.line == 1
        assert err.value.column == 14

    def test_missing_semicolon(self):
        with pytest.raises(ParseError):
            parse_rule_program("layout seq5 entity circle solid;")

    def test_comments_and_newlines(self):
        text = "# header\nlayout seq5;\nentity square small hollow; # inline\n" + DOUBLING.split(";", 2)[2]
        program = parse_rule_program(text)
        assert program.entity.size is SizeClass.SMALL

    def test_inapplicable_violation_rejected(self):
        text = (
            "layout seq5; entity triangle solid;"
            " progress count arithmetic step 1 start 1;"
            " violate rotation_off; violate wrong_fill; violate order_swap;"
        )
        with pytest.raises(SemanticError, match="rotation"):
            parse_rule_program(text)

    def test_duplicate_attribute_rejected(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count arithmetic step 1 start 1;"
            " progress count arithmetic step 2 start 2;"
            " violate count_off; violate wrong_fill; violate order_swap;"
        )
        with pytest.raises(SemanticError, match="duplicate progression"):
            parse_rule_program(text)

    def test_schedule_attribute_mismatch(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress shading arithmetic step 1 start 0;"
            " violate shading_flip; violate wrong_fill; violate order_swap;"
        )
        with pytest.raises(SemanticError, match="shading"):
            parse_rule_program(text)

    def test_negative_count_rejected_at_parse(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count arithmetic step -2 start 3;"
            " violate count_off; violate wrong_fill; violate order_swap;"
        )
        with pytest.raises(SemanticError, match="negative"):
            parse_rule_program(text)

    def test_geometric_needs_positive_factor(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count geometric x-2 every 2 start 1;"
            " violate count_off; violate wrong_fill; violate order_swap;"
        )
        with pytest.raises((SemanticError, DomainError)):
            parse_rule_program(text)


class TestProgressionValues:
    def test_doubling_every_other(self):
        p = AttributeProgression(Attribute.COUNT, Geometric(2.0, 2), 1.0)
        assert progression_values(p, 5) == [1, 1, 2, 2, 4]

    def test_zero_step_constant(self):
        p = AttributeProgression(Attribute.COUNT, Arithmetic(0.0), 7.0)
        assert progression_values(p, 5) == [7, 7, 7, 7, 7]

    def test_quarter_turns(self):
        p = AttributeProgression(Attribute.ROTATION_DEG, Arithmetic(-90.0), 0.0)
        assert progression_values(p, 4) == [0, -90, -180, -270]

    def test_negative_count_raises(self):
        p = AttributeProgression(Attribute.COUNT, Arithmetic(-1.0), 2.0)
        with pytest.raises(DomainError):
            progression_values(p, 5)

    def test_shift_positions(self):
        p = AttributeProgression(Attribute.POSITION, Shift(0.1, -0.05), (0.2, 0.6))
        values = progression_values(p, 3)
        assert values[0] == (0.2, 0.6)
        assert values[2] == pytest.approx((0.4, 0.5))

    def test_toggle(self):
        p = AttributeProgression(Attribute.SHADING, Toggle(), 1.0)
        assert progression_values(p, 4) == [1.0, 0.0, 1.0, 0.0]

    @pytest.mark.parametrize("n", range(1, 17))
    def test_length_correct_all_schedules(self, n):
        progressions = [
            AttributeProgression(Attribute.COUNT, Arithmetic(1.0), 0.0),
            AttributeProgression(Attribute.COUNT, Geometric(2.0, 3), 1.0),
            AttributeProgression(Attribute.SHADING, Toggle(), 0.0),
            AttributeProgression(Attribute.POSITION, Shift(0.01, 0.01), (0.3, 0.3)),
        ]
        for p in progressions:
            assert len(progression_values(p, n)) == n

    def test_deterministic(self):
        p = AttributeProgression(Attribute.ROTATION_DEG, Arithmetic(33.0), 4.0)
        assert progression_values(p, 9) == progression_values(p, 9)


# hypothesis strategies building random valid programs via the constructors

_count_prog = st.builds(
    lambda step, start: AttributeProgression(Attribute.COUNT, Arithmetic(float(step)), float(start)),
    st.integers(1, 3),
    st.integers(0, 4),
)
_rot_prog = st.builds(
    lambda step, start: AttributeProgression(
        Attribute.ROTATION_DEG, Arithmetic(float(step)), float(start)
    ),
    st.sampled_from([-90, -45, -30, 30, 45, 60]),
    st.integers(0, 359),
)
_geom_prog = st.builds(
    lambda k, start: AttributeProgression(Attribute.COUNT, Geometric(2.0, k), float(start)),
    st.integers(1, 3),
    st.integers(1, 2),
)
_shade_prog = st.builds(
    lambda start: AttributeProgression(Attribute.SHADING, Toggle(), float(start)),
    st.integers(0, 1),
)

_VIOLATIONS_FOR = {
    Attribute.COUNT: ViolationKind.COUNT_OFF,
    Attribute.ROTATION_DEG: ViolationKind.ROTATION_OFF,
    Attribute.SHADING: ViolationKind.SHADING_FLIP,
}


@st.composite
def programs(draw):
    from puzzlegen.dsl import EntitySpec, ViolationRecipe

    prog = draw(st.sampled_from(["count", "rot", "geom", "shade_count"]))
    if prog == "count":
        plist = [draw(_count_prog)]
    elif prog == "rot":
        plist = [draw(_rot_prog)]
    elif prog == "geom":
        plist = [draw(_geom_prog)]
    else:
        plist = [draw(_count_prog), draw(_shade_prog)]
    violations = [ViolationRecipe(_VIOLATIONS_FOR[plist[0].attribute])]
    violations.append(ViolationRecipe(ViolationKind.WRONG_FILL))
    violations.append(ViolationRecipe(ViolationKind.ORDER_SWAP))
    entity = EntitySpec(
        draw(st.sampled_from(list(EntityKind))),
        draw(st.sampled_from(list(SizeClass))),
        draw(st.sampled_from(list(Fill))),
    )
    return RuleProgram(
        layout=draw(st.sampled_from(list(Layout))),
        entity=entity,
        progressions=tuple(plist),
        violations=tuple(violations),
    )


class TestRoundTrip:
    def test_doubling_roundtrip(self):
        program = parse_rule_program(DOUBLING)
        assert parse_rule_program(format_rule_program(program)) == program

    @given(programs())
    def test_print_parse_identity(self, program):
        text = format_rule_program(program)
        assert parse_rule_program(text) == program

    @given(programs())
    def test_print_is_canonical(self, program):
        text = format_rule_program(program)
        assert format_rule_program(parse_rule_program(text)) == text


class TestVlruleFiles:
    """The on-disk interface: one program per .vlrule text file."""

    def test_fixture_files_parse_and_roundtrip(self):
        from pathlib import Path

        program_dir = Path(__file__).parent / "fixtures" / "programs"
        paths = sorted(program_dir.glob("*.vlrule"))
        assert len(paths) >= 5
        for path in paths:
            program = parse_rule_program(path.read_text(encoding="utf-8"))
            assert parse_rule_program(format_rule_program(program)) == program

    def test_fixture_files_render_clean(self, small_render):
        from pathlib import Path

        from puzzlegen.renderer import StyleId, render_group

        program_dir = Path(__file__).parent / "fixtures" / "programs"
        for path in sorted(program_dir.glob("*.vlrule")):
            program = parse_rule_program(path.read_text(encoding="utf-8"))
            group = render_group(
                program, StyleId.MONOCHROME_VECTOR, 23, rule_id=path.stem, config=small_render
            )
            assert len(group.panels) == 8


class TestWarnings:
    def test_clean_program_no_warnings(self):
        assert program_warnings(parse_rule_program(DOUBLING)) == []

    def test_constant_progression_warns(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count arithmetic step 0 start 3;"
            " violate count_off; violate wrong_fill; violate order_swap;"
        )
        assert any("constant" in w for w in program_warnings(parse_rule_program(text)))

    def test_overflow_warns(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count geometric x4 every 1 start 2;"
            " violate count_off; violate wrong_fill; violate order_swap;"
        )
        assert any("overflow" in w for w in program_warnings(parse_rule_program(text)))

    def test_duplicate_recipes_warn(self):
        text = (
            "layout seq5; entity circle solid;"
            " progress count arithmetic step 1 start 1;"
            " violate count_off; violate count_off; violate wrong_fill;"
        )
        assert any("duplicate" in w for w in program_warnings(parse_rule_program(text)))
