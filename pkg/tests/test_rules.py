import itertools

import pytest
from hypothesis import given, strategies as st

from puzzlegen.rules import (
    InvalidCombination,
    LineageOp,
    ReasoningStyle,
    Rule,
    RuleClass,
    ScoreTriple,
    VisualPattern,
    all_classes,
    canonical_class,
    class_from_key,
    make_rule,
    read_rules_jsonl,
    rule_from_record,
    rule_id,
    rule_to_record,
    validate_rule,
    word_count,
    write_rules_jsonl,
)

GOOD_BULLETS = [
    "Each panel adds one ball",
    "Balls never touch each other",
    "Background stays plain",
    "Sizes match across panels",
    "Only one shape kind appears",
]
HSQ_DED = canonical_class(VisualPattern.HORIZONTAL_SQUARE, ReasoningStyle.DEDUCTIVE)


class TestCanonicalClass:
    def test_plain_pair(self):
        cls = canonical_class(VisualPattern.HORIZONTAL_SQUARE, ReasoningStyle.DEDUCTIVE)
        assert cls.key == "hsq-ded"

    def test_others_collapses(self):
        for visual in VisualPattern:
            assert canonical_class(visual, ReasoningStyle.OTHERS).key == "others"
        for reasoning in ReasoningStyle:
            assert canonical_class(VisualPattern.OTHERS, reasoning).key == "others"

    def test_two_group_deductive_rejected(self):
        with pytest.raises(InvalidCombination):
            canonical_class(VisualPattern.TWO_GROUP, ReasoningStyle.DEDUCTIVE)

    def test_image_has_exactly_8_classes(self):
        keys = set()
        for visual, reasoning in itertools.product(VisualPattern, ReasoningStyle):
            if visual is VisualPattern.TWO_GROUP and reasoning is ReasoningStyle.DEDUCTIVE:
                continue
            keys.add(canonical_class(visual, reasoning).key)
        assert len(keys) == 8
        assert keys == {c.key for c in all_classes()}

    def test_total_minus_invalid_pair(self):
        pairs = list(itertools.product(VisualPattern, ReasoningStyle))
        assert len(pairs) == 15
        ok = sum(
            1
            for v, r in pairs
            if not (v is VisualPattern.TWO_GROUP and r is ReasoningStyle.DEDUCTIVE)
        )
        assert ok == 14  # everything except the one invalid pair maps somewhere

    def test_class_from_key_roundtrip(self):
        for cls in all_classes():
            assert class_from_key(cls.key) == cls


class TestWordCount:
    def test_plain(self):
        assert word_count("three little words") == 3

    def test_punctuation_only_tokens_ignored(self):
        assert word_count("a - b -- c ...") == 3

    def test_numbers_count(self):
        assert word_count("panel 3 has 4 balls") == 5


class TestValidateRule:
    def test_valid_five_bullets(self):
        rule = make_rule(HSQ_DED, ["one two three four five six"] * 5)
        assert validate_rule(rule).ok

    def test_three_bullets_flagged(self):
        rule = make_rule(HSQ_DED, GOOD_BULLETS[:3])
        report = validate_rule(rule)
        assert not report.ok
        assert any("below 4" in v for v in report.violations)

    def test_seven_bullets_flagged(self):
        rule = make_rule(HSQ_DED, GOOD_BULLETS + ["a b", "c d"])
        assert any("above 6" in v for v in validate_rule(rule).violations)

    def test_long_bullet_flagged(self):
        long = " ".join(f"w{i}" for i in range(35))
        rule = make_rule(HSQ_DED, GOOD_BULLETS[:4] + [long])
        report = validate_rule(rule)
        assert any("exceeds word limit" in v for v in report.violations)

    def test_29_words_ok_30_not(self):
        b29 = " ".join(f"w{i}" for i in range(29))
        b30 = " ".join(f"w{i}" for i in range(30))
        assert validate_rule(make_rule(HSQ_DED, GOOD_BULLETS[:4] + [b29])).ok
        assert not validate_rule(make_rule(HSQ_DED, GOOD_BULLETS[:4] + [b30])).ok

    def test_gen0_with_lineage_flagged(self):
        rule = Rule("x", HSQ_DED, tuple(GOOD_BULLETS), 0, (("p", LineageOp.MUTATION),))
        assert not validate_rule(rule).ok

    def test_crossover_needs_two_parents(self):
        rule = Rule("x", HSQ_DED, tuple(GOOD_BULLETS), 1, (("p", LineageOp.CROSSOVER),))
        assert any("2 parents" in v for v in validate_rule(rule).violations)

    @given(st.integers(min_value=0, max_value=9))
    def test_report_empty_iff_invariants_hold(self, n_bullets):
        bullets = [f"bullet number {i} ok" for i in range(n_bullets)]
        rule = make_rule(HSQ_DED, bullets)
        assert validate_rule(rule).ok == (4 <= n_bullets <= 6)


class TestScoreTriple:
    def test_total(self):
        assert ScoreTriple(5, 4, 3).total == 12

    @pytest.mark.parametrize("bad", [0, 6, -1])
    def test_out_of_range_rejected(self, bad):
        with pytest.raises(ValueError):
            ScoreTriple(bad, 3, 3)


class TestIdsAndSerialization:
    def test_id_is_content_addressed(self):
        a = rule_id(HSQ_DED, GOOD_BULLETS)
        b = rule_id(HSQ_DED, GOOD_BULLETS)
        assert a == b
        assert rule_id(HSQ_DED, GOOD_BULLETS[::-1]) != a

    def test_id_depends_on_class(self):
        other = canonical_class(VisualPattern.ANALOGY, ReasoningStyle.INDUCTIVE)
        assert rule_id(HSQ_DED, GOOD_BULLETS) != rule_id(other, GOOD_BULLETS)

    def test_record_roundtrip(self):
        rule = make_rule(HSQ_DED, GOOD_BULLETS, 2, [("p1", LineageOp.CROSSOVER), ("p2", LineageOp.CROSSOVER)])
        rule = rule.with_scores(ScoreTriple(5, 4, 3)).with_program("layout seq5;")
        assert rule_from_record(rule_to_record(rule)) == rule

    def test_jsonl_roundtrip(self, tmp_path):
        rules = [make_rule(HSQ_DED, GOOD_BULLETS), make_rule(HSQ_DED, GOOD_BULLETS[:4])]
        path = tmp_path / "rules.jsonl"
        write_rules_jsonl(path, rules)
        assert list(read_rules_jsonl(path)) == rules

    def test_fixture_seeds_valid(self, seeds_path):
        seeds = list(read_rules_jsonl(seeds_path))
        assert len(seeds) == 24
        assert all(validate_rule(s).ok for s in seeds)
        assert len({s.id for s in seeds}) == 24
        assert len({s.rule_class.key for s in seeds}) == 8
