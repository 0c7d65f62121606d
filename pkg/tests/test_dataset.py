import hashlib

import numpy as np
import pytest

from puzzlegen.assembly import PanelRef, Puzzle, Variant
from puzzlegen.dataset import (
    AttributeRecord,
    DatasetManifest,
    Difficulty,
    InconsistentState,
    InsufficientPool,
    bin_difficulty,
    build_manifest,
    pass_rate,
    read_records_jsonl,
    sample_training,
    write_records_jsonl,
)
from puzzlegen.providers import ProviderError, StubSolver


def _record(pid="p0", variant=Variant.DEFAULT4, r=4, c=4, p=0.5, attempts=8):
    return AttributeRecord(pid, variant, r, c, p, attempts)


def _puzzle(pid="g-d0", n_options=4, answer="B"):
    labels = "ABCDEFGHIJ"[:n_options]
    options = tuple((labels[i], PanelRef("g", "c4" if labels[i] == answer else f"x{i % 3}")) for i in range(n_options))
    return Puzzle(
        puzzle_id=pid,
        group_id="g",
        variant=Variant.DEFAULT4 if n_options == 4 else Variant.EXPANDED10,
        stem=tuple(PanelRef("g", f"c{i}") for i in range(4)),
        options=options,
        answer=answer,
        prompt="choose",
        rng_seed=0,
    )


class TestAttributeRecord:
    def test_pass_rate_attempts_integrality(self):
        _record(p=0.375, attempts=8)  # 3/8 is fine
        with pytest.raises(ValueError):
            _record(p=0.3, attempts=8)  # 2.4 successes is not a count

    @pytest.mark.parametrize("bad", [0, 6])
    def test_score_bounds(self, bad):
        with pytest.raises(ValueError):
            _record(r=bad)

    def test_jsonl_roundtrip(self, tmp_path):
        records = [_record("a"), _record("b", Variant.EXPANDED10, p=0.25)]
        path = tmp_path / "records.jsonl"
        write_records_jsonl(path, records)
        assert list(read_records_jsonl(path)) == records


class TestBinDifficulty:
    @pytest.mark.parametrize(
        "p,expected",
        [
            (0.0, Difficulty.HARD),
            (0.25, Difficulty.MEDIUM),
            (0.375, Difficulty.MEDIUM),
            (0.5, Difficulty.EASY),
            (0.625, Difficulty.EASY),
            (0.75, Difficulty.EASY),
            (0.875, Difficulty.UNBINNED),
            (0.125, Difficulty.UNBINNED),
            (1.0, Difficulty.UNBINNED),
        ],
    )
    def test_boundaries(self, p, expected):
        assert bin_difficulty(_record(p=p)) is expected

    def test_exactly_one_bin_in_core_range(self):
        for successes in range(9):
            p = successes / 8
            rec = _record(p=p)
            bins = [
                d
                for d in (Difficulty.HARD, Difficulty.MEDIUM, Difficulty.EASY)
                if bin_difficulty(rec) is d
            ]
            if p == 0 or 0.25 <= p <= 0.75:
                assert len(bins) == 1
            else:
                assert bins == []

    def test_zero_attempts_rejected(self):
        rec = _record(p=0.0, attempts=8)
        object.__setattr__(rec, "attempts", 0) if False else None
        bad = AttributeRecord("x", Variant.DEFAULT4, 4, 4, 0.0, 0)
        with pytest.raises(ValueError):
            bin_difficulty(bad)


class TestSampleTraining:
    def _pool(self, n4=200, n10=60):
        records = []
        for i in range(n4):
            records.append(_record(f"four-{i:04d}", Variant.SHUFFLED4 if i % 5 else Variant.DEFAULT4, p=0.5))
        for i in range(n10):
            records.append(_record(f"ten-{i:04d}", Variant.EXPANDED10, p=0.5))
        return records

    def test_80_20_mix(self):
        rng = np.random.default_rng(0)
        ids = sample_training(self._pool(), 100, rng)
        assert len(ids) == 100
        assert sum(1 for i in ids if i.startswith("four-")) == 80
        assert sum(1 for i in ids if i.startswith("ten-")) == 20

    def test_all_constraints_hold_per_element(self):
        records = self._pool()
        # salt in ineligible records that must never be picked
        records += [
            _record("bad-band", Variant.DEFAULT4, p=1.0),
            _record("bad-low", Variant.DEFAULT4, p=0.25),
            _record("bad-score", Variant.DEFAULT4, r=3, c=4, p=0.5),
            _record("bad-ten", Variant.EXPANDED10, p=0.125),
        ]
        by_id = {r.puzzle_id: r for r in records}
        ids = sample_training(records, 50, np.random.default_rng(1))
        for pid in ids:
            rec = by_id[pid]
            assert 0.375 <= rec.pass_rate <= 0.875
            assert rec.readability + rec.coherence >= 8

    def test_band_boundaries_inclusive(self):
        records = [
            _record(f"f{i}", Variant.DEFAULT4, p=[0.375, 0.875][i % 2]) for i in range(40)
        ] + [_record(f"t{i}", Variant.EXPANDED10, p=0.5) for i in range(10)]
        ids = sample_training(records, 10, np.random.default_rng(2))
        assert len(ids) == 10

    def test_insufficient_pool_details(self):
        records = [_record("only-one", Variant.DEFAULT4, p=0.5)]
        with pytest.raises(InsufficientPool) as err:
            sample_training(records, 10, np.random.default_rng(0))
        shortfall = err.value.shortfall
        assert shortfall["four_option"]["available"] == 1
        assert shortfall["four_option"]["needed"] == 8
        assert shortfall["ten_option"]["needed"] == 2

    def test_no_duplicates(self):
        ids = sample_training(self._pool(), 200, np.random.default_rng(3))
        assert len(set(ids)) == 200

    def test_deterministic_given_rng(self):
        a = sample_training(self._pool(), 40, np.random.default_rng(7))
        b = sample_training(self._pool(), 40, np.random.default_rng(7))
        assert a == b


class TestPassRate:
    def test_oracle_scores_one(self):
        puzzle = _puzzle()
        sheet = b"sheet-bytes"
        table = {hashlib.sha256(sheet).hexdigest(): puzzle.answer}
        rate, attempts = pass_rate(puzzle, StubSolver("oracle", table), 8, sheet)
        assert (rate, attempts) == (1.0, 8)

    def test_adversarial_scores_zero_bins_hard(self):
        puzzle = _puzzle()
        sheet = b"sheet-bytes"
        table = {hashlib.sha256(sheet).hexdigest(): puzzle.answer}
        rate, attempts = pass_rate(puzzle, StubSolver("adversarial", table), 8, sheet)
        assert rate == 0.0
        rec = AttributeRecord(puzzle.puzzle_id, puzzle.variant, 4, 4, rate, attempts)
        assert bin_difficulty(rec) is Difficulty.HARD

    def test_random_converges_to_quarter(self):
        # binomial expectation at k=10,000: within 3 sigma
        puzzle = _puzzle()
        rate, attempts = pass_rate(puzzle, StubSolver("random"), 10_000, None, base_seed=5)
        sigma = (0.25 * 0.75 / 10_000) ** 0.5
        assert abs(rate - 0.25) < 3 * sigma

    def test_provider_failure_propagates(self):
        puzzle = _puzzle()
        # oracle without a table always fails
        with pytest.raises(ProviderError):
            pass_rate(puzzle, StubSolver("oracle", {}), 2, b"sheet")

    def test_deterministic(self):
        puzzle = _puzzle()
        a = pass_rate(puzzle, StubSolver("random"), 16, None, base_seed=3)
        b = pass_rate(puzzle, StubSolver("random"), 16, None, base_seed=3)
        assert a == b


class TestManifest:
    def _puzzles(self, groups):
        return {
            "default4": groups,
            "shuffled4": 4 * groups,
            "expanded10": groups,
        }

    def test_consistent_counts(self):
        records = [_record(f"p{i}", p=i % 9 / 8) for i in range(18)]
        manifest = build_manifest(
            seeds=24,
            generated=90,
            retained=85,
            groups_per_style={"mono_vector": 30, "mono_raster": 29, "free_palette": 30},
            accepted_groups=85,
            puzzles_by_variant=self._puzzles(85),
            records=records,
        )
        assert manifest.counts["total_puzzles"] == 6 * 85
        assert manifest.counts["rendered_groups"] == 89
        assert sum(manifest.difficulty_bins.values()) == len(records)
        assert sum(manifest.attribute_histograms["readability"].values()) == len(records)
        assert sum(manifest.attribute_histograms["pass_rate"].values()) == len(records)

    def test_empty_pipeline_all_zero(self):
        manifest = build_manifest(0, 0, 0, {}, 0, {}, [])
        assert manifest.counts["total_puzzles"] == 0
        assert manifest.counts["rendered_groups"] == 0
        assert all(v == 0 for v in manifest.difficulty_bins.values())

    def test_shuffled_identity_enforced(self):
        with pytest.raises(InconsistentState, match="4 x default"):
            build_manifest(1, 1, 1, {"s": 1}, 1, {"default4": 2, "shuffled4": 4, "expanded10": 0})

    def test_accepted_exceeding_rendered_rejected(self):
        with pytest.raises(InconsistentState, match="accepted"):
            build_manifest(1, 1, 1, {"s": 1}, 5, self._puzzles(5))

    def test_retained_exceeding_generated_rejected(self):
        with pytest.raises(InconsistentState, match="retained"):
            build_manifest(1, 1, 5, {"s": 1}, 1, self._puzzles(1))

    def test_json_roundtrip(self):
        manifest = build_manifest(2, 4, 3, {"s": 3}, 3, self._puzzles(3), [_record()])
        again = DatasetManifest.from_json(manifest.to_json())
        assert again.to_json() == manifest.to_json()
