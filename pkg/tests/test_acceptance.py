"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

Full-scale numbers are out of reach on a desk, so acceptance checks the
pipeline's exact count identities and kernel/renderer contracts at fixture
scale: 24 hand-written seed rules, stub providers, 96-px panels.
"""

import hashlib
import json
import shutil
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from puzzlegen.assembly import PanelRef, Variant
from puzzlegen.cli import main as cli_main
from puzzlegen.dataset import (
    AttributeRecord,
    Difficulty,
    bin_difficulty,
    pass_rate,
    sample_training,
)
from puzzlegen.dedup import dedup, nn_distances, normalize_rows, filter_by_score
from puzzlegen.dsl import parse_rule_program
from puzzlegen.evolution import EvolutionConfig, evolve, lineage_roots
from puzzlegen.imaging import ImageBuf
from puzzlegen.providers import StubSolver, StubTransformer
from puzzlegen.qc import PHash, QcThresholds, hamming, phash, qc_group, ssim_vs_white, gradient_energy
from puzzlegen.renderer import RenderConfig, StyleId, render_group, expected_next_state
from puzzlegen.rules import ScoreTriple, make_rule, read_rules_jsonl, canonical_class
from puzzlegen.rules import ReasoningStyle, VisualPattern

from click.testing import CliRunner

from conftest import FIXTURES, solid_panel

HSQ = canonical_class(VisualPattern.HORIZONTAL_SQUARE, ReasoningStyle.DEDUCTIVE)


def _report(criterion: int, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


def _run_fixture_pipeline(root: Path) -> Path:
    """Copy the fixture workspace into root and run the full pipeline."""
    shutil.copy(FIXTURES / "seed_rules.jsonl", root / "seed_rules.jsonl")
    toml = (FIXTURES / "pipeline.toml").read_text()
    toml = toml.replace('workdir = "../build/fixture-run/work"', 'workdir = "work"')
    toml = toml.replace('export = "../build/fixture-run/out"', 'export = "out"')
    config = root / "pipeline.toml"
    config.write_text(toml, encoding="utf-8")
    result = CliRunner().invoke(cli_main, ["run-all", "--config", str(config)])
    assert result.exit_code == 0, result.output
    return root


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("acceptance-e2e")
    return _run_fixture_pipeline(root)


def _dataset_tree_digests(dataset: Path) -> dict[str, str]:
    out = {}
    for p in sorted(dataset.rglob("*")):
        if p.is_file():
            out[str(p.relative_to(dataset))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


class TestCriterion1Multiplier:
    def test_criterion_1_multiplier_identity(self, e2e_run):
        manifest = json.loads((e2e_run / "out/dataset/manifest.json").read_text())
        counts = manifest["counts"]
        accepted = counts["accepted_groups"]
        puzzles = counts["puzzles"]
        ok = (
            puzzles["default4"] == accepted
            and puzzles["shuffled4"] == 4 * accepted
            and puzzles["expanded10"] == accepted
            and counts["total_puzzles"] == 6 * accepted
        )
        _report(
            1, ok,
            f"24 seeds -> {accepted} accepted groups -> {counts['total_puzzles']} puzzles "
            f"(1:4:1 = {puzzles['default4']}:{puzzles['shuffled4']}:{puzzles['expanded10']})",
        )


class TestCriterion2Growth:
    def test_criterion_2_growth_ratio(self):
        seeds = list(read_rules_jsonl(FIXTURES / "seed_rules.jsonl"))
        cfg = EvolutionConfig(rng_seed=20240612)  # defaults: 10 generations, 25x target
        result = evolve(seeds, cfg, StubTransformer())
        pool_size = len(result.pool)
        target = 25 * len(seeds)
        within = abs(pool_size - target) <= 0.10 * target
        seed_ids = {s.id for s in seeds}
        rooted = all(lineage_roots(r, result.pool) <= seed_ids for r in result.rules)
        _report(
            2, within and rooted,
            f"pool {pool_size} vs 25x{len(seeds)}={target} (+/-10%), all lineages rooted: {rooted}",
        )


class TestCriterion3Filtering:
    def test_criterion_3_filter_rule_exact(self):
        rules = []
        for f in range(1, 6):
            for c in range(1, 6):
                for s in range(1, 6):
                    rule = make_rule(HSQ, [f"Statement {f}-{c}-{s} number {i}" for i in range(4)])
                    rules.append(rule.with_scores(ScoreTriple(f, c, s)))
        retained = filter_by_score(rules)
        expected = [r for r in rules if r.scores.total > 12 and r.scores.feasibility >= 3]
        ok = retained == expected
        _report(3, ok, f"retained {len(retained)}/125 scored rules, exact rubric match: {ok}")


class TestCriterion4Dedup:
    def test_criterion_4_nn_exactness_and_dedup(self):
        rng = np.random.default_rng(4)
        vectors = normalize_rows(rng.standard_normal((1000, 16)))
        ids = [f"r{i:04d}" for i in range(1000)]
        got = np.array([d for _, d in nn_distances(ids, vectors)])
        # O(n^2) oracle via direct differences
        want = np.empty(1000)
        for i in range(1000):
            diff = vectors - vectors[i]
            d = np.sqrt(np.sum(diff * diff, axis=1))
            d[i] = np.inf
            want[i] = d.min()
        max_err = float(np.max(np.abs(got - want)))

        threshold = 0.9
        report = dedup(ids, vectors, threshold)
        kept_idx = [ids.index(k) for k in report.kept]
        pairwise_ok = True
        kept = vectors[kept_idx]
        for i in range(len(kept)):
            d = np.linalg.norm(kept[i + 1:] - kept[i], axis=1)
            if len(d) and d.min() < threshold:
                pairwise_ok = False
                break
        ok = max_err <= 1e-6 and pairwise_ok
        _report(
            4, ok,
            f"nn max err {max_err:.2e} <= 1e-6; dedup kept {len(report.kept)}/1000 pairwise >= {threshold}",
        )


class TestCriterion5QcKernels:
    def test_criterion_5_qc_kernels(self, count_group):
        rng = np.random.default_rng(5)
        triples = rng.integers(0, 1 << 62, size=(10_000, 3))
        metric_ok = True
        for a, b, c in triples:
            ha, hb, hc = PHash(int(a)), PHash(int(b)), PHash(int(c))
            if hamming(ha, hb) != hamming(hb, ha):
                metric_ok = False
            if (hamming(ha, hb) == 0) != (a == b):
                metric_ok = False
            if hamming(ha, hb) > hamming(ha, hc) + hamming(hc, hb):
                metric_ok = False

        white = ssim_vs_white(solid_panel(255))
        white_ok = abs(white - 1.0) <= 1e-9
        black = ssim_vs_white(solid_panel(0))
        closed_form = (0.01 * 255) ** 2 / (255.0 ** 2 + (0.01 * 255) ** 2)
        black_ok = abs(black - closed_form) <= 1e-6

        w = 64
        px = np.zeros((w, w, 3), dtype=np.uint8)
        px[:, w // 2:, :] = 255
        energy = gradient_energy(ImageBuf(px))
        energy_ok = abs(energy - 1.0 / w) <= 1e-9

        panels = count_group.panels
        panels[5] = panels[4]
        rejected = not qc_group(panels, QcThresholds(duplicate_hamming=10)).accepted

        ok = metric_ok and white_ok and black_ok and energy_ok and rejected
        _report(
            5, ok,
            f"metric laws on 10k triples: {metric_ok}; ssim(white)={white:.3e}; "
            f"ssim(black) err {abs(black - closed_form):.2e}; step-edge err "
            f"{abs(energy - 1.0 / w):.2e}; duplicate group rejected: {rejected}",
        )


def _foreground(panel: ImageBuf) -> np.ndarray:
    gray = panel.pixels.astype(np.float64).mean(axis=2)
    bg = np.median(np.concatenate([gray[0], gray[-1], gray[:, 0], gray[:, -1]]))
    return np.abs(gray - bg) > 40


def _count(panel: ImageBuf) -> int:
    _, n = ndimage.label(_foreground(panel), structure=np.ones((3, 3)))
    return n


def _centroid(panel: ImageBuf) -> tuple[float, float]:
    ys, xs = np.nonzero(_foreground(panel))
    return float(xs.mean()), float(ys.mean())


def _orientation(panel: ImageBuf) -> float:
    """Principal-axis angle of the foreground, degrees mod 180."""
    ys, xs = np.nonzero(_foreground(panel))
    x = xs - xs.mean()
    y = ys - ys.mean()
    angle = 0.5 * np.degrees(np.arctan2(2 * np.mean(x * y), np.mean(x * x) - np.mean(y * y)))
    return float(angle % 180.0)


def _ang_diff(a: float, b: float) -> float:
    d = abs((a - b) % 180.0)
    return min(d, 180.0 - d)


def _solidity(panel: ImageBuf) -> float:
    fg = _foreground(panel)
    filled = ndimage.binary_fill_holes(fg)
    return float(fg.sum() / max(filled.sum(), 1))


class TestCriterion6Renderer:
    CFG = RenderConfig(panel_size=96, placement="shared")

    def _render(self, text, seed=17):
        return render_group(
            parse_rule_program(text), StyleId.MONOCHROME_VECTOR, seed, rule_id="fx", config=self.CFG
        )

    def test_criterion_6_renderer_fidelity(self):
        failures = []

        # count: arithmetic and geometric schedules, exact component counts
        for text, expected_counts in [
            (
                "layout seq5; entity circle solid; progress count arithmetic step 1 start 1;"
                " violate count_off; violate wrong_fill; violate order_swap;",
                [1, 2, 3, 4, 5],
            ),
            (
                "layout seq5; entity square solid; progress count geometric x2 every 2 start 1;"
                " violate count_off; violate wrong_fill; violate order_swap;",
                [1, 1, 2, 2, 4],
            ),
        ]:
            group = self._render(text)
            measured = [_count(p) for p in group.correct]
            if measured != expected_counts:
                failures.append(f"count {measured} != {expected_counts}")
            program = parse_rule_program(text)
            expected6 = expected_next_state(program).count
            if _count(group.incorrect[0]) == expected6:
                failures.append("count_off distractor matches the expected count")
            solid_reference = _solidity(group.correct[0])
            if _solidity(group.incorrect[1]) > 0.8 * solid_reference:
                failures.append("wrong_fill distractor still solid")
            if _count(group.incorrect[2]) == expected6:
                failures.append("order_swap distractor shows the expected count")

        # rotation: line group, orientation recovered within 2 degrees
        text = (
            "layout seq5; entity line_group large solid;"
            " progress rotation_deg arithmetic step -30 start 0;"
            " violate rotation_off; violate wrong_fill; violate order_swap;"
        )
        group = self._render(text)
        base = _orientation(group.correct[0])
        for k, panel in enumerate(group.correct):
            want = (-30.0 * k) % 180.0
            got = (_orientation(panel) - base) % 180.0
            if _ang_diff(got, want) > 2.0:
                failures.append(f"rotation panel {k}: {got:.2f} vs {want:.2f}")
        expected_rot = (-30.0 * 5 - base * 0) % 180.0
        rot_distractor = (_orientation(group.incorrect[0]) - base) % 180.0
        if _ang_diff(rot_distractor, expected_rot) <= 2.0:
            failures.append("rotation_off distractor matches the expected angle")

        # position: centroid shift within 2 px
        text = (
            "layout seq5; entity circle medium solid;"
            " progress position shift dx 0.1 dy 0 start 0.25 0.5;"
            " violate shift_off; violate wrong_fill; violate order_swap;"
        )
        group = self._render(text)
        size = self.CFG.panel_size
        centroids = [_centroid(p) for p in group.correct]
        for k in range(1, 5):
            dx = centroids[k][0] - centroids[k - 1][0]
            dy = centroids[k][1] - centroids[k - 1][1]
            if abs(dx - 0.1 * size) > 2.0 or abs(dy) > 2.0:
                failures.append(f"centroid shift panel {k}: ({dx:.2f},{dy:.2f})")
        program = parse_rule_program(text)
        exp_pos = expected_next_state(program).position
        got = _centroid(group.incorrect[0])
        if (abs(got[0] - exp_pos[0] * size) <= 3.0 and abs(got[1] - exp_pos[1] * size) <= 3.0):
            failures.append("shift_off distractor sits at the expected position")

        # shading: toggle recovered by solidity, flip distractor inverts
        text = (
            "layout seq5; entity circle large solid;"
            " progress count arithmetic step 1 start 2;"
            " progress shading toggle start 1;"
            " violate count_off; violate shading_flip; violate wrong_fill;"
        )
        group = self._render(text)
        solidity = [_solidity(p) for p in group.correct]
        # self-calibrating threshold between the two fill populations
        midpoint = (max(solidity) + min(solidity)) / 2
        expected_solid = [True, False, True, False, True]
        for k, (s, want) in enumerate(zip(solidity, expected_solid)):
            if (s > midpoint) != want:
                failures.append(f"shading panel {k}: solidity {s:.2f} vs solid={want}")
        exp6 = expected_next_state(parse_rule_program(text))
        if (_solidity(group.incorrect[1]) > midpoint) == exp6.solid:
            failures.append("shading_flip distractor matches expected shading")

        # parallel line groups: components = 2 * groups
        text = (
            "layout seq5; entity line_group medium solid;"
            " progress parallel_line_groups arithmetic step 1 start 1;"
            " violate groups_off; violate wrong_fill; violate order_swap;"
        )
        group = self._render(text)
        measured_groups = [_count(p) / 2 for p in group.correct]
        if measured_groups != [1, 2, 3, 4, 5]:
            failures.append(f"line groups {measured_groups}")
        if _count(group.incorrect[0]) / 2 == 6:
            failures.append("groups_off distractor matches expected group count")

        _report(6, not failures, "renderer fidelity fixtures: " + ("; ".join(failures) or "all oracles recovered"))


class TestCriterion7Assembly:
    def test_criterion_7_assembly_soundness(self, e2e_run):
        dataset = e2e_run / "out/dataset"
        puzzles = [
            json.loads(line)
            for line in (dataset / "records/puzzles.jsonl").read_text().splitlines()
        ]
        assert len(puzzles) >= 1000, f"need >= 1000 fixture puzzles, got {len(puzzles)}"

        failures = []
        panel_cache: dict[str, np.ndarray] = {}

        def pixels(ref_str: str) -> np.ndarray:
            if ref_str not in panel_cache:
                ref = PanelRef.parse(ref_str)
                path = dataset / "panels" / ref.group_id / f"{ref.name}.png"
                panel_cache[ref_str] = ImageBuf.load_png(path).pixels
            return panel_cache[ref_str]

        shuffled_answers: dict[str, list[str]] = {}
        for rec in puzzles:
            options = dict(rec["options"])
            answer_ref = options[rec["answer"]]
            group_c4 = f"{rec['group']}:c4"
            if answer_ref != group_c4 or not (pixels(answer_ref) == pixels(group_c4)).all():
                failures.append(f"{rec['id']}: answer does not decode to the 5th correct panel")
                break
            if rec["variant"] == "shuffled4":
                shuffled_answers.setdefault(rec["group"], []).append(rec["answer"])
            if rec["variant"] == "expanded10":
                if len(options) != 10:
                    failures.append(f"{rec['id']}: {len(options)} options")
                donor_groups = {
                    PanelRef.parse(r).group_id for r in options.values()
                } - {rec["group"]}
                if donor_groups != set(rec["provenance"]["donors"]) or len(donor_groups) != 2:
                    failures.append(f"{rec['id']}: donors {donor_groups}")
                hashes = [phash(ImageBuf(pixels(r))) for r in options.values()]
                for i in range(10):
                    for j in range(i + 1, 10):
                        if hamming(hashes[i], hashes[j]) < 10:
                            failures.append(f"{rec['id']}: options {i},{j} hash-collide")

        bad_coverage = [g for g, a in shuffled_answers.items() if sorted(a) != ["A", "B", "C", "D"]]
        if bad_coverage:
            failures.append(f"shuffled coverage broken for {len(bad_coverage)} groups")

        _report(
            7, not failures,
            f"{len(puzzles)} puzzles: answer decode bit-exact, shuffled covers ABCD, "
            "expanded options hash-distinct from exactly 2 donors"
            + ("" if not failures else "; " + "; ".join(failures[:3])),
        )


class TestCriterion8BinningSampling:
    def test_criterion_8_binning_and_sampling(self):
        boundary_bins = {
            0.0: Difficulty.HARD,
            0.25: Difficulty.MEDIUM,
            0.5: Difficulty.EASY,
            0.75: Difficulty.EASY,
        }
        bins_ok = all(
            bin_difficulty(AttributeRecord("b", Variant.DEFAULT4, 4, 4, p, 8)) is want
            for p, want in boundary_bins.items()
        )

        records = []
        for i in range(4000):
            variant = Variant.EXPANDED10 if i % 4 == 0 else Variant.DEFAULT4
            records.append(AttributeRecord(f"p{i:05d}", variant, 4, 4, 0.5, 8))
        ids = sample_training(records, 1000, np.random.default_rng(8))
        by_id = {r.puzzle_id: r for r in records}
        mix4 = sum(1 for i in ids if by_id[i].variant is Variant.DEFAULT4)
        mix10 = sum(1 for i in ids if by_id[i].variant is Variant.EXPANDED10)
        constraints_ok = all(
            0.375 <= by_id[i].pass_rate <= 0.875
            and by_id[i].readability + by_id[i].coherence >= 8
            for i in ids
        )
        mix_ok = (mix4, mix10) == (800, 200) and len(set(ids)) == 1000

        from puzzlegen.assembly import Puzzle

        puzzle = Puzzle(
            puzzle_id="rand-check",
            group_id="g",
            variant=Variant.DEFAULT4,
            stem=tuple(PanelRef("g", f"c{i}") for i in range(4)),
            options=tuple((l, PanelRef("g", "c4" if l == "A" else "x0")) for l in "ABCD"),
            answer="A",
            prompt="",
            rng_seed=0,
        )
        rate, k = pass_rate(puzzle, StubSolver("random"), 10_000, None, base_seed=88)
        sigma = (0.25 * 0.75 / 10_000) ** 0.5
        rate_ok = abs(rate - 0.25) < 3 * sigma

        ok = bins_ok and mix_ok and constraints_ok and rate_ok
        _report(
            8, ok,
            f"boundary bins exact: {bins_ok}; sample mix {mix4}/{mix10}; constraints per "
            f"element: {constraints_ok}; random solver rate {rate:.4f} within 3 sigma of 0.25",
        )


class TestCriterion9Determinism:
    def test_criterion_9_byte_identical_runs(self, e2e_run, tmp_path_factory):
        second = tmp_path_factory.mktemp("acceptance-e2e-2")
        _run_fixture_pipeline(second)
        a = _dataset_tree_digests(e2e_run / "out/dataset")
        b = _dataset_tree_digests(second / "out/dataset")
        ok = a == b
        _report(
            9, ok,
            f"two run-all invocations over {len(a)} exported files: "
            + ("byte-identical" if ok else "DIFFER"),
        )
