"""Stage orchestration: checkpointed, resumable, deterministic.

Stages run in a fixed order, each reading only upstream outputs:

    seed-import -> evolve -> filter -> render -> qc -> assemble
                -> annotate -> passrate -> sample -> stats

Every stage writes a completion marker recording digests of its outputs and
of the upstream marker; a stage refuses to run when its upstream marker is
missing or its recorded outputs changed on disk. Re-running a stage with
identical inputs rewrites byte-identical outputs (all randomness derives
from per-stage seeds), so markers double as resume points.

Export layout: ``<export>/dataset/{panels,sheets,records,manifest.json}``.
Intermediate JSONL checkpoints and markers live under the workdir.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import dedup as dedup_mod
from . import qc as qc_mod
from .assembly import (
    AssemblyResult,
    GroupInfo,
    PANEL_NAMES,
    PanelStore,
    Puzzle,
    Variant,
    assemble_all,
    compose_sheet,
)
from .config import PipelineConfig
from .imaging import ImageBuf
from .dataset import (
    AttributeRecord,
    DatasetManifest,
    annotate_puzzle,
    build_manifest,
    pass_rate,
    read_records_jsonl,
    write_records_jsonl,
)
from .dsl import parse_rule_program
from .evolution import evolve
from .providers import (
    HttpEmbedder,
    HttpProviderConfig,
    HttpTextProvider,
    RequestKind,
    ProviderRequest,
    StubAnnotator,
    StubEmbedder,
    StubSolver,
    StubTransformer,
    parse_tagged,
)
from .renderer import RenderConfig, StyleId, render_group, RenderError, save_group_panels
from .rules import Rule, read_rules_jsonl, rule_to_record, validate_rule, write_rules_jsonl

STAGES = [
    "seed-import",
    "evolve",
    "filter",
    "render",
    "qc",
    "assemble",
    "annotate",
    "passrate",
    "sample",
    "stats",
]

ANNOTATED_VARIANTS = (Variant.DEFAULT4, Variant.EXPANDED10)


class StageError(RuntimeError):
    pass


class UpstreamError(StageError):
    """Upstream checkpoint missing or stale."""


@dataclass
class Providers:
    transformer: object
    embedder: object
    annotator: object
    solver_factory: Callable[[Optional[dict]], object]  # answer table -> solver


def build_providers(cfg: PipelineConfig) -> Providers:
    p = cfg.providers
    if p.stub:
        return Providers(
            transformer=StubTransformer(),
            embedder=StubEmbedder(p.embed_dimension),
            annotator=StubAnnotator(p.annotator_readability, p.annotator_coherence),
            solver_factory=lambda answers: StubSolver(p.solver_mode, answers, p.solver_accuracy),
        )
    http = HttpProviderConfig(
        endpoint=p.endpoint, model=p.model, api_key=p.api_key, rate_per_sec=p.rate_per_sec
    )
    return Providers(
        transformer=HttpTextProvider(http),
        embedder=HttpEmbedder(http, p.embed_dimension),
        annotator=HttpTextProvider(http),
        solver_factory=lambda answers: HttpTextProvider(http),
    )


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.providers = build_providers(cfg)
        self.workdir = cfg.workdir
        self.dataset_dir = cfg.export_dir / "dataset"
        self.markers_dir = self.workdir / "markers"

    # -- paths ------------------------------------------------------------

    @property
    def seeds_file(self) -> Path:
        return self.workdir / "seeds.jsonl"

    @property
    def pool_file(self) -> Path:
        return self.workdir / "pool.jsonl"

    @property
    def dedup_file(self) -> Path:
        return self.workdir / "dedup.jsonl"

    @property
    def retained_file(self) -> Path:
        return self.workdir / "retained.jsonl"

    @property
    def groups_file(self) -> Path:
        return self.workdir / "groups.jsonl"

    @property
    def qc_file(self) -> Path:
        return self.workdir / "qc.jsonl"

    @property
    def panels_dir(self) -> Path:
        return self.dataset_dir / "panels"

    @property
    def sheets_dir(self) -> Path:
        return self.dataset_dir / "sheets"

    @property
    def records_dir(self) -> Path:
        return self.dataset_dir / "records"

    @property
    def puzzles_file(self) -> Path:
        return self.records_dir / "puzzles.jsonl"

    @property
    def skips_file(self) -> Path:
        return self.workdir / "assembly_skips.jsonl"

    @property
    def annotations_file(self) -> Path:
        return self.workdir / "annotations.jsonl"

    @property
    def attributes_file(self) -> Path:
        return self.records_dir / "attributes.jsonl"

    @property
    def sample_file(self) -> Path:
        return self.records_dir / "training_sample.json"

    @property
    def manifest_file(self) -> Path:
        return self.dataset_dir / "manifest.json"

    # -- markers ----------------------------------------------------------

    def _marker_path(self, stage: str) -> Path:
        return self.markers_dir / f"{stage}.json"

    @staticmethod
    def _digest_file(path: Path) -> str:
        h = hashlib.sha256()
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()

    def _rel_key(self, path: Path) -> str:
        """Marker key relative to a config root (workdir, export, or the
        seeds directory), so a relocated workspace still validates against
        its own files."""
        for tag, base in (
            ("work", self.workdir),
            ("export", self.cfg.export_dir),
            ("src", self.cfg.seeds_path.parent),
        ):
            try:
                return f"{tag}:{path.relative_to(base)}"
            except ValueError:
                continue
        return f"abs:{path}"

    def _key_path(self, key: str) -> Path:
        tag, _, rest = key.partition(":")
        if tag == "work":
            return self.workdir / rest
        if tag == "export":
            return self.cfg.export_dir / rest
        if tag == "src":
            return self.cfg.seeds_path.parent / rest
        return Path(rest)

    def _write_marker(self, stage: str, outputs: list[Path]) -> None:
        digests: dict[str, str] = {}
        for out in outputs:
            if out.is_dir():
                for path in sorted(out.rglob("*")):
                    if path.is_file():
                        digests[self._rel_key(path)] = self._digest_file(path)
            elif out.is_file():
                digests[self._rel_key(out)] = self._digest_file(out)
        upstream = ""
        idx = STAGES.index(stage)
        if idx > 0:
            upstream_path = self._marker_path(STAGES[idx - 1])
            if upstream_path.exists():
                upstream = self._digest_file(upstream_path)
        self.markers_dir.mkdir(parents=True, exist_ok=True)
        marker = {"stage": stage, "outputs": digests, "upstream": upstream}
        self._marker_path(stage).write_text(json.dumps(marker, sort_keys=True), encoding="utf-8")

    def _marker_valid(self, stage: str) -> bool:
        path = self._marker_path(stage)
        if not path.exists():
            return False
        marker = json.loads(path.read_text(encoding="utf-8"))
        # a rewritten upstream marker (even two stages back, transitively)
        # invalidates this one unless the rewrite was byte-identical
        idx = STAGES.index(stage)
        if idx > 0:
            upstream_path = self._marker_path(STAGES[idx - 1])
            upstream = self._digest_file(upstream_path) if upstream_path.exists() else ""
            if marker.get("upstream", "") != upstream:
                return False
        for key, digest in marker["outputs"].items():
            p = self._key_path(key)
            if not p.is_file() or self._digest_file(p) != digest:
                return False
        return True

    def check_upstream(self, stage: str) -> None:
        idx = STAGES.index(stage)
        if idx == 0:
            return
        prev = STAGES[idx - 1]
        if not self._marker_path(prev).exists():
            raise UpstreamError(f"stage {stage!r} needs {prev!r} to run first")
        if not self._marker_valid(prev):
            raise UpstreamError(f"upstream checkpoint for {prev!r} is stale; re-run it")

    # -- stages -----------------------------------------------------------

    def run_stage(self, stage: str, resume: bool = False) -> dict:
        if stage not in STAGES:
            raise StageError(f"unknown stage {stage!r} (expected one of {', '.join(STAGES)})")
        self.check_upstream(stage)
        if resume and self._marker_valid(stage):
            return {"stage": stage, "skipped": True}
        self.workdir.mkdir(parents=True, exist_ok=True)
        runner = getattr(self, "stage_" + stage.replace("-", "_"))
        summary = runner()
        summary["stage"] = stage
        return summary

    def run_all(self, resume: bool = False) -> list[dict]:
        return [self.run_stage(stage, resume=resume) for stage in STAGES]

    def stage_seed_import(self) -> dict:
        seeds = list(read_rules_jsonl(self.cfg.seeds_path))
        bad = [s.id for s in seeds if not validate_rule(s).ok]
        if bad:
            raise StageError(f"invalid seed rules: {', '.join(bad)}")
        if len({s.id for s in seeds}) != len(seeds):
            raise StageError("duplicate seed rule ids")
        if not seeds:
            raise StageError("no seed rules found")
        write_rules_jsonl(self.seeds_file, seeds)
        # cover the source file too, so edits to it invalidate the chain
        self._write_marker("seed-import", [self.seeds_file, Path(self.cfg.seeds_path)])
        return {"seeds": len(seeds)}

    def stage_evolve(self) -> dict:
        seeds = list(read_rules_jsonl(self.seeds_file))
        result = evolve(
            seeds,
            self.cfg.evolution,
            self.providers.transformer,
            checkpoint_dir=self.workdir / "evolution",
        )
        write_rules_jsonl(self.pool_file, result.rules)
        self._write_marker("evolve", [self.pool_file])
        return {"pool": len(result.pool), "skipped_offspring": result.skipped}

    def stage_filter(self) -> dict:
        pool = sorted(read_rules_jsonl(self.pool_file), key=lambda r: r.id)
        ids = [r.id for r in pool]
        texts = ["\n".join(r.bullets) for r in pool]
        vectors = self.providers.embedder.embed(texts)
        report = dedup_mod.dedup(ids, vectors, self.cfg.dedup_threshold)
        self.dedup_file.write_text(report.to_jsonl(), encoding="utf-8")
        kept_ids = set(report.kept)
        seed_base = self.cfg.stage_seed("filter")
        scored: list[Rule] = []
        for rule in pool:
            if rule.id not in kept_ids:
                continue
            program = self._abstract_program(rule, seed_base)
            triple = dedup_mod.rubric_score_dsl(rule, program)
            scored.append(rule.with_program(program).with_scores(triple))
        retained = dedup_mod.filter_by_score(scored)
        write_rules_jsonl(self.retained_file, retained)
        self._write_marker("filter", [self.dedup_file, self.retained_file])
        return {
            "deduped": len(report.removed),
            "scored": len(scored),
            "retained": len(retained),
        }

    def _abstract_program(self, rule: Rule, seed_base: int) -> str:
        request = ProviderRequest(
            RequestKind.ABSTRACT,
            bindings={
                "CLASS": rule.rule_class.key,
                "RULE_SET": "\n".join(f"- {b}" for b in rule.bullets),
            },
            seed=(seed_base + int(rule.id[:8], 16)) % (2 ** 63),
        )
        response = self.providers.transformer.complete(request)
        return parse_tagged(response.raw, "rule_program")

    def stage_render(self) -> dict:
        retained = sorted(read_rules_jsonl(self.retained_file), key=lambda r: r.id)
        seed_base = self.cfg.stage_seed("render")
        jobs = [
            (
                rule.id,
                rule.program,
                style,
                (seed_base + int(rule.id[:8], 16) + si) % (2 ** 31),
                self.cfg.render,
                str(self.panels_dir),
            )
            for rule in retained
            for si, style in enumerate(self.cfg.styles)
        ]
        rows: list[dict] = []
        if self.cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=self.cfg.workers) as pool:
                for row in pool.map(_render_job, jobs, chunksize=8):
                    rows.append(row)
        else:
            rows = [_render_job(job) for job in jobs]
        rows.sort(key=lambda r: (r["rule_id"], r["style"]))
        with open(self.groups_file, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        rendered = [r for r in rows if r["ok"]]
        self._write_marker("render", [self.groups_file, self.panels_dir])
        per_style = {s.value: 0 for s in self.cfg.styles}
        for r in rendered:
            per_style[r["style"]] += 1
        return {"rendered": len(rendered), "failures": len(rows) - len(rendered), "per_style": per_style}

    def stage_qc(self) -> dict:
        rows = _read_jsonl(self.groups_file)
        verdicts = []
        for row in rows:
            if not row["ok"]:
                continue
            panels = [
                ImageBuf.load_png(self.panels_dir / row["group_id"] / f"{name}.png")
                for name in PANEL_NAMES
            ]
            verdict = qc_mod.qc_group(panels, self.cfg.qc)
            hashes = {name: qc_mod.phash(p).bits for name, p in zip(PANEL_NAMES, panels)}
            verdicts.append(
                {
                    "group_id": row["group_id"],
                    "rule_id": row["rule_id"],
                    "style": row["style"],
                    "accepted": verdict.accepted,
                    "reasons": [r.to_record() for r in verdict.reasons],
                    "phashes": {k: str(v) for k, v in hashes.items()},
                }
            )
        verdicts.sort(key=lambda v: v["group_id"])
        with open(self.qc_file, "w", encoding="utf-8") as fh:
            for v in verdicts:
                fh.write(json.dumps(v, sort_keys=True) + "\n")
        self._write_marker("qc", [self.qc_file])
        accepted = sum(1 for v in verdicts if v["accepted"])
        return {"groups": len(verdicts), "accepted": accepted}

    def _load_group_infos(self) -> list[GroupInfo]:
        return [
            GroupInfo(
                group_id=v["group_id"],
                rule_id=v["rule_id"],
                style=StyleId(v["style"]),
                accepted=v["accepted"],
                phashes={k: int(h) for k, h in v["phashes"].items()},
            )
            for v in _read_jsonl(self.qc_file)
        ]

    def stage_assemble(self) -> dict:
        infos = self._load_group_infos()
        pool = {r.id: r for r in read_rules_jsonl(self.pool_file)}
        result = assemble_all(
            infos, pool, self.cfg.stage_seed("assemble") % (2 ** 63), self.cfg.qc.duplicate_hamming
        )
        store = PanelStore(self.panels_dir)
        self.records_dir.mkdir(parents=True, exist_ok=True)
        with open(self.puzzles_file, "w", encoding="utf-8") as fh:
            for puzzle in result.puzzles:
                sheet = compose_sheet(puzzle, store)
                sheet.save_png(self.sheets_dir / f"{puzzle.puzzle_id}.png")
                rec = puzzle.to_record()
                rec["sheet"] = f"sheets/{puzzle.puzzle_id}.png"
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        with open(self.skips_file, "w", encoding="utf-8") as fh:
            for group_id, reason in result.expanded_skips:
                fh.write(json.dumps({"group": group_id, "reason": reason}) + "\n")
        self._write_marker("assemble", [self.puzzles_file, self.skips_file, self.sheets_dir])
        return {"puzzles": len(result.puzzles), "expanded_skips": len(result.expanded_skips), **result.by_variant()}

    def _load_puzzles(self) -> list[Puzzle]:
        return [Puzzle.from_record(rec) for rec in _read_jsonl(self.puzzles_file)]

    def stage_annotate(self) -> dict:
        puzzles = [p for p in self._load_puzzles() if p.variant in ANNOTATED_VARIANTS]
        puzzles.sort(key=lambda p: p.puzzle_id)
        seed = self.cfg.stage_seed("annotate")
        rows = []
        for puzzle in puzzles:
            sheet_bytes = (self.sheets_dir / f"{puzzle.puzzle_id}.png").read_bytes()
            readability, coherence = annotate_puzzle(
                puzzle, self.providers.annotator, sheet_bytes, base_seed=seed
            )
            rows.append(
                {"puzzle_id": puzzle.puzzle_id, "readability": readability, "coherence": coherence}
            )
        with open(self.annotations_file, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
        self._write_marker("annotate", [self.annotations_file])
        return {"annotated": len(rows)}

    def stage_passrate(self) -> dict:
        puzzles = self._load_puzzles()
        measured = sorted(
            (p for p in puzzles if p.variant in ANNOTATED_VARIANTS), key=lambda p: p.puzzle_id
        )
        annotations = {r["puzzle_id"]: r for r in _read_jsonl(self.annotations_file)}
        answers = None
        if self.cfg.providers.solver_mode != "random":
            answers = {}
            for p in measured:
                sheet = (self.sheets_dir / f"{p.puzzle_id}.png").read_bytes()
                answers[hashlib.sha256(sheet).hexdigest()] = p.answer
        solver = self.providers.solver_factory(answers)
        seed = self.cfg.stage_seed("passrate")
        by_id: dict[str, AttributeRecord] = {}
        for puzzle in measured:
            sheet_bytes = (self.sheets_dir / f"{puzzle.puzzle_id}.png").read_bytes()
            rate, attempts = pass_rate(
                puzzle, solver, self.cfg.sampler.attempts, sheet_bytes, base_seed=seed
            )
            ann = annotations[puzzle.puzzle_id]
            by_id[puzzle.puzzle_id] = AttributeRecord(
                puzzle_id=puzzle.puzzle_id,
                variant=puzzle.variant,
                readability=ann["readability"],
                coherence=ann["coherence"],
                pass_rate=rate,
                attempts=attempts,
            )
        # Shuffled variants share their group's stem and options, so they
        # inherit the default puzzle's measurements.
        records = list(by_id.values())
        for puzzle in puzzles:
            if puzzle.variant is Variant.SHUFFLED4:
                base = by_id.get(f"{puzzle.group_id}-d0")
                if base is None:
                    continue
                records.append(
                    AttributeRecord(
                        puzzle_id=puzzle.puzzle_id,
                        variant=puzzle.variant,
                        readability=base.readability,
                        coherence=base.coherence,
                        pass_rate=base.pass_rate,
                        attempts=base.attempts,
                    )
                )
        records.sort(key=lambda r: r.puzzle_id)
        self.records_dir.mkdir(parents=True, exist_ok=True)
        write_records_jsonl(self.attributes_file, records)
        self._write_marker("passrate", [self.attributes_file])
        return {"measured": len(measured), "records": len(records)}

    def stage_sample(self) -> dict:
        from .dataset import sample_training

        records = list(read_records_jsonl(self.attributes_file))
        rng = np.random.default_rng(self.cfg.stage_seed("sample") % (2 ** 32))
        ids = sample_training(records, self.cfg.sampler.n, rng)
        payload = {"n": self.cfg.sampler.n, "ids": ids}
        self.sample_file.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        self._write_marker("sample", [self.sample_file])
        return {"sampled": len(ids)}

    def stage_stats(self) -> dict:
        seeds = sum(1 for _ in read_rules_jsonl(self.seeds_file))
        generated = sum(1 for _ in read_rules_jsonl(self.pool_file))
        retained = sum(1 for _ in read_rules_jsonl(self.retained_file))
        group_rows = _read_jsonl(self.groups_file)
        per_style = {s.value: 0 for s in self.cfg.styles}
        for row in group_rows:
            if row["ok"]:
                per_style[row["style"]] += 1
        qc_rows = _read_jsonl(self.qc_file)
        accepted = sum(1 for v in qc_rows if v["accepted"])
        puzzles = _read_jsonl(self.puzzles_file)
        by_variant = {v.value: 0 for v in Variant}
        for p in puzzles:
            by_variant[p["variant"]] += 1
        records = list(read_records_jsonl(self.attributes_file))

        files: dict = {
            "records": {
                "puzzles": "records/puzzles.jsonl",
                "attributes": "records/attributes.jsonl",
                "training_sample": "records/training_sample.json",
            },
            "panels": {},
            "sheets": {},
        }
        for row in group_rows:
            if row["ok"]:
                files["panels"][row["group_id"]] = [
                    f"panels/{row['group_id']}/{name}.png" for name in PANEL_NAMES
                ]
        for p in puzzles:
            files["sheets"][p["id"]] = p["sheet"]

        manifest = build_manifest(
            seeds=seeds,
            generated=generated,
            retained=retained,
            groups_per_style=per_style,
            accepted_groups=accepted,
            puzzles_by_variant=by_variant,
            records=records,
            files=files,
        )
        self.manifest_file.write_text(manifest.to_json(), encoding="utf-8")
        self._write_marker("stats", [self.manifest_file])
        return {"total_puzzles": manifest.counts["total_puzzles"], "accepted_groups": accepted}


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _render_job(job: tuple) -> dict:
    """Render one (rule, style) group and persist its panels.

    Module-level so worker processes can pickle it; output is a plain dict
    keyed for deterministic post-sort.
    """
    rule_id, program_text, style, seed, render_cfg, panels_root = job
    try:
        program = parse_rule_program(program_text)
        group = render_group(program, style, seed, rule_id=rule_id, config=render_cfg)
        save_group_panels(group, panels_root)
        return {
            "group_id": group.group_id,
            "rule_id": rule_id,
            "style": style.value,
            "ok": True,
            "error": "",
        }
    except (RenderError, ValueError) as exc:
        return {
            "group_id": f"{rule_id}-{style.value}",
            "rule_id": rule_id,
            "style": style.value,
            "ok": False,
            "error": str(exc),
        }
