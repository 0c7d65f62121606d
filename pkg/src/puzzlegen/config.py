"""Pipeline configuration: one TOML file, environment overrides for secrets.

A single global seed fans out to per-stage seeds through a documented
derivation (sha256 of ``"<seed>/<stage>"``), so any stage can be re-run in
isolation and reproduce its output bit for bit.
"""

from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .evolution import EvolutionConfig
from .qc import QcThresholds
from .renderer import ALL_STYLES, RenderConfig, StyleId


class ConfigError(ValueError):
    pass


@dataclass
class ProviderSettings:
    stub: bool = True
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    embed_dimension: int = 64
    solver_mode: str = "random"  # oracle | random | adversarial | noisy_oracle
    solver_accuracy: float = 0.6  # noisy_oracle only
    annotator_readability: int = 4
    annotator_coherence: int = 4
    rate_per_sec: float = 0.0


@dataclass
class SamplerSettings:
    n: int = 8
    attempts: int = 8


@dataclass
class PipelineConfig:
    seeds_path: Path
    workdir: Path
    export_dir: Path
    rng_seed: int = 0
    workers: int = 1
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    dedup_threshold: float = 0.05
    render: RenderConfig = field(default_factory=RenderConfig)
    styles: tuple[StyleId, ...] = ALL_STYLES
    qc: QcThresholds = field(default_factory=QcThresholds)
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    providers: ProviderSettings = field(default_factory=ProviderSettings)

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.rng_seed}/{stage}".encode()).digest()
        return int.from_bytes(digest[:8], "big")

    def validate(self) -> None:
        if not 0 <= self.evolution.migration_rate <= 1:
            raise ConfigError("evolution.migration_rate must be in [0, 1]")
        if self.dedup_threshold < 0:
            raise ConfigError("dedup.threshold must be >= 0")
        if self.qc.duplicate_hamming < 0 or self.qc.duplicate_hamming > 64:
            raise ConfigError("qc.duplicate_hamming must be in [0, 64]")
        if not 0 <= self.qc.blank_ssim <= 1:
            raise ConfigError("qc.blank_ssim must be in [0, 1]")
        if self.qc.min_gradient_energy < 0:
            raise ConfigError("qc.min_gradient_energy must be >= 0")
        if self.render.panel_size < 32:
            raise ConfigError("render.panel_size must be >= 32")
        if self.render.placement not in ("jittered", "shared"):
            raise ConfigError("render.placement must be 'jittered' or 'shared'")
        if self.sampler.n < 1 or self.sampler.attempts < 1:
            raise ConfigError("sampler.n and sampler.attempts must be >= 1")
        if self.providers.solver_mode not in ("oracle", "random", "adversarial", "noisy_oracle"):
            raise ConfigError(
                "providers.solver_mode must be oracle/random/adversarial/noisy_oracle"
            )
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not self.providers.stub and not self.providers.endpoint:
            raise ConfigError("non-stub providers need an endpoint")


def _styles_from(names: list[str]) -> tuple[StyleId, ...]:
    try:
        return tuple(StyleId(n) for n in names)
    except ValueError as exc:
        raise ConfigError(f"unknown style: {exc}") from None


def load_config(path: str | Path) -> PipelineConfig:
    """Parse the TOML config; PUZZLEGEN_ENDPOINT / PUZZLEGEN_API_KEY /
    PUZZLEGEN_MODEL environment variables override provider credentials."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}")

    try:
        paths = data["paths"]
        base = path.parent
        cfg = PipelineConfig(
            seeds_path=(base / paths["seeds"]).resolve(),
            workdir=(base / paths["workdir"]).resolve(),
            export_dir=(base / paths["export"]).resolve(),
        )
    except KeyError as exc:
        raise ConfigError(f"missing required [paths] key: {exc}")

    run = data.get("run", {})
    cfg.rng_seed = int(run.get("rng_seed", 0))
    cfg.workers = int(run.get("workers", 1))

    if "evolution" in data:
        e = data["evolution"]
        cfg.evolution = EvolutionConfig(
            generations=int(e.get("generations", 10)),
            offspring_per_generation=float(e.get("offspring_per_generation", 25.0 ** 0.1)),
            migration_period=int(e.get("migration_period", 3)),
            migration_rate=float(e.get("migration_rate", 0.10)),
            mutation_vs_crossover_mix=float(e.get("mutation_vs_crossover_mix", 0.5)),
            rng_seed=cfg.stage_seed("evolve") % (2 ** 32),
            retry_budget=int(e.get("retry_budget", 3)),
        )
    else:
        cfg.evolution.rng_seed = cfg.stage_seed("evolve") % (2 ** 32)

    cfg.dedup_threshold = float(data.get("dedup", {}).get("threshold", 0.05))

    if "render" in data:
        r = data["render"]
        cfg.render = RenderConfig(
            panel_size=int(r.get("panel_size", 256)),
            margin_fraction=float(r.get("margin_fraction", 0.08)),
            supersample=int(r.get("supersample", 2)),
            placement=str(r.get("placement", "jittered")),
        )
        if "styles" in r:
            cfg.styles = _styles_from(list(r["styles"]))

    if "qc" in data:
        q = data["qc"]
        cfg.qc = QcThresholds(
            duplicate_hamming=int(q.get("duplicate_hamming", 10)),
            blank_ssim=float(q.get("blank_ssim", 0.98)),
            blank_foreground_fraction=float(q.get("blank_foreground_fraction", 0.005)),
            min_gradient_energy=float(q.get("min_gradient_energy", 1e-4)),
            literal_blank_below=q.get("literal_blank_below"),
        )

    if "sampler" in data:
        s = data["sampler"]
        cfg.sampler = SamplerSettings(
            n=int(s.get("n", 8)),
            attempts=int(s.get("attempts", 8)),
        )

    if "providers" in data:
        p = data["providers"]
        cfg.providers = ProviderSettings(
            stub=bool(p.get("stub", True)),
            endpoint=str(p.get("endpoint", "")),
            model=str(p.get("model", "")),
            api_key=str(p.get("api_key", "")),
            embed_dimension=int(p.get("embed_dimension", 64)),
            solver_mode=str(p.get("solver_mode", "random")),
            solver_accuracy=float(p.get("solver_accuracy", 0.6)),
            annotator_readability=int(p.get("annotator_readability", 4)),
            annotator_coherence=int(p.get("annotator_coherence", 4)),
            rate_per_sec=float(p.get("rate_per_sec", 0.0)),
        )

    cfg.providers.endpoint = os.environ.get("PUZZLEGEN_ENDPOINT", cfg.providers.endpoint)
    cfg.providers.api_key = os.environ.get("PUZZLEGEN_API_KEY", cfg.providers.api_key)
    cfg.providers.model = os.environ.get("PUZZLEGEN_MODEL", cfg.providers.model)

    cfg.validate()
    return cfg
