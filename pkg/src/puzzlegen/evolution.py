"""Island-model genetic algorithm over rule genomes.

Each rule class forms a subpopulation (island) that grows independently by
mutation and crossover through a text-transformer provider. Every few
generations a fraction of the combined population migrates to uniformly
chosen foreign islands. There is no fitness-driven selection here: parents
are drawn uniformly and every accepted child joins the pool; quality
filtering is a separate downstream stage.

Determinism: all stochastic choices flow from the config seed, and each
provider call gets a seed derived from (seed, generation, island, slot), so
identical inputs reproduce the identical pool byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .providers import (
    ProviderRequest,
    RequestKind,
    TextProvider,
    parse_bullets,
    parse_tagged,
)
from .rules import (
    LineageOp,
    Rule,
    RuleClass,
    make_rule,
    read_rules_jsonl,
    rule_from_record,
    rule_to_record,
    validate_rule,
)

# Aggregate growth target over the default 10 generations is 25x, so the
# per-generation island growth factor defaults to the 10th root of 25.
DEFAULT_GROWTH = 25.0 ** 0.1


class EvolutionError(RuntimeError):
    pass


class ChildRejected(RuntimeError):
    """No acceptable child within the retry budget."""


@dataclass
class Island:
    rule_class: RuleClass
    members: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise ValueError("island members must be unique")


@dataclass
class EvolutionConfig:
    generations: int = 10
    offspring_per_generation: float = DEFAULT_GROWTH  # island growth factor per generation
    migration_period: int = 3
    migration_rate: float = 0.10
    mutation_vs_crossover_mix: float = 0.5  # fraction of offspring made by mutation
    rng_seed: int = 0
    retry_budget: int = 3

    def __post_init__(self):
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 0.0 <= self.migration_rate <= 1.0:
            raise ValueError("migration_rate must be in [0, 1]")
        if self.migration_period < 1:
            raise ValueError("migration_period must be >= 1")
        if not 0.0 <= self.mutation_vs_crossover_mix <= 1.0:
            raise ValueError("mutation_vs_crossover_mix must be in [0, 1]")


def bullets_block(bullets) -> str:
    return "\n".join(f"- {b}" for b in bullets)


def bullet_edit_distance(a, b) -> int:
    """Levenshtein distance over bullet sequences (each edit = one bullet)."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def _derive_seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def mutate(
    parent: Rule,
    op: TextProvider,
    *,
    seed: int = 0,
    retry_budget: int = 3,
    reject: Optional[Callable[[Rule], bool]] = None,
) -> Rule:
    """One mutation child: same class, generation + 1, 1-2 bullets changed.

    Children failing validation (or the extra ``reject`` predicate) are
    discarded and the provider is retried with an incremented attempt
    counter, up to the budget. ProviderError propagates to the caller.
    """
    if not validate_rule(parent).ok:
        raise ValueError(f"parent {parent.id} fails validation")
    request = ProviderRequest(
        RequestKind.MUTATE, {"RULE_SET": bullets_block(parent.bullets)}, seed=seed
    )
    for attempt in range(retry_budget):
        resp = op.complete(ProviderRequest(request.kind, request.bindings, seed=seed, attempt=attempt))
        try:
            bullets = parse_bullets(parse_tagged(resp.raw, "mutated_rules"))
        except ValueError:
            continue
        child = make_rule(
            parent.rule_class, bullets, parent.generation + 1, [(parent.id, LineageOp.MUTATION)]
        )
        edits = bullet_edit_distance(parent.bullets, child.bullets)
        if validate_rule(child).ok and 1 <= edits <= 2 and not (reject and reject(child)):
            return child
    raise ChildRejected(f"mutation of {parent.id} failed {retry_budget} attempts")


def crossover(
    a: Rule,
    b: Rule,
    op: TextProvider,
    island: Island,
    *,
    seed: int = 0,
    retry_budget: int = 3,
    reject: Optional[Callable[[Rule], bool]] = None,
) -> Rule:
    """One crossover child of two members of the same island.

    The child records both parents and takes the island's class (after
    migration an island can host rules of foreign classes; their offspring
    belong to the island they were bred on).
    """
    for r in (a, b):
        if r.id not in island.members:
            raise ValueError(f"parent {r.id} is not on island {island.rule_class.key}")
    bindings = {
        "FIRST_RULE_SET": bullets_block(a.bullets),
        "SECOND_RULE_SET": bullets_block(b.bullets),
    }
    generation = max(a.generation, b.generation) + 1
    lineage = [(a.id, LineageOp.CROSSOVER), (b.id, LineageOp.CROSSOVER)]
    for attempt in range(retry_budget):
        resp = op.complete(ProviderRequest(RequestKind.CROSSOVER, bindings, seed=seed, attempt=attempt))
        try:
            bullets = parse_bullets(parse_tagged(resp.raw, "crossover_rules"))
        except ValueError:
            continue
        child = make_rule(island.rule_class, bullets, generation, lineage)
        if validate_rule(child).ok and not (reject and reject(child)):
            return child
    raise ChildRejected(f"crossover of {a.id} x {b.id} failed {retry_budget} attempts")


def migrate(islands: list[Island], rate: float, rng: np.random.Generator) -> list[Island]:
    """Move exactly floor(rate * total) rules, each to a uniform other island.

    Pure relocation: ids are conserved and rule content is untouched.
    Returns new Island objects; inputs are not mutated.
    """
    if len(islands) < 2:
        raise ValueError("migration needs at least 2 islands")
    members = [list(isl.members) for isl in islands]
    total = sum(len(m) for m in members)
    k = math.floor(rate * total)
    if k == 0:
        return [Island(isl.rule_class, list(isl.members)) for isl in islands]

    flat = [(i, j) for i, mem in enumerate(members) for j in range(len(mem))]
    picked = sorted(int(x) for x in rng.choice(len(flat), size=k, replace=False))
    moves = []  # (source island, member index, target island)
    for g in picked:
        src, j = flat[g]
        others = [i for i in range(len(islands)) if i != src]
        dst = others[int(rng.integers(len(others)))]
        moves.append((src, j, dst))
    # Remove from sources in descending member order so indices stay valid.
    outbound: list[tuple[str, int]] = []
    for src, j, dst in sorted(moves, key=lambda m: (m[0], -m[1])):
        outbound.append((members[src].pop(j), dst))
    # Reattach in original pick order for a stable layout.
    for rid, dst in sorted(outbound, key=lambda x: x[0]):
        members[dst].append(rid)
    return [Island(isl.rule_class, members[i]) for i, isl in enumerate(islands)]


@dataclass
class EvolutionResult:
    pool: dict[str, Rule]  # insertion-ordered: seeds first, then offspring
    islands: list[Island]
    skipped: int = 0  # offspring slots abandoned after retries
    migrations: list[tuple[int, int]] = field(default_factory=list)  # (generation, moved)

    @property
    def rules(self) -> list[Rule]:
        return list(self.pool.values())


def partition_seeds(seeds: list[Rule]) -> list[Island]:
    by_class: dict[str, Island] = {}
    for rule in seeds:
        key = rule.rule_class.key
        if key not in by_class:
            by_class[key] = Island(rule.rule_class, [])
        by_class[key].members.append(rule.id)
    return [by_class[k] for k in sorted(by_class)]


def evolve(
    seeds: list[Rule],
    cfg: EvolutionConfig,
    op: TextProvider,
    checkpoint_dir: str | Path | None = None,
    resume: bool = False,
) -> EvolutionResult:
    """Grow the seed pool by cfg.generations of island evolution.

    Every lineage chain terminates at a seed. Children whose
    content-addressed id collides with an existing pool member count as
    rejections and are retried. Aborts if migration empties an island.
    """
    bad = [s.id for s in seeds if not validate_rule(s).ok]
    if bad:
        raise ValueError(f"invalid seed rules: {', '.join(bad)}")
    if len({s.id for s in seeds}) != len(seeds):
        raise ValueError("duplicate seed ids")

    pool: dict[str, Rule] = {s.id: s for s in seeds}
    islands = partition_seeds(seeds)
    rng = np.random.default_rng(cfg.rng_seed)
    result = EvolutionResult(pool=pool, islands=islands)
    start_gen = 1

    if resume and checkpoint_dir is not None:
        loaded = load_latest_checkpoint(checkpoint_dir)
        if loaded is not None:
            gen, pool, islands, rng_state = loaded
            rng.bit_generator.state = rng_state
            result = EvolutionResult(pool=pool, islands=islands)
            start_gen = gen + 1

    for gen in range(start_gen, cfg.generations + 1):
        for island in result.islands:
            snapshot = list(island.members)
            m = len(snapshot)
            n_offspring = max(1, int(m * (cfg.offspring_per_generation - 1.0) + 0.5))
            accepted = []
            for slot in range(n_offspring):
                call_seed = _derive_seed(cfg.rng_seed, gen, island.rule_class.key, slot)
                use_mutation = rng.random() < cfg.mutation_vs_crossover_mix or m < 2
                try:
                    if use_mutation:
                        parent = result.pool[snapshot[int(rng.integers(m))]]
                        child = mutate(
                            parent, op, seed=call_seed,
                            retry_budget=cfg.retry_budget,
                            reject=lambda r: r.id in result.pool,
                        )
                    else:
                        ia, ib = int(rng.integers(m)), int(rng.integers(m))
                        child = crossover(
                            result.pool[snapshot[ia]], result.pool[snapshot[ib]], op, island,
                            seed=call_seed,
                            retry_budget=cfg.retry_budget,
                            reject=lambda r: r.id in result.pool,
                        )
                except ChildRejected:
                    result.skipped += 1
                    continue
                result.pool[child.id] = child
                accepted.append(child.id)
            island.members.extend(accepted)

        if (
            cfg.migration_rate > 0
            and len(result.islands) >= 2
            and gen % cfg.migration_period == 0
        ):
            before = sum(len(i.members) for i in result.islands)
            result.islands = migrate(result.islands, cfg.migration_rate, rng)
            moved = math.floor(cfg.migration_rate * before)
            result.migrations.append((gen, moved))
            empty = [i.rule_class.key for i in result.islands if not i.members]
            if empty:
                raise EvolutionError(f"islands emptied by migration: {', '.join(empty)}")

        if checkpoint_dir is not None:
            write_checkpoint(checkpoint_dir, gen, cfg, rng, result)

    return result


# ---------------------------------------------------------------------------
# Checkpoints: one JSONL file per generation, resumable


def _cfg_to_dict(cfg: EvolutionConfig) -> dict:
    return {
        "generations": cfg.generations,
        "offspring_per_generation": cfg.offspring_per_generation,
        "migration_period": cfg.migration_period,
        "migration_rate": cfg.migration_rate,
        "mutation_vs_crossover_mix": cfg.mutation_vs_crossover_mix,
        "rng_seed": cfg.rng_seed,
        "retry_budget": cfg.retry_budget,
    }


def write_checkpoint(
    checkpoint_dir: str | Path,
    generation: int,
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    result: EvolutionResult,
) -> Path:
    directory = Path(checkpoint_dir)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"gen_{generation:03d}.jsonl"
    header = {
        "kind": "header",
        "generation": generation,
        "config": _cfg_to_dict(cfg),
        "rng_state": rng.bit_generator.state,
        "islands": {i.rule_class.key: list(i.members) for i in result.islands},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rule in result.pool.values():
            fh.write(json.dumps(rule_to_record(rule), sort_keys=True) + "\n")
    return path


_CKPT_RE = re.compile(r"gen_(\d+)\.jsonl$")


def load_latest_checkpoint(checkpoint_dir: str | Path):
    """(generation, pool, islands, rng_state) of the newest checkpoint, or None."""
    directory = Path(checkpoint_dir)
    if not directory.is_dir():
        return None
    best: tuple[int, Path] | None = None
    for path in directory.iterdir():
        m = _CKPT_RE.search(path.name)
        if m:
            gen = int(m.group(1))
            if best is None or gen > best[0]:
                best = (gen, path)
    if best is None:
        return None
    gen, path = best
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        pool: dict[str, Rule] = {}
        for line in fh:
            line = line.strip()
            if line:
                rule = rule_from_record(json.loads(line))
                pool[rule.id] = rule
    from .rules import class_from_key

    islands = [
        Island(class_from_key(key), list(members))
        for key, members in sorted(header["islands"].items())
    ]
    return gen, pool, islands, header["rng_state"]


def lineage_roots(rule: Rule, pool: dict[str, Rule]) -> set[str]:
    """Ids of the generation-0 ancestors reachable from ``rule``."""
    roots: set[str] = set()
    stack = [rule]
    seen = set()
    while stack:
        r = stack.pop()
        if r.id in seen:
            continue
        seen.add(r.id)
        if not r.lineage:
            roots.add(r.id)
            continue
        for pid, _ in r.lineage:
            parent = pool.get(pid)
            if parent is None:
                raise EvolutionError(f"lineage of {rule.id} references unknown rule {pid}")
            stack.append(parent)
    return roots
