"""Contracts for the four AI-backed services plus deterministic stubs.

Four provider roles back the pipeline: a rule transformer (mutate,
crossover, abstract-to-program, score), a text embedder, a puzzle annotator,
and a puzzle solver. Production providers speak JSON over HTTP POST; the
stubs are pure functions of the request so every stage runs offline and
reproducibly.

Text providers exchange prompts rendered from the template assets in
``templates/`` and reply with tagged regions (``<mutated_rules>``,
``<crossover_rules>``, ``<format_score>``, ...) that the parse helpers
extract.
"""

from __future__ import annotations

import base64
import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Optional, Protocol, Sequence

import numpy as np


class RequestKind(str, Enum):
    MUTATE = "mutate"
    CROSSOVER = "crossover"
    ABSTRACT = "abstract"
    SCORE = "score"
    ANNOTATE = "annotate"
    SOLVE = "solve"
    EMBED = "embed"


_ATTACHMENT_KINDS = (RequestKind.ANNOTATE, RequestKind.SOLVE)


class ProviderError(RuntimeError):
    """Provider failed after exhausting its retry budget."""


class UnboundVariable(KeyError):
    """A template variable had no binding."""


class MissingTag(ValueError):
    """Expected tagged region absent from a provider response."""


class MalformedBullets(ValueError):
    """Tagged region did not contain a parseable bullet list."""


class ParseFailure(ValueError):
    """Response present but its structured fields could not be extracted."""


@dataclass(frozen=True)
class ProviderRequest:
    kind: RequestKind
    bindings: dict[str, str] = field(default_factory=dict)
    attachments: tuple[bytes, ...] = ()
    seed: int = 0  # determinism handle; stubs derive all randomness from it
    attempt: int = 0  # retry counter; stubs vary output across attempts

    def __post_init__(self):
        if self.attachments and self.kind not in _ATTACHMENT_KINDS:
            raise ValueError(f"attachments are only valid for annotate/solve, not {self.kind.value}")


@dataclass(frozen=True)
class ProviderResponse:
    raw: str
    usage: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Prompt rendering and tagged-response parsing

_TEMPLATE_FILES = {
    RequestKind.MUTATE: "mutate.txt",
    RequestKind.CROSSOVER: "crossover.txt",
    RequestKind.ABSTRACT: "abstract.txt",
    RequestKind.SCORE: "score.txt",
    RequestKind.ANNOTATE: "annotate.txt",
    RequestKind.SOLVE: "solve.txt",
}

_VAR_RE = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")


def load_template(kind: RequestKind) -> str:
    try:
        name = _TEMPLATE_FILES[kind]
    except KeyError:
        raise KeyError(f"no prompt template for kind {kind.value}") from None
    return resources.files("puzzlegen.templates").joinpath(name).read_text(encoding="utf-8")


def render_prompt(kind: RequestKind, bindings: dict[str, str]) -> str:
    """Byte-stable substitution of bindings into the stored template."""
    template = load_template(kind)

    def sub(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise UnboundVariable(name)
        return bindings[name]

    return _VAR_RE.sub(sub, template)


def parse_tagged(text: str, tag: str) -> str:
    """Innermost content of the first ``<tag>...</tag>`` pair."""
    open_t, close_t = f"<{tag}>", f"</{tag}>"
    start = text.find(open_t)
    if start < 0:
        raise MissingTag(f"<{tag}> not found in response")
    end = text.find(close_t, start + len(open_t))
    if end < 0:
        raise MissingTag(f"</{tag}> not found in response")
    inner = text.rfind(open_t, start + 1, end)
    if inner >= 0:
        start = inner
    return text[start + len(open_t):end].strip()


def parse_bullets(content: str) -> list[str]:
    """Split a tagged region into bullets on leading ``- `` markers."""
    bullets = []
    for line in content.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("- "):
            bullets.append(line[2:].strip())
        elif bullets:
            # continuation line: fold into the previous bullet
            bullets[-1] = f"{bullets[-1]} {line}"
        else:
            raise MalformedBullets(f"line outside any bullet: {line!r}")
    if not bullets:
        raise MalformedBullets("no '- ' bullets in tagged region")
    return bullets


def parse_score_tags(text: str) -> tuple[int, int, int]:
    """(format, content, feasibility) from a scoring response."""
    values = []
    for tag in ("format_score", "content_quality", "feasibility"):
        raw = parse_tagged(text, tag)
        m = re.search(r"[1-5]", raw)
        if not m:
            raise ParseFailure(f"no 1-5 score inside <{tag}>")
        values.append(int(m.group()))
    return tuple(values)  # type: ignore[return-value]


def parse_annotation_tags(text: str) -> tuple[int, int]:
    """(readability, coherence) from an annotation response."""
    values = []
    for tag in ("readability", "coherence"):
        raw = parse_tagged(text, tag)
        m = re.search(r"[1-5]", raw)
        if not m:
            raise ParseFailure(f"no 1-5 score inside <{tag}>")
        values.append(int(m.group()))
    return tuple(values)  # type: ignore[return-value]


_BOXED_RE = re.compile(r"\\boxed\{([A-Za-z])\}")


def parse_boxed_answer(text: str) -> str:
    m = _BOXED_RE.search(text)
    if not m:
        raise ParseFailure("no \\boxed{...} answer in solver response")
    return m.group(1).upper()


# ---------------------------------------------------------------------------
# Provider protocols


class TextProvider(Protocol):
    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _seed_from(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


# ---------------------------------------------------------------------------
# Deterministic stubs

_FILLER_BULLETS = (
    "Every panel keeps one consistent background with no stray marks",
    "Element spacing stays even so no shapes overlap or touch",
    "Panel borders and scale stay identical across the sequence",
    "Foreground elements stay fully inside the drawable area",
    "All panels share one drawing style from start to finish",
)

_REWRITE_PHRASES = (
    "with even spacing",
    "holding the layout steady",
    "while scale stays fixed",
    "keeping one shared style",
    "with margins preserved",
    "under a constant frame",
)


class StubTransformer:
    """Rule-based stand-in for the text transformer.

    Mutation applies one deterministic bullet edit; crossover interleaves
    parent bullets (first parent leading); abstraction emits a rule program
    from a fixed catalog. All variation derives from the request seed, and
    a nonzero attempt forces a different output than attempt 0, so retry
    loops never spin on identical content.
    """

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if request.kind is RequestKind.MUTATE:
            return ProviderResponse(self._mutate(request))
        if request.kind is RequestKind.CROSSOVER:
            return ProviderResponse(self._crossover(request))
        if request.kind is RequestKind.ABSTRACT:
            return ProviderResponse(self._abstract(request))
        if request.kind is RequestKind.SCORE:
            return ProviderResponse(
                "<format_score>4</format_score>\n<content_quality>4</content_quality>\n"
                "<feasibility>4</feasibility>"
            )
        raise ProviderError(f"stub transformer does not handle {request.kind.value}")

    def _mutate(self, request: ProviderRequest) -> str:
        bullets = parse_bullets(request.bindings["RULE_SET"])
        rng = np.random.default_rng(_seed_from("mutate", request.seed, request.attempt))
        ops = ["rewrite"]
        if len(bullets) < 6:
            ops.append("add")
        if len(bullets) > 4:
            ops.append("delete")
        op = ops[int(rng.integers(len(ops)))]
        out = list(bullets)
        if op == "rewrite":
            idx = int(rng.integers(len(out)))
            out[idx] = self._rewrite(out[idx], rng)
        elif op == "add":
            pool = [b for b in _FILLER_BULLETS if b not in out]
            insert = pool[int(rng.integers(len(pool)))] if pool else self._rewrite(out[0], rng)
            out.insert(int(rng.integers(len(out) + 1)), insert)
        else:
            del out[int(rng.integers(len(out)))]
        body = "\n".join(f"- {b}" for b in out)
        return f"<analysis>\napplied {op}\n</analysis>\n<mutated_rules>\n{body}\n</mutated_rules>"

    @staticmethod
    def _rewrite(bullet: str, rng: np.random.Generator) -> str:
        phrase = _REWRITE_PHRASES[int(rng.integers(len(_REWRITE_PHRASES)))]
        base = bullet.rstrip(". ")
        if base.endswith(tuple(_REWRITE_PHRASES)):
            base = base[: base.rfind(",")].rstrip(". ") if "," in base else base
        return f"{base}, {phrase}"

    def _crossover(self, request: ProviderRequest) -> str:
        a = parse_bullets(request.bindings["FIRST_RULE_SET"])
        b = parse_bullets(request.bindings["SECOND_RULE_SET"])
        n = max(min(max(len(a), len(b)), 6), 4)
        out = []
        for i in range(n):
            src = a if i % 2 == 0 else b
            other = b if i % 2 == 0 else a
            out.append(src[i] if i < len(src) else other[i % len(other)])
        if request.attempt > 0:
            rng = np.random.default_rng(_seed_from("crossover", request.seed, request.attempt))
            idx = (request.attempt - 1) % len(out)
            out[idx] = self._rewrite(out[idx], rng)
        body = "\n".join(f"- {x}" for x in out)
        return f"<synthesis>\ninterleaved parents\n</synthesis>\n<crossover_rules>\n{body}\n</crossover_rules>"

    def _abstract(self, request: ProviderRequest) -> str:
        cls_key = request.bindings.get("CLASS", "others")
        rng = np.random.default_rng(_seed_from("abstract", request.seed, request.attempt))
        program = _program_from_catalog(cls_key, rng)
        return f"<rule_program>\n{program}</rule_program>"


_LAYOUT_BY_CLASS_PREFIX = {
    "nsg": "grid3x3",
    "hsq": "seq5",
    "ana": "analogy",
    "two": "twogroup",
}


def _program_from_catalog(cls_key: str, rng: np.random.Generator) -> str:
    """One of a fixed set of valid rule programs, chosen by the rng."""
    layout = _LAYOUT_BY_CLASS_PREFIX.get(cls_key.split("-")[0], "seq5")
    size = ("small", "medium", "large")[int(rng.integers(3))]
    fill = ("solid", "hollow")[int(rng.integers(2))]
    kind = int(rng.integers(6))
    if kind == 0:
        entity = ("circle", "square", "triangle")[int(rng.integers(3))]
        start = 1 + int(rng.integers(3))
        step = 1 + int(rng.integers(2))
        body = [
            f"entity {entity} {size} {fill};",
            f"progress count arithmetic step {step} start {start};",
            "violate count_off;",
            "violate wrong_fill;",
            "violate order_swap;",
        ]
    elif kind == 1:
        entity = ("circle", "square", "composite")[int(rng.integers(3))]
        body = [
            f"entity {entity} {size} {fill};",
            "progress count geometric x2 every 2 start 1;",
            "violate count_off;",
            "violate wrong_fill;",
            "violate order_swap;",
        ]
    elif kind == 2:
        entity = ("triangle", "stick_figure")[int(rng.integers(2))]
        step = (-45, 45, 30, -30)[int(rng.integers(4))]
        body = [
            f"entity {entity} {size} solid;",
            f"progress rotation_deg arithmetic step {step} start 0;",
            "violate rotation_off;",
            "violate wrong_fill;",
            "violate order_swap;",
        ]
    elif kind == 3:
        entity = ("circle", "square", "triangle")[int(rng.integers(3))]
        start = 1 + int(rng.integers(2))
        body = [
            f"entity {entity} {size} solid;",
            f"progress count arithmetic step 1 start {start};",
            "progress shading toggle start 1;",
            "violate count_off;",
            "violate shading_flip;",
            "violate wrong_fill;",
        ]
    elif kind == 4:
        body = [
            f"entity line_group {size} solid;",
            "progress parallel_line_groups arithmetic step 1 start 1;",
            "violate groups_off;",
            "violate wrong_fill;",
            "violate order_swap;",
        ]
    else:
        dx = (0.12, -0.12)[int(rng.integers(2))]
        x0 = 0.22 if dx > 0 else 0.78
        entity = ("circle", "square", "stick_figure")[int(rng.integers(3))]
        size2 = ("medium", "large")[int(rng.integers(2))]
        body = [
            f"entity {entity} {size2} solid;",
            f"progress position shift dx {dx} dy 0 start {x0} 0.5;",
            "violate shift_off;",
            "violate wrong_fill;",
            "violate order_swap;",
        ]
    return "\n".join([f"layout {layout};"] + body) + "\n"


class StubEmbedder:
    """Hashes text into a stable pseudo-random unit vector."""

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dimension), dtype=np.float64)
        for i, text in enumerate(texts):
            rng = np.random.default_rng(_seed_from("embed", text))
            v = rng.standard_normal(self.dimension)
            out[i] = v / np.linalg.norm(v)
        return out


class StubAnnotator:
    """Returns configured constant scores."""

    def __init__(self, readability: int = 4, coherence: int = 4):
        self.readability = readability
        self.coherence = coherence

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if request.kind is not RequestKind.ANNOTATE:
            raise ProviderError(f"stub annotator does not handle {request.kind.value}")
        return ProviderResponse(
            f"<readability>\n{self.readability}\n</readability>\n"
            f"<coherence>\n{self.coherence}\n</coherence>"
        )


class StubSolver:
    """Oracle, uniform-random, adversarial, or noisy-oracle solver.

    The request only carries the sheet image and prompt. The non-random
    modes consult an answer table keyed by the sha256 of the sheet bytes,
    supplied at construction by the harness that knows the keys; the solve
    request itself never contains the answer. noisy_oracle answers
    correctly with probability ``accuracy``, which spreads pass rates
    across the difficulty bins the way a partially-trained model would.
    """

    MODES = ("oracle", "random", "adversarial", "noisy_oracle")

    def __init__(
        self,
        mode: str = "random",
        answer_by_sheet: Optional[dict[str, str]] = None,
        accuracy: float = 0.6,
    ):
        if mode not in self.MODES:
            raise ValueError(f"unknown solver mode {mode!r}")
        self.mode = mode
        self.answer_by_sheet = answer_by_sheet or {}
        self.accuracy = accuracy

    def _lookup(self, request: ProviderRequest) -> str:
        if not request.attachments:
            raise ProviderError(f"{self.mode} solver needs the sheet attachment")
        key = hashlib.sha256(request.attachments[0]).hexdigest()
        answer = self.answer_by_sheet.get(key)
        if answer is None:
            raise ProviderError("sheet not in the stub answer table")
        return answer

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        if request.kind is not RequestKind.SOLVE:
            raise ProviderError(f"stub solver does not handle {request.kind.value}")
        labels = [s.strip() for s in request.bindings["OPTION_LABELS"].split(",")]
        rng = np.random.default_rng(_seed_from("solve", request.seed, request.attempt))
        if self.mode == "random":
            pick = labels[int(rng.integers(len(labels)))]
        elif self.mode == "oracle":
            pick = self._lookup(request)
        elif self.mode == "adversarial":
            answer = self._lookup(request)
            pick = next(l for l in labels if l != answer)
        else:
            answer = self._lookup(request)
            if rng.random() < self.accuracy:
                pick = answer
            else:
                wrong = [l for l in labels if l != answer]
                pick = wrong[int(rng.integers(len(wrong)))]
        return ProviderResponse(f"The pattern continues as shown. \\boxed{{{pick}}}")


# ---------------------------------------------------------------------------
# HTTP providers (JSON over POST; no vendor SDKs)


class TokenBucket:
    """Simple rate limiter: ``rate`` requests per second, burst ``capacity``."""

    def __init__(self, rate: float, capacity: int):
        self.rate = rate
        self.capacity = capacity
        self.tokens = float(capacity)
        self.updated = time.monotonic()

    def acquire(self) -> None:
        while True:
            now = time.monotonic()
            self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
            self.updated = now
            if self.tokens >= 1:
                self.tokens -= 1
                return
            time.sleep((1 - self.tokens) / self.rate)


@dataclass
class HttpProviderConfig:
    endpoint: str
    model: str = ""
    api_key: str = ""
    timeout: float = 60.0
    retries: int = 3
    backoff: float = 0.25  # doubles per retry
    rate_per_sec: float = 0.0  # 0 disables rate limiting


class HttpTextProvider:
    """POSTs ``{kind, prompt, attachments, model}`` and expects ``{"text": ...}``."""

    def __init__(self, config: HttpProviderConfig):
        self.config = config
        self._bucket = (
            TokenBucket(config.rate_per_sec, max(1, int(config.rate_per_sec)))
            if config.rate_per_sec > 0
            else None
        )

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        prompt = render_prompt(request.kind, request.bindings)
        payload = {
            "kind": request.kind.value,
            "prompt": prompt,
            "model": self.config.model,
            "attachments": [base64.b64encode(a).decode("ascii") for a in request.attachments],
        }
        body = self._post(payload)
        if "text" not in body:
            raise ProviderError("provider response lacks a 'text' field")
        return ProviderResponse(raw=body["text"], usage=body.get("usage", {}))

    def _post(self, payload: dict) -> dict:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        delay = self.config.backoff
        last_error: Exception | None = None
        for _ in range(self.config.retries):
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                resp = requests.post(
                    self.config.endpoint,
                    data=json.dumps(payload),
                    headers=headers,
                    timeout=self.config.timeout,
                )
                if resp.status_code == 200:
                    return resp.json()
                last_error = ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            except Exception as exc:  # connection errors, bad JSON
                last_error = exc
            time.sleep(delay)
            delay *= 2
        raise ProviderError(f"provider call failed after {self.config.retries} attempts: {last_error}")


class HttpEmbedder(HttpTextProvider):
    """POSTs ``{kind: embed, texts}`` and expects ``{"vectors": [[...], ...]}``."""

    def __init__(self, config: HttpProviderConfig, dimension: int):
        super().__init__(config)
        self.dimension = dimension

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        body = self._post({"kind": "embed", "texts": list(texts), "model": self.config.model})
        if "vectors" not in body:
            raise ProviderError("embedder response lacks a 'vectors' field")
        arr = np.asarray(body["vectors"], dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(texts) or arr.shape[1] != self.dimension:
            raise ProviderError(f"embedder returned shape {arr.shape}, expected ({len(texts)}, {self.dimension})")
        return arr
