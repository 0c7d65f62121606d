"""Image-group quality control.

Three checks gate every 8-panel group: near-duplicate panels by perceptual
hash, contentless panels by structural similarity against a white reference
(plus a foreground-pixel floor), and low-detail panels by gradient energy.
A group is accepted iff no check fires on any panel.

The heavy per-pixel work lives in puzzlegen.kernels (compiled when
available). Exact kernel conventions are pinned in docs/qc-kernels.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import kernels
from .imaging import ImageBuf


@dataclass(frozen=True)
class PHash:
    bits: int  # unsigned 64-bit value

    def __post_init__(self):
        if not 0 <= self.bits < (1 << 64):
            raise ValueError("pHash must fit in 64 bits")


def phash(img: ImageBuf) -> PHash:
    return PHash(kernels.phash64(kernels.grayscale(img.pixels)))


def hamming(a: PHash, b: PHash) -> int:
    return (a.bits ^ b.bits).bit_count()


def ssim_vs_white(img: ImageBuf) -> float:
    return kernels.ssim_vs_white(kernels.grayscale(img.pixels))


def gradient_energy(img: ImageBuf) -> float:
    if img.width < 2 or img.height < 2:
        raise ValueError("gradient energy needs at least a 2x2 image")
    return kernels.gradient_energy(kernels.grayscale(img.pixels))


def foreground_fraction(img: ImageBuf, tolerance: float = 12.0) -> float:
    """Fraction of pixels deviating from the border-estimated background."""
    gray = kernels.grayscale(img.pixels)
    border = np.concatenate([gray[0, :], gray[-1, :], gray[1:-1, 0], gray[1:-1, -1]])
    background = float(np.median(border))
    return float(np.mean(np.abs(gray - background) > tolerance))


@dataclass(frozen=True)
class DuplicatePair:
    panel_a: int
    panel_b: int
    distance: int

    def to_record(self) -> dict:
        return {"kind": "duplicate_pair", "panel_a": self.panel_a, "panel_b": self.panel_b,
                "distance": self.distance}


@dataclass(frozen=True)
class Blank:
    panel: int
    score: float

    def to_record(self) -> dict:
        return {"kind": "blank", "panel": self.panel, "score": self.score}


@dataclass(frozen=True)
class LowDetail:
    panel: int
    energy: float

    def to_record(self) -> dict:
        return {"kind": "low_detail", "panel": self.panel, "energy": self.energy}


QcReason = Union[DuplicatePair, Blank, LowDetail]


@dataclass
class QcVerdict:
    accepted: bool
    reasons: list[QcReason] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"accepted": self.accepted, "reasons": [r.to_record() for r in self.reasons]}

    @staticmethod
    def from_record(rec: dict) -> "QcVerdict":
        reasons: list[QcReason] = []
        for r in rec["reasons"]:
            if r["kind"] == "duplicate_pair":
                reasons.append(DuplicatePair(r["panel_a"], r["panel_b"], r["distance"]))
            elif r["kind"] == "blank":
                reasons.append(Blank(r["panel"], r["score"]))
            else:
                reasons.append(LowDetail(r["panel"], r["energy"]))
        return QcVerdict(rec["accepted"], reasons)


@dataclass
class QcThresholds:
    """Panel-level QC knobs.

    A panel counts as blank when its SSIM against white is at least
    ``blank_ssim`` (near-identical to an empty sheet) or almost no pixel
    departs from the background. Setting ``literal_blank_below`` switches to
    the raw comparator ``ssim < value`` instead, for configurations that
    want low-similarity flagging.
    """

    duplicate_hamming: int = 10  # pairs strictly below are duplicates
    blank_ssim: float = 0.98
    blank_foreground_fraction: float = 0.005
    min_gradient_energy: float = 1e-4
    literal_blank_below: Optional[float] = None


def qc_group(panels: list[ImageBuf], thresholds: QcThresholds = QcThresholds()) -> QcVerdict:
    """Verdict over a group's 8 panels (5 correct then 3 incorrect).

    Every failing pair/panel is reported, not just the first. Panels far
    apart in hash space are fine: distance only rejects when it falls below
    the duplicate threshold.
    """
    if len(panels) != 8:
        raise ValueError(f"a group has exactly 8 panels, got {len(panels)}")
    reasons: list[QcReason] = []
    hashes = [phash(p) for p in panels]
    for i in range(len(panels)):
        for j in range(i + 1, len(panels)):
            d = hamming(hashes[i], hashes[j])
            if d < thresholds.duplicate_hamming:
                reasons.append(DuplicatePair(i, j, d))
    for i, panel in enumerate(panels):
        score = ssim_vs_white(panel)
        if thresholds.literal_blank_below is not None:
            blank = score < thresholds.literal_blank_below
        else:
            blank = (
                score >= thresholds.blank_ssim
                or foreground_fraction(panel) < thresholds.blank_foreground_fraction
            )
        if blank:
            reasons.append(Blank(i, score))
        energy = gradient_energy(panel)
        if energy < thresholds.min_gradient_energy:
            reasons.append(LowDetail(i, energy))
    return QcVerdict(accepted=not reasons, reasons=reasons)
