"""Event ambiguity scoring from cross-model behavior plus a text heuristic."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np

from .labels import LABELS
from .modelgate import Prediction
from .stats import normalized_entropy

WEIGHTS = {"label_entropy": 0.35, "confidence_uncertainty": 0.25,
           "confidence_dispersion": 0.20, "text_ambiguity": 0.20}
LOW_MAX = 0.3
HIGH_MIN = 0.6
TIERS = ("low", "medium", "high")

# Indicator weights for the text heuristic.
W_UNIDENTIFIED = 0.5
W_COOCCUR = 0.25
W_UNTARGETED = 0.25


def tier_for(total: float) -> str:
    if total >= HIGH_MIN:
        return "high"
    if total >= LOW_MAX:
        return "medium"
    return "low"


@dataclass(frozen=True)
class AmbiguityScore:
    label_entropy: float
    confidence_uncertainty: float
    confidence_dispersion: float
    text_ambiguity: float
    total: float
    tier: str

    @classmethod
    def from_components(cls, label_entropy: float, confidence_uncertainty: float,
                        confidence_dispersion: float, text_ambiguity: float) -> "AmbiguityScore":
        parts = dict(label_entropy=label_entropy, confidence_uncertainty=confidence_uncertainty,
                     confidence_dispersion=confidence_dispersion, text_ambiguity=text_ambiguity)
        for name, v in parts.items():
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        total = sum(WEIGHTS[k] * v for k, v in parts.items())
        return cls(**parts, total=total, tier=tier_for(total))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Lexicons:
    unidentified_actor: tuple[str, ...]
    civilian_victim: tuple[str, ...]
    organized_armed_group: tuple[str, ...]
    targeting: tuple[str, ...]
    kinetic: tuple[str, ...]

    def pattern(self, name: str) -> re.Pattern:
        return _compile(getattr(self, name))


@lru_cache(maxsize=None)
def _compile(terms: tuple[str, ...]) -> re.Pattern:
    alts = "|".join(re.escape(t) for t in sorted(terms, key=len, reverse=True))
    return re.compile(rf"\b(?:{alts})\b", re.IGNORECASE)


@lru_cache(maxsize=None)
def default_lexicons() -> Lexicons:
    raw = json.loads(resources.files("conflict_audit.data").joinpath("ambiguity_lexicons.json").read_text())
    return Lexicons(**{k: tuple(v) for k, v in raw.items()})


def text_ambiguity(notes: str, lexicons: Lexicons | None = None) -> float:
    """Additive V/B-boundary indicators, clipped to [0, 1]."""
    lx = lexicons or default_lexicons()
    score = 0.0
    if lx.pattern("unidentified_actor").search(notes):
        score += W_UNIDENTIFIED
    if lx.pattern("civilian_victim").search(notes) and lx.pattern("organized_armed_group").search(notes):
        score += W_COOCCUR
    if lx.pattern("kinetic").search(notes) and not lx.pattern("targeting").search(notes):
        score += W_UNTARGETED
    return min(1.0, score)


def score_event(preds: Sequence[Prediction], notes: str, confidences: Sequence[float] | None = None,
                lexicons: Lexicons | None = None) -> AmbiguityScore:
    """Score one event from its predictions across models.

    ``confidences`` overrides the raw prediction confidences, e.g. with calibrated ones.
    """
    if len(preds) < 2:
        raise ValueError("ambiguity needs predictions from at least two models")
    conf = np.asarray(confidences if confidences is not None else [p.confidence for p in preds], float)
    if conf.size != len(preds):
        raise ValueError("one confidence per prediction required")
    counts = Counter(p.label for p in preds)
    le = normalized_entropy([counts.get(lab, 0) for lab in LABELS])
    cu = float(1.0 - conf.mean())
    cd = float(min(1.0, conf.std() / 0.5))
    return AmbiguityScore.from_components(min(1.0, max(0.0, le)), min(1.0, max(0.0, cu)), cd,
                                          text_ambiguity(notes, lexicons))


def score_corpus(by_model: Mapping[str, Iterable[Prediction]], notes: Mapping[str, str],
                 lexicons: Lexicons | None = None) -> dict[str, AmbiguityScore]:
    """Score every event that has predictions from at least two models."""
    per_event: dict[str, list[Prediction]] = {}
    for model in sorted(by_model):
        for p in by_model[model]:
            per_event.setdefault(p.event_id, []).append(p)
    return {eid: score_event(ps, notes[eid], lexicons=lexicons)
            for eid, ps in sorted(per_event.items()) if len(ps) >= 2}


@dataclass(frozen=True)
class GateResult:
    low: frozenset[str]
    tiers: dict[str, str]
    histogram: dict[str, int]


def gate_low_ambiguity(scores: Mapping[str, AmbiguityScore]) -> GateResult:
    tiers = {eid: s.tier for eid, s in sorted(scores.items())}
    hist = Counter(tiers.values())
    return GateResult(frozenset(e for e, t in tiers.items() if t == "low"), tiers,
                      {t: hist.get(t, 0) for t in TIERS})
