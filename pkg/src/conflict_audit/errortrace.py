"""Rationale-flip concordance: do rationales for flipped predictions cite what changed?"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .counterfact import NEUTRAL, Lexicon, PerturbationOutcome, PerturbationSpec, default_lexicon

CONTENT = "content"
EXACT = "exact"
DRAT_MIN = 75.0
RFC_MAX = 25.0
MIN_FLIPS = 10
CONTENT_SHARE = 0.5

STOPWORDS = frozenset("""
a an the of to in on at by for with from into that this these those and or but as was were is are be been
did do does it its their his her they he she we which who whom
""".split())

_TOKEN = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


def tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def content_words(text: str) -> list[str]:
    return [t for t in tokens(text) if t not in STOPWORDS]


def normalize_rationale(items: Sequence[str]) -> tuple[str, ...]:
    return tuple(" ".join(s.split()).lower() for s in items)


def rationale_changed(before: Sequence[str], after: Sequence[str]) -> bool:
    return normalize_rationale(before) != normalize_rationale(after)


def cites(cue: str, rationale: Sequence[str], match: str = CONTENT, share: float = CONTENT_SHARE) -> bool:
    """Whether the rationale mentions ``cue``.

    ``exact`` needs the normalized phrase as a substring. ``content`` needs at
    least ``share`` of the cue's content words among the rationale's tokens.
    """
    text = " ".join(normalize_rationale(rationale))
    if match == EXACT:
        phrase = " ".join(tokens(cue))
        return bool(phrase) and phrase in " ".join(tokens(text))
    if match != CONTENT:
        raise ValueError(f"unknown match mode {match!r}")
    words = content_words(cue)
    if not words:
        return False
    have = set(tokens(text))
    return sum(w in have for w in words) / len(words) >= share


def spec_cues(spec: PerturbationSpec) -> tuple[str, ...]:
    cues = [payload for _, payload in spec.swaps] if spec.swaps else [spec.payload]
    if spec.trigger and not spec.regex:
        cues.append(spec.trigger)
    return tuple(c for c in cues if c)


@dataclass(frozen=True)
class RfcRecord:
    event_id: str
    model: str
    spec_id: str
    rationale_changed: bool
    concordant: bool
    flip_source: str   # "treatment" or "baseline"


@dataclass
class RfcSummary:
    model: str
    n_flips: int
    n_baseline: int
    n_changed: int
    n_concordant: int
    eps_drat: float | None
    eps_rfc: float | None
    n_excluded: int = 0
    confabulation: bool | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def confabulation_flag(summary: RfcSummary, drat_min: float = DRAT_MIN, rfc_max: float = RFC_MAX,
                       min_flips: int = MIN_FLIPS) -> bool | None:
    """High rationale churn with low citation of the cause; None below ``min_flips``."""
    if summary.n_flips < min_flips or summary.eps_drat is None:
        return None
    return summary.eps_drat >= drat_min and summary.eps_rfc <= rfc_max


@dataclass
class RfcAnalysis:
    records: list[RfcRecord]
    summaries: dict[str, RfcSummary]

    def to_dict(self) -> dict:
        return {"summaries": {m: s.to_dict() for m, s in self.summaries.items()},
                "records": [asdict(r) for r in self.records]}


def rfc_analyze(outcomes: Sequence[PerturbationOutcome], lexicon: Lexicon | None = None,
                match: str = CONTENT, share: float = CONTENT_SHARE, min_flips: int = MIN_FLIPS,
                drat_min: float = DRAT_MIN, rfc_max: float = RFC_MAX) -> RfcAnalysis:
    """Per-model rationale change and concordance rates over flipped outcomes.

    Flips missing either rationale are excluded and counted.
    """
    specs = (lexicon or default_lexicon()).by_id()
    records: list[RfcRecord] = []
    excluded: Counter = Counter()
    models = sorted({o.model for o in outcomes})
    for o in sorted(outcomes, key=lambda o: (o.model, o.event_id, o.spec_id)):
        if not o.flipped:
            continue
        if not o.original_rationale or not o.perturbed_rationale:
            excluded[o.model] += 1
            continue
        spec = specs.get(o.spec_id)
        cues = spec_cues(spec) if spec else (o.term,)
        records.append(RfcRecord(
            o.event_id, o.model, o.spec_id,
            rationale_changed(o.original_rationale, o.perturbed_rationale),
            any(cites(c, o.perturbed_rationale, match, share) for c in cues),
            "baseline" if o.family == NEUTRAL else "treatment"))

    summaries = {}
    for model in models:
        mine = [r for r in records if r.model == model]
        n = len(mine)
        changed = sum(r.rationale_changed for r in mine)
        conc = sum(r.concordant for r in mine)
        s = RfcSummary(model, n, sum(r.flip_source == "baseline" for r in mine), changed, conc,
                       100 * changed / n if n else None, 100 * conc / n if n else None, excluded[model])
        s.confabulation = confabulation_flag(s, drat_min, rfc_max, min_flips)
        if s.confabulation is None:
            s.flags.append("too_few_flips")
        if excluded[model]:
            s.flags.append(f"missing_rationale:{excluded[model]}")
        summaries[model] = s
    return RfcAnalysis(records, summaries)


# ---------------------------------------------------------------- external attributions

PUNCT = "punctuation"
VERB = "verb"
OTHER_TOKEN = "other"
ATTRIBUTION_VERBS = frozenset({
    "killed", "kill", "kills", "shot", "shoot", "kidnapped", "kidnap", "abducted", "ambushed", "ambush",
    "attack", "attacked", "attacks", "beat", "burned", "burnt", "clashed", "fought", "raided", "arrested",
    "executed", "murdered", "looted", "bombed", "detonated", "protested", "rioted",
})


def token_class(token: str) -> str:
    t = token.strip().lower().lstrip("#▁Ġ")
    if t and not any(ch.isalnum() for ch in t):
        return PUNCT
    return VERB if t in ATTRIBUTION_VERBS else OTHER_TOKEN


def anchor_summary(attributions: Mapping[str, Sequence[tuple[str, float]]]) -> dict:
    """Share of events whose top-attributed token is a verb, punctuation or other.

    ``attributions`` maps event_id to (token, score) pairs computed elsewhere,
    e.g. by integrated gradients on a white-box model.
    """
    counts: Counter = Counter()
    for eid in sorted(attributions):
        pairs = list(attributions[eid])
        if not pairs:
            continue
        top = max(pairs, key=lambda p: (abs(p[1]), p[0]))
        counts[token_class(top[0])] += 1
    n = sum(counts.values())
    return {"n_events": n,
            "shares": {c: (100 * counts[c] / n if n else None) for c in (VERB, PUNCT, OTHER_TOKEN)}}


def load_attributions(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    raw = json.loads(Path(path).read_text())
    return {eid: [(str(t), float(s)) for t, s in pairs] for eid, pairs in raw.items()}
