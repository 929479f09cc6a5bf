"""Counterfactual text perturbations, flip statistics and sensitivity clusters."""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .modelgate import (ClassificationFailure, Endpoint, ParseError, Prediction, StrategyConfig, classify,
                        classify_batch)
from .stats import chi_or_fisher, clopper_pearson, cohen_h, fisher_exact

FAMILIES = ("negation", "legitimation", "delegitimation", "actor_substitution", "provenance",
            "intensity", "decontextualization", "action_substitution", "neutral_control")
TREATMENT_FAMILIES = FAMILIES[:-1]
MODES = ("prefix", "suffix", "insert_before_verb", "substring_replace")
CONTROL_FAMILIES = ("reporting_verb", "day_of_week", "temporal_connective", "cardinal_numeral")
NEUTRAL = "neutral_control"
DEFAULT_VERBS = ("killed", "shot", "beat", "attacked", "burned")

# Payload endings that already read as a lead-in and take no extra comma.
_LEAD_IN = re.compile(r"(?:[,:;]|\bthat)$", re.IGNORECASE)


@dataclass(frozen=True)
class PerturbationSpec:
    id: str
    family: str
    mode: str
    payload: str = ""
    trigger: str | None = None
    term: str | None = None
    control_family: str | None = None
    alternatives: tuple[tuple[str, str], ...] = ()
    regex: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown perturbation family {self.family!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.family == NEUTRAL:
            if self.control_family not in CONTROL_FAMILIES:
                raise ValueError(f"neutral control {self.id} needs a control family")
            if not self.alternatives and not self.trigger:
                raise ValueError(f"neutral control {self.id} has no swap")
        elif self.mode == "substring_replace" and not self.trigger:
            raise ValueError(f"substitution {self.id} needs a trigger")

    @property
    def label(self) -> str:
        """Display key for word-level tables."""
        return self.term or self.payload

    @property
    def swaps(self) -> tuple[tuple[str, str], ...]:
        if self.alternatives:
            return self.alternatives
        return ((self.trigger, self.payload),) if self.trigger else ()

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationSpec":
        d = dict(d)
        d["alternatives"] = tuple(tuple(a) for a in d.get("alternatives", ()))
        return cls(**d)


@dataclass(frozen=True)
class Lexicon:
    specs: tuple[PerturbationSpec, ...]
    verbs: tuple[str, ...] = DEFAULT_VERBS

    def by_id(self) -> dict[str, PerturbationSpec]:
        return {s.id: s for s in self.specs}

    def treatments(self) -> tuple[PerturbationSpec, ...]:
        return tuple(s for s in self.specs if s.family != NEUTRAL)

    def controls(self) -> tuple[PerturbationSpec, ...]:
        return tuple(s for s in self.specs if s.family == NEUTRAL)


def load_lexicon(path: str | Path | None = None) -> Lexicon:
    if path is None:
        return default_lexicon()
    return _parse_lexicon(Path(path).read_text())


@lru_cache(maxsize=None)
def default_lexicon() -> Lexicon:
    return _parse_lexicon(resources.files("conflict_audit.data").joinpath("perturbations.json").read_text())


def _parse_lexicon(text: str) -> Lexicon:
    raw = json.loads(text)
    specs = tuple(PerturbationSpec.from_dict(s) for s in raw["specs"])
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate perturbation ids")
    return Lexicon(specs, tuple(raw.get("verbs", DEFAULT_VERBS)))


# ---------------------------------------------------------------- text rewriting

@dataclass(frozen=True)
class Rewrite:
    text: str
    lowercased: bool = False
    swap: tuple[str, str] | None = None


def _word_pattern(trigger: str, regex: bool) -> re.Pattern:
    if regex:
        return re.compile(trigger)
    return re.compile(rf"\b{re.escape(trigger)}\b", re.IGNORECASE)


def _match_case(source: str, replacement: str) -> str:
    if source[:1].isupper() and replacement[:1].islower():
        return replacement[0].upper() + replacement[1:]
    return replacement


def _replace_first(text: str, trigger: str, payload: str, regex: bool) -> str | None:
    m = _word_pattern(trigger, regex).search(text)
    if m is None:
        return None
    rep = payload if regex else _match_case(m.group(0), payload)
    return text[:m.start()] + rep + text[m.end():]


def _should_lowercase(text: str) -> bool:
    """Lowercase the old sentence start only when it looks like an ordinary word."""
    words = text.split()
    if not words:
        return False
    first = words[0]
    if not (first[:1].isupper() and first[1:].islower() and first.isalpha()):
        return False
    return len(words) == 1 or not words[1][:1].isupper()


def _has_phrase(text: str, phrase: str) -> bool:
    return bool(_word_pattern(phrase.rstrip(",:; "), False).search(text))


def apply_perturbation(notes: str, spec: PerturbationSpec, verbs: Sequence[str] = DEFAULT_VERBS) -> Rewrite | None:
    """Rewrite ``notes`` under ``spec``; None when the spec does not apply."""
    if spec.mode == "substring_replace":
        for trigger, payload in spec.swaps:
            out = _replace_first(notes, trigger, payload, spec.regex)
            if out is not None:
                return Rewrite(out, swap=(trigger, payload))
        return None

    # Insertions never fire twice on the same text.
    if _has_phrase(notes, spec.payload):
        return None
    if spec.mode == "prefix":
        lower = _should_lowercase(notes)
        body = notes[0].lower() + notes[1:] if lower else notes
        sep = " " if _LEAD_IN.search(spec.payload) else ", "
        return Rewrite(f"{spec.payload}{sep}{body}", lowercased=lower)
    if spec.mode == "suffix":
        stripped = notes.rstrip()
        if stripped.endswith("."):
            return Rewrite(f"{stripped[:-1]} {spec.payload}.")
        return Rewrite(f"{stripped} {spec.payload}")
    # insert_before_verb: first verb of the list that occurs, in list order
    for verb in verbs:
        m = _word_pattern(verb, False).search(notes)
        if m:
            return Rewrite(notes[:m.start()] + spec.payload + " " + notes[m.start():])
    return None


# ---------------------------------------------------------------- running

@dataclass(frozen=True)
class PerturbationOutcome:
    event_id: str
    model: str
    spec_id: str
    family: str
    term: str
    original_label: str
    perturbed_label: str
    confidence_delta: float
    original_rationale: tuple[str, ...] | None = None
    perturbed_rationale: tuple[str, ...] | None = None

    @property
    def flipped(self) -> bool:
        return self.original_label != self.perturbed_label

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flipped"] = self.flipped
        for k in ("original_rationale", "perturbed_rationale"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "PerturbationOutcome":
        d = {k: v for k, v in d.items() if k != "flipped"}
        for k in ("original_rationale", "perturbed_rationale"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class CounterfactualRun:
    outcomes: list[PerturbationOutcome]
    failures: list[ClassificationFailure] = field(default_factory=list)
    n_applied: int = 0
    n_not_applicable: int = 0


def perturbed_texts(events: Sequence[tuple[str, str]], lexicon: Lexicon,
                    specs: Sequence[PerturbationSpec] | None = None) -> tuple[list[tuple[str, str, str]], int]:
    """All (event_id, spec_id, text) rewrites, plus the count of non-applicable pairs."""
    specs = lexicon.specs if specs is None else specs
    out, skipped = [], 0
    for eid, notes in sorted(events):
        for spec in specs:
            rw = apply_perturbation(notes, spec, lexicon.verbs)
            if rw is None:
                skipped += 1
            else:
                out.append((eid, spec.id, rw.text))
    return out, skipped


def _classify_aligned(items, cfg, endpoint, model, parallelism):
    """Like classify_batch but keeps input order, so repeated event ids stay distinguishable."""
    def one(item):
        try:
            return classify(item[0], item[1], cfg, endpoint, model)
        except ParseError as exc:
            return ClassificationFailure(item[0], model, exc.reason, exc.raw)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        return list(pool.map(one, items))


def run_counterfactuals(
    events: Sequence[tuple[str, str]],
    models: Sequence[str],
    cfg: StrategyConfig,
    endpoint: Endpoint,
    lexicon: Lexicon | None = None,
    originals: Mapping[tuple[str, str], Prediction] | None = None,
    parallelism: int = 4,
) -> CounterfactualRun:
    """Classify every applicable rewrite with every model and compare to the original call.

    ``originals`` maps (model, event_id) to an existing prediction under the
    same strategy; missing ones are classified here.
    """
    lexicon = lexicon or default_lexicon()
    specs = lexicon.by_id()
    rewrites, skipped = perturbed_texts(events, lexicon)
    run = CounterfactualRun([], [], len(rewrites), skipped)
    originals = dict(originals or {})
    for model in sorted(models):
        missing = [(e, n) for e, n in sorted(events) if (model, e) not in originals]
        preds, fails = classify_batch(missing, cfg, endpoint, model, parallelism)
        originals.update({(model, p.event_id): p for p in preds})
        run.failures.extend(fails)

        todo = [(eid, sid, text) for eid, sid, text in rewrites if (model, eid) in originals]
        results = _classify_aligned([(eid, text) for eid, _, text in todo], cfg, endpoint, model, parallelism)
        for (eid, sid, _), res in zip(todo, results):
            if isinstance(res, ClassificationFailure):
                run.failures.append(ClassificationFailure(eid, model, f"{sid}:{res.reason}", res.raw_response))
                continue
            o = originals[model, eid]
            spec = specs[sid]
            run.outcomes.append(PerturbationOutcome(
                eid, model, sid, spec.family, spec.label, o.label, res.label,
                res.confidence - o.confidence, o.rationale, res.rationale))
    run.outcomes.sort(key=lambda o: (o.event_id, o.spec_id, o.model))
    run.failures.sort(key=lambda f: (f.event_id, f.model_id, f.reason))
    return run


def sample_review(events: Sequence[tuple[str, str]], n: int, seed: int = 0,
                  lexicon: Lexicon | None = None) -> list[dict]:
    """Random (original, perturbed) pairs for manual inspection."""
    lexicon = lexicon or default_lexicon()
    notes = dict(events)
    rewrites, _ = perturbed_texts(events, lexicon)
    if not rewrites:
        return []
    idx = np.random.default_rng(seed).choice(len(rewrites), size=min(n, len(rewrites)), replace=False)
    return [{"event_id": rewrites[i][0], "spec_id": rewrites[i][1], "original": notes[rewrites[i][0]],
             "perturbed": rewrites[i][2]} for i in sorted(idx)]


# ---------------------------------------------------------------- tables

@dataclass(frozen=True)
class WordLevelRow:
    term: str
    family: str
    n: int
    flips: int
    flip_pct: float
    ci: tuple[float, float]
    delta_flip_pp: float
    h: float
    p: float
    test: str


@dataclass(frozen=True)
class WordLevelTable:
    rows: tuple[WordLevelRow, ...]
    baseline_n: int
    baseline_flips: int
    baseline_pct: float
    baseline_ci: tuple[float, float]
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"baseline": {"n": self.baseline_n, "flips": self.baseline_flips, "flip_pct": self.baseline_pct,
                             "ci": list(self.baseline_ci)},
                "rows": [asdict(r) for r in self.rows], "notes": list(self.notes)}


def flip_row_stats(flips: int, n: int, base_flips: int, base_n: int) -> dict:
    """Flip rate with exact CI, gap to baseline in pp, Cohen's h and chi-square/Fisher p."""
    cp = clopper_pearson(flips, n)
    base = base_flips / base_n
    test = chi_or_fisher([[flips, n - flips], [base_flips, base_n - base_flips]])
    return dict(flip_pct=100 * cp.rate, ci=(100 * cp.ci_low, 100 * cp.ci_high),
                delta_flip_pp=100 * (cp.rate - base), h=cohen_h(cp.rate, base), p=test.p_value,
                test=test.method)


def _tally(outcomes: Iterable[PerturbationOutcome]) -> tuple[int, int]:
    flips = n = 0
    for o in outcomes:
        n += 1
        flips += o.flipped
    return flips, n


def word_level_table(outcomes: Sequence[PerturbationOutcome],
                     neutral: Sequence[PerturbationOutcome] | None = None) -> WordLevelTable:
    """One row per (term, family) pooled over models, against the pooled neutral baseline."""
    if neutral is None:
        neutral = [o for o in outcomes if o.family == NEUTRAL]
        outcomes = [o for o in outcomes if o.family != NEUTRAL]
    base_flips, base_n = _tally(neutral)
    if base_n == 0:
        raise ValueError("no neutral-control outcomes for the baseline")
    groups: dict[tuple[str, str], list[PerturbationOutcome]] = {}
    for o in outcomes:
        groups.setdefault((o.term, o.family), []).append(o)
    rows = []
    for (term, family), group in groups.items():
        flips, n = _tally(group)
        rows.append(WordLevelRow(term, family, n, flips, **flip_row_stats(flips, n, base_flips, base_n)))
    rows.sort(key=lambda r: (r.p, -r.flip_pct, r.term, r.family))
    bcp = clopper_pearson(base_flips, base_n)
    return WordLevelTable(tuple(rows), base_n, base_flips, 100 * bcp.rate,
                          (100 * bcp.ci_low, 100 * bcp.ci_high))


@dataclass(frozen=True)
class VulnerabilityRow:
    family: str
    model: str
    n: int
    flips: int
    flip_pct: float
    ci: tuple[float, float]
    confidence_shift_pp: float
    h: float
    p: float


@dataclass(frozen=True)
class VulnerabilityMatrix:
    rows: tuple[VulnerabilityRow, ...]
    neutral: dict[str, dict]
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows], "neutral": self.neutral, "notes": list(self.notes)}


def vulnerability_matrix(outcomes: Sequence[PerturbationOutcome]) -> VulnerabilityMatrix:
    """Per model and family: flip rate, mean confidence shift, h and Fisher p against the model's own controls."""
    by_model: dict[str, list[PerturbationOutcome]] = {}
    for o in outcomes:
        by_model.setdefault(o.model, []).append(o)
    rows, neutral, notes = [], {}, []
    for model in sorted(by_model):
        mine = by_model[model]
        ctrl = [o for o in mine if o.family == NEUTRAL]
        nf, nn = _tally(ctrl)
        if nn == 0:
            notes.append(f"no_neutral_outcomes:{model}")
            continue
        ncp = clopper_pearson(nf, nn)
        neutral[model] = {"n": nn, "flips": nf, "flip_pct": 100 * ncp.rate,
                          "ci": [100 * ncp.ci_low, 100 * ncp.ci_high],
                          "confidence_shift_pp": 100 * float(np.mean([o.confidence_delta for o in ctrl]))}
        for family in TREATMENT_FAMILIES:
            cell = [o for o in mine if o.family == family]
            if not cell:
                notes.append(f"empty_cell:{model}:{family}")
                continue
            f, n = _tally(cell)
            cp = clopper_pearson(f, n)
            p = fisher_exact([[f, n - f], [nf, nn - nf]]).p_value
            rows.append(VulnerabilityRow(
                family, model, n, f, 100 * cp.rate, (100 * cp.ci_low, 100 * cp.ci_high),
                100 * float(np.mean([o.confidence_delta for o in cell])), cohen_h(cp.rate, ncp.rate), p))
    return VulnerabilityMatrix(tuple(rows), neutral, tuple(notes))


# ---------------------------------------------------------------- clusters

@dataclass(frozen=True)
class ClusterResult:
    event_ids: tuple[str, ...]
    assignments: tuple[int, ...]
    k: int
    silhouette: float | None
    centroids: tuple[tuple[float, ...], ...]
    dimensions: tuple[str, ...]
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"k": self.k, "silhouette": self.silhouette, "dimensions": list(self.dimensions),
                "assignments": dict(zip(self.event_ids, self.assignments)),
                "centroids": [list(c) for c in self.centroids], "flags": list(self.flags)}


def flip_profiles(outcomes: Sequence[PerturbationOutcome],
                  families: Sequence[str] = TREATMENT_FAMILIES) -> tuple[list[str], np.ndarray]:
    """Per-event flip rate in each family (0 where the family never applied)."""
    tally: dict[str, np.ndarray] = {}
    for o in outcomes:
        if o.family not in families:
            continue
        t = tally.setdefault(o.event_id, np.zeros((2, len(families))))
        j = families.index(o.family)
        t[0, j] += o.flipped
        t[1, j] += 1
    ids = sorted(tally)
    rows = [np.divide(tally[e][0], tally[e][1], out=np.zeros(len(families)), where=tally[e][1] > 0)
            for e in ids]
    return ids, np.array(rows).reshape(len(ids), len(families))


def sensitivity_clusters(event_ids: Sequence[str], profiles: np.ndarray, seed: int = 0, k_max: int = 8,
                         dimensions: Sequence[str] = TREATMENT_FAMILIES) -> ClusterResult:
    """k-means on flip profiles with k chosen by silhouette over 2..k_max.

    Identical profiles are collapsed to one weighted point before clustering, so
    duplicates always land together.
    """
    from sklearn.cluster import KMeans
    from sklearn.metrics import silhouette_score

    X = np.clip(np.asarray(profiles, dtype=float), 0, 1)
    if len(event_ids) < 2 or X.shape[0] != len(event_ids):
        raise ValueError("need at least two events with one profile each")
    uniq, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if len(uniq) == 1:
        return ClusterResult(tuple(event_ids), (0,) * len(event_ids), 1, None,
                             (tuple(float(v) for v in uniq[0]),), tuple(dimensions), ("degenerate",))
    best = None
    for k in range(2, min(k_max, len(uniq)) + 1):
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(uniq, sample_weight=counts)
        labels = km.labels_[inverse]
        if len(set(labels)) < 2:
            continue
        s = float(silhouette_score(X, labels)) if len(set(labels)) < len(X) else 0.0
        if best is None or s > best[0] + 1e-12:
            best = (s, k, km)
    s, k, km = best
    # Relabel clusters by first appearance so output does not depend on k-means internals.
    raw = km.labels_[inverse]
    order = {c: i for i, c in enumerate(dict.fromkeys(raw.tolist()))}
    labels = tuple(order[c] for c in raw.tolist())
    centroids = [None] * len(order)
    for c, i in order.items():
        centroids[i] = tuple(float(v) for v in X[raw == c].mean(axis=0))
    return ClusterResult(tuple(event_ids), labels, k, s, tuple(centroids), tuple(dimensions))
