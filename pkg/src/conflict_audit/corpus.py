"""Event ingestion, actor normalization and stratified sampling."""

from __future__ import annotations

import csv
import json
import re
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date, datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .labels import ACTOR_GROUPS, LABELS, NON_STATE, OTHER, STATE, to_code


class CorpusError(ValueError):
    """Raised for unreadable or unusable corpus input."""


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    country: str
    event_date: date | None
    notes: str
    true_label: str
    actor_raw: str
    actor_group: str
    notes_length: int = field(init=False)

    def __post_init__(self):
        if self.true_label not in LABELS:
            raise ValueError(f"invalid label {self.true_label!r}")
        if self.actor_group not in ACTOR_GROUPS:
            raise ValueError(f"invalid actor group {self.actor_group!r}")
        object.__setattr__(self, "notes_length", len(self.notes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["event_date"] = self.event_date.isoformat() if self.event_date else None
        return d


@dataclass(frozen=True)
class ActorRule:
    pattern: str
    group: str
    country_scope: str | None = None
    priority: int = 100

    def __post_init__(self):
        if self.group not in ACTOR_GROUPS:
            raise ValueError(f"invalid actor group {self.group!r}")

    @property
    def regex(self) -> re.Pattern:
        return _compile(self.pattern)


@lru_cache(maxsize=None)
def _compile(pattern: str) -> re.Pattern:
    # Whole-word match that tolerates a plural suffix ("rebel" hits "Rebels").
    return re.compile(r"\b" + re.escape(pattern) + r"(?:s|es)?\b", re.IGNORECASE)


def load_actor_rules(path: str | Path | None = None) -> list[ActorRule]:
    if path is None:
        text = resources.files("conflict_audit").joinpath("data/actor_rules.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    payload = json.loads(text)
    return [ActorRule(**r) for r in payload["rules"]]


def normalize_actor(actor_raw: str, country: str, rules: Sequence[ActorRule]) -> str:
    """Group of the first matching rule in (priority, insertion) order, else Other."""
    if not rules:
        raise ValueError("rule list is empty")
    text = actor_raw or ""
    ordered = sorted(enumerate(rules), key=lambda ir: (ir[1].priority, ir[0]))
    for _, rule in ordered:
        if rule.country_scope and rule.country_scope.lower() != (country or "").lower():
            continue
        if rule.regex.search(text):
            return rule.group
    return OTHER


DEFAULT_COLUMNS = {
    "event_id": "event_id",
    "country": "country",
    "event_date": "event_date",
    "notes": "notes",
    "true_label": "event_type",
    "actor_raw": "actor1",
}


@dataclass
class IngestResult:
    records: list[EventRecord]
    n_duplicates: int = 0
    n_rejected: int = 0
    reject_reasons: Counter = field(default_factory=Counter)


def _parse_date(value) -> date | None:
    if not value:
        return None
    v = str(value).strip()
    try:
        return date.fromisoformat(v)
    except ValueError:
        pass
    for fmt in ("%d %B %Y", "%d-%B-%Y", "%d/%m/%Y"):
        try:
            return datetime.strptime(v, fmt).date()
        except ValueError:
            continue
    return None


def _read_rows(path: Path) -> tuple[list[dict], bool]:
    """Return raw rows and whether they are already canonical (JSONL)."""
    try:
        if path.suffix.lower() in (".jsonl", ".ndjson"):
            with path.open(encoding="utf-8") as fh:
                return [json.loads(line) for line in fh if line.strip()], True
        with path.open(encoding="utf-8", newline="") as fh:
            return list(csv.DictReader(fh)), False
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc


def ingest_corpus(
    path: str | Path,
    column_map: Mapping[str, str] | None = None,
    rules: Sequence[ActorRule] | None = None,
) -> IngestResult:
    """Read a CSV export (or a canonical JSONL corpus) into EventRecords.

    Invalid rows are rejected and counted. Duplicate event_ids among the valid
    rows collapse to the first occurrence.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"no such file: {path}")
    rows, canonical = _read_rows(path)
    cols = dict(DEFAULT_COLUMNS)
    if canonical:
        cols = {k: k for k in DEFAULT_COLUMNS}
    elif column_map:
        cols.update(column_map)
    if rows:
        header = set(rows[0].keys())
        required = [cols[k] for k in ("event_id", "notes", "true_label")]
        missing = [c for c in required if c not in header]
        if missing:
            raise CorpusError(f"missing required column(s): {', '.join(missing)}")
    rules = list(rules) if rules is not None else load_actor_rules()

    out: list[EventRecord] = []
    seen: set[str] = set()
    result = IngestResult(out)
    for row in rows:
        eid = str(row.get(cols["event_id"]) or "").strip()
        notes = row.get(cols["notes"]) or ""
        label = to_code(row.get(cols["true_label"]) or "")
        if not eid:
            reason = "missing_event_id"
        elif not notes.strip():
            reason = "missing_notes"
        elif label is None:
            reason = "invalid_label"
        else:
            reason = None
        if reason:
            result.n_rejected += 1
            result.reject_reasons[reason] += 1
            continue
        if eid in seen:
            result.n_duplicates += 1
            continue
        seen.add(eid)
        country = str(row.get(cols["country"]) or "")
        actor = str(row.get(cols["actor_raw"]) or "")
        group = row.get("actor_group") if canonical else None
        if group not in ACTOR_GROUPS:
            group = normalize_actor(actor, country, rules)
        out.append(EventRecord(eid, country, _parse_date(row.get(cols["event_date"])),
                               notes, label, actor, group))
    if not out:
        raise CorpusError("no valid records")
    return result


def write_corpus(records: Iterable[EventRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def largest_remainder(targets: Mapping, total: int) -> dict:
    """Round real-valued quotas to integers summing to ``total``.

    Floors first, then hands the remaining units to the largest fractional
    parts; ties go to the key that sorts first.
    """
    floors = {k: int(np.floor(v + 1e-12)) for k, v in targets.items()}
    left = total - sum(floors.values())
    order = sorted(targets, key=lambda k: (-(targets[k] - floors[k]), str(k)))
    for k in order[:max(0, left)]:
        floors[k] += 1
    return floors


@dataclass
class SampleResult:
    records: list[EventRecord]
    quotas: dict[tuple[str, str], int]
    notes: list[str] = field(default_factory=list)


def group_quotas(sizes: Mapping[str, int], n: int, balance: bool = True) -> tuple[dict[str, float], list[str]]:
    """Real-valued per-group quotas: proportional, with State/NonState split evenly."""
    total = sum(sizes.values())
    exact = {g: n * sizes.get(g, 0) / total for g in ACTOR_GROUPS}
    notes: list[str] = []
    if not balance:
        return exact, notes
    pair = exact[STATE] + exact[NON_STATE]
    q = {STATE: pair / 2, NON_STATE: pair / 2, OTHER: exact[OTHER]}
    for g, h in ((STATE, NON_STATE), (NON_STATE, STATE)):
        short = q[g] - sizes.get(g, 0)
        if short > 0:
            q[g] -= short
            q[h] += short
            notes.append(f"{g} stratum short by {short:g}; quota moved to {h}")
    return q, notes


def stratified_sample(
    corpus: Sequence[EventRecord],
    n: int,
    seed: int,
    quality: Callable[[EventRecord], float] | None = None,
    balance: bool = True,
) -> SampleResult:
    """Sample ``n`` events stratified by (true_label, actor_group).

    Group totals are proportional, except that State and NonState share their
    combined quota equally when both have enough events. Within each group the
    total is spread over labels by largest remainder. With ``quality`` set the
    highest-scoring events of each stratum are kept instead of a random draw.
    """
    if n > len(corpus):
        raise ValueError(f"n={n} exceeds corpus size {len(corpus)}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    strata: dict[tuple[str, str], list[EventRecord]] = defaultdict(list)
    for r in sorted(corpus, key=lambda r: r.event_id):
        strata[(r.true_label, r.actor_group)].append(r)
    sizes = Counter(r.actor_group for r in corpus)

    gq, notes = group_quotas(sizes, n, balance)
    group_n = largest_remainder(gq, n)
    quotas: dict[tuple[str, str], int] = {}
    for g in ACTOR_GROUPS:
        if not sizes.get(g):
            continue
        targets = {(lab, g): group_n[g] * len(strata[(lab, g)]) / sizes[g]
                   for lab in LABELS if strata.get((lab, g))}
        quotas.update(largest_remainder(targets, group_n[g]))

    chosen: list[EventRecord] = []
    for key in sorted(quotas):
        pool = strata[key]
        k = quotas[key]
        if k == 0:
            continue
        if quality is None:
            idx = rng.choice(len(pool), size=k, replace=False)
            chosen.extend(pool[i] for i in sorted(idx))
        else:
            jitter = rng.random(len(pool))
            ranked = sorted(range(len(pool)), key=lambda i: (-quality(pool[i]), jitter[i]))
            chosen.extend(pool[i] for i in ranked[:k])
    order = rng.permutation(len(chosen))
    return SampleResult([chosen[i] for i in order], quotas, notes)


def notes_length(record: EventRecord) -> float:
    """Default curation score: longer descriptions first."""
    return float(record.notes_length)
