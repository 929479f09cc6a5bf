"""Synthetic ACLED-style events for offline runs, demos and tests."""

from __future__ import annotations

import csv
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EventRecord, load_actor_rules, normalize_actor
from .labels import LABEL_NAMES

PLACES = {
    "Cameroon": [("Bamenda", "Mezam"), ("Kumbo", "Bui"), ("Bamunka", "Ngo-Ketunjia"), ("Buea", "Fako"),
                 ("Mora", "Mayo-Sava"), ("Kolofata", "Mayo-Sava"), ("Batibo", "Momo")],
    "Nigeria": [("Maiduguri", "Borno"), ("Gwoza", "Borno"), ("Zaria", "Kaduna"), ("Owerri", "Imo"),
                ("Jos", "Plateau"), ("Gusau", "Zamfara"), ("Makurdi", "Benue")],
}
STATE_ACTORS = ["Military Forces", "Police Forces", "Military", "Gendarmerie", "Army troops"]
NONSTATE_ACTORS = {
    "Cameroon": ["Ambazonian Separatists", "Amba Boys", "Boko Haram", "Unidentified Armed Group", "Militia"],
    "Nigeria": ["Boko Haram", "ISWAP", "Unidentified Armed Group", "Bandits", "IPOB"],
}
OTHER_ACTORS = ["Protesters", "Rioters", "Students", "Traders", "Civilians"]
DAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"]
NUMS = ["two", "three", "four", "five", "six"]
VICTIMS = ["a bike rider", "a farmer", "two civilians", "a trader", "three villagers", "a teacher"]

TEMPLATES = {
    "V": [
        "{actor} shot and killed {victim} {loc} on {day}.",
        "{actor} abducted {num} civilians {loc}; sources said they were later released.",
        "{actor} beat {victim} to death {loc} after accusing the victim of collaboration.",
        "{actor} burned houses and killed {victim} {loc}.",
    ],
    "B": [
        "{actor} clashed with {opponent} {loc} on {day}; {num} fighters were killed.",
        "{actor} ambushed {opponent} {loc}. The attackers were repulsed by the military.",
        "{actor} attacked a base held by {opponent} {loc} and exchanged fire for hours.",
    ],
    "E": [
        "{actor} detonated an IED {loc}, wounding {num} soldiers on {day}.",
        "{actor} shelled positions {loc} with mortar rounds.",
    ],
    "P": [
        "{actor} marched peacefully {loc} on {day} to demand better roads.",
        "{actor} held a protest {loc}; leaders said talks would continue later.",
    ],
    "R": [
        "Angry youths rioted {loc} and looted shops after a dispute on {day}.",
        "A mob vandalised a police post {loc}.",
    ],
    "S": [
        "{actor} arrested {num} suspects {loc} on {day}.",
        "{actor} imposed a curfew {loc} and deployed additional patrols.",
        "{actor} signed an agreement {loc}; officials said it would hold.",
    ],
}

# Label mix roughly following the V/B-heavy conflict corpora.
LABEL_WEIGHTS = {"V": 0.34, "B": 0.32, "E": 0.08, "P": 0.1, "R": 0.06, "S": 0.1}


def _actor_for(label: str, country: str, rng: np.random.Generator) -> str:
    if label in ("P", "R"):
        return str(rng.choice(OTHER_ACTORS))
    pool = STATE_ACTORS if rng.random() < 0.45 else NONSTATE_ACTORS[country]
    return str(rng.choice(pool))


def generate_events(n: int, country: str = "Cameroon", seed: int = 0, start: date = date(2021, 1, 1)) -> list[EventRecord]:
    """``n`` labelled events whose notes exercise the actor rules and perturbation triggers."""
    if country not in PLACES:
        raise ValueError(f"no synthetic gazetteer for {country!r}")
    rng = np.random.default_rng(seed)
    rules = load_actor_rules()
    labels = list(LABEL_WEIGHTS)
    probs = np.array([LABEL_WEIGHTS[k] for k in labels])
    prefix = country[:3].upper()
    out = []
    for i in range(n):
        label = labels[rng.choice(len(labels), p=probs)]
        actor = _actor_for(label, country, rng)
        town, region = PLACES[country][rng.integers(len(PLACES[country]))]
        opponent = str(rng.choice(NONSTATE_ACTORS[country] if actor in STATE_ACTORS else STATE_ACTORS))
        template = TEMPLATES[label][rng.integers(len(TEMPLATES[label]))]
        notes = template.format(actor=actor, victim=rng.choice(VICTIMS), loc=f"in {town} ({region})",
                                day=rng.choice(DAYS), num=rng.choice(NUMS), opponent=opponent.lower()
                                if opponent in STATE_ACTORS else opponent)
        out.append(EventRecord(
            event_id=f"{prefix}{i + 1:05d}", country=country,
            event_date=start + timedelta(days=int(rng.integers(0, 1000))), notes=notes,
            true_label=label, actor_raw=actor, actor_group=normalize_actor(actor, country, rules)))
    return out


def write_acled_csv(records: Sequence[EventRecord], path: str | Path) -> None:
    """Write records in the ACLED export column layout understood by ingest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["event_id", "country", "event_date", "event_type", "actor1", "notes"])
        for r in records:
            w.writerow([r.event_id, r.country, r.event_date.strftime("%d %B %Y") if r.event_date else "",
                        LABEL_NAMES[r.true_label], r.actor_raw, r.notes])


__all__ = ["generate_events", "write_acled_csv"]
