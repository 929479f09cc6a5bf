"""Directional V/B errors: false legitimation, false illegitimation and their net gap."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .modelgate import Prediction
from .stats import RateEstimate, two_prop_z, wilson_interval

SIGNIFICANCE = 0.05
CREEP_PP = 2.0
STABILIZE_PP = 1.0


@dataclass(frozen=True)
class LegitCounts:
    n_fl: int   # gold V predicted B
    n_fi: int   # gold B predicted V
    n_v: int
    n_b: int

    def __post_init__(self):
        if min(self.n_fl, self.n_fi, self.n_v, self.n_b) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_fl > self.n_v or self.n_fi > self.n_b:
            raise ValueError("error count exceeds class support")


def corpus_key(event_ids: Iterable[str]) -> str:
    return hashlib.sha256("\n".join(sorted(event_ids)).encode()).hexdigest()[:16]


def count_legitimization_errors(preds: Sequence[Prediction], gold: Mapping[str, str]) -> LegitCounts:
    n_fl = n_fi = n_v = n_b = 0
    for p in preds:
        g = gold[p.event_id]
        if g == "V":
            n_v += 1
            n_fl += p.label == "B"
        elif g == "B":
            n_b += 1
            n_fi += p.label == "V"
    return LegitCounts(n_fl, n_fi, n_v, n_b)


@dataclass(frozen=True)
class LegitimizationReport:
    counts: LegitCounts
    eps_fl: RateEstimate
    eps_fi: RateEstimate
    delta_lb: float          # proportion; delta_lb_pp is the rendering in percentage points
    p: float
    model: str = ""
    shots: int = 0
    corpus: str | None = None

    @property
    def delta_lb_pp(self) -> float:
        return 100.0 * self.delta_lb

    def to_dict(self) -> dict:
        c = self.counts
        return {
            "model": self.model, "shots": self.shots, "corpus": self.corpus,
            "n_fl": c.n_fl, "n_fi": c.n_fi, "n_v": c.n_v, "n_b": c.n_b,
            "eps_fl": self.eps_fl.rate, "eps_fl_ci": [self.eps_fl.ci_low, self.eps_fl.ci_high],
            "eps_fi": self.eps_fi.rate, "eps_fi_ci": [self.eps_fi.ci_low, self.eps_fi.ci_high],
            "delta_lb": self.delta_lb, "delta_lb_pp": self.delta_lb_pp, "p": self.p,
        }


def legitimization_report(counts: LegitCounts, model: str = "", shots: int = 0,
                          corpus: str | None = None) -> LegitimizationReport:
    if counts.n_v < 1 or counts.n_b < 1:
        raise ValueError("both V and B need at least one gold event")
    fl = wilson_interval(counts.n_fl, counts.n_v)
    fi = wilson_interval(counts.n_fi, counts.n_b)
    test = two_prop_z(counts.n_fi, counts.n_b, counts.n_fl, counts.n_v)
    return LegitimizationReport(counts, fl, fi, fi.rate - fl.rate, test.p_value, model, shots, corpus)


def report_from_predictions(preds: Sequence[Prediction], gold: Mapping[str, str], model: str = "",
                            shots: int = 0) -> LegitimizationReport:
    counts = count_legitimization_errors(preds, gold)
    return legitimization_report(counts, model, shots, corpus_key(p.event_id for p in preds))


@dataclass(frozen=True)
class IclRow:
    model: str
    shots: int
    delta_lb_pp: float
    p: float
    flags: tuple[str, ...] = ()


def _transition_flags(prev: LegitimizationReport, cur: LegitimizationReport, creep_pp: float,
                      stabilize_pp: float) -> list[str]:
    a, b = prev.delta_lb_pp, cur.delta_lb_pp
    flags = []
    if a * b < 0:
        flags.append("sign_change")
    grew = abs(b) - abs(a)
    if grew >= creep_pp:
        if prev.p >= SIGNIFICANCE > cur.p:
            flags.append("creep")
        elif cur.p < SIGNIFICANCE:
            flags.append("amplification")
    if -grew >= stabilize_pp and cur.p >= SIGNIFICANCE:
        flags.append("stabilization")
    if (prev.p < SIGNIFICANCE) != (cur.p < SIGNIFICANCE) and "creep" not in flags:
        flags.append("gained_significance" if cur.p < SIGNIFICANCE else "lost_significance")
    return flags


def icl_comparison(reports: Sequence[LegitimizationReport], creep_pp: float = CREEP_PP,
                   stabilize_pp: float = STABILIZE_PP) -> list[IclRow]:
    """Longitudinal view of each model's gap across shot counts.

    Each row after the first for a model carries flags describing the change
    from the previous shot count.
    """
    by_model: dict[str, list[LegitimizationReport]] = {}
    for r in reports:
        by_model.setdefault(r.model, []).append(r)
    rows = []
    for model in sorted(by_model):
        series = sorted(by_model[model], key=lambda r: r.shots)
        shots = [r.shots for r in series]
        if len(set(shots)) != len(shots):
            raise ValueError(f"duplicate shot count for model {model!r}")
        corpora = {r.corpus for r in series if r.corpus is not None}
        if len(corpora) > 1:
            raise ValueError(f"model {model!r} was evaluated on different event sets across shots")
        prev = None
        for r in series:
            flags = _transition_flags(prev, r, creep_pp, stabilize_pp) if prev else []
            rows.append(IclRow(model, r.shots, r.delta_lb_pp, r.p, tuple(flags)))
            prev = r
    return rows
