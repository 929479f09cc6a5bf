"""Classification quality: per-class metrics, confusion, disagreement, length slices."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .labels import LABELS
from .modelgate import Prediction
from .stats import spearman

_INDEX = {lab: i for i, lab in enumerate(LABELS)}


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows = gold, columns = predicted, LABELS order
    labels: tuple[str, ...] = LABELS

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def support(self) -> dict[str, int]:
        return {lab: int(n) for lab, n in zip(self.labels, self.counts.sum(axis=1))}

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    predicted: int


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: dict[str, ClassMetrics]
    confusion: ConfusionMatrix
    n: int
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class": {lab: vars(m) for lab, m in self.per_class.items()},
            "confusion": self.confusion.to_dict(),
            "flags": list(self.flags),
        }


def gold_map(records) -> dict[str, str]:
    return {r.event_id: r.true_label for r in records}


def _pairs(predictions: Sequence[Prediction], gold: Mapping[str, str]) -> list[tuple[str, str]]:
    seen: set[tuple[str, str]] = set()
    pairs = []
    for p in predictions:
        key = (p.event_id, p.model_id)
        if key in seen:
            raise ValueError(f"duplicate prediction for {key}")
        seen.add(key)
        if p.event_id not in gold:
            raise ValueError(f"no gold label for {p.event_id}")
        pairs.append((gold[p.event_id], p.label))
    return pairs


def confusion_matrix(pairs: Sequence[tuple[str, str]]) -> ConfusionMatrix:
    m = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    for g, p in pairs:
        m[_INDEX[g], _INDEX[p]] += 1
    return ConfusionMatrix(m)


def score(predictions: Sequence[Prediction], gold: Mapping[str, str]) -> ClassificationReport:
    """Accuracy plus macro and per-class precision/recall/F1 over the six labels.

    A class with no predicted (or no gold) instances gets precision (recall) 0
    and is listed in ``flags``; macro averages always divide by six.
    """
    if not predictions:
        raise ValueError("no predictions to score")
    cm = confusion_matrix(_pairs(predictions, gold))
    c = cm.counts
    tp = np.diag(c).astype(float)
    predicted = c.sum(axis=0)
    support = c.sum(axis=1)
    flags = []
    per_class = {}
    for i, lab in enumerate(LABELS):
        prec = tp[i] / predicted[i] if predicted[i] else 0.0
        rec = tp[i] / support[i] if support[i] else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if not predicted[i]:
            flags.append(f"zero_predicted:{lab}")
        if not support[i]:
            flags.append(f"zero_support:{lab}")
        per_class[lab] = ClassMetrics(prec, rec, f1, int(support[i]), int(predicted[i]))
    k = len(LABELS)
    return ClassificationReport(
        accuracy=float(tp.sum() / cm.total),
        macro_precision=sum(m.precision for m in per_class.values()) / k,
        macro_recall=sum(m.recall for m in per_class.values()) / k,
        macro_f1=sum(m.f1 for m in per_class.values()) / k,
        per_class=per_class,
        confusion=cm,
        n=cm.total,
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class DisagreementRow:
    event_id: str
    labels: dict[str, str]
    majority_label: str
    majority_count: int
    D: int
    max_conf: float
    tie: bool = False


def _majority(labels: Sequence[str]) -> tuple[str, int, bool]:
    counts = Counter(labels)
    top = max(counts.values())
    winners = sorted(lab for lab, n in counts.items() if n == top)
    return winners[0], top, len(winners) > 1


def disagreement_table(by_model: Mapping[str, Sequence[Prediction]]) -> list[DisagreementRow]:
    """Per-event plurality label and how many models disagree with it.

    Sorted by D descending, then max confidence descending, then event_id.
    Ties for the plurality go to the alphabetically first label code.
    """
    if len(by_model) < 2:
        raise ValueError("disagreement needs at least 2 models")
    per_event: dict[str, dict[str, Prediction]] = {}
    for model, preds in by_model.items():
        for p in preds:
            per_event.setdefault(p.event_id, {})[model] = p
    rows = []
    for eid, preds in per_event.items():
        if len(preds) < 2:
            continue
        labels = {m: preds[m].label for m in sorted(preds)}
        maj, count, tie = _majority(list(labels.values()))
        rows.append(DisagreementRow(eid, labels, maj, count, len(labels) - count,
                                    max(p.confidence for p in preds.values()), tie))
    rows.sort(key=lambda r: (-r.D, -r.max_conf, r.event_id))
    return rows


@dataclass(frozen=True)
class SliceRow:
    name: str
    lower: float
    upper: float
    n: int
    errors: int
    error_rate: float | None
    delta: float | None


@dataclass(frozen=True)
class LengthSliceReport:
    boundaries: tuple[float, ...]
    slices: list[SliceRow]
    overall_error: float
    rho: float | None
    flags: tuple[str, ...] = field(default_factory=tuple)


def length_slice_analysis(
    predictions: Sequence[Prediction],
    lengths: Mapping[str, int],
    gold: Mapping[str, str],
    boundaries: Sequence[float] | None = None,
) -> LengthSliceReport:
    """Error rate per notes-length slice relative to the overall rate.

    Slices are left-closed: [b_{i-1}, b_i). Default cut points are the length
    quartiles. rho is the Spearman correlation between length and the 0/1 error
    indicator.
    """
    if not predictions:
        raise ValueError("no predictions")
    _pairs(predictions, gold)
    x = np.array([lengths[p.event_id] for p in predictions], dtype=float)
    err = np.array([p.label != gold[p.event_id] for p in predictions], dtype=float)
    if boundaries is None:
        boundaries = tuple(float(b) for b in np.quantile(x, [0.25, 0.5, 0.75]))
    bounds = tuple(sorted(boundaries))
    edges = (-np.inf, *bounds, np.inf)
    overall = float(err.mean())
    names = ("Short", "Medium", "Long", "V.Long") if len(bounds) == 3 else \
        tuple(f"slice{i}" for i in range(len(edges) - 1))
    rows = []
    flags = []
    for name, lo, hi in zip(names, edges[:-1], edges[1:]):
        mask = (x >= lo) & (x < hi)
        n = int(mask.sum())
        if n == 0:
            flags.append(f"empty_slice:{name}")
            rows.append(SliceRow(name, lo, hi, 0, 0, None, None))
            continue
        rate = float(err[mask].mean())
        rows.append(SliceRow(name, lo, hi, n, int(err[mask].sum()), rate, rate - overall))
    rho = spearman(x, err) if x.size >= 2 else None
    if rho is None:
        flags.append("rho_undefined")
    return LengthSliceReport(bounds, rows, overall, rho, tuple(flags))
