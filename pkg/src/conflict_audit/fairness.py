"""Group fairness between State and NonState actors: SPD and equalized-odds gaps."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .labels import LABELS, NON_STATE, OTHER, STATE
from .modelgate import Prediction
from .stats import bootstrap_ci, permutation_test


@dataclass(frozen=True)
class GroupCounts:
    n: int
    predicted_positive: int
    gold_positive: int
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def tpr(self) -> float | None:
        return self.tp / self.gold_positive if self.gold_positive else None

    @property
    def fpr(self) -> float | None:
        neg = self.fp + self.tn
        return self.fp / neg if neg else None

    @property
    def positive_rate(self) -> float:
        return self.predicted_positive / self.n


@dataclass
class FairnessReport:
    positive_label: str
    group_a: str
    group_b: str
    spd: float
    spd_ci: tuple[float, float]
    d_tpr: float | None
    d_fpr: float | None
    p_tpr: float | None
    p_fpr: float | None
    counts: dict[str, GroupCounts]
    n_excluded: int = 0
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spd_ci"] = list(self.spd_ci)
        return d


@dataclass(frozen=True)
class _Rows:
    group: np.ndarray      # group name per event
    pred_pos: np.ndarray   # bool
    gold_pos: np.ndarray   # bool, all False when gold is absent


def _rows(preds: Sequence[Prediction], groups: Mapping[str, str], positive_label: str,
          gold: Mapping[str, str] | None = None) -> tuple[_Rows, int]:
    if positive_label not in LABELS:
        raise ValueError(f"unknown positive label {positive_label!r}")
    kept = []
    excluded = 0
    for p in sorted(preds, key=lambda p: p.event_id):
        g = groups.get(p.event_id)
        if g is None:
            raise ValueError(f"no actor group for event {p.event_id}")
        if g == OTHER:
            excluded += 1
            continue
        if gold is not None and p.event_id not in gold:
            raise ValueError(f"no gold label for event {p.event_id}")
        kept.append((g, p.label == positive_label,
                     gold is not None and gold[p.event_id] == positive_label))
    if not kept:
        return _Rows(np.array([], dtype=object), np.array([], bool), np.array([], bool)), excluded
    g, pp, gp = zip(*kept)
    return _Rows(np.array(g, dtype=object), np.array(pp), np.array(gp)), excluded


def _select(rows: _Rows, group: str) -> tuple[np.ndarray, np.ndarray]:
    m = rows.group == group
    if not m.any():
        raise ValueError(f"group {group!r} is empty")
    return rows.pred_pos[m], rows.gold_pos[m]


def group_counts(pred_pos: np.ndarray, gold_pos: np.ndarray) -> GroupCounts:
    tp = int((pred_pos & gold_pos).sum())
    fp = int((pred_pos & ~gold_pos).sum())
    fn = int((~pred_pos & gold_pos).sum())
    tn = int((~pred_pos & ~gold_pos).sum())
    return GroupCounts(len(pred_pos), int(pred_pos.sum()), int(gold_pos.sum()), tp, fp, fn, tn)


def statistical_parity(preds: Sequence[Prediction], groups: Mapping[str, str], positive_label: str,
                       group_a: str = STATE, group_b: str = NON_STATE,
                       n_boot: int = 1000, seed: int = 0) -> tuple[float, tuple[float, float]]:
    """P(pred = positive | a) - P(pred = positive | b), with a group-stratified bootstrap CI."""
    rows, _ = _rows(preds, groups, positive_label)
    a, _ = _select(rows, group_a)
    b, _ = _select(rows, group_b)
    spd = float(a.mean() - b.mean())
    if a.size + b.size < 2:
        return spd, (spd, spd)
    ci = bootstrap_ci((a, b), lambda x, y: x.mean() - y.mean(), n_boot=n_boot, seed=seed)
    return spd, ci


def _gap(ra: float | None, rb: float | None) -> float | None:
    return None if ra is None or rb is None else ra - rb


def equalized_odds(preds: Sequence[Prediction], gold: Mapping[str, str], groups: Mapping[str, str],
                   positive_label: str, group_a: str = STATE,
                   group_b: str = NON_STATE) -> tuple[float | None, float | None]:
    """(TPR_a - TPR_b, FPR_a - FPR_b), one-vs-rest; a gap is None when a rate is undefined."""
    rows, _ = _rows(preds, groups, positive_label, gold)
    ca = group_counts(*_select(rows, group_a))
    cb = group_counts(*_select(rows, group_b))
    return _gap(ca.tpr, cb.tpr), _gap(ca.fpr, cb.fpr)


def _stratum_test(rows: _Rows, group_a: str, group_b: str, stratum: np.ndarray,
                  n_perm: int, seed: int) -> float | None:
    """Permute group labels within one gold stratum; statistic is the prediction-rate gap."""
    a = rows.pred_pos[stratum & (rows.group == group_a)]
    b = rows.pred_pos[stratum & (rows.group == group_b)]
    if a.size == 0 or b.size == 0:
        return None
    # Fixed group order keeps p identical when callers swap a and b.
    if group_a > group_b:
        a, b = b, a
    return permutation_test(a, b, n_perm=n_perm, seed=seed).p_value


def fairness_significance(preds: Sequence[Prediction], gold: Mapping[str, str],
                          groups: Mapping[str, str], positive_label: str,
                          n_perm: int = 1000, seed: int = 0, group_a: str = STATE,
                          group_b: str = NON_STATE) -> tuple[float | None, float | None]:
    """Permutation p-values for the TPR gap (gold positives) and FPR gap (gold negatives)."""
    rows, _ = _rows(preds, groups, positive_label, gold)
    p_tpr = _stratum_test(rows, group_a, group_b, rows.gold_pos, n_perm, seed)
    p_fpr = _stratum_test(rows, group_a, group_b, ~rows.gold_pos, n_perm, seed)
    return p_tpr, p_fpr


def fairness_report(preds: Sequence[Prediction], gold: Mapping[str, str], groups: Mapping[str, str],
                    positive_label: str = "V", n_boot: int = 1000, n_perm: int = 1000, seed: int = 0,
                    group_a: str = STATE, group_b: str = NON_STATE) -> FairnessReport:
    rows, excluded = _rows(preds, groups, positive_label, gold)
    ca = group_counts(*_select(rows, group_a))
    cb = group_counts(*_select(rows, group_b))
    spd, ci = statistical_parity(preds, groups, positive_label, group_a, group_b, n_boot, seed)
    d_tpr, d_fpr = _gap(ca.tpr, cb.tpr), _gap(ca.fpr, cb.fpr)
    p_tpr, p_fpr = fairness_significance(preds, gold, groups, positive_label, n_perm, seed,
                                         group_a, group_b)
    flags = []
    if d_tpr is None:
        flags.append("tpr_undefined")
    if d_fpr is None:
        flags.append("fpr_undefined")
    if p_tpr is None and d_tpr is not None:
        flags.append("p_tpr_degenerate")
    if p_fpr is None and d_fpr is not None:
        flags.append("p_fpr_degenerate")
    if excluded:
        flags.append(f"excluded_other:{excluded}")
    return FairnessReport(positive_label, group_a, group_b, spd, ci, d_tpr, d_fpr, p_tpr, p_fpr,
                          {group_a: ca, group_b: cb}, excluded, flags)
