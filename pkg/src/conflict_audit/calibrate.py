"""Post-hoc calibration: isotonic (PAVA), temperature scaling, Brier, selective prediction."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .labels import LABELS
from .modelgate import Prediction

T_BOUNDS = (0.05, 20.0)
T_XATOL = 1e-4
LOG_FLOOR = 1e-9
DEFAULT_TAUS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95)


def brier(confidences: Sequence[float], outcomes: Sequence[int]) -> float:
    f = np.asarray(confidences, dtype=float)
    o = np.asarray(outcomes, dtype=float)
    if f.size == 0:
        raise ValueError("empty input")
    if f.shape != o.shape:
        raise ValueError("confidences and outcomes differ in length")
    if ((f < 0) | (f > 1)).any():
        raise ValueError("confidences must lie in [0, 1]")
    if not np.isin(o, (0.0, 1.0)).all():
        raise ValueError("outcomes must be 0 or 1")
    return float(np.mean((f - o) ** 2))


# ---------------------------------------------------------------- isotonic

@dataclass(frozen=True)
class IsotonicMap:
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __call__(self, x: float) -> float:
        """Right-continuous step function, clamped outside the fitted range."""
        i = bisect.bisect_right(self.xs, x) - 1
        return self.ys[max(i, 0)]

    def apply(self, xs: Sequence[float]) -> np.ndarray:
        return np.array([self(x) for x in xs], dtype=float)

    def to_dict(self) -> dict:
        return {"breakpoints": [[x, y] for x, y in zip(self.xs, self.ys)]}


def pava(values: Sequence[float], weights: Sequence[float] | None = None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pooling adjacent violators."""
    y = np.asarray(values, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wsum: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(yi)
        wsum.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wsum.pop(), sizes.pop()
            total = wsum[-1] + w2
            means[-1] = (means[-1] * wsum[-1] + m2 * w2) / total
            wsum[-1] = total
            sizes[-1] += s2
    return np.repeat(means, sizes)


def fit_isotonic(confidences: Sequence[float], correct: Sequence[float]) -> IsotonicMap:
    """Isotonic map from confidence to empirical correctness.

    Equal confidences are pooled into one weighted point before fitting.
    """
    x = np.asarray(confidences, dtype=float)
    y = np.asarray(correct, dtype=float)
    if x.size == 0:
        raise ValueError("empty input")
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    ux, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=y)
    fitted = pava(sums / counts, counts)
    return IsotonicMap(tuple(float(v) for v in ux), tuple(float(np.clip(v, 0, 1)) for v in fitted))


# ---------------------------------------------------------------- temperature

def _as_matrix(dists) -> np.ndarray:
    if isinstance(dists, np.ndarray):
        return dists.astype(float)
    rows = [[d[lab] for lab in LABELS] if isinstance(d, Mapping) else list(d) for d in dists]
    return np.asarray(rows, dtype=float)


def temperature_scale(dists, T: float) -> np.ndarray:
    """softmax(log(p) / T), row-wise, with p floored at 1e-9."""
    p = np.maximum(_as_matrix(dists), LOG_FLOOR)
    z = np.log(p) / T
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class TemperatureMap:
    T: float
    nll: float
    flags: tuple[str, ...] = ()

    def apply(self, dists) -> np.ndarray:
        return temperature_scale(dists, self.T)

    def to_dict(self) -> dict:
        return {"T": self.T, "nll": self.nll, "flags": list(self.flags)}


def _nll(p: np.ndarray, gold_idx: np.ndarray, T: float) -> float:
    q = temperature_scale(p, T)
    return float(-np.log(q[np.arange(len(gold_idx)), gold_idx]).mean())


def fit_temperature(dists, gold: Sequence[str]) -> TemperatureMap:
    """Single temperature minimizing gold-label NLL, bounded search on [0.05, 20]."""
    p = _as_matrix(dists)
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape[1] != len(LABELS) or p.shape[0] != len(gold):
        raise ValueError("need one six-way distribution per gold label")
    gold_idx = np.array([LABELS.index(g) for g in gold])
    flags = []
    if (p < LOG_FLOOR).any():
        flags.append("zeros_floored")
    res = minimize_scalar(lambda t: _nll(p, gold_idx, t), bounds=T_BOUNDS, method="bounded",
                          options={"xatol": T_XATOL})
    T = float(res.x)
    if T - T_BOUNDS[0] < 1e-3 or T_BOUNDS[1] - T < 1e-3:
        flags.append("degenerate_at_bound")
    return TemperatureMap(T, float(res.fun), tuple(flags))


# ---------------------------------------------------------------- selective prediction

@dataclass(frozen=True)
class SelectivePoint:
    tau: float
    coverage: float
    accuracy: float | None
    n_retained: int


def selective_curve(confidences: Sequence[float], correct: Sequence[bool],
                    taus: Sequence[float] = DEFAULT_TAUS) -> list[SelectivePoint]:
    """Coverage and accuracy on the subset with confidence >= tau."""
    if list(taus) != sorted(taus):
        raise ValueError("taus must be sorted ascending")
    c = np.asarray(confidences, dtype=float)
    ok = np.asarray(correct, dtype=bool)
    n = c.size
    out = []
    for tau in taus:
        keep = c >= tau
        k = int(keep.sum())
        acc = float(ok[keep].mean()) if k else None
        out.append(SelectivePoint(float(tau), k / n if n else 0.0, acc, k))
    return out


# ---------------------------------------------------------------- per-model bundle

@dataclass
class CalibrationReport:
    n_fit: int
    n_eval: int
    brier_raw: float
    brier_iso: float
    brier_temp: float
    isotonic: IsotonicMap
    temperature: TemperatureMap
    selective: dict[str, list[SelectivePoint]]
    split: float | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_fit": self.n_fit,
            "n_eval": self.n_eval,
            "split": self.split,
            "brier": {"raw": self.brier_raw, "iso": self.brier_iso, "temp": self.brier_temp},
            "isotonic": self.isotonic.to_dict(),
            "temperature": self.temperature.to_dict(),
            "selective": {k: [vars(p) for p in v] for k, v in self.selective.items()},
            "flags": list(self.flags),
        }


def calibrated_confidences(report: CalibrationReport, preds: Sequence[Prediction]) -> dict[str, np.ndarray]:
    """Raw, isotonic and temperature-scaled confidence in each predicted label."""
    raw = np.array([p.confidence for p in preds])
    scaled = report.temperature.apply([p.logits for p in preds])
    label_idx = np.array([LABELS.index(p.label) for p in preds])
    return {
        "raw": raw,
        "iso": report.isotonic.apply(raw),
        "temp": scaled[np.arange(len(preds)), label_idx],
    }


def calibrate_predictions(
    preds: Sequence[Prediction],
    gold: Mapping[str, str],
    taus: Sequence[float] = DEFAULT_TAUS,
    split: float | None = None,
    seed: int = 0,
) -> CalibrationReport:
    """Fit both calibrators on top-label correctness and evaluate all three regimes.

    With ``split`` (e.g. 0.8) the maps are fitted on a seeded fraction and all
    Brier scores and curves are computed on the held-out rest.
    """
    preds = sorted(preds, key=lambda p: p.event_id)
    if not preds:
        raise ValueError("no predictions")
    fit, evals = list(preds), list(preds)
    if split is not None:
        if not 0 < split < 1:
            raise ValueError("split must be in (0, 1)")
        order = np.random.default_rng(seed).permutation(len(preds))
        cut = int(round(split * len(preds)))
        if cut == 0 or cut == len(preds):
            raise ValueError("split leaves an empty partition")
        fit = [preds[i] for i in sorted(order[:cut])]
        evals = [preds[i] for i in sorted(order[cut:])]

    fit_correct = [float(p.label == gold[p.event_id]) for p in fit]
    iso = fit_isotonic([p.confidence for p in fit], fit_correct)
    temp = fit_temperature([p.logits for p in fit], [gold[p.event_id] for p in fit])

    correct = np.array([p.label == gold[p.event_id] for p in evals])
    report = CalibrationReport(len(fit), len(evals), 0.0, 0.0, 0.0, iso, temp, {}, split,
                               list(temp.flags))
    conf = calibrated_confidences(report, evals)
    report.brier_raw = brier(conf["raw"], correct)
    report.brier_iso = brier(conf["iso"], correct)
    report.brier_temp = brier(conf["temp"], correct)
    report.selective = {k: selective_curve(v, correct, taus) for k, v in conf.items()}
    return report
