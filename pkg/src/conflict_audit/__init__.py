"""Bias, fairness, calibration and framing-robustness audits for conflict-event classifiers."""

__version__ = "0.1.0"

from .labels import ACTOR_GROUPS, LABELS, LABEL_NAMES  # noqa: E402

__all__ = ["__version__", "LABELS", "LABEL_NAMES", "ACTOR_GROUPS"]
