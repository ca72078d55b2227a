"""Detection rules over forecaster prediction errors.

Three rules share the same inputs (absolute one-step-ahead prediction errors)
and differ in how the flagging threshold is derived:

* Gaussian: fit mean/variance to training errors by MLE, score points by
  Gaussian log probability density, flag scores below a threshold calibrated
  on validation data.
* Tukey fences: flag errors above Q3 + 3 * (Q3 - Q1) of the pooled errors.
* Extreme-value: flag errors above the peaks-over-threshold detection
  threshold for a risk level chosen on an initialization stream.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import evt
from .data import WindowedDataset
from .network import Network, forward


class DegenerateErrors(ValueError):
    """Errors carry no spread, so the rule cannot be fitted."""


class NoAnomaliesInValidation(ValueError):
    """Threshold calibration needs at least one labeled anomaly."""


class RuleNotCalibrated(ValueError):
    """The rule is missing its calibrated false-positive regulator."""


@dataclass(frozen=True)
class PredictionErrors:
    """Absolute prediction errors aligned to indices of the source series."""

    errors: np.ndarray
    indices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "errors", np.asarray(self.errors, dtype=float))
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))
        if len(self.errors) != len(self.indices):
            raise ValueError("errors and indices must align")
        if np.any(self.errors < 0):
            raise ValueError("absolute errors cannot be negative")

    def __len__(self) -> int:
        return len(self.errors)


@dataclass(frozen=True)
class GaussianFit:
    """MLE mean/variance of errors plus the calibrated log-density threshold."""

    mu: float
    sigma2: float
    logpd_threshold: float | None = None

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DegenerateErrors("sigma2 must be positive")


@dataclass(frozen=True)
class TukeyFit:
    """Quartiles and the fence threshold Q3 + 3 * (Q3 - Q1)."""

    q1: float
    q3: float
    fence: float

    def __post_init__(self):
        if self.q3 < self.q1:
            raise ValueError("q3 must be >= q1")
        if abs(self.fence - (self.q3 + 3.0 * (self.q3 - self.q1))) > 1e-9:
            raise ValueError("fence must equal q3 + 3 * (q3 - q1)")


@dataclass(frozen=True)
class EvtRule:
    """Fitted tail, risk level, and the induced detection threshold."""

    fit: evt.GpdFit
    risk: float
    threshold: float


@dataclass(frozen=True)
class DetectionResult:
    """Per-timestamp anomaly flags and rule-specific scores."""

    indices: np.ndarray
    scores: np.ndarray
    flags: np.ndarray

    def __post_init__(self):
        if not (len(self.indices) == len(self.scores) == len(self.flags)):
            raise ValueError("indices, scores, and flags must align")

    def __len__(self) -> int:
        return len(self.flags)


def prediction_errors(network: Network, data: WindowedDataset, batch_size: int = 256) -> PredictionErrors:
    """Absolute one-step-ahead errors |prediction - target| per target index.

    For look-ahead > 1 only the first horizon component is used: it is the
    forecast made from the most recent window for that timestamp. Inference
    runs with dropout disabled and is deterministic.
    """
    preds = np.empty(len(data))
    for lo in range(0, len(data), batch_size):
        batch, _ = forward(network, data.inputs[lo : lo + batch_size], train=False)
        preds[lo : lo + len(batch)] = batch[:, 0]
    errors = np.abs(preds - data.targets[:, 0])
    return PredictionErrors(errors=errors, indices=data.target_indices.copy())


def fit_gaussian(train_errors: PredictionErrors) -> GaussianFit:
    """MLE Gaussian fit: sample mean and biased (divide by N) variance."""
    e = train_errors.errors
    if len(e) < 2:
        raise DegenerateErrors("need at least two errors to fit")
    mu = float(e.mean())
    sigma2 = float(np.mean((e - mu) ** 2))
    if sigma2 == 0.0:
        raise DegenerateErrors("all errors are equal; variance is zero")
    return GaussianFit(mu=mu, sigma2=sigma2)


def gaussian_logpd(e, fit: GaussianFit) -> np.ndarray:
    """Gaussian log probability density of errors; low values mean anomalous."""
    e = np.asarray(e, dtype=float)
    return -0.5 * np.log(2.0 * np.pi * fit.sigma2) - (e - fit.mu) ** 2 / (2.0 * fit.sigma2)


def calibrate_gaussian_threshold(val_scores, val_labels) -> float:
    """Pick the log-density threshold maximizing F1 on validation scores.

    Candidates are midpoints between adjacent sorted unique scores; a point is
    flagged when its score falls below the threshold. Ties in F1 break toward
    the lower threshold (fewer false positives).
    """
    scores = np.asarray(val_scores, dtype=float)
    labels = np.asarray(val_labels, dtype=bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    if not labels.any():
        raise NoAnomaliesInValidation("validation stream has no labeled anomalies")
    if labels.all():
        raise NoAnomaliesInValidation("validation stream has no normal points")

    unique = np.unique(scores)
    candidates = (unique[:-1] + unique[1:]) / 2.0
    if candidates.size == 0:
        raise DegenerateErrors("all validation scores are identical")

    best_f1, best_threshold = -1.0, None
    for threshold in candidates:
        flagged = scores < threshold
        tp = int(np.sum(flagged & labels))
        fp = int(np.sum(flagged & ~labels))
        fn = int(np.sum(~flagged & labels))
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1:
            best_f1, best_threshold = f1, float(threshold)
    return best_threshold


def tukey_threshold(all_errors: PredictionErrors) -> TukeyFit:
    """Quartile fence over the pooled train, validation, and test errors."""
    e = all_errors.errors
    if len(e) == 0:
        raise ValueError("cannot compute quartiles of an empty sample")
    q1 = float(np.quantile(e, 0.25))
    q3 = float(np.quantile(e, 0.75))
    return TukeyFit(q1=q1, q3=q3, fence=q3 + 3.0 * (q3 - q1))


DEFAULT_RISK_GRID = (1e-3, 1e-4, 1e-5)


def calibrate_risk(
    init_errors: PredictionErrors,
    init_labels: np.ndarray,
    grid: tuple[float, ...] = DEFAULT_RISK_GRID,
    level: float = 0.98,
) -> EvtRule:
    """Choose the extreme-value risk level on the initialization stream.

    The stream (training plus validation errors) supplies both the tail fit
    and the labels. Among grid values whose threshold catches every labeled
    anomaly, the smallest wins (fewest false positives); if none reaches full
    recall, the value with the best F1 wins.
    """
    labels = np.asarray(init_labels, dtype=bool)
    if labels.shape != init_errors.errors.shape:
        raise ValueError("labels must align with errors")
    fit = evt.fit_tail(init_errors.errors, level=level)

    full_recall: list[tuple[float, float]] = []
    scored: list[tuple[float, float, float]] = []
    for risk in sorted(grid):
        threshold = evt.pot_threshold(fit, risk)
        flagged = init_errors.errors > threshold
        tp = int(np.sum(flagged & labels))
        fp = int(np.sum(flagged & ~labels))
        fn = int(np.sum(~flagged & labels))
        recall = 1.0 if (tp + fn) == 0 else tp / (tp + fn)
        f1 = 2.0 * tp / (2.0 * tp + fp + fn) if tp else 0.0
        if recall == 1.0:
            full_recall.append((risk, threshold))
        scored.append((f1, -risk, threshold))
    if full_recall:
        risk, threshold = min(full_recall)
    else:
        f1, neg_risk, threshold = max(scored)
        risk = -neg_risk
    return EvtRule(fit=fit, risk=risk, threshold=threshold)


def detect(errors: PredictionErrors, rule) -> DetectionResult:
    """Apply a calibrated rule to errors, yielding flags and scores.

    Gaussian rules flag log densities below the calibrated threshold; Tukey
    and extreme-value rules flag errors strictly above theirs. Scores are the
    log densities, the raw errors, and the threshold-relative decision scores
    respectively.
    """
    if isinstance(rule, GaussianFit):
        if rule.logpd_threshold is None:
            raise RuleNotCalibrated("gaussian rule has no calibrated threshold")
        scores = gaussian_logpd(errors.errors, rule)
        flags = scores < rule.logpd_threshold
    elif isinstance(rule, TukeyFit):
        scores = errors.errors.copy()
        flags = scores > rule.fence
    elif isinstance(rule, EvtRule):
        scores = errors.errors - rule.threshold
        flags = errors.errors > rule.threshold
    else:
        raise TypeError(f"unknown rule type {type(rule).__name__}")
    return DetectionResult(indices=errors.indices.copy(), scores=scores, flags=flags)


def with_threshold(fit: GaussianFit, logpd_threshold: float) -> GaussianFit:
    """Attach a calibrated threshold to a Gaussian fit."""
    return replace(fit, logpd_threshold=float(logpd_threshold))
