"""Confusion counting, precision/recall/F1, and the rule-comparison benchmark."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import detectors, evt
from .data import LabeledSeries, SplitSpec, fit_norm_params, make_windows, normalize, split_series
from .detectors import (
    DEFAULT_RISK_GRID,
    PredictionErrors,
    calibrate_gaussian_threshold,
    calibrate_risk,
    detect,
    fit_gaussian,
    gaussian_logpd,
    prediction_errors,
    tukey_threshold,
    with_threshold,
)
from .training import TrainConfig, decision_scores, train_evt_lstm, train_forecaster


class LabelsRequired(ValueError):
    """The operation needs a labeled series."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class Metrics:
    """Precision, recall, and F1 with explicit undefined-ratio flags.

    An undefined ratio (zero denominator) is reported as 0.0 with its
    ``*_defined`` flag false, so reports never divide by zero.
    """

    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool = True
    recall_defined: bool = True
    f1_defined: bool = True


def confusion(flags, labels) -> ConfusionCounts:
    """Pointwise exact-index confusion counts."""
    flags = np.asarray(flags, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if flags.shape != labels.shape:
        raise ValueError(f"length mismatch: {flags.shape} vs {labels.shape}")
    return ConfusionCounts(
        tp=int(np.sum(flags & labels)),
        fp=int(np.sum(flags & ~labels)),
        fn=int(np.sum(~flags & labels)),
        tn=int(np.sum(~flags & ~labels)),
    )


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """Precision, recall, and their harmonic mean from confusion counts."""
    p_def = counts.tp + counts.fp > 0
    r_def = counts.tp + counts.fn > 0
    precision = counts.tp / (counts.tp + counts.fp) if p_def else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if r_def else 0.0
    f_def = precision + recall > 0
    f1 = 2.0 * precision * recall / (precision + recall) if f_def else 0.0
    return Metrics(
        tp=counts.tp, fp=counts.fp, fn=counts.fn, tn=counts.tn,
        precision=precision, recall=recall, f1=f1,
        precision_defined=p_def, recall_defined=r_def, f1_defined=f_def,
    )


@dataclass(frozen=True)
class BenchmarkConfig:
    """Shared pipeline settings for the rule comparison."""

    split: SplitSpec = SplitSpec(0.8, 0.1, 0.1)
    look_back: int = 20
    look_ahead: int = 1
    train: TrainConfig = TrainConfig()
    risk_grid: tuple[float, ...] = DEFAULT_RISK_GRID
    # Start the end-to-end model from the shared forecaster's weights; the
    # hybrid rules and the end-to-end model then share all settings.
    warm_start: bool = True


def _labels_at(split_labels: np.ndarray, errs: PredictionErrors) -> np.ndarray:
    return split_labels[errs.indices]


def _pool_errors(parts: list[PredictionErrors]) -> PredictionErrors:
    errors = np.concatenate([p.errors for p in parts])
    indices = np.arange(errors.size)  # identity only matters within one split
    return PredictionErrors(errors=errors, indices=indices)


def _metrics_row(det, labels) -> dict:
    metrics = compute_metrics(confusion(det.flags, labels))
    return {"metrics": asdict(metrics), "flagged": int(np.sum(det.flags))}


def benchmark(series: LabeledSeries, config: BenchmarkConfig) -> dict:
    """Run every rule end to end on one labeled series, from a single split
    and seed, and report one metrics row per rule.

    Rules whose calibration preconditions fail on the given data (for example
    a validation split without labeled anomalies for the Gaussian rule) are
    reported with an ``error`` entry instead of metrics.
    """
    if series.labels is None:
        raise LabelsRequired("benchmark needs a labeled series")

    train_s, val_s, test_s = split_series(series, config.split, config.look_back, config.look_ahead)
    norm = fit_norm_params(train_s)
    train_n, val_n, test_n = (normalize(s, norm) for s in (train_s, val_s, test_s))
    windows = {
        name: make_windows(s, config.look_back, config.look_ahead)
        for name, s in (("train", train_n), ("val", val_n), ("test", test_n))
    }

    forecaster = train_forecaster(config.train, windows["train"], windows["val"])
    errs = {
        name: prediction_errors(forecaster.network, windows[name])
        for name in ("train", "val", "test")
    }
    test_labels = _labels_at(test_s.labels, errs["test"])

    report: dict = {
        "look_back": config.look_back,
        "look_ahead": config.look_ahead,
        "seed": config.train.seed,
        "scored_points": int(len(errs["test"])),
        "rules": {},
    }

    # Gaussian: fit on training errors, calibrate the log-density threshold on
    # validation scores, evaluate on the test split.
    try:
        gfit = fit_gaussian(errs["train"])
        val_scores = gaussian_logpd(errs["val"].errors, gfit)
        threshold = calibrate_gaussian_threshold(val_scores, _labels_at(val_s.labels, errs["val"]))
        rule = with_threshold(gfit, threshold)
        det = detect(errs["test"], rule)
        report["rules"]["gaussian"] = {
            "params": {"mu": rule.mu, "sigma2": rule.sigma2, "logpd_threshold": rule.logpd_threshold},
            **_metrics_row(det, test_labels),
        }
    except (detectors.NoAnomaliesInValidation, detectors.DegenerateErrors) as exc:
        report["rules"]["gaussian"] = {"error": str(exc)}

    # Tukey: fence from the pooled train+val+test errors.
    pooled = _pool_errors([errs["train"], errs["val"], errs["test"]])
    tfit = tukey_threshold(pooled)
    det = detect(errs["test"], tfit)
    report["rules"]["tukey"] = {
        "params": {"q1": tfit.q1, "q3": tfit.q3, "fence": tfit.fence},
        **_metrics_row(det, test_labels),
    }

    # Extreme-value hybrid: risk chosen on the initialization stream
    # (training plus validation errors and their labels).
    init_errors = _pool_errors([errs["train"], errs["val"]])
    init_labels = np.concatenate(
        [_labels_at(train_s.labels, errs["train"]), _labels_at(val_s.labels, errs["val"])]
    )
    evt_risk = config.train.risk
    try:
        evt_rule = calibrate_risk(
            init_errors, init_labels, grid=config.risk_grid, level=config.train.init_quantile
        )
        evt_risk = evt_rule.risk
        det = detect(errs["test"], evt_rule)
        report["rules"]["evt"] = {
            "params": {
                "risk": evt_rule.risk,
                "threshold": evt_rule.threshold,
                "gamma": evt_rule.fit.gamma,
                "sigma": evt_rule.fit.sigma,
                "initial_threshold": evt_rule.fit.threshold,
            },
            **_metrics_row(det, test_labels),
        }
    except (evt.TooFewExcesses, evt.RiskTooHigh, ValueError) as exc:
        report["rules"]["evt"] = {"error": str(exc)}

    # End-to-end model: reuses the risk chosen for the hybrid rule (the
    # regulators picked for the hybrid models carry over).
    end_to_end = train_evt_lstm(
        replace(config.train, risk=evt_risk),
        windows["train"],
        windows["val"],
        network=forecaster.network.copy() if config.warm_start else None,
    )
    det = decision_scores(end_to_end, windows["test"])
    report["rules"]["evt_lstm"] = {
        "params": {"risk": evt_risk, "threshold": end_to_end.threshold},
        **_metrics_row(det, test_labels),
    }
    return report


def format_report(report: dict) -> str:
    """Human-readable table of a benchmark report."""
    lines = [
        f"{'rule':<10} {'precision':>9} {'recall':>7} {'f1':>6} {'tp':>4} {'fp':>4} {'fn':>4} {'flagged':>8}"
    ]
    for name, row in report["rules"].items():
        if "error" in row:
            lines.append(f"{name:<10} calibration failed: {row['error']}")
            continue
        m = row["metrics"]
        lines.append(
            f"{name:<10} {m['precision']:>9.3f} {m['recall']:>7.3f} {m['f1']:>6.3f} "
            f"{m['tp']:>4d} {m['fp']:>4d} {m['fn']:>4d} {row['flagged']:>8d}"
        )
    return "\n".join(lines)
