"""Validation reporting: metrics, histograms, extreme-trace exports.

Runs a model sequence against a dataset of recorded traces and summarizes
per-trace forecast quality for every modeled channel: normalized mean
squared error, RMSE, peak-amplitude discrepancy, divergence records, and
a histogram of the error distribution. Exports are plain CSV so they can
be diffed between runs.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import DataError
from .fnarx_model import ErrorMetrics, compute_metrics
from .mnarx_auto import ModelSequence, SequencePrediction, predict
from .signals import Dataset, format_float

MIN_HISTOGRAM_BINS = 10
MAX_HISTOGRAM_BINS = 10_000


@dataclass
class ChannelReport:
    """Per-channel evaluation summary over one validation set."""

    channel: str
    metrics: ErrorMetrics
    peak_discrepancy: np.ndarray        # per trace: max|pred| - max|true|
    worst_error_id: Optional[str]       # trace with the largest finite error
    worst_peak_id: Optional[str]        # trace with the largest |peak gap|
    histogram: Tuple[np.ndarray, np.ndarray]  # (bin edges, counts) of errors
    failures: List[Tuple[str, int]]     # (trace id, first non-finite step)


@dataclass
class EvaluationReport:
    target: str
    trace_ids: List[str]
    dt: float
    channels: Dict[str, ChannelReport] = field(default_factory=dict)
    prediction: Optional[SequencePrediction] = None


def freedman_diaconis_edges(
    values: np.ndarray, min_bins: int = MIN_HISTOGRAM_BINS
) -> np.ndarray:
    """Histogram bin edges by the Freedman-Diaconis rule, floored at
    ``min_bins`` bins; degenerate samples get a unit-wide padded range."""
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return np.linspace(0.0, 1.0, min_bins + 1)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return np.linspace(lo - 0.5, hi + 0.5, min_bins + 1)
    q75, q25 = np.percentile(v, [75, 25])
    iqr = q75 - q25
    n_bins = min_bins
    if iqr > 0:
        width = 2.0 * iqr / v.size ** (1.0 / 3.0)
        # extreme outliers can push the raw rule to absurd bin counts
        n_bins = int(min(max(min_bins, math.ceil((hi - lo) / width)), MAX_HISTOGRAM_BINS))
    return np.linspace(lo, hi, n_bins + 1)


def evaluate_sequence(
    sequence: ModelSequence,
    dataset: Dataset,
    seed_with_truth: bool = True,
) -> EvaluationReport:
    """Forecast every trace of ``dataset`` and summarize per-channel errors.

    ``seed_with_truth`` starts each modeled channel from its first t0
    recorded values (a rest start otherwise). Traces whose forecast
    diverges are listed under failures and excluded from mean errors.
    """
    missing = [ch for ch in sequence.exogenous if ch not in dataset.channel_names]
    if missing:
        raise DataError(f"dataset lacks exogenous channels {missing}")
    inputs = {ch: dataset.stack(ch) for ch in sequence.exogenous}
    seeds: Optional[Dict[str, np.ndarray]] = None
    if seed_with_truth:
        seeds = {}
        for ch in sequence.model_targets:
            if ch not in dataset.channel_names:
                raise DataError(
                    f"dataset lacks recorded channel '{ch}' needed for seeding"
                )
            t0 = sequence.model_for(ch).t0_steps
            if t0 > 0:
                seeds[ch] = dataset.stack(ch)[:, :t0]
    result = predict(sequence, inputs, dataset.dt, seeds)
    ids = [r.id for r in dataset.realizations]
    report = EvaluationReport(
        target=sequence.target, trace_ids=ids, dt=dataset.dt, prediction=result
    )
    for ch in sequence.model_targets:
        if ch not in dataset.channel_names:
            continue
        truth = dataset.stack(ch)
        preds = result.channels[ch]
        metrics = compute_metrics(truth, preds)
        with np.errstate(invalid="ignore"):
            peak = np.max(np.abs(preds), axis=1) - np.max(np.abs(truth), axis=1)
        finite = np.isfinite(metrics.per_trace)
        worst_error_id = None
        if np.any(finite):
            pos = int(np.argmax(np.where(finite, metrics.per_trace, -np.inf)))
            worst_error_id = ids[pos]
        worst_peak_id = None
        peak_ok = np.isfinite(peak)
        if np.any(peak_ok):
            pos = int(np.argmax(np.where(peak_ok, np.abs(peak), -np.inf)))
            worst_peak_id = ids[pos]
        edges = freedman_diaconis_edges(metrics.per_trace)
        counts, _ = np.histogram(
            metrics.per_trace[np.isfinite(metrics.per_trace)], bins=edges
        )
        bad = result.fail_steps.get(ch)
        failures = []
        if bad is not None:
            failures = [(ids[i], int(bad[i])) for i in np.flatnonzero(bad >= 0)]
        report.channels[ch] = ChannelReport(
            channel=ch,
            metrics=metrics,
            peak_discrepancy=peak,
            worst_error_id=worst_error_id,
            worst_peak_id=worst_peak_id,
            histogram=(edges, counts),
            failures=failures,
        )
    return report


def export_report(
    report: EvaluationReport, out_dir: str, dataset: Optional[Dataset] = None
) -> List[str]:
    """Write the report as CSV files under ``out_dir``.

    ``metrics.csv`` holds one row per (channel, trace) with the error
    metrics; ``hist_<channel>.csv`` the error histograms; and, when the
    dataset is given, ``trace_<id>.csv`` the recorded and predicted series
    of each channel's extreme traces. Returns the written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written: List[str] = []

    metrics_path = os.path.join(out_dir, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write("channel,trace_id,normalized_mse,rmse,peak_discrepancy,failed_step\n")
        for ch, rep in report.channels.items():
            fail_by_id = dict(rep.failures)
            for i, tid in enumerate(report.trace_ids):
                fh.write(
                    f"{ch},{tid},{format_float(rep.metrics.per_trace[i])},"
                    f"{format_float(rep.metrics.rmse_per_trace[i])},"
                    f"{format_float(rep.peak_discrepancy[i])},"
                    f"{fail_by_id.get(tid, -1)}\n"
                )
    written.append(metrics_path)

    for ch, rep in report.channels.items():
        hist_path = os.path.join(out_dir, f"hist_{ch}.csv")
        edges, counts = rep.histogram
        with open(hist_path, "w") as fh:
            fh.write("bin_left,bin_right,count\n")
            for k in range(counts.shape[0]):
                fh.write(
                    f"{format_float(edges[k])},{format_float(edges[k + 1])},"
                    f"{int(counts[k])}\n"
                )
        written.append(hist_path)

    if dataset is not None and report.prediction is not None:
        extreme_ids = []
        for rep in report.channels.values():
            for tid in (rep.worst_error_id, rep.worst_peak_id):
                if tid is not None and tid not in extreme_ids:
                    extreme_ids.append(tid)
        id_pos = {tid: i for i, tid in enumerate(report.trace_ids)}
        channels = list(report.channels)
        for tid in extreme_ids:
            pos = id_pos[tid]
            trace_path = os.path.join(out_dir, f"trace_{tid}.csv")
            with open(trace_path, "w") as fh:
                header = ["step", "time"]
                for ch in channels:
                    header += [f"{ch}_true", f"{ch}_pred"]
                fh.write(",".join(header) + "\n")
                truths = {ch: dataset.stack(ch)[pos] for ch in channels}
                preds = {ch: report.prediction.channels[ch][pos] for ch in channels}
                n_steps = next(iter(truths.values())).shape[0]
                for k in range(n_steps):
                    row = [str(k), format_float(k * report.dt)]
                    for ch in channels:
                        row += [
                            format_float(truths[ch][k]),
                            format_float(preds[ch][k]),
                        ]
                    fh.write(",".join(row) + "\n")
            written.append(trace_path)
    return written
