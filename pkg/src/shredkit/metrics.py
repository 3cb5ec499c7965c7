"""Reconstruction error metrics and the model-update closeness analysis.

The headline metric is the time-averaged relative l2 error per field: for
each evaluated snapshot column the ratio ||truth - estimate|| / ||truth||,
averaged over columns. Truth columns with zero norm cannot contribute a
finite ratio; they are skipped and reported. All reported errors are
computed on physical-unit fields (after inverting the min-max scaling),
since the ratio is not invariant under affine scaling with a nonzero offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_float_matrix


@dataclass(frozen=True)
class RelativeError:
    """Average relative l2 error plus its per-column series."""

    value: float
    columns: np.ndarray        # evaluated column indices
    series: np.ndarray         # per-column relative errors, same order
    skipped: tuple[int, ...]   # zero-norm truth columns that were left out


@dataclass(frozen=True)
class FieldErrorRow:
    field: str
    channel: str
    error: RelativeError


def avg_relative_error(truth, estimate, columns=None) -> RelativeError:
    """Mean over columns of ||truth_j - estimate_j||_2 / ||truth_j||_2."""
    truth = as_float_matrix(truth, "truth")
    estimate = as_float_matrix(estimate, "estimate")
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {estimate.shape}")
    if columns is None:
        columns = np.arange(truth.shape[1])
    columns = np.asarray(columns, dtype=np.int64)
    t = truth[:, columns]
    e = estimate[:, columns]
    truth_norms = np.linalg.norm(t, axis=0)
    diff_norms = np.linalg.norm(t - e, axis=0)
    nonzero = truth_norms > 0.0
    skipped = tuple(int(c) for c in columns[~nonzero])
    series = diff_norms[nonzero] / truth_norms[nonzero]
    if series.size == 0:
        raise ValueError("every truth column has zero norm; error undefined")
    return RelativeError(
        value=float(series.mean()),
        columns=columns[nonzero],
        series=series,
        skipped=skipped,
    )


def field_report(truth_fields: dict[str, np.ndarray],
                 estimate_fields: dict[str, np.ndarray],
                 columns, channel: str = "") -> list[FieldErrorRow]:
    """Per-field average relative errors over the given snapshot columns."""
    rows = []
    for name, truth in truth_fields.items():
        err = avg_relative_error(truth, estimate_fields[name], columns)
        rows.append(FieldErrorRow(field=name, channel=channel, error=err))
    return rows


@dataclass(frozen=True)
class LocationVerdict:
    location: int
    dist_estimate: float   # l2 distance of the estimate trace to the truth trace
    dist_baseline: float   # l2 distance of the baseline trace to the truth trace
    estimate_closer: bool


@dataclass(frozen=True)
class UpdateReport:
    verdicts: tuple[LocationVerdict, ...]

    @property
    def fraction_closer(self) -> float:
        if not self.verdicts:
            return 0.0
        return sum(v.estimate_closer for v in self.verdicts) / len(self.verdicts)


def update_report(baseline_traces, truth_traces, estimate_traces, locations) -> UpdateReport:
    """Closeness verdicts per monitored location.

    Each trace matrix is (n_locations, n_times): the background model's
    prediction, the perturbed system's truth, and the estimator output driven
    by the perturbed system's measurements. A location's verdict is whether
    the estimate trace is strictly closer (l2 over time) to the truth than
    the baseline trace is.
    """
    locations = tuple(int(l) for l in locations)
    if not locations:
        return UpdateReport(verdicts=())
    baseline = as_float_matrix(baseline_traces, "baseline traces")
    truth = as_float_matrix(truth_traces, "truth traces")
    estimate = as_float_matrix(estimate_traces, "estimate traces")
    for name, arr in (("baseline", baseline), ("truth", truth), ("estimate", estimate)):
        if arr.shape[0] != len(locations):
            raise ValueError(f"{name} traces must have one row per location")
    verdicts = []
    for i, loc in enumerate(locations):
        d_est = float(np.linalg.norm(estimate[i] - truth[i]))
        d_base = float(np.linalg.norm(baseline[i] - truth[i]))
        verdicts.append(
            LocationVerdict(
                location=loc,
                dist_estimate=d_est,
                dist_baseline=d_base,
                estimate_closer=d_est < d_base,
            )
        )
    return UpdateReport(verdicts=tuple(verdicts))
