"""End-to-end orchestration shared by the command line and the test suite.

A run is: scale the state, reduce every field by SVD, train an ensemble of
sensor-subset models for a channel, aggregate, reconstruct, and report
errors against the held-out test snapshots. The model-update experiment
trains ensembles on the baseline dataset and drives them with measurements
taken from a physics-perturbed twin dataset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compression import StateReducer
from .datamodel import FullState, MinMaxFieldScaler, SplitIndices, split
from .ensemble import (
    EnsembleMember,
    EnsembleResult,
    Reconstruction,
    collect,
    predict_with_measurements,
    reconstruct_full,
    train_ensemble,
)
from .metrics import FieldErrorRow, UpdateReport, field_report, update_report
from .network import TrainConfig
from .seeding import derive_seed


@dataclass(frozen=True)
class PreparedData:
    """Scaler, reducer, stacked targets, and splits for one dataset."""

    state: FullState
    scaler: MinMaxFieldScaler
    reducer: StateReducer
    targets: np.ndarray          # (total_rank, n_times)
    splits: SplitIndices
    scaled_t: np.ndarray         # scaled temperature rows, sensor source

    @property
    def truth_fields(self) -> dict[str, np.ndarray]:
        return {f.name: f.data for f in self.state.fields}


def prepare(state: FullState, energy: float = 0.999, rank: int | None = None,
            seed: int = 0, ratios=(0.70, 0.15, 0.15)) -> PreparedData:
    scaler = MinMaxFieldScaler().fit(state)
    scaled = scaler.transform(state)
    reducer = StateReducer(energy=energy, rank=rank).fit(scaled)
    targets = reducer.transform(scaled)
    splits = split(state.n_times, ratios=ratios, seed=derive_seed(seed, "split"))
    return PreparedData(
        state=state,
        scaler=scaler,
        reducer=reducer,
        targets=targets,
        splits=splits,
        scaled_t=scaled["T"].data,
    )


@dataclass(frozen=True)
class ChannelRun:
    channel: str
    members: tuple[EnsembleMember, ...]
    result: EnsembleResult
    reconstruction: Reconstruction
    error_rows: tuple[FieldErrorRow, ...]


def run_channel(data: PreparedData, positions, channel: str,
                n_models: int = 10, n_sensors: int = 3, lags: int = 30,
                sigma: float = 0.025, noise_mode: str = "additive",
                train_config: TrainConfig | None = None,
                master_seed: int = 0) -> ChannelRun:
    """Train, aggregate, reconstruct, and score one channel's ensemble."""
    members = train_ensemble(
        data.scaled_t, data.targets, positions, data.splits,
        n_models=n_models, n_sensors=n_sensors, lags=lags, sigma=sigma,
        noise_mode=noise_mode, train_config=train_config,
        master_seed=master_seed, channel=channel,
    )
    result = collect(members)
    reconstruction = reconstruct_full(result, data.reducer, data.scaler, data.state)
    estimate_fields = {f.name: f.data for f in reconstruction.mean_state.fields}
    rows = field_report(data.truth_fields, estimate_fields, data.splits.test, channel)
    return ChannelRun(
        channel=channel,
        members=tuple(members),
        result=result,
        reconstruction=reconstruction,
        error_rows=tuple(rows),
    )


def svd_oracle_rows(data: PreparedData, channel: str = "svd") -> tuple[FieldErrorRow, ...]:
    """Error floor: reconstruct from the projected truth itself."""
    lifted = data.reducer.inverse_transform_fields(data.targets)
    estimate_fields = {
        name: data.scaler.invert_field(name, block) for name, block in lifted.items()
    }
    return tuple(field_report(data.truth_fields, estimate_fields,
                              data.splits.test, channel))


def coverage_fraction(data: PreparedData, result: EnsembleResult,
                      n_modes: int = 5, n_std: float = 2.0,
                      columns=None) -> dict[str, float]:
    """Fraction of (mode, time) pairs with the true coefficient inside
    mean +- n_std * std, over each field's first ``n_modes`` modes."""
    if columns is None:
        columns = data.splits.test
    columns = np.asarray(columns, dtype=np.int64)
    fractions = {}
    for name, sl in data.reducer.layout_.offsets().items():
        rows = range(sl.start, min(sl.start + n_modes, sl.stop))
        hits = 0
        total = 0
        for row in rows:
            truth = data.targets[row, columns]
            mean = result.mean[row, columns]
            std = result.std[row, columns]
            hits += int(np.sum(np.abs(truth - mean) <= n_std * std))
            total += columns.size
        fractions[name] = hits / total if total else 1.0
    return fractions


@dataclass(frozen=True)
class UpdateDirection:
    """One direction of the model-update experiment."""

    train_channel: str
    monitor_channel: str
    monitored_positions: tuple[int, ...]
    baseline_traces: np.ndarray    # dataset-A temperature at the locations
    truth_traces: np.ndarray       # dataset-B temperature at the locations
    estimate_traces: np.ndarray    # ensemble output driven by B measurements
    report: UpdateReport


def run_update_direction(data_a: PreparedData, state_b: FullState,
                         train_positions, monitored_positions,
                         train_channel: str, monitor_channel: str,
                         n_models: int = 20, n_sensors: int = 3, lags: int = 30,
                         sigma: float = 0.025, noise_mode: str = "additive",
                         train_config: TrainConfig | None = None,
                         master_seed: int = 0) -> UpdateDirection:
    """Train on dataset A's channel, feed dataset B's measurements, compare.

    Dataset B is scaled with dataset A's scaler: the deployed estimator only
    knows the statistics of the system it was trained on.
    """
    members = train_ensemble(
        data_a.scaled_t, data_a.targets, train_positions, data_a.splits,
        n_models=n_models, n_sensors=n_sensors, lags=lags, sigma=sigma,
        noise_mode=noise_mode, train_config=train_config,
        master_seed=master_seed, channel=train_channel,
    )
    scaled_b = data_a.scaler.apply_field("T", state_b["T"].data)
    result = predict_with_measurements(members, scaled_b)
    reconstruction = reconstruct_full(result, data_a.reducer, data_a.scaler,
                                      data_a.state)
    locations = tuple(int(p) for p in monitored_positions)
    rows = list(locations)
    baseline = data_a.state["T"].data[rows, :]
    truth = state_b["T"].data[rows, :]
    estimate = reconstruction.mean_state["T"].data[rows, :]
    report = update_report(baseline, truth, estimate, locations)
    return UpdateDirection(
        train_channel=train_channel,
        monitor_channel=monitor_channel,
        monitored_positions=locations,
        baseline_traces=baseline,
        truth_traces=truth,
        estimate_traces=estimate,
        report=report,
    )
