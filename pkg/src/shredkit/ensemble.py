"""Ensembles of sensor-subset models with mean/std aggregation.

Each member owns a distinct random subset of the available sensor positions,
its own noise realisation, and its own weight initialisation, all derived
from one master seed. Aggregation is the elementwise mean and population
standard deviation over member predictions; a failed member aborts the
ensemble rather than silently shrinking it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .compression import StateReducer
from .datamodel import FullState, MinMaxFieldScaler, SplitIndices
from .errors import ShapeError
from .network import ShredModel, TrainConfig, TrainHistory, predict, train
from .seeding import derive_seed
from .sensing import SensorConfig, lag_embed, measure, sample_subsets
from .validation import check_fitted


@dataclass(frozen=True)
class EnsembleMember:
    sensor_config: SensorConfig
    model: ShredModel
    history: TrainHistory
    predictions: np.ndarray    # (n_outputs, n_times)


@dataclass(frozen=True)
class EnsembleResult:
    """Member predictions with their elementwise mean and population std."""

    member_predictions: np.ndarray   # (n_members, n_outputs, n_times)
    mean: np.ndarray
    std: np.ndarray
    sensor_configs: tuple[SensorConfig, ...]

    @property
    def n_members(self) -> int:
        return self.member_predictions.shape[0]


def aggregate(member_predictions, sensor_configs=()) -> EnsembleResult:
    """Elementwise mean and population standard deviation across members."""
    stack = np.asarray(member_predictions, dtype=np.float64)
    if stack.ndim != 3:
        stack = np.stack([np.asarray(m, dtype=np.float64) for m in member_predictions])
    if stack.ndim != 3:
        raise ShapeError("member predictions must stack into (members, outputs, times)")
    return EnsembleResult(
        member_predictions=stack,
        mean=stack.mean(axis=0),
        std=stack.std(axis=0, ddof=0),
        sensor_configs=tuple(sensor_configs),
    )


def train_ensemble(
    sensor_field,
    targets,
    available_positions,
    splits: SplitIndices,
    n_models: int = 10,
    n_sensors: int = 3,
    lags: int = 30,
    sigma: float = 0.025,
    noise_mode: str = "additive",
    train_config: TrainConfig | None = None,
    master_seed: int = 0,
    channel: str = "",
    hidden_size: int = 64,
    decoder_sizes: tuple[int, int] = (350, 400),
) -> list[EnsembleMember]:
    """Train one model per sensor subset against the stacked reduced targets.

    ``sensor_field`` is the scaled field the sensors read (n_points x
    n_times); ``targets`` is the stacked coefficient matrix (n_outputs x
    n_times). Every stochastic choice is derived from ``master_seed``.
    """
    sensor_field = np.asarray(sensor_field, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n_outputs, n_times = targets.shape
    if sensor_field.shape[1] != n_times:
        raise ShapeError("sensor field and targets disagree on the time axis")
    base_config = train_config or TrainConfig()

    subsets = sample_subsets(
        available_positions, n_sensors, n_models,
        seed=derive_seed(master_seed, channel, "subsets"),
    )
    members = []
    for index, positions in enumerate(subsets):
        sensor_config = SensorConfig(
            positions=positions,
            channel=channel,
            noise_mode=noise_mode,
            sigma=sigma,
            seed=derive_seed(master_seed, channel, "noise", index),
        )
        raw = measure(sensor_field, sensor_config)
        windows = lag_embed(raw, lags)
        model = ShredModel(
            n_sensors=n_sensors,
            n_outputs=n_outputs,
            lags=lags,
            hidden_size=hidden_size,
            decoder_sizes=decoder_sizes,
            seed=derive_seed(master_seed, channel, "init", index),
        )
        member_config = TrainConfig(
            learning_rate=base_config.learning_rate,
            epochs=base_config.epochs,
            batch_size=base_config.batch_size,
            patience=base_config.patience,
            seed=derive_seed(master_seed, channel, "train", index),
            beta1=base_config.beta1,
            beta2=base_config.beta2,
            eps=base_config.eps,
        )
        model, history = train(model, windows, targets.T, splits.train, splits.valid,
                               member_config, standardize_targets=True)
        members.append(
            EnsembleMember(
                sensor_config=sensor_config,
                model=model,
                history=history,
                predictions=predict(model, windows),
            )
        )
    return members


def predict_with_measurements(members, sensor_field) -> EnsembleResult:
    """Drive trained members with measurements taken from another field.

    Each member re-reads its own sensor positions (same noise spec and seed)
    from the supplied scaled field; used to feed one system's measurements
    into an ensemble trained on another system.
    """
    preds = []
    for member in members:
        raw = measure(sensor_field, member.sensor_config)
        windows = lag_embed(raw, member.model.lags)
        preds.append(predict(member.model, windows))
    return aggregate(preds, [m.sensor_config for m in members])


def collect(members) -> EnsembleResult:
    """Aggregate the training-time predictions of the members."""
    return aggregate([m.predictions for m in members],
                     [m.sensor_config for m in members])


@dataclass(frozen=True)
class Reconstruction:
    """Physical-unit ensemble reconstruction: mean state and std fields."""

    mean_state: FullState
    std_fields: dict[str, np.ndarray]


def reconstruct_full(result: EnsembleResult, reducer: StateReducer,
                     scaler: MinMaxFieldScaler, template: FullState) -> Reconstruction:
    """Lift member coefficients to the grid and invert the scaling.

    The mean state is the lift of the mean coefficients (lifting is linear,
    so this equals the mean of lifted members). Standard deviations are
    taken across lifted members, then converted to physical units by each
    field's scaling span; they are zero for a single member.
    """
    check_fitted(reducer, "bases_")
    mean_fields_scaled = reducer.inverse_transform_fields(result.mean)
    mean_data = {
        name: scaler.invert_field(name, data)
        for name, data in mean_fields_scaled.items()
    }
    mean_state = template.replace_data(mean_data)

    n_members = result.n_members
    std_fields = {}
    offsets = reducer.layout_.offsets()
    for name, sl in offsets.items():
        basis = reducer.bases_[name]
        mean_block = mean_fields_scaled[name]
        sq_sum = np.zeros_like(mean_block)
        for m in range(n_members):
            lifted = basis.modes @ result.member_predictions[m, sl, :]
            lifted -= mean_block
            sq_sum += lifted * lifted
        span = scaler.ranges_[name].span
        std_fields[name] = span * np.sqrt(sq_sum / n_members)
    return Reconstruction(mean_state=mean_state, std_fields=std_fields)


class ShredEnsemble(BaseEstimator):
    """End-to-end estimator: scale, reduce, train the ensemble, reconstruct.

    ``fit`` takes the physical-unit state plus the available sensor
    positions; ``predict_reduced`` returns the aggregated coefficient
    estimate and ``reconstruct`` the physical-unit mean/std fields.
    """

    def __init__(self, n_models: int = 10, n_sensors: int = 3, lags: int = 30,
                 sigma: float = 0.025, noise_mode: str = "additive",
                 energy: float = 0.999, common_rank: int | None = None,
                 learning_rate: float = 1e-3, epochs: int = 1000,
                 batch_size: int = 64, patience: int = 50, seed: int = 0,
                 channel: str = ""):
        self.n_models = n_models
        self.n_sensors = n_sensors
        self.lags = lags
        self.sigma = sigma
        self.noise_mode = noise_mode
        self.energy = energy
        self.common_rank = common_rank
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.seed = seed
        self.channel = channel
        self.scaler_: MinMaxFieldScaler | None = None
        self.reducer_: StateReducer | None = None
        self.members_: list[EnsembleMember] | None = None
        self.splits_: SplitIndices | None = None
        self.template_: FullState | None = None

    def fit(self, state: FullState, positions, splits: SplitIndices | None = None):
        from .datamodel import split as make_split

        self.scaler_ = MinMaxFieldScaler().fit(state)
        scaled = self.scaler_.transform(state)
        self.reducer_ = StateReducer(energy=self.energy, rank=self.common_rank).fit(scaled)
        targets = self.reducer_.transform(scaled)
        self.splits_ = splits or make_split(state.n_times, seed=derive_seed(self.seed, "split"))
        self.template_ = state
        self.members_ = train_ensemble(
            scaled["T"].data, targets, positions, self.splits_,
            n_models=self.n_models, n_sensors=self.n_sensors, lags=self.lags,
            sigma=self.sigma, noise_mode=self.noise_mode,
            train_config=TrainConfig(
                learning_rate=self.learning_rate, epochs=self.epochs,
                batch_size=self.batch_size, patience=self.patience,
            ),
            master_seed=self.seed, channel=self.channel,
        )
        return self

    def predict_reduced(self) -> EnsembleResult:
        check_fitted(self, "members_")
        return collect(self.members_)

    def reconstruct(self) -> Reconstruction:
        check_fitted(self, "members_")
        return reconstruct_full(self.predict_reduced(), self.reducer_,
                                self.scaler_, self.template_)
