"""Sparse-sensor full-state estimation toolkit.

Generate a buoyant-convection transient dataset, compress it field-by-field
with truncated SVD, train an ensemble of recurrent-encoder/shallow-decoder
models on lag-embedded sensor windows, and reconstruct all fields (observed
or not) with uncertainty estimates.
"""

from .compression import (
    ReducedTrajectory,
    StateReducer,
    SvdBasis,
    lift,
    project,
    select_rank,
    stack_reduced,
    truncated_svd,
    unstack_reduced,
)
from .datamodel import (
    FIELD_ORDER,
    FieldSnapshotSet,
    FullState,
    GridSpec,
    MinMaxFieldScaler,
    SplitIndices,
    fit_scaler,
    load_state,
    save_state,
    split,
)
from .ensemble import (
    EnsembleMember,
    EnsembleResult,
    Reconstruction,
    ShredEnsemble,
    aggregate,
    reconstruct_full,
    train_ensemble,
)
from .metrics import avg_relative_error, field_report, update_report
from .network import (
    ShredModel,
    ShredRegressor,
    TrainConfig,
    decoder_forward,
    gradients,
    loss,
    lstm_forward,
    predict,
    train,
)
from .sensing import (
    LagEmbedder,
    MeasurementTrajectory,
    SensorConfig,
    define_channels,
    lag_embed,
    measure,
    sample_subsets,
)
from .solver import (
    SolverConfig,
    heat_flux,
    perturbed_variant,
    simulate,
    turbulence_proxy,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
