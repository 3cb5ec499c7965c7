"""Sensor placement, noisy measurement extraction, and time-delay embedding.

Sensors sample grid nodes exactly (nearest-node Dirac kernel). Measurements
are taken from the scaled temperature field and polluted with seeded Gaussian
noise, either added to the scaled values or applied as a relative (1 + eps)
factor. Each time index k is represented by the window of the last lags+1
measurement vectors, with the record front-padded by replicating the first
measurement so estimation starts at k = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import GridSpec
from .errors import ExhaustionError, GeometryError
from .validation import as_float_matrix

NOISE_MODES = ("additive", "multiplicative")


@dataclass(frozen=True)
class SensorConfig:
    """Sensor node indices plus the noise specification for one model input."""

    positions: tuple[int, ...]
    channel: str = ""
    noise_mode: str = "additive"
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        if len(self.positions) < 1:
            raise ValueError("need at least one sensor position")
        if len(set(self.positions)) != len(self.positions):
            raise ValueError(f"sensor positions must be distinct, got {self.positions}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def n_sensors(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class MeasurementTrajectory:
    """Noisy sensor rows plus their lag-embedded windows."""

    raw: np.ndarray        # (n_sensors, n_times)
    lags: int
    windows: np.ndarray    # (n_times, lags + 1, n_sensors)


def measure(field_scaled, config: SensorConfig) -> np.ndarray:
    """Sample sensor rows from a scaled field and pollute them with noise.

    Additive mode draws eps ~ N(0, sigma^2) per entry and returns x + eps;
    multiplicative mode returns (1 + eps) * x. Deterministic per seed.
    """
    field_scaled = as_float_matrix(field_scaled, "scaled field")
    n_points = field_scaled.shape[0]
    for p in config.positions:
        if not (0 <= p < n_points):
            raise IndexError(f"sensor position {p} outside 0..{n_points - 1}")
    sampled = field_scaled[list(config.positions), :]
    if config.sigma == 0.0:
        return sampled.copy()
    rng = np.random.default_rng(config.seed)
    eps = rng.normal(0.0, config.sigma, size=sampled.shape)
    if config.noise_mode == "additive":
        return sampled + eps
    return (1.0 + eps) * sampled


def lag_embed(raw, lags: int) -> np.ndarray:
    """Windows of the lags+1 most recent columns, replicating column 0 in front.

    Returns an array of shape (n_times, lags + 1, n_sensors); window k holds
    columns k-lags .. k oldest-first, with indices before 0 clamped to 0.
    """
    raw = as_float_matrix(raw, "measurements")
    if lags < 0:
        raise ValueError("lags must be >= 0")
    n_sensors, n_times = raw.shape
    idx = np.arange(n_times)[:, None] - np.arange(lags, -1, -1)[None, :]
    np.clip(idx, 0, None, out=idx)
    return np.ascontiguousarray(raw.T[idx])


def embed_measurements(field_scaled, config: SensorConfig, lags: int) -> MeasurementTrajectory:
    raw = measure(field_scaled, config)
    return MeasurementTrajectory(raw=raw, lags=lags, windows=lag_embed(raw, lags))


class LagEmbedder(BaseEstimator, TransformerMixin):
    """Transformer wrapper around :func:`lag_embed`."""

    def __init__(self, lags: int = 30):
        self.lags = lags

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return lag_embed(X, self.lags)


def sample_subsets(available, subset_size: int, count: int, seed: int = 0):
    """Draw ``count`` distinct subsets uniformly from all size-s combinations."""
    available = tuple(int(p) for p in available)
    if len(set(available)) != len(available):
        raise ValueError("available positions must be distinct")
    n_total = comb(len(available), subset_size)
    if count > n_total:
        raise ExhaustionError(
            f"requested {count} subsets but only {n_total} distinct "
            f"{subset_size}-subsets of {len(available)} positions exist"
        )
    rng = np.random.default_rng(seed)
    chosen: list[tuple[int, ...]] = []
    seen = set()
    while len(chosen) < count:
        pick = tuple(sorted(rng.choice(len(available), size=subset_size, replace=False)))
        if pick in seen:
            continue
        seen.add(pick)
        chosen.append(tuple(available[i] for i in pick))
    return chosen


def define_channels(
    grid: GridSpec,
    ext_column: int,
    reg_column: int,
    count: int = 20,
    solid_mask: np.ndarray | None = None,
    row_margin: int = 2,
) -> dict[str, tuple[int, ...]]:
    """Two vertical measurement channels of ``count`` equispaced node indices.

    ``ext`` sits near the lateral boundary, ``reg`` next to the unheated
    obstacle column. Raises GeometryError if a channel leaves the grid or
    lands on solid cells.
    """
    channels = {}
    for name, col in (("ext", ext_column), ("reg", reg_column)):
        if not (0 <= col < grid.nx):
            raise GeometryError(
                f"channel {name!r} at column {col} outside 0..{grid.nx - 1}"
            )
        if count > grid.ny - 2 * row_margin:
            raise GeometryError(
                f"cannot place {count} sensors in {grid.ny - 2 * row_margin} rows"
            )
        rows = np.linspace(row_margin, grid.ny - 1 - row_margin, count)
        rows = np.unique(np.round(rows).astype(int))
        if rows.size != count:
            raise GeometryError(
                f"channel {name!r}: equispaced placement of {count} sensors collapses "
                f"to {rows.size} distinct rows"
            )
        if solid_mask is not None:
            bad = [int(r) for r in rows if solid_mask[r, col]]
            if bad:
                raise GeometryError(
                    f"channel {name!r} at column {col} crosses solid cells in rows {bad}"
                )
        channels[name] = tuple(grid.flat_index(col, int(r)) for r in rows)
    return channels
