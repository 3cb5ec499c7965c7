"""Snapshot storage, per-field min-max scaling, splits, and binary persistence.

A dataset is a :class:`FullState`: the ordered collection of per-field
snapshot matrices (space x time) sharing one time axis. The canonical field
order is temperature, the two velocity components, pressure, and the two
turbulence quantities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ConstantFieldError, DimensionError, FormatError, RatioError
from .validation import as_float_matrix, check_fitted

FIELD_ORDER = ("T", "ux", "uy", "p", "kappa", "omega")

MAGIC = b"SHRD"
FORMAT_VERSION = 1

_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_F64 = struct.Struct("<d")


@dataclass(frozen=True)
class GridSpec:
    """Rectangular grid: nx*ny points, spacing in meters, row-major flattening."""

    nx: int
    ny: int
    dx: float
    dy: float

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid must have positive extents, got {self.nx}x{self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("grid spacing must be positive")

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    def flat_index(self, ix: int, iy: int) -> int:
        """Row-major index of grid node (ix, iy); rows are y, columns are x."""
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise IndexError(f"node ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return iy * self.nx + ix


@dataclass(frozen=True)
class FieldSnapshotSet:
    """One field's space x time matrix plus grid and time metadata."""

    name: str
    data: np.ndarray
    grid: GridSpec
    times: np.ndarray

    def __post_init__(self):
        data = as_float_matrix(self.data, f"field {self.name!r} data")
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "times", times)
        if data.shape[0] != self.grid.n_points:
            raise ValueError(
                f"field {self.name!r}: {data.shape[0]} rows but grid has "
                f"{self.grid.n_points} points"
            )
        if times.ndim != 1 or times.size != data.shape[1]:
            raise ValueError(
                f"field {self.name!r}: {times.size} timestamps for "
                f"{data.shape[1]} snapshot columns"
            )
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError(f"field {self.name!r}: times must be strictly increasing")

    @property
    def n_times(self) -> int:
        return self.data.shape[1]

    def snapshot_grid(self, time_index: int) -> np.ndarray:
        """Return one snapshot reshaped to (ny, nx)."""
        return self.data[:, time_index].reshape(self.grid.ny, self.grid.nx)


@dataclass(frozen=True)
class FullState:
    """The ordered five-quantity state [T, ux, uy, p, kappa, omega]."""

    fields: tuple[FieldSnapshotSet, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        names = tuple(f.name for f in self.fields)
        if names != FIELD_ORDER:
            raise ValueError(f"fields must be {FIELD_ORDER} in order, got {names}")
        t0 = self.fields[0].times
        for f in self.fields[1:]:
            if f.n_times != self.fields[0].n_times or not np.array_equal(f.times, t0):
                raise ValueError(f"field {f.name!r} does not share the common time axis")

    @property
    def times(self) -> np.ndarray:
        return self.fields[0].times

    @property
    def n_times(self) -> int:
        return self.fields[0].n_times

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    def __getitem__(self, name: str) -> FieldSnapshotSet:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def replace_data(self, new_data: dict[str, np.ndarray]) -> "FullState":
        """Same grids/times with per-field matrices swapped out."""
        out = []
        for f in self.fields:
            data = new_data.get(f.name, f.data)
            out.append(FieldSnapshotSet(f.name, data, f.grid, f.times))
        return FullState(tuple(out))


@dataclass(frozen=True)
class FieldRange:
    lo: float
    hi: float

    @property
    def span(self) -> float:
        return self.hi - self.lo


class MinMaxFieldScaler(BaseEstimator, TransformerMixin):
    """Affine per-field map of [min, max] onto [0, 1].

    Extrema are taken over every snapshot of each field. Fields with zero
    range cannot be scaled and raise :class:`ConstantFieldError` at fit time.
    """

    def __init__(self):
        self.ranges_: dict[str, FieldRange] | None = None

    def fit(self, state: FullState, y=None) -> "MinMaxFieldScaler":
        ranges = {}
        for f in state.fields:
            lo = float(f.data.min())
            hi = float(f.data.max())
            if hi <= lo:
                raise ConstantFieldError(
                    f"field {f.name!r} has zero range (min == max == {lo})"
                )
            ranges[f.name] = FieldRange(lo, hi)
        self.ranges_ = ranges
        return self

    def apply_field(self, name: str, data: np.ndarray) -> np.ndarray:
        check_fitted(self, "ranges_")
        r = self.ranges_[name]
        return (np.asarray(data, dtype=np.float64) - r.lo) / r.span

    def invert_field(self, name: str, data: np.ndarray) -> np.ndarray:
        check_fitted(self, "ranges_")
        r = self.ranges_[name]
        return np.asarray(data, dtype=np.float64) * r.span + r.lo

    def transform(self, state: FullState) -> FullState:
        return state.replace_data(
            {f.name: self.apply_field(f.name, f.data) for f in state.fields}
        )

    def inverse_transform(self, state: FullState) -> FullState:
        return state.replace_data(
            {f.name: self.invert_field(f.name, f.data) for f in state.fields}
        )


def fit_scaler(state: FullState) -> MinMaxFieldScaler:
    """Fit the per-field min-max scaler over all snapshots."""
    return MinMaxFieldScaler().fit(state)


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint, exhaustive train/validation/test indices into [0, n_times)."""

    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for part in ("train", "valid", "test"):
            arr = np.asarray(getattr(self, part), dtype=np.int64)
            object.__setattr__(self, part, arr)
        merged = np.sort(np.concatenate([self.train, self.valid, self.test]))
        if not np.array_equal(merged, np.arange(merged.size)):
            raise ValueError("split parts must partition 0..n-1 exactly")

    @property
    def n_times(self) -> int:
        return self.train.size + self.valid.size + self.test.size


def split(n_times: int, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> SplitIndices:
    """Seeded random partition; train/valid sizes round half-up, test gets the rest."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise RatioError(f"ratios {ratios} do not sum to 1")
    if n_times < 10:
        raise ValueError(f"need at least 10 snapshots to split, got {n_times}")
    n_train = int(np.floor(ratios[0] * n_times + 0.5))
    n_valid = int(np.floor(ratios[1] * n_times + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_times)
    return SplitIndices(
        train=np.sort(perm[:n_train]),
        valid=np.sort(perm[n_train : n_train + n_valid]),
        test=np.sort(perm[n_train + n_valid :]),
    )


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated container while reading {what}")
    return buf


def save_state(state: FullState, path) -> None:
    """Write a FullState to the binary snapshot container."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U16.pack(FORMAT_VERSION))
        fh.write(_U64.pack(len(state.fields)))
        for f in state.fields:
            name = f.name.encode("utf-8")
            fh.write(_U64.pack(len(name)))
            fh.write(name)
            fh.write(_U64.pack(f.grid.nx))
            fh.write(_U64.pack(f.grid.ny))
            fh.write(_U64.pack(f.n_times))
            fh.write(_F64.pack(f.grid.dx))
            fh.write(_F64.pack(f.grid.dy))
            fh.write(np.ascontiguousarray(f.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def load_state(path) -> FullState:
    """Read a FullState back; bit-exact inverse of :func:`save_state`."""
    fields = []
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise FormatError("bad magic; not a snapshot container")
        (version,) = _U16.unpack(_read_exact(fh, 2, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported container version {version}")
        (n_fields,) = _U64.unpack(_read_exact(fh, 8, "field count"))
        for _ in range(n_fields):
            (name_len,) = _U64.unpack(_read_exact(fh, 8, "name length"))
            name = _read_exact(fh, name_len, "field name").decode("utf-8")
            (nx,) = _U64.unpack(_read_exact(fh, 8, "nx"))
            (ny,) = _U64.unpack(_read_exact(fh, 8, "ny"))
            (n_times,) = _U64.unpack(_read_exact(fh, 8, "n_times"))
            (dx,) = _F64.unpack(_read_exact(fh, 8, "dx"))
            (dy,) = _F64.unpack(_read_exact(fh, 8, "dy"))
            times = np.frombuffer(
                _read_exact(fh, 8 * n_times, f"times of field {name!r}"), dtype="<f8"
            )
            n_points = nx * ny
            payload = fh.read(8 * n_points * n_times)
            if len(payload) != 8 * n_points * n_times:
                raise DimensionError(
                    f"field {name!r}: header declares {n_points}x{n_times} values "
                    f"but payload holds {len(payload) // 8}"
                )
            data = np.frombuffer(payload, dtype="<f8").reshape(n_points, n_times)
            try:
                fields.append(
                    FieldSnapshotSet(name, data, GridSpec(nx, ny, dx, dy), times)
                )
            except ValueError as exc:
                raise FormatError(f"invalid field {name!r} in container: {exc}") from exc
    try:
        return FullState(tuple(fields))
    except ValueError as exc:
        raise FormatError(f"container does not hold a valid state: {exc}") from exc


def grid_slice_rows(field: FieldSnapshotSet, time_index: int):
    """(x, y, value) rows of one snapshot, for CSV export."""
    g = field.grid
    snap = field.snapshot_grid(time_index)
    rows = []
    for iy in range(g.ny):
        for ix in range(g.nx):
            rows.append(((ix + 0.5) * g.dx, (iy + 0.5) * g.dy, snap[iy, ix]))
    return rows


def export_field_slice(state: FullState, name: str, time_index: int, path) -> None:
    """Dump one field/time slice as x,y,value CSV."""
    from .report_io import write_csv

    rows = grid_slice_rows(state[name], time_index)
    write_csv(path, ("x", "y", "value"), rows)
