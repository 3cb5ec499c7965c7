"""Per-field truncated SVD, energy-based rank selection, and mode stacking.

Each field's snapshot matrix X (n_points x n_times) is factored once at full
thin rank; the retained rank is the smallest r whose cumulative squared
singular values reach the energy threshold. Reduced trajectories from all
fields are stacked vertically in the canonical field order to form the
regression target of the decoder network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .datamodel import FIELD_ORDER, FullState
from .errors import ConvergenceError, DimensionError, EmptySpectrumError, OrderError
from .validation import as_float_matrix, check_fitted


@dataclass(frozen=True)
class SvdBasis:
    """Orthonormal spatial modes of one field plus its full singular spectrum."""

    field: str
    modes: np.ndarray
    singular_values: np.ndarray
    rank: int

    def __post_init__(self):
        modes = as_float_matrix(self.modes, "modes")
        sv = np.asarray(self.singular_values, dtype=np.float64)
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "singular_values", sv)
        if modes.shape[1] != self.rank:
            raise DimensionError(
                f"basis rank {self.rank} but modes have {modes.shape[1]} columns"
            )
        if np.any(sv < -1e-12) or np.any(np.diff(sv) > 1e-12 * max(sv[0], 1.0)):
            raise ValueError("singular values must be non-negative and non-increasing")

    def truncate(self, rank: int) -> "SvdBasis":
        if not (1 <= rank <= self.rank):
            raise DimensionError(f"cannot truncate rank-{self.rank} basis to {rank}")
        return SvdBasis(self.field, self.modes[:, :rank], self.singular_values, rank)

    def retained_energy(self) -> float:
        """Fraction of total squared singular values carried by the kept modes."""
        total = float(np.sum(self.singular_values**2))
        if total == 0.0:
            return 1.0
        return float(np.sum(self.singular_values[: self.rank] ** 2)) / total


@dataclass(frozen=True)
class ReducedTrajectory:
    """Reduced coefficients of one field: rank x n_times."""

    field: str
    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", as_float_matrix(self.coeffs, "coeffs"))

    @property
    def rank(self) -> int:
        return self.coeffs.shape[0]

    @property
    def n_times(self) -> int:
        return self.coeffs.shape[1]


def truncated_svd(x, r_max: int | None = None, field: str = "") -> SvdBasis:
    """Left singular vectors and full spectrum of a snapshot matrix.

    The basis keeps the leading ``r_max`` modes (thin rank by default); the
    spectrum always carries all min(m, n) values so rank selection can happen
    afterwards without refactoring.
    """
    x = as_float_matrix(x, "snapshot matrix")
    m, n = x.shape
    full = min(m, n)
    if r_max is None:
        r_max = full
    if not (1 <= r_max <= full):
        raise DimensionError(f"r_max={r_max} outside 1..{full} for a {m}x{n} matrix")
    try:
        u, s, _ = np.linalg.svd(x, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return SvdBasis(field, np.ascontiguousarray(u[:, :r_max]), s, r_max)


def select_rank(singular_values, energy_threshold: float) -> int:
    """Smallest r with cumulative squared-singular-value fraction >= threshold."""
    if not (0.0 < energy_threshold < 1.0):
        raise ValueError(f"energy threshold must be in (0, 1), got {energy_threshold}")
    sv = np.asarray(singular_values, dtype=np.float64)
    energies = sv**2
    total = energies.sum()
    if total == 0.0:
        raise EmptySpectrumError("all singular values are zero")
    frac = np.cumsum(energies) / total
    return int(np.searchsorted(frac, energy_threshold - 1e-15) + 1)


def project(basis: SvdBasis, x) -> ReducedTrajectory:
    """V = U^T X for one field."""
    x = as_float_matrix(x, "snapshot matrix")
    if x.shape[0] != basis.modes.shape[0]:
        raise DimensionError(
            f"matrix has {x.shape[0]} rows, basis expects {basis.modes.shape[0]}"
        )
    return ReducedTrajectory(basis.field, basis.modes.T @ x)


def lift(basis: SvdBasis, reduced) -> np.ndarray:
    """U V back to the full grid; accepts a ReducedTrajectory or a raw matrix."""
    coeffs = reduced.coeffs if isinstance(reduced, ReducedTrajectory) else reduced
    coeffs = as_float_matrix(coeffs, "reduced coefficients")
    if coeffs.shape[0] != basis.rank:
        raise DimensionError(
            f"coefficients have {coeffs.shape[0]} rows, basis rank is {basis.rank}"
        )
    return basis.modes @ coeffs


@dataclass(frozen=True)
class StackLayout:
    """Field order and per-field ranks of a stacked coefficient matrix."""

    entries: tuple[tuple[str, int], ...]

    @property
    def total_rank(self) -> int:
        return sum(r for _, r in self.entries)

    def offsets(self) -> dict[str, slice]:
        out = {}
        start = 0
        for name, rank in self.entries:
            out[name] = slice(start, start + rank)
            start += rank
        return out


def stack_reduced(per_field: list[ReducedTrajectory]) -> tuple[np.ndarray, StackLayout]:
    """Vertically concatenate reduced blocks in canonical field order."""
    if not per_field:
        raise OrderError("no reduced trajectories to stack")
    names = [t.field for t in per_field]
    canonical = [n for n in FIELD_ORDER if n in names]
    if names != canonical or len(set(names)) != len(names):
        raise OrderError(f"blocks must follow field order {FIELD_ORDER}, got {names}")
    n_times = per_field[0].n_times
    for t in per_field[1:]:
        if t.n_times != n_times:
            raise DimensionError("all reduced blocks must share the time axis length")
    stacked = np.vstack([t.coeffs for t in per_field])
    layout = StackLayout(tuple((t.field, t.rank) for t in per_field))
    return stacked, layout


def unstack_reduced(stacked, layout: StackLayout) -> list[ReducedTrajectory]:
    stacked = as_float_matrix(stacked, "stacked coefficients")
    if stacked.shape[0] != layout.total_rank:
        raise DimensionError(
            f"stacked matrix has {stacked.shape[0]} rows, layout expects "
            f"{layout.total_rank}"
        )
    return [
        ReducedTrajectory(name, stacked[sl]) for name, sl in layout.offsets().items()
    ]


class StateReducer(BaseEstimator, TransformerMixin):
    """Per-field SVD compression of a (scaled) FullState.

    Parameters
    ----------
    energy : fraction of squared-singular-value energy each field retains.
    rank : optional common rank forced on every field (overrides ``energy``).
    max_rank : optional cap applied after energy selection.
    """

    def __init__(self, energy: float = 0.999, rank: int | None = None,
                 max_rank: int | None = None):
        self.energy = energy
        self.rank = rank
        self.max_rank = max_rank
        self.bases_: dict[str, SvdBasis] | None = None
        self.layout_: StackLayout | None = None

    def fit(self, state: FullState, y=None) -> "StateReducer":
        bases = {}
        for f in state.fields:
            basis = truncated_svd(f.data, field=f.name)
            if self.rank is not None:
                r = self.rank
            else:
                r = select_rank(basis.singular_values, self.energy)
            if self.max_rank is not None:
                r = min(r, self.max_rank)
            bases[f.name] = basis.truncate(r)
        self.bases_ = bases
        self.layout_ = StackLayout(tuple((n, bases[n].rank) for n in FIELD_ORDER))
        return self

    def transform(self, state: FullState) -> np.ndarray:
        """Stacked reduced coefficients, total_rank x n_times."""
        check_fitted(self, "bases_")
        blocks = [project(self.bases_[f.name], f.data) for f in state.fields]
        stacked, _ = stack_reduced(blocks)
        return stacked

    def inverse_transform_fields(self, stacked) -> dict[str, np.ndarray]:
        """Lift a stacked coefficient matrix back to per-field grid matrices."""
        check_fitted(self, "bases_")
        out = {}
        for traj in unstack_reduced(stacked, self.layout_):
            out[traj.field] = lift(self.bases_[traj.field], traj)
        return out

    @property
    def total_rank(self) -> int:
        check_fitted(self, "layout_")
        return self.layout_.total_rank
