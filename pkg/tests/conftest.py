import numpy as np
import pytest

from shredkit.datamodel import FIELD_ORDER, FieldSnapshotSet, FullState, GridSpec

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


def make_state(nx=4, ny=3, n_times=8, seed=0, offsets=None):
    """Small random FullState for unit tests; every field has nonzero range."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(nx, ny, 0.1, 0.1)
    times = np.arange(n_times, dtype=float) * 0.5
    fields = []
    for k, name in enumerate(FIELD_ORDER):
        base = 0.0 if offsets is None else offsets.get(name, 0.0)
        data = base + rng.standard_normal((grid.n_points, n_times)) * (k + 1.0)
        fields.append(FieldSnapshotSet(name, data, grid, times))
    return FullState(tuple(fields))


@pytest.fixture
def small_state():
    return make_state()
