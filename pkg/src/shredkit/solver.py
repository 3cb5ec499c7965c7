"""Desk-scale 2D buoyant-convection transient generator.

Incompressible flow with a linear-in-temperature buoyancy source, solved on a
staggered (MAC) grid with explicit upwind advection, explicit diffusion, and
an exact pressure projection (sparse direct factorisation of the masked
Laplacian). Heated vertical columns inject a sinusoidal-in-height heat flux
into neighbouring fluid cells; an unheated obstacle column shadows one
measurement channel; a fixed-temperature strip at the top of the box acts as
the heat sink so the transient settles into steady convection.

Temperature advances in conservative flux form, so with every boundary
closed the discrete heat content is conserved to round-off. Pressure is the
projection potential divided by the time step (kinematic units), zero-mean
over fluid cells. Turbulence proxy fields are algebraic functions of the
velocity gradient and wall distance, so the generated state carries the full
five-quantity vector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import splu

from .datamodel import FieldSnapshotSet, FullState, GridSpec
from .errors import CflError, PoissonDivergenceError, UnknownPerturbation

PERTURBATIONS = ("heater_scale", "top_recirculation", "viscosity_scale")


@dataclass(frozen=True)
class SolverConfig:
    # grid
    nx: int = 64
    ny: int = 64
    dx: float = 1.0 / 64
    dy: float = 1.0 / 64
    # time stepping: 30000 x 0.01 s sampled every 60 steps -> 500 snapshots
    dt: float = 0.01
    n_steps: int = 30000
    snapshot_stride: int = 60
    # fluid properties
    nu: float = 1.5e-3          # kinematic viscosity, m^2/s
    alpha: float = 4.0e-4       # thermal diffusivity, m^2/s
    beta: float = 8.0e-3        # thermal expansion, 1/K
    gravity: float = 9.81       # m/s^2, acting along -y
    t_ref: float = 293.15       # reference/initial temperature, K
    # heater flux q''(z) = A sin(B z + C) + D, kinematic units (K m/s),
    # z measured upward from the heater base
    heater_amplitude: float = 0.03
    heater_wavenumber: float = 5.0
    heater_phase: float = 0.2
    heater_offset: float = 0.01
    heater_columns: tuple[int, ...] = (23, 30, 37)
    heater_rows: tuple[int, int] = (6, 44)      # inclusive cell-row span
    obstacle_columns: tuple[int, ...] = (44,)
    obstacle_rows: tuple[int, int] = (6, 44)
    # fixed-temperature strip on the top boundary (column span, half-open)
    top_strip: tuple[int, int] | None = (0, 64)
    top_temperature: float = 293.15
    # perturbation: prescribed up/down flow through part of the top boundary
    recirculation_strength: float = 0.0
    recirculation_columns: tuple[int, int] = (16, 48)
    # numerics
    poisson_tol: float = 1e-8
    cfl_limit: float = 0.5
    # turbulence proxies
    c_kappa: float = 0.01
    # initial condition
    t0_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.nx, self.ny) < 8:
            raise ValueError("grid too small; need at least 8x8 cells")
        for name in ("dx", "dy", "dt", "nu", "alpha", "beta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.gravity < 0:
            raise ValueError("gravity must be non-negative")
        if self.n_steps < 1 or self.snapshot_stride < 1:
            raise ValueError("n_steps and snapshot_stride must be positive")
        if self.n_steps % self.snapshot_stride != 0:
            raise ValueError("n_steps must be a multiple of snapshot_stride")
        # explicit diffusion stability
        diff = max(self.nu, self.alpha)
        if self.dt * diff * (2.0 / self.dx**2 + 2.0 / self.dy**2) > 1.0:
            raise ValueError("dt violates the explicit diffusion stability bound")
        for col in self.heater_columns + self.obstacle_columns:
            if not (0 < col < self.nx - 1):
                raise ValueError(f"solid column {col} must be interior to the grid")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.nx, self.ny, self.dx, self.dy)

    @property
    def n_snapshots(self) -> int:
        return self.n_steps // self.snapshot_stride


def heat_flux(z, config: SolverConfig):
    """Heater surface flux at height z above the heater base."""
    z = np.asarray(z, dtype=np.float64)
    return (
        config.heater_amplitude
        * np.sin(config.heater_wavenumber * z + config.heater_phase)
        + config.heater_offset
    )


def perturbed_variant(config: SolverConfig, name: str, value: float) -> SolverConfig:
    """Configuration for a physics-perturbed twin of the baseline run."""
    if name == "heater_scale":
        return replace(
            config,
            heater_amplitude=config.heater_amplitude * value,
            heater_offset=config.heater_offset * value,
        )
    if name == "top_recirculation":
        return replace(config, recirculation_strength=value)
    if name == "viscosity_scale":
        return replace(config, nu=config.nu * value)
    raise UnknownPerturbation(f"unknown perturbation {name!r}; choose from {PERTURBATIONS}")


def solid_mask(config: SolverConfig) -> np.ndarray:
    """(ny, nx) boolean mask of solid cells (heater and obstacle columns)."""
    mask = np.zeros((config.ny, config.nx), dtype=bool)
    r0, r1 = config.heater_rows
    for col in config.heater_columns:
        mask[r0 : r1 + 1, col] = True
    r0, r1 = config.obstacle_rows
    for col in config.obstacle_columns:
        mask[r0 : r1 + 1, col] = True
    return mask


def wall_distance(config: SolverConfig) -> np.ndarray:
    """Distance from each cell centre to the nearest wall or solid cell, m."""
    fluid = ~solid_mask(config)
    padded = np.zeros((config.ny + 2, config.nx + 2), dtype=bool)
    padded[1:-1, 1:-1] = fluid
    dist = distance_transform_edt(padded, sampling=(config.dy, config.dx))
    return np.maximum(dist[1:-1, 1:-1], config.dx / 2.0)


def turbulence_proxy(ux, uy, config: SolverConfig, distance=None):
    """Algebraic stand-in fields: kappa = c ||grad u||^2 l^2, omega = sqrt(kappa)/l."""
    ux = np.asarray(ux, dtype=np.float64)
    uy = np.asarray(uy, dtype=np.float64)
    if distance is None:
        distance = wall_distance(config)
    dux_dy, dux_dx = np.gradient(ux, config.dy, config.dx)
    duy_dy, duy_dx = np.gradient(uy, config.dy, config.dx)
    grad_sq = dux_dx**2 + dux_dy**2 + duy_dx**2 + duy_dy**2
    kappa = config.c_kappa * grad_sq * distance**2
    omega = np.sqrt(kappa) / distance
    return kappa, omega


def _build_poisson(fluid: np.ndarray, dx: float, dy: float):
    """Masked 5-point Laplacian over fluid cells, one cell pinned to zero."""
    ny, nx = fluid.shape
    index = -np.ones((ny, nx), dtype=np.int64)
    index[fluid] = np.arange(fluid.sum())
    n = int(fluid.sum())
    rows, cols, vals = [], [], []
    inv_dx2 = 1.0 / dx**2
    inv_dy2 = 1.0 / dy**2
    for iy in range(ny):
        for ix in range(nx):
            if not fluid[iy, ix]:
                continue
            row = index[iy, ix]
            diag = 0.0
            for jy, jx, w in ((iy, ix - 1, inv_dx2), (iy, ix + 1, inv_dx2),
                              (iy - 1, ix, inv_dy2), (iy + 1, ix, inv_dy2)):
                if 0 <= jy < ny and 0 <= jx < nx and fluid[jy, jx]:
                    rows.append(row)
                    cols.append(index[jy, jx])
                    vals.append(w)
                    diag -= w
            rows.append(row)
            cols.append(row)
            vals.append(diag)
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    # all-Neumann operator is singular up to constants; pin the first cell
    pin = sp.lil_matrix(mat)
    pin.rows[0] = [0]
    pin.data[0] = [1.0]
    return splu(sp.csc_matrix(pin)), index


class _StaggeredDomain:
    """Precomputed masks and operators for one configuration."""

    def __init__(self, config: SolverConfig):
        self.config = config
        ny, nx = config.ny, config.nx
        self.solid = solid_mask(config)
        self.fluid = ~self.solid
        # active faces: interior faces with fluid on both sides
        self.u_active = np.zeros((ny, nx + 1), dtype=bool)
        self.u_active[:, 1:nx] = self.fluid[:, :-1] & self.fluid[:, 1:]
        self.v_active = np.zeros((ny + 1, nx), dtype=bool)
        self.v_active[1:ny, :] = self.fluid[:-1, :] & self.fluid[1:, :]
        self.lu, self.cell_index = _build_poisson(self.fluid, config.dx, config.dy)
        self.distance = wall_distance(config)
        self._build_heater_sources()
        self._build_recirculation()

    def _build_heater_sources(self):
        cfg = self.config
        ny, nx = cfg.ny, cfg.nx
        self.heat_source = np.zeros((ny, nx))
        r0, r1 = cfg.heater_rows
        for col in cfg.heater_columns:
            for iy in range(r0, r1 + 1):
                z = (iy - r0 + 0.5) * cfg.dy
                q = float(heat_flux(z, cfg))
                for jx in (col - 1, col + 1):
                    if 0 <= jx < nx and self.fluid[iy, jx]:
                        # flux through the side face heats the fluid neighbour
                        self.heat_source[iy, jx] += q / cfg.dx

    def _build_recirculation(self):
        cfg = self.config
        self.v_top = np.zeros(cfg.nx)
        if cfg.recirculation_strength > 0.0:
            c0, c1 = cfg.recirculation_columns
            cols = [c for c in range(c0, c1) if self.fluid[cfg.ny - 1, c]]
            half = len(cols) // 2
            # paired down/up columns keep the net mass flux exactly zero
            for c in cols[:half]:
                self.v_top[c] = -cfg.recirculation_strength
            for c in cols[len(cols) - half :]:
                self.v_top[c] = cfg.recirculation_strength


def _upwind_derivative(field, vel, axis, spacing):
    """First-order upwind derivative of ``field`` against face-less velocity."""
    fwd = (np.roll(field, -1, axis=axis) - field) / spacing
    bwd = (field - np.roll(field, 1, axis=axis)) / spacing
    # roll wraps around; edge values are overwritten by one-sided choices below
    if axis == 0:
        fwd[-1, :] = bwd[-1, :]
        bwd[0, :] = fwd[0, :]
    else:
        fwd[:, -1] = bwd[:, -1]
        bwd[:, 0] = fwd[:, 0]
    return np.where(vel > 0.0, bwd, fwd)


def _laplacian_dirichlet0(field, active, dx, dy):
    """5-point Laplacian treating inactive neighbours as zero-valued walls.

    Out-of-range neighbours reflect (ghost = -value) so the no-slip wall sits
    on the array edge midline.
    """
    ny, nx = field.shape
    val = np.where(active, field, 0.0)
    left = np.empty_like(val)
    left[:, 1:] = val[:, :-1]
    left[:, 0] = -val[:, 0]
    right = np.empty_like(val)
    right[:, :-1] = val[:, 1:]
    right[:, -1] = -val[:, -1]
    below = np.empty_like(val)
    below[1:, :] = val[:-1, :]
    below[0, :] = -val[0, :]
    above = np.empty_like(val)
    above[:-1, :] = val[1:, :]
    above[-1, :] = -val[-1, :]
    return (left - 2.0 * val + right) / dx**2 + (below - 2.0 * val + above) / dy**2


def simulate(config: SolverConfig, progress: bool = False,
             diagnostics: dict | None = None) -> FullState:
    """Run the heating transient and return the sampled five-field state.

    When a ``diagnostics`` dict is passed it is filled with the running
    maxima of the post-projection divergence and the CFL number.
    """
    dom = _StaggeredDomain(config)
    cfg = config
    ny, nx = cfg.ny, cfg.nx
    dx, dy, dt = cfg.dx, cfg.dy, cfg.dt

    u = np.zeros((ny, nx + 1))
    v = np.zeros((ny + 1, nx))
    temp = np.full((ny, nx), cfg.t_ref)
    if cfg.t0_noise > 0.0:
        rng = np.random.default_rng(cfg.seed)
        temp[dom.fluid] += cfg.t0_noise * rng.standard_normal(int(dom.fluid.sum()))
    phi = np.zeros((ny, nx))

    n_snap = cfg.n_snapshots
    n_cells = nx * ny
    store = {name: np.empty((n_cells, n_snap)) for name in
             ("T", "ux", "uy", "p", "kappa", "omega")}
    times = np.empty(n_snap)

    fluid = dom.fluid
    u_active = dom.u_active
    v_active = dom.v_active
    top_has_recirc = cfg.recirculation_strength > 0.0
    snap = 0
    worst_div = 0.0
    worst_cfl = 0.0

    for step in range(1, cfg.n_steps + 1):
        # CFL guard on the advective limit
        cfl = dt * (np.abs(u).max() / dx + np.abs(v).max() / dy)
        worst_cfl = max(worst_cfl, cfl)
        if cfl >= cfg.cfl_limit:
            raise CflError(f"CFL number {cfl:.3f} >= {cfg.cfl_limit} at step {step}")

        # --- momentum predictor -----------------------------------------
        # velocities interpolated to the other staggering for cross terms
        v_at_u = np.zeros((ny, nx + 1))
        v_cell = 0.5 * (v[:-1, :] + v[1:, :])
        v_at_u[:, 1:nx] = 0.5 * (v_cell[:, :-1] + v_cell[:, 1:])
        u_at_v = np.zeros((ny + 1, nx))
        u_cell = 0.5 * (u[:, :-1] + u[:, 1:])
        u_at_v[1:ny, :] = 0.5 * (u_cell[:-1, :] + u_cell[1:, :])

        adv_u = u * _upwind_derivative(u, u, 1, dx) + v_at_u * _upwind_derivative(u, v_at_u, 0, dy)
        adv_v = u_at_v * _upwind_derivative(v, u_at_v, 1, dx) + v * _upwind_derivative(v, v, 0, dy)

        lap_u = _laplacian_dirichlet0(u, u_active, dx, dy)
        lap_v = _laplacian_dirichlet0(v, v_active, dx, dy)

        buoy = np.zeros((ny + 1, nx))
        dtemp = temp - cfg.t_ref
        buoy[1:ny, :] = cfg.gravity * cfg.beta * 0.5 * (dtemp[:-1, :] + dtemp[1:, :])

        u_star = u + dt * (-adv_u + cfg.nu * lap_u)
        v_star = v + dt * (-adv_v + cfg.nu * lap_v + buoy)
        u_star[~u_active] = 0.0
        v_star[~v_active] = 0.0
        if top_has_recirc:
            v_star[ny, :] = dom.v_top

        # --- pressure projection -----------------------------------------
        div = (u_star[:, 1:] - u_star[:, :-1]) / dx + (v_star[1:, :] - v_star[:-1, :]) / dy
        rhs = np.zeros(int(fluid.sum()))
        rhs[dom.cell_index[fluid]] = div[fluid] / dt
        rhs[0] = 0.0  # pinned cell
        sol = dom.lu.solve(rhs)
        phi.fill(0.0)
        phi[fluid] = sol[dom.cell_index[fluid]]

        u = u_star.copy()
        v = v_star.copy()
        u[:, 1:nx] -= dt * (phi[:, 1:] - phi[:, :-1]) / dx
        u[~u_active] = 0.0
        v[1:ny, :] -= dt * (phi[1:, :] - phi[:-1, :]) / dy
        v[~v_active] = 0.0
        if top_has_recirc:
            v[ny, :] = dom.v_top

        div_after = (u[:, 1:] - u[:, :-1]) / dx + (v[1:, :] - v[:-1, :]) / dy
        max_div = np.abs(div_after[fluid]).max()
        worst_div = max(worst_div, max_div)
        if max_div > 10.0 * cfg.poisson_tol:
            raise PoissonDivergenceError(
                f"post-projection divergence {max_div:.3e} exceeds "
                f"{10.0 * cfg.poisson_tol:.1e} at step {step}"
            )

        # --- energy update (conservative flux form) ----------------------
        # heat flows only through active fluid-fluid faces, so with every
        # boundary closed the discrete total is conserved to round-off
        west = temp[:, :-1]
        east = temp[:, 1:]
        inner_u = u[:, 1:nx]
        flux_x = np.zeros((ny, nx + 1))
        flux_x[:, 1:nx] = (
            inner_u * np.where(inner_u > 0.0, west, east)
            - cfg.alpha * (east - west) / dx
        ) * u_active[:, 1:nx]

        south = temp[:-1, :]
        north = temp[1:, :]
        inner_v = v[1:ny, :]
        flux_y = np.zeros((ny + 1, nx))
        flux_y[1:ny, :] = (
            inner_v * np.where(inner_v > 0.0, south, north)
            - cfg.alpha * (north - south) / dy
        ) * v_active[1:ny, :]
        if top_has_recirc:
            # prescribed top faces advect pool-temperature fluid in/out
            inflow = dom.v_top < 0.0
            outflow = dom.v_top > 0.0
            flux_y[ny, inflow] = dom.v_top[inflow] * cfg.top_temperature
            flux_y[ny, outflow] = dom.v_top[outflow] * temp[ny - 1, outflow]

        temp = temp + dt * (
            -(flux_x[:, 1:] - flux_x[:, :-1]) / dx
            - (flux_y[1:, :] - flux_y[:-1, :]) / dy
            + dom.heat_source
        )
        if cfg.top_strip is not None:
            c0, c1 = cfg.top_strip
            temp[ny - 1, c0:c1] = cfg.top_temperature

        # --- snapshots ----------------------------------------------------
        if step % cfg.snapshot_stride == 0:
            ux_c = 0.5 * (u[:, :-1] + u[:, 1:])
            uy_c = 0.5 * (v[:-1, :] + v[1:, :])
            p_c = phi / dt
            p_c = p_c - p_c[fluid].mean()
            p_c[~fluid] = 0.0
            kappa, omega = turbulence_proxy(ux_c, uy_c, cfg, dom.distance)
            store["T"][:, snap] = temp.ravel()
            store["ux"][:, snap] = ux_c.ravel()
            store["uy"][:, snap] = uy_c.ravel()
            store["p"][:, snap] = p_c.ravel()
            store["kappa"][:, snap] = kappa.ravel()
            store["omega"][:, snap] = omega.ravel()
            times[snap] = step * dt
            snap += 1
            if progress:
                print(
                    f"step {step}/{cfg.n_steps}  t={step * dt:.2f}s  "
                    f"mean T={temp[fluid].mean():.3f} K  max|u|={max(np.abs(u).max(), np.abs(v).max()):.4f} m/s",
                    flush=True,
                )

    if diagnostics is not None:
        diagnostics["max_divergence"] = worst_div
        diagnostics["max_cfl"] = worst_cfl

    grid = cfg.grid
    fields = tuple(
        FieldSnapshotSet(name, store[name], grid, times)
        for name in ("T", "ux", "uy", "p", "kappa", "omega")
    )
    return FullState(fields)
