"""Explicit integration of the harmonic map heat flow df/dt = tau(f)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import kernels
from .errors import ChartViolation, NonMonotoneEnergy, StabilityGuard
from .maps import DiscreteMap, energy_values, tension_l2, tension_values

STEPPERS = ("coordinate_euler", "coordinate_rk4", "geodesic_euler")


def default_stepper(target):
    """Geodesic Euler keeps half-space maps inside the chart; RK4 for flat targets."""
    return "geodesic_euler" if target.kind == "hyperbolic" else "coordinate_rk4"


@dataclass
class FlowConfig:
    """Time integration settings.

    Attributes
    ----------
    dt : float
        Time step; must satisfy ``dt <= cfl_safety * h_min**2 / max g^ii``.
    t_end : float
        Final time if the stop tolerance is not reached first.
    stepper : str
        ``coordinate_euler``, ``coordinate_rk4`` or ``geodesic_euler``.
    snapshot_stride : int
        Steps between recorded samples.
    stop_tolerance : float
        Run ends at the first sample with ``||tau||_L2`` at or below this.
    cfl_safety : float
        Safety factor c in (0, 1) of the stability guard.
    """

    dt: float
    t_end: float
    stepper: str = "geodesic_euler"
    snapshot_stride: int = 100
    stop_tolerance: float = 1e-10
    cfl_safety: float = 0.2

    def __post_init__(self):
        if self.stepper not in STEPPERS:
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if not (self.dt > 0 and self.t_end >= 0):
            raise ValueError("dt must be positive and t_end non-negative")
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be at least 1")
        if not 0 < self.cfl_safety < 1:
            raise ValueError("cfl_safety must lie in (0, 1)")
        self.snapshot_stride = int(self.snapshot_stride)

    def check_stability(self, grid):
        bound = grid.stability_bound(self.cfl_safety)
        if self.dt > bound * (1 + 1e-12):
            raise StabilityGuard(f"dt={self.dt:g} exceeds stability bound {bound:g}")

    def to_dict(self):
        return asdict(self)


@dataclass
class FlowTrajectory:
    """Samples of a flow run; ``maps[k]`` holds the chart values at ``times[k]``."""

    grid: object
    target: object
    winding: np.ndarray
    config: FlowConfig
    times: np.ndarray
    energy: np.ndarray
    tension_l2: np.ndarray
    maps: list
    lambda1: np.ndarray | None = None
    converged: bool = False
    steps: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def snapshot(self, k) -> DiscreteMap:
        return DiscreteMap(self.grid, self.target, self.maps[k], self.winding)

    def final_map(self) -> DiscreteMap:
        return self.snapshot(len(self) - 1)


def step(f: DiscreteMap, dt, stepper="coordinate_euler", cfl_safety=0.2) -> DiscreteMap:
    """One explicit step of the flow (numpy reference implementation).

    Dirichlet boundary nodes are never moved since the tension vanishes there.
    """
    grid, target = f.grid, f.target
    bound = grid.stability_bound(cfl_safety)
    if dt > bound * (1 + 1e-12):
        raise StabilityGuard(f"dt={dt:g} exceeds stability bound {bound:g}")

    def tau(values):
        return tension_values(grid, target, target.check(values), f.winding)

    y = f.values
    if stepper == "coordinate_euler":
        new = y + dt * tau(y)
    elif stepper == "coordinate_rk4":
        k1 = tau(y)
        k2 = tau(y + 0.5 * dt * k1)
        k3 = tau(y + 0.5 * dt * k2)
        k4 = tau(y + dt * k3)
        new = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    elif stepper == "geodesic_euler":
        new = target.exp_map(y, tau(y), dt)
    else:
        raise ValueError(f"unknown stepper {stepper!r}")
    return DiscreteMap(grid, target, new, f.winding)


def run(f0: DiscreteMap, config: FlowConfig) -> FlowTrajectory:
    """Integrate from ``f0`` until ``t_end`` or until ``||tau||_L2 <= stop_tolerance``.

    Samples are recorded every ``snapshot_stride`` steps (and at the last
    step).  A :class:`NonMonotoneEnergy` warning is issued when the energy
    rises by more than ``1e-12 * E(f0)`` between consecutive samples.
    """
    grid, target = f0.grid, f0.target
    config.check_stability(grid)
    table = kernels.NeighborTable(grid, target, f0.winding)
    code = kernels.STEPPER_CODES[config.stepper]
    values = np.ascontiguousarray(f0.values.reshape(grid.size, target.dim), dtype=float).copy()
    total_steps = int(math.ceil(config.t_end / config.dt - 1e-9))
    tau_buf = np.empty_like(values)

    times, energies, norms, maps = [], [], [], []

    def record(steps_done):
        kernels.tension_flat(values, *table.args(), tau_buf)
        shaped = values.reshape(f0.values.shape).copy()
        times.append(steps_done * config.dt)
        energies.append(energy_values(grid, target, shaped, f0.winding))
        norms.append(tension_l2(grid, target, shaped, tau_buf.reshape(shaped.shape)))
        maps.append(shaped)

    record(0)
    tol_e = 1e-12 * max(energies[0], np.finfo(float).tiny)
    done = 0
    converged = norms[0] <= config.stop_tolerance
    while not converged and done < total_steps:
        count = min(config.snapshot_stride, total_steps - done)
        status = kernels.advance(values, count, config.dt, code, *table.args(), table.y_min)
        if status:
            bad = done + status
            raise ChartViolation(f"flow left the chart region at step {bad} (t={bad * config.dt:g})")
        done += count
        record(done)
        if energies[-1] > energies[-2] + tol_e:
            warnings.warn(
                f"energy rose from {energies[-2]!r} to {energies[-1]!r} at t={times[-1]:g}",
                NonMonotoneEnergy, stacklevel=2)
        converged = norms[-1] <= config.stop_tolerance

    return FlowTrajectory(
        grid=grid, target=target, winding=f0.winding.copy(), config=config,
        times=np.asarray(times), energy=np.asarray(energies), tension_l2=np.asarray(norms),
        maps=maps, converged=bool(converged), steps=done,
    )
