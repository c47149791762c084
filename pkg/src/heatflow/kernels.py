"""Compiled inner loops for the time integrator.

The numpy routines in :mod:`heatflow.maps` and :mod:`heatflow.geometry` are
the reference implementation.  The flow calls the same formulas here through
numba, on flattened node arrays with precomputed neighbour tables, because a
long run takes hundreds of thousands of small steps and numpy call overhead
would dominate.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .maps import dof_mask, neighbor_values

EULER, RK4, GEODESIC = 0, 1, 2
STEPPER_CODES = {"coordinate_euler": EULER, "coordinate_rk4": RK4, "geodesic_euler": GEODESIC}


class NeighborTable:
    """Flattened stencil data of a grid, a target kind and a winding."""

    def __init__(self, grid, target, winding):
        size, n = grid.size, target.dim
        index = np.arange(size).reshape(grid.shape)
        self.nbr = np.empty((grid.ndim, 2, size), dtype=np.int64)
        self.offset = np.zeros((grid.ndim, 2, size, n))
        zeros = np.zeros(grid.shape + (n,))
        for axis in range(grid.ndim):
            for slot, step in enumerate((1, -1)):
                self.nbr[axis, slot] = grid.shift(index, axis, step).ravel()
                self.offset[axis, slot] = neighbor_values(grid, zeros, winding, axis, step).reshape(size, n)
        self.coef = np.array([g / h**2 for h, g in zip(grid.spacing, grid.inverse_metric)])
        self.active = dof_mask(grid).ravel().copy()
        self.hyperbolic = target.kind == "hyperbolic"
        self.y_min = float(target.y_min) if self.hyperbolic else -np.inf

    def args(self):
        return self.nbr, self.offset, self.coef, self.active, self.hyperbolic


@nb.njit(cache=True, inline="always")
def _hyp_log_acc(values, j, q, weight, out):
    n = values.shape[1]
    pn = values[j, n - 1]
    qn = q[n - 1]
    xi2 = 0.0
    for c in range(n - 1):
        xi2 += (q[c] - values[j, c]) ** 2
    dn = qn - pn
    chord = math.sqrt(xi2 + dn * dn)
    span = math.sqrt(xi2 + (pn + qn) ** 2)
    x = chord * (span + chord) / (2.0 * pn * qn)
    lx = math.log1p(x) / x if x > 0.0 else 1.0
    factor = weight * lx * (span + chord) / (2.0 * qn * span)
    for c in range(n - 1):
        out[j, c] += 2.0 * pn * factor * (q[c] - values[j, c])
    out[j, n - 1] += factor * (xi2 + dn * (pn + qn))


@nb.njit(cache=True)
def tension_flat(values, nbr, offset, coef, active, hyperbolic, out):
    """Discrete tension on flattened ``(size, n)`` node values, written into ``out``."""
    size, n = values.shape
    q = np.empty(n)
    for j in range(size):
        for c in range(n):
            out[j, c] = 0.0
        if not active[j]:
            continue
        for a in range(nbr.shape[0]):
            for d in range(2):
                k = nbr[a, d, j]
                for c in range(n):
                    q[c] = values[k, c] + offset[a, d, j, c]
                if hyperbolic:
                    _hyp_log_acc(values, j, q, coef[a], out)
                else:
                    for c in range(n):
                        out[j, c] += coef[a] * (q[c] - values[j, c])


@nb.njit(cache=True, inline="always")
def _hyp_exp(values, tau, j, t, out):
    # same closed form as TargetManifold._hyperbolic_displacement
    n = values.shape[1]
    yn = values[j, n - 1]
    vn = tau[j, n - 1]
    speed = 0.0
    for c in range(n):
        speed += tau[j, c] * tau[j, c]
    speed = math.sqrt(speed)
    if speed == 0.0:
        for c in range(n):
            out[j, c] = values[j, c]
        return
    s = speed * t / yn
    e = math.expm1(s)
    ratio = e / s if s > 0.0 else 1.0
    step = t * ratio / (2.0 + e * (e + 2.0) * (speed - vn) / speed)
    for c in range(n - 1):
        out[j, c] = values[j, c] + step * (2.0 + e) * tau[j, c]
    out[j, n - 1] = yn + step * (2.0 * vn - e * (speed - vn))


@nb.njit(cache=True)
def _admissible(values, y_min):
    n = values.shape[1]
    for j in range(values.shape[0]):
        for c in range(n):
            if not math.isfinite(values[j, c]):
                return False
        if values[j, n - 1] < y_min:
            return False
    return True


@nb.njit(cache=True)
def advance(values, nsteps, dt, stepper, nbr, offset, coef, active, hyperbolic, y_min):
    """Run ``nsteps`` explicit steps in place.

    Returns 0 on success, otherwise ``k + 1`` where step ``k`` left the chart
    (``values`` then holds the last admissible state).
    """
    size, n = values.shape
    tau = np.empty((size, n))
    if stepper == RK4:
        k1 = np.empty((size, n))
        k2 = np.empty((size, n))
        k3 = np.empty((size, n))
        stage = np.empty((size, n))
    trial = np.empty((size, n))
    for k in range(nsteps):
        if stepper == RK4:
            tension_flat(values, nbr, offset, coef, active, hyperbolic, k1)
            for j in range(size):
                for c in range(n):
                    stage[j, c] = values[j, c] + 0.5 * dt * k1[j, c]
            if not _admissible(stage, y_min):
                return k + 1
            tension_flat(stage, nbr, offset, coef, active, hyperbolic, k2)
            for j in range(size):
                for c in range(n):
                    stage[j, c] = values[j, c] + 0.5 * dt * k2[j, c]
            if not _admissible(stage, y_min):
                return k + 1
            tension_flat(stage, nbr, offset, coef, active, hyperbolic, k3)
            for j in range(size):
                for c in range(n):
                    stage[j, c] = values[j, c] + dt * k3[j, c]
            if not _admissible(stage, y_min):
                return k + 1
            tension_flat(stage, nbr, offset, coef, active, hyperbolic, tau)
            for j in range(size):
                for c in range(n):
                    trial[j, c] = values[j, c] + dt / 6.0 * (
                        k1[j, c] + 2.0 * k2[j, c] + 2.0 * k3[j, c] + tau[j, c])
        else:
            tension_flat(values, nbr, offset, coef, active, hyperbolic, tau)
            for j in range(size):
                if stepper == GEODESIC and hyperbolic and active[j]:
                    _hyp_exp(values, tau, j, dt, trial)
                else:
                    for c in range(n):
                        trial[j, c] = values[j, c] + dt * tau[j, c]
        if not _admissible(trial, y_min):
            return k + 1
        for j in range(size):
            for c in range(n):
                values[j, c] = trial[j, c]
    return 0
