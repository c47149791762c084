"""Discrete maps into the target, sections along them, tension and energy.

The discrete Dirichlet energy is the edge sum

    E(f) = sum_edges  w_e * g^ii / (2 h_i^2) * d(f(x), f(x + h_i e_i))^2

with geodesic distance d in the target.  Its Riemannian gradient with
respect to the mass-weighted product metric is minus the discrete tension

    tau(f)(x) = sum_i g^ii / h_i^2 * [log_f(x) f(x + h_i e_i) + log_f(x) f(x - h_i e_i)],

which is a second-order accurate approximation of tr_g nabla df.  Exact
gradient structure keeps the discrete flow energy-dissipating and makes the
linearised tension the Hessian of the discrete energy.
"""
from __future__ import annotations

import numpy as np

from .errors import BaseMismatch, PeriodicityError, ShapeMismatch
from .geometry import TargetManifold
from .grid import DomainGrid


class DiscreteMap:
    """Chart coordinates of a map sampled at the grid nodes.

    ``values`` has shape ``grid.shape + (n,)``.  On periodic domains
    ``winding[a]`` is the deck translation picked up when crossing the
    domain seam along axis ``a``; it is non-zero only for torus targets.
    """

    def __init__(self, grid: DomainGrid, target: TargetManifold, values, winding=None):
        values = np.array(values, dtype=float)
        if values.shape != grid.shape + (target.dim,):
            raise ShapeMismatch(
                f"map values have shape {values.shape}, expected {grid.shape + (target.dim,)}")
        target.check(values)
        winding = np.zeros((grid.ndim, target.dim)) if winding is None else np.array(winding, dtype=float)
        if winding.shape != (grid.ndim, target.dim):
            raise ShapeMismatch(f"winding must have shape {(grid.ndim, target.dim)}")
        if np.any(winding != 0):
            if not grid.periodic:
                raise PeriodicityError("winding is only meaningful on periodic domains")
            if target.kind != "torus":
                raise PeriodicityError(f"a map into a {target.kind} target must close up on a periodic domain")
            turns = winding / np.asarray(target.periods)
            if not np.allclose(turns, np.round(turns), atol=1e-9):
                raise PeriodicityError("winding must be a lattice vector of the torus")
        self.grid = grid
        self.target = target
        self.values = values
        self.winding = winding

    @classmethod
    def from_function(cls, grid, target, func, atol=1e-9):
        """Sample ``func(x) -> chart point`` on the grid.

        ``func`` receives node coordinates of shape ``grid.shape + (ndim,)``.
        On periodic domains the closing condition ``func(x + L e_a) - func(x)``
        is checked; it must vanish unless the target is a torus, in which case
        it must be a constant lattice vector (recorded as the winding).
        """
        mesh = grid.mesh()
        values = np.asarray(func(mesh), dtype=float)
        winding = np.zeros((grid.ndim, target.dim))
        if grid.periodic:
            for axis, length in enumerate(grid.lengths):
                jump = np.asarray(func(mesh + length * np.eye(grid.ndim)[axis]), dtype=float) - values
                offset = jump.reshape(-1, target.dim)[0]
                if not np.allclose(jump, offset, atol=atol):
                    raise PeriodicityError("map does not close up across the periodic seam")
                if target.kind != "torus" and np.max(np.abs(offset)) > atol:
                    raise PeriodicityError(
                        f"map into a {target.kind} target must be periodic on a {grid.kind}")
                winding[axis] = offset if target.kind == "torus" else 0.0
        return cls(grid, target, values, winding)

    def with_values(self, values):
        values = np.asarray(values, dtype=float)
        if not self.grid.periodic:
            boundary = ~self.grid.interior_mask()
            if not np.array_equal(values[boundary], self.values[boundary]):
                raise ValueError("Dirichlet boundary values of a map are immutable")
        return DiscreteMap(self.grid, self.target, values, self.winding)

    def neighbor(self, axis, step):
        return neighbor_values(self.grid, self.values, self.winding, axis, step)

    def copy(self):
        return DiscreteMap(self.grid, self.target, self.values.copy(), self.winding.copy())

    def __repr__(self):
        return f"DiscreteMap({self.grid.kind}{self.grid.shape} -> {self.target.kind}({self.target.dim}))"


def neighbor_values(grid, values, winding, axis, step):
    """Values at ``x + step * h * e_axis``, lifted across the periodic seam."""
    out = grid.shift(values, axis, step)
    if grid.periodic and step != 0 and np.any(winding[axis]):
        index = [slice(None)] * grid.ndim
        index[axis] = slice(-step, None) if step > 0 else slice(None, -step)
        out[tuple(index)] += np.sign(step) * winding[axis]
    return out


class Section:
    """A section of the pull-back bundle f*TN in the chart coordinate frame.

    Coefficients on Dirichlet boundary nodes are forced to zero.
    """

    def __init__(self, base: DiscreteMap, coefficients):
        coefficients = np.array(coefficients, dtype=float)
        expected = base.grid.shape + (base.target.dim,)
        if coefficients.shape != expected:
            raise ShapeMismatch(f"section has shape {coefficients.shape}, expected {expected}")
        if not base.grid.periodic:
            coefficients[~base.grid.interior_mask()] = 0.0
        self.base = base
        self.coefficients = coefficients

    @classmethod
    def from_vector(cls, base, vector):
        coefficients = np.zeros(base.grid.shape + (base.target.dim,))
        coefficients[dof_mask(base.grid)] = np.reshape(vector, (-1, base.target.dim))
        return cls(base, coefficients)

    def vector(self):
        """Stacked coefficients at the degrees of freedom (node-major)."""
        return self.coefficients[dof_mask(self.base.grid)].ravel()

    def __add__(self, other):
        _same_base(self, other)
        return Section(self.base, self.coefficients + other.coefficients)

    def __mul__(self, scalar):
        return Section(self.base, scalar * self.coefficients)

    __rmul__ = __mul__


def dof_mask(grid):
    return grid.interior_mask()


def _same_base(s, t):
    if s.base is not t.base and not (
            s.base.grid == t.base.grid and s.base.target == t.base.target
            and np.array_equal(s.base.values, t.base.values)):
        raise BaseMismatch("sections are defined over different maps")


def tension_values(grid, target, values, winding):
    """Discrete tension field as a raw array (zero on Dirichlet boundary)."""
    out = np.zeros_like(values)
    for axis, (h, g) in enumerate(zip(grid.spacing, grid.inverse_metric)):
        forward = neighbor_values(grid, values, winding, axis, 1)
        backward = neighbor_values(grid, values, winding, axis, -1)
        out += (g / h**2) * (target.log_map(values, forward) + target.log_map(values, backward))
    if not grid.periodic:
        out[~grid.interior_mask()] = 0.0
    return out


def tension(f: DiscreteMap) -> Section:
    """Tension field tau(f) built from logarithms to the neighbouring samples."""
    return Section(f, tension_values(f.grid, f.target, f.values, f.winding))


def differentials(f: DiscreteMap):
    """Central-difference partial derivatives d_i f, shape ``(ndim,) + values.shape``."""
    grid = f.grid
    out = []
    for axis, h in enumerate(grid.spacing):
        if grid.periodic:
            fwd = f.neighbor(axis, 1)
            bwd = f.neighbor(axis, -1)
            out.append((fwd - bwd) / (2 * h))
        else:
            out.append(grid.first_diff(f.values, axis))
    return np.stack(out)


def coordinate_tension(f: DiscreteMap) -> Section:
    """tau^c = g^ii (d_ii f^c + G^c_ab(f) d_i f^a d_i f^b) with plain stencils.

    Independent second-order realisation of the tension, used to cross-check
    :func:`tension`.
    """
    grid = f.grid
    gamma = f.target.christoffels_at(f.values)
    df = differentials(f)
    out = np.zeros_like(f.values)
    for axis, (h, g) in enumerate(zip(grid.spacing, grid.inverse_metric)):
        second = (f.neighbor(axis, 1) - 2 * f.values + f.neighbor(axis, -1)) / h**2
        quad = np.einsum("...cab,...a,...b->...c", gamma, df[axis], df[axis])
        out += g * (second + quad)
    return Section(f, out)


def energy_values(grid, target, values, winding):
    total = 0.0
    for axis, (h, g) in enumerate(zip(grid.spacing, grid.inverse_metric)):
        forward = neighbor_values(grid, values, winding, axis, 1)
        dist = target.distance(values, forward)
        total += g / (2 * h**2) * float(np.sum(grid.edge_weights(axis) * dist**2))
    return total


def energy(f: DiscreteMap) -> float:
    """Discrete Dirichlet energy (weighted edge sum of squared geodesic lengths)."""
    return energy_values(f.grid, f.target, f.values, f.winding)


def l2_inner(s: Section, t: Section) -> float:
    _same_base(s, t)
    base = s.base
    fiber = base.target.inner(base.values, s.coefficients, t.coefficients)
    return float(np.sum(base.grid.weights() * fiber))


def l2_norm(s: Section) -> float:
    return float(np.sqrt(l2_inner(s, s)))


def tension_l2(grid, target, values, tau):
    fiber = target.inner(values, tau, tau)
    return float(np.sqrt(np.sum(grid.weights() * fiber)))
