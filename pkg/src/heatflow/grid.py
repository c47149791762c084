"""Finite-difference discretisation of compact flat source domains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch

PERIODIC_KINDS = ("circle", "torus2")
DIRICHLET_KINDS = ("interval", "rectangle")
_NDIM = {"circle": 1, "interval": 1, "torus2": 2, "rectangle": 2}


@dataclass(frozen=True)
class DomainGrid:
    """A uniform node set on a circle, flat 2-torus, interval or rectangle.

    Periodic kinds place ``N`` nodes at spacing ``L / N``; Dirichlet kinds
    place ``N`` nodes including both end points at spacing ``L / (N - 1)``.
    The domain metric is constant and diagonal; ``inverse_metric`` holds the
    diagonal of ``g^{ij}``.
    """

    kind: str
    lengths: tuple
    nodes: tuple
    inverse_metric: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in _NDIM:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        ndim = _NDIM[self.kind]
        lengths = tuple(float(x) for x in np.atleast_1d(self.lengths))
        nodes = tuple(int(x) for x in np.atleast_1d(self.nodes))
        inv = tuple(float(x) for x in np.atleast_1d(self.inverse_metric)) or (1.0,) * ndim
        if not (len(lengths) == len(nodes) == len(inv) == ndim):
            raise ValueError(f"{self.kind} grid needs {ndim} lengths, node counts and metric entries")
        if min(lengths) <= 0 or min(inv) <= 0:
            raise ValueError("lengths and inverse metric entries must be positive")
        min_nodes = 3 if self.kind in PERIODIC_KINDS else 4
        if min(nodes) < min_nodes:
            raise ValueError(f"{self.kind} grid needs at least {min_nodes} nodes per axis")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "inverse_metric", inv)

    @classmethod
    def circle(cls, length, nodes, inverse_metric=()):
        return cls("circle", (length,), (nodes,), inverse_metric)

    @classmethod
    def torus2(cls, lengths, nodes, inverse_metric=()):
        return cls("torus2", lengths, nodes, inverse_metric)

    @classmethod
    def interval(cls, length, nodes, inverse_metric=()):
        return cls("interval", (length,), (nodes,), inverse_metric)

    @classmethod
    def rectangle(cls, lengths, nodes, inverse_metric=()):
        return cls("rectangle", lengths, nodes, inverse_metric)

    def to_dict(self):
        return {"kind": self.kind, "lengths": list(self.lengths),
                "nodes": list(self.nodes), "inverse_metric": list(self.inverse_metric)}

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        lengths = data.get("lengths", data.get("length"))
        return cls(data["kind"], lengths, data["nodes"], data.get("inverse_metric", ()))

    def refined(self, factor=2):
        """Same domain with spacing divided by ``factor``."""
        if self.periodic:
            nodes = tuple(n * factor for n in self.nodes)
        else:
            nodes = tuple((n - 1) * factor + 1 for n in self.nodes)
        return DomainGrid(self.kind, self.lengths, nodes, self.inverse_metric)

    # geometry ----------------------------------------------------------------

    @property
    def ndim(self):
        return _NDIM[self.kind]

    @property
    def shape(self):
        return self.nodes

    @property
    def size(self):
        return int(np.prod(self.nodes))

    @property
    def periodic(self):
        return self.kind in PERIODIC_KINDS

    @property
    def spacing(self):
        if self.periodic:
            return tuple(L / N for L, N in zip(self.lengths, self.nodes))
        return tuple(L / (N - 1) for L, N in zip(self.lengths, self.nodes))

    @property
    def h_min(self):
        return min(self.spacing)

    def coordinates(self):
        return [np.arange(N) * h for N, h in zip(self.nodes, self.spacing)]

    def mesh(self):
        """Node coordinates, shape ``grid.shape + (ndim,)``."""
        return np.stack(np.meshgrid(*self.coordinates(), indexing="ij"), axis=-1)

    def interior_mask(self):
        mask = np.ones(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for axis in range(self.ndim):
            index = [slice(None)] * self.ndim
            index[axis] = 0
            mask[tuple(index)] = False
            index[axis] = -1
            mask[tuple(index)] = False
        return mask

    def weights(self):
        """Per-node volume weights; zero on Dirichlet boundary nodes."""
        return np.prod(self.spacing) * self.interior_mask().astype(float)

    def total_volume(self):
        return float(np.sum(self.weights()))

    def edge_weights(self, axis):
        """Quadrature weight of the forward edge leaving each node along ``axis``.

        Nodes without a forward edge (last node of a Dirichlet axis) get zero.
        On a Dirichlet rectangle, edges lying on a boundary line carry half
        the cell volume.
        """
        w = np.full(self.shape, float(np.prod(self.spacing)))
        if self.periodic:
            return w
        index = [slice(None)] * self.ndim
        index[axis] = -1
        w[tuple(index)] = 0.0
        for other in range(self.ndim):
            if other == axis:
                continue
            for end in (0, -1):
                index = [slice(None)] * self.ndim
                index[other] = end
                w[tuple(index)] *= 0.5
        return w

    def stability_bound(self, cfl_safety):
        """Largest admissible explicit step: c * h_min^2 / max_i g^ii."""
        return cfl_safety * self.h_min**2 / max(self.inverse_metric)

    # stencils ------------------------------------------------------------------

    def _check(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[: self.ndim] != self.shape:
            raise ShapeMismatch(f"field shape {values.shape} does not start with grid shape {self.shape}")
        return values

    def shift(self, values, axis, step):
        """Field evaluated at the neighbour ``x + step * h * e_axis``.

        Periodic axes wrap around; Dirichlet axes repeat the end value, so the
        result is only meaningful at interior nodes.
        """
        if self.periodic:
            return np.roll(values, -step, axis=axis)
        n = self.nodes[axis]
        idx = np.clip(np.arange(n) + step, 0, n - 1)
        return np.take(values, idx, axis=axis)

    def first_diff(self, values, axis):
        """Central difference along ``axis``; second-order one-sided at Dirichlet ends."""
        values = self._check(values)
        h = self.spacing[axis]
        if self.periodic:
            return (self.shift(values, axis, 1) - self.shift(values, axis, -1)) / (2 * h)
        return np.gradient(values, h, axis=axis, edge_order=2)

    def second_diff(self, values, axis_i, axis_j):
        """Second difference; compact 3-point for i == j, nested central otherwise."""
        values = self._check(values)
        if axis_i != axis_j:
            return self.first_diff(self.first_diff(values, axis_j), axis_i)
        axis = axis_i
        h = self.spacing[axis]
        out = (self.shift(values, axis, 1) - 2 * values + self.shift(values, axis, -1)) / h**2
        if not self.periodic:
            moved = np.moveaxis(out, axis, 0)
            v = np.moveaxis(values, axis, 0)
            moved[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
            moved[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
        return out

    def laplacian(self, values):
        """Scalar grid Laplacian sum_i g^ii d_ii (compact stencil)."""
        return sum(g * self.second_diff(values, i, i) for i, g in enumerate(self.inverse_metric))

    def axis_laplacian_eigs(self, axis):
        """Eigenvalues of the 1D operator -g^ii d_ii along one axis (closed form)."""
        N, h, g = self.nodes[axis], self.spacing[axis], self.inverse_metric[axis]
        if self.periodic:
            m = np.arange(N)
            return g * 4 / h**2 * np.sin(np.pi * m / N) ** 2
        m = np.arange(1, N - 1)
        return g * 4 / h**2 * np.sin(np.pi * m / (2 * (N - 1))) ** 2

    def laplacian_eigs(self, k):
        """The k smallest eigenvalues of -Laplacian on the grid, ascending."""
        dof = self.size if self.periodic else int(np.sum(self.interior_mask()))
        if not 1 <= k <= dof:
            raise ValueError(f"k must lie in [1, {dof}]")
        eigs = self.axis_laplacian_eigs(0)
        for axis in range(1, self.ndim):
            eigs = np.add.outer(eigs, self.axis_laplacian_eigs(axis)).ravel()
        return np.sort(eigs)[:k]


def first_diff(grid, field, axis=0):
    return grid.first_diff(field, axis)


def second_diff(grid, field, axis_i=0, axis_j=0):
    return grid.second_diff(field, axis_i, axis_j)


def domain_laplacian_eigs(grid, k):
    return grid.laplacian_eigs(k)
