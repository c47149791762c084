"""Jacobi operator of a discrete map: assembly and low spectrum.

Two assemblies are provided.

* Strong form ``K``: minus the covariant linearisation of the discrete
  tension, ``K s = -(d tau[s] + Gamma(tau, s))``.  It is a three-point
  stencil per domain axis and is stored through :class:`CoefficientFields`
  (second-order, first-order and zeroth-order coefficients at every node).
* Weak form ``Q``: the second variation of the discrete energy, assembled
  edge by edge from the index form ``int |nabla J|^2 - <R(J, c')c', J>`` of
  the Jacobi field ``J`` interpolating the section along each edge geodesic.

With the mass matrix ``M`` (fibre metric times node volume) one has
``Q = M K`` up to rounding, which :func:`weak_strong_residual` checks.
Eigenvalues are computed from the symmetric pencil ``(Q, M)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, ZeroSection
from .maps import DiscreteMap, Section, differentials, dof_mask, neighbor_values, tension_values


@dataclass
class CoefficientFields:
    """Node-wise coefficients of ``K s = A_i d_ii s + B_i d_i s + C s``.

    ``second`` and ``first`` have shape ``grid.shape + (ndim, n, n)`` (one
    block per domain axis, the domain metric being diagonal); ``zeroth`` and
    ``curvature`` have shape ``grid.shape + (n, n)``.  Block ``[c, a]`` maps
    the a-th section coefficient to the c-th output coefficient.
    ``curvature`` is the part ``-g^ii R(., d_i f) d_i f`` of ``zeroth``; it is
    ``None`` for fields read off a discrete stencil.
    """

    second: np.ndarray
    first: np.ndarray
    zeroth: np.ndarray
    curvature: np.ndarray | None = None

    def max_difference(self, other):
        return max(float(np.max(np.abs(self.second - other.second))),
                   float(np.max(np.abs(self.first - other.first))),
                   float(np.max(np.abs(self.zeroth - other.zeroth))))


def assemble_coefficients(f: DiscreteMap) -> CoefficientFields:
    """Coefficients of the Jacobi operator from g, df, Christoffels and curvature.

    Writing the pull-back connection as ``nabla_i s = d_i s + W_i s`` with
    ``(W_i)^c_a = Gamma^c_ab(f) d_i f^b`` gives ``A_i = -g^ii I``,
    ``B_i = -2 g^ii W_i`` and ``C = -g^ii (d_i W_i + W_i W_i + R(., d_i f) d_i f)``.
    """
    grid, target = f.grid, f.target
    n = target.dim
    gamma = target.christoffels_at(f.values)
    riemann = target.curvature_at(f.values)
    df = differentials(f)
    eye = np.eye(n)
    second = np.zeros(grid.shape + (grid.ndim, n, n))
    first = np.zeros_like(second)
    zeroth = np.zeros(grid.shape + (n, n))
    curvature = np.zeros_like(zeroth)
    for axis, g in enumerate(grid.inverse_metric):
        conn = np.einsum("...cab,...b->...ca", gamma, df[axis])
        dconn = grid.first_diff(conn, axis)
        pot = np.einsum("...cabd,...b,...d->...ca", riemann, df[axis], df[axis])
        second[..., axis, :, :] = -g * eye
        first[..., axis, :, :] = -2 * g * conn
        curvature += -g * pot
        zeroth += -g * (dconn + conn @ conn + pot)
    return CoefficientFields(second, first, zeroth, curvature)


def _stencil_blocks(f: DiscreteMap):
    """Per-axis blocks (lower, diag, upper) of the linearised discrete tension."""
    grid, target = f.grid, f.target
    inv_metric = 1.0 / target.conformal_factor(f.values)[..., None, None]
    blocks = []
    for axis, (h, g) in enumerate(zip(grid.spacing, grid.inverse_metric)):
        fwd = neighbor_values(grid, f.values, f.winding, axis, 1)
        bwd = neighbor_values(grid, f.values, f.winding, axis, -1)
        hpp_f, hpq_f, _ = target.edge_hessian(f.values, fwd)
        hpp_b, hpq_b, _ = target.edge_hessian(f.values, bwd)
        scale = g / h**2 * inv_metric
        blocks.append((scale * hpq_b, scale * (hpp_f + hpp_b), scale * hpq_f))
    return blocks


def stencil_coefficients(f: DiscreteMap) -> CoefficientFields:
    """Coefficient fields that reproduce the discrete strong form exactly.

    A three-point block stencil ``L s[-1] + D s[0] + U s[+1]`` equals
    ``A d2 s + B d1 s + C s`` with compact second and central first
    differences when ``A = h^2 (L + U) / 2``, ``B = h (U - L)``,
    ``C = L + D + U``.
    """
    grid, n = f.grid, f.target.dim
    second = np.zeros(grid.shape + (grid.ndim, n, n))
    first = np.zeros_like(second)
    zeroth = np.zeros(grid.shape + (n, n))
    for axis, (h, (lower, diag, upper)) in enumerate(zip(grid.spacing, _stencil_blocks(f))):
        second[..., axis, :, :] = 0.5 * h**2 * (lower + upper)
        first[..., axis, :, :] = h * (upper - lower)
        zeroth += lower + diag + upper
    return CoefficientFields(second, first, zeroth)


def apply_coefficients(f: DiscreteMap, fields: CoefficientFields, s_values):
    """``A_i d_ii s + B_i d_i s + C s`` node-wise, without sparse assembly.

    Agrees with :func:`coefficient_operator` at interior nodes; the result is
    zero on Dirichlet boundary nodes.
    """
    grid = f.grid
    s = np.array(s_values, dtype=float)
    if not grid.periodic:
        s[~grid.interior_mask()] = 0.0
    out = np.einsum("...ca,...a->...c", fields.zeroth, s)
    for axis, h in enumerate(grid.spacing):
        fwd = grid.shift(s, axis, 1)
        bwd = grid.shift(s, axis, -1)
        out += np.einsum("...ca,...a->...c", fields.second[..., axis, :, :], (fwd - 2 * s + bwd) / h**2)
        out += np.einsum("...ca,...a->...c", fields.first[..., axis, :, :], (fwd - bwd) / (2 * h))
    if not grid.periodic:
        out[~grid.interior_mask()] = 0.0
    return out


def strong_quadratic(f: DiscreteMap, s_values):
    """``<K s, s>_M`` with K the strong-form Jacobi operator at f."""
    ks = apply_coefficients(f, stencil_coefficients(f), s_values)
    fiber = f.target.inner(f.values, ks, s_values)
    return float(np.sum(f.grid.weights() * fiber))


class _DofLayout:
    def __init__(self, grid, n):
        self.grid = grid
        self.n = n
        self.mask = dof_mask(grid)
        self.index = np.full(grid.shape, -1, dtype=np.int64)
        self.index[self.mask] = np.arange(int(self.mask.sum()))
        self.count = int(self.mask.sum()) * n

    def neighbor_index(self, axis, step):
        idx = self.grid.shift(self.index, axis, step)
        if not self.grid.periodic:
            # clipped shifts point back at the node itself; those edges do not exist
            n_axis = self.grid.nodes[axis]
            pos = np.arange(n_axis) + step
            bad = (pos < 0) | (pos >= n_axis)
            shape = [1] * self.grid.ndim
            shape[axis] = n_axis
            idx = np.where(bad.reshape(shape), -1, idx)
        return idx

    def coo(self, rows, cols, blocks):
        """Scatter n-by-n blocks at (row node, col node) dof pairs, skipping non-dofs."""
        rows = rows.ravel()
        cols = cols.ravel()
        blocks = blocks.reshape(-1, self.n, self.n)
        keep = (rows >= 0) & (cols >= 0)
        rows, cols, blocks = rows[keep], cols[keep], blocks[keep]
        r = (rows[:, None, None] * self.n + np.arange(self.n)[None, :, None])
        c = (cols[:, None, None] * self.n + np.arange(self.n)[None, None, :])
        r, c = np.broadcast_arrays(r, c)
        return r.ravel(), c.ravel(), blocks.ravel()


def coefficient_operator(f: DiscreteMap, fields: CoefficientFields):
    """Sparse matrix of ``A_i d_ii + B_i d_i + C`` on the degrees of freedom."""
    grid = f.grid
    layout = _DofLayout(grid, f.target.dim)
    here = layout.index
    rows, cols, data = [], [], []

    def add(r, c, blocks):
        rr, cc, dd = layout.coo(r, c, blocks)
        rows.append(rr)
        cols.append(cc)
        data.append(dd)

    diag = fields.zeroth.copy()
    for axis, h in enumerate(grid.spacing):
        a = fields.second[..., axis, :, :]
        b = fields.first[..., axis, :, :]
        add(here, layout.neighbor_index(axis, 1), a / h**2 + b / (2 * h))
        add(here, layout.neighbor_index(axis, -1), a / h**2 - b / (2 * h))
        diag = diag - 2 * a / h**2
    add(here, here, diag)
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(layout.count, layout.count))


def _weak_form(f: DiscreteMap, layout):
    grid, target = f.grid, f.target
    here = layout.index
    rows, cols, data = [], [], []
    for axis, (h, g) in enumerate(zip(grid.spacing, grid.inverse_metric)):
        fwd = neighbor_values(grid, f.values, f.winding, axis, 1)
        hpp, hpq, hqq = target.edge_hessian(f.values, fwd)
        weight = (grid.edge_weights(axis) * g / h**2)[..., None, None]
        there = layout.neighbor_index(axis, 1)
        for r, c, blk in ((here, here, hpp), (here, there, hpq),
                          (there, here, np.swapaxes(hpq, -1, -2)), (there, there, hqq)):
            rr, cc, dd = layout.coo(r, c, weight * blk)
            rows.append(rr)
            cols.append(cc)
            data.append(dd)
    q = sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(layout.count, layout.count))
    return ((q + q.T) * 0.5).tocsr()


def _mass(f: DiscreteMap, layout):
    w = f.grid.weights() * f.target.conformal_factor(f.values)
    diag = np.repeat(w[layout.mask], f.target.dim)
    return sp.diags(diag, format="csr")


@dataclass
class JacobiSystem:
    """Discrete Jacobi operator of a map: strong form, weak form and mass matrix."""

    base: DiscreteMap
    strong: sp.csr_matrix
    weak: sp.csr_matrix
    mass: sp.csr_matrix
    coefficients: CoefficientFields

    @property
    def size(self):
        return self.weak.shape[0]

    @property
    def scale(self):
        """Typical eigenvalue magnitude: mean diagonal of Q over mean diagonal of M."""
        return float(np.mean(self.weak.diagonal()) / np.mean(self.mass.diagonal()))

    def apply_strong(self, s: Section) -> Section:
        return Section.from_vector(self.base, self.strong @ s.vector())

    def m_inner(self, u, v):
        return float(u @ (self.mass @ v))


def assemble_system(f: DiscreteMap) -> JacobiSystem:
    layout = _DofLayout(f.grid, f.target.dim)
    fields = stencil_coefficients(f)
    return JacobiSystem(
        base=f,
        strong=coefficient_operator(f, fields),
        weak=_weak_form(f, layout),
        mass=_mass(f, layout),
        coefficients=fields,
    )


def weak_strong_residual(system: JacobiSystem, samples=8, seed=0):
    """max over seeded random s of ||Q s - M K s|| / ||s||."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        s = rng.standard_normal(system.size)
        diff = system.weak @ s - system.mass @ (system.strong @ s)
        worst = max(worst, float(np.linalg.norm(diff) / np.linalg.norm(s)))
    return worst


def rayleigh(system: JacobiSystem, s) -> float:
    """<K s, s>_M / ||s||_M^2 evaluated through the weak form."""
    v = s.vector() if isinstance(s, Section) else np.asarray(s, dtype=float)
    den = float(v @ (system.mass @ v))
    if den <= 0.0:
        raise ZeroSection("Rayleigh quotient of a section vanishing at all degrees of freedom")
    return float(v @ (system.weak @ v)) / den


@dataclass
class Spectrum:
    """Lowest generalized eigenpairs of ``(Q, M)`` in ascending order."""

    values: np.ndarray
    vectors: np.ndarray  # columns, M-orthonormal
    residuals: np.ndarray
    base: DiscreteMap
    scale: float
    kernel_threshold: float
    iterations: list = field(default_factory=list)

    @property
    def kernel_dim(self):
        return int(np.sum(self.values < self.kernel_threshold))

    @property
    def degenerate(self):
        return self.kernel_dim > 0

    @property
    def lambda1(self):
        return float(self.values[0])

    def section(self, i):
        return Section.from_vector(self.base, self.vectors[:, i])

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        for i, lam in enumerate(self.values):
            yield float(lam), self.section(i)

    def __getitem__(self, i):
        return float(self.values[i]), self.section(i)

    def to_dict(self):
        return {
            "lambda": [float(x) for x in self.values],
            "residuals": [float(x) for x in self.residuals],
            "degenerate": bool(self.degenerate),
            "kernel_dim": self.kernel_dim,
            "kernel_threshold": float(self.kernel_threshold),
            "scale": float(self.scale),
        }


class _PCG:
    """Conjugate gradients on Q + eps*M, preconditioned by an incomplete LU factor."""

    def __init__(self, matrix, rtol=1e-13, maxiter=2000):
        self.matrix = matrix.tocsc()
        ilu = spla.spilu(self.matrix, drop_tol=1e-12, fill_factor=40)
        n = matrix.shape[0]
        self.precond = spla.LinearOperator((n, n), matvec=ilu.solve)
        self.rtol = rtol
        self.maxiter = maxiter
        self.iterations = 0

    def solve(self, rhs, x0=None):
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = spla.cg(self.matrix, rhs, x0=x0, rtol=self.rtol, atol=0.0,
                          maxiter=self.maxiter, M=self.precond, callback=tick)
        self.iterations += count[0]
        if info != 0:
            res = np.linalg.norm(self.matrix @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if res > 1e-8:
                raise NoConvergence(f"inner CG stalled (relative residual {res:.2e})",
                                    best_residual=res, iterations=count[0])
        return x


def lowest_eigs(system: JacobiSystem, k=1, tol=1e-8, max_iter=10_000, seed=0,
                kernel_rel=1e-6, guard=None) -> Spectrum:
    """k smallest eigenpairs of ``Q v = lambda M v`` by block inverse iteration.

    A seeded block of ``k + guard`` vectors is repeatedly multiplied by
    ``(Q + eps M)^-1 M`` and M-orthonormalised by a Rayleigh-Ritz step, so
    every Ritz vector stays deflated against the others.  The guard vectors
    let clustered eigenvalues converge at the rate ``lambda_i / lambda_{k+guard+1}``
    instead of stalling.  Pair i is accepted once
    ``||Q v - lambda M v|| <= tol * mean(diag Q) * ||v||``; the run ends when
    the first k pairs are accepted together.  The mass shift ``eps = 1e-8 * scale``
    only keeps maps with a Jacobi kernel solvable; eigenvalues are the
    unshifted Ritz values.
    """
    size = system.size
    if not 1 <= k <= size:
        raise ValueError(f"k must lie in [1, {size}]")
    Q, M = system.weak, system.mass
    scale = system.scale
    q_scale = float(np.mean(Q.diagonal()))
    shift = 1e-8 * scale
    solver = _PCG(Q + shift * M)
    guard = max(2, k) if guard is None else int(guard)
    width = min(size, k + guard)
    rng = np.random.default_rng(seed)

    def ritz(block):
        a = block.T @ (Q @ block)
        b = block.T @ (M @ block)
        theta, coef = sl.eigh(0.5 * (a + a.T), 0.5 * (b + b.T))
        return theta, block @ coef

    theta, x = ritz(np.linalg.qr(rng.standard_normal((size, width)))[0])
    first_ok = [0] * k
    best = np.inf
    for it in range(1, max_iter + 1):
        y = np.empty_like(x)
        for j in range(width):
            guess = x[:, j] / (theta[j] + shift) if theta[j] + shift > 0 else None
            y[:, j] = solver.solve(M @ x[:, j], x0=guess)
        theta, x = ritz(np.linalg.qr(y)[0])
        res = np.array([np.linalg.norm(Q @ x[:, j] - theta[j] * (M @ x[:, j]))
                        / (q_scale * np.linalg.norm(x[:, j])) for j in range(k)])
        best = min(best, float(np.max(res)))
        for j in range(k):
            if res[j] <= tol and not first_ok[j]:
                first_ok[j] = it
        if np.all(res <= tol):
            break
    else:
        raise NoConvergence(
            f"block inverse iteration did not reach tol={tol:g} for {k} pairs",
            best_residual=best, iterations=max_iter)

    return Spectrum(
        values=theta[:k].copy(),
        vectors=x[:, :k].copy(),
        residuals=res,
        base=system.base,
        scale=scale,
        kernel_threshold=kernel_rel * scale,
        iterations=first_ok,
    )


def linearized_tension_fd(f: DiscreteMap, s: Section, step=1e-6):
    """Central finite difference of the discrete tension along a section (test oracle helper)."""
    grid, target = f.grid, f.target
    plus = tension_values(grid, target, f.values + step * s.coefficients, f.winding)
    minus = tension_values(grid, target, f.values - step * s.coefficients, f.winding)
    return (plus - minus) / (2 * step)
