"""Non-positively curved target manifolds, each described in one global chart.

Three kinds are supported:

* ``euclidean``  -- R^n with the flat metric.
* ``hyperbolic`` -- the upper half-space {y_n > 0} with metric
  ``|dy|^2 / (kappa * y_n^2)``, sectional curvature ``-kappa``.
* ``torus``      -- the flat torus R^n / (periods * Z^n).  Points are stored
  as lifts to the universal cover, so the chart is all of R^n.

All geometric routines are vectorised: points and vectors carry the chart
dimension on the last axis and arbitrary leading batch axes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartViolation

KINDS = ("euclidean", "hyperbolic", "torus")

# below this the series expansions of the Jacobi-field weights are used
_SMALL = 1e-4


def _unit(v, axis=-1):
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, v / safe, 0.0), norm[..., 0]


def _mu_coth(mu):
    mu = np.asarray(mu, dtype=float)
    small = mu < _SMALL
    big = np.where(small, 1.0, mu)
    return np.where(small, 1.0 + mu**2 / 3.0, big / np.tanh(big))


def _mu_csch(mu):
    mu = np.asarray(mu, dtype=float)
    small = mu < _SMALL
    big = np.where(small, 1.0, mu)
    return np.where(small, 1.0 - mu**2 / 6.0, big / np.sinh(big))


@dataclass(frozen=True)
class TargetManifold:
    """Descriptor of a complete non-positively curved target in one chart.

    Parameters
    ----------
    kind : str
        One of ``euclidean``, ``hyperbolic`` or ``torus``.
    dim : int
        Chart dimension n.
    curvature : float
        Curvature scale kappa > 0 of the hyperbolic kind (sectional
        curvature is ``-kappa``); ignored for flat kinds.
    y_min : float
        Smallest admissible last coordinate in the half-space chart.
    periods : tuple of float
        Lattice periods of the torus kind.
    """

    kind: str
    dim: int
    curvature: float = 1.0
    y_min: float = 1e-6
    periods: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("target dimension must be positive")
        if self.kind == "hyperbolic":
            if self.dim < 2:
                raise ValueError("hyperbolic half-space needs dim >= 2")
            if not self.curvature > 0:
                raise ValueError("curvature scale must be positive")
            if not self.y_min > 0:
                raise ValueError("y_min must be positive")
        if self.kind == "torus":
            periods = tuple(float(p) for p in self.periods) or (2 * math.pi,) * self.dim
            if len(periods) != self.dim or min(periods) <= 0:
                raise ValueError("torus needs one positive period per dimension")
            object.__setattr__(self, "periods", periods)

    # construction helpers -------------------------------------------------

    @classmethod
    def euclidean(cls, dim):
        return cls("euclidean", dim, curvature=0.0)

    @classmethod
    def hyperbolic(cls, dim=2, curvature=1.0, y_min=1e-6):
        return cls("hyperbolic", dim, curvature=curvature, y_min=y_min)

    @classmethod
    def flat_torus(cls, dim, periods=()):
        return cls("torus", dim, curvature=0.0, periods=tuple(periods))

    @property
    def flat(self):
        return self.kind != "hyperbolic"

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "hyperbolic":
            out.update(curvature=self.curvature, y_min=self.y_min)
        elif self.kind == "torus":
            out["periods"] = list(self.periods)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        kind = data.pop("kind")
        dim = int(data.pop("dim", 2 if kind == "hyperbolic" else 1))
        if kind == "hyperbolic":
            return cls.hyperbolic(dim, float(data.pop("curvature", 1.0)),
                                  float(data.pop("y_min", 1e-6)))
        if kind == "torus":
            return cls.flat_torus(dim, data.pop("periods", ()))
        if kind != "euclidean":
            raise ValueError(f"unknown target kind {kind!r}")
        return cls.euclidean(dim)

    # admissibility ---------------------------------------------------------

    def admissible(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind != "hyperbolic":
            return np.all(np.isfinite(y), axis=-1)
        return np.all(np.isfinite(y), axis=-1) & (y[..., -1] >= self.y_min)

    def check(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.dim:
            raise ChartViolation(f"point dimension {y.shape[-1]} != target dimension {self.dim}")
        if not np.all(self.admissible(y)):
            if self.kind == "hyperbolic":
                low = float(np.nanmin(y[..., -1]))
                raise ChartViolation(
                    f"last chart coordinate {low:.3e} below chart guard y_min={self.y_min:g}")
            raise ChartViolation("non-finite chart coordinates")
        return y

    # metric data -----------------------------------------------------------

    def conformal_factor(self, y):
        """Scalar c(y) with h(y) = c(y) * identity (every kind is conformally flat)."""
        y = np.asarray(y, dtype=float)
        if self.kind == "hyperbolic":
            return 1.0 / (self.curvature * y[..., -1] ** 2)
        return np.ones(y.shape[:-1])

    def metric_at(self, y):
        y = self.check(y)
        return self.conformal_factor(y)[..., None, None] * np.eye(self.dim)

    def inner(self, y, a, b):
        return self.conformal_factor(y) * np.sum(np.asarray(a) * np.asarray(b), axis=-1)

    def norm(self, y, a):
        return np.sqrt(self.inner(y, a, a))

    def christoffels_at(self, y):
        """Christoffel symbols ``G[..., c, a, b]`` of the Levi-Civita connection."""
        y = self.check(y)
        n = self.dim
        gamma = np.zeros(y.shape[:-1] + (n, n, n))
        if self.kind != "hyperbolic":
            return gamma
        eye = np.eye(n)
        e_last = eye[-1]
        # G^c_ab = -(d^c_a d_b,last + d^c_b d_a,last - d_ab d^c_last) / y_last
        pattern = (np.einsum("ca,b->cab", eye, e_last)
                   + np.einsum("cb,a->cab", eye, e_last)
                   - np.einsum("ab,c->cab", eye, e_last))
        return -pattern / y[..., -1][..., None, None, None]

    def curvature_at(self, y):
        """Riemann tensor ``R[..., d, a, b, c]``: the d-component of R(e_a, e_b) e_c.

        Convention R(X, Y)Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z.
        """
        y = self.check(y)
        n = self.dim
        if self.kind != "hyperbolic":
            return np.zeros(y.shape[:-1] + (n, n, n, n))
        h = self.metric_at(y)
        eye = np.eye(n)
        return -self.curvature * (np.einsum("...bc,da->...dabc", h, eye)
                                  - np.einsum("...ac,db->...dabc", h, eye))

    def riemann_apply(self, y, s, w):
        """R(s, w)w at y."""
        y = self.check(y)
        s = np.asarray(s, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.kind != "hyperbolic":
            return np.zeros(np.broadcast(y, s, w).shape)
        return -self.curvature * (self.inner(y, w, w)[..., None] * s
                                  - self.inner(y, s, w)[..., None] * w)

    def sectional(self, y, s, w):
        num = self.inner(y, self.riemann_apply(y, s, w), s)
        den = self.inner(y, s, s) * self.inner(y, w, w) - self.inner(y, s, w) ** 2
        return num / den

    # geodesics -------------------------------------------------------------

    def exp_map(self, y, v, t=1.0):
        """Endpoint gamma(t) of the geodesic with gamma(0) = y, gamma'(0) = v."""
        y = self.check(y)
        v = np.asarray(v, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind != "hyperbolic":
            return y + t[..., None] * v if t.ndim else y + t * v
        out = y + self._hyperbolic_displacement(y, v, t)
        if not np.all(self.admissible(out)):
            raise ChartViolation(
                f"geodesic left the chart region y_last >= {self.y_min:g}")
        return out

    def _hyperbolic_displacement(self, y, v, t):
        # Closed form of the half-space geodesic, written in real arithmetic
        # as a displacement so that tiny steps keep full relative precision.
        # With s = |v| t / y_n (arc length in units where kappa = 1):
        #   dy_h = t E (2 + e) v_h / D,  dy_n = t E (2 v_n - e (|v| - v_n)) / D,
        # e = expm1(s), E = e / s, D = 2 + expm1(2 s) (|v| - v_n) / |v|.
        yn = y[..., -1]
        speed = np.sqrt(np.sum(v * v, axis=-1))
        safe = np.where(speed > 0, speed, 1.0)
        s = speed * t / yn
        e = np.expm1(s)
        moving = s != 0
        ratio = np.where(moving, e / np.where(moving, s, 1.0), 1.0)
        down = (speed - v[..., -1]) / safe
        den = 2.0 + e * (e + 2.0) * down
        step = t * ratio / den
        disp = np.empty(np.broadcast(y, v).shape)
        disp[..., :-1] = (step * (2.0 + e))[..., None] * v[..., :-1]
        disp[..., -1] = step * (2.0 * v[..., -1] - e * (speed - v[..., -1]))
        return disp

    def log_map(self, p, q):
        """Initial velocity at p of the geodesic reaching q at time 1."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind != "hyperbolic":
            return q - p
        diff = q - p
        pn, qn = p[..., -1], q[..., -1]
        xi2 = np.sum(diff[..., :-1] ** 2, axis=-1)
        dn = diff[..., -1]
        chord = np.sqrt(xi2 + dn**2)
        span = np.sqrt(xi2 + (pn + qn) ** 2)
        # With the chord and span of the Euclidean half-disc picture,
        # v = F pn / span^2 (2 pn diff_h, |diff_h|^2 + dn (pn + qn)) and
        # F = 2 atanh(chord / span) / (chord / span); log1p(x) / x -> 1 at coincident points.
        x = chord * (span + chord) / (2.0 * pn * qn)
        nz = x > 0
        xs = np.where(nz, x, 1.0)
        lx = np.where(nz, np.log1p(xs) / xs, 1.0)
        factor = lx * (span + chord) / (2.0 * qn * span)
        out = np.empty(np.broadcast(p, q).shape)
        out[..., :-1] = (2.0 * pn * factor)[..., None] * diff[..., :-1]
        out[..., -1] = factor * (xi2 + dn * (pn + qn))
        return out

    def distance(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        if self.kind != "hyperbolic":
            return np.linalg.norm(q - p, axis=-1)
        diff = q - p
        pn, qn = p[..., -1], q[..., -1]
        xi2 = np.sum(diff[..., :-1] ** 2, axis=-1)
        chord = np.sqrt(xi2 + diff[..., -1] ** 2)
        span = np.sqrt(xi2 + (pn + qn) ** 2)
        return np.log1p(chord * (span + chord) / (2.0 * pn * qn)) / math.sqrt(self.curvature)

    def transport(self, p, q, w):
        """Parallel transport of w in T_qN to T_pN along the geodesic from q to p."""
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        w = np.asarray(w, dtype=float)
        if self.kind != "hyperbolic":
            return np.array(w, dtype=float, copy=True)
        rot = self._rotation(p, q)
        scale = p[..., -1] / q[..., -1]
        return scale[..., None] * np.einsum("...ij,...j->...i", rot, w)

    def _rotation(self, p, q):
        # Euclidean rotation in the vertical plane of the geodesic carrying the
        # forward tangent direction at q onto the one at p.
        u_p, size = _unit(self.log_map(p, q))
        u_q, _ = _unit(-self.log_map(q, p))
        n = self.dim
        a = np.zeros(u_p.shape)
        a[..., :-1], _ = _unit(q[..., :-1] - p[..., :-1])
        b = np.zeros(n)
        b[-1] = 1.0
        b = np.broadcast_to(b, u_p.shape)
        c = np.sum(u_q * u_p, axis=-1)
        s = (np.sum(u_q * a, axis=-1) * np.sum(u_p * b, axis=-1)
             - np.sum(u_q * b, axis=-1) * np.sum(u_p * a, axis=-1))
        # coincident points: nothing to rotate
        c = np.where(size > 0, c, 1.0)
        s = np.where(size > 0, s, 0.0)
        outer = lambda x, y: x[..., :, None] * y[..., None, :]  # noqa: E731
        eye = np.broadcast_to(np.eye(n), u_p.shape + (n,))
        return (eye + (c - 1.0)[..., None, None] * (outer(a, a) + outer(b, b))
                + s[..., None, None] * (outer(b, a) - outer(a, b)))

    def edge_hessian(self, p, q):
        """Covariant Hessian blocks of ``(p, q) -> d(p, q)**2 / 2`` in chart coordinates.

        Returns ``(Hpp, Hpq, Hqq)``, each of shape ``(..., n, n)``, with indices
        lowered by the metric, so that for variations v at p and w at q the
        second variation is ``v.Hpp.v + 2 v.Hpq.w + w.Hqq.w``.  It equals the
        index form of the Jacobi field along the connecting geodesic with
        end values v and w.
        """
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        n = self.dim
        shape = np.broadcast(p, q).shape[:-1] + (n, n)
        eye = np.broadcast_to(np.eye(n), shape)
        if self.kind != "hyperbolic":
            return eye.copy(), -eye.copy(), eye.copy()
        u_p, _ = _unit(self.log_map(p, q))
        u_q, _ = _unit(-self.log_map(q, p))
        mu = math.sqrt(self.curvature) * self.distance(p, q)
        coth = _mu_coth(mu)[..., None, None]
        csch = _mu_csch(mu)[..., None, None]
        proj_p = u_p[..., :, None] * u_p[..., None, :]
        proj_q = u_q[..., :, None] * u_q[..., None, :]
        cp = self.conformal_factor(p)[..., None, None]
        cq = self.conformal_factor(q)[..., None, None]
        hpp = cp * (proj_p + coth * (eye - proj_p))
        hqq = cq * (proj_q + coth * (eye - proj_q))
        transport = (p[..., -1] / q[..., -1])[..., None, None] * self._rotation(p, q)
        hpq = -cp * ((proj_p + csch * (eye - proj_p)) @ transport)
        return hpp, hpq, hqq

    def integrate_geodesic(self, y, v, t, steps=1000):
        """Classical RK4 on the geodesic equation; generic fallback to :meth:`exp_map`."""
        pos = self.check(y).astype(float).copy()
        vel = np.array(v, dtype=float, copy=True)
        dt = float(t) / steps

        def accel(x, u):
            return -np.einsum("...cab,...a,...b->...c", self.christoffels_at(x), u, u)

        for _ in range(steps):
            k1x, k1v = vel, accel(pos, vel)
            k2x, k2v = vel + 0.5 * dt * k1v, accel(pos + 0.5 * dt * k1x, vel + 0.5 * dt * k1v)
            k3x, k3v = vel + 0.5 * dt * k2v, accel(pos + 0.5 * dt * k2x, vel + 0.5 * dt * k2v)
            k4x, k4v = vel + dt * k3v, accel(pos + dt * k3x, vel + dt * k3v)
            pos = pos + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            vel = vel + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        return pos, vel


metric_at = TargetManifold.metric_at
christoffels_at = TargetManifold.christoffels_at
curvature_at = TargetManifold.curvature_at
riemann_apply = TargetManifold.riemann_apply
exp_map = TargetManifold.exp_map
