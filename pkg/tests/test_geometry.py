"""Target geometry against independent oracles.

Oracles: finite differences of the metric (Koszul formula) and of the
Christoffel symbols, the complex Moebius description of the upper half
plane, the arccosh distance formula and RK4 integration of the geodesic
equation.
"""
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heatflow.errors import ChartViolation
from heatflow.geometry import TargetManifold

coords = st.floats(-3.0, 3.0)
heights = st.floats(0.2, 4.0)
kappas = st.floats(0.1, 5.0)


def metric_fd(target, y, eps):
    """d_a h_bc by central differences, shape (a, b, c)."""
    n = target.dim
    out = np.zeros((n, n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = eps
        out[a] = (target.metric_at(y + e) - target.metric_at(y - e)) / (2 * eps)
    return out


def koszul(target, y, eps):
    dh = metric_fd(target, y, eps)
    hinv = np.linalg.inv(target.metric_at(y))
    # G^c_ab = 1/2 h^cd (d_a h_db + d_b h_da - d_d h_ab)
    low = 0.5 * (np.einsum("adb->dab", dh) + np.einsum("bda->dab", dh) - dh)
    return np.einsum("cd,dab->cab", hinv, low)


def christoffel_fd(target, y, eps):
    n = target.dim
    out = np.zeros((n,) * 4)  # [e, c, a, b] = d_e G^c_ab
    for e_ in range(n):
        e = np.zeros(n)
        e[e_] = eps
        out[e_] = (target.christoffels_at(y + e) - target.christoffels_at(y - e)) / (2 * eps)
    return out


def riemann_from_christoffels(target, y, eps=1e-5):
    g = target.christoffels_at(y)
    dg = christoffel_fd(target, y, eps)
    # R^d_abc = d_a G^d_bc - d_b G^d_ac + G^d_ae G^e_bc - G^d_be G^e_ac
    return (np.einsum("adbc->dabc", dg) - np.einsum("bdac->dabc", dg)
            + np.einsum("dae,ebc->dabc", g, g) - np.einsum("dbe,eac->dabc", g, g))


def moebius_exp(y, v, t):
    """Upper half plane geodesic from an isometry of the vertical one through i."""
    a, b = y
    speed = math.hypot(*v)
    s = speed * t / b
    alpha = math.atan2(v[1], v[0])
    phi = 0.5 * (alpha - math.pi / 2)
    z = 1j * math.exp(s)
    w = (math.cos(phi) * z + math.sin(phi)) / (-math.sin(phi) * z + math.cos(phi))
    w = a + b * w
    return np.array([w.real, w.imag])


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_christoffels_match_koszul_formula_second_order(dim):
    target = TargetManifold.hyperbolic(dim, curvature=1.7)
    rng = np.random.default_rng(dim)
    y = np.append(rng.uniform(-1, 1, dim - 1), 0.8)
    exact = target.christoffels_at(y)
    errs = [np.max(np.abs(koszul(target, y, eps) - exact)) for eps in (1e-2, 5e-3, 2.5e-3)]
    assert errs[0] < 1e-3
    # halving the step divides the error by about four
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.5 < coarse / fine < 4.5


def test_christoffels_vanish_on_flat_targets():
    for target in (TargetManifold.euclidean(3), TargetManifold.flat_torus(2)):
        y = np.zeros((5, target.dim))
        assert np.all(target.christoffels_at(y) == 0)
        assert np.all(target.curvature_at(y) == 0)


@pytest.mark.parametrize("dim", [2, 3])
def test_riemann_tensor_matches_christoffel_derivatives(dim):
    target = TargetManifold.hyperbolic(dim, curvature=0.6)
    y = np.append(np.linspace(-0.3, 0.4, dim - 1), 1.3)
    assert np.allclose(riemann_from_christoffels(target, y), target.curvature_at(y), atol=1e-8)


@given(st.integers(2, 4), kappas, st.integers(0, 10_000))
def test_sectional_curvature_is_minus_kappa(dim, kappa, seed):
    target = TargetManifold.hyperbolic(dim, curvature=kappa)
    rng = np.random.default_rng(seed)
    y = np.append(rng.uniform(-2, 2, dim - 1), rng.uniform(0.1, 3))
    s, w = rng.standard_normal((2, dim))
    assert abs(target.sectional(y, s, w) + kappa) <= 1e-8 * kappa


def test_riemann_apply_agrees_with_tensor():
    target = TargetManifold.hyperbolic(3, curvature=2.0)
    rng = np.random.default_rng(4)
    y = np.array([0.2, -0.1, 0.7])
    s, w = rng.standard_normal((2, 3))
    full = np.einsum("dabc,a,b,c->d", target.curvature_at(y), s, w, w)
    assert np.allclose(full, target.riemann_apply(y, s, w), atol=1e-12)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("case", range(4))
def test_closed_form_geodesic_matches_ode_on_0_2(kappa, case):
    target = TargetManifold.hyperbolic(2, curvature=kappa, y_min=1e-12)
    rng = np.random.default_rng(case)
    y = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 2.0)])
    v = rng.standard_normal(2)
    for t in (0.25, 1.0, 2.0):
        ode, _ = target.integrate_geodesic(y, v, t, steps=2000)
        assert np.max(np.abs(target.exp_map(y, v, t) - ode)) <= 1e-8


@given(coords, heights, st.floats(-2, 2), st.floats(-2, 2), st.floats(0.0, 2.0))
def test_exp_map_matches_moebius_oracle(a, b, vx, vy, t):
    target = TargetManifold.hyperbolic(2, y_min=1e-300)
    v = np.array([vx, vy])
    if math.hypot(vx, vy) * t / b > 8:
        return  # endpoint far out in the chart; rounding of the oracle dominates
    got = target.exp_map(np.array([a, b]), v, t)
    want = moebius_exp((a, b), v, t)
    assert np.allclose(got, want, rtol=1e-10, atol=1e-12 * (1 + abs(a)))


def test_exp_map_known_point():
    target = TargetManifold.hyperbolic(2)
    got = target.exp_map(np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    assert np.allclose(got, [math.tanh(1.0), 1.0 / math.cosh(1.0)], atol=1e-15)


def test_exp_map_tiny_step_keeps_relative_precision():
    target = TargetManifold.hyperbolic(2)
    y = np.array([0.3, 1.0])
    v = np.array([1.0, 0.5])
    disp = target.exp_map(y, v, 1e-12) - y
    assert np.allclose(disp, 1e-12 * v, rtol=1e-6)


@given(coords, heights, coords, heights, kappas)
def test_distance_matches_arccosh(px, py, qx, qy, kappa):
    target = TargetManifold.hyperbolic(2, curvature=kappa)
    p, q = np.array([px, py]), np.array([qx, qy])
    cosh = 1 + ((px - qx) ** 2 + (py - qy) ** 2) / (2 * py * qy)
    want = math.acosh(cosh) / math.sqrt(kappa)
    assert target.distance(p, q) == pytest.approx(want, rel=1e-9, abs=1e-12)


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_log_inverts_exp(dim, seed):
    target = TargetManifold.hyperbolic(dim, y_min=1e-300)
    rng = np.random.default_rng(seed)
    p = np.append(rng.uniform(-1, 1, dim - 1), rng.uniform(0.3, 2))
    q = np.append(rng.uniform(-1, 1, dim - 1), rng.uniform(0.3, 2))
    v = target.log_map(p, q)
    assert np.allclose(target.exp_map(p, v), q, rtol=1e-10, atol=1e-10)
    # |log_p q| in the metric at p is the distance
    assert target.norm(p, v) == pytest.approx(target.distance(p, q), rel=1e-10)


def test_log_map_coincident_points_is_zero():
    target = TargetManifold.hyperbolic(2)
    p = np.array([[0.1, 0.4], [2.0, 3.0]])
    assert np.all(target.log_map(p, p) == 0)


@given(coords, heights, coords, heights)
def test_log_map_against_moebius_oracle(px, py, qx, qy):
    target = TargetManifold.hyperbolic(2)
    p, q = np.array([px, py]), np.array([qx, qy])
    v = target.log_map(p, q)
    if math.hypot(*v) / py > 8:
        return
    assert np.allclose(moebius_exp((px, py), v, 1.0), q, rtol=1e-9, atol=1e-9)


@given(coords, heights, coords, heights, st.floats(-2, 2), st.floats(-2, 2))
def test_transport_is_isometry_and_carries_geodesic_tangent(px, py, qx, qy, wx, wy):
    target = TargetManifold.hyperbolic(2)
    p, q, w = np.array([px, py]), np.array([qx, qy]), np.array([wx, wy])
    moved = target.transport(p, q, w)
    assert target.norm(p, moved) == pytest.approx(target.norm(q, w), rel=1e-9, abs=1e-12)
    if target.distance(p, q) > 1e-6:
        tangent_q = -target.log_map(q, p)
        assert np.allclose(target.transport(p, q, tangent_q), target.log_map(p, q), rtol=1e-8, atol=1e-10)


def half_dist_sq(target, x):
    n = target.dim
    return 0.5 * target.distance(x[:n], x[n:]) ** 2


def test_edge_hessian_matches_covariant_finite_differences():
    target = TargetManifold.hyperbolic(2, curvature=1.3)
    p, q = np.array([0.1, 0.9]), np.array([0.8, 1.6])
    x0 = np.concatenate([p, q])
    eps = 1e-4
    m = len(x0)
    grad = np.zeros(m)
    hess = np.zeros((m, m))
    for i in range(m):
        ei = np.eye(m)[i] * eps
        grad[i] = (half_dist_sq(target, x0 + ei) - half_dist_sq(target, x0 - ei)) / (2 * eps)
        for j in range(m):
            ej = np.eye(m)[j] * eps
            hess[i, j] = (half_dist_sq(target, x0 + ei + ej) - half_dist_sq(target, x0 + ei - ej)
                          - half_dist_sq(target, x0 - ei + ej) + half_dist_sq(target, x0 - ei - ej)) / (4 * eps**2)
    # covariant Hessian: subtract Christoffel terms in the diagonal blocks
    hess[:2, :2] -= np.einsum("cab,c->ab", target.christoffels_at(p), grad[:2])
    hess[2:, 2:] -= np.einsum("cab,c->ab", target.christoffels_at(q), grad[2:])
    hpp, hpq, hqq = target.edge_hessian(p, q)
    assert np.allclose(hpp, hess[:2, :2], atol=1e-5)
    assert np.allclose(hpq, hess[:2, 2:], atol=1e-5)
    assert np.allclose(hqq, hess[2:, 2:], atol=1e-5)


def test_edge_hessian_flat_and_coincident():
    flat = TargetManifold.euclidean(2)
    hpp, hpq, hqq = flat.edge_hessian(np.zeros(2), np.ones(2))
    assert np.array_equal(hpp, np.eye(2)) and np.array_equal(hpq, -np.eye(2))
    hyp = TargetManifold.hyperbolic(2)
    p = np.array([0.0, 2.0])
    hpp, hpq, hqq = hyp.edge_hessian(p, p)
    c = hyp.conformal_factor(p)
    assert np.allclose(hpp, c * np.eye(2)) and np.allclose(hpq, -c * np.eye(2))


def test_chart_guard_and_validation():
    target = TargetManifold.hyperbolic(2, y_min=0.5)
    with pytest.raises(ChartViolation):
        target.check(np.array([0.0, 0.4]))
    with pytest.raises(ChartViolation):
        target.exp_map(np.array([0.0, 1.0]), np.array([0.0, -10.0]))
    with pytest.raises(ChartViolation):
        target.check(np.zeros(3))
    with pytest.raises(ValueError):
        TargetManifold("sphere", 2)
    with pytest.raises(ValueError):
        TargetManifold.hyperbolic(1)
    with pytest.raises(ValueError):
        TargetManifold.hyperbolic(2, curvature=-1.0)
    with pytest.raises(ValueError):
        TargetManifold.flat_torus(2, periods=(1.0,))


@pytest.mark.parametrize("target", [TargetManifold.euclidean(3), TargetManifold.hyperbolic(3, 2.5, 1e-4),
                                    TargetManifold.flat_torus(2, (1.0, 2.0))])
def test_target_dict_round_trip(target):
    assert TargetManifold.from_dict(target.to_dict()) == target


def test_flat_geodesics_are_lines():
    torus = TargetManifold.flat_torus(2)
    y, v = np.array([0.5, 6.0]), np.array([1.0, -2.0])
    assert np.allclose(torus.exp_map(y, v, 2.0), y + 2 * v)
    assert np.allclose(torus.log_map(y, y + v), v)
    assert torus.distance(y, y + v) == pytest.approx(math.sqrt(5))
