import numpy as np
import pytest

from chernweil.bundle import BundleData, BundleError, BundleMapData, ConnectionData, FiberMetric
from chernweil.geom import Chart, single_chart_cover
from chernweil.invariant import by_name, evaluate
from chernweil.pushforward import (
    ApproximateOne,
    beta,
    beta_s,
    covariant_derivative,
    pullback_family,
    pushforward_family,
)
from chernweil.transgression import QuadratureSpec, transgress

PAULI = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]])]


@pytest.fixture(scope="module")
def cover():
    return single_chart_cover(Chart("U", ((-1.0, 1.0), (-1.0, 1.0)), 17))


def su2_connection(shift=0.0):
    """A smooth non-abelian connection on a planar chart."""
    def omega(x):
        f = [np.sin(x[1] + shift), np.cos(x[0]) * x[1]]
        g = [x[0] ** 2, np.exp(0.3 * x[1])]
        return np.stack([1j * (f[a][..., None, None] * PAULI[a] + g[a][..., None, None] * PAULI[2])
                         for a in range(2)])
    return omega


def const_map(E, F, M):
    M = np.asarray(M, dtype=complex)
    return BundleMapData.from_callables(E, F, {"U": lambda x: np.broadcast_to(M, np.shape(x)[1:] + M.shape).copy()})


def test_approximate_one_validation():
    ApproximateOne().validate()
    with pytest.raises(ValueError):
        ApproximateOne(chi=lambda t: 1.0 / (1.0 + t), dchi=lambda t: -1.0 / (1 + t) ** 2).validate()
    with pytest.raises(ValueError):
        ApproximateOne(chi=lambda t: 0.5 * t / (1.0 + t), dchi=lambda t: 0.5 / (1 + t) ** 2).validate()


def test_beta_of_invertible_and_scaled_identity(cover):
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 2)
    M = np.array([[2.0, 1.0], [0.5, 3.0 + 1j]])
    b = beta(const_map(E, F, M))["U"]
    assert np.max(np.abs(b - np.linalg.inv(M))) < 1e-12
    b2 = beta(const_map(E, F, 2 * np.eye(2)))["U"]
    assert np.max(np.abs(b2 - 0.5 * np.eye(2))) < 1e-15


def test_beta_is_least_squares_left_inverse(cover):
    rng = np.random.default_rng(3)
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 3)
    A = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    L = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    hf = L @ L.conj().T + 3 * np.eye(3)
    hf = 0.5 * (hf + hf.conj().T)
    hF = FiberMetric(F, {"U": np.broadcast_to(hf, cover.charts[0].shape + (3, 3)).copy()})
    alpha = const_map(E, F, A)
    b = beta(alpha, hF=hF)["U"][0, 0]
    assert np.max(np.abs(b @ A - np.eye(2))) < 1e-10
    P = A @ b
    assert np.max(np.abs(P @ P - P)) < 1e-10
    # self-adjoint with respect to hF
    assert np.max(np.abs(hf @ P - P.conj().T @ hf)) < 1e-10


def test_beta_masks_declared_points_and_rejects_undeclared(cover):
    E, F = BundleData.trivial(cover, 1), BundleData.trivial(cover, 1)
    z = lambda x: np.asarray(x[0] + 1j * x[1], dtype=complex)[..., None, None]
    alpha = BundleMapData.from_callables(E, F, {"U": z}, [("U", (0.0, 0.0))])
    b = beta(alpha)["U"]
    assert np.isnan(b[8, 8]).all()
    assert np.isfinite(b[0, 0]).all()
    with pytest.raises(BundleError):
        BundleMapData.from_callables(E, F, {"U": z})


def test_beta_s_limits(cover):
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 2)
    ident = const_map(E, F, np.eye(2))
    for s in (0.3, 1.0, 4.0):
        assert np.max(np.abs(beta_s(ident, s)["U"] - np.eye(2) / (1 + s**2))) < 1e-14
    M = np.array([[1.0, 0.4], [-0.2, 0.8]])
    alpha = const_map(E, F, M)
    assert np.max(np.abs(beta_s(alpha, 1e6)["U"])) <= 1e-6
    assert np.max(np.abs(beta_s(alpha, 1e-4)["U"] - beta(alpha)["U"])) <= 1e-6
    with pytest.raises(ValueError):
        beta_s(alpha, 0.0)


def _affine_setup(cover):
    """Injective 2 -> 3 map affine in the coordinates, so grid derivatives of it are exact."""
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 3)
    A0 = np.array([[1.0, 0.2j], [0.1, 1.0], [0.3, -0.2]])
    A1 = np.array([[0.2, 0.0], [0.1j, 0.3], [0.0, 0.1]])
    A2 = np.array([[0.0, 0.1], [0.2, -0.1], [0.25j, 0.0]])

    def a(x):
        return A0 + x[0][..., None, None] * A1 + x[1][..., None, None] * A2

    def omega_F(x):
        c = np.stack([np.sin(x[1]), x[0] * x[1], np.cos(x[0])])
        M = 1j * np.einsum("k...,kij->...ij", c, np.array([np.diag([1, 0, -1]), np.diag([0, 1, 1]),
                                                          np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])]))
        return np.stack([M, 0.5 * M])

    def omega_E(x):
        return su2_connection(0.2)(x)

    alpha = BundleMapData.from_callables(E, F, {"U": a})
    D_E = ConnectionData.from_callables(E, {"U": omega_E})
    D_F = ConnectionData.from_callables(F, {"U": omega_F})
    return E, F, a, omega_E, omega_F, alpha, D_E, D_F


def test_family_formula_matches_direct_application(cover):
    """omega_s v + dv equals alpha D_E(beta_s v) + D_F(v - alpha beta_s v), derivatives by central differences."""
    E, F, a, omega_E, omega_F, alpha, D_E, D_F = _affine_setup(cover)
    fam = pushforward_family(alpha, D_E, D_F)
    pts = cover.charts[0].points()
    rng = np.random.default_rng(11)
    V0, V1 = rng.normal(size=3) + 1j * rng.normal(size=3), rng.normal(size=3)

    def v(x):
        return V0 + x[0][..., None] * V1 + np.sin(x[1])[..., None] * V0.conj()

    def bs(x, s):
        # closed form of alpha^* g_s(alpha alpha^*) for chi(t) = t/(1+t): g_s(t) = 1/(s^2 + t)
        A = a(x)
        Ah = np.conj(np.swapaxes(A, -1, -2))
        return Ah @ np.linalg.inv(s**2 * np.eye(3) + A @ Ah)

    def deriv(fn, x, axis, h=1e-5):
        e = np.zeros((2,) + (1,) * (x.ndim - 1))
        e[axis] = h
        return (fn(x + e) - fn(x - e)) / (2 * h)

    for s in (0.2, 1.0, 3.0):
        w = fam.omega_at(s, "U").coeffs
        for axis in range(2):
            inner = lambda x: (bs(x, s) @ v(x)[..., None])[..., 0]
            part_E = (a(pts) @ (deriv(inner, pts, axis) + (omega_E(pts)[axis] @ inner(pts)[..., None])[..., 0])[..., None])[..., 0]
            rest = lambda x: v(x) - (a(x) @ inner(x)[..., None])[..., 0]
            part_F = deriv(rest, pts, axis) + (omega_F(pts)[axis] @ rest(pts)[..., None])[..., 0]
            want = part_E + part_F
            got = deriv(v, pts, axis) + (w[axis] @ v(pts)[..., None])[..., 0]
            assert np.max(np.abs(got - want)) < 1e-8


def test_family_derivative_matches_central_difference(cover):
    *_, alpha, D_E, D_F = _affine_setup(cover)
    fam = pushforward_family(alpha, D_E, D_F)
    for s in (0.1, 0.7, 2.5):
        h = 1e-5 * s
        fd = (fam.omega_at(s + h, "U") - fam.omega_at(s - h, "U")) * (0.5 / h)
        an = fam.omega_dot_at(s, "U")
        assert (fd - an).max_norm() <= 1e-6 * max(an.max_norm(), 1e-12)


def test_family_endpoints(cover):
    *_, alpha, D_E, D_F = _affine_setup(cover)
    fam = pushforward_family(alpha, D_E, D_F)
    wF = D_F.omega["U"]
    scale = max(wF.max_norm(), 1.0)
    assert (fam.omega_at(1e6, "U") - wF).max_norm() <= 1e-6 * scale
    phi = by_name("c1", 3)
    diff = evaluate(phi, fam.curvature_at(1e6, "U")) - evaluate(phi, D_F.curvature()["U"])
    assert diff.max_norm() <= 1e-6


def test_identity_map_gives_constant_family(cover):
    E = BundleData.trivial(cover, 2)
    D = ConnectionData.from_callables(E, {"U": su2_connection()})
    fam = pushforward_family(const_map(E, E, np.eye(2)), D, D)
    for s in (1e-3, 0.5, 10.0):
        assert (fam.omega_at(s, "U") - D.omega["U"]).max_norm() < 1e-14
        assert fam.omega_dot_at(s, "U").max_norm() < 1e-14


def test_equirank_small_s_is_conjugated_source_connection(cover):
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 2)
    M = np.array([[1.5, 0.3], [-0.4, 0.9 + 0.2j]])
    D_E = ConnectionData.from_callables(E, {"U": su2_connection()})
    D_F = ConnectionData.from_callables(F, {"U": su2_connection(1.0)})
    fam = pushforward_family(const_map(E, F, M), D_E, D_F)
    Om_s = fam.curvature_at(1e-4, "U")
    Om_E = D_E.curvature()["U"]
    conj = M @ Om_E.coeffs @ np.linalg.inv(M)
    assert np.max(np.abs(Om_s.coeffs - conj)) <= 1e-5
    phi = by_name("c1", 2)
    assert (evaluate(phi, Om_s) - evaluate(phi, Om_E)).max_norm() <= 1e-5


def test_pullback_family_is_gauge_image_for_unitary_maps(cover):
    """For a constant unitary U the pullback family at s is the pushforward family at 1/s, conjugated."""
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 2)
    th = 0.7
    U = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]) @ np.diag([1, np.exp(0.4j)])
    D_E = ConnectionData.from_callables(E, {"U": su2_connection()})
    D_F = ConnectionData.from_callables(F, {"U": su2_connection(1.0)})
    alpha = const_map(E, F, U)
    push = pushforward_family(alpha, D_E, D_F)
    pull = pullback_family(alpha, D_E, D_F)
    phi = by_name("c1", 2)
    for s in (0.25, 1.0, 3.0):
        a = evaluate(phi, push.curvature_at(s, "U"))
        b = evaluate(phi, pull.curvature_at(1.0 / s, "U"))
        assert (a - b).max_norm() < 1e-8
    q = QuadratureSpec(32)
    T_push = transgress(push, phi, q).forms["U"]
    T_pull = transgress(pull, phi, q).forms["U"]
    assert (T_push + T_pull).max_norm() < 1e-8 * max(1.0, T_push.max_norm())
    top = evaluate(phi, pull.curvature_at(1e6, "U"))
    assert (top - evaluate(phi, D_E.curvature()["U"])).max_norm() <= 1e-6


def test_projection_with_trivial_connections_has_zero_transgression(cover):
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 1)
    fam = pullback_family(const_map(E, F, [[1.0, 0.0]]), ConnectionData.trivial(E), ConnectionData.trivial(F))
    T = transgress(fam, by_name("c1", 2), QuadratureSpec(16))
    assert T.forms["U"].max_norm() == 0.0


def test_rank_preconditions(cover):
    E, F = BundleData.trivial(cover, 2), BundleData.trivial(cover, 1)
    alpha = const_map(E, F, [[1.0, 0.0]])
    with pytest.raises(BundleError):
        pushforward_family(alpha, ConnectionData.trivial(E), ConnectionData.trivial(F))
    G = BundleData.trivial(cover, 2)
    inj = const_map(F, G, [[1.0], [0.0]])
    with pytest.raises(BundleError):
        pullback_family(inj, ConnectionData.trivial(F), ConnectionData.trivial(G))


def test_covariant_derivative_of_parallel_map_vanishes(cover):
    E = BundleData.trivial(cover, 2)
    D = ConnectionData.from_callables(E, {"U": su2_connection()})
    na = covariant_derivative(const_map(E, E, 3.0 * np.eye(2)), D, D)["U"]
    assert na.max_norm() < 1e-14
