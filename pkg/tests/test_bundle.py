import numpy as np
import pytest

from chernweil.bundle import (
    BundleData,
    BundleError,
    BundleMapData,
    ConnectionData,
    FiberMetric,
    adjoint,
    direct_sum,
    gauge_transform,
    image_complement_connection,
    kernel_connection,
    pullback_bundle,
)
from chernweil.geom import stereographic_sphere_cover
from chernweil.scenarios import build_surjective_demo, chern_number, line_bundle, monopole_connection


@pytest.fixture(scope="module")
def cover():
    return stereographic_sphere_cover(2, 64)


def O(cover, k):
    F = line_bundle(cover, k)
    return F, ConnectionData.from_callables(F, {"N": monopole_connection(k), "S": monopole_connection(k)})


def test_cocycle_of_clutched_line_bundle(cover):
    assert line_bundle(cover, 3).check_cocycle() < 1e-10


def test_bad_cocycle_is_rejected(cover):
    sq = lambda x: np.asarray(x[0] + 1j * x[1], dtype=complex)[..., None, None] ** 2
    lin = lambda x: np.asarray(x[0] + 1j * x[1], dtype=complex)[..., None, None]
    with pytest.raises(BundleError):
        BundleData(1, cover, {("N", "S"): sq, ("S", "N"): lin}).check_cocycle()


def test_monopole_is_compatible(cover):
    _, D = O(cover, 3)
    assert D.check_compatibility() < 1e-8


def test_incompatible_connection_is_rejected(cover):
    F = line_bundle(cover, 3)
    with pytest.raises(BundleError):
        ConnectionData.from_callables(F, {"N": monopole_connection(2), "S": monopole_connection(2)})


@pytest.mark.parametrize("k", [1, 2, 3, -1])
def test_chern_number_of_line_bundles(cover, k):
    _, D = O(cover, k)
    assert abs(chern_number(D) - k) < 1e-3


def test_direct_sum_adds_chern_numbers(cover):
    _, D1 = O(cover, 1)
    _, D2 = O(cover, 2)
    assert abs(chern_number(direct_sum(D1, D2)) - 3) < 2e-3


def test_gauge_transform_keeps_chern_form_to_second_order():
    u = lambda x: np.exp(1j * np.sin(x[0]) * x[1])[..., None, None]
    errs = []
    for n in (64, 128):
        cov = stereographic_sphere_cover(2, n)
        _, D = O(cov, 2)
        D2 = gauge_transform(D, {"N": u, "S": u})
        # one-sided stencils on the box edge carry no partition weight
        interior = np.zeros(cov.charts[0].shape, dtype=bool)
        interior[2:-2, 2:-2] = True
        assert np.all(cov.weights("N")[~interior] == 0)
        errs.append(max((D.curvature()[m].trace() - D2.curvature()[m].trace()).max_norm(mask=~interior)
                        for m in ("N", "S")))
    assert errs[1] < 1e-4
    assert errs[0] / errs[1] > 3.5


def test_undeclared_zero_is_rejected():
    # rank is checked on grid nodes, so the zero is placed on a node of an odd grid
    cover = stereographic_sphere_cover(2, 65)
    E = BundleData.trivial(cover, 1)
    F, _ = O(cover, 1)
    fn = lambda x: (x[0] + 1j * x[1])[..., None, None].astype(complex)
    with pytest.raises(BundleError):
        BundleMapData.from_callables(E, F, {"N": fn, "S": lambda x: np.ones(x.shape[1:])[..., None, None]})


def test_map_must_intertwine_transitions(cover):
    E = BundleData.trivial(cover, 1)
    F, _ = O(cover, 1)
    fn = lambda x: (x[0] + 1j * x[1])[..., None, None].astype(complex)
    with pytest.raises(BundleError):
        # the south expression should be 1, not w
        BundleMapData.from_callables(E, F, {"N": fn, "S": fn}, [("N", (0.0, 0.0)), ("S", (0.0, 0.0))])


def test_adjoint_respects_metrics(cover):
    E = BundleData.trivial(cover, 2)
    F = BundleData.trivial(cover, 3)
    rng = np.random.default_rng(3)
    M = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    alpha = BundleMapData.from_callables(E, F, {n: (lambda x: np.broadcast_to(M, x.shape[1:] + (3, 2)).copy())
                                                for n in ("N", "S")})

    def metric(r, seed):
        B = np.random.default_rng(seed).normal(size=(r, r))
        H = B @ B.T + r * np.eye(r)
        return lambda x: np.broadcast_to(H.astype(complex), x.shape[1:] + (r, r)).copy()

    hE = FiberMetric.from_callables(E, {"N": metric(2, 1), "S": metric(2, 1)})
    hF = FiberMetric.from_callables(F, {"N": metric(3, 2), "S": metric(3, 2)})
    adj = adjoint(alpha, hE, hF)
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    w = rng.normal(size=3) + 1j * rng.normal(size=3)
    a = alpha.A["N"][0, 0]
    b = adj.A["N"][0, 0]
    lhs = np.conj(a @ v) @ hF.h["N"][0, 0] @ w
    rhs = np.conj(v) @ hE.h["N"][0, 0] @ (b @ w)
    assert abs(lhs - rhs) < 1e-10


def test_pullback_along_power_map_multiplies_degree(cover):
    T = line_bundle(cover, 2, sign=-1.0)
    D = ConnectionData.from_callables(T, {"N": monopole_connection(2), "S": monopole_connection(2)})

    def f(x):
        z = (x[0] + 1j * x[1]) ** 3
        return np.stack([z.real, z.imag])

    F, DF = pullback_bundle(T, D, {"N": ("N", f), "S": ("S", f)}, cover)
    assert F.check_cocycle() < 1e-8
    assert abs(chern_number(DF) - 6) < 2e-2


def test_image_complement_of_tautological_line():
    cover = stereographic_sphere_cover(2, 96)
    E, DE = O(cover, -1)
    F = BundleData.trivial(cover, 2)
    DF = ConnectionData.trivial(F)
    col = lambda a, b: np.stack([a, b], axis=-1)[..., :, None]

    def aN(x):
        z = x[0] + 1j * x[1]
        return col(np.ones_like(z), z)

    def aS(x):
        w = x[0] + 1j * x[1]
        return col(w, np.ones_like(w))

    alpha = BundleMapData.from_callables(E, F, {"N": aN, "S": aS})
    perp = image_complement_connection(alpha, DF, FiberMetric.identity(F))
    assert abs(chern_number(perp) - 1) < 2e-3


def test_kernel_of_everywhere_surjective_map_has_degree_minus_one():
    sc = build_surjective_demo("surjective", resolution=96)
    K = kernel_connection(sc.alpha, sc.D_E, sc.hE, sc.hF)
    assert abs(chern_number(K) + 1) < 2e-3
