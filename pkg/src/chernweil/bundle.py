"""Vector bundles over chart covers: frames, connections, metrics and bundle maps.

Conventions. A bundle is trivialized over every chart by a local frame
``e_i``. On an overlap the frames are related by ``e_j = e_i g_ij``, so that
component vectors obey ``v_i = g_ij v_j``. A connection is ``d + omega_i`` in
chart ``i`` and the frames force

    omega_j = g_ij^{-1} omega_i g_ij + g_ij^{-1} d g_ij.

Transition functions ``g_ij`` are callables of chart-``i`` coordinates. They are
sampled wherever a grid needs them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .geom import (
    Chart,
    ManifoldCover,
    MatrixForm,
    callable_jacobian,
    exterior_derivative,
    interpolate,
    matrix_wedge,
    pullback,
)

__all__ = [
    "BundleError",
    "BundleData",
    "ConnectionData",
    "FiberMetric",
    "BundleMapData",
    "curvature",
    "adjoint",
    "direct_sum",
    "pullback_bundle",
    "image_complement_connection",
    "kernel_connection",
    "gauge_transform",
    "connection_one_form",
]

FD_STEP = 1e-6


class BundleError(ValueError):
    """Violated bundle, connection or bundle-map invariant."""


def _eye_field(shape, r) -> np.ndarray:
    return np.broadcast_to(np.eye(r, dtype=complex), tuple(shape) + (r, r))


def _matrix_callable_derivative(fn, pts, step=FD_STEP) -> np.ndarray:
    """Partial derivatives of a matrix-valued callable, shape ``(dim, *P, r, c)``."""
    out = []
    for b in range(pts.shape[0]):
        e = np.zeros((pts.shape[0],) + (1,) * (pts.ndim - 1))
        e[b] = step
        out.append((np.asarray(fn(pts + e)) - np.asarray(fn(pts - e))) / (2.0 * step))
    return np.stack(out)


@dataclass(frozen=True, eq=False)
class BundleData:
    """Rank ``r`` bundle described by transition callables on a cover."""

    rank: int
    base: ManifoldCover
    transitions: Mapping[tuple[str, str], Callable[[np.ndarray], np.ndarray]]
    field: str = "complex"
    name: str = ""

    def __post_init__(self):
        if self.rank < 0:
            raise BundleError("negative rank")
        if self.field not in ("complex", "real"):
            raise BundleError("field must be 'complex' or 'real'")
        for key in self.base.transitions:
            if key not in self.transitions:
                raise BundleError(f"missing bundle transition for overlap {key}")

    @classmethod
    def trivial(cls, base: ManifoldCover, rank: int, name: str = "trivial") -> "BundleData":
        def ident(x):
            return _eye_field(np.shape(x)[1:], rank).copy()

        return cls(rank, base, {key: ident for key in base.transitions}, name=name)

    def transition(self, i: str, j: str, pts: np.ndarray) -> np.ndarray:
        if i == j:
            return _eye_field(np.shape(pts)[1:], self.rank).copy()
        return np.asarray(self.transitions[i, j](pts), dtype=complex)

    def check_cocycle(self, tol: float = 1e-8) -> float:
        """Worst cocycle defect ``|g_ij g_jk - g_ik|`` over sampled overlaps."""
        worst = 0.0
        names = self.base.names
        for i, j in itertools.permutations(names, 2):
            if (i, j) not in self.transitions or (j, i) not in self.transitions:
                continue
            img, ok = self.base.transition_points(i, j)
            if not np.any(ok):
                continue
            x = self.base.chart(i).points()[:, ok]
            prod = self.transition(i, j, x) @ self.transition(j, i, img[:, ok])
            worst = max(worst, float(np.max(np.abs(prod - np.eye(self.rank)))) if prod.size else 0.0)
        for i, j, k in itertools.permutations(names, 3):
            if not all(p in self.transitions for p in ((i, j), (j, k), (i, k))):
                continue
            img, ok = self.base.transition_points(i, j)
            img2, ok2 = self.base.transition_points(i, k)
            sel = ok & ok2
            if not np.any(sel):
                continue
            x = self.base.chart(i).points()[:, sel]
            lhs = self.transition(i, j, x) @ self.transition(j, k, img[:, sel])
            worst = max(worst, float(np.max(np.abs(lhs - self.transition(i, k, x)))))
        if worst > tol:
            raise BundleError(f"cocycle condition violated by {worst:.3e}")
        return worst


def connection_one_form(chart: Chart, fn: Callable[[np.ndarray], np.ndarray]) -> MatrixForm:
    """Sample a connection callable ``fn(pts) -> (dim, *P, r, r)`` on a chart grid."""
    vals = np.asarray(fn(chart.points()), dtype=complex)
    return MatrixForm(chart, 1, vals)


def _contract_one_form(vals: np.ndarray, jac: np.ndarray) -> np.ndarray:
    """Pull one-form components ``vals (src, *P, r, c)`` back by ``jac (src, tgt, *P)``."""
    return np.einsum("a...rc,ab...->b...rc", vals, jac)


@dataclass(frozen=True, eq=False)
class ConnectionData:
    """Local connection matrices ``omega[name]`` (degree-1 matrix forms).

    ``omega_fn`` optionally keeps analytic callables of the chart coordinates;
    when present they are used for overlap checks and for pullbacks, so no
    interpolation error enters those steps.
    """

    bundle: BundleData
    omega: Mapping[str, MatrixForm]
    omega_fn: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None
    check: bool = True
    tol: float | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for chart in self.bundle.base.charts:
            if chart.name not in self.omega:
                raise BundleError(f"no connection matrix on chart {chart.name!r}")
            w = self.omega[chart.name]
            if w.chart != chart:
                raise BundleError(f"connection on {chart.name!r} sampled on another grid")
            if w.degree != 1 or w.rows != self.bundle.rank or w.cols != self.bundle.rank:
                raise BundleError("connection matrices must be rank x rank one-forms")
        if self.check and self.bundle.rank > 0:
            self.check_compatibility(self.tol)

    @classmethod
    def from_callables(cls, bundle: BundleData, fns: Mapping[str, Callable], check: bool = True, tol=None) -> "ConnectionData":
        omega = {c.name: connection_one_form(c, fns[c.name]) for c in bundle.base.charts}
        return cls(bundle, omega, dict(fns), check=check, tol=tol)

    @classmethod
    def trivial(cls, bundle: BundleData) -> "ConnectionData":
        r = bundle.rank
        fns = {c.name: (lambda x, _d=c.dim: np.zeros((_d,) + np.shape(x)[1:] + (r, r), dtype=complex)) for c in bundle.base.charts}
        return cls.from_callables(bundle, fns)

    def omega_values(self, name: str, pts: np.ndarray) -> np.ndarray:
        """Connection components at arbitrary chart points, shape ``(dim, *P, r, r)``."""
        if self.omega_fn is not None and name in self.omega_fn:
            return np.asarray(self.omega_fn[name](pts), dtype=complex)
        w = self.omega[name]
        return interpolate(w.coeffs, w.chart, pts)

    def check_compatibility(self, tol: float | None = None, margin_cells: float = 2.0) -> float:
        """Worst violation of the gauge rule on sampled overlaps."""
        worst = 0.0
        scale = 1.0
        base = self.bundle.base
        for (i, j) in self.bundle.transitions:
            if (j, i) not in base.transitions:
                continue
            cj = base.chart(j)
            ci = base.chart(i)
            img, ok = base.transition_points(j, i)
            ok &= ci.contains(img, margin=margin_cells * max(ci.spacing))
            ok &= cj.contains(cj.points(), margin=margin_cells * max(cj.spacing))
            if not np.any(ok):
                continue
            y = cj.points()[:, ok]
            x = img[:, ok]
            to_i = base.transitions[j, i]
            jac = callable_jacobian(to_i, y)
            w_i = _contract_one_form(self.omega_values(i, x), jac)

            def g_of_y(yy):
                return self.bundle.transition(i, j, to_i(yy))

            g = g_of_y(y)
            ginv = np.linalg.inv(g)
            dg = _matrix_callable_derivative(g_of_y, y)
            expected = ginv @ w_i @ g + ginv @ dg
            actual = self.omega_values(j, y)
            scale = max(scale, float(np.max(np.abs(actual))))
            worst = max(worst, float(np.max(np.abs(expected - actual))))
        if tol is None:
            tol = 1e-6 * scale if self.omega_fn is not None else 1e-5 * scale
        if worst > tol:
            raise BundleError(f"connection incompatible with transitions (defect {worst:.3e})")
        return worst

    def curvature(self) -> dict[str, MatrixForm]:
        if "curvature" not in self._cache:
            self._cache["curvature"] = {
                name: exterior_derivative(w) + matrix_wedge(w, w) for name, w in self.omega.items()
            }
        return self._cache["curvature"]

    def with_omega(self, omega: Mapping[str, MatrixForm], omega_fn=None, check: bool = True) -> "ConnectionData":
        return ConnectionData(self.bundle, omega, omega_fn, check=check, tol=self.tol)


def curvature(D: ConnectionData) -> dict[str, MatrixForm]:
    """Curvature ``d omega + omega ^ omega`` on every chart."""
    return D.curvature()


@dataclass(frozen=True, eq=False)
class FiberMetric:
    """Hermitian positive-definite fiber metric in each chart frame."""

    bundle: BundleData
    h: Mapping[str, np.ndarray]

    def __post_init__(self):
        r = self.bundle.rank
        for chart in self.bundle.base.charts:
            m = np.asarray(self.h[chart.name], dtype=complex)
            if m.shape != chart.shape + (r, r):
                raise BundleError(f"metric on {chart.name!r} has shape {m.shape}")
            if not np.array_equal(m, np.conj(np.swapaxes(m, -1, -2))):
                raise BundleError(f"metric on {chart.name!r} is not Hermitian")
            if r and np.min(np.linalg.eigvalsh(m)) <= 1e-10:
                raise BundleError(f"metric on {chart.name!r} is not positive definite")

    @classmethod
    def identity(cls, bundle: BundleData) -> "FiberMetric":
        return cls(bundle, {c.name: _eye_field(c.shape, bundle.rank).copy() for c in bundle.base.charts})

    @classmethod
    def from_callables(cls, bundle: BundleData, fns: Mapping[str, Callable]) -> "FiberMetric":
        h = {}
        for c in bundle.base.charts:
            m = np.asarray(fns[c.name](c.points()), dtype=complex)
            h[c.name] = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
        return cls(bundle, h)

    def is_identity(self) -> bool:
        return all(np.array_equal(m, _eye_field(m.shape[:-2], self.bundle.rank)) for m in self.h.values())


@dataclass(frozen=True, eq=False)
class BundleMapData:
    """Fiberwise linear map ``A[name]`` of shape ``(*grid, rank F, rank E)``.

    ``singular_points`` lists ``(chart, coordinates)`` where the map may drop
    rank. Everywhere else its smallest singular value must stay above
    ``injectivity_floor`` (checked on nodes at least ``exclusion_cells`` grid
    cells away from every declared point).
    """

    source: BundleData
    target: BundleData
    A: Mapping[str, np.ndarray]
    singular_points: tuple[tuple[str, tuple[float, ...]], ...] = ()
    injectivity_floor: float = 1e-6
    exclusion_cells: float = 3.0
    A_fn: Mapping[str, Callable[[np.ndarray], np.ndarray]] | None = None
    check: bool = True
    tol: float = 1e-8

    def __post_init__(self):
        rF, rE = self.target.rank, self.source.rank
        if self.source.base is not self.target.base:
            raise BundleError("source and target bundles live on different covers")
        pts = tuple((str(c), tuple(float(v) for v in p)) for c, p in self.singular_points)
        object.__setattr__(self, "singular_points", pts)
        for chart in self.base.charts:
            a = np.asarray(self.A[chart.name])
            if a.shape != chart.shape + (rF, rE):
                raise BundleError(f"bundle map on {chart.name!r} has shape {a.shape}")
        if self.check:
            self.check_rank()
            self.check_intertwining()

    @property
    def base(self) -> ManifoldCover:
        return self.source.base

    @classmethod
    def from_callables(cls, source, target, fns, singular_points=(), **kw) -> "BundleMapData":
        A = {c.name: np.asarray(fns[c.name](c.points()), dtype=complex) for c in source.base.charts}
        return cls(source, target, A, singular_points, A_fn=dict(fns), **kw)

    def values(self, name: str, pts: np.ndarray) -> np.ndarray:
        if self.A_fn is not None and name in self.A_fn:
            return np.asarray(self.A_fn[name](pts), dtype=complex)
        chart = self.base.chart(name)
        return interpolate(np.asarray(self.A[name])[None], chart, pts)[0]

    def points_in_chart(self, name: str) -> list[np.ndarray]:
        """Declared singular points expressed in the coordinates of chart ``name``."""
        chart = self.base.chart(name)
        out = []
        for c, p in self.singular_points:
            p = np.asarray(p, dtype=float)
            if c == name:
                out.append(p)
            elif (c, name) in self.base.transitions:
                with np.errstate(divide="ignore", invalid="ignore"):
                    q = np.asarray(self.base.transitions[c, name](p.reshape(-1, 1)), dtype=float)[:, 0]
                if np.all(np.isfinite(q)) and np.all(chart.contains(q.reshape(-1, 1))):
                    out.append(q)
        return out

    def singular_mask(self, name: str, radius: float | None = None, cells: float | None = None) -> np.ndarray:
        """Nodes of chart ``name`` within ``radius`` (or ``cells`` grid cells) of a singular point."""
        chart = self.base.chart(name)
        if radius is None:
            radius = (self.exclusion_cells if cells is None else cells) * max(chart.spacing)
        mask = np.zeros(chart.shape, dtype=bool)
        for p in self.points_in_chart(name):
            mask |= chart.distance_mask(p, radius)
        return mask

    def check_rank(self) -> float:
        worst = np.inf
        for chart in self.base.charts:
            a = np.asarray(self.A[chart.name])
            if min(a.shape[-2:]) == 0:
                continue
            sv = np.linalg.svd(a, compute_uv=False)[..., -1]
            sv = np.where(self.singular_mask(chart.name), np.inf, sv)
            k = np.unravel_index(np.argmin(sv), sv.shape)
            if sv[k] < self.injectivity_floor:
                node = tuple(float(ax[i]) for ax, i in zip(chart.axes(), k))
                raise BundleError(
                    f"bundle map loses rank at undeclared node {node} of chart {chart.name!r} "
                    f"(smallest singular value {sv[k]:.3e})"
                )
            worst = min(worst, float(sv[k]))
        return worst

    def check_intertwining(self, tol: float | None = None, margin_cells: float = 2.0) -> float:
        """Worst defect of ``A_j = gF_ij^{-1} A_i gE_ij`` on sampled overlaps."""
        tol = self.tol if tol is None else tol
        worst = 0.0
        scale = 1.0
        for (i, j) in self.base.transitions:
            ci, cj = self.base.chart(i), self.base.chart(j)
            img, ok = self.base.transition_points(j, i)
            ok &= ci.contains(img, margin=margin_cells * max(ci.spacing))
            if not np.any(ok):
                continue
            y = cj.points()[:, ok]
            x = img[:, ok]
            a_i = self.values(i, x)
            gF = self.target.transition(i, j, x)
            gE = self.source.transition(i, j, x)
            expected = np.linalg.solve(gF, a_i @ gE)
            actual = self.values(j, y)
            scale = max(scale, float(np.max(np.abs(actual))))
            worst = max(worst, float(np.max(np.abs(expected - actual))))
        if worst > tol * scale:
            raise BundleError(f"bundle map does not intertwine transitions (defect {worst:.3e})")
        return worst

    def with_fields(self, A, A_fn=None, check: bool = False) -> "BundleMapData":
        return BundleMapData(
            self.source, self.target, A, self.singular_points, self.injectivity_floor,
            self.exclusion_cells, A_fn, check, self.tol,
        )


def adjoint(alpha: BundleMapData, hE: FiberMetric, hF: FiberMetric) -> BundleMapData:
    """Metric adjoint ``hE^{-1} A^H hF``, a map from the target back to the source."""
    out = {}
    for chart in alpha.base.charts:
        a = np.asarray(alpha.A[chart.name])
        he = hE.h[chart.name]
        hf = hF.h[chart.name]
        try:
            out[chart.name] = np.linalg.solve(he, np.conj(np.swapaxes(a, -1, -2)) @ hf)
        except np.linalg.LinAlgError as exc:
            raise BundleError(f"singular source metric on {chart.name!r}") from exc
    return BundleMapData(
        alpha.target, alpha.source, out, alpha.singular_points, alpha.injectivity_floor,
        alpha.exclusion_cells, None, False, alpha.tol,
    )


def _block_diag(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ra, ca = a.shape[-2:]
    rb, cb = b.shape[-2:]
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = np.zeros(lead + (ra + rb, ca + cb), dtype=complex)
    out[..., :ra, :ca] = a
    out[..., ra:, ca:] = b
    return out


def direct_sum(D1: ConnectionData, D2: ConnectionData) -> ConnectionData:
    """Block-diagonal connection on the direct sum of two bundles."""
    B1, B2 = D1.bundle, D2.bundle
    if B1.base is not B2.base:
        raise BundleError("direct sum of bundles over different covers")
    if B2.rank == 0:
        return D1
    if B1.rank == 0:
        return D2
    trans = {
        key: (lambda x, _k=key: _block_diag(B1.transition(*_k, x), B2.transition(*_k, x)))
        for key in B1.base.transitions
    }
    bundle = BundleData(B1.rank + B2.rank, B1.base, trans, name=f"{B1.name}+{B2.name}")
    omega = {}
    for chart in B1.base.charts:
        w1, w2 = D1.omega[chart.name], D2.omega[chart.name]
        omega[chart.name] = MatrixForm(chart, 1, _block_diag(w1.coeffs, w2.coeffs))
    fns = None
    if D1.omega_fn is not None and D2.omega_fn is not None:
        fns = {
            c.name: (lambda x, _n=c.name: _block_diag(D1.omega_fn[_n](x), D2.omega_fn[_n](x)))
            for c in B1.base.charts
        }
    return ConnectionData(bundle, omega, fns, check=False)


def gauge_transform(D: ConnectionData, gauge: Mapping[str, Callable[[np.ndarray], np.ndarray]]) -> ConnectionData:
    """Re-express ``D`` in new frames ``e'_i = e_i u_i`` given callables ``u_i``.

    New transitions are ``u_i^{-1} g_ij u_j`` and new connection matrices
    ``u^{-1} omega u + u^{-1} du``.
    """
    B = D.bundle
    base = B.base

    def new_trans(i, j):
        def g(x):
            y = base.transitions[i, j](x)
            return np.linalg.solve(gauge[i](x), B.transition(i, j, x) @ gauge[j](y))
        return g

    bundle = BundleData(B.rank, base, {k: new_trans(*k) for k in B.transitions}, B.field, B.name)

    def new_fn(name):
        def w(x):
            u = np.asarray(gauge[name](x), dtype=complex)
            uinv = np.linalg.inv(u)
            du = _matrix_callable_derivative(gauge[name], x)
            return uinv @ D.omega_values(name, x) @ u + uinv @ du
        return w

    fns = {c.name: new_fn(c.name) for c in base.charts}
    return ConnectionData.from_callables(bundle, fns, check=D.check)


def pullback_bundle(
    bundle: BundleData,
    connection: ConnectionData,
    maps: Mapping[str, tuple[str, Callable[[np.ndarray], np.ndarray]]],
    base: ManifoldCover,
) -> tuple[BundleData, ConnectionData]:
    """Pull a bundle with connection back along a map between covers.

    ``maps[name] = (source_chart, f)`` says that chart ``name`` of the new base
    is sent into ``source_chart`` by the callable ``f``. Transitions become
    ``g_{f(i) f(j)} o f_i``; connection matrices are pulled back analytically
    when the connection carries callables, otherwise through
    :func:`geom.pullback` on the sampled forms.
    """
    src_base = bundle.base

    def trans(i, j):
        si, fi = maps[i]
        sj, _ = maps[j]

        def g(x):
            return bundle.transition(si, sj, fi(x))
        return g

    new_bundle = BundleData(
        bundle.rank, base, {key: trans(*key) for key in base.transitions}, bundle.field,
        f"pullback of {bundle.name}",
    )
    if connection.omega_fn is not None:
        def fn(name):
            src, f = maps[name]

            def w(x):
                jac = callable_jacobian(f, x)
                return _contract_one_form(connection.omega_values(src, f(x)), jac)
            return w

        fns = {c.name: fn(c.name) for c in base.charts}
        return new_bundle, ConnectionData.from_callables(new_bundle, fns, check=connection.check)
    omega = {}
    for chart in base.charts:
        src, f = maps[chart.name]
        pts = chart.points()
        mapping = np.asarray(f(pts), dtype=float)
        if not np.all(src_base.chart(src).contains(mapping)):
            raise BundleError(f"image of chart {chart.name!r} escapes source chart {src!r}")
        omega[chart.name] = pullback(connection.omega[src], mapping, chart, jacobian=callable_jacobian(f, pts))
    return new_bundle, ConnectionData(new_bundle, omega, None, check=connection.check)


# ---------------------------------------------------------------------------
# subbundle connections

def _hermitian(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _compressed_connection(
    Q: Mapping[str, np.ndarray],
    D: ConnectionData,
    h: FiberMetric,
    m: int,
    masks: Mapping[str, np.ndarray],
    seed: int = 0,
    name: str = "complement",
) -> ConnectionData:
    """Connection ``Q D Q`` on the rank-``m`` subbundle ``im Q``.

    Frames are built per chart by Gram-Schmidt (in the metric ``h``) applied to
    ``Q`` times coordinate sections. Every choice of coordinate sections is
    scored by its worst conditioning on the unmasked chart and the best one
    is kept (ties go to the first in an order shifted by ``seed``). A choice
    that merely stays nonzero on the grid can still wind around a zero
    between nodes, which would break smoothness, so no early exit is taken.
    """
    base = D.bundle.base
    r = D.bundle.rank
    frames = {}
    omega = {}
    for chart in base.charts:
        q = Q[chart.name]
        hh = h.h[chart.name]
        keep = ~masks[chart.name]
        order = list(range(r))
        order = order[seed % r:] + order[: seed % r] if r else order
        best = None
        for combo in itertools.combinations(order, m):
            U = np.zeros(chart.shape + (r, m), dtype=complex)
            quality = np.full(chart.shape, np.inf)
            for col, k in enumerate(combo):
                v = q[..., :, k].copy()
                for prev in range(col):
                    u = U[..., :, prev]
                    coef = np.einsum("...i,...ij,...j->...", np.conj(u), hh, v)
                    v = v - coef[..., None] * u
                nrm = np.sqrt(np.real(np.einsum("...i,...ij,...j->...", np.conj(v), hh, v)))
                quality = np.minimum(quality, nrm)
                U[..., :, col] = v / np.where(nrm > 0, nrm, 1.0)[..., None]
            score = float(np.min(np.where(keep, quality, np.inf)))
            if best is None or score > best[0]:
                best = (score, U)
        if best is None or best[0] < 1e-6:
            raise BundleError(f"no well-conditioned frame for the {name} on chart {chart.name!r}")
        U = best[1]
        frames[chart.name] = U
        U0 = MatrixForm(chart, 0, U[None])
        dU = exterior_derivative(U0)
        wU = matrix_wedge(D.omega[chart.name], U0)
        omega[chart.name] = (dU + wU).left(_hermitian(U) @ hh)

    def trans(i, j):
        def g(x):
            ci, cj = base.chart(i), base.chart(j)
            y = base.transitions[i, j](x)
            Ui = interpolate(frames[i][None], ci, x)[0]
            Uj = interpolate(frames[j][None], cj, y)[0]
            hi = interpolate(h.h[i][None], ci, x)[0]
            return _hermitian(Ui) @ hi @ D.bundle.transition(i, j, x) @ Uj
        return g

    bundle = BundleData(m, base, {k: trans(*k) for k in base.transitions}, name=name)
    conn = ConnectionData(bundle, omega, None, check=False)
    conn._cache["frames"] = frames
    return conn


def image_complement_connection(
    alpha: BundleMapData,
    D_F: ConnectionData,
    hF: FiberMetric,
    seed: int = 0,
    mask_cells: float | None = None,
) -> ConnectionData:
    """Connection ``(1 - P) D_F (1 - P)`` on the orthogonal complement of ``im alpha``.

    ``P`` is the ``hF``-orthogonal projection onto the image. Only invariant
    polynomials of the result are meaningful; its frames are arbitrary.
    """
    rE, rF = alpha.source.rank, alpha.target.rank
    if rF <= rE:
        raise BundleError("image complement needs rank F > rank E")
    Q, masks = {}, {}
    for chart in alpha.base.charts:
        a = np.asarray(alpha.A[chart.name])
        hf = hF.h[chart.name]
        masks[chart.name] = alpha.singular_mask(chart.name, cells=mask_cells)
        gram = _hermitian(a) @ hf @ a
        sv = np.linalg.eigvalsh(gram)[..., 0]
        bad = (~masks[chart.name]) & (sv < alpha.injectivity_floor ** 2)
        if np.any(bad):
            raise BundleError(f"bundle map is not injective on chart {chart.name!r}")
        safe = np.where(masks[chart.name][..., None, None], np.eye(rE), gram)
        P = a @ np.linalg.solve(safe, _hermitian(a) @ hf)
        Q[chart.name] = np.eye(rF) - P
    return _compressed_connection(Q, D_F, hF, rF - rE, masks, seed, "image complement")


def kernel_connection(
    alpha: BundleMapData,
    D_E: ConnectionData,
    hE: FiberMetric,
    hF: FiberMetric | None = None,
    seed: int = 0,
    mask_cells: float | None = None,
) -> ConnectionData:
    """Connection ``(1 - Pi) D_E (1 - Pi)`` on ``ker alpha`` for a surjective map."""
    rE, rF = alpha.source.rank, alpha.target.rank
    if rF >= rE:
        raise BundleError("kernel bundle needs rank E > rank F")
    if hF is None:
        hF = FiberMetric.identity(alpha.target)
    Q, masks = {}, {}
    for chart in alpha.base.charts:
        a = np.asarray(alpha.A[chart.name])
        he = hE.h[chart.name]
        hf = hF.h[chart.name]
        masks[chart.name] = alpha.singular_mask(chart.name, cells=mask_cells)
        astar = np.linalg.solve(he, _hermitian(a) @ hf)
        gram = a @ astar
        safe = np.where(masks[chart.name][..., None, None], np.eye(rF), gram)
        Pi = astar @ np.linalg.solve(safe, a)
        Q[chart.name] = np.eye(rE) - Pi
    return _compressed_connection(Q, D_E, hE, rE - rF, masks, seed, "kernel")
