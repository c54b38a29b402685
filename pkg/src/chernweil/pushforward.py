"""Pushforward connections of bundle maps and their smoothings.

For a bundle map ``alpha: E -> F`` the family

    D_s v = alpha D_E (beta_s v) + D_F (v - alpha beta_s v),
    beta_s = alpha^* g_s(alpha alpha^*),   g_s(t) = chi(t / s^2) / t,

has, in the frame of ``F``, the connection matrix

    omega_s = omega_F - (nabla alpha) beta_s,
    nabla alpha = d alpha + omega_F alpha - alpha omega_E,

which is smooth on the whole base for every ``s > 0``. It equals ``D_F`` at
``s = infinity`` and the singular pushforward connection at ``s = 0``. The
surjective mirror lives on ``E`` and reads ``omega_s = omega_E + beta_s nabla alpha``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .bundle import (
    BundleData,
    BundleError,
    BundleMapData,
    ConnectionData,
    FiberMetric,
)
from .geom import MatrixForm, exterior_derivative, matrix_wedge

__all__ = [
    "ApproximateOne",
    "ConnectionFamily",
    "beta",
    "beta_s",
    "covariant_derivative",
    "pushforward_family",
    "pullback_family",
    "S_INFINITY",
]

S_INFINITY = 1e6
ZERO_EIGENVALUE = 1e-14


@dataclass(frozen=True)
class ApproximateOne:
    """Monotone ``chi: [0, inf] -> [0, 1]`` with ``chi(0) = 0`` and ``chi(inf) = 1``."""

    chi: Callable[[np.ndarray], np.ndarray] = lambda t: t / (1.0 + t)
    dchi: Callable[[np.ndarray], np.ndarray] = lambda t: 1.0 / (1.0 + t) ** 2
    name: str = "t/(1+t)"

    def validate(self, tol: float = 1e-9) -> None:
        if abs(float(self.chi(np.array(0.0)))) > tol:
            raise ValueError("approximate one must vanish at 0")
        if abs(float(self.chi(np.array(1e12))) - 1.0) > tol:
            raise ValueError("approximate one must tend to 1 at infinity")
        grid = np.logspace(-8, 8, 400)
        if np.any(self.dchi(grid) < 0):
            raise ValueError("approximate one must be non-decreasing")

    def g(self, t: np.ndarray, s: float) -> np.ndarray:
        """``chi(t/s^2)/t`` extended to ``t = 0`` by its limit ``chi'(0)/s^2``."""
        t = np.asarray(t, dtype=float)
        small = t <= ZERO_EIGENVALUE
        safe = np.where(small, 1.0, t)
        return np.where(small, self.dchi(np.zeros_like(t)) / s**2, self.chi(safe / s**2) / safe)

    def dg_ds(self, t: np.ndarray, s: float) -> np.ndarray:
        """``d/ds chi(t/s^2)/t = -2 chi'(t/s^2) / s^3``."""
        t = np.asarray(t, dtype=float)
        return -2.0 * self.dchi(t / s**2) / s**3


def _h(a):
    return np.conj(np.swapaxes(a, -1, -2))


@dataclass
class _Spectral:
    """Pointwise data for ``beta_s = L_side diag(g(lam)) R_side``."""

    left: np.ndarray   # (*grid, rE, m)
    right: np.ndarray  # (*grid, m, rF)
    lam: np.ndarray    # (*grid, m)

    def apply(self, weights: np.ndarray) -> np.ndarray:
        return (self.left * weights[..., None, :]) @ self.right


def _spectral_pieces(a: np.ndarray, he: np.ndarray, hf: np.ndarray) -> _Spectral:
    """Diagonalize ``alpha alpha^*`` in an ``hF``-orthonormal frame.

    With ``hF = L L^H`` the operator ``alpha alpha^*`` is similar to the
    Hermitian ``M = L^H a hE^{-1} a^H L = V diag(lam) V^H``, and
    ``alpha^* g(alpha alpha^*) = hE^{-1} a^H L V g(lam) V^H L^H``.
    """
    L = np.linalg.cholesky(hf)
    b = np.linalg.solve(he, _h(a))          # hE^{-1} a^H
    M = _h(L) @ a @ b @ L
    M = 0.5 * (M + _h(M))
    lam, V = np.linalg.eigh(M)
    lam = np.clip(lam, 0.0, None)
    return _Spectral(b @ L @ V, _h(V) @ _h(L), lam)


def _metrics(alpha: BundleMapData, hE, hF):
    if hE is None:
        hE = FiberMetric.identity(alpha.source)
    if hF is None:
        hF = FiberMetric.identity(alpha.target)
    return hE, hF


def beta(alpha: BundleMapData, hE: FiberMetric | None = None, hF: FiberMetric | None = None,
         mask_cells: float | None = None) -> dict[str, np.ndarray]:
    """Left inverse ``(alpha^* alpha)^{-1} alpha^*`` for injective maps.

    Nodes within the singular radius of a declared point are masked and
    returned as NaN. An undeclared rank drop raises :class:`BundleError`.
    """
    hE, hF = _metrics(alpha, hE, hF)
    out = {}
    for chart in alpha.base.charts:
        a = np.asarray(alpha.A[chart.name])
        he, hf = hE.h[chart.name], hF.h[chart.name]
        mask = alpha.singular_mask(chart.name, cells=mask_cells)
        astar = np.linalg.solve(he, _h(a) @ hf)
        gram = astar @ a
        sv = np.linalg.svd(a, compute_uv=False)[..., -1]
        bad = (~mask) & (sv < alpha.injectivity_floor)
        if np.any(bad):
            k = np.unravel_index(np.argmax(bad), bad.shape)
            raise BundleError(f"bundle map not injective at node {k} of chart {chart.name!r}")
        safe = np.where(mask[..., None, None], np.eye(gram.shape[-1]), gram)
        b = np.linalg.solve(safe, astar)
        out[chart.name] = np.where(mask[..., None, None], np.nan, b)
    return out


def beta_s(alpha: BundleMapData, s: float, chi: ApproximateOne | None = None,
           hE: FiberMetric | None = None, hF: FiberMetric | None = None) -> dict[str, np.ndarray]:
    """Smoothed inverse ``alpha^* g_s(alpha alpha^*)``, defined on every node."""
    if not s > 0:
        raise ValueError("the smoothing parameter must be positive")
    chi = chi or ApproximateOne()
    hE, hF = _metrics(alpha, hE, hF)
    out = {}
    for chart in alpha.base.charts:
        sp = _spectral_pieces(np.asarray(alpha.A[chart.name]), hE.h[chart.name], hF.h[chart.name])
        out[chart.name] = sp.apply(chi.g(sp.lam, s))
    return out


def covariant_derivative(alpha: BundleMapData, D_E: ConnectionData, D_F: ConnectionData) -> dict[str, MatrixForm]:
    """``nabla alpha = d alpha + omega_F alpha - alpha omega_E`` per chart."""
    out = {}
    for chart in alpha.base.charts:
        a0 = MatrixForm(chart, 0, np.asarray(alpha.A[chart.name])[None])
        da = exterior_derivative(a0)
        out[chart.name] = da + matrix_wedge(D_F.omega[chart.name], a0) - matrix_wedge(a0, D_E.omega[chart.name])
    return out


@dataclass
class ConnectionFamily:
    """One-parameter family of connections ``omega_s`` on ``bundle``, ``s`` in ``(0, inf)``.

    ``kind`` is ``"pushforward"`` (family on ``F``) or ``"pullback"`` (family on
    ``E``). ``omega_at`` and ``omega_dot_at`` return the connection matrix and
    its ``s``-derivative on one chart; both are pure functions of ``s``.
    """

    kind: str
    bundle: BundleData
    base_connection: ConnectionData
    nabla_alpha: Mapping[str, MatrixForm]
    spectral: Mapping[str, _Spectral]
    chi: ApproximateOne
    s_max: float = S_INFINITY
    extra: dict = field(default_factory=dict)

    @property
    def charts(self):
        return self.bundle.base.charts

    def _beta_form(self, name: str, weights: np.ndarray) -> MatrixForm:
        chart = self.bundle.base.chart(name)
        return MatrixForm(chart, 0, self.spectral[name].apply(weights)[None])

    def _compose(self, name: str, b: MatrixForm) -> MatrixForm:
        na = self.nabla_alpha[name]
        if self.kind == "pushforward":
            return matrix_wedge(na, b)
        return matrix_wedge(b, na)

    def beta_at(self, s: float, name: str) -> np.ndarray:
        sp = self.spectral[name]
        return sp.apply(self.chi.g(sp.lam, s))

    def omega_at(self, s: float, name: str) -> MatrixForm:
        sp = self.spectral[name]
        corr = self._compose(name, self._beta_form(name, self.chi.g(sp.lam, s)))
        w = self.base_connection.omega[name]
        return w - corr if self.kind == "pushforward" else w + corr

    def omega_dot_at(self, s: float, name: str) -> MatrixForm:
        sp = self.spectral[name]
        corr = self._compose(name, self._beta_form(name, self.chi.dg_ds(sp.lam, s)))
        return -corr if self.kind == "pushforward" else corr

    def curvature_at(self, s: float, name: str) -> MatrixForm:
        w = self.omega_at(s, name)
        return exterior_derivative(w) + matrix_wedge(w, w)


def _family(kind, alpha, D_E, D_F, chi, hE, hF) -> ConnectionFamily:
    chi = chi or ApproximateOne()
    chi.validate()
    hE, hF = _metrics(alpha, hE, hF)
    if D_E.bundle is not alpha.source or D_F.bundle is not alpha.target:
        raise BundleError("connections must live on the source and target of the bundle map")
    nabla = covariant_derivative(alpha, D_E, D_F)
    spectral = {
        c.name: _spectral_pieces(np.asarray(alpha.A[c.name]), hE.h[c.name], hF.h[c.name])
        for c in alpha.base.charts
    }
    bundle, base_conn = (alpha.target, D_F) if kind == "pushforward" else (alpha.source, D_E)
    return ConnectionFamily(kind, bundle, base_conn, nabla, spectral, chi,
                            extra={"alpha": alpha, "D_E": D_E, "D_F": D_F, "hE": hE, "hF": hF})


def pushforward_family(alpha: BundleMapData, D_E: ConnectionData, D_F: ConnectionData,
                       chi: ApproximateOne | None = None, hE: FiberMetric | None = None,
                       hF: FiberMetric | None = None) -> ConnectionFamily:
    """Smooth family on ``F`` from ``D_F`` (``s = inf``) to the pushforward of ``D_E`` (``s = 0``)."""
    if alpha.target.rank < alpha.source.rank:
        raise BundleError("pushforward family needs rank F >= rank E; use pullback_family")
    return _family("pushforward", alpha, D_E, D_F, chi, hE, hF)


def pullback_family(alpha: BundleMapData, D_E: ConnectionData, D_F: ConnectionData,
                    chi: ApproximateOne | None = None, hE: FiberMetric | None = None,
                    hF: FiberMetric | None = None) -> ConnectionFamily:
    """Smooth family on ``E`` from ``D_E`` (``s = inf``) to ``D_F (+) D_K`` (``s = 0``).

    Requires ``alpha`` surjective away from its declared singular points.
    """
    if alpha.target.rank > alpha.source.rank:
        raise BundleError("pullback family needs rank E >= rank F")
    for chart in alpha.base.charts:
        a = np.asarray(alpha.A[chart.name])
        sv = np.linalg.svd(a, compute_uv=False)[..., -1]
        bad = (~alpha.singular_mask(chart.name)) & (sv < alpha.injectivity_floor)
        if np.any(bad):
            raise BundleError(f"bundle map is not surjective on chart {chart.name!r}")
    return _family("pullback", alpha, D_E, D_F, chi, hE, hF)
