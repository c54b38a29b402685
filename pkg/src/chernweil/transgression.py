"""Transgression forms of connection families and their identities.

Orientation. For a family ``omega_s`` on ``s`` in ``(0, inf)`` the artifact
defines

    T = int_0^inf polarize(phi, d omega_s / ds, Omega_s) ds,

so that ``dT = phi(Omega_inf) - phi(Omega_0)``: for the pushforward family
this is ``phi(D_F) - phi(D_E (+) D_perp)``, for the pullback family
``phi(D_E) - phi(D_F (+) D_K)``. The sign is checked numerically in the tests
rather than assumed.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .bundle import ConnectionData
from .geom import DifferentialForm, MatrixForm, exterior_derivative, matrix_wedge
from .invariant import InvariantPolynomial, double_polarize, evaluate, polarize
from .pushforward import ApproximateOne, ConnectionFamily, S_INFINITY, pullback_family, pushforward_family

__all__ = [
    "QuadratureSpec",
    "TransgressionField",
    "IdentityResidual",
    "TwoParameterFamily",
    "transgress",
    "characteristic_forms",
    "check_transgression_identity",
    "double_transgress",
    "map_homotopy_family",
    "ORIENTATION",
]

ORIENTATION = "T = int_0^inf polarize(phi, d omega/ds, Omega_s) ds, dT = phi(Omega_inf) - phi(Omega_0)"


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre rule in ``u`` on ``(0, 1)``.

    With ``compactify=True`` the parameter is ``s = u / (1 - u)``, covering
    ``(0, inf)``; otherwise ``s = lower + (upper - lower) u``.
    """

    nodes: int = 48
    compactify: bool = True
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if self.nodes < 1:
            raise ValueError("quadrature needs at least one node")

    def rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Parameter values and weights including the change-of-variables Jacobian."""
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        u = 0.5 * (x + 1.0)
        w = 0.5 * w
        if self.compactify:
            s = u / (1.0 - u)
            return s, w / (1.0 - u) ** 2
        span = self.upper - self.lower
        return self.lower + span * u, w * span


@dataclass
class TransgressionField:
    """Transgression form per chart plus provenance."""

    forms: dict[str, DifferentialForm]
    phi: InvariantPolynomial
    quadrature: QuadratureSpec
    kind: str
    orientation: str = ORIENTATION

    @property
    def degree(self) -> int:
        return next(iter(self.forms.values())).degree

    def d(self) -> dict[str, DifferentialForm]:
        return {k: exterior_derivative(v) for k, v in self.forms.items()}


def transgress(fam: ConnectionFamily, phi: InvariantPolynomial, q: QuadratureSpec | None = None,
               charts: Sequence[str] | None = None, jobs: int = 1) -> TransgressionField:
    """Quadrature of ``polarize(phi, omega_dot_s, Omega_s)`` over ``s``.

    ``jobs > 1`` evaluates quadrature nodes in threads; the weighted sum is
    always accumulated in node order so the result does not depend on ``jobs``.
    """
    q = q or QuadratureSpec()
    dim = fam.bundle.base.dim
    deg = 2 * phi.degree - 1
    if deg > dim:
        raise ValueError(f"transgression degree {deg} exceeds base dimension {dim}")
    if deg < 0:
        raise ValueError("constant polynomials have no transgression")
    names = list(charts) if charts is not None else [c.name for c in fam.charts]
    s_nodes, weights = q.rule()
    forms = {}
    for name in names:
        def term(k, _name=name):
            s = float(s_nodes[k])
            return polarize(phi, fam.omega_dot_at(s, _name), fam.curvature_at(s, _name))

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                terms = list(pool.map(term, range(len(s_nodes))))
        else:
            terms = [term(k) for k in range(len(s_nodes))]
        acc = terms[0] * weights[0]
        for k in range(1, len(terms)):
            acc = acc + terms[k] * weights[k]
        forms[name] = acc
    return TransgressionField(forms, phi, q, fam.kind)


def characteristic_forms(D: ConnectionData, phi: InvariantPolynomial) -> dict[str, DifferentialForm]:
    """``phi(Omega)`` on every chart."""
    return {name: evaluate(phi, Om) for name, Om in D.curvature().items()}


@dataclass
class IdentityResidual:
    """Residual of ``phi(top) - phi(bottom) - dT`` away from a mask."""

    max_residual: float
    per_chart: dict[str, float]
    scale: float
    fields: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def check_transgression_identity(
    T: TransgressionField,
    phi: InvariantPolynomial,
    top: ConnectionData,
    bottom: ConnectionData,
    mask: Mapping[str, np.ndarray] | None = None,
) -> IdentityResidual:
    """Compare ``phi(top) - phi(bottom)`` with ``dT`` off ``mask``.

    ``top`` is the ``s = inf`` end (``D_F`` for a pushforward family) and
    ``bottom`` the ``s = 0`` end (``D_E (+) D_perp``). Frames of the two ends
    may differ: only invariant forms are compared.
    """
    top_f = characteristic_forms(top, phi)
    bot_f = characteristic_forms(bottom, phi)
    dT = T.d()
    per, fields = {}, {}
    scale = 0.0
    for name, t in T.forms.items():
        lhs = top_f[name] - bot_f[name]
        diff = lhs - dT[name]
        n = diff.pointwise_norm()
        if mask is not None and name in mask:
            n = np.where(mask[name], 0.0, n)
            scale = max(scale, float(np.max(np.where(mask[name], 0.0, lhs.pointwise_norm()))))
        else:
            scale = max(scale, float(np.max(lhs.pointwise_norm())) if lhs.ncomp else 0.0)
        per[name] = float(n.max()) if n.size else 0.0
        fields[name] = n
    return IdentityResidual(max(per.values()) if per else 0.0, per, scale, fields)


@dataclass
class TwoParameterFamily:
    """Connections ``omega(s, t)`` with ``s`` the transgression parameter.

    ``omega``, ``d_ds`` and ``d_dt`` take ``(s, t, chart_name)`` and return
    degree-1 matrix forms. The ``s`` range is described by ``s_quadrature``
    and the homotopy parameter runs over ``[t0, t1]``.
    """

    omega: Callable[[float, float, str], MatrixForm]
    d_ds: Callable[[float, float, str], MatrixForm]
    d_dt: Callable[[float, float, str], MatrixForm]
    charts: Sequence[str]
    s_quadrature: QuadratureSpec
    s_ends: tuple[float, float]
    t0: float = 0.0
    t1: float = 1.0

    def curvature(self, s, t, name) -> MatrixForm:
        w = self.omega(s, t, name)
        return exterior_derivative(w) + matrix_wedge(w, w)

    def transgression_at(self, t: float, phi: InvariantPolynomial) -> dict[str, DifferentialForm]:
        s_nodes, ws = self.s_quadrature.rule()
        out = {}
        for name in self.charts:
            acc = None
            for s, w in zip(s_nodes, ws):
                term = polarize(phi, self.d_ds(s, t, name), self.curvature(s, t, name)) * w
                acc = term if acc is None else acc + term
            out[name] = acc
        return out


def double_transgress(fam2: TwoParameterFamily, phi: InvariantPolynomial, t_nodes: int = 16,
                      endpoint_tol: float = 1e-8) -> dict[str, DifferentialForm]:
    """Double transgression ``R`` with ``T(t1) - T(t0) = dR``.

    ``R = int int double_polarize(phi, d omega/ds, d omega/dt, Omega) ds dt``
    with odd formal parameters. The overall sign was fixed by checking the
    identity on a generic non-abelian family (the opposite sign leaves an
    order-one residual).
    Raises ``ValueError`` if the ``s``-endpoint connections move with ``t``.
    """
    lo, hi = fam2.s_ends
    for name in fam2.charts:
        for s_end in (lo, hi):
            drift = fam2.d_dt(s_end, fam2.t0, name).max_norm() + fam2.d_dt(s_end, fam2.t1, name).max_norm()
            w0 = fam2.omega(s_end, fam2.t0, name)
            w1 = fam2.omega(s_end, fam2.t1, name)
            drift = max(drift, (w1 - w0).max_norm())
            if drift > endpoint_tol:
                raise ValueError(f"homotopy endpoints are not fixed (drift {drift:.3e} at s={s_end})")
    s_nodes, s_w = fam2.s_quadrature.rule()
    t_q = QuadratureSpec(t_nodes, compactify=False, lower=fam2.t0, upper=fam2.t1)
    t_vals, t_w = t_q.rule()
    out = {}
    for name in fam2.charts:
        acc = None
        for t, wt in zip(t_vals, t_w):
            for s, ws in zip(s_nodes, s_w):
                term = double_polarize(
                    phi, fam2.d_ds(s, t, name), fam2.d_dt(s, t, name), fam2.curvature(s, t, name)
                ) * (ws * wt)
                acc = term if acc is None else acc + term
        out[name] = acc
    return out


def map_homotopy_family(alpha_t: Callable[[float], object], D_E: ConnectionData, D_F: ConnectionData,
                        s_quadrature: QuadratureSpec | None = None, t0: float = 0.0, t1: float = 1.0,
                        dt: float = 1e-4, chi: ApproximateOne | None = None, hE=None, hF=None,
                        kind: str = "pushforward") -> TwoParameterFamily:
    """Two-parameter family of smoothed connections along a homotopy of bundle maps.

    ``alpha_t(t)`` returns the bundle map at homotopy time ``t``. The family
    at fixed ``t`` is the pushforward (or pullback) family of that map; the
    ``t``-derivative is a central difference with step ``dt``, whose error is
    of order ``dt^2``. Families are cached per ``t``.
    """
    build = pushforward_family if kind == "pushforward" else pullback_family
    cache: dict[float, ConnectionFamily] = {}

    def fam(t):
        t = float(t)
        if t not in cache:
            cache[t] = build(alpha_t(t), D_E, D_F, chi, hE, hF)
        return cache[t]

    def omega(s, t, name):
        return fam(t).omega_at(s, name)

    def d_ds(s, t, name):
        return fam(t).omega_dot_at(s, name)

    def d_dt(s, t, name):
        return (fam(t + dt).omega_at(s, name) - fam(t - dt).omega_at(s, name)) * (0.5 / dt)

    names = [c.name for c in D_F.bundle.base.charts]
    return TwoParameterFamily(omega, d_ds, d_dt, names, s_quadrature or QuadratureSpec(),
                              (1e-6, S_INFINITY), t0, t1)
