"""Residues of singular bundle maps at isolated points.

Pipeline: make bundles and map radially constant near every singular point,
transgress the smoothed pushforward family, integrate the transgression over
small spheres, and compare the sum of residues with the global integral of
``phi(top) - phi(bottom)``.

Sign. The boundary of the complement of a ball is the sphere with the inward
normal, so with outward-oriented spheres

    Res = - lim_{eps -> 0} int_{S_eps} T.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, Sequence

import numpy as np

from .bundle import (
    BundleData,
    BundleError,
    BundleMapData,
    ConnectionData,
    direct_sum,
    image_complement_connection,
    kernel_connection,
)
from .geom import (
    Chart,
    SpherePatch,
    smooth_step,
    integrate,
    pullback,
    sphere_integrate,
)
from .invariant import InvariantPolynomial
from .pushforward import ApproximateOne, pullback_family, pushforward_family
from .transgression import (
    ORIENTATION,
    QuadratureSpec,
    TransgressionField,
    characteristic_forms,
    check_transgression_identity,
    transgress,
)

__all__ = [
    "NormalizationProfile",
    "SingularityRecord",
    "ResidueReport",
    "ExtendabilityWarning",
    "normalize_bundle",
    "normalize_map",
    "radial_defect",
    "compute_residue",
    "assemble_report",
    "homotopy_residue_compare",
    "HomotopyComparison",
]

IMAG_BOUND = 1e-6


class ExtendabilityWarning(UserWarning):
    """The sphere integrals do not settle as the radius shrinks."""


def blend_step(x):
    """C-infinity step from 0 (``x <= 0``) to 1 (``x >= 1``)."""
    return smooth_step(x)


def blend_step_derivative(x):
    """Derivative of :func:`blend_step`."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0) & (x < 1)
    t = np.where(inside, x, 0.5)
    a = np.exp(-1.0 / t)
    b = np.exp(-1.0 / (1.0 - t))
    da = a / t**2
    db = b / (1.0 - t) ** 2
    return np.where(inside, (da * b + a * db) / (a + b) ** 2, 0.0)


@dataclass(frozen=True)
class NormalizationProfile:
    """Radial profiles for the collapse and the rescaling maps.

    ``lam`` is 0 below ``eps/2`` and 1 above ``eps``; ``ell(t)`` equals
    ``target/t`` below ``eps/2`` and 1 above ``eps``. Both blend with a
    C-infinity step, so normalized data stay smooth to every order. ``target`` defaults to ``eps``, the smallest value
    for which ``ell`` is non-increasing.
    """

    eps: float
    target: float | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("normalization radius must be positive")
        c = self.eps if self.target is None else float(self.target)
        if c < self.eps:
            raise ValueError("target radius below eps makes the rescaling profile increase")
        object.__setattr__(self, "target", c)

    def _x(self, t):
        return (np.asarray(t, dtype=float) - self.eps / 2) / (self.eps / 2)

    def lam(self, t):
        return blend_step(self._x(t))

    def dlam(self, t):
        return blend_step_derivative(self._x(t)) / (self.eps / 2)

    def ell(self, t):
        t = np.asarray(t, dtype=float)
        sig = blend_step(self._x(t))
        with np.errstate(divide="ignore"):
            return (1.0 - sig) * self.target / np.where(t > 0, t, np.inf) + sig

    def collapse(self, pts: np.ndarray, center) -> np.ndarray:
        """``pi(v) = center + lam(|v - center|) (v - center)``."""
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (pts.ndim - 1))
        v = pts - c
        r = np.sqrt(np.sum(v * v, axis=0))
        return c + self.lam(r) * v

    def rescale(self, pts: np.ndarray, center) -> np.ndarray:
        """``rho(v) = center + ell(|v - center|) (v - center)``; the center itself is kept."""
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (pts.ndim - 1))
        v = pts - c
        r = np.sqrt(np.sum(v * v, axis=0))
        factor = np.where(r > 0, self.ell(r), 1.0)
        return c + factor * v

    def collapse_jacobian(self, pts: np.ndarray, center) -> np.ndarray:
        """Analytic Jacobian of :meth:`collapse`, shape ``(dim, dim, *P)``."""
        dim = pts.shape[0]
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (pts.ndim - 1))
        v = pts - c
        r = np.sqrt(np.sum(v * v, axis=0))
        lam = self.lam(r)
        dl = self.dlam(r)
        safe = np.where(r > 0, r, 1.0)
        J = np.zeros((dim, dim) + pts.shape[1:])
        for a in range(dim):
            J[a, a] = lam
            for b in range(dim):
                J[a, b] = J[a, b] + dl * v[a] * v[b] / safe
        return J


def _check_ball(chart: Chart, center, radius: float, base, what: str):
    for (a, b), c in zip(chart.box, center):
        if not (a < c - radius and c + radius < b):
            raise ValueError(f"{what} ball of radius {radius} around {tuple(center)} exits chart {chart.name!r}")
    for other in base.charts:
        if other.name == chart.name or (other.name, chart.name) not in base.transitions:
            continue
        img, ok = base.transition_points(other.name, chart.name)
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * chart.dim)
        dist = np.sqrt(np.sum((img - c) ** 2, axis=0))
        if np.any(ok & (dist < radius)):
            raise ValueError(
                f"{what} ball around {tuple(center)} overlaps the grid of chart {other.name!r}; "
                "shrink the radius or move the point"
            )


def normalize_bundle(bundle: BundleData, D: ConnectionData, point: tuple[str, Sequence[float]],
                     profile: NormalizationProfile) -> tuple[BundleData, ConnectionData]:
    """Pull ``D`` back through the radial collapse around ``point``.

    Inside the ``eps/2``-ball the result is pulled back from the center (so
    its connection matrix vanishes there); outside the ``eps``-ball it is
    unchanged. Frames and transitions are untouched.
    """
    name, center = point
    center = tuple(float(c) for c in center)
    chart = bundle.base.chart(name)
    _check_ball(chart, center, profile.eps, bundle.base, "normalization")
    omega = dict(D.omega)
    fns = dict(D.omega_fn) if D.omega_fn is not None else None
    if fns is not None:
        old = fns[name]

        def new(x, _old=old):
            y = profile.collapse(x, center)
            J = profile.collapse_jacobian(x, center)
            return np.einsum("a...rc,ab...->b...rc", np.asarray(_old(y), dtype=complex), J)

        fns[name] = new
        omega[name] = type(D.omega[name])(chart, 1, np.asarray(new(chart.points()), dtype=complex))
    else:
        pts = chart.points()
        omega[name] = pullback(D.omega[name], profile.collapse(pts, center), chart,
                               jacobian=profile.collapse_jacobian(pts, center))
    return bundle, ConnectionData(bundle, omega, fns, check=D.check, tol=D.tol)


def normalize_map(alpha: BundleMapData, point: tuple[str, Sequence[float]],
                  profile: NormalizationProfile) -> BundleMapData:
    """Compose ``alpha`` with the radial rescaling around ``point``.

    Inside the punctured ``eps/2``-ball the result is constant along rays;
    outside the ``eps``-ball the samples are returned unchanged bit for bit.
    """
    name, center = point
    center = tuple(float(c) for c in center)
    chart = alpha.base.chart(name)
    _check_ball(chart, center, profile.eps, alpha.base, "normalization")
    for other in alpha.points_in_chart(name):
        dist = float(np.linalg.norm(np.asarray(other) - np.asarray(center)))
        if 0.0 < dist < profile.eps:
            raise BundleError(f"singular point {tuple(other)} lies inside the normalization ball around {center}")
    pts = chart.points()
    c = np.asarray(center).reshape((-1,) + (1,) * chart.dim)
    r = np.sqrt(np.sum((pts - c) ** 2, axis=0))
    inside = r < profile.eps
    # the rescaled points fill the annulus eps/2 <= |v| <= eps; alpha must be injective there
    probe_r = np.linspace(profile.eps / 2, profile.eps, 9)
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    probe = np.zeros((chart.dim, probe_r.size, ang.size))
    probe[0] = probe_r[:, None] * np.cos(ang)
    probe[1] = probe_r[:, None] * np.sin(ang)
    probe = probe + c.reshape((-1, 1, 1))
    sv = np.linalg.svd(alpha.values(name, probe), compute_uv=False)[..., -1]
    if np.min(sv) < alpha.injectivity_floor:
        raise BundleError(f"bundle map is singular on the normalization annulus around {center}")
    A = dict(alpha.A)
    fns = dict(alpha.A_fn) if alpha.A_fn is not None else None
    if fns is not None:
        old = fns[name]

        def new(x, _old=old):
            out = np.asarray(_old(profile.rescale(x, center)), dtype=complex)
            rr = np.sqrt(np.sum((x - np.asarray(center).reshape((-1,) + (1,) * (x.ndim - 1))) ** 2, axis=0))
            return np.where((rr >= profile.eps)[..., None, None], np.asarray(_old(x), dtype=complex), out)

        fns[name] = new
    idx = np.nonzero(inside)
    img = profile.rescale(pts[(slice(None),) + idx], center)
    vals = alpha.values(name, img)
    a = np.array(alpha.A[name], dtype=complex, copy=True)
    a[idx] = vals
    A[name] = a
    return BundleMapData(alpha.source, alpha.target, A, alpha.singular_points, alpha.injectivity_floor,
                         alpha.exclusion_cells, fns, False, alpha.tol)


def radial_defect(values: Callable[[np.ndarray], np.ndarray], center, r_inner: float, r_outer: float,
                  dim: int = 2, rays: int = 64) -> float:
    """Largest change of a field along rays between two radii."""
    ang = np.linspace(0, 2 * np.pi, rays, endpoint=False)
    c = np.asarray(center, dtype=float).reshape(-1, 1)
    def ring(r):
        p = np.zeros((dim, rays))
        p[0] = r * np.cos(ang)
        p[1] = r * np.sin(ang)
        return values(p + c)
    return float(np.max(np.abs(ring(r_outer) - ring(r_inner))))


# ---------------------------------------------------------------------------
# residues

@dataclass
class SingularityRecord:
    """Sphere integrals around one singular point and the residue estimate."""

    chart: str
    point: tuple[float, ...]
    eps: list[float]
    per_eps: list[complex]
    residue: float
    imag: float
    spread: float
    method: str
    degree: int
    extendable: bool = True
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_eps"] = [[float(np.real(v)), float(np.imag(v))] for v in self.per_eps]
        d["point"] = list(self.point)
        return d


def compute_residue(T: TransgressionField, point: tuple[str, Sequence[float]], eps_list: Sequence[float],
                    codim: int | None = None, tol: float = 1e-2,
                    sphere_resolution: int | None = None, normalized: bool = True) -> SingularityRecord:
    """Residue at an isolated point from sphere integrals at several radii.

    If the transgression degree is below the sphere dimension, the fiber
    integral vanishes identically and the record holds exact zeros. Otherwise
    the per-radius values ``-int_{S_eps} T`` are compared: if their spread is
    within ``tol`` the best-resolved (largest) radius is reported. Beyond
    ``tol`` the behavior depends on ``normalized``: for normalized data the
    exact integrals do not depend on the radius, so what is left is grid
    error, which grows as the sphere shrinks; the largest radius is still
    reported and the spread is recorded. For unnormalized data a
    least-squares fit in ``eps^2`` is extrapolated to ``eps = 0``. Either way
    a non-monotone sequence with large spread is flagged as not extendable.
    """
    name, center = point
    center = tuple(float(c) for c in center)
    form = T.forms[name]
    chart = form.chart
    dim = chart.dim
    codim = dim if codim is None else codim
    deg_res = 2 * T.phi.degree - codim
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if form.degree != dim - 1 or deg_res < 0:
        return SingularityRecord(name, center, eps_list, [0j] * len(eps_list), 0.0, 0.0, 0.0,
                                 "degree", deg_res, True, "fiber integral vanishes by degree")
    vals = []
    for e in eps_list:
        patch = SpherePatch(chart, center, e, sphere_resolution)
        vals.append(-sphere_integrate(form, patch))
    re = np.real(vals)
    imag = float(np.max(np.abs(np.imag(vals))))
    spread = float(np.ptp(re) / max(abs(float(np.mean(re))), 1.0))
    extendable = True
    note = ""
    if spread <= tol:
        residue, method = float(re[0]), "plateau"
    else:
        if normalized:
            residue, method = float(re[0]), "largest-radius"
            note = f"spread {spread:.2e} above {tol:.0e}; grid error dominates"
        else:
            e2 = np.asarray(eps_list) ** 2
            coef = np.polyfit(e2, re, 1)
            residue, method = float(coef[1]), "richardson"
        diffs = np.diff(re)
        if not (np.all(diffs >= 0) or np.all(diffs <= 0)):
            extendable = False
            note = "sphere integrals neither settle nor vary monotonically; map not extendable in the numerical sense"
            warnings.warn(f"residue at {name}{center}: {note}", ExtendabilityWarning, stacklevel=2)
    if imag > IMAG_BOUND * max(1.0, abs(residue)):
        note = (note + "; " if note else "") + f"imaginary part {imag:.2e} above bound"
    return SingularityRecord(name, center, eps_list, [complex(v) for v in vals], residue, imag,
                             spread, method, deg_res, extendable, note)


@dataclass
class ResidueReport:
    """Everything needed to check the residue formula on one scenario."""

    scenario: str
    phi: str
    lhs: float
    lhs_imag: float
    residues: list[SingularityRecord]
    balance: float
    identity_residual: float
    orientation: str = ORIENTATION
    runtime: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def residue_sum(self) -> float:
        return math.fsum(r.residue for r in self.residues)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "phi": self.phi,
            "lhs": self.lhs,
            "lhs_imag": self.lhs_imag,
            "residues": [r.to_dict() for r in self.residues],
            "residue_sum": self.residue_sum,
            "balance": self.balance,
            "identity_residual": self.identity_residual,
            "orientation": self.orientation,
            "runtime": self.runtime,
            "details": self.details,
        }


def _physical_mask(alpha: BundleMapData, radius: float) -> dict[str, np.ndarray]:
    return {c.name: alpha.singular_mask(c.name, radius=radius) for c in alpha.base.charts}


def assemble_report(scenario, phi: InvariantPolynomial, eps_list: Sequence[float] | None = None,
                    quadrature: QuadratureSpec | None = None, mask_radius: float | None = None,
                    jobs: int = 1, tol: float = 1e-2, normalize: bool = True) -> ResidueReport:
    """Run normalize -> family -> transgress -> residues -> global balance.

    ``scenario`` is any object with the attributes of
    :class:`chernweil.scenarios.Scenario`. The balance is
    ``lhs - sum of residues`` where ``lhs`` integrates
    ``phi(top) - phi(bottom)`` over the base. ``normalize=False`` skips the
    normalization step; residues then fall back to extrapolation in the
    radius, which is meant for diagnostic runs.
    """
    t0 = time.perf_counter()
    sc = scenario.normalized() if normalize and hasattr(scenario, "normalized") else scenario
    eps_list = list(eps_list if eps_list is not None else sc.eps_list)
    alpha = sc.alpha
    chi = getattr(sc, "chi", None) or ApproximateOne()
    q = quadrature or QuadratureSpec()
    if sc.kind == "pushforward":
        fam = pushforward_family(alpha, sc.D_E, sc.D_F, chi, sc.hE, sc.hF)
        top = sc.D_F
        if alpha.target.rank > alpha.source.rank:
            bottom = direct_sum(sc.D_E, image_complement_connection(alpha, sc.D_F, sc.hF))
        else:
            bottom = sc.D_E
    else:
        fam = pullback_family(alpha, sc.D_E, sc.D_F, chi, sc.hE, sc.hF)
        top = sc.D_E
        if alpha.source.rank > alpha.target.rank:
            bottom = direct_sum(sc.D_F, kernel_connection(alpha, sc.D_E, sc.hE, sc.hF))
        else:
            bottom = sc.D_F
    charts = getattr(sc, "transgression_charts", None)
    T = transgress(fam, phi, q, charts=charts, jobs=jobs)
    records = []
    points = sorted(alpha.singular_points, key=lambda p: (p[0], p[1]))
    for p in points:
        records.append(compute_residue(T, p, eps_list, tol=tol, normalized=normalize))
    cover = alpha.base
    top_f = characteristic_forms(top, phi)
    bot_f = characteristic_forms(bottom, phi)
    dim = cover.dim
    if 2 * phi.degree == dim:
        lhs_c = integrate(cover, {n: top_f[n] - bot_f[n] for n in top_f})
    else:
        lhs_c = 0j
    lhs = float(np.real(lhs_c))
    res_sum = math.fsum(r.residue for r in records)
    if mask_radius is None:
        mask_radius = 2.0 * max(max(c.spacing) for c in cover.charts)
    ident = check_transgression_identity(T, phi, top, bottom, _physical_mask(alpha, mask_radius)) \
        if all(n in T.forms for n in top_f) else None
    report = ResidueReport(
        scenario=sc.id,
        phi=phi.name,
        lhs=lhs,
        lhs_imag=float(np.imag(lhs_c)),
        residues=records,
        balance=lhs - res_sum,
        identity_residual=float(ident.max_residual) if ident is not None else float("nan"),
        runtime=time.perf_counter() - t0,
        details={"quadrature_nodes": q.nodes, "mask_radius": mask_radius, "eps_list": eps_list,
                 "family": fam.kind, "chi": chi.name},
    )
    report.details["_transgression"] = T
    report.details["_identity"] = ident
    return report


@dataclass
class HomotopyComparison:
    residues_0: list[float]
    residues_1: list[float]
    discrepancy: float
    radial_defects: list[float]


def homotopy_residue_compare(scenario_0, scenario_1, phi: InvariantPolynomial,
                             homotopy: Callable[[float], object] | None = None,
                             t_probe: Sequence[float] = (0.5,), radial_tol: float = 1e-6,
                             **kw) -> HomotopyComparison:
    """Residues of two normalized maps at matched points and their largest gap.

    ``homotopy(t)`` (optional) returns intermediate scenarios; each must stay
    radially constant inside the inner normalization ball, otherwise
    ``ValueError`` is raised.
    """
    r0 = assemble_report(scenario_0, phi, **kw)
    r1 = assemble_report(scenario_1, phi, **kw)
    if len(r0.residues) != len(r1.residues):
        raise ValueError("the two maps have different singular sets")
    defects = []
    if homotopy is not None:
        for t in t_probe:
            sc = homotopy(t).normalized()
            for name, center in sc.alpha.singular_points:
                prof = sc.profiles[(name, tuple(center))]
                dfn = radial_defect(lambda p, _n=name, _a=sc.alpha: _a.values(_n, p), center,
                                    0.2 * prof.eps, 0.45 * prof.eps, sc.alpha.base.dim)
                scale = max(1.0, float(np.max(np.abs(sc.alpha.A[name]))))
                defects.append(dfn)
                if dfn > radial_tol * scale:
                    raise ValueError(f"homotopy leaves the normalized class at t={t} (defect {dfn:.2e})")
    a = [r.residue for r in r0.residues]
    b = [r.residue for r in r1.residues]
    disc = max((abs(x - y) for x, y in zip(a, b)), default=0.0)
    return HomotopyComparison(a, b, disc, defects)
