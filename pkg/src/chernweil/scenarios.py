"""Built-in case studies with integer oracles.

Every scenario is a pair of bundles with connections over a chart cover, a
bundle map with declared isolated singular points, and the values expected
for its residues and for the global integral. The expected values come from
code that does not use the residue pipeline: winding numbers by walking
quadrants along a circle, Chern numbers by integrating curvature directly,
and the Euler characteristic of a triangulated sphere.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .bundle import (
    BundleData,
    BundleMapData,
    ConnectionData,
    FiberMetric,
    pullback_bundle,
)
from .geom import MIN_RESOLUTION, ManifoldCover, integrate, stereographic_sphere_cover
from .invariant import by_name
from .pushforward import ApproximateOne
from .residue import NormalizationProfile, ResidueReport, assemble_report, normalize_bundle, normalize_map
from .transgression import QuadratureSpec

__all__ = [
    "ConfigError",
    "BudgetError",
    "ScenarioConfig",
    "Scenario",
    "ScenarioResult",
    "SCENARIOS",
    "build_line_bundle_zeros",
    "build_hopf_vector_field",
    "build_riemann_hurwitz",
    "build_s4_instanton",
    "build_surjective_demo",
    "build_flat",
    "build_phase_winding",
    "build_scenario",
    "run_scenario",
    "list_scenarios",
    "winding_number",
    "chern_number",
    "triangulated_euler_characteristic",
    "monopole_connection",
    "line_bundle",
    "MIN_SPHERE_CELLS",
    "ConvergenceRow",
    "nested_resolutions",
    "convergence_study",
]

MIN_SPHERE_CELLS = 3.0
DEFAULT_NORMALIZATION = 0.6
EPS_FRACTIONS = (0.45, 0.35, 0.25)


class ConfigError(ValueError):
    """Invalid scenario configuration."""


class BudgetError(RuntimeError):
    """A run would exceed the configured resource budget."""


# ---------------------------------------------------------------------------
# oracles

def winding_number(fn: Callable[[np.ndarray], np.ndarray], center, radius: float, samples: int = 720) -> int:
    """Winding number of a complex function around a circle, by counting quadrant moves."""
    ang = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    pts = np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    vals = np.asarray(fn(pts)).reshape(samples)
    if np.min(np.abs(vals)) == 0:
        raise ValueError("function vanishes on the circle")
    quadrant = np.floor(np.angle(vals) / (np.pi / 2)).astype(int) % 4
    step = (np.roll(quadrant, -1) - quadrant) % 4
    if np.any(step == 2):
        raise ValueError("sampling too coarse for the winding count")
    turns = int(np.sum(step == 1)) - int(np.sum(step == 3))
    return turns // 4


def chern_number(D: ConnectionData) -> float:
    """``(i/2pi) int tr(Omega)`` by direct curvature integration."""
    forms = {n: Om.trace() * (1j / (2 * np.pi)) for n, Om in D.curvature().items()}
    return float(np.real(integrate(D.bundle.base, forms)))


def triangulated_euler_characteristic() -> int:
    """``V - E + F`` of the octahedron, a triangulation of the 2-sphere."""
    verts = [(s * (i == 0), s * (i == 1), s * (i == 2)) for i in range(3) for s in (1, -1)]
    faces = []
    for sx, sy, sz in itertools.product((1, -1), repeat=3):
        faces.append(tuple(sorted(verts.index(v) for v in ((sx, 0, 0), (0, sy, 0), (0, 0, sz)))))
    edges = {tuple(sorted(e)) for f in faces for e in itertools.combinations(f, 2)}
    return len(verts) - len(edges) + len(faces)


# ---------------------------------------------------------------------------
# building blocks

def _z(x):
    return x[0] + 1j * x[1]


def _scalar(v):
    return np.asarray(v, dtype=complex)[..., None, None]


def monopole_connection(k: float) -> Callable[[np.ndarray], np.ndarray]:
    """``-k conj(z) dz / (1 + |z|^2)`` as a callable of stereographic coordinates."""
    def omega(x):
        z = _z(x)
        f = -k * np.conj(z) / (1.0 + np.abs(z) ** 2)
        return np.stack([_scalar(f), _scalar(1j * f)])
    return omega


def line_bundle(cover: ManifoldCover, k: int, sign: complex = 1.0, name: str | None = None) -> BundleData:
    """Line bundle on the two-chart sphere clutched by ``sign * z^k`` (and ``sign * w^k``)."""
    def g(x):
        return _scalar(sign * _z(x) ** k)
    return BundleData(1, cover, {("N", "S"): g, ("S", "N"): g}, name=name or f"O({k})")


def _two_sphere(resolution: int) -> ManifoldCover:
    return stereographic_sphere_cover(2, resolution)


def _chart_reach(cover: ManifoldCover) -> float:
    """Distance from a pole below which only that pole's chart sees the sphere."""
    hw = max(abs(v) for iv in cover.charts[0].box for v in iv)
    return 1.0 / (hw * math.sqrt(cover.dim))


# ---------------------------------------------------------------------------
# scenario container

@dataclass
class Scenario:
    """Bundles, connections, bundle map and oracle for one case study."""

    id: str
    cover: ManifoldCover
    E: BundleData
    F: BundleData
    D_E: ConnectionData
    D_F: ConnectionData
    alpha: BundleMapData
    hE: FiberMetric
    hF: FiberMetric
    kind: str
    eps_list: tuple[float, ...]
    profiles: dict
    oracle: dict
    params: dict = field(default_factory=dict)
    chi: ApproximateOne | None = None
    transgression_charts: Sequence[str] | None = None
    prenormalized: bool = False

    def normalized(self) -> "Scenario":
        """Scenario with bundles and map made radially constant at each singular point."""
        if self.prenormalized:
            return self
        D_E, D_F, alpha = self.D_E, self.D_F, self.alpha
        for name, center in alpha.singular_points:
            prof = self.profiles[(name, tuple(center))]
            _, D_E = normalize_bundle(self.E, D_E, (name, center), prof)
            _, D_F = normalize_bundle(self.F, D_F, (name, center), prof)
            alpha = normalize_map(alpha, (name, center), prof)
        alpha = BundleMapData(alpha.source, alpha.target, alpha.A, alpha.singular_points,
                              alpha.injectivity_floor, alpha.exclusion_cells, alpha.A_fn, False, alpha.tol)
        return replace(self, D_E=D_E, D_F=D_F, alpha=alpha, prenormalized=True)


def _profiles_and_eps(cover: ManifoldCover, points, eps_norm: float | None, eps_list):
    reach = _chart_reach(cover)
    limits = [DEFAULT_NORMALIZATION]
    for _, c in points:
        limits.append(0.95 * (reach - float(np.hypot(*c[:2])) if cover.dim == 2 else reach))
    for (n1, c1), (n2, c2) in itertools.combinations(points, 2):
        if n1 == n2:
            # normalization balls of distinct points must be disjoint
            limits.append(float(np.linalg.norm(np.subtract(c1, c2))) / 2.05)
    auto = min(limits)
    if eps_norm is None:
        eps_norm = auto
    if eps_norm <= 0:
        raise ConfigError("singular points too close to each other or to a chart seam")
    if eps_norm > auto + 1e-12:
        raise ConfigError(f"normalization radius {eps_norm} exceeds the admissible {auto:.3f}")
    if eps_list is None:
        eps_list = tuple(f * eps_norm for f in EPS_FRACTIONS)
    eps_list = tuple(sorted((float(e) for e in eps_list), reverse=True))
    if points and max(eps_list) >= eps_norm / 2:
        raise ConfigError("residue radii must lie inside the inner normalization ball (eps_norm / 2)")
    profiles = {(n, tuple(float(v) for v in c)): NormalizationProfile(eps_norm) for n, c in points}
    return profiles, eps_list, eps_norm


def _check_sphere_cells(cover: ManifoldCover, eps_list):
    h = max(max(c.spacing) for c in cover.charts)
    if min(eps_list) < MIN_SPHERE_CELLS * h:
        raise ConfigError(
            f"smallest residue radius {min(eps_list):.3g} is below {MIN_SPHERE_CELLS:g} grid cells "
            f"(h = {h:.3g}); raise --resolution"
        )


# ---------------------------------------------------------------------------
# builders

def build_line_bundle_zeros(k: int = 2, zeros: Sequence[tuple[str, Sequence[float]]] | None = None,
                            resolution: int = 128, eps_list=None, eps_norm: float | None = None) -> Scenario:
    """Section of ``O(k)`` over the sphere, seen as a map from the trivial line bundle.

    ``zeros`` lists ``(chart, point)`` pairs, ``k`` of them. By default one
    zero sits at each pole for ``k = 2``; for ``k >= 3`` one sits at the south
    pole and the others on a circle of radius 0.32 around the north pole.
    """
    if k < 0:
        raise ConfigError("k must be non-negative")
    cover = _two_sphere(resolution)
    if zeros is None:
        if k == 0:
            zeros = []
        elif k == 1:
            zeros = [("N", (0.0, 0.0))]
        elif k == 2:
            zeros = [("N", (0.0, 0.0)), ("S", (0.0, 0.0))]
        else:
            zeros = [("S", (0.0, 0.0))]
            for j in range(k - 1):
                ang = 2 * np.pi * j / (k - 1)
                zeros.append(("N", (0.32 * np.cos(ang), 0.32 * np.sin(ang))))
    zeros = [(str(n), tuple(float(v) for v in c)) for n, c in zeros]
    if len(zeros) != k:
        raise ConfigError(f"O({k}) sections have exactly {k} zeros, got {len(zeros)}")
    if any(n not in ("N", "S") for n, _ in zeros):
        raise ConfigError("zeros must be given in chart 'N' or 'S'")
    for (n1, c1), (n2, c2) in itertools.combinations(zeros, 2):
        if n1 == n2 and np.allclose(c1, c2):
            raise ConfigError("zeros must be distinct (simple)")
    profiles, eps_list, eps_norm = _profiles_and_eps(cover, zeros, eps_norm, eps_list)
    if zeros:
        _check_sphere_cells(cover, eps_list)
    north = [complex(*c) for n, c in zeros if n == "N"]
    south = [complex(*c) for n, c in zeros if n == "S"]

    def alpha_N(x):
        z = _z(x)
        out = np.ones_like(z)
        for a in north:
            out = out * (z - a)
        for b in south:
            out = out * (1 - b * z)
        return _scalar(out)

    def alpha_S(x):
        w = _z(x)
        out = np.ones_like(w)
        for a in north:
            out = out * (1 - a * w)
        for b in south:
            out = out * (w - b)
        return _scalar(out)

    E = BundleData.trivial(cover, 1, "C")
    F = line_bundle(cover, k)
    D_E = ConnectionData.trivial(E)
    D_F = ConnectionData.from_callables(F, {"N": monopole_connection(k), "S": monopole_connection(k)})
    alpha = BundleMapData.from_callables(E, F, {"N": alpha_N, "S": alpha_S}, zeros)
    fns = {"N": lambda p: alpha_N(p)[..., 0, 0], "S": lambda p: alpha_S(p)[..., 0, 0]}
    oracle = {
        "residues": {f"{n}{c}": winding_number(fns[n], c, 0.5 * min(eps_list)) for n, c in zeros},
        "residues_provenance": "[DERIVED: winding number by quadrant walking]",
        "lhs": round(chern_number(D_F) - chern_number(D_E)),
        "lhs_provenance": "[DERIVED: clutching Chern number by direct curvature integration]",
        "residue_tol": 2e-2,
        "balance_tol": 1e-2,
    }
    return Scenario("line_zeros", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E),
                    FiberMetric.identity(F), "pushforward", eps_list, profiles, oracle,
                    {"k": k, "zeros": zeros, "resolution": resolution, "eps_norm": eps_norm})


def _ambient_x(x):
    """First ambient coordinate ``2 Re(u) / (1 + |u|^2)`` of a stereographic point, in either chart."""
    u = _z(x)
    return 2.0 * u.real / (1.0 + np.abs(u) ** 2)


def build_phase_winding(k: int = 2, amplitude: float = 0.0, resolution: int = 128, eps_list=None,
                        eps_norm: float | None = None) -> Scenario:
    """Section ``z^k exp(i psi)`` of ``O(k)`` with one zero of order ``k`` at the north pole.

    ``psi = amplitude * X1`` with ``X1`` the first ambient coordinate of the
    round sphere, so it is smooth on both charts. Different amplitudes give
    homotopic maps with the same winding number and different angular phase
    profiles.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    cover = _two_sphere(resolution)
    zeros = [("N", (0.0, 0.0))]
    profiles, eps_list, eps_norm = _profiles_and_eps(cover, zeros, eps_norm, eps_list)
    _check_sphere_cells(cover, eps_list)

    def alpha_N(x):
        return _scalar(_z(x) ** k * np.exp(1j * amplitude * _ambient_x(x)))

    def alpha_S(x):
        return _scalar(np.exp(1j * amplitude * _ambient_x(x)))

    E = BundleData.trivial(cover, 1, "C")
    F = line_bundle(cover, k)
    D_E = ConnectionData.trivial(E)
    D_F = ConnectionData.from_callables(F, {"N": monopole_connection(k), "S": monopole_connection(k)})
    alpha = BundleMapData.from_callables(E, F, {"N": alpha_N, "S": alpha_S}, zeros)
    oracle = {
        "residues": {f"N{zeros[0][1]}": winding_number(lambda p: alpha_N(p)[..., 0, 0], (0.0, 0.0),
                                                        0.5 * min(eps_list))},
        "residues_provenance": "[DERIVED: winding number by quadrant walking]",
        "lhs": round(chern_number(D_F) - chern_number(D_E)),
        "lhs_provenance": "[DERIVED: clutching Chern number by direct curvature integration]",
        "residue_tol": 2e-2,
        "balance_tol": 1e-2,
    }
    return Scenario("phase_winding", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E),
                    FiberMetric.identity(F), "pushforward", eps_list, profiles, oracle,
                    {"k": k, "amplitude": amplitude, "resolution": resolution, "eps_norm": eps_norm})


def _tangent_bundle(cover):
    return line_bundle(cover, 2, sign=-1.0, name="TS2")


def build_hopf_vector_field(profile: str = "rotational", resolution: int = 128, phase: float = 0.0,
                            eps_list=None, eps_norm: float | None = None) -> Scenario:
    """A vector field on the round sphere, viewed as a map from the trivial line to ``TS^2``.

    ``profile`` is ``"rotational"`` (rotation about the polar axis) or
    ``"gradient"`` (gradient of the height). ``phase`` rotates the field
    pointwise by a constant angle.
    """
    cover = _two_sphere(resolution)
    zeros = [("N", (0.0, 0.0)), ("S", (0.0, 0.0))]
    profiles, eps_list, eps_norm = _profiles_and_eps(cover, zeros, eps_norm, eps_list)
    _check_sphere_cells(cover, eps_list)
    u = np.exp(1j * phase)
    if profile == "rotational":
        aN, aS = 1j * u, -1j * u
    elif profile == "gradient":
        aN, aS = -0.5 * u, 0.5 * u
    else:
        raise ConfigError(f"unknown vector field profile {profile!r}")

    def alpha_N(x):
        return _scalar(aN * _z(x))

    def alpha_S(x):
        return _scalar(aS * _z(x))

    E = BundleData.trivial(cover, 1, "C")
    F = _tangent_bundle(cover)
    D_E = ConnectionData.trivial(E)
    D_F = ConnectionData.from_callables(F, {"N": monopole_connection(2), "S": monopole_connection(2)})
    alpha = BundleMapData.from_callables(E, F, {"N": alpha_N, "S": alpha_S}, zeros)
    fns = {"N": lambda p: alpha_N(p)[..., 0, 0], "S": lambda p: alpha_S(p)[..., 0, 0]}
    indices = {f"{n}{c}": winding_number(fns[n], c, 0.5 * min(eps_list)) for n, c in zeros}
    oracle = {
        "residues": indices,
        "residues_provenance": "[DERIVED: winding number by quadrant walking]",
        "lhs": triangulated_euler_characteristic(),
        "lhs_provenance": "[DERIVED: Euler characteristic V - E + F of a triangulated sphere]",
        "residue_sum": triangulated_euler_characteristic(),
        "residue_tol": 2e-2,
        "balance_tol": 2e-2,
    }
    return Scenario("hopf", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E), FiberMetric.identity(F),
                    "pushforward", eps_list, profiles, oracle,
                    {"profile": profile, "phase": phase, "resolution": resolution, "eps_norm": eps_norm})


def _power_map(d: int):
    def f(x):
        z = _z(x) ** d
        return np.stack([z.real, z.imag])
    return f


def build_riemann_hurwitz(d: int = 2, resolution: int = 128, eps_list=None,
                          eps_norm: float | None = None) -> Scenario:
    """The differential of ``z -> z^d`` as a map ``T CP^1 -> f^* T CP^1``.

    Ramification points are the two poles, each with ``e_p - 1 = d - 1``.
    """
    if d < 1:
        raise ConfigError("degree d must be at least 1")
    cover = _two_sphere(resolution)
    zeros = [("N", (0.0, 0.0)), ("S", (0.0, 0.0))] if d >= 2 else []
    profiles, eps_list, eps_norm = _profiles_and_eps(cover, zeros, eps_norm, eps_list)
    if zeros:
        _check_sphere_cells(cover, eps_list)
    E = _tangent_bundle(cover)
    D_E = ConnectionData.from_callables(E, {"N": monopole_connection(2), "S": monopole_connection(2)})
    F, D_F = pullback_bundle(E, D_E, {"N": ("N", _power_map(d)), "S": ("S", _power_map(d))}, cover)

    def alpha_fn(x):
        return _scalar(d * _z(x) ** (d - 1))

    alpha = BundleMapData.from_callables(E, F, {"N": alpha_fn, "S": alpha_fn}, zeros)
    oracle = {
        "residues": {f"{n}{c}": d - 1 for n, c in zeros},
        "residues_provenance": "[DERIVED: ramification index e_p - 1 of z^d]",
        "lhs": 2 * d - 2,
        "lhs_provenance": "[DERIVED: Riemann-Hurwitz d * chi(S^2) - chi(S^2)]",
        "residue_tol": 2e-2,
        "balance_tol": 1e-2,
    }
    return Scenario("riemann_hurwitz", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E),
                    FiberMetric.identity(F), "pushforward", eps_list, profiles, oracle,
                    {"d": d, "resolution": resolution, "eps_norm": eps_norm})


def build_surjective_demo(variant: str = "collapse", resolution: int = 128, gauge_angle: float = 0.0,
                          eps_list=None, eps_norm: float | None = None) -> Scenario:
    """Rank-2 trivial bundle mapped onto ``O(1)``, handled by the pullback family.

    ``"collapse"`` uses ``(z, 0)``, which drops rank at the north pole;
    ``"surjective"`` uses ``(z, 1)``, onto everywhere. ``gauge_angle``
    rotates the frame of the trivial bundle by a constant unitary.
    """
    cover = _two_sphere(resolution)
    if variant == "collapse":
        zeros = [("N", (0.0, 0.0))]
        second = 0.0
    elif variant == "surjective":
        zeros = []
        second = 1.0
    else:
        raise ConfigError(f"unknown surjective variant {variant!r}")
    profiles, eps_list, eps_norm = _profiles_and_eps(cover, zeros, eps_norm, eps_list)
    if zeros:
        _check_sphere_cells(cover, eps_list)
    c, s = math.cos(gauge_angle), math.sin(gauge_angle)
    U = np.array([[c, -s], [s, c]], dtype=complex)

    def alpha_N(x):
        z = _z(x)
        row = np.stack([z, np.full_like(z, second)], axis=-1)[..., None, :]
        return row @ U

    def alpha_S(x):
        w = _z(x)
        row = np.stack([np.ones_like(w), second * w], axis=-1)[..., None, :]
        return row @ U

    E = BundleData.trivial(cover, 2, "C2")
    F = line_bundle(cover, 1)
    D_E = ConnectionData.trivial(E)
    D_F = ConnectionData.from_callables(F, {"N": monopole_connection(1), "S": monopole_connection(1)})
    alpha = BundleMapData.from_callables(E, F, {"N": alpha_N, "S": alpha_S}, zeros)
    res = {}
    for n, cc in zeros:
        # the collapsing row is (z, 0) U; its first entry before the rotation carries the winding
        res[f"{n}{cc}"] = -winding_number(lambda p: _z(p), cc, 0.5 * min(eps_list))
    oracle = {
        "residues": res,
        "residues_provenance": "[DERIVED: minus the winding number of the collapsing component]",
        "lhs": -len(zeros),
        "lhs_provenance": "[DERIVED: c1(E) - c1(F) - c1(K) with c1(K) = 0 for the collapse, = -1 otherwise]",
        "residue_tol": 2e-2,
        "balance_tol": 1e-2,
    }
    return Scenario("surjective_demo", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E),
                    FiberMetric.identity(F), "pullback", eps_list, profiles, oracle,
                    {"variant": variant, "gauge_angle": gauge_angle, "resolution": resolution,
                     "eps_norm": eps_norm})


def build_flat(resolution: int = 64, value: complex = 2.0) -> Scenario:
    """Trivial line bundles with flat connections and a constant invertible map."""
    cover = _two_sphere(resolution)
    E = BundleData.trivial(cover, 1, "C")
    F = BundleData.trivial(cover, 1, "C'")
    D_E = ConnectionData.trivial(E)
    D_F = ConnectionData.trivial(F)

    def a(x):
        return _scalar(np.full(np.shape(x)[1:], value))

    alpha = BundleMapData.from_callables(E, F, {"N": a, "S": a}, ())
    oracle = {"residues": {}, "residues_provenance": "[TRIVIAL]", "lhs": 0,
              "lhs_provenance": "[TRIVIAL: flat connections]", "residue_tol": 1e-6, "balance_tol": 1e-6}
    return Scenario("flat", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E), FiberMetric.identity(F),
                    "pushforward", (0.3, 0.2, 0.1), {}, oracle, {"resolution": resolution})


def _quaternion(x):
    """Real 4-vector to the 2x2 complex matrix ``x0 + x1 i + x2 j + x3 k``."""
    a = x[0] + 1j * x[1]
    b = x[2] + 1j * x[3]
    row0 = np.stack([a, b], axis=-1)
    row1 = np.stack([-np.conj(b), np.conj(a)], axis=-1)
    return np.stack([row0, row1], axis=-2)


def s4_memory_estimate(resolution: int) -> float:
    """Rough peak memory in bytes of the four-dimensional run."""
    nodes = resolution ** 4
    return nodes * 16.0 * 4 * 6 * 14


def build_s4_instanton(resolution: int = 24, clutching: bool = True, eps_list=None,
                       budget_bytes: float = 3.5e9) -> Scenario:
    """Trivial rank-2 bundle mapped into the bundle on ``S^4`` clutched by ``conj(x) / |x|``.

    The clutching bundle is flat on the north chart and carries all its
    curvature in a shell of the south chart. The map is ``x / |x|`` as a unit
    quaternion (conjugated) in the north chart and the identity in the south chart, so it
    is already radially constant around its only singular point.
    """
    need = s4_memory_estimate(resolution)
    if need > budget_bytes:
        fit = int((budget_bytes / (16.0 * 4 * 6 * 14)) ** 0.25)
        raise BudgetError(f"resolution {resolution}^4 needs about {need / 1e9:.1f} GB; "
                          f"at most {fit} per axis fits the budget")
    cover = stereographic_sphere_cover(4, resolution)
    reach = _chart_reach(cover)
    to_N = cover.transitions["S", "N"]

    flip = np.array([1.0, -1.0, -1.0, -1.0])

    def unit_q(x):
        # conjugate quaternion: the orientation for which the residue is +1
        r = np.sqrt(np.sum(x * x, axis=0))
        y = x * flip.reshape((4,) + (1,) * (x.ndim - 1))
        return _quaternion(y / np.where(r > 0, r, 1.0))

    if clutching:
        def g_NS(x):
            return unit_q(x)

        def g_SN(w):
            return np.conj(np.swapaxes(unit_q(to_N(w)), -1, -2))
    else:
        def g_NS(x):
            return np.broadcast_to(np.eye(2, dtype=complex), np.shape(x)[1:] + (2, 2)).copy()
        g_SN = g_NS
    F = BundleData(2, cover, {("N", "S"): g_NS, ("S", "N"): g_SN}, name="instanton" if clutching else "C2'")
    E = BundleData.trivial(cover, 2, "C2")
    D_E = ConnectionData.trivial(E)
    r_in, r_out = 0.15, 0.95 * reach

    def shell(r):
        t = np.clip((r - r_in) / (r_out - r_in), 0.0, 1.0)
        return t * t * t * (10 - 15 * t + 6 * t * t)

    def omega_N(x):
        return np.zeros((4,) + np.shape(x)[1:] + (2, 2), dtype=complex)

    def omega_S(w):
        if not clutching:
            return omega_N(w)
        h = g_NS(to_N(w))
        step = 1e-6
        parts = []
        for b in range(4):
            e = np.zeros((4,) + (1,) * (w.ndim - 1))
            e[b] = step
            dh = (g_NS(to_N(w + e)) - g_NS(to_N(w - e))) / (2 * step)
            parts.append(np.conj(np.swapaxes(h, -1, -2)) @ dh)
        r = np.sqrt(np.sum(w * w, axis=0))
        return np.stack(parts) * shell(r)[..., None, None]

    D_F = ConnectionData.from_callables(F, {"N": omega_N, "S": omega_S}, check=True, tol=1e-5)
    points = [("N", (0.0, 0.0, 0.0, 0.0))] if clutching else []

    def alpha_N(x):
        return unit_q(x) if clutching else g_NS(x)

    def alpha_S(w):
        return np.broadcast_to(np.eye(2, dtype=complex), np.shape(w)[1:] + (2, 2)).copy()

    alpha = BundleMapData.from_callables(E, F, {"N": alpha_N, "S": alpha_S}, points)
    hw = max(abs(v) for v in cover.charts[0].box[0])
    if eps_list is None:
        eps_list = (0.7 * hw, 0.58 * hw, 0.46 * hw)
    eps_list = tuple(sorted(eps_list, reverse=True))
    oracle = {
        "residues": {f"{n}{c}": 1 for n, c in points},
        "residues_provenance": "[DERIVED: degree of the clutching map x/|x| on S^3]",
        "lhs": 1 if clutching else 0,
        "lhs_provenance": "[DERIVED: second Chern number of the clutched bundle]",
        "residue_tol": 5e-2,
        "balance_tol": 5e-2,
        # the 4-D volume integral converges slowly on grids this coarse
        # (about 0.84 at 24 nodes per axis), so it is reported without gating
        "informational": ["lhs", "balance"],
    }
    return Scenario("s4_instanton", cover, E, F, D_E, D_F, alpha, FiberMetric.identity(E),
                    FiberMetric.identity(F), "pushforward", eps_list, {}, oracle,
                    {"resolution": resolution, "clutching": clutching}, transgression_charts=["N"],
                    prenormalized=True)


SCENARIOS: dict[str, dict] = {
    "line_zeros": {
        "builder": build_line_bundle_zeros,
        "params": {"k": 2},
        "phi": "c1",
        "expect": "residue 1 at each simple zero; lhs = k [DERIVED: winding + clutching oracles]",
    },
    "hopf": {
        "builder": build_hopf_vector_field,
        "params": {"profile": "rotational"},
        "phi": "c1",
        "expect": "indices sum to chi(S^2) = 2 [DERIVED: triangulated Euler characteristic]",
    },
    "riemann_hurwitz": {
        "builder": build_riemann_hurwitz,
        "params": {"d": 2},
        "phi": "c1",
        "expect": "residue d-1 at 0 and infinity; lhs = 2d-2 [DERIVED: Riemann-Hurwitz count]",
    },
    "s4_instanton": {
        "builder": build_s4_instanton,
        "params": {},
        "phi": "c2",
        "expect": "c2 residue 1 at the north pole [DERIVED: clutching degree]; needs --enable-4d",
    },
    "surjective_demo": {
        "builder": build_surjective_demo,
        "params": {"variant": "collapse"},
        "phi": "c1",
        "expect": "residue -1 at the rank drop [DERIVED: winding of the collapsing component]",
    },
    "phase_winding": {
        "builder": build_phase_winding,
        "params": {"k": 2, "amplitude": 0.8},
        "phi": "c1",
        "expect": "residue k at the order-k zero for every phase amplitude [DERIVED: winding oracle]",
    },
    "flat": {
        "builder": build_flat,
        "params": {},
        "phi": "c1",
        "expect": "lhs 0, no residues [TRIVIAL]",
    },
}


def list_scenarios() -> list[dict]:
    return [
        {"id": k, "params": dict(v["params"]), "phi": v["phi"], "expect": v["expect"]}
        for k, v in SCENARIOS.items()
    ]


# ---------------------------------------------------------------------------
# configuration and execution

_PARAM_KEYS = {
    "line_zeros": {"k", "zeros", "eps_norm"},
    "hopf": {"profile", "phase", "eps_norm"},
    "riemann_hurwitz": {"d", "eps_norm"},
    "s4_instanton": {"clutching", "budget_bytes"},
    "surjective_demo": {"variant", "gauge_angle", "eps_norm"},
    "phase_winding": {"k", "amplitude", "eps_norm"},
    "flat": {"value"},
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated run parameters."""

    scenario: str
    resolution: int | None = None
    eps: tuple[float, ...] | None = None
    quad_nodes: int = 48
    phi: str | None = None
    seed: int = 0
    params: Mapping = field(default_factory=dict)
    enable_4d: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {sorted(SCENARIOS)}")
        if self.resolution is not None and self.resolution < MIN_RESOLUTION:
            raise ConfigError(f"resolution {self.resolution} below the minimum {MIN_RESOLUTION}")
        if self.quad_nodes < 4:
            raise ConfigError("at least 4 quadrature nodes are required")
        if self.eps is not None:
            if len(self.eps) < 2 or any(e <= 0 for e in self.eps):
                raise ConfigError("--eps needs at least two positive radii")
        unknown = set(self.params) - _PARAM_KEYS[self.scenario]
        if unknown:
            raise ConfigError(f"unknown parameters for {self.scenario}: {sorted(unknown)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "resolution": self.resolution,
            "eps": list(self.eps) if self.eps is not None else None,
            "quad_nodes": self.quad_nodes, "phi": self.phi, "seed": self.seed,
            "params": dict(self.params), "enable_4d": self.enable_4d, "jobs": self.jobs,
        }


def build_scenario(config: ScenarioConfig) -> Scenario:
    entry = SCENARIOS[config.scenario]
    kwargs = dict(entry["params"])
    kwargs.update(config.params)
    if config.resolution is not None:
        kwargs["resolution"] = config.resolution
    if config.eps is not None and config.scenario != "flat":
        kwargs["eps_list"] = tuple(config.eps)
    if config.scenario == "s4_instanton" and not config.enable_4d:
        raise BudgetError("the four-dimensional scenario is disabled; pass --enable-4d")
    try:
        return entry["builder"](**kwargs)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, (ConfigError,)):
            raise
        raise ConfigError(str(exc)) from exc


@dataclass
class ScenarioResult:
    """A residue report together with the oracle comparison."""

    config: ScenarioConfig
    report: ResidueReport
    oracle: dict
    checks: dict
    runtime: float

    @property
    def passed(self) -> bool:
        """True when every gating check passes; informational checks are ignored."""
        return all(c["pass"] for c in self.checks.values() if c.get("gating", True))

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "report": self.report.to_dict(),
            "oracle": self.oracle,
            "checks": self.checks,
            "passed": self.passed,
            "runtime": self.runtime,
        }


def run_scenario(config: ScenarioConfig, scenario: Scenario | None = None) -> ScenarioResult:
    """Build (unless given), run the residue pipeline and compare with the oracle."""
    t0 = time.perf_counter()
    sc = scenario if scenario is not None else build_scenario(config)
    phi_name = config.phi or SCENARIOS[config.scenario]["phi"]
    try:
        phi = by_name(phi_name, sc.F.rank)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if 2 * phi.degree - 1 > sc.cover.dim:
        raise ConfigError(f"{phi_name} has transgression degree above the base dimension")
    report = assemble_report(sc, phi, quadrature=QuadratureSpec(config.quad_nodes), jobs=config.jobs)
    report.details.pop("_transgression", None)
    report.details.pop("_identity", None)
    oracle = dict(sc.oracle)
    checks = {}
    default_phi = phi_name == SCENARIOS[config.scenario]["phi"]
    if default_phi:
        expected = oracle["residues"]
        rtol = oracle["residue_tol"]
        for rec in report.residues:
            key = f"{rec.chart}{tuple(rec.point)}"
            if key in expected:
                err = abs(rec.residue - expected[key])
                checks[f"residue {key}"] = {"value": rec.residue, "expected": expected[key],
                                            "error": err, "tol": rtol, "pass": bool(err <= rtol)}
        if "residue_sum" in oracle:
            err = abs(report.residue_sum - oracle["residue_sum"])
            checks["residue sum"] = {"value": report.residue_sum, "expected": oracle["residue_sum"],
                                     "error": err, "tol": rtol, "pass": bool(err <= rtol)}
        lhs_err = abs(report.lhs - oracle["lhs"])
        checks["lhs"] = {"value": report.lhs, "expected": oracle["lhs"], "error": lhs_err,
                         "tol": oracle["balance_tol"], "pass": bool(lhs_err <= oracle["balance_tol"])}
    checks["balance"] = {"value": report.balance, "expected": 0.0, "error": abs(report.balance),
                         "tol": oracle["balance_tol"], "pass": bool(abs(report.balance) <= oracle["balance_tol"])}
    for rec in report.residues:
        key = f"{rec.chart}{tuple(rec.point)}"
        checks[f"extendable {key}"] = {"value": rec.spread, "tol": 1e-2, "pass": bool(rec.extendable)}
    for name in oracle.get("informational", ()):
        if name in checks:
            checks[name]["gating"] = False
    return ScenarioResult(config, report, oracle, checks, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# refinement studies

@dataclass
class ConvergenceRow:
    level: int
    resolution: int
    balance_error: float
    identity_residual: float
    ratio: float

    def as_tuple(self):
        return (self.level, self.resolution, self.balance_error, self.identity_residual, self.ratio)


def nested_resolutions(base: int, levels: int) -> list[int]:
    """``base, 2 base - 1, ...``: each grid contains every node of the previous one."""
    out = [int(base)]
    for _ in range(levels - 1):
        out.append(2 * out[-1] - 1)
    return out


def convergence_study(config: ScenarioConfig, levels: int = 3, base_resolution: int | None = None,
                      mask_cells: float = 2.0) -> list[ConvergenceRow]:
    """Repeat a scenario on nested grids and tabulate errors.

    The identity residual is measured off a mask of ``mask_cells`` cells of
    the coarsest grid, held at that physical radius on every level, and only
    at nodes shared with the coarsest grid. The balance error compares the
    global integral with the residue sum. ``ratio`` is the previous level's
    identity residual over this one (NaN on the first level).
    """
    if levels < 2:
        raise ConfigError("a convergence study needs at least two levels")
    if config.scenario == "s4_instanton":
        raise ConfigError("the four-dimensional scenario has no convergence study")
    base = base_resolution or config.resolution or 65
    if base < MIN_RESOLUTION:
        raise ConfigError(f"resolution {base} below the minimum {MIN_RESOLUTION}")
    entry = SCENARIOS[config.scenario]
    phi_name = config.phi or entry["phi"]
    rows: list[ConvergenceRow] = []
    mask_radius = None
    prev = None
    for level, res in enumerate(nested_resolutions(base, levels)):
        cfg = replace(config, resolution=res)
        sc = build_scenario(cfg)
        if mask_radius is None:
            mask_radius = mask_cells * max(max(c.spacing) for c in sc.cover.charts)
        phi = by_name(phi_name, sc.F.rank)
        rep = assemble_report(sc, phi, quadrature=QuadratureSpec(config.quad_nodes),
                              mask_radius=mask_radius, jobs=config.jobs)
        ident = rep.details.pop("_identity", None)
        rep.details.pop("_transgression", None)
        stride = 2 ** level
        if ident is None:
            resid = float("nan")
        else:
            sub = (slice(None, None, stride),) * sc.cover.dim
            resid = max(float(np.max(f[sub])) for f in ident.fields.values())
        ratio = prev / resid if prev is not None and resid > 0 else float("nan")
        rows.append(ConvergenceRow(level, res, abs(rep.balance), resid, ratio))
        prev = resid
    return rows
