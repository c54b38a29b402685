"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``-v``; the criterion lines
are printed with output capture disabled so they always appear. Criterion 11
(the four-dimensional run) is marked slow and needs ``--run-slow``.
"""
import time

import numpy as np
import pytest

from chernweil.bundle import BundleData, BundleMapData, ConnectionData
from chernweil.geom import (
    Chart,
    DifferentialForm,
    MatrixForm,
    exterior_derivative,
    matrix_wedge,
    single_chart_cover,
    stereographic_sphere_cover,
)
from chernweil.invariant import by_name, double_polarize, evaluate, polarize
from chernweil.pushforward import pushforward_family
from chernweil.residue import compute_residue, homotopy_residue_compare
from chernweil.scenarios import (
    ScenarioConfig,
    build_phase_winding,
    chern_number,
    convergence_study,
    line_bundle,
    monopole_connection,
    run_scenario,
    triangulated_euler_characteristic,
)
from chernweil.transgression import QuadratureSpec, TransgressionField, double_transgress, map_homotopy_family, transgress

from oracles import double_polarize_fd, polarize_fd
from test_invariant import CASES, _nodes, _phi, random_form

FLOOR = 1e-10
PAULI = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.array([[1, 0], [0, -1]])]


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, f"criterion {number} failed: {detail}"
    return emit


_RUNS = {}


def scenario_run(name, **params):
    """Run a scenario at its default resolution once per session."""
    key = (name, tuple(sorted(params.items())))
    if key not in _RUNS:
        _RUNS[key] = run_scenario(ScenarioConfig(name, params=params))
    return _RUNS[key]


def _su2_connection_3d(x):
    f = [np.sin(x[1]) * np.cos(x[2]), np.exp(0.5 * x[0]) * x[2], np.cos(x[0] * x[1])]
    g = [x[2] * x[0], np.sin(x[0] + x[2]), x[1] ** 2]
    return np.stack([1j * (f[a][..., None, None] * PAULI[a] + g[a][..., None, None] * PAULI[(a + 1) % 3])
                     for a in range(3)])


def test_criterion_01_closedness(verdict):
    t0 = time.perf_counter()
    worst = {}
    for n in (64, 128):
        cover = stereographic_sphere_cover(2, n)
        errs = []
        for k in (1, 2, 3):
            F = line_bundle(cover, k)
            D = ConnectionData.from_callables(F, {"N": monopole_connection(k), "S": monopole_connection(k)})
            errs += [exterior_derivative(evaluate(by_name("c1", 1), Om)).max_norm() for Om in D.curvature().values()]
        worst[n] = max(errs)
    at_floor = worst[64] <= FLOOR and worst[128] <= FLOOR
    ratio_ok = worst[128] > 0 and worst[64] / worst[128] >= 3.5
    # the form d c1 has degree 3 and vanishes identically on a surface; the Bianchi
    # residual of a non-abelian connection on a 3-d chart carries the O(h^2) content
    bianchi = []
    for n in (32, 64):
        c = Chart("U", ((-1.0, 1.0),) * 3, n)
        w = MatrixForm(c, 1, _su2_connection_3d(c.points()))
        Om = exterior_derivative(w) + matrix_wedge(w, w)
        bianchi.append((exterior_derivative(Om) + matrix_wedge(w, Om) - matrix_wedge(Om, w)).max_norm())
    b_ratio = bianchi[0] / bianchi[1]
    elapsed = time.perf_counter() - t0
    ok = (at_floor or ratio_ok) and b_ratio >= 3.5 and elapsed <= 10
    verdict(1, "closedness of c1 on monopoles", ok,
            f"max|d c1| = {worst[64]:.1e} (64), {worst[128]:.1e} (128); "
            f"Bianchi residual ratio 32->64 = {b_ratio:.2f}; {elapsed:.1f}s")


def test_criterion_02_chern_integrality(verdict):
    t0 = time.perf_counter()
    cover = stereographic_sphere_cover(2, 64)
    errs = {}
    for k in (1, 2, 3):
        F = line_bundle(cover, k)
        D = ConnectionData.from_callables(F, {"N": monopole_connection(k), "S": monopole_connection(k)})
        errs[k] = abs(chern_number(D) - k)
    elapsed = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-3 and elapsed <= 10
    verdict(2, "Chern numbers of O(k)", ok,
            ", ".join(f"|c1 - {k}| = {e:.1e}" for k, e in errs.items()) + f"; {elapsed:.1f}s")


def test_criterion_03_transgression_identity(verdict):
    t0 = time.perf_counter()
    details, ok = [], True
    for name, params in (("line_zeros", {"k": 2}), ("riemann_hurwitz", {"d": 2})):
        rows = convergence_study(ScenarioConfig(name, params=params), levels=3)
        ratios = [r.ratio for r in rows[1:]]
        ok &= all(r >= 3.5 for r in ratios)
        details.append(f"{name} ratios " + ", ".join(f"{r:.2f}" for r in ratios))
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 60
    verdict(3, "transgression identity off a 2-cell mask", ok, "; ".join(details) + f"; {elapsed:.1f}s")


def test_criterion_04_section_zeros(verdict):
    t0 = time.perf_counter()
    res = scenario_run("line_zeros", k=2)
    rep = res.report
    vals = [r.residue for r in rep.residues]
    elapsed = time.perf_counter() - t0
    ok = len(vals) == 2 and all(abs(v - 1) <= 2e-2 for v in vals) and abs(rep.balance) <= 1e-2 and elapsed <= 120
    verdict(4, "residues of a section of O(2)", ok,
            f"residues {', '.join(f'{v:.4f}' for v in vals)}; balance {rep.balance:+.1e}; {elapsed:.1f}s")


def test_criterion_05_hopf_index(verdict):
    t0 = time.perf_counter()
    chi = triangulated_euler_characteristic()
    sums = {p: scenario_run("hopf", profile=p).report.residue_sum for p in ("rotational", "gradient")}
    elapsed = time.perf_counter() - t0
    ok = all(abs(s - chi) <= 2e-2 for s in sums.values()) and elapsed <= 120
    verdict(5, "vector field indices sum to the Euler characteristic", ok,
            ", ".join(f"{p} {s:.4f}" for p, s in sums.items()) + f" vs {chi}; {elapsed:.1f}s")


def test_criterion_06_riemann_hurwitz(verdict):
    t0 = time.perf_counter()
    details, ok = [], True
    for d in (2, 3):
        rep = scenario_run("riemann_hurwitz", d=d).report
        vals = [r.residue for r in rep.residues]
        ok &= len(vals) == 2 and all(abs(v - (d - 1)) <= 2e-2 for v in vals)
        ok &= abs(rep.lhs - (2 * d - 2)) <= 1e-2 and abs(rep.balance) <= 1e-2
        details.append(f"d={d}: residues {', '.join(f'{v:.4f}' for v in vals)}, lhs {rep.lhs:.4f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 180
    verdict(6, "ramification residues of z^d", ok, "; ".join(details) + f"; {elapsed:.1f}s")


def test_criterion_07_radius_independence(verdict):
    cases = [("line_zeros", {"k": 1}), ("line_zeros", {"k": 2}), ("line_zeros", {"k": 3}),
             ("hopf", {"profile": "rotational"}), ("hopf", {"profile": "gradient"}),
             ("riemann_hurwitz", {"d": 2}), ("riemann_hurwitz", {"d": 3}),
             ("surjective_demo", {"variant": "collapse"}), ("phase_winding", {"k": 2, "amplitude": 0.8})]
    worst, where = 0.0, ""
    for name, params in cases:
        for rec in scenario_run(name, **params).report.residues:
            if rec.spread > worst:
                worst, where = rec.spread, f"{name} {params} at {rec.chart}{rec.point}"
    verdict(7, "per-radius residues agree after normalization", worst <= 1e-2,
            f"largest relative spread {worst:.2e} ({where}) over {len(cases)} scenarios")


def test_criterion_08_homotopy_invariance(verdict):
    phi = by_name("c1", 1)
    s0, s1 = build_phase_winding(2, 0.0), build_phase_winding(2, 0.8)
    cmp = homotopy_residue_compare(s0, s1, phi, homotopy=lambda t: build_phase_winding(2, 0.8 * t),
                                   t_probe=(0.25, 0.5, 0.75))
    # double transgression on a non-abelian family: alpha_t = alpha_0 exp(tX) keeps both ends fixed
    X = np.array([[0.4, 0.5], [0.0, -0.2]])
    q, phi2 = QuadratureSpec(24), by_name("c2", 2)
    resid = []
    for n in (12, 24):
        cover = single_chart_cover(Chart("U", ((-1.0, 1.0),) * 3, n))
        E, F = BundleData.trivial(cover, 2, "E"), BundleData.trivial(cover, 2, "F")
        D_E, D_F = ConnectionData.trivial(E), ConnectionData.from_callables(F, {"U": _su2_connection_3d})

        def alpha_t(t, E=E, F=F):
            w, V = np.linalg.eig(X)
            expm = (V * np.exp(t * w)) @ np.linalg.inv(V)
            return BundleMapData.from_callables(E, F, {"U": lambda p: _alpha0(p) @ expm})

        T0 = transgress(pushforward_family(alpha_t(0.0), D_E, D_F), phi2, q).forms["U"]
        T1 = transgress(pushforward_family(alpha_t(1.0), D_E, D_F), phi2, q).forms["U"]
        R = double_transgress(map_homotopy_family(alpha_t, D_E, D_F, q), phi2, t_nodes=8)["U"]
        resid.append((T1 - T0 - exterior_derivative(R)).max_norm())
    ratio = resid[0] / resid[1]
    ok = cmp.discrepancy <= 1e-2 and ratio >= 3.5
    verdict(8, "homotopy invariance", ok,
            f"residues {cmp.residues_0[0]:.4f} vs {cmp.residues_1[0]:.4f}; "
            f"|T1 - T0 - dR| = {resid[0]:.2e} -> {resid[1]:.2e} (ratio {ratio:.2f})")


def _alpha0(x):
    A = np.zeros(x.shape[1:] + (2, 2), dtype=complex)
    A[..., 0, 0] = 1 + 0.3 * np.sin(x[0])
    A[..., 0, 1] = 0.3 * x[1] + 0.2j * x[2]
    A[..., 1, 0] = 0.25 * x[2] * x[0]
    A[..., 1, 1] = 1.2 + 0.3 * np.cos(x[1])
    return A


def test_criterion_09_degree_vanishing(verdict):
    checks = []
    for dim, name in ((3, "c1"), (4, "c1")):
        chart = Chart("U", ((-1.0, 1.0),) * dim, 8)
        T = TransgressionField({"U": DifferentialForm(chart, 1, np.ones((dim,) + chart.shape))}, by_name(name, 1),
                               QuadratureSpec(), "pushforward")
        rec = compute_residue(T, ("U", (0.0,) * dim), [0.5, 0.4, 0.3])
        checks.append(rec.residue == 0.0 and all(v == 0 for v in rec.per_eps) and rec.method == "degree")
    # a 2-form polynomial on a 2-d chart cannot produce a 3-form: structural zero
    chart = Chart("U", ((-1.0, 1.0),) * 2, 8)
    rng = np.random.default_rng(0)
    Om = MatrixForm(chart, 2, rng.normal(size=(1,) + chart.shape + (2, 2)))
    dphi = exterior_derivative(evaluate(by_name("c1", 2), Om))
    checks.append(dphi.identically_zero)
    four = run_scenario(ScenarioConfig("s4_instanton", resolution=10, enable_4d=True, phi="c1"))
    checks.append(all(r.residue == 0.0 and r.method == "degree" for r in four.report.residues))
    verdict(9, "residues vanish when 2 deg(phi) < codim", all(checks),
            f"{sum(checks)}/{len(checks)} structural checks exact")


def test_criterion_10_polarization(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for name, terms, degree, dim, r in CASES:
        c = Chart("U", ((0, 1),) * dim, 8)
        A, B, C = random_form(c, 1, r, rng), random_form(c, 1, r, rng), random_form(c, 2, r, rng)
        phi = _phi(terms, degree, r)
        out = polarize(phi, A, C).coeffs
        got = out.reshape(out.shape[0], -1)[:, :200]
        want = polarize_fd(phi.terms, _nodes(A, r, 200), _nodes(C, r, 200), dim, degree)
        worst = max(worst, np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want))))
        if degree >= 2:
            out2 = double_polarize(phi, A, B, C).coeffs
            got2 = out2.reshape(out2.shape[0], -1)[:, :200]
            want2 = double_polarize_fd(phi.terms, _nodes(A, r, 200), _nodes(B, r, 200), _nodes(C, r, 200),
                                       dim, degree)
            worst = max(worst, np.max(np.abs(got2 - want2)) / max(1.0, np.max(np.abs(want2))))
    elapsed = time.perf_counter() - t0
    verdict(10, "polarizations against finite differences", worst <= 1e-8 and elapsed <= 5,
            f"largest relative gap {worst:.1e} over {len(CASES)} polynomials x 200 samples; {elapsed:.1f}s")


@pytest.mark.slow
def test_criterion_11_four_sphere(verdict):
    t0 = time.perf_counter()
    res = run_scenario(ScenarioConfig("s4_instanton", resolution=24, enable_4d=True))
    (rec,) = res.report.residues
    elapsed = time.perf_counter() - t0
    verdict(11, "second Chern residue on the four-sphere", abs(rec.residue - 1) <= 5e-2 and elapsed <= 1800,
            f"residue {rec.residue:.4f}; volume integral {res.report.lhs:.4f} (not gated); {elapsed:.0f}s")
