"""Ad-invariant polynomials written in power sums ``s_j(X) = tr(X^j)``.

A polynomial is stored as a map from partitions (sorted tuples of power-sum
indices) to complex coefficients; the normalization constant of each class is
already folded into the coefficients. Evaluation on matrix-valued forms and
both polarizations run through one expansion routine that works over the
exterior algebra extended by odd formal parameters, so the graded signs come
out of the algebra instead of being derived by hand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .geom import DifferentialForm, MatrixForm, matrix_wedge, wedge

__all__ = [
    "InvariantPolynomial",
    "make_chern",
    "make_pontryagin",
    "make_chern_character",
    "make_L1",
    "from_power_sums",
    "by_name",
    "evaluate",
    "evaluate_numeric",
    "polarize",
    "double_polarize",
    "expand_parameters",
]

CHERN_FACTOR = 1j / (2.0 * math.pi)


@dataclass(frozen=True)
class InvariantPolynomial:
    """Homogeneous polynomial in power sums of a rank-``rank`` matrix.

    ``degree`` counts curvature slots, so evaluation on a curvature matrix
    yields a form of degree ``2 * degree``. ``is_zero`` marks classes that are
    identically zero for the given rank (for example ``c_k`` with ``k > rank``).
    """

    name: str
    degree: int
    terms: Mapping[tuple[int, ...], complex] = field(default_factory=dict)
    rank: int | None = None
    normalization: str = "(i/2pi)^k"
    is_zero: bool = False

    def __post_init__(self):
        clean = {}
        for part, coef in dict(self.terms).items():
            part = tuple(sorted(int(j) for j in part))
            if any(j < 1 for j in part):
                raise ValueError(f"power-sum index must be positive in {part}")
            if sum(part) != self.degree:
                raise ValueError(f"monomial {part} has weight {sum(part)}, expected {self.degree}")
            if coef != 0:
                clean[part] = clean.get(part, 0) + complex(coef)
        object.__setattr__(self, "terms", clean)

    def __add__(self, other: "InvariantPolynomial") -> "InvariantPolynomial":
        if other.degree != self.degree:
            raise ValueError("cannot add invariant polynomials of different degree")
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0) + v
        return InvariantPolynomial(f"{self.name}+{other.name}", self.degree, terms, self.rank, self.normalization)

    def scaled(self, factor: complex, name: str | None = None) -> "InvariantPolynomial":
        return InvariantPolynomial(
            name or f"{factor}*{self.name}", self.degree,
            {k: factor * v for k, v in self.terms.items()}, self.rank, self.normalization, self.is_zero,
        )

    def form_degree(self) -> int:
        return 2 * self.degree


def _elementary_in_power_sums(k: int) -> dict[tuple[int, ...], Fraction]:
    """Newton's identities: ``e_k`` as a polynomial in ``p_1, ..., p_k``."""
    e: list[dict] = [{(): Fraction(1)}]
    for n in range(1, k + 1):
        acc: dict = {}
        for i in range(1, n + 1):
            sign = 1 if i % 2 == 1 else -1
            for part, coef in e[n - i].items():
                key = tuple(sorted(part + (i,)))
                acc[key] = acc.get(key, Fraction(0)) + sign * coef / n
        e.append({p: c for p, c in acc.items() if c != 0})
    return e[k]


def from_power_sums(name: str, terms: Mapping[tuple[int, ...], complex], degree: int | None = None,
                    rank: int | None = None, normalization: str = "user") -> InvariantPolynomial:
    """User polynomial from explicit power-sum monomials (coefficients used as given)."""
    if degree is None:
        degree = sum(next(iter(terms))) if terms else 0
    return InvariantPolynomial(name, degree, terms, rank, normalization)


def make_chern(k: int, r: int) -> InvariantPolynomial:
    """k-th Chern form ``(i/2pi)^k e_k`` of a rank-``r`` bundle."""
    if k < 0:
        raise ValueError("negative Chern index")
    if k > r:
        return InvariantPolynomial(f"c{k}", k, {}, r, is_zero=True)
    factor = CHERN_FACTOR ** k
    terms = {p: complex(c) * factor for p, c in _elementary_in_power_sums(k).items()}
    return InvariantPolynomial(f"c{k}", k, terms, r)


def make_pontryagin(k: int, r: int) -> InvariantPolynomial:
    """k-th Pontryagin form, ``(-1)^k c_{2k}`` of the complexified curvature."""
    c = make_chern(2 * k, r)
    p = c.scaled((-1) ** k, name=f"p{k}")
    return InvariantPolynomial(p.name, p.degree, p.terms, r, "(-1)^k c_2k", c.is_zero)


def make_chern_character(max_degree: int, r: int) -> list[InvariantPolynomial]:
    """Homogeneous pieces ``ch_j = (i/2pi)^j s_j / j!`` for ``j = 0..max_degree``.

    The degree-0 piece is the constant ``r`` and is returned as a polynomial
    with the empty partition.
    """
    out = [InvariantPolynomial("ch0", 0, {(): complex(r)}, r, "rank")]
    for j in range(1, max_degree + 1):
        out.append(InvariantPolynomial(f"ch{j}", j, {(j,): CHERN_FACTOR ** j / math.factorial(j)}, r))
    return out


def make_L1(r: int) -> InvariantPolynomial:
    """First Hirzebruch polynomial ``p_1 / 3``."""
    p1 = make_pontryagin(1, r)
    return InvariantPolynomial("L1", p1.degree, {k: v / 3 for k, v in p1.terms.items()}, r, "p1/3", p1.is_zero)


def by_name(name: str, r: int) -> InvariantPolynomial:
    """Parse ``c<k>``, ``p<k>``, ``ch<k>`` or ``L1``."""
    name = name.strip()
    if name == "L1":
        return make_L1(r)
    if name.startswith("ch") and name[2:].isdigit():
        return make_chern_character(int(name[2:]), r)[int(name[2:])]
    if name[:1] in ("c", "p") and name[1:].isdigit():
        k = int(name[1:])
        return make_chern(k, r) if name[0] == "c" else make_pontryagin(k, r)
    raise ValueError(f"unknown invariant polynomial {name!r}")


# ---------------------------------------------------------------------------
# expansion over odd parameters

def _merge(mu: tuple[str, ...], nu: tuple[str, ...]) -> tuple[int, tuple[str, ...]] | None:
    """Product of two parameter monomials; ``None`` if a parameter repeats."""
    if set(mu) & set(nu):
        return None
    seq = list(mu + nu)
    sign = 1
    for i in range(len(seq)):
        for j in range(len(seq) - 1 - i):
            if seq[j] > seq[j + 1]:
                seq[j], seq[j + 1] = seq[j + 1], seq[j]
                sign = -sign
    return sign, tuple(seq)


def _allowed(mono: tuple[str, ...], target: tuple[str, ...]) -> bool:
    return set(mono) <= set(target)


def _super_product(X: dict, Y: dict, target: tuple[str, ...], product) -> dict:
    """Product in (forms) x (exterior algebra on the parameters).

    An element ``mu (x) a`` means parameter monomial ``mu`` to the left of the
    form ``a``. Moving ``nu`` to the left across ``a`` costs ``(-1)^{deg a |nu|}``.
    """
    out: dict = {}
    for mu, a in X.items():
        for nu, b in Y.items():
            merged = _merge(mu, nu)
            if merged is None:
                continue
            sign, mono = merged
            if not _allowed(mono, target):
                continue
            if (a.degree * len(nu)) % 2:
                sign = -sign
            term = product(a, b)
            if term.identically_zero:
                continue
            term = -term if sign < 0 else term
            out[mono] = out[mono] + term if mono in out else term
    return out


def _matmul_forms(a: MatrixForm, b: MatrixForm) -> MatrixForm:
    return matrix_wedge(a, b)


def expand_parameters(phi: InvariantPolynomial, X: Mapping[tuple[str, ...], MatrixForm],
                      target: tuple[str, ...]) -> DifferentialForm | None:
    """Coefficient of the parameter monomial ``target`` in ``phi(X)``.

    ``X`` maps parameter monomials (tuples of parameter names, ``()`` for the
    constant part) to matrix forms. Parameters are odd, and ``target`` must be
    sorted. Returns ``None`` when no term survives.
    """
    target = tuple(sorted(target))
    X = {tuple(sorted(k)): v for k, v in X.items() if _allowed(tuple(sorted(k)), target)}
    if not phi.terms:
        return None
    jmax = max(max(p) for p in phi.terms if p) if any(phi.terms) else 0
    sums: dict[int, dict] = {}
    power = dict(X)
    for j in range(1, jmax + 1):
        if j > 1:
            power = _super_product(power, X, target, _matmul_forms)
        sums[j] = {mono: M.trace() for mono, M in power.items()}
    result: DifferentialForm | None = None
    for part, coef in sorted(phi.terms.items()):
        if not part:
            continue
        acc = sums[part[0]]
        for j in part[1:]:
            acc = _super_product(acc, sums[j], target, wedge)
        if target in acc:
            term = acc[target] * coef
            result = term if result is None else result + term
    return result


def _zero_like(chart, degree: int) -> DifferentialForm:
    return DifferentialForm.zeros(chart, degree)


def _check_rank(phi: InvariantPolynomial, *mats: MatrixForm):
    ranks = {m.rank for m in mats}
    if len(ranks) != 1:
        raise ValueError(f"rank mismatch among arguments: {sorted(ranks)}")
    charts = {id(m.chart) for m in mats}
    if len({m.chart for m in mats}) != 1 and len(charts) != 1:
        raise ValueError("arguments live on different charts")


def evaluate(phi: InvariantPolynomial, Omega: MatrixForm) -> DifferentialForm:
    """``phi(Omega)``: a form of degree ``2 deg phi`` (structural zero if too large)."""
    _check_rank(phi, Omega)
    chart = Omega.chart
    if phi.degree == 0:
        const = phi.terms.get((), 0)
        return DifferentialForm.function(chart, np.full(chart.shape, const, dtype=complex))
    if phi.is_zero or Omega.rank == 0:
        return _zero_like(chart, 2 * phi.degree)
    res = expand_parameters(phi, {(): Omega}, ())
    return _zero_like(chart, 2 * phi.degree) if res is None else res


def polarize(phi: InvariantPolynomial, A: MatrixForm, C: MatrixForm) -> DifferentialForm:
    """Coefficient of ``s`` in ``phi(C + s A)``; degree ``2 deg phi - 1``."""
    _check_rank(phi, A, C)
    chart = C.chart
    deg = 2 * phi.degree - 1
    if phi.is_zero or phi.degree == 0 or C.rank == 0:
        return _zero_like(chart, max(deg, 0))
    res = expand_parameters(phi, {(): C, ("s",): A}, ("s",))
    return _zero_like(chart, deg) if res is None else res


def double_polarize(phi: InvariantPolynomial, A: MatrixForm, B: MatrixForm, C: MatrixForm) -> DifferentialForm:
    """Coefficient of ``s t`` in ``phi(C + s A + t B)`` with odd ``s, t``.

    Swapping ``A`` and ``B`` flips the sign (the parameters anticommute).
    Degree ``2 deg phi - 2``.
    """
    _check_rank(phi, A, B, C)
    chart = C.chart
    deg = 2 * phi.degree - 2
    if phi.is_zero or phi.degree < 2 or C.rank == 0:
        return _zero_like(chart, max(deg, 0))
    res = expand_parameters(phi, {(): C, ("s",): A, ("t",): B}, ("s", "t"))
    return _zero_like(chart, deg) if res is None else res


def evaluate_numeric(phi: InvariantPolynomial, M: np.ndarray) -> np.ndarray:
    """Evaluate on ordinary (commuting-entry) matrices ``(..., r, r)``."""
    M = np.asarray(M, dtype=complex)
    if not phi.terms:
        return np.zeros(M.shape[:-2], dtype=complex)
    jmax = max((max(p) for p in phi.terms if p), default=0)
    sums = {}
    P = np.broadcast_to(np.eye(M.shape[-1]), M.shape).astype(complex)
    for j in range(1, jmax + 1):
        P = P @ M
        sums[j] = np.trace(P, axis1=-2, axis2=-1)
    out = np.zeros(M.shape[:-2], dtype=complex)
    for part, coef in phi.terms.items():
        term = np.full(M.shape[:-2], coef, dtype=complex)
        for j in part:
            term = term * sums[j]
        out = out + term
    return out
