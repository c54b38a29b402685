"""Exterior calculus on tensor-product chart grids.

Forms are stored component-wise: a p-form on an n-dimensional chart carries
one complex coefficient field per strictly increasing multi-index of length
p, in lexicographic order. Matrix-valued forms append two trailing matrix axes
to the same layout, so every kernel here (derivative, wedge, pullback,
interpolation) works on both.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "Chart",
    "ChartMismatchError",
    "DifferentialForm",
    "MatrixForm",
    "ManifoldCover",
    "SpherePatch",
    "multi_indices",
    "exterior_derivative",
    "wedge",
    "matrix_wedge",
    "integrate",
    "sphere_integrate",
    "pullback",
    "interpolate",
    "stereographic_sphere_cover",
    "single_chart_cover",
    "smooth_step",
    "form_times_matrix",
    "callable_jacobian",
]

MIN_RESOLUTION = 8


class ChartMismatchError(ValueError):
    """Raised when two forms living on different charts are combined."""


@dataclass(frozen=True)
class Chart:
    """A coordinate box sampled by a uniform tensor-product grid."""

    name: str
    box: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...] | int
    periodic: tuple[bool, ...] | None = None

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        dim = len(box)
        if dim == 0:
            raise ValueError("chart needs at least one axis")
        res = self.resolution
        if np.isscalar(res):
            res = (int(res),) * dim
        res = tuple(int(n) for n in res)
        per = self.periodic
        if per is None:
            per = (False,) * dim
        per = tuple(bool(p) for p in per)
        if len(res) != dim or len(per) != dim:
            raise ValueError("box, resolution and periodic must have equal length")
        for (a, b), n in zip(box, res):
            if not b > a:
                raise ValueError(f"empty interval ({a}, {b}) in chart {self.name!r}")
            if n < MIN_RESOLUTION:
                raise ValueError(
                    f"chart {self.name!r}: resolution {n} below minimum {MIN_RESOLUTION}"
                )
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "periodic", per)

    @property
    def dim(self) -> int:
        return len(self.box)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(
            (b - a) / n if p else (b - a) / (n - 1)
            for (a, b), n, p in zip(self.box, self.resolution, self.periodic)
        )

    def axes(self) -> list[np.ndarray]:
        out = []
        for (a, b), n, p, h in zip(self.box, self.resolution, self.periodic, self.spacing):
            out.append(a + h * np.arange(n) if p else np.linspace(a, b, n))
        return out

    def points(self) -> np.ndarray:
        """Grid node coordinates, shape ``(dim, *shape)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"))

    def with_resolution(self, resolution) -> "Chart":
        return Chart(self.name, self.box, resolution, self.periodic)

    def contains(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Boolean mask of points (``(dim, ...)``) inside the box shrunk by ``margin``."""
        pts = np.asarray(pts)
        inside = np.ones(pts.shape[1:], dtype=bool)
        for ax, ((a, b), p) in enumerate(zip(self.box, self.periodic)):
            if p:
                continue
            with np.errstate(invalid="ignore"):
                inside &= (pts[ax] >= a + margin) & (pts[ax] <= b - margin)
        return inside

    def distance_mask(self, center: Sequence[float], radius: float) -> np.ndarray:
        """Nodes within ``radius`` of ``center`` (Euclidean in coordinates)."""
        pts = self.points()
        c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * self.dim)
        return np.sqrt(np.sum((pts - c) ** 2, axis=0)) < radius


# ---------------------------------------------------------------------------
# multi-index bookkeeping

@lru_cache(maxsize=None)
def multi_indices(dim: int, p: int) -> tuple[tuple[int, ...], ...]:
    if p < 0 or p > dim:
        return ()
    return tuple(itertools.combinations(range(dim), p))


@lru_cache(maxsize=None)
def _position(dim: int, p: int) -> dict:
    return {I: k for k, I in enumerate(multi_indices(dim, p))}


@lru_cache(maxsize=None)
def _wedge_table(dim: int, p: int, q: int) -> tuple[tuple[int, int, int, int], ...]:
    rows = []
    pos = _position(dim, p + q)
    for a, I in enumerate(multi_indices(dim, p)):
        for b, J in enumerate(multi_indices(dim, q)):
            if set(I) & set(J):
                continue
            inversions = sum(1 for i in I for j in J if i > j)
            K = tuple(sorted(I + J))
            rows.append((a, b, pos[K], -1 if inversions % 2 else 1))
    return tuple(rows)


@lru_cache(maxsize=None)
def _d_table(dim: int, p: int) -> tuple[tuple[int, int, int, int], ...]:
    rows = []
    pos = _position(dim, p + 1)
    for a, I in enumerate(multi_indices(dim, p)):
        for j in range(dim):
            if j in I:
                continue
            sign = -1 if sum(1 for i in I if i < j) % 2 else 1
            rows.append((j, a, pos[tuple(sorted(I + (j,)))], sign))
    return tuple(rows)


def _partial(arr: np.ndarray, chart: Chart, axis: int, lead: int = 1) -> np.ndarray:
    """Second-order derivative of ``arr`` along grid ``axis``.

    Central differences in the interior and on periodic axes, one-sided
    second-order stencils at non-periodic box edges.
    """
    ax = lead + axis
    h = chart.spacing[axis]
    if chart.periodic[axis]:
        return (np.roll(arr, -1, axis=ax) - np.roll(arr, 1, axis=ax)) / (2.0 * h)
    return np.gradient(arr, h, axis=ax, edge_order=2)


def _as_complex(a) -> np.ndarray:
    return np.asarray(a, dtype=complex)


# ---------------------------------------------------------------------------
# forms

class DifferentialForm:
    """A complex p-form sampled on a chart grid.

    ``coeffs`` has shape ``(C(dim, p), *chart.shape)``. Degrees above the chart
    dimension only exist as structural zeros (``identically_zero=True``), which
    is how overflowing products and derivatives of top forms are reported.
    """

    __array_priority__ = 1000

    def __init__(self, chart: Chart, degree: int, coeffs=None, *, identically_zero: bool = False):
        degree = int(degree)
        if degree < 0:
            raise ValueError("negative form degree")
        if degree > chart.dim and not identically_zero:
            raise ValueError(
                f"degree {degree} exceeds chart dimension {chart.dim}; use structural_zero()"
            )
        ncomp = math.comb(chart.dim, degree) if degree <= chart.dim else 0
        if coeffs is None:
            coeffs = np.zeros((ncomp,) + chart.shape, dtype=complex)
        coeffs = _as_complex(coeffs)
        if coeffs.shape != (ncomp,) + chart.shape:
            raise ValueError(
                f"coefficient array shape {coeffs.shape} != {(ncomp,) + chart.shape}"
            )
        self.chart = chart
        self.degree = degree
        self.coeffs = coeffs
        self.identically_zero = bool(identically_zero)

    # constructors -------------------------------------------------------
    @classmethod
    def zeros(cls, chart: Chart, degree: int) -> "DifferentialForm":
        if degree > chart.dim:
            return cls.structural_zero(chart, degree)
        return cls(chart, degree)

    @classmethod
    def structural_zero(cls, chart: Chart, degree: int) -> "DifferentialForm":
        ncomp = math.comb(chart.dim, degree) if degree <= chart.dim else 0
        return cls(chart, degree, np.zeros((ncomp,) + chart.shape), identically_zero=True)

    @classmethod
    def from_components(cls, chart: Chart, degree: int, components: Mapping) -> "DifferentialForm":
        """Build from ``{multi_index: field_or_callable}``; missing components are zero.

        Callables receive the node coordinates as ``dim`` separate arrays.
        Multi-indices need not be sorted; the permutation sign is applied.
        """
        out = cls.zeros(chart, degree)
        pos = _position(chart.dim, degree)
        pts = None
        for I, val in components.items():
            I = tuple(I)
            if len(I) != degree or len(set(I)) != degree:
                raise ValueError(f"bad multi-index {I} for degree {degree}")
            sign = _perm_sign(I)
            if callable(val):
                if pts is None:
                    pts = chart.points()
                val = val(*pts)
            out.coeffs[pos[tuple(sorted(I))]] += sign * np.broadcast_to(_as_complex(val), chart.shape)
        return out

    @classmethod
    def function(cls, chart: Chart, f) -> "DifferentialForm":
        """0-form from a field or a callable of the coordinates."""
        return cls.from_components(chart, 0, {(): f})

    # access -------------------------------------------------------------
    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    def component(self, I: Sequence[int]) -> np.ndarray:
        I = tuple(I)
        sign = _perm_sign(I)
        return sign * self.coeffs[_position(self.chart.dim, self.degree)[tuple(sorted(I))]]

    def pointwise_norm(self) -> np.ndarray:
        if self.ncomp == 0:
            return np.zeros(self.chart.shape)
        return np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=0))

    def max_norm(self, mask: np.ndarray | None = None) -> float:
        """Max over nodes of the Euclidean coefficient norm; ``mask`` marks excluded nodes."""
        n = self.pointwise_norm()
        if mask is not None:
            n = np.where(mask, 0.0, n)
        return float(n.max()) if n.size else 0.0

    # arithmetic ---------------------------------------------------------
    def _check(self, other: "DifferentialForm"):
        if not isinstance(other, DifferentialForm):
            return NotImplemented
        if other.chart != self.chart:
            raise ChartMismatchError(f"charts {self.chart.name!r} and {other.chart.name!r} differ")
        if other.degree != self.degree:
            raise ValueError(f"cannot add forms of degree {self.degree} and {other.degree}")

    def __add__(self, other):
        self._check(other)
        return DifferentialForm(
            self.chart, self.degree, self.coeffs + other.coeffs,
            identically_zero=self.identically_zero and other.identically_zero,
        )

    def __sub__(self, other):
        self._check(other)
        return DifferentialForm(
            self.chart, self.degree, self.coeffs - other.coeffs,
            identically_zero=self.identically_zero and other.identically_zero,
        )

    def __neg__(self):
        return DifferentialForm(self.chart, self.degree, -self.coeffs, identically_zero=self.identically_zero)

    def __mul__(self, other):
        """Multiply by a scalar or a pointwise field of the grid shape."""
        if isinstance(other, (DifferentialForm, MatrixForm)):
            return NotImplemented
        other = np.asarray(other)
        return DifferentialForm(self.chart, self.degree, self.coeffs * other, identically_zero=self.identically_zero)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / np.asarray(other))

    def __xor__(self, other):
        return wedge(self, other)

    def d(self) -> "DifferentialForm":
        return exterior_derivative(self)

    def __repr__(self):
        flag = ", identically zero" if self.identically_zero else ""
        return f"DifferentialForm(chart={self.chart.name!r}, degree={self.degree}{flag})"


class MatrixForm:
    """A matrix of p-forms; ``coeffs`` has shape ``(C(dim, p), *chart.shape, rows, cols)``."""

    __array_priority__ = 1000

    def __init__(self, chart: Chart, degree: int, coeffs, *, identically_zero: bool = False):
        degree = int(degree)
        if degree > chart.dim and not identically_zero:
            raise ValueError(f"degree {degree} exceeds chart dimension {chart.dim}")
        coeffs = _as_complex(coeffs)
        ncomp = math.comb(chart.dim, degree) if degree <= chart.dim else 0
        if coeffs.ndim != chart.dim + 3 or coeffs.shape[: chart.dim + 1] != (ncomp,) + chart.shape:
            raise ValueError(
                f"matrix form coefficients of shape {coeffs.shape} do not fit chart "
                f"{chart.name!r} at degree {degree}"
            )
        self.chart = chart
        self.degree = degree
        self.coeffs = coeffs
        self.identically_zero = bool(identically_zero)

    @classmethod
    def zeros(cls, chart: Chart, degree: int, rows: int, cols: int | None = None) -> "MatrixForm":
        cols = rows if cols is None else cols
        ncomp = math.comb(chart.dim, degree) if degree <= chart.dim else 0
        return cls(
            chart, degree, np.zeros((ncomp,) + chart.shape + (rows, cols)),
            identically_zero=degree > chart.dim,
        )

    @classmethod
    def from_field(cls, chart: Chart, field) -> "MatrixForm":
        """Matrix-valued 0-form from an array of shape ``(*chart.shape, rows, cols)``."""
        field = _as_complex(field)
        return cls(chart, 0, field[None])

    @classmethod
    def identity(cls, chart: Chart, rank: int) -> "MatrixForm":
        eye = np.broadcast_to(np.eye(rank, dtype=complex), chart.shape + (rank, rank))
        return cls(chart, 0, eye[None].copy())

    @classmethod
    def from_entries(cls, entries: Sequence[Sequence[DifferentialForm]]) -> "MatrixForm":
        rows = len(entries)
        cols = len(entries[0])
        first = entries[0][0]
        coeffs = np.zeros(first.coeffs.shape + (rows, cols), dtype=complex)
        for i in range(rows):
            for j in range(cols):
                e = entries[i][j]
                if e.chart != first.chart:
                    raise ChartMismatchError("entries live on different charts")
                if e.degree != first.degree:
                    raise ValueError("matrix form entries must share one degree")
                coeffs[..., i, j] = e.coeffs
        return cls(first.chart, first.degree, coeffs)

    @property
    def rows(self) -> int:
        return self.coeffs.shape[-2]

    @property
    def cols(self) -> int:
        return self.coeffs.shape[-1]

    @property
    def rank(self) -> int:
        if self.rows != self.cols:
            raise ValueError("rank is only defined for square matrix forms")
        return self.rows

    @property
    def field(self) -> np.ndarray:
        """The matrix field of a 0-form, shape ``(*shape, rows, cols)``."""
        if self.degree != 0:
            raise ValueError("field is only defined for matrix 0-forms")
        return self.coeffs[0]

    def entry(self, i: int, j: int) -> DifferentialForm:
        return DifferentialForm(self.chart, self.degree, self.coeffs[..., i, j], identically_zero=self.identically_zero)

    def trace(self) -> DifferentialForm:
        return DifferentialForm(
            self.chart, self.degree, np.trace(self.coeffs, axis1=-2, axis2=-1),
            identically_zero=self.identically_zero,
        )

    def max_norm(self, mask: np.ndarray | None = None) -> float:
        if self.coeffs.shape[0] == 0 or self.coeffs.size == 0:
            return 0.0
        n = np.sqrt(np.sum(np.abs(self.coeffs) ** 2, axis=(0, -2, -1)))
        if mask is not None:
            n = np.where(mask, 0.0, n)
        return float(n.max())

    def _check(self, other):
        if not isinstance(other, MatrixForm):
            return NotImplemented
        if other.chart != self.chart:
            raise ChartMismatchError(f"charts {self.chart.name!r} and {other.chart.name!r} differ")
        if other.degree != self.degree or other.coeffs.shape != self.coeffs.shape:
            raise ValueError("matrix forms differ in degree or shape")

    def __add__(self, other):
        self._check(other)
        return MatrixForm(self.chart, self.degree, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return MatrixForm(self.chart, self.degree, self.coeffs - other.coeffs)

    def __neg__(self):
        return MatrixForm(self.chart, self.degree, -self.coeffs, identically_zero=self.identically_zero)

    def __mul__(self, other):
        if isinstance(other, (DifferentialForm, MatrixForm)):
            return NotImplemented
        other = np.asarray(other)
        if other.ndim:
            other = other[..., None, None]
        return MatrixForm(self.chart, self.degree, self.coeffs * other, identically_zero=self.identically_zero)

    __rmul__ = __mul__

    def left(self, field: np.ndarray) -> "MatrixForm":
        """Pointwise ``field @ self`` with a matrix field ``(*shape, a, rows)``."""
        return MatrixForm(self.chart, self.degree, np.matmul(field, self.coeffs))

    def right(self, field: np.ndarray) -> "MatrixForm":
        """Pointwise ``self @ field`` with a matrix field ``(*shape, cols, b)``."""
        return MatrixForm(self.chart, self.degree, np.matmul(self.coeffs, field))

    def conjugate_by(self, g: np.ndarray, g_inv: np.ndarray | None = None) -> "MatrixForm":
        """``g^{-1} self g`` pointwise."""
        if g_inv is None:
            g_inv = np.linalg.inv(g)
        return self.left(g_inv).right(g)

    def __matmul__(self, other):
        return matrix_wedge(self, other)

    def d(self) -> "MatrixForm":
        return exterior_derivative(self)

    def __repr__(self):
        return (
            f"MatrixForm(chart={self.chart.name!r}, degree={self.degree}, "
            f"shape={self.rows}x{self.cols})"
        )


def _perm_sign(I: Sequence[int]) -> int:
    inv = sum(1 for a in range(len(I)) for b in range(a + 1, len(I)) if I[a] > I[b])
    return -1 if inv % 2 else 1


# ---------------------------------------------------------------------------
# operations

def _d_coeffs(coeffs: np.ndarray, chart: Chart, p: int) -> np.ndarray:
    dim = chart.dim
    out = np.zeros((math.comb(dim, p + 1),) + coeffs.shape[1:], dtype=complex)
    by_axis: dict[int, np.ndarray] = {}
    for j, a, k, sign in _d_table(dim, p):
        if j not in by_axis:
            by_axis[j] = _partial(coeffs, chart, j)
        if sign > 0:
            out[k] += by_axis[j][a]
        else:
            out[k] -= by_axis[j][a]
    return out


def exterior_derivative(f):
    """Exterior derivative of a scalar or matrix form.

    Top-degree input yields a structural zero of degree ``dim + 1``.
    """
    chart = f.chart
    if f.degree >= chart.dim or f.identically_zero:
        if isinstance(f, MatrixForm):
            return MatrixForm.zeros(chart, f.degree + 1, f.rows, f.cols)
        return DifferentialForm.structural_zero(chart, f.degree + 1)
    coeffs = _d_coeffs(f.coeffs, chart, f.degree)
    if isinstance(f, MatrixForm):
        return MatrixForm(chart, f.degree + 1, coeffs)
    return DifferentialForm(chart, f.degree + 1, coeffs)


def _wedge_coeffs(a: np.ndarray, b: np.ndarray, dim: int, p: int, q: int, product) -> np.ndarray:
    out = None
    for i, j, k, sign in _wedge_table(dim, p, q):
        term = product(a[i], b[j])
        if out is None:
            out = np.zeros((math.comb(dim, p + q),) + term.shape, dtype=complex)
        if sign > 0:
            out[k] += term
        else:
            out[k] -= term
    return out


def wedge(a: DifferentialForm, b: DifferentialForm) -> DifferentialForm:
    if a.chart != b.chart:
        raise ChartMismatchError(f"charts {a.chart.name!r} and {b.chart.name!r} differ")
    chart = a.chart
    deg = a.degree + b.degree
    if deg > chart.dim or a.identically_zero or b.identically_zero:
        return DifferentialForm.zeros(chart, deg) if deg <= chart.dim else DifferentialForm.structural_zero(chart, deg)
    coeffs = _wedge_coeffs(a.coeffs, b.coeffs, chart.dim, a.degree, b.degree, np.multiply)
    return DifferentialForm(chart, deg, coeffs)


def matrix_wedge(A: MatrixForm, B: MatrixForm) -> MatrixForm:
    """Matrix product with entrywise wedge: ``(A^B)_ik = sum_j A_ij ^ B_jk``."""
    if A.chart != B.chart:
        raise ChartMismatchError(f"charts {A.chart.name!r} and {B.chart.name!r} differ")
    if A.cols != B.rows:
        raise ValueError(f"rank mismatch: {A.rows}x{A.cols} times {B.rows}x{B.cols}")
    chart = A.chart
    deg = A.degree + B.degree
    if deg > chart.dim or A.identically_zero or B.identically_zero:
        return MatrixForm.zeros(chart, deg, A.rows, B.cols)
    coeffs = _wedge_coeffs(A.coeffs, B.coeffs, chart.dim, A.degree, B.degree, np.matmul)
    return MatrixForm(chart, deg, coeffs)


def form_times_matrix(f: DifferentialForm, M: MatrixForm) -> MatrixForm:
    """Wedge of a scalar form (on the left) with a matrix form."""
    if f.chart != M.chart:
        raise ChartMismatchError("charts differ")
    chart = f.chart
    deg = f.degree + M.degree
    if deg > chart.dim or f.identically_zero or M.identically_zero:
        return MatrixForm.zeros(chart, deg, M.rows, M.cols)
    coeffs = _wedge_coeffs(
        f.coeffs, M.coeffs, chart.dim, f.degree, M.degree,
        lambda x, y: x[..., None, None] * y,
    )
    return MatrixForm(chart, deg, coeffs)


# ---------------------------------------------------------------------------
# interpolation

def _lagrange4(t: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights for nodes 0..3 evaluated at offset ``t``."""
    return np.stack(
        [
            -(t - 1) * (t - 2) * (t - 3) / 6.0,
            t * (t - 2) * (t - 3) / 2.0,
            -t * (t - 1) * (t - 3) / 2.0,
            t * (t - 1) * (t - 2) / 6.0,
        ],
        axis=-1,
    )


def _stencils(chart: Chart, pts: np.ndarray, tol: float = 1e-9):
    idx, wts = [], []
    for ax in range(chart.dim):
        a, b = chart.box[ax]
        h = chart.spacing[ax]
        n = chart.resolution[ax]
        u = (pts[ax] - a) / h
        if chart.periodic[ax]:
            i0 = np.floor(u).astype(int) - 1
            t = u - i0
            ii = np.mod(i0[:, None] + np.arange(4), n)
        else:
            if not np.all(np.isfinite(u)) or u.min() < -tol * n or u.max() > (n - 1) * (1 + tol):
                raise ValueError(f"point escapes chart {chart.name!r} along axis {ax}")
            i0 = np.clip(np.floor(u).astype(int) - 1, 0, n - 4)
            t = u - i0
            ii = i0[:, None] + np.arange(4)
        idx.append(ii)
        wts.append(_lagrange4(t))
    return idx, wts


def interpolate(arr: np.ndarray, chart: Chart, pts: np.ndarray, lead: int = 1) -> np.ndarray:
    """Tensor-product cubic interpolation of a sampled field.

    ``arr`` has ``lead`` leading axes, then the grid axes, then any trailing
    axes. ``pts`` has shape ``(dim, *P)``. Returns ``(*lead, *P, *trailing)``.
    Local four-point stencils keep singular values near a puncture from
    leaking further than two cells.
    """
    pts = np.asarray(pts, dtype=float)
    pshape = pts.shape[1:]
    flat = pts.reshape(chart.dim, -1)
    lead_shape = arr.shape[:lead]
    tail_shape = arr.shape[lead + chart.dim:]
    g = np.moveaxis(arr.reshape((int(np.prod(lead_shape, dtype=int)),) + arr.shape[lead:]), 0, chart.dim)
    g = g.reshape(chart.shape + (-1,))
    idx, wts = _stencils(chart, flat)
    M = flat.shape[1]
    out = np.zeros((M, g.shape[-1]), dtype=g.dtype if np.iscomplexobj(g) else float)
    for combo in itertools.product(range(4), repeat=chart.dim):
        w = np.ones(M)
        sel = []
        for ax, c in enumerate(combo):
            w = w * wts[ax][:, c]
            sel.append(idx[ax][:, c])
        out += w[:, None] * g[tuple(sel)]
    out = out.reshape((M,) + tuple(lead_shape) + tuple(tail_shape)) if lead_shape or tail_shape else out.reshape(M)
    out = np.moveaxis(out.reshape((M,) + (int(np.prod(lead_shape, dtype=int)),) + tuple(tail_shape)), 0, 1)
    return out.reshape(tuple(lead_shape) + pshape + tuple(tail_shape))


# ---------------------------------------------------------------------------
# pullback

def callable_jacobian(fn: Callable[[np.ndarray], np.ndarray], pts: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a coordinate map given as a callable.

    Returns ``J[a, b] = d fn^a / d x^b`` with shape ``(out_dim, in_dim, *P)``.
    The step is tiny compared with any grid spacing, so the result is exact
    for grid purposes (error about ``step**2``).
    """
    pts = np.asarray(pts, dtype=float)
    cols = []
    for b in range(pts.shape[0]):
        e = np.zeros((pts.shape[0],) + (1,) * (pts.ndim - 1))
        e[b] = step
        cols.append((np.asarray(fn(pts + e)) - np.asarray(fn(pts - e))) / (2.0 * step))
    return np.stack(cols, axis=1)


def _jacobian(mapping: np.ndarray, chart: Chart) -> np.ndarray:
    """``J[a, b] = d mapping^a / d y^b`` on the grid, shape ``(src, tgt, *shape)``."""
    return np.stack(
        [np.stack([_partial(mapping[a], chart, b, lead=0) for b in range(chart.dim)]) for a in range(mapping.shape[0])]
    )


def _minors(J: np.ndarray, p: int) -> dict:
    """Determinants of all ``p x p`` minors of ``J``, keyed by (row set, column set)."""
    src_dim, tgt_dim = J.shape[:2]
    out = {}
    Jm = np.moveaxis(np.moveaxis(J, 0, -1), 0, -1)  # (*shape, src, tgt)
    for I in multi_indices(src_dim, p):
        for K in multi_indices(tgt_dim, p):
            if p == 0:
                out[I, K] = np.ones(J.shape[2:])
            else:
                out[I, K] = np.linalg.det(Jm[..., list(I), :][..., list(K)])
    return out


def pullback(f, mapping: np.ndarray, target: Chart, jacobian: np.ndarray | None = None):
    """Pull a scalar or matrix form back along a sampled map.

    ``mapping`` has shape ``(f.chart.dim, *target.shape)`` and gives, at every
    node of ``target``, the source-chart coordinates of its image. The
    Jacobian defaults to second-order differences of the samples.
    """
    src = f.chart
    mapping = np.asarray(mapping, dtype=float)
    if mapping.shape != (src.dim,) + target.shape:
        raise ValueError(f"mapping shape {mapping.shape} != {(src.dim,) + target.shape}")
    p = f.degree
    is_matrix = isinstance(f, MatrixForm)
    if p > target.dim or f.identically_zero:
        if is_matrix:
            return MatrixForm.zeros(target, p, f.rows, f.cols)
        return DifferentialForm.zeros(target, p)
    if not np.all(src.contains(mapping, margin=-1e-9 * max(b - a for a, b in src.box))):
        raise ValueError(f"image escapes source chart {src.name!r}")
    values = interpolate(f.coeffs, src, mapping)  # (ncomp_src, *tshape, *tail)
    J = _jacobian(mapping, target) if jacobian is None else jacobian
    minors = _minors(J, p)
    tail = values.shape[1 + target.dim:]
    out = np.zeros((math.comb(target.dim, p),) + target.shape + tail, dtype=complex)
    src_idx = multi_indices(src.dim, p)
    expand = (slice(None),) * target.dim + (None,) * len(tail)
    for k, K in enumerate(multi_indices(target.dim, p)):
        for a, I in enumerate(src_idx):
            out[k] += values[a] * minors[I, K][expand]
    if is_matrix:
        return MatrixForm(target, p, out)
    return DifferentialForm(target, p, out)


# ---------------------------------------------------------------------------
# covers and integration

def smooth_step(x: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for x <= 0, 1 for x >= 1, with s(x) + s(1 - x) = 1."""
    x = np.asarray(x, dtype=float)

    def psi(t):
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a = psi(x)
    b = psi(1.0 - x)
    return a / (a + b)


@dataclass(frozen=True, eq=False)
class ManifoldCover:
    """Charts of a compact oriented manifold with a partition of unity.

    ``partition[name]`` maps chart coordinates ``(dim, ...)`` to weights;
    ``transitions[(i, j)]`` maps chart-i coordinates to chart-j coordinates
    (non-finite output means the point is not in chart j).
    """

    charts: tuple[Chart, ...]
    partition: Mapping[str, Callable[[np.ndarray], np.ndarray]]
    transitions: Mapping[tuple[str, str], Callable[[np.ndarray], np.ndarray]]

    def __post_init__(self):
        names = [c.name for c in self.charts]
        if len(set(names)) != len(names):
            raise ValueError("chart names must be unique")
        dims = {c.dim for c in self.charts}
        if len(dims) != 1:
            raise ValueError("all charts of a cover share one dimension")
        object.__setattr__(self, "_weights", {})

    @property
    def dim(self) -> int:
        return self.charts[0].dim

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.charts]

    def chart(self, name: str) -> Chart:
        for c in self.charts:
            if c.name == name:
                return c
        raise KeyError(name)

    def weights(self, name: str) -> np.ndarray:
        if name not in self._weights:
            self._weights[name] = np.asarray(self.partition[name](self.chart(name).points()), dtype=float)
        return self._weights[name]

    def transition_points(self, i: str, j: str, pts: np.ndarray | None = None):
        """Images in chart ``j`` of chart-``i`` points and the mask of those inside chart ``j``."""
        if pts is None:
            pts = self.chart(i).points()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            img = np.asarray(self.transitions[i, j](pts), dtype=float)
        ok = np.all(np.isfinite(img), axis=0) & self.chart(j).contains(img)
        return img, ok

    def overlap_mask(self, i: str, j: str, margin_cells: float = 0.0) -> np.ndarray:
        img, ok = self.transition_points(i, j)
        if margin_cells:
            cj = self.chart(j)
            ok &= cj.contains(img, margin=margin_cells * max(cj.spacing))
        return ok

    def check_partition(self, tol: float = 1e-10) -> float:
        """Largest deviation of the summed weights from one over all nodes."""
        worst = 0.0
        for ci in self.charts:
            pts = ci.points()
            total = np.asarray(self.partition[ci.name](pts), dtype=float).copy()
            if np.any(total < -tol):
                raise ValueError(f"negative partition weight on chart {ci.name!r}")
            for cj in self.charts:
                if cj.name == ci.name or (ci.name, cj.name) not in self.transitions:
                    continue
                img, ok = self.transition_points(ci.name, cj.name, pts)
                safe = np.where(ok, img, np.asarray([np.mean(iv) for iv in cj.box]).reshape((-1,) + (1,) * ci.dim))
                total += np.where(ok, self.partition[cj.name](safe), 0.0)
            worst = max(worst, float(np.max(np.abs(total - 1.0))))
        if worst > tol:
            raise ValueError(f"partition of unity violated by {worst:.3e}")
        return worst

    def check_transitions(self, tol: float = 1e-10) -> float:
        worst = 0.0
        for (i, j) in self.transitions:
            if (j, i) not in self.transitions:
                continue
            img, ok = self.transition_points(i, j)
            back, ok2 = self.transition_points(j, i, img)
            sel = ok & ok2
            if np.any(sel):
                worst = max(worst, float(np.max(np.abs(back - self.chart(i).points())[:, sel])))
        if worst > tol:
            raise ValueError(f"transition maps are not mutually inverse (error {worst:.3e})")
        return worst

    def with_resolution(self, resolution) -> "ManifoldCover":
        return ManifoldCover(
            tuple(c.with_resolution(resolution) for c in self.charts), self.partition, self.transitions
        )


def _quadrature_weights(chart: Chart) -> np.ndarray:
    w = np.ones(chart.shape)
    for ax, (h, p) in enumerate(zip(chart.spacing, chart.periodic)):
        wa = np.full(chart.resolution[ax], h)
        if not p:
            wa[0] = wa[-1] = h / 2.0
        shape = [1] * chart.dim
        shape[ax] = -1
        w = w * wa.reshape(shape)
    return w


def integrate(cover: ManifoldCover, forms: Mapping[str, DifferentialForm], mask: Mapping[str, np.ndarray] | None = None) -> complex:
    """Partition-of-unity weighted sum of top-degree forms over all charts.

    Non-periodic axes use trapezoid end weights, which coincide with the
    plain Riemann sum whenever the partition weight vanishes at the box edge.
    ``mask`` optionally excludes nodes (``True`` = excluded) per chart.
    """
    total = 0.0 + 0.0j
    for chart in cover.charts:
        if chart.name not in forms:
            continue
        f = forms[chart.name]
        if f.chart != chart:
            raise ChartMismatchError(f"form for {chart.name!r} lives on {f.chart.name!r}")
        if f.degree != chart.dim:
            raise ValueError(f"integrand has degree {f.degree}, expected top degree {chart.dim}")
        w = cover.weights(chart.name) * _quadrature_weights(chart)
        integrand = f.coeffs[0] * w
        if mask is not None and chart.name in mask:
            integrand = np.where(mask[chart.name], 0.0, integrand)
        total += complex(np.sum(integrand))
    return total


def single_chart_cover(chart: Chart) -> ManifoldCover:
    return ManifoldCover((chart,), {chart.name: lambda x: np.ones(x.shape[1:])}, {})


def _reflected_inversion(x: np.ndarray) -> np.ndarray:
    """Orientation-preserving chart change between stereographic charts."""
    r2 = np.sum(x ** 2, axis=0)
    y = x / r2
    y[-1] = -y[-1]
    return y


def stereographic_sphere_cover(dim: int = 2, resolution=128, half_width: float = 1.12, blend: float = 1.08) -> ManifoldCover:
    """Two stereographic charts ``N`` and ``S`` of the round ``dim``-sphere.

    For ``dim = 2`` the chart change is ``w = 1/z``. The partition weight of
    ``N`` is a smooth function of ``log|x|`` that drops from 1 at
    ``|x| = 1/blend`` to 0 at ``|x| = blend``; the weight of ``S`` is its mirror,
    so they sum to one exactly.
    """
    if not 1.0 < blend < half_width:
        raise ValueError("need 1 < blend < half_width")
    box = ((-half_width, half_width),) * dim
    north = Chart("N", box, resolution)
    south = Chart("S", box, resolution)
    delta = math.log(blend)

    def weight(x):
        r2 = np.sum(np.asarray(x) ** 2, axis=0)
        with np.errstate(divide="ignore"):
            t = 0.5 * np.log(np.where(r2 > 0, r2, 1e-300)) / delta
        return 1.0 - smooth_step((t + 1.0) / 2.0)

    return ManifoldCover(
        (north, south),
        {"N": weight, "S": weight},
        {("N", "S"): _reflected_inversion, ("S", "N"): _reflected_inversion},
    )


# ---------------------------------------------------------------------------
# spheres

@dataclass(frozen=True)
class SpherePatch:
    """The coordinate sphere of radius ``radius`` around ``center`` in ``chart``."""

    chart: Chart
    center: tuple[float, ...]
    radius: float
    resolution: int | tuple[int, ...] | None = None

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        object.__setattr__(self, "center", center)
        if len(center) != self.chart.dim:
            raise ValueError("center dimension does not match the chart")
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        for (a, b), c, p in zip(self.chart.box, center, self.chart.periodic):
            if p:
                continue
            if not (a < c - self.radius and c + self.radius < b):
                raise ValueError(
                    f"sphere of radius {self.radius} around {center} exits chart {self.chart.name!r}"
                )

    @property
    def dim_fiber(self) -> int:
        return self.chart.dim - 1

    def angular_resolution(self) -> tuple[int, ...]:
        n = self.chart.dim
        if self.resolution is not None:
            res = self.resolution
            return (int(res),) * (n - 1) if np.isscalar(res) else tuple(int(r) for r in res)
        h = min(self.chart.spacing)
        per_turn = max(64, int(math.ceil(8 * 2 * math.pi * self.radius / h)))
        if n == 2:
            return (per_turn,)
        polar = max(16, per_turn // 4)
        return (polar,) * (n - 2) + (per_turn // 2 if n > 3 else per_turn,)

    def parametrization(self):
        """Nodes, tangent frames and weights of the angular quadrature.

        Returns ``(points (n, M), tangents (n-1, n, M), weights (M,))`` with the
        tangent frame ordered so the sphere carries the outward orientation.
        """
        n = self.chart.dim
        res = self.angular_resolution()
        grids, wgrids = [], []
        for k in range(n - 2):
            x, w = np.polynomial.legendre.leggauss(res[k])
            grids.append((x + 1) * math.pi / 2)
            wgrids.append(w * math.pi / 2)
        m = res[-1]
        grids.append(np.arange(m) * 2 * math.pi / m)
        wgrids.append(np.full(m, 2 * math.pi / m))
        angles = np.meshgrid(*grids, indexing="ij")
        weights = np.ones_like(angles[0])
        for k, wg in enumerate(wgrids):
            shape = [1] * (n - 1)
            shape[k] = -1
            weights = weights * wg.reshape(shape)
        ang = [a.ravel() for a in angles]
        M = ang[0].size
        # factor table: coordinate m is the product over angle k of fac[m][k]
        fac = [[None] * (n - 1) for _ in range(n)]
        for m in range(n):
            for k in range(n - 1):
                if m == n - 1:
                    kind = "sin" if k <= n - 2 else "one"
                elif k < m:
                    kind = "sin"
                elif k == m:
                    kind = "cos"
                else:
                    kind = "one"
                fac[m][k] = kind
        val = {"sin": np.sin, "cos": np.cos, "one": lambda t: np.ones_like(t)}
        der = {"sin": np.cos, "cos": lambda t: -np.sin(t), "one": lambda t: np.zeros_like(t)}
        pts = np.empty((n, M))
        tang = np.empty((n - 1, n, M))
        for m in range(n):
            vals = [val[fac[m][k]](ang[k]) for k in range(n - 1)]
            pts[m] = self.radius * np.prod(vals, axis=0)
            for j in range(n - 1):
                vv = list(vals)
                vv[j] = der[fac[m][j]](ang[j])
                tang[j, m] = self.radius * np.prod(vv, axis=0)
        # orientation: (outward normal, tangents) must be positively oriented
        probe = int(np.argmax(weights.ravel()))
        frame = np.column_stack([pts[:, probe] / self.radius] + [tang[j, :, probe] for j in range(n - 1)])
        if np.linalg.det(frame) < 0:
            tang[0] = -tang[0]
        center = np.asarray(self.center).reshape(n, 1)
        return pts + center, tang, weights.ravel()


def sphere_integrate(f: DifferentialForm, s: SpherePatch) -> complex:
    """Integral of an ``(n-1)``-form over an outward-oriented coordinate sphere."""
    if f.chart != s.chart:
        raise ChartMismatchError("form and sphere live on different charts")
    n = s.chart.dim
    if f.degree != n - 1:
        raise ValueError(f"degree mismatch: sphere integrand needs degree {n - 1}, got {f.degree}")
    if f.identically_zero:
        return 0.0 + 0.0j
    pts, tang, w = s.parametrization()
    vals = interpolate(f.coeffs, s.chart, pts)  # (ncomp, M)
    total = np.zeros(pts.shape[1], dtype=complex)
    T = np.moveaxis(tang, -1, 0)  # (M, n-1, n)
    for a, I in enumerate(multi_indices(n, n - 1)):
        sub = T[:, :, list(I)]  # rows: tangents, cols: coordinates in I
        total += vals[a] * np.linalg.det(sub)
    return complex(np.sum(total * w))
