"""Affine charts, metric fields, finite differences and quadrature.

Fields are numpy arrays whose leading axes are the grid axes of a
:class:`Chart`; any trailing axes (for instance an ``r x r`` matrix block)
are carried along untouched by the stencils.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


class GeometryError(ValueError):
    """Raised for malformed charts, metrics or fields."""


@dataclass(frozen=True)
class Chart:
    """Rectangular affine coordinate patch.

    Args:
        lengths: Side length of each axis.
        points: Number of grid points per axis (at least 4).
        topology: ``"periodic"`` or ``"dirichlet"`` per axis.
        origin: Coordinate of the first grid point on each axis.
    """

    lengths: tuple[float, ...]
    points: tuple[int, ...]
    topology: tuple[str, ...]
    origin: tuple[float, ...] | None = None

    def __post_init__(self):
        n = len(self.lengths)
        if not 1 <= n <= 3:
            raise GeometryError(f"chart dimension must be 1..3, got {n}")
        if len(self.points) != n or len(self.topology) != n:
            raise GeometryError("lengths, points and topology must have equal length")
        for L, N, top in zip(self.lengths, self.points, self.topology):
            if not L > 0:
                raise GeometryError(f"axis length must be positive, got {L}")
            if int(N) < 4:
                raise GeometryError(f"need at least 4 points per axis, got {N}")
            if top not in (PERIODIC, DIRICHLET):
                raise GeometryError(f"unknown topology {top!r}")
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "points", tuple(int(v) for v in self.points))
        object.__setattr__(self, "topology", tuple(self.topology))
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * n)
        else:
            object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @classmethod
    def periodic(cls, lengths: Sequence[float], points: Sequence[int]) -> "Chart":
        return cls(tuple(lengths), tuple(points), (PERIODIC,) * len(lengths))

    @classmethod
    def interval(cls, a: float, b: float, points: int) -> "Chart":
        """One-dimensional dirichlet chart on ``[a, b]``."""
        return cls((b - a,), (points,), (DIRICHLET,), (a,))

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @cached_property
    def spacing(self) -> tuple[float, ...]:
        return tuple(
            L / N if top == PERIODIC else L / (N - 1)
            for L, N, top in zip(self.lengths, self.points, self.topology)
        )

    def is_periodic(self, axis: int) -> bool:
        return self.topology[axis] == PERIODIC

    @property
    def closed(self) -> bool:
        """True when every axis is periodic."""
        return all(t == PERIODIC for t in self.topology)

    def axis_coords(self, axis: int, closing: bool = False) -> np.ndarray:
        N = self.points[axis] + (1 if closing and self.is_periodic(axis) else 0)
        return self.origin[axis] + self.spacing[axis] * np.arange(N)

    def coords(self, closing: bool = False) -> tuple[np.ndarray, ...]:
        """Meshgrid of coordinates, ``ij`` indexing.

        With ``closing=True`` periodic axes get one extra layer at ``x = L``,
        which is what :func:`ahym.bundle.seam_check` inspects.
        """
        axes = [self.axis_coords(k, closing) for k in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights: rectangle rule on periodic axes, trapezoid otherwise."""
        w = np.ones(())
        for k in range(self.dim):
            wk = np.full(self.points[k], self.spacing[k])
            if not self.is_periodic(k):
                wk[0] *= 0.5
                wk[-1] *= 0.5
            w = np.multiply.outer(w, wk)
        return w

    @cached_property
    def interior(self) -> np.ndarray:
        """Boolean mask of points not lying on a dirichlet boundary layer."""
        mask = np.ones(self.shape, dtype=bool)
        for k in range(self.dim):
            if not self.is_periodic(k):
                idx = [slice(None)] * self.dim
                idx[k] = 0
                mask[tuple(idx)] = False
                idx[k] = -1
                mask[tuple(idx)] = False
        return mask

    def subchart_mask(self, box: Sequence[tuple[float, float]]) -> np.ndarray:
        """Mask of grid points inside an axis-aligned box (inclusive, with slack)."""
        X = self.coords()
        mask = np.ones(self.shape, dtype=bool)
        for k, (a, b) in enumerate(box):
            eps = 1e-9 * self.spacing[k]
            mask &= (X[k] >= a - eps) & (X[k] <= b + eps)
        return mask


@dataclass(frozen=True)
class Twist:
    """Transition law applied to a field when a stencil crosses a periodic seam.

    Crossing the seam forwards on axis ``k`` maps a matrix block ``X`` to
    ``left[k] @ X @ right[k]``; a scalar block gets ``offset[k]`` added.
    Axes with ``None`` entries are plain periodic.
    """

    left: tuple = ()
    right: tuple = ()
    offset: tuple = ()

    def _get(self, seq, axis):
        return seq[axis] if axis < len(seq) else None

    def forward(self, axis: int, block: np.ndarray) -> np.ndarray:
        L, R, c = self._get(self.left, axis), self._get(self.right, axis), self._get(self.offset, axis)
        if L is not None:
            block = L @ block @ R
        if c is not None:
            block = block + c
        return block

    def backward(self, axis: int, block: np.ndarray) -> np.ndarray:
        L, R, c = self._get(self.left, axis), self._get(self.right, axis), self._get(self.offset, axis)
        if L is not None:
            block = np.linalg.inv(L) @ block @ np.linalg.inv(R)
        if c is not None:
            block = block - c
        return block

    def active(self, axis: int) -> bool:
        return self._get(self.left, axis) is not None or self._get(self.offset, axis) is not None


def _check_field(f: np.ndarray, chart: Chart) -> np.ndarray:
    f = np.asarray(f)
    if f.shape[: chart.dim] != chart.shape:
        raise GeometryError(f"field shape {f.shape} does not match chart grid {chart.shape}")
    if not np.all(np.isfinite(f)):
        raise GeometryError("field contains non-finite values")
    return f


def shift(f: np.ndarray, chart: Chart, axis: int, step: int, twist: Twist | None = None) -> np.ndarray:
    """Return ``f`` sampled at ``x + step * h e_axis`` on a periodic axis."""
    out = np.roll(f, -step, axis=axis)
    if twist is not None and twist.active(axis):
        idx = [slice(None)] * f.ndim
        if step > 0:
            idx[axis] = slice(-step, None)
            out[tuple(idx)] = twist.forward(axis, out[tuple(idx)])
        else:
            idx[axis] = slice(None, -step)
            out[tuple(idx)] = twist.backward(axis, out[tuple(idx)])
    return out


def _slab(f, axis, sl):
    idx = [slice(None)] * f.ndim
    idx[axis] = sl
    return f[tuple(idx)]


def d1(f: np.ndarray, chart: Chart, axis: int, twist: Twist | None = None) -> np.ndarray:
    """Second-order first derivative along ``axis``.

    Dirichlet axes use one-sided second-order stencils on the boundary layers.
    """
    h = chart.spacing[axis]
    if chart.is_periodic(axis):
        return (shift(f, chart, axis, 1, twist) - shift(f, chart, axis, -1, twist)) / (2 * h)
    out = np.empty_like(f)
    inner = [slice(None)] * f.ndim
    inner[axis] = slice(1, -1)
    out[tuple(inner)] = (_slab(f, axis, slice(2, None)) - _slab(f, axis, slice(None, -2))) / (2 * h)
    inner[axis] = 0
    out[tuple(inner)] = (-3 * _slab(f, axis, 0) + 4 * _slab(f, axis, 1) - _slab(f, axis, 2)) / (2 * h)
    inner[axis] = -1
    out[tuple(inner)] = (3 * _slab(f, axis, -1) - 4 * _slab(f, axis, -2) + _slab(f, axis, -3)) / (2 * h)
    return out


def d2(f: np.ndarray, chart: Chart, i: int, j: int, twist: Twist | None = None) -> np.ndarray:
    """Second derivative ``d_i d_j f`` with central stencils."""
    if i != j:
        return d1(d1(f, chart, j, twist), chart, i, twist)
    h2 = chart.spacing[i] ** 2
    if chart.is_periodic(i):
        return (shift(f, chart, i, 1, twist) - 2 * f + shift(f, chart, i, -1, twist)) / h2
    out = np.empty_like(f)
    idx = [slice(None)] * f.ndim
    idx[i] = slice(1, -1)
    out[tuple(idx)] = (
        _slab(f, i, slice(2, None)) - 2 * _slab(f, i, slice(1, -1)) + _slab(f, i, slice(None, -2))
    ) / h2
    idx[i] = 0
    out[tuple(idx)] = (2 * _slab(f, i, 0) - 5 * _slab(f, i, 1) + 4 * _slab(f, i, 2) - _slab(f, i, 3)) / h2
    idx[i] = -1
    out[tuple(idx)] = (2 * _slab(f, i, -1) - 5 * _slab(f, i, -2) + 4 * _slab(f, i, -3) - _slab(f, i, -4)) / h2
    return out


def gradient(f: np.ndarray, chart: Chart, twist: Twist | None = None) -> np.ndarray:
    """Stack of ``d1`` along every axis, new leading axis of length ``n``."""
    return np.stack([d1(f, chart, k, twist) for k in range(chart.dim)])


def _expand(coef: np.ndarray, f: np.ndarray) -> np.ndarray:
    return coef.reshape(coef.shape + (1,) * (f.ndim - coef.ndim))


class MetricField:
    """Riemannian metric ``g_ij(x)`` on a chart with cached inverse and determinant.

    Args:
        chart: Grid the metric lives on.
        g: Array of shape ``chart.shape + (n, n)``.
        c_nu: Constant coefficient of the parallel volume form.
        name: Optional label (preset id).
    """

    def __init__(self, chart: Chart, g: np.ndarray, c_nu: float = 1.0, name: str = "custom"):
        g = np.asarray(g, dtype=float)
        n = chart.dim
        if g.shape != chart.shape + (n, n):
            raise GeometryError(f"metric must have shape {chart.shape + (n, n)}, got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise GeometryError("metric contains non-finite values")
        if not np.allclose(g, np.swapaxes(g, -1, -2), rtol=0, atol=1e-13 * max(1.0, np.abs(g).max())):
            raise GeometryError("metric is not symmetric")
        g = 0.5 * (g + np.swapaxes(g, -1, -2))
        if np.linalg.eigvalsh(g).min() <= 0:
            raise GeometryError("metric is not positive definite")
        if not c_nu > 0:
            raise GeometryError("c_nu must be positive")
        self.chart = chart
        self.g = g
        self.c_nu = float(c_nu)
        self.name = name
        self.inv = np.linalg.inv(g)
        self.inv = 0.5 * (self.inv + np.swapaxes(self.inv, -1, -2))
        self.det = np.linalg.det(g)

    @classmethod
    def flat(cls, chart: Chart, c_nu: float = 1.0) -> "MetricField":
        g = np.broadcast_to(np.eye(chart.dim), chart.shape + (chart.dim, chart.dim)).copy()
        return cls(chart, g, c_nu, name="flat")

    @classmethod
    def conformal(cls, chart: Chart, factor: np.ndarray, c_nu: float = 1.0, name: str = "conformal") -> "MetricField":
        factor = np.asarray(factor, dtype=float)
        return cls(chart, factor[..., None, None] * np.eye(chart.dim), c_nu, name=name)

    @property
    def dim(self) -> int:
        return self.chart.dim

    @cached_property
    def is_constant(self) -> bool:
        ref = self.g.reshape(-1, self.dim, self.dim)[0]
        return bool(np.all(self.g == ref))

    @cached_property
    def measure(self) -> np.ndarray:
        """Per-point weight ``det g / c_nu`` times the quadrature cell size."""
        return self.det / self.c_nu * self.chart.weights

    def volume(self) -> float:
        return integrate(np.ones(self.chart.shape), self)

    def cfl_dt(self, c: float = 0.2) -> float:
        """Largest stable explicit step for the affine Laplacian, scaled by ``c``."""
        hmin2 = min(self.chart.spacing) ** 2
        return c * hmin2 / float(np.linalg.eigvalsh(self.inv).max())

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """``g^{ij} a_i b_j`` for stacked covectors (leading axis of length n)."""
        return np.einsum("...ij,i...,j...->...", self.inv, a, b)


def integrate(f: np.ndarray, g: MetricField) -> float:
    """Quadrature of a scalar field against ``det g dx / c_nu``."""
    f = _check_field(f, g.chart)
    if f.ndim != g.chart.dim:
        raise GeometryError("integrate expects a scalar field")
    # np.sum reduces pairwise in a fixed order, so results are reproducible
    return float(np.sum(f * g.measure)) if not np.iscomplexobj(f) else complex(np.sum(f * g.measure))


def affine_laplacian(f: np.ndarray, g: MetricField, twist: Twist | None = None) -> np.ndarray:
    """``g^{ij} d_i d_j f`` for scalar or matrix-valued fields."""
    f = _check_field(f, g.chart)
    n = g.dim
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    for i in range(n):
        for j in range(i, n):
            c = g.inv[..., i, j] * (1.0 if i == j else 2.0)
            if not np.any(c):
                continue
            out += _expand(c, f) * d2(f, g.chart, i, j, twist)
    return out


def beltrami_drift(g: MetricField) -> np.ndarray:
    """Drift field ``V^l = d_i g^{il} + g^{kl} Gamma^i_{ik}``, stacked on a leading axis."""
    if np.any(g.det <= 0):
        raise GeometryError("singular metric")
    chart = g.chart
    n = g.dim
    dlogdet = gradient(np.log(g.det), chart)  # Gamma^i_{ik} = d_k log det g / 2
    V = np.zeros((n,) + chart.shape)
    for l in range(n):
        for i in range(n):
            V[l] += d1(g.inv[..., i, l], chart, i)
        for k in range(n):
            V[l] += 0.5 * g.inv[..., k, l] * dlogdet[k]
    return V


def beltrami_laplacian(f: np.ndarray, g: MetricField) -> np.ndarray:
    """Laplace-Beltrami operator written as affine Laplacian plus drift."""
    f = _check_field(f, g.chart)
    V = beltrami_drift(g)
    df = gradient(f, g.chart)
    return affine_laplacian(f, g) + np.einsum("l...,l...->...", V, df)


def cofactor(g: MetricField) -> np.ndarray:
    """``det g * g^{ij}``, the coefficient array of ``omega^{n-1}`` up to a constant."""
    return g.det[..., None, None] * g.inv


def check_gauduchon(g: MetricField) -> float:
    """Max-norm of ``(1/4) d_i d_j C^{ij}`` with ``C`` the cofactor matrix.

    Returns 0 for ``n = 1`` because the cofactor is identically 1. On
    dirichlet axes only interior points are inspected.
    """
    if g.dim == 1:
        return 0.0
    C = cofactor(g)
    res = np.zeros(g.chart.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            res += d2(C[..., i, j], g.chart, i, j)
    res *= 0.25
    return float(np.abs(res[g.chart.interior]).max())


def laplacian_matrix(g: MetricField) -> sp.csr_matrix:
    """Sparse matrix of the scalar affine Laplacian in C (row-major) order.

    Rows belonging to dirichlet boundary layers are replaced by identity rows.
    """
    chart = g.chart
    ops1, ops2 = [], []
    for k in range(chart.dim):
        N, h = chart.points[k], chart.spacing[k]
        if chart.is_periodic(k):
            D1 = sp.diags([-1, 1, -1, 1], [-1, 1, N - 1, -(N - 1)], shape=(N, N)) / (2 * h)
            D2 = sp.diags([1, -2, 1, 1, 1], [-1, 0, 1, N - 1, -(N - 1)], shape=(N, N)) / h**2
        else:
            D1 = sp.diags([-1, 1], [-1, 1], shape=(N, N)).tolil() / (2 * h)
            D2 = sp.diags([1, -2, 1], [-1, 0, 1], shape=(N, N)).tolil() / h**2
        ops1.append(sp.csr_matrix(D1))
        ops2.append(sp.csr_matrix(D2))

    def axis_op(ops_by_axis):
        out = sp.identity(1, format="csr")
        for k in range(chart.dim):
            out = sp.kron(out, ops_by_axis[k], format="csr")
        return out

    eye = [sp.identity(N, format="csr") for N in chart.points]
    size = int(np.prod(chart.shape))
    A = sp.csr_matrix((size, size))
    for i in range(chart.dim):
        for j in range(i, chart.dim):
            c = g.inv[..., i, j].ravel() * (1.0 if i == j else 2.0)
            if not np.any(c):
                continue
            if i == j:
                op = axis_op([ops2[k] if k == i else eye[k] for k in range(chart.dim)])
            else:
                op = axis_op([ops1[k] if k in (i, j) else eye[k] for k in range(chart.dim)])
            A = A + sp.diags(c) @ op
    bnd = ~chart.interior.ravel()
    if bnd.any():
        keep = sp.diags((~bnd).astype(float))
        A = keep @ A + sp.diags(bnd.astype(float))
    return sp.csr_matrix(A)


# metric preset catalog ------------------------------------------------------

def _sech2(chart: Chart, params: dict) -> np.ndarray:
    x = chart.coords()[0]
    return 1.0 / np.cosh(x) ** 2


def _exp_sin(chart: Chart, params: dict) -> np.ndarray:
    a = float(params.get("amplitude", 1.0))
    x = chart.coords()[0]
    return np.exp(a * np.sin(2 * np.pi * x / chart.lengths[0]))


def _sin_perturb(chart: Chart, params: dict) -> np.ndarray:
    a = float(params.get("amplitude", 0.2))
    x = chart.coords()[0]
    return 1.0 + a * np.sin(2 * np.pi * x / chart.lengths[0])


CONFORMAL_CATALOG: dict[str, tuple[Callable, str]] = {
    "sech2": (_sech2, "sech(x1)^2 * delta"),
    "exp-sin": (_exp_sin, "exp(a sin(2 pi x1 / L1)) * delta, a = amplitude (default 1)"),
    "sin-perturb": (_sin_perturb, "(1 + a sin(2 pi x1 / L1)) * delta, a = amplitude (default 0.2)"),
}


def _product_sin(chart: Chart, params: dict) -> np.ndarray:
    # g = diag(a_1(x^1), ..., a_n(x^n)) has cofactor entries independent of the
    # matching coordinate, so it is Gauduchon for every n
    a = float(params.get("amplitude", 0.3))
    X = chart.coords()
    n = chart.dim
    g = np.zeros(chart.shape + (n, n))
    for k in range(n):
        g[..., k, k] = np.exp(a * np.sin(2 * np.pi * X[k] / chart.lengths[k]))
    return g


def metric_preset(name: str, chart: Chart, params: dict | None = None, c_nu: float = 1.0) -> MetricField:
    """Build a metric from its catalog name.

    ``"flat"``, ``"conformal:<id>"`` for ids in :data:`CONFORMAL_CATALOG`, and
    ``"product-sin"`` (a non-conformal Gauduchon metric for ``n >= 2``).
    """
    params = params or {}
    if name == "flat":
        return MetricField.flat(chart, c_nu)
    if name == "product-sin":
        return MetricField(chart, _product_sin(chart, params), c_nu, name=name)
    if name.startswith("conformal:"):
        key = name.split(":", 1)[1]
        if key not in CONFORMAL_CATALOG:
            raise GeometryError(f"unknown conformal factor {key!r}; known: {sorted(CONFORMAL_CATALOG)}")
        return MetricField.conformal(chart, CONFORMAL_CATALOG[key][0](chart, params), c_nu, name=name)
    raise GeometryError(f"unknown metric preset {name!r}")


def metric_preset_names() -> list[str]:
    return ["flat", "product-sin"] + [f"conformal:{k}" for k in CONFORMAL_CATALOG]
