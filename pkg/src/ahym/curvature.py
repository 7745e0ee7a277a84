"""Connection, curvature, mean curvature and Chern-Weil degrees in raw coordinates.

Normalization: ``K = -1/4 g^{ij} d_j(H^{-1} d_i H) + g^{ij}[theta_i, theta_j^*]``,
fixed by ``-4 H tr_g F_H = Lap H - g^{ij} d_j H H^{-1} d_i H`` where ``Lap`` is
the affine Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import FlatHiggsBundle, check_metric, dagger, higgs_adjoint, higgs_bracket, inv
from .geometry import MetricField, _expand, affine_laplacian, d1, d2, integrate


class CurvatureError(ValueError):
    pass


def _d1_all(H, g, twist):
    return [d1(H, g.chart, k, twist) for k in range(g.dim)]


def connection_form(H: np.ndarray, b: FlatHiggsBundle, g: MetricField, check: bool = True) -> np.ndarray:
    """``A_i = H^{-1} d_i H`` stacked on a leading axis."""
    if check:
        check_metric(H)
    Hinv = np.linalg.inv(H)
    tw = b.metric_twist()
    return np.stack([Hinv @ dH for dH in _d1_all(H, g, tw)])


def hermitian_mean_curvature(
    H: np.ndarray, b: FlatHiggsBundle, g: MetricField, check: bool = True, Hinv=None
) -> np.ndarray:
    """Higgs-free part ``-1/4 H^{-1}(Lap H - g^{ij} d_j H H^{-1} d_i H)``.

    Its trace is replaced by ``-1/4 Lap log det H`` (an O(h^2) change).
    """
    if check:
        check_metric(H)
    tw = b.metric_twist()
    if Hinv is None:
        Hinv = inv(H)
    dH = _d1_all(H, g, tw)
    lap = affine_laplacian(H, g, tw)
    quad = np.zeros_like(H)
    n = g.dim
    for i in range(n):
        HidH = Hinv @ dH[i]
        for j in range(n):
            c = g.inv[..., i, j]
            if not np.any(c):
                continue
            quad += _expand(c, H) * (dH[j] @ HidH)
    K = -0.25 * (Hinv @ (lap - quad))
    # take the trace from the discrete Laplacian of log det H, so that tr K is an
    # exact discrete divergence and its integral telescopes on closed charts
    r = H.shape[-1]
    target = trace_curvature(H, b, g, Hinv)
    K += ((target - np.trace(K, axis1=-2, axis2=-1)) / r)[..., None, None] * np.eye(r)
    return K


def trace_curvature(H: np.ndarray, b: FlatHiggsBundle, g: MetricField, Hinv=None) -> np.ndarray:
    """``-1/4 Lap log det H``."""
    r = H.shape[-1]
    if r == 1:
        det = H[..., 0, 0].real
    elif r == 2:
        det = (H[..., 0, 0] * H[..., 1, 1] - H[..., 0, 1] * H[..., 1, 0]).real
    else:
        det = np.linalg.det(H).real
    if np.any(det <= 0):
        raise CurvatureError("det H must be positive")
    return -0.25 * affine_laplacian(np.log(det), g, b.logdet_twist())


def mean_curvature_higgs(H: np.ndarray, b: FlatHiggsBundle, g: MetricField, check: bool = True) -> np.ndarray:
    """Mean curvature of the extended connection plus the Higgs bracket."""
    if check:
        check_metric(H)
    Hinv = inv(H)
    K = hermitian_mean_curvature(H, b, g, check=False, Hinv=Hinv)
    if any(np.any(t) for t in b.higgs):
        K = K + higgs_bracket(b.higgs, H, g, check=False, Hinv=Hinv)
    return K


def phi(H: np.ndarray, b: FlatHiggsBundle, g: MetricField, lam: float, check: bool = True) -> np.ndarray:
    """``K - lam * I``."""
    return mean_curvature_higgs(H, b, g, check) - lam * np.eye(b.rank)


def curvature_components(H: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> np.ndarray:
    """(1,1) components ``F_ij = -1/4 d_j(A_i) + theta_i theta_j^* - theta_j^* theta_i``.

    Returned with shape ``(n, n) + H.shape``; the g-trace of the Higgs-free part
    agrees with :func:`hermitian_mean_curvature` up to discretization.
    """
    A = connection_form(H, b, g)
    ts = higgs_adjoint(b.higgs, H, check=False)
    etw = b.endo_twist()
    n = g.dim
    F = np.empty((n, n) + H.shape, dtype=complex)
    for i in range(n):
        for j in range(n):
            F[i, j] = -0.25 * d1(A[i], g.chart, j, etw) + b.higgs[i] @ ts[j] - ts[j] @ b.higgs[i]
    return F


def mixed_curvature(H: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> tuple[np.ndarray, np.ndarray]:
    """Diagnostic (2,0) and (0,2) parts for constant Higgs matrices.

    The (2,0) part has components ``1/2([A_i, theta_k] - [A_k, theta_i])``; the
    (0,2) part is the antisymmetrized ``1/2 d_j`` of the adjoint components.
    """
    A = connection_form(H, b, g)
    ts = higgs_adjoint(b.higgs, H, check=False)
    etw = b.endo_twist()
    n = g.dim
    F20 = np.zeros((n, n) + H.shape, dtype=complex)
    F02 = np.zeros((n, n) + H.shape, dtype=complex)
    for i in range(n):
        for k in range(n):
            ci = A[i] @ b.higgs[k] - b.higgs[k] @ A[i]
            ck = A[k] @ b.higgs[i] - b.higgs[i] @ A[k]
            F20[i, k] = 0.5 * (ci - ck)
            F02[i, k] = 0.5 * (d1(ts[k], g.chart, i, etw) - d1(ts[i], g.chart, k, etw))
    return F20, F02


def first_chern(H: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> tuple[np.ndarray, np.ndarray]:
    """Components ``-1/4 d_i d_j log det H`` and their g-trace."""
    check_metric(H)
    det = np.linalg.det(H).real
    if np.any(det <= 0):
        raise CurvatureError("det H must be positive")
    ld = np.log(det)
    tw = b.logdet_twist()
    n = g.dim
    c = np.empty((n, n) + ld.shape)
    for i in range(n):
        for j in range(i, n):
            c[i, j] = c[j, i] = -0.25 * d2(ld, g.chart, i, j, tw)
    trace = np.einsum("...ij,ij...->...", g.inv, c)
    return c, trace


def _real_trace(M):
    return np.trace(M, axis1=-2, axis2=-1).real


def degree(H0: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> float:
    """``(1/n) * integral of tr K``."""
    return integrate(_real_trace(mean_curvature_higgs(H0, b, g)), g) / g.dim


def inner_h(a: np.ndarray, c: np.ndarray, H: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    """Pointwise ``tr(a H^{-1} c^dagger H)``."""
    if Hinv is None:
        Hinv = np.linalg.inv(H)
    return np.einsum("...ij,...ji->...", a, Hinv @ dagger(c) @ H)


def norm2_h(a: np.ndarray, H: np.ndarray, Hinv: np.ndarray | None = None) -> np.ndarray:
    return inner_h(a, a, H, Hinv).real


def projection_defects(pi: np.ndarray, H0: np.ndarray) -> dict[str, float]:
    """Sup-norm defects of ``pi^2 = pi`` and ``pi = pi^{*H0}``."""
    Hinv = np.linalg.inv(H0)
    star = Hinv @ dagger(pi) @ H0
    return {
        "idempotent": float(np.abs(pi @ pi - pi).max()),
        "self_adjoint": float(np.abs(star - pi).max()),
    }


def dprime_norm2(eta: np.ndarray, b: FlatHiggsBundle, g: MetricField, H0: np.ndarray) -> np.ndarray:
    """``1/4 g^{ij}<d_j eta, d_i eta> + g^{ij}<[theta_j, eta], [theta_i, eta]>`` in ``H0``."""
    etw = b.endo_twist()
    Hinv = np.linalg.inv(H0)
    n = g.dim
    deta = [d1(eta, g.chart, k, etw) for k in range(n)]
    com = [t @ eta - eta @ t for t in b.higgs]
    out = np.zeros(g.chart.shape)
    for i in range(n):
        for j in range(n):
            c = g.inv[..., i, j]
            if not np.any(c):
                continue
            out += c * (0.25 * inner_h(deta[j], deta[i], H0, Hinv) + inner_h(com[j], com[i], H0, Hinv)).real
    return out


def sub_degree(
    pi: np.ndarray, H0: np.ndarray, b: FlatHiggsBundle, g: MetricField, tol: float = 1e-8
) -> float:
    """Degree of the sub-bundle cut out by the projection field ``pi``.

    Raises:
        CurvatureError: if ``pi`` is not an ``H0``-self-adjoint idempotent.
    """
    defects = projection_defects(pi, H0)
    scale = max(1.0, float(np.abs(pi).max()))
    if max(defects.values()) > tol * scale:
        raise CurvatureError(f"projection invariants violated: {defects}")
    K = mean_curvature_higgs(H0, b, g)
    integrand = _real_trace(pi @ K) - dprime_norm2(pi, b, g, H0)
    return integrate(integrand, g) / g.dim
