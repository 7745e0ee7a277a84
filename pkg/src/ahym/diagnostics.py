"""Scalar monitors along a flow and the integral identities they should satisfy."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .bundle import FlatHiggsBundle, dagger, hermitian_part
from .curvature import (
    connection_form,
    curvature_components,
    hermitian_mean_curvature,
    inner_h,
    norm2_h,
    phi,
)
from .curvature import dprime_norm2 as _plain_dprime_norm2
from .geometry import MetricField, d1, integrate

CSV_COLUMNS = (
    "t",
    "sup_phi",
    "l2_phi",
    "int_tr_phi",
    "sigma_H0",
    "l2_s",
    "sup_s",
    "l2_dprime_s",
    "key_identity_residual",
    "i_functional",
    "sup_T",
    "min_eig_H",
)


class DiagnosticsError(ValueError):
    pass


# kernels -----------------------------------------------------------------------

def psi(x, y):
    """``(exp(y - x) - 1) / (y - x)``, equal to 1 on the diagonal."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    out = np.ones_like(d)
    small = np.abs(d) < 1e-8
    out[~small] = np.expm1(d[~small]) / d[~small]
    out[small] = 1.0 + 0.5 * d[small]
    return out


def difference_quotient(f: Callable, df: Callable) -> Callable:
    """Kernel ``(f(x) - f(y)) / (x - y)`` with diagonal value ``f'(x)``."""

    def kernel(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        d = x - y
        off = np.abs(d) > 1e-12
        return np.where(off, (f(x) - f(y)) / np.where(off, d, 1.0), df(x))

    return kernel


def psi_reversed(x, y):
    """``psi(y, x)``: the orientation the key identity needs with ``s = log(H0^{-1}H)``
    and components ``eta_ab`` taken in the eigenframe of ``s``."""
    return psi(y, x)


# pointwise matrix functions ------------------------------------------------------

def _sqrt_and_inv(H0):
    w, V = np.linalg.eigh(hermitian_part(H0))
    if w.min() <= 0:
        raise DiagnosticsError("reference metric is not positive definite")
    r = np.sqrt(w)
    W = (V * r[..., None, :]) @ dagger(V)
    Wi = (V * (1.0 / r)[..., None, :]) @ dagger(V)
    return W, Wi


@dataclass
class Whitened:
    """Eigen-data of ``log(H0^{-1} H)`` in an ``H0``-orthonormal frame."""

    W: np.ndarray
    Wi: np.ndarray
    evals: np.ndarray
    U: np.ndarray

    def to_frame(self, eta):
        return dagger(self.U) @ (self.W @ eta @ self.Wi) @ self.U

    def from_frame(self, eta_t):
        return self.Wi @ (self.U @ eta_t @ dagger(self.U)) @ self.W

    def function(self, f) -> np.ndarray:
        """``f(s)`` as an ``H0``-self-adjoint endomorphism field."""
        diag = f(self.evals)
        return self.Wi @ ((self.U * diag[..., None, :]) @ dagger(self.U)) @ self.W


def whiten(H0: np.ndarray, H: np.ndarray) -> Whitened:
    W, Wi = _sqrt_and_inv(H0)
    Hhat = hermitian_part(Wi @ H @ Wi)
    w, U = np.linalg.eigh(Hhat)
    if w.min() <= 0:
        raise DiagnosticsError("metric is not positive definite")
    return Whitened(W, Wi, np.log(w), U)


def whiten_endo(H0: np.ndarray, s: np.ndarray) -> Whitened:
    """Eigen-data of an ``H0``-self-adjoint field ``s``."""
    W, Wi = _sqrt_and_inv(H0)
    shat = hermitian_part(W @ s @ Wi)
    w, U = np.linalg.eigh(shat)
    return Whitened(W, Wi, w, U)


def endo_log(H0: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``s = log(H0^{-1} H)``, computed through the whitening ``W = H0^{1/2}``."""
    return whiten(H0, H).function(lambda x: x)


def endo_exp(H0: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Inverse of :func:`endo_log` for an ``H0``-self-adjoint ``s``: returns ``exp(s)``."""
    return whiten_endo(H0, s).function(np.exp)


def metric_from_log(H0: np.ndarray, s: np.ndarray) -> np.ndarray:
    """``H = H0 exp(s)``."""
    return hermitian_part(H0 @ endo_exp(H0, s))


def spectral_transform(s: np.ndarray, kernel: Callable, eta: np.ndarray, H0: np.ndarray) -> np.ndarray:
    """Apply ``kernel(lam_a, lam_b)`` entrywise to ``eta`` in the eigenframe of ``s``."""
    wh = whiten_endo(H0, s)
    lam = wh.evals
    K = kernel(lam[..., :, None], lam[..., None, :])
    return wh.from_frame(K * wh.to_frame(eta))


def donaldson_distance(H: np.ndarray, K: np.ndarray) -> np.ndarray:
    """Pointwise ``tr(H^{-1}K) + tr(K^{-1}H) - 2r``, clipped at 0 against roundoff."""
    r = H.shape[-1]
    a = np.trace(np.linalg.solve(H, K), axis1=-2, axis2=-1).real
    b = np.trace(np.linalg.solve(K, H), axis1=-2, axis2=-1).real
    return np.maximum(a + b - 2 * r, 0.0)


def sup_norm_h(X: np.ndarray, H: np.ndarray) -> float:
    return float(np.sqrt(np.maximum(norm2_h(X, H), 0)).max())


# D'' and friends ------------------------------------------------------------------

def dprime(eta: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> tuple[np.ndarray, np.ndarray]:
    """Components ``1/2 d_j eta`` and ``[theta_i, eta]``, each stacked on a leading axis."""
    etw = b.endo_twist()
    dbar = np.stack([0.5 * d1(eta, g.chart, k, etw) for k in range(g.dim)])
    com = np.stack([t @ eta - eta @ t for t in b.higgs])
    return dbar, com


def _form_pairing(left, right, H0, g, Hinv=None):
    """``g^{ij} <left_j, right_i>_{H0}`` summed over components."""
    out = np.zeros(g.chart.shape)
    for i in range(g.dim):
        for j in range(g.dim):
            c = g.inv[..., i, j]
            if np.any(c):
                out += c * inner_h(left[j], right[i], H0, Hinv).real
    return out


def dprime_norm2(eta, b, g, H0, kernel_s: np.ndarray | None = None, kernel=None) -> np.ndarray:
    """``|D'' eta|^2_{H0}`` or, with ``kernel_s``, ``<kernel(s) D'' eta, D'' eta>_{H0}``."""
    if kernel_s is None:
        return _plain_dprime_norm2(eta, b, g, H0)
    dbar, com = dprime(eta, b, g)
    Hinv = np.linalg.inv(H0)
    tdbar = np.stack([spectral_transform(kernel_s, kernel, x, H0) for x in dbar])
    tcom = np.stack([spectral_transform(kernel_s, kernel, x, H0) for x in com])
    return _form_pairing(tdbar, dbar, H0, g, Hinv) + _form_pairing(tcom, com, H0, g, Hinv)


def key_identity_terms(H0, H, b, g, lam, s=None):
    """The three integrals of the key identity: ``(tr(Phi(H0) s), <Psi(s) D''s, D''s>, tr(Phi(H) s))``."""
    if s is None:
        s = endo_log(H0, H)
    phi0 = phi(H0, b, g, lam)
    phi1 = phi(H, b, g, lam)
    t0 = integrate(np.trace(phi0 @ s, axis1=-2, axis2=-1).real, g)
    t1 = integrate(np.trace(phi1 @ s, axis1=-2, axis2=-1).real, g)
    quad = integrate(dprime_norm2(s, b, g, H0, kernel_s=s, kernel=psi_reversed), g)
    return t0, quad, t1


def key_identity_residual(H0, H, b, g, lam, s=None, boundary_tol: float = 1e-12) -> float:
    """Left minus right side of the key identity, by quadrature.

    Raises:
        DiagnosticsError: on dirichlet charts when ``H`` and ``H0`` differ on the boundary.
    """
    if not g.chart.closed:
        bnd = ~g.chart.interior
        scale = max(1.0, float(np.abs(H0).max()))
        if np.abs(H[bnd] - H0[bnd]).max() > boundary_tol * scale:
            raise DiagnosticsError("H and H0 must agree on the dirichlet boundary")
    t0, quad, t1 = key_identity_terms(H0, H, b, g, lam, s)
    return t0 + quad - t1


def i_functional(H, b, g, lam, Phi=None) -> float:
    """Integral of ``|D_H Phi|^2_H + 2 |[Phi, theta]|^2_H``."""
    if Phi is None:
        Phi = phi(H, b, g, lam)
    A = connection_form(H, b, g, check=False)
    etw = b.endo_twist()
    Hinv = np.linalg.inv(H)
    dphi = [d1(Phi, g.chart, k, etw) for k in range(g.dim)]
    hol = [0.5 * (dphi[k] + A[k] @ Phi - Phi @ A[k]) for k in range(g.dim)]
    anti = [0.5 * dphi[k] for k in range(g.dim)]
    com = [Phi @ t - t @ Phi for t in b.higgs]
    dens = _form_pairing(hol, hol, H, g, Hinv) + _form_pairing(anti, anti, H, g, Hinv)
    dens += 2 * _form_pairing(com, com, H, g, Hinv)
    return integrate(dens, g)


def c1_monitor(H0, H, b, g, probe: np.ndarray | None = None) -> float:
    """Sup over the probe mask of ``|h^{-1}(d h + [A_{H0}, h])|_{H0}``, ``h = H0^{-1}H``."""
    h = np.linalg.solve(H0, H)
    hinv = np.linalg.inv(h)
    A0 = connection_form(H0, b, g, check=False)
    etw = b.endo_twist()
    T = [hinv @ (d1(h, g.chart, k, etw) + A0[k] @ h - h @ A0[k]) for k in range(g.dim)]
    dens = np.sqrt(np.maximum(_form_pairing(T, T, H0, g), 0.0))
    if probe is not None:
        dens = dens[probe]
    return float(dens.max())


# gauge equivalence ---------------------------------------------------------------

def _full_norm2(X, H, g):
    """``g^{ik} g^{jl} <X_ij, X_kl>_H`` for (1,1) components ``X`` of shape (n, n, ...)."""
    Hinv = np.linalg.inv(H)
    n = g.dim
    out = np.zeros(g.chart.shape)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                for l in range(n):
                    c = g.inv[..., i, k] * g.inv[..., j, l]
                    if np.any(c):
                        out += c * inner_h(X[i, j], X[k, l], H, Hinv).real
    return out


def gauge_identity_defect(H0, H, b, g) -> float:
    """Largest relative mismatch between the curvature norm at ``H`` and its gauge image at ``H0``.

    With ``sigma = h^{1/2}`` (``h = H0^{-1}H``, ``H0``-self-adjoint root), the
    curvature of the transformed connection is ``sigma F_H sigma^{-1}`` and the
    Higgs field becomes ``sigma theta sigma^{-1}``; its adjoint is taken in
    ``H0`` directly. The mismatch is measured against the pointwise size of
    the pieces (``|F|^2 + |theta theta^*|^2 + |theta^* theta|^2 + |X|^2`` at
    ``H``): near a Hermitian-Einstein metric the curvature and the bracket both
    cancel to roundoff, and the bracket's rounding error scales with the
    products it is formed from.
    """
    wh = whiten(H0, H)
    sig = wh.function(lambda x: np.exp(0.5 * x))
    sig_inv = wh.function(lambda x: np.exp(-0.5 * x))
    n = g.dim
    X = curvature_components(H, b, g)
    ts = np.stack([np.linalg.inv(H) @ np.conj(t).T @ H for t in b.higgs])
    br = np.empty_like(X)
    prods = np.empty((2,) + X.shape, dtype=X.dtype)
    for i in range(n):
        for j in range(n):
            prods[0, i, j] = b.higgs[i] @ ts[j]
            prods[1, i, j] = ts[j] @ b.higgs[i]
            br[i, j] = prods[0, i, j] - prods[1, i, j]
    Fh = X - br
    H0inv = np.linalg.inv(H0)
    th_t = [sig @ t @ sig_inv for t in b.higgs]
    th_t_star = [H0inv @ dagger(t) @ H0 for t in th_t]
    Y = np.empty_like(X)
    for i in range(n):
        for j in range(n):
            Y[i, j] = sig @ Fh[i, j] @ sig_inv + th_t[i] @ th_t_star[j] - th_t_star[j] @ th_t[i]
    n1 = _full_norm2(X, H, g)
    n2 = _full_norm2(Y, H0, g)
    scale = n1 + _full_norm2(Fh, H, g) + _full_norm2(prods[0], H, g) + _full_norm2(prods[1], H, g)
    floor = 1e-14 * max(float(scale.max()), 1e-300)
    return float((np.abs(n1 - n2) / np.maximum(scale, floor)).max())


# bookkeeping ---------------------------------------------------------------------

def l2_norm_endo(eta, H0, g) -> float:
    return float(np.sqrt(max(integrate(norm2_h(eta, H0), g), 0.0)))


@dataclass
class DiagnosticsRow:
    t: float
    sup_phi: float
    l2_phi: float
    int_tr_phi: float
    sigma_H0: float
    l2_s: float
    sup_s: float
    l2_dprime_s: float
    key_identity_residual: float
    i_functional: float
    sup_T: float
    min_eig_H: float

    def values(self) -> list[float]:
        return [getattr(self, c) for c in CSV_COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)


def diagnostics_row(t, H, H0, b, g, lam, Phi=None, probe=None) -> tuple[DiagnosticsRow, np.ndarray]:
    """Evaluate every monitor at one sample; also returns ``s``."""
    if Phi is None:
        Phi = phi(H, b, g, lam, check=False)
    n2 = norm2_h(Phi, H)
    s = endo_log(H0, H)
    s2 = norm2_h(s, H0)
    kir = key_identity_residual(H0, H, b, g, lam, s=s, boundary_tol=np.inf)
    row = DiagnosticsRow(
        t=float(t),
        sup_phi=float(np.sqrt(np.maximum(n2, 0)).max()),
        l2_phi=float(np.sqrt(max(integrate(n2, g), 0))),
        int_tr_phi=integrate(np.trace(Phi, axis1=-2, axis2=-1).real, g),
        sigma_H0=float(donaldson_distance(H, H0).max()),
        l2_s=float(np.sqrt(max(integrate(s2, g), 0))),
        sup_s=float(np.sqrt(np.maximum(s2, 0)).max()),
        l2_dprime_s=float(np.sqrt(max(integrate(dprime_norm2(s, b, g, H0), g), 0))),
        key_identity_residual=float(kir),
        i_functional=i_functional(H, b, g, lam, Phi),
        sup_T=c1_monitor(H0, H, b, g, probe),
        min_eig_H=float(np.linalg.eigvalsh(H).min()),
    )
    return row, s


def linear_envelope(sup_s, l2_s) -> tuple[float, float]:
    """Fit ``sup|s| <= C1 * ||s|| + C2``: least-squares slope, intercept raised to cover every sample."""
    x = np.asarray(l2_s, dtype=float)
    y = np.asarray(sup_s, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0:
        return 0.0, float(y.max()) if len(y) else 0.0
    C1 = max(float(np.polyfit(x, y, 1)[0]), 0.0)
    C2 = float((y - C1 * x).max())
    return C1, C2
