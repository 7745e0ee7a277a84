"""Flat Higgs bundles over a chart and Hermitian metric sections on them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .geometry import Chart, MetricField, Twist, _expand

REL_TOL = 1e-12


class BundleError(ValueError):
    """Raised for singular holonomy or invalid metric sections."""


@dataclass(frozen=True)
class Violation:
    kind: str  # "holonomy", "higgs" or "mixed"
    indices: tuple[int, int]
    norm: float

    def __str__(self):
        return f"[{self.kind}] commutator {self.indices} has Frobenius norm {self.norm:.3e}"


@dataclass
class FlatHiggsBundle:
    """Rank ``r`` flat bundle with constant Higgs matrices.

    Args:
        rank: Bundle rank, between 1 and 4.
        holonomy: One invertible matrix per chart axis; identity on untwisted
            or dirichlet axes.
        higgs: One matrix per chart axis, the Higgs field components in the
            locally constant frame.
        name: Preset label.
    """

    rank: int
    holonomy: tuple[np.ndarray, ...]
    higgs: tuple[np.ndarray, ...]
    name: str = "custom"

    def __post_init__(self):
        r = int(self.rank)
        if not 1 <= r <= 4:
            raise BundleError(f"rank must be between 1 and 4, got {r}")
        self.rank = r
        self.holonomy = tuple(np.asarray(m, dtype=complex).reshape(r, r) for m in self.holonomy)
        self.higgs = tuple(np.asarray(m, dtype=complex).reshape(r, r) for m in self.higgs)
        if len(self.holonomy) != len(self.higgs):
            raise BundleError("need one holonomy and one Higgs matrix per chart axis")

    @property
    def dim(self) -> int:
        return len(self.higgs)

    def twisted(self, axis: int) -> bool:
        return not np.array_equal(self.holonomy[axis], np.eye(self.rank))

    def check_chart(self, chart: Chart) -> None:
        if chart.dim != self.dim:
            raise BundleError(f"bundle has {self.dim} axes, chart has {chart.dim}")
        for k in range(chart.dim):
            if self.twisted(k) and not chart.is_periodic(k):
                raise BundleError(f"axis {k} carries holonomy but is not periodic")

    def _inv_holonomy(self):
        for k, rho in enumerate(self.holonomy):
            if abs(np.linalg.det(rho)) < 1e-300 or np.linalg.cond(rho) > 1e14:
                raise BundleError(f"holonomy on axis {k} is singular")
        return [np.linalg.inv(rho) for rho in self.holonomy]

    def metric_twist(self) -> Twist:
        """Seam law ``H -> rho^{-dagger} H rho^{-1}`` on twisted axes."""
        inv = self._inv_holonomy()
        left = tuple(inv[k].conj().T if self.twisted(k) else None for k in range(self.dim))
        right = tuple(inv[k] if self.twisted(k) else None for k in range(self.dim))
        return Twist(left, right)

    def endo_twist(self) -> Twist:
        """Seam law ``eta -> rho eta rho^{-1}`` for endomorphism fields."""
        inv = self._inv_holonomy()
        left = tuple(self.holonomy[k] if self.twisted(k) else None for k in range(self.dim))
        right = tuple(inv[k] if self.twisted(k) else None for k in range(self.dim))
        return Twist(left, right)

    def logdet_twist(self) -> Twist:
        """Additive seam law for ``log det H``."""
        off = tuple(
            -2.0 * np.log(abs(np.linalg.det(rho))) if self.twisted(k) else None
            for k, rho in enumerate(self.holonomy)
        )
        return Twist(offset=off)


def _comm(a, b):
    return a @ b - b @ a


def validate_bundle(b: FlatHiggsBundle, rel_tol: float = REL_TOL) -> list[Violation]:
    """Check the three commutation families; an empty list means the bundle is valid.

    Raises:
        BundleError: if a holonomy matrix is singular.
    """
    b._inv_holonomy()
    out = []
    rho, th = b.holonomy, b.higgs

    def test(kind, i, j, x, y):
        c = np.linalg.norm(_comm(x, y))
        scale = max(np.linalg.norm(x) * np.linalg.norm(y), 1e-300)
        if c > rel_tol * scale:
            out.append(Violation(kind, (i, j), float(c)))

    for k in range(len(rho)):
        for l in range(k + 1, len(rho)):
            test("holonomy", k, l, rho[k], rho[l])
    for i in range(len(th)):
        for j in range(i + 1, len(th)):
            test("higgs", i, j, th[i], th[j])
    for k in range(len(rho)):
        for i in range(len(th)):
            test("mixed", k, i, rho[k], th[i])
    return out


def hermitian_part(H: np.ndarray) -> np.ndarray:
    return 0.5 * (H + np.conj(np.swapaxes(H, -1, -2)))


def dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def inv(M: np.ndarray) -> np.ndarray:
    """Batched matrix inverse with closed forms for 1x1 and 2x2 blocks."""
    r = M.shape[-1]
    if r == 1:
        return 1.0 / M
    if r == 2:
        a, b, c, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 0], M[..., 1, 1]
        det = a * d - b * c
        out = np.empty_like(M)
        out[..., 0, 0] = d / det
        out[..., 0, 1] = -b / det
        out[..., 1, 0] = -c / det
        out[..., 1, 1] = a / det
        return out
    return np.linalg.inv(M)


def min_eig(H: np.ndarray) -> float:
    """Smallest eigenvalue over a field of Hermitian matrices."""
    r = H.shape[-1]
    if r == 1:
        return float(H[..., 0, 0].real.min())
    if r == 2:
        a, d = H[..., 0, 0].real, H[..., 1, 1].real
        off = np.abs(H[..., 0, 1])
        return float((0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + off**2)).min())
    return float(np.linalg.eigvalsh(H).min())


def check_metric(H: np.ndarray, tol: float = 1e-10) -> None:
    """Raise unless ``H`` is a field of Hermitian positive-definite matrices."""
    H = np.asarray(H)
    if not np.all(np.isfinite(H)):
        raise BundleError("metric section contains non-finite values")
    scale = max(np.abs(H).max(), 1.0)
    if np.abs(H - dagger(H)).max() > tol * scale:
        raise BundleError("metric section is not Hermitian")
    if np.linalg.eigvalsh(hermitian_part(H)).min() <= 0:
        raise BundleError("metric section is not positive definite")


def higgs_adjoint(theta: Sequence[np.ndarray], H: np.ndarray, check: bool = True, Hinv=None) -> np.ndarray:
    """Components ``H^{-1} conj(theta_j)^T H``, stacked on a leading axis."""
    if check:
        check_metric(H)
    if Hinv is None:
        Hinv = inv(H)
    return np.stack([Hinv @ np.conj(t).T @ H for t in theta])


def higgs_bracket(theta: Sequence[np.ndarray], H: np.ndarray, g: MetricField, check: bool = True, Hinv=None) -> np.ndarray:
    """``g^{ij} (theta_i theta_j^* - theta_j^* theta_i)`` pointwise."""
    ts = higgs_adjoint(theta, H, check, Hinv)
    out = np.zeros(H.shape, dtype=complex)
    n = len(theta)
    for i in range(n):
        if not np.any(theta[i]):
            continue
        for j in range(n):
            c = g.inv[..., i, j]
            if not np.any(c):
                continue
            out += _expand(c, H) * (theta[i] @ ts[j] - ts[j] @ theta[i])
    return out


def seam_check(field: np.ndarray, b: FlatHiggsBundle, chart: Chart, kind: str = "metric") -> float:
    """Largest relative seam defect of a field sampled with closing layers.

    The field must carry ``N_k + 1`` samples on each periodic axis, the last
    layer sitting at ``x = L_k`` (see ``Chart.coords(closing=True)``). For
    ``kind="metric"`` the law is ``H(L) = rho^{-dagger} H(0) rho^{-1}``, for
    ``kind="endo"`` it is ``eta(L) = rho eta(0) rho^{-1}``.
    """
    twist = b.metric_twist() if kind == "metric" else b.endo_twist()
    worst = 0.0
    for k in range(chart.dim):
        if not chart.is_periodic(k):
            continue
        if field.shape[k] != chart.points[k] + 1:
            raise BundleError("seam_check needs a closing layer on every periodic axis")
        first = np.take(field, 0, axis=k)
        last = np.take(field, -1, axis=k)
        pred = twist.forward(k, first) if twist.active(k) else first
        scale = max(np.abs(last).max(), 1e-300)
        worst = max(worst, float(np.abs(last - pred).max() / scale))
    return worst


def trim_closing(field: np.ndarray, chart: Chart) -> np.ndarray:
    """Drop the closing layers added by ``Chart.coords(closing=True)``."""
    idx = tuple(slice(0, N) for N in chart.points)
    return field[idx]


# presets ---------------------------------------------------------------------

def _identity_holonomy(r, n):
    return tuple(np.eye(r) for _ in range(n))


def bundle_preset(name: str, n: int) -> FlatHiggsBundle:
    """Named bundles; twisting and Higgs data sit on axis 0, other axes trivial.

    ``trivial`` is rank 1 with nothing on it, ``unipotent2`` has holonomy
    ``[[1, 1], [0, 1]]``, ``diag-higgs2`` has ``theta_1 = diag(1, -1)`` and
    ``nilpotent-higgs2`` has ``theta_1 = [[0, 1], [0, 0]]``.
    """
    zeros2 = [np.zeros((2, 2)) for _ in range(n)]
    if name == "trivial":
        return FlatHiggsBundle(1, _identity_holonomy(1, n), tuple(np.zeros((1, 1)) for _ in range(n)), name)
    if name == "unipotent2":
        hol = list(_identity_holonomy(2, n))
        hol[0] = np.array([[1.0, 1.0], [0.0, 1.0]])
        return FlatHiggsBundle(2, tuple(hol), tuple(zeros2), name)
    if name == "diag-higgs2":
        th = list(zeros2)
        th[0] = np.diag([1.0, -1.0])
        return FlatHiggsBundle(2, _identity_holonomy(2, n), tuple(th), name)
    if name == "nilpotent-higgs2":
        th = list(zeros2)
        th[0] = np.array([[0.0, 1.0], [0.0, 0.0]])
        return FlatHiggsBundle(2, _identity_holonomy(2, n), tuple(th), name)
    raise BundleError(f"unknown bundle preset {name!r}")


BUNDLE_PRESETS = ("trivial", "unipotent2", "diag-higgs2", "nilpotent-higgs2")


def complex_matrix(pairs) -> np.ndarray:
    """Parse a matrix written as nested ``[re, im]`` pairs."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2:
        raise BundleError("complex matrices are written as rows of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def bundle_from_config(cfg: dict, n: int) -> FlatHiggsBundle:
    if "preset" in cfg:
        return bundle_preset(cfg["preset"], n)
    r = int(cfg["rank"])
    hol = [complex_matrix(m) for m in cfg.get("holonomy", [])]
    hol += [np.eye(r)] * (n - len(hol))
    th = [complex_matrix(m) for m in cfg.get("higgs", [])]
    th += [np.zeros((r, r))] * (n - len(th))
    return FlatHiggsBundle(r, tuple(hol), tuple(th), cfg.get("name", "custom"))


# initial metrics --------------------------------------------------------------

def smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step, 0 for t <= 0 and 1 for t >= 1, all derivatives flat at both ends."""
    t = np.asarray(t, dtype=float)

    def psi(s):
        out = np.zeros_like(s)
        pos = s > 0
        out[pos] = np.exp(-1.0 / s[pos])
        return out

    a, b = psi(t), psi(1.0 - t)
    return a / (a + b)


def equivariant_interpolation(b: FlatHiggsBundle, chart: Chart, closing: bool = False) -> np.ndarray:
    """Metric ``E(x)^dagger E(x)`` built from :func:`twisted_frame`.

    ``E`` picks up ``rho_k^{-1}`` across each seam, so the seam law holds with
    all derivatives. For ``unipotent2`` this is
    ``[[1, -beta], [-beta, 1 + beta^2]]`` with ``beta`` the smooth step.
    """
    b.check_chart(chart)
    E = twisted_frame(b, chart, closing)
    return hermitian_part(dagger(E) @ E)


def twisted_frame(b: FlatHiggsBundle, chart: Chart, closing: bool = False) -> np.ndarray:
    """Frame field ``E(x)`` with ``E(x + L e_k) = E(x) rho_k^{-1}``."""
    X = chart.coords(closing)
    E = np.broadcast_to(np.eye(b.rank, dtype=complex), X[0].shape + (b.rank, b.rank)).copy()
    for k in range(chart.dim):
        if not b.twisted(k):
            continue
        logm = sla.logm(np.linalg.inv(b.holonomy[k]))
        beta = smooth_step((X[k] - chart.origin[k]) / chart.lengths[k])
        # beta only varies along axis k, and logm may be defective, so take
        # one expm per distinct value
        vals, idx = np.unique(beta, return_inverse=True)
        table = np.stack([sla.expm(v * logm) for v in vals])
        E = E @ table[idx.reshape(beta.shape)]
    return E


def random_hermitian_field(
    chart: Chart, rank: int, amplitude: float = 0.2, modes: int = 2, seed: int = 0, closing: bool = False
) -> np.ndarray:
    """Smooth periodic Hermitian field built from a few random Fourier modes."""
    rng = np.random.default_rng(seed)
    X = chart.coords(closing)
    S = np.zeros(X[0].shape + (rank, rank), dtype=complex)
    for _ in range(modes):
        A = rng.normal(size=(rank, rank)) + 1j * rng.normal(size=(rank, rank))
        A = 0.5 * (A + A.conj().T)
        phase = np.zeros(X[0].shape)
        for k in range(chart.dim):
            m = rng.integers(1, 3)
            phase = phase + 2 * np.pi * m * (X[k] - chart.origin[k]) / chart.lengths[k] + rng.uniform(0, 2 * np.pi)
        S += np.cos(phase)[..., None, None] * A
    S *= amplitude / max(1, modes)
    return S


def hermitian_expm(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.exp(w)[..., None, :]) @ dagger(V)


def perturbed_metric(
    b: FlatHiggsBundle,
    chart: Chart,
    amplitude: float = 0.2,
    modes: int = 2,
    seed: int = 0,
    base: np.ndarray | None = None,
    closing: bool = False,
) -> np.ndarray:
    """Equivariant metric ``E^dagger B^{1/2} exp(S) B^{1/2} E`` with random periodic ``S``.

    ``E`` is the twisted frame and ``B`` a constant positive-definite base.
    """
    E = twisted_frame(b, chart, closing)
    S = random_hermitian_field(chart, b.rank, amplitude, modes, seed, closing)
    P = hermitian_expm(S)
    if base is not None:
        w, V = np.linalg.eigh(np.asarray(base, dtype=complex))
        R = (V * np.sqrt(w)) @ V.conj().T
        P = R @ P @ R
    return hermitian_part(dagger(E) @ P @ E)


def constant_metric(chart: Chart, M: np.ndarray, closing: bool = False) -> np.ndarray:
    X = chart.coords(closing)
    M = np.asarray(M, dtype=complex)
    return np.broadcast_to(M, X[0].shape + M.shape).copy()
