"""Time integration of the affine Hermitian-Yang-Mills flow ``dH/dt = -4 H Phi(H)``."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bundle import FlatHiggsBundle, check_metric, hermitian_part, min_eig
from .curvature import degree, mean_curvature_higgs, norm2_h, phi
from .diagnostics import DiagnosticsRow, diagnostics_row, donaldson_distance
from .geometry import Chart, MetricField, check_gauduchon, integrate, laplacian_matrix, metric_preset

log = logging.getLogger(__name__)

CONVERGED = "converged"
T_MAX = "t_max"
BLOWUP = "blowup-guard"
DIVERGED = "divergence-detected"


class FlowError(RuntimeError):
    """Raised on invalid flow setups (wrong chart type, boundary mismatch, ...)."""


class PoissonError(FlowError):
    pass


@dataclass
class FlowConfig:
    """Integration and stopping parameters.

    ``dt=None`` picks ``cfl * min(h^2) / max eig g^{-1}``. ``integrator`` is
    ``"euler"`` (default), ``"rk2"`` (Heun) or ``"implicit"`` (backward Euler on
    ``u = log H``, rank 1 only).
    """

    integrator: str = "euler"
    dt: float | None = None
    cfl: float = 0.2
    t_max: float = 1.0
    tol: float = 1e-6
    consecutive: int = 10
    sample_interval: float | None = None
    sample_every: int | None = None
    divergence_ceiling: float | None = None
    keep_snapshots: int = 5
    gauduchon_tol: float = 1e-8
    min_eig_floor: float = 0.0
    wall_limit: float | None = None
    stop_on_convergence: bool = True


@dataclass
class FlowState:
    t: float
    H: np.ndarray
    dt: float
    steps: int = 0
    Phi: np.ndarray | None = None


@dataclass
class FlowReport:
    rows: list[DiagnosticsRow]
    reason: str
    state: FlowState
    lam: float
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    @property
    def times(self) -> np.ndarray:
        return self.column("t")

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else None
        return {
            "reason": self.reason,
            "t_final": self.state.t,
            "steps": self.state.steps,
            "dt": self.state.dt,
            "lambda": self.lam,
            "wall_time": self.wall_time,
            "final": last.as_dict() if last else None,
            **self.extra,
        }


@dataclass
class Problem:
    """Everything the right-hand side needs besides ``H``."""

    bundle: FlatHiggsBundle
    metric: MetricField
    lam: float
    H0: np.ndarray
    boundary: np.ndarray | None = None  # full-grid array; only boundary layers are used

    def __post_init__(self):
        self.bundle.check_chart(self.metric.chart)
        self._bnd = None if self.metric.chart.closed else ~self.metric.chart.interior

    def pin(self, H: np.ndarray) -> np.ndarray:
        if self._bnd is not None and self.boundary is not None:
            H[self._bnd] = self.boundary[self._bnd]
        return H

    def phi(self, H: np.ndarray) -> np.ndarray:
        return phi(H, self.bundle, self.metric, self.lam, check=False)

    def rhs(self, H: np.ndarray, Phi: np.ndarray | None = None) -> np.ndarray:
        if Phi is None:
            Phi = self.phi(H)
        return -4.0 * (H @ Phi)


class BlowupGuard(FloatingPointError):
    pass


def _guard(H: np.ndarray, floor: float) -> None:
    if not np.all(np.isfinite(H)):
        raise BlowupGuard("non-finite metric entries")
    m = min_eig(H)
    if m <= floor:
        raise BlowupGuard(f"minimum eigenvalue {m:.3e} fell to the floor {floor:.3e}")


def flow_step(state: FlowState, problem: Problem, integrator: str = "euler", floor: float = 0.0, _implicit=None) -> FlowState:
    """Advance one step and return the new state.

    Raises:
        BlowupGuard: if positivity is lost.
    """
    H, dt = state.H, state.dt
    if integrator == "euler":
        Hn = H + dt * problem.rhs(H, state.Phi)
    elif integrator == "rk2":
        k1 = problem.rhs(H, state.Phi)
        H1 = problem.pin(hermitian_part(H + dt * k1))
        Hn = H + 0.5 * dt * (k1 + problem.rhs(H1))
    elif integrator == "implicit":
        Hn = _implicit(H)
    else:
        raise FlowError(f"unknown integrator {integrator!r}")
    Hn = problem.pin(hermitian_part(Hn))
    _guard(Hn, floor)
    return FlowState(state.t + dt, Hn, dt, state.steps + 1, problem.phi(Hn))


def _implicit_solver(problem: Problem, dt: float) -> Callable:
    b = problem.bundle
    if b.rank != 1 or any(b.twisted(k) for k in range(b.dim)):
        raise FlowError("the implicit integrator supports untwisted rank-1 bundles only")
    g = problem.metric
    A = laplacian_matrix(g)
    interior = g.chart.interior.ravel()
    D = sp.diags(interior.astype(float))
    lu = spla.splu(sp.csc_matrix(sp.identity(A.shape[0]) - dt * (D @ A)))
    shift = 4.0 * problem.lam * dt * interior

    def step(H):
        u = np.log(H[..., 0, 0].real).ravel()
        rhs = u + shift
        un = lu.solve(rhs).reshape(g.chart.shape)
        return np.exp(un)[..., None, None].astype(complex)

    return step


def _sample_stride(cfg: FlowConfig, dt: float) -> int:
    if cfg.sample_every:
        return int(cfg.sample_every)
    if cfg.sample_interval:
        return max(1, int(round(cfg.sample_interval / dt)))
    return max(1, int(round(cfg.t_max / dt / 200)))


def _integrate(problem: Problem, H_init: np.ndarray, cfg: FlowConfig, probe=None) -> FlowReport:
    g = problem.metric
    dt = cfg.dt if cfg.dt else g.cfl_dt(cfg.cfl)
    stride = _sample_stride(cfg, dt)
    implicit = _implicit_solver(problem, dt) if cfg.integrator == "implicit" else None
    H = problem.pin(hermitian_part(np.array(H_init, dtype=complex)))
    check_metric(H)
    state = FlowState(0.0, H, dt, 0, problem.phi(H))
    rows: list[DiagnosticsRow] = []
    snaps: list[tuple[float, np.ndarray]] = []
    streak = 0
    reason = T_MAX
    start = time.perf_counter()
    n_total = int(np.ceil(cfg.t_max / dt - 1e-9))

    def sample(st):
        row, s = diagnostics_row(st.t, st.H, problem.H0, problem.bundle, g, problem.lam, st.Phi, probe)
        rows.append(row)
        snaps.append((st.t, s))
        if len(snaps) > cfg.keep_snapshots:
            snaps.pop(0)
        return row

    row = sample(state)
    if row.sup_phi < cfg.tol and cfg.stop_on_convergence:
        reason = CONVERGED
    else:
        for k in range(n_total):
            try:
                state = flow_step(state, problem, cfg.integrator, cfg.min_eig_floor, implicit)
            except BlowupGuard as exc:
                log.warning("blowup guard tripped at t=%.6g: %s", state.t, exc)
                reason = BLOWUP
                break
            last = k == n_total - 1
            if state.steps % stride and not last:
                continue
            row = sample(state)
            streak = streak + 1 if row.sup_phi < cfg.tol else 0
            if streak >= cfg.consecutive and cfg.stop_on_convergence:
                reason = CONVERGED
                break
            if cfg.divergence_ceiling is not None and row.l2_s > cfg.divergence_ceiling:
                reason = DIVERGED
                break
            if cfg.wall_limit is not None and time.perf_counter() - start > cfg.wall_limit:
                reason = T_MAX
                break
        else:
            if streak >= cfg.consecutive:
                reason = CONVERGED
    return FlowReport(rows, reason, state, problem.lam, snaps, time.perf_counter() - start)


def einstein_factor(H0: np.ndarray, b: FlatHiggsBundle, g: MetricField) -> float:
    """Constant making ``integral tr Phi`` vanish: ``integral tr K / (r * Vol)``.

    Equals ``deg / (r * Vol)`` with ``Vol`` taken as ``(1/n) integral dmu``.
    """
    vol = g.volume()
    if not vol > 0:
        raise FlowError("zero volume")
    return degree(H0, b, g) * g.dim / (b.rank * vol)


def run_closed(H0, b, g, lam=None, cfg: FlowConfig | None = None, H_init=None, probe=None) -> FlowReport:
    """Flow from ``H_init`` (default ``H0``) on a chart with only periodic axes."""
    cfg = cfg or FlowConfig()
    if not g.chart.closed:
        raise FlowError("run_closed needs every axis periodic")
    res = check_gauduchon(g)
    if res > cfg.gauduchon_tol:
        raise FlowError(f"metric is not Gauduchon (residual {res:.3e})")
    if lam is None:
        lam = einstein_factor(H0, b, g)
    problem = Problem(b, g, lam, np.asarray(H0, dtype=complex))
    return _integrate(problem, H0 if H_init is None else H_init, cfg, probe)


def run_dirichlet(H0, b, g, lam=0.0, cfg: FlowConfig | None = None, boundary=None, probe=None, tol=1e-12) -> FlowReport:
    """Flow with boundary layers pinned to ``boundary`` (default: ``H0``'s own boundary values).

    Raises:
        FlowError: if the chart has no dirichlet axis or ``H0`` violates the boundary data.
    """
    cfg = cfg or FlowConfig()
    chart = g.chart
    if chart.closed:
        raise FlowError("run_dirichlet needs at least one dirichlet axis")
    H0 = np.asarray(H0, dtype=complex)
    boundary = H0 if boundary is None else np.asarray(boundary, dtype=complex)
    bnd = ~chart.interior
    scale = max(1.0, float(np.abs(boundary).max()))
    if np.abs(H0[bnd] - boundary[bnd]).max() > tol * scale:
        raise FlowError("initial metric does not satisfy the boundary condition")
    problem = Problem(b, g, lam, H0, boundary)
    return _integrate(problem, H0, cfg, probe)


@dataclass
class ExhaustionReport:
    domains: list[tuple[float, float]]
    reports: list[FlowReport]
    table: dict[tuple[int, int], float]
    t_compare: float

    def rows(self) -> list[dict]:
        out = []
        for (i, j), v in sorted(self.table.items()):
            out.append({"inner": list(self.domains[i]), "outer": list(self.domains[j]), "sup_sigma_probe": v})
        return out


def log_cosh_certificate(g: MetricField) -> float:
    """``sup |Lap log cosh x_1|`` over interior nodes of a line chart.

    The three-point stencil is evaluated in closed form,
    ``log1p(sinh(h)^2 / (cosh(x) cosh(x - h) (cosh h + tanh(x - h) sinh h)))``,
    because the naive difference of ``log cosh`` loses every digit once
    ``g^{11}`` reaches ``cosh(x)^2 ~ 1e12``.
    """
    chart = g.chart
    if chart.dim != 1 or chart.is_periodic(0):
        raise FlowError("the certificate is defined on a dirichlet line chart")
    h = chart.spacing[0]
    x = chart.coords()[0]
    second = np.log1p(np.sinh(h) ** 2 / (np.cosh(x) * np.cosh(x - h) * (np.cosh(h) + np.tanh(x - h) * np.sinh(h))))
    lap = g.inv[..., 0, 0] * second / h**2
    return float(np.abs(lap[chart.interior]).max())


def run_exhaustion(
    initial: Callable[[Chart], np.ndarray],
    b: FlatHiggsBundle,
    domains: Sequence[tuple[float, float]],
    spacing: float,
    probe: tuple[float, float],
    metric: str = "conformal:sech2",
    lam: float = 0.0,
    cfg: FlowConfig | None = None,
) -> ExhaustionReport:
    """Dirichlet runs on nested intervals compared on a fixed probe interval at ``cfg.t_max``.

    All domains share the grid spacing so probe points coincide.
    """
    cfg = replace(cfg or FlowConfig(), stop_on_convergence=False)
    reports, probes = [], []
    for a, c in domains:
        N = int(round((c - a) / spacing)) + 1
        chart = Chart.interval(a, c, N)
        g = metric_preset(metric, chart)
        H0 = initial(chart)
        mask = chart.subchart_mask([probe])
        rep = run_dirichlet(H0, b, g, lam, cfg, probe=mask)
        reports.append(rep)
        probes.append(rep.state.H[mask])
    table = {}
    for i in range(len(domains)):
        for j in range(i + 1, len(domains)):
            if probes[i].shape != probes[j].shape:
                raise FlowError("probe grids differ between domains")
            table[(i, j)] = float(donaldson_distance(probes[i], probes[j]).max())
    return ExhaustionReport([tuple(d) for d in domains], reports, table, cfg.t_max)


def _weighted_system(g: MetricField):
    A = laplacian_matrix(g)
    w = g.measure.ravel()
    inner = g.chart.interior.ravel()
    idx = np.flatnonzero(inner)
    M = -(sp.diags(w) @ A)[idx][:, idx]
    return M.tocsr(), w, idx


def solve_laplace(q: np.ndarray, g: MetricField, rtol: float = 1e-12) -> np.ndarray:
    """Solve ``Lap f = q`` by conjugate gradients in the ``dmu``-weighted inner product.

    Periodic charts return the mean-zero solution (``q`` must have zero mean);
    dirichlet charts impose ``f = 0`` on the boundary.
    """
    M, w, idx = _weighted_system(g)
    rhs = -(w * q.ravel())[idx]
    asym = abs(M - M.T).max() if M.nnz else 0.0
    symmetric = asym <= 1e-10 * max(abs(M).max(), 1e-300)
    if symmetric:
        f_int, info = spla.cg(M, rhs, rtol=rtol, atol=0.0, maxiter=20 * M.shape[0])
    else:
        f_int, info = spla.gmres(M, rhs, rtol=rtol, atol=0.0, maxiter=20 * M.shape[0])
    if info != 0:
        raise PoissonError(f"linear solver did not converge (info={info})")
    f = np.zeros(int(np.prod(g.chart.shape)))
    f[idx] = f_int
    f = f.reshape(g.chart.shape)
    if g.chart.closed:
        f -= integrate(f, g) / g.volume()
    return f


@dataclass
class PoissonResult:
    f: np.ndarray
    H: np.ndarray
    residual: float
    iterations: int
    aux: np.ndarray | None = None


def poisson_normalize(
    H0, b, g, lam, rtol: float = 1e-12, mean_tol: float = 1e-8, max_iter: int = 30, auxiliary: bool = False,
    tol: float = 1e-10,
) -> PoissonResult:
    """Conformal factor ``f`` with ``tr Phi(e^f H0) = 0``.

    Solves ``Lap f = (4/r) tr Phi`` and repeats on the updated metric until the
    trace defect is at solver level (the discrete curvature is only
    approximately additive under conformal changes). With ``auxiliary=True``
    on a dirichlet chart also returns ``v`` solving ``Lap v = -|Phi(H0)|``,
    ``v = 0`` on the boundary.

    Raises:
        PoissonError: on a closed chart when ``integral tr Phi`` is not zero.
    """
    H0 = np.asarray(H0, dtype=complex)
    r = b.rank
    trphi = np.trace(phi(H0, b, g, lam), axis1=-2, axis2=-1).real
    if g.chart.closed:
        mean = integrate(trphi, g) / g.volume()
        if abs(mean) > mean_tol * max(1.0, float(np.abs(trphi).max())):
            raise PoissonError(f"trace of Phi has nonzero mean {mean:.3e}; no periodic solution")
    aux = None
    if auxiliary:
        if g.chart.closed:
            raise PoissonError("the auxiliary problem needs a dirichlet chart")
        P = phi(H0, b, g, lam)
        aux = solve_laplace(-np.sqrt(np.maximum(norm2_h(P, H0), 0)), g, rtol)
    f = np.zeros(g.chart.shape)
    H = H0
    scale = max(1.0, float(np.abs(trphi).max()))
    res = prev = np.inf
    for it in range(1, max_iter + 1):
        q = (4.0 / r) * trphi
        if g.chart.closed:
            q = q - integrate(q, g) / g.volume()
        else:
            q = np.where(g.chart.interior, q, 0.0)
        df = solve_laplace(q, g, rtol)
        f = f + df
        H = np.exp(f)[..., None, None] * H0
        trphi = np.trace(phi(H, b, g, lam), axis1=-2, axis2=-1).real
        if not g.chart.closed:
            trphi = np.where(g.chart.interior, trphi, 0.0)
        res = float(np.abs(trphi).max())
        if res < tol * scale or res > 0.5 * prev:
            break
        prev = res
    return PoissonResult(f, hermitian_part(H), res, it, aux)
