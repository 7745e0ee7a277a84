"""Acceptance suite: one PASS/FAIL line per criterion, printed as each test finishes.

Run with ``pytest -v tests/test_acceptance.py``; the lines are repeated in the
terminal summary.
"""

import time
from functools import lru_cache

import numpy as np
import pytest

from ahym.bundle import bundle_preset, equivariant_interpolation, perturbed_metric, random_hermitian_field
from ahym.cli import PRESETS, build_scenario
from ahym.curvature import degree
from ahym.diagnostics import (
    donaldson_distance,
    gauge_identity_defect,
    key_identity_residual,
    metric_from_log,
)
from ahym.flow import CONVERGED, DIVERGED, FlowConfig, log_cosh_certificate, run_closed, run_dirichlet, run_exhaustion
from ahym.geometry import Chart, MetricField, affine_laplacian, integrate, metric_preset
from ahym.stability import (
    STABLE,
    extract_destabilizer,
    gamma,
    match_subspace,
    normalize_snapshot,
    slope_table,
)


@pytest.fixture
def criterion(request, capsys):
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config._acceptance_lines = getattr(request.config, "_acceptance_lines", []) + [(n, line)]
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def scenario(name, **flow):
    cfg = {k: v for k, v in PRESETS[name].items() if k != "description"}
    cfg["flow"] = dict(cfg.get("flow", {}), **flow)
    return build_scenario(cfg)


@lru_cache(maxsize=None)
def preset_run(name):
    sc = scenario(name, keep_snapshots=100_000)
    start = time.perf_counter()
    rep = run_closed(sc.H0, sc.bundle, sc.metric, sc.lam, sc.flow)
    return sc, rep, time.perf_counter() - start


def circle(N):
    ch = Chart.periodic([1.0], [N])
    return ch, MetricField.flat(ch)


def scalar(u):
    return np.exp(u)[..., None, None].astype(complex)


def test_c01_laplacian_anchor(criterion):
    start = time.perf_counter()
    errs = []
    for N in (64, 128):
        ch, g = circle(N)
        u = np.sin(2 * np.pi * ch.coords()[0])
        errs.append(np.abs(affine_laplacian(u, g) + 4 * np.pi**2 * u).max() / (4 * np.pi**2))
    ratio = errs[0] / errs[1]
    wall = time.perf_counter() - start
    criterion(1, errs[1] < 1e-2 and ratio >= 3.5 and wall < 1,
              f"Lap sin(2 pi x) rel err {errs[1]:.3e} at N=128, ratio {ratio:.3f}, {wall:.2f}s")


def test_c02_integral_law(criterion):
    start = time.perf_counter()
    vals = {}
    for name in ("flat", "product-sin"):
        for N in (32, 64):
            ch = Chart.periodic([1.0, 1.0], [N, N])
            g = MetricField.flat(ch) if name == "flat" else metric_preset(name, ch)
            x, y = ch.coords()
            f = np.exp(np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
            vals[name, N] = abs(integrate(affine_laplacian(f, g), g)) / np.sqrt(integrate(f**2, g))
    wall = time.perf_counter() - start
    # the discrete operator is in divergence form, so the integral vanishes to roundoff;
    # refinement therefore either shows second-order decay or stays at the roundoff floor
    decays = all(vals[n, 64] <= max(vals[n, 32] / 3.5, 1e-12) for n in ("flat", "product-sin"))
    ok = vals["flat", 64] <= 1e-3 and decays and wall < 5
    criterion(2, ok, f"|int Lap f| / |f| = {vals['flat', 64]:.2e} (flat), {vals['product-sin', 64]:.2e} "
                     f"(product-sin) at N=64^2, {wall:.2f}s")


def test_c03_sup_phi_monotone(criterion):
    sc, rep, wall = preset_run("diag-higgs2")
    h2 = sc.chart.spacing[0] ** 2
    t, sup_phi = rep.times, rep.column("sup_phi")
    excess = float(max(0.0, (np.diff(sup_phi) - (1e-8 + 10 * h2) * np.diff(t)).max()))
    criterion(3, excess == 0.0 and wall < 60,
              f"diag-higgs2 N=128: {len(t)} samples to t={t[-1]:.3g}, sup|Phi| {sup_phi[0]:.3e} -> "
              f"{sup_phi[-1]:.3e}, worst excess {excess:.1e}, {wall:.1f}s")


def test_c04_trace_conservation(criterion):
    _, rep, _ = preset_run("diag-higgs2")
    t, tr = rep.times, rep.column("int_tr_phi")
    drift = float((np.abs(tr - tr[0]) / (1 + t)).max())
    criterion(4, drift <= 1e-4, f"max |int tr Phi(t) - int tr Phi(0)| / (1 + t) = {drift:.2e}")


def test_c05_key_identity(criterion):
    start = time.perf_counter()
    b = bundle_preset("nilpotent-higgs2", 2)
    res = []
    for N in (32, 64, 128):
        ch = Chart.periodic([1.0, 1.0], [N, N])
        g = MetricField.flat(ch)
        H0 = perturbed_metric(b, ch, 0.3, 2, seed=1)
        S = random_hermitian_field(ch, 2, 0.2, 2, seed=7)
        H = metric_from_log(H0, np.linalg.solve(H0, S))
        res.append(abs(key_identity_residual(H0, H, b, g, 0.0)))
    ratios = [res[0] / res[1], res[1] / res[2]]
    wall = time.perf_counter() - start
    criterion(5, res[-1] < 1e-3 and min(ratios) >= 3.5 and wall < 10,
              f"residual {res[-1]:.3e} at N=128^2, ratios {ratios[0]:.2f} {ratios[1]:.2f}, {wall:.1f}s")


def test_c06_heat_rate(criterion):
    sc, rep, wall = preset_run("heat-circle")
    t, sup_phi = rep.times, rep.column("sup_phi")
    keep = (t > 0.05) & (sup_phi > 1e-9)
    rate = -np.polyfit(t[keep], np.log(sup_phi[keep]), 1)[0]
    u = np.log(rep.state.H[..., 0, 0].real)
    rel = abs(rate / (4 * np.pi**2) - 1)
    ok = rep.reason == CONVERGED and rel < 0.1 and np.ptp(u) < 1e-6 and wall < 10
    criterion(6, ok, f"{rep.reason} at t={rep.state.t:.3g}, rate {rate:.4f} vs 4 pi^2 = {4 * np.pi**2:.4f} "
                     f"({100 * rel:.2f}%), final spread of log H {np.ptp(u):.1e}, {wall:.2f}s")


def test_c07_dirichlet_uniqueness(criterion):
    start = time.perf_counter()
    ch = Chart.interval(0.0, 1.0, 21)
    g = MetricField.flat(ch)
    x = ch.coords()[0]
    b = bundle_preset("trivial", 1)
    cfg = FlowConfig(integrator="implicit", dt=0.01, t_max=4.0, tol=1e-12)
    H1 = run_dirichlet(scalar(x + np.sin(np.pi * x)), b, g, 0.0, cfg).state.H
    H2 = run_dirichlet(scalar(x - 2 * np.sin(3 * np.pi * x)), b, g, 0.0, cfg).state.H
    twin = float(donaldson_distance(H1, H2).max())

    # diagonal metrics with linear log entries are Hermitian-Einstein (lambda = 0) for the
    # diagonal Higgs field on any chart whose Laplacian kills affine functions
    worst = np.inf
    for chart, name in ((Chart.interval(0.0, 1.0, 65), "flat"), (Chart.interval(-3.0, 3.0, 121), "conformal:sech2")):
        gm = MetricField.flat(chart) if name == "flat" else metric_preset(name, chart)
        y = chart.coords()[0]
        A = np.zeros(chart.shape + (2, 2), complex)
        B = np.zeros_like(A)
        A[..., 0, 0], A[..., 1, 1] = np.exp(y), np.exp(-2 * y)
        B[..., 0, 0], B[..., 1, 1] = np.exp(0.5 * y + 0.2), np.exp(0.3 - y)
        lap = affine_laplacian(donaldson_distance(A, B), gm)[chart.interior]
        worst = min(worst, float((lap + 10 * chart.spacing[0] ** 2).min()))
    wall = time.perf_counter() - start
    criterion(7, twin < 1e-8 and worst >= 0 and wall < 60,
              f"twin sup sigma {twin:.2e}; min(Lap sigma + 10 h^2) = {worst:.3e} over two HE pairs, {wall:.2f}s")


def test_c08_gauge_identity(criterion):
    worst = 0.0
    count = 0
    for name in ("diag-higgs2", "heat-circle", "semistable-split"):
        sc, rep, _ = preset_run(name)
        for _, s in rep.snapshots:
            H = metric_from_log(sc.H0, s)
            worst = max(worst, gauge_identity_defect(sc.H0, H, sc.bundle, sc.metric))
            count += 1
    criterion(8, worst < 1e-8, f"max relative defect {worst:.2e} over {count} samples of three runs")


def test_c09_unipotent_stability_pipeline(criterion):
    b = bundle_preset("unipotent2", 1)
    verdicts = {}
    for N in (128, 256):
        ch, g = circle(N)
        verdicts[N] = slope_table(b, equivariant_interpolation(b, ch), g)
    v = verdicts[256]
    (entry,) = v.entries
    h2 = (1 / 256) ** 2
    consistent = abs(verdicts[128].entries[0].degree - entry.degree) <= 2 * h2 * 4
    table_ok = v.verdict == STABLE and entry.degree < 0 and v.margin > 0 and consistent

    ch, g = circle(256)
    H0 = equivariant_interpolation(b, ch)
    rep = run_closed(H0, b, g, None, FlowConfig(t_max=1e3, sample_interval=0.05, tol=1e-5, wall_limit=200))
    sup_phi = rep.column("sup_phi")[-1]
    deg_drift = abs(degree(H0, b, g) - degree(rep.state.H, b, g))
    ok = table_ok and rep.reason == CONVERGED and sup_phi < 1e-5 and deg_drift < 1e-4
    criterion(9, ok, f"verdict {v.verdict}, sub-line degree {entry.degree:.1e}, margin {v.margin:.1e}; "
                     f"flow {rep.reason} at t={rep.state.t:.3g} ({rep.wall_time:.0f}s) with sup|Phi| "
                     f"{sup_phi:.3e}; degree drift {deg_drift:.1e}")


def test_c10_i_functional_decay(criterion):
    parts, ok = [], True
    for name in ("heat-circle", "stationary", "diag-higgs2"):
        _, rep, _ = preset_run(name)
        I = rep.column("i_functional")
        tail = I[len(I) // 2:]
        rise = float(max(0.0, np.diff(tail).max())) if len(tail) > 1 else 0.0
        ok &= rep.reason == CONVERGED and I[-1] < 1e-8 and rise <= 1e-9
        parts.append(f"{name} {rep.reason} I={I[-1]:.1e} rise {rise:.0e}")
    criterion(10, ok, "; ".join(parts))


def test_c11_exhaustion(criterion):
    sc = scenario("sech-exhaustion")
    ecfg = sc.cfg["exhaustion"]

    def initial(chart):
        return scalar(1.0 / (1.0 + chart.coords()[0] ** 2))

    start = time.perf_counter()
    rep = run_exhaustion(initial, sc.bundle, [tuple(d) for d in ecfg["domains"]], ecfg["spacing"],
                         tuple(ecfg["probe"]), cfg=sc.flow)
    big = ecfg["domains"][-1]
    chart = Chart.interval(big[0], big[1], int(round((big[1] - big[0]) / ecfg["spacing"])) + 1)
    cert = log_cosh_certificate(metric_preset("conformal:sech2", chart))
    wall = time.perf_counter() - start
    s02, s12 = rep.table[(0, 2)], rep.table[(1, 2)]
    criterion(11, s12 < s02 and cert <= 1 + 1e-3 and wall < 300,
              f"sup sigma on [-1, 1] vs the 15-domain: {s02:.3e} (inner 5) > {s12:.3e} (inner 10); "
              f"sup|Lap log cosh| = {cert:.6f}, {wall:.1f}s")


def test_c12_destabilizer_gamma(criterion):
    sc, rep, _ = preset_run("semistable-split")
    snaps = [normalize_snapshot(s, sc.H0, sc.metric) for _, s in rep.snapshots[-5:]]
    d = extract_destabilizer(snaps, sc.H0, sc.bundle, sc.metric)
    ok = rep.reason == DIVERGED and d is not None
    detail = f"flow {rep.reason} at t={rep.state.t:.3g}"
    if d is not None:
        v = slope_table(sc.bundle, sc.H0, sc.metric)
        sub, dist = match_subspace(d.pi, sc.H0, [e.subspace for e in v.entries])
        entry = next(e for e in v.entries if e.subspace is sub)
        direct = gamma(d.mu, d.ranks, v.degree, sc.bundle.rank, [entry.degree])
        ok &= abs(d.gamma - direct) < 1e-4 and dist < 1e-6
        detail += f"; extractor gamma {d.gamma:.2e}, slope table gamma {direct:.2e}, subspace distance {dist:.1e}"
    criterion(12, ok, detail)
