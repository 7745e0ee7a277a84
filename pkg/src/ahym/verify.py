"""Built-in invariant batteries driven by ``ahym verify <suite>``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bundle import bundle_preset, equivariant_interpolation, perturbed_metric, random_hermitian_field
from .curvature import degree, first_chern, mean_curvature_higgs, sub_degree
from .diagnostics import gauge_identity_defect, key_identity_residual, metric_from_log
from .flow import FlowConfig, run_closed
from .geometry import Chart, MetricField, affine_laplacian, check_gauduchon, integrate, metric_preset
from .stability import induced_degree, invariant_subspaces, projection_field


@dataclass
class Check:
    name: str
    value: float
    limit: float
    at_least: bool = False  # pass when value >= limit instead of value <= limit

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value >= self.limit if self.at_least else self.value <= self.limit

    def line(self) -> str:
        op = ">=" if self.at_least else "<="
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} ({op} {self.limit:.6g})"


def _ratios(vals):
    return [vals[i] / vals[i + 1] for i in range(len(vals) - 1)]


def _torus(N, n=2):
    ch = Chart.periodic([1.0] * n, [N] * n)
    return ch, MetricField.flat(ch)


def _random_pair(b, ch, a0=0.3, a1=0.2, seed=1):
    """Equivariant ``H0`` and ``H = H0 exp(s)`` with a random ``H0``-self-adjoint ``s``."""
    H0 = perturbed_metric(b, ch, a0, 2, seed=seed)
    S = random_hermitian_field(ch, b.rank, a1, 2, seed=seed + 6)
    return H0, metric_from_log(H0, np.linalg.solve(H0, S))


def gauduchon_laws() -> list[Check]:
    out = []
    for n in (1, 2):
        _, g = _torus(32, n)
        out.append(Check(f"flat n={n} Gauduchon residual", check_gauduchon(g), 1e-12))
    ch, _ = _torus(32)
    out.append(Check("product-sin n=2 Gauduchon residual", check_gauduchon(metric_preset("product-sin", ch)), 1e-8))

    vals = []
    for N in (32, 64):
        ch, g = _torus(N)
        x, y = ch.coords()
        f = np.exp(np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y))
        vals.append(abs(integrate(affine_laplacian(f, g), g)) / np.sqrt(integrate(f**2, g)))
    out.append(Check("|int Lap f dmu| / |f|, flat 2-torus N=64", vals[-1], 1e-3))

    errs = []
    for N in (64, 128):
        ch, g = _torus(N, 1)
        u = np.sin(2 * np.pi * ch.coords()[0])
        errs.append(np.abs(affine_laplacian(u, g) + 4 * np.pi**2 * u).max() / (4 * np.pi**2))
    out.append(Check("Lap sin(2 pi x) relative error, N=128", errs[-1], 1e-2))
    out.append(Check("Lap sin(2 pi x) refinement ratio", _ratios(errs)[0], 3.5, at_least=True))
    return out


def flow_monotonicity() -> list[Check]:
    N = 64
    ch, g = _torus(N, 1)
    b = bundle_preset("diag-higgs2", 1)
    H0 = perturbed_metric(b, ch, 0.3, 2, seed=3)
    rep = run_closed(H0, b, g, None, FlowConfig(t_max=0.3, sample_interval=0.005, stop_on_convergence=False))
    t = rep.times
    sup_phi = rep.column("sup_phi")
    slack = (1e-8 + 10 / N**2) * np.diff(t)
    tr = rep.column("int_tr_phi")
    I = rep.column("i_functional")
    return [
        Check("sup|Phi| increase beyond slack", float(max(0.0, (np.diff(sup_phi) - slack).max())), 0.0),
        Check("trace drift / (1 + t)", float((np.abs(tr - tr[0]) / (1 + t)).max()), 1e-4),
        Check("I(t) increase", float(max(0.0, np.diff(I).max())), 1e-9),
    ]


def key_identity() -> list[Check]:
    b = bundle_preset("nilpotent-higgs2", 2)
    res = []
    for N in (32, 64, 128):
        ch, g = _torus(N)
        H0, H = _random_pair(b, ch)
        res.append(abs(key_identity_residual(H0, H, b, g, 0.0)))
    r = _ratios(res)
    return [
        Check("key identity residual, N=128", res[-1], 1e-3),
        Check("refinement ratio 32 -> 64", r[0], 3.5, at_least=True),
        Check("refinement ratio 64 -> 128", r[1], 3.5, at_least=True),
    ]


def gauge_equivalence() -> list[Check]:
    out = []
    for name, n in (("nilpotent-higgs2", 2), ("diag-higgs2", 2), ("unipotent2", 1)):
        b = bundle_preset(name, n)
        ch, g = _torus(32, n)
        H0, H = _random_pair(b, ch)
        out.append(Check(f"{name} gauge identity relative defect", gauge_identity_defect(H0, H, b, g), 1e-8))
    return out


def chern_weil() -> list[Check]:
    out = []
    b = bundle_preset("nilpotent-higgs2", 2)
    ch, g = _torus(32)
    H0, H = _random_pair(b, ch)
    trK = np.trace(mean_curvature_higgs(H0, b, g), axis1=-2, axis2=-1).real
    _, c1 = first_chern(H0, b, g)
    out.append(Check("tr K - tr_g c1 (sup)", float(np.abs(trK - c1).max()), 1e-10))
    out.append(Check("deg(E, H0) - deg(E, H)", abs(degree(H0, b, g) - degree(H, b, g)), 1e-10))

    b = bundle_preset("unipotent2", 1)
    gaps = []
    for N in (64, 128):
        ch, g = _torus(N, 1)
        H0 = equivariant_interpolation(b, ch)
        (sub,) = invariant_subspaces(b)
        pi = projection_field(sub, H0)
        gaps.append(abs(sub_degree(pi, H0, b, g) - induced_degree(sub, H0, b, g)))
    out.append(Check("sub-degree: projection formula vs induced metric, N=128", gaps[-1], 1e-3))
    out.append(Check("sub-degree gap refinement ratio", _ratios(gaps)[0], 3.5, at_least=True))
    return out


SUITES: dict[str, Callable[[], list[Check]]] = {
    "gauduchon-laws": gauduchon_laws,
    "flow-monotonicity": flow_monotonicity,
    "key-identity": key_identity,
    "gauge-equivalence": gauge_equivalence,
    "chern-weil": chern_weil,
}
