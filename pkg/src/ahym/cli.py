"""Scenario runner: ``ahym run | verify | presets | dump-schema``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .bundle import (
    BUNDLE_PRESETS,
    BundleError,
    FlatHiggsBundle,
    bundle_from_config,
    complex_matrix,
    constant_metric,
    equivariant_interpolation,
    perturbed_metric,
    random_hermitian_field,
    validate_bundle,
)
from .curvature import CurvatureError
from .diagnostics import CSV_COLUMNS, DiagnosticsError, gauge_identity_defect, key_identity_residual, metric_from_log
from .dump import FIELDS, MAGIC, VERSION, DumpError, read_dump, write_dump
from .flow import (
    DIVERGED,
    BLOWUP,
    FlowConfig,
    FlowError,
    FlowReport,
    log_cosh_certificate,
    poisson_normalize,
    run_closed,
    run_dirichlet,
    run_exhaustion,
)
from .geometry import Chart, GeometryError, MetricField, check_gauduchon, metric_preset, metric_preset_names
from .stability import (
    StabilityError,
    extract_destabilizer,
    gamma,
    match_subspace,
    normalize_snapshot,
    slope_table,
)
from .verify import SUITES, Check

log = logging.getLogger("ahym")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3
MODES = ("closed", "dirichlet", "exhaustion", "verify-identities", "stability-only")
INITIAL_KINDS = ("constant", "conformal-perturbation", "equivariant-perturbation", "equivariant-interpolation", "file")


class ConfigError(ValueError):
    """Bad scenario file; the message names the offending field."""


class InvariantFailure(RuntimeError):
    pass


NUMERIC_ERRORS = (FlowError, BundleError, CurvatureError, DiagnosticsError, GeometryError, StabilityError,
                  FloatingPointError, np.linalg.LinAlgError, DumpError)


# scenario presets ------------------------------------------------------------------

PRESETS: dict[str, dict] = {
    "heat-circle": {
        "description": "rank 1 on the flat unit circle; log H relaxes to its mean at rate 4 pi^2",
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [64]},
        "bundle": {"preset": "trivial"},
        "initial": {"kind": "conformal-perturbation", "profile": "sine", "amplitude": 1.0},
        "lambda": 0.0,
        "flow": {"t_max": 1.0, "sample_interval": 0.01, "tol": 1e-7},
    },
    "stationary": {
        "description": "diagonal Higgs field with the identity metric, already Hermitian-Einstein",
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [32]},
        "bundle": {"preset": "diag-higgs2"},
        "initial": {"kind": "constant"},
        "flow": {"t_max": 0.01},
    },
    "unipotent2-stable": {
        "description": "unipotent holonomy with the equivariant interpolation metric; slope table then flow",
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [64]},
        "bundle": {"preset": "unipotent2"},
        "initial": {"kind": "equivariant-interpolation"},
        "flow": {"t_max": 2.0, "tol": 1e-5},
        "stability": {"slope_table": True},
    },
    "diag-higgs2": {
        "description": "diagonal Higgs field, perturbed metric; converges to the Hermitian-Einstein metric",
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [128]},
        "bundle": {"preset": "diag-higgs2"},
        "initial": {"kind": "equivariant-perturbation", "amplitude": 0.3, "modes": 2, "seed": 3},
        "flow": {"t_max": 0.6, "sample_interval": 0.01},
    },
    "semistable-split": {
        "description": "nilpotent Higgs field, constant metric skew to the invariant line; the flow diverges",
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [16]},
        "bundle": {"preset": "nilpotent-higgs2"},
        "initial": {"kind": "constant", "value": [[[1, 0], [0.3, 0]], [[0.3, 0], [1, 0]]]},
        "flow": {"t_max": 20.0, "sample_interval": 0.5, "divergence_ceiling": 3.5},
        "stability": {"slope_table": True, "extract": True},
    },
    "sech-exhaustion": {
        "description": "rank 1 over the line with metric sech^2, nested dirichlet intervals",
        "mode": "exhaustion",
        "chart": {"lengths": [10.0], "points": [251], "topology": ["dirichlet"], "origin": [-5.0]},
        "metric": {"preset": "conformal:sech2"},
        "bundle": {"preset": "trivial"},
        "initial": {"kind": "conformal-perturbation", "profile": "lorentzian", "amplitude": 1.0},
        "lambda": 0.0,
        "flow": {"integrator": "implicit", "dt": 1e-3, "t_max": 1.0},
        "exhaustion": {"domains": [[-5, 5], [-10, 10], [-15, 15]], "spacing": 0.04, "probe": [-1, 1]},
    },
    "key-identity-torus": {
        "description": "identity checks on the flat 2-torus with a nilpotent Higgs field",
        "mode": "verify-identities",
        "chart": {"lengths": [1.0, 1.0], "points": [128, 128]},
        "bundle": {"preset": "nilpotent-higgs2"},
        "initial": {"kind": "equivariant-perturbation", "amplitude": 0.3, "modes": 2, "seed": 1},
        "lambda": 0.0,
        "verify": {"amplitude": 0.2, "seed": 7},
    },
}


# config access ---------------------------------------------------------------------

def _field(cfg: dict, path: str, kind=None, default=..., choices=None):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is ...:
                raise ConfigError(f"missing field '{path}'")
            return default
        node = node[part]
    if kind is not None and node is not None:
        try:
            if kind is float and isinstance(node, bool):
                raise TypeError
            node = kind(node)
        except (TypeError, ValueError):
            raise ConfigError(f"field '{path}': expected {kind.__name__}, got {node!r}") from None
    if choices is not None and node not in choices:
        raise ConfigError(f"field '{path}': {node!r} is not one of {list(choices)}")
    return node


def _list(cfg, path, item, length=None, default=...):
    val = _field(cfg, path, default=default)
    if val is default and default is not ...:
        return val
    if not isinstance(val, (list, tuple)):
        val = [val]
    try:
        out = [item(v) for v in val]
    except (TypeError, ValueError):
        raise ConfigError(f"field '{path}': expected a list of {item.__name__}") from None
    if length is not None and len(out) != length:
        raise ConfigError(f"field '{path}': expected {length} entries, got {len(out)}")
    return out


def load_config(path) -> dict:
    """Parse a YAML (or JSON) scenario file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg


# scenario assembly -----------------------------------------------------------------

@dataclass
class Scenario:
    mode: str
    chart: Chart
    metric: MetricField
    bundle: FlatHiggsBundle
    H0: np.ndarray
    lam: float | None
    flow: FlowConfig
    cfg: dict


def build_chart(cfg: dict) -> Chart:
    lengths = _list(cfg, "chart.lengths", float)
    n = len(lengths)
    points = _list(cfg, "chart.points", int, n)
    topology = _list(cfg, "chart.topology", str, n, default=["periodic"] * n)
    origin = _list(cfg, "chart.origin", float, n, default=None)
    try:
        return Chart(tuple(lengths), tuple(points), tuple(topology), None if origin is None else tuple(origin))
    except GeometryError as exc:
        raise ConfigError(f"chart: {exc}") from None


def build_metric(cfg: dict, chart: Chart) -> MetricField:
    name = _field(cfg, "metric.preset", str, default="flat")
    if name.split(":")[0] not in ("flat", "product-sin", "conformal") or (
        name.startswith("conformal:") and name not in metric_preset_names()
    ):
        raise ConfigError(f"field 'metric.preset': unknown preset {name!r}; known: {metric_preset_names()}")
    params = _field(cfg, "metric.params", default={}) or {}
    return metric_preset(name, chart, params, _field(cfg, "metric.c_nu", float, default=1.0))


def build_bundle(cfg: dict, chart: Chart) -> FlatHiggsBundle:
    bcfg = _field(cfg, "bundle", default={"preset": "trivial"})
    if not isinstance(bcfg, dict):
        raise ConfigError("field 'bundle': expected a mapping")
    if "preset" in bcfg and bcfg["preset"] not in BUNDLE_PRESETS:
        raise ConfigError(f"field 'bundle.preset': unknown preset {bcfg['preset']!r}; known: {list(BUNDLE_PRESETS)}")
    if "preset" not in bcfg and "rank" not in bcfg:
        raise ConfigError("field 'bundle': give either 'preset' or 'rank' with matrices")
    for key in ("holonomy", "higgs"):
        if len(bcfg.get(key, [])) > chart.dim:
            raise ConfigError(f"field 'bundle.{key}': more matrices than chart axes ({chart.dim})")
    b = bundle_from_config(bcfg, chart.dim)
    bad = validate_bundle(b)
    if bad:
        raise InvariantFailure("bundle data do not commute: " + "; ".join(map(str, bad)))
    b.check_chart(chart)
    return b


def _profile(icfg: dict, chart: Chart) -> np.ndarray:
    kind = _field(icfg, "profile", str, default="fourier", choices=("fourier", "sine", "lorentzian"))
    a = _field(icfg, "amplitude", float, default=0.2)
    X = chart.coords()
    if kind == "sine":
        k = _field(icfg, "mode", int, default=1)
        return a * np.sin(2 * np.pi * k * (X[0] - chart.origin[0]) / chart.lengths[0])
    if kind == "lorentzian":
        return a / (1.0 + sum(x**2 for x in X))
    S = random_hermitian_field(chart, 1, a, _field(icfg, "modes", int, default=2), _field(icfg, "seed", int, default=0))
    return S[..., 0, 0].real


def build_initial(cfg: dict, chart: Chart, b: FlatHiggsBundle) -> np.ndarray:
    icfg = _field(cfg, "initial", default={"kind": "equivariant-interpolation"})
    kind = _field(icfg, "kind", str, choices=INITIAL_KINDS)
    r = b.rank
    base = None
    if "value" in icfg or "base" in icfg:
        try:
            base = complex_matrix(icfg.get("value", icfg.get("base")))
        except BundleError as exc:
            raise ConfigError(f"field 'initial.value': {exc}") from None
        if base.shape != (r, r):
            raise ConfigError(f"field 'initial.value': expected {r}x{r}, got {base.shape}")
    if kind == "constant":
        if any(b.twisted(k) for k in range(b.dim)):
            raise ConfigError("initial kind 'constant' is not equivariant under nontrivial holonomy")
        return constant_metric(chart, np.eye(r) if base is None else base)
    if kind == "equivariant-interpolation":
        return equivariant_interpolation(b, chart)
    if kind == "equivariant-perturbation":
        return perturbed_metric(
            b, chart, _field(icfg, "amplitude", float, default=0.2), _field(icfg, "modes", int, default=2),
            _field(icfg, "seed", int, default=0), base,
        )
    if kind == "conformal-perturbation":
        ref = equivariant_interpolation(b, chart) if base is None else constant_metric(chart, base)
        return np.exp(_profile(icfg, chart))[..., None, None] * ref
    path = _field(icfg, "path", str)
    H = read_dump(path).get("H")
    if H is None or H.shape != chart.shape + (r, r):
        raise ConfigError(f"field 'initial.path': {path} holds no H of shape {chart.shape + (r, r)}")
    return H


def build_flow(cfg: dict) -> FlowConfig:
    fcfg = _field(cfg, "flow", default={}) or {}
    known = {f.name: f for f in fields(FlowConfig)}
    kw = {}
    for key, val in fcfg.items():
        if key not in known:
            raise ConfigError(f"field 'flow.{key}': unknown key; known: {sorted(known)}")
        if key == "integrator":
            kw[key] = _field(fcfg, key, str, choices=("euler", "rk2", "implicit"))
        elif key in ("consecutive", "sample_every", "keep_snapshots"):
            kw[key] = _field(fcfg, key, int)
        elif key == "stop_on_convergence":
            kw[key] = bool(val)
        else:
            kw[key] = None if val is None else _field(fcfg, key, float)
    return FlowConfig(**kw)


def build_scenario(cfg: dict) -> Scenario:
    mode = _field(cfg, "mode", str, default="closed", choices=MODES)
    chart = build_chart(cfg)
    metric = build_metric(cfg, chart)
    b = build_bundle(cfg, chart)
    H0 = build_initial(cfg, chart, b)
    lam = _field(cfg, "lambda", default="auto")
    if lam != "auto":
        lam = _field(cfg, "lambda", float)
    else:
        lam = None
    return Scenario(mode, chart, metric, b, H0, lam, build_flow(cfg), cfg)


# outputs ---------------------------------------------------------------------------

def write_csv(path, report: FlowReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for row in report.rows:
            w.writerow([repr(float(v)) for v in row.values()])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(_jsonable(data), indent=2) + "\n")


class Outputs:
    def __init__(self, cfg: dict, out_dir: str | None, name: str):
        d = out_dir or _field(cfg, "output.dir", str, default=".")
        self.dir = Path(d)
        self.prefix = _field(cfg, "output.prefix", str, default=name)
        self.dump = bool(_field(cfg, "output.dump", default=False))

    def path(self, suffix: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / f"{self.prefix}{suffix}"


# mode runners ----------------------------------------------------------------------

def _maybe_normalize(sc: Scenario) -> None:
    if _field(sc.cfg, "normalize", default=False):
        res = poisson_normalize(sc.H0, sc.bundle, sc.metric, sc.lam or 0.0)
        log.info("conformal normalization: residual %.3e after %d solves", res.residual, res.iterations)
        sc.H0 = res.H


def _flow_checks(report: FlowReport, chart: Chart) -> list[Check]:
    t = report.times
    tr = report.column("int_tr_phi")
    checks = [Check("trace drift / (1 + t)", float((np.abs(tr - tr[0]) / (1 + t)).max()), 1e-4)]
    if chart.closed and len(t) > 1:
        h2 = max(chart.spacing) ** 2
        sup_phi = report.column("sup_phi")
        inc = np.diff(sup_phi) - (1e-8 + 10 * h2) * np.diff(t)
        checks.append(Check("sup|Phi| increase beyond slack", float(max(0.0, inc.max())), 0.0))
    return checks


def run_flow_mode(sc: Scenario, out: Outputs) -> int:
    _maybe_normalize(sc)
    summary: dict = {"mode": sc.mode}
    scfg = _field(sc.cfg, "stability", default={}) or {}
    if scfg.get("slope_table"):
        summary["stability"] = slope_table(sc.bundle, sc.H0, sc.metric).to_json()
    if sc.mode == "closed":
        report = run_closed(sc.H0, sc.bundle, sc.metric, sc.lam, sc.flow)
    else:
        report = run_dirichlet(sc.H0, sc.bundle, sc.metric, sc.lam or 0.0, sc.flow)
    summary.update(report.summary())
    checks = _flow_checks(report, sc.chart)
    if scfg.get("extract") and report.reason == DIVERGED:
        summary["destabilizer"] = _extract(sc, report)
    write_csv(out.path(".csv"), report)
    last = report.state
    if out.dump:
        write_dump(out.path(".ahym"), last.H, last.Phi, report.snapshots[-1][1] if report.snapshots else None)
    summary["checks"] = {c.name: {"value": c.value, "limit": c.limit, "passed": c.passed} for c in checks}
    _write_json(out.path(".json"), summary)
    final = summary["final"] or {}
    print(f"{summary['reason']}: t={last.t:.6g} sup|Phi|={final.get('sup_phi', float('nan')):.3e} "
          f"lambda={report.lam:.6g}")
    if "stability" in summary:
        print(f"stability verdict: {summary['stability']['verdict']} (margin {summary['stability']['margin']:.3e})")
    for c in checks:
        print(c.line())
    if report.reason == BLOWUP:
        return EXIT_NUMERIC
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def _extract(sc: Scenario, report: FlowReport) -> dict:
    snaps = [normalize_snapshot(s, sc.H0, sc.metric) for _, s in report.snapshots]
    d = extract_destabilizer(snaps, sc.H0, sc.bundle, sc.metric)
    if d is None:
        return {"outcome": "inconclusive"}
    verdict = slope_table(sc.bundle, sc.H0, sc.metric)
    sub, dist = match_subspace(d.pi, sc.H0, [e.subspace for e in verdict.entries])
    entry = next((e for e in verdict.entries if e.subspace is sub), None)
    direct = None
    if entry is not None and len(d.ranks) == 1:
        direct = gamma(d.mu, d.ranks, verdict.degree, sc.bundle.rank, [entry.degree])
    return {
        "outcome": "found",
        "rank": d.rank,
        "degree": d.degree,
        "gamma": d.gamma,
        "gamma_from_slope_table": direct,
        "levels": list(d.mu),
        "matched_subspace_distance": dist,
        "rank_identity_defect": d.rank_identity_defect,
    }


def run_exhaustion_mode(sc: Scenario, out: Outputs) -> int:
    ecfg = _field(sc.cfg, "exhaustion")
    domains = [tuple(map(float, d)) for d in _field(ecfg, "domains")]
    spacing = _field(ecfg, "spacing", float)
    probe = tuple(_list(ecfg, "probe", float, 2))
    metric_name = _field(sc.cfg, "metric.preset", str, default="conformal:sech2")
    icfg = _field(sc.cfg, "initial")

    def initial(chart):
        return build_initial({"initial": icfg}, chart, sc.bundle)

    rep = run_exhaustion(initial, sc.bundle, domains, spacing, probe, metric_name, sc.lam or 0.0, sc.flow)
    largest = max(domains, key=lambda d: d[1] - d[0])
    chart = Chart.interval(largest[0], largest[1], int(round((largest[1] - largest[0]) / spacing)) + 1)
    checks = []
    if metric_name == "conformal:sech2":
        checks.append(Check("sup |Lap log cosh x|", log_cosh_certificate(metric_preset(metric_name, chart)), 1 + 1e-3))
    last = len(domains) - 1
    seq = [rep.table[(i, last)] for i in range(last)]
    checks.append(Check("probe distance increase as the inner domain grows", float(max(0.0, *np.diff(seq))), 0.0))
    summary = {
        "mode": sc.mode,
        "t_compare": rep.t_compare,
        "pairs": rep.rows(),
        "runs": [r.summary() for r in rep.reports],
        "checks": {c.name: {"value": c.value, "limit": c.limit, "passed": c.passed} for c in checks},
    }
    with open(out.path(".csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["inner_a", "inner_b", "outer_a", "outer_b", "sup_sigma_probe"])
        for row in rep.rows():
            w.writerow([*row["inner"], *row["outer"], repr(row["sup_sigma_probe"])])
    _write_json(out.path(".json"), summary)
    for row in rep.rows():
        print(f"sigma {row['inner']} vs {row['outer']}: {row['sup_sigma_probe']:.3e}")
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def run_identities_mode(sc: Scenario, out: Outputs) -> int:
    b, g = sc.bundle, sc.metric
    vcfg = _field(sc.cfg, "verify", default={}) or {}
    S = random_hermitian_field(sc.chart, b.rank, float(vcfg.get("amplitude", 0.2)), 2, int(vcfg.get("seed", 7)))
    if not sc.chart.closed:
        S[~sc.chart.interior] = 0.0
    H = metric_from_log(sc.H0, np.linalg.solve(sc.H0, S))
    lam = sc.lam or 0.0
    checks = [Check("gauge identity relative defect", gauge_identity_defect(sc.H0, H, b, g), 1e-8)]
    if sc.chart.closed:
        checks.append(Check("Gauduchon residual", check_gauduchon(g), 1e-8))
    checks.append(Check("key identity residual", abs(key_identity_residual(sc.H0, H, b, g, lam)), 1e-3))
    _write_json(out.path(".json"), {"mode": sc.mode, "checks": {c.name: {"value": c.value, "limit": c.limit,
                                                                          "passed": c.passed} for c in checks}})
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def run_stability_mode(sc: Scenario, out: Outputs) -> int:
    if not sc.chart.closed:
        raise ConfigError("mode 'stability-only' needs a closed chart")
    verdict = slope_table(sc.bundle, sc.H0, sc.metric)
    _write_json(out.path(".json"), {"mode": sc.mode, "stability": verdict.to_json()})
    print(f"verdict: {verdict.verdict} (margin {verdict.margin:.3e}, tolerance {verdict.tol:.1e})")
    for e in verdict.entries:
        print(f"  rank {e.rank} sub-bundle: degree {e.degree:.3e}, slope {e.slope:.3e}")
    return EXIT_OK


RUNNERS = {
    "closed": run_flow_mode,
    "dirichlet": run_flow_mode,
    "exhaustion": run_exhaustion_mode,
    "verify-identities": run_identities_mode,
    "stability-only": run_stability_mode,
}


# verbs -----------------------------------------------------------------------------

def cmd_run(args) -> int:
    target = args.scenario
    if Path(target).exists():
        cfg = load_config(target)
        name = Path(target).stem
    elif target in PRESETS:
        cfg = {k: v for k, v in PRESETS[target].items() if k != "description"}
        name = target
    else:
        raise ConfigError(f"{target}: no such file or preset (see 'ahym presets')")
    sc = build_scenario(cfg)
    return RUNNERS[sc.mode](sc, Outputs(cfg, args.out, name))


def cmd_verify(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; known: {sorted(SUITES)}")
    checks = SUITES[args.suite]()
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_INVARIANT


def cmd_presets(args) -> int:
    print("scenarios:")
    for name, p in PRESETS.items():
        print(f"  {name:20s} {p['description']}")
    print("metrics:")
    for name in metric_preset_names():
        print(f"  {name}")
    print("bundles:")
    for name in BUNDLE_PRESETS:
        print(f"  {name}")
    print("verify suites:")
    for name in SUITES:
        print(f"  {name}")
    return EXIT_OK


def cmd_dump_schema(args) -> int:
    schema = {
        "csv_columns": list(CSV_COLUMNS),
        "field_dump": {
            "magic": MAGIC.decode(),
            "version": VERSION,
            "header": ["u32 version", "u32 n", "u32 N_1 .. N_n", "u32 r", "u32 flags"],
            "flags": {name: 1 << i for i, name in enumerate(FIELDS)},
            "data": "per present field, prod(N_i)*r*r complex values, C order, little-endian float64 (re, im)",
            "field_order": list(FIELDS),
        },
        "config": {
            "mode": list(MODES),
            "initial.kind": list(INITIAL_KINDS),
            "flow": [f.name for f in fields(FlowConfig)],
        },
    }
    print(json.dumps(schema, indent=2))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ahym", description="Hermitian-Einstein heat flow on flat Higgs bundles.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run a scenario file or a named preset")
    r.add_argument("scenario")
    r.add_argument("--out", help="output directory (overrides output.dir)")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("verify", help="run a built-in invariant suite")
    v.add_argument("suite")
    v.set_defaults(func=cmd_verify)
    sub.add_parser("presets", help="list presets and suites").set_defaults(func=cmd_presets)
    sub.add_parser("dump-schema", help="print the CSV, dump and config schema").set_defaults(func=cmd_dump_schema)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantFailure as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
