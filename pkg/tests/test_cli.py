import json

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from ahym.cli import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, PRESETS, main
from ahym.dump import DumpError, read_dump, write_dump

HEAT = {
    "mode": "closed",
    "chart": {"lengths": [1.0], "points": [16]},
    "bundle": {"preset": "trivial"},
    "initial": {"kind": "conformal-perturbation", "profile": "sine", "amplitude": 0.5},
    "lambda": 0.0,
    "flow": {"t_max": 0.05, "sample_interval": 0.01},
}


def scenario(tmp_path, cfg, name="case"):
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_presets_listing(capsys):
    assert main(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


def test_dump_schema(capsys):
    assert main(["dump-schema"]) == EXIT_OK
    schema = json.loads(capsys.readouterr().out)
    assert schema["field_dump"]["flags"] == {"H": 1, "Phi": 2, "s": 4}
    assert "sup_phi" in schema["csv_columns"]


def test_run_from_file_writes_outputs(tmp_path):
    cfg = dict(HEAT, output={"dump": True})
    assert main(["run", scenario(tmp_path, cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    summary = json.loads((tmp_path / "out" / "case.json").read_text())
    assert summary["checks"]["trace drift / (1 + t)"]["passed"]
    rows = (tmp_path / "out" / "case.csv").read_text().splitlines()
    assert len(rows) > 2
    fields = read_dump(tmp_path / "out" / "case.ahym")
    assert fields["H"].shape == (16, 1, 1)


def test_runs_are_deterministic(tmp_path):
    path = scenario(tmp_path, HEAT)
    for d in ("a", "b"):
        assert main(["run", path, "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "case.csv").read_bytes() == (tmp_path / "b" / "case.csv").read_bytes()


def test_initial_from_dump(tmp_path):
    H = np.broadcast_to(np.diag([2.0, 0.5]), (16, 2, 2)).astype(complex)
    write_dump(tmp_path / "start.ahym", H)
    cfg = {
        "mode": "closed",
        "chart": {"lengths": [1.0], "points": [16]},
        "bundle": {"preset": "diag-higgs2"},
        "initial": {"kind": "file", "path": str(tmp_path / "start.ahym")},
        "flow": {"t_max": 0.01},
    }
    assert main(["run", scenario(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK


@pytest.mark.parametrize(
    "patch, needle",
    [
        ({"chart": {"lengths": [1.0], "points": ["many"]}}, "chart.points"),
        ({"flow": {"warp": 1}}, "flow.warp"),
        ({"bundle": {"preset": "nope"}}, "bundle.preset"),
        ({"mode": "sideways"}, "mode"),
        ({"initial": {"kind": "constant", "value": [[1, 0], [0, 1]]}}, "initial.value"),
    ],
)
def test_bad_fields_exit_usage(tmp_path, capsys, patch, needle):
    cfg = dict(HEAT, **patch)
    assert main(["run", scenario(tmp_path, cfg)]) == EXIT_USAGE
    assert needle in capsys.readouterr().err


def test_yaml_parse_error_has_position(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("mode: closed\nchart: [1, 2\n")
    assert main(["run", str(path)]) == EXIT_USAGE
    assert "line" in capsys.readouterr().err


def test_missing_target_and_suite(capsys):
    assert main(["run", "/nonexistent/scenario.yaml"]) == EXIT_USAGE
    assert main(["verify", "no-such-suite"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_noncommuting_bundle_is_invariant_failure(tmp_path, capsys):
    cfg = dict(
        HEAT,
        bundle={
            "rank": 2,
            "holonomy": [[[[1, 0], [1, 0]], [[0, 0], [1, 0]]]],
            "higgs": [[[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]],
        },
        initial={"kind": "equivariant-interpolation"},
    )
    assert main(["run", scenario(tmp_path, cfg)]) == EXIT_INVARIANT
    assert "commute" in capsys.readouterr().err


def test_stationary_preset(tmp_path, capsys):
    assert main(["run", "stationary", "--out", str(tmp_path)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("converged")


def test_stability_only(tmp_path, capsys):
    cfg = dict(HEAT, mode="stability-only", bundle={"preset": "unipotent2"}, initial={"kind": "equivariant-interpolation"})
    assert main(["run", scenario(tmp_path, cfg), "--out", str(tmp_path)]) == EXIT_OK
    assert "semistable-not-stable" in capsys.readouterr().out


def test_verify_suite(capsys):
    assert main(["verify", "gauge-equivalence"]) == EXIT_OK
    assert "FAIL" not in capsys.readouterr().out


@given(
    grid=st.lists(st.integers(1, 4), min_size=1, max_size=3),
    r=st.integers(1, 3),
    flags=st.integers(0, 3),
    seed=st.integers(0, 1000),
)
def test_dump_roundtrip(tmp_path_factory, grid, r, flags, seed):
    rng = np.random.default_rng(seed)
    shape = tuple(grid) + (r, r)

    def field():
        return rng.normal(size=shape) + 1j * rng.normal(size=shape)

    H = field()
    Phi = field() if flags & 1 else None
    s = field() if flags & 2 else None
    path = tmp_path_factory.mktemp("dump") / "f.ahym"
    write_dump(path, H, Phi, s)
    back = read_dump(path)
    assert back["H"].tobytes() == H.tobytes()
    assert ("Phi" in back) == (Phi is not None) and ("s" in back) == (s is not None)
    if Phi is not None:
        assert back["Phi"].tobytes() == Phi.tobytes()
    if s is not None:
        assert back["s"].tobytes() == s.tobytes()


def test_dump_rejects_corruption(tmp_path):
    path = tmp_path / "f.ahym"
    write_dump(path, np.ones((3, 2, 2), complex))
    raw = path.read_bytes()
    for bad in (b"XXXX" + raw[4:], raw[:-8], raw + b"\0", raw[:4] + b"\x09" + raw[5:]):
        path.write_bytes(bad)
        with pytest.raises(DumpError):
            read_dump(path)
