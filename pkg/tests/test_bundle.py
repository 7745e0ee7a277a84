import numpy as np
import pytest
from hypothesis import given, strategies as st

from ahym.bundle import (
    BUNDLE_PRESETS,
    BundleError,
    FlatHiggsBundle,
    bundle_from_config,
    bundle_preset,
    check_metric,
    complex_matrix,
    constant_metric,
    equivariant_interpolation,
    higgs_adjoint,
    higgs_bracket,
    inv,
    min_eig,
    perturbed_metric,
    random_hermitian_field,
    seam_check,
    smooth_step,
    trim_closing,
    validate_bundle,
)
from ahym.geometry import Chart, MetricField


def commuting_family(seed, r, n, unipotent=False):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(r, r)) + 1j * rng.normal(size=(r, r)) + 3 * np.eye(r)
    Pi = np.linalg.inv(P)
    if unipotent:
        N = np.diag(np.ones(r - 1), 1)
        hol = [P @ (np.eye(r) + rng.uniform(0.3, 1.5) * N) @ Pi for _ in range(n)]
    else:
        hol = [P @ np.diag(np.exp(rng.uniform(-0.7, 0.7, r) + 1j * rng.uniform(0, 3, r))) @ Pi for _ in range(n)]
    th = [P @ np.diag(rng.normal(size=r)) @ Pi if not unipotent else np.zeros((r, r)) for _ in range(n)]
    return FlatHiggsBundle(r, tuple(hol), tuple(th))


def test_presets_are_valid():
    for name in BUNDLE_PRESETS:
        for n in (1, 2):
            b = bundle_preset(name, n)
            assert validate_bundle(b) == []
            assert b.dim == n
    with pytest.raises(BundleError):
        bundle_preset("spin", 1)


def test_validation_reports_each_family():
    a = np.array([[0, 1], [0, 0]])
    c = np.array([[1, 0], [0, -1]])
    b = FlatHiggsBundle(2, (np.eye(2) + a, np.eye(2)), (c, np.zeros((2, 2))))
    kinds = {v.kind for v in validate_bundle(b)}
    assert kinds == {"mixed"}
    b = FlatHiggsBundle(2, (np.eye(2), np.eye(2)), (a, c))
    (v,) = validate_bundle(b)
    assert v.kind == "higgs" and v.indices == (0, 1) and v.norm == pytest.approx(2.0)
    b = FlatHiggsBundle(2, (np.eye(2) + a, np.diag([2.0, 1.0])), (np.zeros((2, 2)),) * 2)
    assert [v.kind for v in validate_bundle(b)] == ["holonomy"]


def test_singular_holonomy_rejected():
    b = FlatHiggsBundle(2, (np.array([[1.0, 1.0], [1.0, 1.0]]),), (np.zeros((2, 2)),))
    with pytest.raises(BundleError):
        validate_bundle(b)


def test_rank_bounds():
    with pytest.raises(BundleError):
        FlatHiggsBundle(5, (np.eye(5),), (np.zeros((5, 5)),))


def test_holonomy_needs_periodic_axis():
    b = bundle_preset("unipotent2", 1)
    with pytest.raises(BundleError):
        b.check_chart(Chart.interval(0, 1, 8))


def test_complex_matrix_parsing():
    M = complex_matrix([[[1, 0], [0, 2]], [[0, -2], [3, 0]]])
    np.testing.assert_array_equal(M, [[1, 2j], [-2j, 3]])
    with pytest.raises(BundleError):
        complex_matrix([[1, 2], [3, 4]])
    b = bundle_from_config({"rank": 2, "higgs": [[[[0, 0], [1, 0]], [[0, 0], [0, 0]]]]}, 2)
    np.testing.assert_array_equal(b.higgs[0], [[0, 1], [0, 0]])
    np.testing.assert_array_equal(b.holonomy[1], np.eye(2))


def test_equivariant_interpolation_unipotent_closed_form():
    ch = Chart.periodic([1.0], [16])
    H = equivariant_interpolation(bundle_preset("unipotent2", 1), ch)
    beta = smooth_step(ch.coords()[0])
    exact = np.stack([np.ones(16), -beta, -beta, 1 + beta**2], -1).reshape(16, 2, 2)
    np.testing.assert_allclose(H, exact, atol=1e-13)


@given(seed=st.integers(0, 10_000), r=st.integers(1, 3), n=st.integers(1, 2), unipotent=st.booleans())
def test_equivariant_constructions_obey_seam_law(seed, r, n, unipotent):
    if unipotent and r == 1:
        r = 2
    b = commuting_family(seed, r, n, unipotent)
    assert validate_bundle(b, 1e-9) == []
    ch = Chart.periodic([1.0] * n, [8] * n)
    for H in (
        equivariant_interpolation(b, ch, closing=True),
        perturbed_metric(b, ch, 0.3, 2, seed, closing=True),
    ):
        assert seam_check(H, b, ch) < 1e-10
        check_metric(trim_closing(H, ch))


def test_seam_check_detects_violation():
    b = bundle_preset("unipotent2", 1)
    ch = Chart.periodic([1.0], [8])
    H = constant_metric(ch, np.eye(2), closing=True)
    assert seam_check(H, b, ch) > 0.1
    with pytest.raises(BundleError):
        seam_check(constant_metric(ch, np.eye(2)), b, ch)


def test_check_metric():
    ch = Chart.periodic([1.0], [4])
    check_metric(constant_metric(ch, np.eye(2)))
    with pytest.raises(BundleError):
        check_metric(constant_metric(ch, np.array([[1, 1], [0, 1]])))
    with pytest.raises(BundleError):
        check_metric(constant_metric(ch, np.diag([1.0, -1.0])))
    bad = constant_metric(ch, np.eye(2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(BundleError):
        check_metric(bad)


@given(seed=st.integers(0, 10_000), r=st.integers(1, 4))
def test_small_inverse_and_min_eig(seed, r):
    ch = Chart.periodic([1.0], [6])
    S = random_hermitian_field(ch, r, 0.8, 3, seed)
    w, V = np.linalg.eigh(S)
    H = (V * np.exp(w)[..., None, :]) @ V.conj().swapaxes(-1, -2)
    np.testing.assert_allclose(inv(H) @ H, np.broadcast_to(np.eye(r), H.shape), atol=1e-10)
    assert min_eig(H) == pytest.approx(np.linalg.eigvalsh(H).min(), rel=1e-10)


def test_higgs_adjoint_and_bracket_closed_form():
    # theta = [[0, 1], [0, 0]], H = diag(e^w, e^-w): theta* = [[0, 0], [e^{2w}, 0]],
    # bracket = diag(e^{2w}, -e^{2w})
    ch = Chart.periodic([1.0], [8])
    w = 0.3 * np.sin(2 * np.pi * ch.coords()[0])
    H = np.zeros((8, 2, 2), complex)
    H[:, 0, 0], H[:, 1, 1] = np.exp(w), np.exp(-w)
    b = bundle_preset("nilpotent-higgs2", 1)
    ts = higgs_adjoint(b.higgs, H)
    np.testing.assert_allclose(ts[0][:, 1, 0], np.exp(2 * w))
    br = higgs_bracket(b.higgs, H, MetricField.flat(ch))
    np.testing.assert_allclose(br[:, 0, 0], np.exp(2 * w))
    np.testing.assert_allclose(br[:, 1, 1], -np.exp(2 * w))
    np.testing.assert_allclose(br[:, 0, 1], 0)


def test_smooth_step():
    t = np.linspace(-0.5, 1.5, 41)
    s = smooth_step(t)
    assert np.all(s[t <= 0] == 0) and np.all(s[t >= 1] == 1)
    assert np.all(np.diff(s) >= 0)
    assert smooth_step(np.array([0.5]))[0] == pytest.approx(0.5)
