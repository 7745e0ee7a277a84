import numpy as np
import pytest
from hypothesis import given, strategies as st

from ahym.geometry import (
    Chart,
    GeometryError,
    MetricField,
    Twist,
    affine_laplacian,
    beltrami_laplacian,
    check_gauduchon,
    d1,
    d2,
    integrate,
    laplacian_matrix,
    metric_preset,
    metric_preset_names,
)


def circle(N, L=1.0):
    ch = Chart.periodic([L], [N])
    return ch, MetricField.flat(ch)


def test_chart_validation():
    with pytest.raises(GeometryError):
        Chart((1.0,), (3,), ("periodic",))
    with pytest.raises(GeometryError):
        Chart((1.0, 1.0), (8,), ("periodic",))
    with pytest.raises(GeometryError):
        Chart((-1.0,), (8,), ("periodic",))
    with pytest.raises(GeometryError):
        Chart((1.0,), (8,), ("closed",))


def test_spacing_and_coords():
    ch = Chart.periodic([2.0], [8])
    assert ch.spacing == (0.25,)
    assert ch.coords()[0][-1] == pytest.approx(1.75)
    assert ch.coords(closing=True)[0][-1] == pytest.approx(2.0)
    iv = Chart.interval(-1.0, 1.0, 5)
    assert iv.spacing == (0.5,)
    np.testing.assert_allclose(iv.coords()[0], [-1, -0.5, 0, 0.5, 1])
    assert iv.interior.tolist() == [False, True, True, True, False]


def test_laplacian_anchor_and_order():
    errs = []
    for N in (64, 128, 256):
        ch, g = circle(N)
        u = np.sin(2 * np.pi * ch.coords()[0])
        errs.append(np.abs(affine_laplacian(u, g) + 4 * np.pi**2 * u).max())
    # second-order stencil: error (4 pi^2)(2 pi h)^2 / 12 to leading order
    assert errs[1] / (4 * np.pi**2) < 1e-2
    assert errs[0] / errs[1] > 3.9 and errs[1] / errs[2] > 3.9
    assert errs[1] == pytest.approx(4 * np.pi**2 * (2 * np.pi / 128) ** 2 / 12, rel=1e-3)


def test_dirichlet_stencils_exact_on_quadratics():
    ch = Chart.interval(-1.0, 2.0, 13)
    x = ch.coords()[0]
    f = 3 * x**2 - x + 1
    np.testing.assert_allclose(d1(f, ch, 0), 6 * x - 1, atol=1e-12)
    np.testing.assert_allclose(d2(f, ch, 0, 0), 6.0, atol=1e-10)


def test_mixed_derivative():
    ch = Chart.periodic([1.0, 1.0], [64, 64])
    x, y = ch.coords()
    f = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
    exact = -(4 * np.pi**2) * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y)
    assert np.abs(d2(f, ch, 0, 1) - exact).max() < 0.05 * 4 * np.pi**2


def test_twisted_shift_matches_law():
    # H(x) = exp(2 c x) obeys H(x + 1) = rho^{-dagger} H(x) rho^{-1} with rho = exp(-c)
    c = 0.7
    N = 128
    ch = Chart.periodic([1.0], [N])
    x = ch.coords()[0]
    H = np.exp(2 * c * x)[:, None, None] * np.eye(1)
    rinv = np.array([[np.exp(c)]])
    tw = Twist((rinv.T,), (rinv,))
    dH = d1(H, ch, 0, tw)
    exact = 2 * c * H
    assert np.abs(dH - exact).max() < 1e-3


def test_quadrature_rules():
    ch = Chart.interval(0.0, 2.0, 9)
    g = MetricField.flat(ch)
    assert integrate(ch.coords()[0], g) == pytest.approx(2.0)
    ch, g = circle(16, 3.0)
    assert g.volume() == pytest.approx(3.0)
    assert integrate(np.cos(2 * np.pi * ch.coords()[0] / 3.0), g) == pytest.approx(0.0, abs=1e-14)


def test_c_nu_scales_measure():
    ch = Chart.periodic([1.0], [8])
    assert MetricField.flat(ch, c_nu=4.0).volume() == pytest.approx(0.25)


def test_metric_validation():
    ch = Chart.periodic([1.0], [8])
    with pytest.raises(GeometryError):
        MetricField(ch, -np.ones((8, 1, 1)))
    with pytest.raises(GeometryError):
        MetricField(ch, np.full((8, 1, 1), np.nan))
    with pytest.raises(GeometryError):
        MetricField(ch, np.ones((7, 1, 1)))


@given(
    coeffs=st.lists(st.floats(-1, 1), min_size=4, max_size=4),
    preset=st.sampled_from(["flat", "product-sin"]),
)
def test_integral_law_on_closed_torus(coeffs, preset):
    ch = Chart.periodic([1.0, 1.0], [24, 24])
    g = metric_preset(preset, ch)
    x, y = ch.coords()
    a, b, c, d = coeffs
    f = a * np.sin(2 * np.pi * x) + b * np.cos(4 * np.pi * y) + c * np.sin(2 * np.pi * (x + y))
    f = f + np.exp(d * np.cos(2 * np.pi * x) * np.sin(2 * np.pi * y))
    norm = np.sqrt(integrate(f**2, g))
    assert abs(integrate(affine_laplacian(f, g), g)) <= 1e-12 * max(norm, 1.0)


def test_gauduchon_residuals():
    ch = Chart.periodic([1.0, 1.0], [32, 32])
    assert check_gauduchon(MetricField.flat(ch)) == 0.0
    assert check_gauduchon(metric_preset("product-sin", ch)) < 1e-10
    # a conformal factor that is not harmonic is not Gauduchon in dimension 2
    x, y = ch.coords()
    bad = MetricField.conformal(ch, np.exp(0.3 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)))
    assert check_gauduchon(bad) > 1e-2


def test_beltrami_matches_closed_form():
    # g = exp(phi) on the circle, phi = a sin(2 pi x): Laplace-Beltrami of f is
    # exp(-phi) (f'' - phi' f' / 2)  (hand derivation, checked with sympy)
    a = 0.4
    errs = []
    for N in (64, 128):
        ch = Chart.periodic([1.0], [N])
        x = ch.coords()[0]
        phi = a * np.sin(2 * np.pi * x)
        g = MetricField.conformal(ch, np.exp(phi))
        f = np.cos(2 * np.pi * x)
        fp, fpp = -2 * np.pi * np.sin(2 * np.pi * x), -4 * np.pi**2 * f
        phip = 2 * np.pi * a * np.cos(2 * np.pi * x)
        exact = np.exp(-phi) * (fpp - 0.5 * phip * fp)
        errs.append(np.abs(beltrami_laplacian(f, g) - exact).max())
    assert errs[1] < 0.02
    assert errs[0] / errs[1] > 3.5


def test_laplacian_matrix_matches_stencil(rng):
    ch = Chart((1.0, 2.0), (10, 12), ("periodic", "dirichlet"), (0.0, -1.0))
    g = metric_preset("product-sin", ch)
    f = rng.normal(size=ch.shape)
    A = laplacian_matrix(g)
    lap = (A @ f.ravel()).reshape(ch.shape)
    ref = affine_laplacian(f, g)
    np.testing.assert_allclose(lap[ch.interior], ref[ch.interior], atol=1e-9)
    np.testing.assert_allclose(lap[~ch.interior], f[~ch.interior])


def test_metric_preset_catalog():
    names = metric_preset_names()
    assert {"flat", "product-sin", "conformal:sech2", "conformal:exp-sin", "conformal:sin-perturb"} <= set(names)
    ch = Chart.interval(-2.0, 2.0, 9)
    g = metric_preset("conformal:sech2", ch)
    np.testing.assert_allclose(g.inv[..., 0, 0], np.cosh(ch.coords()[0]) ** 2)
    with pytest.raises(GeometryError):
        metric_preset("conformal:nope", ch)
    with pytest.raises(GeometryError):
        metric_preset("hyperbolic", ch)


def test_cfl_step():
    ch = Chart.periodic([1.0], [10])
    g = MetricField.conformal(ch, np.full(10, 0.5))
    assert g.cfl_dt(0.2) == pytest.approx(0.2 * 0.01 / 2.0)


def test_nonfinite_field_rejected():
    ch, g = circle(8)
    f = np.zeros(8)
    f[3] = np.inf
    with pytest.raises(GeometryError):
        affine_laplacian(f, g)
