import numpy as np
import pytest
import scipy.integrate as spint
import scipy.linalg as sla
import sympy as sym
from hypothesis import given, settings
from hypothesis import strategies as st

from collapsing_kahler import BaseDomain, BaseForm, HermitianForm2D, ScalarField, ddbar, eigen_min_2d, integrate
from collapsing_kahler.geometry import cell_average_power, ricci_base, singular_factor


def test_torus_nodes_and_spacing():
    dom = BaseDomain.torus(16, periods=(2.0, 1.0))
    assert dom.shape == (16, 16)
    assert dom.spacing == pytest.approx((2.0 / 16, 1.0 / 16))
    assert dom.inside.all()


def test_disk_mask_keeps_boundary_margin():
    dom = BaseDomain.disk(64)
    h = dom.spacing[0]
    r = np.abs(dom.s)
    assert np.all(r[dom.inside] < 1 - 0.1 * h)


def test_spectral_ddbar_of_trig_mode():
    dom = BaseDomain.torus(32)
    x, y = dom.s.real, dom.s.imag
    f = np.cos(2 * np.pi * (2 * x + y))
    expected = -0.25 * (2 * np.pi) ** 2 * 5 * f
    got = ddbar(ScalarField(dom, f)).density
    assert np.max(np.abs(got - expected)) < 1e-10


def test_disk_stencil_exact_for_quadratics():
    # Dirichlet datum g = x² + 2y² on the circle; the interpolant is the same quadratic
    dom = BaseDomain.disk(40, boundary_value=lambda z: z.real ** 2 + 2 * z.imag ** 2)
    u = np.where(dom.inside, dom.s.real ** 2 + 2 * dom.s.imag ** 2, np.nan)
    got = ddbar(ScalarField(dom, u, dirichlet=True)).density
    assert np.nanmax(np.abs(got[dom.inside] - 0.25 * 6)) < 1e-9


def test_disk_stencil_orders():
    # second order in the interior; the boundary-fitted rows are first order pointwise
    inner, edge = [], []
    for n in (32, 64):
        dom = BaseDomain.disk(n, boundary_value=lambda z: np.exp(z.real) * np.cos(z.imag) + np.abs(z) ** 4)
        s = dom.s
        u = np.where(dom.inside, np.exp(s.real) * np.cos(s.imag) + np.abs(s) ** 4, np.nan)
        got = ddbar(ScalarField(dom, u, dirichlet=True)).density
        err = np.abs(got - 4 * np.abs(s) ** 2)
        core = dom.inside & (np.abs(s) < 0.8)
        inner.append(np.max(err[core]))
        edge.append(np.max(err[dom.inside]))
    assert inner[1] < inner[0] / 3.5
    assert edge[1] < edge[0] / 1.5


def test_disk_poisson_solution_second_order():
    errs = []
    for n in (32, 64):
        dom = BaseDomain.disk(n, boundary_value=lambda z: np.abs(z) ** 4)
        lap = dom.laplacian
        rhs = lap.gather(4 * np.abs(dom.s) ** 2)
        u = lap.solve_poisson(rhs)
        errs.append(np.nanmax(np.abs(u - np.abs(dom.s) ** 4)[dom.inside]))
    assert errs[1] < errs[0] / 3


def test_ricci_of_spherical_metric_against_sympy():
    xs, ys = sym.symbols("x y", real=True)
    rho = (1 + xs ** 2 + ys ** 2) ** -2
    ric = -sym.Rational(1, 4) * (sym.diff(sym.log(rho), xs, 2) + sym.diff(sym.log(rho), ys, 2))
    ratio = sym.simplify(ric / rho)
    assert ratio == 2
    dom = BaseDomain.disk(128)
    vals = np.where(dom.inside, sym.lambdify((xs, ys), rho)(dom.s.real, dom.s.imag), np.nan)
    got = ricci_base(BaseForm(dom, vals)).density
    core = dom.inside & (np.abs(dom.s) < 0.9)
    assert np.max(np.abs(got[core] / vals[core] - 2.0)) < 1e-3


def test_ricci_removes_singular_factor():
    dom = BaseDomain.disk(32)
    form = BaseForm.from_regular(dom, np.where(dom.inside, 1.0, np.nan), [(0j, 0.5)], positive=True)
    ric = ricci_base(form).density
    finite = np.isfinite(ric)
    assert np.all(np.abs(ric[finite]) < 1e-12)
    assert not finite[16, 16]


def test_integrate_disk_area():
    dom = BaseDomain.disk(128)
    area = integrate(BaseForm(dom, np.ones(dom.shape)))
    assert area == pytest.approx(np.pi, rel=1e-4)


def test_cell_average_power_against_dblquad():
    for dx, dy, e in [(0.0, 0.0, 0.5), (0.3, -0.2, 0.75), (1.0, 2.0, 0.25)]:
        f = lambda y, x: (x * x + y * y) ** (-e)
        # split at the axes so the singular point is only ever a corner
        xs = sorted({dx - 0.5, dx + 0.5} | ({0.0} if abs(dx) < 0.5 else set()))
        ys = sorted({dy - 0.5, dy + 0.5} | ({0.0} if abs(dy) < 0.5 else set()))
        oracle = sum(spint.dblquad(f, a, b, c, d, epsabs=1e-12, epsrel=1e-10)[0]
                     for a, b in zip(xs, xs[1:]) for c, d in zip(ys, ys[1:]))
        assert cell_average_power(dx, dy, 1.0, 1.0, e) == pytest.approx(oracle, rel=1e-6)


def test_singular_integral_exact_mass():
    # ∫_{|s|<1} |s|^{-1} = 2π
    dom = BaseDomain.disk(128)
    form = BaseForm.from_regular(dom, np.ones(dom.shape), [(0j, 0.5)], positive=True)
    assert integrate(form) == pytest.approx(2 * np.pi, rel=2e-3)


def test_singular_factor_is_inf_on_point():
    dom = BaseDomain.torus(8)
    f = singular_factor(dom, [(0j, 0.5)])
    assert np.isinf(f[0, 0]) and np.all(np.isfinite(f[1:, :]))


def test_eigen_min_against_scipy(rng):
    n = 20
    a1, d1 = rng.uniform(1, 3, n), rng.uniform(1, 3, n)
    b1 = rng.normal(size=n) * 0.3 + 1j * rng.normal(size=n) * 0.3
    a2, d2 = rng.uniform(1, 2, n), rng.uniform(1, 2, n)
    b2 = rng.normal(size=n) * 0.2 + 1j * rng.normal(size=n) * 0.2
    got = eigen_min_2d(HermitianForm2D(a1, b1, d1), HermitianForm2D(a2, b2, d2))
    for k in range(n):
        A = np.array([[a1[k], b1[k]], [np.conj(b1[k]), d1[k]]])
        B = np.array([[a2[k], b2[k]], [np.conj(b2[k]), d2[k]]])
        assert got[k] == pytest.approx(sla.eigh(A, B, eigvals_only=True)[0], rel=1e-10)


def test_positive_form_rejects_nonpositive():
    dom = BaseDomain.torus(8)
    with pytest.raises(ValueError):
        BaseForm(dom, -np.ones(dom.shape), positive=True)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 3), st.integers(0, 3))
def test_ddbar_linear(a, b, kx, ky):
    dom = BaseDomain.torus(16)
    x, y = dom.s.real, dom.s.imag
    f = np.cos(2 * np.pi * (kx * x + ky * y))
    g = np.sin(2 * np.pi * (ky * x - kx * y))
    lhs = ddbar(ScalarField(dom, a * f + b * g)).density
    rhs = a * ddbar(ScalarField(dom, f)).density + b * ddbar(ScalarField(dom, g)).density
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * (1 + abs(a) + abs(b)) * (1 + kx * kx + ky * ky) * 40


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(-0.45, 0.45), st.floats(-0.45, 0.45))
def test_poisson_roundtrip_torus(amp, px, py):
    dom = BaseDomain.torus(32)
    x, y = dom.s.real, dom.s.imag
    u = amp * np.cos(2 * np.pi * (x - px)) * np.sin(2 * np.pi * (y - py))
    rhs = dom.laplacian.apply(u)
    back = dom.laplacian.solve_poisson(rhs.ravel())
    assert np.max(np.abs(back - (u - u.mean()))) < 1e-10


def test_quadratic_and_pluriharmonic_potentials_on_disk():
    dom = BaseDomain.disk(48, boundary_value=lambda z: np.abs(z) ** 2)
    u = np.where(dom.inside, np.abs(dom.s) ** 2, np.nan)
    assert np.nanmax(np.abs(ddbar(ScalarField(dom, u, dirichlet=True)).density[dom.inside] - 1.0)) < 1e-9
    dom = BaseDomain.disk(48, boundary_value=lambda z: (z ** 3).real)
    u = np.where(dom.inside, (dom.s ** 3).real, np.nan)
    got = ddbar(ScalarField(dom, u, dirichlet=True)).density
    core = dom.inside & (np.abs(dom.s) < 0.8)
    assert np.max(np.abs(got[core])) < 1e-9
    assert np.max(np.abs(got[dom.inside])) < 0.05


@settings(max_examples=15, deadline=None)
@given(st.lists(st.tuples(st.integers(-3, 3), st.integers(-3, 3), st.floats(-1, 1), st.floats(0, 6.3)),
                min_size=1, max_size=4))
def test_random_trig_polynomial_ddbar_against_sympy(terms):
    xs, ys = sym.symbols("x y", real=True)
    f = sum(c * sym.cos(2 * sym.pi * (k * xs + l * ys) + ph) for k, l, c, ph in terms)
    dd = sym.lambdify((xs, ys), sym.Rational(1, 4) * (sym.diff(f, xs, 2) + sym.diff(f, ys, 2)))
    dom = BaseDomain.torus(32)
    vals = np.broadcast_to(sym.lambdify((xs, ys), f)(dom.s.real, dom.s.imag), dom.shape)
    expect = np.broadcast_to(dd(dom.s.real, dom.s.imag), dom.shape)
    assert np.max(np.abs(ddbar(ScalarField(dom, vals)).density - expect)) < 1e-10


def test_ricci_of_flat_and_exponential_densities():
    dom = BaseDomain.torus(32)
    assert np.max(np.abs(ricci_base(BaseForm(dom, np.full(dom.shape, 3.0))).density)) < 1e-12
    x, y = dom.s.real, dom.s.imag
    u = 0.3 * np.cos(2 * np.pi * x) + 0.2 * np.sin(2 * np.pi * (x - 2 * y))
    got = ricci_base(BaseForm(dom, np.exp(u))).density
    assert np.max(np.abs(got + ddbar(ScalarField(dom, u)).density)) < 1e-10


def test_trace_eigen_and_area_identities(rng):
    from collapsing_kahler import trace
    dom = BaseDomain.torus(16)
    w = BaseForm(dom, rng.uniform(0.5, 2.0, dom.shape))
    assert np.allclose(trace(w, w).values, 1.0, atol=1e-14)
    a, d = rng.uniform(1, 2, 10), rng.uniform(1, 2, 10)
    b = 0.3 * (rng.normal(size=10) + 1j * rng.normal(size=10))
    A = HermitianForm2D(a, b, d)
    assert np.allclose(eigen_min_2d(A, A), 1.0, atol=1e-12)
    assert integrate(BaseForm(dom, np.ones(dom.shape))) == pytest.approx(1.0, abs=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_discrete_stokes_on_torus(seed):
    dom = BaseDomain.torus(32)
    rng = np.random.default_rng(seed)
    x, y = dom.s.real, dom.s.imag
    f = sum(rng.normal() * np.cos(2 * np.pi * (rng.integers(-4, 5) * x + rng.integers(-4, 5) * y)
                                  + rng.uniform(0, 6.3)) for _ in range(5))
    assert abs(integrate(ddbar(ScalarField(dom, f)))) < 1e-10
