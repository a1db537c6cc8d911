from fractions import Fraction

import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings
from hypothesis import strategies as st

from collapsing_kahler import (BaseDomain, CompatibilityError, FibrationSpec, FieldExpression, MarkedPoint,
                               SemiFlatForm, beta_preset, build_sigma, integrate, sigma_bounds, weil_petersson)
from collapsing_kahler.config import ConfigError, load_config, spec_from_config, write_spec
from collapsing_kahler.fibration import semiflat_scaling_check
from collapsing_kahler.gke import circle_flux_coefficient

from .conftest import config_path


@pytest.mark.parametrize("m, beta", [(1, Fraction(5, 6)), (2, Fraction(5, 6)), (3, Fraction(5, 6)),
                                     (4, Fraction(7, 8)), (6, Fraction(11, 12))])
def test_beta_presets(m, beta):
    assert beta_preset(m) == beta


def test_beta_takes_maximum_over_points():
    assert beta_preset(2, 5, 3) == Fraction(9, 10)


def test_marked_point_exponent_validation():
    with pytest.raises(ValueError):
        MarkedPoint(0j, 2, 0.9, 0.8)
    with pytest.raises(ValueError):
        MarkedPoint(0j, 1, 0.0, 5 / 6)
    mp = MarkedPoint.multiple_fiber(0.1, 3)
    assert mp.density_exponent == pytest.approx(2 / 3)


@pytest.mark.parametrize("expr", [
    FieldExpression("quadratic", {"mean": 1.0, "coef": 0.7, "center": [0.1, -0.2]}),
    FieldExpression("trig", {"mean": 0.5, "terms": [[1, 2, 0.3, 0.4], [2, 0, -0.1]], "periods": [1.0, 2.0]}),
    FieldExpression("constant", {"value": 2.5}),
])
def test_field_expression_ddbar_against_sympy(expr):
    x, y = sym.symbols("x y", real=True)
    p = expr.params
    if expr.kind == "quadratic":
        cx, cy = p["center"]
        f = p["mean"] + p["coef"] * ((x - cx) ** 2 + (y - cy) ** 2)
    elif expr.kind == "trig":
        p1, p2 = p["periods"]
        f = p["mean"] + sum(t[2] * sym.cos(2 * sym.pi * (t[0] * x / p1 + t[1] * y / p2) + (t[3] if len(t) > 3 else 0))
                            for t in p["terms"])
    else:
        f = sym.Float(p["value"])
    dd = sym.lambdify((x, y), sym.Rational(1, 4) * (sym.diff(f, x, 2) + sym.diff(f, y, 2)))
    val = sym.lambdify((x, y), f)
    pts = np.array([0.1 + 0.2j, -0.3 + 0.05j, 0.7 - 0.4j])
    assert np.allclose(expr.values(pts), np.broadcast_to(val(pts.real, pts.imag), pts.shape))
    assert np.allclose(expr.ddbar(pts), np.broadcast_to(dd(pts.real, pts.imag), pts.shape), atol=1e-12)


def test_semiflat_hessian_against_sympy():
    # η = 2 a0 (Im w)² / Im τ(s); Hermitian entries ∂_a ∂_b̄ with ∂_z = ½(∂_x - i∂_y)
    sx, sy, X, Y = sym.symbols("sx sy X Y", real=True)
    a0 = sym.Rational(3, 2)
    tau = sym.I + sym.Rational(1, 5) * (sx + sym.I * sy) + sym.Rational(1, 10) * sym.I * (sx + sym.I * sy) ** 2
    eta = 2 * a0 * Y ** 2 / sym.im(sym.expand(tau))

    def d(f, x, y, conj=False):
        return (sym.diff(f, x) + (1 if conj else -1) * sym.I * sym.diff(f, y)) / 2

    ess = d(d(eta, sx, sy, True), sx, sy)
    esw = d(d(eta, X, Y, True), sx, sy)
    eww = d(d(eta, X, Y, True), X, Y)
    sf = SemiFlatForm((1j, 0.2, 0.1j), 1.5)
    s0, w0 = 0.3 - 0.2j, 0.7 + 0.4j
    subs = {sx: s0.real, sy: s0.imag, X: w0.real, Y: w0.imag}
    got = sf.hessian(np.array([s0]), np.array([w0]))
    assert sf.potential(np.array([s0]), np.array([w0]))[0] == pytest.approx(float(eta.subs(subs)))
    for g, e in zip(got, (ess, esw, eww)):
        assert complex(np.ravel(g)[0]) == pytest.approx(complex(sym.N(e.subs(subs))), rel=1e-10, abs=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 1e4))
def test_semiflat_scaling_identity(t):
    sf = SemiFlatForm((1j, 0.1, 0.05j), 1.0)
    assert semiflat_scaling_check(sf, np.sqrt(1 + t), samples=64, seed=3) < 1e-12


def test_weil_petersson_analytic_matches_numeric():
    base = BaseDomain.disk(128)
    spec = FibrationSpec.build(base, [1j, 0.2], chi=1.0, chi0=1.0, density=1.0)
    a = weil_petersson(spec, "analytic").density
    n = weil_petersson(spec, "numeric").density
    core = base.inside & (np.abs(base.s) < 0.8)
    assert np.max(np.abs(a[core] - n[core])) < 1e-4
    assert np.all(a[base.inside] >= 0)


def test_constant_modulus_has_vanishing_wp():
    spec = FibrationSpec.build(BaseDomain.torus(16), [2j], density=1.0)
    assert np.max(np.abs(spec.omega_wp.density)) == 0


def test_torus_exact_mode_needs_marked_points():
    with pytest.raises(CompatibilityError):
        FibrationSpec.build(BaseDomain.torus(32), [1j], consistency_mode="exact")


def test_auto_scaled_chi_on_torus_integrates_to_point_masses():
    spec = FibrationSpec.build(BaseDomain.torus(64), [1j], [MarkedPoint.multiple_fiber(0.5 + 0.5j, 3)])
    assert integrate(spec.chi) == pytest.approx(np.pi * 2 / 3, rel=1e-8)


def test_consistent_F_flux_on_disk():
    base = BaseDomain.disk(128)
    spec = FibrationSpec.build(base, [1j], [MarkedPoint.multiple_fiber(0, 2)])
    with np.errstate(divide="ignore"):
        logF = np.log(spec.F.density)
    # the smooth part adds -2π r² (i∂∂̄ log F = -chi off the point); extrapolate it away
    c1, c2 = (circle_flux_coefficient(spec, logF, 0j, r) for r in (0.25, 0.125))
    assert c1 == pytest.approx(np.pi - 2 * np.pi * 0.25 ** 2, rel=0.01)
    assert (4 * c2 - c1) / 3 == pytest.approx(np.pi, rel=0.01)


def test_twisted_trivial_defect_is_minus_chi(trivial_spec):
    d = trivial_spec.defect.density
    assert np.max(np.abs(d + trivial_spec.chi.density)) < 1e-12


def test_sigma_cutoff_and_bounds():
    spec = FibrationSpec.build(BaseDomain.disk(64), [1j], [MarkedPoint.multiple_fiber(0, 2)])
    sig = build_sigma(spec).values
    inside = spec.base.inside
    assert np.nanmax(sig[inside]) <= 1.0 + 1e-12
    assert np.nanmin(sig[inside]) >= 0.0
    b = sigma_bounds(spec)
    assert np.isfinite(b["C"]) and b["C"] > 0


def test_spec_hash_is_stable_and_sensitive():
    a = spec_from_config(load_config(config_path("m4_disk")))
    b = spec_from_config(load_config(config_path("m4_disk")))
    assert a.spec_hash() == b.spec_hash()
    assert a.with_resolution(64).spec_hash() != a.spec_hash()


def test_config_roundtrip_with_derived(tmp_path):
    spec = spec_from_config(load_config(config_path("m2_disk")))
    out = write_spec(spec, tmp_path / "spec.toml")
    cfg = load_config(out)
    assert "derived" in cfg and cfg["derived"]["spec_hash"] == spec.spec_hash()
    cfg.pop("derived")
    assert spec_from_config(cfg).spec_hash() == spec.spec_hash()


@pytest.mark.parametrize("patch, field", [
    ({"domain": {"kind": "sphere", "resolution": 32}}, "domain.kind"),
    ({"domain": {"kind": "disk"}}, "domain.resolution"),
    ({"fibration": {"fiber_area": -1.0}}, "fibration.fiber_area"),
    ({"fibration": {"marked": [{"position": [0, 0]}]}}, "fibration.marked[0].multiplicity"),
    ({"fibration": {"density": {"mode": "bogus"}}}, "fibration.density.mode"),
])
def test_config_errors_name_the_field(patch, field):
    cfg = {"domain": {"kind": "disk", "resolution": 32}, "fibration": {"tau": [[0, 1]]}}
    for k, v in patch.items():
        cfg[k] = v if k == "domain" else {**cfg[k], **v}
    with pytest.raises(ConfigError) as exc:
        spec_from_config(cfg)
    assert exc.value.field == field


def test_wp_of_linear_modulus_closed_form():
    base = BaseDomain.disk(96, center=2.0j, radius=1.0)
    spec = FibrationSpec.build(base, [0, 1], chi=1.0, chi0=1.0, density=1.0)
    exact = 1 / (4 * base.s.imag ** 2)
    assert np.max(np.abs(spec.omega_wp.density - exact)[base.inside]) < 1e-12
    num = weil_petersson(spec, "numeric").density
    core = base.compact(radius_fraction=0.8)
    assert np.max(np.abs(num - exact)[core] / exact[core]) < 1e-3


def test_wp_of_quadratic_modulus_against_sympy():
    x, y = sym.symbols("x y", real=True)
    T = sym.im(sym.expand(sym.I + sym.Rational(1, 10) * (x + sym.I * y) ** 2))
    wp = sym.lambdify((x, y), -sym.Rational(1, 4) * (sym.diff(sym.log(T), x, 2) + sym.diff(sym.log(T), y, 2)))
    base = BaseDomain.disk(64)
    spec = FibrationSpec.build(base, [1j, 0, 0.1], chi=1.0, chi0=1.0, density=1.0)
    expect = wp(base.s.real, base.s.imag)
    assert np.max(np.abs(spec.omega_wp.density - expect)[base.inside]) < 1e-12


def test_wp_invariant_under_real_shift_of_modulus():
    base = BaseDomain.disk(32)
    a = FibrationSpec.build(base, [1j, 0.2, 0.05j], chi=1.0, chi0=1.0, density=1.0).omega_wp.density
    b = FibrationSpec.build(base, [3 + 1j, 0.2, 0.05j], chi=1.0, chi0=1.0, density=1.0).omega_wp.density
    assert np.nanmax(np.abs(a - b)) < 1e-14


def test_sigma_without_marked_points_is_one():
    spec = FibrationSpec.build(BaseDomain.disk(32), [1j])
    assert np.all(build_sigma(spec).values == 1.0)


def test_sigma_is_squared_distance_near_point():
    spec = FibrationSpec.build(BaseDomain.disk(64), [1j], [MarkedPoint.multiple_fiber(0, 2)])
    sig = build_sigma(spec).values
    r = np.abs(spec.base.s)
    near = spec.base.inside & (r < 0.25)
    assert sig[32, 32] == 0.0
    assert np.max(np.abs(sig[near] - r[near] ** 2)) < 1e-12


def test_sigma_constant_stable_under_refinement():
    pts = [MarkedPoint.multiple_fiber(-0.4, 2), MarkedPoint.multiple_fiber(0.3 + 0.3j, 3)]
    c = [sigma_bounds(FibrationSpec.build(BaseDomain.disk(n), [1j], pts))["C"] for n in (64, 128)]
    assert np.isfinite(c).all() and c[1] == pytest.approx(c[0], rel=0.1)


@pytest.mark.parametrize("tau, tol", [([1j], 1e-10), ([1j, 0.1], 1e-6)])
def test_exact_mode_volume_form_curvature(tau, tol):
    # a varying modulus adds the grid error of i∂∂̄ log Im tau against the analytic ω_WP
    from collapsing_kahler.geometry import ricci_base
    spec = FibrationSpec.build(BaseDomain.disk(64), tau, chi=1.0, chi0=1.0)
    assert spec.consistency_mode == "exact"
    dd = -ricci_base(spec.omega_density).density
    keep = spec.base.compact() & np.isfinite(dd)
    assert np.max(np.abs(dd - spec.chi.density)[keep]) < tol


def test_unmarked_disk_density_is_smooth_and_positive():
    spec = FibrationSpec.build(BaseDomain.disk(64), [1j], chi=1.0, chi0=1.0)
    F = spec.F.density[spec.base.inside]
    assert np.all(np.isfinite(F)) and np.all(F > 0)
    assert spec.F.singular == ()


@pytest.mark.parametrize("t", [1.0, 10.0, 100.0])
def test_scaling_identity_at_fixed_times(t):
    sf = SemiFlatForm((1j, 0.1, 0.05j), 1.0)
    assert semiflat_scaling_check(sf, 1.0, samples=32, seed=1) == 0.0
    assert semiflat_scaling_check(sf, np.sqrt(1 + t), samples=64, seed=2) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-3, 10.0), st.integers(0, 1000))
def test_scaling_identity_random_factor(lam, seed):
    sf = SemiFlatForm((1j, 0.2, 0.1j), 1.3)
    assert semiflat_scaling_check(sf, lam, samples=64, seed=seed) < 1e-12
