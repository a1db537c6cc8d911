"""Input data of a model elliptic fibration over a base domain.

The fibration is represented on the base: a holomorphic modulus ``tau(s)``,
marked points carrying multiple fibers, reference forms ``chi`` and ``chi0``,
the fibre area ``a0``, and the derived density ``F``, volume form ``Omega``,
Weil–Petersson form and cutoff ``sigma``.  ``F`` is built so that
``i∂∂̄ log Omega = chi`` holds (``exact`` mode) which makes the generalized
Kähler–Einstein identity directly checkable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Mapping, Sequence

import numpy as np

from .geometry import (BaseDomain, BaseForm, ScalarField, cell_averaged_factor, ddbar,
                       integrate, ricci_base)

__all__ = [
    "MarkedPoint",
    "beta_preset",
    "FieldExpression",
    "FibrationSpec",
    "SemiFlatForm",
    "CompatibilityError",
    "weil_petersson",
    "build_sigma",
    "sigma_bounds",
    "build_consistent_F",
    "semiflat_scaling_check",
]


class CompatibilityError(ValueError):
    """Torus data violate the integral constraint required by ``exact`` mode."""


# ------------------------------------------------------------- marked points
def beta_preset(*multiplicities: int) -> Fraction:
    """Bound exponent ``max(5/6, 1 - 1/(2m))`` over the given multiplicities, exactly."""
    beta = Fraction(5, 6)
    for m in multiplicities:
        if int(m) < 1:
            raise ValueError("multiplicities are positive integers")
        beta = max(beta, 1 - Fraction(1, 2 * int(m)))
    return beta


@dataclass(frozen=True)
class MarkedPoint:
    """A multiple fibre at ``position`` with multiplicity ``m``.

    ``density_exponent`` e governs the realized singularity ``|s - p|^(-2e)`` of
    F; ``bound_exponent`` β is the proved bound ``F <= C |s - p|^(-2β)``.
    """

    position: complex
    multiplicity: int
    density_exponent: float
    bound_exponent: float

    def __post_init__(self):
        object.__setattr__(self, "position", complex(self.position))
        if int(self.multiplicity) < 2:
            raise ValueError("a multiple fibre has multiplicity >= 2")
        if not 0 < self.density_exponent < 1 or not 0 < self.bound_exponent < 1:
            raise ValueError("exponents must lie in (0, 1)")
        if self.density_exponent > self.bound_exponent:
            raise ValueError("density exponent exceeds the bound exponent")

    @classmethod
    def multiple_fiber(cls, position, multiplicity: int) -> "MarkedPoint":
        m = int(multiplicity)
        return cls(position, m, 1.0 - 1.0 / m, float(beta_preset(m)))


# -------------------------------------------------------- field expressions
@dataclass(frozen=True)
class FieldExpression:
    """A closed-form real function of ``s`` described by a config table.

    Kinds
    -----
    ``constant``      value
    ``fubini_study``  scale · (1 + |s - center|²)^(-2)
    ``trig``          mean + Σ amp · cos(2π(kx·x/p1 + ky·y/p2) + phase)
    ``quadratic``     mean + coef · |s - center|²
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_config(cls, value) -> "FieldExpression":
        if isinstance(value, (int, float)):
            return cls("constant", {"value": float(value)})
        value = dict(value)
        kind = value.pop("kind", "constant")
        if kind not in ("constant", "fubini_study", "trig", "quadratic"):
            raise ValueError(f"unknown field kind {kind!r}")
        return cls(kind, value)

    def to_config(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.params.items()}}

    def _center(self) -> complex:
        c = self.params.get("center", [0.0, 0.0])
        return complex(c[0], c[1])

    def _phases(self, s):
        p1, p2 = self.params.get("periods", [1.0, 1.0])
        for kx, ky, amp, *rest in self.params.get("terms", []):
            phase = rest[0] if rest else 0.0
            arg = 2 * np.pi * (kx * s.real / p1 + ky * s.imag / p2) + phase
            lam = (2 * np.pi) ** 2 * ((kx / p1) ** 2 + (ky / p2) ** 2)
            yield amp, arg, lam

    def values(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        p = self.params
        if self.kind == "constant":
            return np.full(s.shape, float(p.get("value", 1.0)))
        if self.kind == "fubini_study":
            return float(p.get("scale", 1.0)) * (1 + np.abs(s - self._center()) ** 2) ** -2
        if self.kind == "quadratic":
            return float(p.get("mean", 0.0)) + float(p.get("coef", 1.0)) * np.abs(s - self._center()) ** 2
        out = np.full(s.shape, float(p.get("mean", 0.0)))
        for amp, arg, _ in self._phases(s):
            out = out + amp * np.cos(arg)
        return out

    def ddbar(self, s: np.ndarray) -> np.ndarray:
        """Closed-form density of i∂∂̄ of the expression (¼Δ)."""
        s = np.asarray(s, dtype=complex)
        if self.kind == "constant":
            return np.zeros(s.shape)
        if self.kind == "quadratic":
            return np.full(s.shape, float(self.params.get("coef", 1.0)))
        if self.kind == "trig":
            out = np.zeros(s.shape)
            for amp, arg, lam in self._phases(s):
                out = out - 0.25 * lam * amp * np.cos(arg)
            return out
        raise ValueError(f"no closed-form i∂∂̄ for kind {self.kind!r}")


# -------------------------------------------------------------- modulus tau
def tau_values(coeffs: Sequence[complex], s: np.ndarray) -> np.ndarray:
    """Polynomial modulus ``Σ c_k s^k``."""
    out = np.zeros(np.shape(s), dtype=complex)
    for c in reversed(list(coeffs)):
        out = out * s + c
    return out


def tau_derivative(coeffs: Sequence[complex], s: np.ndarray) -> np.ndarray:
    d = [k * c for k, c in enumerate(coeffs)][1:] or [0j]
    return tau_values(d, s)


# ---------------------------------------------------------------- semi-flat
@dataclass(frozen=True)
class SemiFlatForm:
    """Local semi-flat model with potential ``eta(s, w) = 2·a0·(Im w)² / Im tau(s)``.

    The fibre coordinate ``w`` lives on ``C / (Z + tau Z)``; restricted to a
    fibre, ``i∂∂̄ eta`` is flat with total area ``a0``.
    """

    tau: tuple[complex, ...]
    fiber_area: float = 1.0

    def potential(self, s, w) -> np.ndarray:
        T = tau_values(self.tau, np.asarray(s, dtype=complex)).imag
        return 2 * self.fiber_area * np.imag(w) ** 2 / T

    def fiber_density(self, s) -> np.ndarray:
        """Density of the flat fibre metric against du∧dv at base point s."""
        return self.fiber_area / tau_values(self.tau, np.asarray(s, dtype=complex)).imag

    def hessian(self, s, w):
        """Closed-form complex Hessian entries (η_ss̄, η_sw̄, η_ww̄) in the ¼Δ normalization."""
        s = np.asarray(s, dtype=complex)
        T = tau_values(self.tau, s).imag
        dtau = tau_derivative(self.tau, s)
        v = np.imag(w)
        c = 2 * self.fiber_area
        # Im tau is harmonic and ∂_s Im tau = tau'/(2i)
        eww = c / (2 * T) * np.ones_like(v)
        esw = -c * v * dtau / (2 * T ** 2)
        ess = c * v ** 2 * np.abs(dtau) ** 2 / (2 * T ** 3)
        return ess, esw, eww


def semiflat_scaling_check(sf: SemiFlatForm, lam: float, samples: int = 256,
                           seed: int = 0, points=None) -> float:
    """Max of ``|eta(s, λw) - λ²·eta(s, w)|`` over sample points.

    Samples are random base points in the unit square with ``Im tau > 0`` and
    random fibre points; ``points`` overrides them with ``(s, w)`` arrays.
    """
    if lam <= 0:
        raise ValueError("scaling factor must be positive")
    if points is None:
        rng = np.random.default_rng(seed)
        s = rng.uniform(-0.5, 0.5, samples) + 1j * rng.uniform(-0.5, 0.5, samples)
        w = rng.uniform(0, 1, samples) + 1j * rng.uniform(0, 1, samples)
    else:
        s, w = points
    T = tau_values(sf.tau, s).imag
    s, w = s[T > 0], w[T > 0]
    lhs = sf.potential(s, lam * w)
    rhs = lam ** 2 * sf.potential(s, w)
    scale = np.maximum(1.0, np.abs(rhs))
    return float(np.max(np.abs(lhs - rhs) / scale)) if s.size else 0.0


# ------------------------------------------------------------------ fibration data
@dataclass(frozen=True, eq=False)
class FibrationSpec:
    """Base domain, modulus, marked points and reference forms of a fibration.

    Built quantities (``F``, ``omega_density``, ``sigma``, ``omega_wp`` and
    the ``defect`` of ``twisted`` mode) are filled by :meth:`build`.
    ``F_cell`` holds F with the singular factor averaged over grid cells next
    to marked points; the solvers use it as the right-hand-side weight.
    """

    base: BaseDomain
    tau: tuple[complex, ...]
    marked: tuple[MarkedPoint, ...]
    chi: BaseForm
    chi0: BaseForm
    fiber_area: float = 1.0
    consistency_mode: str = "exact"
    F: BaseForm | None = None
    F_cell: np.ndarray | None = None
    omega_density: BaseForm | None = None
    sigma: ScalarField | None = None
    omega_wp: BaseForm | None = None
    defect: BaseForm | None = None
    smooth_part: np.ndarray | None = None
    config: Mapping[str, Any] = field(default_factory=dict)
    derived: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def build(cls, base: BaseDomain, tau, marked=(), chi=None, chi0=None,
              fiber_area: float = 1.0, consistency_mode: str = "exact",
              density=None, sigma_scales=None, exclusion_spacings: float = 6.0,
              config=None) -> "FibrationSpec":
        """Assemble a spec and build F, Omega, sigma and the Weil–Petersson form.

        Parameters
        ----------
        chi, chi0 : BaseForm, FieldExpression or float
            Reference forms (default: flat density 1).
        density : None, float, or ("manufactured", FieldExpression)
            ``None`` builds the consistent F; a float fixes F constant; the
            manufactured option sets ``F = (chi + i∂∂̄φ*)/(e^{φ*} chi)``.
            Any given F puts the spec in ``twisted`` mode.
        """
        tau = tuple(complex(c) for c in np.atleast_1d(tau))
        marked = tuple(marked)
        h = max(base.spacing)
        if not base.marked and marked:
            base = base.with_marked([(m.position, exclusion_spacings * h) for m in marked])
        chi = _as_form(base, 1.0 if chi is None else chi)
        chi0 = _as_form(base, 1.0 if chi0 is None else chi0)
        if fiber_area <= 0:
            raise ValueError("fiber area must be positive")
        T = tau_values(tau, base.s).imag
        if np.any(T[base.inside] <= 0):
            raise ValueError("Im tau must be positive on the domain; the modulus touches the real axis")
        if consistency_mode not in ("exact", "twisted"):
            raise ValueError(f"unknown consistency mode {consistency_mode!r}")
        if density is not None:
            consistency_mode = "twisted"
        spec = cls(base, tau, marked, chi, chi0, float(fiber_area), consistency_mode,
                   config=dict(config or {}))
        spec = replace(spec, omega_wp=weil_petersson(spec))
        spec = replace(spec, sigma=build_sigma(spec, scales=sigma_scales))
        if density is None:
            F, omega, spec = _consistent(spec)
        else:
            F = _given_density(spec, density)
            omega = _omega_from_F(spec, F)
            spec = replace(spec, consistency_mode="twisted")
        F_cell = F.regular_part * cell_averaged_factor(base, F.singular) if F.singular else F.density
        spec = replace(spec, F=F, F_cell=np.asarray(F_cell), omega_density=omega)
        if spec.consistency_mode == "twisted":
            spec = replace(spec, defect=_defect(spec))
        return spec

    # -------------------------------------------------------------- helpers
    @property
    def tau_values(self) -> np.ndarray:
        return tau_values(self.tau, self.base.s)

    @property
    def tau_constant(self) -> bool:
        return all(abs(c) == 0 for c in self.tau[1:])

    @property
    def beta(self) -> float:
        return float(beta_preset(*[m.multiplicity for m in self.marked])) if self.marked else 5 / 6

    @property
    def semiflat(self) -> SemiFlatForm:
        return SemiFlatForm(self.tau, self.fiber_area)

    def fiber_density(self) -> np.ndarray:
        return self.fiber_area / self.tau_values.imag

    def spec_hash(self) -> str:
        payload = {
            "domain": self.base.descriptor(),
            "tau": [[c.real, c.imag] for c in self.tau],
            "marked": [[m.position.real, m.position.imag, m.multiplicity,
                        m.density_exponent, m.bound_exponent] for m in self.marked],
            "fiber_area": self.fiber_area,
            "mode": self.consistency_mode,
            "config": _jsonable(self.config),
            "chi": hashlib.sha256(np.ascontiguousarray(self.chi.density)).hexdigest(),
            "chi0": hashlib.sha256(np.ascontiguousarray(self.chi0.density)).hexdigest(),
        }
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_resolution(self, resolution) -> "FibrationSpec":
        """Rebuild the same spec on a different grid (requires the original config)."""
        from .config import spec_from_config

        cfg = json.loads(json.dumps(_jsonable(self.config)))
        cfg.setdefault("domain", {})["resolution"] = resolution
        return spec_from_config(cfg)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _as_form(base: BaseDomain, value) -> BaseForm:
    if isinstance(value, BaseForm):
        if not value.positive:
            value = BaseForm(base, value.density, positive=True)
        return value
    expr = value if isinstance(value, FieldExpression) else FieldExpression.from_config(value)
    return BaseForm(base, expr.values(base.s), positive=True)


# ---------------------------------------------------------- weil-petersson
def weil_petersson(spec: FibrationSpec, method: str = "analytic") -> BaseForm:
    """Density of ω_WP = -i∂∂̄ log Im tau.

    ``analytic`` uses ``|tau'|² / (4 (Im tau)²)`` (holomorphy of tau);
    ``numeric`` applies the grid i∂∂̄ to ``log Im tau``.
    """
    base = spec.base
    tau = tau_values(spec.tau, base.s)
    T = tau.imag
    if np.any(T[base.inside] <= 0):
        raise ValueError("Im tau must be positive; the modulus touches the real axis")
    if method == "analytic":
        dtau = tau_derivative(spec.tau, base.s)
        with np.errstate(divide="ignore", invalid="ignore"):
            rho = np.abs(dtau) ** 2 / (4 * T ** 2)
        rho = np.where(T > 0, rho, np.nan)
        return BaseForm(base, rho)
    if method == "numeric":
        with np.errstate(invalid="ignore"):
            logT = np.where(T > 0, np.log(np.where(T > 0, T, 1.0)), np.nan)
        return BaseForm(base, -ddbar(ScalarField(base, logT)).density)
    raise ValueError(f"unknown method {method!r}")


# ------------------------------------------------------------------- cutoff
def _smooth_min(a: np.ndarray, b: float, k: float) -> np.ndarray:
    """C² polynomial smooth minimum; equals min(a, b) when |a - b| >= k."""
    hh = np.maximum(k - np.abs(a - b), 0.0) / k
    return np.minimum(a, b) - hh ** 3 * k / 6.0


def _squared_distance(base: BaseDomain, p: complex) -> np.ndarray:
    """|s - p|², replaced on the torus by its smooth periodic analogue."""
    d = base.displacement(base.s, p)
    if base.periodic:
        p1, p2 = base.periods
        return ((p1 / np.pi) ** 2 * np.sin(np.pi * d.real / p1) ** 2
                + (p2 / np.pi) ** 2 * np.sin(np.pi * d.imag / p2) ** 2)
    return np.abs(d) ** 2


def build_sigma(spec: FibrationSpec, scales=None, smoothing: float = 0.5) -> ScalarField:
    """Cutoff vanishing exactly at the marked points.

    ``sigma = smoothmin(Π |s - s_i|² / d_i², 1)``; equal to the product near
    the points and to 1 far from them.
    """
    base = spec.base
    if not spec.marked:
        return ScalarField(base, np.ones(base.shape))
    scales = [1.0] * len(spec.marked) if scales is None else list(scales)
    prod = np.ones(base.shape)
    for m, d in zip(spec.marked, scales):
        prod = prod * _squared_distance(base, m.position) / d ** 2
    return ScalarField(base, _smooth_min(prod, 1.0, smoothing))


def sigma_bounds(spec: FibrationSpec, sigma: ScalarField | None = None) -> dict:
    """Constants realizing the cutoff inequalities relative to chi.

    Returns the sup of sigma, and the smallest C with
    ``i∂σ∧∂̄σ <= C·chi`` and ``|i∂∂̄σ| <= C·chi``, computed on the unknown
    nodes away from the disk boundary.
    """
    base = spec.base
    sigma = spec.sigma if sigma is None else sigma
    v = sigma.values
    hx, hy = base.spacing
    if base.periodic:
        gx = (np.roll(v, -1, 0) - np.roll(v, 1, 0)) / (2 * hx)
        gy = (np.roll(v, -1, 1) - np.roll(v, 1, 1)) / (2 * hy)
    else:
        gx, gy = np.gradient(v, hx, hy)
    grad = 0.25 * (gx ** 2 + gy ** 2)
    hess = ddbar(sigma).density
    keep = base.compact(exclusion=0.0) & np.isfinite(hess)
    chi = spec.chi.density
    return {
        "sigma_max": float(np.max(v[base.inside])),
        "sigma_min": float(np.min(v[base.inside])),
        "C_gradient": float(np.max(grad[keep] / chi[keep])),
        "C_hessian": float(np.max(np.abs(hess[keep]) / chi[keep])),
        "C": float(max(np.max(grad[keep] / chi[keep]), np.max(np.abs(hess[keep]) / chi[keep]))),
    }


# ------------------------------------------------------------- the density F
def _omega_from_F(spec: FibrationSpec, F: BaseForm) -> BaseForm:
    """Omega density = 2 · F · (fibre density) · chi, keeping the singular factor."""
    weight = 2.0 * spec.fiber_density() * spec.chi.density
    return BaseForm.from_regular(spec.base, F.regular_part * weight, F.singular, positive=True)


def _given_density(spec: FibrationSpec, density) -> BaseForm:
    base = spec.base
    if isinstance(density, BaseForm):
        return density
    if isinstance(density, (int, float)):
        return BaseForm(base, np.full(base.shape, float(density)), positive=True)
    kind, expr = density
    if kind != "manufactured":
        raise ValueError(f"unknown density option {kind!r}")
    phi = expr.values(base.s)
    chi = spec.chi.density
    F = (chi + expr.ddbar(base.s)) / (np.exp(phi) * chi)
    if np.any(F <= 0):
        raise ValueError("manufactured potential is not admissible: chi + i∂∂̄φ* must stay positive")
    return BaseForm(base, F, positive=True)


def _log_masked(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)


def _defect(spec: FibrationSpec) -> BaseForm:
    """D = i∂∂̄ log Omega - chi (regular part; the point nodes are masked)."""
    om = spec.omega_density
    dd = -ricci_base(om).density
    return BaseForm(spec.base, dd - spec.chi.density)


def _green_cutoff(base: BaseDomain, p: complex):
    """log|s-p|² times a smooth radial cutoff, and its (smooth) i∂∂̄ density.

    The cutoff equals one for ``r < r0`` and vanishes for ``r > r1`` with
    ``r1`` below half the shortest period, so the function is periodic.
    """
    r1 = 0.45 * min(base.periods)
    r0 = 0.5 * r1

    def bump(r):
        x = np.clip((r1 - r) / (r1 - r0), 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            f = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
            g = np.where(x < 1, np.exp(-1.0 / np.where(x < 1, 1 - x, 1.0)), 0.0)
        return f / (f + g)

    def K(r):
        with np.errstate(divide="ignore"):
            return 2.0 * np.log(r) * bump(r)

    r = np.abs(base.displacement(base.s, p))
    k = np.where(r > 0, K(np.maximum(r, 1e-300)), -np.inf)
    # ¼ΔK = ¼(K'' + K'/r) for a radial function; 4th-order differences on the profile
    shell = (r > r0 * 0.999) & (r < r1 * 1.001)
    rr = r[shell]
    e = 1e-3 * (r1 - r0)
    d1 = (-K(rr + 2 * e) + 8 * K(rr + e) - 8 * K(rr - e) + K(rr - 2 * e)) / (12 * e)
    d2 = (-K(rr + 2 * e) + 16 * K(rr + e) - 30 * K(rr) + 16 * K(rr - e) - K(rr - 2 * e)) / (12 * e * e)
    lap = np.zeros(base.shape)
    lap[shell] = 0.25 * (d2 + d1 / rr)
    return k, lap, r


def _consistent(spec: FibrationSpec):
    """h solving i∂∂̄h = chi + Ric(chi) - ω_WP (+ point terms), then F and Omega."""
    base = spec.base
    lap = base.laplacian
    chi = spec.chi
    singular = tuple((m.position, m.density_exponent) for m in spec.marked)
    derived = {}
    if base.periodic:
        sources = []
        for m in spec.marked:
            sources.append((m.density_exponent,) + _green_cutoff(base, m.position))
        point_mass = np.pi * sum(m.density_exponent for m in spec.marked)
        total = integrate(chi)
        if spec.consistency_mode == "exact":
            if point_mass == 0:
                raise CompatibilityError(
                    "exact mode on a torus needs ∫chi = π·Σe_i; with no marked points the "
                    f"integral defect is ∫chi = {total:.6g} != 0. Use twisted mode.")
            chi = BaseForm(base, chi.density * (point_mass / total), positive=True)
            derived["chi_rescale"] = point_mass / total
            spec = replace(spec, chi=chi)
        rhs = chi.density + ricci_base(chi).density - spec.omega_wp.density
        for e, _, S, _ in sources:
            rhs = rhs + e * S
        mean_rhs = float(np.mean(rhs))
        derived["integral_defect"] = mean_rhs * base.periods[0] * base.periods[1]
        h = lap.solve_poisson(rhs.ravel())
        log_reg = h.copy()
        for e, k, _, r in sources:
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = np.where(r > 0, k - np.log(np.where(r > 0, r, 1.0) ** 2), 0.0)
            log_reg = log_reg - e * corr
        reg = np.exp(log_reg)
        # normalize so that ∫F chi = ∫chi
        Ftmp = BaseForm.from_regular(base, reg * chi.density, singular)
        scale = integrate(chi) / integrate(Ftmp)
        reg = reg * scale
    else:
        rhs = chi.density + ricci_base(chi).density - spec.omega_wp.density
        h = lap.solve_poisson(rhs[lap.unknown])
        reg = np.exp(h)
        scale = 1.0
    F = BaseForm.from_regular(base, reg, singular, positive=True)
    omega = _omega_from_F(spec, F)
    derived["normalizer"] = 1.0 / scale
    check = base.compact(radius_fraction=None)
    Dd = -ricci_base(omega).density - chi.density
    ok = check & np.isfinite(Dd)
    derived["consistency_residual"] = float(np.max(np.abs(Dd[ok]))) if ok.any() else 0.0
    spec = replace(spec, smooth_part=h, derived={**spec.derived, **derived})
    return F, omega, spec


def build_consistent_F(spec: FibrationSpec):
    """Return ``(F, Omega_density)`` built so that i∂∂̄ log Omega = chi.

    ``F = e^h · Π|s - s_i|^(-2 e_i) / normalizer`` with ``h`` solving the
    linear equation ``i∂∂̄h = chi + Ric(chi) - ω_WP`` (Dirichlet on the disk;
    on the torus with cut-off Green's functions for the points, after rescaling
    chi to meet the integral constraint).

    Raises
    ------
    CompatibilityError
        Torus data in ``exact`` mode that cannot satisfy the integral constraint.
    """
    if spec.omega_wp is None:
        spec = replace(spec, omega_wp=weil_petersson(spec))
    F, omega, _ = _consistent(spec)
    return F, omega
