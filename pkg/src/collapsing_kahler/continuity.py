"""Continuity march for the torus-invariant reduction of the scalar Monge–Ampère family.

With a constant modulus the total space is a product, ``ω_SF ∧ ω_SF = 0``, and
for a base potential φ the family reduces to the semilinear base equation

    chi_t + i∂∂̄φ = exp(((1+t)/t) φ) · F · chi,
    chi_t = (chi0 + t·chi) / (1 + t).

The rescaled parametrization ``u = log(1+t)`` solves the same equation in the
form ``ψ / (1 - e^{-u}) = log((chi_u + i∂∂̄ψ) / (F chi))``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .fibration import FibrationSpec
from .geometry import BaseForm, ScalarField, ricci_base
from .gke import GKESolution, solve_gke
from .newton import DiscretizationError, NewtonStagnation, damped_newton, solve_semilinear

__all__ = [
    "DiagnosticsRecord",
    "ContinuityState",
    "ContinuityFailure",
    "reference_form",
    "reduced_ma_step",
    "rescaled_step",
    "run_schedule",
    "ricci_diagnostics",
    "collapse_diagnostics",
    "flat_torus_diameter",
    "fiber_diameter",
    "fit_estimate_envelopes",
    "geometric_schedule",
]


class ContinuityFailure(RuntimeError):
    """A schedule step failed; ``completed`` lists the t values already checkpointed."""

    def __init__(self, message: str, completed=()):
        super().__init__(message)
        self.completed = list(completed)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-state estimate diagnostics, all measured on a declared compact."""

    c0_norm: float
    trace_chi_max: float
    weighted_trace_max: float
    ricci_identity_residual: float
    ricci_lb_min: float
    volume_ratio_band: tuple[float, float]
    gke_gap: float
    decay_series: tuple[float, float]
    g_deviation: float
    fiber_diameter: float
    fiber_identity_residual: float
    compact_exclusion: float

    @property
    def volume_band_width(self) -> float:
        lo, hi = self.volume_ratio_band
        return hi / lo

    def as_row(self) -> dict:
        d = asdict(self)
        lo, hi = d.pop("volume_ratio_band")
        a, b = d.pop("decay_series")
        d.update(volume_ratio_min=lo, volume_ratio_max=hi, decay_psi=a, decay_trace=b)
        return d


@dataclass(frozen=True, eq=False)
class ContinuityState:
    """Snapshot of the march at time ``t`` (``u = log(1+t)``)."""

    t: float
    phi: ScalarField
    omega_base: BaseForm
    fiber_scale: float
    newton_trace: tuple = ()
    diagnostics: DiagnosticsRecord | None = None
    parametrization: str = "t"

    @property
    def u(self) -> float:
        return float(np.log1p(self.t))


def geometric_schedule(t_min: float = 1.0, t_max: float = 1e6, per_decade: int = 1) -> list[float]:
    n = int(round(np.log10(t_max / t_min) * per_decade)) + 1
    return [float(t_min * 10 ** (k / per_decade)) for k in range(n)]


def _require_product(spec: FibrationSpec):
    if not spec.tau_constant:
        raise ValueError("the reduced march needs a constant modulus (product total space)")


def reference_form(spec: FibrationSpec, t: float) -> np.ndarray:
    """Density of chi_t = (chi0 + t·chi)/(1+t)."""
    return (spec.chi0.density + t * spec.chi.density) / (1.0 + t)


def _exponent(t: float) -> float:
    return (1.0 + t) / t


def _state(spec: FibrationSpec, t: float, phi: np.ndarray, trace, param="t") -> ContinuityState:
    base = spec.base
    k = _exponent(t)
    reg = np.exp(k * phi) * spec.F.regular_part * spec.chi.density
    omega = BaseForm.from_regular(base, reg, spec.F.singular, positive=True)
    field_ = ScalarField(base, phi, dirichlet=not base.periodic)
    return ContinuityState(float(t), field_, omega, spec.fiber_area / (1.0 + t), tuple(trace),
                           None, param)


def reduced_ma_step(spec: FibrationSpec, t: float, warm: ScalarField | None = None,
                    tol: float = 1e-10, max_iter: int = 60, damping_floor: float = 1e-6) -> ContinuityState:
    """Solve ``chi_t + i∂∂̄φ = e^{((1+t)/t)φ} F chi`` with a warm start.

    Raises
    ------
    ContinuityFailure
        Newton stagnated or lost definiteness; refine the schedule near ``t``.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    _require_product(spec)
    A = reference_form(spec, t)
    B = spec.F_cell * spec.chi.density
    try:
        phi, trace = solve_semilinear(spec.base, A, B, _exponent(t),
                                      None if warm is None else warm.values, tol, max_iter, damping_floor)
    except (NewtonStagnation, DiscretizationError) as exc:
        raise ContinuityFailure(f"reduced step at t={t:g} failed ({exc}); insert schedule points "
                                "between the previous t and this one") from exc
    return _state(spec, t, phi, trace)


def rescaled_step(spec: FibrationSpec, u: float, warm: ScalarField | None = None,
                  tol: float = 1e-10, max_iter: int = 60, damping_floor: float = 1e-6) -> ContinuityState:
    """Solve ``ψ - (1 - e^{-u}) log((chi_u + i∂∂̄ψ)/(F chi)) = 0`` by damped Newton.

    The residual is scaled by ``1/(1 - e^{-u})``; iterates that lose positivity
    of ``chi_u + i∂∂̄ψ`` are rejected by the line search.
    """
    if u <= 0:
        raise ValueError("u must be positive")
    _require_product(spec)
    base = spec.base
    lap = base.laplacian
    t = float(np.expm1(u))
    c = 1.0 / (-np.expm1(-u))  # 1/(1 - e^{-u}) = (1+t)/t
    A = lap.gather(reference_form(spec, t))
    B = lap.gather(spec.F_cell * spec.chi.density)
    logB = np.log(B)
    x0 = np.zeros(A.size) if warm is None else lap.gather(warm.values).astype(float)

    def omega(x):
        return A + lap.apply_vec(x)

    def residual(x):
        w = omega(x)
        with np.errstate(invalid="ignore", divide="ignore"):
            return c * x - (np.log(w) - logB)

    def admissible(x):
        return bool(np.all(omega(x) > 0))

    def step(x, r):
        w = omega(x)
        # J = c·I - diag(1/w) L;  J dx = -r  <=>  (diag(c w) - L) dx = -w r
        return lap.solve_shifted(c * w, 1.0, -w * r)

    if not admissible(x0):
        raise ContinuityFailure("warm start violates positivity of chi_u + i∂∂̄ψ")
    try:
        x, trace = damped_newton(residual, step, x0, tol, max_iter, damping_floor, admissible)
    except NewtonStagnation as exc:
        raise ContinuityFailure(f"rescaled step at u={u:g} failed ({exc})") from exc
    return _state(spec, t, lap.scatter(x), trace, param="u")


# ---------------------------------------------------------------- diagnostics
def _masked_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)


def ricci_diagnostics(state: ContinuityState, spec: FibrationSpec,
                      compact: np.ndarray | None = None) -> dict:
    """Ricci identity residual and the lower-bound margin of the reduced metric.

    The total-space metric is ``omega_base ⊕ fiber_scale·(flat fibre)``; with a
    constant modulus log det differs from ``log omega_base`` by a constant, so
    Ric has base density ``-i∂∂̄ log omega_base`` and vanishing fibre part.
    The identity ``Ric = ω₀/t - ((1+t)/t) ω`` is checked per component; in
    twisted mode the defect D of the volume form is added back.

    Returns
    -------
    dict with ``residual`` (sup over the compact), ``fiber_residual``,
    ``margin`` (min eigenvalue of Ric + 2ω relative to ω) and ``margin_fiber``.
    """
    base = spec.base
    t = state.t
    k = _exponent(t)
    keep = base.compact() if compact is None else compact
    ric = ricci_base(state.omega_base).density
    target = spec.chi0.density / t - k * state.omega_base.density
    res = ric - target
    if spec.consistency_mode == "twisted" and spec.defect is not None:
        res = res + spec.defect.density
    ok = keep & np.isfinite(res)
    fib0 = spec.fiber_density()
    fiber_res = np.max(np.abs(fib0 / t - k * (fib0 / (1.0 + t))))
    eig_base = (ric + 2 * state.omega_base.density) / state.omega_base.density
    ok_e = keep & np.isfinite(eig_base)
    margin_fiber = 2.0  # fibre Ricci vanishes: (0 + 2ω)/ω
    return {
        "residual": float(np.max(np.abs(res[ok]))) if ok.any() else 0.0,
        "fiber_residual": float(fiber_res),
        "margin": float(min(np.min(eig_base[ok_e]), margin_fiber)) if ok_e.any() else margin_fiber,
        "margin_base": float(np.min(eig_base[ok_e])) if ok_e.any() else np.nan,
        "margin_fiber": margin_fiber,
    }


def _reduced_basis(tau: complex):
    """Lagrange–Gauss reduction of the lattice Z + tau Z."""
    a, b = complex(1.0), complex(tau)
    if abs(a) > abs(b):
        a, b = b, a
    while True:
        mu = round((b * np.conj(a)).real / abs(a) ** 2)
        b = b - mu * a
        if abs(b) >= abs(a):
            break
        a, b = b, a
    if (a * np.conj(b)).real < 0:
        b = -b
    return a, b


def flat_torus_diameter(tau: complex, area: float = 1.0) -> float:
    """Diameter of the flat torus C/(Z + tau Z) rescaled to total area ``area``.

    Equals the covering radius of the lattice, the circumradius of the
    Delaunay triangle spanned by a reduced basis.
    """
    if np.imag(tau) <= 0:
        raise ValueError("Im tau must be positive")
    a, b = _reduced_basis(tau)
    la, lb, lc = abs(a), abs(b), abs(b - a)
    cell = abs((np.conj(a) * b).imag)
    radius = la * lb * lc / (2.0 * cell)
    return float(radius * np.sqrt(area / cell))


def fiber_diameter(spec: FibrationSpec, t: float) -> float:
    """Largest fibre diameter of (X_s, ω(t)); the fibre metric is ω_SF/(1+t)."""
    taus = np.unique(np.round(spec.tau_values[spec.base.inside], 14))
    d = max(flat_torus_diameter(complex(tau), spec.fiber_area) for tau in taus)
    return d / np.sqrt(1.0 + t)


def collapse_diagnostics(state: ContinuityState, spec: FibrationSpec, gke: GKESolution,
                         neighbors: tuple[ContinuityState, ContinuityState] | None = None,
                         du: float | None = None, compact: np.ndarray | None = None) -> dict:
    """Fibre diameter, g-function deviation and the Lemma-type decay samples.

    ``neighbors`` are states at ``u - du`` and ``u + du`` used for the centred
    difference of ``∂_u ψ``; with one missing a one-sided difference is used
    and reported in ``derivative_order``.
    """
    base = spec.base
    t = state.t
    k = _exponent(t)
    keep = base.compact(radius_fraction=0.5) if compact is None else compact
    psi = state.phi.values
    phi_inf = gke.phi_hat.values
    # chi_inf and omega_base from the left sides of their equations
    lap = base.laplacian
    chi_inf_lhs = spec.chi.density + lap.apply(phi_inf)
    omega_lhs = reference_form(spec, t) + lap.apply(psi)
    trace_inf = chi_inf_lhs / omega_lhs
    with np.errstate(over="ignore", invalid="ignore"):
        g = trace_inf * np.exp(k * psi - phi_inf)
    order = 2
    if neighbors is None or (neighbors[0] is None and neighbors[1] is None):
        dpsi = np.zeros_like(psi)
        order = 0
    else:
        lo, hi = neighbors
        if lo is not None and hi is not None:
            dpsi = (hi.phi.values - lo.phi.values) / (hi.u - lo.u)
        elif hi is not None:
            dpsi = (hi.phi.values - psi) / (hi.u - state.u)
            order = 1
        else:
            dpsi = (psi - lo.phi.values) / (state.u - lo.u)
            order = 1
    decay_psi = np.abs(psi + dpsi - phi_inf)
    decay_trace = np.abs(trace_inf - 1.0)
    ok = keep & np.isfinite(g) & np.isfinite(decay_psi) & np.isfinite(decay_trace)
    return {
        "fiber_diameter": fiber_diameter(spec, t),
        "g_deviation": float(np.max(np.abs(g[ok] - 1.0))),
        "decay_psi": float(np.max(decay_psi[ok])),
        "decay_trace": float(np.max(decay_trace[ok])),
        "derivative_order": order,
    }


def _estimate_diagnostics(state: ContinuityState, spec: FibrationSpec, gke: GKESolution,
                          neighbors, lambda2: float = 1.0) -> DiagnosticsRecord:
    base = spec.base
    t = state.t
    compact = base.compact()
    half = base.compact(radius_fraction=0.5)
    lap = base.laplacian
    psi = state.phi.values
    omega_lhs = reference_form(spec, t) + lap.apply(psi)
    trace_chi = spec.chi.density / omega_lhs
    tr0 = spec.chi0.density / omega_lhs / (1.0 + t) + 1.0
    sigma = spec.sigma.values
    weighted = sigma ** lambda2 * np.log(tr0)
    vol = omega_lhs / (spec.F_cell * spec.chi.density)
    ric = ricci_diagnostics(state, spec, compact)
    col = collapse_diagnostics(state, spec, gke, neighbors, compact=half)
    gap = np.abs(psi - gke.phi_hat.values)
    fin = compact & np.isfinite(omega_lhs)
    return DiagnosticsRecord(
        c0_norm=float(np.max(np.abs(psi[fin]))),
        trace_chi_max=float(np.max(trace_chi[fin])),
        weighted_trace_max=float(np.max(weighted[fin])),
        ricci_identity_residual=ric["residual"],
        ricci_lb_min=ric["margin"],
        volume_ratio_band=(float(np.min(vol[fin])), float(np.max(vol[fin]))),
        gke_gap=float(np.max(gap[half & np.isfinite(gap)])),
        decay_series=(col["decay_psi"], col["decay_trace"]),
        g_deviation=col["g_deviation"],
        fiber_diameter=col["fiber_diameter"],
        fiber_identity_residual=ric["fiber_residual"],
        compact_exclusion=float(max((r for _, r in base.marked), default=0.0)),
    )


# ------------------------------------------------------------------- driver
def _checkpoint_path(directory: Path, index: int, t: float) -> Path:
    return directory / f"state_{index:03d}_t{t:.6e}.npz"


def _save_checkpoint(path: Path, spec_hash: str, state: ContinuityState):
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, spec_hash=spec_hash, t=state.t, phi=state.phi.values,
             diagnostics=json.dumps(asdict(state.diagnostics)) if state.diagnostics else "",
             newton=json.dumps([[s.iteration, s.damping, s.residual] for s in state.newton_trace]))
    tmp.replace(path)


def _load_checkpoint(path: Path, spec: FibrationSpec, spec_hash: str):
    with np.load(path, allow_pickle=False) as data:
        if str(data["spec_hash"]) != spec_hash:
            raise ValueError(f"checkpoint {path.name} belongs to a different spec")
        t = float(data["t"])
        phi = np.array(data["phi"])
        diag = str(data["diagnostics"])
        newton = json.loads(str(data["newton"]))
    from .newton import NewtonStep

    state = _state(spec, t, phi, [NewtonStep(int(a), float(b), float(c)) for a, b, c in newton])
    if diag:
        d = json.loads(diag)
        d["volume_ratio_band"] = tuple(d["volume_ratio_band"])
        d["decay_series"] = tuple(d["decay_series"])
        state = replace(state, diagnostics=DiagnosticsRecord(**d))
    return state


def run_schedule(spec: FibrationSpec, t_list: Sequence[float], tol: float = 1e-10,
                 gke: GKESolution | None = None, checkpoint_dir=None, resume: bool = False,
                 du: float = 1e-2, diagnostics: bool = True) -> list[ContinuityState]:
    """Warm-started sweep over ``t_list`` with diagnostics and checkpoints.

    ``∂_u ψ`` at each state comes from two auxiliary solves at ``u ± du``.
    With ``checkpoint_dir`` every completed state is written atomically; with
    ``resume`` existing checkpoints for the same spec are loaded instead of
    recomputed.

    Raises
    ------
    ContinuityFailure
        A step failed; completed states remain checkpointed.
    """
    t_list = [float(t) for t in t_list]
    if not t_list:
        return []
    if any(b <= a for a, b in zip(t_list, t_list[1:])):
        raise ValueError("t_list must be strictly increasing")
    if t_list[0] < 1:
        raise ValueError("the schedule starts at t >= 1")
    _require_product(spec)
    spec_hash = spec.spec_hash()
    directory = None if checkpoint_dir is None else Path(checkpoint_dir)
    if directory is not None:
        directory.mkdir(parents=True, exist_ok=True)
    if diagnostics and gke is None:
        gke = solve_gke(spec, tol=tol)
    states: list[ContinuityState] = []
    warm = None
    for index, t in enumerate(t_list):
        path = None if directory is None else _checkpoint_path(directory, index, t)
        if resume and path is not None and path.exists():
            state = _load_checkpoint(path, spec, spec_hash)
            states.append(state)
            warm = state.phi
            continue
        try:
            state = reduced_ma_step(spec, t, warm, tol)
            if diagnostics:
                u = state.u
                lo = reduced_ma_step(spec, float(np.expm1(u - du)), state.phi, tol)
                hi = reduced_ma_step(spec, float(np.expm1(u + du)), state.phi, tol)
                state = replace(state, diagnostics=_estimate_diagnostics(state, spec, gke, (lo, hi)))
        except ContinuityFailure as exc:
            raise ContinuityFailure(str(exc), [s.t for s in states]) from exc
        if path is not None:
            _save_checkpoint(path, spec_hash, state)
        states.append(state)
        warm = state.phi
    return states


# ---------------------------------------------------------------- envelopes
def _envelope_fit(x: np.ndarray, y: np.ndarray, bins: int = 12):
    """Least-squares line through the per-bin maxima of y over x."""
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 4 or np.ptp(x) == 0:
        return np.nan, np.nan
    edges = np.linspace(x.min(), x.max(), bins + 1)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (x >= a) & (x <= b)
        if sel.any():
            j = np.argmax(y[sel])
            xs.append(x[sel][j])
            ys.append(y[sel][j])
    if len(xs) < 2:
        return np.nan, np.nan
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(np.exp(intercept))


def fit_estimate_envelopes(states: Sequence[ContinuityState], spec: FibrationSpec) -> dict:
    """Empirical constants of the a-priori estimates over a completed sweep.

    ``C`` bounds the C⁰ norm, the trace and the volume band; ``lambda2`` and
    ``lambda3`` are slopes of log of the weighted quantities against
    ``log(1/sigma)``, fitted through bin maxima (upper envelopes).  The fibre
    oscillation exponent ``lambda1`` is not observable in the reduced model
    (oscillation vanishes identically) and is returned as NaN.
    """
    if not states:
        return {}
    base = spec.base
    keep = base.compact()
    diag = [s.diagnostics for s in states if s.diagnostics is not None]
    with np.errstate(divide="ignore"):
        logsig = -np.log(spec.sigma.values)
    lam2, lam3, c2, c3 = [], [], [], []
    lap = base.laplacian
    for s in states:
        om = reference_form(spec, s.t) + lap.apply(s.phi.values)
        tr0 = spec.chi0.density / om / (1.0 + s.t) + 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            y2 = np.log(np.log(tr0))
            y3 = np.log(np.abs(np.log(om / reference_form(spec, s.t))))
        sel = keep & np.isfinite(logsig) & (logsig > 0)
        a, c = _envelope_fit(np.log(logsig[sel]), y2[sel])
        lam2.append(a), c2.append(c)
        a, c = _envelope_fit(np.log(logsig[sel]), y3[sel])
        lam3.append(a), c3.append(c)
    out = {
        "C_c0": max(d.c0_norm for d in diag) if diag else np.nan,
        "C_trace": max(d.trace_chi_max for d in diag) if diag else np.nan,
        "C_volume": max(max(d.volume_ratio_band[1], 1 / d.volume_ratio_band[0]) for d in diag) if diag else np.nan,
        "lambda1": float("nan"),
        "lambda2": float(np.nanmax(lam2)) if np.isfinite(lam2).any() else float("nan"),
        "C_lambda2": float(np.nanmax(c2)) if np.isfinite(c2).any() else float("nan"),
        "lambda3": float(np.nanmax(lam3)) if np.isfinite(lam3).any() else float("nan"),
        "C_lambda3": float(np.nanmax(c3)) if np.isfinite(c3).any() else float("nan"),
    }
    if diag:
        c0 = [d.c0_norm for d in diag]
        tr = [d.trace_chi_max for d in diag]
        vb = [d.volume_band_width for d in diag]
        out["c0_variation"] = max(c0) / min(c0) if min(c0) > 0 else float("inf") if max(c0) > 0 else 1.0
        out["trace_variation"] = max(tr) / min(tr)
        out["volume_band_variation"] = max(vb) / min(vb)
    return out
