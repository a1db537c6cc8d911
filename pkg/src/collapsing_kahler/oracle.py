"""Brute-force two-complex-dimensional Monge–Ampère solves on a periodic product grid.

The total space is ``T²_base × T²_fiber`` with coordinates ``s = x1 + i y1``
and ``w = x2 + i y2``.  A potential on the ``N_s² × N_w²`` grid enters through
its spectral complex Hessian; the equation

    det(g_t + Hess φ) = (1+t)^{-1} e^{((1+t)/t) φ} · Omega / 2

is solved by damped Newton with matrix-free GMRES, preconditioned by the
constant-coefficient symbol.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .fibration import FibrationSpec, SemiFlatForm, semiflat_scaling_check, tau_values
from .geometry import HermitianForm2D, ScalarField
from .newton import DiscretizationError, damped_newton

__all__ = ["TotalSpaceGrid", "full_ma_solve", "fiber_average", "fiber_oscillation",
           "scaling_transport_check", "complex_hessian"]

_MAX_NODES_PER_AXIS = 16


@dataclass(frozen=True, eq=False)
class TotalSpaceGrid:
    """Periodic product grid carrying the reference forms of the oracle.

    ``omega0`` is ω_SF + f*chi0, ``pullback_chi`` is f*chi, and ``volume`` the
    Omega density (optionally modulated along the fibre by ``perturbation``).
    """

    spec: FibrationSpec
    n_fiber: int
    fiber_periods: tuple[float, float]
    omega0: HermitianForm2D
    pullback_chi: HermitianForm2D
    volume: np.ndarray
    perturbation: float = 0.0

    @classmethod
    def from_spec(cls, spec: FibrationSpec, n_fiber: int | None = None,
                  perturbation: float = 0.0) -> "TotalSpaceGrid":
        """Lift a torus-base spec with constant purely imaginary tau.

        The fibre-dependent perturbation multiplies Omega by
        ``1 + ε cos(2π x2)(1 + ½ cos(2π x1))``.
        """
        base = spec.base
        if not base.periodic:
            raise ValueError("the oracle needs a periodic base")
        if not spec.tau_constant or abs(spec.tau[0].real) > 0:
            raise ValueError("the oracle needs a constant, purely imaginary modulus")
        n_base = base.shape[0]
        n_fiber = n_base if n_fiber is None else int(n_fiber)
        if max(n_base, base.shape[1], n_fiber) > _MAX_NODES_PER_AXIS:
            raise ValueError(f"oracle grids are capped at {_MAX_NODES_PER_AXIS} nodes per axis")
        T = spec.tau[0].imag
        fiber_periods = (1.0, T)
        x2 = np.arange(n_fiber) / n_fiber
        shape4 = base.shape + (n_fiber, n_fiber)
        ones = np.ones(shape4)
        chi = spec.chi.density[:, :, None, None] * ones
        chi0 = spec.chi0.density[:, :, None, None] * ones
        fib = spec.fiber_area / T
        omega0 = HermitianForm2D(chi0, np.zeros(shape4), fib * ones, positive=True)
        pull = HermitianForm2D(chi, np.zeros(shape4), np.zeros(shape4))
        vol = 2.0 * spec.F.density[:, :, None, None] * fib * chi
        if perturbation:
            x1 = base.x[:, None, None, None] / base.periods[0]
            mod = 1.0 + perturbation * np.cos(2 * np.pi * x2[None, None, :, None]) * (1 + 0.5 * np.cos(2 * np.pi * x1))
            vol = vol * mod
        return cls(spec, n_fiber, fiber_periods, omega0, pull, vol, float(perturbation))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.volume.shape

    def reference(self, t: float) -> HermitianForm2D:
        """ω_t = (ω₀ + t f*chi)/(1+t)."""
        return (self.omega0 + self.pullback_chi * t) * (1.0 / (1.0 + t))

    def cell_volume(self) -> float:
        b1, b2 = self.spec.base.spacing
        f1, f2 = self.fiber_periods
        return b1 * b2 * f1 * f2 / self.n_fiber ** 2

    @property
    def wavenumbers(self):
        n1, n2, n3, n4 = self.shape
        b1, b2 = self.spec.base.spacing
        f1, f2 = self.fiber_periods
        k1 = 2 * np.pi * np.fft.fftfreq(n1, d=b1)
        k2 = 2 * np.pi * np.fft.fftfreq(n2, d=b2)
        k3 = 2 * np.pi * np.fft.fftfreq(n3, d=f1 / n3)
        k4 = 2 * np.pi * np.fft.fftfreq(n4, d=f2 / n4)
        return np.meshgrid(k1, k2, k3, k4, indexing="ij")


def _hessian_symbols(grid: TotalSpaceGrid):
    kx1, ky1, kx2, ky2 = grid.wavenumbers
    p = -0.25 * (kx1 ** 2 + ky1 ** 2)
    r = -0.25 * (kx2 ** 2 + ky2 ** 2)
    q = -0.25 * ((kx1 * kx2 + ky1 * ky2) + 1j * (kx1 * ky2 - ky1 * kx2))
    return p, q, r


def complex_hessian(phi: np.ndarray, grid: TotalSpaceGrid, symbols=None) -> HermitianForm2D:
    """Spectral ``(φ_ss̄, φ_sw̄, φ_ww̄)`` of a real periodic potential."""
    p, q, r = _hessian_symbols(grid) if symbols is None else symbols
    P = np.fft.fftn(phi)
    a = np.fft.ifftn(p * P).real
    d = np.fft.ifftn(r * P).real
    b = np.fft.ifftn(q * P)
    return HermitianForm2D(a, b, d)


def full_ma_solve(grid: TotalSpaceGrid, t: float, tol: float = 1e-10, init: np.ndarray | None = None,
                  max_iter: int = 40, damping_floor: float = 1e-6, gmres_rtol: float = 1e-12):
    """Newton solve of ``log det(g_t + Hess φ) - log(RHS) - kφ = 0``.

    Returns
    -------
    phi : ndarray, shape ``grid.shape``
    info : dict
        ``residual``, Newton trace, the volume check (∫ω² against the
        right-hand side integral) and the minimum eigenvalue of the solved form.

    Raises
    ------
    NewtonStagnation
        Damping floor hit (positivity could not be maintained).
    DiscretizationError
        GMRES failed on the linearization.
    """
    if t < 1:
        raise ValueError("the oracle is run at t >= 1")
    k = (1.0 + t) / t
    ref = grid.reference(t)
    target = np.log(grid.volume / (2.0 * (1.0 + t)))
    sym = _hessian_symbols(grid)
    shape = grid.shape
    n = int(np.prod(shape))
    volumes = []

    def metric(x):
        return ref + complex_hessian(x.reshape(shape), grid, sym)

    def admissible(x):
        g = metric(x)
        return bool(np.all(g.eigenvalues()[0] > 0))

    def residual(x):
        g = metric(x)
        det = g.det
        with np.errstate(invalid="ignore", divide="ignore"):
            return (np.log(det) - target - k * x.reshape(shape)).ravel()

    def step(x, res):
        g = metric(x)
        det = g.det
        ca, cd, cb = g.d / det, g.a / det, g.b / det
        volumes.append(float(np.sum(2 * det) * grid.cell_volume()))
        p, q, r = sym
        symbol = (np.mean(ca) * p + np.mean(cd) * r - 2 * np.real(np.conj(np.mean(cb)) * q)) - k

        def matvec(v):
            h = complex_hessian(v.reshape(shape), grid, sym)
            out = ca * h.a + cd * h.d - 2 * np.real(np.conj(cb) * h.b) - k * v.reshape(shape)
            return out.ravel()

        def precond(v):
            return np.fft.ifftn(np.fft.fftn(v.reshape(shape)) / symbol).real.ravel()

        A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        M = spla.LinearOperator((n, n), matvec=precond, dtype=float)
        # inexact Newton: the forcing term tightens with the residual
        norm = float(np.max(np.abs(res)))
        rtol = max(gmres_rtol, min(1e-4, 1e-2 * norm))
        dx, info = spla.gmres(A, -res, rtol=rtol, atol=0.0, M=M, restart=80, maxiter=50)
        achieved = np.linalg.norm(matvec(dx) + res) / max(np.linalg.norm(res), 1e-300)
        if info != 0 and not achieved < 0.1:
            raise DiscretizationError(f"GMRES failed on the linearization (relative residual {achieved:.2e})")
        return dx

    x0 = np.zeros(n) if init is None else np.asarray(init, dtype=float).ravel()
    if not admissible(x0):
        raise ValueError("initial potential violates positivity of ω_t + i∂∂̄φ")
    x, trace = damped_newton(residual, step, x0, tol, max_iter, damping_floor, admissible)
    phi = x.reshape(shape)
    g = metric(x)
    cell = grid.cell_volume()
    lhs = float(np.sum(2 * g.det) * cell)
    rhs = float(np.sum(np.exp(k * phi) * grid.volume / (1.0 + t)) * cell)
    ref_vol = float(np.sum(2 * ref.det) * cell)
    info = {
        "residual": trace[-1].residual,
        "newton_trace": tuple(trace),
        "volume_lhs": lhs,
        "volume_rhs": rhs,
        "volume_reference": ref_vol,
        "iterate_volumes": volumes,
        "min_eigenvalue": float(np.min(g.eigenvalues()[0])),
    }
    return phi, info


def fiber_average(phi: np.ndarray, grid: TotalSpaceGrid) -> ScalarField:
    """Fibre mean of φ against ω₀ restricted to the fibre (a flat density)."""
    weight = grid.omega0.d
    avg = np.sum(phi * weight, axis=(2, 3)) / np.sum(weight, axis=(2, 3))
    return ScalarField(grid.spec.base, avg)


def fiber_oscillation(phi: np.ndarray, grid: TotalSpaceGrid) -> ScalarField:
    """``sup - inf`` of φ over each fibre."""
    return ScalarField(grid.spec.base, np.max(phi, axis=(2, 3)) - np.min(phi, axis=(2, 3)))


def scaling_transport_check(grid: TotalSpaceGrid | None, t: float, tau=None, fiber_area: float = 1.0,
                            samples: int = 256, seed: int = 0) -> dict:
    """Violation of ``(1+t)^{-1} λ_t^* η = η`` with ``λ_t(s, w) = (s, √(1+t) w)``.

    Checks the potential at sample points and the pulled-back complex Hessian
    ``Dλᵀ H(s, λw) Dλ / (1+t)`` against ``H(s, w)``, with ``Dλ = diag(1, √(1+t))``.
    Samples are the grid nodes when a grid is given, otherwise random points; a
    ``tau`` override exercises a varying modulus.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    lam = np.sqrt(1.0 + t)
    if grid is not None and tau is None:
        sf = grid.spec.semiflat
        base = grid.spec.base
        f1, f2 = grid.fiber_periods
        x2 = np.arange(grid.n_fiber) * f1 / grid.n_fiber
        y2 = np.arange(grid.n_fiber) * f2 / grid.n_fiber
        s = np.broadcast_to(base.s[:, :, None, None], grid.shape).ravel()
        w = (x2[None, None, :, None] + 1j * y2[None, None, None, :])
        w = np.broadcast_to(w, grid.shape).ravel()
    else:
        sf = SemiFlatForm(tuple(complex(c) for c in np.atleast_1d(tau if tau is not None else 1j)), fiber_area)
        rng = np.random.default_rng(seed)
        s = rng.uniform(-0.5, 0.5, samples) + 1j * rng.uniform(-0.5, 0.5, samples)
        w = rng.uniform(-2, 2, samples) + 1j * rng.uniform(-2, 2, samples)
        ok = tau_values(sf.tau, s).imag > 0
        s, w = s[ok], w[ok]
    pot = semiflat_scaling_check(sf, lam, points=(s, w))
    e0 = sf.hessian(s, w)
    e1 = sf.hessian(s, lam * w)
    pulled = (e1[0], e1[1] * lam, e1[2] * lam ** 2)
    form = 0.0
    for a, b in zip(pulled, e0):
        scale = (1.0 + t) * np.maximum(1.0, np.abs(b))
        form = max(form, float(np.max(np.abs(a - (1.0 + t) * b) / scale)))
    return {"potential": pot, "form": form, "max": max(pot, form), "samples": int(np.size(s))}
