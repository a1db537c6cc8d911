"""Damped Newton iteration with a monotone residual line search.

Both the limiting equation on the base and every step of the continuity
march are semilinear equations of the form

    A + i∂∂̄φ = B · exp(k φ),      A, B > 0, k > 0,

whose linearization ``L - diag(k B e^{kφ})`` is negative definite.  This module
solves them on the unknown nodes of a :class:`BaseDomain`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import BaseDomain

__all__ = ["NewtonStagnation", "DiscretizationError", "NewtonStep", "damped_newton",
           "solve_semilinear", "semilinear_residual"]


class NewtonStagnation(RuntimeError):
    """The line search hit the damping floor; ``history`` holds the residual log."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


class DiscretizationError(RuntimeError):
    """The discrete linearization lost definiteness; refine the grid."""


@dataclass(frozen=True)
class NewtonStep:
    iteration: int
    damping: float
    residual: float


def damped_newton(residual: Callable[[np.ndarray], np.ndarray],
                  step: Callable[[np.ndarray, np.ndarray], np.ndarray],
                  x0: np.ndarray, tol: float, max_iter: int = 60,
                  damping_floor: float = 1e-6,
                  admissible: Callable[[np.ndarray], bool] | None = None):
    """Newton iteration ``x <- x + λ dx`` with backtracking on ``||r||_inf``.

    Parameters
    ----------
    residual : callable
        ``r(x)``.
    step : callable
        ``step(x, r)`` returns the Newton increment solving ``J dx = -r``.
    admissible : callable, optional
        Rejects iterates (e.g. loss of positivity); rejection halves λ.

    Returns
    -------
    x, trace
        Final iterate and the list of :class:`NewtonStep` (iteration 0 is the
        initial residual).

    Raises
    ------
    NewtonStagnation
        λ fell below ``damping_floor`` or ``max_iter`` was exhausted.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    trace = [NewtonStep(0, 0.0, norm)]
    for it in range(1, max_iter + 1):
        if norm <= tol:
            return x, trace
        dx = step(x, r)
        lam = 1.0
        while True:
            trial = x + lam * dx
            ok = admissible is None or admissible(trial)
            if ok:
                r_new = residual(trial)
                n_new = float(np.max(np.abs(r_new)))
                if np.isfinite(n_new) and n_new < norm:
                    break
            lam *= 0.5
            if lam < damping_floor:
                raise NewtonStagnation(
                    f"line search reached the damping floor at iteration {it} "
                    f"with residual {norm:.3e} (tolerance {tol:.1e})", trace)
        x, r, norm = trial, r_new, n_new
        trace.append(NewtonStep(it, lam, norm))
    if norm <= tol:
        return x, trace
    raise NewtonStagnation(f"no convergence in {max_iter} iterations, residual {norm:.3e}", trace)


def semilinear_residual(domain: BaseDomain, A: np.ndarray, B: np.ndarray, k: float,
                        phi_vec: np.ndarray) -> np.ndarray:
    """``A + i∂∂̄φ - B e^{kφ}`` on the unknown nodes."""
    lap = domain.laplacian
    with np.errstate(over="ignore"):
        return A + lap.apply_vec(phi_vec) - B * np.exp(k * phi_vec)


def solve_semilinear(domain: BaseDomain, A: np.ndarray, B: np.ndarray, k: float = 1.0,
                     init: np.ndarray | None = None, tol: float = 1e-10, max_iter: int = 60,
                     damping_floor: float = 1e-6):
    """Solve ``A + i∂∂̄φ = B e^{kφ}`` on the unknown nodes of ``domain``.

    ``A`` and ``B`` are full-grid arrays (only unknown nodes are read).  The
    disk carries the Dirichlet datum of the domain.

    Returns
    -------
    phi : ndarray
        Full-grid solution (NaN outside the disk).
    trace : list of NewtonStep
    """
    lap = domain.laplacian
    a = lap.gather(A)
    b = lap.gather(B)
    if np.any(~np.isfinite(b)) or np.any(b <= 0) or np.any(~np.isfinite(a)):
        raise DiscretizationError("right-hand-side weight must be finite and positive on every unknown node")
    x0 = np.zeros(a.size) if init is None else np.array(lap.gather(init), dtype=float)
    if np.any(~np.isfinite(x0)):
        raise ValueError("initial potential must be finite on the unknown nodes")

    def residual(x):
        return semilinear_residual(domain, a, b, k, x)

    def step(x, r):
        q = k * b * np.exp(k * x)
        if np.any(q <= 0) or np.any(~np.isfinite(q)):
            raise DiscretizationError("linearization is not negative definite; refine the grid")
        # J = L - diag(q);  J dx = -r  <=>  (diag(q) - L) dx = r
        return lap.solve_shifted(q, 1.0, r)

    x, trace = damped_newton(residual, step, x0, tol, max_iter, damping_floor)
    return lap.scatter(x), trace
