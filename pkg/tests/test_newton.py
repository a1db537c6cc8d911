import numpy as np
import pytest

from collapsing_kahler import BaseDomain, DiscretizationError, NewtonStagnation, damped_newton
from collapsing_kahler.newton import solve_semilinear


def test_scalar_newton_converges_monotonically():
    x, trace = damped_newton(lambda x: x ** 3 - 2.0, lambda x, r: -r / (3 * x ** 2), np.array([3.0]), 1e-14)
    assert x[0] == pytest.approx(2 ** (1 / 3), rel=1e-13)
    res = [s.residual for s in trace]
    assert all(b < a for a, b in zip(res, res[1:]))


def test_damping_engages_on_overshoot():
    # arctan: full Newton steps diverge from x0 = 3; damping restores convergence
    x, trace = damped_newton(np.arctan, lambda x, r: -r * (1 + x ** 2), np.array([3.0]), 1e-12)
    assert abs(x[0]) < 1e-12
    assert any(s.damping < 1 for s in trace[1:])


def test_stagnation_carries_history():
    with pytest.raises(NewtonStagnation) as exc:
        damped_newton(lambda x: x ** 2 + 1.0, lambda x, r: np.ones_like(x), np.array([0.5]), 1e-12)
    assert exc.value.history and exc.value.history[0].residual == pytest.approx(1.25)


def test_iteration_cap_raises():
    with pytest.raises(NewtonStagnation):
        damped_newton(lambda x: x ** 3 - 2.0, lambda x, r: -r / (3 * x ** 2), np.array([3.0]), 1e-300,
                      max_iter=2)


def test_semilinear_constant_solution():
    dom = BaseDomain.torus(16)
    phi, trace = solve_semilinear(dom, np.full(dom.shape, 2.0), np.ones(dom.shape), 1.0)
    assert np.max(np.abs(phi - np.log(2.0))) < 1e-12


def test_semilinear_rejects_nonpositive_weight():
    dom = BaseDomain.torus(8)
    B = np.ones(dom.shape)
    B[2, 3] = 0.0
    with pytest.raises(DiscretizationError):
        solve_semilinear(dom, np.ones(dom.shape), B)
