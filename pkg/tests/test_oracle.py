import numpy as np
import pytest

from collapsing_kahler import (BaseDomain, FibrationSpec, TotalSpaceGrid, fiber_average, fiber_oscillation,
                               full_ma_solve, reduced_ma_step, scaling_transport_check)

from .conftest import config_path
from collapsing_kahler.config import load_config, spec_from_config


@pytest.fixture(scope="module")
def coarse_oracle_spec():
    cfg = load_config(config_path("oracle_torus"))
    cfg["domain"]["resolution"] = 8
    return spec_from_config({k: cfg[k] for k in ("domain", "fibration")})


def test_invariant_data_matches_reduced_solve(coarse_oracle_spec):
    grid = TotalSpaceGrid.from_spec(coarse_oracle_spec)
    phi, info = full_ma_solve(grid, 1.0, tol=1e-11)
    red = reduced_ma_step(coarse_oracle_spec, 1.0, tol=1e-12)
    assert np.max(np.abs(phi - red.phi.values[:, :, None, None])) <= 1e-8
    assert np.max(np.abs(fiber_average(phi, grid).values - red.phi.values)) <= 1e-8
    assert np.max(fiber_oscillation(phi, grid).values) <= 1e-8
    assert info["volume_lhs"] == pytest.approx(info["volume_rhs"], rel=1e-8)
    assert info["min_eigenvalue"] > 0


def test_perturbed_volume_creates_fibre_oscillation(coarse_oracle_spec):
    grid = TotalSpaceGrid.from_spec(coarse_oracle_spec, perturbation=0.05)
    phi, _ = full_ma_solve(grid, 1.0)
    assert np.max(fiber_oscillation(phi, grid).values) > 1e-4


@pytest.mark.parametrize("t", [0.0, 1.0, 1e3, 1e6])
def test_semiflat_scaling_transport(t):
    out = scaling_transport_check(None, t, tau=(1j, 0.2, 0.05j))
    assert out["max"] < 1e-10 and out["samples"] > 0


def test_scaling_transport_on_grid(coarse_oracle_spec):
    grid = TotalSpaceGrid.from_spec(coarse_oracle_spec)
    assert scaling_transport_check(grid, 10.0)["max"] < 1e-12


def test_grid_size_cap():
    spec = FibrationSpec.build(BaseDomain.torus(32), [1j], density=1.0)
    with pytest.raises(ValueError):
        TotalSpaceGrid.from_spec(spec)


def test_disk_base_is_rejected():
    spec = FibrationSpec.build(BaseDomain.disk(16), [1j], chi=1.0, chi0=1.0, density=1.0)
    with pytest.raises(ValueError, match="periodic"):
        TotalSpaceGrid.from_spec(spec)


def test_oracle_needs_t_at_least_one(coarse_oracle_spec):
    with pytest.raises(ValueError):
        full_ma_solve(TotalSpaceGrid.from_spec(coarse_oracle_spec), 0.5)


def test_trivial_data_gives_zero_potential(trivial_spec):
    from collapsing_kahler.config import spec_from_config
    cfg = dict(trivial_spec.config)
    cfg["domain"] = {**cfg["domain"], "resolution": 8}
    spec = spec_from_config(cfg)
    phi, info = full_ma_solve(TotalSpaceGrid.from_spec(spec), 10.0)
    assert np.max(np.abs(phi)) < 1e-12


def test_oscillation_is_linear_in_perturbation(coarse_oracle_spec):
    osc = []
    for eps in (0.005, 0.01):
        grid = TotalSpaceGrid.from_spec(coarse_oracle_spec, perturbation=eps)
        phi, _ = full_ma_solve(grid, 1.0)
        osc.append(float(fiber_oscillation(phi, grid).values.max()))
    assert osc[1] / osc[0] == pytest.approx(2.0, rel=0.05)


def test_fibre_average_and_oscillation_of_model_fields(coarse_oracle_spec):
    grid = TotalSpaceGrid.from_spec(coarse_oracle_spec)
    base_field = np.cos(2 * np.pi * coarse_oracle_spec.base.s.real)
    const = np.broadcast_to(base_field[:, :, None, None], grid.shape).copy()
    assert np.max(fiber_oscillation(const, grid).values) == 0.0
    assert np.allclose(fiber_average(const, grid).values, base_field, atol=1e-14)
    n = grid.n_fiber
    x2 = np.arange(n) / n
    mode = np.broadcast_to(np.cos(2 * np.pi * x2)[None, None, :, None], grid.shape)
    assert np.max(np.abs(fiber_average(mode, grid).values)) < 1e-14
