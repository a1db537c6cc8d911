"""Reading and writing fibration configs (TOML) with field-level validation."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import tomli
import tomli_w

from .fibration import FibrationSpec, FieldExpression, MarkedPoint, sigma_bounds
from .geometry import BaseDomain

__all__ = ["ConfigError", "spec_from_config", "load_spec", "load_config", "write_spec"]


class ConfigError(ValueError):
    """A config value is missing or invalid; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def _get(table: Mapping, key: str, path: str, default=..., kind=None):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "required field is missing")
        return default
    value = table[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{path}.{key}", f"expected {kind}, got {type(value).__name__}")
    return value


def _complex(value, path: str) -> complex:
    if isinstance(value, (int, float)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    raise ConfigError(path, "expected a number or a [re, im] pair")


def _expression(value, path: str) -> FieldExpression:
    try:
        return FieldExpression.from_config(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _domain(cfg: Mapping) -> BaseDomain:
    d = _get(cfg, "domain", "config", kind=dict)
    kind = _get(d, "kind", "domain", kind=str)
    res = _get(d, "resolution", "domain", kind=(int, list))
    try:
        if kind == "torus":
            periods = _get(d, "periods", "domain", [1.0, 1.0])
            return BaseDomain.torus(res, periods=periods)
        if kind == "disk":
            return BaseDomain.disk(res, radius=float(_get(d, "radius", "domain", 1.0)),
                                   center=_complex(_get(d, "center", "domain", 0.0), "domain.center"),
                                   boundary_value=float(_get(d, "boundary_value", "domain", 0.0)))
    except ValueError as exc:
        raise ConfigError("domain", str(exc)) from None
    raise ConfigError("domain.kind", f"unknown kind {kind!r} (torus or disk)")


def spec_from_config(cfg: Mapping[str, Any]) -> FibrationSpec:
    """Build a :class:`FibrationSpec` from a parsed config mapping."""
    base = _domain(cfg)
    fib = _get(cfg, "fibration", "config", {}, kind=dict)
    tau = [_complex(c, f"fibration.tau[{k}]") for k, c in enumerate(_get(fib, "tau", "fibration", [[0.0, 1.0]]))]
    if not tau:
        raise ConfigError("fibration.tau", "at least one coefficient is required")
    marked, scales = [], []
    for k, m in enumerate(_get(fib, "marked", "fibration", [], kind=list)):
        path = f"fibration.marked[{k}]"
        pos = _complex(_get(m, "position", path), path + ".position")
        mult = _get(m, "multiplicity", path, kind=int)
        preset = m.get("preset", "multiple-fiber")
        try:
            if preset == "multiple-fiber":
                mp = MarkedPoint.multiple_fiber(pos, mult)
            elif preset == "explicit":
                mp = MarkedPoint(pos, mult, float(_get(m, "density_exponent", path)),
                                 float(_get(m, "bound_exponent", path)))
            else:
                raise ConfigError(path + ".preset", f"unknown preset {preset!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        marked.append(mp)
        scales.append(float(m.get("sigma_scale", 1.0)))
    chi = _expression(fib.get("chi", 1.0), "fibration.chi")
    chi0 = _expression(fib.get("chi0", 1.0), "fibration.chi0")
    density = None
    dens = fib.get("density", {"mode": "consistent"})
    mode = dens.get("mode", "consistent")
    if mode == "constant":
        density = float(_get(dens, "value", "fibration.density", 1.0))
    elif mode == "manufactured":
        density = ("manufactured", _expression(_get(dens, "phi_star", "fibration.density"),
                                               "fibration.density.phi_star"))
    elif mode != "consistent":
        raise ConfigError("fibration.density.mode", f"unknown mode {mode!r}")
    area = float(_get(fib, "fiber_area", "fibration", 1.0))
    if area <= 0:
        raise ConfigError("fibration.fiber_area", "must be positive")
    consistency = _get(fib, "consistency_mode", "fibration", "exact", kind=str)
    if consistency not in ("exact", "twisted"):
        raise ConfigError("fibration.consistency_mode", f"unknown mode {consistency!r}")
    try:
        return FibrationSpec.build(
            base, tau, marked, chi=chi, chi0=chi0, fiber_area=area,
            consistency_mode=consistency, density=density,
            sigma_scales=scales or None,
            exclusion_spacings=float(fib.get("exclusion_spacings", 6.0)),
            config=copy.deepcopy(dict(cfg)))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("fibration", str(exc)) from None


def load_spec(path) -> FibrationSpec:
    return spec_from_config(load_config(path))


def derived_summary(spec: FibrationSpec) -> dict:
    """Scalar derived quantities echoed into written configs and reports."""
    out = {
        "spec_hash": spec.spec_hash(),
        "consistency_mode": spec.consistency_mode,
        "beta": spec.beta,
        "marked": [{"position": [m.position.real, m.position.imag], "multiplicity": m.multiplicity,
                    "density_exponent": m.density_exponent, "bound_exponent": m.bound_exponent}
                   for m in spec.marked],
        "grid_spacing": list(spec.base.spacing),
    }
    for k, v in spec.derived.items():
        out[k] = float(v)
    if spec.defect is not None:
        d = spec.defect.density
        out["defect_sup"] = float(np.nanmax(np.abs(d[spec.base.compact()])))
    out["sigma_bound_C"] = sigma_bounds(spec)["C"]
    return out


def write_spec(spec: FibrationSpec, path) -> Path:
    """Write the spec's config plus a ``[derived]`` table of built quantities."""
    cfg = copy.deepcopy(dict(spec.config))
    cfg["derived"] = derived_summary(spec)
    path = Path(path)
    with open(path, "wb") as fh:
        tomli_w.dump(cfg, fh)
    return path
