"""Batch experiment driver.

Usage::

    collapsing-kahler EXPERIMENT --config spec.toml --out DIR [--gate] [--resume]
                      [--seed N] [--tol X] [--schedule T0:T1:PER_DECADE | t1,t2,...]
    collapsing-kahler report DIR

Every experiment writes ``config.toml`` (the input plus derived quantities),
``run_log.csv`` (one row per t, per r or per point) and ``summary.json``
(fitted quantities and gate outcomes).  Exit codes: 0 success, 1 a gated
criterion failed (with ``--gate``), 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .config import ConfigError, derived_summary, load_config, spec_from_config, write_spec
from .continuity import (ContinuityFailure, fit_estimate_envelopes, geometric_schedule, reduced_ma_step,
                         run_schedule)
from .fibration import CompatibilityError, FibrationSpec, FieldExpression
from .gke import solve_gke, uniqueness_probe, verify_gke_identity
from .metric import blowup_exponent_fit, completion_build, diameter_exponent_fit, gh_convergence_experiment
from .newton import DiscretizationError, NewtonStagnation
from .oracle import TotalSpaceGrid, fiber_average, fiber_oscillation, full_ma_solve

__all__ = ["main", "run", "report", "RunConfig", "EXPERIMENTS", "parse_schedule"]

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
REQUIRED_FILES = ("config.toml", "run_log.csv", "summary.json")


@dataclass(frozen=True)
class RunConfig:
    """One experiment invocation."""

    config_path: Path
    experiment: str
    out: Path
    schedule: tuple[float, ...] | None = None
    tol: float = 1e-10
    seed: int = 0
    gate: bool = False
    resume: bool = False


def parse_schedule(text: str) -> tuple[float, ...]:
    """``"1:1e6:1"`` (geometric, per decade) or ``"1,10,100"``."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            per = int(parts[2]) if len(parts) == 3 else 1
            return tuple(geometric_schedule(parts[0], parts[1], per))
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError("--schedule", f"cannot parse {text!r}") from None


def _experiment_table(cfg: dict) -> dict:
    exp = cfg.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("experiment", "must be a table")
    return exp


def _schedule(rc: RunConfig, exp: dict, default) -> list[float]:
    if rc.schedule is not None:
        return list(rc.schedule)
    sched = exp.get("schedule")
    if sched is None:
        return list(default)
    if isinstance(sched, str):
        return list(parse_schedule(sched))
    if isinstance(sched, list):
        return [float(t) for t in sched]
    raise ConfigError("experiment.schedule", "expected a list of t values or a schedule string")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _write_summary(out: Path, summary: dict):
    io.atomic_write_text(out / "summary.json", json.dumps(summary, sort_keys=True, indent=2,
                                                          default=_json_default) + "\n")


# --------------------------------------------------------------- experiments
def _solve_gke(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    sol = solve_gke(spec, tol=rc.tol, max_iter=int(exp.get("max_iter", 60)),
                    damping_floor=float(exp.get("damping_floor", 1e-6)))
    io.write_rows_csv(rc.out / "run_log.csv",
                      [{"iteration": s.iteration, "damping": s.damping, "residual": s.residual}
                       for s in sol.newton_trace], ["iteration", "damping", "residual"])
    io.write_field(rc.out / "phi_hat.kfld", sol.phi_hat, {"spec_hash": sol.spec_hash})
    io.write_field(rc.out / "chi_inf.kfld", sol.chi_inf, {"spec_hash": sol.spec_hash})
    io.write_field_csv(rc.out / "phi_hat.csv", sol.phi_hat)
    summary = {"residual": sol.residual_norm, "iterations": len(sol.newton_trace) - 1}
    gates = {"residual": sol.residual_norm <= 1e-8}
    dens = spec.config.get("fibration", {}).get("density", {})
    if dens.get("mode") == "manufactured":
        exact = FieldExpression.from_config(dens["phi_star"]).values(spec.base.s)
        inside = spec.base.inside
        err = float(np.max(np.abs(sol.phi_hat.values[inside] - exact[inside])))
        summary["sup_error"] = err
        gates["sup_error"] = err <= 1e-6
    if spec.consistency_mode == "exact":
        ident = verify_gke_identity(sol, spec)
        summary["identity_sup"] = ident["sup"]
        summary["identity_points"] = [{k: p[k] for k in ("multiplicity", "coefficients", "extrapolated",
                                                           "expected", "relative_error")} for p in ident["points"]]
        if not spec.marked:
            gates["identity"] = ident["sup"] <= 1e-4
        for p in ident["points"]:
            gates[f"flux_m{p['multiplicity']}"] = p["relative_error"] <= 0.05
    starts = int(exp.get("starts", 0))
    if starts:
        probe = uniqueness_probe(spec, n_starts=starts, seed=rc.seed, tol=rc.tol)
        summary["uniqueness_spread"] = probe["spread"]
        summary["uniqueness_converged"] = probe["converged"]
        gates["uniqueness"] = probe["spread"] <= 1e-4 and probe["converged"] == starts
    summary["gates"] = gates
    return summary


def _continuity_states(rc: RunConfig, spec: FibrationSpec, exp: dict, diagnostics: bool = True):
    t_list = _schedule(rc, exp, geometric_schedule())
    gke = solve_gke(spec, tol=rc.tol)
    states = run_schedule(spec, t_list, tol=rc.tol, gke=gke, checkpoint_dir=rc.out / "checkpoints",
                          resume=rc.resume, du=float(exp.get("du", 1e-2)), diagnostics=diagnostics)
    return gke, states


DIAG_COLUMNS = ["t", "u", "newton_iterations", "c0_norm", "trace_chi_max", "weighted_trace_max",
                "ricci_identity_residual", "ricci_lb_min", "volume_ratio_min", "volume_ratio_max",
                "gke_gap", "decay_psi", "decay_trace", "g_deviation", "fiber_diameter",
                "fiber_identity_residual", "compact_exclusion"]


def _diag_rows(states) -> list[dict]:
    rows = []
    for s in states:
        row = {"t": s.t, "u": s.u, "newton_iterations": len(s.newton_trace) - 1}
        if s.diagnostics is not None:
            row.update(s.diagnostics.as_row())
        rows.append(row)
    return rows


def _continuity_gates(states, tol: float) -> dict:
    diag = [s.diagnostics for s in states]
    c0 = [d.c0_norm for d in diag]
    widths = [d.volume_band_width for d in diag]
    gaps = [d.gke_gap for d in diag]

    def variation(v):
        return max(v) / min(v) if min(v) > 0 else (1.0 if max(v) == 0 else float("inf"))

    return {
        "ricci_identity": max(d.ricci_identity_residual for d in diag) <= 10 * tol,
        "ricci_lower_bound": min(d.ricci_lb_min for d in diag) >= -1e-6,
        "c0_variation": variation(c0) <= 3,
        "volume_band_variation": variation(widths) <= 3,
        "gke_gap_decay": gaps[-1] <= max(1e-2 * gaps[0], 1e-12),
    }


def _continuity_run(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    _, states = _continuity_states(rc, spec, exp)
    io.write_rows_csv(rc.out / "run_log.csv", _diag_rows(states), DIAG_COLUMNS)
    io.write_field(rc.out / "phi_final.kfld", states[-1].phi, {"t": states[-1].t})
    return {"t": [s.t for s in states], "gates": _continuity_gates(states, rc.tol)}


def _estimate_envelopes(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    _, states = _continuity_states(rc, spec, exp)
    io.write_rows_csv(rc.out / "run_log.csv", _diag_rows(states), DIAG_COLUMNS)
    env = fit_estimate_envelopes(states, spec)
    finite = all(np.isfinite(env[k]) for k in ("C_c0", "C_trace", "C_volume"))
    return {"envelopes": env, "gates": {"finite_constants": bool(finite)}}


def _gh_convergence(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    gke, states = _continuity_states(rc, spec, exp, diagnostics=bool(exp.get("diagnostics", False)))
    comp = completion_build(gke.chi_inf, [m.position for m in spec.marked], reference=spec.chi)
    res = gh_convergence_experiment(states, gke, spec)
    rows = [{k: r[k] for k in ("t", "direct", "three_term", "value", "fiber_diameter")} for r in res["rows"]]
    io.write_rows_csv(rc.out / "run_log.csv", rows, ["t", "direct", "three_term", "value", "fiber_diameter"])
    io.write_rows_csv(rc.out / "gh1_truncation.csv", res["gh1"], ["delta", "hausdorff", "tolerance", "ok"])
    labels = [f"{z.real:.6f}{z.imag:+.6f}j" for z in res["sample_points"]]
    io.write_matrix_csv(rc.out / "distances_inf.csv", res["sample_distances"], labels)
    io.atomic_write_text(rc.out / "completion.txt", _completion_text(comp))
    s = res["series"]
    cauchy = max((max(c["relative_differences"], default=0.0) for c in comp.cauchy), default=0.0)
    gates = {
        "positive": all(v > 0 for v in s),
        "non_increasing": all(b <= a * (1 + 1e-9) for a, b in zip(s, s[1:])),
        "final_over_initial": s[-1] <= 0.1 * s[0],
        "truncation_bound": all(g["ok"] for g in res["gh1"]),
        "completion_cauchy": cauchy <= 0.01,
    }
    x = np.log1p([r["t"] for r in res["rows"]])
    slope = float(np.polyfit(x, np.log(s), 1)[0]) if len(s) > 1 else float("nan")
    return {"series": s, "loglog_slope": slope, "D_inf": res["D_inf"], "empirical_N": comp.empirical_N,
            "completion_cauchy": cauchy, "gates": gates}


def _completion_text(comp) -> str:
    lines = ["# metric completion", f"diameter D_inf = {io.format_value(comp.diameter)}",
             f"ring radius = {io.format_value(comp.ring_radius)}",
             f"empirical N = {io.format_value(comp.empirical_N) if comp.empirical_N is not None else 'n/a'}"]
    for k, p in enumerate(comp.marked):
        row = comp.point_distances[k]
        lines.append(f"point {k}: position = ({io.format_value(p.real)}, {io.format_value(p.imag)}), "
                     f"max distance = {io.format_value(float(np.max(row[np.isfinite(row)])))}, "
                     f"cauchy differences = {', '.join(io.format_value(d) for d in comp.cauchy[k]['relative_differences'])}")
    return "\n".join(lines) + "\n"


def _blowup_fit(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    base = spec.base
    rows, gates = [], {}
    targets = [(m.position, m.density_exponent, m.bound_exponent) for m in spec.marked]
    if not targets:
        c = exp.get("center", [base.center.real, base.center.imag] if not base.periodic else [0.5, 0.5])
        targets = [(complex(c[0], c[1]), 0.0, spec.beta)]
    for k, (p, e, beta) in enumerate(targets):
        fit = blowup_exponent_fit(spec.F, p, exp.get("r_min"), exp.get("r_max"))
        rows.append({"point": k, "x": p.real, "y": p.imag, "slope": fit["slope"], "expected": 0.0 - 2 * e,
                     "bound": -2 * beta, "anisotropy": fit["anisotropy"]})
        gates[f"point{k}_slope"] = abs(fit["slope"] + 2 * e) <= 0.05
        gates[f"point{k}_bound"] = fit["slope"] >= -2 * beta
    io.write_rows_csv(rc.out / "run_log.csv", rows, ["point", "x", "y", "slope", "expected", "bound", "anisotropy"])
    return {"slopes": [r["slope"] for r in rows], "beta": spec.beta, "gates": gates}


def _diameter_fit(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    base = spec.base
    if spec.marked:
        center = spec.marked[0].position
    else:
        c = exp.get("center", [base.center.real, base.center.imag])
        center = complex(c[0], c[1])
    scale = base.radius if not base.periodic else 0.5 * min(base.periods)
    radii = [float(r) for r in exp.get("radii", [0.8 * scale, 0.4 * scale, 0.2 * scale, 0.1 * scale])]
    gke = solve_gke(spec, tol=rc.tol)
    fit = diameter_exponent_fit(gke.chi_inf, radii, center, neighbors=int(exp.get("neighbors", 16)))
    io.write_rows_csv(rc.out / "run_log.csv",
                      [{"r": r, "diameter": d} for r, d in zip(fit["radii"], fit["diameters"])], ["r", "diameter"])
    beta = spec.beta if spec.marked else 0.0
    lo = 1 - beta - 0.05
    return {"slope": fit["slope"], "stderr": fit["stderr"], "beta": beta, "dropped_radii": fit["dropped"],
            "gates": {"slope_range": lo <= fit["slope"] <= 1.0}}


def _oracle_compare(rc: RunConfig, spec: FibrationSpec, exp: dict) -> dict:
    t_list = _schedule(rc, exp, [1.0, 10.0, 100.0])
    eps = float(exp.get("perturbation", 0.01))
    n_fiber = exp.get("n_fiber")
    grid = TotalSpaceGrid.from_spec(spec, n_fiber)
    pert = TotalSpaceGrid.from_spec(spec, n_fiber, perturbation=eps) if eps else None
    rows = []
    for t in t_list:
        phi, info = full_ma_solve(grid, t, tol=rc.tol)
        red = reduced_ma_step(spec, t, tol=rc.tol)
        node = np.abs(phi - red.phi.values[:, :, None, None])
        avg = float(np.max(np.abs(fiber_average(phi, grid).values - red.phi.values)))
        row = {"t": t, "max_deviation": float(node.max()), "mean_deviation": float(node.mean()),
               "rms_deviation": float(np.sqrt(np.mean(node ** 2))), "fiber_mean_deviation": avg,
               "residual": info["residual"], "volume_lhs": info["volume_lhs"], "volume_rhs": info["volume_rhs"],
               "min_eigenvalue": info["min_eigenvalue"]}
        if pert is not None:
            phi_p, _ = full_ma_solve(pert, t, tol=rc.tol)
            osc = float(fiber_oscillation(phi_p, pert).values.max())
            row.update(oscillation=osc, scaled_oscillation=(1 + t) * osc)
        rows.append(row)
    cols = ["t", "max_deviation", "mean_deviation", "rms_deviation", "fiber_mean_deviation", "residual",
            "volume_lhs", "volume_rhs", "min_eigenvalue"] + (["oscillation", "scaled_oscillation"] if pert else [])
    io.write_rows_csv(rc.out / "run_log.csv", rows, cols)
    io.write_rows_csv(rc.out / "oracle_comparison.csv", rows, cols)
    gates = {"deviation": max(r["max_deviation"] for r in rows) <= 1e-4}
    if pert is not None:
        sc = [r["scaled_oscillation"] for r in rows]
        gates["oscillation"] = all(b <= 1.2 * a for a, b in zip(sc, sc[1:]))
    return {"max_deviation": max(r["max_deviation"] for r in rows), "perturbation": eps, "gates": gates}


EXPERIMENTS: dict[str, Callable] = {
    "solve-gke": _solve_gke,
    "continuity-run": _continuity_run,
    "gh-convergence": _gh_convergence,
    "blowup-fit": _blowup_fit,
    "diameter-fit": _diameter_fit,
    "oracle-compare": _oracle_compare,
    "estimate-envelopes": _estimate_envelopes,
}


def run(rc: RunConfig) -> int:
    """Execute one experiment; returns the process exit code."""
    np.random.seed(rc.seed)
    try:
        cfg = load_config(rc.config_path)
        exp = _experiment_table(cfg)
        spec = spec_from_config({k: cfg[k] for k in ("domain", "fibration") if k in cfg})
        rc.out.mkdir(parents=True, exist_ok=True)
        write_spec(spec, rc.out / "config.toml")
    except (ConfigError, CompatibilityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        summary = EXPERIMENTS[rc.experiment](rc, spec, exp)
    except (NewtonStagnation, DiscretizationError, ContinuityFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, CompatibilityError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    header = {"experiment": rc.experiment, "spec_hash": spec.spec_hash(), "seed": rc.seed, "tol": rc.tol,
              "derived": derived_summary(spec)}
    summary = {**header, **summary}
    summary["gates_passed"] = all(summary.get("gates", {}).values())
    _write_summary(rc.out, summary)
    for name, ok in sorted(summary.get("gates", {}).items()):
        print(f"{'PASS' if ok else 'FAIL'} {rc.experiment}:{name}")
    if rc.gate and not summary["gates_passed"]:
        return EXIT_GATE
    return EXIT_OK


# ------------------------------------------------------------------- report
def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def report(directory) -> str:
    """Human-readable summary of a run directory.

    Raises
    ------
    FileNotFoundError
        Lists every required artifact that is absent.
    """
    d = Path(directory)
    missing = [f for f in REQUIRED_FILES if not (d / f).exists()]
    if missing:
        raise FileNotFoundError(f"{d}: missing required run files: {', '.join(missing)}")
    summary = json.loads((d / "summary.json").read_text())
    rows = io.read_rows_csv(d / "run_log.csv")
    exp = summary.get("experiment", "?")
    lines = [f"experiment: {exp}", f"spec hash: {summary.get('spec_hash')}",
             f"beta: {_fmt(summary.get('derived', {}).get('beta'))}"]
    if exp == "diameter-fit":
        slope, se = summary["slope"], summary["stderr"]
        lines.append(f"diameter slope: {slope:.6f} (95% CI {slope - 1.96 * se:.6f} .. {slope + 1.96 * se:.6f})")
        lines.append(f"1 - beta: {1 - summary['beta']:.6f}")
    elif exp == "oracle-compare":
        lines.append(f"max deviation: {summary['max_deviation']:.6e}")
        if rows and "scaled_oscillation" in rows[0]:
            lines.append("scaled oscillation: " + _fmt([r["scaled_oscillation"] for r in rows]))
    elif exp == "gh-convergence":
        s = summary["series"]
        lines.append(f"GH series: first {s[0]:.6e}, last {s[-1]:.6e}, ratio {s[-1] / s[0]:.6e}")
        lines.append(f"log-log slope: {summary['loglog_slope']:.6f}")
        lines.append(f"D_inf: {summary['D_inf']:.6f}, empirical N: {_fmt(summary['empirical_N'])}")
    elif exp == "blowup-fit":
        lines.append("blow-up slopes: " + _fmt(summary["slopes"]))
        lines.append(f"bound -2 beta: {-2 * summary['beta']:.6f}")
    elif exp == "estimate-envelopes":
        env = summary["envelopes"]
        for k in sorted(env):
            lines.append(f"{k}: {_fmt(env[k])}")
    elif exp == "solve-gke":
        for k in ("residual", "sup_error", "identity_sup", "uniqueness_spread"):
            if k in summary:
                lines.append(f"{k}: {summary[k]:.6e}")
    elif exp == "continuity-run":
        if rows:
            lines.append(f"t range: {rows[0]['t']:.6g} .. {rows[-1]['t']:.6g} ({len(rows)} states)")
            lines.append(f"gke gap: first {rows[0]['gke_gap']:.6e}, last {rows[-1]['gke_gap']:.6e}")
    for name, ok in sorted(summary.get("gates", {}).items()):
        lines.append(f"gate {name}: {'pass' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="collapsing-kahler", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        q = sub.add_parser(name, help=f"run the {name} experiment")
        q.add_argument("--config", required=True, type=Path)
        q.add_argument("--out", required=True, type=Path)
        q.add_argument("--resume", action="store_true", help="reuse checkpoints of the same spec")
        q.add_argument("--gate", action="store_true", help="exit 1 if any gated criterion fails")
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--tol", type=float, default=1e-10)
        q.add_argument("--schedule", type=str, default=None)
    r = sub.add_parser("report", help="summarize a run directory")
    r.add_argument("directory", type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "report":
        try:
            sys.stdout.write(report(args.directory))
        except FileNotFoundError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        schedule = parse_schedule(args.schedule) if args.schedule else None
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    rc = RunConfig(args.config, args.command, args.out, schedule, args.tol, args.seed, args.gate, args.resume)
    return run(rc)


if __name__ == "__main__":
    sys.exit(main())
