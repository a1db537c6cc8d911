"""Graph geodesics of conformal base metrics, metric completion and GH estimates.

A positive form with density ρ has length element ``sqrt(ρ)|ds|``.  Its
geodesic distance is approximated by shortest paths in a lattice graph whose
edges join each node to the nodes reached by a fixed set of primitive lattice
vectors; edge weights integrate ``sqrt(ρ)`` along the straight segment with
two-point Gauss quadrature, multiplying explicit singular factors back in
analytically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import gcd
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage, optimize
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.special import roots_jacobi

from .continuity import ContinuityState, flat_torus_diameter
from .fibration import FibrationSpec
from .geometry import BaseForm, cell_averaged_factor
from .gke import GKESolution

__all__ = [
    "stencil_offsets",
    "DensitySampler",
    "MetricGraph",
    "CompletedBaseSpace",
    "MetricSample",
    "Correspondence",
    "distance_field",
    "punctured_disk_diameter",
    "diameter_exponent_fit",
    "blowup_exponent_fit",
    "completion_build",
    "gh_upper_bound",
    "gh_convergence_experiment",
    "bishop_gromov_ratio",
    "sinh3_integral",
    "flat_torus_ball_area",
]

_GAUSS = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


def stencil_offsets(neighbors: int = 16) -> list[tuple[int, int]]:
    """Primitive lattice vectors (one per ± pair) for an 8, 16 or 32 neighbour stencil."""
    reach = {8: 1, 16: 2, 32: 3}
    if neighbors not in reach:
        raise ValueError("stencil must have 8, 16 or 32 neighbours")
    r = reach[neighbors]
    out = []
    for i in range(0, r + 1):
        for j in range(-r, r + 1):
            if (i == 0 and j <= 0) or gcd(i, abs(j)) != 1:
                continue
            out.append((i, j))
    return out


class DensitySampler:
    """Evaluates sqrt(ρ) of a form at arbitrary points.

    The log of the regular part is interpolated bilinearly (periodically on the
    torus; masked nodes are filled from the nearest valid node) and explicit
    singular factors are evaluated exactly.
    """

    def __init__(self, form: BaseForm):
        self.form = form
        dom = form.domain
        self.domain = dom
        reg = np.array(form.regular_part, dtype=float)
        ok = np.isfinite(reg) & (reg > 0)
        if not ok.any():
            raise ValueError("density has no positive samples")
        logr = np.where(ok, np.log(np.where(ok, reg, 1.0)), 0.0)
        if not ok.all():
            _, (ii, jj) = ndimage.distance_transform_edt(~ok, return_indices=True)
            logr = logr[ii, jj]
        self.log_regular = logr
        self.singular = form.singular

    def _grid_coords(self, z):
        dom = self.domain
        hx, hy = dom.spacing
        return (np.real(z) - dom.x[0]) / hx, (np.imag(z) - dom.y[0]) / hy

    def log_regular_at(self, z) -> np.ndarray:
        gx, gy = self._grid_coords(np.asarray(z))
        mode = "grid-wrap" if self.domain.periodic else "nearest"
        return ndimage.map_coordinates(self.log_regular, [np.ravel(gx), np.ravel(gy)],
                                       order=1, mode=mode).reshape(np.shape(z))

    def sqrt_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        out = np.exp(0.5 * self.log_regular_at(z))
        for p, e in self.singular:
            out = out * np.abs(self.domain.displacement(z, p)) ** (-e)
        return out

    def radial_length(self, p: complex, q: np.ndarray, exponent: float, order: int = 8) -> np.ndarray:
        """``∫ sqrt(ρ)`` along straight rays from ``p`` to each ``q``.

        The factor ``|z - p|^(-exponent)`` is absorbed into a Gauss–Jacobi
        weight; remaining factors (and the regular part) are smooth on the ray.
        """
        q = np.atleast_1d(np.asarray(q, dtype=complex))
        d = self.domain.displacement(q, p)
        L = np.abs(d)
        x, w = roots_jacobi(order, 0.0, -exponent)
        frac = 0.5 * (1.0 + x)          # position along the ray in (0, 1)
        pts = p + d[:, None] * frac[None, :]
        others = [(pp, ee) for pp, ee in self.singular if abs(self.domain.displacement(pp, p)) > 0]
        g = np.exp(0.5 * self.log_regular_at(pts))
        for pp, ee in others:
            g = g * np.abs(self.domain.displacement(pts, pp)) ** (-ee)
        return (0.5 * L) ** (1.0 - exponent) * (g @ w)


@dataclass(eq=False)
class MetricGraph:
    """Weighted lattice graph of a conformal metric on the vertices of ``region``."""

    form: BaseForm
    neighbors: int = 16
    region: np.ndarray | None = None

    def __post_init__(self):
        dom = self.form.domain
        self.domain = dom
        self.sampler = DensitySampler(self.form)
        reg = np.asarray(self.form.regular_part)
        valid = dom.inside & np.isfinite(reg) & (reg > 0)
        for p, _ in self.form.singular:
            valid &= np.abs(dom.displacement(dom.s, p)) > 1e-12
        if self.region is not None:
            valid &= self.region
        self.valid = valid
        index = -np.ones(dom.shape, dtype=np.int64)
        index[valid] = np.arange(int(valid.sum()))
        self.index = index
        self.points = dom.s[valid]
        self.n = int(valid.sum())
        us, vs, ws = [], [], []
        n1, n2 = dom.shape
        I, J = np.nonzero(valid)
        hx, hy = dom.spacing
        for di, dj in stencil_offsets(self.neighbors):
            ti, tj = I + di, J + dj
            if dom.periodic:
                ti, tj = ti % n1, tj % n2
                inb = np.ones(ti.shape, dtype=bool)
            else:
                inb = (ti >= 0) & (ti < n1) & (tj >= 0) & (tj < n2)
            src = np.nonzero(inb)[0]
            ti, tj = ti[inb], tj[inb]
            ok = valid[ti, tj]
            src, ti, tj = src[ok], ti[ok], tj[ok]
            a = dom.s[I[src], J[src]]
            step = di * hx + 1j * dj * hy
            pts = [a + g * step for g in _GAUSS]
            ws.append(abs(step) * 0.5 * (self.sampler.sqrt_density(pts[0]) + self.sampler.sqrt_density(pts[1])))
            us.append(index[I[src], J[src]])
            vs.append(index[ti, tj])
        self.edges_u = np.concatenate(us) if us else np.zeros(0, dtype=np.int64)
        self.edges_v = np.concatenate(vs) if vs else np.zeros(0, dtype=np.int64)
        self.edges_w = np.concatenate(ws) if ws else np.zeros(0)
        if np.any(~np.isfinite(self.edges_w)) or np.any(self.edges_w <= 0):
            raise ValueError("edge weights must be positive and finite")
        self._extra: list[tuple[np.ndarray, np.ndarray]] = []
        self.removed = np.zeros(self.n, dtype=bool)
        self._matrix = None

    # ----------------------------------------------------------- structure
    @property
    def n_vertices(self) -> int:
        return self.n + len(self._extra)

    def vertex_of(self, z) -> int:
        """Nearest graph vertex to a complex point."""
        d = np.abs(self.domain.displacement(self.points, complex(z)))
        d[self.removed] = np.inf
        return int(np.argmin(d))

    def add_vertex(self, neighbors: np.ndarray, weights: np.ndarray) -> int:
        self._extra.append((np.asarray(neighbors, dtype=np.int64), np.asarray(weights, dtype=float)))
        self._matrix = None
        return self.n + len(self._extra) - 1

    def remove(self, mask: np.ndarray):
        self.removed = self.removed | np.asarray(mask, dtype=bool)
        self._matrix = None

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            keep = ~(self.removed[self.edges_u] | self.removed[self.edges_v])
            u = [self.edges_u[keep]]
            v = [self.edges_v[keep]]
            w = [self.edges_w[keep]]
            for k, (nb, wt) in enumerate(self._extra):
                ok = ~self.removed[nb]
                u.append(np.full(int(ok.sum()), self.n + k))
                v.append(nb[ok])
                w.append(wt[ok])
            u, v, w = np.concatenate(u), np.concatenate(v), np.concatenate(w)
            N = self.n_vertices
            m = sp.coo_matrix((w, (u, v)), shape=(N, N)).tocsr()
            self._matrix = m.maximum(m.T).tocsr()
        return self._matrix

    def distances(self, sources, min_only: bool = False) -> np.ndarray:
        """Shortest-path distances from vertex indices (inf if disconnected)."""
        return dijkstra(self.matrix, directed=False, indices=sources, min_only=min_only)

    def components(self) -> int:
        active = np.concatenate([~self.removed, np.ones(len(self._extra), dtype=bool)])
        sub = self.matrix[active][:, active]
        return int(connected_components(sub, directed=False)[0])

    def to_grid(self, vertex_values: np.ndarray) -> np.ndarray:
        out = np.full(self.domain.shape, np.nan)
        vals = np.array(vertex_values[: self.n], dtype=float)
        vals[self.removed] = np.nan
        out[self.valid] = vals
        return out


def distance_field(form: BaseForm, sources, neighbors: int = 16, region=None,
                   graph: MetricGraph | None = None) -> np.ndarray:
    """Shortest-path distances on the grid from each complex source point.

    Returns an array of shape ``(len(sources),) + domain.shape``; nodes outside
    the graph are NaN and disconnected nodes are inf (with a warning).
    """
    g = graph if graph is not None else MetricGraph(form, neighbors, region)
    idx = [g.vertex_of(z) for z in np.atleast_1d(sources)]
    d = g.distances(idx)
    if np.any(np.isinf(d[:, : g.n][:, ~g.removed])):
        warnings.warn("some vertices are disconnected from the sources (infinite distance)")
    return np.stack([g.to_grid(row) for row in np.atleast_2d(d)])


# ---------------------------------------------------------------- exponents
def _sampled_diameter(g: MetricGraph, members: np.ndarray, ring: np.ndarray, max_sources: int = 96) -> float:
    """Diameter of the vertex subset ``members`` (graph restricted to it).

    Sources are the appended vertices plus strided samples of the ``ring`` and
    of the interior; every other vertex enters as a target.
    """
    cand = np.nonzero(members)[0]
    extra = np.arange(g.n, g.n_vertices)
    if cand.size <= max_sources:
        sources = cand
    else:
        ring_idx = np.setdiff1d(np.nonzero(ring & members)[0], extra)
        interior = np.setdiff1d(cand, np.union1d(ring_idx, extra))
        half = max(1, max_sources // 2)
        pick = lambda a: a[:: max(1, int(np.ceil(a.size / half)))]
        sources = np.union1d(np.union1d(pick(ring_idx), pick(interior)), extra)
    d = g.distances(sources)
    d = d[:, members]
    return float(np.max(d[np.isfinite(d)]))


def punctured_disk_diameter(form: BaseForm, r: float, center: complex = 0j, neighbors: int = 16,
                            ring_spacings: float = 2.0) -> float:
    """Intrinsic diameter of the punctured disk ``0 < |s - center| <= r``.

    The supremum is approached next to the puncture, so the puncture is
    attached through its radial integral (the diameter of the punctured disk
    equals that of its completion).
    """
    base = form.domain
    dist = np.abs(base.displacement(base.s, center))
    region = base.inside & (dist <= r) & (dist > 0)
    g = MetricGraph(form, neighbors, region)
    h = max(base.spacing)
    exponent = dict((complex(p), e) for p, e in form.singular).get(complex(center), 0.0)
    _attach_points(g, [complex(center)], [exponent], ring_spacings * h, 1.5 * h)
    members = np.concatenate([~g.removed, np.ones(1, dtype=bool)])
    d = np.abs(base.displacement(g.points, center))
    ring = np.concatenate([(d > r - 1.5 * h) & ~g.removed, np.ones(1, dtype=bool)])
    return _sampled_diameter(g, members, ring)


def diameter_exponent_fit(form: BaseForm, r_list: Sequence[float], center: complex = 0j,
                          neighbors: int = 16, min_spacings: float = 6.0) -> dict:
    """Least-squares slope of log diam(Δ_r*) against log r.

    Radii below ``min_spacings`` grid spacings are dropped with a warning.
    Returns the slope, its standard error, and the per-radius diameters.
    """
    h = max(form.domain.spacing)
    radii = sorted(float(r) for r in r_list)
    used = [r for r in radii if r >= min_spacings * h]
    dropped = [r for r in radii if r < min_spacings * h]
    if dropped:
        warnings.warn(f"radii {dropped} are below {min_spacings} grid spacings and are excluded")
    if len(used) < 2:
        raise ValueError("need at least two radii above the resolution limit")
    diams = [punctured_disk_diameter(form, r, center, neighbors) for r in used]
    x, y = np.log(used), np.log(diams)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    se = float(np.sqrt(np.sum(resid ** 2) / dof / np.sum((x - x.mean()) ** 2))) if len(x) > 2 else 0.0
    return {"slope": float(coef[0]), "stderr": se, "radii": used, "diameters": diams, "dropped": dropped}


def blowup_exponent_fit(F: BaseForm, center: complex, r_min: float | None = None,
                        r_max: float | None = None, rays: int = 8) -> dict:
    """Regression slope of log F against log|s - center| on grid nodes.

    Nodes in the annulus ``[r_min, r_max]`` (default 2 to 16 spacings, three
    refinement levels) are used; node values carry the singular factor
    exactly, so the inner radius can sit close to the point.  Per-ray fits over ``rays`` angular sectors
    give an anisotropy measure; above 50% the envelope (minimum slope) is
    reported as the slope.
    """
    dom = F.domain
    h = max(dom.spacing)
    r_min = 2 * h if r_min is None else r_min
    r_max = 8 * r_min if r_max is None else r_max
    if r_max < 4 * r_min * 0.999:
        raise ValueError("the annulus must span at least three refinement levels")
    d = dom.displacement(dom.s, center)
    r = np.abs(d)
    sel = dom.inside & (r >= r_min) & (r <= r_max) & np.isfinite(F.density) & (F.density > 0)
    x, y = np.log(r[sel]), np.log(F.density[sel])
    slope = float(np.polyfit(x, y, 1)[0])
    ang = np.angle(d[sel])
    sector = np.floor((ang + np.pi) / (2 * np.pi) * rays).astype(int) % rays
    per_ray = []
    for k in range(rays):
        m = sector == k
        if m.sum() >= 3 and np.ptp(x[m]) > 0:
            per_ray.append(float(np.polyfit(x[m], y[m], 1)[0]))
    per_ray = np.array(per_ray)
    mean = float(np.mean(per_ray)) if per_ray.size else slope
    anis = float(np.ptp(per_ray) / abs(mean)) if per_ray.size and mean != 0 else 0.0
    out = {"slope": slope, "per_ray": per_ray.tolist(), "anisotropy": anis,
           "r_range": (r_min, r_max), "nodes": int(sel.sum())}
    if anis > 0.5:
        out["slope"] = float(np.min(per_ray))
        out["envelope"] = True
    return out


# --------------------------------------------------------------- completion
@dataclass(eq=False)
class CompletedBaseSpace:
    """Graph of (Σ_reg, ρ) with the marked points appended as vertices."""

    graph: MetricGraph
    marked: list[complex]
    marked_vertices: list[int]
    ring_radius: float
    point_distances: np.ndarray      # (n_marked, n_vertices) distances to the appended vertices
    diameter: float
    cauchy: list[dict]
    empirical_N: float | None = None
    report: dict = field(default_factory=dict)

    def distances(self, sources) -> np.ndarray:
        return self.graph.distances(sources)


def _attach_points(g: MetricGraph, points, exponents, radius: float, width: float):
    """Remove vertices inside ``radius`` of each point and append the point.

    The appended vertex joins the nodes of the ring ``radius <= |s - p| < radius
    + width`` with radial integrals of sqrt(ρ).
    """
    base = g.domain
    verts = []
    for p, e in zip(points, exponents):
        d = np.abs(base.displacement(g.points, p))
        g.remove(d < radius)
    for p, e in zip(points, exponents):
        d = np.abs(base.displacement(g.points, p))
        ring = np.nonzero((d >= radius) & (d < radius + width) & ~g.removed)[0]
        w = g.sampler.radial_length(p, g.points[ring], e)
        verts.append(g.add_vertex(ring, w))
    return verts


def completion_build(form: BaseForm, marked=None, radii: Sequence[float] | None = None,
                     neighbors: int = 16, region=None, reference: BaseForm | None = None,
                     deltas: Sequence[float] | None = None, diameter_sources: int = 300) -> CompletedBaseSpace:
    """Metric completion of a conformal metric with integrable point singularities.

    For each radius in ``radii`` (default 8, 4, 2 spacings) the nodes within the
    radius of each marked point are removed and the point is attached to the
    surrounding ring by radial integrals; the distances to the point across the
    radii must agree (Cauchy).  The finest radius defines the completion.

    Raises
    ------
    ValueError
        A marked exponent >= 1 (non-integrable length) or a non-Cauchy limit.
    """
    dom = form.domain
    h = max(dom.spacing)
    sing = dict((complex(p), e) for p, e in form.singular)
    pts = [complex(p) for p in (sing.keys() if marked is None else marked)]
    exps = [float(sing.get(p, 0.0)) for p in pts]
    if any(e >= 1 for e in exps):
        raise ValueError("length density is not integrable at a marked point (exponent >= 1)")
    radii = sorted([8 * h, 4 * h, 2 * h] if radii is None else [float(r) for r in radii], reverse=True)
    estimates = []
    g = None
    for r in radii:
        g = MetricGraph(form, neighbors, region)
        verts = _attach_points(g, pts, exps, r, 1.5 * h)
        d = g.distances(verts) if verts else np.zeros((0, g.n_vertices))
        estimates.append((g, verts, np.atleast_2d(d)))
    g, verts, dist = estimates[-1]
    # Cauchy check on vertices kept in every configuration
    common = np.ones(estimates[0][0].n, dtype=bool)
    for gg, _, _ in estimates:
        common &= ~gg.removed
    cauchy = []
    for k, p in enumerate(pts):
        rows = [est[2][k, : est[0].n][common] for est in estimates]
        scale = float(np.max(rows[-1][np.isfinite(rows[-1])]))
        diffs = [float(np.max(np.abs(a - b)[np.isfinite(a - b)])) / scale for a, b in zip(rows, rows[1:])]
        cauchy.append({"point": p, "radii": radii, "relative_differences": diffs, "scale": scale})
    if any(max(c["relative_differences"], default=0.0) > 0.25 for c in cauchy):
        raise ValueError("distances to the completion points do not settle across radii (non-Cauchy)")
    # diameter over a sample of sources including the appended points
    active = np.nonzero(~g.removed)[0]
    stride = max(1, active.size // diameter_sources)
    sources = np.concatenate([active[::stride], np.array(verts, dtype=np.int64)])
    all_d = g.distances(sources)
    finite = all_d[np.isfinite(all_d)]
    D = float(np.max(finite))
    comp = CompletedBaseSpace(g, pts, verts, radii[-1], dist, D, cauchy)
    if pts:
        comp.empirical_N = _empirical_N(comp, form, reference, deltas)
    comp.report = {
        "marked": [[p.real, p.imag] for p in pts],
        "marked_distance_max": [float(np.max(row[np.isfinite(row)])) for row in dist],
        "diameter": D,
        "ring_radius": radii[-1],
        "cauchy": [c["relative_differences"] for c in cauchy],
        "empirical_N": comp.empirical_N,
    }
    return comp


def _empirical_N(comp: CompletedBaseSpace, form: BaseForm, reference: BaseForm | None, deltas) -> float:
    """Smallest N with B_ref(s0, δ) ⊂ B_∞(s0, N δ^{1/N}) over the δ sweep."""
    dom = form.domain
    g = comp.graph
    p = comp.marked[0]
    d_inf = comp.point_distances[0, : g.n]
    if reference is None:
        d_ref = np.abs(dom.displacement(g.points, p))
    else:
        rg = MetricGraph(reference, g.neighbors, g.region)
        d_ref_full = rg.distances(rg.vertex_of(p))
        grid_ref = rg.to_grid(d_ref_full)
        d_ref = grid_ref[g.valid]
    ok = ~g.removed & np.isfinite(d_inf) & np.isfinite(d_ref)
    h = max(dom.spacing)
    if deltas is None:
        top = float(np.max(d_ref[ok]))
        deltas = np.geomspace(4 * h * np.sqrt(np.nanmax(reference.density) if reference is not None else 1.0),
                              0.5 * top, 6)
    N_all = 1.0
    for delta in deltas:
        inside = ok & (d_ref < delta)
        if not inside.any():
            continue
        need = float(np.max(d_inf[inside]))
        if delta >= 1:
            # N δ^{1/N} >= N >= need suffices for δ >= 1
            N = max(1.0, need)
        else:
            f = lambda N: N * delta ** (1.0 / N) - need
            N = 1.0 if f(1.0) >= 0 else optimize.brentq(f, 1.0, 1e6)
        N_all = max(N_all, N)
    return float(N_all)


# ---------------------------------------------------------- GH machinery
@dataclass(frozen=True, eq=False)
class MetricSample:
    """A finite metric space given by its distance matrix."""

    distances: np.ndarray
    labels: tuple = ()

    @property
    def size(self) -> int:
        return self.distances.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.max(self.distances))


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Pairs ``(i, j)`` relating points of sample A to points of sample B."""

    pairs: np.ndarray
    n_a: int
    n_b: int

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "pairs", p)

    @property
    def surjective(self) -> bool:
        return (np.unique(self.pairs[:, 0]).size == self.n_a and np.unique(self.pairs[:, 1]).size == self.n_b)


def gh_upper_bound(A: MetricSample, B: MetricSample, R: Correspondence, chunk: int = 2048) -> float:
    """½ · distortion of a surjective correspondence, an upper bound on d_GH.

    Raises
    ------
    ValueError
        R misses a point of A or of B.
    """
    if R.n_a != A.size or R.n_b != B.size or not R.surjective:
        raise ValueError("correspondence must cover every point of both samples")
    i, j = R.pairs[:, 0], R.pairs[:, 1]
    worst = 0.0
    for s in range(0, len(i), chunk):
        da = A.distances[np.ix_(i[s:s + chunk], i)]
        db = B.distances[np.ix_(j[s:s + chunk], j)]
        worst = max(worst, float(np.max(np.abs(da - db))))
    return 0.5 * worst


def _flat_fiber_diameter(spec: FibrationSpec) -> float:
    taus = np.unique(np.round(spec.tau_values[spec.base.inside], 14))
    return max(flat_torus_diameter(complex(t), spec.fiber_area) for t in taus)


def _base_metric_space(form: BaseForm, spec: FibrationSpec, neighbors: int, ring_radius: float):
    g = MetricGraph(form, neighbors)
    pts = [m.position for m in spec.marked]
    exps = [dict((complex(p), e) for p, e in form.singular).get(p, 0.0) for p in pts]
    h = max(spec.base.spacing)
    verts = _attach_points(g, pts, exps, ring_radius, 1.5 * h) if pts else []
    return g, verts


def gh_convergence_experiment(states: Sequence[ContinuityState], gke: GKESolution, spec: FibrationSpec,
                              deltas: Sequence[float] | None = None, neighbors: int = 16,
                              samples: int = 400) -> dict:
    """GH upper bounds between (X, ω(t)) and the completed base (Σ, d_∞).

    For each state two bounds are computed on a common base sample S (grid
    nodes on a coarse lattice plus the marked points):

    * direct: ½ distortion of the projection, using the product formula
      ``d_X = sqrt(d_b(t)² + D²/(1+t))`` with the exact supremum over fibre
      distances ``D ∈ [0, D_F]``;
    * three-term, per δ: Hausdorff distance of K'_δ in (Σ, d_∞), plus
      ½ distortion of the projection restricted to K'_δ, plus the Hausdorff
      distance of K_δ = f⁻¹(K'_δ) in X (the sup of d_b(t)(s, K'_δ)).

    K'_δ keeps the nodes with d_∞ distance >= δ from every marked point.  The
    reported value per t is the minimum of the direct bound and the best
    three-term composition.
    """
    base = spec.base
    h = max(base.spacing)
    ring = 2 * h
    g_inf, v_inf = _base_metric_space(gke.chi_inf, spec, neighbors, ring)
    active = np.nonzero(~g_inf.removed)[0]
    stride = max(1, int(np.ceil(active.size / samples)))
    S = np.concatenate([active[::stride], np.array(v_inf, dtype=np.int64)])
    d_inf_full = g_inf.distances(S)
    d_inf = d_inf_full[:, S]
    D_F = _flat_fiber_diameter(spec)
    if v_inf:
        point_d = g_inf.distances(v_inf, min_only=True)
    else:
        point_d = np.full(g_inf.n_vertices, np.inf)
    D_inf = float(np.max(d_inf[np.isfinite(d_inf)]))
    if deltas is None:
        if v_inf:
            # start above the attaching-edge resolution at the completion points
            m = g_inf.matrix.tocsr()
            tail = max(float(m[v].data.max()) for v in v_inf)
            lo = min(1.2 * tail, 0.25 * D_inf)
            deltas = list(np.geomspace(lo, max(lo, 0.4 * D_inf), 4))
        else:
            deltas = [0.0]
    # vertices of the completed base and the δ-truncations
    alive = np.concatenate([~g_inf.removed, np.ones(len(v_inf), dtype=bool)])
    gh1 = []
    truncations = []
    for delta in deltas:
        keep = alive & (point_d >= delta)
        if not keep.any():
            continue
        to_K = g_inf.distances(np.nonzero(keep)[0], min_only=True)
        haus = float(np.max(to_K[alive]))
        # discretization tolerance: longest edge crossing the δ-sphere
        m = g_inf.matrix.tocoo()
        crossing = (keep[m.row] != keep[m.col]) & alive[m.row] & alive[m.col]
        tol = float(np.max(m.data[crossing])) if crossing.any() else 0.0
        gh1.append({"delta": float(delta), "hausdorff": haus, "tolerance": tol,
                    "ok": bool(haus <= delta + tol)})
        truncations.append((float(delta), keep, haus))
    rows = []
    for st in states:
        t = st.t
        g_t, v_t = _base_metric_space(st.omega_base, spec, neighbors, ring)
        if not np.array_equal(g_t.removed, g_inf.removed):
            raise RuntimeError("base graphs of the state and the limit differ in vertex sets")
        d_t_full = g_t.distances(S)
        d_t = d_t_full[:, S]
        fib = D_F / np.sqrt(1.0 + t)
        dist = np.maximum(np.abs(d_t - d_inf), np.abs(np.sqrt(d_t ** 2 + fib ** 2) - d_inf))
        direct = 0.5 * float(np.max(dist))
        best = np.inf
        terms = []
        for delta, keep, haus in truncations:
            inK = keep[S]
            if not inK.any():
                continue
            sub = dist[np.ix_(inK, inK)]
            t2 = 0.5 * float(np.max(sub))
            to_K_t = g_t.distances(np.nonzero(keep)[0], min_only=True)
            t1 = float(np.max(to_K_t[alive]))
            total = t1 + t2 + haus
            terms.append({"delta": delta, "fiber_side": t1, "middle": t2, "base_side": haus, "total": total})
            best = min(best, total)
        rows.append({"t": t, "direct": direct, "three_term": best, "value": min(direct, best),
                     "terms": terms, "fiber_diameter": fib})
    series = [r["value"] for r in rows]
    marked_pos = [m.position for m in spec.marked]
    coords = np.array([g_inf.points[v] if v < g_inf.n else marked_pos[v - g_inf.n] for v in S])
    return {"rows": rows, "series": series, "gh1": gh1, "D_inf": D_inf, "samples": int(S.size),
            "fiber_diameter_flat": D_F, "sample_points": coords, "sample_distances": d_inf}


# ----------------------------------------------------------- Bishop–Gromov
def sinh3_integral(r) -> np.ndarray:
    """``∫_0^r sinh³ v dv = cosh³r/3 - cosh r + 2/3``."""
    r = np.asarray(r, dtype=float)
    c = np.cosh(r)
    small = r < 1e-2
    series = r ** 4 / 4 + r ** 6 / 12
    return np.where(small, series, c ** 3 / 3 - c + 2.0 / 3.0)


def flat_torus_ball_area(tau: complex, area: float, radii, resolution: int = 256) -> np.ndarray:
    """Area of metric balls in the flat torus C/(Z + tau Z) of total area ``area``.

    Distances from the origin to the nodes of a fine lattice grid are the
    lattice-reduced norms; the ball area is the empirical CDF times ``area``.
    """
    a = np.arange(resolution) / resolution
    A, B = np.meshgrid(a, a, indexing="ij")
    z = A + B * tau
    cell = abs(np.imag(tau))
    best = np.full(z.shape, np.inf)
    for m in range(-2, 3):
        for n in range(-2, 3):
            best = np.minimum(best, np.abs(z - m - n * tau))
    d = np.sort((best * np.sqrt(area / cell)).ravel())
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    return area * np.searchsorted(d, radii, side="left") / d.size


def bishop_gromov_ratio(state: ContinuityState, spec: FibrationSpec, x: complex, r1: float, r2: float,
                        neighbors: int = 16, graph: MetricGraph | None = None,
                        fiber_resolution: int = 256) -> dict:
    """Measured total-space volume ratio of balls against the sinh³ model.

    The reduced metric is a product, so ``Vol B((x, e), r)`` integrates the
    base density times the area of the fibre ball of radius
    ``sqrt(r² - d_b(x, s)²)`` in the fibre metric ``ω_SF/(1+t)``.

    Returns ``measured``, ``model`` and ``truncated`` (the larger ball reaches
    the disk boundary; the comparison should then be skipped).
    """
    if not 0 < r1 <= r2:
        raise ValueError("need 0 < r1 <= r2")
    base = spec.base
    om = state.omega_base
    g = graph if graph is not None else MetricGraph(om, neighbors)
    dist = g.to_grid(g.distances(g.vertex_of(x)))
    t = state.t
    if not spec.tau_constant:
        raise ValueError("the product volume formula needs a constant modulus")
    tau = complex(spec.tau[0])
    w = base.cell_area * (om.regular_part * cell_averaged_factor(base, om.singular) if om.singular else om.density)
    w = np.where(np.isfinite(w) & np.isfinite(dist), w, 0.0)
    fib_scale = 1.0 / (1.0 + t)

    def volume(r):
        rho = np.sqrt(np.clip(r ** 2 - np.where(np.isfinite(dist), dist, np.inf) ** 2, 0.0, None))
        inside = rho > 0
        areas = np.zeros(base.shape)
        areas[inside] = fib_scale * flat_torus_ball_area(tau, spec.fiber_area, np.sqrt(1.0 + t) * rho[inside],
                                                         fiber_resolution)
        return float(np.sum(w * areas))

    truncated = False
    if not base.periodic:
        edge = base.inside & (np.abs(base.s - base.center) > base.radius - 2 * max(base.spacing))
        truncated = bool(np.any(dist[edge] < r2))
    v1, v2 = volume(r1), volume(r2)
    model = float(sinh3_integral(r2) / sinh3_integral(r1))
    return {"measured": v2 / v1 if v1 > 0 else np.inf, "model": model, "truncated": truncated,
            "volumes": (v1, v2)}
