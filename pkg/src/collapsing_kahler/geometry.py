"""Grids, fields and (1,1)-forms on model base curves, and the discrete i∂∂̄ calculus.

Conventions
-----------
A (1,1)-form on the base is stored as a density ``rho`` against ``dx ∧ dy``;
``i∂∂̄f`` has density ``¼Δf`` and the Riemannian length element of a positive
form is ``sqrt(rho)·|ds|``.  Arrays are indexed ``values[i, j]`` with ``i``
along ``x`` and ``j`` along ``y``.  Masked (excluded or unknown) samples are
stored as NaN and propagate through every operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate as spint

__all__ = [
    "BaseDomain",
    "ScalarField",
    "BaseForm",
    "HermitianForm2D",
    "GridLaplacian",
    "ddbar",
    "ricci_base",
    "trace",
    "integrate",
    "eigen_min_2d",
    "singular_factor",
    "cell_average_power",
]

_MIN_RESOLUTION = 8


def _as_pair(value) -> tuple:
    if np.ndim(value) == 0:
        return (value, value)
    a, b = value
    return (a, b)


@dataclass(frozen=True)
class BaseDomain:
    """A uniformly sampled base domain: a periodic torus or a Dirichlet disk.

    Parameters
    ----------
    kind : {"torus", "disk"}
    resolution : tuple of int
        Torus: number of nodes per axis.  Disk: number of intervals across the
        bounding square per axis (nodes = resolution + 1).
    periods : tuple of float
        Torus side lengths (the torus is the rectangle ``[0,p1) × [0,p2)``).
    center, radius : complex, float
        Disk geometry.
    boundary_value : float or callable
        Dirichlet datum on the disk boundary; a callable receives complex points.
    marked : tuple of (complex, float)
        Marked points with their exclusion radii.
    """

    kind: str
    resolution: tuple[int, int]
    periods: tuple[float, float] = (1.0, 1.0)
    center: complex = 0j
    radius: float = 1.0
    boundary_value: float | Callable = 0.0
    marked: tuple[tuple[complex, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("torus", "disk"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        res = tuple(int(r) for r in _as_pair(self.resolution))
        object.__setattr__(self, "resolution", res)
        if min(res) < _MIN_RESOLUTION:
            raise ValueError(f"resolution must be >= {_MIN_RESOLUTION} per axis, got {res}")
        if self.kind == "disk" and res[0] != res[1]:
            raise ValueError("disk domains use equal resolution on both axes")
        object.__setattr__(self, "periods", tuple(float(p) for p in _as_pair(self.periods)))
        object.__setattr__(self, "center", complex(self.center))
        marked = tuple((complex(p), float(r)) for p, r in self.marked)
        object.__setattr__(self, "marked", marked)
        h = max(self.spacing)
        for k, (p, _) in enumerate(marked):
            if self.kind == "disk" and abs(p - self.center) >= self.radius - 4 * h:
                raise ValueError(f"marked point {p} is not strictly inside the disk")
            for q, _ in marked[k + 1:]:
                if self.separation(p, q) < 4 * h:
                    raise ValueError(f"marked points {p} and {q} are closer than 4 grid spacings")

    # ------------------------------------------------------------------ builders
    @classmethod
    def torus(cls, resolution=64, periods=(1.0, 1.0), marked=()) -> "BaseDomain":
        return cls("torus", _as_pair(resolution), periods=_as_pair(periods), marked=tuple(marked))

    @classmethod
    def disk(cls, resolution=128, radius=1.0, center=0j, boundary_value=0.0, marked=()) -> "BaseDomain":
        return cls("disk", _as_pair(resolution), radius=float(radius), center=center,
                   boundary_value=boundary_value, marked=tuple(marked))

    def with_marked(self, marked) -> "BaseDomain":
        return BaseDomain(self.kind, self.resolution, self.periods, self.center, self.radius,
                          self.boundary_value, tuple(marked))

    def refined(self, factor: int = 2) -> "BaseDomain":
        res = tuple(factor * r for r in self.resolution)
        return BaseDomain(self.kind, res, self.periods, self.center, self.radius,
                          self.boundary_value, self.marked)

    # ---------------------------------------------------------------- geometry
    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @cached_property
    def shape(self) -> tuple[int, int]:
        if self.periodic:
            return self.resolution
        return (self.resolution[0] + 1, self.resolution[1] + 1)

    @cached_property
    def spacing(self) -> tuple[float, float]:
        if self.periodic:
            return (self.periods[0] / self.resolution[0], self.periods[1] / self.resolution[1])
        return (2 * self.radius / self.resolution[0], 2 * self.radius / self.resolution[1])

    @cached_property
    def x(self) -> np.ndarray:
        if self.periodic:
            return np.arange(self.shape[0]) * self.spacing[0]
        return self.center.real - self.radius + np.arange(self.shape[0]) * self.spacing[0]

    @cached_property
    def y(self) -> np.ndarray:
        if self.periodic:
            return np.arange(self.shape[1]) * self.spacing[1]
        return self.center.imag - self.radius + np.arange(self.shape[1]) * self.spacing[1]

    @cached_property
    def s(self) -> np.ndarray:
        """Complex coordinate of every node, shape ``self.shape``."""
        return self.x[:, None] + 1j * self.y[None, :]

    @cached_property
    def inside(self) -> np.ndarray:
        """Nodes carrying unknowns: every node on the torus, interior nodes on the disk."""
        if self.periodic:
            return np.ones(self.shape, dtype=bool)
        return np.abs(self.s - self.center) < self.radius - 0.1 * self.spacing[0]

    def displacement(self, z, p) -> np.ndarray:
        """``z - p`` reduced to the minimum image on the torus."""
        d = np.asarray(z) - p
        if self.periodic:
            p1, p2 = self.periods
            dx = d.real - p1 * np.round(d.real / p1)
            dy = d.imag - p2 * np.round(d.imag / p2)
            d = dx + 1j * dy
        return d

    def separation(self, p, q) -> float:
        return float(np.abs(self.displacement(p, q)))

    def boundary_datum(self, z) -> np.ndarray:
        g = self.boundary_value
        if callable(g):
            return np.asarray(g(z), dtype=float)
        return np.full(np.shape(z), float(g))

    @cached_property
    def cell_area(self) -> np.ndarray:
        """Quadrature weight per node: cell area, cut by the circle on the disk.

        Slivers of the disk lying in cells of masked nodes are credited to the
        nearest inside neighbour, so the weights sum to the disk area.
        """
        hx, hy = self.spacing
        w = np.full(self.shape, hx * hy)
        if self.periodic:
            return w
        inside = self.inside
        w[~inside] = 0.0
        r = np.abs(self.s - self.center)
        ring = r > self.radius - 0.75 * (hx + hy)
        ring &= r < self.radius + 0.75 * (hx + hy)
        q = (np.arange(16) + 0.5) / 16 - 0.5
        sub = q[:, None] * hx + 1j * q[None, :] * hy
        n1, n2 = self.shape
        for i, j in zip(*np.nonzero(ring & inside)):
            w[i, j] = hx * hy * np.mean(np.abs(self.s[i, j] + sub - self.center) < self.radius)
        for i, j in zip(*np.nonzero(ring & ~inside)):
            frac = hx * hy * np.mean(np.abs(self.s[i, j] + sub - self.center) < self.radius)
            if frac == 0:
                continue
            best, target = np.inf, None
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    a, b = i + di, j + dj
                    if 0 <= a < n1 and 0 <= b < n2 and inside[a, b]:
                        d = abs(self.s[a, b] - self.s[i, j])
                        if d < best:
                            best, target = d, (a, b)
            if target is not None:
                w[target] += frac
        return w

    def distance_to_marked(self) -> np.ndarray:
        """Distance from every node to the nearest marked point (inf if none)."""
        d = np.full(self.shape, np.inf)
        for p, _ in self.marked:
            d = np.minimum(d, np.abs(self.displacement(self.s, p)))
        return d

    def compact(self, exclusion: float | None = None, radius_fraction: float | None = None,
                boundary_margin: int = 2) -> np.ndarray:
        """Boolean compact: unknown nodes away from marked points and the boundary.

        Parameters
        ----------
        exclusion : float, optional
            Overrides the per-point exclusion radii.
        radius_fraction : float, optional
            On the disk, keep only ``|s - center| <= radius_fraction · R``.
        boundary_margin : int
            On the disk, drop nodes within this many spacings of the circle.
        """
        keep = self.inside.copy()
        for p, r in self.marked:
            rad = r if exclusion is None else exclusion
            keep &= np.abs(self.displacement(self.s, p)) > rad
        if not self.periodic:
            dist = np.abs(self.s - self.center)
            keep &= dist < self.radius - boundary_margin * self.spacing[0]
            if radius_fraction is not None:
                keep &= dist <= radius_fraction * self.radius
        return keep

    def descriptor(self) -> dict:
        """JSON-serializable description (callable boundary data become a tag)."""
        g = self.boundary_value
        return {
            "kind": self.kind,
            "resolution": list(self.resolution),
            "periods": list(self.periods),
            "center": [self.center.real, self.center.imag],
            "radius": self.radius,
            "boundary_value": g if not callable(g) else "callable",
            "marked": [[p.real, p.imag, r] for p, r in self.marked],
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "BaseDomain":
        g = d.get("boundary_value", 0.0)
        if g == "callable":
            raise ValueError("callable boundary data cannot be restored from a descriptor")
        return cls(d["kind"], tuple(d["resolution"]), tuple(d["periods"]),
                   complex(*d["center"]), d["radius"], g,
                   tuple((complex(a, b), r) for a, b, r in d["marked"]))

    @cached_property
    def laplacian(self) -> "GridLaplacian":
        return GridLaplacian(self)


# ---------------------------------------------------------------------- fields
@dataclass(frozen=True, eq=False)
class ScalarField:
    """A real function sampled on the nodes of a domain; NaN marks masked nodes.

    ``dirichlet`` flags a field that satisfies the disk's boundary datum, so i∂∂̄
    may use the boundary-fitted stencil next to the circle.
    """

    domain: BaseDomain
    values: np.ndarray
    dirichlet: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.domain.shape:
            raise ValueError(f"field shape {v.shape} does not match domain {self.domain.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isfinite(self.values)

    def __add__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.domain, self.values + o)

    def __sub__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.domain, self.values - o)

    def __mul__(self, c):
        return ScalarField(self.domain, self.values * c)

    __rmul__ = __mul__

    def sup(self, where: np.ndarray | None = None) -> float:
        v = self.values if where is None else self.values[where]
        v = v[np.isfinite(v)]
        return float(np.max(np.abs(v))) if v.size else 0.0


@dataclass(frozen=True, eq=False)
class BaseForm:
    """A real (1,1)-form on the base, stored as a density against dx∧dy.

    A form may carry an explicit singular factor ``Π|s - p|^(-2e)`` over the
    ``(p, e)`` pairs in ``singular``; then ``regular`` holds the smooth part and
    ``density = regular · singular factor``.
    """

    domain: BaseDomain
    density: np.ndarray
    positive: bool = False
    singular: tuple[tuple[complex, float], ...] = ()
    regular: np.ndarray | None = None

    def __post_init__(self):
        rho = np.asarray(self.density, dtype=float).copy()
        if rho.shape != self.domain.shape:
            raise ValueError(f"density shape {rho.shape} does not match domain {self.domain.shape}")
        rho.setflags(write=False)
        object.__setattr__(self, "density", rho)
        if self.regular is not None:
            reg = np.asarray(self.regular, dtype=float).copy()
            reg.setflags(write=False)
            object.__setattr__(self, "regular", reg)
        elif self.singular:
            raise ValueError("a form with a singular factor needs its regular part")
        if self.positive:
            finite = np.isfinite(rho)
            if np.any(rho[finite] <= 0):
                raise ValueError("form flagged positive has non-positive density")

    @classmethod
    def from_regular(cls, domain: BaseDomain, regular: np.ndarray, singular=(), positive=False):
        singular = tuple((complex(p), float(e)) for p, e in singular)
        rho = np.asarray(regular, dtype=float) * singular_factor(domain, singular)
        return cls(domain, rho, positive=positive, singular=singular, regular=regular)

    @property
    def mask(self) -> np.ndarray:
        return ~np.isfinite(self.density)

    @property
    def regular_part(self) -> np.ndarray:
        return self.density if self.regular is None else self.regular

    def __add__(self, other):
        o = other.density if isinstance(other, BaseForm) else other
        return BaseForm(self.domain, self.density + o)

    def __sub__(self, other):
        o = other.density if isinstance(other, BaseForm) else other
        return BaseForm(self.domain, self.density - o)

    def __mul__(self, c):
        c = float(c)
        reg = None if self.regular is None else self.regular * c
        return BaseForm(self.domain, self.density * c, positive=self.positive and c > 0,
                        singular=self.singular, regular=reg)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class HermitianForm2D:
    """A (1,1)-form in coordinates (s, w) on a 4-real-dimensional grid.

    Stored by its Hermitian matrix entries ``[[a, b], [conj(b), d]]`` per node,
    with ``a = g_{s s̄}``, ``d = g_{w w̄}`` real and ``b = g_{s w̄}`` complex.
    Hermitian symmetry is therefore exact by construction.
    """

    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    positive: bool = False

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        d = np.asarray(self.d, dtype=float)
        b = np.asarray(self.b, dtype=complex)
        a, b, d = np.broadcast_arrays(a, b, d)
        object.__setattr__(self, "a", np.array(a))
        object.__setattr__(self, "b", np.array(b))
        object.__setattr__(self, "d", np.array(d))
        if self.positive and not np.all(self.eigenvalues()[0] > 0):
            raise ValueError("form flagged positive has a non-positive eigenvalue")

    @property
    def det(self) -> np.ndarray:
        return self.a * self.d - np.abs(self.b) ** 2

    def eigenvalues(self) -> tuple[np.ndarray, np.ndarray]:
        half_tr = 0.5 * (self.a + self.d)
        disc = np.sqrt(0.25 * (self.a - self.d) ** 2 + np.abs(self.b) ** 2)
        return half_tr - disc, half_tr + disc

    def __add__(self, o):
        return HermitianForm2D(self.a + o.a, self.b + o.b, self.d + o.d)

    def __mul__(self, c):
        return HermitianForm2D(self.a * c, self.b * c, self.d * c)

    __rmul__ = __mul__


# ------------------------------------------------------------ singular weights
def singular_factor(domain: BaseDomain, singular) -> np.ndarray:
    """``Π |s - p|^(-2e)`` at every node (inf at a node sitting on ``p``)."""
    out = np.ones(domain.shape)
    with np.errstate(divide="ignore"):
        for p, e in singular:
            out = out * np.abs(domain.displacement(domain.s, p)) ** (-2.0 * e)
    return out


def _corner_integral(a: float, b: float, e: float) -> float:
    """∫_0^a∫_0^b (x²+y²)^(-e) dy dx for a, b >= 0, via polar coordinates."""
    if a <= 0 or b <= 0:
        return 0.0
    p = 2.0 - 2.0 * e
    split = np.arctan2(b, a)
    f1 = lambda th: (a / np.cos(th)) ** p / p
    f2 = lambda th: (b / np.sin(th)) ** p / p
    i1 = spint.quad(f1, 0.0, split, epsabs=0, epsrel=1e-13, limit=200)[0]
    i2 = spint.quad(f2, split, 0.5 * np.pi, epsabs=0, epsrel=1e-13, limit=200)[0]
    return i1 + i2


def _quadrant(x: float, y: float, e: float) -> float:
    return np.sign(x) * np.sign(y) * _corner_integral(abs(x), abs(y), e)


def cell_average_power(dx: float, dy: float, hx: float, hy: float, e: float) -> float:
    """Mean of ``|z|^(-2e)`` over the cell of size hx × hy centred at ``dx + i dy``.

    Exact up to quadrature round-off, including cells containing the origin.
    """
    x0, x1 = dx - hx / 2, dx + hx / 2
    y0, y1 = dy - hy / 2, dy + hy / 2
    total = (_quadrant(x1, y1, e) - _quadrant(x0, y1, e)
             - _quadrant(x1, y0, e) + _quadrant(x0, y0, e))
    return total / (hx * hy)


def cell_averaged_factor(domain: BaseDomain, singular, reach: int = 2) -> np.ndarray:
    """Singular factor with cell averages replacing point values near each point.

    Within ``reach`` cells (Chebyshev distance) of a marked point the factor
    ``|s - p|^(-2e)`` is averaged exactly over the node's cell; the remaining
    factors are smooth there and are kept pointwise.
    """
    hx, hy = domain.spacing
    out = singular_factor(domain, singular)
    for k, (p, e) in enumerate(singular):
        rest = singular_factor(domain, [q for j, q in enumerate(singular) if j != k])
        d = domain.displacement(domain.s, p)
        near = (np.abs(d.real) <= (reach + 0.5) * hx) & (np.abs(d.imag) <= (reach + 0.5) * hy)
        for i, j in zip(*np.nonzero(near)):
            avg = cell_average_power(d[i, j].real, d[i, j].imag, hx, hy, e)
            out[i, j] = rest[i, j] * avg
    return out


# ---------------------------------------------------------------- the operator
class GridLaplacian:
    """The discrete i∂∂̄ (= ¼Δ) acting on the unknown nodes of a domain.

    On the torus it is spectral.  On the disk it is the second-order
    Shortley–Weller stencil, with the boundary datum entering through an
    affine offset, so that ``apply(u) = L u_in + offset`` on interior nodes.
    """

    def __init__(self, domain: BaseDomain):
        self.domain = domain
        self.unknown = domain.inside
        if domain.periodic:
            n1, n2 = domain.shape
            hx, hy = domain.spacing
            kx = 2 * np.pi * np.fft.fftfreq(n1, d=hx)
            ky = 2 * np.pi * np.fft.rfftfreq(n2, d=hy)
            self.symbol = -0.25 * (kx[:, None] ** 2 + ky[None, :] ** 2)
        else:
            self._build_disk()

    # ------------------------------------------------------------- disk matrix
    def _build_disk(self):
        dom = self.domain
        hx, hy = dom.spacing
        inside = self.unknown
        index = -np.ones(dom.shape, dtype=np.int64)
        index[inside] = np.arange(int(inside.sum()))
        self.index = index
        n = int(inside.sum())
        rows, cols, vals = [], [], []
        offset = np.zeros(n)
        c, R = dom.center, dom.radius
        I, J = np.nonzero(inside)
        for axis, h in ((0, hx), (1, hy)):
            arms = []
            for sign in (1, -1):
                di, dj = (sign, 0) if axis == 0 else (0, sign)
                ni, nj = I + di, J + dj
                nb_in = inside[ni, nj]
                theta = np.ones(n)
                # circle crossing along the axis for neighbours outside
                z = dom.s[I, J]
                u = (z - c)
                direction = sign * (1.0 if axis == 0 else 1j)
                # solve |u + t·direction| = R for t > 0
                ud = (u * np.conj(direction)).real
                disc = ud ** 2 - (np.abs(u) ** 2 - R ** 2)
                tcross = -ud + np.sqrt(np.maximum(disc, 0.0))
                theta_out = np.maximum(tcross / h, 1e-3)
                theta = np.where(nb_in, 1.0, theta_out)
                arms.append((theta, ni, nj, nb_in, z + theta * h * direction))
            (tp, ip, jp, inp, zp), (tm, im, jm, inm, zm) = arms
            cp = 2.0 / (h * h * tp * (tp + tm))
            cm = 2.0 / (h * h * tm * (tp + tm))
            cc = -2.0 / (h * h * tp * tm)
            k = np.arange(n)
            rows.append(k), cols.append(k), vals.append(0.25 * cc)
            for coef, ni, nj, nb_in, zb in ((cp, ip, jp, inp, zp), (cm, im, jm, inm, zm)):
                rows.append(k[nb_in]), cols.append(index[ni[nb_in], nj[nb_in]])
                vals.append(0.25 * coef[nb_in])
                out = ~nb_in
                if np.any(out):
                    offset[out] += 0.25 * coef[out] * dom.boundary_datum(zb[out])
        self.matrix = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        self.offset = offset
        self._poisson_lu = None

    # ------------------------------------------------------------------- apply
    def gather(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.unknown]

    def scatter(self, vec: np.ndarray, fill=np.nan) -> np.ndarray:
        out = np.full(self.domain.shape, fill, dtype=float)
        out[self.unknown] = vec
        return out

    def apply_vec(self, vec: np.ndarray, homogeneous: bool = False) -> np.ndarray:
        """i∂∂̄ of the unknown vector (torus: full grid flattened)."""
        if self.domain.periodic:
            u = vec.reshape(self.domain.shape)
            return np.fft.irfft2(self.symbol * np.fft.rfft2(u), s=u.shape).ravel()
        out = self.matrix @ vec
        return out if homogeneous else out + self.offset

    def apply(self, values: np.ndarray) -> np.ndarray:
        """i∂∂̄ of a field satisfying the domain's boundary datum, full-grid array."""
        vec = self.gather(values)
        return self.scatter(self.apply_vec(vec))

    # ------------------------------------------------------------------ solves
    def solve_shifted(self, a: np.ndarray, c: float, rhs: np.ndarray,
                      rtol: float = 1e-13) -> np.ndarray:
        """Solve ``(diag(a) - c·L) x = rhs`` with homogeneous boundary data.

        ``a > 0`` and ``c > 0`` make the operator symmetric positive definite.
        The disk uses a sparse direct factorization; the torus uses conjugate
        gradients preconditioned by the constant-coefficient FFT inverse.
        """
        a = np.asarray(a, dtype=float).ravel()
        if self.domain.periodic:
            shape = self.domain.shape
            symbol = np.mean(a) - c * self.symbol

            def matvec(v):
                return a * v - c * self.apply_vec(v)

            def precond(v):
                V = np.fft.rfft2(v.reshape(shape))
                return np.fft.irfft2(V / symbol, s=shape).ravel()

            n = a.size
            A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
            M = spla.LinearOperator((n, n), matvec=precond, dtype=float)
            x, info = spla.cg(A, rhs, rtol=rtol, atol=0.0, M=M, maxiter=2000)
            if info > 0:
                x, info = spla.cg(A, rhs, x0=x, rtol=rtol * 10, atol=0.0, M=M, maxiter=4000)
            return x
        A = (sp.diags(a) - c * self.matrix).tocsc()
        return spla.spsolve(A, rhs)

    def solve_poisson(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``L x (+ offset) = rhs``; on the torus the mean of x is zero.

        ``rhs`` is given on the unknowns; on the torus its mean is projected out.
        Returns the full-grid array (NaN outside the disk).
        """
        if self.domain.periodic:
            shape = self.domain.shape
            R = np.fft.rfft2(np.asarray(rhs, dtype=float).reshape(shape))
            sym = self.symbol.copy()
            sym[0, 0] = 1.0
            X = R / sym
            X[0, 0] = 0.0
            return np.fft.irfft2(X, s=shape)
        if self._poisson_lu is None:
            self._poisson_lu = spla.factorized(self.matrix.tocsc())
        return self.scatter(self._poisson_lu(np.asarray(rhs, dtype=float) - self.offset))


# -------------------------------------------------------------- operations
def _fd_ddbar(u: np.ndarray, hx: float, hy: float, periodic: bool) -> np.ndarray:
    if periodic:
        lap = ((np.roll(u, -1, 0) + np.roll(u, 1, 0) - 2 * u) / hx ** 2
               + (np.roll(u, -1, 1) + np.roll(u, 1, 1) - 2 * u) / hy ** 2)
        return 0.25 * lap
    p = np.pad(u, 1, constant_values=np.nan)
    lap = ((p[2:, 1:-1] + p[:-2, 1:-1] - 2 * u) / hx ** 2
           + (p[1:-1, 2:] + p[1:-1, :-2] - 2 * u) / hy ** 2)
    return 0.25 * lap


def ddbar(f: ScalarField) -> BaseForm:
    """Density of i∂∂̄f = ¼Δf.

    Spectral on a fully defined torus field; otherwise second-order centred
    differences.  Nodes whose stencil touches a masked node are masked, except
    that a ``dirichlet`` disk field uses the boundary-fitted stencil next to the
    circle.
    """
    dom = f.domain
    v = f.values
    hx, hy = dom.spacing
    if dom.periodic:
        if np.all(np.isfinite(v)):
            return BaseForm(dom, dom.laplacian.apply(v))
        return BaseForm(dom, _fd_ddbar(v, hx, hy, True))
    out = _fd_ddbar(v, hx, hy, False)
    if f.dirichlet:
        lap = dom.laplacian
        vin = v[lap.unknown]
        if np.all(np.isfinite(vin)):
            out = lap.apply(v)
    return BaseForm(dom, out)


def ricci_base(omega: BaseForm) -> BaseForm:
    """Density of Ric(ω) = -i∂∂̄ log ρ.

    An explicit singular factor ``Π|s-p|^(-2e)`` is pluriharmonic off the
    points and is removed analytically; the point nodes themselves are masked.
    """
    reg = omega.regular_part
    finite = np.isfinite(reg)
    if np.any(reg[finite] <= 0):
        raise ValueError("ricci_base needs a positive density")
    with np.errstate(divide="ignore", invalid="ignore"):
        logr = np.where(finite, np.log(np.where(finite, reg, 1.0)), np.nan)
    ric = -ddbar(ScalarField(omega.domain, logr)).density
    if omega.singular:
        on_point = ~np.isfinite(singular_factor(omega.domain, omega.singular))
        ric = np.where(on_point, np.nan, ric)
    return BaseForm(omega.domain, ric)


def trace(alpha: BaseForm, omega: BaseForm) -> ScalarField:
    """Pointwise ratio α/ω of densities; zero or masked ω gives a masked node."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = alpha.density / omega.density
    r = np.where(np.isfinite(r) & (omega.density != 0), r, np.nan)
    return ScalarField(alpha.domain, r)


def integrate(alpha: BaseForm, where: np.ndarray | None = None) -> float:
    """Quadrature of a form over the domain (or a boolean sub-region).

    Forms carrying a singular factor are integrated with cell-averaged weights
    of that factor, which is exact for the factor at second order.
    """
    dom = alpha.domain
    w = dom.cell_area
    if alpha.singular:
        vals = alpha.regular * cell_averaged_factor(dom, alpha.singular)
    else:
        vals = alpha.density
    keep = np.isfinite(vals) & (w > 0)
    if where is not None:
        keep &= where
    return float(np.sum(vals[keep] * w[keep]))


def eigen_min_2d(A: HermitianForm2D, B: HermitianForm2D) -> np.ndarray:
    """Smallest generalized eigenvalue of A relative to B per node.

    Solves ``det(A - λB) = 0``, a real quadratic in λ since both are Hermitian.
    """
    if not np.all(B.eigenvalues()[0] > 0):
        raise ValueError("eigen_min_2d needs B positive definite")
    qa = B.det
    qb = -(A.a * B.d + A.d * B.a - 2 * np.real(A.b * np.conj(B.b)))
    qc = A.det
    disc = np.sqrt(np.maximum(qb ** 2 - 4 * qa * qc, 0.0))
    return (-qb - disc) / (2 * qa)
