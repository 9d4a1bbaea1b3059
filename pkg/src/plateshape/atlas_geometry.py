"""Domains described by atlases of local graphs.

A chart is a rectangle ``(a1, b1) x (a2, b2)`` in local coordinates ``z``,
placed in the plane by ``x = offset + R(angle) z``.  Boundary charts carry a
graph function ``g`` sampled on a uniform grid of ``(a1, b1)``; inside the
chart the domain is ``{z2 < g(z1)}``.  Interior charts lie inside the domain.
Boundary charts come first, so charts ``0 .. s_prime-1`` carry graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from .errors import (DegenerateMapError, IncompatibleAtlasError, InvalidArgumentError,
                     InvalidDomainError, OutOfRangeError)
from .mesh import Mesh, generate_disk, generate_rectangle, map_mesh, validate_mesh
from .shape_calculus import ParametricMap, bbox_grid, delta_measure

DEFAULT_GRID = 256
BUMP_START = 0.76  # bump rises from 0 at distance BUMP_START*rho to 1 at rho


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Chart:
    a1: float
    b1: float
    a2: float
    b2: float
    angle: float = 0.0
    offset: tuple = (0.0, 0.0)

    @property
    def rotation(self) -> np.ndarray:
        return _rot(self.angle)

    @property
    def up(self) -> np.ndarray:
        """Global direction of the local vertical axis (the chart's xi)."""
        return self.rotation[:, 1].copy()

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(x) - np.asarray(self.offset)) @ self.rotation

    def to_global(self, z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(z) @ self.rotation.T + np.asarray(self.offset)

    def local_distance(self, z: np.ndarray) -> np.ndarray:
        """Distance from local points inside the rectangle to its edges (negative outside)."""
        return np.minimum.reduce([z[:, 0] - self.a1, self.b1 - z[:, 0], z[:, 1] - self.a2, self.b2 - z[:, 1]])

    def shrunk(self, d: float) -> "Chart":
        return Chart(self.a1 + d, self.b1 - d, self.a2 + d, self.b2 - d, self.angle, self.offset)

    def corners(self) -> np.ndarray:
        return self.to_global(np.array([[self.a1, self.a2], [self.b1, self.a2], [self.b1, self.b2],
                                        [self.a1, self.b2]]))


@dataclass(frozen=True)
class Atlas:
    rho: float
    charts: tuple
    s_prime: int

    def __post_init__(self):
        object.__setattr__(self, "charts", tuple(self.charts))
        if not self.rho > 0:
            raise InvalidArgumentError("rho must be positive")
        if not (0 <= self.s_prime <= len(self.charts)) or not self.charts:
            raise InvalidArgumentError("need 0 <= s_prime <= s and s >= 1")
        for j, c in enumerate(self.charts):
            if not (c.b1 > c.a1 and c.b2 > c.a2):
                raise InvalidArgumentError(f"chart {j} has an empty rectangle")
            if not self.rho < 0.5 * min(c.b1 - c.a1, c.b2 - c.a2):
                raise InvalidArgumentError(f"rho={self.rho} not below half the smallest side of chart {j}")

    @property
    def s(self) -> int:
        return len(self.charts)

    def halved(self) -> "Atlas":
        """(rho/2, s, s', {(V_j)_{rho/2}}, {r_j})."""
        return Atlas(self.rho / 2, tuple(c.shrunk(self.rho / 2) for c in self.charts), self.s_prime)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        pts = np.vstack([c.corners() for c in self.charts])
        return pts.min(axis=0), pts.max(axis=0)


@dataclass(frozen=True, eq=False)
class ChartGraph:
    """Graph samples g(z1) on a uniform grid, with a Lipschitz bound M (omega(r) = r)."""

    z1: np.ndarray
    g: np.ndarray
    M: float

    @property
    def spacing(self) -> float:
        return float(self.z1[1] - self.z1[0]) if len(self.z1) > 1 else 0.0

    def __call__(self, z1):
        return np.interp(z1, self.z1, self.g)

    def lipschitz_quotient(self) -> float:
        return float(np.max(np.abs(np.diff(self.g)) / np.diff(self.z1))) if len(self.z1) > 1 else 0.0


@dataclass(frozen=True, eq=False)
class AtlasDomain:
    atlas: Atlas
    graphs: tuple  # one ChartGraph per boundary chart
    center: tuple | None = None  # star centre, used for meshing

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if len(self.graphs) != self.atlas.s_prime:
            raise InvalidDomainError(f"{len(self.graphs)} graphs for s_prime={self.atlas.s_prime}")
        rho = self.atlas.rho
        for j, (c, gr) in enumerate(zip(self.atlas.charts, self.graphs)):
            if gr.z1.min() < c.a1 - 1e-12 or gr.z1.max() > c.b1 + 1e-12:
                raise InvalidDomainError(f"graph {j} sampled outside its chart")
            if np.any(gr.g < c.a2 + rho - 1e-12) or np.any(gr.g > c.b2 - rho + 1e-12):
                raise InvalidDomainError(f"graph {j} leaves [a2 + rho, b2 - rho]")
            if gr.lipschitz_quotient() > gr.M * (1 + 1e-9) + 1e-12:
                raise InvalidDomainError(f"graph {j} violates its Lipschitz bound M={gr.M}")

    @property
    def grid_resolution(self) -> float:
        return max(gr.spacing for gr in self.graphs) if self.graphs else 0.0

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = np.zeros(len(x), dtype=bool)
        for j, c in enumerate(self.atlas.charts):
            z = c.to_local(x)
            in_v = c.local_distance(z) > 0
            if j < self.atlas.s_prime:
                in_v &= z[:, 1] < self.graphs[j](z[:, 0])
            inside |= in_v
        return inside

    def boundary_points(self, atlas: Atlas | None = None, refine: int = 1) -> np.ndarray:
        """Graph samples mapped to the plane, optionally limited to a (sub-)atlas's ranges."""
        atlas = atlas or self.atlas
        pts = []
        for c_full, c, gr in zip(self.atlas.charts, atlas.charts, self.graphs):
            keep = (gr.z1 >= c.a1 - 1e-12) & (gr.z1 <= c.b1 + 1e-12)
            z1 = gr.z1[keep]
            if refine > 1 and len(z1) > 1:
                z1 = np.linspace(z1[0], z1[-1], (len(z1) - 1) * refine + 1)
            pts.append(c_full.to_global(np.column_stack([z1, gr(z1)])))
        if not pts:
            raise InvalidDomainError("domain has no boundary charts")
        return np.vstack(pts)


def _same_atlas(d1: AtlasDomain, d2: AtlasDomain):
    if d1.atlas != d2.atlas:
        raise IncompatibleAtlasError("domains are described in different atlases")
    for g1, g2 in zip(d1.graphs, d2.graphs):
        if len(g1.z1) != len(g2.z1) or not np.array_equal(g1.z1, g2.z1):
            raise IncompatibleAtlasError("chart grids differ between the domains")


# ------------------------------------------------------------ constructors


def graph_domain(chart: Chart, g: Callable[[np.ndarray], np.ndarray] | Sequence[float], rho: float,
                 n_grid: int = DEFAULT_GRID, M: float | None = None) -> AtlasDomain:
    """Single-chart subgraph domain {z in V : z2 < g(z1)}."""
    atlas = Atlas(rho, (chart,), 1)
    return AtlasDomain(atlas, (_sample_graph(chart, g, n_grid, M),))


def _sample_graph(chart: Chart, g, n_grid: int, M: float | None) -> ChartGraph:
    if callable(g):
        z1 = np.linspace(chart.a1, chart.b1, n_grid)
        vals = np.asarray(g(z1), dtype=float) * np.ones_like(z1)
    else:
        vals = np.asarray(g, dtype=float)
        z1 = np.linspace(chart.a1, chart.b1, len(vals))
    if not np.all(np.isfinite(vals)):
        raise InvalidDomainError("non-finite graph samples")
    gr = ChartGraph(z1, vals, 0.0)
    return ChartGraph(z1, vals, M if M is not None else gr.lipschitz_quotient())


def star_atlas(n_charts: int, rho: float, half_width: float, a2: float, b2: float, interior_half: float,
               center=(0.0, 0.0), phase: float = 0.0) -> Atlas:
    """Boundary charts with local vertical along directions phase + 2 pi j / n, plus one interior square."""
    c0 = np.asarray(center, dtype=float)
    charts = []
    for j in range(n_charts):
        theta = phase + 2 * math.pi * j / n_charts
        charts.append(Chart(-half_width, half_width, a2, b2, theta - math.pi / 2, tuple(c0)))
    charts.append(Chart(-interior_half, interior_half, -interior_half, interior_half, 0.0, tuple(c0)))
    return Atlas(rho, tuple(charts), n_charts)


def auto_star_atlas(r_in: float, r_out: float, n_charts: int = 8, rho: float | None = None,
                    center=(0.0, 0.0)) -> Atlas:
    """A star atlas for boundaries between radii r_in and r_out about ``center``."""
    if not (0 < r_in <= r_out):
        raise InvalidArgumentError("need 0 < r_in <= r_out")
    rho = 0.1 * r_in if rho is None else rho
    w = 1.15 * r_out * math.sin(math.pi / n_charts) + rho
    if w >= r_in:
        raise InvalidArgumentError("too few charts for this radius range")
    g_lo = math.sqrt(r_in ** 2 - w ** 2)
    a0 = 0.98 * r_in / math.sqrt(2)
    a2 = min(g_lo - rho - 1e-3 * r_in, (a0 - rho) * math.cos(math.pi / n_charts) - 1.05 * rho)
    if a2 <= 0:
        raise InvalidArgumentError(f"rho={rho} too large for r_in={r_in}")
    return star_atlas(n_charts, rho, w, a2, r_out + 1.5 * rho, a0, center)


def star_domain(atlas: Atlas, radius: Callable[[np.ndarray], np.ndarray], n_grid: int = DEFAULT_GRID,
                M: float | None = None) -> AtlasDomain:
    """Domain {r < radius(theta)} about the atlas centre, with graphs found by root-finding."""
    center = np.asarray(atlas.charts[-1].offset, dtype=float)
    graphs = []
    for c in atlas.charts[:atlas.s_prime]:
        z1 = np.linspace(c.a1, c.b1, n_grid)
        vals = np.empty_like(z1)
        for i, s in enumerate(z1):
            def f(h, s=s):
                p = c.to_global(np.array([[s, h]]))[0] - center
                return math.hypot(*p) - float(radius(np.array([math.atan2(p[1], p[0])]))[0])
            try:
                vals[i] = brentq(f, c.a2, c.b2, xtol=1e-14)
            except ValueError as exc:
                raise InvalidDomainError("boundary does not cross the chart's vertical range") from exc
        graphs.append(_sample_graph(c, vals, n_grid, M))
    return AtlasDomain(atlas, tuple(graphs), tuple(float(v) for v in center))


def disk_radius(R: float):
    return lambda theta: np.full(np.shape(theta), float(R))


def box_radius(x0: float, x1: float, y0: float, y1: float):
    """Polar radius of the box [x0,x1] x [y0,y1] around the origin (which must be inside)."""
    if not (x0 < 0 < x1 and y0 < 0 < y1):
        raise InvalidArgumentError("the origin must be inside the box")

    def r(theta):
        c, s = np.cos(theta), np.sin(theta)
        with np.errstate(divide="ignore"):
            rx = np.where(c > 0, x1 / np.where(c > 0, c, 1), np.where(c < 0, x0 / np.where(c < 0, c, 1), np.inf))
            ry = np.where(s > 0, y1 / np.where(s > 0, s, 1), np.where(s < 0, y0 / np.where(s < 0, s, 1), np.inf))
        return np.minimum(rx, ry)

    return r


def check_cover(domain: AtlasDomain, n: int = 200) -> list[str]:
    """Sampled check that interior charts lie inside and the rho-shrunk charts cover the domain."""
    problems = []
    atlas = domain.atlas
    lo, hi = atlas.bounding_box()
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n), indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    inside = domain.contains(pts)
    covered = np.zeros(len(pts), dtype=bool)
    for c in atlas.charts:
        covered |= c.local_distance(c.to_local(pts)) > atlas.rho
    if np.any(inside & ~covered):
        problems.append(f"{int(np.sum(inside & ~covered))} domain samples outside every (V_j)_rho")
    for j, c in enumerate(atlas.charts):
        z = c.to_local(pts)
        in_v = c.local_distance(z) > 0
        if j >= atlas.s_prime:
            if np.any(in_v & ~inside):
                problems.append(f"interior chart {j} leaves the domain")
        else:
            sub = in_v & (z[:, 1] < domain.graphs[j](z[:, 0]))
            if np.any(in_v & (sub != inside)):
                problems.append(f"chart {j}: domain inside V_j is not the subgraph")
    return problems


# --------------------------------------------------------------- metrics


def atlas_distance(d1: AtlasDomain, d2: AtlasDomain, atlas: Atlas | None = None) -> float:
    """max_j max over shared grid points of |g_1j - g_2j|, optionally over a sub-atlas's ranges."""
    _same_atlas(d1, d2)
    atlas = atlas or d1.atlas
    best = 0.0
    for c, g1, g2 in zip(atlas.charts, d1.graphs, d2.graphs):
        keep = (g1.z1 >= c.a1 - 1e-12) & (g1.z1 <= c.b1 + 1e-12)
        if np.any(keep):
            best = max(best, float(np.abs(g1.g[keep] - g2.g[keep]).max()))
    return best


def halved_atlas_distance(d1: AtlasDomain, d2: AtlasDomain) -> float:
    return atlas_distance(d1, d2, d1.atlas.halved())


def hausdorff_deviations(b1: np.ndarray, b2: np.ndarray) -> tuple[float, float]:
    """(lower, upper) Hausdorff-Pompeiu deviations of two finite point sets."""
    b1, b2 = np.atleast_2d(b1), np.atleast_2d(b2)
    if b1.size == 0 or b2.size == 0:
        raise InvalidArgumentError("point sets must be non-empty")
    d12 = float(cKDTree(b2).query(b1)[0].max())
    d21 = float(cKDTree(b1).query(b2)[0].max())
    return min(d12, d21), max(d12, d21)


def boundary_hausdorff(d1: AtlasDomain, d2: AtlasDomain, halved: bool = True) -> tuple[float, float]:
    atlas = d1.atlas.halved() if halved else None
    return hausdorff_deviations(d1.boundary_points(atlas), d2.boundary_points(atlas))


# ----------------------------------------------------- partition of unity


def _f(u):
    safe = np.where(u > 0, u, 1.0)
    return np.where(u > 0, np.exp(-1.0 / safe), 0.0), safe


def smooth_step(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """C-infinity step 0 -> 1 on [0, 1] with its first two derivatives."""
    u = np.asarray(u, dtype=float)
    fu, su = _f(u)
    fv, sv = _f(1.0 - u)
    d1u = np.where(u > 0, fu / su ** 2, 0.0)
    d1v = np.where(1 - u > 0, fv / sv ** 2, 0.0)
    d2u = np.where(u > 0, fu * (1 - 2 * su) / su ** 4, 0.0)
    d2v = np.where(1 - u > 0, fv * (1 - 2 * sv) / sv ** 4, 0.0)
    g = fu + fv
    N = d1u * fv + fu * d1v
    dN = d2u * fv - fu * d2v
    dg = d1u - d1v
    return fu / g, N / g ** 2, dN / g ** 2 - 2 * N * dg / g ** 3


def chart_bump(chart: Chart, rho: float, x: np.ndarray):
    """Bump equal to 1 on (V)_rho and vanishing outside (V)_{BUMP_START rho}; value, gradient, Hessian."""
    z = chart.to_local(x)
    width = (1.0 - BUMP_START) * rho
    factors = []
    for axis, lo, hi in ((0, chart.a1, chart.b1), (1, chart.a2, chart.b2)):
        s1, d1, e1 = smooth_step((z[:, axis] - lo - BUMP_START * rho) / width)
        s2, d2, e2 = smooth_step((hi - z[:, axis] - BUMP_START * rho) / width)
        val = s1 * s2
        der = (d1 * s2 - s1 * d2) / width
        sec = (e1 * s2 - 2 * d1 * d2 + s1 * e2) / width ** 2
        factors.append((val, der, sec))
    (p, dp, ep), (q, dq, eq) = factors
    val = p * q
    grad_z = np.column_stack([dp * q, p * dq])
    hess_z = np.empty((len(z), 2, 2))
    hess_z[:, 0, 0] = ep * q
    hess_z[:, 1, 1] = p * eq
    hess_z[:, 0, 1] = hess_z[:, 1, 0] = dp * dq
    R = chart.rotation
    return val, grad_z @ R.T, np.einsum("ia,kab,jb->kij", R, hess_z, R)


def partition_of_unity(atlas: Atlas, x: np.ndarray):
    """psi_j = b_j prod_{k<j} (1 - b_k): sums to 1 wherever some b_k = 1.

    Returns lists of values (K,), gradients (K, 2) and Hessians (K, 2, 2).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    K = len(x)
    P, dP, HP = np.ones(K), np.zeros((K, 2)), np.zeros((K, 2, 2))
    vals, grads, hess = [], [], []
    for c in atlas.charts:
        b, db, Hb = chart_bump(c, atlas.rho, x)
        vals.append(b * P)
        grads.append(b[:, None] * dP + P[:, None] * db)
        hess.append(b[:, None, None] * HP + P[:, None, None] * Hb
                    + np.einsum("ki,kj->kij", db, dP) + np.einsum("ki,kj->kij", dP, db))
        one_minus = 1.0 - b
        HP = one_minus[:, None, None] * HP - P[:, None, None] * Hb \
            - np.einsum("ki,kj->kij", db, dP) - np.einsum("ki,kj->kij", dP, db)
        dP = one_minus[:, None] * dP - P[:, None] * db
        P = P * one_minus
    return vals, grads, hess


@dataclass(frozen=True, eq=False)
class BurenkovConstants:
    E: float
    M: float
    grad_sup: float
    hess_sup: float
    samples: int


def burenkov_constants(atlas: Atlas, n: int = 400) -> BurenkovConstants:
    """Sampled derivative sups of the partition and the constants E and M built from them.

    E = 1 / sup |sum_j xi_j grad psi_j^T|_2 keeps I - eps sum xi_j grad psi_j
    invertible; M = (1 + max_j max(sup|grad psi_j|, sup|hess psi_j|)) s.
    """
    lo, hi = atlas.bounding_box()
    width = (1.0 - BUMP_START) * atlas.rho
    n = max(n, int(math.ceil(float(np.max(hi - lo)) / (width / 6))))  # resolve the bump transitions
    xs, ys = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
    opnorm = gsup = hsup = 0.0
    for chunk in np.array_split(np.arange(n), max(1, n * n // 100_000)):
        X, Y = np.meshgrid(xs[chunk], ys, indexing="ij")
        pts = np.column_stack([X.ravel(), Y.ravel()])
        _, grads, hess = partition_of_unity(atlas, pts)
        G = sum(np.einsum("i,kj->kij", c.up, g) for c, g in zip(atlas.charts, grads))
        opnorm = max(opnorm, float(np.linalg.norm(G, ord=2, axis=(1, 2)).max()))
        gsup = max(gsup, max(float(np.abs(g).max()) for g in grads))
        hsup = max(hsup, max(float(np.abs(h).max()) for h in hess))
    E = 1.0 / opnorm if opnorm > 0 else math.inf
    return BurenkovConstants(E, (1.0 + max(gsup, hsup)) * atlas.s, gsup, hsup, n * n)


def burenkov_map(atlas: Atlas, eps: float, constants: BurenkovConstants | None = None) -> ParametricMap:
    """phi_eps(x) = x - eps sum_j xi_j psi_j(x), xi_j the global up direction of chart j."""
    if eps < 0:
        raise InvalidArgumentError("eps must be >= 0")
    constants = constants or burenkov_constants(atlas)
    if eps >= constants.E:
        raise OutOfRangeError(f"eps={eps} not below the sufficient bound E={constants.E:.4g}")
    xis = [c.up for c in atlas.charts]

    def func(x):
        vals, _, _ = partition_of_unity(atlas, x)
        return x - eps * sum(v[:, None] * xi for v, xi in zip(vals, xis))

    def jac(x):
        _, grads, _ = partition_of_unity(atlas, x)
        return np.eye(2) - eps * sum(np.einsum("i,kj->kij", xi, g) for xi, g in zip(xis, grads))

    def hess(x):
        _, _, hs = partition_of_unity(atlas, x)
        return -eps * sum(np.einsum("i,kjl->kijl", xi, h) for xi, h in zip(xis, hs))

    return ParametricMap(f"burenkov({eps!r})", func, jac, hess, 0.0 if eps == 0 else None)


def sampled_delta_ratio(atlas: Atlas, eps: float, n: int = 200) -> float:
    lo, hi = atlas.bounding_box()
    pts = bbox_grid(np.vstack([lo, hi]), n)
    return delta_measure(burenkov_map(atlas, eps), pts) / eps


# ------------------------------------------------------------- inclusions


def inclusion_neighborhoods(d1: AtlasDomain, d2: AtlasDomain, eps: float,
                            spacing: float | None = None) -> tuple[bool, bool]:
    """Sampled tests of (Omega_1)_eps in Omega_2 and Omega_2 in (Omega_1)^eps.

    Distances to the boundary of Omega_1 use its densified graph samples;
    both tests allow a slack of half the sampling spacing.
    """
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    _same_atlas(d1, d2)
    h = spacing or eps / 8
    lo, hi = d1.atlas.bounding_box()
    nx = int(math.ceil((hi[0] - lo[0]) / h)) + 1
    ny = int(math.ceil((hi[1] - lo[1]) / h)) + 1
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], nx), np.linspace(lo[1], hi[1], ny), indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    in1, in2 = d1.contains(pts), d2.contains(pts)
    refine = max(1, int(math.ceil(d1.grid_resolution / (h / 4))))
    dist = cKDTree(d1.boundary_points(refine=refine)).query(pts)[0]
    tol = 0.5 * h
    inner = bool(np.all(in2[in1 & (dist > eps + tol)]))
    outer = bool(np.all(in1[in2] | (dist[in2] < eps + tol)))
    return inner, outer


# ---------------------------------------------------------------- meshing


def domain_to_mesh(domain: AtlasDomain, resolution: int) -> Mesh:
    """Triangulate a domain: mapped rectangle for a single graph chart, scaled disk for star atlases."""
    if resolution < 1:
        raise InvalidArgumentError("resolution must be >= 1")
    try:
        if domain.atlas.s == 1 and domain.atlas.s_prime == 1:
            mesh = _graph_mesh(domain, resolution)
        elif domain.center is not None:
            mesh = _star_mesh(domain, resolution)
        else:
            raise InvalidArgumentError("domain_to_mesh needs a single-chart domain or a star centre")
    except DegenerateMapError as exc:
        raise InvalidDomainError(f"chart data produce a folded mesh: {exc}") from exc
    problems = validate_mesh(mesh)
    if problems:
        raise InvalidDomainError("; ".join(problems))
    return mesh


def _graph_mesh(domain: AtlasDomain, resolution: int) -> Mesh:
    c, gr = domain.atlas.charts[0], domain.graphs[0]
    base = generate_rectangle(1.0, 1.0, resolution, resolution)

    def phi(p):
        z1 = c.a1 + p[:, 0] * (c.b1 - c.a1)
        z2 = c.a2 + p[:, 1] * (gr(z1) - c.a2)
        return c.to_global(np.column_stack([z1, z2]))

    return map_mesh(base, phi)


def star_boundary_radius(domain: AtlasDomain, theta: np.ndarray, iters: int = 60) -> np.ndarray:
    """Radius where the ray from the centre at angle theta leaves the domain (vectorised bisection)."""
    center = np.asarray(domain.center, dtype=float)
    lo, hi = domain.atlas.bounding_box()
    r_hi = np.full(len(theta), float(np.max(np.linalg.norm(np.vstack([lo, hi]) - center, axis=1))) * 1.5)
    r_lo = np.zeros(len(theta))
    d = np.column_stack([np.cos(theta), np.sin(theta)])
    for _ in range(iters):
        mid = 0.5 * (r_lo + r_hi)
        inside = domain.contains(center + mid[:, None] * d)
        r_lo = np.where(inside, mid, r_lo)
        r_hi = np.where(inside, r_hi, mid)
    return 0.5 * (r_lo + r_hi)


def _star_mesh(domain: AtlasDomain, level: int) -> Mesh:
    base = generate_disk(1.0, level)
    center = np.asarray(domain.center, dtype=float)
    theta = np.arctan2(base.nodes[:, 1], base.nodes[:, 0])
    R = star_boundary_radius(domain, theta)
    return map_mesh(base, lambda p: center + p * R[:, None])


# ------------------------------------------------------------------- io


def write_atlas_domain(path, domain: AtlasDomain) -> None:
    a = domain.atlas
    lines = [f"atlas {a.rho!r} {a.s} {a.s_prime}"]
    if domain.center is not None:
        lines.append(f"center {float(domain.center[0])!r} {float(domain.center[1])!r}")
    for j, c in enumerate(a.charts):
        n = len(domain.graphs[j].z1) if j < a.s_prime else 0
        lines.append(f"chart {c.a1!r} {c.b1!r} {c.a2!r} {c.b2!r} {c.angle!r} "
                     f"{float(c.offset[0])!r} {float(c.offset[1])!r} {n}")
        if j < a.s_prime:
            gr = domain.graphs[j]
            lines.append(f"M {gr.M!r}")
            lines.append(" ".join(repr(float(v)) for v in gr.g))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_atlas_domain(path) -> AtlasDomain:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    it = iter(lines)
    head = next(it)
    if head[0] != "atlas":
        raise InvalidDomainError("missing atlas header")
    rho, s, s_prime = float(head[1]), int(head[2]), int(head[3])
    center = None
    charts, graphs = [], []
    row = next(it)
    if row[0] == "center":
        center = (float(row[1]), float(row[2]))
        row = next(it)
    for j in range(s):
        if j > 0:
            row = next(it)
        a1, b1, a2, b2, ang, ox, oy = map(float, row[1:8])
        n = int(row[8])
        c = Chart(a1, b1, a2, b2, ang, (ox, oy))
        charts.append(c)
        if j < s_prime:
            M = float(next(it)[1])
            g = np.array([float(v) for v in next(it)])
            if len(g) != n:
                raise InvalidDomainError(f"chart {j}: expected {n} samples, found {len(g)}")
            graphs.append(ChartGraph(np.linspace(a1, b1, n), g, M))
    return AtlasDomain(Atlas(rho, tuple(charts), s_prime), tuple(graphs), center)
