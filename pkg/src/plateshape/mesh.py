"""Triangular meshes of planar domains and their boundary traces.

Meshes are immutable value objects.  Triangles are stored counterclockwise;
boundary edges are oriented with the domain on their left, grouped into closed
loops, and carry the outward unit normal obtained by rotating the edge
tangent by -pi/2.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateMapError, InvalidArgumentError

BOUNDARY = 1
INTERIOR = 0


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (nodes[triangles[:, i]] for i in range(3))
    d1 = p1 - p0
    d2 = p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _directed_edges(triangles: np.ndarray) -> np.ndarray:
    t = triangles
    return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])


def _outward_normals(nodes, edges):
    tangent = nodes[edges[:, 1]] - nodes[edges[:, 0]]
    lengths = np.hypot(tangent[:, 0], tangent[:, 1])
    normals = np.column_stack([tangent[:, 1], -tangent[:, 0]]) / lengths[:, None]
    return normals, lengths


def _order_loops(edges: np.ndarray) -> tuple[np.ndarray, tuple[tuple[int, int], ...]]:
    """Chain oriented boundary edges into closed loops (counterclockwise for outer loops)."""
    if len(edges) == 0:
        return np.arange(0), ()
    outgoing: dict[int, list[int]] = {}
    for e, (a, _) in enumerate(edges):
        outgoing.setdefault(int(a), []).append(e)
    used = np.zeros(len(edges), dtype=bool)
    order: list[int] = []
    loops = []
    # start each loop at the lowest unused edge index for reproducibility
    for start in range(len(edges)):
        if used[start]:
            continue
        loop_begin = len(order)
        e = start
        while not used[e]:
            used[e] = True
            order.append(e)
            nxt = [c for c in outgoing.get(int(edges[e, 1]), []) if not used[c]]
            if not nxt:
                break
            e = nxt[0]
        loops.append((loop_begin, len(order)))
    return np.asarray(order, dtype=np.int64), tuple(loops)


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_normals: np.ndarray
    boundary_lengths: np.ndarray
    node_flags: np.ndarray
    boundary_triangles: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    boundary_loops: tuple = ()

    @classmethod
    def from_triangles(cls, nodes, triangles) -> "Mesh":
        nodes = np.ascontiguousarray(nodes, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        directed = _directed_edges(triangles)
        owner = np.tile(np.arange(len(triangles)), 3)
        key = np.sort(directed, axis=1)
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        once = counts[inverse] == 1
        bedges = directed[once]
        btris = owner[once]
        order, loops = _order_loops(bedges)
        bedges = bedges[order]
        btris = btris[order]
        normals, lengths = _outward_normals(nodes, bedges)
        flags = np.zeros(len(nodes), dtype=np.int8)
        flags[bedges.ravel()] = BOUNDARY
        for arr in (nodes, triangles, bedges, normals, lengths, flags, btris):
            arr.setflags(write=False)
        return cls(nodes, triangles, bedges, normals, lengths, flags, btris, loops)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    def total_area(self) -> float:
        return float(self.areas().sum())

    def boundary_length(self) -> float:
        return float(self.boundary_lengths.sum())

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()[:16]

    def boundary_node_indices(self) -> np.ndarray:
        return np.flatnonzero(self.node_flags == BOUNDARY)


# ---------------------------------------------------------------- generators


def generate_rectangle(a: float, b: float, nx: int, ny: int) -> Mesh:
    """Structured mesh of (0, a) x (0, b) with nx x ny cells.

    Each cell is split into two triangles along a diagonal whose direction
    alternates in a checkerboard ("union jack") pattern.
    """
    if not (a > 0 and b > 0):
        raise InvalidArgumentError(f"rectangle sides must be positive, got {a}, {b}")
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise InvalidArgumentError(f"cell counts must be integers >= 2, got {nx}, {ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, a, nx + 1)
    ys = np.linspace(0.0, b, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return i * (ny + 1) + j

    tris = []
    for i in range(nx):
        for j in range(ny):
            ll, lr, ur, ul = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(ll, lr, ur), (ll, ur, ul)]
            else:
                tris += [(ll, lr, ul), (lr, ur, ul)]
    return Mesh.from_triangles(nodes, np.asarray(tris))


DISK_BASE_RINGS = 1
DISK_BASE_SECTORS = 8


def _zip_rings(inner: np.ndarray, outer: np.ndarray) -> list[tuple[int, int, int]]:
    p, q = len(inner), len(outer)
    tris = []
    i = j = 0
    while i < p or j < q:
        a_next = 2 * np.pi * (i + 1) / p
        b_next = 2 * np.pi * (j + 1) / q
        if j < q and (i == p or b_next < a_next - 1e-12):
            tris.append((inner[i % p], outer[j], outer[(j + 1) % q]))
            j += 1
        else:
            tris.append((inner[i], outer[j % q], inner[(i + 1) % p]))
            i += 1
    return tris


def generate_disk(radius: float, refine_level: int, base_rings: int = DISK_BASE_RINGS,
                  base_sectors: int = DISK_BASE_SECTORS) -> Mesh:
    """Concentric-ring mesh of the disk of given radius centred at the origin.

    Ring ``i`` (1-based) carries ``base_sectors * i`` equally spaced nodes; the
    number of rings is ``base_rings * 2**refine_level``, so each refinement
    doubles both the angular and radial resolution.  Boundary nodes sit
    exactly on the circle.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    if refine_level < 0:
        raise InvalidArgumentError(f"refine_level must be >= 0, got {refine_level}")
    rings = base_rings * 2 ** int(refine_level)
    nodes = [np.zeros(2)]
    ring_ids = [np.array([0])]
    count = 1
    for i in range(1, rings + 1):
        m = base_sectors * i
        theta = 2 * np.pi * np.arange(m) / m
        r = radius * i / rings
        nodes.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        ring_ids.append(np.arange(count, count + m))
        count += m
    nodes = np.vstack(nodes)
    tris = []
    outer = ring_ids[1]
    for k in range(len(outer)):
        tris.append((0, outer[k], outer[(k + 1) % len(outer)]))
    for i in range(2, rings + 1):
        tris += _zip_rings(ring_ids[i - 1], ring_ids[i])
    return Mesh.from_triangles(nodes, np.asarray(tris))


def map_mesh(mesh: Mesh, phi: Callable[[np.ndarray], np.ndarray]) -> Mesh:
    """Image of a mesh under a point map, keeping connectivity."""
    new_nodes = np.asarray(phi(mesh.nodes), dtype=float)
    if new_nodes.shape != mesh.nodes.shape or not np.all(np.isfinite(new_nodes)):
        raise DegenerateMapError("map produced non-finite or misshaped node coordinates")
    areas = signed_areas(new_nodes, mesh.triangles)
    bad = np.flatnonzero(areas <= 0)
    if len(bad):
        raise DegenerateMapError(f"map flips {len(bad)} triangle(s), first index {bad[0]}")
    return Mesh.from_triangles(new_nodes, mesh.triangles)


# ---------------------------------------------------------------- validation


def validate_mesh(mesh: Mesh) -> list[str]:
    """Return a list of invariant violations; empty iff the mesh is valid."""
    report: list[str] = []
    nodes, tris = mesh.nodes, mesh.triangles
    if not np.all(np.isfinite(nodes)):
        report.append("coordinates: non-finite node coordinates")
    if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
        report.append("conformity: triangle references a missing node")
        return report
    areas = signed_areas(nodes, tris)
    for t in np.flatnonzero(~(areas > 0)):
        report.append(f"orientation: triangle {t} has non-positive signed area {areas[t]:.3e}")

    directed = _directed_edges(tris)
    key = np.sort(directed, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    for e in np.flatnonzero(counts > 2):
        report.append(f"conformity: edge {tuple(uniq[e])} shared by {counts[e]} triangles")
    edge_count = {tuple(k): int(c) for k, c in zip(uniq, counts)}
    stored = {tuple(sorted(map(int, e))) for e in mesh.boundary_edges}
    for e in mesh.boundary_edges:
        k = tuple(sorted(map(int, e)))
        c = edge_count.get(k, 0)
        if c == 0:
            report.append(f"conformity: dangling boundary edge {k} belongs to no triangle")
        elif c != 1:
            report.append(f"conformity: boundary edge {k} belongs to {c} triangles")
    for k, c in edge_count.items():
        if c == 1 and k not in stored:
            report.append(f"boundary closure: edge {k} has one triangle but is not listed as boundary")

    if len(mesh.boundary_edges):
        tangent = nodes[mesh.boundary_edges[:, 1]] - nodes[mesh.boundary_edges[:, 0]]
        nrm = mesh.boundary_normals
        unit_err = np.abs(np.linalg.norm(nrm, axis=1) - 1.0)
        for e in np.flatnonzero(unit_err > 1e-12):
            report.append(f"normals: boundary edge {e} normal is not unit ({unit_err[e]:.2e})")
        lengths = np.linalg.norm(tangent, axis=1)
        ortho = np.abs(np.einsum("ij,ij->i", tangent, nrm)) / np.where(lengths > 0, lengths, 1)
        for e in np.flatnonzero(ortho > 1e-12):
            report.append(f"normals: boundary edge {e} normal not orthogonal to edge")
        outdeg = np.bincount(mesh.boundary_edges[:, 0], minlength=len(nodes))
        indeg = np.bincount(mesh.boundary_edges[:, 1], minlength=len(nodes))
        for v in np.flatnonzero((outdeg != indeg) | (outdeg > 1)):
            report.append(f"boundary closure: node {v} has in/out boundary degree {indeg[v]}/{outdeg[v]}")
        bnodes = np.zeros(len(nodes), dtype=bool)
        bnodes[mesh.boundary_edges.ravel()] = True
        if not np.array_equal(bnodes, mesh.node_flags == BOUNDARY):
            report.append("flags: node boundary flags disagree with boundary edges")

    used = np.unique(tris)
    if len(used) != len(nodes):
        report.append(f"conformity: {len(nodes) - len(used)} node(s) belong to no triangle")
    if len(tris):
        adj = coo_matrix((np.ones(len(key)), (key[:, 0], key[:, 1])), shape=(len(nodes),) * 2)
        ncomp, labels = connected_components(adj, directed=False)
        if len(np.unique(labels[used])) > 1:
            report.append("connectivity: triangles form more than one component")
    return report


# ------------------------------------------------------------ boundary trace


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Gauss-Legendre samples on every boundary edge, in traversal order."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    edge_index: np.ndarray
    edge_param: np.ndarray
    arclength: np.ndarray
    mesh_digest: str

    @property
    def total_length(self) -> float:
        return float(self.weights.sum())

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=(0, 0))


def boundary_trace(mesh: Mesh, samples_per_edge: int = 3) -> BoundaryTrace:
    if samples_per_edge < 1:
        raise InvalidArgumentError("samples_per_edge must be >= 1")
    if len(mesh.boundary_edges) == 0:
        raise InvalidArgumentError("mesh has an empty boundary")
    xg, wg = np.polynomial.legendre.leggauss(int(samples_per_edge))
    s = 0.5 * (xg + 1.0)
    ws = 0.5 * wg
    e = mesh.boundary_edges
    p0 = mesh.nodes[e[:, 0]]
    p1 = mesh.nodes[e[:, 1]]
    L = mesh.boundary_lengths
    k = len(e)
    points = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    weights = L[:, None] * ws[None, :]
    starts = np.concatenate([[0.0], np.cumsum(L)[:-1]])
    arc = starts[:, None] + s[None, :] * L[:, None]
    return BoundaryTrace(
        points=points.reshape(-1, 2),
        weights=weights.ravel(),
        normals=np.repeat(mesh.boundary_normals, len(s), axis=0),
        edge_index=np.repeat(np.arange(k), len(s)),
        edge_param=np.tile(s, k),
        arclength=arc.ravel(),
        mesh_digest=mesh.digest,
    )


# ----------------------------------------------------------------------- io


def write_mesh(path, mesh: Mesh) -> None:
    lines = [f"nodes {mesh.n_nodes}"]
    for (x, y), f in zip(mesh.nodes, mesh.node_flags):
        lines.append(f"{float(x)!r} {float(y)!r} {int(f)}")
    lines.append(f"triangles {mesh.n_triangles}")
    for a, b, c in mesh.triangles:
        lines.append(f"{int(a)} {int(b)} {int(c)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    lines = Path(path).read_text().split("\n")
    head, count = lines[0].split()
    if head != "nodes":
        raise InvalidArgumentError(f"{path}: expected 'nodes <count>' header")
    nn = int(count)
    nodes = np.array([[float(v) for v in ln.split()[:2]] for ln in lines[1:1 + nn]]).reshape(-1, 2)
    head, count = lines[1 + nn].split()
    if head != "triangles":
        raise InvalidArgumentError(f"{path}: expected 'triangles <count>' header")
    nt = int(count)
    tris = np.array([[int(v) for v in ln.split()] for ln in lines[2 + nn:2 + nn + nt]]).reshape(-1, 3)
    return Mesh.from_triangles(nodes, tris)
