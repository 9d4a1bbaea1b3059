"""Conforming P2 discretisation of the clamped Reissner-Mindlin eigenproblem.

Unknowns are the rotation ``beta = (beta_1, beta_2)`` and the transverse
displacement ``w``, all continuous piecewise quadratics vanishing on the
boundary.  The stiffness form is

    mu/12 (grad beta : grad eta) + (mu+lambda)/12 (div beta)(div eta)
        + mu k / t^2 (grad w - beta).(grad v - eta)

and the mass form is ``w v + t^2/12 beta.eta``.  Coefficient vectors are laid
out block-wise as ``[beta_1, beta_2, w]`` over the free scalar DOFs.

Eigenvalue indices ``n`` are 1-based throughout, matching gamma_1 <= gamma_2 ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptySpaceError, InvalidArgumentError, NumericalError
from .mesh import BoundaryTrace, Mesh

DENSE_DOF_CAP = 25_000
DENSE_AUTO_MAX = 1500
DEFAULT_CLUSTER_TOL = 1e-3
DEFAULT_K = 5.0 / 6.0

# Symmetric triangle rules in barycentric coordinates; weights sum to one.
_A4, _B4 = 0.445948490915965, 0.091576213509771
_W4A, _W4B = 0.223381589678011, 0.109951743655322
QUAD4_POINTS = np.array([
    [_A4, _A4, 1 - 2 * _A4], [_A4, 1 - 2 * _A4, _A4], [1 - 2 * _A4, _A4, _A4],
    [_B4, _B4, 1 - 2 * _B4], [_B4, 1 - 2 * _B4, _B4], [1 - 2 * _B4, _B4, _B4],
])
QUAD4_WEIGHTS = np.array([_W4A] * 3 + [_W4B] * 3)
QUAD2_POINTS = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
QUAD2_WEIGHTS = np.full(3, 1 / 3)


@dataclass(frozen=True)
class MaterialParams:
    t: float
    lam: float
    mu: float
    k: float = DEFAULT_K

    def __post_init__(self):
        for name in ("t", "mu", "k"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {v}")
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise InvalidArgumentError(f"lam must be non-negative, got {self.lam}")

    @property
    def bending(self) -> float:
        return self.mu / 12.0

    @property
    def divergence(self) -> float:
        return (self.mu + self.lam) / 12.0

    @property
    def shear(self) -> float:
        return self.mu * self.k / self.t ** 2

    @property
    def rotary(self) -> float:
        return self.t ** 2 / 12.0

    def describe(self) -> str:
        return f"t={self.t!r} lambda={self.lam!r} mu={self.mu!r} k={self.k!r}"


def material_from_engineering(E: float, nu: float, k: float = DEFAULT_K, *, t: float) -> MaterialParams:
    """Plate constants from Young's modulus and Poisson ratio.

    Uses lambda = nu E / (1 - nu^2) and mu = E / (2 (1 + nu)); eigenvalues
    relate to angular frequencies by gamma = omega^2 / t^2.
    """
    if not E > 0:
        raise InvalidArgumentError(f"E must be positive, got {E}")
    if not (0 <= nu < 0.5):
        raise InvalidArgumentError(f"nu must lie in [0, 0.5), got {nu}")
    return MaterialParams(t=t, lam=nu * E / (1 - nu ** 2), mu=E / (2 * (1 + nu)), k=k)


def angular_frequency(gamma, t: float):
    return t * np.sqrt(gamma)


# ------------------------------------------------------------------ P2 basis


def p2_values(bary: np.ndarray) -> np.ndarray:
    L0, L1, L2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([L0 * (2 * L0 - 1), L1 * (2 * L1 - 1), L2 * (2 * L2 - 1),
                     4 * L0 * L1, 4 * L1 * L2, 4 * L2 * L0], axis=-1)


def p2_dbary(bary: np.ndarray) -> np.ndarray:
    """Derivatives of the six P2 shape functions w.r.t. (L0, L1, L2): shape (..., 6, 3)."""
    L0, L1, L2 = bary[..., 0], bary[..., 1], bary[..., 2]
    z = np.zeros_like(L0)
    rows = [
        [4 * L0 - 1, z, z],
        [z, 4 * L1 - 1, z],
        [z, z, 4 * L2 - 1],
        [4 * L1, 4 * L0, z],
        [z, 4 * L2, 4 * L1],
        [4 * L2, z, 4 * L0],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Constant gradients of the barycentric coordinates, shape (ntri, 3, 2)."""
    p = mesh.nodes[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)  # columns
    Jinv = np.linalg.inv(J)
    g12 = Jinv  # rows: grad L1, grad L2
    g0 = -(g12[:, 0] + g12[:, 1])
    return np.stack([g0, g12[:, 0], g12[:, 1]], axis=1)


def barycentric_coordinates(mesh: Mesh, tri_ids: np.ndarray, points: np.ndarray) -> np.ndarray:
    p = mesh.nodes[mesh.triangles[tri_ids]]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
    l12 = np.linalg.solve(J, (points - p[:, 0])[..., None])[..., 0]
    return np.column_stack([1 - l12.sum(axis=1), l12])


class FeSpace:
    """P2 scalar space with homogeneous Dirichlet constraints, tripled for (beta, w)."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        tris = mesh.triangles
        local = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
        key = np.sort(local, axis=1)
        self.edges, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        m = len(tris)
        self.tri_edges = np.column_stack([inverse[:m], inverse[m:2 * m], inverse[2 * m:]])
        nn = mesh.n_nodes
        self.n_scalar = nn + len(self.edges)
        self.cell_dofs = np.column_stack([tris, nn + self.tri_edges])

        counts = np.bincount(inverse, minlength=len(self.edges))
        boundary = np.zeros(self.n_scalar, dtype=bool)
        boundary[mesh.boundary_node_indices()] = True
        boundary[nn + np.flatnonzero(counts == 1)] = True
        self.free = np.flatnonzero(~boundary)
        self.free_index = np.full(self.n_scalar, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(len(self.free))

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.free)

    def expand(self, coeffs: np.ndarray) -> np.ndarray:
        """Free-DOF coefficients -> (3, n_scalar) nodal/edge values (zeros on the boundary)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (self.n_dofs,):
            raise InvalidArgumentError(f"coefficient vector has shape {coeffs.shape}, expected ({self.n_dofs},)")
        full = np.zeros((3, self.n_scalar))
        full[:, self.free] = coeffs.reshape(3, -1)
        return full

    @cached_property
    def bary_grads(self) -> np.ndarray:
        return barycentric_gradients(self.mesh)

    def evaluate(self, coeffs, tri_ids, points=None, bary=None):
        """Values (K, 3) and gradients (K, 3, 2) of (beta_1, beta_2, w) at points in given triangles."""
        full = self.expand(coeffs)
        tri_ids = np.asarray(tri_ids)
        if bary is None:
            bary = barycentric_coordinates(self.mesh, tri_ids, np.asarray(points, dtype=float))
        N = p2_values(bary)  # (K, 6)
        dN = np.einsum("kil,kld->kid", p2_dbary(bary), self.bary_grads[tri_ids])  # (K, 6, 2)
        local = full[:, self.cell_dofs[tri_ids]]  # (3, K, 6)
        vals = np.einsum("fki,ki->kf", local, N)
        grads = np.einsum("fki,kid->kfd", local, dN)
        return vals, grads

    def quadrature(self, rule: str = "full"):
        """Quadrature points (ntri, q, 2), weights (ntri, q) and barycentric points (q, 3)."""
        pts, wts = (QUAD4_POINTS, QUAD4_WEIGHTS) if rule == "full" else (QUAD2_POINTS, QUAD2_WEIGHTS)
        p = self.mesh.nodes[self.mesh.triangles]
        xq = np.einsum("ql,mld->mqd", pts, p)
        wq = self.mesh.areas()[:, None] * wts[None, :]
        return xq, wq, pts

    def evaluate_at_quadrature(self, coeffs, rule: str = "full"):
        xq, wq, bary = self.quadrature(rule)
        m, q = wq.shape
        tri_ids = np.repeat(np.arange(m), q)
        vals, grads = self.evaluate(coeffs, tri_ids, bary=np.tile(bary, (m, 1)))
        return xq.reshape(-1, 2), wq.ravel(), vals, grads, tri_ids


# ----------------------------------------------------------------- assembly


def _local_integrals(space: FeSpace, rule: str):
    pts, wts = (QUAD4_POINTS, QUAD4_WEIGHTS) if rule == "full" else (QUAD2_POINTS, QUAD2_WEIGHTS)
    N = p2_values(pts)  # (q, 6)
    dN = np.einsum("qil,mld->mqid", p2_dbary(pts), space.bary_grads)  # (m, q, 6, 2)
    aw = space.mesh.areas()[:, None] * wts[None, :]  # (m, q)
    M = np.einsum("mq,qi,qj->mij", aw, N, N)
    K = np.einsum("mq,mqia,mqjb->mabij", aw, dN, dN)  # K[a,b]_ij = int d_a phi_i d_b phi_j
    C = np.einsum("mq,mqia,qj->maij", aw, dN, N)  # C[a]_ij = int d_a phi_i phi_j
    return M, K, C


def _scatter(space: FeSpace, blocks: dict) -> sp.csr_matrix:
    """Assemble {(row_field, col_field): local (m, 6, 6)} into the free-DOF matrix."""
    ns = space.n_scalar
    dofs = space.cell_dofs
    rows, cols, vals = [], [], []
    for (rf, cf), loc in sorted(blocks.items()):
        r = np.broadcast_to(dofs[:, :, None], loc.shape) + rf * ns
        c = np.broadcast_to(dofs[:, None, :], loc.shape) + cf * ns
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(loc.ravel())
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(3 * ns, 3 * ns)).tocsr()
    A.sum_duplicates()
    sel = np.concatenate([space.free + f * ns for f in range(3)])
    return A[sel][:, sel].tocsr()


@dataclass(eq=False)
class AssembledForms:
    space: FeSpace
    params: MaterialParams
    Q: sp.csr_matrix
    B: sp.csr_matrix
    shear_rule: str = "full"

    @property
    def n_dofs(self) -> int:
        return self.Q.shape[0]

    def energy(self, coeffs) -> float:
        v = np.asarray(coeffs)
        return float(v @ (self.Q @ v))

    def mass(self, coeffs) -> float:
        v = np.asarray(coeffs)
        return float(v @ (self.B @ v))


def assemble_forms(mesh: Mesh, params: MaterialParams, *, shear_rule: str = "full",
                   space: FeSpace | None = None) -> AssembledForms:
    """Stiffness Q and mass B on the constrained P2 space.

    ``shear_rule="reduced"`` integrates the shear term with the 3-point
    degree-2 rule (locking relief for thin plates); every other term uses the
    6-point degree-4 rule, which is exact for all P2 integrands.
    """
    if shear_rule not in ("full", "reduced"):
        raise InvalidArgumentError(f"shear_rule must be 'full' or 'reduced', got {shear_rule!r}")
    space = space or FeSpace(mesh)
    if space.n_free == 0:
        raise EmptySpaceError("the constrained space is empty: every P2 node lies on the boundary")
    M, K, C = _local_integrals(space, "full")
    Ms, Ks, Cs = (M, K, C) if shear_rule == "full" else _local_integrals(space, "reduced")
    lap = K[:, 0, 0] + K[:, 1, 1]
    lap_s = Ks[:, 0, 0] + Ks[:, 1, 1]
    s = params.shear
    q_blocks = {}
    for r in range(2):
        for c in range(2):
            loc = params.divergence * K[:, r, c]
            if r == c:
                loc = loc + params.bending * lap + s * Ms
            q_blocks[(r, c)] = loc
        q_blocks[(r, 2)] = -s * np.swapaxes(Cs[:, r], 1, 2)
        q_blocks[(2, r)] = -s * Cs[:, r]
    q_blocks[(2, 2)] = s * lap_s
    b_blocks = {(0, 0): params.rotary * M, (1, 1): params.rotary * M, (2, 2): M}
    Q = _scatter(space, q_blocks)
    B = _scatter(space, b_blocks)
    Q = ((Q + Q.T) * 0.5).tocsr()
    B = ((B + B.T) * 0.5).tocsr()
    return AssembledForms(space, params, Q, B, shear_rule)


def energy_terms(space: FeSpace, coeffs) -> dict:
    """Unweighted integrals of |grad beta|^2, (div beta)^2, |grad w - beta|^2, w^2, |beta|^2."""
    _, wq, vals, grads, _ = space.evaluate_at_quadrature(coeffs)
    gb = grads[:, :2, :]
    beta = vals[:, :2]
    shear = grads[:, 2, :] - beta
    return {
        "grad": float(wq @ np.einsum("kij,kij->k", gb, gb)),
        "div": float(wq @ (gb[:, 0, 0] + gb[:, 1, 1]) ** 2),
        "shear": float(wq @ np.einsum("ki,ki->k", shear, shear)),
        "w2": float(wq @ vals[:, 2] ** 2),
        "beta2": float(wq @ np.einsum("ki,ki->k", beta, beta)),
    }


def quadratic_form(params: MaterialParams, terms: dict) -> float:
    return params.bending * terms["grad"] + params.divergence * terms["div"] + params.shear * terms["shear"]


def mass_form(params: MaterialParams, terms: dict) -> float:
    return terms["w2"] + params.rotary * terms["beta2"]


def korn_identity_residual(mesh: Mesh, beta_coeffs, eta_coeffs, space: FeSpace | None = None) -> float:
    """|2 int eps(beta):eps(eta) - int grad beta : grad eta - int div beta div eta|.

    Only the rotation blocks of the coefficient vectors are used.
    """
    space = space or FeSpace(mesh)
    _, wq, _, gb, _ = space.evaluate_at_quadrature(beta_coeffs)
    _, _, _, ge, _ = space.evaluate_at_quadrature(eta_coeffs)
    gb, ge = gb[:, :2], ge[:, :2]
    eb = 0.5 * (gb + np.swapaxes(gb, 1, 2))
    ee = 0.5 * (ge + np.swapaxes(ge, 1, 2))
    strain = wq @ np.einsum("kij,kij->k", eb, ee)
    frob = wq @ np.einsum("kij,kij->k", gb, ge)
    div = wq @ ((gb[:, 0, 0] + gb[:, 1, 1]) * (ge[:, 0, 0] + ge[:, 1, 1]))
    return float(abs(2 * strain - frob - div))


def h1_seminorm_beta(space: FeSpace, coeffs) -> float:
    _, wq, _, g, _ = space.evaluate_at_quadrature(coeffs)
    return float(np.sqrt(wq @ np.einsum("kij,kij->k", g[:, :2], g[:, :2])))


# ------------------------------------------------------------------- solver


@dataclass(eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n_dofs, n), B-orthonormal columns
    residuals: np.ndarray
    forms: AssembledForms | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.eigenvalues)

    def gamma(self, n: int) -> float:
        return float(self.eigenvalues[n - 1])

    def vector(self, n: int) -> np.ndarray:
        return self.eigenvectors[:, n - 1]


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # symmetric meshes give exact ties in magnitude; take the first index within rounding of the max
    A = np.abs(V)
    idx = np.argmax(A >= A.max(axis=0) * (1 - 1e-8), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _condition_estimate(B) -> float:
    d = B.diagonal()
    return float(d.max() / d.min()) if d.min() > 0 else math.inf


def _solve_dense(Q, B, n):
    N = Q.shape[0]
    if N > DENSE_DOF_CAP:
        raise InvalidArgumentError(f"dense solve limited to {DENSE_DOF_CAP} DOFs, got {N}")
    Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
    try:
        vals, vecs = sla.eigh(Qd, Bd, subset_by_index=[0, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"dense factorization failed ({exc}); diagonal condition estimate "
                             f"{_condition_estimate(sp.csr_matrix(Bd)):.3e}") from exc
    return vals, vecs


def _solve_sparse(Q, B, n):
    N = Q.shape[0]
    k = min(N - 2, n + max(6, n // 2))
    try:
        lu = spla.splu(sp.csc_matrix(Q))
    except RuntimeError as exc:
        raise NumericalError(f"sparse LU of the stiffness matrix failed ({exc}); diagonal condition "
                             f"estimate {_condition_estimate(Q):.3e}") from exc
    op = spla.LinearOperator(Q.shape, matvec=lu.solve, dtype=float)
    v0 = np.cos(np.arange(N) * 0.7071) + 1.0  # deterministic start vector
    _, V = spla.eigsh(Q, k=k, M=B, sigma=0.0, which="LM", OPinv=op, v0=v0, tol=0.0,
                      ncv=min(N - 1, max(2 * k + 1, 20)))
    # Rayleigh-Ritz on the Krylov subspace restores exact B-orthonormality
    Qs = V.T @ (Q @ V)
    Bs = V.T @ (B @ V)
    vals, Y = sla.eigh((Qs + Qs.T) / 2, (Bs + Bs.T) / 2)
    return vals[:n], V @ Y[:, :n]


def solve_smallest(forms: AssembledForms, n: int, tol: float = 1e-6, method: str = "auto") -> Spectrum:
    """First ``n`` generalized eigenpairs of Q v = gamma B v, ascending and B-orthonormal.

    ``method="dense"`` reduces via the Cholesky factor of B and solves the
    dense symmetric problem; ``"sparse"`` uses shift-invert Lanczos around
    zero with a sparse LU of Q.  ``"auto"`` picks dense for small systems.
    """
    Q, B = forms.Q, forms.B
    N = Q.shape[0]
    if n < 1 or n > N:
        raise InvalidArgumentError(f"requested {n} eigenpairs from a {N}-DOF problem")
    if method == "auto":
        method = "dense" if (N <= DENSE_AUTO_MAX or n > N // 3) else "sparse"
    if method == "dense":
        vals, vecs = _solve_dense(Q, B, n)
    elif method == "sparse":
        vals, vecs = _solve_sparse(Q, B, n)
    else:
        raise InvalidArgumentError(f"unknown eigen method {method!r}")
    vecs = _fix_signs(vecs)
    QV = Q @ vecs
    BV = B @ vecs
    res = np.linalg.norm(QV - BV * vals, axis=0) / np.linalg.norm(BV, axis=0)
    if not np.all(vals > 0):
        raise NumericalError(f"non-positive eigenvalue {vals.min():.3e}; forms not coercive")
    if np.any(res > tol * np.maximum(1.0, np.abs(vals))):
        raise NumericalError(f"eigen residual {res.max():.3e} exceeds tolerance {tol:.1e}")
    return Spectrum(np.asarray(vals), vecs, res, forms)


def solve(mesh: Mesh, params: MaterialParams, n: int, **kw) -> Spectrum:
    shear_rule = kw.pop("shear_rule", "full")
    return solve_smallest(assemble_forms(mesh, params, shear_rule=shear_rule), n, **kw)


# ---------------------------------------------------------------- clusters


@dataclass(frozen=True)
class EigenCluster:
    indices: tuple  # 1-based, contiguous
    gamma: float
    spread: float

    @property
    def size(self) -> int:
        return len(self.indices)


def cluster_eigenvalues(values, rel_tol: float = DEFAULT_CLUSTER_TOL) -> list[EigenCluster]:
    """Maximal runs of eigenvalues whose consecutive relative gaps are <= rel_tol."""
    if not rel_tol > 0:
        raise InvalidArgumentError("rel_tol must be positive")
    vals = np.asarray(values.eigenvalues if isinstance(values, Spectrum) else values, dtype=float)
    clusters = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or (vals[i] - vals[i - 1]) / abs(vals[i - 1]) > rel_tol:
            group = vals[start:i]
            spread = float((group.max() - group.min()) / abs(group.min()))
            clusters.append(EigenCluster(tuple(range(start + 1, i + 1)), float(group.mean()), spread))
            start = i
    return clusters


def cluster_of(values, n: int, rel_tol: float = DEFAULT_CLUSTER_TOL) -> EigenCluster:
    for c in cluster_eigenvalues(values, rel_tol):
        if n in c.indices:
            return c
    raise InvalidArgumentError(f"index {n} outside the computed spectrum")


# ------------------------------------------------------- boundary derivatives


@dataclass(frozen=True, eq=False)
class BoundaryDerivatives:
    dbeta_dn: np.ndarray  # (K, 2)
    dbeta_nn: np.ndarray  # (K,)
    dw_dn: np.ndarray  # (K,)
    div_beta: np.ndarray  # (K,)


def boundary_normal_derivatives(space: FeSpace, eigvec, trace: BoundaryTrace) -> BoundaryDerivatives:
    """One-sided normal derivatives of (beta, w) at the boundary samples."""
    mesh = space.mesh
    if trace.mesh_digest != mesh.digest:
        raise InvalidArgumentError("boundary trace was built from a different mesh")
    tri_ids = mesh.boundary_triangles[trace.edge_index]
    _, grads = space.evaluate(eigvec, tri_ids, points=trace.points)
    Jb = grads[:, :2, :]  # d beta_i / d x_j
    n = trace.normals
    dbeta_dn = np.einsum("kij,kj->ki", Jb, n)
    return BoundaryDerivatives(
        dbeta_dn=dbeta_dn,
        dbeta_nn=np.einsum("ki,ki->k", dbeta_dn, n),
        dw_dn=np.einsum("kj,kj->k", grads[:, 2, :], n),
        div_beta=Jb[:, 0, 0] + Jb[:, 1, 1],
    )


# ----------------------------------------------------------------- exports


def write_spectrum_csv(path, spectrum: Spectrum, mesh: Mesh) -> None:
    params = spectrum.forms.params if spectrum.forms is not None else None
    lines = [f"# {params.describe() if params else 'params=unknown'} mesh={mesh.digest}", "n,gamma,residual"]
    for i, (g, r) in enumerate(zip(spectrum.eigenvalues, spectrum.residuals), start=1):
        lines.append(f"{i},{g:.12g},{r:.3e}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_eigenvectors(path, spectrum: Spectrum, mesh: Mesh) -> None:
    params = spectrum.forms.params if spectrum.forms is not None else None
    header = f"{params.describe() if params else 'params=unknown'} mesh={mesh.digest}\ndof," + ",".join(
        f"v{i}" for i in range(1, len(spectrum) + 1))
    data = np.column_stack([np.arange(spectrum.eigenvectors.shape[0]), spectrum.eigenvectors])
    np.savetxt(path, data, delimiter=",", header=header, fmt=["%d"] + ["%.17g"] * len(spectrum))
