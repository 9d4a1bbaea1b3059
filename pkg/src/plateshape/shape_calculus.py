"""Domain maps, perturbation fields and eigenvalue shape derivatives.

Derivatives are taken at the configuration represented by the given mesh
(the unperturbed map is the identity there), so the pushed-forward field
``zeta`` coincides with ``psi`` evaluated on the mesh boundary.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (BranchAmbiguityError, DegenerateMapError, InvalidArgumentError,
                     InvalidClusterError, NotSimpleError, UndefinedRatioError)
from .mesh import BoundaryTrace, Mesh, boundary_trace, map_mesh
from .rm_fem import (DEFAULT_CLUSTER_TOL, AssembledForms, BoundaryDerivatives, EigenCluster,
                     FeSpace, MaterialParams, Spectrum, assemble_forms, boundary_normal_derivatives,
                     cluster_eigenvalues, energy_terms, mass_form, quadratic_form, solve_smallest)

Array = np.ndarray


# ------------------------------------------------------------------ fields


def _zeros_hess(x):
    return np.zeros((len(x), 2, 2, 2))


@dataclass(frozen=True)
class PerturbationField:
    """Vector field with analytic first (and optionally second) derivatives.

    ``jacobian(x)[k, i, j] = d psi_i / d x_j`` and
    ``hessian(x)[k, i, j, l] = d^2 psi_i / d x_j d x_l``.
    """

    tag: str
    value: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    hessian: Callable[[Array], Array] = _zeros_hess
    unit_delta: float | None = None  # delta(I + psi) when known in closed form

    def __call__(self, x):
        return self.value(np.atleast_2d(np.asarray(x, dtype=float)))

    def normal_component(self, trace: BoundaryTrace) -> Array:
        return np.einsum("ki,ki->k", self(trace.points), trace.normals)

    def scaled(self, c: float) -> "PerturbationField":
        ud = None if self.unit_delta is None else abs(c) * self.unit_delta
        return PerturbationField(f"{c!r}*{self.tag}", lambda x: c * self.value(x),
                                 lambda x: c * self.jacobian(x), lambda x: c * self.hessian(x), ud)


def _const_jac(M):
    M = np.asarray(M, dtype=float)
    return lambda x: np.broadcast_to(M, (len(x), 2, 2)).copy()


def zero_field() -> PerturbationField:
    return PerturbationField("zero", lambda x: np.zeros_like(x), _const_jac(np.zeros((2, 2))), unit_delta=0.0)


def constant_field(c) -> PerturbationField:
    c = np.asarray(c, dtype=float)
    return PerturbationField(f"constant({c[0]!r},{c[1]!r})", lambda x: np.broadcast_to(c, x.shape).copy(),
                             _const_jac(np.zeros((2, 2))), unit_delta=0.0)


def linear_field(M, tag: str | None = None) -> PerturbationField:
    M = np.asarray(M, dtype=float)
    return PerturbationField(tag or f"linear{M.ravel().tolist()}", lambda x: x @ M.T, _const_jac(M),
                             unit_delta=float(np.abs(M).max()))


def position_field() -> PerturbationField:
    """psi(x) = x, the dilation direction."""
    return linear_field(np.eye(2), "x")


def elliptical_field() -> PerturbationField:
    """psi(x) = (x_1, -x_2)."""
    return linear_field(np.diag([1.0, -1.0]), "elliptical")


def rotation_field() -> PerturbationField:
    """psi(x) = (-x_2, x_1); tangential on circles about the origin."""
    return linear_field(np.array([[0.0, -1.0], [1.0, 0.0]]), "rotation")


def sine_field() -> PerturbationField:
    """psi(x) = (sin x_2, 0)."""
    def jac(x):
        J = np.zeros((len(x), 2, 2))
        J[:, 0, 1] = np.cos(x[:, 1])
        return J

    def hess(x):
        H = np.zeros((len(x), 2, 2, 2))
        H[:, 0, 1, 1] = -np.sin(x[:, 1])
        return H

    return PerturbationField("sine", lambda x: np.column_stack([np.sin(x[:, 1]), np.zeros(len(x))]),
                             jac, hess, unit_delta=1.0)


def _gauss(x, center, width):
    d = x - np.asarray(center, dtype=float)
    g = np.exp(-np.einsum("ki,ki->k", d, d) / width ** 2)
    dg = -2.0 * d / width ** 2 * g[:, None]
    ddg = g[:, None, None] * (4.0 * np.einsum("ki,kj->kij", d, d) / width ** 4 - 2.0 * np.eye(2) / width ** 2)
    return g, dg, ddg


def radial_bump_field(center=(1.0, 0.0), width: float = 0.5) -> PerturbationField:
    """psi(x) = exp(-|x - c|^2 / w^2) x: a localised push along the position vector."""
    def value(x):
        g, _, _ = _gauss(x, center, width)
        return g[:, None] * x

    def jac(x):
        g, dg, _ = _gauss(x, center, width)
        return g[:, None, None] * np.eye(2) + np.einsum("ki,kj->kij", x, dg)

    def hess(x):
        _, dg, ddg = _gauss(x, center, width)
        eye = np.eye(2)
        H = np.einsum("kl,ij->kijl", dg, eye) + np.einsum("kj,il->kijl", dg, eye)
        return H + np.einsum("ki,kjl->kijl", x, ddg)

    return PerturbationField(f"radial_bump({center[0]!r},{center[1]!r};{width!r})", value, jac, hess)


def polynomial_field(coeffs, tag: str = "poly2") -> PerturbationField:
    """Quadratic field psi_i = sum_m c[i, m] * (1, x, y, x^2, xy, y^2)[m]."""
    c = np.asarray(coeffs, dtype=float).reshape(2, 6)

    def value(x):
        X, Y = x[:, 0], x[:, 1]
        mono = np.column_stack([np.ones_like(X), X, Y, X * X, X * Y, Y * Y])
        return mono @ c.T

    def jac(x):
        X, Y = x[:, 0], x[:, 1]
        z, o = np.zeros_like(X), np.ones_like(X)
        dx = np.column_stack([z, o, z, 2 * X, Y, z])
        dy = np.column_stack([z, z, o, z, X, 2 * Y])
        return np.stack([dx @ c.T, dy @ c.T], axis=-1)

    def hess(x):
        H = np.zeros((len(x), 2, 2, 2))
        for i in range(2):
            H[:, i, 0, 0] = 2 * c[i, 3]
            H[:, i, 0, 1] = H[:, i, 1, 0] = c[i, 4]
            H[:, i, 1, 1] = 2 * c[i, 5]
        return H

    return PerturbationField(tag, value, jac, hess)


# ------------------------------------------------------------------- maps


@dataclass(frozen=True)
class ParametricMap:
    """Closed-form diffeomorphism x -> phi(x) with analytic derivatives.

    ``jacobian(x)[k, i, j] = d phi_i / d x_j``; ``hessian(x)[k, i, j, l]``
    holds the second derivatives.  ``exact_delta`` is the closed-form value of
    the vicinity measure when the family provides one.
    """

    tag: str
    func: Callable[[Array], Array]
    jacobian: Callable[[Array], Array]
    hessian: Callable[[Array], Array] = _zeros_hess
    exact_delta: float | None = None

    def __call__(self, x):
        return self.func(np.atleast_2d(np.asarray(x, dtype=float)))


def identity_map() -> ParametricMap:
    return ParametricMap("identity", lambda x: x.copy(), _const_jac(np.eye(2)), exact_delta=0.0)


def translation(c) -> ParametricMap:
    c = np.asarray(c, dtype=float)
    return ParametricMap(f"translation({c[0]!r},{c[1]!r})", lambda x: x + c, _const_jac(np.eye(2)),
                         exact_delta=0.0)


def linear_map(M, tag: str) -> ParametricMap:
    M = np.asarray(M, dtype=float)
    return ParametricMap(tag, lambda x: x @ M.T, _const_jac(M), exact_delta=float(np.abs(M - np.eye(2)).max()))


def dilation(a: float) -> ParametricMap:
    return linear_map((1.0 + a) * np.eye(2), f"dilation({a!r})")


def rotation_map(angle: float) -> ParametricMap:
    c, s = math.cos(angle), math.sin(angle)
    m = linear_map([[c, -s], [s, c]], f"rotation({angle!r})")
    return m


def shear_map(s: float) -> ParametricMap:
    return linear_map([[1.0, s], [0.0, 1.0]], f"shear({s!r})")


def elliptical_map(e: float) -> ParametricMap:
    return linear_map(np.diag([1.0 + e, 1.0 - e]), f"elliptical({e!r})")


def perturbation_map(psi: PerturbationField, eps: float) -> ParametricMap:
    """phi_eps = I + eps * psi."""
    ud = None if psi.unit_delta is None else abs(eps) * psi.unit_delta
    return ParametricMap(f"I+{eps!r}*{psi.tag}", lambda x: x + eps * psi.value(x),
                         lambda x: np.eye(2) + eps * psi.jacobian(x), lambda x: eps * psi.hessian(x), ud)


def normal_bump_map(center=(1.0, 0.0), width: float = 0.5, amplitude: float = 0.05) -> ParametricMap:
    m = perturbation_map(radial_bump_field(center, width), amplitude)
    return ParametricMap(f"normal_bump({center[0]!r},{center[1]!r};{width!r};{amplitude!r})",
                         m.func, m.jacobian, m.hessian)


def compose(outer: ParametricMap, inner: ParametricMap) -> ParametricMap:
    """outer o inner, with chain-rule derivatives."""
    def jac(x):
        return np.einsum("kim,kmj->kij", outer.jacobian(inner.func(x)), inner.jacobian(x))

    def hess(x):
        y = inner.func(x)
        J1, H1 = inner.jacobian(x), inner.hessian(x)
        return (np.einsum("kimn,kma,knb->kiab", outer.hessian(y), J1, J1)
                + np.einsum("kim,kmab->kiab", outer.jacobian(y), H1))

    return ParametricMap(f"{outer.tag}o{inner.tag}", lambda x: outer.func(inner.func(x)), jac, hess)


def bbox_grid(points: Array, n: int = 200) -> Array:
    lo, hi = points.min(axis=0), points.max(axis=0)
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n), indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def delta_measure(phi: ParametricMap, samples: Array | None = None) -> float:
    """Largest first or second derivative entry of phi(x) - x.

    With ``samples`` the suprema are taken over the sample set; without, the
    family's closed-form value is returned.
    """
    if samples is None:
        if phi.exact_delta is None:
            raise InvalidArgumentError(f"map {phi.tag} has no closed-form delta; pass samples")
        return float(phi.exact_delta)
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if len(x) == 0:
        raise InvalidArgumentError("delta_measure needs at least one sample point")
    first = np.abs(phi.jacobian(x) - np.eye(2)).max()
    second = np.abs(phi.hessian(x)).max()
    return float(max(first, second))


# --------------------------------------------------------- field transform


@dataclass(frozen=True, eq=False)
class PushedField:
    """Values of C_phi(beta, w) at mapped quadrature points of phi(mesh)."""

    points: Array
    weights: Array
    beta: Array
    grad_beta: Array  # d beta_i / d y_j
    w: Array
    grad_w: Array
    boundary_max: float

    def energy_terms(self) -> dict:
        gb = self.grad_beta
        shear = self.grad_w - self.beta
        wq = self.weights
        return {
            "grad": float(wq @ np.einsum("kij,kij->k", gb, gb)),
            "div": float(wq @ (gb[:, 0, 0] + gb[:, 1, 1]) ** 2),
            "shear": float(wq @ np.einsum("ki,ki->k", shear, shear)),
            "w2": float(wq @ self.w ** 2),
            "beta2": float(wq @ np.einsum("ki,ki->k", self.beta, self.beta)),
        }


def push_forward(space: FeSpace, phi: ParametricMap, coeffs) -> PushedField:
    """Apply (beta, w) -> ((beta grad(phi)^-1), w) o phi^(-1).

    Fields are evaluated at phi(x_q) for the mesh quadrature points x_q, with
    weights w_q |det grad phi(x_q)|, i.e. the exact change of variables.
    """
    xq, wq, vals, grads, _ = space.evaluate_at_quadrature(coeffs)
    A = phi.jacobian(xq)
    det = np.linalg.det(A)
    if np.any(~np.isfinite(det)) or np.any(np.abs(det) < 1e-14):
        raise DegenerateMapError(f"{phi.tag}: singular Jacobian at an evaluation point")
    if np.any(det < 0):
        raise DegenerateMapError(f"{phi.tag}: orientation-reversing Jacobian")
    Ainv = np.linalg.inv(A)
    H = phi.hessian(xq)
    dAinv = -np.einsum("kmi,kijp,kjn->kmnp", Ainv, H, Ainv)  # d(Ainv)_mn / dx_p
    beta, gb = vals[:, :2], grads[:, :2, :]
    beta_t = np.einsum("km,kmn->kn", beta, Ainv)
    dbt_dx = np.einsum("kmp,kmn->knp", gb, Ainv) + np.einsum("km,kmnp->knp", beta, dAinv)
    gbt = np.einsum("knp,kpl->knl", dbt_dx, Ainv)
    gwt = np.einsum("kp,kpl->kl", grads[:, 2, :], Ainv)

    trace = boundary_trace(space.mesh, 2)
    tri_ids = space.mesh.boundary_triangles[trace.edge_index]
    bvals, _ = space.evaluate(coeffs, tri_ids, points=trace.points)
    Ab = np.linalg.inv(phi.jacobian(trace.points))
    bmax = float(max(np.abs(np.einsum("km,kmn->kn", bvals[:, :2], Ab)).max(), np.abs(bvals[:, 2]).max()))
    return PushedField(phi(xq), wq * det, beta_t, gbt, vals[:, 2], gwt, bmax)


def form_comparison_ratio(mesh: Mesh, params: MaterialParams, phi: ParametricMap, coeffs,
                          samples: Array | None = None, space: FeSpace | None = None) -> float:
    """|Q_{phi(Omega)}(C_phi u) - Q_Omega(u)| / (Q_Omega(u) delta(phi))."""
    delta = delta_measure(phi, samples if samples is not None or phi.exact_delta is not None
                          else bbox_grid(mesh.nodes))
    if delta == 0:
        raise UndefinedRatioError(f"{phi.tag}: delta(phi) = 0, the ratio is undefined")
    space = space or FeSpace(mesh)
    q0 = quadratic_form(params, energy_terms(space, coeffs))
    q1 = quadratic_form(params, push_forward(space, phi, coeffs).energy_terms())
    return abs(q1 - q0) / (q0 * delta)


def rayleigh_quotient_pushed(space: FeSpace, params: MaterialParams, phi: ParametricMap, coeffs) -> float:
    terms = push_forward(space, phi, coeffs).energy_terms()
    return quadratic_form(params, terms) / mass_form(params, terms)


# ---------------------------------------------------- boundary integrands


def boundary_integrand(params: MaterialParams, d: BoundaryDerivatives) -> Array:
    return (params.bending * np.einsum("ki,ki->k", d.dbeta_dn, d.dbeta_dn)
            + params.divergence * d.dbeta_nn ** 2 + params.shear * d.dw_dn ** 2)


def boundary_bilinear(params: MaterialParams, di: BoundaryDerivatives, dj: BoundaryDerivatives) -> Array:
    return (params.bending * np.einsum("ki,ki->k", di.dbeta_dn, dj.dbeta_dn)
            + params.divergence * di.dbeta_nn * dj.dbeta_nn + params.shear * di.dw_dn * dj.dw_dn)


@dataclass(eq=False)
class ShapeProblem:
    """A mesh with its forms, spectrum and boundary trace, computed once."""

    mesh: Mesh
    params: MaterialParams
    n_eigs: int = 8
    samples_per_edge: int = 3
    shear_rule: str = "full"
    cluster_tol: float = DEFAULT_CLUSTER_TOL
    space: FeSpace = field(init=False)
    forms: AssembledForms = field(init=False)
    spectrum: Spectrum = field(init=False)
    trace: BoundaryTrace = field(init=False)

    def __post_init__(self):
        self.space = FeSpace(self.mesh)
        self.forms = assemble_forms(self.mesh, self.params, shear_rule=self.shear_rule, space=self.space)
        self.spectrum = solve_smallest(self.forms, min(self.n_eigs, self.forms.n_dofs))
        self.trace = boundary_trace(self.mesh, self.samples_per_edge)

    def clusters(self) -> list[EigenCluster]:
        # the last cluster may be cut off by the truncated spectrum
        cl = cluster_eigenvalues(self.spectrum, self.cluster_tol)
        return cl[:-1] if len(cl) > 1 else cl

    def cluster(self, F) -> EigenCluster:
        return validate_cluster(self.spectrum, F, self.cluster_tol)

    def derivatives(self, n: int, basis: Array | None = None) -> BoundaryDerivatives:
        v = self.spectrum.vector(n) if basis is None else basis
        return boundary_normal_derivatives(self.space, v, self.trace)

    def cluster_derivatives(self, cluster: EigenCluster, rotation: Array | None = None):
        V = self.spectrum.eigenvectors[:, [i - 1 for i in cluster.indices]]
        if rotation is not None:
            V = V @ rotation
        return [boundary_normal_derivatives(self.space, V[:, l], self.trace) for l in range(V.shape[1])]


def validate_cluster(spectrum: Spectrum, F, tol: float = DEFAULT_CLUSTER_TOL) -> EigenCluster:
    """Turn an EigenCluster or index collection into a checked maximal cluster."""
    idx = tuple(sorted(F.indices if isinstance(F, EigenCluster) else (int(i) for i in F)))
    vals = spectrum.eigenvalues
    if not idx or idx[0] < 1 or idx[-1] > len(vals):
        raise InvalidClusterError(f"cluster indices {idx} outside the computed spectrum")
    if idx != tuple(range(idx[0], idx[-1] + 1)):
        raise InvalidClusterError(f"cluster indices {idx} are not contiguous")
    group = vals[idx[0] - 1:idx[-1]]
    spread = float((group.max() - group.min()) / group.min())
    if spread > tol:
        raise InvalidClusterError(f"cluster {idx} spread {spread:.2e} exceeds tolerance {tol:.1e}")
    lo, hi = idx[0] - 1, idx[-1] - 1
    if lo > 0 and (vals[lo] - vals[lo - 1]) / vals[lo - 1] <= tol:
        raise InvalidClusterError(f"cluster {idx} is not maximal: gamma_{lo} joins it")
    if hi + 1 < len(vals) and (vals[hi + 1] - vals[hi]) / vals[hi] <= tol:
        raise InvalidClusterError(f"cluster {idx} is not maximal: gamma_{hi + 2} joins it")
    if hi + 1 >= len(vals):
        raise InvalidClusterError(f"cluster {idx} reaches the end of the computed spectrum")
    return EigenCluster(idx, float(group.mean()), spread)


def _problem(mesh, params, problem, n_min, **kw) -> ShapeProblem:
    if problem is not None:
        if problem.mesh is not mesh and problem.mesh.digest != mesh.digest:
            raise InvalidArgumentError("problem was built for a different mesh")
        return problem
    return ShapeProblem(mesh, params, n_eigs=max(n_min + 3, 8), **kw)


# ------------------------------------------------------------ derivatives


def hadamard_derivative(mesh: Mesh, params: MaterialParams, n: int, psi: PerturbationField, *,
                        problem: ShapeProblem | None = None, **kw) -> float:
    """Boundary-integral derivative of the simple eigenvalue gamma_n along I + eps psi."""
    pb = _problem(mesh, params, problem, n, **kw)
    cl = cluster_eigenvalues(pb.spectrum, pb.cluster_tol)
    c = next(c for c in cl if n in c.indices)
    if c.size > 1:
        raise NotSimpleError(f"gamma_{n} belongs to the cluster {c.indices}")
    P = boundary_integrand(params, pb.derivatives(n))
    return float(-pb.trace.weights @ (P * psi.normal_component(pb.trace)))


def elementary_symmetric(values: Sequence[float], s: int) -> float:
    vals = list(values)
    if not (1 <= s <= len(vals)):
        raise InvalidArgumentError(f"s={s} outside 1..{len(vals)}")
    return float(sum(math.prod(c) for c in itertools.combinations(vals, s)))


def symmetric_function_derivative(mesh: Mesh, params: MaterialParams, F, s: int, psi: PerturbationField, *,
                                  problem: ShapeProblem | None = None, **kw) -> float:
    """Differential of the s-th elementary symmetric function of a cluster along psi."""
    idx = F.indices if isinstance(F, EigenCluster) else tuple(F)
    pb = _problem(mesh, params, problem, max(idx), **kw)
    cluster = pb.cluster(F)
    m = cluster.size
    if not (1 <= s <= m):
        raise InvalidArgumentError(f"s={s} outside 1..{m}")
    P = sum(boundary_integrand(params, d) for d in pb.cluster_derivatives(cluster))
    integral = float(pb.trace.weights @ (P * psi.normal_component(pb.trace)))
    return -cluster.gamma ** (s - 1) * math.comb(m - 1, s - 1) * integral


@dataclass(frozen=True, eq=False)
class SplittingMatrix:
    matrix: Array
    eigenvalues: Array


def splitting_matrix(mesh: Mesh, params: MaterialParams, F, psi: PerturbationField, *,
                     problem: ShapeProblem | None = None, rotation: Array | None = None, **kw) -> SplittingMatrix:
    idx = F.indices if isinstance(F, EigenCluster) else tuple(F)
    pb = _problem(mesh, params, problem, max(idx), **kw)
    cluster = pb.cluster(F)
    ders = pb.cluster_derivatives(cluster, rotation)
    zn = psi.normal_component(pb.trace)
    w = pb.trace.weights
    m = cluster.size
    D = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            D[i, j] = -w @ (boundary_bilinear(params, ders[i], ders[j]) * zn)
    D = 0.5 * (D + D.T)
    return SplittingMatrix(D, np.linalg.eigvalsh(D))


# ------------------------------------------------- finite-difference oracle


def perturbed_eigenvalues(mesh: Mesh, params: MaterialParams, psi: PerturbationField, eps: float,
                          count: int, shear_rule: str = "full") -> Array:
    moved = map_mesh(mesh, perturbation_map(psi, eps))
    return solve_smallest(assemble_forms(moved, params, shear_rule=shear_rule), count).eigenvalues


def _members(vals, n, tol):
    return next(c.indices for c in cluster_eigenvalues(vals, tol) if n in c.indices)


def eigen_fd_derivative(mesh: Mesh, params: MaterialParams, n: int, psi: PerturbationField,
                        eps: float = 1e-3, *, count: int | None = None, cluster_tol: float = DEFAULT_CLUSTER_TOL,
                        base: Array | None = None, richardson: bool = False, shear_rule: str = "full") -> float:
    """Central difference of gamma_n along the node maps I +- eps psi (same connectivity)."""
    if not eps > 0:
        raise InvalidArgumentError("eps must be positive")
    count = count or n + 3

    def central(h):
        gp = perturbed_eigenvalues(mesh, params, psi, h, count, shear_rule)
        gm = perturbed_eigenvalues(mesh, params, psi, -h, count, shear_rule)
        mp, mm = _members(gp, n, cluster_tol), _members(gm, n, cluster_tol)
        if base is not None and _members(base, n, cluster_tol) != mp:
            mp = None
        if mp != mm or mp is None:
            raise BranchAmbiguityError(f"cluster membership of gamma_{n} changes across +-{h:g}")
        return (gp[n - 1] - gm[n - 1]) / (2 * h)

    d = central(eps)
    if richardson:
        d2 = central(eps / 2)
        return float((4 * d2 - d) / 3)
    return float(d)


def cluster_sum_fd(mesh: Mesh, params: MaterialParams, F: Sequence[int], psi: PerturbationField,
                   eps: float = 1e-3, s: int = 1, shear_rule: str = "full") -> float:
    """Central difference of the s-th elementary symmetric function of the branches in F."""
    idx = [i - 1 for i in F]
    count = max(F) + 3
    gp = perturbed_eigenvalues(mesh, params, psi, eps, count, shear_rule)[idx]
    gm = perturbed_eigenvalues(mesh, params, psi, -eps, count, shear_rule)[idx]
    return (elementary_symmetric(gp, s) - elementary_symmetric(gm, s)) / (2 * eps)


def branch_fd_slopes(mesh: Mesh, params: MaterialParams, F: Sequence[int], psi: PerturbationField,
                     eps: float = 1e-3, base: Array | None = None, shear_rule: str = "full") -> Array:
    """Derivative estimates of the analytic branches through a multiple eigenvalue.

    Forward slopes (gamma(+eps) - gamma(0)) / eps and backward slopes
    (gamma(0) - gamma(-eps)) / eps are each sorted, then averaged pairwise;
    sorting slopes rather than eigenvalues stays valid when branches cross
    at eps = 0.
    """
    idx = [i - 1 for i in F]
    count = max(F) + 3
    if base is None:
        base = solve_smallest(assemble_forms(mesh, params, shear_rule=shear_rule), count).eigenvalues
    g0 = float(np.mean(np.asarray(base)[idx]))
    gp = perturbed_eigenvalues(mesh, params, psi, eps, count, shear_rule)[idx]
    gm = perturbed_eigenvalues(mesh, params, psi, -eps, count, shear_rule)[idx]
    forward = np.sort((gp - g0) / eps)
    backward = np.sort((g0 - gm) / eps)
    return 0.5 * (forward + backward)


# --------------------------------------------------------------- volume


def volume_derivative(trace: BoundaryTrace, psi: PerturbationField) -> float:
    return float(trace.weights @ psi.normal_component(trace))


def volume_preserving_project(psi: PerturbationField, trace: BoundaryTrace) -> PerturbationField:
    """psi - (V'(psi) / |boundary|) n, with n extended by the nearest boundary sample's normal."""
    c = volume_derivative(trace, psi) / trace.total_length
    tree = cKDTree(trace.points)
    normals = trace.normals

    def value(x):
        _, j = tree.query(x)
        return psi.value(x) - c * normals[j]

    return PerturbationField(f"{psi.tag}-vol", value, psi.jacobian, psi.hessian)


# ------------------------------------------------------ criticality profile


@dataclass(frozen=True, eq=False)
class BoundaryProfile:
    arclength: Array
    values: Array
    weights: Array
    mean: float
    cv: float
    rotation_gap: float = 0.0

    @property
    def l2_deviation(self) -> float:
        return float(np.sqrt(self.weights @ (self.values - self.mean) ** 2))


def _profile_stats(values, weights):
    L = weights.sum()
    mean = float(weights @ values / L)
    std = float(np.sqrt(weights @ (values - mean) ** 2 / L))
    return mean, std / mean if mean != 0 else math.inf


def random_orthogonal(m: int, rng: np.random.Generator) -> Array:
    Qm, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Qm * np.sign(np.diag(R))


def criticality_profile(mesh: Mesh, params: MaterialParams, F, *, problem: ShapeProblem | None = None,
                        seed: int = 0, **kw) -> BoundaryProfile:
    """Cluster-summed boundary integrand, its mean and coefficient of variation.

    The profile depends only on the eigenspace; ``rotation_gap`` records the
    largest change under a random orthogonal change of the cluster basis.
    """
    idx = F.indices if isinstance(F, EigenCluster) else tuple(F)
    pb = _problem(mesh, params, problem, max(idx), **kw)
    cluster = pb.cluster(F)
    values = sum(boundary_integrand(params, d) for d in pb.cluster_derivatives(cluster))
    R = random_orthogonal(cluster.size, np.random.default_rng(seed))
    rotated = sum(boundary_integrand(params, d) for d in pb.cluster_derivatives(cluster, R))
    gap = float(np.abs(rotated - values).max() / np.abs(values).max())
    mean, cv = _profile_stats(values, pb.trace.weights)
    return BoundaryProfile(pb.trace.arclength, values, pb.trace.weights, mean, cv, gap)


def constrained_derivative_bound(profile: BoundaryProfile, gamma: float, m: int, s: int,
                                 zeta_n: Array) -> float:
    """Cauchy-Schwarz bound for |d Gamma^(s)| along a volume-preserving field.

    Since the weighted integral of zeta.n vanishes, only the deviation of the
    profile from its mean contributes: |dGamma| <= gamma^(s-1) C(m-1, s-1)
    ||P - mean||_2 ||zeta.n||_2 = C * CV * ||zeta.n||_2.
    """
    zn_norm = float(np.sqrt(profile.weights @ zeta_n ** 2))
    C = gamma ** (s - 1) * math.comb(m - 1, s - 1) * profile.mean * math.sqrt(profile.weights.sum())
    return C * profile.cv * zn_norm


def write_profile_csv(path, profile: BoundaryProfile, header: str = "") -> None:
    lines = [f"# {header}"] if header else []
    lines.append("arclength,value")
    lines += [f"{a:.12g},{v:.12g}" for a, v in zip(profile.arclength, profile.values)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
