"""The numerical studies behind each CLI subcommand.

Every study returns a ``Table``; the CLI only adds headers and writes files.
All studies are deterministic given the config (the seed feeds the only
random draws: test fields and basis rotations).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import atlas_geometry as ag
from . import shape_calculus as sc
from .config import ExperimentConfig
from .errors import InvalidArgumentError
from .mesh import Mesh, generate_disk, generate_rectangle, map_mesh
from .oracles import clamped_plate_disk_eigenvalues
from .rm_fem import MaterialParams, angular_frequency, assemble_forms, cluster_eigenvalues, solve_smallest


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    tests: str = ""
    mesh_digest: str = ""
    extra: dict = field(default_factory=dict)  # file stem -> Table
    notes: list = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match the columns")
        self.rows.append(values)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def square_cells(refine_level: int) -> int:
    return 2 ** (refine_level + 1)


def build_mesh(cfg: ExperimentConfig, refine_level: int | None = None) -> Mesh:
    d = cfg.domain
    level = d.refine_level if refine_level is None else refine_level
    if d.kind == "disk":
        return generate_disk(d.radius, level)
    if d.kind == "square":
        n = square_cells(level)
        return generate_rectangle(d.size, d.size, n, n)
    return ag.domain_to_mesh(ag.read_atlas_domain(d.path), level)


def centred(mesh: Mesh) -> Mesh:
    """Translate so the area centroid is at the origin (dilations then act symmetrically)."""
    a = mesh.areas()
    c = (mesh.nodes[mesh.triangles].mean(axis=1) * a[:, None]).sum(axis=0) / a.sum()
    return map_mesh(mesh, lambda p: p - c)


FIELD_NAMES = ("x", "radial_bump", "elliptical", "rotation", "sine", "zero")


def make_field(tag: str, rng: np.random.Generator | None = None) -> sc.PerturbationField:
    if tag == "x":
        return sc.position_field()
    if tag == "radial_bump":
        return sc.radial_bump_field((1.0, 0.0), 0.5)
    if tag == "elliptical":
        return sc.elliptical_field()
    if tag == "rotation":
        return sc.rotation_field()
    if tag == "sine":
        return sc.sine_field()
    if tag == "zero":
        return sc.zero_field()
    if tag == "random_poly":
        if rng is None:
            raise InvalidArgumentError("random_poly needs a seeded generator")
        return sc.polynomial_field(rng.standard_normal(12) * 0.5, "random_poly")
    raise InvalidArgumentError(f"unknown perturbation field {tag!r}; known: {FIELD_NAMES + ('random_poly',)}")


def make_map(family: str, a: float) -> sc.ParametricMap:
    maps = {"dilation": sc.dilation, "shear": sc.shear_map, "elliptical": sc.elliptical_map}
    if family == "normal_bump":
        return sc.normal_bump_map((1.0, 0.0), 0.5, a)
    if family not in maps:
        raise InvalidArgumentError(f"unknown map family {family!r}")
    return maps[family](a)


def rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b != 0 else (0.0 if a == 0 else math.inf)


# ----------------------------------------------------------------- studies


def run_spectrum(cfg: ExperimentConfig) -> Table:
    mesh = build_mesh(cfg)
    params = cfg.material.params()
    spec = solve_smallest(assemble_forms(mesh, params, shear_rule=cfg.shear_rule), cfg.n_eigs)
    tab = Table(["n", "gamma", "omega", "residual"], tests="discrete clamped-plate spectrum",
                mesh_digest=mesh.digest)
    for i, (g, r) in enumerate(zip(spec.eigenvalues, spec.residuals), start=1):
        tab.add(i, g, float(angular_frequency(g, params.t)), r)
    return tab


def stability_rows(mesh: Mesh, params: MaterialParams, family: str, amplitudes, n_eigs: int,
                   shear_rule: str = "full", domain: str = ""):
    """|gamma_n[phi_a(Omega)] - gamma_n[Omega]| / (gamma_n delta(phi_a)) for a map family sweep."""
    forms = assemble_forms(mesh, params, shear_rule=shear_rule)
    base = solve_smallest(forms, n_eigs)
    rows = []
    for a in amplitudes:
        phi = make_map(family, a)
        delta = sc.delta_measure(phi, None if phi.exact_delta is not None else sc.bbox_grid(mesh.nodes))
        moved = solve_smallest(assemble_forms(map_mesh(mesh, phi), params, shear_rule=shear_rule),
                               n_eigs).eigenvalues
        form_ratio = sc.form_comparison_ratio(mesh, params, phi, base.vector(1), space=forms.space)
        for n in range(1, n_eigs + 1):
            g0, g1 = base.gamma(n), float(moved[n - 1])
            rows.append((domain, a, delta, n, g0, g1, abs(g1 - g0) / (g0 * delta), form_ratio))
    return rows


def run_stability(cfg: ExperimentConfig) -> Table:
    mesh = centred(build_mesh(cfg))
    tab = Table(["domain", "amplitude", "delta", "n", "gamma", "gamma_mapped", "ratio", "form_ratio"],
                tests="spectral stability under diffeomorphisms, ratio |dgamma|/(gamma delta)",
                mesh_digest=mesh.digest)
    for row in stability_rows(mesh, cfg.material.params(), cfg.family, cfg.amplitudes, cfg.n_eigs,
                              cfg.shear_rule, cfg.domain.kind):
        tab.add(*row)
    return tab


SINE_TOP_CHART = ag.Chart(0.0, 1.0, 0.0, 1.6)
SINE_TOP_RHO = 0.25
SINE_TOP_GRID = 257  # contains x = 1/4, where sin(2 pi x) peaks


def sine_top_domain(d: float) -> ag.AtlasDomain:
    return ag.graph_domain(SINE_TOP_CHART, lambda x: 1.0 + d * np.sin(2 * np.pi * x), SINE_TOP_RHO,
                           SINE_TOP_GRID, M=2 * np.pi * max(d, 1e-300))


def atlas_stability_rows(params: MaterialParams, amplitudes, n_eigs: int, resolution: int,
                         shear_rule: str = "full"):
    base_dom = sine_top_domain(0.0)
    base_mesh = ag.domain_to_mesh(base_dom, resolution)
    base = solve_smallest(assemble_forms(base_mesh, params, shear_rule=shear_rule), n_eigs).eigenvalues
    rows = []
    for d in amplitudes:
        dom = sine_top_domain(d)
        dA = ag.atlas_distance(base_dom, dom)
        _, hp = ag.boundary_hausdorff(base_dom, dom)
        g = solve_smallest(assemble_forms(ag.domain_to_mesh(dom, resolution), params, shear_rule=shear_rule),
                           n_eigs).eigenvalues
        for n in range(1, n_eigs + 1):
            g0, g1 = float(base[n - 1]), float(g[n - 1])
            rows.append((d, dA, hp, n, g0, g1, abs(g1 - g0) / (max(g0, g1) * dA)))
    return rows, base_mesh.digest


def run_atlas_stability(cfg: ExperimentConfig) -> Table:
    tab = Table(["amplitude", "atlas_distance", "hausdorff", "n", "gamma", "gamma_perturbed", "ratio"],
                tests="spectral stability under atlas-distance perturbations, ratio |dgamma|/(max gamma d_A)")
    res = square_cells(cfg.domain.refine_level)
    rows, digest = atlas_stability_rows(cfg.material.params(), cfg.amplitudes, cfg.n_eigs, res, cfg.shear_rule)
    tab.mesh_digest = digest
    for r in rows:
        tab.add(*r)
    return tab


DERIV_COLUMNS = ["quantity", "n_or_F", "s", "psi_tag", "value", "fd_value", "rel_err"]


def _fmt_F(indices) -> str:
    return "{" + " ".join(str(i) for i in indices) + "}"


def _problem(cfg: ExperimentConfig, mesh: Mesh | None = None) -> sc.ShapeProblem:
    mesh = mesh or build_mesh(cfg)
    return sc.ShapeProblem(mesh, cfg.material.params(), n_eigs=cfg.n_eigs + 3, shear_rule=cfg.shear_rule,
                           cluster_tol=cfg.cluster_tol)


def _clusters(pb: sc.ShapeProblem, n_eigs: int):
    return [c for c in cluster_eigenvalues(pb.spectrum, pb.cluster_tol) if c.indices[-1] <= n_eigs
            and c.indices[-1] < len(pb.spectrum)]


def run_hadamard(cfg: ExperimentConfig) -> Table:
    pb = _problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    tab = Table(list(DERIV_COLUMNS), tests="boundary-integral derivative of a simple eigenvalue vs central FD",
                mesh_digest=pb.mesh.digest)
    simple = [c.indices[0] for c in _clusters(pb, cfg.n_eigs) if c.size == 1]
    for tag in cfg.fields:
        psi = make_field(tag, rng)
        for n in simple:
            val = sc.hadamard_derivative(pb.mesh, pb.params, n, psi, problem=pb)
            fd = sc.eigen_fd_derivative(pb.mesh, pb.params, n, psi, cfg.eps, shear_rule=cfg.shear_rule,
                                        cluster_tol=cfg.cluster_tol)
            tab.add("hadamard", str(n), 1, tag, val, fd, rel(val, fd))
    return tab


def run_gamma_deriv(cfg: ExperimentConfig) -> Table:
    pb = _problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    tab = Table(list(DERIV_COLUMNS), tests="derivative of elementary symmetric functions of clusters vs FD",
                mesh_digest=pb.mesh.digest)
    for tag in cfg.fields:
        psi = make_field(tag, rng)
        for c in _clusters(pb, cfg.n_eigs):
            for s in range(1, c.size + 1):
                val = sc.symmetric_function_derivative(pb.mesh, pb.params, c, s, psi, problem=pb)
                fd = sc.cluster_sum_fd(pb.mesh, pb.params, c.indices, psi, cfg.eps, s, cfg.shear_rule)
                tab.add("gamma_deriv", _fmt_F(c.indices), s, tag, val, fd, rel(val, fd))
    return tab


def splitting_rows(pb: sc.ShapeProblem, F, psi: sc.PerturbationField, tag: str, eps: float,
                   shear_rule: str = "full"):
    D = sc.splitting_matrix(pb.mesh, pb.params, F, psi, problem=pb)
    slopes = sc.branch_fd_slopes(pb.mesh, pb.params, F.indices, psi, eps, base=pb.spectrum.eigenvalues,
                                 shear_rule=shear_rule)
    sum_fd = sc.cluster_sum_fd(pb.mesh, pb.params, F.indices, psi, eps, 1, shear_rule)
    scale = max(abs(sum_fd), float(np.abs(D.eigenvalues).max()), float(np.abs(slopes).max()))
    rows = []
    for k, (ev, sl) in enumerate(zip(D.eigenvalues, slopes), start=1):
        err = abs(ev - sl) / max(abs(sl), 1e-300) if scale > 0 else 0.0
        rows.append((f"eig_D_{k}", _fmt_F(F.indices), 1, tag, float(ev), float(sl), err))
    tr = float(np.trace(D.matrix))
    rows.append(("trace_D", _fmt_F(F.indices), 1, tag, tr, sum_fd, abs(tr - sum_fd) / scale if scale > 0 else 0.0))
    return rows


def run_splitting(cfg: ExperimentConfig) -> Table:
    pb = _problem(cfg)
    rng = np.random.default_rng(cfg.seed)
    tab = Table(list(DERIV_COLUMNS), tests="splitting-matrix eigenvalues vs branch FD slopes of a multiple eigenvalue",
                mesh_digest=pb.mesh.digest)
    tab.notes.append("trace_D rel_err is normalised by max(|FD sum|, max|eig D|, max|slope|)")
    for tag in cfg.fields:
        psi = make_field(tag, rng)
        for c in _clusters(pb, cfg.n_eigs):
            if c.size > 1:
                for r in splitting_rows(pb, c, psi, tag, cfg.eps, cfg.shear_rule):
                    tab.add(*r)
    return tab


def criticality_rows(pb: sc.ShapeProblem, n_eigs: int, seed: int, fields=("elliptical", "radial_bump", "sine")):
    rng = np.random.default_rng(seed)
    test_fields = [make_field(t) for t in fields] + [make_field("random_poly", rng)]
    rows, profiles, bounds = [], {}, []
    for c in _clusters(pb, n_eigs):
        prof = sc.criticality_profile(pb.mesh, pb.params, c, problem=pb, seed=seed)
        profiles[c.indices] = prof
        rows.append((_fmt_F(c.indices), c.gamma, prof.mean, prof.cv, prof.rotation_gap))
        for psi in test_fields:
            proj = sc.volume_preserving_project(psi, pb.trace)
            zn = proj.normal_component(pb.trace)
            for s in range(1, c.size + 1):
                val = sc.symmetric_function_derivative(pb.mesh, pb.params, c, s, proj, problem=pb)
                bound = sc.constrained_derivative_bound(prof, c.gamma, c.size, s, zn)
                bounds.append((_fmt_F(c.indices), s, psi.tag, val, bound))
    return rows, profiles, bounds


def run_ball_criticality(cfg: ExperimentConfig) -> Table:
    levels = cfg.refine_levels or (cfg.domain.refine_level,)
    tab = Table(["refine_level", "F", "gamma", "mean", "cv", "rotation_gap"],
                tests="constancy of the cluster boundary profile on the ball (volume-constrained criticality)")
    btab = Table(["refine_level", "F", "s", "psi_tag", "derivative", "bound"],
                 tests="constrained derivative bounded by C * CV * ||zeta.n||")
    digests = []
    for level in levels:
        pb = _problem(cfg, build_mesh(cfg, level))
        digests.append(pb.mesh.digest)
        rows, profiles, bounds = criticality_rows(pb, cfg.n_eigs, cfg.seed)
        for r in rows:
            tab.add(level, *r)
        for b in bounds:
            btab.add(level, *b)
        for idx, prof in profiles.items():
            ptab = Table(["arclength", "value"], tests="cluster boundary profile", mesh_digest=pb.mesh.digest)
            for a, v in zip(prof.arclength, prof.values):
                ptab.add(a, v)
            tab.extra[f"profile_L{level}_F{'-'.join(map(str, idx))}"] = ptab
    tab.mesh_digest = btab.mesh_digest = ",".join(digests)
    tab.extra["bounds"] = btab
    return tab


def biharmonic_rows(radius: float, refine_level: int, thicknesses,
                    lam: float, mu: float, k: float, shear_rule: str = "reduced"):
    mesh = generate_disk(radius, refine_level)
    rows = []
    for t in thicknesses:
        params = MaterialParams(t=t, lam=lam, mu=mu, k=k)
        oracle = clamped_plate_disk_eigenvalues(radius, params, 1)[0]
        g = solve_smallest(assemble_forms(mesh, params, shear_rule=shear_rule), 1).gamma(1)
        rows.append((t, g, oracle.kappa, oracle.gamma0, (g - oracle.gamma0) / oracle.gamma0))
    return rows, mesh.digest


def run_biharmonic_limit(cfg: ExperimentConfig) -> Table:
    if cfg.domain.kind != "disk":
        raise InvalidArgumentError("biharmonic-limit runs on a disk domain")
    p = cfg.material.params()
    tab = Table(["t", "gamma1", "kappa1", "gamma0", "rel_gap"],
                tests="thin-plate limit of the first eigenvalue vs the clamped disk Bessel oracle")
    rows, digest = biharmonic_rows(cfg.domain.radius, cfg.domain.refine_level, cfg.thicknesses,
                                   p.lam, p.mu, p.k, cfg.shear_rule)
    tab.mesh_digest = digest
    for r in rows:
        tab.add(*r)
    return tab


RUNNERS = {
    "spectrum": run_spectrum,
    "stability": run_stability,
    "atlas-stability": run_atlas_stability,
    "hadamard": run_hadamard,
    "gamma-deriv": run_gamma_deriv,
    "splitting": run_splitting,
    "ball-criticality": run_ball_criticality,
    "biharmonic-limit": run_biharmonic_limit,
}


def run_experiment(cfg: ExperimentConfig) -> Table:
    return RUNNERS[cfg.experiment](cfg)
