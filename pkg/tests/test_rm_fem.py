import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from plateshape.errors import EmptySpaceError, InvalidArgumentError
from plateshape.mesh import Mesh, boundary_trace, generate_disk, generate_rectangle, map_mesh
from plateshape.oracles import dense_generalized_eig_reference, richardson_extrapolate
from plateshape.rm_fem import (FeSpace, MaterialParams, angular_frequency, assemble_forms,
                               boundary_normal_derivatives, cluster_eigenvalues, energy_terms,
                               korn_identity_residual, mass_form, material_from_engineering, quadratic_form,
                               solve, solve_smallest, write_spectrum_csv)

# dense P2 spectrum of the level-3 unit disk, t=0.1, lam=mu=k=1 (frozen from a dense eigh run)
DISK3_GAMMAS = [24.9802331399, 103.618705038, 103.618705038, 265.982962414, 265.982962414, 342.020286554]
SQUARE16_GAMMAS = [270.103551829, 994.063729058, 994.063729058]


@pytest.fixture(scope="module")
def disk3_forms(disk3, unit_params):
    return assemble_forms(disk3, unit_params)


def test_engineering_conversion_nu_03():
    p = material_from_engineering(1.0, 0.3, 5 / 6, t=0.1)
    assert p.mu == pytest.approx(0.38461538, abs=1e-8)
    assert p.lam == pytest.approx(0.32967033, abs=1e-8)


def test_engineering_conversion_nu_0():
    p = material_from_engineering(1.0, 0.0, 1.0, t=0.1)
    assert (p.mu, p.lam, p.k) == (0.5, 0.0, 1.0)


def test_default_correction_factor():
    assert material_from_engineering(1.0, 0.2, t=0.1).k == pytest.approx(5 / 6)
    assert MaterialParams(t=0.1, lam=1, mu=1).k == pytest.approx(5 / 6)


@pytest.mark.parametrize("nu", [-0.1, 0.5, 0.7])
def test_engineering_rejects_bad_poisson(nu):
    with pytest.raises(InvalidArgumentError):
        material_from_engineering(1.0, nu, t=0.1)


@pytest.mark.parametrize("kw", [dict(t=0), dict(mu=-1), dict(k=0), dict(lam=-0.5)])
def test_material_rejects_nonpositive(kw):
    base = dict(t=0.1, lam=1.0, mu=1.0, k=1.0)
    base.update(kw)
    with pytest.raises(InvalidArgumentError):
        MaterialParams(**base)


def test_angular_frequency_relation():
    assert angular_frequency(400.0, 0.1) == pytest.approx(2.0)


def test_single_triangle_is_empty():
    mesh = Mesh.from_triangles(np.array([[0, 0], [1, 0], [0, 1.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(EmptySpaceError):
        assemble_forms(mesh, MaterialParams(t=0.1, lam=1, mu=1, k=1))


def test_dof_count_excludes_boundary(square8):
    sp_ = FeSpace(square8)
    # a 2n x 2n P2 grid on an n x n cell square has (2n - 1)^2 interior scalar DOFs
    assert sp_.n_dofs == 3 * 15 ** 2


def test_forms_symmetric_and_definite(square8, unit_params):
    f = assemble_forms(square8, unit_params)
    for M in (f.Q, f.B):
        assert abs(M - M.T).max() <= 1e-12 * abs(M).max()
    assert np.linalg.eigvalsh(f.B.toarray()).min() > 0
    assert np.linalg.eigvalsh(f.Q.toarray()).min() > 0


def test_matrix_energy_matches_quadrature(square8, unit_params, rng):
    f = assemble_forms(square8, unit_params)
    v = rng.standard_normal(f.n_dofs)
    terms = energy_terms(f.space, v)
    assert f.energy(v) == pytest.approx(quadratic_form(unit_params, terms), rel=1e-11)
    assert f.mass(v) == pytest.approx(mass_form(unit_params, terms), rel=1e-11)


def test_ritz_value_bounds_first_eigenvalue(unit_params, rng):
    mesh = generate_rectangle(1, 1, 8, 8)
    f = assemble_forms(mesh, unit_params)
    V = rng.standard_normal((f.n_dofs, 10))
    ritz = np.linalg.eigvalsh(np.linalg.solve(V.T @ (f.B @ V), V.T @ (f.Q @ V))).min()
    assert ritz >= solve_smallest(f, 1).gamma(1)


def test_spectrum_contract(square8, unit_params):
    s = solve(square8, unit_params, 6)
    assert np.all(s.eigenvalues > 0)
    assert np.all(np.diff(s.eigenvalues) >= 0)
    G = s.eigenvectors.T @ (s.forms.B @ s.eigenvectors)
    assert np.allclose(G, np.eye(6), atol=1e-8)
    assert np.all(s.residuals < 1e-6 * s.eigenvalues)


def test_permutation_invariance(square8, unit_params, rng):
    f = assemble_forms(square8, unit_params)
    perm = rng.permutation(f.n_dofs)
    P = sp.identity(f.n_dofs, format="csr")[perm]
    g = type(f)(f.space, f.params, (P @ f.Q @ P.T).tocsr(), (P @ f.B @ P.T).tocsr())
    a = solve_smallest(f, 5, method="dense").eigenvalues
    b = solve_smallest(g, 5, method="dense").eigenvalues
    assert np.allclose(a, b, rtol=1e-10)


def test_disk_solver_matches_dense_reference(disk3_forms):
    s = solve_smallest(disk3_forms, 6)
    ref, _ = dense_generalized_eig_reference(disk3_forms.Q.toarray(), disk3_forms.B.toarray())
    assert np.allclose(s.eigenvalues, ref[:6], rtol=1e-8, atol=0)


def test_disk_spectrum_frozen(disk3_forms):
    assert np.allclose(solve_smallest(disk3_forms, 6).eigenvalues, DISK3_GAMMAS, rtol=1e-9)


def test_square_spectrum_frozen(unit_params):
    s = solve(generate_rectangle(1, 1, 16, 16), unit_params, 3)
    assert np.allclose(s.eigenvalues, SQUARE16_GAMMAS, rtol=1e-9)


def test_sparse_and_dense_agree(disk2, unit_params):
    f = assemble_forms(disk2, unit_params)
    d = solve_smallest(f, 6, method="dense")
    s = solve_smallest(f, 6, method="sparse")
    assert np.allclose(d.eigenvalues, s.eigenvalues, rtol=1e-10)
    # same subspace for the simple first mode, same sign convention
    assert np.allclose(d.vector(1), s.vector(1), atol=1e-7)


def test_solver_rejects_too_many(square8, unit_params):
    f = assemble_forms(square8, unit_params)
    with pytest.raises(InvalidArgumentError):
        solve_smallest(f, f.n_dofs + 1)
    with pytest.raises(InvalidArgumentError):
        solve_smallest(f, 0)


def test_cluster_examples():
    cl = cluster_eigenvalues([1.0, 1.0000001, 3.0], 1e-3)
    assert [c.indices for c in cl] == [(1, 2), (3,)]
    assert [c.indices for c in cluster_eigenvalues([1.0, 2.0, 4.0])] == [(1,), (2,), (3,)]
    with pytest.raises(InvalidArgumentError):
        cluster_eigenvalues([1.0], 0)


def test_disk_rotational_pairs_cluster(disk3_forms):
    cl = cluster_eigenvalues(solve_smallest(disk3_forms, 6))
    assert [c.indices for c in cl] == [(1,), (2, 3), (4, 5), (6,)]
    assert all(c.spread < 1e-3 for c in cl)


@given(vals=st.lists(st.floats(0.1, 100), min_size=1, max_size=12), tol=st.floats(1e-4, 0.2))
def test_clusters_partition_sorted_values(vals, tol):
    v = np.sort(vals)
    cl = cluster_eigenvalues(v, tol)
    flat = [i for c in cl for i in c.indices]
    assert flat == list(range(1, len(v) + 1))
    for a, b in zip(cl, cl[1:]):
        assert (v[b.indices[0] - 1] - v[a.indices[-1] - 1]) / v[a.indices[-1] - 1] > tol


def test_zero_vector_has_zero_normal_derivatives(disk2):
    space = FeSpace(disk2)
    d = boundary_normal_derivatives(space, np.zeros(space.n_dofs), boundary_trace(disk2))
    assert not np.any(d.dbeta_dn) and not np.any(d.dw_dn)


def test_first_disk_mode_normal_derivative_nearly_constant(disk3, unit_params):
    # midpoint samples: the mean of dw/dn is O(t^2) on a clamped edge, so off-midpoint P2 noise dominates
    s = solve(disk3, unit_params, 1)
    tr = boundary_trace(disk3, 1)
    dw = boundary_normal_derivatives(s.forms.space, s.vector(1), tr).dw_dn
    w = tr.weights
    mean = w @ dw / w.sum()
    cv = math.sqrt(w @ (dw - mean) ** 2 / w.sum()) / abs(mean)
    assert cv < 0.05


def test_divergence_matches_normal_normal_derivative_under_refinement(unit_params):
    gaps = []
    for level in (2, 3):
        mesh = generate_disk(1, level)
        s = solve(mesh, unit_params, 1)
        d = boundary_normal_derivatives(s.forms.space, s.vector(1), boundary_trace(mesh))
        gaps.append(np.max(np.abs(d.div_beta - d.dbeta_nn)) / np.max(np.abs(d.dbeta_nn)))
    assert gaps[1] < gaps[0]


def test_trace_mesh_mismatch(disk2, disk3):
    space = FeSpace(disk2)
    with pytest.raises(InvalidArgumentError):
        boundary_normal_derivatives(space, np.zeros(space.n_dofs), boundary_trace(disk3))


def test_korn_zero_field(square8):
    z = np.zeros(FeSpace(square8).n_dofs)
    assert korn_identity_residual(square8, z, z) == 0.0


def test_korn_random_sweep(rng):
    mesh = generate_rectangle(1, 1, 4, 4)
    space = FeSpace(mesh)
    worst = 0.0
    for _ in range(100):
        a, b = rng.standard_normal((2, space.n_dofs))
        scale = h1(space, a) * h1(space, b)
        worst = max(worst, korn_identity_residual(mesh, a, b, space) / scale)
    assert worst < 1e-10


def h1(space, v):
    from plateshape.rm_fem import h1_seminorm_beta
    return h1_seminorm_beta(space, v)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_korn_identity_property(seed):
    mesh = generate_rectangle(1.3, 0.8, 3, 3)
    space = FeSpace(mesh)
    a, b = np.random.default_rng(seed).standard_normal((2, space.n_dofs))
    assert korn_identity_residual(mesh, a, b, space) < 1e-10 * h1(space, a) * h1(space, b)


@given(t=st.floats(0.05, 0.5), lam=st.floats(0, 5), mu=st.floats(0.1, 5))
def test_stiffness_coercive_property(t, lam, mu):
    f = assemble_forms(generate_rectangle(1, 1, 3, 3), MaterialParams(t=t, lam=lam, mu=mu, k=5 / 6))
    assert np.linalg.eigvalsh(f.Q.toarray()).min() > 0


def test_translation_invariance(disk2, unit_params):
    a = solve(disk2, unit_params, 5).eigenvalues
    b = solve(map_mesh(disk2, lambda p: p + np.array([3.0, -2.0])), unit_params, 5).eigenvalues
    assert np.allclose(a, b, rtol=1e-10)


def test_square_quarter_turn_invariance(square8, unit_params):
    rot = map_mesh(square8, lambda p: np.column_stack([-p[:, 1], p[:, 0]]))
    assert np.allclose(solve(square8, unit_params, 6).eigenvalues, solve(rot, unit_params, 6).eigenvalues,
                       rtol=1e-10)


def test_inclusion_monotonicity(unit_params):
    big = solve(generate_disk(1.2, 2), unit_params, 5).eigenvalues
    small = solve(generate_disk(1.0, 2), unit_params, 5).eigenvalues
    assert np.all(big <= small * 1.01)


def test_mesh_convergence_and_richardson(unit_params):
    g = [solve(generate_disk(1, k), unit_params, 1).gamma(1) for k in (1, 2, 3)]
    d1, d2 = abs(g[1] - g[0]), abs(g[2] - g[1])
    assert d2 < d1
    rate = math.log2(d1 / d2)
    assert rate > 0
    assert abs(richardson_extrapolate(g[1], g[2], 2, rate) - g[2]) / g[2] < 0.01


def test_spectrum_csv_header(tmp_path, square8, unit_params):
    s = solve(square8, unit_params, 3)
    path = tmp_path / "s.csv"
    write_spectrum_csv(path, s, square8)
    lines = path.read_text().splitlines()
    assert square8.digest in lines[0] and "mu=1.0" in lines[0]
    assert lines[1] == "n,gamma,residual"
    assert len(lines) == 5
