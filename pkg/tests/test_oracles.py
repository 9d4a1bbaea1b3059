import numpy as np
import pytest
from hypothesis import given, strategies as st

from plateshape.errors import InvalidArgumentError, OutOfRangeError
from plateshape.oracles import (bessel_i, bessel_j, biharmonic_coefficient, clamped_disk_characteristic,
                                clamped_disk_roots, clamped_plate_disk_eigenvalues, dense_generalized_eig_reference,
                                expand_multiplicities, richardson_extrapolate, write_oracle_csv)
from plateshape.rm_fem import MaterialParams, assemble_forms, solve_smallest
from plateshape.mesh import generate_disk

# roots of J_m I_{m+1} + I_m J_{m+1}, computed independently with scipy.special and brentq
FROZEN_ROOTS = {
    0: [3.1962206165825413, 6.306437047688424],
    1: [4.610899879049056, 7.799273800811231],
    2: [5.905678235420523, 9.19688259963532],
    3: [7.14353102350484, 10.536669866589634],
}

UNIT = MaterialParams(t=0.1, lam=1.0, mu=1.0, k=1.0)


def test_bessel_known_values():
    assert bessel_j(0, 0.0) == 1.0 and bessel_j(3, 0.0) == 0.0
    assert bessel_i(0, 0.0) == 1.0
    # first zero of J_0
    assert abs(bessel_j(0, 2.404825557695773)) < 1e-13
    assert bessel_i(1, 1.0) == pytest.approx(0.5651591039924851, rel=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_bessel_recurrence(m):
    for x in np.linspace(0.5, 12, 47):
        assert abs(bessel_j(m - 1, x) + bessel_j(m + 1, x) - 2 * m / x * bessel_j(m, x)) < 1e-10
        # modified recurrence I_{m-1} - I_{m+1} = (2m/x) I_m, relative to the magnitude
        r = bessel_i(m - 1, x) - bessel_i(m + 1, x) - 2 * m / x * bessel_i(m, x)
        assert abs(r) < 1e-12 * bessel_i(m - 1, x)


def test_bessel_out_of_range():
    with pytest.raises(OutOfRangeError):
        bessel_j(0, 25.0)


def test_first_root_bracket_and_value():
    f3, f35 = clamped_disk_characteristic(0, 3.0), clamped_disk_characteristic(0, 3.5)
    assert f3 * f35 < 0
    k = clamped_disk_roots(0, 1)[0]
    assert 3.0 < k < 3.5
    assert round(k, 5) == 3.19622


@pytest.mark.parametrize("m", sorted(FROZEN_ROOTS))
def test_roots_match_independent_values(m):
    assert np.allclose(clamped_disk_roots(m, 2), FROZEN_ROOTS[m], rtol=0, atol=1e-9)


@pytest.mark.parametrize("m", [0, 1, 4])
def test_roots_increase_and_bracket(m):
    roots = clamped_disk_roots(m, 3)
    assert all(b > a for a, b in zip(roots, roots[1:]))
    for r in roots:
        assert clamped_disk_characteristic(m, r - 1e-6) * clamped_disk_characteristic(m, r + 1e-6) < 0


def test_root_count_grows_with_threshold():
    counts = [sum(1 for m in range(6) for r in clamped_disk_roots(m, 3) if r < T) for T in (4, 6, 8, 10, 12)]
    assert counts == sorted(counts)


def test_eigenvalue_coefficient_and_first_value():
    assert biharmonic_coefficient(UNIT) == pytest.approx(0.25)
    modes = clamped_plate_disk_eigenvalues(1.0, UNIT, 1)
    assert modes[0].gamma0 == pytest.approx(modes[0].kappa ** 4 / 4, rel=1e-15)
    assert modes[0].gamma0 == pytest.approx(26.0908, abs=1e-4)


def test_radius_scaling():
    a = expand_multiplicities(clamped_plate_disk_eigenvalues(1.0, UNIT, 8))
    b = expand_multiplicities(clamped_plate_disk_eigenvalues(2.0, UNIT, 8))
    assert np.allclose(b, a / 16, rtol=1e-14)


def test_multiplicities():
    vals = expand_multiplicities(clamped_plate_disk_eigenvalues(1.0, UNIT, 6))[:6]
    assert vals[1] == vals[2] and vals[3] == vals[4] and vals[0] < vals[1] < vals[3] < vals[5]
    roots = {m: FROZEN_ROOTS[m] for m in FROZEN_ROOTS}
    expect = sorted([roots[0][0]] + [roots[1][0]] * 2 + [roots[2][0]] * 2 + [roots[0][1]])
    assert np.allclose(vals, np.array(expect) ** 4 / 4, rtol=1e-9)


def test_oracle_csv(tmp_path):
    path = tmp_path / "o.csv"
    write_oracle_csv(path, clamped_plate_disk_eigenvalues(1.0, UNIT, 3), "R=1")
    lines = path.read_text().splitlines()
    assert "m,q,kappa,gamma0" in lines
    assert lines[-1].startswith(("0,", "1,", "2,"))


def test_dense_reference_examples():
    assert np.allclose(dense_generalized_eig_reference([[2.0]], [[1.0]])[0], [2.0])
    assert np.allclose(dense_generalized_eig_reference(np.diag([1.0, 4.0]), np.diag([1.0, 2.0]))[0], [1.0, 2.0])


def test_dense_reference_rejects_indefinite():
    with pytest.raises(InvalidArgumentError):
        dense_generalized_eig_reference(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(InvalidArgumentError):
        dense_generalized_eig_reference(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def _random_pair(rng, n=50):
    A = rng.standard_normal((n, n))
    Q = A + A.T
    C = rng.standard_normal((n, n))
    B = C @ C.T
    B += (abs(np.linalg.eigvalsh(B).min()) + 1.0) * np.eye(n)
    return Q, B


def test_dense_reference_matches_solver(rng):
    import scipy.sparse as sp
    from plateshape.rm_fem import AssembledForms, FeSpace
    Q, B = _random_pair(rng)
    # shift Q positive definite so the solver's coercivity check applies
    Q = Q + (abs(np.linalg.eigvalsh(Q).min()) + 1.0) * B / np.linalg.eigvalsh(B).min()
    ref, vecs = dense_generalized_eig_reference(Q, B)
    space = FeSpace(generate_disk(1, 0))
    forms = AssembledForms(space, UNIT, sp.csr_matrix(Q), sp.csr_matrix(B))
    got = solve_smallest(forms, 10, method="dense").eigenvalues
    assert np.allclose(got, ref[:10], rtol=1e-9)
    assert np.allclose(vecs.T @ B @ vecs, np.eye(50), atol=1e-10)


@given(seed=st.integers(0, 2 ** 32 - 1))
def test_dense_reference_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    Q, B = _random_pair(rng, 12)
    p = rng.permutation(12)
    a = dense_generalized_eig_reference(Q, B)[0]
    b = dense_generalized_eig_reference(Q[np.ix_(p, p)], B[np.ix_(p, p)])[0]
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(a).max())


def test_richardson_examples():
    a, C = 3.0, 0.7
    assert richardson_extrapolate(a + C * 0.1 ** 2, a + C * 0.05 ** 2, 2, 2) == pytest.approx(a, abs=1e-14)
    assert richardson_extrapolate(5.0, 5.0) == 5.0
    with pytest.raises(InvalidArgumentError):
        richardson_extrapolate(1.0, 2.0, order=0)


@given(a=st.floats(-100, 100), C=st.floats(-10, 10), h=st.floats(0.01, 1), p=st.floats(0.5, 4))
def test_richardson_exact_on_power_model(a, C, h, p):
    got = richardson_extrapolate(a + C * h ** p, a + C * (h / 2) ** p, 2, p)
    assert got == pytest.approx(a, abs=1e-9 * (1 + abs(C)))


@pytest.mark.slow
def test_richardson_disk_levels():
    g = [solve_smallest(assemble_forms(generate_disk(1, k), UNIT), 1).gamma(1) for k in (3, 4, 5)]
    assert abs(richardson_extrapolate(g[0], g[1], 2, 2) - g[2]) / g[2] < 0.01
