"""Independent reference computations used to check the finite element code.

The Bessel functions are evaluated from their power series (no scipy.special)
so that the clamped-disk roots do not share code with anything else here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericalError, OutOfRangeError
from .rm_fem import MaterialParams

SERIES_MAX_ARG = 20.0
_SERIES_CUTOFF = 1e-18


def _bessel_series(m: int, x: float, sign: float) -> float:
    if m < 0:
        raise InvalidArgumentError("order m must be >= 0")
    if not (0 <= x <= SERIES_MAX_ARG):
        raise OutOfRangeError(f"series evaluation limited to 0 <= x <= {SERIES_MAX_ARG}, got {x}")
    half = 0.5 * x
    term = half ** m / math.factorial(m)
    total = term
    q = half * half
    j = 0
    while True:
        j += 1
        term *= sign * q / (j * (j + m))
        total += term
        if abs(term) < _SERIES_CUTOFF * abs(total) or j > 400:
            return total


def bessel_j(m: int, x: float) -> float:
    """J_m(x) from its power series."""
    return _bessel_series(m, x, -1.0)


def bessel_i(m: int, x: float) -> float:
    """Modified Bessel I_m(x) from its power series."""
    return _bessel_series(m, x, 1.0)


def clamped_disk_characteristic(m: int, x: float) -> float:
    """J_m(x) I_{m+1}(x) + I_m(x) J_{m+1}(x); zero exactly at clamped-plate roots.

    Equivalent to J_m I_m' - I_m J_m' = 0 via the recurrences
    J_m' = (m/x) J_m - J_{m+1} and I_m' = (m/x) I_m + I_{m+1}.
    """
    return bessel_j(m, x) * bessel_i(m + 1, x) + bessel_i(m, x) * bessel_j(m + 1, x)


def _scan_roots(m: int, xmax: float, step: float, tol: float):
    """Yield roots in (0, xmax] by a sign-change scan refined with bisection."""
    a = step
    fa = clamped_disk_characteristic(m, a)
    while a + step <= xmax + 1e-12:
        b = a + step
        fb = clamped_disk_characteristic(m, b)
        if fa == 0.0:
            yield a
        elif fa * fb < 0:
            lo, hi, flo = a, b, fa
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                fm = clamped_disk_characteristic(m, mid)
                if flo * fm <= 0:
                    hi = mid
                else:
                    lo, flo = mid, fm
                if hi - lo < tol:
                    break
            else:
                raise NumericalError("bisection did not converge")
            yield 0.5 * (lo + hi)
        a, fa = b, fb


def clamped_disk_roots(m: int, count: int, step: float = 0.05, tol: float = 1e-10) -> list[float]:
    """First ``count`` positive roots kappa_{m,q} of the clamped-plate equation."""
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    roots = []
    for r in _scan_roots(m, SERIES_MAX_ARG, step, tol):
        roots.append(r)
        if len(roots) == count:
            return roots
    raise OutOfRangeError(f"fewer than {count} roots of order {m} below {SERIES_MAX_ARG}")


def _roots_below(m: int, bound: float) -> list[float]:
    return list(_scan_roots(m, bound, 0.05, 1e-10))


@dataclass(frozen=True)
class DiskMode:
    m: int
    q: int
    kappa: float
    gamma0: float
    multiplicity: int


def biharmonic_coefficient(params: MaterialParams) -> float:
    """(2 mu + lambda) / 12, the plate rigidity of the thin limit."""
    return (2.0 * params.mu + params.lam) / 12.0


def clamped_plate_disk_eigenvalues(radius: float, params: MaterialParams, count: int) -> list[DiskMode]:
    """Thin-limit eigenvalues ((2mu+lambda)/12) (kappa/R)^4 of a clamped disk, ascending.

    ``count`` counts eigenvalues with multiplicity; the last mode may be a
    pair that overshoots ``count`` by one.
    """
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    cands = []
    bound = 8.0
    while True:
        cands = [(k, m, q) for m in range(int(bound) + 1) for q, k in enumerate(_roots_below(m, bound), start=1)]
        if sum(1 if m == 0 else 2 for _, m, _ in cands) >= count or bound >= SERIES_MAX_ARG:
            break
        bound = min(SERIES_MAX_ARG, bound + 4.0)
    if sum(1 if m == 0 else 2 for _, m, _ in cands) < count:
        raise OutOfRangeError(f"count={count} needs roots beyond x={SERIES_MAX_ARG}")
    cands.sort()
    coef = biharmonic_coefficient(params)
    out, total = [], 0
    for k, m, q in cands:
        if total >= count:
            break
        mult = 1 if m == 0 else 2
        out.append(DiskMode(m, q, k, coef * (k / radius) ** 4, mult))
        total += mult
    return out


def expand_multiplicities(modes: list[DiskMode]) -> np.ndarray:
    return np.array([md.gamma0 for md in modes for _ in range(md.multiplicity)])


def write_oracle_csv(path, modes: list[DiskMode], header: str = "") -> None:
    lines = [f"# {header}"] if header else []
    lines.append("m,q,kappa,gamma0")
    lines += [f"{md.m},{md.q},{md.kappa:.12g},{md.gamma0:.12g}" for md in modes]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dense_generalized_eig_reference(Q, B) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of Q v = gamma B v through the congruence B^{-1/2} Q B^{-1/2}.

    Uses numpy only and no Cholesky factor, so it shares no code path with
    the production solver.  Eigenvectors are B-orthonormal.
    """
    Q = np.asarray(Q.toarray() if hasattr(Q, "toarray") else Q, dtype=float)
    B = np.asarray(B.toarray() if hasattr(B, "toarray") else B, dtype=float)
    if Q.shape != B.shape or Q.shape[0] != Q.shape[1]:
        raise InvalidArgumentError("Q and B must be square with equal shapes")
    if not np.allclose(B, B.T, rtol=0, atol=1e-12 * np.abs(B).max()):
        raise InvalidArgumentError("B is not symmetric")
    bvals, bvecs = np.linalg.eigh(B)
    if bvals.min() <= 1e-14 * bvals.max():
        raise InvalidArgumentError("B is not positive definite")
    S = bvecs / np.sqrt(bvals)  # B^{-1/2} up to a rotation
    M = S.T @ Q @ S
    vals, W = np.linalg.eigh(0.5 * (M + M.T))
    return vals, S @ W


def richardson_extrapolate(coarse: float, fine: float, ratio: float = 2.0, order: float = 2.0) -> float:
    """Eliminate the leading h^order error term from two refinement levels."""
    if not (order > 0 and ratio > 1):
        raise InvalidArgumentError(f"need order > 0 and ratio > 1, got order={order}, ratio={ratio}")
    f = ratio ** order
    return (f * fine - coarse) / (f - 1.0)
