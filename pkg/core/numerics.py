"""
Linear-algebra kernel: ordered complex spectra, SVD nullvectors, pivoted QR,
matrix exponential and rank diagnostics.

The solver and the density evaluators do all their linear algebra through
these helpers so the rank and residual checks live in one place.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from core.config import SERIES_CUTOFF, TOL_EIG, TOL_NONZERO, TOL_ZERO
from core.errors import NormalizationError, NumericalError

_SORT_DIGITS = 12


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues with left eigenvectors as rows and right eigenvectors as columns."""
    values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    ordering: str = "unsorted"

    def __len__(self):
        return self.values.shape[0]


def _norm(M) -> float:
    return float(np.linalg.norm(M, 2)) if np.size(M) else 0.0


def eig_general(M, tol: float = TOL_EIG) -> Spectrum:
    """
    Full complex eigen-decomposition of a general real (or complex) matrix.

    Left eigenvectors are returned as unit-norm rows b with b·M = κ·b, right
    eigenvectors as unit-norm columns f with M·f = η·f.

    Raises:
        NumericalError: LAPACK did not converge, or an eigenpair residual
            exceeds tol·‖M‖
    """
    M = np.atleast_2d(np.asarray(M))
    if not np.all(np.isfinite(M)):
        raise NumericalError("eig_general: matrix has non-finite entries")
    try:
        w, vl, vr = scipy.linalg.eig(M, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalError(f"eigenvalue computation did not converge: {e}") from e

    left = vl.conj().T
    left = left / np.linalg.norm(left, axis=1, keepdims=True)
    right = vr / np.linalg.norm(vr, axis=0, keepdims=True)

    scale = max(_norm(M), np.finfo(float).tiny)
    res_left = np.linalg.norm(left @ M - w[:, None] * left, axis=1)
    res_right = np.linalg.norm(M @ right - right * w[None, :], axis=0)
    worst = max(res_left.max(), res_right.max()) / scale
    if worst > tol:
        raise NumericalError(f"eigenpair residual {worst:.3e} exceeds {tol:.1e}")
    return Spectrum(values=w.astype(complex), left_vectors=left.astype(complex),
                    right_vectors=right.astype(complex))


def sort_order(values) -> np.ndarray:
    """
    Permutation that sorts by decreasing modulus.

    Equal moduli (to 12 digits relative to the largest) fall back to
    descending real part, then descending imaginary part, so a conjugate
    pair lists the positive imaginary member first.
    """
    values = np.asarray(values, dtype=complex)
    if values.shape[0] == 0:
        return np.arange(0)
    scale = np.abs(values).max() or 1.0
    mod = np.round(np.abs(values) / scale, _SORT_DIGITS)
    re = np.round(values.real / scale, _SORT_DIGITS)
    im = np.round(values.imag / scale, _SORT_DIGITS)
    # lexsort: last key is primary
    return np.lexsort((-im, -re, -mod))


def sort_spectrum(s: Spectrum) -> Spectrum:
    order = sort_order(s.values)
    return Spectrum(values=s.values[order],
                    left_vectors=s.left_vectors[order, :],
                    right_vectors=s.right_vectors[:, order],
                    ordering="modulus-desc")


def singular_report(M, scale: float = None) -> dict:
    """Singular values of M with ratios to max(σ_max, scale)."""
    M = np.atleast_2d(np.asarray(M))
    sv = scipy.linalg.svdvals(M)
    ref = max(float(sv[0]) if sv.shape[0] else 0.0, scale or 0.0)
    ratios = sv / ref if ref > 0 else np.zeros_like(sv)
    return {"singular_values": sv, "reference": ref, "ratios": ratios}


def rank_is_m_minus_1(M, tol_zero: float = TOL_ZERO, tol_nonzero: float = TOL_NONZERO,
                      scale: float = None) -> tuple[bool, dict]:
    """
    True iff σ_min/σ_max ≤ tol_zero and σ_{m-1}/σ_max ≥ tol_nonzero.

    `scale` stands in for σ_max when the matrix itself may vanish (the m=1
    case, where rank m−1 means the 1×1 matrix is zero).
    """
    rep = singular_report(M, scale)
    ratios = rep["ratios"]
    m = ratios.shape[0]
    if rep["reference"] == 0:
        ok = m == 1
    else:
        ok = bool(ratios[-1] <= tol_zero and (m == 1 or ratios[-2] >= tol_nonzero))
    rep["min_ratio"] = float(ratios[-1]) if m else 0.0
    rep["second_min_ratio"] = float(ratios[-2]) if m > 1 else None
    return ok, rep


def left_nullvector(M, tol: float = TOL_ZERO, scale: float = None) -> np.ndarray:
    """
    Row v with v·M = 0, taken from the smallest singular direction and
    normalized so v[0] = 1.

    Raises:
        NumericalError: the numerical rank deficiency is not exactly one
        NormalizationError: the first component of the nullvector vanishes
    """
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    m = M.shape[0]
    U, sv, _ = scipy.linalg.svd(M)
    ref = max(float(sv[0]), scale or 0.0)
    if ref == 0:
        if m == 1:
            return np.ones(1, dtype=complex)
        raise NumericalError(f"left_nullvector: zero {m}x{m} matrix has nullity {m}, expected 1")
    ratios = sv / ref
    if ratios[-1] > tol:
        raise NumericalError(f"left_nullvector: matrix is nonsingular "
                             f"(σ_min/σ_max = {ratios[-1]:.3e} > {tol:.1e})")
    if m > 1 and ratios[-2] <= tol:
        raise NumericalError(f"left_nullvector: nullity exceeds 1 "
                             f"(σ_{{m-1}}/σ_max = {ratios[-2]:.3e})")

    v = U[:, -1].conj()
    if abs(v[0]) <= tol * np.abs(v).max():
        raise NormalizationError("nullvector has a vanishing first component; "
                                 "cannot normalize to v[0] = 1")
    return v / v[0]


def qr_solve_stacked(A, b, tol: float = TOL_ZERO) -> np.ndarray:
    """
    Least-squares solution of A·x = b for a tall (m+1)×m matrix by pivoted
    economic QR. Columns are scaled to unit norm before the rank test, so the
    test sees the conditioning of A and not the spread of its column scales.

    Raises:
        NumericalError: non-finite entries, or numerical rank of A below m
    """
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    b = np.asarray(b, dtype=complex).reshape(-1)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalError("stacked system has non-finite entries")
    n = A.shape[1]
    col = np.linalg.norm(A, axis=0)
    col[col == 0] = 1.0
    Q, R, P = scipy.linalg.qr(A / col, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag[0] == 0 or diag[-1] / diag[0] <= tol:
        raise NumericalError(f"stacked system is rank deficient "
                             f"(|r_mm|/|r_11| = {diag[-1] / diag[0] if diag[0] else 0.0:.3e})")
    z = scipy.linalg.solve_triangular(R, Q.conj().T @ b)
    x = np.empty(n, dtype=complex)
    x[P] = z
    return x / col


def matrix_exp(M) -> np.ndarray:
    """e^M via scaling and squaring with a Padé approximant.

    Raises:
        NumericalError: non-finite input or overflow in the result
    """
    M = np.atleast_2d(np.asarray(M))
    if not np.all(np.isfinite(M)):
        raise NumericalError("matrix_exp: input has non-finite entries")
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(M)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"matrix_exp overflowed (‖M‖ = {_norm(M):.3e})")
    return out


def solve_left(y, A) -> np.ndarray:
    """Row x with x·A = y."""
    return scipy.linalg.solve(np.asarray(A).T, np.asarray(y).reshape(-1))


def relative_gap(lhs, rhs) -> float:
    """‖lhs − rhs‖ / max(‖lhs‖, ‖rhs‖), 0 when both vanish."""
    lhs, rhs = np.asarray(lhs), np.asarray(rhs)
    denom = max(np.linalg.norm(lhs), np.linalg.norm(rhs))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(lhs - rhs) / denom)


def exp_ratio(z, cutoff: float = None) -> np.ndarray:
    """(1 − e^{−z})/z elementwise, with a short series near z = 0."""
    cutoff = SERIES_CUTOFF if cutoff is None else cutoff
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < cutoff
    safe = np.where(small, 1.0, z)
    direct = (1.0 - np.exp(-safe)) / safe
    series = 1.0 - z / 2 + z**2 / 6 - z**3 / 24 + z**4 / 120
    return np.where(small, series, direct)


def exp_moment_ratio(z, cutoff: float = None) -> np.ndarray:
    """(1 − e^{−z}(1 + z))/z² elementwise, with a short series near z = 0."""
    cutoff = SERIES_CUTOFF if cutoff is None else cutoff
    z = np.asarray(z, dtype=complex)
    small = np.abs(z) < cutoff
    safe = np.where(small, 1.0, z)
    direct = (1.0 - np.exp(-safe) * (1.0 + safe)) / safe**2
    series = 0.5 - z / 3 + z**2 / 8 - z**3 / 30 + z**4 / 144
    return np.where(small, series, direct)
