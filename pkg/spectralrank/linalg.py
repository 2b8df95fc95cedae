"""Dense spectral linear algebra.

The full SVD is the norm oracle for every diagnostic in the package; the
matrices handled here are desk-scale, so no power iteration or randomized
sketching is involved. All arithmetic is float64.
"""
from collections import namedtuple
import numpy as np
import scipy.linalg
from spectralrank.exceptions import ZeroMatrix
from spectralrank.exceptions import NonFinite
from spectralrank.exceptions import Diverged
from spectralrank.exceptions import ShapeMismatch
from spectralrank.logging import Logger


SpectralSummary = namedtuple("SpectralSummary", [
    "frob", "op_norm", "nuclear", "stable_rank", "nuclear_rank",
    "effective_rank", "singular_values"])


def check_matrix(M, operation="check_matrix", allow_zero=True):
    """Returns `M` as a 2-D float64 array.

    Arguments:
        M (array_like): Matrix candidate.
        operation (str, optional): Operation name used in error messages.
        allow_zero (bool, optional): If `False`, an all-zero matrix raises.

    Raises:
        ShapeMismatch: `M` is not a non-empty 2-D array.
        NonFinite: `M` holds NaN or Inf entries.
        ZeroMatrix: `M` is zero and `allow_zero` is `False`.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ShapeMismatch(operation, "expected a non-empty 2-D matrix, "
                                       "got shape {}".format(M.shape))
    if not np.all(np.isfinite(M)):
        raise NonFinite(operation)
    if not allow_zero and not np.any(M):
        raise ZeroMatrix(operation)
    return M


def singular_values(M):
    """Descending singular values of `M`.
    """
    M = check_matrix(M, "singular_values")
    try:
        return scipy.linalg.svd(M, compute_uv=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(M, compute_uv=False, lapack_driver="gesvd")


def thin_svd(M):
    """Thin SVD `M = U diag(s) Vh`, retrying with `gesvd` when `gesdd`
    fails to converge.
    """
    M = check_matrix(M, "thin_svd")
    try:
        return scipy.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError:
        return scipy.linalg.svd(M, full_matrices=False, lapack_driver="gesvd")


def frobenius_norm(M):
    return float(np.linalg.norm(check_matrix(M, "frobenius_norm")))


def operator_norm(M):
    return float(singular_values(M)[0])


def nuclear_norm(M):
    return float(np.sum(singular_values(M)))


def sigma_min(M):
    """Smallest of the min(rows, cols) singular values.
    """
    return float(singular_values(M)[-1])


def spectral_summary(M):
    """Returns every norm and rank diagnostic of `M`.

    Arguments:
        M (array_like): Nonzero matrix.

    Returns:
        SpectralSummary: Frobenius, operator and nuclear norms; stable,
        nuclear and effective ranks; descending singular values. The
        effective rank is that of the Gram matrix MMᵀ, which equals the
        stable rank of M.

    Raises:
        ZeroMatrix: Every entry of `M` is 0.
        NonFinite: `M` has NaN/Inf entries.
    """
    M = check_matrix(M, "spectral_summary", allow_zero=False)
    s = singular_values(M)
    op = float(s[0])
    frob2 = float(np.sum(s * s))
    nuclear = float(np.sum(s))
    stable_rank = frob2 / (op * op)
    nuclear_rank = nuclear * nuclear / frob2
    return SpectralSummary(frob=float(np.sqrt(frob2)),
                           op_norm=op,
                           nuclear=nuclear,
                           stable_rank=stable_rank,
                           nuclear_rank=nuclear_rank,
                           effective_rank=stable_rank,
                           singular_values=s)


def stable_rank(M):
    return spectral_summary(M).stable_rank


def nuclear_rank(M):
    return spectral_summary(M).nuclear_rank


def effective_rank(M):
    """Returns tr(M)/‖M‖_op for a symmetric PSD matrix `M`.

    Raises:
        ZeroMatrix: `M` is zero.
        ShapeMismatch: `M` is not square.
    """
    M = check_matrix(M, "effective_rank", allow_zero=False)
    if M.shape[0] != M.shape[1]:
        raise ShapeMismatch("effective_rank", "expected a square PSD matrix")
    top = scipy.linalg.eigh(M, eigvals_only=True,
                            subset_by_index=[M.shape[0] - 1, M.shape[0] - 1])
    return float(np.trace(M) / top[0])


def polar_exact(M, rtol=None):
    """Returns the polar factor UVᵀ of `M` from its thin SVD.

    With `rtol`, singular directions whose singular value is at most
    `rtol`·σ₁ are dropped, so the factor acts on the range of `M` only.

    Without `rtol` zero singular values are not special-cased: the
    corresponding columns of U and V come from the SVD routine's basis,
    which gives one valid element of the subdifferential of the nuclear
    norm at `M`. The descent bounds only use ⟨M, polar(M)⟩ = ‖M‖_*, which
    holds for any such choice.

    Raises:
        ZeroMatrix: `M` is zero.
    """
    M = check_matrix(M, "polar_exact", allow_zero=False)
    U, s, Vh = thin_svd(M)
    if rtol is not None:
        keep = s > rtol * s[0]
        U, Vh = U[:, keep], Vh[keep]
    return U @ Vh


def orthogonality_residual(X):
    """‖X Xᵀ − I‖_F on the smaller Gram side of `X`.
    """
    if X.shape[0] <= X.shape[1]:
        gram = X @ X.T
    else:
        gram = X.T @ X
    return float(np.linalg.norm(gram - np.eye(gram.shape[0])))


_ns_logger = Logger("linalg", "polar_newton_schulz")


def polar_newton_schulz(M, max_iters=40, tol=1e-8):
    """Approximates the polar factor of `M` with the cubic Newton–Schulz
    iteration X ← 1.5·X − 0.5·X XᵀX.

    The iterate starts at M/‖M‖_F, so its top singular value is at most 1
    and the iteration is contractive toward the orthogonal factor.

    Arguments:
        M (array_like): Nonzero matrix.
        max_iters (int, optional): Iteration cap (≥ 1).
        tol (float, optional): Stop when the orthogonality residual on the
            smaller Gram side is ≤ `tol`.

    Returns:
        Tuple as:
            [0]: numpy.ndarray: The approximate polar factor.
            [1]: int: Number of iterations performed.

    Raises:
        ZeroMatrix: `M` is zero.
        Diverged: The residual grew for 3 consecutive iterations.
    """
    M = check_matrix(M, "polar_newton_schulz", allow_zero=False)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1, got {}".format(max_iters))
    if not tol > 0:
        raise ValueError("tol must be > 0, got {}".format(tol))
    transposed = M.shape[0] > M.shape[1]
    X = M.T if transposed else M
    X = X / np.linalg.norm(X)
    eye = np.eye(X.shape[0])
    residual = float(np.linalg.norm(X @ X.T - eye))
    iters = 0
    growth = 0
    while residual > tol and iters < max_iters:
        X = 1.5 * X - 0.5 * (X @ X.T) @ X
        iters += 1
        previous, residual = residual, float(np.linalg.norm(X @ X.T - eye))
        growth = growth + 1 if residual > previous else 0
        if growth >= 3:
            raise Diverged("polar_newton_schulz", iters, residual)
    _ns_logger.debug("Newton-Schulz: {} iterations, residual {:.3e}"
                     .format(iters, residual))
    return (X.T if transposed else X), iters
