"""Nuclear-rank versus stable-rank decision criteria.

A spectral step on a block beats the Euclidean step in the quadratic model
whenever the nuclear rank of the block gradient is at least the stable rank
of the activations entering the block. Ties count as favoring the spectral
step (the one-step bounds are non-strict).
"""
from collections import namedtuple
import numpy as np
from spectralrank import linalg
from spectralrank.exceptions import ZeroMean
from spectralrank.exceptions import ZeroVector
from spectralrank.exceptions import EmptySequence
from spectralrank.exceptions import ShapeMismatch


CriterionReport = namedtuple("CriterionReport", [
    "nr_gradient", "st_activation", "ratio", "spectral_favored",
    "refined_threshold", "alpha"])


def refined_threshold(nr_gradient, st_activation, alpha=0.0):
    """(s + α)/(1 + α/r): the right-hand side of the refined per-block
    condition, with the gradient nuclear rank in the denominator.
    """
    return (st_activation + alpha) / (1.0 + alpha / nr_gradient)


def make_report(nr_gradient, st_activation, alpha=0.0):
    """Builds a `CriterionReport` from the two ranks.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0, got {}".format(alpha))
    nr_gradient = float(nr_gradient)
    st_activation = float(st_activation)
    return CriterionReport(
        nr_gradient=nr_gradient,
        st_activation=st_activation,
        ratio=nr_gradient / st_activation,
        spectral_favored=bool(nr_gradient >= st_activation),
        refined_threshold=refined_threshold(nr_gradient, st_activation,
                                            alpha),
        alpha=float(alpha))


def layer_criterion(G, A, alpha=0.0):
    """Compares nr(G) with st(A) for one block.

    Arguments:
        G (array_like): Block gradient.
        A (array_like): Activations entering the block.
        alpha (float, optional): Parameter-curvature ratio C_op/L_F (≥ 0).

    Raises:
        ZeroMatrix: `G` or `A` is zero.
    """
    return make_report(linalg.spectral_summary(G).nuclear_rank,
                       linalg.spectral_summary(A).stable_rank, alpha)


def criterion_from_constants(G, L_F, L_op, C_op=0.0):
    """Builds the report from the block curvature constants, using
    st(A) = L_op/L_F and α = C_op/L_F.
    """
    return make_report(linalg.spectral_summary(G).nuclear_rank,
                       L_op / L_F, C_op / L_F)


def refined_equivalence_check(r, s, alpha):
    """Returns `True` when the refined condition r ≥ (s+α)/(1+α/r) and the
    bare condition r ≥ s agree.

    The refined threshold is compared with a relative tolerance of 1e-12
    so that an exact tie r = s survives the rounding of (s+α)/(1+α/r).
    """
    threshold = refined_threshold(r, s, alpha)
    refined = r >= threshold - 1e-12 * max(1.0, abs(threshold))
    bare = r >= s
    return refined == bare


def empirical_nsr(Z):
    """Empirical noise-to-signal ratio of the columns of `Z`.

    Returns:
        float: mean squared column norm / ‖column mean‖₂² (always ≥ 1).

    Raises:
        ZeroMean: The column mean is zero.
    """
    Z = linalg.check_matrix(Z, "empirical_nsr")
    mean = Z.mean(axis=1)
    signal = float(mean @ mean)
    if signal <= 0.0 or signal <= 1e-28 * float(np.sum(Z * Z)):
        raise ZeroMean("empirical_nsr")
    second = float(np.sum(Z * Z)) / Z.shape[1]
    return second / signal


def token_indicator_stable_rank(counts):
    """Stable rank of the token-indicator matrix with these token counts.

    The indicator matrix H has orthogonal rows whose squared norms are the
    counts, so st(H) = n / max(counts) = 1/p_max exactly.

    Raises:
        EmptySequence: All counts are zero (or the sequence is empty).
    """
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size == 0 or counts.max(initial=0) <= 0:
        raise EmptySequence("token_indicator_stable_rank")
    if np.any(counts < 0):
        raise ValueError("counts must be non-negative")
    return float(counts.sum()) / float(counts.max())


def diag_nuclear_rank(g):
    """‖g‖₁²/‖g‖₂²: the nuclear rank of Diag(g).
    """
    g = _check_vector(g, "diag_nuclear_rank")
    return float(np.sum(np.abs(g)) ** 2 / (g @ g))


def diag_stable_rank(g):
    """‖g‖₂²/‖g‖_∞²: the stable rank of Diag(g).
    """
    g = _check_vector(g, "diag_stable_rank")
    return float((g @ g) / np.max(np.abs(g)) ** 2)


def diag_criterion(g, A, alpha=0.0):
    """Criterion for a diagonal (RMSNorm gain) block: ‖g‖₁²/‖g‖₂² ≥ st(A).
    """
    return make_report(diag_nuclear_rank(g),
                       linalg.spectral_summary(A).stable_rank, alpha)


def diag_refined_criterion(g, A, C_F, C_op=0.0):
    """Diagonal-block dominance condition including the parameter term:
    ‖g‖₁²/(L_op + C_op) ≥ ‖g‖₂²/(L_F + C_op/st_diag(g)).
    """
    g = _check_vector(g, "diag_refined_criterion")
    summary = linalg.spectral_summary(A)
    L_F = C_F * summary.op_norm ** 2
    L_op = C_F * summary.frob ** 2
    spectral = np.sum(np.abs(g)) ** 2 / (L_op + C_op)
    euclidean = (g @ g) / (L_F + C_op / diag_stable_rank(g))
    return bool(spectral >= euclidean)


def shardwise_nuclear_rank(G, part):
    """nr_𝒫(G) = Σ_p ‖G_p‖_*² / ‖G‖_F².
    """
    G = linalg.check_matrix(G, "shardwise_nuclear_rank", allow_zero=False)
    total = 0.0
    for block in part.blocks:
        shard = block.extract(G)
        if np.any(shard):
            total += linalg.nuclear_norm(shard) ** 2
    return total / float(np.sum(G * G))


def shardwise_stable_rank(A, part):
    """st_𝒫(A) = κ_𝒫 · st(A).
    """
    return part.kappa * linalg.spectral_summary(A).stable_rank


def _check_vector(g, operation):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.size < 1:
        raise ShapeMismatch(operation, "expected a non-empty vector")
    if not np.any(g):
        raise ZeroVector(operation)
    return g
