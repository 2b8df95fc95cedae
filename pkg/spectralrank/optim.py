"""Update rules.

Every rule minimizes a quadratic majorizer of the loss around the current
point. The Euclidean majorizer L(W) + ⟨G, U⟩ + (L_F/2)‖U‖_F² yields
W − G/L_F with guaranteed decrease ‖G‖_F²/(2L_F); the operator-norm
majorizer L(W) + ⟨G, U⟩ + (L_op/2)‖U‖_op² yields
W − (‖G‖_*/L_op)·polar(G) with guaranteed decrease ‖G‖_*²/(2L_op).
"""
from collections import namedtuple
from concurrent.futures import ThreadPoolExecutor
import numpy as np
from spectralrank import linalg
from spectralrank import diagnostics
from spectralrank.logging import Logger
from spectralrank.models import rf_loss_grad
from spectralrank.exceptions import Diverged
from spectralrank.exceptions import NonPositiveConstant
from spectralrank.exceptions import ZeroGradient
from spectralrank.exceptions import InvalidScheme
from spectralrank.exceptions import ShapeMismatch


POLAR_MODES = ("exact", "newton_schulz", "pure_newton_schulz")
ROLES = ("input", "internal", "output", "diagonal")


_polar_logger = Logger("optim", "polar_direction")
_step_logger = Logger("optim", "mixed_step")
_shard_logger = Logger("optim", "shardwise_spec_step")


def _positive(operation, name, value):
    if not value > 0:
        raise NonPositiveConstant(operation, name, value)
    return float(value)


def _range_rtol(M):
    return max(M.shape) * np.finfo(np.float64).eps


# =============================================================================
# POLAR DIRECTIONS
# =============================================================================

def polar_direction(G, polar_mode="newton_schulz", ns_max_iters=100,
                    ns_tol=1e-9):
    """Returns the spectral step direction and the nuclear norm of `G`.

    Modes:
        exact: polar factor and nuclear norm from the SVD.
        newton_schulz: Newton–Schulz direction, SVD nuclear norm.
        pure_newton_schulz: Newton–Schulz direction, nuclear norm taken as
            ⟨G, NS(G)⟩.

    The exact polar factor is restricted to the range of `G`. When the
    Newton–Schulz iteration diverges or misses `ns_tol` within
    `ns_max_iters` iterations (ex: rank-deficient `G`), the exact factor
    is used instead and a warning is logged.

    Returns:
        Tuple as:
            [0]: numpy.ndarray: Direction P with ‖P‖_op ≤ 1.
            [1]: float: ‖G‖_* (or its Newton–Schulz estimate).

    Raises:
        ZeroGradient: `G` is zero.
    """
    if polar_mode not in POLAR_MODES:
        raise InvalidScheme("polar_direction",
                            "unknown polar mode '{}'".format(polar_mode))
    G = linalg.check_matrix(G, "polar_direction")
    if not np.any(G):
        raise ZeroGradient("polar_direction")
    if polar_mode == "exact":
        return (linalg.polar_exact(G, rtol=_range_rtol(G)),
                linalg.nuclear_norm(G))
    try:
        P, iters = linalg.polar_newton_schulz(G, ns_max_iters, ns_tol)
        residual = linalg.orthogonality_residual(P)
        if residual > ns_tol:
            _polar_logger.warning(
                "Newton-Schulz stopped at residual {:.3e} after {} "
                "iterations, using the exact polar factor".format(residual,
                                                                  iters))
            P = None
    except Diverged as error:
        _polar_logger.warning("{}, using the exact polar factor"
                              .format(error.message))
        P = None
    if P is None:
        P = linalg.polar_exact(G, rtol=_range_rtol(G))
        return P, linalg.nuclear_norm(G)
    if polar_mode == "pure_newton_schulz":
        return P, float(np.sum(G * P))
    return P, linalg.nuclear_norm(G)


# =============================================================================
# SINGLE-BLOCK STEPS
# =============================================================================

def gd_step(W, G, L_F):
    """W − G/L_F.

    Raises:
        NonPositiveConstant: L_F ≤ 0.
    """
    L_F = _positive("gd_step", "L_F", L_F)
    return np.asarray(W, dtype=np.float64) - np.asarray(G) / L_F


def spec_step(W, G, L_op, polar_mode="newton_schulz", ns_max_iters=100,
              ns_tol=1e-9):
    """W − (‖G‖_*/L_op)·polar(G).

    Raises:
        NonPositiveConstant: L_op ≤ 0.
        ZeroGradient: `G` is zero.
    """
    L_op = _positive("spec_step", "L_op", L_op)
    P, nuclear = polar_direction(G, polar_mode, ns_max_iters, ns_tol)
    return np.asarray(W, dtype=np.float64) - (nuclear / L_op) * P


def diag_sign_step(gamma, g, a):
    """γ − (‖g‖₁/a)·sign(g), with sign(0) = 0.

    Raises:
        NonPositiveConstant: a ≤ 0.
    """
    a = _positive("diag_sign_step", "a", a)
    g = np.asarray(g, dtype=np.float64)
    return np.asarray(gamma, dtype=np.float64) \
        - (np.sum(np.abs(g)) / a) * np.sign(g)


def gd_guaranteed_decrease(G, L_F):
    G = np.asarray(G, dtype=np.float64)
    return float(np.sum(G * G)) / (2.0 * _positive("gd_guaranteed_decrease",
                                                   "L_F", L_F))


def spec_guaranteed_decrease(G, L_op):
    L_op = _positive("spec_guaranteed_decrease", "L_op", L_op)
    return linalg.nuclear_norm(G) ** 2 / (2.0 * L_op)


# =============================================================================
# LAYERED MIXED STEP
# =============================================================================

BlockState = namedtuple("BlockState", ["W", "role", "spectral"])
"""One parameter block. Diagonal blocks store their gain vector γ as `W`."""


StepSizes = namedtuple("StepSizes", ["L_F", "L_op", "a_gd", "a_spec"])


def step_sizes(G, A, C_F, C_op=0.0, diagonal=False):
    """Blockwise step constants.

    With L_F = C_F‖A‖_op² and L_op = C_F‖A‖_F²:
    a_GD = L_F + C_op/st(G) and a_Spec = L_op + C_op. Diagonal blocks use
    the stable rank ‖g‖₂²/‖g‖_∞² of Diag(g).

    Arguments:
        G (numpy.ndarray): Block gradient (vector for a diagonal block).
        A (numpy.ndarray): Activations entering the block.
        C_F (float): Loss curvature constant (> 0).
        C_op (float, optional): Parameter curvature constant (≥ 0).
        diagonal (bool, optional): `G` is the gradient of a gain vector.

    Returns:
        StepSizes
    """
    C_F = _positive("step_sizes", "C_F", C_F)
    if C_op < 0:
        raise NonPositiveConstant("step_sizes", "C_op", C_op)
    summary = linalg.spectral_summary(A)
    L_F = C_F * summary.op_norm ** 2
    L_op = C_F * summary.frob ** 2
    if C_op == 0:
        a_gd = L_F
    elif diagonal:
        a_gd = L_F + C_op / diagnostics.diag_stable_rank(G)
    else:
        a_gd = L_F + C_op / linalg.stable_rank(G)
    return StepSizes(L_F=L_F, L_op=L_op, a_gd=a_gd, a_spec=L_op + C_op)


def _check_blocks(operation, blocks, grads, feats):
    if not len(blocks) == len(grads) == len(feats):
        raise ShapeMismatch(operation, "got {} blocks, {} gradients and {} "
                            "feature matrices".format(len(blocks), len(grads),
                                                      len(feats)))
    for index, (block, grad) in enumerate(zip(blocks, grads)):
        if np.shape(block.W) != np.shape(grad):
            raise ShapeMismatch(operation, "block {}: parameter {} but "
                                "gradient {}".format(index,
                                                     np.shape(block.W),
                                                     np.shape(grad)))


def mixed_step(blocks, grads, feats, C_F, C_op=0.0, polar_mode="newton_schulz",
               ns_max_iters=100, ns_tol=1e-9):
    """One layered update: spectral blocks move by
    −(‖G‖_*/a_Spec)·polar(G), the others by −G/a_GD. Diagonal blocks use
    the sign step with a_Spec (spectral) or the Euclidean step with a_GD.
    Blocks with a zero gradient are left unchanged.

    Arguments:
        blocks (list): `BlockState` entries.
        grads (list): Gradients, one per block.
        feats (list): Activations entering each block.
        C_F (float): Loss curvature constant.
        C_op (float, optional): Parameter curvature constant.

    Returns:
        list: The updated `BlockState` entries.

    Raises:
        ShapeMismatch: The sequences or their shapes disagree.
    """
    _check_blocks("mixed_step", blocks, grads, feats)
    updated = []
    for index, (block, G, A) in enumerate(zip(blocks, grads, feats)):
        G = np.asarray(G, dtype=np.float64)
        if not np.any(G):
            _step_logger.debug("block {}: zero gradient, skipped"
                               .format(index))
            updated.append(block)
            continue
        diagonal = block.role == "diagonal"
        sizes = step_sizes(G, A, C_F, C_op, diagonal)
        if diagonal and block.spectral:
            W = diag_sign_step(block.W, G, sizes.a_spec)
        elif block.spectral:
            P, nuclear = polar_direction(G, polar_mode, ns_max_iters, ns_tol)
            W = block.W - (nuclear / sizes.a_spec) * P
        else:
            W = block.W - G / sizes.a_gd
        updated.append(block._replace(W=W))
    return updated


def predicted_decrease(blocks, grads, feats, C_F, C_op=0.0,
                       spectral_set=None):
    """½Σ_{ℓ∈𝒮}‖G_ℓ‖_*²/a_Spec,ℓ + ½Σ_{ℓ∉𝒮}‖G_ℓ‖_F²/a_GD,ℓ.

    Diagonal blocks contribute ‖g‖₁² (spectral) or ‖g‖₂² (Euclidean).
    `spectral_set` overrides the blocks' own flags when given.
    """
    _check_blocks("predicted_decrease", blocks, grads, feats)
    total = 0.0
    for index, (block, G, A) in enumerate(zip(blocks, grads, feats)):
        G = np.asarray(G, dtype=np.float64)
        if not np.any(G):
            continue
        spectral = block.spectral if spectral_set is None \
            else index in spectral_set
        diagonal = block.role == "diagonal"
        sizes = step_sizes(G, A, C_F, C_op, diagonal)
        if spectral and diagonal:
            total += np.sum(np.abs(G)) ** 2 / (2.0 * sizes.a_spec)
        elif spectral:
            total += linalg.nuclear_norm(G) ** 2 / (2.0 * sizes.a_spec)
        else:
            total += float(np.sum(G * G)) / (2.0 * sizes.a_gd)
    return float(total)


# =============================================================================
# PARTITIONS
# =============================================================================

class Block:
    """A rectangular coordinate block rows × cols of a matrix.
    """

    def __init__(self, rows, cols):
        self.rows = np.asarray(rows, dtype=np.intp)
        self.cols = np.asarray(cols, dtype=np.intp)

    @property
    def shape(self):
        return (self.rows.size, self.cols.size)

    def extract(self, M):
        return M[np.ix_(self.rows, self.cols)]

    def insert(self, M, values):
        M[np.ix_(self.rows, self.cols)] = values

    def __repr__(self):
        return "Block(rows={}..{}, cols={}..{})".format(
            self.rows.min(), self.rows.max(), self.cols.min(),
            self.cols.max())


class Partition:
    """A disjoint cover of [rows] × [cols] by rectangular blocks.

    Attributes:
        blocks (list): `Block` entries.
        row_footprints (list): R_p, the rows each block touches.
        col_footprints (list): C_p, the columns each block touches.
        nu (int): Largest number of blocks sharing one row.
        mu (int): Largest number of blocks sharing one column.
        kappa (int): min(mu, nu).
    """

    def __init__(self, shape, blocks):
        self.shape = tuple(shape)
        self.blocks = list(blocks)
        self.row_footprints = [block.rows for block in self.blocks]
        self.col_footprints = [block.cols for block in self.blocks]
        row_hits = np.zeros(self.shape[0], dtype=np.int64)
        col_hits = np.zeros(self.shape[1], dtype=np.int64)
        for rows, cols in zip(self.row_footprints, self.col_footprints):
            row_hits[rows] += 1
            col_hits[cols] += 1
        self.nu = int(row_hits.max())
        self.mu = int(col_hits.max())
        self.kappa = min(self.nu, self.mu)

    @classmethod
    def from_blocks(cls, shape, blocks):
        """Builds a partition, checking the blocks cover every coordinate
        exactly once.

        Raises:
            InvalidScheme: Blocks overlap or leave coordinates uncovered.
        """
        cover = np.zeros(shape, dtype=np.int64)
        for block in blocks:
            if block.rows.size == 0 or block.cols.size == 0:
                raise InvalidScheme("Partition", "empty block")
            cover[np.ix_(block.rows, block.cols)] += 1
        if np.any(cover != 1):
            raise InvalidScheme("Partition", "blocks do not cover the "
                                "matrix disjointly")
        return cls(shape, blocks)

    def __len__(self):
        return len(self.blocks)


def _split(size, count, operation):
    if not 1 <= count <= size:
        raise InvalidScheme(operation, "cannot split {} into {} shards"
                            .format(size, count))
    width = size // count
    bounds = [i * width for i in range(count)] + [size]
    return [np.arange(bounds[i], bounds[i + 1]) for i in range(count)]


def make_partition(rows, cols, scheme):
    """Builds a standard partition of a rows × cols matrix.

    Arguments:
        rows, cols (int): Matrix shape.
        scheme (str): 'rows:S' (row shards), 'cols:S' (column shards),
            'grid:PxQ', 'singletons' or 'whole'. Uneven shards give the
            remainder to the last shard.

    Raises:
        InvalidScheme: Unknown scheme or impossible shard count.
    """
    name, _, argument = str(scheme).partition(':')
    all_rows, all_cols = np.arange(rows), np.arange(cols)
    try:
        if name == "whole":
            blocks = [Block(all_rows, all_cols)]
        elif name == "rows":
            blocks = [Block(r, all_cols)
                      for r in _split(rows, int(argument), scheme)]
        elif name == "cols":
            blocks = [Block(all_rows, c)
                      for c in _split(cols, int(argument), scheme)]
        elif name == "grid":
            p, q = (int(v) for v in argument.lower().split('x'))
            blocks = [Block(r, c) for r in _split(rows, p, scheme)
                      for c in _split(cols, q, scheme)]
        elif name == "singletons":
            blocks = [Block([i], [j]) for i in range(rows)
                      for j in range(cols)]
        else:
            raise InvalidScheme(scheme, "unknown partition scheme")
    except ValueError as error:
        raise InvalidScheme(scheme, str(error)) from error
    return Partition.from_blocks((rows, cols), blocks)


def blockwise_seminorm(U, part):
    """‖U‖_𝒫² = Σ_p ‖U_p‖_op².
    """
    U = np.asarray(U, dtype=np.float64)
    return float(sum(linalg.operator_norm(block.extract(U)) ** 2
                     for block in part.blocks if np.any(block.extract(U))))


def partition_constant(A, n, part):
    """L_𝒫 = κ_𝒫‖A‖_F²/n.
    """
    return part.kappa * linalg.frobenius_norm(A) ** 2 / n


def partitioned_majorization_bound(W, U, inst, part):
    """L(W) + Σ_p⟨G_p, U_p⟩ + (L_𝒫/2)‖U‖_𝒫² on a random-feature instance.
    """
    loss, G = rf_loss_grad(W, inst)
    L_P = partition_constant(inst.A, inst.n, part)
    return loss + float(np.sum(G * U)) + 0.5 * L_P * blockwise_seminorm(U,
                                                                      part)


def shardwise_spec_step(W, G, part, A, n, polar_mode="exact", workers=1,
                        ns_max_iters=100, ns_tol=1e-9):
    """Blockwise polar step U_p = −(‖G_p‖_*/L_𝒫)·polar(G_p) with the shared
    constant L_𝒫 = κ_𝒫‖A‖_F²/n. Zero shards are skipped.

    Shards are independent; with `workers` > 1 they are evaluated on a
    thread pool and merged by block index.

    Returns:
        Tuple as:
            [0]: numpy.ndarray: The updated parameter.
            [1]: float: Guaranteed decrease Σ_p‖G_p‖_*²/(2L_𝒫).

    Raises:
        ZeroGradient: Every shard is zero.
        ShapeMismatch: `W`, `G` and the partition disagree.
    """
    W = linalg.check_matrix(W, "shardwise_spec_step")
    G = linalg.check_matrix(G, "shardwise_spec_step")
    if W.shape != G.shape or tuple(part.shape) != W.shape:
        raise ShapeMismatch("shardwise_spec_step", "W {}, G {}, partition {}"
                            .format(W.shape, G.shape, part.shape))
    L_P = _positive("shardwise_spec_step", "L_P",
                    partition_constant(A, n, part))

    def solve(block):
        shard = block.extract(G)
        if not np.any(shard):
            return None
        return polar_direction(shard, polar_mode, ns_max_iters, ns_tol)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(solve, part.blocks))
    else:
        results = [solve(block) for block in part.blocks]
    if all(result is None for result in results):
        raise ZeroGradient("shardwise_spec_step")
    updated = W.copy()
    guaranteed = 0.0
    for index, (block, result) in enumerate(zip(part.blocks, results)):
        if result is None:
            _shard_logger.debug("shard {}: zero gradient, skipped"
                                .format(index))
            continue
        P, nuclear = result
        block.insert(updated, block.extract(W) - (nuclear / L_P) * P)
        guaranteed += nuclear * nuclear / (2.0 * L_P)
    return updated, guaranteed
