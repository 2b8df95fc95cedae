"""Random-feature regression testbeds.

Two problem families share the quadratic loss L(W) = (1/2n)‖WA − Y‖_F²:

    realizable       Y = W♯A                   ∇L(W) = (W − W♯)B
    teacher-student  Y = W̄Ā, Ā = σ(V̄X)        ∇L(W) = WB − W̄B̄

with B = (1/n)AAᵀ and B̄ = (1/n)ĀAᵀ. Features are ReLU random features
A = σ(VX), V ~ N(0, 1/d) entries, X standard Gaussian. Along gradient descent
from W₀ = 0 the gradient obeys G_t = −T(I − ηB)^t, T being the target term
W♯B or W̄B̄; `gradient_recursion` evaluates that closed form.
"""
from collections import namedtuple
import math
import numpy as np
import scipy.linalg
from spectralrank import linalg
from spectralrank import rng
from spectralrank.logging import Logger
from spectralrank.propagation import gated_block
from spectralrank.exceptions import DomainError
from spectralrank.exceptions import ZeroRow
from spectralrank.exceptions import InvalidSpec
from spectralrank.exceptions import ShapeMismatch


REALIZABLE = "realizable"
TEACHER_STUDENT = "teacher_student"


RFInstance = namedtuple("RFInstance", [
    "variant", "A", "A_bar", "Y", "W_truth", "B", "B_bar", "target",
    "L_F", "L_op", "n", "seed"])


SpikedSpec = namedtuple("SpikedSpec", [
    "d", "k", "spike_rank", "exp_lo", "exp_hi", "bulk_lo", "bulk_hi"])


EtaRule = namedtuple("EtaRule", ["kind", "value"])
"""Step-size rule along the recursion: `("max_plus_c", c)` gives
η = 1/(c + ‖B‖_op), `("fraction", C)` gives η = 1/(C‖B‖_op)."""


TracePoint = namedtuple("TracePoint", ["t", "nr", "loss"])


_logger = Logger("models", "nuclear_rank_trace")


# =============================================================================
# KERNEL
# =============================================================================

def phi(t):
    """φ(t) = √(1−t²) + (π − arccos t)·t − 1, the normalized ReLU kernel
    minus its mean part.

    Arguments:
        t (float or array_like): Cosine(s), clamped to [−1, 1] when within
            1e-12 of the boundary.

    Raises:
        DomainError: |t| > 1 + 1e-12.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(np.abs(t_arr) > 1.0 + 1e-12):
        bad = t_arr[np.abs(t_arr) > 1.0 + 1e-12].flat[0]
        raise DomainError("phi", float(bad))
    t_arr = np.clip(t_arr, -1.0, 1.0)
    value = np.sqrt(1.0 - t_arr * t_arr) \
        + (math.pi - np.arccos(t_arr)) * t_arr - 1.0
    return float(value) if np.ndim(value) == 0 else value


def relu_kernel(V):
    """Mean and covariance of σ(Vx), x ~ N(0, I), σ = ReLU.

    Returns:
        Tuple as:
            [0]: numpy.ndarray: μ, with μ_i = ‖v_i‖/√(2π).
            [1]: numpy.ndarray: Σ, with
                Σ_ij = (‖v_i‖‖v_j‖/2π)·φ(⟨v_i, v_j⟩/(‖v_i‖‖v_j‖)).

    Raises:
        ZeroRow: A row of `V` is zero.
    """
    V = linalg.check_matrix(V, "relu_kernel")
    norms = np.sqrt(np.sum(V * V, axis=1))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size > 0:
        raise ZeroRow("relu_kernel", int(zero[0]))
    outer = np.outer(norms, norms)
    cosines = (V @ V.T) / outer
    np.fill_diagonal(cosines, 1.0)
    Sigma = outer / (2.0 * math.pi) * phi(cosines)
    Sigma = 0.5 * (Sigma + Sigma.T)
    return norms / math.sqrt(2.0 * math.pi), Sigma


def linearized_kernel(V):
    """¼VVᵀ + (1/(4πd))𝟏𝟏ᵀ + Diag(residual), the residual making the
    diagonal agree with `relu_kernel(V)`.
    """
    V = linalg.check_matrix(V, "linearized_kernel")
    _, Sigma = relu_kernel(V)
    k, d = V.shape
    approx = 0.25 * (V @ V.T) + np.full((k, k), 1.0 / (4.0 * math.pi * d))
    approx[np.diag_indices(k)] = np.diag(Sigma)
    return approx


def kernel_linearization_error(d, k, seed=0):
    """‖Σ − linearized_kernel(V)‖_op for V (k×d) with N(0, 1/d) entries.
    """
    V = rng.stream(seed, "kernel.V").standard_normal((k, d)) / math.sqrt(d)
    _, Sigma = relu_kernel(V)
    return linalg.operator_norm(Sigma - linearized_kernel(V))


# =============================================================================
# INSTANCES
# =============================================================================

def relu(T):
    return np.maximum(T, 0.0)


def make_instance(variant, A, W_truth, A_bar=None, seed=0):
    """Builds an `RFInstance` from features and ground truth.

    Arguments:
        variant (str): `REALIZABLE` or `TEACHER_STUDENT`.
        A (numpy.ndarray): Student features (k×n).
        W_truth (numpy.ndarray): W♯ (m×k) or W̄ (m×k̄).
        A_bar (numpy.ndarray, optional): Teacher features (k̄×n).
        seed (int, optional): Recorded seed.
    """
    A = linalg.check_matrix(A, "make_instance", allow_zero=False)
    n = A.shape[1]
    B = (A @ A.T) / n
    B = 0.5 * (B + B.T)
    if variant == REALIZABLE:
        if W_truth.shape[1] != A.shape[0]:
            raise ShapeMismatch("make_instance", "W_truth has {} columns, "
                                "A has {} rows".format(W_truth.shape[1],
                                                       A.shape[0]))
        Y = W_truth @ A
        B_bar = None
        target = W_truth @ B
    elif variant == TEACHER_STUDENT:
        if A_bar is None or A_bar.shape[1] != n \
                or W_truth.shape[1] != A_bar.shape[0]:
            raise ShapeMismatch("make_instance",
                                "teacher features incompatible")
        Y = W_truth @ A_bar
        B_bar = (A_bar @ A.T) / n
        target = W_truth @ B_bar
    else:
        raise InvalidSpec("make_instance",
                          "unknown variant '{}'".format(variant))
    summary = linalg.spectral_summary(A)
    return RFInstance(variant=variant, A=A, A_bar=A_bar, Y=Y,
                      W_truth=W_truth, B=B, B_bar=B_bar, target=target,
                      L_F=summary.op_norm ** 2 / n,
                      L_op=summary.frob ** 2 / n, n=n, seed=seed)


def _truth(seed, m, k, truth_variance):
    if truth_variance == "1/m":
        scale = 1.0 / math.sqrt(m)
    elif truth_variance == "unit":
        scale = 1.0
    else:
        raise InvalidSpec("truth_variance",
                          "expected '1/m' or 'unit', got '{}'"
                          .format(truth_variance))
    return rng.stream(seed, "rf.W_truth").standard_normal((m, k)) * scale


def _features(seed, tag, k, X):
    d = X.shape[0]
    V = rng.stream(seed, tag).standard_normal((k, d)) / math.sqrt(d)
    return relu(V @ X)


def _data(seed, d, n):
    return rng.stream(seed, "rf.X").standard_normal((d, n))


def gen_realizable(d, k, m, n, seed=0, truth_variance="1/m"):
    """Realizable ReLU random-feature instance, Y = W♯σ(VX).

    Arguments:
        d, k, m, n (int): Input dim, feature count, output dim, samples.
        seed (int, optional): Seed.
        truth_variance (str, optional): Entry variance of W♯, '1/m'
            (default) or 'unit'.
    """
    _check_dims(d=d, k=k, m=m, n=n)
    A = _features(seed, "rf.V", k, _data(seed, d, n))
    return make_instance(REALIZABLE, A, _truth(seed, m, k, truth_variance),
                         seed=seed)


def gen_teacher_student(d, k, m, n, seed=0, truth_variance="1/m",
                        share_features=False):
    """Teacher–student instance: student features σ(VX), teacher σ(V̄X),
    Y = W̄Ā. With `share_features` the teacher reuses V (so B̄ = B).
    """
    _check_dims(d=d, k=k, m=m, n=n)
    X = _data(seed, d, n)
    A = _features(seed, "rf.V", k, X)
    A_bar = A.copy() if share_features else _features(seed, "rf.V_bar", k, X)
    return make_instance(TEACHER_STUDENT, A, _truth(seed, m, k,
                                                    truth_variance),
                         A_bar=A_bar, seed=seed)


def gated_instance(d, k, m, n, seed=0, activation="silu"):
    """Realizable instance on gated features σ(VX) ⊙ (WX).
    """
    _check_dims(d=d, k=k, m=m, n=n)
    X = _data(seed, d, n)
    A = gated_block(X, X, activation, k, seed=seed, tag="rf.gated")
    return make_instance(REALIZABLE, A, _truth(seed, m, k, "1/m"),
                         seed=seed)


def gen_spiked_gram(spec, seed=0):
    """B = UQUᵀ + OΛOᵀ: an r-spiked k×k Gram matrix.

    U is a random orthonormal k×r frame, Q diagonal with entries
    log-uniform in [c₁d^ℓ, c₂d^u], Λ diagonal uniform in [c₁, c₂] and O a
    random rotation.

    Raises:
        InvalidSpec: The spike rank is outside [1, k] or the exponents or
            bulk bounds are out of order.
    """
    _check_spiked(spec)
    generator = rng.stream(seed, "spiked.gram")
    k, r = spec.k, spec.spike_rank
    U, _ = np.linalg.qr(generator.standard_normal((k, r)))
    lo = math.log(spec.bulk_lo * spec.d ** spec.exp_lo)
    hi = math.log(spec.bulk_hi * spec.d ** spec.exp_hi)
    Q = np.exp(generator.uniform(lo, hi, size=r))
    O, _ = np.linalg.qr(generator.standard_normal((k, k)))
    bulk = generator.uniform(spec.bulk_lo, spec.bulk_hi, size=k)
    B = (U * Q) @ U.T + (O * bulk) @ O.T
    return 0.5 * (B + B.T)


def spiked_instance(spec, m, seed=0):
    """Realizable instance whose Gram matrix is `gen_spiked_gram(spec)`.

    The features are A = √k·B^{1/2} with n = k samples, so (1/n)AAᵀ = B.
    """
    B = gen_spiked_gram(spec, seed)
    eigenvalues, vectors = scipy.linalg.eigh(B)
    root = (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T
    A = math.sqrt(spec.k) * root
    return make_instance(REALIZABLE, A, _truth(seed, m, spec.k, "1/m"),
                         seed=seed)


# =============================================================================
# LOSS AND RECURSIONS
# =============================================================================

def rf_loss(W, inst):
    R = W @ inst.A - inst.Y
    return float(np.sum(R * R)) / (2.0 * inst.n)


def rf_loss_grad(W, inst):
    """Loss (1/2n)‖WA − Y‖_F² and its gradient in Gram form WB − T.

    Raises:
        ShapeMismatch: `W` is not m×k.
    """
    W = linalg.check_matrix(W, "rf_loss_grad")
    if W.shape != inst.target.shape:
        raise ShapeMismatch("rf_loss_grad", "W is {}, expected {}"
                            .format(W.shape, inst.target.shape))
    return rf_loss(W, inst), W @ inst.B - inst.target


def resolve_eta(inst, eta_rule):
    """The step size selected by an `EtaRule` on this instance.
    """
    top = linalg.operator_norm(inst.B)
    if eta_rule.kind == "max_plus_c":
        return 1.0 / (eta_rule.value + top)
    if eta_rule.kind == "fraction":
        return 1.0 / (eta_rule.value * top)
    raise InvalidSpec("resolve_eta",
                      "unknown eta rule '{}'".format(eta_rule.kind))


def gradient_recursion(inst, eta, t, eigen=False):
    """G_t = −T(I − ηB)^t, the gradient after t GD steps from W₀ = 0.

    Arguments:
        inst (RFInstance): Problem.
        eta (float): Step size (> 0).
        t (int): Step count (≥ 0).
        eigen (bool, optional): Use an eigendecomposition of B instead of
            t repeated multiplications.
    """
    if not eta > 0:
        raise ValueError("eta must be > 0, got {}".format(eta))
    if eigen:
        eigenvalues, vectors = scipy.linalg.eigh(inst.B)
        factors = (1.0 - eta * eigenvalues) ** t
        return -((inst.target @ vectors) * factors) @ vectors.T
    G = -inst.target
    step = np.eye(inst.B.shape[0]) - eta * inst.B
    for _ in range(t):
        G = G @ step
    return G


def _safe_nuclear_rank(G):
    if not np.any(G):
        return 0.0
    return linalg.spectral_summary(G).nuclear_rank


def nuclear_rank_trace(inst, eta_rule, t_max):
    """nr(G_t) and L(W_t) along GD from W₀ = 0, for t = 0..t_max.

    A zero gradient (the minimum is reached) reports nr = 0.

    Returns:
        list: `TracePoint` entries.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1, got {}".format(t_max))
    if isinstance(eta_rule, EtaRule):
        eta = resolve_eta(inst, eta_rule)
    else:
        eta = float(eta_rule)
    W = np.zeros_like(inst.target)
    G = -inst.target
    step = np.eye(inst.B.shape[0]) - eta * inst.B
    trace = []
    for t in range(t_max + 1):
        trace.append(TracePoint(t=t, nr=_safe_nuclear_rank(G),
                                loss=rf_loss(W, inst)))
        W = W - eta * G
        G = G @ step
    _logger.debug("nuclear rank trace: eta={:.4g}, nr(G_0)={:.3f}, "
                  "max nr={:.3f}".format(eta, trace[0].nr,
                                         max(p.nr for p in trace)))
    return trace


def one_step_nuclear_rank(inst, eta):
    """(nr(G₀), nr(G₁)) for GD from W₀ = 0 with step `eta`.
    """
    G0 = gradient_recursion(inst, eta, 0)
    G1 = gradient_recursion(inst, eta, 1)
    return _safe_nuclear_rank(G0), _safe_nuclear_rank(G1)


def detect_window(trace, threshold, min_length):
    """First contiguous run of trace points with nr ≥ `threshold` lasting
    at least `min_length` steps.

    Returns:
        tuple or None: (first t, last t) of the whole run.
    """
    start = None
    best = None
    for point in list(trace) + [TracePoint(t=None, nr=-math.inf, loss=0.0)]:
        if point.nr >= threshold:
            if start is None:
                start = point
            last = point
            continue
        if start is not None and last.t - start.t + 1 >= min_length:
            best = (start.t, last.t)
            break
        start = None
    return best


# =============================================================================
# CHECKS
# =============================================================================

def _check_dims(**dims):
    for name, value in dims.items():
        if int(value) < 1:
            raise InvalidSpec("dims", "{} must be >= 1, got {}"
                              .format(name, value))


def _check_spiked(spec):
    if spec.d < 1 or spec.k < 1:
        raise InvalidSpec("gen_spiked_gram", "d and k must be >= 1")
    if not 1 <= spec.spike_rank <= spec.k:
        raise InvalidSpec("gen_spiked_gram",
                          "spike_rank must lie in [1, k], got {}"
                          .format(spec.spike_rank))
    if not 0 < spec.exp_lo <= spec.exp_hi <= 1:
        raise InvalidSpec("gen_spiked_gram",
                          "exponents must satisfy 0 < lo <= hi <= 1")
    if not 0 < spec.bulk_lo <= spec.bulk_hi:
        raise InvalidSpec("gen_spiked_gram",
                          "bulk bounds must satisfy 0 < c1 <= c2")
