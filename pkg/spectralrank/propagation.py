"""Stable-rank propagation through network building blocks.

One-dimensional Gaussian statistics of activations (the moments m₁, m₂ and
the first Hermite coefficient σ̂₁) and the forward transforms whose output
stable rank is tracked stage by stage. Weights are fresh Gaussian draws
from named random streams, so every chain is a pure function of its seed.
"""
from collections import namedtuple
import math
import numpy as np
import scipy.special
import scipy.stats
from spectralrank import linalg
from spectralrank import rng
from spectralrank.exceptions import CenteredActivation
from spectralrank.exceptions import ZeroColumn
from spectralrank.exceptions import ShapeMismatch
from spectralrank.exceptions import PropagationError
from spectralrank.logging import Logger


# =============================================================================
# ACTIVATIONS
# =============================================================================

ACTIVATION_KINDS = ("relu", "abs", "leaky_relu", "squared_relu", "quadratic",
                    "gelu", "silu", "tanh", "hardtanh", "softsign", "linear")


ActivationStats = namedtuple("ActivationStats", [
    "m1", "m2", "h1", "m1_se", "m2_se", "h1_se"])


# Probabilists' Gauss–Hermite rule for E[f(γ)], γ ~ N(0, 1).
_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(160)
_GH_WEIGHTS = _GH_WEIGHTS / math.sqrt(2.0 * math.pi)


def gaussian_expectation(f):
    """E[f(γ)] for γ ~ N(0, 1) by Gauss–Hermite quadrature.
    """
    return float(np.dot(_GH_WEIGHTS, f(_GH_NODES)))


class ActivationSpec:
    """A pointwise activation with its Gaussian constants.

    Arguments:
        kind (str): One of `ACTIVATION_KINDS`.
        alpha (float, optional): Positive-side slope of a leaky ReLU.
        beta (float, optional): Negative-side slope of a leaky ReLU.
    """

    def __init__(self, kind, alpha=1.0, beta=0.01):
        if kind not in ACTIVATION_KINDS:
            raise PropagationError("ActivationSpec",
                                   "unknown activation '{}'".format(kind))
        if kind == "leaky_relu" and not alpha > beta:
            raise PropagationError("ActivationSpec",
                                   "leaky ReLU needs alpha > beta")
        self.kind = kind
        self.alpha = float(alpha)
        self.beta = float(beta)

    @classmethod
    def parse(cls, text):
        """Builds a spec from 'relu', 'leaky_relu:1.0:0.1', ...
        """
        if isinstance(text, ActivationSpec):
            return text
        fields = str(text).split(':')
        if fields[0] == "leaky_relu" and len(fields) == 3:
            return cls("leaky_relu", float(fields[1]), float(fields[2]))
        return cls(fields[0])

    def __repr__(self):
        if self.kind == "leaky_relu":
            return "leaky_relu:{}:{}".format(self.alpha, self.beta)
        return self.kind

    def __eq__(self, other):
        return isinstance(other, ActivationSpec) and repr(self) == repr(other)

    def __hash__(self):
        return hash(repr(self))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        kind = self.kind
        if kind == "relu":
            return np.maximum(t, 0.0)
        if kind == "abs":
            return np.abs(t)
        if kind == "leaky_relu":
            return np.where(t >= 0.0, self.alpha * t, self.beta * t)
        if kind == "squared_relu":
            return np.maximum(t, 0.0) ** 2
        if kind == "quadratic":
            return t * t
        if kind == "gelu":
            return t * scipy.special.ndtr(t)
        if kind == "silu":
            return t * scipy.special.expit(t)
        if kind == "tanh":
            return np.tanh(t)
        if kind == "hardtanh":
            return np.clip(t, -1.0, 1.0)
        if kind == "softsign":
            return t / (1.0 + np.abs(t))
        return t.copy()

    def derivative(self, t):
        """Pointwise derivative; kinks take the value of the left-closed
        branch used in `__call__` (ReLU'(0) = 0).
        """
        t = np.asarray(t, dtype=np.float64)
        kind = self.kind
        if kind == "relu":
            return (t > 0.0).astype(np.float64)
        if kind == "abs":
            return np.sign(t)
        if kind == "leaky_relu":
            return np.where(t >= 0.0, self.alpha, self.beta)
        if kind == "squared_relu":
            return 2.0 * np.maximum(t, 0.0)
        if kind == "quadratic":
            return 2.0 * t
        if kind == "gelu":
            return scipy.special.ndtr(t) + t * scipy.stats.norm.pdf(t)
        if kind == "silu":
            e = scipy.special.expit(t)
            return e * (1.0 + t * (1.0 - e))
        if kind == "tanh":
            return 1.0 - np.tanh(t) ** 2
        if kind == "hardtanh":
            return (np.abs(t) < 1.0).astype(np.float64)
        if kind == "softsign":
            return 1.0 / (1.0 + np.abs(t)) ** 2
        return np.ones_like(t)

    @property
    def closed_form_m1m2(self):
        """(m₁, m₂) at unit scale when known in closed form, else `None`.
        """
        kind = self.kind
        if kind == "relu":
            return (1.0 / math.sqrt(2.0 * math.pi), 0.5)
        if kind == "abs":
            return (math.sqrt(2.0 / math.pi), 1.0)
        if kind == "leaky_relu":
            return ((self.alpha - self.beta) / math.sqrt(2.0 * math.pi),
                    (self.alpha ** 2 + self.beta ** 2) / 2.0)
        if kind == "squared_relu":
            return (0.5, 1.5)
        if kind == "quadratic":
            return (1.0, 3.0)
        if kind == "linear":
            return (0.0, 1.0)
        return None

    def closed_form_h1(self, s):
        """σ̂₁(s)/s when known in closed form, else `None`.
        """
        kind = self.kind
        if kind == "linear":
            return 1.0
        if kind in ("relu", "gelu", "silu"):
            return 0.5
        if kind == "leaky_relu":
            return (self.alpha + self.beta) / 2.0
        if kind == "hardtanh":
            return 2.0 * scipy.special.ndtr(1.0 / s) - 1.0
        if kind in ("abs", "quadratic"):
            return 0.0
        if kind == "squared_relu":
            return 2.0 * s / math.sqrt(2.0 * math.pi)
        return None

    def h1_over_s(self, s=1.0):
        """σ̂₁(s)/s = E[σ(sγ)γ]/s, closed form or Gauss–Hermite.
        """
        value = self.closed_form_h1(s)
        if value is not None:
            return value
        return gaussian_expectation(lambda g: self(s * g) * g) / s

    def moments(self):
        """(m₁, m₂) at unit scale, closed form or Gauss–Hermite.
        """
        closed = self.closed_form_m1m2
        if closed is not None:
            return closed
        return (gaussian_expectation(self),
                gaussian_expectation(lambda g: self(g) ** 2))


def gaussian_activation_stats(act, s=1.0, n_mc=200000, seed=0):
    """Monte-Carlo estimates of m₁ = E σ(sγ), m₂ = E σ(sγ)² and
    σ̂₁(s) = E[σ(sγ)γ], with their standard errors.

    The Hermite coefficient is estimated through E[σ(sγ)γ] instead of
    s·E[σ'(sγ)], which covers non-differentiable activations; the two agree
    by Stein's lemma whenever σ is smooth.

    Arguments:
        act (ActivationSpec or str): Activation.
        s (float, optional): Input scale (> 0).
        n_mc (int, optional): Sample count (≥ 10⁴).
        seed (int, optional): Seed of the 'activation.stats' stream.

    Returns:
        ActivationStats
    """
    act = ActivationSpec.parse(act)
    if n_mc < 10000:
        raise ValueError("n_mc must be >= 1e4, got {}".format(n_mc))
    if not s > 0:
        raise ValueError("s must be > 0, got {}".format(s))
    gamma = rng.stream(seed, "activation.stats.{}".format(act)) \
        .standard_normal(int(n_mc))
    values = act(s * gamma)
    squares = values * values
    hermite = values * gamma
    root = math.sqrt(n_mc)
    return ActivationStats(
        m1=float(values.mean()), m2=float(squares.mean()),
        h1=float(hermite.mean()),
        m1_se=float(values.std(ddof=1) / root),
        m2_se=float(squares.std(ddof=1) / root),
        h1_se=float(hermite.std(ddof=1) / root))


def msi_ratio(act):
    """m₂/m₁² of a mean-spike-inducing activation.

    Raises:
        CenteredActivation: m₁ = 0 (ex: linear, tanh).
    """
    act = ActivationSpec.parse(act)
    m1, m2 = act.moments()
    if abs(m1) < 1e-12:
        raise CenteredActivation("msi_ratio", repr(act))
    return m2 / (m1 * m1)


def hermite_p(act, s=1.0):
    """The Hermite nondegeneracy parameter p = (σ̂₁(s)/s)².
    """
    return ActivationSpec.parse(act).h1_over_s(s) ** 2


def gelu_msi_bound(a):
    """Upper bound 2π(1 + 1/a²) on the GELU moment ratio over input scales
    in [a, ∞).
    """
    if not a > 0:
        raise ValueError("a must be > 0, got {}".format(a))
    return 2.0 * math.pi * (1.0 + 1.0 / (a * a))


# =============================================================================
# ATOMIC TRANSFORMS
# =============================================================================

def gaussian_weights(rows, cols, variance, generator):
    return generator.standard_normal((rows, cols)) * math.sqrt(variance)


def column_envelope(X):
    """(min, max) of the squared column norms of `X`.
    """
    norms = np.sum(X * X, axis=0)
    return (float(norms.min()), float(norms.max()))


def rms_normalize(X):
    """Rescales every column of `X` to squared norm d (the row count).

    Raises:
        ZeroColumn: A column of `X` is zero.
    """
    X = linalg.check_matrix(X, "rms_normalize")
    norms = np.sqrt(np.sum(X * X, axis=0))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size > 0:
        raise ZeroColumn("rms_normalize", int(zero[0]))
    return X * (math.sqrt(X.shape[0]) / norms)


def linear_stage(X, k, generator):
    """W X with W (k×d) of variance 1/d entries.
    """
    return gaussian_weights(k, X.shape[0], 1.0 / X.shape[0], generator) @ X


def pointwise_stage(X, act, k, generator):
    """σ(W X) with W (k×d) of variance 1/d entries.
    """
    return act(linear_stage(X, k, generator))


def residual_stage(X, k, act, generator):
    """X + W H with H = σ(V X) (V: k×d, variance 1/d) and W (d×k) of
    variance 1/k entries.
    """
    H = pointwise_stage(X, act, k, generator)
    W = gaussian_weights(X.shape[0], k, 1.0 / k, generator)
    return X + W @ H


def gated_block(Z, X, act, k, seed=0, tag="gated"):
    """σ(V Z) ⊙ (W X), with fresh V (k×d₁, variance 1/d₁) and W (k×d₂,
    variance 1/d₂).

    Raises:
        ShapeMismatch: `Z` and `X` have different column counts.
    """
    Z = linalg.check_matrix(Z, "gated_block")
    X = linalg.check_matrix(X, "gated_block")
    if Z.shape[1] != X.shape[1]:
        raise ShapeMismatch("gated_block", "Z has {} columns, X has {}"
                            .format(Z.shape[1], X.shape[1]))
    act = ActivationSpec.parse(act)
    generator = rng.stream(seed, tag)
    V = gaussian_weights(k, Z.shape[0], 1.0 / Z.shape[0], generator)
    W = gaussian_weights(k, X.shape[0], 1.0 / X.shape[0], generator)
    return act(V @ Z) * (W @ X)


def token_indicator(counts, seed=0):
    """The V×n indicator matrix of a token sequence with these counts,
    tokens in shuffled order.
    """
    counts = np.asarray(counts, dtype=np.int64)
    tokens = np.repeat(np.arange(counts.size), counts)
    rng.stream(seed, "token_indicator").shuffle(tokens)
    H = np.zeros((counts.size, tokens.size))
    H[tokens, np.arange(tokens.size)] = 1.0
    return H


def token_embed_stage(H, d, generator):
    """E H with an embedding table E (d×V) of variance 1/d entries.
    """
    return gaussian_weights(d, H.shape[0], 1.0 / d, generator) @ H


def softmax_columns(S):
    """Column-wise softmax; `-inf` entries get probability 0.
    """
    shifted = S - np.max(S, axis=0, keepdims=True)
    E = np.exp(shifted)
    return E / np.sum(E, axis=0, keepdims=True)


def attention_mixing(T, generator, causal=False):
    """A T×T column-stochastic mixing matrix: softmax of Gaussian scores.

    With `causal`, query t only mixes keys s ≤ t.
    """
    S = generator.standard_normal((T, T))
    if causal:
        # Row s (key) is visible to column t (query) iff s <= t.
        S = np.where(np.triu(np.ones((T, T), dtype=bool)), S, -np.inf)
    return softmax_columns(S)


def attention_sublayer(X, heads, generator, causal=False):
    """X + W_O [V_h P_h]_h with V = W_V RMSNorm(X) split into `heads` row
    blocks and random column-stochastic P_h.

    Returns:
        Tuple as:
            [0]: numpy.ndarray: Sublayer output.
            [1]: list: The mixed normalized activations RMSNorm(X) P_h,
                one per head.
    """
    d, T = X.shape
    if d % heads != 0:
        raise ShapeMismatch("attention_sublayer",
                            "d={} not divisible by heads={}".format(d, heads))
    A = rms_normalize(X)
    WV = gaussian_weights(d, d, 1.0 / d, generator)
    WO = gaussian_weights(d, d, 1.0 / d, generator)
    V = WV @ A
    step = d // heads
    H = np.empty_like(V)
    mixed = []
    for h in range(heads):
        P = attention_mixing(T, generator, causal)
        H[h * step:(h + 1) * step] = V[h * step:(h + 1) * step] @ P
        mixed.append(A @ P)
    return X + WO @ H, mixed


def mlp_sublayer(X, act, k, generator):
    """X + W₂ σ(W₁ RMSNorm(X)), W₁ (k×d, variance 1/d), W₂ (d×k, 1/k).
    """
    B = pointwise_stage(rms_normalize(X), act, k, generator)
    W2 = gaussian_weights(X.shape[0], k, 1.0 / k, generator)
    return X + W2 @ B


def moe_sublayer(X, act, k, experts, generator, routing="onehot"):
    """X + Σ_e W₂⁽ᵉ⁾ (σ(W₁⁽ᵉ⁾ RMSNorm(X)) · Diag(r_e)).

    Routing weights r_e ∈ simplex per token: random one-hot by default,
    softmax of Gaussian scores with `routing="soft"`.
    """
    d, n = X.shape
    A = rms_normalize(X)
    if routing == "onehot":
        R = np.zeros((experts, n))
        R[generator.integers(0, experts, size=n), np.arange(n)] = 1.0
    elif routing == "soft":
        R = softmax_columns(generator.standard_normal((experts, n)))
    else:
        raise PropagationError("moe_sublayer",
                               "unknown routing '{}'".format(routing))
    out = X.copy()
    for e in range(experts):
        B = pointwise_stage(A, act, k, generator) * R[e]
        out += gaussian_weights(d, k, 1.0 / k, generator) @ B
    return out


# =============================================================================
# CHAINS
# =============================================================================

STAGE_KINDS = ("linear", "pointwise", "residual", "rmsnorm", "gating",
               "token_embed", "attention", "mlp", "moe")


class ChainStage:
    """One stage of a propagation chain.

    Arguments:
        kind (str): One of `STAGE_KINDS`.
        width (int, optional): Output width (linear, pointwise, gating,
            token_embed) or hidden width (residual, mlp, moe).
        activation (str, optional): Activation for pointwise, residual,
            gating, mlp and moe stages.
        heads (int, optional): Attention heads.
        experts (int, optional): MoE experts.
        routing (str, optional): MoE routing ('onehot' or 'soft').
        causal (bool, optional): Causal attention mixing.
        seed_tag (str, optional): Random stream tag; defaults to the
            stage position in its chain.
    """

    def __init__(self, kind, width=None, activation="relu", heads=1,
                 experts=4, routing="onehot", causal=False, seed_tag=None):
        if kind not in STAGE_KINDS:
            raise PropagationError("ChainStage",
                                   "unknown stage kind '{}'".format(kind))
        self.kind = kind
        self.width = width
        self.activation = ActivationSpec.parse(activation)
        self.heads = heads
        self.experts = experts
        self.routing = routing
        self.causal = causal
        self.seed_tag = seed_tag

    @classmethod
    def parse(cls, text):
        """Parses 'kind[:width[:activation]]', ex: 'pointwise:1024:relu',
        'attention::2' (heads), 'moe:512:gelu'.
        """
        fields = str(text).split(':')
        kind = fields[0]
        width = int(fields[1]) if len(fields) > 1 and fields[1] else None
        if kind == "attention":
            heads = int(fields[2]) if len(fields) > 2 else 1
            return cls(kind, width, heads=heads)
        activation = fields[2] if len(fields) > 2 else "relu"
        if kind == "moe" and len(fields) > 3:
            return cls(kind, width, activation, experts=int(fields[3]))
        return cls(kind, width, activation)

    @property
    def name(self):
        if self.kind in ("rmsnorm", "attention", "linear", "token_embed"):
            return self.kind
        return "{}({})".format(self.kind, self.activation)

    def apply(self, X, generator):
        width = self.width if self.width is not None else X.shape[0]
        kind = self.kind
        if kind == "linear":
            return linear_stage(X, width, generator)
        if kind == "pointwise":
            return pointwise_stage(X, self.activation, width, generator)
        if kind == "residual":
            return residual_stage(X, width, self.activation, generator)
        if kind == "rmsnorm":
            return rms_normalize(X)
        if kind == "gating":
            V = gaussian_weights(width, X.shape[0], 1.0 / X.shape[0],
                                 generator)
            W = gaussian_weights(width, X.shape[0], 1.0 / X.shape[0],
                                 generator)
            return self.activation(V @ X) * (W @ X)
        if kind == "token_embed":
            return token_embed_stage(X, width, generator)
        if kind == "attention":
            return attention_sublayer(X, self.heads, generator,
                                      self.causal)[0]
        if kind == "mlp":
            return mlp_sublayer(X, self.activation, width, generator)
        return moe_sublayer(X, self.activation, width, self.experts,
                            generator, self.routing)


StageRecord = namedtuple("StageRecord", ["stage_name", "summary",
                                         "column_envelope"])


_chain_logger = Logger("propagation", "propagate_chain")


def propagate_chain(stages, X0, seed=0):
    """Runs `X0` through `stages`, recording the spectral summary and the
    squared column norm envelope after each stage.

    Every stage draws its weights from the stream
    `(seed, "chain.<seed_tag or index>")`.

    Returns:
        list: One `StageRecord` per stage.

    Raises:
        ShapeMismatch: A stage cannot consume the previous output.
    """
    X = linalg.check_matrix(X0, "propagate_chain")
    records = []
    for index, stage in enumerate(stages):
        if isinstance(stage, str):
            stage = ChainStage.parse(stage)
        tag = stage.seed_tag if stage.seed_tag is not None else index
        generator = rng.stream(seed, "chain.{}".format(tag))
        try:
            X = stage.apply(X, generator)
        except ValueError as error:
            raise ShapeMismatch("propagate_chain", "stage {} ({}): {}"
                                .format(index, stage.name, error)) from error
        records.append(StageRecord(stage_name=stage.name,
                                   summary=linalg.spectral_summary(X),
                                   column_envelope=column_envelope(X)))
        _chain_logger.debug("stage {} ({}): st={:.3f}".format(
            index, stage.name, records[-1].summary.stable_rank))
    return records


def quadratic_depth_experiment(L, widths, seed=0, n=512):
    """Stable rank of Z_ℓ = (W_ℓ Z_{ℓ−1})^{∘2} for ℓ = 0..L, Z₀ Gaussian.

    Arguments:
        L (int): Depth (≥ 0).
        widths (list): d₀, d₁, ..., d_L (a single int means every layer).
        seed (int, optional): Seed.
        n (int, optional): Sample count.

    Returns:
        list: L+1 stable ranks, index 0 being st(Z₀).
    """
    if isinstance(widths, int):
        widths = [widths] * (L + 1)
    if len(widths) < L + 1:
        raise ShapeMismatch("quadratic_depth_experiment",
                            "need {} widths, got {}".format(L + 1,
                                                            len(widths)))
    square = ActivationSpec("quadratic")
    Z = rng.stream(seed, "quadratic.data").standard_normal((widths[0], n))
    ranks = [linalg.spectral_summary(Z).stable_rank]
    for layer in range(1, L + 1):
        generator = rng.stream(seed, "quadratic.layer{}".format(layer))
        Z = pointwise_stage(Z, square, widths[layer], generator)
        ranks.append(linalg.spectral_summary(Z).stable_rank)
    return ranks
