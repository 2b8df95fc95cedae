"""Desk-scale trainable models with activation and gradient capture.

The MLP follows A₀ = X, A_ℓ = σ(W_ℓ A_{ℓ−1}) with a linear last layer; the
attention block is the decoder-style residual pair

    A^rms = RMSNorm(X), Q = W_Q A^rms, K = W_K A^rms, V = W_V A^rms,
    P = softmax(KᵀQ/√d_head), H = V P, X^att = X + W_O H,
    A^rms_mlp = RMSNorm(X^att), B = σ(W₁ A^rms_mlp), X⁺ = X^att + W₂ B.

Gradients are written out by hand (reverse-mode chain rule) so every
intermediate is at hand for the rank diagnostics.
"""
from collections import namedtuple
from collections import OrderedDict
import math
import numpy as np
from spectralrank import linalg
from spectralrank import diagnostics
from spectralrank import optim
from spectralrank import rng
from spectralrank import models
from spectralrank.logging import Logger
from spectralrank.propagation import ActivationSpec
from spectralrank.propagation import rms_normalize
from spectralrank.propagation import softmax_columns
from spectralrank.records import TraceRecord
from spectralrank.exceptions import InvalidSpec
from spectralrank.exceptions import ShapeMismatch
from spectralrank.exceptions import OptimError


BlockCapture = namedtuple("BlockCapture", [
    "activations", "preactivations", "grads", "named"])


# =============================================================================
# MLP
# =============================================================================

class MLPSpec:
    """Shape of an L-layer MLP.

    Arguments:
        widths (list): d₀, ..., d_L (L ≥ 2).
        activation (str or ActivationSpec, optional): Hidden activation.
        final_linear (bool, optional): No activation on the last layer.
    """

    def __init__(self, widths, activation="relu", final_linear=True):
        if len(widths) < 3:
            raise InvalidSpec("MLPSpec", "need at least 2 layers, got {}"
                              .format(len(widths) - 1))
        if any(int(width) < 1 for width in widths):
            raise InvalidSpec("MLPSpec", "widths must be >= 1")
        self.widths = [int(width) for width in widths]
        self.activation = ActivationSpec.parse(activation)
        self.final_linear = final_linear

    @property
    def depth(self):
        return len(self.widths) - 1


def init_mlp(spec, seed=0, scale=1.0):
    """Gaussian weights W_ℓ (d_ℓ × d_{ℓ−1}) with variance scale/d_{ℓ−1}.
    """
    weights = []
    for layer in range(1, spec.depth + 1):
        d_in, d_out = spec.widths[layer - 1], spec.widths[layer]
        generator = rng.stream(seed, "mlp.W{}".format(layer))
        weights.append(generator.standard_normal((d_out, d_in))
                       * math.sqrt(scale / d_in))
    return weights


def mlp_forward_backward(spec, weights, X, Y):
    """Half-MSE loss (1/2n)‖A_L − Y‖_F² and every layer gradient.

    The ReLU derivative at 0 is taken as 0.

    Returns:
        Tuple as:
            [0]: float: Loss.
            [1]: BlockCapture: A₀..A_L, X₁..X_L and G₁..G_L.

    Raises:
        ShapeMismatch: Weights, inputs or targets do not fit `spec`.
    """
    X = linalg.check_matrix(X, "mlp_forward_backward")
    Y = linalg.check_matrix(Y, "mlp_forward_backward")
    if len(weights) != spec.depth:
        raise ShapeMismatch("mlp_forward_backward", "expected {} weight "
                            "matrices, got {}".format(spec.depth,
                                                      len(weights)))
    for layer, W in enumerate(weights, start=1):
        expected = (spec.widths[layer], spec.widths[layer - 1])
        if np.shape(W) != expected:
            raise ShapeMismatch("mlp_forward_backward", "W{} is {}, expected "
                                "{}".format(layer, np.shape(W), expected))
    if X.shape[0] != spec.widths[0] or Y.shape[0] != spec.widths[-1] \
            or X.shape[1] != Y.shape[1]:
        raise ShapeMismatch("mlp_forward_backward", "X {} and Y {} do not "
                            "fit widths {}".format(X.shape, Y.shape,
                                                   spec.widths))
    n = X.shape[1]
    act = spec.activation
    activations = [X]
    preactivations = []
    for layer, W in enumerate(weights, start=1):
        Z = W @ activations[-1]
        preactivations.append(Z)
        last = layer == spec.depth
        activations.append(Z if last and spec.final_linear else act(Z))
    residual = activations[-1] - Y
    loss = float(np.sum(residual * residual)) / (2.0 * n)
    grads = [None] * spec.depth
    upstream = residual / n
    for layer in range(spec.depth, 0, -1):
        Z = preactivations[layer - 1]
        last = layer == spec.depth
        dZ = upstream if last and spec.final_linear \
            else upstream * act.derivative(Z)
        grads[layer - 1] = dZ @ activations[layer - 1].T
        upstream = weights[layer - 1].T @ dZ
    return loss, BlockCapture(activations=activations,
                              preactivations=preactivations, grads=grads,
                              named={})


# =============================================================================
# ATTENTION BLOCK
# =============================================================================

BLOCK_ACTIVATION = OrderedDict([
    ("E", "tokens"),
    ("W_Q", "A_rms"),
    ("W_K", "A_rms"),
    ("W_V", "A_rms"),
    ("W_O", "A_rms"),
    ("W_1", "A_rms_mlp"),
    ("W_2", "B"),
    ("W_lm", "A_rms_final"),
])
"""Parameter block → the activation whose stable rank enters its
criterion."""


def init_attention_block(d, k, seed=0, heads=1, activation="relu",
                         vocab=None, out_dim=None, causal=False):
    """Gaussian parameters of one attention + MLP block.

    Every matrix has variance 1/fan_in entries. With `vocab` the block
    starts from a token embedding E (d × vocab, variance 1/d) and takes
    token-indicator inputs. With `out_dim` a final RMSNorm and read-out
    W_lm (out_dim × d) follow the block.
    """
    if d % heads != 0:
        raise ShapeMismatch("init_attention_block", "d={} not divisible by "
                            "heads={}".format(d, heads))

    def draw(name, rows, cols, variance):
        return rng.stream(seed, "attention.{}".format(name)) \
            .standard_normal((rows, cols)) * math.sqrt(variance)

    params = {
        "W_Q": draw("W_Q", d, d, 1.0 / d),
        "W_K": draw("W_K", d, d, 1.0 / d),
        "W_V": draw("W_V", d, d, 1.0 / d),
        "W_O": draw("W_O", d, d, 1.0 / d),
        "W_1": draw("W_1", k, d, 1.0 / d),
        "W_2": draw("W_2", d, k, 1.0 / k),
        "heads": heads,
        "activation": ActivationSpec.parse(activation),
        "causal": causal,
    }
    if vocab is not None:
        params["E"] = draw("E", d, vocab, 1.0 / d)
    if out_dim is not None:
        params["W_lm"] = draw("W_lm", out_dim, d, 1.0 / d)
    return params


def _rms_backward(X, grad):
    norms = np.sqrt(np.sum(X * X, axis=0))
    inner = np.sum(X * grad, axis=0)
    return math.sqrt(X.shape[0]) / norms * (grad - X * (inner / norms ** 2))


def _causal_mask(T):
    return np.triu(np.ones((T, T), dtype=bool))


def attention_block_forward(params, inputs):
    """Runs the block and captures every named intermediate.

    Arguments:
        params (dict): From `init_attention_block`.
        inputs (numpy.ndarray): X (d × T), or a token-indicator matrix
            (vocab × T) when `params` holds an embedding E.

    Returns:
        BlockCapture: `named` maps 'tokens', 'X', 'A_rms', 'Q', 'K', 'V',
        'P' (list per head), 'H', 'X_att', 'A_rms_mlp', 'Z', 'B', 'X_plus'
        and, with W_lm, 'A_rms_final' and 'out'.

    Raises:
        ShapeMismatch: Shapes do not chain.
    """
    inputs = linalg.check_matrix(inputs, "attention_block_forward")
    named = OrderedDict()
    if "E" in params:
        if inputs.shape[0] != params["E"].shape[1]:
            raise ShapeMismatch("attention_block_forward", "tokens have {} "
                                "rows, vocabulary is {}".format(
                                    inputs.shape[0], params["E"].shape[1]))
        named["tokens"] = inputs
        X = params["E"] @ inputs
    else:
        X = inputs
    d, T = X.shape
    heads = params.get("heads", 1)
    if params["W_Q"].shape != (d, d) or d % heads != 0:
        raise ShapeMismatch("attention_block_forward", "X has {} rows, W_Q is "
                            "{}, heads={}".format(d, params["W_Q"].shape,
                                                  heads))
    act = params.get("activation", ActivationSpec("relu"))
    step = d // heads
    scale = 1.0 / math.sqrt(step)
    named["X"] = X
    A = rms_normalize(X)
    Q, K, V = params["W_Q"] @ A, params["W_K"] @ A, params["W_V"] @ A
    H = np.empty_like(V)
    mixing = []
    for h in range(heads):
        rows = slice(h * step, (h + 1) * step)
        S = scale * (K[rows].T @ Q[rows])
        if params.get("causal", False):
            S = np.where(_causal_mask(T), S, -np.inf)
        P = softmax_columns(S)
        mixing.append(P)
        H[rows] = V[rows] @ P
    X_att = X + params["W_O"] @ H
    A_mlp = rms_normalize(X_att)
    Z = params["W_1"] @ A_mlp
    B = act(Z)
    X_plus = X_att + params["W_2"] @ B
    named.update([("A_rms", A), ("Q", Q), ("K", K), ("V", V),
                  ("P", mixing), ("H", H), ("X_att", X_att),
                  ("A_rms_mlp", A_mlp), ("Z", Z), ("B", B),
                  ("X_plus", X_plus)])
    if "W_lm" in params:
        A_final = rms_normalize(X_plus)
        named["A_rms_final"] = A_final
        named["out"] = params["W_lm"] @ A_final
    else:
        named["out"] = X_plus
    return BlockCapture(activations=[], preactivations=[], grads={},
                        named=named)


def attention_block_backward(params, inputs, Y):
    """Half-MSE loss (1/2T)‖out − Y‖_F² and the gradient of every block.

    Returns:
        Tuple as:
            [0]: float: Loss.
            [1]: BlockCapture: forward intermediates in `named`, gradients
                by block name in `grads`.
    """
    capture = attention_block_forward(params, inputs)
    named = capture.named
    out = named["out"]
    Y = linalg.check_matrix(Y, "attention_block_backward")
    if Y.shape != out.shape:
        raise ShapeMismatch("attention_block_backward", "Y is {}, output is "
                            "{}".format(Y.shape, out.shape))
    T = out.shape[1]
    residual = out - Y
    loss = float(np.sum(residual * residual)) / (2.0 * T)
    act = params.get("activation", ActivationSpec("relu"))
    heads = params.get("heads", 1)
    grads = OrderedDict()
    g_out = residual / T
    if "W_lm" in params:
        grads["W_lm"] = g_out @ named["A_rms_final"].T
        g_plus = _rms_backward(named["X_plus"], params["W_lm"].T @ g_out)
    else:
        g_plus = g_out
    grads["W_2"] = g_plus @ named["B"].T
    g_Z = (params["W_2"].T @ g_plus) * act.derivative(named["Z"])
    grads["W_1"] = g_Z @ named["A_rms_mlp"].T
    g_att = g_plus + _rms_backward(named["X_att"], params["W_1"].T @ g_Z)
    grads["W_O"] = g_att @ named["H"].T
    g_H = params["W_O"].T @ g_att
    Q, K, V = named["Q"], named["K"], named["V"]
    d = Q.shape[0]
    step = d // heads
    scale = 1.0 / math.sqrt(step)
    g_Q, g_K, g_V = np.empty_like(Q), np.empty_like(K), np.empty_like(V)
    for h in range(heads):
        rows = slice(h * step, (h + 1) * step)
        P = named["P"][h]
        g_V[rows] = g_H[rows] @ P.T
        g_P = V[rows].T @ g_H[rows]
        g_S = P * (g_P - np.sum(P * g_P, axis=0, keepdims=True))
        g_Q[rows] = scale * (K[rows] @ g_S)
        g_K[rows] = scale * (Q[rows] @ g_S.T)
    A = named["A_rms"]
    grads["W_Q"] = g_Q @ A.T
    grads["W_K"] = g_K @ A.T
    grads["W_V"] = g_V @ A.T
    g_A = params["W_Q"].T @ g_Q + params["W_K"].T @ g_K \
        + params["W_V"].T @ g_V
    g_X = g_att + _rms_backward(named["X"], g_A)
    if "E" in params:
        grads["E"] = g_X @ named["tokens"].T
    named["g_X"] = g_X
    return loss, capture._replace(grads=grads)


def attention_block_criteria(capture, alpha=0.0):
    """One `CriterionReport` per parameter block, comparing nr(G) with the
    stable rank of the activation `BLOCK_ACTIVATION` assigns to it.
    Blocks with a zero gradient are left out.
    """
    reports = OrderedDict()
    for block, activation in BLOCK_ACTIVATION.items():
        G = capture.grads.get(block)
        if G is None or not np.any(G):
            continue
        reports[block] = diagnostics.layer_criterion(
            G, capture.named[activation], alpha)
    return reports


# =============================================================================
# TRAINING
# =============================================================================

class OptimizerConfig:
    """How `train` updates the blocks.

    Arguments:
        method (str): 'gd', 'spec' or 'shardwise'.
        spectral_blocks (list, optional): Block indices stepped spectrally
            by 'spec'; `None` selects the internal blocks.
        c_op (float, optional): Parameter curvature constant C_op.
        alpha (float, optional): α reported with the criteria when
            `c_op` is 0.
        polar_mode (str, optional): See `optim.polar_direction`.
        partition (str, optional): Partition scheme for 'shardwise'.
        workers (int, optional): Shard workers for 'shardwise'.
    """

    METHODS = ("gd", "spec", "shardwise")

    def __init__(self, method="gd", spectral_blocks=None, c_op=0.0,
                 alpha=0.0, polar_mode="newton_schulz", ns_max_iters=100,
                 ns_tol=1e-9, partition="whole", workers=1):
        if method not in self.METHODS:
            raise OptimError("OptimizerConfig",
                             "unknown method '{}'".format(method))
        self.method = method
        self.spectral_blocks = spectral_blocks
        self.c_op = float(c_op)
        self.alpha = float(alpha)
        self.polar_mode = polar_mode
        self.ns_max_iters = ns_max_iters
        self.ns_tol = ns_tol
        self.partition = partition
        self.workers = workers


class RFModel:
    """Random-feature regression as a one-block model, W₀ = 0.
    """

    def __init__(self, inst):
        self.inst = inst
        self.C_F = 1.0 / inst.n
        self.blocks = [optim.BlockState(W=np.zeros_like(inst.target),
                                        role="internal", spectral=False)]

    def evaluate(self, blocks):
        loss, G = models.rf_loss_grad(blocks[0].W, self.inst)
        return loss, [G], [self.inst.A]


class MLPModel:
    """An MLP on fixed data; C_F = curvature/n stands in for the
    loss-plus-downstream curvature of every block.
    """

    def __init__(self, spec, X, Y, weights, curvature=4.0):
        self.spec = spec
        self.X = X
        self.Y = Y
        self.C_F = curvature / X.shape[1]
        last = spec.depth - 1
        self.blocks = [optim.BlockState(
            W=W, spectral=False,
            role="input" if index == 0 else
            ("output" if index == last else "internal"))
            for index, W in enumerate(weights)]

    def evaluate(self, blocks):
        loss, capture = mlp_forward_backward(
            self.spec, [block.W for block in blocks], self.X, self.Y)
        return loss, capture.grads, capture.activations[:-1]


def _block_fields(grads, feats, C_F, config):
    fields = OrderedDict()
    for index, (G, A) in enumerate(zip(grads, feats), start=1):
        if not np.any(G) or not np.any(A):
            # Dead block: no direction to compare.
            nr, st, threshold = 0.0, 0.0, 0.0
        else:
            nr = linalg.spectral_summary(G).nuclear_rank
            summary = linalg.spectral_summary(A)
            st = summary.stable_rank
            if config.c_op > 0:
                alpha = config.c_op / (C_F * summary.op_norm ** 2)
            else:
                alpha = config.alpha
            threshold = diagnostics.refined_threshold(nr, st, alpha)
        fields["nr_l{}".format(index)] = nr
        fields["st_l{}".format(index)] = st
        fields["ratio_l{}".format(index)] = nr / st if st > 0 else 0.0
        fields["favored_l{}".format(index)] = int(st > 0 and nr >= st)
        fields["threshold_l{}".format(index)] = threshold
    return fields


def _with_spectral_set(blocks, config):
    if config.method == "gd":
        return [block._replace(spectral=False) for block in blocks]
    if config.spectral_blocks is None:
        return [block._replace(spectral=block.role == "internal")
                for block in blocks]
    chosen = set(config.spectral_blocks)
    return [block._replace(spectral=index in chosen)
            for index, block in enumerate(blocks)]


def train(model, config, steps):
    """Full-batch training from the model's current blocks.

    Records t = 0..steps: the loss, per-block nr(G_ℓ), st(A_{ℓ−1}), their
    ratio, the bare criterion flag and the refined threshold, plus the
    guaranteed decrease of the step taken at t and the decrease realized by
    it (both 0 on the last record).

    Arguments:
        model (RFModel or MLPModel): Model holding its data and blocks.
        config (OptimizerConfig): Update rule.
        steps (int): Update count (≥ 1).

    Returns:
        list: steps + 1 `TraceRecord` entries.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1, got {}".format(steps))
    logger = Logger("nets", config.method)
    blocks = _with_spectral_set(model.blocks, config)
    if config.method == "shardwise":
        if len(blocks) != 1:
            raise OptimError("train", "shardwise training needs a one-block "
                             "model")
        part = optim.make_partition(blocks[0].W.shape[0],
                                    blocks[0].W.shape[1], config.partition)
    records = []
    loss, grads, feats = model.evaluate(blocks)
    for t in range(steps + 1):
        fields = _block_fields(grads, feats, model.C_F, config)
        if config.method == "shardwise":
            fields["kappa"] = part.kappa
            fields["nr_part"] = diagnostics.shardwise_nuclear_rank(
                grads[0], part) if np.any(grads[0]) else 0.0
            fields["st_part"] = diagnostics.shardwise_stable_rank(
                feats[0], part)
        fields["guaranteed"] = 0.0
        fields["realized"] = 0.0
        if t == steps:
            records.append(TraceRecord(step=t, loss=loss, fields=fields))
            break
        if not any(np.any(G) for G in grads):
            logger.debug("step {}: zero gradient, stopping updates".format(t))
            next_loss = loss
        else:
            if config.method == "shardwise":
                W, guaranteed = optim.shardwise_spec_step(
                    blocks[0].W, grads[0], part, feats[0],
                    1.0 / model.C_F, config.polar_mode, config.workers,
                    config.ns_max_iters, config.ns_tol)
                blocks = [blocks[0]._replace(W=W)]
            else:
                guaranteed = optim.predicted_decrease(
                    blocks, grads, feats, model.C_F, config.c_op)
                blocks = optim.mixed_step(
                    blocks, grads, feats, model.C_F, config.c_op,
                    config.polar_mode, config.ns_max_iters, config.ns_tol)
            fields["guaranteed"] = guaranteed
            next_loss, grads, feats = model.evaluate(blocks)
        fields["realized"] = loss - next_loss
        logger.debug("step {}: loss {:.6g}, realized {:.3e}, guaranteed "
                     "{:.3e}".format(t, loss, fields["realized"],
                                     fields["guaranteed"]))
        records.append(TraceRecord(step=t, loss=loss, fields=fields))
        loss = next_loss
    model.blocks = blocks
    return records
