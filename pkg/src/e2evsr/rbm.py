"""Single-step contrastive-divergence RBM training and greedy stacking.

Three unit pairings appear in one encoder stack: a Gaussian-Bernoulli RBM
on the (z-normalised) pixel input, two Bernoulli-Bernoulli RBMs, and a
Bernoulli-Gaussian RBM whose linear hidden units form the bottleneck.
Gaussian units have unit variance throughout.
"""

from dataclasses import dataclass, field

import numpy as np

from .numeric import Rng, sample_bernoulli, sample_gaussian, sigmoid

GAUSSIAN_BERNOULLI = "gaussian-bernoulli"
BERNOULLI_BERNOULLI = "bernoulli-bernoulli"
BERNOULLI_GAUSSIAN = "bernoulli-gaussian"
KINDS = (GAUSSIAN_BERNOULLI, BERNOULLI_BERNOULLI, BERNOULLI_GAUSSIAN)

# kind sequence of a full encoder stack, input layer first
STACK_KINDS = (
    GAUSSIAN_BERNOULLI,
    BERNOULLI_BERNOULLI,
    BERNOULLI_BERNOULLI,
    BERNOULLI_GAUSSIAN,
)


@dataclass
class RbmParams:
    """Weights of one RBM; ``kind`` names the (visible, hidden) unit types."""

    kind: str
    W: np.ndarray      # (visible, hidden)
    vbias: np.ndarray  # (visible,)
    hbias: np.ndarray  # (hidden,)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown RBM kind {self.kind!r}")
        nv, nh = self.W.shape
        if self.vbias.shape != (nv,) or self.hbias.shape != (nh,):
            raise ValueError(
                f"inconsistent RBM shapes: W {self.W.shape}, vbias {self.vbias.shape},"
                f" hbias {self.hbias.shape}"
            )

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    @property
    def visible_is_gaussian(self):
        return self.kind == GAUSSIAN_BERNOULLI

    @property
    def hidden_is_gaussian(self):
        return self.kind == BERNOULLI_GAUSSIAN


@dataclass
class PretrainConfig:
    """Layer-wise pretraining hyperparameters.

    ``layer_sizes`` is [input, h1, h2, h3, bottleneck]; the learning rate is
    picked per RBM: ``lr_bernoulli`` when both sides are binary,
    ``lr_realvalued`` when either side is linear.
    """

    layer_sizes: list
    epochs: int = 20
    batch_size: int = 100
    l2: float = 0.0002
    lr_bernoulli: float = 0.1
    lr_realvalued: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) != 5:
            raise ValueError(
                f"layer_sizes needs 5 entries [input, h1, h2, h3, bottleneck],"
                f" got {self.layer_sizes!r}"
            )
        if any(int(s) < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive: {self.layer_sizes!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_bernoulli <= 0 or self.lr_realvalued <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class EncoderStack:
    """Greedily pretrained encoder: 3 sigmoid layers + linear bottleneck."""

    layers: list  # of RbmParams, used feed-forward via propup

    def __post_init__(self):
        if len(self.layers) != len(STACK_KINDS):
            raise ValueError(f"encoder stack needs {len(STACK_KINDS)} layers, got {len(self.layers)}")
        for i, (rbm, kind) in enumerate(zip(self.layers, STACK_KINDS)):
            if rbm.kind != kind:
                raise ValueError(f"layer {i} must be {kind}, got {rbm.kind}")
        for i in range(len(self.layers) - 1):
            if self.layers[i].n_hidden != self.layers[i + 1].n_visible:
                raise ValueError(
                    f"layer {i} hidden dim {self.layers[i].n_hidden} != layer {i + 1}"
                    f" visible dim {self.layers[i + 1].n_visible}"
                )

    @property
    def input_dim(self):
        return self.layers[0].n_visible

    @property
    def bottleneck_dim(self):
        return self.layers[-1].n_hidden

    @property
    def layer_sizes(self):
        return [self.layers[0].n_visible] + [l.n_hidden for l in self.layers]


def init_rbm(kind, n_visible, n_hidden, rng):
    """Fresh RBM: weights Normal(0, 0.01), biases zero."""
    W = 0.01 * rng.normal((n_visible, n_hidden))
    return RbmParams(kind=kind, W=W, vbias=np.zeros(n_visible), hbias=np.zeros(n_hidden))


def _check_batch(rbm, v, dim, what):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] != dim:
        raise ValueError(f"{what} dimension mismatch: got {v.shape[1]}, RBM has {dim}")
    return v


def propup(rbm, v):
    """Hidden activations from visibles: sigmoid probs, or means if linear."""
    v = _check_batch(rbm, v, rbm.n_visible, "visible")
    pre = v @ rbm.W + rbm.hbias
    return pre if rbm.hidden_is_gaussian else sigmoid(pre)


def propdown(rbm, h):
    """Visible activations from hiddens: sigmoid probs, or means if linear."""
    h = _check_batch(rbm, h, rbm.n_hidden, "hidden")
    pre = h @ rbm.W.T + rbm.vbias
    return pre if rbm.visible_is_gaussian else sigmoid(pre)


def free_energy(rbm, v):
    """Free energy of visible configurations (hidden units integrated out).

    For a batch, returns one value per row. exp(-free_energy) summed over
    all visible configurations equals the partition function, which is what
    the enumeration tests check.
    """
    was_vector = np.asarray(v).ndim == 1
    v = _check_batch(rbm, v, rbm.n_visible, "visible")
    a = v @ rbm.W + rbm.hbias
    if rbm.hidden_is_gaussian:
        hidden_term = -(0.5 * a * a + 0.5 * np.log(2.0 * np.pi)).sum(axis=1)
    else:
        hidden_term = -np.logaddexp(0.0, a).sum(axis=1)
    if rbm.visible_is_gaussian:
        visible_term = 0.5 * ((v - rbm.vbias) ** 2).sum(axis=1)
    else:
        visible_term = -(v @ rbm.vbias)
    out = visible_term + hidden_term
    return float(out[0]) if was_vector else out


def cd1_update(rbm, batch, config, rng):
    """One CD-1 step on a batch; returns (updated params, recon error).

    Positive/negative statistics use hidden probabilities (means for linear
    units); the reconstruction is driven by a hidden sample, with Bernoulli
    visibles resampled and Gaussian visibles set to their mean. L2 decay
    applies to weights only.
    """
    batch = _check_batch(rbm, batch, rbm.n_visible, "visible")
    n = batch.shape[0]
    if n == 0:
        raise ValueError("empty CD-1 batch")
    lr = config.lr_bernoulli if rbm.kind == BERNOULLI_BERNOULLI else config.lr_realvalued

    h0_pre = batch @ rbm.W + rbm.hbias
    if rbm.hidden_is_gaussian:
        h0_prob = h0_pre
        h0_sample = sample_gaussian(h0_pre, rng)
    else:
        h0_prob = sigmoid(h0_pre)
        h0_sample = sample_bernoulli(h0_prob, rng)

    v1_pre = h0_sample @ rbm.W.T + rbm.vbias
    if rbm.visible_is_gaussian:
        v1 = v1_pre
        v1_mean = v1_pre
    else:
        v1_mean = sigmoid(v1_pre)
        v1 = sample_bernoulli(v1_mean, rng)

    h1_pre = v1 @ rbm.W + rbm.hbias
    h1_prob = h1_pre if rbm.hidden_is_gaussian else sigmoid(h1_pre)

    dW = (batch.T @ h0_prob - v1.T @ h1_prob) / n - config.l2 * rbm.W
    dvb = (batch - v1).mean(axis=0)
    dhb = (h0_prob - h1_prob).mean(axis=0)

    updated = RbmParams(
        kind=rbm.kind,
        W=rbm.W + lr * dW,
        vbias=rbm.vbias + lr * dvb,
        hbias=rbm.hbias + lr * dhb,
    )
    recon_error = float(((batch - v1_mean) ** 2).mean())
    return updated, recon_error


def _check_normalized(data, mode):
    """Sanity check on pretraining input for the linear-visible first layer.

    ``strict`` expects z-normalised rows (mean 0, std 1, or all-zero
    degenerate rows); ``mean-only`` checks just the zero mean, which is all
    the diff stream guarantees; ``off`` skips the check.
    """
    if mode == "off":
        return
    step = max(len(data) // 32, 1)
    sample = data[::step][:32]
    means = sample.mean(axis=1)
    stds = sample.std(axis=1)
    if np.abs(means).max() > 1e-6:
        raise ValueError(
            f"first-layer input is not normalised: |row mean| up to {np.abs(means).max():.3g}"
        )
    if mode == "strict":
        bad = (np.abs(stds - 1.0) > 1e-6) & (stds > 1e-6)
        if bad.any():
            raise ValueError(
                f"first-layer input is not z-normalised: row std {stds[bad][0]:.6f}"
            )


def pretrain_stack(stream_data, config, rng, normalization="strict"):
    """Greedy layer-wise CD-1 pretraining of one stream's encoder.

    Trains layer k on the previous layer's hidden probabilities (means for
    the linear bottleneck); layers never see the ones above them. Returns
    (EncoderStack, log) where log is a list of per-layer lists of per-epoch
    mean reconstruction errors.
    """
    data = np.asarray(stream_data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("stream data must be a (num_frames, dim) array")
    sizes = [int(s) for s in config.layer_sizes]
    if data.shape[1] != sizes[0]:
        raise ValueError(f"data dim {data.shape[1]} != layer_sizes[0] {sizes[0]}")
    _check_normalized(data, normalization)

    layers = []
    log = []
    for i, kind in enumerate(STACK_KINDS):
        rbm = init_rbm(kind, sizes[i], sizes[i + 1], rng.derive("init", i))
        train_rng = rng.derive("train", i)
        epoch_errors = []
        for epoch in range(config.epochs):
            order = rng.derive("order", i, epoch).permutation(data.shape[0])
            shuffled = data[order]
            batch_errs = []
            for start in range(0, shuffled.shape[0], config.batch_size):
                batch = shuffled[start : start + config.batch_size]
                rbm, err = cd1_update(rbm, batch, config, train_rng)
                batch_errs.append(err)
            epoch_errors.append(float(np.mean(batch_errs)))
        layers.append(rbm)
        log.append(epoch_errors)
        data = propup(rbm, data)
    return EncoderStack(layers=layers), log


def encode(stack, x):
    """Deterministic feed-forward to the bottleneck (works on batches)."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != stack.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != encoder input {stack.input_dim}")
    for rbm in stack.layers[:-1]:
        x = sigmoid(x @ rbm.W + rbm.hbias)
    last = stack.layers[-1]
    x = x @ last.W + last.hbias
    return x[0] if squeeze else x


def encode_with_cache(stack, x):
    """Feed-forward keeping each layer's input for exact backprop.

    Returns (bottleneck, activations) where activations[i] is the input that
    layer i consumed (activations[0] is the data).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != stack.input_dim:
        raise ValueError(f"encoder expects (T, {stack.input_dim}) input, got {x.shape}")
    activations = [x]
    for rbm in stack.layers[:-1]:
        x = sigmoid(x @ rbm.W + rbm.hbias)
        activations.append(x)
    last = stack.layers[-1]
    return x @ last.W + last.hbias, activations


def encoder_backward(stack, activations, d_bottleneck):
    """Gradients of the feed-forward pass w.r.t. each layer's W and hbias.

    Returns a list of (dW, dhbias) aligned with stack.layers. Visible biases
    play no part in the feed-forward pass, so they carry no gradient here.
    """
    grads = [None] * len(stack.layers)
    d = d_bottleneck
    last = stack.layers[-1]
    grads[-1] = (activations[-1].T @ d, d.sum(axis=0))
    d = d @ last.W.T
    for i in range(len(stack.layers) - 2, -1, -1):
        act_out = activations[i + 1]
        d = d * act_out * (1.0 - act_out)
        grads[i] = (activations[i].T @ d, d.sum(axis=0))
        d = d @ stack.layers[i].W.T
    return grads
