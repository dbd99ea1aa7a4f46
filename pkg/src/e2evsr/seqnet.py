"""Differentiable sequence machinery and the assembled two-stream network.

Everything here is exact: the temporal-derivative features are a fixed
linear filter, the LSTM/BLSTM layers carry full backpropagation-through-
time, and `backward` returns the true gradient of the per-frame softmax
cross-entropy with respect to every trainable array, encoders included.
"""

from dataclasses import dataclass

import numpy as np

from .numeric import log_softmax, sigmoid
from .rbm import encode_with_cache, encoder_backward


@dataclass(frozen=True)
class DeltaConfig:
    """Temporal regression window for first/second derivative features."""

    window: int = 2

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"delta window must be >= 1, got {self.window}")


def delta_matrix(num_frames, window):
    """T x T matrix of the regression-derivative filter.

    Row t encodes d_t = sum_{w=1..window} w * (c_{t+w} - c_{t-w}) /
    (2 * sum w^2) with out-of-range frames replicated from the nearest
    edge. Used for the adjoint (transpose) in backprop.
    """
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    D = np.zeros((num_frames, num_frames))
    for t in range(num_frames):
        for w in range(1, window + 1):
            D[t, min(t + w, num_frames - 1)] += w / denom
            D[t, max(t - w, 0)] -= w / denom
    return D


def _delta_apply(arr, window):
    # Differences first, so constant input cancels to exact zero before any
    # scaling touches it.
    T = arr.shape[0]
    idx = np.arange(T)
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    out = np.zeros_like(arr)
    for w in range(1, window + 1):
        out += w * (arr[np.minimum(idx + w, T - 1)] - arr[np.maximum(idx - w, 0)])
    return out / denom


def _as_sequence(seq):
    arr = np.asarray(seq, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty feature sequence")
    return arr


def delta(seq, cfg=DeltaConfig()):
    """First temporal derivatives of a (T,) or (T, dim) sequence."""
    return _delta_apply(_as_sequence(seq), cfg.window)


def append_deltas(seq, cfg=DeltaConfig()):
    """Per-frame [features, delta, delta-delta]: (T, dim) -> (T, 3*dim)."""
    arr = _as_sequence(seq)
    if arr.ndim != 2:
        raise ValueError("append_deltas expects a (T, dim) sequence")
    d1 = _delta_apply(arr, cfg.window)
    return np.concatenate([arr, d1, _delta_apply(d1, cfg.window)], axis=1)


# ---------------------------------------------------------------------------
# LSTM / BLSTM
# ---------------------------------------------------------------------------

GATES = ("i", "f", "o", "g")


@dataclass
class LstmParams:
    """One LSTM's parameters; each gate maps [input, prev hidden] -> hidden."""

    W_i: np.ndarray
    W_f: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        shape = self.W_i.shape
        hidden = shape[1]
        for gate in GATES:
            W = getattr(self, f"W_{gate}")
            b = getattr(self, f"b_{gate}")
            if W.shape != shape or b.shape != (hidden,):
                raise ValueError(f"inconsistent LSTM gate shapes (gate {gate})")
        if shape[0] <= hidden:
            raise ValueError(f"gate matrix {shape} leaves no room for the input block")

    @property
    def hidden_dim(self):
        return self.W_i.shape[1]

    @property
    def input_dim(self):
        return self.W_i.shape[0] - self.hidden_dim


def init_lstm(input_dim, hidden_dim, rng):
    """Gate weights Uniform(-0.05, 0.05); forget bias 1, other biases 0."""
    def w():
        return 0.1 * rng.uniform((input_dim + hidden_dim, hidden_dim)) - 0.05

    return LstmParams(
        W_i=w(), W_f=w(), W_o=w(), W_g=w(),
        b_i=np.zeros(hidden_dim),
        b_f=np.ones(hidden_dim),
        b_o=np.zeros(hidden_dim),
        b_g=np.zeros(hidden_dim),
    )


def lstm_forward(params, inputs):
    """Run an LSTM from zero state over (T, input_dim) inputs.

    Returns (hidden sequence (T, hidden), cache for lstm_backward).
    """
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise ValueError(f"LSTM expects (T, {params.input_dim}) inputs, got {X.shape}")
    T = X.shape[0]
    hid = params.hidden_dim
    Z = np.zeros((T, params.input_dim + hid))
    I = np.zeros((T, hid))
    F = np.zeros((T, hid))
    O = np.zeros((T, hid))
    G = np.zeros((T, hid))
    TC = np.zeros((T, hid))
    C_prev = np.zeros((T, hid))
    H = np.zeros((T, hid))

    h = np.zeros(hid)
    c = np.zeros(hid)
    for t in range(T):
        z = np.concatenate([X[t], h])
        i = sigmoid(z @ params.W_i + params.b_i)
        f = sigmoid(z @ params.W_f + params.b_f)
        o = sigmoid(z @ params.W_o + params.b_o)
        g = np.tanh(z @ params.W_g + params.b_g)
        C_prev[t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        Z[t], I[t], F[t], O[t], G[t], TC[t], H[t] = z, i, f, o, g, tc, h
    cache = {"Z": Z, "I": I, "F": F, "O": O, "G": G, "TC": TC, "C_prev": C_prev}
    return H, cache


def lstm_backward(params, cache, d_hidden):
    """Exact BPTT. Returns (gate gradients dict, gradient w.r.t. inputs)."""
    if cache is None:
        raise ValueError("missing forward cache")
    Z, I, F, O, G, TC, C_prev = (
        cache["Z"], cache["I"], cache["F"], cache["O"], cache["G"], cache["TC"], cache["C_prev"],
    )
    T, hid = I.shape
    in_dim = params.input_dim
    dH = np.asarray(d_hidden, dtype=np.float64)
    if dH.shape != (T, hid):
        raise ValueError(f"upstream gradient shape {dH.shape} != {(T, hid)}")

    grads = {f"W_{gate}": np.zeros_like(getattr(params, f"W_{gate}")) for gate in GATES}
    grads.update({f"b_{gate}": np.zeros(hid) for gate in GATES})
    dX = np.zeros((T, in_dim))

    dh_next = np.zeros(hid)
    dc_next = np.zeros(hid)
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        do = dh * TC[t]
        dc = dh * O[t] * (1.0 - TC[t] ** 2) + dc_next
        di = dc * G[t]
        dg = dc * I[t]
        df = dc * C_prev[t]
        dc_next = dc * F[t]

        da = {
            "i": di * I[t] * (1.0 - I[t]),
            "f": df * F[t] * (1.0 - F[t]),
            "o": do * O[t] * (1.0 - O[t]),
            "g": dg * (1.0 - G[t] ** 2),
        }
        dz = np.zeros(in_dim + hid)
        for gate in GATES:
            grads[f"W_{gate}"] += np.outer(Z[t], da[gate])
            grads[f"b_{gate}"] += da[gate]
            dz += da[gate] @ getattr(params, f"W_{gate}").T
        dX[t] = dz[:in_dim]
        dh_next = dz[in_dim:]
    return grads, dX


def blstm_forward(fwd, bwd, inputs):
    """Bidirectional pass; output frame t is [h_fwd_t, h_bwd_t]."""
    X = np.asarray(inputs, dtype=np.float64)
    H_f, cache_f = lstm_forward(fwd, X)
    H_b_rev, cache_b = lstm_forward(bwd, X[::-1])
    out = np.concatenate([H_f, H_b_rev[::-1]], axis=1)
    return out, (cache_f, cache_b)


def blstm_backward(fwd, bwd, cache, d_out):
    """BPTT through both directions; returns (fwd grads, bwd grads, dX)."""
    if cache is None:
        raise ValueError("missing forward cache")
    cache_f, cache_b = cache
    hid = fwd.hidden_dim
    dU = np.asarray(d_out, dtype=np.float64)
    grads_f, dX_f = lstm_backward(fwd, cache_f, dU[:, :hid])
    grads_b, dX_b_rev = lstm_backward(bwd, cache_b, dU[:, hid:][::-1])
    return grads_f, grads_b, dX_f + dX_b_rev[::-1]


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def _loss_from_logits(logit_seq, label, final_frame_only=False):
    logits = np.asarray(logit_seq, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError(f"logits must be (T, K) with K >= 2, got {logits.shape}")
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    K = logits.shape[1]
    if not 0 <= label < K:
        raise ValueError(f"label {label} outside [0, {K})")
    logp = log_softmax(logits, axis=1)
    if final_frame_only:
        loss = float(-logp[-1, label])
    else:
        loss = float(-logp[:, label].mean())
    return loss, np.exp(logp)


def sequence_loss(logit_seq, label):
    """Mean per-frame cross-entropy of an utterance against one label.

    Every frame carries the utterance label; returns (loss, per-frame
    probabilities (T, K)).
    """
    return _loss_from_logits(logit_seq, label)


def _loss_grad(probs, label, final_frame_only):
    d = probs.copy()
    d[:, label] -= 1.0
    if final_frame_only:
        d[:-1] = 0.0
        return d
    return d / probs.shape[0]


# ---------------------------------------------------------------------------
# Assembled network
# ---------------------------------------------------------------------------

STREAM_MODES = ("both", "raw", "diff")


@dataclass
class SequenceNetParams:
    """Recurrent half of the model: per-stream LSTMs, fusion BLSTM, output.

    In single-stream mode the unused stream's LSTM and the BLSTM are None
    and the output layer reads the surviving LSTM directly.
    """

    streams: str
    lstm_raw: LstmParams
    lstm_diff: LstmParams
    blstm_fwd: LstmParams
    blstm_bwd: LstmParams
    out_W: np.ndarray
    out_b: np.ndarray

    def __post_init__(self):
        if self.streams not in STREAM_MODES:
            raise ValueError(f"streams must be one of {STREAM_MODES}, got {self.streams!r}")
        if self.streams == "both":
            if not (self.lstm_raw and self.lstm_diff and self.blstm_fwd and self.blstm_bwd):
                raise ValueError("two-stream net needs both LSTMs and the BLSTM")
            fusion = self.lstm_raw.hidden_dim + self.lstm_diff.hidden_dim
            if self.blstm_fwd.input_dim != fusion or self.blstm_bwd.input_dim != fusion:
                raise ValueError(
                    f"BLSTM input dim {self.blstm_fwd.input_dim} != concatenated"
                    f" stream hidden dims {fusion}"
                )
            out_in = self.blstm_fwd.hidden_dim + self.blstm_bwd.hidden_dim
        else:
            lstm = self.lstm_raw if self.streams == "raw" else self.lstm_diff
            if lstm is None:
                raise ValueError(f"stream {self.streams!r} needs its LSTM")
            if self.blstm_fwd is not None or self.blstm_bwd is not None:
                raise ValueError("single-stream net must not carry a BLSTM")
            out_in = lstm.hidden_dim
        if self.out_W.shape[0] != out_in:
            raise ValueError(f"output layer input dim {self.out_W.shape[0]} != {out_in}")
        if self.out_b.shape != (self.out_W.shape[1],):
            raise ValueError("output bias shape mismatch")

    @property
    def num_classes(self):
        return self.out_W.shape[1]


def init_sequence_net(bottleneck_dim, lstm_hidden, blstm_hidden, num_classes, streams, rng):
    """Fresh recurrent parameters for the given stream mode."""
    if streams not in STREAM_MODES:
        raise ValueError(f"streams must be one of {STREAM_MODES}, got {streams!r}")
    feat = 3 * bottleneck_dim
    lstm_raw = lstm_diff = blstm_fwd = blstm_bwd = None
    if streams in ("both", "raw"):
        lstm_raw = init_lstm(feat, lstm_hidden, rng.derive("lstm-raw"))
    if streams in ("both", "diff"):
        lstm_diff = init_lstm(feat, lstm_hidden, rng.derive("lstm-diff"))
    if streams == "both":
        blstm_fwd = init_lstm(2 * lstm_hidden, blstm_hidden, rng.derive("blstm-fwd"))
        blstm_bwd = init_lstm(2 * lstm_hidden, blstm_hidden, rng.derive("blstm-bwd"))
        out_in = 2 * blstm_hidden
    else:
        out_in = lstm_hidden
    out_W = 0.1 * rng.derive("out").uniform((out_in, num_classes)) - 0.05
    return SequenceNetParams(
        streams=streams,
        lstm_raw=lstm_raw,
        lstm_diff=lstm_diff,
        blstm_fwd=blstm_fwd,
        blstm_bwd=blstm_bwd,
        out_W=out_W,
        out_b=np.zeros(num_classes),
    )


def _stream_forward(stack, vectors, delta_cfg):
    bottleneck, acts = encode_with_cache(stack, vectors)
    D = delta_matrix(bottleneck.shape[0], delta_cfg.window)
    d1 = D @ bottleneck
    features = np.concatenate([bottleneck, d1, D @ d1], axis=1)
    return {"acts": acts, "delta_mat": D, "features": features}


def _stream_backward(stack, cache, d_features):
    B = d_features.shape[1] // 3
    D = cache["delta_mat"]
    d_bottleneck = (
        d_features[:, :B]
        + D.T @ d_features[:, B : 2 * B]
        + (D @ D).T @ d_features[:, 2 * B :]
    )
    return encoder_backward(stack, cache["acts"], d_bottleneck)


def forward(model, pair, final_frame_only=False):
    """Full forward pass of one utterance.

    ``model`` carries encoder_raw / encoder_diff / seqnet / arch (see
    trainer.ModelCheckpoint). Returns (loss, per-frame probs, cache).
    """
    snp = model.seqnet
    delta_cfg = DeltaConfig(model.arch.delta_window)
    cache = {"label": pair.label, "final_frame_only": final_frame_only}

    hidden = []
    for name, stack, vectors in (
        ("raw", model.encoder_raw, pair.raw),
        ("diff", model.encoder_diff, pair.diff),
    ):
        if snp.streams not in ("both", name):
            continue
        if stack is None:
            raise ValueError(f"model is missing the {name} encoder")
        sc = _stream_forward(stack, vectors, delta_cfg)
        lstm = snp.lstm_raw if name == "raw" else snp.lstm_diff
        H, lstm_cache = lstm_forward(lstm, sc["features"])
        sc["lstm_cache"] = lstm_cache
        cache[name] = sc
        hidden.append(H)

    if snp.streams == "both":
        Z = np.concatenate(hidden, axis=1)
        U, blstm_cache = blstm_forward(snp.blstm_fwd, snp.blstm_bwd, Z)
        cache["blstm_cache"] = blstm_cache
        cache["U"] = U
        top = U
    else:
        top = hidden[0]
        cache["U"] = top

    logits = top @ snp.out_W + snp.out_b
    loss, probs = _loss_from_logits(logits, pair.label, final_frame_only)
    cache["probs"] = probs
    return loss, probs, cache


def backward(model, pair, cache):
    """Exact gradients of the utterance loss for every trainable array.

    Returns a flat dict keyed like the model's named_parameters.
    """
    if cache is None or "probs" not in cache:
        raise ValueError("missing forward cache")
    snp = model.seqnet
    grads = {}

    d_logits = _loss_grad(cache["probs"], cache["label"], cache["final_frame_only"])
    U = cache["U"]
    grads["out.W"] = U.T @ d_logits
    grads["out.b"] = d_logits.sum(axis=0)
    dU = d_logits @ snp.out_W.T

    if snp.streams == "both":
        gf, gb, dZ = blstm_backward(snp.blstm_fwd, snp.blstm_bwd, cache["blstm_cache"], dU)
        for key, val in gf.items():
            grads[f"blstm_fwd.{key}"] = val
        for key, val in gb.items():
            grads[f"blstm_bwd.{key}"] = val
        h_raw = snp.lstm_raw.hidden_dim
        stream_upstream = {"raw": dZ[:, :h_raw], "diff": dZ[:, h_raw:]}
    else:
        stream_upstream = {snp.streams: dU}

    for name, d_hidden in stream_upstream.items():
        lstm = snp.lstm_raw if name == "raw" else snp.lstm_diff
        stack = model.encoder_raw if name == "raw" else model.encoder_diff
        sc = cache[name]
        lstm_grads, d_features = lstm_backward(lstm, sc["lstm_cache"], d_hidden)
        for key, val in lstm_grads.items():
            grads[f"lstm_{name}.{key}"] = val
        for i, (dW, dhb) in enumerate(_stream_backward(stack, sc, d_features)):
            grads[f"encoder_{name}.{i}.W"] = dW
            grads[f"encoder_{name}.{i}.hbias"] = dhb
    return grads


def clip_gradients(grads, threshold):
    """Clamp LSTM/BLSTM gradient entries to [-threshold, threshold].

    Encoder and output-layer gradients pass through untouched. Returns a
    new dict; idempotent.
    """
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    out = {}
    for name, g in grads.items():
        if name.startswith(("lstm_", "blstm_")):
            out[name] = np.clip(g, -threshold, threshold)
        else:
            out[name] = g
    return out
