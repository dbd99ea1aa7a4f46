"""Shared test oracles: finite differences and independent reimplementations.

Everything here is deliberately written without reusing the library's
vectorised code paths, so a bug cannot cancel itself out of a comparison.
"""

import numpy as np

from e2evsr.dataio import StreamPair
from e2evsr.rbm import EncoderStack, RbmParams, STACK_KINDS
from e2evsr.seqnet import GATES, LstmParams, SequenceNetParams
from e2evsr.trainer import Arch, ModelCheckpoint


def central_difference(loss_fn, arrays, h=1e-5):
    """Central finite-difference gradient of loss_fn() w.r.t. each array.

    Perturbs entries in place and restores them; loss_fn must read the
    arrays live.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn()
            flat[i] = orig - h
            minus = loss_fn()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-3):
    """Worst-coordinate relative error with a floor against FD noise.

    The floor reflects the accuracy limit of central differences at
    h=1e-5 in double precision (~1e-8 absolute on O(1) losses).
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def delta_scalar_oracle(values, window):
    """Plain-loop regression derivative of a scalar sequence."""
    T = len(values)
    denom = 2.0 * sum(w * w for w in range(1, window + 1))
    out = []
    for t in range(T):
        acc = 0.0
        for w in range(1, window + 1):
            right = values[min(t + w, T - 1)]
            left = values[max(t - w, 0)]
            acc += w * (right - left)
        out.append(acc / denom)
    return out


def rbm_joint_energy(rbm, v, h):
    """Textbook joint energy, written independently of free_energy."""
    if rbm.kind == "gaussian-bernoulli":
        vis = 0.5 * np.sum((v - rbm.vbias) ** 2)
    else:
        vis = -float(np.dot(v, rbm.vbias))
    hid = -float(np.dot(h, rbm.hbias))
    return vis + hid - float(v @ rbm.W @ h)


def enumerate_binary(n):
    """All binary vectors of length n, in lexicographic order."""
    out = []
    for bits in range(2 ** n):
        out.append(np.array([(bits >> (n - 1 - j)) & 1 for j in range(n)], dtype=float))
    return out


# ---------------------------------------------------------------------------
# Small random models for gradient checks
# ---------------------------------------------------------------------------

def random_stack(gen, sizes, scale=0.4):
    layers = []
    for i, kind in enumerate(STACK_KINDS):
        nv, nh = sizes[i], sizes[i + 1]
        layers.append(
            RbmParams(
                kind=kind,
                W=gen.uniform(-scale, scale, (nv, nh)),
                vbias=gen.uniform(-scale, scale, nv),
                hbias=gen.uniform(-scale, scale, nh),
            )
        )
    return EncoderStack(layers=layers)


def random_lstm(gen, input_dim, hidden_dim, scale=0.4):
    kwargs = {}
    for gate in GATES:
        kwargs[f"W_{gate}"] = gen.uniform(-scale, scale, (input_dim + hidden_dim, hidden_dim))
        kwargs[f"b_{gate}"] = gen.uniform(-scale, scale, hidden_dim)
    return LstmParams(**kwargs)


def random_model(gen, height=3, width=4, hidden=(6, 5, 4), bottleneck=3,
                 lstm_hidden=4, blstm_hidden=3, num_classes=3, streams="both",
                 delta_window=2):
    """Random small two-stream model with moderate weights (no saturation)."""
    pixels = height * width
    sizes = [pixels, *hidden, bottleneck]
    arch = Arch(
        height=height,
        width=width,
        num_classes=num_classes,
        layer_sizes=sizes,
        lstm_hidden=lstm_hidden,
        blstm_hidden=blstm_hidden,
        delta_window=delta_window,
        streams=streams,
    )
    feat = 3 * bottleneck
    lstm_raw = random_lstm(gen, feat, lstm_hidden) if streams in ("both", "raw") else None
    lstm_diff = random_lstm(gen, feat, lstm_hidden) if streams in ("both", "diff") else None
    if streams == "both":
        blstm_fwd = random_lstm(gen, 2 * lstm_hidden, blstm_hidden)
        blstm_bwd = random_lstm(gen, 2 * lstm_hidden, blstm_hidden)
        out_in = 2 * blstm_hidden
    else:
        blstm_fwd = blstm_bwd = None
        out_in = lstm_hidden
    net = SequenceNetParams(
        streams=streams,
        lstm_raw=lstm_raw,
        lstm_diff=lstm_diff,
        blstm_fwd=blstm_fwd,
        blstm_bwd=blstm_bwd,
        out_W=gen.uniform(-0.4, 0.4, (out_in, num_classes)),
        out_b=gen.uniform(-0.4, 0.4, num_classes),
    )
    return ModelCheckpoint(
        arch=arch,
        encoder_raw=random_stack(gen, sizes) if streams in ("both", "raw") else None,
        encoder_diff=random_stack(gen, sizes) if streams in ("both", "diff") else None,
        seqnet=net,
    )


def random_pair(gen, model, num_frames):
    """Random utterance matching a model's input geometry."""
    pixels = model.arch.layer_sizes[0]
    raw = gen.standard_normal((num_frames, pixels))
    diff = np.zeros_like(raw)
    diff[1:] = raw[1:] - raw[:-1]
    label = int(gen.integers(0, model.arch.num_classes))
    return StreamPair(raw=raw, diff=diff, label=label, subject_id="t", utterance_id="t0")
