"""End-to-end fine-tuning of the assembled two-stream model.

Utterances are batched whole (no padding: each is processed on its own and
the gradients are averaged), optimised with AdaDelta, and early-stopped on
validation loss. Both encoder stacks keep training during fine-tuning.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import seqnet
from .numeric import Rng
from .rbm import EncoderStack, init_rbm, STACK_KINDS


@dataclass
class Arch:
    """Every dimension of the model, the single source of shape truth."""

    height: int
    width: int
    num_classes: int
    layer_sizes: list  # [H*W, h1, h2, h3, bottleneck]
    lstm_hidden: int
    blstm_hidden: int
    delta_window: int = 2
    streams: str = "both"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if len(self.layer_sizes) != 5:
            raise ValueError(f"layer_sizes needs 5 entries, got {self.layer_sizes!r}")
        if self.layer_sizes[0] != self.height * self.width:
            raise ValueError(
                f"layer_sizes[0]={self.layer_sizes[0]} != frame pixels"
                f" {self.height}x{self.width}={self.height * self.width}"
            )
        if self.streams not in seqnet.STREAM_MODES:
            raise ValueError(f"streams must be one of {seqnet.STREAM_MODES}")

    @property
    def bottleneck_dim(self):
        return self.layer_sizes[-1]

    def to_dict(self):
        return {
            "height": self.height,
            "width": self.width,
            "num_classes": self.num_classes,
            "layer_sizes": [int(s) for s in self.layer_sizes],
            "lstm_hidden": self.lstm_hidden,
            "blstm_hidden": self.blstm_hidden,
            "delta_window": self.delta_window,
            "streams": self.streams,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelCheckpoint:
    """Full model: encoder stacks + recurrent net + provenance metadata."""

    arch: Arch
    encoder_raw: EncoderStack
    encoder_diff: EncoderStack
    seqnet: "seqnet.SequenceNetParams"
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, stack in (("raw", self.encoder_raw), ("diff", self.encoder_diff)):
            needed = self.arch.streams in ("both", name)
            if needed and stack is None:
                raise ValueError(f"streams={self.arch.streams!r} needs the {name} encoder")
            if stack is not None and stack.layer_sizes != list(self.arch.layer_sizes):
                raise ValueError(
                    f"{name} encoder sizes {stack.layer_sizes} != arch {self.arch.layer_sizes}"
                )
        feat = 3 * self.arch.bottleneck_dim
        for name, lstm in (("raw", self.seqnet.lstm_raw), ("diff", self.seqnet.lstm_diff)):
            if lstm is not None and lstm.input_dim != feat:
                raise ValueError(f"{name} LSTM input dim {lstm.input_dim} != 3*bottleneck {feat}")
        if self.seqnet.num_classes != self.arch.num_classes:
            raise ValueError(
                f"output classes {self.seqnet.num_classes} != arch {self.arch.num_classes}"
            )
        if self.seqnet.streams != self.arch.streams:
            raise ValueError("seqnet stream mode disagrees with arch")


def init_encoder(arch, rng):
    """Untrained encoder stack with the arch's layer sizes."""
    sizes = arch.layer_sizes
    layers = [
        init_rbm(kind, sizes[i], sizes[i + 1], rng.derive("layer", i))
        for i, kind in enumerate(STACK_KINDS)
    ]
    return EncoderStack(layers=layers)


def build_model(arch, encoder_raw, encoder_diff, rng, training_meta=None):
    """Assemble a trainable model around pretrained encoder stacks."""
    net = seqnet.init_sequence_net(
        arch.bottleneck_dim,
        arch.lstm_hidden,
        arch.blstm_hidden,
        arch.num_classes,
        arch.streams,
        rng.derive("seqnet"),
    )
    return ModelCheckpoint(
        arch=arch,
        encoder_raw=encoder_raw if arch.streams in ("both", "raw") else None,
        encoder_diff=encoder_diff if arch.streams in ("both", "diff") else None,
        seqnet=net,
        training_meta=dict(training_meta or {}),
    )


def named_parameters(model):
    """Ordered name -> live array view of every trainable parameter."""
    params = {}
    for name, stack in (("raw", model.encoder_raw), ("diff", model.encoder_diff)):
        if model.arch.streams not in ("both", name):
            continue
        for i, rbm_params in enumerate(stack.layers):
            params[f"encoder_{name}.{i}.W"] = rbm_params.W
            params[f"encoder_{name}.{i}.hbias"] = rbm_params.hbias
    for name, lstm in (
        ("lstm_raw", model.seqnet.lstm_raw),
        ("lstm_diff", model.seqnet.lstm_diff),
        ("blstm_fwd", model.seqnet.blstm_fwd),
        ("blstm_bwd", model.seqnet.blstm_bwd),
    ):
        if lstm is None:
            continue
        for gate in seqnet.GATES:
            params[f"{name}.W_{gate}"] = getattr(lstm, f"W_{gate}")
            params[f"{name}.b_{gate}"] = getattr(lstm, f"b_{gate}")
    params["out.W"] = model.seqnet.out_W
    params["out.b"] = model.seqnet.out_b
    return params


# ---------------------------------------------------------------------------
# AdaDelta
# ---------------------------------------------------------------------------

@dataclass
class AdaDeltaState:
    """Per-parameter running averages of g^2 and dx^2, lazily allocated."""

    rho: float = 0.95
    eps: float = 1e-6
    acc_grad: dict = field(default_factory=dict)
    acc_delta: dict = field(default_factory=dict)


def adadelta_step(state, params, grads):
    """One in-place AdaDelta update; halts loudly on non-finite gradients.

    Per scalar: E[g2] <- rho*E[g2] + (1-rho)*g^2, then
    dx = -sqrt(E[dx2]+eps)/sqrt(E[g2]+eps) * g with the previous E[dx2],
    then E[dx2] <- rho*E[dx2] + (1-rho)*dx^2 and x <- x + dx.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.shape} for {name}")
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in {name}")
        eg = state.acc_grad.setdefault(name, np.zeros_like(p))
        ed = state.acc_delta.setdefault(name, np.zeros_like(p))
        eg *= state.rho
        eg += (1.0 - state.rho) * g * g
        dx = -np.sqrt(ed + state.eps) / np.sqrt(eg + state.eps) * g
        ed *= state.rho
        ed += (1.0 - state.rho) * dx * dx
        p += dx
    return params, state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_utterances: int = 20
    patience: int = 5
    max_epochs: int = 100
    clip: float = 5.0
    seed: int = 0
    final_frame_only: bool = False

    def __post_init__(self):
        if self.batch_utterances < 1:
            raise ValueError("batch_utterances must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


def make_batches(utterances, batch_size, rng):
    """Seeded shuffle, then slices of batch_size (last may be short)."""
    if not utterances:
        raise ValueError("empty dataset")
    order = rng.permutation(len(utterances))
    shuffled = [utterances[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def train_epoch(model, batches, state, config):
    """One pass over the batches; returns the epoch's mean utterance loss."""
    params = named_parameters(model)
    total_loss = 0.0
    total_utts = 0
    for batch in batches:
        grad_sum = None
        for pair in batch:
            loss, _, cache = seqnet.forward(model, pair, config.final_frame_only)
            grads = seqnet.backward(model, pair, cache)
            if grad_sum is None:
                grad_sum = grads
            else:
                for key in grad_sum:
                    grad_sum[key] += grads[key]
            total_loss += loss
            total_utts += 1
        grad_avg = {key: val / len(batch) for key, val in grad_sum.items()}
        grad_avg = seqnet.clip_gradients(grad_avg, config.clip)
        adadelta_step(state, params, grad_avg)
    return total_loss / total_utts


def evaluate(model, pairs, final_frame_only=False):
    """Mean loss and last-frame accuracy over a list of utterances."""
    losses = []
    correct = 0
    for pair in pairs:
        loss, probs, _ = seqnet.forward(model, pair, final_frame_only)
        losses.append(loss)
        correct += int(np.argmax(probs[-1]) == pair.label)
    return float(np.mean(losses)), correct / len(pairs)


class EarlyStopping:
    """Stop after `patience` consecutive epochs without real improvement.

    Improvement means the validation loss drops by more than
    ``min_improvement``; ties and plateaus count against the patience.
    """

    def __init__(self, patience, min_improvement=1e-6):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best_loss = np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad_epochs = 0

    def update(self, val_loss):
        """Record one epoch's validation loss; True means stop now."""
        self.epoch += 1
        if val_loss < self.best_loss - self.min_improvement:
            self.best_loss = val_loss
            self.best_epoch = self.epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _assert_finite(model, state):
    for name, p in named_parameters(model).items():
        if not np.isfinite(p).all():
            raise RuntimeError(f"non-finite parameter after update: {name}")
    for acc in (state.acc_grad, state.acc_delta):
        for name, a in acc.items():
            if not np.isfinite(a).all():
                raise RuntimeError(f"non-finite optimizer state: {name}")


def fit(train_pairs, val_pairs, config, model):
    """Train with per-epoch validation and patience-based early stopping.

    Returns (best checkpoint seen on validation, history) where history is
    a list of dicts with epoch, train_loss, val_loss, val_accuracy rows.
    """
    train_subjects = {p.subject_id for p in train_pairs}
    val_subjects = {p.subject_id for p in val_pairs}
    overlap = train_subjects & val_subjects
    if overlap:
        raise ValueError(f"train/validation subject overlap: {sorted(overlap)}")
    if not train_pairs or not val_pairs:
        raise ValueError("train and validation sets must be nonempty")

    rng = Rng(config.seed)
    state = AdaDeltaState()
    stopper = EarlyStopping(config.patience)
    best = copy.deepcopy(model)
    best_val = np.inf
    history = []
    for epoch in range(1, config.max_epochs + 1):
        batches = make_batches(train_pairs, config.batch_utterances, rng.derive("shuffle", epoch))
        train_loss = train_epoch(model, batches, state, config)
        _assert_finite(model, state)
        val_loss, val_acc = evaluate(model, val_pairs, config.final_frame_only)
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "val_accuracy": val_acc,
            }
        )
        if val_loss < best_val - stopper.min_improvement:
            best_val = val_loss
            best = copy.deepcopy(model)
        if stopper.update(val_loss):
            break
    best.training_meta = {
        "epochs_run": len(history),
        "best_epoch": stopper.best_epoch,
        "best_val_loss": float(best_val),
        "seed": config.seed,
    }
    return best, history


def predict(model, pair):
    """Classify one utterance from its final frame's distribution.

    Returns (class index, per-frame probability matrix (T, K)).
    """
    probe = copy.copy(pair)
    if not 0 <= probe.label < model.arch.num_classes:
        probe.label = 0  # loss target is irrelevant for prediction
    _, probs, _ = seqnet.forward(model, probe)
    return int(np.argmax(probs[-1])), probs
