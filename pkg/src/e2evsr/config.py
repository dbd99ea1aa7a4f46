"""Flat key=value run configuration with documented defaults.

A config file holds ``key = value`` lines ('#' starts a comment). Unknown
keys are rejected; missing keys fall back to the defaults below, and the
fully merged ("effective") config is echoed next to every command's
outputs so a run can be replayed exactly.
"""

from pathlib import Path

from .dataio import FrameSpec, SynthConfig
from .evaluation import build_split
from .rbm import PretrainConfig
from .seqnet import STREAM_MODES
from .trainer import Arch, TrainConfig

# key -> (default, help). Parsing is typed by the default's Python type;
# comma-separated lists keep their element type.
DEFAULTS = {
    "seed": (7, "root seed; every random stream derives from it"),
    "data.diff_before_znorm": (False, "difference mean-subtracted frames instead of z-normalised ones"),
    "synth.classes": (5, "synthetic dataset: number of classes (>= 2)"),
    "synth.subjects": (6, "synthetic dataset: number of subjects (>= 3)"),
    "synth.reps": (3, "synthetic dataset: repetitions per (subject, class)"),
    "synth.height": (16, "synthetic dataset: frame height in pixels"),
    "synth.width": (16, "synthetic dataset: frame width in pixels"),
    "synth.t_min": (12, "synthetic dataset: minimum frames per utterance"),
    "synth.t_max": (20, "synthetic dataset: maximum frames per utterance"),
    "arch.hidden": ([96, 48, 24], "encoder sigmoid layer sizes, widest first"),
    "arch.bottleneck": (12, "linear bottleneck width"),
    "arch.lstm_hidden": (32, "per-stream LSTM hidden units"),
    "arch.blstm_hidden": (32, "fusion BLSTM hidden units per direction"),
    "arch.streams": ("both", "streams to use: both, raw, or diff"),
    "delta.window": (2, "temporal regression window for derivative features"),
    "pretrain.epochs": (20, "CD-1 epochs per layer"),
    "pretrain.batch_size": (100, "CD-1 mini-batch size in frames"),
    "pretrain.l2": (0.0002, "CD-1 weight decay (weights only)"),
    "pretrain.lr_bernoulli": (0.1, "CD-1 learning rate, binary-binary layers"),
    "pretrain.lr_real": (0.001, "CD-1 learning rate when either side is linear"),
    "train.batch_utterances": (20, "fine-tuning mini-batch size in utterances"),
    "train.patience": (5, "early stopping: tolerated non-improving epochs"),
    "train.max_epochs": (100, "fine-tuning epoch cap"),
    "train.clip": (5.0, "elementwise gradient clamp for LSTM/BLSTM layers"),
    "train.final_frame_loss": (False, "supervise only the last frame instead of every frame"),
    "split.protocol": ("explicit", "ouluvs2-style, cuave-style, or explicit"),
    "split.train": (["s00", "s01", "s02", "s03"], "explicit protocol: training subjects"),
    "split.val": (["s04"], "explicit protocol: validation subjects"),
    "split.test": (["s05"], "explicit protocol: test subjects"),
    "split.seed": (0, "seed for the shuffled part of the named protocols"),
}


def _parse_value(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError("expected true/false")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            if not text:
                return []
            items = [t.strip() for t in text.split(",")]
            if default and isinstance(default[0], int):
                return [int(t) for t in items]
            return items
        return text
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: bad value {text!r} ({exc})") from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def load_config(path=None, overrides=None):
    """Defaults, overlaid with a config file and then explicit overrides."""
    cfg = {key: default for key, (default, _) in DEFAULTS.items()}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in DEFAULTS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            cfg[key] = _parse_value(key, value, DEFAULTS[key][0])
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = value
    if cfg["arch.streams"] not in STREAM_MODES:
        raise ValueError(f"arch.streams must be one of {STREAM_MODES}")
    return cfg


def effective_config_text(cfg):
    """Canonical echo of a merged config; replaying it reproduces the run."""
    lines = [f"{key} = {_format_value(cfg[key])}" for key in DEFAULTS]
    return "\n".join(lines) + "\n"


def write_effective_config(cfg, out_dir):
    out = Path(out_dir) / "config.effective"
    out.write_text(effective_config_text(cfg), encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Typed views
# ---------------------------------------------------------------------------

def synth_config(cfg):
    return SynthConfig(
        num_classes=cfg["synth.classes"],
        num_subjects=cfg["synth.subjects"],
        reps=cfg["synth.reps"],
        frame_spec=FrameSpec(cfg["synth.height"], cfg["synth.width"]),
        t_min=cfg["synth.t_min"],
        t_max=cfg["synth.t_max"],
        seed=cfg["seed"],
    )


def layer_sizes(cfg, input_dim):
    return [input_dim] + list(cfg["arch.hidden"]) + [cfg["arch.bottleneck"]]


def pretrain_config(cfg, input_dim):
    return PretrainConfig(
        layer_sizes=layer_sizes(cfg, input_dim),
        epochs=cfg["pretrain.epochs"],
        batch_size=cfg["pretrain.batch_size"],
        l2=cfg["pretrain.l2"],
        lr_bernoulli=cfg["pretrain.lr_bernoulli"],
        lr_realvalued=cfg["pretrain.lr_real"],
        seed=cfg["seed"],
    )


def arch_config(cfg, height, width, num_classes):
    return Arch(
        height=height,
        width=width,
        num_classes=num_classes,
        layer_sizes=layer_sizes(cfg, height * width),
        lstm_hidden=cfg["arch.lstm_hidden"],
        blstm_hidden=cfg["arch.blstm_hidden"],
        delta_window=cfg["delta.window"],
        streams=cfg["arch.streams"],
    )


def train_config(cfg):
    return TrainConfig(
        batch_utterances=cfg["train.batch_utterances"],
        patience=cfg["train.patience"],
        max_epochs=cfg["train.max_epochs"],
        clip=cfg["train.clip"],
        seed=cfg["seed"],
        final_frame_only=cfg["train.final_frame_loss"],
    )


def split_config(cfg, entries):
    explicit = None
    if cfg["split.protocol"] == "explicit":
        explicit = (cfg["split.train"], cfg["split.val"], cfg["split.test"])
    return build_split(entries, cfg["split.protocol"], seed=cfg["split.seed"], explicit=explicit)
