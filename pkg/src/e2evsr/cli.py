"""Command-line entry point: synth, pretrain, train, eval, predict.

Every command exits 0 on success and nonzero with a one-line diagnostic on
failure, and echoes its effective configuration into the output directory
so any run can be replayed byte-for-byte.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, dataio, evaluation, trainer
from .numeric import Rng
from .rbm import pretrain_stack


def _load_cfg(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return config.load_config(args.config, overrides)


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_entries(dataset):
    manifest = Path(dataset) / "manifest.csv"
    if not manifest.exists():
        raise ValueError(f"{dataset}: no manifest.csv found")
    return manifest, dataio.parse_manifest(manifest)


def cmd_synth(args):
    cfg = _load_cfg(args)
    out = _out_dir(args.out)
    syn = config.synth_config(cfg)
    manifest = dataio.generate_synthetic(syn, out)
    config.write_effective_config(cfg, out)
    n = syn.num_subjects * syn.num_classes * syn.reps
    print(
        f"wrote {n} utterances ({syn.num_classes} classes x {syn.num_subjects} subjects"
        f" x {syn.reps} reps, frames {syn.frame_spec.height}x{syn.frame_spec.width})"
        f" to {manifest}"
    )
    return 0


def cmd_pretrain(args):
    cfg = _load_cfg(args)
    out = _out_dir(args.out)
    manifest, entries = _dataset_entries(args.dataset)
    spec = dataio.dataset_frame_spec(manifest, entries)
    split = config.split_config(cfg, entries)
    train_entries = evaluation.split_entries(entries, split)["train"]
    if not train_entries:
        raise ValueError("training split is empty")
    pairs = dataio.load_pairs(manifest, train_entries, cfg["data.diff_before_znorm"])
    vectors = np.concatenate([getattr(p, args.stream) for p in pairs], axis=0)

    pcfg = config.pretrain_config(cfg, spec.pixels)
    rng = Rng(cfg["seed"]).derive("pretrain", args.stream)
    normalization = "strict" if args.stream == "raw" else "mean-only"
    stack, log = pretrain_stack(vectors, pcfg, rng, normalization=normalization)

    ckpt_path = out / f"encoder_{args.stream}.ckpt"
    checkpoint.save_encoder(
        ckpt_path, stack, args.stream,
        meta={"height": spec.height, "width": spec.width, "seed": cfg["seed"]},
    )
    log_path = out / "pretrain_log.csv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("stream,layer,epoch,recon_error\n")
        for layer, errors in enumerate(log):
            for epoch, err in enumerate(errors, 1):
                f.write(f"{args.stream},{layer},{epoch},{err!r}\n")
    config.write_effective_config(cfg, out)
    print(f"pretrained {args.stream} encoder on {vectors.shape[0]} frames -> {ckpt_path}")
    return 0


def _load_encoder_checked(path, expected_sizes, what):
    stack, meta = checkpoint.load_encoder(path)
    if stack.layer_sizes != expected_sizes:
        raise ValueError(
            f"{what} encoder {path} has layer sizes {stack.layer_sizes},"
            f" config expects {expected_sizes}"
        )
    return stack


def cmd_train(args):
    cfg = _load_cfg(args)
    out = _out_dir(args.out)
    manifest, entries = _dataset_entries(args.dataset)
    spec = dataio.dataset_frame_spec(manifest, entries)
    num_classes = max(e.label for e in entries) + 1
    arch = config.arch_config(cfg, spec.height, spec.width, num_classes)

    encoder_raw = encoder_diff = None
    if arch.streams in ("both", "raw"):
        if args.raw_encoder is None:
            raise ValueError("streams include 'raw': --raw-encoder is required")
        encoder_raw = _load_encoder_checked(args.raw_encoder, arch.layer_sizes, "raw")
    if arch.streams in ("both", "diff"):
        if args.diff_encoder is None:
            raise ValueError("streams include 'diff': --diff-encoder is required")
        encoder_diff = _load_encoder_checked(args.diff_encoder, arch.layer_sizes, "diff")

    split = config.split_config(cfg, entries)
    groups = evaluation.split_entries(entries, split)
    diff_mode = cfg["data.diff_before_znorm"]
    train_pairs = dataio.load_pairs(manifest, groups["train"], diff_mode)
    val_pairs = dataio.load_pairs(manifest, groups["val"], diff_mode)

    model = trainer.build_model(arch, encoder_raw, encoder_diff, Rng(cfg["seed"]).derive("init"))
    best, history = trainer.fit(train_pairs, val_pairs, config.train_config(cfg), model)

    ckpt_path = out / "model.ckpt"
    checkpoint.save_model(ckpt_path, best)
    hist_path = out / "history.csv"
    with open(hist_path, "w", encoding="utf-8") as f:
        f.write("epoch,train_loss,val_loss,val_accuracy\n")
        for row in history:
            f.write(
                f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},"
                f"{row['val_accuracy']!r}\n"
            )
    config.write_effective_config(cfg, out)
    meta = best.training_meta
    print(
        f"trained {arch.streams} model for {meta['epochs_run']} epochs"
        f" (best val loss {meta['best_val_loss']:.6f} at epoch {meta['best_epoch']})"
        f" -> {ckpt_path}"
    )
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args)
    out = _out_dir(args.out)
    model = checkpoint.load_model(args.model)
    manifest, entries = _dataset_entries(args.dataset)
    spec = dataio.dataset_frame_spec(manifest, entries)
    if spec.pixels != model.arch.layer_sizes[0]:
        raise ValueError(
            f"dataset frames are {spec.height}x{spec.width} but the model expects"
            f" {model.arch.layer_sizes[0]} pixels"
        )
    split = config.split_config(cfg, entries)
    test_entries = evaluation.split_entries(entries, split)["test"]
    if not test_entries:
        raise ValueError("test split is empty")
    pairs = dataio.load_pairs(manifest, test_entries, cfg["data.diff_before_znorm"])

    predictions = [trainer.predict(model, p)[0] for p in pairs]
    labels = [p.label for p in pairs]
    acc = evaluation.accuracy(predictions, labels)
    conf = evaluation.confusion(predictions, labels, model.arch.num_classes)

    (out / "accuracy.txt").write_text(f"{acc!r}\n", encoding="utf-8")
    (out / "confusion.csv").write_text(evaluation.confusion_csv(conf), encoding="utf-8")
    (out / "confusion_normalized.csv").write_text(
        evaluation.normalized_confusion_csv(conf), encoding="utf-8"
    )
    config.write_effective_config(cfg, out)
    print(f"test accuracy {acc:.6f} on {len(pairs)} utterances -> {out}")
    return 0


def cmd_predict(args):
    cfg = _load_cfg(args)
    out = _out_dir(args.out)
    model = checkpoint.load_model(args.model)
    frames_dir = Path(args.frames)

    num_frames = 0
    while (frames_dir / dataio.FRAME_NAME.format(num_frames + 1)).exists():
        num_frames += 1
    if num_frames < 2:
        raise ValueError(f"{frames_dir}: need at least 2 frames, found {num_frames}")
    entry = dataio.ManifestEntry(
        subject_id="?", label=0, utterance_id=frames_dir.name,
        frame_dir=frames_dir.name, num_frames=num_frames,
    )
    seq = dataio.load_sequence(entry, frames_dir.parent)
    if seq.frames[0].size != model.arch.layer_sizes[0]:
        raise ValueError(
            f"{frames_dir}: frames have {seq.frames[0].size} pixels, model expects"
            f" {model.arch.layer_sizes[0]}"
        )
    pair = dataio.make_stream_pair(dataio.preprocess(seq))
    label, probs = trainer.predict(model, pair)

    probs_path = out / "probabilities.csv"
    with open(probs_path, "w", encoding="utf-8") as f:
        f.write(",".join(f"c{j}" for j in range(probs.shape[1])) + "\n")
        for row in probs:
            f.write(",".join(repr(v) for v in row) + "\n")
    print(label)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="e2evsr",
        description="Two-stream pixel-to-label utterance classifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, dataset=False, model=False):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        if dataset:
            p.add_argument("--dataset", required=True, help="dataset directory (holds manifest.csv)")
        if model:
            p.add_argument("--model", required=True, help="model checkpoint path")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="layer-wise pretrain one stream's encoder")
    common(p, dataset=True)
    p.add_argument("--stream", required=True, choices=("raw", "diff"))
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="end-to-end training from pretrained encoders")
    common(p, dataset=True)
    p.add_argument("--raw-encoder", default=None, help="raw-stream encoder checkpoint")
    p.add_argument("--diff-encoder", default=None, help="diff-stream encoder checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on the test split")
    common(p, dataset=True, model=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify a single utterance directory")
    common(p, model=True)
    p.add_argument("--frames", required=True, help="directory of frame_NNNNNN.pgm files")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
