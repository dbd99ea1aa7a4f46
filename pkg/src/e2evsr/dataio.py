"""Dataset loading, preprocessing, and deterministic synthetic data.

An utterance is a directory of binary PGM frames listed in a CSV manifest.
Preprocessing removes speaker-specific appearance (mean-image subtraction
followed by per-frame z-normalisation), after which each utterance is
turned into two flattened streams: the frames themselves and their
consecutive differences.
"""

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numeric import Rng

MANIFEST_HEADER = ["subject_id", "label", "utterance_id", "frame_dir", "num_frames"]
FRAME_NAME = "frame_{:06d}.pgm"

# Frames whose post-subtraction std falls below this are emitted as all-zero
# instead of being divided by a vanishing denominator.
DEGENERATE_STD = 1e-8


@dataclass(frozen=True)
class FrameSpec:
    """Pixel geometry shared by every frame of a dataset."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"frame spec must be at least 2x2, got {self.height}x{self.width}")

    @property
    def pixels(self):
        return self.height * self.width


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    label: int
    utterance_id: str
    frame_dir: str
    num_frames: int


@dataclass
class FrameSequence:
    """One utterance: frames plus metadata, with a preprocessing guard."""

    entry: ManifestEntry
    frames: list
    preprocessed: bool = False


@dataclass
class StreamPair:
    """Flattened per-frame inputs for the two model streams.

    ``raw`` and ``diff`` are (T, H*W) arrays; ``diff[0]`` is all-zero so the
    two streams stay index-aligned over the same T frames.
    """

    raw: np.ndarray
    diff: np.ndarray
    label: int
    subject_id: str = ""
    utterance_id: str = ""


def read_pgm(path):
    """Read a binary PGM (P5, maxval 255) into an HxW float64 array."""
    data = Path(path).read_bytes()
    if data[:2] == b"P2":
        raise ValueError(f"{path}: ASCII PGM (P2) is not supported, expected binary P5")
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a PGM file (bad magic {data[:2]!r})")

    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # optionally interleaved with '#' comment lines, then one whitespace byte.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise ValueError(f"{path}: bad PGM header token {data[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval

    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: maxval must be 255, got {maxval}")
    if width < 1 or height < 1:
        raise ValueError(f"{path}: bad dimensions {width}x{height}")
    payload = data[pos : pos + width * height]
    if len(payload) < width * height:
        raise ValueError(
            f"{path}: truncated payload, expected {width * height} bytes, got {len(payload)}"
        )
    img = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    return img.reshape(height, width)


def write_pgm(path, img):
    """Write an HxW array of values in [0, 255] as binary PGM."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM frames must be 2-D")
    h, w = img.shape
    body = np.clip(np.rint(img), 0, 255).astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(body)


def parse_manifest(path):
    """Parse a manifest CSV into validated entries in file order."""
    entries = []
    seen = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if header != MANIFEST_HEADER:
            raise ValueError(
                f"{path}: bad manifest header {header!r}, expected {MANIFEST_HEADER!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ValueError(f"{path}:{lineno}: expected {len(MANIFEST_HEADER)} columns, got {len(row)}")
            subject_id, label_s, utterance_id, frame_dir, num_frames_s = row
            try:
                label = int(label_s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer label {label_s!r}") from None
            if label < 0:
                raise ValueError(f"{path}:{lineno}: negative label {label}")
            try:
                num_frames = int(num_frames_s)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-integer num_frames {num_frames_s!r}") from None
            if num_frames < 2:
                raise ValueError(f"{path}:{lineno}: num_frames must be >= 2, got {num_frames}")
            key = (subject_id, utterance_id)
            if key in seen:
                raise ValueError(
                    f"{path}:{lineno}: duplicate (subject_id, utterance_id) {key!r},"
                    f" first seen on line {seen[key]}"
                )
            seen[key] = lineno
            entries.append(ManifestEntry(subject_id, label, utterance_id, frame_dir, num_frames))
    return entries


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.subject_id, e.label, e.utterance_id, e.frame_dir, e.num_frames])


def load_sequence(entry, root):
    """Load an utterance's frames (frame_000001.pgm ...) under ``root``."""
    frame_dir = Path(root) / entry.frame_dir
    frames = []
    spec = None
    for i in range(1, entry.num_frames + 1):
        img = read_pgm(frame_dir / FRAME_NAME.format(i))
        if spec is None:
            spec = img.shape
        elif img.shape != spec:
            raise ValueError(f"{frame_dir}: frame {i} shape {img.shape} != {spec}")
        frames.append(img)
    return FrameSequence(entry=entry, frames=frames)


def dataset_frame_spec(manifest_path, entries):
    """Frame geometry of a dataset, probed from its first frame."""
    if not entries:
        raise ValueError(f"{manifest_path}: empty manifest")
    first = Path(manifest_path).parent / entries[0].frame_dir / FRAME_NAME.format(1)
    img = read_pgm(first)
    return FrameSpec(img.shape[0], img.shape[1])


def subtract_mean_image(frames):
    """Subtract the per-utterance mean image from every frame."""
    stack = np.stack(frames)
    mean_img = stack.mean(axis=0)
    return [f - mean_img for f in frames]


def znorm_frame(frame):
    """Normalise one frame to mean 0 / std 1; constant frames become zero."""
    sd = frame.std()
    if sd < DEGENERATE_STD:
        return np.zeros_like(frame)
    return (frame - frame.mean()) / sd


def preprocess(seq):
    """Mean-image subtraction followed by per-frame z-normalisation.

    Refuses to run twice on the same sequence: double normalisation would
    silently corrupt the data.
    """
    if seq.preprocessed:
        raise ValueError(f"utterance {seq.entry.utterance_id!r} is already preprocessed")
    centered = subtract_mean_image(seq.frames)
    frames = [znorm_frame(f) for f in centered]
    return FrameSequence(entry=seq.entry, frames=frames, preprocessed=True)


def make_stream_pair(seq):
    """Flatten a preprocessed utterance into raw and diff streams."""
    if not seq.preprocessed:
        raise ValueError("make_stream_pair needs a preprocessed sequence")
    flat = np.stack([f.reshape(-1) for f in seq.frames])  # (T, H*W), row-major
    diff = np.zeros_like(flat)
    diff[1:] = flat[1:] - flat[:-1]
    return StreamPair(
        raw=flat,
        diff=diff,
        label=seq.entry.label,
        subject_id=seq.entry.subject_id,
        utterance_id=seq.entry.utterance_id,
    )


def load_pairs(manifest_path, entries=None, diff_before_znorm=False):
    """Load+preprocess utterances into StreamPairs, in manifest order.

    ``diff_before_znorm`` switches the diff stream to differences of the
    mean-subtracted (not yet z-normalised) frames; the default differences
    the fully preprocessed frames.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    if entries is None:
        entries = parse_manifest(manifest_path)
    pairs = []
    for entry in entries:
        seq = load_sequence(entry, root)
        if not diff_before_znorm:
            pairs.append(make_stream_pair(preprocess(seq)))
            continue
        centered = subtract_mean_image(seq.frames)
        raw = np.stack([znorm_frame(f).reshape(-1) for f in centered])
        flat_c = np.stack([f.reshape(-1) for f in centered])
        diff = np.zeros_like(flat_c)
        diff[1:] = flat_c[1:] - flat_c[:-1]
        pairs.append(
            StreamPair(
                raw=raw,
                diff=diff,
                label=entry.label,
                subject_id=entry.subject_id,
                utterance_id=entry.utterance_id,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# Synthetic datasets
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    """Shape of a generated dataset.

    Class identity is carried only by a moving bright blob whose path around
    the frame is class-specific; subjects add brightness/contrast bias and
    every frame gets pixel noise, so labels are recoverable only from the
    temporal pixel pattern.
    """

    num_classes: int = 5
    num_subjects: int = 6
    reps: int = 3
    frame_spec: FrameSpec = field(default_factory=lambda: FrameSpec(16, 16))
    t_min: int = 12
    t_max: int = 20
    seed: int = 7
    subject_prefix: str = "s"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.num_subjects < 3:
            raise ValueError(f"need at least 3 subjects, got {self.num_subjects}")
        if self.reps < 1:
            raise ValueError(f"need at least 1 repetition, got {self.reps}")
        if not (2 <= self.t_min <= self.t_max):
            raise ValueError(f"bad frame-count range [{self.t_min}, {self.t_max}]")


def _blob(spec, cy, cx, sigma):
    ys = np.arange(spec.height, dtype=np.float64)[:, None]
    xs = np.arange(spec.width, dtype=np.float64)[None, :]
    return np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma * sigma))

def _trajectory(spec, k, num_classes, t, num_frames, phase_jitter=0.0, radius_scale=1.0):
    # Blob sweeps half a revolution around the frame centre; each class
    # starts at its own angle, so classes differ in where the blob sits at
    # every point of normalised time.
    tau = t / max(num_frames - 1, 1)
    angle = 2.0 * np.pi * k / num_classes + np.pi * tau + phase_jitter
    r = 0.30 * min(spec.height, spec.width) * radius_scale
    cy = (spec.height - 1) / 2.0 + r * np.sin(angle)
    cx = (spec.width - 1) / 2.0 + r * np.cos(angle)
    return cy, cx


def class_template(k, config, num_frames):
    """Noise-free class pattern: the blob path rendered over T frames."""
    spec = config.frame_spec
    sigma = 0.10 * min(spec.height, spec.width)
    return [
        _blob(spec, *_trajectory(spec, k, config.num_classes, t, num_frames), sigma)
        for t in range(num_frames)
    ]


def _subject_traits(root_rng, s):
    r = root_rng.derive("subject", s)
    brightness = r.uniform() * 40.0 - 20.0
    contrast = 0.8 + 0.4 * r.uniform()
    return brightness, contrast


def generate_synthetic(config, out_dir):
    """Write a synthetic dataset (PGM frames + manifest.csv) under out_dir.

    Fully determined by ``config.seed``: the same config produces a
    byte-identical tree. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise ValueError(f"dataset directory {out_dir} is not writable")

    spec = config.frame_spec
    root = Rng(config.seed)
    sigma = 0.10 * min(spec.height, spec.width)
    entries = []
    for s in range(config.num_subjects):
        brightness, contrast = _subject_traits(root, s)
        subject_id = f"{config.subject_prefix}{s:02d}"
        for k in range(config.num_classes):
            for rep in range(config.reps):
                utt = root.derive("utt", s, k, rep)
                num_frames = int(utt.integers(config.t_min, config.t_max + 1))
                phase_jitter = 0.10 * utt.normal()
                radius_scale = 1.0 + 0.05 * utt.normal()
                utterance_id = f"{subject_id}_c{k}_r{rep}"
                frame_dir = Path("frames") / utterance_id
                (out_dir / frame_dir).mkdir(parents=True, exist_ok=True)
                for t in range(num_frames):
                    cy, cx = _trajectory(
                        spec, k, config.num_classes, t, num_frames, phase_jitter, radius_scale
                    )
                    img = (
                        70.0
                        + contrast * 140.0 * _blob(spec, cy, cx, sigma)
                        + brightness
                        + 6.0 * utt.normal((spec.height, spec.width))
                    )
                    write_pgm(out_dir / frame_dir / FRAME_NAME.format(t + 1), img)
                entries.append(
                    ManifestEntry(
                        subject_id=subject_id,
                        label=k,
                        utterance_id=utterance_id,
                        frame_dir=str(frame_dir),
                        num_frames=num_frames,
                    )
                )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, entries)
    return manifest_path
