"""Subject-disjoint split construction and classification metrics."""

import re
from dataclasses import dataclass

import numpy as np

from .numeric import Rng

PROTOCOLS = ("ouluvs2-style", "cuave-style", "explicit")

# Fixed subject counts the two named protocols expect.
OULU_SUBJECTS = 52
OULU_TEST = 12
OULU_TRAIN = 30
OULU_VAL = 10
CUAVE_SUBJECTS = 36
CUAVE_TRAIN = 12
CUAVE_VAL = 6


@dataclass
class SplitSpec:
    """Subject-level partition; no subject may appear in two splits."""

    protocol: str
    train_subjects: frozenset
    val_subjects: frozenset
    test_subjects: frozenset
    seed: int = 0

    def __post_init__(self):
        sets = (self.train_subjects, self.val_subjects, self.test_subjects)
        names = ("train", "val", "test")
        for a in range(len(sets)):
            for b in range(a + 1, len(sets)):
                overlap = sets[a] & sets[b]
                if overlap:
                    raise ValueError(
                        f"subjects in both {names[a]} and {names[b]}: {sorted(overlap)}"
                    )

    def split_of(self, subject_id):
        if subject_id in self.train_subjects:
            return "train"
        if subject_id in self.val_subjects:
            return "val"
        if subject_id in self.test_subjects:
            return "test"
        raise ValueError(f"subject {subject_id!r} is in no split")


def _subject_number(subject_id):
    m = re.search(r"(\d+)", subject_id)
    if not m:
        raise ValueError(f"subject id {subject_id!r} carries no number (needed for parity)")
    return int(m.group(1))


def build_split(entries, protocol, seed=0, explicit=None):
    """Partition a manifest's subjects per the named protocol.

    ouluvs2-style: 52 subjects; the last 12 in sorted order are the fixed
    test set, the remaining 40 are shuffled by ``seed`` into 30 train / 10
    validation. cuave-style: 36 subjects; odd-numbered ids test, the even
    ones are shuffled into 12 train / 6 validation. explicit: caller-provided
    subject sets, which must cover the manifest exactly.
    """
    subjects = sorted({e.subject_id for e in entries})
    if protocol == "ouluvs2-style":
        if len(subjects) != OULU_SUBJECTS:
            raise ValueError(f"ouluvs2-style needs {OULU_SUBJECTS} subjects, got {len(subjects)}")
        test = subjects[-OULU_TEST:]
        rest = subjects[:-OULU_TEST]
        order = Rng(seed).derive("split").permutation(len(rest))
        shuffled = [rest[i] for i in order]
        train, val = shuffled[:OULU_TRAIN], shuffled[OULU_TRAIN:]
    elif protocol == "cuave-style":
        if len(subjects) != CUAVE_SUBJECTS:
            raise ValueError(f"cuave-style needs {CUAVE_SUBJECTS} subjects, got {len(subjects)}")
        test = [s for s in subjects if _subject_number(s) % 2 == 1]
        rest = [s for s in subjects if _subject_number(s) % 2 == 0]
        if len(test) != CUAVE_SUBJECTS // 2:
            raise ValueError(
                f"cuave-style expects {CUAVE_SUBJECTS // 2} odd-numbered subjects, got {len(test)}"
            )
        order = Rng(seed).derive("split").permutation(len(rest))
        shuffled = [rest[i] for i in order]
        train, val = shuffled[:CUAVE_TRAIN], shuffled[CUAVE_TRAIN:]
    elif protocol == "explicit":
        if explicit is None:
            raise ValueError("explicit protocol needs (train, val, test) subject lists")
        train, val, test = explicit
    else:
        raise ValueError(f"unknown protocol {protocol!r}, expected one of {PROTOCOLS}")

    spec = SplitSpec(
        protocol=protocol,
        train_subjects=frozenset(train),
        val_subjects=frozenset(val),
        test_subjects=frozenset(test),
        seed=seed,
    )
    covered = spec.train_subjects | spec.val_subjects | spec.test_subjects
    if covered != set(subjects):
        missing = sorted(set(subjects) - covered)
        extra = sorted(covered - set(subjects))
        raise ValueError(f"split does not cover manifest subjects (missing {missing}, extra {extra})")
    return spec


def split_entries(entries, spec):
    """Group manifest entries by split, preserving manifest order."""
    groups = {"train": [], "val": [], "test": []}
    for e in entries:
        groups[spec.split_of(e.subject_id)].append(e)
    return groups


def accuracy(predictions, labels):
    """Exact-match fraction."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(labels)} labels")
    if not labels:
        raise ValueError("empty evaluation set")
    return sum(int(p == t) for p, t in zip(predictions, labels)) / len(labels)


def confusion(predictions, labels, num_classes):
    """K x K count matrix, rows true class, columns predicted class."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions, {len(labels)} labels")
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for p, t in zip(predictions, labels):
        if not 0 <= t < num_classes:
            raise ValueError(f"label {t} outside [0, {num_classes})")
        if not 0 <= p < num_classes:
            raise ValueError(f"prediction {p} outside [0, {num_classes})")
        mat[t, p] += 1
    return mat


def confusion_csv(mat):
    """Counts as CSV text: K header columns c0..c{K-1}, then K rows."""
    k = mat.shape[0]
    lines = [",".join(f"c{j}" for j in range(k))]
    for row in mat:
        lines.append(",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def normalized_confusion_csv(mat):
    """Row-stochastic variant, 4 decimal places; all-zero rows stay zero."""
    k = mat.shape[0]
    lines = [",".join(f"c{j}" for j in range(k))]
    for row in mat:
        total = row.sum()
        if total:
            vals = [f"{v / total:.4f}" for v in row]
        else:
            vals = ["0.0000"] * k
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
