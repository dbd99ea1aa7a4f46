"""Binary checkpoint container for encoder stacks and full models.

Layout: magic "E2EVSR1", u32 format version, length-prefixed canonical JSON
metadata block, u32 tensor count, then named tensors (u32 name length +
name, u8 dtype tag, u8 rank, u32 dims, row-major little-endian payload).
Round-trips are bitwise lossless; float64 is the only dtype.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .rbm import EncoderStack, RbmParams, STACK_KINDS
from .seqnet import GATES, LstmParams, SequenceNetParams
from .trainer import Arch, ModelCheckpoint

MAGIC = b"E2EVSR1"
VERSION = 1
DTYPE_F64 = 1


def save_checkpoint(path, meta, tensors):
    """Write a container of named float64 tensors plus a JSON meta block."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob += struct.pack("<I", len(meta_bytes))
    blob += meta_bytes
    blob += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        blob += struct.pack("<I", len(name_bytes))
        blob += name_bytes
        blob += struct.pack("<BB", DTYPE_F64, arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<I", dim)
        blob += arr.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u8(self):
        return self.take(1)[0]


def load_checkpoint(path):
    """Read a container; returns (meta dict, name -> float64 array)."""
    data = Path(path).read_bytes()
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        dtype_tag = r.u8()
        if dtype_tag != DTYPE_F64:
            raise ValueError(f"{path}: tensor {name!r} has unknown dtype tag {dtype_tag}")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(dims)) if dims else 1
        payload = r.take(count * 8)
        tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise ValueError(f"{path}: {len(data) - r.pos} trailing bytes after last tensor")
    return meta, tensors


def _stack_tensors(prefix, stack):
    out = {}
    for i, rbm in enumerate(stack.layers):
        out[f"{prefix}.{i}.W"] = rbm.W
        out[f"{prefix}.{i}.vbias"] = rbm.vbias
        out[f"{prefix}.{i}.hbias"] = rbm.hbias
    return out


def _stack_from_tensors(prefix, tensors):
    layers = []
    for i, kind in enumerate(STACK_KINDS):
        try:
            layers.append(
                RbmParams(
                    kind=kind,
                    W=tensors[f"{prefix}.{i}.W"],
                    vbias=tensors[f"{prefix}.{i}.vbias"],
                    hbias=tensors[f"{prefix}.{i}.hbias"],
                )
            )
        except KeyError as exc:
            raise ValueError(f"checkpoint is missing tensor {exc}") from None
    return EncoderStack(layers=layers)


def save_encoder(path, stack, stream, meta=None):
    """Persist one pretrained encoder stack."""
    full_meta = {
        "kind": "encoder",
        "stream": stream,
        "layer_sizes": stack.layer_sizes,
    }
    full_meta.update(meta or {})
    save_checkpoint(path, full_meta, _stack_tensors("layer", stack))


def load_encoder(path):
    """Load an encoder checkpoint; returns (EncoderStack, meta)."""
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise ValueError(f"{path}: not an encoder checkpoint (kind={meta.get('kind')!r})")
    stack = _stack_from_tensors("layer", tensors)
    if stack.layer_sizes != list(meta["layer_sizes"]):
        raise ValueError(f"{path}: tensor shapes disagree with recorded layer sizes")
    return stack, meta


def _lstm_tensors(prefix, lstm):
    out = {}
    for gate in GATES:
        out[f"{prefix}.W_{gate}"] = getattr(lstm, f"W_{gate}")
        out[f"{prefix}.b_{gate}"] = getattr(lstm, f"b_{gate}")
    return out


def _lstm_from_tensors(prefix, tensors):
    kwargs = {}
    for gate in GATES:
        try:
            kwargs[f"W_{gate}"] = tensors[f"{prefix}.W_{gate}"]
            kwargs[f"b_{gate}"] = tensors[f"{prefix}.b_{gate}"]
        except KeyError as exc:
            raise ValueError(f"checkpoint is missing tensor {exc}") from None
    return LstmParams(**kwargs)


def save_model(path, model):
    """Persist a full ModelCheckpoint."""
    meta = {
        "kind": "model",
        "arch": model.arch.to_dict(),
        "training_meta": model.training_meta,
    }
    tensors = {}
    if model.encoder_raw is not None:
        tensors.update(_stack_tensors("encoder_raw", model.encoder_raw))
    if model.encoder_diff is not None:
        tensors.update(_stack_tensors("encoder_diff", model.encoder_diff))
    net = model.seqnet
    for name, lstm in (
        ("lstm_raw", net.lstm_raw),
        ("lstm_diff", net.lstm_diff),
        ("blstm_fwd", net.blstm_fwd),
        ("blstm_bwd", net.blstm_bwd),
    ):
        if lstm is not None:
            tensors.update(_lstm_tensors(name, lstm))
    tensors["out.W"] = net.out_W
    tensors["out.b"] = net.out_b
    save_checkpoint(path, meta, tensors)


def load_model(path):
    """Load a full model; shape/kind mismatches are rejected on assembly."""
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "model":
        raise ValueError(f"{path}: not a model checkpoint (kind={meta.get('kind')!r})")
    arch = Arch.from_dict(meta["arch"])
    streams = arch.streams
    encoder_raw = _stack_from_tensors("encoder_raw", tensors) if streams in ("both", "raw") else None
    encoder_diff = _stack_from_tensors("encoder_diff", tensors) if streams in ("both", "diff") else None
    net = SequenceNetParams(
        streams=streams,
        lstm_raw=_lstm_from_tensors("lstm_raw", tensors) if streams in ("both", "raw") else None,
        lstm_diff=_lstm_from_tensors("lstm_diff", tensors) if streams in ("both", "diff") else None,
        blstm_fwd=_lstm_from_tensors("blstm_fwd", tensors) if streams == "both" else None,
        blstm_bwd=_lstm_from_tensors("blstm_bwd", tensors) if streams == "both" else None,
        out_W=tensors["out.W"],
        out_b=tensors["out.b"],
    )
    return ModelCheckpoint(
        arch=arch,
        encoder_raw=encoder_raw,
        encoder_diff=encoder_diff,
        seqnet=net,
        training_meta=meta.get("training_meta", {}),
    )
