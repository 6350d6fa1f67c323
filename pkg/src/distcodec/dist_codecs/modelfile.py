"""DCM1 model files: codec tag, key=value hyperparameters and a manifest of f32 weight blobs.

Layout (little-endian):
    magic "DCM1", u8 version, u8 codec tag,
    u32 length + UTF-8 key=value text (one pair per line, sorted),
    u32 entry count, then per entry: u16 name length + name, u8 ndim,
    u32 per dimension, u64 element offset into the blob,
    u64 blob length in bytes + the f32 blob.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..core import HistogramSpec, PmfBank
from ..errors import CorruptStream
from ..nn.transforms import TransformConfig
from .models import TAG_GMM, TAG_LEARNED, TAG_STATIC, GmmModel, LearnedModel, StaticModel

MODEL_MAGIC = b"DCM1"
MODEL_VERSION = 1


def _hyper_text(hyper: dict) -> bytes:
    return "".join(f"{k}={hyper[k]}\n" for k in sorted(hyper)).encode()


def _parse_hyper(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptStream(f"bad hyperparameter line {line!r}")
        out[key] = value
    return out


def _model_contents(model):
    if isinstance(model, StaticModel):
        spec = model.spec
        return {"y_min": spec.y_min, "y_max": spec.y_max}, {"default_bank": model.default_bank.mass}
    if isinstance(model, GmmModel):
        return {"components": model.components}, {}
    if isinstance(model, LearnedModel):
        hyper = {"y_min": model.spec.y_min, "y_max": model.spec.y_max, **model.config.to_dict()}
        return hyper, model.params
    raise TypeError(f"cannot serialize {type(model).__name__}")


def encode_model(model) -> bytes:
    hyper, arrays = _model_contents(model)
    text = _hyper_text(hyper)
    parts = [MODEL_MAGIC, struct.pack("<BB", MODEL_VERSION, model.tag), struct.pack("<I", len(text)), text,
             struct.pack("<I", len(arrays))]
    blobs, offset = [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))
        blobs.append(arr.tobytes())
        offset += arr.size
    blob = b"".join(blobs)
    parts.append(struct.pack("<Q", len(blob)) + blob)
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptStream("model file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_model(buf: bytes):
    r = _Reader(buf)
    if r.take(4) != MODEL_MAGIC:
        raise CorruptStream("not a DCM1 model file")
    version, tag = r.unpack("<BB")
    if version != MODEL_VERSION:
        raise CorruptStream(f"unsupported model version {version}")
    (text_len,) = r.unpack("<I")
    try:
        hyper = _parse_hyper(r.take(text_len).decode())
    except UnicodeDecodeError as exc:
        raise CorruptStream("hyperparameter text is not UTF-8") from exc
    (count,) = r.unpack("<I")
    manifest = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (offset,) = r.unpack("<Q")
        manifest.append((name, tuple(shape), offset))
    (blob_len,) = r.unpack("<Q")
    blob = np.frombuffer(r.take(blob_len), dtype="<f4")
    if r.pos != len(buf):
        raise CorruptStream("trailing bytes after model blob")
    arrays = {}
    for name, shape, offset in manifest:
        size = int(np.prod(shape, dtype=np.int64))
        if offset + size > blob.size:
            raise CorruptStream(f"weight {name} runs past the blob")
        arrays[name] = blob[offset:offset + size].astype(np.float64).reshape(shape)
    try:
        return _build(tag, hyper, arrays)
    except (KeyError, ValueError) as exc:
        raise CorruptStream(f"model file contents are inconsistent: {exc}") from exc


def _build(tag: int, hyper: dict, arrays: dict):
    if tag == TAG_STATIC:
        spec = HistogramSpec(int(hyper["y_min"]), int(hyper["y_max"]))
        mass = arrays["default_bank"]
        return StaticModel(PmfBank(mass / mass.sum(axis=1, keepdims=True), spec))
    if tag == TAG_GMM:
        return GmmModel(int(hyper["components"]))
    if tag == TAG_LEARNED:
        spec = HistogramSpec(int(hyper.pop("y_min")), int(hyper.pop("y_max")))
        cfg = TransformConfig(**{k: int(v) for k, v in hyper.items()})
        return LearnedModel(cfg, spec, arrays)
    raise CorruptStream(f"unknown codec tag {tag}")


def save_model(model, path) -> bytes:
    data = encode_model(model)
    Path(path).write_bytes(data)
    return data


def load_model(path):
    return decode_model(Path(path).read_bytes())
