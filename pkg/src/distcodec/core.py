"""Bin grid, latent tensor and pmf types, plus the LTF tensor file format."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptStream, OutOfSupport, SpecMismatch

# Probability floor applied before any log or coding step (one unit at 16-bit precision).
EPS_P = 2.0 ** -16
PMF_ATOL = 1e-9

LTF_MAGIC = b"LTF1"
_LTF_HEADER = struct.Struct("<4sBIIIiiI")
_LTF_DTYPES = {0: np.dtype("<i4"), 1: np.dtype("<f4")}


@dataclass(frozen=True)
class HistogramSpec:
    """Unit-width bin grid whose centers are the integers y_min..y_max."""

    y_min: int
    y_max: int

    def __post_init__(self):
        if int(self.y_max) < int(self.y_min):
            raise ValueError(f"empty support [{self.y_min}, {self.y_max}]")
        object.__setattr__(self, "y_min", int(self.y_min))
        object.__setattr__(self, "y_max", int(self.y_max))

    @classmethod
    def from_bins(cls, y_min: int, num_bins: int) -> HistogramSpec:
        return cls(y_min, y_min + num_bins - 1)

    @property
    def num_bins(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def bin_width(self) -> int:
        return 1

    @property
    def centers(self) -> np.ndarray:
        return np.arange(self.y_min, self.y_max + 1, dtype=np.float64)


HIGH_RATE_SPEC = HistogramSpec(-127, 128)
LOW_RATE_SPEC = HistogramSpec(-63, 64)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (bit-exact on every platform)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class LatentTensor:
    """Integer latent of shape C x H_y x W_y living on ``spec``.

    ``downscale`` is the ratio between image and latent side lengths, so one
    latent element stands for ``downscale**2`` image pixels.
    """

    data: np.ndarray
    spec: HistogramSpec
    downscale: int = 16

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise SpecMismatch(f"latent must be C x H x W, got shape {data.shape}")
        data = data.astype(np.int64, copy=True)
        if data.size and (data.min() < self.spec.y_min or data.max() > self.spec.y_max):
            raise OutOfSupport("latent values outside the histogram support")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def elements_per_channel(self) -> int:
        return self.height * self.width

    @property
    def num_pixels(self) -> int:
        """Image pixels H*W represented by this latent."""
        return self.elements_per_channel * self.downscale**2

    def __eq__(self, other):
        if not isinstance(other, LatentTensor):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.downscale == other.downscale
            and np.array_equal(self.data, other.data)
        )


def clamp_to_support(raw, spec: HistogramSpec, downscale: int = 16) -> tuple[LatentTensor, int]:
    """Quantize a real tensor onto the integer grid of ``spec``.

    Returns the latent and the number of elements that had to be clamped.
    """
    rounded = round_half_away(raw)
    clamps = int(np.count_nonzero((rounded < spec.y_min) | (rounded > spec.y_max)))
    clipped = np.clip(rounded, spec.y_min, spec.y_max).astype(np.int64)
    return LatentTensor(clipped, spec, downscale), clamps


def bin_index(value, spec: HistogramSpec):
    """1-based bin index of an in-support integer value (scalar or array)."""
    v = np.asarray(value)
    if np.any(v < spec.y_min) or np.any(v > spec.y_max):
        raise OutOfSupport(f"value outside [{spec.y_min}, {spec.y_max}]")
    idx = v.astype(np.int64) - spec.y_min + 1
    return int(idx) if idx.ndim == 0 else idx


@dataclass(frozen=True, eq=False)
class Pmf:
    mass: np.ndarray
    spec: HistogramSpec

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64)
        if mass.shape != (self.spec.num_bins,):
            raise SpecMismatch(f"pmf has {mass.shape} entries, spec has {self.spec.num_bins} bins")
        _check_mass(mass)
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)


@dataclass(frozen=True, eq=False)
class PmfBank:
    """One pmf per channel, stored as a C x B array sharing one spec."""

    mass: np.ndarray
    spec: HistogramSpec

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64)
        if mass.ndim != 2 or mass.shape[1] != self.spec.num_bins:
            raise SpecMismatch(f"bank shape {mass.shape} does not match {self.spec.num_bins} bins")
        _check_mass(mass)
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_pmfs(cls, pmfs) -> PmfBank:
        pmfs = list(pmfs)
        spec = pmfs[0].spec
        if any(p.spec != spec for p in pmfs):
            raise SpecMismatch("pmfs in a bank must share one spec")
        return cls(np.stack([p.mass for p in pmfs]), spec)

    @property
    def channels(self) -> int:
        return self.mass.shape[0]

    def __len__(self):
        return self.channels

    def __getitem__(self, c) -> Pmf:
        return Pmf(self.mass[c], self.spec)

    def __iter__(self):
        return (self[c] for c in range(self.channels))


def _check_mass(mass: np.ndarray):
    if not np.all(np.isfinite(mass)) or np.any(mass < 0):
        raise ValueError("pmf entries must be finite and non-negative")
    if np.any(np.abs(mass.sum(axis=-1) - 1.0) > PMF_ATOL):
        raise ValueError("pmf entries must sum to 1")


def floor_pmf(mass, eps: float = EPS_P) -> np.ndarray:
    """Raise every entry to at least ``eps`` and renormalize (last axis)."""
    m = np.maximum(np.asarray(mass, dtype=np.float64), eps)
    return m / m.sum(axis=-1, keepdims=True)


def require_same_spec(*specs: HistogramSpec):
    first = specs[0]
    for s in specs[1:]:
        if s != first:
            raise SpecMismatch(f"histogram specs differ: {first} vs {s}")


# --- LTF tensor files -------------------------------------------------------

def encode_ltf(data: np.ndarray, spec: HistogramSpec, downscale: int) -> bytes:
    data = np.asarray(data)
    if data.ndim != 3:
        raise SpecMismatch(f"LTF payload must be 3-D, got {data.shape}")
    tag = 1 if np.issubdtype(data.dtype, np.floating) else 0
    c, h, w = data.shape
    header = _LTF_HEADER.pack(LTF_MAGIC, tag, c, h, w, spec.y_min, spec.y_max, downscale)
    return header + np.ascontiguousarray(data, dtype=_LTF_DTYPES[tag]).tobytes()


def decode_ltf(buf: bytes) -> tuple[np.ndarray, HistogramSpec, int]:
    if len(buf) < _LTF_HEADER.size:
        raise CorruptStream("LTF file shorter than its header")
    magic, tag, c, h, w, y_min, y_max, s = _LTF_HEADER.unpack_from(buf)
    if magic != LTF_MAGIC or tag not in _LTF_DTYPES:
        raise CorruptStream("bad LTF magic or dtype tag")
    dtype = _LTF_DTYPES[tag]
    expected = _LTF_HEADER.size + c * h * w * dtype.itemsize
    if len(buf) != expected:
        raise CorruptStream(f"LTF payload length {len(buf)} != {expected}")
    data = np.frombuffer(buf, dtype=dtype, offset=_LTF_HEADER.size).reshape(c, h, w)
    try:
        spec = HistogramSpec(y_min, y_max)
    except ValueError as exc:
        raise CorruptStream(str(exc)) from exc
    return data, spec, s


def write_latent(path, latent: LatentTensor):
    Path(path).write_bytes(encode_ltf(latent.data.astype(np.int32), latent.spec, latent.downscale))


def read_latent(path) -> LatentTensor:
    data, spec, s = decode_ltf(Path(path).read_bytes())
    if data.dtype.kind == "f":
        latent, _ = clamp_to_support(data, spec, s)
        return latent
    return LatentTensor(data, spec, s)
