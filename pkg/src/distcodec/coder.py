"""Entropy coding of symbols under fixed per-channel pmfs, and the stream container.

The coder is a 64-bit-state rANS emitting 32-bit words with 16-bit frequency
precision. Only the container layout (``pack_stream``) is meant to be stable
across implementations; the rANS byte layout is an internal detail.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .core import HistogramSpec
from .errors import CorruptStream, OutOfSupport, TooManyBins

PRECISION = 16
TOTAL = 1 << PRECISION

_RANS_L = 1 << 31
_WORD_MASK = (1 << 32) - 1


@dataclass(frozen=True, eq=False)
class FreqTable:
    """Integer frequencies summing to 2**16 with every bin codable."""

    freqs: np.ndarray

    def __post_init__(self):
        freqs = np.asarray(self.freqs, dtype=np.int64)
        if freqs.ndim != 1 or np.any(freqs < 1) or int(freqs.sum()) != TOTAL:
            raise ValueError("frequencies must be >= 1 and sum to 2**16")
        freqs.setflags(write=False)
        object.__setattr__(self, "freqs", freqs)

    @property
    def num_bins(self) -> int:
        return len(self.freqs)

    @property
    def cumulative(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.freqs)])

    def code_lengths(self) -> np.ndarray:
        """Ideal code length in bits of every bin under this table."""
        return PRECISION - np.log2(self.freqs)

    def __eq__(self, other):
        return isinstance(other, FreqTable) and np.array_equal(self.freqs, other.freqs)


def quantize_pmf(mass, precision: int = PRECISION) -> FreqTable:
    """Largest-remainder rounding of ``mass * 2**16`` with a floor of 1 per bin.

    One count is reserved for every bin, the remaining ``2**16 - B`` counts are
    shared proportionally; leftover units go to the largest fractional parts,
    ties to the lower index.
    """
    if precision != PRECISION:
        raise ValueError("only 16-bit precision is supported")
    p = np.asarray(getattr(mass, "mass", mass), dtype=np.float64)
    b = len(p)
    if b > TOTAL:
        raise TooManyBins(f"{b} bins cannot be coded at {precision}-bit precision")
    p = p / p.sum()
    spare = TOTAL - b
    target = p * spare
    base = np.floor(target).astype(np.int64)
    leftover = spare - int(base.sum())
    if leftover > 0:
        order = np.argsort(-(target - base), kind="stable")
        base[order[:leftover]] += 1
    return FreqTable(base + 1)


def cross_entropy_bound(symbols, table: FreqTable) -> float:
    """sum of -log2(freq / 2**16) over the symbols (0-based bin indices)."""
    symbols = np.asarray(symbols, dtype=np.int64)
    return float(table.code_lengths()[symbols].sum())


# --- rANS ---------------------------------------------------------------------

def _rans_encode(freqs: list, starts: list) -> bytes:
    x = _RANS_L
    words = []
    for f, c in zip(reversed(freqs), reversed(starts)):
        if x >= ((_RANS_L >> PRECISION) << 32) * f:
            words.append(x & _WORD_MASK)
            x >>= 32
        x = ((x // f) << PRECISION) + (x % f) + c
    words.append(x & _WORD_MASK)
    words.append(x >> 32)
    words.reverse()
    return struct.pack(f"<{len(words)}I", *words)


def _rans_decode(buf: bytes, luts: list, freq_lists: list, start_lists: list, table_ids) -> list:
    if len(buf) % 4 or len(buf) < 8:
        raise CorruptStream("rANS payload is not a whole number of words")
    words = struct.unpack(f"<{len(buf) // 4}I", buf)
    x = (words[0] << 32) | words[1]
    pos = 2
    n_words = len(words)
    mask = TOTAL - 1
    out = []
    for t in table_ids:
        slot = x & mask
        s = luts[t][slot]
        x = freq_lists[t][s] * (x >> PRECISION) + slot - start_lists[t][s]
        if x < _RANS_L:
            if pos >= n_words:
                raise CorruptStream("rANS payload truncated")
            x = (x << 32) | words[pos]
            pos += 1
        out.append(s)
    if pos != n_words or x != _RANS_L:
        raise CorruptStream("rANS payload did not end in the initial state")
    return out


def _check_symbols(symbols: np.ndarray, num_bins: int):
    if symbols.size and (symbols.min() < 0 or symbols.max() >= num_bins):
        raise OutOfSupport("symbol outside the frequency table")


def encode_symbols(symbols, table_ids, tables) -> bytes:
    """Encode ``symbols[k]`` with ``tables[table_ids[k]]`` into one rANS stream."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    if symbols.size == 0:
        return b""
    freqs = np.empty_like(symbols)
    starts = np.empty_like(symbols)
    for t, table in enumerate(tables):
        sel = table_ids == t
        if not sel.any():
            continue
        _check_symbols(symbols[sel], table.num_bins)
        freqs[sel] = table.freqs[symbols[sel]]
        starts[sel] = table.cumulative[symbols[sel]]
    return _rans_encode(freqs.tolist(), starts.tolist())


def decode_symbols(buf: bytes, table_ids, tables) -> np.ndarray:
    table_ids = np.asarray(table_ids, dtype=np.int64).ravel()
    if table_ids.size == 0:
        if buf:
            raise CorruptStream("payload present for an empty symbol list")
        return np.zeros(0, dtype=np.int64)
    luts, freq_lists, start_lists = [], [], []
    for table in tables:
        luts.append(np.repeat(np.arange(table.num_bins), table.freqs).tolist())
        freq_lists.append(table.freqs.tolist())
        start_lists.append(table.cumulative.tolist())
    out = _rans_decode(bytes(buf), luts, freq_lists, start_lists, table_ids.tolist())
    return np.asarray(out, dtype=np.int64)


def encode_channel(symbols, table: FreqTable) -> bytes:
    """Encode 0-based bin indices of one channel."""
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    return encode_symbols(symbols, np.zeros(symbols.size, dtype=np.int64), [table])


def decode_channel(buf: bytes, table: FreqTable, count: int) -> np.ndarray:
    return decode_symbols(buf, np.zeros(count, dtype=np.int64), [table])


def channel_table_ids(channels: int, count: int) -> np.ndarray:
    """Table index of every symbol in a channel-major (C, count) layout."""
    return np.repeat(np.arange(channels, dtype=np.int64), count)


def encode_channels(symbols: np.ndarray, tables) -> bytes:
    """Channel-major latent payload: one rANS stream, channel c coded with ``tables[c]``."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim != 2 or symbols.shape[0] != len(tables):
        raise ValueError(f"expected ({len(tables)}, N) symbols, got {symbols.shape}")
    return encode_symbols(symbols.ravel(), channel_table_ids(*symbols.shape), tables)


def decode_channels(buf: bytes, tables, count: int) -> np.ndarray:
    out = decode_symbols(buf, channel_table_ids(len(tables), count), tables)
    return out.reshape(len(tables), count)


# --- container ----------------------------------------------------------------

STREAM_MAGIC = b"DCS1"
STREAM_VERSION = 1
_STREAM_HEADER = struct.Struct("<4sBBiiIIIII")
_U32 = struct.Struct("<I")
HEADER_ONLY_LENGTH = _STREAM_HEADER.size + 2 * _U32.size


@dataclass(frozen=True)
class StreamHeader:
    codec_tag: int
    spec: HistogramSpec
    channels: int
    height: int
    width: int
    downscale: int
    version: int = STREAM_VERSION


@dataclass(frozen=True)
class CodedStream:
    header: StreamHeader
    side_info: bytes
    latent_payload: bytes

    @property
    def side_bits(self) -> int:
        return 8 * len(self.side_info)

    @property
    def latent_bits(self) -> int:
        return 8 * len(self.latent_payload)

    @property
    def payload_bits(self) -> int:
        return self.side_bits + self.latent_bits

    @property
    def total_bits(self) -> int:
        return 8 * HEADER_ONLY_LENGTH + self.payload_bits

    def to_bytes(self) -> bytes:
        return pack_stream(self.header, self.side_info, self.latent_payload)


def pack_stream(header: StreamHeader, side_info: bytes, latent_payload: bytes) -> bytes:
    h = header
    head = _STREAM_HEADER.pack(
        STREAM_MAGIC, h.version, h.codec_tag, h.spec.y_min, h.spec.y_max, h.spec.num_bins,
        h.channels, h.height, h.width, h.downscale,
    )
    return b"".join([head, _U32.pack(len(side_info)), side_info, _U32.pack(len(latent_payload)), latent_payload])


def unpack_stream(buf: bytes) -> CodedStream:
    buf = bytes(buf)
    if len(buf) < HEADER_ONLY_LENGTH:
        raise CorruptStream("stream shorter than its header")
    magic, version, tag, y_min, y_max, bins, c, h, w, s = _STREAM_HEADER.unpack_from(buf)
    if magic != STREAM_MAGIC or version != STREAM_VERSION:
        raise CorruptStream("bad stream magic or version")
    if y_max < y_min or bins != y_max - y_min + 1:
        raise CorruptStream("inconsistent histogram spec in stream header")
    pos = _STREAM_HEADER.size
    sections = []
    for _ in range(2):
        if pos + 4 > len(buf):
            raise CorruptStream("stream truncated")
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        if pos + n > len(buf):
            raise CorruptStream("stream truncated")
        sections.append(buf[pos:pos + n])
        pos += n
    if pos != len(buf):
        raise CorruptStream("trailing bytes after stream")
    header = StreamHeader(tag, HistogramSpec(y_min, y_max), c, h, w, s, version)
    return CodedStream(header, sections[0], sections[1])
