"""Latent compression with a pluggable encoding-distribution model."""
from __future__ import annotations

import numpy as np

from ..coder import CodedStream, StreamHeader, decode_channels, encode_channels, quantize_pmf
from ..core import LatentTensor
from ..errors import SpecMismatch


def bank_tables(bank):
    return [quantize_pmf(row) for row in bank.mass]


def codec_compress(latent: LatentTensor, model) -> CodedStream:
    """Side info from ``model`` followed by the latent coded channel-major under its pmfs."""
    side, bank = model.encode_bank(latent)
    symbols = latent.data.reshape(latent.channels, -1) - latent.spec.y_min
    payload = encode_channels(symbols, bank_tables(bank))
    header = StreamHeader(model.tag, latent.spec, latent.channels, latent.height, latent.width, latent.downscale)
    return CodedStream(header, side, payload)


def codec_decompress(stream: CodedStream, model) -> LatentTensor:
    h = stream.header
    if h.codec_tag != model.tag:
        raise SpecMismatch(f"stream was written by codec {h.codec_tag}, model is codec {model.tag}")
    bank = model.decode_bank(stream.side_info, h.spec, h.channels)
    symbols = decode_channels(stream.latent_payload, bank_tables(bank), h.height * h.width)
    data = symbols.reshape(h.channels, h.height, h.width) + h.spec.y_min
    return LatentTensor(data.astype(np.int64), h.spec, h.downscale)
