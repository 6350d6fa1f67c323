"""Adaptive per-image encoding distributions for learned-image-compression latents."""
from .core import (
    EPS_P,
    HIGH_RATE_SPEC,
    LOW_RATE_SPEC,
    HistogramSpec,
    LatentTensor,
    Pmf,
    PmfBank,
    clamp_to_support,
    read_latent,
    write_latent,
)
from .errors import BadShape, CodecError, CorruptStream, Diverged, EmptyChannel, OutOfSupport, SpecMismatch, TooManyBins

__version__ = "0.1.0"

__all__ = [
    "BadShape", "CodecError", "CorruptStream", "Diverged", "EPS_P", "EmptyChannel", "HIGH_RATE_SPEC",
    "HistogramSpec", "LOW_RATE_SPEC", "LatentTensor", "OutOfSupport", "Pmf", "PmfBank", "SpecMismatch",
    "TooManyBins", "clamp_to_support", "read_latent", "write_latent",
]
