"""Encoding-distribution back-ends and the latent codec built on them."""
from .codec import bank_tables, codec_compress, codec_decompress
from .gmm import GmmParams, gmm_fit, gmm_fit_continuous, gmm_reconstruct, gmm_side_bits
from .modelfile import decode_model, encode_model, load_model, save_model
from .models import (
    TAG_GMM,
    TAG_LEARNED,
    TAG_STATIC,
    GmmModel,
    LearnedModel,
    StaticModel,
    learned_decode,
    learned_encode,
    static_fit,
)

__all__ = [
    "GmmModel", "GmmParams", "LearnedModel", "StaticModel", "TAG_GMM", "TAG_LEARNED", "TAG_STATIC",
    "bank_tables", "codec_compress", "codec_decompress", "decode_model", "encode_model", "gmm_fit",
    "gmm_fit_continuous", "gmm_reconstruct", "gmm_side_bits", "learned_decode", "learned_encode",
    "load_model", "save_model", "static_fit",
]
