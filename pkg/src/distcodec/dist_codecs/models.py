"""Encoding-distribution models: static bank, per-image GMM and the learned compressor.

Every model turns a latent into (side_info, reconstructed bank) on the
encoder side, and side_info back into the identical bank on the decoder side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..coder import decode_symbols, encode_symbols, quantize_pmf
from ..core import HistogramSpec, LatentTensor, PmfBank, floor_pmf, require_same_spec, round_half_away
from ..errors import CorruptStream, SpecMismatch
from ..histogram import latent_histograms
from ..nn import transforms as tf
from . import gmm

TAG_STATIC = 0
TAG_GMM = 1
TAG_LEARNED = 2


def static_fit(banks) -> PmfBank:
    """Per-channel mean of the given pmf banks: the static pmf with least expected cross-entropy."""
    banks = list(banks)
    if not banks:
        raise ValueError("static_fit needs at least one bank")
    require_same_spec(*(b.spec for b in banks))
    if len({b.channels for b in banks}) != 1:
        raise SpecMismatch("banks have different channel counts")
    return PmfBank(np.mean([b.mass for b in banks], axis=0), banks[0].spec)


@dataclass(frozen=True, eq=False)
class StaticModel:
    default_bank: PmfBank
    tag: int = field(default=TAG_STATIC, init=False)

    @classmethod
    def fit(cls, banks) -> StaticModel:
        return cls(static_fit(banks))

    @property
    def spec(self) -> HistogramSpec:
        return self.default_bank.spec

    def _check(self, spec: HistogramSpec, channels: int):
        require_same_spec(self.spec, spec)
        if channels != self.default_bank.channels:
            raise SpecMismatch(f"model has {self.default_bank.channels} channels, latent has {channels}")

    def encode_bank(self, latent: LatentTensor):
        self._check(latent.spec, latent.channels)
        return b"", self.decode_bank(b"", latent.spec, latent.channels)

    def decode_bank(self, side_info: bytes, spec: HistogramSpec, channels: int) -> PmfBank:
        self._check(spec, channels)
        if side_info:
            raise CorruptStream("static model carries no side information")
        return PmfBank(floor_pmf(self.default_bank.mass), spec)


@dataclass(frozen=True)
class GmmModel:
    components: int = 1
    tag: int = field(default=TAG_GMM, init=False)

    def __post_init__(self):
        if not 1 <= self.components <= 3:
            raise ValueError("GMM components must be in 1..3")

    def side_bits(self, channels: int) -> int:
        return gmm.gmm_side_bits(self.components, channels)

    def encode_bank(self, latent: LatentTensor):
        bank = latent_histograms(latent)
        codes = [gmm.gmm_fit(p, self.components).codes for p in bank]
        side = b"".join(gmm.codes_to_bytes(c) for c in codes)
        return side, self.decode_bank(side, latent.spec, latent.channels)

    def decode_bank(self, side_info: bytes, spec: HistogramSpec, channels: int) -> PmfBank:
        per = 3 * self.components - 1
        if len(side_info) != per * channels:
            raise CorruptStream("GMM side-info length does not match the channel count")
        mass = []
        for c in range(channels):
            codes = gmm.codes_from_bytes(side_info[c * per:(c + 1) * per], self.components)
            mass.append(gmm.gmm_reconstruct(gmm.dequantize_params(codes, spec), spec).mass)
        return PmfBank(np.array(mass).reshape(channels, spec.num_bins), spec)


@dataclass(eq=False)
class LearnedModel:
    """The learned distribution compressor with its weights (float64 arrays)."""

    config: tf.TransformConfig
    spec: HistogramSpec
    params: dict
    tag: int = field(default=TAG_LEARNED, init=False)

    def __post_init__(self):
        if self.spec.num_bins != self.config.bins:
            raise SpecMismatch(f"spec has {self.spec.num_bins} bins, transform expects {self.config.bins}")
        shapes = tf.parameter_shapes(self.config)
        if set(shapes) != set(self.params):
            raise SpecMismatch("parameter names do not match the transform config")
        for name, shape in shapes.items():
            if tuple(np.shape(self.params[name])) != shape:
                raise SpecMismatch(f"{name} has shape {np.shape(self.params[name])}, expected {shape}")

    @classmethod
    def initialize(cls, config: tf.TransformConfig, spec: HistogramSpec, seed: int = 0) -> LearnedModel:
        return cls(config, spec, tf.init_params(config, np.random.default_rng(seed)))

    def _check(self, spec: HistogramSpec, channels: int):
        require_same_spec(self.spec, spec)
        if channels != self.config.channels:
            raise SpecMismatch(f"model has {self.config.channels} channels, latent has {channels}")

    def q_tables(self):
        pmf = tf.q_prior_pmf(self.params).value
        return [quantize_pmf(row) for row in pmf]

    def analyze(self, bank: PmfBank) -> np.ndarray:
        """Rounded, support-clamped compressor latent (M_q, B / 4) for one bank."""
        self._check(bank.spec, bank.channels)
        q = tf.analysis(tf.nll_features(bank.mass[None]), self.params, self.config).value[0]
        return np.clip(round_half_away(q), self.config.q_min, self.config.q_max).astype(np.int64)

    def synthesize(self, q_hat: np.ndarray) -> PmfBank:
        logits = tf.synthesis(np.asarray(q_hat, dtype=np.float64)[None], self.params, self.config)
        return PmfBank(tf.floored_softmax(logits).value[0], self.spec)

    def table_ids(self):
        cfg = self.config
        return np.repeat(np.arange(cfg.m_q), cfg.q_length)

    def encode_bank(self, latent: LatentTensor):
        self._check(latent.spec, latent.channels)
        return learned_encode(latent_histograms(latent), self)

    def decode_q(self, side_info: bytes) -> np.ndarray:
        cfg = self.config
        sym = decode_symbols(side_info, self.table_ids(), self.q_tables())
        return sym.reshape(cfg.m_q, cfg.q_length) + cfg.q_min

    def decode_bank(self, side_info: bytes, spec: HistogramSpec, channels: int) -> PmfBank:
        self._check(spec, channels)
        return self.synthesize(self.decode_q(side_info))


def learned_encode(bank: PmfBank, model: LearnedModel):
    """(side_bytes, reconstructed bank) for a bank of true pmfs."""
    q_hat = model.analyze(bank)
    side = encode_symbols(q_hat.ravel() - model.config.q_min, model.table_ids(), model.q_tables())
    return side, model.synthesize(q_hat)


def learned_decode(side_info: bytes, model: LearnedModel) -> PmfBank:
    return model.synthesize(model.decode_q(side_info))
