"""The distribution compressor: analysis and synthesis stacks plus the q prior.

Both stacks are five grouped 1-D convolutions along the bin axis, with ReLU
and a channel shuffle after each of the first four layers. The analysis
stack halves the length at layers 2 and 4; the synthesis stack mirrors it
with transposed convolutions at the same positions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..core import EPS_P
from ..errors import BadShape
from . import autodiff as ad
from .layers import channel_shuffle, conv1d, conv1d_transposed, interp_pmf_lookup

NLL_CLIP_BITS = 10.0
STRIDES = (1, 2, 1, 2, 1)


@dataclass(frozen=True)
class TransformConfig:
    channels: int          # latent channels C (M_y)
    bins: int              # histogram bins B
    n_q: int = 32
    m_q: int = 16
    kernel: int = 15
    groups: int = 8
    q_min: int = -32
    q_max: int = 31

    def __post_init__(self):
        for c in (self.channels, self.n_q, self.m_q):
            if c < 1 or c % self.groups:
                raise BadShape(f"channel count {c} not divisible by {self.groups} groups")
        if self.bins % self.downscale:
            raise BadShape(f"{self.bins} bins not divisible by the total stride {self.downscale}")
        if self.kernel % 2 == 0:
            raise BadShape("kernel size must be odd")
        if self.q_max <= self.q_min:
            raise BadShape("empty q support")

    @property
    def downscale(self) -> int:
        return math.prod(STRIDES)

    @property
    def q_length(self) -> int:
        return self.bins // self.downscale

    @property
    def q_support(self) -> int:
        return self.q_max - self.q_min + 1

    def analysis_plan(self):
        """(c_in, c_out, stride) for every analysis layer."""
        widths = [self.channels, self.n_q, self.n_q, self.n_q, self.n_q, self.m_q]
        return [(widths[i], widths[i + 1], STRIDES[i]) for i in range(5)]

    def synthesis_plan(self):
        widths = [self.m_q, self.n_q, self.n_q, self.n_q, self.n_q, self.channels]
        return [(widths[i], widths[i + 1], STRIDES[::-1][i]) for i in range(5)]

    def to_dict(self) -> dict:
        return asdict(self)


def _weight_shape(c_in, c_out, cfg, transposed):
    if transposed:
        return (c_in, c_out // cfg.groups, cfg.kernel)
    return (c_out, c_in // cfg.groups, cfg.kernel)


def parameter_shapes(cfg: TransformConfig) -> dict:
    """Name -> shape of every trainable array, in a fixed order."""
    shapes = {}
    for i, (c_in, c_out, stride) in enumerate(cfg.analysis_plan()):
        shapes[f"ha.{i}.weight"] = _weight_shape(c_in, c_out, cfg, False)
        shapes[f"ha.{i}.bias"] = (c_out,)
    for i, (c_in, c_out, stride) in enumerate(cfg.synthesis_plan()):
        shapes[f"hs.{i}.weight"] = _weight_shape(c_in, c_out, cfg, stride > 1)
        shapes[f"hs.{i}.bias"] = (c_out,)
    shapes["q_prior.logits"] = (cfg.m_q, cfg.q_support)
    return shapes


def count_params(cfg: TransformConfig, transform: str = "analysis") -> int:
    """Closed-form trainable parameter count (weights + biases) of one stack."""
    plan = cfg.analysis_plan() if transform == "analysis" else cfg.synthesis_plan()
    return sum(c_in * c_out // cfg.groups * cfg.kernel + c_out for c_in, c_out, _ in plan)


def init_params(cfg: TransformConfig, rng: np.random.Generator) -> dict:
    """Uniform weights in +-sqrt(G / (C_in * K)), zero biases and a flat q prior."""
    shapes = parameter_shapes(cfg)
    params = {}
    for prefix, plan in (("ha", cfg.analysis_plan()), ("hs", cfg.synthesis_plan())):
        for i, (c_in, _, _) in enumerate(plan):
            bound = math.sqrt(cfg.groups / (c_in * cfg.kernel))
            params[f"{prefix}.{i}.weight"] = rng.uniform(-bound, bound, size=shapes[f"{prefix}.{i}.weight"])
            params[f"{prefix}.{i}.bias"] = np.zeros(shapes[f"{prefix}.{i}.bias"])
    params["q_prior.logits"] = np.zeros(shapes["q_prior.logits"])
    return params


def nll_features(p) -> ad.Tensor:
    """-log2(p + eps) clipped to [0, 10]: the analysis input for a pmf batch."""
    p = ad.as_tensor(p)
    nll = ad.log(p + EPS_P) * (-1.0 / math.log(2.0))
    return ad.clip(nll, 0.0, NLL_CLIP_BITS)


def floored_softmax(logits: ad.Tensor, eps: float = EPS_P) -> ad.Tensor:
    """Softmax mixed with eps of uniform mass so every bin keeps at least eps."""
    b = logits.shape[-1]
    return ad.softmax(logits) * (1.0 - b * eps) + eps


def _stack(x, params, prefix, plan, cfg, transposed_upsampling):
    for i, (_, _, stride) in enumerate(plan):
        w = ad.as_tensor(params[f"{prefix}.{i}.weight"])
        b = ad.as_tensor(params[f"{prefix}.{i}.bias"])
        if transposed_upsampling and stride > 1:
            x = conv1d_transposed(x, w, b, stride=stride, groups=cfg.groups)
        else:
            x = conv1d(x, w, b, stride=stride, groups=cfg.groups)
        if i < len(plan) - 1:
            x = channel_shuffle(ad.relu(x), cfg.groups)
    return x


def analysis(features, params: dict, cfg: TransformConfig) -> ad.Tensor:
    """(N, C, B) features -> (N, M_q, B / 4) latent q."""
    return _stack(ad.as_tensor(features), params, "ha", cfg.analysis_plan(), cfg, False)


def synthesis(q, params: dict, cfg: TransformConfig) -> ad.Tensor:
    """(N, M_q, B / 4) q -> (N, C, B) logits of the reconstructed pmfs."""
    return _stack(ad.as_tensor(q), params, "hs", cfg.synthesis_plan(), cfg, True)


def q_prior_pmf(params: dict) -> ad.Tensor:
    """Per-channel pmf of q over the integer support, floored at eps."""
    return floored_softmax(ad.as_tensor(params["q_prior.logits"]))


def q_likelihood(q, params: dict, cfg: TransformConfig) -> ad.Tensor:
    return interp_pmf_lookup(q_prior_pmf(params), ad.as_tensor(q), cfg.q_min)
