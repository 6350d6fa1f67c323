"""Rate losses, Adam and the training loop for the distribution compressor.

Rates are natural-log quantities inside the graph; reported numbers are bits.
The loss of one image is R_y + lambda_q * R_q, with R_y the cross-entropy of
the image's latent under the reconstructed pmfs (scaled by the number of
elements per channel) and R_q the code length of the compressor's latent.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadShape, Diverged, SpecMismatch
from . import autodiff as ad
from .layers import add_uniform_noise
from .transforms import TransformConfig, analysis, floored_softmax, nll_features, q_likelihood, synthesis

log = logging.getLogger(__name__)

BITS_PER_NAT = 1.0 / math.log(2.0)


def _values(x):
    return getattr(x, "mass", x)


def rate_loss(p, p_hat, pixels_per_channel) -> ad.Tensor:
    """(HW / s^2) * sum_j sum_i -p_ji log p_hat_ji, in nats, summed over any batch axes.

    ``pixels_per_channel`` is a scalar or one value per batch item.
    """
    p = ad.as_tensor(_values(p))
    p_hat = ad.as_tensor(_values(p_hat))
    if p.shape != p_hat.shape:
        raise SpecMismatch(f"pmf shapes differ: {p.shape} vs {p_hat.shape}")
    n = np.asarray(pixels_per_channel, dtype=np.float64)
    n = n.reshape(n.shape + (1,) * (p.ndim - n.ndim)) if n.ndim else n
    return ad.tsum(ad.neg(p * ad.log(p_hat)) * n)


def q_rate_loss(q_tilde, params: dict, cfg: TransformConfig) -> ad.Tensor:
    """sum of -log p(q~) under the interpolated per-channel q prior, in nats."""
    return ad.tsum(ad.neg(ad.log(q_likelihood(q_tilde, params, cfg))))


def lambda_q(trained_h, trained_w, target_h, target_w) -> float:
    """Side-rate weight: trained-upon pixel count over target pixel count."""
    dims = (trained_h, trained_w, target_h, target_w)
    if any(d <= 0 for d in dims):
        raise BadShape(f"image dimensions must be positive, got {dims}")
    return (trained_h * trained_w) / (target_h * target_w)


@dataclass
class LossTerms:
    total: ad.Tensor
    rate_y: ad.Tensor
    rate_q: ad.Tensor
    q: ad.Tensor


def compressor_loss(params, p_batch, pixels, cfg: TransformConfig, lam: float, rng=None) -> LossTerms:
    """Batch-mean loss. With ``rng`` q gets uniform noise, otherwise it is rounded."""
    p_batch = np.asarray(p_batch, dtype=np.float64)
    if p_batch.ndim != 3 or p_batch.shape[1:] != (cfg.channels, cfg.bins):
        raise SpecMismatch(f"expected (N, {cfg.channels}, {cfg.bins}) pmfs, got {p_batch.shape}")
    q = analysis(nll_features(p_batch), params, cfg)
    if rng is not None:
        q_tilde = add_uniform_noise(q, rng)
    else:
        q_tilde = ad.Tensor(np.clip(np.sign(q.value) * np.floor(np.abs(q.value) + 0.5), cfg.q_min, cfg.q_max))
    p_hat = floored_softmax(synthesis(q_tilde, params, cfg))
    n_items = p_batch.shape[0]
    r_y = rate_loss(p_batch, p_hat, pixels) * (1.0 / n_items)
    r_q = q_rate_loss(q_tilde, params, cfg) * (1.0 / n_items)
    return LossTerms(r_y + r_q * lam, r_y, r_q, q)


class Adam:
    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_step(params: dict, p_batch, pixels, cfg: TransformConfig, lam: float,
               optimizer: Adam, rng: np.random.Generator) -> dict:
    """One Adam update on R_y + lam * R_q. Returns the pre-update loss in bits."""
    leaves = {k: ad.parameter(v) for k, v in params.items()}
    with np.errstate(all="ignore"):
        terms = compressor_loss(leaves, p_batch, pixels, cfg, lam, rng)
    total = float(terms.total.value)
    if not math.isfinite(total):
        raise Diverged(f"non-finite loss at step {optimizer.t}", {k: v.copy() for k, v in params.items()})
    terms.total.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in leaves.items()}
    optimizer.step(params, grads)
    return {
        "loss_bits": total * BITS_PER_NAT,
        "rate_y_bits": float(terms.rate_y.value) * BITS_PER_NAT,
        "rate_q_bits": float(terms.rate_q.value) * BITS_PER_NAT,
    }


def evaluate(params: dict, p_all, pixels, cfg: TransformConfig, lam: float, batch: int = 64) -> float:
    """Mean inference-mode (rounded q) loss in bits over a set of pmf banks."""
    p_all = np.asarray(p_all)
    pixels = np.broadcast_to(np.asarray(pixels, dtype=np.float64), (len(p_all),))
    total = 0.0
    for i in range(0, len(p_all), batch):
        terms = compressor_loss(params, p_all[i:i + batch], pixels[i:i + batch], cfg, lam)
        total += float(terms.total.value) * len(p_all[i:i + batch])
    return total / len(p_all) * BITS_PER_NAT


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 16
    seed: int = 0
    lambda_q: float = 1.0
    max_steps: int = 2000
    plateau_patience: int = 10
    eval_every: int = 50
    plateau_rel: float = 1e-4
    decay: float = 0.1
    max_decays: int = 2


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    steps: int = 0
    decays: int = 0


def train(params: dict, cfg: TransformConfig, p_train, pixels_train, tc: TrainConfig,
          p_val=None, pixels_val=None, on_eval=None) -> TrainResult:
    """Adam with plateau decay.

    Every ``eval_every`` steps the validation loss is measured; if it has not
    improved by ``plateau_rel`` (relative) for ``plateau_patience`` evaluations
    the learning rate is multiplied by ``decay``. A plateau after
    ``max_decays`` decays ends training. Parameters are rounded to float32 on
    return so that a saved model reproduces them exactly.
    """
    rng = np.random.default_rng(tc.seed)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    p_train = np.asarray(p_train, dtype=np.float64)
    pixels_train = np.broadcast_to(np.asarray(pixels_train, dtype=np.float64), (len(p_train),))
    if p_val is None:
        p_val, pixels_val = p_train, pixels_train
    opt = Adam(lr=tc.lr)
    result = TrainResult(params)
    best, wait = math.inf, 0
    order = np.empty(0, dtype=np.int64)
    pos = 0
    for step in range(1, tc.max_steps + 1):
        if pos + tc.batch > len(order):
            order = rng.permutation(len(p_train))
            pos = 0
        idx = np.sort(order[pos:pos + tc.batch])
        pos += tc.batch
        stats = train_step(params, p_train[idx], pixels_train[idx], cfg, tc.lambda_q, opt, rng)
        result.steps = step
        if step % tc.eval_every and step != tc.max_steps:
            continue
        val = evaluate(params, p_val, pixels_val, cfg, tc.lambda_q)
        row = {"step": step, "lr": opt.lr, **stats, "val_loss_bits": val}
        result.history.append(row)
        if on_eval is not None:
            on_eval(row)
        log.debug("step %d train %.1f val %.1f lr %g", step, stats["loss_bits"], val, opt.lr)
        if val < best * (1.0 - tc.plateau_rel):
            best, wait = val, 0
            continue
        wait += 1
        if wait >= tc.plateau_patience:
            if result.decays >= tc.max_decays:
                break
            opt.lr *= tc.decay
            result.decays += 1
            wait = 0
    result.params = {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}
    return result
