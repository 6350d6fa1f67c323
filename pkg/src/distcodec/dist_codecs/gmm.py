"""Gaussian-mixture side information: fit, 8-bit parameter codes and reconstruction.

Each channel's histogram is approximated by a K-component mixture whose
weights, means and standard deviations are sent as one byte each. The last
weight is implied by the others, so a channel costs 3K - 1 bytes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from ..core import EPS_P, HistogramSpec, Pmf, floor_pmf
from ..errors import CorruptStream

SIGMA_MIN = 0.05
LEVELS = 255
MAX_ITER = 200
TOL = 1e-8


def sigma_max(spec: HistogramSpec) -> float:
    return max((spec.y_max - spec.y_min) / 2.0, 2 * SIGMA_MIN)


def gmm_side_bits(components: int, channels: int) -> int:
    return (3 * components - 1) * channels * 8


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture parameters of one channel.

    ``codes`` holds the (K, 3) uint8 grid indices of (w, mu, sigma) when the
    values came off the 8-bit grid; it is None for an unquantized fit.
    """

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray
    codes: np.ndarray | None = None

    @property
    def components(self) -> int:
        return len(self.weights)


# --- 8-bit grids ----------------------------------------------------------------

def _grid_weight(code):
    return np.asarray(code, dtype=np.float64) / LEVELS


def _grid_mean(code, spec):
    return spec.y_min + np.asarray(code, dtype=np.float64) * (spec.y_max - spec.y_min) / LEVELS


def _grid_sigma(code, spec):
    span = math.log(sigma_max(spec) / SIGMA_MIN)
    return SIGMA_MIN * np.exp(np.asarray(code, dtype=np.float64) * span / LEVELS)


def grid_steps(spec: HistogramSpec, sigma: float) -> tuple[float, float]:
    """Spacing of the mean grid and of the sigma grid around ``sigma``."""
    mean_step = (spec.y_max - spec.y_min) / LEVELS
    ratio = math.exp(math.log(sigma_max(spec) / SIGMA_MIN) / LEVELS)
    return mean_step, sigma * (ratio - 1.0)


def quantize_params(params: GmmParams, spec: HistogramSpec) -> np.ndarray:
    """(K, 3) uint8 codes for (w, mu, sigma); the last weight code is implied by the others."""
    span = math.log(sigma_max(spec) / SIGMA_MIN)
    w = np.clip(np.rint(params.weights * LEVELS), 0, LEVELS)
    mu = np.clip(np.rint((params.means - spec.y_min) / max(spec.y_max - spec.y_min, 1) * LEVELS), 0, LEVELS)
    sig = np.clip(params.sigmas, SIGMA_MIN, sigma_max(spec))
    s = np.clip(np.rint(np.log(sig / SIGMA_MIN) / span * LEVELS), 0, LEVELS)
    w[-1] = max(0, LEVELS - w[:-1].sum())
    return np.stack([w, mu, s], axis=1).astype(np.uint8)


def dequantize_params(codes: np.ndarray, spec: HistogramSpec) -> GmmParams:
    codes = np.asarray(codes)
    w = _grid_weight(codes[:, 0])
    head = w[:-1].sum()
    w[-1] = max(0.0, 1.0 - head)
    w = w / w.sum()
    return GmmParams(w, _grid_mean(codes[:, 1], spec), _grid_sigma(codes[:, 2], spec), codes.astype(np.uint8))


def codes_to_bytes(codes: np.ndarray) -> bytes:
    """Wire layout of one channel: w1 mu1 s1 ... wK muK sK with wK omitted."""
    codes = np.asarray(codes, dtype=np.uint8)
    return codes[:-1].tobytes() + codes[-1, 1:].tobytes()


def codes_from_bytes(buf: bytes, components: int) -> np.ndarray:
    if len(buf) != 3 * components - 1:
        raise CorruptStream("GMM side-info length mismatch")
    raw = np.frombuffer(buf, dtype=np.uint8)
    head = raw[:3 * (components - 1)].reshape(components - 1, 3)
    last_w = max(0, LEVELS - int(head[:, 0].sum()))
    return np.concatenate([head, [[last_w, raw[-2], raw[-1]]]]).astype(np.uint8)


# --- fitting ----------------------------------------------------------------

def _log_normal(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def gmm_fit_continuous(p: Pmf, components: int) -> GmmParams:
    """EM on bin centers weighted by mass, then a Sheppard correction of the variances.

    A channel with a single occupied bin returns a spike at that bin with
    sigma = SIGMA_MIN and all weight on the first component.
    """
    if not 1 <= components <= 3:
        raise ValueError("components must be in 1..3")
    x = p.spec.centers
    w_data = p.mass
    occupied = np.flatnonzero(w_data > 0)
    if len(occupied) <= 1:
        mu = x[occupied[0]] if len(occupied) else x[0]
        weights = np.zeros(components)
        weights[0] = 1.0
        return GmmParams(weights, np.full(components, mu), np.full(components, SIGMA_MIN))

    mean = float(w_data @ x)
    std = math.sqrt(max(float(w_data @ (x - mean) ** 2), 1e-6))
    cdf = np.cumsum(w_data)
    quant = [(k + 0.5) / components for k in range(components)]
    mu = np.array([x[min(np.searchsorted(cdf, q), len(x) - 1)] for q in quant], dtype=np.float64)
    sigma = np.full(components, std / components if components > 1 else std)
    sigma = np.maximum(sigma, 0.5)
    weights = np.full(components, 1.0 / components)
    xs, ws = x[occupied], w_data[occupied]

    prev = -math.inf
    for _ in range(MAX_ITER):
        log_comp = np.log(np.maximum(weights, 1e-300))[:, None] + _log_normal(xs[None, :], mu[:, None], sigma[:, None])
        top = log_comp.max(axis=0)
        log_mix = top + np.log(np.exp(log_comp - top).sum(axis=0))
        ll = float(ws @ log_mix)
        resp = np.exp(log_comp - log_mix) * ws
        mass = resp.sum(axis=1)
        keep = mass > 1e-12
        weights = np.where(keep, mass, 0.0)
        weights /= weights.sum()
        safe = np.where(keep, mass, 1.0)
        mu = np.where(keep, resp @ xs / safe, mu)
        var = (resp * (xs[None, :] - mu[:, None]) ** 2).sum(axis=1) / safe
        sigma = np.where(keep, np.sqrt(np.maximum(var, 1e-4)), sigma)
        if ll - prev < TOL:
            break
        prev = ll
    # bin-width correction: a unit-bin histogram inflates the variance by 1/12
    sigma = np.sqrt(np.maximum(sigma**2 - 1.0 / 12.0, SIGMA_MIN**2))
    order = np.argsort(-weights, kind="stable")
    return GmmParams(weights[order], mu[order], sigma[order])


def gmm_fit(p: Pmf, components: int) -> GmmParams:
    """Fit a mixture to one channel's pmf and snap it to the 8-bit grids."""
    return dequantize_params(quantize_params(gmm_fit_continuous(p, components), p.spec), p.spec)


def mixture_mass(params: GmmParams, spec: HistogramSpec) -> np.ndarray:
    """Bin masses of the discretized mixture with tails folded into the edge bins."""
    edges = np.arange(spec.y_min - 0.5, spec.y_max + 1.0, 1.0)
    mass = np.zeros(spec.num_bins)
    for w, mu, sigma in zip(params.weights, params.means, params.sigmas):
        if w <= 0:
            continue
        cdf = ndtr((edges - mu) / sigma)
        cdf[0], cdf[-1] = 0.0, 1.0
        mass += w * np.diff(cdf)
    return mass


def gmm_reconstruct(params: GmmParams, spec: HistogramSpec, eps: float = EPS_P) -> Pmf:
    return Pmf(floor_pmf(mixture_mass(params, spec), eps), spec)
