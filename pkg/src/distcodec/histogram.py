"""Per-channel histogram estimation: exact (hard), triangular-kernel (soft) and STE.

Samples are real values on the bin grid of a :class:`HistogramSpec`. A sample
at continuous position ``u = y - y_min`` spreads its unit mass over the two
bins straddling it, which is exactly what the triangular kernel of width one
bin does. Kernel mass that would fall outside the first or last bin is folded
back into that edge bin, so every histogram sums to one.

The rate-gradient helpers at the bottom are closed-form expressions used as
independent oracles for the autodiff engine.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import HistogramSpec, LatentTensor, Pmf, PmfBank, round_half_away
from .errors import EmptyChannel


class Mode(enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    STE = "ste"


def kernel_soft(u):
    """Triangular kernel max(0, 1 - |u|)."""
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(u, dtype=np.float64)))


def kernel_hard(u):
    """Rectangular kernel on [-0.5, 0.5); a tie at +0.5 belongs to the next bin."""
    u = np.asarray(u, dtype=np.float64)
    return ((u >= -0.5) & (u < 0.5)).astype(np.float64)


def _as_channels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2:
        raise ValueError(f"expected samples of shape (N,) or (C, N), got {y.shape}")
    if y.shape[1] == 0:
        raise EmptyChannel("cannot build a histogram from zero samples")
    return y


def hard_counts(y, spec: HistogramSpec) -> np.ndarray:
    """Integer bin counts, shape (C, B), samples assigned to their nearest bin."""
    y = _as_channels(y)
    c, _ = y.shape
    idx = np.clip(round_half_away(y), spec.y_min, spec.y_max).astype(np.int64) - spec.y_min
    flat = idx + spec.num_bins * np.arange(c)[:, None]
    return np.bincount(flat.ravel(), minlength=c * spec.num_bins).reshape(c, spec.num_bins)


def hard_histogram_array(y, spec: HistogramSpec) -> np.ndarray:
    counts = hard_counts(y, spec)
    return counts / counts.sum(axis=1, keepdims=True)


def _interp_positions(y, spec: HistogramSpec):
    """Left bin index, right weight and an in-range mask for every sample."""
    u = y - spec.y_min
    inside = (u > 0) & (u < spec.num_bins - 1)
    u = np.clip(u, 0, spec.num_bins - 1)
    left = np.minimum(np.floor(u).astype(np.int64), spec.num_bins - 2) if spec.num_bins > 1 else np.zeros_like(u, dtype=np.int64)
    alpha = u - left
    return left, alpha, inside


def soft_histogram_array(y, spec: HistogramSpec) -> np.ndarray:
    y = _as_channels(y)
    c, n = y.shape
    b = spec.num_bins
    if b == 1:
        return np.ones((c, 1))
    left, alpha, _ = _interp_positions(y, spec)
    offs = b * np.arange(c)[:, None]
    mass = np.bincount((left + offs).ravel(), weights=(1.0 - alpha).ravel(), minlength=c * b)
    mass += np.bincount((left + 1 + offs).ravel(), weights=alpha.ravel(), minlength=c * b)
    return mass.reshape(c, b) / n


def soft_histogram_grad_array(y, spec: HistogramSpec, upstream) -> np.ndarray:
    """Vector-Jacobian product of the soft histogram, shape like ``y``.

    ``upstream`` has shape (B,) or (C, B). The triangular kernel's derivative is
    taken as zero at its kinks (bin centers and one bin away), so samples
    sitting exactly on a bin center or clamped to an edge receive no gradient.
    """
    y2 = _as_channels(y)
    c, n = y2.shape
    up = np.broadcast_to(np.asarray(upstream, dtype=np.float64), (c, spec.num_bins))
    if spec.num_bins == 1:
        return np.zeros(np.shape(y))
    left, alpha, inside = _interp_positions(y2, spec)
    rows = np.arange(c)[:, None]
    diff = up[rows, left + 1] - up[rows, left]
    g = np.where(inside & (alpha > 0), diff, 0.0) / (n * spec.bin_width)
    return g.reshape(np.shape(y))


@dataclass
class HistogramResult:
    """A histogram bank plus the rule for pushing gradients back to the samples."""

    bank: PmfBank
    mode: Mode
    source_count: int
    samples: np.ndarray

    def backward(self, upstream) -> np.ndarray:
        if self.mode is Mode.HARD:
            return np.zeros_like(self.samples)
        return soft_histogram_grad_array(self.samples, self.bank.spec, upstream)


def histogram(y, spec: HistogramSpec, mode: Mode = Mode.HARD) -> HistogramResult:
    """Histogram of every row of ``y`` (shape (C, N) or (N,)).

    STE mode returns the hard histogram values with the soft backward rule.
    """
    samples = np.asarray(y, dtype=np.float64)
    rows = _as_channels(samples)
    if mode is Mode.SOFT:
        mass = soft_histogram_array(rows, spec)
    else:
        mass = hard_histogram_array(rows, spec)
    return HistogramResult(PmfBank(mass, spec), mode, rows.shape[1], samples)


def hard_histogram(y, spec: HistogramSpec) -> Pmf:
    return Pmf(hard_histogram_array(np.ravel(y), spec)[0], spec)


def soft_histogram(y, spec: HistogramSpec) -> Pmf:
    return Pmf(soft_histogram_array(np.ravel(y), spec)[0], spec)


def ste_histogram(y, spec: HistogramSpec) -> HistogramResult:
    return histogram(np.ravel(y), spec, Mode.STE)


def soft_histogram_grad(y, spec: HistogramSpec, upstream) -> np.ndarray:
    return soft_histogram_grad_array(np.ravel(y), spec, upstream)


def latent_histograms(latent: LatentTensor) -> PmfBank:
    """Exact per-channel pmfs of an integer latent."""
    flat = latent.data.reshape(latent.channels, -1)
    return PmfBank(hard_histogram_array(flat, latent.spec), latent.spec)


# --- closed-form rate gradients ---------------------------------------------

def interpolated_code_length(y, log_p_hat, spec: HistogramSpec) -> np.ndarray:
    """Code length of each sample interpolated linearly between its two nearest bins.

    ``log_p_hat`` holds natural-log probabilities of one channel.
    """
    y = np.asarray(y, dtype=np.float64)
    left, alpha, _ = _interp_positions(y, spec)
    lp = np.asarray(log_p_hat, dtype=np.float64)
    return -(1.0 - alpha) * lp[left] - alpha * lp[left + 1]


def interpolated_rate_grad(y, log_p_hat, spec: HistogramSpec) -> np.ndarray:
    """d(rate)/dy_k = -(log p_hat[ceil] - log p_hat[floor]) / bin width.

    This is the gradient of the cross-entropy rate with respect to each sample
    when the reconstructed pmf equals the true one and is held fixed. Samples
    on a bin center (floor == ceil) get zero.
    """
    y = np.asarray(y, dtype=np.float64)
    lp = np.asarray(log_p_hat, dtype=np.float64)
    u = y - spec.y_min
    lo = np.floor(u).astype(np.int64)
    hi = np.ceil(u).astype(np.int64)
    return -(lp[hi] - lp[lo]) / spec.bin_width


def bottleneck_likelihood(y, cdf):
    """Bin likelihood c(y + 1/2) - c(y - 1/2) of a continuous-CDF entropy model."""
    y = np.asarray(y, dtype=np.float64)
    return cdf(y + 0.5) - cdf(y - 0.5)


def bottleneck_rate_grad(y, cdf, pdf):
    """d/dy of -log(c(y + 1/2) - c(y - 1/2)) for a CDF ``cdf`` with density ``pdf``."""
    y = np.asarray(y, dtype=np.float64)
    return -(pdf(y + 0.5) - pdf(y - 0.5)) / bottleneck_likelihood(y, cdf)
