"""Layer ops on (batch, channels, length) tensors, each with a hand-written backward."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import HistogramSpec
from ..errors import BadShape
from ..histogram import hard_histogram_array, soft_histogram_array, soft_histogram_grad_array
from .autodiff import Tensor, as_tensor


def _check_conv(c_in, c_out, groups, length, stride, k):
    if groups < 1 or c_in % groups or c_out % groups:
        raise BadShape(f"channels {c_in}->{c_out} not divisible by {groups} groups")
    if stride < 1 or length % stride:
        raise BadShape(f"length {length} not divisible by stride {stride}")
    if k % 2 == 0:
        raise BadShape(f"kernel size {k} must be odd")


def _columns(x, k, stride, groups):
    """Strided windows of the zero-padded input arranged as (G, N*L_out, C_g*K)."""
    n, c, length = x.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    l_out = win.shape[2]
    win = win.reshape(n, groups, c // groups, l_out, k).transpose(1, 0, 3, 2, 4)
    return win.reshape(groups, n * l_out, (c // groups) * k), l_out


def conv_forward(x, w, stride, groups):
    """Grouped cross-correlation with symmetric zero padding (K - 1) / 2.

    x: (N, C_in, L), w: (C_out, C_in / G, K) -> (N, C_out, L / stride).
    """
    n = x.shape[0]
    c_out, cg, k = w.shape
    cols, l_out = _columns(x, k, stride, groups)
    wm = w.reshape(groups, c_out // groups, cg * k).transpose(0, 2, 1)
    out = np.matmul(cols, wm)
    return out.reshape(groups, n, l_out, c_out // groups).transpose(1, 0, 3, 2).reshape(n, c_out, l_out)


def conv_grad_weight(x, gy, k, stride, groups):
    n, c_out, l_out = gy.shape
    cols, _ = _columns(x, k, stride, groups)
    gm = gy.reshape(n, groups, c_out // groups, l_out).transpose(1, 2, 0, 3).reshape(groups, c_out // groups, n * l_out)
    dw = np.matmul(gm, cols)
    return dw.reshape(c_out, x.shape[1] // groups, k)


def conv_grad_input(gy, w, stride, groups, length):
    """Adjoint of :func:`conv_forward` in its input; output has length ``length``."""
    n, c_out, l_out = gy.shape
    _, cg, k = w.shape
    pad = (k - 1) // 2
    gm = gy.reshape(n, groups, c_out // groups, l_out).transpose(1, 0, 3, 2).reshape(groups, n * l_out, c_out // groups)
    wm = w.reshape(groups, c_out // groups, cg * k)
    dcols = np.matmul(gm, wm).reshape(groups, n, l_out, cg, k).transpose(1, 0, 3, 2, 4)
    dcols = dcols.reshape(n, groups * cg, l_out, k)
    dxp = np.zeros((n, groups * cg, length + 2 * pad))
    span = stride * (l_out - 1) + 1
    for j in range(k):
        dxp[:, :, j:j + span:stride] += dcols[..., j]
    return dxp[:, :, pad:pad + length]


def conv1d(x, w: Tensor, b: Tensor | None = None, stride: int = 1, groups: int = 1) -> Tensor:
    """Grouped 1-D convolution; weights (C_out, C_in / G, K)."""
    x = as_tensor(x)
    n, c_in, length = x.shape
    c_out, cg, k = w.shape
    if cg * groups != c_in:
        raise BadShape(f"weight expects {cg * groups} input channels, got {c_in}")
    _check_conv(c_in, c_out, groups, length, stride, k)
    out = conv_forward(x.value, w.value, stride, groups)
    if b is not None:
        out = out + b.value[:, None]

    def backward(g):
        gx = conv_grad_input(g, w.value, stride, groups, length) if x.requires_grad else None
        gw = conv_grad_weight(x.value, g, k, stride, groups)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, backward, op="conv1d")


def conv1d_transposed(x, w: Tensor, b: Tensor | None = None, stride: int = 2, groups: int = 1) -> Tensor:
    """Adjoint of :func:`conv1d` used for upsampling.

    Weights have shape (C_in, C_out / G), i.e. those of the strided conv that
    maps C_out channels back to C_in; output length is ``stride * L``.
    """
    x = as_tensor(x)
    n, c_in, length = x.shape
    c_w, og, k = w.shape
    if c_w != c_in:
        raise BadShape(f"weight expects {c_w} input channels, got {c_in}")
    c_out = og * groups
    _check_conv(c_in, c_out, groups, length * stride, stride, k)
    out = conv_grad_input(x.value, w.value, stride, groups, length * stride)
    if b is not None:
        out = out + b.value[:, None]

    def backward(g):
        gx = conv_forward(g, w.value, stride, groups) if x.requires_grad else None
        gw = conv_grad_weight(g, x.value, k, stride, groups)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, backward, op="conv1d_transposed")


def shuffle_permutation(channels: int, groups: int) -> np.ndarray:
    """Source channel for every output channel: out[c] = in[(c mod G)(C/G) + c div G]."""
    if groups < 1 or channels % groups:
        raise BadShape(f"{channels} channels not divisible by {groups} groups")
    c = np.arange(channels)
    return (c % groups) * (channels // groups) + c // groups


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    perm = shuffle_permutation(x.shape[1], groups)
    inv = np.argsort(perm)
    return Tensor(x.value[:, perm], (x,), lambda g: (g[:, inv],), op="shuffle")


def channel_unshuffle(x: Tensor, groups: int) -> Tensor:
    perm = shuffle_permutation(x.shape[1], groups)
    inv = np.argsort(perm)
    return Tensor(x.value[:, inv], (x,), lambda g: (g[:, perm],), op="unshuffle")


def add_uniform_noise(x: Tensor, rng: np.random.Generator) -> Tensor:
    """x + U(-1/2, 1/2), the training-time stand-in for rounding."""
    return x + rng.uniform(-0.5, 0.5, size=x.shape)


def histogram_node(y: Tensor, spec: HistogramSpec, mode: str = "ste") -> Tensor:
    """Per-channel histogram of samples y (C, N) -> (C, B).

    ``mode="soft"`` uses the triangular kernel in both passes; ``mode="ste"``
    returns the hard histogram forward and the soft gradient backward.
    """
    if mode == "soft":
        out = soft_histogram_array(y.value, spec)
    elif mode == "ste":
        out = hard_histogram_array(y.value, spec)
    else:
        raise ValueError(f"unknown histogram mode {mode!r}")
    return Tensor(out, (y,), lambda g: (soft_histogram_grad_array(y.value, spec, g),), op=f"hist_{mode}")


def interp_pmf_lookup(pmf: Tensor, q: Tensor, q_min: int) -> Tensor:
    """Per-channel pmf evaluated at real positions by linear interpolation.

    pmf: (M, S) over the integers q_min..q_min+S-1; q: (..., M, L). Positions
    are clamped into the support (no gradient to q outside it), so integer q
    read back the pmf exactly.
    """
    m, s = pmf.shape
    u = q.value - q_min
    bad = ~np.isfinite(u)
    inside = (u > 0) & (u < s - 1)
    u = np.clip(np.where(bad, 0.0, u), 0, s - 1)
    left = np.minimum(np.floor(u).astype(np.int64), s - 2)
    alpha = u - left
    chan = np.arange(m).reshape((m, 1))
    p_left = pmf.value[chan, left]
    p_right = pmf.value[chan, left + 1]
    out = np.where(bad, np.nan, (1 - alpha) * p_left + alpha * p_right)

    def backward(g):
        gq = g * (p_right - p_left) * inside
        gp = np.zeros_like(pmf.value)
        chan_b = np.broadcast_to(chan, left.shape)
        np.add.at(gp, (chan_b, left), g * (1 - alpha))
        np.add.at(gp, (chan_b, left + 1), g * alpha)
        return gp, gq

    return Tensor(out, (pmf, q), backward, op="pmf_lookup")
