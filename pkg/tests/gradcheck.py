"""Central finite-difference checks shared by the gradient tests."""
import numpy as np

from distcodec.nn import autodiff as ad


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


def check_op(build, arrays, tol=1e-5, seed=0):
    """Compare autodiff gradients of sum(build(*leaves) * w) with central differences."""
    rng = np.random.default_rng(seed)
    leaves = [ad.parameter(a) for a in arrays]
    out = build(*leaves)
    w = rng.normal(size=out.shape)

    def f():
        return float(np.sum(build(*[ad.Tensor(a) for a in arrays]).value * w))

    out.backward(w)
    for leaf, arr in zip(leaves, arrays):
        assert max_rel_err(leaf.grad, numeric_grad(f, arr)) <= tol
