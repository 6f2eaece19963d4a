"""Central finite differences for tests, written directly from the
definition (independent of the package's own gradcheck module)."""

import numpy as np


def central_diff(forward, leaf, step=1e-5):
    """d forward / d leaf.data entry-wise, (f(x+h) - f(x-h)) / 2h."""
    g = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = forward().item()
        flat[i] = orig - step
        fm = forward().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def max_rel_err(a, b):
    """max over entries of |a-b| / max(1, |a|, |b|)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
