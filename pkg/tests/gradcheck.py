"""Central finite differences, independent of the graph's backward code."""

import numpy as np

H = 1e-4
# denominators below this are treated as this, so near-zero gradients are
# compared on an absolute scale instead of amplifying round-off
REL_FLOOR = 1e-5


def numeric_grads(f, arrays: dict, h: float = H) -> dict:
    """d f / d arrays[name][i] for every scalar, perturbing arrays in place."""
    out = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
        out[name] = g
    return out


def max_rel_error(analytic: dict, numeric: dict) -> float:
    worst = 0.0
    for name in numeric:
        a, n = analytic[name], numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), REL_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
