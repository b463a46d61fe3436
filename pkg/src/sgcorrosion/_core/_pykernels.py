"""Pure-Python kernels with the same contract as the compiled ones."""

import numpy as np

from ._errors import PivotError

TAYLOR_CUTOFF = 1e-5


def bernoulli_array(x):
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < TAYLOR_CUTOFF
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = x / np.expm1(x)
    xs = x[small]
    x2 = xs * xs
    out[small] = 1.0 - 0.5 * xs + x2 / 12.0 - x2 * x2 / 720.0
    return out


def thomas(sub, diag, sup, rhs):
    """Solve the tridiagonal system; ``sub[0]`` and ``sup[n-1]`` are ignored."""
    a = sub.tolist()
    b = diag.tolist()
    c = sup.tolist()
    d = rhs.tolist()
    n = len(b)
    cp = [0.0] * n
    x = [0.0] * n
    denom = b[0]
    if denom == 0.0:
        raise PivotError(0)
    cp[0] = c[0] / denom if n > 1 else 0.0
    x[0] = d[0] / denom
    for i in range(1, n):
        denom = b[i] - a[i] * cp[i - 1]
        if denom == 0.0:
            raise PivotError(i)
        if i < n - 1:
            cp[i] = c[i] / denom
        x[i] = (d[i] - a[i] * x[i - 1]) / denom
    for i in range(n - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return np.array(x)
