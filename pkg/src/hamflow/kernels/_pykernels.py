"""Pure numpy implementations of the hot kernels.

These are the reference semantics for the compiled module. All arrays are
float64 and C-contiguous; ``x`` is ``(n, d)``, ``means`` is ``(k, d)``.
"""

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

_PAIRWISE_CHUNK = 256


def _component_logits(x, logw, means, var):
    d = x.shape[1]
    sq = ((x[:, None, :] - means[None, :, :]) ** 2).sum(-1)
    return logw[None, :] - 0.5 * d * np.log(2.0 * np.pi * var)[None, :] - 0.5 * sq / var[None, :]


def gmm_logpdf_score(x, logw, means, var):
    """Log-density and score of an isotropic Gaussian mixture at each row of ``x``."""
    logits = _component_logits(x, logw, means, var)
    lp = logsumexp(logits, axis=1)
    r = np.exp(logits - lp[:, None])
    # sum_i r_i (mu_i - x) / var_i
    w = r / var[None, :]
    score = w @ means - w.sum(1, keepdims=True) * x
    return lp, score


def leapfrog_gmm(x0, v0, h, n_steps, logw, means, var, guard):
    """Kick-drift-kick leapfrog under the mixture score, per-sample step ``h``.

    Returns ``(x, v, bad)`` where ``bad`` is the first step index at which any
    trajectory left the guard ball or became non-finite, else -1.
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    v = np.array(v0, dtype=np.float64, copy=True)
    half = 0.5 * h[:, None]
    hh = h[:, None]
    _, f = gmm_logpdf_score(x, logw, means, var)
    for step in range(n_steps):
        v += half * f
        x += hh * v
        _, f = gmm_logpdf_score(x, logw, means, var)
        v += half * f
        nx = (x * x).sum(1)
        nv = (v * v).sum(1)
        if not (np.all(np.isfinite(nx)) and np.all(np.isfinite(nv))) or max(nx.max(), nv.max()) > guard * guard:
            return x, v, step
    return x, v, -1


def mean_pairwise_distance(a, b):
    """Mean Euclidean distance over all ``len(a) * len(b)`` pairs."""
    total = 0.0
    for i in range(0, a.shape[0], _PAIRWISE_CHUNK):
        total += cdist(a[i:i + _PAIRWISE_CHUNK], b).sum()
    return total / (a.shape[0] * b.shape[0])
