"""Independent reference computations used as test oracles.

Nothing here imports the code under test except plain data containers.
"""
import itertools
import math

import numpy as np


def normal_pdf(x, mean, var):
    return math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def hmm_enumerate(pi, A, emis):
    """Brute-force filtering by summing over every state path.

    `emis[t][s]` is the emission density (not log) of frame t under state s.
    Returns (log-likelihood, list of per-step state posteriors).
    """
    S = len(pi)
    T = len(emis)
    posteriors = []
    total = 0.0
    for t in range(1, T + 1):
        mass = [0.0] * S
        for path in itertools.product(range(S), repeat=t):
            p = pi[path[0]] * emis[0][path[0]]
            for k in range(1, t):
                p *= A[path[k - 1]][path[k]] * emis[k][path[k]]
            mass[path[-1]] += p
        total = sum(mass)
        posteriors.append([m / total for m in mass])
    return math.log(total), posteriors


def brute_jaccard(gt, pred, n):
    out = []
    for p in range(n):
        g = {t for t, v in enumerate(gt) if v == p}
        q = {t for t, v in enumerate(pred) if v == p}
        union = g | q
        out.append(len(g & q) / len(union) if union else None)
    return out


def brute_accuracy(gt, pred):
    return sum(1 for a, b in zip(gt, pred) if a == b) / len(gt)


def central_differences(loss_fn, params, step=1e-5):
    """Numerical gradient of loss_fn(params) for a dict of float arrays."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = loss_fn(params)
            arr[idx] = orig - step
            down = loss_fn(params)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def relative_error(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-10:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)
