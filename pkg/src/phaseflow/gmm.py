"""Diagonal-covariance Gaussian mixtures fitted by EM.

Dimensions listed in ``GmmFitConfig.single_dims`` (e.g. a binary tool
signal) are modelled by one Gaussian shared by every component, so the
density factorises into that Gaussian times a K-component mixture over the
remaining dimensions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DataError

log = logging.getLogger(__name__)

VAR_FLOOR = 1e-6
EMPTY_MASS = 1e-10
LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmFitConfig:
    K: int = 5
    max_iters: int = 100
    rel_tol: float = 1e-6
    var_floor: float = VAR_FLOOR
    seed: int = 0
    single_dims: tuple[int, ...] = ()
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.K < 1:
            raise DataError("K must be >= 1")
        if self.max_iters < 1:
            raise DataError("max_iters must be >= 1")
        if not self.var_floor > 0:
            raise DataError("variance floor must be > 0")


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray     # (K,)
    means: np.ndarray       # (K, M)
    variances: np.ndarray   # (K, M)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        mu = np.array(self.means, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64)
        if mu.ndim == 1:
            mu = mu[:, None]
        if var.ndim == 1:
            var = var[:, None]
        if mu.shape != var.shape or mu.shape[0] != w.size:
            raise DataError(f"inconsistent mixture shapes {w.shape}, {mu.shape}, {var.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DataError("mixture weights must be non-negative and sum to 1")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(var))) or np.any(var <= 0):
            raise DataError("mixture means must be finite and variances positive")
        for a in (w, mu, var):
            a.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", var)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GaussianMixture):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights) and np.array_equal(self.means, other.means)
                and np.array_equal(self.variances, other.variances))


def _component_logpdf(X, means, variances):
    """(N, K) array of log N(x_n; mean_k, diag(var_k))."""
    diff = X[:, None, :] - means[None, :, :]
    return -0.5 * (LOG_2PI + np.log(variances)[None] + diff ** 2 / variances[None]).sum(axis=2)


def gmm_log_density_batch(g: GaussianMixture, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != g.dim:
        raise DataError(f"expected N x {g.dim} observations, got shape {X.shape}")
    with np.errstate(divide="ignore"):
        logw = np.log(g.weights)
    return logsumexp(_component_logpdf(X, g.means, g.variances) + logw[None, :], axis=1)


def gmm_log_density(g: GaussianMixture, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != g.dim:
        raise DataError(f"observation has dimension {x.size}, mixture has {g.dim}")
    return float(gmm_log_density_batch(g, x[None, :])[0])


def _kmeans_pp(X, K, rng, iters):
    N = X.shape[0]
    centers = [X[rng.integers(N)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            break
        idx = rng.choice(N, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    C = np.array(centers)
    assign = np.zeros(N, dtype=np.int64)
    for _ in range(iters):
        assign = ((X[:, None, :] - C[None]) ** 2).sum(axis=2).argmin(axis=1)
        for k in range(C.shape[0]):
            members = X[assign == k]
            if len(members):
                C[k] = members.mean(axis=0)
    return C, assign


class _Fitter:
    """EM over the mixed dimensions; shared dimensions contribute a constant."""

    def __init__(self, X, cfg: GmmFitConfig):
        self.X = X
        self.cfg = cfg

    def estep(self, w, mu, var):
        with np.errstate(divide="ignore"):
            logw = np.log(w)
        joint = _component_logpdf(self.X, mu, var) + logw[None, :]
        point_ll = logsumexp(joint, axis=1)
        return joint - point_ll[:, None], point_ll

    def mstep(self, log_resp, mu_prev, var_prev):
        X, floor = self.X, self.cfg.var_floor
        resp = np.exp(log_resp)
        Nk = resp.sum(axis=0)
        w = Nk / Nk.sum()
        ok = Nk >= EMPTY_MASS
        mu = mu_prev.copy()
        var = var_prev.copy()
        if ok.any():
            mu[ok] = (resp[:, ok].T @ X) / Nk[ok, None]
            sq = np.stack([(resp[:, k:k + 1] * (X - mu[k]) ** 2).sum(axis=0) for k in np.flatnonzero(ok)])
            var[ok] = np.maximum(sq / Nk[ok, None], floor)
        return w, mu, var, ~ok


def _fit_free(X, cfg: GmmFitConfig, K: int, rng):
    N, M = X.shape
    floor = cfg.var_floor
    if K == 1:
        mu = X.mean(axis=0, keepdims=True)
        var = np.maximum(X.var(axis=0, keepdims=True), floor)
        w = np.ones(1)
        point_ll = _component_logpdf(X, mu, var)[:, 0]
        return w, mu, var, [float(point_ll.sum())]

    C, assign = _kmeans_pp(X, K, rng, cfg.kmeans_iters)
    K = C.shape[0]
    global_var = np.maximum(X.var(axis=0), floor)
    counts = np.bincount(assign, minlength=K).astype(np.float64)
    w = np.maximum(counts, 1.0)
    w /= w.sum()
    mu = C.copy()
    var = np.tile(global_var, (K, 1))
    for k in range(K):
        members = X[assign == k]
        if len(members) > 1:
            var[k] = np.maximum(members.var(axis=0), floor)

    fitter = _Fitter(X, cfg)
    trace = []
    converged = False
    for _ in range(cfg.max_iters):
        log_resp, point_ll = fitter.estep(w, mu, var)
        ll = float(point_ll.sum())
        if trace and ll - trace[-1] < cfg.rel_tol * abs(trace[-1]):
            trace.append(ll)
            converged = True
            break
        trace.append(ll)
        w, mu, var, empty = fitter.mstep(log_resp, mu, var)
        if empty.any():
            w, mu, var = _reseed(fitter, w, mu, var, empty, point_ll, global_var)
    if not converged:
        trace.append(float(fitter.estep(w, mu, var)[1].sum()))
    return w, mu, var, trace


def _reseed(fitter, w, mu, var, empty, point_ll, global_var):
    """Move starved components onto the worst-explained points.

    The move is kept only when it does not lower the likelihood, so EM stays
    monotone.
    """
    N = fitter.X.shape[0]
    w2, mu2, var2 = w.copy(), mu.copy(), var.copy()
    order = np.argsort(point_ll, kind="stable")
    for j, k in enumerate(np.flatnonzero(empty)):
        mu2[k] = fitter.X[order[j]]
        var2[k] = global_var
        w2[k] = 1.0 / N
    w2 /= w2.sum()
    base = fitter.estep(w, mu, var)[1].sum()
    moved = fitter.estep(w2, mu2, var2)[1].sum()
    if moved >= base:
        log.debug("re-seeded %d empty mixture component(s)", int(empty.sum()))
        return w2, mu2, var2
    return w, mu, var


def gmm_fit_trace(X, config: GmmFitConfig = GmmFitConfig()) -> tuple[GaussianMixture, list[float]]:
    """Fit a mixture and return it with the per-iteration total log-likelihood."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("gmm_fit needs a non-empty N x M matrix")
    if not np.all(np.isfinite(X)):
        raise DataError("gmm_fit data contains non-finite values")
    N, M = X.shape
    if N < config.K:
        raise DataError(f"gmm_fit needs at least K={config.K} points, got {N}")
    single = sorted(set(config.single_dims))
    if any(d < 0 or d >= M for d in single):
        raise DataError(f"single_dims {single} out of range for dimension {M}")
    free = [d for d in range(M) if d not in single]

    K = config.K if free else 1
    if free:
        distinct = np.unique(X[:, free], axis=0).shape[0]
        if distinct < K:
            log.warning("only %d distinct points; reducing K from %d to %d", distinct, K, distinct)
            K = distinct

    rng = np.random.default_rng(config.seed)
    shared_ll = 0.0
    shared_mu = X[:, single].mean(axis=0)
    shared_var = np.maximum(X[:, single].var(axis=0), config.var_floor)
    if single:
        shared_ll = float(_component_logpdf(X[:, single], shared_mu[None], shared_var[None]).sum())
    if free:
        w, mu_f, var_f, trace = _fit_free(X[:, free], config, K, rng)
    else:
        w, mu_f, var_f, trace = np.ones(1), np.zeros((1, 0)), np.ones((1, 0)), [0.0]

    K = w.size
    means = np.empty((K, M))
    variances = np.empty((K, M))
    means[:, free] = mu_f
    variances[:, free] = var_f
    means[:, single] = shared_mu
    variances[:, single] = shared_var
    trace = [ll + shared_ll for ll in trace]
    return GaussianMixture(w / w.sum(), means, variances), trace


def gmm_fit(X, config: GmmFitConfig = GmmFitConfig()) -> GaussianMixture:
    return gmm_fit_trace(X, config)[0]

