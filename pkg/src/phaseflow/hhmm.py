"""Hierarchical HMM over per-frame phase confidences, with online filtering.

The two-level model (phases on top, a left-to-right chain of bottom states
inside each phase) is stored flattened: one transition matrix over all
bottom states plus an ``owner`` map from bottom state to phase. Emissions are
diagonal Gaussian mixtures over the confidence vector.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

from .dataio import ConfidenceSequence, read_model, write_model
from .errors import DataError, NumericalError
from .gmm import LOG_2PI, GaussianMixture, GmmFitConfig, gmm_fit
from .workflow import LabelSequence, PhaseSet, TransitionGraph, phase_runs

log = logging.getLogger(__name__)

START_SMOOTHING = 1e-6


@dataclass(frozen=True)
class HhmmTrainConfig:
    seconds_per_state: float = 50.0
    max_states: int = 20
    gmm: GmmFitConfig = field(default_factory=GmmFitConfig)
    smoothing: float = 0.0
    seed: int = 0
    em_refine: int = 0

    def __post_init__(self):
        if not self.seconds_per_state > 0:
            raise DataError("seconds_per_state must be > 0")
        if self.max_states < 1:
            raise DataError("max_states must be >= 1")
        if self.em_refine < 0:
            raise DataError("em_refine must be >= 0")


@dataclass(frozen=True, eq=False)
class HhmmModel:
    phases: PhaseSet
    owner: np.ndarray          # (S,) phase of each bottom state
    transmat: np.ndarray       # (S, S)
    initial: np.ndarray        # (S,)
    emissions: tuple[GaussianMixture, ...]

    def __post_init__(self):
        owner = np.array(self.owner, dtype=np.int64)
        A = np.array(self.transmat, dtype=np.float64)
        pi = np.array(self.initial, dtype=np.float64)
        S = owner.size
        emissions = tuple(self.emissions)
        if A.shape != (S, S) or pi.shape != (S,) or len(emissions) != S:
            raise DataError(f"HHMM shapes disagree: {S} owners, transmat {A.shape}, "
                            f"initial {pi.shape}, {len(emissions)} emissions")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-12):
            raise DataError("HHMM transition matrix must be row-stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise DataError("HHMM initial distribution must sum to 1")
        if owner.min() < 0 or owner.max() >= self.phases.count:
            raise DataError("bottom-state owner out of phase range")
        dims = {g.dim for g in emissions}
        if len(dims) != 1:
            raise DataError(f"emission mixtures disagree on dimension: {sorted(dims)}")
        for a in (owner, A, pi):
            a.setflags(write=False)
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "transmat", A)
        object.__setattr__(self, "initial", pi)
        object.__setattr__(self, "emissions", emissions)

        # padded component tables for vectorised emission evaluation
        kmax = max(g.K for g in emissions)
        M = emissions[0].dim
        logw = np.full((S, kmax), -np.inf)
        means = np.zeros((S, kmax, M))
        variances = np.ones((S, kmax, M))
        for s, g in enumerate(emissions):
            with np.errstate(divide="ignore"):
                logw[s, :g.K] = np.log(g.weights)
            means[s, :g.K] = g.means
            variances[s, :g.K] = g.variances
        norm = -0.5 * (LOG_2PI + np.log(variances)).sum(axis=2) + logw
        object.__setattr__(self, "_means", means)
        object.__setattr__(self, "_inv_var", 1.0 / variances)
        object.__setattr__(self, "_norm", norm)

    @property
    def num_states(self) -> int:
        return self.owner.size

    @property
    def obs_dim(self) -> int:
        return self.emissions[0].dim

    @property
    def bottom_counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.phases.count)

    def log_emissions(self, obs) -> np.ndarray:
        """Log emission density of one observation under every bottom state."""
        obs = np.asarray(obs, dtype=np.float64)
        if obs.shape != (self.obs_dim,):
            raise DataError(f"observation has shape {obs.shape}, model expects ({self.obs_dim},)")
        diff = obs - self._means
        # huge inputs overflow to -inf here; forward_step_log turns that into a NumericalError
        with np.errstate(over="ignore", invalid="ignore"):
            return logsumexp(self._norm - 0.5 * (diff * diff * self._inv_var).sum(axis=2), axis=1)

    def structure_violations(self, graph: TransitionGraph) -> list[tuple[int, int]]:
        """Cross-phase transitions breaking the left-to-right hierarchy."""
        bad = []
        present = np.unique(self.owner)
        firsts = {p: int(np.flatnonzero(self.owner == p)[0]) for p in present}
        lasts = {p: int(np.flatnonzero(self.owner == p)[-1]) for p in present}
        for i, j in zip(*np.nonzero(self.transmat)):
            p, q = self.owner[i], self.owner[j]
            if p == q:
                if not (j == i or j == i + 1):
                    bad.append((int(i), int(j)))
            elif not (graph.allowed[p, q] and i == lasts[p] and j == firsts[q]):
                bad.append((int(i), int(j)))
        return bad


@dataclass(frozen=True, eq=False)
class ForwardState:
    alpha: np.ndarray
    t: int = 0
    log_scale: float = 0.0


def forward_init(model: HhmmModel) -> ForwardState:
    return ForwardState(model.initial.copy(), 0, 0.0)


def forward_step_log(model: HhmmModel, state: ForwardState,
                     log_emis: np.ndarray) -> tuple[ForwardState, np.ndarray]:
    """One scaled forward update from precomputed log emission densities.

    The first frame is scored against the initial distribution directly;
    later frames first propagate through the transition matrix.
    """
    prior = state.alpha if state.t == 0 else state.alpha @ model.transmat
    support = prior > 0
    if not support.any():
        raise NumericalError(f"forward recursion lost all mass at frame {state.t}")
    shifted = np.where(support, log_emis, -np.inf)
    peak = shifted.max()
    if not np.isfinite(peak):
        raise NumericalError(f"no reachable state can emit frame {state.t}")
    unnorm = prior * np.exp(shifted - peak)
    total = unnorm.sum()
    if not (total > 0 and np.isfinite(total)):
        raise NumericalError(f"forward recursion underflow at frame {state.t}")
    alpha = unnorm / total
    # subtracting log(prior.sum()) cancels rounding drift in the propagated mass
    log_scale = state.log_scale + np.log(total) - np.log(prior.sum()) + peak
    dist = np.bincount(model.owner, weights=alpha, minlength=model.phases.count)
    return ForwardState(alpha, state.t + 1, float(log_scale)), dist


def forward_step(model: HhmmModel, state: ForwardState, obs) -> tuple[ForwardState, np.ndarray]:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape != (model.obs_dim,):
        raise DataError(f"observation has {obs.size} values, expected {model.obs_dim}")
    return forward_step_log(model, state, model.log_emissions(obs))


def predict_phase(dist) -> int:
    """Most probable phase; ties go to the lowest index."""
    return int(np.argmax(np.asarray(dist)))


def _scores(seq) -> np.ndarray:
    return seq.scores if isinstance(seq, ConfidenceSequence) else np.asarray(seq, dtype=np.float64)


def forward_filter(model: HhmmModel, seq) -> tuple[np.ndarray, float]:
    """Per-frame phase distributions (T x N_p) and the sequence log-likelihood."""
    state = forward_init(model)
    dists = []
    for obs in _scores(seq):
        state, dist = forward_step(model, state, obs)
        dists.append(dist)
    return np.array(dists), state.log_scale


def forward_loglik(model: HhmmModel, seq) -> float:
    return forward_filter(model, seq)[1]


def hhmm_predict_online(model: HhmmModel, observations: Iterable) -> Iterator[int]:
    """Yield one phase index per confidence vector, using past frames only."""
    state = forward_init(model)
    for obs in observations:
        state, dist = forward_step(model, state, obs)
        yield predict_phase(dist)


# --- training -------------------------------------------------------------------

def _sub_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def bottom_state_count(mean_duration: float, seconds_per_state: float, max_states: int) -> int:
    # round half up, not numpy's banker's rounding
    n = int(np.floor(mean_duration / seconds_per_state + 0.5))
    return min(max(n, 1), max_states)


def _split_run(length: int, parts: int) -> list[tuple[int, int]]:
    edges = [(j * length) // parts for j in range(parts + 1)]
    return list(zip(edges[:-1], edges[1:]))


def _build_transmat(owner, stay, graph: TransitionGraph) -> np.ndarray:
    S = owner.size
    A = np.zeros((S, S))
    n_p = graph.num_phases
    first = [int(np.flatnonzero(owner == p)[0]) for p in range(n_p)]
    last = [int(np.flatnonzero(owner == p)[-1]) for p in range(n_p)]
    for s in range(S):
        p = owner[s]
        A[s, s] = stay[s]
        if s != last[p]:
            A[s, s + 1] = 1.0 - stay[s]
            continue
        succ = graph.successors(p)
        if succ.any():
            for q in np.flatnonzero(succ):
                A[s, first[q]] += (1.0 - stay[s]) * succ[q]
        else:
            A[s, s] = 1.0
    return A


def _initial_distribution(owner, labels: Sequence[LabelSequence], n_p: int) -> np.ndarray:
    starts = np.bincount([int(l.labels[0]) for l in labels], minlength=n_p)
    top = int(np.argmax(starts))
    pi = np.where(starts[owner] > 0, START_SMOOTHING, 0.0)
    pi[int(np.flatnonzero(owner == top)[0])] += 1.0
    return pi / pi.sum()


def hhmm_train(confidences: Sequence[ConfidenceSequence], labels: Sequence[LabelSequence],
               graph: TransitionGraph, config: HhmmTrainConfig = HhmmTrainConfig(),
               phases: PhaseSet | None = None) -> HhmmModel:
    """Fit bottom-state counts, dwell-matched transitions and GMM emissions."""
    n_p = graph.num_phases
    phases = phases or PhaseSet.default(n_p)
    if phases.count != n_p:
        raise DataError(f"PhaseSet has {phases.count} phases, graph has {n_p}")
    if len(confidences) != len(labels) or not labels:
        raise DataError(f"need equally many confidence and label sequences, got "
                        f"{len(confidences)} and {len(labels)}")
    obs = []
    dims = set()
    for conf, lab in zip(confidences, labels):
        X = _scores(conf)
        if X.shape[0] != len(lab):
            raise DataError(f"video {lab.video_id!r}: {X.shape[0]} confidence rows but {len(lab)} labels")
        lab.check(n_p)
        dims.add(X.shape[1])
        obs.append(X)
    if len(dims) != 1:
        raise DataError(f"confidence dimension differs across videos: {sorted(dims)}")

    runs = [[] for _ in range(n_p)]   # per phase: (video, start, length)
    for v, lab in enumerate(labels):
        for p, start, length in phase_runs(lab.labels):
            runs[p].append((v, start, length))
    missing = [p for p in range(n_p) if not runs[p]]
    if missing:
        raise DataError(f"phases {missing} never occur in the training labels")

    mean_dur = np.array([np.mean([r[2] for r in runs[p]]) for p in range(n_p)])
    counts = [bottom_state_count(mean_dur[p], config.seconds_per_state, config.max_states)
              for p in range(n_p)]
    owner = np.repeat(np.arange(n_p), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])

    stay = np.empty(owner.size)
    for p in range(n_p):
        per_state = mean_dur[p] / counts[p]
        stay[first[p]:first[p] + counts[p]] = 1.0 - min(1.0, 1.0 / per_state)

    frames = [[] for _ in range(owner.size)]
    for p in range(n_p):
        for v, start, length in runs[p]:
            for j, (a, b) in enumerate(_split_run(length, counts[p])):
                if b > a:
                    frames[first[p] + j].append(obs[v][start + a:start + b])
    emissions = []
    for s in range(owner.size):
        p = owner[s]
        if frames[s]:
            X = np.vstack(frames[s])
        else:
            X = np.vstack([obs[v][a:a + n] for v, a, n in runs[p]])
        gcfg = replace(config.gmm, K=min(config.gmm.K, X.shape[0]),
                       seed=_sub_seed(config.seed, s))
        emissions.append(gmm_fit(X, gcfg))

    if config.em_refine:
        for p in range(n_p):
            sl = slice(first[p], first[p] + counts[p])
            segments = [obs[v][a:a + n] for v, a, n in runs[p]]
            new_em, new_stay = _refine_phase(emissions[sl], stay[sl], segments,
                                             config.em_refine, config.gmm.var_floor)
            emissions[sl] = new_em
            stay[sl] = new_stay

    A = _build_transmat(owner, stay, graph)
    pi = _initial_distribution(owner, labels, n_p)
    return HhmmModel(phases, owner, A, pi, tuple(emissions))


def _refine_phase(emissions, stay, segments, iters: int, var_floor: float):
    """Baum-Welch on one phase's left-to-right chain, every segment starting in its first state."""
    n = len(emissions)
    emissions = list(emissions)
    stay = np.array(stay, dtype=np.float64)
    for _ in range(iters):
        A = np.zeros((n, n))
        for j in range(n):
            A[j, j] = stay[j]
            if j + 1 < n:
                A[j, j + 1] = 1.0 - stay[j]
            else:
                A[j, j] = 1.0
        stay_num = np.zeros(n)
        stay_den = np.zeros(n)
        occupancy = np.zeros(n)
        gammas = []
        for X in segments:
            le = np.column_stack([_mixture_logpdf(g, X) for g in emissions])
            gamma, xi_diag = _forward_backward(le, A)
            gammas.append(gamma)
            stay_num += xi_diag
            stay_den += gamma[:-1].sum(axis=0)
            occupancy += gamma.sum(axis=0)
        allX = np.vstack(segments)
        allG = np.vstack(gammas)
        for j in range(n):
            emissions[j] = _weighted_gmm_step(emissions[j], allX, allG[:, j], var_floor)
        for j in range(n - 1):
            if stay_den[j] > 0:
                stay[j] = stay_num[j] / stay_den[j]
        # last state: the phase exit is outside the segment, so match the mean dwell instead
        dwell = occupancy[-1] / len(segments)
        if dwell > 0:
            stay[-1] = 1.0 - min(1.0, 1.0 / max(dwell, 1.0))
    return emissions, stay


def _mixture_logpdf(g: GaussianMixture, X) -> np.ndarray:
    diff = X[:, None, :] - g.means[None]
    lp = -0.5 * (LOG_2PI + np.log(g.variances)[None] + diff ** 2 / g.variances[None]).sum(axis=2)
    with np.errstate(divide="ignore"):
        return logsumexp(lp + np.log(g.weights)[None], axis=1)


def _forward_backward(log_emis, A):
    """State posteriors and expected self-transition counts for one segment."""
    T, n = log_emis.shape
    peak = log_emis.max(axis=1, keepdims=True)
    E = np.exp(log_emis - peak)
    alpha = np.zeros((T, n))
    c = np.zeros(T)
    a = np.zeros(n)
    a[0] = 1.0
    a = a * E[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * E[t]
        c[t] = a.sum()
        if not c[t] > 0:
            raise NumericalError("Baum-Welch forward pass underflow")
        alpha[t] = a / c[t]
    beta = np.ones((T, n))
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (E[t + 1] * beta[t + 1])) / c[t + 1]
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    xi_diag = np.zeros(n)
    for t in range(T - 1):
        xi_diag += alpha[t] * np.diag(A) * E[t + 1] * beta[t + 1] / c[t + 1]
    return gamma, xi_diag


def _weighted_gmm_step(g: GaussianMixture, X, weights, var_floor) -> GaussianMixture:
    if weights.sum() <= 1e-10:
        return g
    diff = X[:, None, :] - g.means[None]
    lp = -0.5 * (LOG_2PI + np.log(g.variances)[None] + diff ** 2 / g.variances[None]).sum(axis=2)
    with np.errstate(divide="ignore"):
        lp = lp + np.log(g.weights)[None]
    resp = np.exp(lp - logsumexp(lp, axis=1, keepdims=True)) * weights[:, None]
    Nk = resp.sum(axis=0)
    ok = Nk > 1e-10
    means = g.means.copy()
    variances = g.variances.copy()
    means[ok] = (resp[:, ok].T @ X) / Nk[ok, None]
    for k in np.flatnonzero(ok):
        variances[k] = np.maximum((resp[:, k:k + 1] * (X - means[k]) ** 2).sum(axis=0) / Nk[k], var_floor)
    w = Nk / Nk.sum()
    return GaussianMixture(w, means, variances)


# --- persistence ----------------------------------------------------------------

def save_hhmm(model: HhmmModel, path) -> None:
    write_model(path, "hhmm", {
        "phases": list(model.phases.names),
        "owner": model.owner,
        "transmat": model.transmat,
        "initial": model.initial,
        "gmm_components": np.array([g.K for g in model.emissions], dtype=np.int64),
        "gmm_weights": np.concatenate([g.weights for g in model.emissions]),
        "gmm_means": np.vstack([g.means for g in model.emissions]),
        "gmm_variances": np.vstack([g.variances for g in model.emissions]),
    })


def load_hhmm(path) -> HhmmModel:
    s = read_model(path, "hhmm")
    bounds = np.concatenate([[0], np.cumsum(s["gmm_components"])])
    emissions = tuple(
        GaussianMixture(s["gmm_weights"][a:b], s["gmm_means"][a:b], s["gmm_variances"][a:b])
        for a, b in zip(bounds[:-1], bounds[1:]))
    return HhmmModel(PhaseSet(tuple(s["phases"])), s["owner"], s["transmat"], s["initial"], emissions)


def models_equal(a: HhmmModel, b: HhmmModel) -> bool:
    return (a.phases == b.phases and np.array_equal(a.owner, b.owner)
            and np.array_equal(a.transmat, b.transmat) and np.array_equal(a.initial, b.initial)
            and len(a.emissions) == len(b.emissions)
            and all(x == y for x, y in zip(a.emissions, b.emissions)))
