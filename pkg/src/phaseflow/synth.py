"""Synthetic surgical-workflow datasets.

Labels follow a semi-Markov walk over a phase transition graph with geometric
dwell times; features are phase centers plus isotropic Gaussian noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, FeatureSequence
from .errors import ConfigError
from .workflow import LabelSequence, PhaseSet, TransitionGraph

HARD_SEPARATION = 0.5


@dataclass(frozen=True)
class SynthConfig:
    phases: PhaseSet
    graph: TransitionGraph
    mean_dwell: float
    phase_centers: np.ndarray
    noise_std: float
    num_videos: int
    max_len: int
    seed: int = 0
    initial_phase: int = 0

    def __post_init__(self):
        centers = np.array(self.phase_centers, dtype=np.float64)
        centers.setflags(write=False)
        object.__setattr__(self, "phase_centers", centers)
        n = self.phases.count
        if self.graph.num_phases != n:
            raise ConfigError(f"graph has {self.graph.num_phases} phases, PhaseSet has {n}")
        if centers.ndim != 2 or centers.shape[0] != n or centers.shape[1] < 1:
            raise ConfigError(f"phase_centers must be {n} x D, got {centers.shape}")
        if not np.all(np.isfinite(centers)):
            raise ConfigError("phase_centers must be finite")
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(n, 1)]
        if np.any(dist <= 0):
            raise ConfigError("phase centers must be pairwise distinct")
        if not self.mean_dwell >= 1:
            raise ConfigError("mean_dwell must be >= 1 frame")
        if self.noise_std < 0 or not np.isfinite(self.noise_std):
            raise ConfigError("noise_std must be finite and >= 0")
        if self.num_videos < 1:
            raise ConfigError("num_videos must be >= 1")
        if self.max_len < n:
            raise ConfigError(f"max_len must be >= N_p = {n}")
        if not 0 <= self.initial_phase < n:
            raise ConfigError("initial_phase out of range")

    @property
    def feature_dim(self) -> int:
        return self.phase_centers.shape[1]


def make_centers(num_phases: int, dim: int, separation: float, seed: int = 0) -> np.ndarray:
    """Phase centers whose minimum pairwise distance equals `separation`.

    When ``dim >= num_phases`` the centers are scaled basis vectors, so every
    pair is exactly `separation` apart; otherwise random directions are
    rescaled.
    """
    if separation <= 0:
        raise ConfigError("separation must be positive")
    if dim >= num_phases:
        centers = np.zeros((num_phases, dim))
        centers[np.arange(num_phases), np.arange(num_phases)] = separation / np.sqrt(2.0)
        return centers
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_phases, dim))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))[np.triu_indices(num_phases, 1)]
    if dist.min() == 0:
        raise ConfigError("could not draw distinct centers")
    return centers * (separation / dist.min())


def preset_config(num_phases: int = 8, feature_dim: int = 16, mean_dwell: float = 30.0,
                  separation: float = 4.0, noise_std: float = 1.0, num_videos: int = 30,
                  max_len: int = 400, seed: int = 0, hard: bool = False) -> SynthConfig:
    """Chain-graph configuration; `separation` is in units of noise_std (absolute if noise_std is 0)."""
    if hard:
        separation = HARD_SEPARATION
    phases = PhaseSet.default(num_phases)
    return SynthConfig(
        phases=phases,
        graph=TransitionGraph.chain(num_phases, stay=max(1.0 - 1.0 / mean_dwell, 1e-3)),
        mean_dwell=mean_dwell,
        phase_centers=make_centers(num_phases, feature_dim, separation * (noise_std or 1.0), seed),
        noise_std=noise_std,
        num_videos=num_videos,
        max_len=max_len,
        seed=seed,
    )


def _video_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def sample_labels(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    p_leave = 1.0 / config.mean_dwell
    labels = []
    phase = config.initial_phase
    while True:
        dwell = int(rng.geometric(p_leave))
        labels.extend([phase] * min(dwell, config.max_len - len(labels)))
        if len(labels) >= config.max_len:
            break
        nxt = config.graph.successors(phase)
        if not nxt.any():
            break
        phase = int(rng.choice(config.phases.count, p=nxt))
    return np.array(labels, dtype=np.int64)


def synth_video(config: SynthConfig, index: int) -> tuple[FeatureSequence, LabelSequence]:
    rng = _video_rng(config.seed, index)
    labels = sample_labels(config, rng)
    noise = rng.standard_normal((labels.size, config.feature_dim)) * config.noise_std
    feats = config.phase_centers[labels] + noise
    vid = f"video{index:03d}"
    return FeatureSequence(feats, vid), LabelSequence(labels, vid)


def synth_generate(config: SynthConfig) -> Dataset:
    return Dataset(tuple(synth_video(config, i) for i in range(config.num_videos)))


def config_from_dict(raw: dict) -> SynthConfig:
    """Build a SynthConfig from the JSON schema used by ``phaseflow synth``.

    Recognised keys: num_phases, phase_names, graph ("chain" or a matrix),
    mean_dwell, feature_dim, separation, phase_centers, noise_std, num_videos,
    max_len, seed, initial_phase, hard.
    """
    raw = dict(raw)
    names = raw.pop("phase_names", None)
    n = raw.pop("num_phases", len(names) if names else 8)
    phases = PhaseSet(tuple(names)) if names else PhaseSet.default(n)
    n = phases.count
    mean_dwell = float(raw.pop("mean_dwell", 30.0))
    graph_spec = raw.pop("graph", "chain")
    if graph_spec == "chain":
        graph = TransitionGraph.chain(n, stay=max(1.0 - 1.0 / mean_dwell, 1e-3))
    else:
        graph = TransitionGraph(np.array(graph_spec, dtype=np.float64))
    noise_std = float(raw.pop("noise_std", 1.0))
    seed = int(raw.pop("seed", 0))
    hard = bool(raw.pop("hard", False))
    separation = HARD_SEPARATION if hard else float(raw.pop("separation", 4.0))
    raw.pop("separation", None)
    dim = int(raw.pop("feature_dim", 16))
    centers = raw.pop("phase_centers", None)
    if centers is None or hard:
        centers = make_centers(n, dim, separation * (noise_std or 1.0), seed)
    cfg = SynthConfig(
        phases=phases, graph=graph, mean_dwell=mean_dwell,
        phase_centers=np.array(centers, dtype=np.float64), noise_std=noise_std,
        num_videos=int(raw.pop("num_videos", 30)), max_len=int(raw.pop("max_len", 400)),
        seed=seed, initial_phase=int(raw.pop("initial_phase", 0)))
    raw.pop("test_videos", None)
    raw.pop("format", None)
    if raw:
        raise ConfigError(f"unknown synth config keys: {sorted(raw)}")
    return cfg
