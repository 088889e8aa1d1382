"""One-vs-all linear SVM trained with Pegasos stochastic subgradient steps."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataio import ConfidenceSequence, Dataset, FeatureSequence, read_model, write_model
from .errors import DataError
from .workflow import PhaseSet

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SvmTrainConfig:
    lam: float = 1e-3
    epochs: int = 20
    seed: int = 0
    balanced: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise DataError("lambda must be > 0")
        if self.epochs < 1:
            raise DataError("epochs must be >= 1")


@dataclass(frozen=True, eq=False)
class LinearSvmModel:
    weights: np.ndarray   # (N_p, D)
    bias: np.ndarray      # (N_p,)
    mean: np.ndarray      # (D,)
    std: np.ndarray       # (D,)

    def __post_init__(self):
        for name in ("weights", "bias", "mean", "std"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise DataError(f"SVM {name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DataError("SVM weights must be N_p x D with N_p biases")
        if self.mean.shape != (self.dim,) or self.std.shape != (self.dim,):
            raise DataError("standardizer must have D entries")
        if np.any(self.std < STD_FLOOR):
            raise DataError(f"standardizer std must be >= {STD_FLOOR}")

    @property
    def num_phases(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def zeros(cls, num_phases: int, dim: int) -> "LinearSvmModel":
        return cls(np.zeros((num_phases, dim)), np.zeros(num_phases), np.zeros(dim), np.ones(dim))

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def __eq__(self, other):
        if not isinstance(other, LinearSvmModel):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k))
                   for k in ("weights", "bias", "mean", "std"))


def hinge_objective(W: np.ndarray, Xa: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Per-class regularized hinge objective on bias-augmented inputs."""
    margins = Y * (Xa @ W.T)
    return 0.5 * lam * (W ** 2).sum(axis=1) + np.maximum(0.0, 1.0 - margins).mean(axis=0)


def _stack(dataset: Dataset, phases: PhaseSet | int):
    if len(dataset) == 0:
        raise DataError("empty dataset")
    n = phases if isinstance(phases, int) else phases.count
    X = np.vstack([f.data for f in dataset.features])
    y = np.concatenate([l.labels for l in dataset.labels])
    if y.max() >= n:
        raise DataError(f"label {int(y.max())} out of range for {n} phases")
    return X, y, n


def svm_train(dataset: Dataset, phases: PhaseSet | int, config: SvmTrainConfig = SvmTrainConfig(),
              trace: list | None = None) -> LinearSvmModel:
    """Train N_p binary hinge-loss problems on z-scored features.

    The bias is learned as the weight of a constant input of 1 and is
    regularized with the other weights. All binary problems visit frames in
    the same seeded order. If `trace` is given, the per-class objective after
    every epoch is appended to it.
    """
    X, y, n = _stack(dataset, phases)
    mean = X.mean(axis=0)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    Xa = np.hstack([(X - mean) / std, np.ones((X.shape[0], 1))])
    N, Da = Xa.shape
    Y = np.where(y[:, None] == np.arange(n)[None, :], 1.0, -1.0)

    present = np.bincount(y, minlength=n) > 0
    for p in np.flatnonzero(~present):
        log.warning("phase %d never observed in training data; its score is fixed at -1", p)

    pos_scale = np.ones(n)
    if config.balanced:
        npos = (Y > 0).sum(axis=0)
        pos_scale = np.where(npos > 0, (N - npos) / np.maximum(npos, 1), 1.0)
    step_scale = np.where(Y > 0, pos_scale[None, :], 1.0)

    rng = np.random.default_rng(config.seed)
    W = np.zeros((n, Da))
    lam = config.lam
    t = 0
    for _ in range(config.epochs):
        for i in rng.permutation(N):
            t += 1
            eta = 1.0 / (lam * t)
            x = Xa[i]
            yi = Y[i]
            violated = yi * (W @ x) < 1.0
            W *= 1.0 - eta * lam
            if violated.any():
                W[violated] += (eta * yi[violated] * step_scale[i, violated])[:, None] * x
        if trace is not None:
            trace.append(hinge_objective(W, Xa, Y, lam))

    weights, bias = W[:, :-1].copy(), W[:, -1].copy()
    weights[~present] = 0.0
    bias[~present] = -1.0
    return LinearSvmModel(weights, bias, mean, std)


def svm_scores(model: LinearSvmModel, x) -> np.ndarray:
    """Raw one-vs-all margins for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise DataError(f"feature vector has shape {x.shape}, model expects ({model.dim},)")
    if not np.all(np.isfinite(x)):
        raise DataError("feature vector contains non-finite values")
    return model.weights @ model.standardize(x) + model.bias


def svm_score_sequence(model: LinearSvmModel, seq: FeatureSequence) -> ConfidenceSequence:
    rows = []
    for t, x in enumerate(seq.data):
        try:
            rows.append(svm_scores(model, x))
        except DataError as exc:
            raise DataError(f"{seq.video_id!r} row {t}: {exc}") from None
    return ConfidenceSequence(np.array(rows), seq.video_id)


def svm_predict(model: LinearSvmModel, seq: FeatureSequence) -> np.ndarray:
    """Frame-wise argmax baseline (no temporal model)."""
    return np.argmax(svm_score_sequence(model, seq).scores, axis=1)


def save_svm(model: LinearSvmModel, path) -> None:
    write_model(path, "svm", {"weights": model.weights, "bias": model.bias,
                              "mean": model.mean, "std": model.std})


def load_svm(path) -> LinearSvmModel:
    s = read_model(path, "svm")
    return LinearSvmModel(s["weights"], s["bias"], s["mean"], s["std"])
