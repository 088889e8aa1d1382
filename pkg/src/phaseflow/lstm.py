"""LSTM phase classifier trained by backpropagation through time.

Gate pre-activations are stacked in the order input, forget, candidate,
output: ``z = W x + U h + b`` with ``W`` of shape (4H, D) and ``U`` (4H, H).
A linear head ``V h + c`` produces one logit per phase.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .dataio import Dataset, FeatureSequence, read_model, write_model
from .errors import DataError

PARAM_NAMES = ("W", "U", "b", "V", "c")


@dataclass(frozen=True)
class LstmTrainConfig:
    hidden: int = 1024
    lr: float = 1e-2
    iterations: int = 30000
    t_max: int = 3993
    clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.hidden < 1 or self.iterations < 0 or self.t_max < 1:
            raise DataError("hidden, t_max must be >= 1 and iterations >= 0")
        if self.lr < 0 or not self.clip > 0:
            raise DataError("lr must be >= 0 and clip > 0")


@dataclass(frozen=True, eq=False)
class LstmModel:
    W: np.ndarray   # (4H, D)
    U: np.ndarray   # (4H, H)
    b: np.ndarray   # (4H,)
    V: np.ndarray   # (N_p, H)
    c: np.ndarray   # (N_p,)

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        H4, D = self.W.shape
        H = H4 // 4
        if H4 != 4 * H or self.U.shape != (H4, H) or self.b.shape != (H4,):
            raise DataError("inconsistent LSTM gate shapes")
        if self.V.shape[1:] != (H,) or self.c.shape != (self.V.shape[0],):
            raise DataError("inconsistent LSTM head shapes")

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def num_phases(self) -> int:
        return self.V.shape[0]

    @property
    def num_params(self) -> int:
        return sum(getattr(self, n).size for n in PARAM_NAMES)

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())

    def __eq__(self, other):
        if not isinstance(other, LstmModel):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in PARAM_NAMES)

    @classmethod
    def zeros(cls, input_dim: int, hidden: int, num_phases: int) -> "LstmModel":
        H = hidden
        return cls(np.zeros((4 * H, input_dim)), np.zeros((4 * H, H)), np.zeros(4 * H),
                   np.zeros((num_phases, H)), np.zeros(num_phases))


def expected_param_count(D: int, H: int, n_p: int) -> int:
    return 4 * (H * D + H * H + H) + n_p * H + n_p


def lstm_init(input_dim: int, hidden: int, num_phases: int, seed: int = 0) -> LstmModel:
    """Glorot-uniform gate and head matrices, forget bias 1, other biases 0."""
    rng = np.random.default_rng(seed)
    H, D = hidden, input_dim

    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    W = np.vstack([glorot(H, D) for _ in range(4)])
    U = np.vstack([glorot(H, H) for _ in range(4)])
    b = np.zeros(4 * H)
    b[H:2 * H] = 1.0
    return LstmModel(W, U, b, glorot(num_phases, H), np.zeros(num_phases))


@dataclass(frozen=True, eq=False)
class PaddedBatch:
    features: np.ndarray   # (T_max, D)
    labels: np.ndarray     # (T_max,)
    mask: np.ndarray       # (T_max,) bool, a prefix of True

    def __post_init__(self):
        f = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        m = np.array(self.mask, dtype=bool)
        if f.ndim != 2 or y.shape != (f.shape[0],) or m.shape != (f.shape[0],):
            raise DataError("padded batch arrays disagree on length")
        n = int(m.sum())
        if not m[:n].all():
            raise DataError("mask must be a prefix of True values")
        if np.any(f[n:] != 0):
            raise DataError("padded feature rows must be zero")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "mask", m)

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def pad_sequence(features, labels=None, t_max: int | None = None) -> PaddedBatch:
    features = np.asarray(features, dtype=np.float64)
    T, D = features.shape
    t_max = T if t_max is None else t_max
    if T > t_max:
        raise DataError(f"sequence of length {T} exceeds T_max={t_max}")
    f = np.zeros((t_max, D))
    f[:T] = features
    y = np.zeros(t_max, dtype=np.int64)
    if labels is not None:
        y[:T] = labels
    m = np.zeros(t_max, dtype=bool)
    m[:T] = True
    return PaddedBatch(f, y, m)


def _cell(model: LstmModel, x, h, c):
    H = model.hidden
    z = model.W @ x + model.U @ h + model.b
    i = expit(z[:H])
    f = expit(z[H:2 * H])
    g = np.tanh(z[2 * H:3 * H])
    o = expit(z[3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, tc)


def _head(model: LstmModel, h):
    return model.V @ h + model.c


def lstm_forward(model: LstmModel, batch: PaddedBatch | np.ndarray, steps: int | None = None):
    """Run the recurrence from zero state over every frame, padded ones included.

    Returns (logits, cache); `steps` limits the run to a prefix.
    """
    X = batch.features if isinstance(batch, PaddedBatch) else np.asarray(batch, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise DataError(f"input has shape {X.shape}, model expects D={model.input_dim}")
    T = X.shape[0] if steps is None else steps
    H = model.hidden
    h = np.zeros(H)
    c = np.zeros(H)
    hs = np.zeros((T + 1, H))
    cs = np.zeros((T + 1, H))
    gates = np.zeros((T, 5, H))
    logits = np.zeros((T, model.num_phases))
    for t in range(T):
        h, c, acts = _cell(model, X[t], h, c)
        hs[t + 1] = h
        cs[t + 1] = c
        gates[t] = acts
        logits[t] = _head(model, h)
    return logits, {"X": X[:T], "h": hs, "c": cs, "gates": gates}


def lstm_loss(logits, labels, mask) -> float:
    """Mean softmax cross-entropy over the unmasked frames."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise DataError("empty mask")
    logits = np.asarray(logits)[: mask.size]
    lp = log_softmax(logits[mask], axis=1)
    return float(-lp[np.arange(n), np.asarray(labels)[mask]].sum() / n)


def lstm_loss_and_gradients(model: LstmModel, batch: PaddedBatch) -> tuple[float, LstmModel]:
    """Loss and exact BPTT gradients.

    Frames after the last real one cannot influence the loss, so the
    recurrence is only unrolled over the real prefix.
    """
    n = batch.length
    if n == 0:
        raise DataError("empty mask")
    if batch.features.shape[1] != model.input_dim:
        raise DataError(f"input has D={batch.features.shape[1]}, model expects {model.input_dim}")
    logits, cache = lstm_forward(model, batch.features, steps=n)
    y = batch.labels[:n]
    loss = lstm_loss(logits, y, np.ones(n, dtype=bool))

    dlogits = softmax(logits, axis=1)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    H = model.hidden
    hs, cs, gates, X = cache["h"], cache["c"], cache["gates"], cache["X"]
    dV = dlogits.T @ hs[1:]
    dc_head = dlogits.sum(axis=0)
    dH_out = dlogits @ model.V          # dL/dh_t from the head, (n, H)

    dZ = np.zeros((n, 4 * H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in range(n - 1, -1, -1):
        i, f, g, o, tc = gates[t]
        dh = dH_out[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        dz = dZ[t]
        dz[:H] = di * i * (1.0 - i)
        dz[H:2 * H] = df * f * (1.0 - f)
        dz[2 * H:3 * H] = dg * (1.0 - g * g)
        dz[3 * H:] = do * o * (1.0 - o)
        dh_next = model.U.T @ dz
        dc_next = dc * f
    grads = LstmModel(dZ.T @ X, dZ.T @ hs[:-1], dZ.sum(axis=0), dV, dc_head)
    return loss, grads


def lstm_gradients(model: LstmModel, batch: PaddedBatch) -> LstmModel:
    return lstm_loss_and_gradients(model, batch)[1]


def _clip(grads: LstmModel, max_norm: float) -> LstmModel:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.params().values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return LstmModel(**{k: v * scale for k, v in grads.params().items()})


def lstm_train(dataset: Dataset, num_phases: int, config: LstmTrainConfig = LstmTrainConfig(),
               seed: int | None = None) -> tuple[LstmModel, np.ndarray]:
    """Plain SGD, one zero-padded video per update; returns (model, loss trace)."""
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if seed is not None:
        config = replace(config, seed=seed)
    too_long = [f.video_id for f in dataset.features if f.T > config.t_max]
    if too_long:
        raise DataError(f"videos longer than T_max={config.t_max}: {too_long}")
    if max(int(l.labels.max()) for l in dataset.labels) >= num_phases:
        raise DataError("label out of range for the number of phases")
    batches = [pad_sequence(f.data, l.labels, config.t_max) for f, l in dataset]

    init_seed, order_seed = np.random.SeedSequence(config.seed).spawn(2)
    model = lstm_init(dataset.feature_dim, config.hidden, num_phases,
                      int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(order_seed)
    params = {k: v.copy() for k, v in model.params().items()}
    trace = np.zeros(config.iterations)
    order = []
    for it in range(config.iterations):
        if not order:
            order = list(rng.permutation(len(batches)))
        batch = batches[order.pop(0)]
        loss, grads = lstm_loss_and_gradients(LstmModel(**params), batch)
        trace[it] = loss
        grads = _clip(grads, config.clip)
        for k, g in grads.params().items():
            params[k] -= config.lr * g
    return LstmModel(**params), trace


class LstmOnlinePredictor:
    """Stateful per-frame predictor; one instance per video stream."""

    def __init__(self, model: LstmModel):
        self.model = model
        self.reset()

    def reset(self) -> None:
        self.h = np.zeros(self.model.hidden)
        self.c = np.zeros(self.model.hidden)

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.model.input_dim,):
            raise DataError(f"frame has shape {x.shape}, model expects ({self.model.input_dim},)")
        self.h, self.c, _ = _cell(self.model, x, self.h, self.c)
        return _head(self.model, self.h)

    def step(self, x) -> int:
        return int(np.argmax(self.logits(x)))


def lstm_predict_online(model: LstmModel, frames: Iterable) -> Iterator[int]:
    predictor = LstmOnlinePredictor(model)
    for x in frames:
        yield predictor.step(x)


def lstm_predict(model: LstmModel, seq: FeatureSequence | np.ndarray) -> np.ndarray:
    data = seq.data if isinstance(seq, FeatureSequence) else seq
    return np.array(list(lstm_predict_online(model, data)), dtype=np.int64)


def save_lstm(model: LstmModel, path) -> None:
    write_model(path, "lstm", model.params())


def load_lstm(path) -> LstmModel:
    s = read_model(path, "lstm")
    return LstmModel(**{k: s[k] for k in PARAM_NAMES})


def save_loss_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{float(v)!r}\n")
