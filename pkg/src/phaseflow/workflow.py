"""Phase label space, phase transition graphs and label sequences."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError

DEFAULT_NUM_PHASES = 8


@dataclass(frozen=True)
class PhaseSet:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise DataError("a PhaseSet needs at least 2 phases")
        if any(not n for n in names):
            raise DataError("phase names must be non-empty")
        if len(set(names)) != len(names):
            raise DataError(f"phase names must be unique: {names}")

    @classmethod
    def default(cls, count: int = DEFAULT_NUM_PHASES) -> "PhaseSet":
        return cls(tuple(f"Phase{i + 1}" for i in range(count)))

    @property
    def count(self) -> int:
        return len(self.names)

    def __len__(self):
        return len(self.names)

    def index(self, token: str) -> int:
        """Resolve a phase name, or failing that an integer index."""
        token = token.strip()
        if token in self.names:
            return self.names.index(token)
        try:
            idx = int(token)
        except ValueError:
            raise DataError(f"unknown phase {token!r}") from None
        if not 0 <= idx < self.count:
            raise DataError(f"phase index {idx} out of range 0..{self.count - 1}")
        return idx


@dataclass(frozen=True, eq=False)
class LabelSequence:
    labels: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size < 1:
            raise DataError(f"label sequence {self.video_id!r} must be a non-empty 1-D array")
        if labels.dtype.kind not in "iu":
            if labels.dtype.kind == "f" and np.all(labels == np.round(labels)):
                labels = labels.astype(np.int64)
            else:
                raise DataError(f"labels of {self.video_id!r} must be integers")
        if labels.min() < 0:
            raise DataError(f"negative phase index in {self.video_id!r}")
        labels = labels.astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def __eq__(self, other):
        if not isinstance(other, LabelSequence):
            return NotImplemented
        return self.video_id == other.video_id and np.array_equal(self.labels, other.labels)

    def check(self, phases: PhaseSet | int) -> None:
        n = phases if isinstance(phases, int) else phases.count
        bad = np.flatnonzero(self.labels >= n)
        if bad.size:
            t = int(bad[0])
            raise DataError(
                f"label {int(self.labels[t])} at frame {t} of {self.video_id!r} "
                f"out of range 0..{n - 1}")


@dataclass(frozen=True, eq=False)
class TransitionGraph:
    """Row-stochastic phase transition matrix and its support."""

    matrix: np.ndarray
    allowed: np.ndarray = field(default=None)

    def __post_init__(self):
        A = np.array(self.matrix, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
            raise DataError(f"transition matrix must be square with N_p >= 2, got {A.shape}")
        if not np.all(np.isfinite(A)) or A.min() < 0:
            raise DataError("transition matrix must be finite and non-negative")
        if np.any(np.abs(A.sum(axis=1) - 1.0) > 1e-12):
            raise DataError("transition matrix rows must sum to 1")
        allowed = A > 0 if self.allowed is None else np.array(self.allowed, dtype=bool)
        if allowed.shape != A.shape:
            raise DataError("allowed mask shape mismatch")
        if not np.array_equal(allowed, A > 0):
            raise DataError("allowed mask must equal the support of the transition matrix")
        if not np.all(np.diag(allowed)):
            raise DataError("every phase must be allowed to persist (self-transition > 0)")
        A.setflags(write=False)
        allowed.setflags(write=False)
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "allowed", allowed)

    @property
    def num_phases(self) -> int:
        return self.matrix.shape[0]

    def successors(self, phase: int) -> np.ndarray:
        """Distribution over next phases on leaving `phase`; all-zero if absorbing."""
        row = self.matrix[phase].copy()
        row[phase] = 0.0
        total = row.sum()
        return row / total if total > 0 else row

    @classmethod
    def chain(cls, num_phases: int, stay: float = 0.5) -> "TransitionGraph":
        """Linear workflow 0 -> 1 -> ... -> N_p-1, last phase absorbing."""
        A = np.zeros((num_phases, num_phases))
        for i in range(num_phases - 1):
            A[i, i] = stay
            A[i, i + 1] = 1.0 - stay
        A[-1, -1] = 1.0
        return cls(A)


class Violation(NamedTuple):
    time: int
    from_phase: int
    to_phase: int


def _as_labels(seq) -> LabelSequence:
    return seq if isinstance(seq, LabelSequence) else LabelSequence(np.asarray(seq))


def estimate_transitions(sequences: Sequence, phases: PhaseSet | int,
                         smoothing: float = 0.0) -> TransitionGraph:
    """Count-based transition estimate from annotated label sequences.

    With ``smoothing == 0`` phases never left in the data become absorbing.
    """
    n = phases if isinstance(phases, int) else phases.count
    if smoothing < 0:
        raise DataError("smoothing must be non-negative")
    sequences = [_as_labels(s) for s in sequences]
    if not sequences:
        raise DataError("no label sequences given")
    counts = np.zeros((n, n))
    for seq in sequences:
        seq.check(n)
        np.add.at(counts, (seq.labels[:-1], seq.labels[1:]), 1.0)

    totals = counts.sum(axis=1, keepdims=True)
    if smoothing > 0:
        A = (counts + smoothing) / (totals + n * smoothing)
    else:
        A = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
        for i in np.flatnonzero(totals[:, 0] == 0):
            A[i, i] = 1.0

    allowed = (counts > 0) | np.eye(n, dtype=bool)
    if smoothing > 0:
        allowed = A > 0
    else:
        # a phase seen only as a one-frame visit has no self count; give it a
        # vanishing self-loop so the graph keeps the persistence invariant
        for i in np.flatnonzero(A.diagonal() == 0):
            A[i] *= 1.0 - 1e-9
            A[i, i] = 1e-9
    return TransitionGraph(A, allowed)


def validate_sequence(graph: TransitionGraph | np.ndarray, seq) -> list[Violation]:
    """All time steps whose transition is not allowed, in time order."""
    allowed = graph.allowed if isinstance(graph, TransitionGraph) else np.asarray(graph, bool)
    labels = _as_labels(seq).labels
    src, dst = labels[:-1], labels[1:]
    bad = np.flatnonzero(~allowed[src, dst])
    return [Violation(int(t), int(src[t]), int(dst[t])) for t in bad]


def phase_runs(labels) -> list[tuple[int, int, int]]:
    """Contiguous runs as (phase, start, length)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    edges = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [labels.size]])
    return [(int(labels[s]), int(s), int(e - s)) for s, e in zip(starts, ends)]
