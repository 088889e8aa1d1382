"""Per-phase Jaccard index, frame accuracy and mean/std summaries across videos."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError
from .workflow import LabelSequence, PhaseSet

ABSENT_POLICIES = ("skip", "zero", "one")


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelSequence) else np.asarray(x, dtype=np.int64)


def _pair(gt, pred):
    g, p = _labels(gt), _labels(pred)
    if g.shape != p.shape:
        raise DataError(f"ground truth has {g.size} frames, prediction has {p.size}")
    return g, p


def jaccard_per_phase(gt, pred, phases: PhaseSet | int) -> np.ndarray:
    """Intersection over union of the frame sets of each phase.

    Phases absent from both sequences are NaN (undefined).
    """
    g, p = _pair(gt, pred)
    n = phases if isinstance(phases, int) else phases.count
    ids = np.arange(n)[:, None]
    in_g = g[None, :] == ids
    in_p = p[None, :] == ids
    inter = (in_g & in_p).sum(axis=1)
    union = (in_g | in_p).sum(axis=1)
    out = np.full(n, np.nan)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def accuracy(gt, pred) -> float:
    g, p = _pair(gt, pred)
    if g.size == 0:
        raise DataError("empty sequence")
    return float(np.count_nonzero(g == p) / g.size)


@dataclass(frozen=True)
class VideoResult:
    video_id: str
    jaccard: tuple[float, ...]     # NaN where undefined
    mean_jaccard: float
    accuracy: float

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "jaccard": [None if np.isnan(j) else j for j in self.jaccard],
            "mean_jaccard": self.mean_jaccard,
            "accuracy": self.accuracy,
        }


def evaluate_video(gt, pred, phases: PhaseSet | int, video_id: str | None = None,
                   absent_policy: str = "skip") -> VideoResult:
    if absent_policy not in ABSENT_POLICIES:
        raise DataError(f"absent_policy must be one of {ABSENT_POLICIES}")
    jac = jaccard_per_phase(gt, pred, phases)
    if absent_policy == "skip":
        defined = jac[~np.isnan(jac)]
    else:
        defined = np.where(np.isnan(jac), 0.0 if absent_policy == "zero" else 1.0, jac)
    mean_j = float(defined.mean()) if defined.size else float("nan")
    if video_id is None:
        video_id = gt.video_id if isinstance(gt, LabelSequence) else ""
    return VideoResult(video_id, tuple(float(j) for j in jac), mean_j, accuracy(gt, pred))


@dataclass(frozen=True)
class SummaryReport:
    videos: tuple[VideoResult, ...]
    jaccard_mean: float
    jaccard_std: float
    accuracy_mean: float
    accuracy_std: float
    ddof: int = 1

    def to_dict(self) -> dict:
        return {
            "videos": [v.to_dict() for v in self.videos],
            "jaccard": {"mean": self.jaccard_mean, "std": self.jaccard_std},
            "accuracy": {"mean": self.accuracy_mean, "std": self.accuracy_std},
            "ddof": self.ddof,
            "units": "percent",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self, label: str = "pipeline") -> str:
        """One-row text table: Jaccard and accuracy as mean±std percentages."""
        jac = f"{self.jaccard_mean:.1f}±{self.jaccard_std:.1f}"
        acc = f"{self.accuracy_mean:.1f}±{self.accuracy_std:.1f}"
        width = max(len(label), 8)
        rule = "+" + "-" * (width + 2) + "+" + "-" * 13 + "+" + "-" * 13 + "+"
        return "\n".join([
            rule,
            f"| {'Network':<{width}} | {'Jaccard':^11} | {'Accuracy':^11} |",
            rule,
            f"| {label:<{width}} | {jac:^11} | {acc:^11} |",
            rule,
        ]) + "\n"


def _mean_std(values, ddof):
    values = np.asarray(values, dtype=np.float64) * 100.0
    std = float(values.std(ddof=ddof)) if values.size > ddof else 0.0
    return float(values.mean()), std


def summarize(results: Sequence[VideoResult], ddof: int = 1) -> SummaryReport:
    """Mean and standard deviation (percent) of per-video mean Jaccard and accuracy.

    With a single video the standard deviation is reported as 0.
    """
    if not results:
        raise DataError("no video results to summarize")
    jac = [r.mean_jaccard for r in results]
    if any(np.isnan(j) for j in jac):
        raise DataError("a video has no defined phase Jaccard")
    jm, js = _mean_std(jac, ddof)
    am, as_ = _mean_std([r.accuracy for r in results], ddof)
    return SummaryReport(tuple(results), jm, js, am, as_, ddof)


def evaluate_dataset(gts: Sequence, preds: Sequence, phases: PhaseSet | int,
                     absent_policy: str = "skip", ddof: int = 1) -> SummaryReport:
    if len(gts) != len(preds):
        raise DataError(f"{len(gts)} ground-truth sequences but {len(preds)} predictions")
    return summarize([evaluate_video(g, p, phases, absent_policy=absent_policy)
                      for g, p in zip(gts, preds)], ddof)
