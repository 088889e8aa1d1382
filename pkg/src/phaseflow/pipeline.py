"""End-to-end orchestration shared by the ``phaseflow`` commands."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dataio
from .dataio import Dataset, FeatureSequence
from .errors import ConfigError, DataError, PhaseflowError
from .gmm import GmmFitConfig
from .hhmm import HhmmModel, HhmmTrainConfig, hhmm_predict_online, hhmm_train, load_hhmm, save_hhmm
from .lstm import LstmModel, LstmTrainConfig, load_lstm, lstm_predict, lstm_train, save_loss_trace, save_lstm
from .metrics import SummaryReport, evaluate_dataset
from .svm import LinearSvmModel, SvmTrainConfig, load_svm, save_svm, svm_score_sequence, svm_scores, svm_train
from .workflow import PhaseSet, estimate_transitions

log = logging.getLogger(__name__)

PIPELINES = ("hmm", "lstm")
MANIFEST = "manifest.json"


def derive_seed(global_seed: int, stage: str) -> int:
    """Stable 63-bit seed for a named stage."""
    digest = hashlib.sha256(f"{int(global_seed)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def resolve_phases(directory=None, names: Sequence[str] | None = None) -> PhaseSet:
    """Explicit names, else the dataset manifest, else the 8-phase default."""
    if names:
        return PhaseSet(tuple(names))
    if directory is not None:
        manifest = Path(directory) / MANIFEST
        if manifest.exists():
            meta = json.loads(manifest.read_text(encoding="utf-8"))
            if "phase_names" in meta:
                return PhaseSet(tuple(meta["phase_names"]))
            if "N_p" in meta:
                return PhaseSet.default(int(meta["N_p"]))
    return PhaseSet.default()


def write_manifest(dataset: Dataset, directory, phases: PhaseSet, seed: int, **extra) -> None:
    meta = {
        "video_ids": dataset.video_ids,
        "T": {f.video_id: f.T for f in dataset.features},
        "D": dataset.feature_dim,
        "N_p": phases.count,
        "phase_names": list(phases.names),
        "seed": seed,
        **extra,
    }
    Path(directory, MANIFEST).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --- stages -------------------------------------------------------------------------

def train_svm_stage(train: Dataset, phases: PhaseSet, config: SvmTrainConfig) -> LinearSvmModel:
    return svm_train(train, phases, config)


def train_hmm_stage(train: Dataset, svm: LinearSvmModel, phases: PhaseSet,
                    config: HhmmTrainConfig) -> HhmmModel:
    if svm.dim != train.feature_dim:
        raise DataError(f"SVM expects D={svm.dim}, training features have D={train.feature_dim}")
    confidences = [svm_score_sequence(svm, f) for f in train.features]
    graph = estimate_transitions(train.labels, phases, config.smoothing)
    return hhmm_train(confidences, train.labels, graph, config, phases)


def train_lstm_stage(train: Dataset, phases: PhaseSet, config: LstmTrainConfig):
    return lstm_train(train, phases.count, config)


def infer_hmm(svm: LinearSvmModel, hmm: HhmmModel, seq: FeatureSequence) -> np.ndarray:
    """Causal predictions: each frame is scored and filtered as it arrives."""
    scores = (svm_scores(svm, x) for x in seq.data)
    return np.fromiter(hhmm_predict_online(hmm, scores), dtype=np.int64, count=seq.T)


def infer_lstm(model: LstmModel, seq: FeatureSequence) -> np.ndarray:
    return lstm_predict(model, seq)


# --- run configuration ------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """Everything ``phaseflow run`` needs; see README for the JSON schema."""

    pipeline: str
    train_dir: Path
    test_dir: Path
    out_dir: Path
    seed: int = 0
    svm_model: Path | None = None
    hmm_model: Path | None = None
    lstm_model: Path | None = None
    phase_names: tuple[str, ...] | None = None
    svm: dict = field(default_factory=dict)
    hhmm: dict = field(default_factory=dict)
    lstm: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}, got {self.pipeline!r}")
        required = {"hmm": ("svm_model", "hmm_model"), "lstm": ("lstm_model",)}[self.pipeline]
        for name in required:
            if getattr(self, name) is None:
                raise ConfigError(f"paths.{name} is required for pipeline {self.pipeline!r}")

    def svm_config(self) -> SvmTrainConfig:
        s = self.svm
        return SvmTrainConfig(lam=float(s.get("lambda", 1e-2)), epochs=int(s.get("epochs", 20)),
                              seed=derive_seed(self.seed, "svm"), balanced=bool(s.get("balanced", False)))

    def hhmm_config(self) -> HhmmTrainConfig:
        h = self.hhmm
        gmm = GmmFitConfig(K=int(h.get("components", 5)), max_iters=int(h.get("gmm_iters", 100)),
                           rel_tol=float(h.get("gmm_tol", 1e-6)))
        return HhmmTrainConfig(seconds_per_state=float(h.get("d", 50.0)), max_states=int(h.get("smax", 20)),
                               gmm=gmm, smoothing=float(h.get("smoothing", 0.0)),
                               seed=derive_seed(self.seed, "hhmm"), em_refine=int(h.get("em_refine", 0)))

    def lstm_config(self) -> LstmTrainConfig:
        l = self.lstm
        return LstmTrainConfig(hidden=int(l.get("hidden", 1024)), lr=float(l.get("lr", 1e-2)),
                               iterations=int(l.get("iters", 30000)), t_max=int(l.get("tmax", 3993)),
                               clip=float(l.get("clip", 5.0)), seed=derive_seed(self.seed, "lstm"))

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        paths = dict(raw.pop("paths", {}))
        for key in ("train", "test", "out"):
            if key not in paths:
                raise ConfigError(f"paths.{key} is required")
        if "pipeline" not in raw:
            raise ConfigError("pipeline is required")

        def opt(key):
            return Path(paths[key]) if paths.get(key) else None

        cfg = cls(
            pipeline=raw.pop("pipeline"),
            train_dir=Path(paths.pop("train")), test_dir=Path(paths.pop("test")), out_dir=Path(paths.pop("out")),
            seed=int(raw.pop("seed", 0)),
            svm_model=opt("svm_model"), hmm_model=opt("hmm_model"), lstm_model=opt("lstm_model"),
            phase_names=tuple(raw.pop("phase_names")) if raw.get("phase_names") else None,
            svm=dict(raw.pop("svm", {})), hhmm=dict(raw.pop("hhmm", {})),
            lstm=dict(raw.pop("lstm", {})), evaluation=dict(raw.pop("eval", {})),
        )
        raw.pop("phase_names", None)
        for key in ("svm_model", "hmm_model", "lstm_model"):
            paths.pop(key, None)
        if raw or paths:
            raise ConfigError(f"unknown run config keys: {sorted(raw) + ['paths.' + k for k in paths]}")
        return cfg


class StageError(PhaseflowError):
    """Wraps a stage failure with the stage name; keeps the original exit code."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.exit_code = getattr(cause, "exit_code", 3 if isinstance(cause, OSError) else 1)


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except (PhaseflowError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def write_predictions(preds: dict[str, np.ndarray], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for vid, p in preds.items():
        dataio.save_predictions(p, directory / f"{vid}.pred.txt")


def run_pipeline(config: RunConfig) -> SummaryReport:
    """Train on ``train_dir``, predict ``test_dir`` causally, evaluate, write everything."""
    phases = resolve_phases(config.train_dir, config.phase_names)
    train = _stage("load-train", dataio.load_dataset, config.train_dir, phases)
    test = _stage("load-test", dataio.load_dataset, config.test_dir, phases)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if config.pipeline == "hmm":
        svm = _stage("train-svm", train_svm_stage, train, phases, config.svm_config())
        _stage("save-svm", save_svm, svm, config.svm_model)
        hmm = _stage("train-hmm", train_hmm_stage, train, svm, phases, config.hhmm_config())
        _stage("save-hmm", save_hhmm, hmm, config.hmm_model)
        preds = {f.video_id: _stage("infer", infer_hmm, svm, hmm, f) for f in test.features}
    else:
        model, trace = _stage("train-lstm", train_lstm_stage, train, phases, config.lstm_config())
        _stage("save-lstm", save_lstm, model, config.lstm_model)
        _stage("save-trace", save_loss_trace, trace, out / "loss_trace.csv")
        preds = {f.video_id: _stage("infer", infer_lstm, model, f) for f in test.features}

    _stage("write-predictions", write_predictions, preds, out / "pred")
    ev = config.evaluation
    report = _stage("evaluate", evaluate_dataset, test.labels, [preds[v] for v in test.video_ids], phases,
                    ev.get("absent_policy", "skip"), int(ev.get("ddof", 1)))
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.table(config.pipeline.upper()), encoding="utf-8")
    return report


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.rpartition(".")
        target = raw
        if section:
            target = raw.setdefault(section, {})
        target[name] = value
    return RunConfig.from_dict(raw)


def load_models(pipeline: str, svm_path=None, hmm_path=None, lstm_path=None):
    if pipeline == "hmm":
        if svm_path is None or hmm_path is None:
            raise ConfigError("--svm and --hmm are required for the hmm pipeline")
        return load_svm(svm_path), load_hhmm(hmm_path)
    if pipeline == "lstm":
        if lstm_path is None:
            raise ConfigError("--lstm is required for the lstm pipeline")
        return (load_lstm(lstm_path),)
    raise ConfigError(f"unknown pipeline {pipeline!r}")
