"""Readers and writers for sequences, datasets, predictions and model files.

Feature and confidence matrices use one of two encodings, chosen by suffix:

* ``.csv`` -- first line ``D=<int>``, then one comma-separated row per frame.
* ``.bin`` -- magic ``PHFX``, little-endian u32 ``T``, u32 ``D``, then ``T*D``
  little-endian float64 values in row-major order.

Label files hold one ``<frame_index>\\t<phase index or name>`` line per frame.
Prediction files hold one phase index per line.

Model files are a section container::

    magic  b"PHFM"
    u16    container version (1)
    u16    len(kind), kind (utf-8)    e.g. "svm", "hhmm", "lstm"
    u32    number of sections
    per section:
        u16 len(name), name (utf-8)
        u8  type: 0 float64, 1 int64, 2 utf-8 JSON
        u8  ndim, then ndim x u64 shape    (ndim=1, shape=(nbytes,) for JSON)
        u64 payload length in bytes, payload (little-endian)
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DataError
from .workflow import LabelSequence, PhaseSet

FPS = 1
FEATURE_MAGIC = b"PHFX"
MODEL_MAGIC = b"PHFM"
MODEL_VERSION = 1


def _checked_matrix(data, what: str, video_id: str) -> np.ndarray:
    data = np.array(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise DataError(f"{what} {video_id!r} must be a non-empty T x D matrix, got shape {data.shape}")
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"non-finite value in {what} {video_id!r} at row {r}, column {c}")
    data.setflags(write=False)
    return data


@dataclass(frozen=True, eq=False)
class FeatureSequence:
    data: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "data", _checked_matrix(self.data, "feature sequence", self.video_id))

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]

    def __len__(self):
        return self.T

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self.video_id == other.video_id and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ConfidenceSequence:
    scores: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scores", _checked_matrix(self.scores, "confidence sequence", self.video_id))

    @property
    def T(self) -> int:
        return self.scores.shape[0]

    @property
    def num_phases(self) -> int:
        return self.scores.shape[1]

    def __len__(self):
        return self.T

    def __eq__(self, other):
        if not isinstance(other, ConfidenceSequence):
            return NotImplemented
        return self.video_id == other.video_id and np.array_equal(self.scores, other.scores)


@dataclass(frozen=True)
class Dataset:
    items: tuple[tuple[FeatureSequence, LabelSequence], ...] = field(default=())

    def __post_init__(self):
        items = tuple((f, l) for f, l in self.items)
        object.__setattr__(self, "items", items)
        seen = set()
        dims = {f.D for f, _ in items}
        if len(dims) > 1:
            raise DataError(f"feature dimension differs across videos: {sorted(dims)}")
        for feats, labels in items:
            if feats.video_id != labels.video_id:
                raise DataError(f"video id mismatch: {feats.video_id!r} vs {labels.video_id!r}")
            if feats.T != len(labels):
                raise DataError(f"video {feats.video_id!r}: {feats.T} feature rows but {len(labels)} labels")
            if feats.video_id in seen:
                raise DataError(f"duplicate video id {feats.video_id!r}")
            seen.add(feats.video_id)

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def features(self) -> list[FeatureSequence]:
        return [f for f, _ in self.items]

    @property
    def labels(self) -> list[LabelSequence]:
        return [l for _, l in self.items]

    @property
    def video_ids(self) -> list[str]:
        return [f.video_id for f, _ in self.items]

    @property
    def feature_dim(self) -> int:
        if not self.items:
            raise DataError("empty dataset")
        return self.items[0][0].D

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.items[i] for i in indices))


# --- matrices ---------------------------------------------------------------

def _video_id_from_path(path: Path) -> str:
    name = path.name
    for suffix in (".features.csv", ".features.bin", ".conf.csv", ".conf.bin",
                   ".labels.txt", ".pred.txt"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name.split(".")[0]


def _read_matrix(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    if path.suffix == ".bin":
        raw = path.read_bytes()
        if len(raw) < 12 or raw[:4] != FEATURE_MAGIC:
            raise DataError(f"{path}: bad magic, not a PHFX feature file")
        T, D = struct.unpack_from("<II", raw, 4)
        if T == 0:
            raise DataError(f"{path}: empty sequence")
        if len(raw) != 12 + 8 * T * D:
            raise DataError(f"{path}: expected {12 + 8 * T * D} bytes for T={T}, D={D}, found {len(raw)}")
        return np.frombuffer(raw, dtype="<f8", offset=12).reshape(T, D).astype(np.float64)

    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("D="):
            raise DataError(f"{path}: first line must be 'D=<int>', got {header!r}")
        try:
            D = int(header[2:])
        except ValueError:
            raise DataError(f"{path}: bad dimension header {header!r}") from None
        if D < 1:
            raise DataError(f"{path}: dimension must be >= 1")
        rows = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != D:
                raise DataError(f"{path}: ragged row {len(rows)}: {len(fields)} values, header says D={D}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise DataError(f"{path}: unparsable value in row {len(rows)}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: empty sequence")
    return np.array(rows, dtype=np.float64)


def _write_matrix(data: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix == ".bin":
        T, D = data.shape
        payload = FEATURE_MAGIC + struct.pack("<II", T, D) + np.ascontiguousarray(data, dtype="<f8").tobytes()
        path.write_bytes(payload)
        return
    lines = [f"D={data.shape[1]}"]
    lines.extend(",".join(repr(v) for v in row) for row in data.tolist())
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_feature_sequence(path, video_id: str | None = None) -> FeatureSequence:
    path = Path(path)
    data = _read_matrix(path)
    return FeatureSequence(data, video_id if video_id is not None else _video_id_from_path(path))


def save_feature_sequence(seq: FeatureSequence, path) -> None:
    _write_matrix(seq.data, path)


def load_confidence_sequence(path, video_id: str | None = None) -> ConfidenceSequence:
    path = Path(path)
    data = _read_matrix(path)
    return ConfidenceSequence(data, video_id if video_id is not None else _video_id_from_path(path))


def save_confidence_sequence(seq: ConfidenceSequence, path) -> None:
    _write_matrix(seq.scores, path)


# --- labels and predictions -------------------------------------------------

def load_label_sequence(path, phases: PhaseSet, video_id: str | None = None) -> LabelSequence:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<frame>\\t<phase>'")
            try:
                frame = int(parts[0])
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad frame index {parts[0]!r}") from None
            if frame != len(labels):
                raise DataError(f"{path}:{lineno}: frame index {frame}, expected {len(labels)}")
            try:
                labels.append(phases.index(parts[1]))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not labels:
        raise DataError(f"{path}: empty sequence")
    return LabelSequence(np.array(labels, dtype=np.int64),
                         video_id if video_id is not None else _video_id_from_path(path))


def save_label_sequence(seq: LabelSequence, path, phases: PhaseSet | None = None,
                        use_names: bool = False) -> None:
    if phases is not None:
        seq.check(phases)
    if use_names:
        if phases is None:
            raise ValueError("use_names requires a PhaseSet")
        tokens = [phases.names[l] for l in seq.labels]
    else:
        tokens = [str(l) for l in seq.labels.tolist()]
    Path(path).write_text("".join(f"{t}\t{tok}\n" for t, tok in enumerate(tokens)), encoding="utf-8")


def save_predictions(predictions: Iterable[int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(f"{int(p)}\n")


def load_predictions(path, video_id: str | None = None, phases: PhaseSet | None = None) -> LabelSequence:
    """Read a prediction file; label-format files (with tabs) are also accepted."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if "\t" in text:
        return load_label_sequence(path, phases or _index_phases(text), video_id)
    try:
        labels = [int(line) for line in text.split()]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not labels:
        raise DataError(f"{path}: empty sequence")
    seq = LabelSequence(np.array(labels, dtype=np.int64),
                        video_id if video_id is not None else _video_id_from_path(path))
    if phases is not None:
        seq.check(phases)
    return seq


def _index_phases(text: str) -> PhaseSet:
    top = max(int(line.split("\t")[1]) for line in text.splitlines() if line.strip())
    return PhaseSet.default(max(top + 1, 2))


# --- directories --------------------------------------------------------------

def _feature_files(directory: Path) -> dict[str, Path]:
    found = {}
    for pattern in ("*.features.csv", "*.features.bin"):
        for p in directory.glob(pattern):
            vid = _video_id_from_path(p)
            if vid in found:
                raise DataError(f"video {vid!r} has both CSV and binary features in {directory}")
            found[vid] = p
    return found


def load_dataset(directory, phases: PhaseSet) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    feats = _feature_files(directory)
    if not feats:
        raise DataError(f"no *.features.(csv|bin) files in {directory}")
    items = []
    for vid in sorted(feats):
        label_path = directory / f"{vid}.labels.txt"
        if not label_path.exists():
            raise DataError(f"missing labels for video {vid!r}: {label_path}")
        labels = load_label_sequence(label_path, phases, vid)
        labels.check(phases)
        items.append((load_feature_sequence(feats[vid], vid), labels))
    return Dataset(tuple(items))


def load_feature_dir(directory) -> list[FeatureSequence]:
    directory = Path(directory)
    feats = _feature_files(directory)
    if not feats:
        raise DataError(f"no *.features.(csv|bin) files in {directory}")
    return [load_feature_sequence(feats[vid], vid) for vid in sorted(feats)]


def load_label_dir(directory, phases: PhaseSet, suffix: str = ".labels.txt") -> dict[str, LabelSequence]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    out = {}
    for p in sorted(directory.glob(f"*{suffix}")):
        vid = _video_id_from_path(p)
        out[vid] = load_predictions(p, vid, phases) if suffix == ".pred.txt" else load_label_sequence(p, phases, vid)
    return out


def save_dataset(dataset: Dataset, directory, phases: PhaseSet | None = None, fmt: str = "csv") -> None:
    if fmt not in ("csv", "bin"):
        raise ValueError(f"unknown feature format {fmt!r}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for feats, labels in dataset:
        save_feature_sequence(feats, directory / f"{feats.video_id}.features.{fmt}")
        save_label_sequence(labels, directory / f"{labels.video_id}.labels.txt", phases)


# --- model container ------------------------------------------------------------

_FLOAT, _INT, _JSON = 0, 1, 2


def write_model(path, kind: str, sections: dict) -> None:
    """Write named arrays / JSON-able dicts into a model container file.

    numpy float arrays are stored as float64, integer arrays as int64, and
    everything else is JSON-encoded with sorted keys.
    """
    out = bytearray(MODEL_MAGIC)
    kind_b = kind.encode()
    out += struct.pack("<HH", MODEL_VERSION, len(kind_b)) + kind_b
    out += struct.pack("<I", len(sections))
    for name, value in sections.items():
        name_b = name.encode()
        out += struct.pack("<H", len(name_b)) + name_b
        if isinstance(value, np.ndarray) and value.dtype.kind in "fiub":
            if value.dtype.kind == "f":
                code, payload = _FLOAT, np.require(value, dtype="<f8", requirements="C")
            else:
                code, payload = _INT, np.require(value, dtype="<i8", requirements="C")
            shape = payload.shape
            data = payload.tobytes()
        else:
            code = _JSON
            data = json.dumps(value, sort_keys=True).encode()
            shape = (len(data),)
        out += struct.pack("<BB", code, len(shape))
        out += struct.pack(f"<{len(shape)}Q", *shape)
        out += struct.pack("<Q", len(data)) + data
    tmp = Path(f"{path}.tmp{os.getpid()}")
    tmp.write_bytes(bytes(out))
    os.replace(tmp, path)


def read_model(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a phaseflow model file")
    try:
        version, klen = struct.unpack_from("<HH", raw, 4)
        if version != MODEL_VERSION:
            raise DataError(f"{path}: unsupported model version {version}")
        pos = 8
        file_kind = raw[pos:pos + klen].decode()
        pos += klen
        if kind is not None and file_kind != kind:
            raise DataError(f"{path}: expected a {kind!r} model, found {file_kind!r}")
        (count,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
            pos += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", raw, pos)
            pos += 8
            data = raw[pos:pos + nbytes]
            if len(data) != nbytes:
                raise DataError(f"{path}: truncated section {name!r}")
            pos += nbytes
            if code == _FLOAT:
                sections[name] = np.frombuffer(data, dtype="<f8").reshape(shape).astype(np.float64)
            elif code == _INT:
                sections[name] = np.frombuffer(data, dtype="<i8").reshape(shape).astype(np.int64)
            elif code == _JSON:
                sections[name] = json.loads(data.decode())
            else:
                raise DataError(f"{path}: unknown section type {code}")
    except struct.error as exc:
        raise DataError(f"{path}: truncated model file ({exc})") from None
    sections["__kind__"] = file_kind
    return sections
