"""Feature files, dataset manifests and the planted-motif synthetic benchmark.

Binary feature files (``.taf``)::

    b"TAF1" | T: uint32 LE | D: uint32 LE | T*D float32 LE, row-major

Files with a ``.csv`` extension hold one frame per line instead. Manifests
are tab-separated ``path<TAB>label<TAB>split`` lines; relative paths resolve
against the manifest's directory and ``#`` lines are comments.
"""
from __future__ import annotations

import csv
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .filterbank import FeatureSequence

MAGIC = b"TAF1"
_HEADER = struct.Struct("<4sII")
SPLITS = ("train", "test")


class FeatureFileError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_features(data: np.ndarray) -> bytes:
    data = np.asarray(data)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise FeatureFileError(f"need a non-empty T x D matrix, got shape {data.shape}")
    body = np.ascontiguousarray(data, dtype="<f4")
    if not np.all(np.isfinite(body)):
        raise FeatureFileError("refusing to write non-finite features")
    return _HEADER.pack(MAGIC, data.shape[0], data.shape[1]) + body.tobytes()


def decode_features(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"{source}: truncated header")
    magic, T, D = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FeatureFileError(f"{source}: bad magic {magic!r}")
    if T < 1 or D < 1:
        raise FeatureFileError(f"{source}: empty sequence (T={T}, D={D})")
    expected = T * D * 4
    payload = raw[_HEADER.size:]
    if len(payload) != expected:
        raise FeatureFileError(
            f"{source}: payload has {len(payload)} bytes, header (T={T}, D={D}) needs {expected}")
    data = np.frombuffer(payload, dtype="<f4").reshape(T, D)
    if not np.all(np.isfinite(data)):
        raise FeatureFileError(f"{source}: non-finite values in payload")
    return data


def _load_csv(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows:
        raise FeatureFileError(f"{path}: empty CSV")
    if len({len(r) for r in rows}) != 1:
        raise FeatureFileError(f"{path}: ragged CSV rows")
    data = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FeatureFileError(f"{path}: non-finite values")
    return data


def load_features(path, label: int = 0, id: Optional[str] = None) -> FeatureSequence:
    """Read a ``.taf`` (or ``.csv``) file into a float64 FeatureSequence."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        data = _load_csv(path)
    else:
        data = decode_features(path.read_bytes(), str(path))
    return FeatureSequence(data.astype(np.float64), label=label, id=id if id is not None else path.stem)


def write_features(path, x) -> None:
    """Write a sequence atomically (temp file + rename); ``.csv`` writes text."""
    data = x.data if isinstance(x, FeatureSequence) else np.asarray(x)
    path = Path(path)
    if path.suffix.lower() == ".csv":
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise FeatureFileError(f"need a non-empty T x D matrix, got shape {data.shape}")
        lines = [",".join(repr(float(v)) for v in row) for row in data]
        _atomic_write(path, ("\n".join(lines) + "\n").encode())
    else:
        _atomic_write(path, encode_features(data))


# -- manifests ---------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: Path
    label: int
    split: str


@dataclass
class Manifest:
    entries: list
    class_count: int
    feature_dim: Optional[int] = None
    source: Optional[Path] = None

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]


@dataclass
class Dataset:
    train: list
    test: list
    classes: int
    dim: int


def read_manifest(path, validate: bool = True) -> Manifest:
    """Parse a manifest; with ``validate`` every file is opened to check D."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} does not exist")
    base = path.parent
    entries = []
    declared_classes = None
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            if key.strip() == "classes":
                declared_classes = int(value)
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ManifestError(f"{path}:{lineno}: expected path<TAB>label<TAB>split")
        rel, label_s, split = parts
        try:
            label = int(label_s)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: label {label_s!r} is not an integer") from None
        if label < 0:
            raise ManifestError(f"{path}:{lineno}: negative label")
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: split must be train or test, got {split!r}")
        entry_path = Path(rel) if os.path.isabs(rel) else base / rel
        entries.append(ManifestEntry(entry_path, label, split))
    if not any(e.split == "train" for e in entries):
        raise ManifestError(f"{path}: no train entries")
    max_label = max(e.label for e in entries)
    classes = declared_classes if declared_classes is not None else max_label + 1
    if max_label >= classes:
        raise ManifestError(f"{path}: label {max_label} outside [0, {classes})")
    manifest = Manifest(entries, classes, None, path)
    if validate:
        dims = set()
        for e in entries:
            if not e.path.exists():
                raise ManifestError(f"{path}: missing feature file {e.path}")
            dims.add(_peek_dim(e.path))
        if len(dims) != 1:
            raise ManifestError(f"{path}: inconsistent feature dims {sorted(dims)}")
        manifest.feature_dim = dims.pop()
    return manifest


def _peek_dim(path: Path) -> int:
    if path.suffix.lower() == ".csv":
        return _load_csv(path).shape[1]
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size or head[:4] != MAGIC:
        raise FeatureFileError(f"{path}: bad or truncated header")
    return _HEADER.unpack(head)[2]


def write_manifest(path, entries: Sequence, classes: Optional[int] = None) -> None:
    path = Path(path)
    lines = []
    if classes is not None:
        lines.append(f"# classes={classes}")
    for e in entries:
        p = Path(e.path)
        try:
            p = p.relative_to(path.parent)
        except ValueError:
            pass
        lines.append(f"{p.as_posix()}\t{e.label}\t{e.split}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())


def load_dataset(manifest) -> Dataset:
    if not isinstance(manifest, Manifest):
        manifest = read_manifest(manifest)
    train, test = [], []
    for e in manifest.entries:
        seq = load_features(e.path, label=e.label, id=e.path.stem)
        (train if e.split == "train" else test).append(seq)
    dims = {s.D for s in train + test}
    if len(dims) != 1:
        raise ManifestError(f"inconsistent feature dims {sorted(dims)}")
    return Dataset(train, test, manifest.class_count, dims.pop())


# -- synthetic benchmark -----------------------------------------------------

@dataclass
class SynthSpec:
    """Planted-motif benchmark.

    Each class c has a motif_len x D pattern planted at relative centre
    ``positions[c]`` (plus Gaussian jitter) in white noise. Motifs are zero
    mean over time and sum to zero across classes, so global temporal
    averages carry no class signal.

    ``motif_shape="smooth"`` makes each feature one sine period of random
    amplitude and phase across the motif; ``"iid"`` draws every motif cell
    independently.
    """

    classes: int = 5
    dim: int = 16
    motif_len: int = 6
    positions: Optional[Sequence[float]] = None
    jitter: float = 0.0
    T_range: tuple = (40, 80)
    noise_std: float = 1.0
    motif_scale: float = 2.0
    motif_shape: str = "smooth"
    train_count: int = 200
    test_count: int = 100
    seed: int = 42

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("synthetic benchmark needs at least 2 classes")
        if self.dim < 1 or self.motif_len < 1:
            raise ValueError("dim and motif_len must be >= 1")
        t_min, t_max = self.T_range
        if not 1 <= t_min <= t_max:
            raise ValueError(f"bad T_range {self.T_range!r}")
        if self.motif_len >= t_min:
            raise ValueError("motif_len must be shorter than the shortest sequence")
        if self.positions is None:
            self.positions = [(c + 0.5) / self.classes for c in range(self.classes)]
        self.positions = [float(p) for p in self.positions]
        if len(self.positions) != self.classes:
            raise ValueError("need one planted position per class")
        if not all(0.0 < p < 1.0 for p in self.positions):
            raise ValueError("planted positions must lie in (0, 1)")
        if self.motif_shape not in ("smooth", "iid"):
            raise ValueError(f"unknown motif_shape {self.motif_shape!r}")
        if self.jitter < 0 or self.noise_std < 0:
            raise ValueError("jitter and noise_std must be non-negative")
        if self.train_count < 1 or self.test_count < 0:
            raise ValueError("need at least one training sample")


@dataclass
class SynthSample:
    id: str
    split: str
    label: int
    T: int
    start: int
    centre_rel: float  # realized motif centre as a fraction of T


@dataclass
class SynthResult:
    manifest_path: Path
    motifs: np.ndarray  # (C, motif_len, D)
    samples: list = field(default_factory=list)


def make_motifs(spec: SynthSpec, rng) -> np.ndarray:
    shape = (spec.classes, spec.motif_len, spec.dim)
    if spec.motif_shape == "iid":
        motifs = rng.normal(0.0, spec.motif_scale, size=shape)
    else:
        amp = rng.normal(0.0, spec.motif_scale, size=(spec.classes, 1, spec.dim))
        phase = rng.uniform(0.0, 2.0 * math.pi, size=(spec.classes, 1, spec.dim))
        k = (np.arange(spec.motif_len) + 0.5)[None, :, None]
        motifs = amp * np.sin(2.0 * math.pi * k / spec.motif_len + phase)
    motifs -= motifs.mean(axis=1, keepdims=True)
    motifs -= motifs.mean(axis=0, keepdims=True)
    return motifs


def plant_start(rel: float, T: int, motif_len: int) -> int:
    """First frame of a motif centred at relative position ``rel``."""
    start = int(math.floor(rel * T - (motif_len - 1) / 2.0 + 0.5))
    return min(max(start, 0), T - motif_len)


def synth_generate(spec: SynthSpec, out_dir) -> SynthResult:
    """Generate the benchmark under ``out_dir``.

    Writes ``features/*.taf``, ``manifest.tsv`` and ``truth.tsv`` (realized
    per-sample motif placement).
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    motifs = make_motifs(spec, rng)
    t_min, t_max = spec.T_range
    entries = []
    samples = []
    for split, count in (("train", spec.train_count), ("test", spec.test_count)):
        for n in range(count):
            label = n % spec.classes
            T = int(rng.integers(t_min, t_max + 1))
            rel = spec.positions[label]
            if spec.jitter > 0:
                rel += rng.normal(0.0, spec.jitter)
            rel = min(max(rel, 0.0), 1.0)
            data = rng.normal(0.0, spec.noise_std, size=(T, spec.dim)) if spec.noise_std > 0 \
                else np.zeros((T, spec.dim))
            start = plant_start(rel, T, spec.motif_len)
            data[start:start + spec.motif_len] += motifs[label]
            sid = f"{split}_{n:05d}"
            path = feat_dir / f"{sid}.taf"
            write_features(path, data)
            entries.append(ManifestEntry(path, label, split))
            centre = (start + (spec.motif_len - 1) / 2.0) / T
            samples.append(SynthSample(sid, split, label, T, start, centre))
    manifest_path = out_dir / "manifest.tsv"
    write_manifest(manifest_path, entries, classes=spec.classes)
    truth = ["id\tsplit\tlabel\tT\tstart\tcentre_rel"]
    truth += [f"{s.id}\t{s.split}\t{s.label}\t{s.T}\t{s.start}\t{s.centre_rel!r}" for s in samples]
    _atomic_write(out_dir / "truth.tsv", ("\n".join(truth) + "\n").encode())
    return SynthResult(manifest_path, motifs, samples)


def read_truth(path) -> dict:
    """Map sample id -> SynthSample from a ``truth.tsv``."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh, delimiter="\t"):
            out[row["id"]] = SynthSample(row["id"], row["split"], int(row["label"]), int(row["T"]),
                                         int(row["start"]), float(row["centre_rel"]))
    return out
