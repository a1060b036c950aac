"""Connectome dataset handling.

Covers the full ingest path: correlation matrices from time series, a binary
matrix file format with CSV fallback, a JSON manifest, a planted-subgraph
synthetic generator, stratified k-fold splitting, and mixup augmentation.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    InvalidSpec,
    InvariantViolation,
    NonFiniteInput,
    ParseError,
    ShapeMismatch,
    TooFewSubjects,
    ZeroVarianceNode,
)

SYMMETRY_TOL = 1e-6  # asymmetry beyond this on load is an error, below is repaired
MATRIX_MAGIC = b"CMTX"
MATRIX_DTYPE_F64_LE = 1


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeries:
    """Per-subject regional activity: ``values[node, timepoint]``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2:
            raise ShapeMismatch(f"time series must be 2-d, got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] < 2:
            raise ShapeMismatch(
                f"need >=1 node and >=2 timepoints, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("time series contains NaN or infinity")

    @property
    def node_count(self) -> int:
        return self.values.shape[0]

    @property
    def timepoint_count(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ConnectivityMatrix:
    """Symmetric correlation matrix, unit diagonal, entries in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeMismatch(f"connectivity matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("connectivity matrix contains NaN or infinity")
        asym = np.max(np.abs(v - v.T)) if v.size else 0.0
        if asym > 1e-9:
            raise InvariantViolation(f"matrix asymmetric by {asym:.3e}")
        if not np.all(np.diag(v) == 1.0):
            raise InvariantViolation("diagonal entries must be exactly 1")
        if np.min(v) < -1.0 or np.max(v) > 1.0:
            raise InvariantViolation("entries outside [-1, 1]")

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    label: int  # 0 = control, 1 = patient
    matrix: ConnectivityMatrix

    def __post_init__(self):
        if self.label not in (0, 1):
            raise InvariantViolation("label must be 0 or 1", subject_id=self.id)


@dataclass(frozen=True)
class DatasetManifest:
    subjects: tuple[SubjectRecord, ...]
    atlas_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        if self.atlas_labels is not None:
            object.__setattr__(self, "atlas_labels", tuple(self.atlas_labels))
        if not self.subjects:
            raise InvariantViolation("dataset has no subjects")
        n = self.subjects[0].matrix.n
        for rec in self.subjects:
            if rec.matrix.n != n:
                raise InvariantViolation(
                    f"node count {rec.matrix.n} != dataset node count {n}",
                    subject_id=rec.id,
                )
        labels = {rec.label for rec in self.subjects}
        if labels != {0, 1}:
            raise InvariantViolation("dataset needs at least one subject per class")
        if self.atlas_labels is not None and len(self.atlas_labels) != n:
            raise InvariantViolation(
                f"{len(self.atlas_labels)} atlas labels for {n} nodes"
            )

    @property
    def n(self) -> int:
        return self.subjects[0].matrix.n

    def by_id(self, subject_id: str) -> SubjectRecord:
        for rec in self.subjects:
            if rec.id == subject_id:
                return rec
        raise KeyError(subject_id)

    def subset(self, ids) -> list[SubjectRecord]:
        wanted = set(ids)
        return [rec for rec in self.subjects if rec.id in wanted]


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "val_ids", tuple(self.val_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        groups = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        total = sum(len(g) for g in groups)
        if len(groups[0] | groups[1] | groups[2]) != total:
            raise InvariantViolation(f"fold {self.fold_index}: id lists overlap")


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-subgraph generator parameters.

    Patients get ``signal_strength`` added to every edge inside each planted
    node set on top of a shared Gaussian noise background; controls are noise
    only. Atlas labels partition nodes into ``atlas_blocks`` contiguous
    blocks, and at least one planted set must span two or more blocks.
    """

    n: int
    subject_count: int
    planted_subgraphs: tuple[tuple[int, ...], ...]
    signal_strength: float
    noise_level: float
    seed: int
    atlas_blocks: int = 4

    def __post_init__(self):
        object.__setattr__(
            self,
            "planted_subgraphs",
            tuple(tuple(sorted(int(i) for i in s)) for s in self.planted_subgraphs),
        )
        if self.n < 2 or self.subject_count < 2:
            raise InvalidSpec("need n >= 2 and subject_count >= 2")
        if self.signal_strength < 0 or self.noise_level <= 0:
            raise InvalidSpec("signal_strength must be >= 0, noise_level > 0")
        if not self.planted_subgraphs:
            raise InvalidSpec("need at least one planted subgraph")
        if self.atlas_blocks < 2 or self.atlas_blocks > self.n:
            raise InvalidSpec("atlas_blocks must be in [2, n]")
        for s in self.planted_subgraphs:
            if len(s) < 2:
                raise InvalidSpec("planted sets need at least two nodes")
            if len(set(s)) != len(s):
                raise InvalidSpec("planted set has duplicate nodes")
            if min(s) < 0 or max(s) >= self.n:
                raise InvalidSpec("planted node index out of range")
        blocks = _atlas_block_of(self.n, self.atlas_blocks)
        if not any(len({blocks[i] for i in s}) >= 2 for s in self.planted_subgraphs):
            raise InvalidSpec("at least one planted set must span two atlas blocks")


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------


def compute_pcc(ts: TimeSeries) -> ConnectivityMatrix:
    """Pearson correlation between every pair of node time series."""
    v = ts.values
    centered = v - v.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.sum(centered * centered, axis=1))
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ZeroVarianceNode(int(zero[0]))
    unit = centered / norms[:, None]
    corr = unit @ unit.T
    corr = (corr + corr.T) / 2.0  # exact symmetry
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    return ConnectivityMatrix(corr)


# ---------------------------------------------------------------------------
# matrix files and manifests
# ---------------------------------------------------------------------------


def save_matrix(path: str | Path, values: np.ndarray) -> None:
    """Little-endian binary container: magic, n, dtype code, row-major payload."""
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, values, delimiter=",", fmt="%.17g")
        return
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<II", n, MATRIX_DTYPE_F64_LE))
        f.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"matrix file not found: {path}")
    if path.suffix == ".csv":
        try:
            values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        return values
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MATRIX_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}")
        header = f.read(8)
        if len(header) != 8:
            raise ParseError(f"{path}: truncated header")
        n, dtype_code = struct.unpack("<II", header)
        if dtype_code != MATRIX_DTYPE_F64_LE:
            raise ParseError(f"{path}: unsupported dtype code {dtype_code}")
        payload = f.read(8 * n * n)
        if len(payload) != 8 * n * n:
            raise ParseError(f"{path}: truncated payload")
        return np.frombuffer(payload, dtype="<f8").reshape(n, n).astype(np.float64)


def _validated_matrix(values: np.ndarray, n: int, subject_id: str) -> ConnectivityMatrix:
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ShapeMismatch(f"subject {subject_id!r}: matrix shape {values.shape}")
    if values.shape[0] != n:
        raise ShapeMismatch(
            f"subject {subject_id!r}: matrix is {values.shape[0]}x{values.shape[0]}, "
            f"dataset node count is {n}"
        )
    if not np.all(np.isfinite(values)):
        raise InvariantViolation("non-finite entries", subject_id=subject_id)
    asym = np.max(np.abs(values - values.T))
    if asym > SYMMETRY_TOL:
        raise InvariantViolation(f"asymmetry {asym:.3e} beyond tolerance", subject_id=subject_id)
    values = (values + values.T) / 2.0
    if np.min(values) < -1.0 or np.max(values) > 1.0:
        raise InvariantViolation("entries outside [-1, 1]", subject_id=subject_id)
    if np.any(values.diagonal() != 1.0):
        if np.max(np.abs(values.diagonal() - 1.0)) > SYMMETRY_TOL:
            raise InvariantViolation("diagonal not 1", subject_id=subject_id)
        values = values.copy()
        np.fill_diagonal(values, 1.0)
    return ConnectivityMatrix(values)


def load_dataset(manifest_path: str | Path) -> DatasetManifest:
    """Read a JSON manifest and every matrix it references, validating all."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ParseError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: {exc}") from exc
    if not isinstance(doc, dict) or "subjects" not in doc:
        raise ParseError(f"{manifest_path}: expected an object with a 'subjects' list")
    n = doc.get("n")
    if not isinstance(n, int) or n < 1:
        raise ParseError(f"{manifest_path}: missing or invalid node count 'n'")
    atlas = doc.get("atlas_labels")
    base = manifest_path.parent
    records = []
    for entry in doc["subjects"]:
        try:
            sid, label, rel = entry["id"], entry["label"], entry["path"]
        except (TypeError, KeyError) as exc:
            raise ParseError(f"{manifest_path}: malformed subject entry {entry!r}") from exc
        values = load_matrix(base / rel)
        records.append(SubjectRecord(sid, int(label), _validated_matrix(values, n, sid)))
    return DatasetManifest(
        subjects=tuple(records),
        atlas_labels=tuple(atlas) if atlas is not None else None,
    )


def save_dataset(ds: DatasetManifest, out_dir: str | Path, file_format: str = "bin") -> Path:
    """Write matrices plus manifest.json under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if file_format == "csv" else ".mat"
    entries = []
    for rec in ds.subjects:
        rel = f"{rec.id}{suffix}"
        save_matrix(out_dir / rel, rec.matrix.values)
        entries.append({"id": rec.id, "label": rec.label, "path": rel})
    doc = {
        "n": ds.n,
        "atlas_labels": list(ds.atlas_labels) if ds.atlas_labels else None,
        "subjects": entries,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# synthetic planted-subgraph datasets
# ---------------------------------------------------------------------------


def _atlas_block_of(n: int, blocks: int) -> np.ndarray:
    """Contiguous block index per node, sizes as even as possible."""
    return np.minimum(np.arange(n) * blocks // n, blocks - 1)


def synthetic_atlas_labels(spec: SyntheticSpec) -> tuple[str, ...]:
    blocks = _atlas_block_of(spec.n, spec.atlas_blocks)
    return tuple(f"block{int(b)}" for b in blocks)


def generate_synthetic(spec: SyntheticSpec) -> DatasetManifest:
    """Deterministic planted-signal connectomes; label 1 = elevated planted edges."""
    records = []
    for s in range(spec.subject_count):
        # per-subject derived stream keeps generation order-independent
        rng = np.random.default_rng([spec.seed, s])
        label = s % 2
        noise = rng.normal(0.0, spec.noise_level, size=(spec.n, spec.n))
        m = (noise + noise.T) / 2.0
        if label == 1:
            for planted in spec.planted_subgraphs:
                idx = np.array(planted)
                block = np.ix_(idx, idx)
                m[block] += spec.signal_strength
        np.clip(m, -0.999, 0.999, out=m)
        np.fill_diagonal(m, 1.0)
        records.append(SubjectRecord(f"subj_{s:04d}", label, ConnectivityMatrix(m)))
    return DatasetManifest(subjects=tuple(records), atlas_labels=synthetic_atlas_labels(spec))


def planted_edge_means(ds: DatasetManifest, planted: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Mean within-planted-set edge value per subject, split (patients, controls)."""
    idx = np.array(sorted(planted))
    sub_i, sub_j = np.triu_indices(len(idx), k=1)
    patients, controls = [], []
    for rec in ds.subjects:
        block = rec.matrix.values[np.ix_(idx, idx)]
        mean_edge = block[sub_i, sub_j].mean()
        (patients if rec.label == 1 else controls).append(mean_edge)
    return np.array(patients), np.array(controls)


# ---------------------------------------------------------------------------
# splits and augmentation
# ---------------------------------------------------------------------------


def stratified_kfold(
    ds: DatasetManifest, k: int = 5, val_fraction: float = 0.25, seed: int = 0
) -> list[FoldSplit]:
    """Stratified k-fold with a stratified validation carve-out per fold.

    Every subject lands in exactly one test fold; within each fold,
    ``val_fraction`` of the non-test pool (per class, rounded) becomes the
    validation set.
    """
    by_class: dict[int, list[str]] = {0: [], 1: []}
    for rec in ds.subjects:
        by_class[rec.label].append(rec.id)
    for label, ids in by_class.items():
        if len(ids) < k:
            raise TooFewSubjects(
                f"class {label} has {len(ids)} subjects, need >= {k} for {k}-fold"
            )
    rng = np.random.default_rng([seed, 101])
    test_chunks: dict[int, list[list[str]]] = {}
    for label, ids in by_class.items():
        ids = sorted(ids)
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        # sizes differ by at most one across folds
        base, extra = divmod(len(shuffled), k)
        chunks, pos = [], 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            chunks.append(shuffled[pos : pos + size])
            pos += size
        test_chunks[label] = chunks
    folds = []
    for f in range(k):
        test = sorted(test_chunks[0][f] + test_chunks[1][f])
        val, train = [], []
        for label in (0, 1):
            pool = [
                sid
                for g in range(k)
                if g != f
                for sid in test_chunks[label][g]
            ]
            pool_rng = np.random.default_rng([seed, 211, f, label])
            perm = pool_rng.permutation(len(pool))
            shuffled = [pool[i] for i in perm]
            n_val = int(round(val_fraction * len(shuffled)))
            val.extend(shuffled[:n_val])
            train.extend(shuffled[n_val:])
        folds.append(
            FoldSplit(
                fold_index=f,
                train_ids=tuple(sorted(train)),
                val_ids=tuple(sorted(val)),
                test_ids=tuple(test),
            )
        )
    return folds


def stratified_holdout(
    ds: DatasetManifest, val_fraction: float = 0.25, seed: int = 0
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Single stratified train/validation split over the whole dataset."""
    train, val = [], []
    for label in (0, 1):
        ids = sorted(rec.id for rec in ds.subjects if rec.label == label)
        rng = np.random.default_rng([seed, 307, label])
        perm = rng.permutation(len(ids))
        shuffled = [ids[i] for i in perm]
        n_val = int(round(val_fraction * len(shuffled)))
        val.extend(shuffled[:n_val])
        train.extend(shuffled[n_val:])
    if not val or not train:
        raise TooFewSubjects("holdout split left an empty train or validation set")
    return tuple(sorted(train)), tuple(sorted(val))


def mixup(
    x_i: np.ndarray,
    x_j: np.ndarray,
    y_i: np.ndarray,
    y_j: np.ndarray,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of two feature blocks and their one-hot labels."""
    x_i, x_j = np.asarray(x_i, float), np.asarray(x_j, float)
    y_i, y_j = np.asarray(y_i, float), np.asarray(y_j, float)
    if x_i.shape != x_j.shape or y_i.shape != y_j.shape:
        raise ShapeMismatch(
            f"mixup shapes differ: {x_i.shape} vs {x_j.shape}, {y_i.shape} vs {y_j.shape}"
        )
    if not 0.0 <= lam <= 1.0:
        raise InvariantViolation(f"lambda {lam} outside [0, 1]")
    return lam * x_i + (1.0 - lam) * x_j, lam * y_i + (1.0 - lam) * y_j
