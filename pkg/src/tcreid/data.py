"""Sample metadata, feature storage and on-disk dataset formats.

Metadata lives in a CSV with header ``sample_id,person_id,camera_id,frame_id``.
Features are a little-endian binary matrix: two uint32 values ``(rows, cols)``
followed by ``rows * cols`` float32 values in row-major order.  The same
matrix format is reused for embedder, memory bank and similarity dumps.
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNKNOWN = -1
META_HEADER = ("sample_id", "person_id", "camera_id", "frame_id")
_MATRIX_HEADER = struct.Struct("<II")


class ValidationError(ValueError):
    """Raised when a dataset file or object violates the data model."""


@dataclass(frozen=True)
class SampleMeta:
    sample_id: int
    person_id: int
    camera_id: int
    frame_id: int


@dataclass
class FeatureStore:
    """Raw input features plus the (optional) embedded, unit-norm view."""

    raw: np.ndarray
    embedded: np.ndarray | None = None

    def __post_init__(self):
        self.raw = np.asarray(self.raw)
        if self.raw.ndim != 2:
            raise ValidationError(f"raw features must be 2-D, got shape {self.raw.shape}")
        _check_finite(self.raw, "raw features")
        if self.embedded is not None:
            self.embedded = np.asarray(self.embedded)
            if self.embedded.ndim != 2 or len(self.embedded) != len(self.raw):
                raise ValidationError("embedded view must have one row per raw row")
            _check_finite(self.embedded, "embedded features")
            norms = np.linalg.norm(self.embedded, axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
            if bad.size:
                raise ValidationError(f"embedded row {bad[0]} has norm {norms[bad[0]]:.8f}, expected 1")

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def dim(self) -> int:
        return self.raw.shape[1]


@dataclass
class Dataset:
    metas: list[SampleMeta]
    features: FeatureStore
    num_cameras: int
    domain_tag: str = "target"

    # cached column views, filled in __post_init__
    person_ids: np.ndarray = field(init=False, repr=False)
    camera_ids: np.ndarray = field(init=False, repr=False)
    frame_ids: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.domain_tag not in ("source", "target"):
            raise ValidationError(f"domain_tag must be 'source' or 'target', got {self.domain_tag!r}")
        if self.num_cameras < 1:
            raise ValidationError("num_cameras must be >= 1")
        if len(self.metas) != self.features.n:
            raise ValidationError(
                f"dimension mismatch: {len(self.metas)} metadata rows but {self.features.n} feature rows"
            )
        seen = set()
        for row, m in enumerate(self.metas):
            if m.sample_id in seen:
                raise ValidationError(f"row {row}: duplicate sample_id {m.sample_id}")
            seen.add(m.sample_id)
            if not 0 <= m.sample_id < len(self.metas):
                raise ValidationError(f"row {row}: sample_id {m.sample_id} outside [0, {len(self.metas)})")
            if not 0 <= m.camera_id < self.num_cameras:
                raise ValidationError(
                    f"row {row}: camera_id {m.camera_id} outside [0, {self.num_cameras})"
                )
            if m.frame_id < 0:
                raise ValidationError(f"row {row}: negative frame_id {m.frame_id}")
            if m.person_id < UNKNOWN:
                raise ValidationError(f"row {row}: person_id {m.person_id} is neither known nor UNKNOWN")
        self.person_ids = np.array([m.person_id for m in self.metas], dtype=np.int64)
        self.camera_ids = np.array([m.camera_id for m in self.metas], dtype=np.int64)
        self.frame_ids = np.array([m.frame_id for m in self.metas], dtype=np.int64)
        for arr in (self.person_ids, self.camera_ids, self.frame_ids):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return len(self.metas)

    @property
    def has_unknown_ids(self) -> bool:
        return bool(np.any(self.person_ids == UNKNOWN))

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Return a new dataset with the given rows, renumbering sample ids."""
        idx = np.asarray(indices, dtype=np.int64)
        metas = [
            SampleMeta(new, self.metas[old].person_id, self.metas[old].camera_id, self.metas[old].frame_id)
            for new, old in enumerate(idx)
        ]
        emb = None if self.features.embedded is None else self.features.embedded[idx]
        return Dataset(metas, FeatureStore(self.features.raw[idx], emb), self.num_cameras, self.domain_tag)


@dataclass
class MultiLabels:
    """Per-sample sets of positive indices (the nonzero entries of m_i)."""

    positives: list[np.ndarray]

    def __post_init__(self):
        self.positives = [np.asarray(p, dtype=np.int64) for p in self.positives]

    def __len__(self) -> int:
        return len(self.positives)

    def dense(self) -> np.ndarray:
        n = len(self.positives)
        m = np.zeros((n, n), dtype=np.int8)
        for i, p in enumerate(self.positives):
            m[i, p] = 1
        return m

    def validate(self) -> None:
        sets = [set(p.tolist()) for p in self.positives]
        for i, s in enumerate(sets):
            if i not in s:
                raise ValidationError(f"sample {i} is not in its own positive set")
            for j in s:
                if i not in sets[j]:
                    raise ValidationError(f"asymmetric labels: {j} in m[{i}] but {i} not in m[{j}]")


def _check_finite(a: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(a)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise ValidationError(f"{what}: non-finite value at row {r}, column {c}")


def write_matrix(path: str | Path, mat: np.ndarray) -> None:
    mat = np.ascontiguousarray(mat, dtype="<f4")
    if mat.ndim != 2:
        raise ValueError("only 2-D matrices can be written")
    with open(path, "wb") as fh:
        fh.write(_MATRIX_HEADER.pack(*mat.shape))
        fh.write(mat.tobytes())


def read_matrix(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _MATRIX_HEADER.size:
        raise ValidationError(f"{path}: truncated header ({len(blob)} bytes)")
    rows, cols = _MATRIX_HEADER.unpack_from(blob)
    expected = _MATRIX_HEADER.size + 4 * rows * cols
    if len(blob) != expected:
        raise ValidationError(
            f"{path}: header says {rows}x{cols} ({expected} bytes) but file has {len(blob)} bytes"
        )
    mat = np.frombuffer(blob, dtype="<f4", offset=_MATRIX_HEADER.size).reshape(rows, cols)
    bad = ~np.isfinite(mat)
    if bad.any():
        flat = int(np.flatnonzero(bad)[0])
        raise ValidationError(
            f"{path}: non-finite value at row {flat // cols}, column {flat % cols} "
            f"(byte offset {_MATRIX_HEADER.size + 4 * flat})"
        )
    return mat.copy()


def write_metadata(path: str | Path, metas: Iterable[SampleMeta], num_cameras: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# num_cameras={num_cameras}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(META_HEADER)
        for m in metas:
            w.writerow((m.sample_id, m.person_id, m.camera_id, m.frame_id))


def read_metadata(path: str | Path) -> tuple[list[SampleMeta], int | None]:
    """Parse a metadata CSV.  Returns the rows and the camera count from the
    optional ``# num_cameras=C`` header comment."""
    num_cameras = None
    metas = []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for body_start, line in enumerate(lines):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key.strip() == "num_cameras":
                try:
                    num_cameras = int(value)
                except ValueError:
                    raise ValidationError(f"{path}: line {body_start + 1}: bad num_cameras {value!r}") from None
            continue
        break
    else:
        raise ValidationError(f"{path}: missing header row")
    header = tuple(h.strip() for h in lines[body_start].split(","))
    if header != META_HEADER:
        raise ValidationError(f"{path}: expected header {','.join(META_HEADER)}, got {lines[body_start]!r}")
    for lineno, row in enumerate(csv.reader(lines[body_start + 1 :]), start=body_start + 2):
        if not row:
            continue
        if len(row) != 4:
            raise ValidationError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
        try:
            metas.append(SampleMeta(*(int(v) for v in row)))
        except ValueError:
            raise ValidationError(f"{path}: line {lineno}: non-integer field in {row!r}") from None
    return metas, num_cameras


def save_dataset(d: Dataset, meta_path: str | Path, feature_path: str | Path) -> None:
    write_metadata(meta_path, d.metas, d.num_cameras)
    write_matrix(feature_path, d.features.raw)


def load_dataset(
    meta_path: str | Path,
    feature_path: str | Path,
    num_cameras: int | None = None,
    domain_tag: str = "target",
) -> Dataset:
    """Load and validate a dataset written by :func:`save_dataset`.

    The camera count comes from ``num_cameras`` if given, else from the
    metadata header comment, else from the largest camera id seen.
    """
    metas, header_cams = read_metadata(meta_path)
    raw = read_matrix(feature_path)
    if num_cameras is None:
        num_cameras = header_cams
    if num_cameras is None:
        num_cameras = 1 + max((m.camera_id for m in metas), default=0)
    return Dataset(metas, FeatureStore(raw), num_cameras, domain_tag)


def split_query_gallery(d: Dataset, query_fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Split a labeled dataset into disjoint query and gallery index lists.

    Each eligible person contributes ``max(1, round(query_fraction * n_images))``
    queries, chosen so that every query keeps at least one gallery image of the
    same person under a different camera.  People seen by a single camera are
    never queried; their images go to the gallery.
    """
    if not 0.0 < query_fraction < 1.0:
        raise ValueError(f"query_fraction must lie in (0, 1), got {query_fraction}")
    if d.has_unknown_ids:
        raise ValidationError("query/gallery split needs known person ids")
    rng = np.random.default_rng(seed)
    query: list[int] = []
    excluded = []
    for pid in np.unique(d.person_ids):
        members = np.flatnonzero(d.person_ids == pid)
        cams = d.camera_ids[members]
        if np.unique(cams).size < 2:
            excluded.append(int(pid))
            continue
        want = max(1, int(round(query_fraction * members.size)))
        chosen: list[int] = []
        for idx in rng.permutation(members):
            if len(chosen) == want:
                break
            trial = chosen + [int(idx)]
            rest = np.setdiff1d(members, trial)
            rest_cams = d.camera_ids[rest]
            if all(np.any(rest_cams != d.camera_ids[q]) for q in trial):
                chosen = trial
        query.extend(chosen)
    if excluded:
        logger.warning("%d person(s) seen by one camera only, not used as queries: %s", len(excluded), excluded)
    query.sort()
    qset = set(query)
    gallery = [i for i in range(len(d)) if i not in qset]
    return query, gallery
