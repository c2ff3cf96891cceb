"""Donor-set manifest, sidecar files and image I/O."""
from __future__ import annotations

import csv
import io
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import DimensionError, LandmarkError, ManifestError, UnknownSubjectError
from .landmarks import N_LANDMARKS

MANIFEST_COLUMNS = (
    "image_id",
    "subject_id",
    "gender",
    "ethnicity",
    "image_path",
    "landmarks_path",
    "embedding_path",
)
GENDERS = ("male", "female")

Group = tuple[str, str]


@dataclass
class FaceRecord:
    image_id: str
    subject_id: str
    gender: str
    ethnicity: str
    image_path: Path
    landmarks_path: Path
    embedding_path: Optional[Path] = None
    extra: dict[str, str] = field(default_factory=dict)
    image: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    landmarks: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    embedding: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def group(self) -> Group:
        return (self.gender, self.ethnicity)

    @property
    def size(self) -> int:
        if self.image is None:
            raise ValueError(f"image {self.image_id!r} not loaded")
        return self.image.shape[0]


@dataclass
class DatasetManifest:
    records: list[FaceRecord]
    groups: dict[Group, list[str]]
    path: Optional[Path] = None

    def __post_init__(self) -> None:
        self._by_id = {r.image_id: r for r in self.records}
        self._subject_group: dict[str, Group] = {}
        for g, subjects in self.groups.items():
            for s in subjects:
                self._subject_group[s] = g

    def record(self, image_id: str) -> FaceRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise UnknownSubjectError(f"unknown image_id {image_id!r}") from None

    def subjects(self) -> list[str]:
        return sorted(self._subject_group)

    def images_of(self, subject_id: str) -> list[FaceRecord]:
        """Records of one subject, sorted by image_id."""
        group_of(self, subject_id)
        return sorted((r for r in self.records if r.subject_id == subject_id), key=lambda r: r.image_id)

    def records_in(self, group: Group) -> list[FaceRecord]:
        members = set(self.groups.get(group, ()))
        return sorted((r for r in self.records if r.subject_id in members), key=lambda r: r.image_id)

    @classmethod
    def from_records(cls, records: Iterable[FaceRecord], path: Optional[Path] = None) -> "DatasetManifest":
        records = list(records)
        return cls(records=records, groups=_build_groups(records, [0] * len(records)), path=path)


def _build_groups(records: list[FaceRecord], lines: list[int]) -> dict[Group, list[str]]:
    seen: dict[str, tuple[Group, int]] = {}
    groups: dict[Group, set[str]] = defaultdict(set)
    for rec, line in zip(records, lines):
        prev = seen.get(rec.subject_id)
        if prev is not None and prev[0] != rec.group:
            raise ManifestError(
                f"subject {rec.subject_id!r} listed in group {prev[0]} (line {prev[1]}) "
                f"and {rec.group} (line {line})"
            )
        seen[rec.subject_id] = (rec.group, line)
        groups[rec.group].add(rec.subject_id)
    return {g: sorted(s) for g, s in sorted(groups.items())}


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    return Path(os.path.normpath(os.path.abspath(p)))


def load_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Parse a manifest CSV. Images and landmarks are not read here."""
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ManifestError(f"{path}: no records") from None
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"{path}: line 1: header missing column(s) {', '.join(missing)}")
    col = {name: i for i, name in enumerate(header)}

    records: list[FaceRecord] = []
    lines: list[int] = []
    first_seen: dict[str, int] = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ManifestError(f"{path}: line {line}: expected {len(header)} fields, got {len(row)}")
        values = {name: row[i].strip() for name, i in col.items()}
        for name in MANIFEST_COLUMNS[:6]:
            if not values[name]:
                raise ManifestError(f"{path}: line {line}: empty {name}")
        gender = values["gender"].lower()
        if gender not in GENDERS:
            raise ManifestError(f"{path}: line {line}: unknown gender {values['gender']!r}")
        image_id = values["image_id"]
        if image_id in first_seen:
            raise ManifestError(
                f"{path}: duplicate image_id {image_id!r} on lines {first_seen[image_id]} and {line}"
            )
        first_seen[image_id] = line
        extra = {k: v for k, v in values.items() if k not in MANIFEST_COLUMNS}
        records.append(
            FaceRecord(
                image_id=image_id,
                subject_id=values["subject_id"],
                gender=gender,
                ethnicity=values["ethnicity"].lower(),
                image_path=_resolve(base, values["image_path"]),
                landmarks_path=_resolve(base, values["landmarks_path"]),
                embedding_path=_resolve(base, values["embedding_path"]) if values["embedding_path"] else None,
                extra=extra,
            )
        )
        lines.append(line)
    if not records:
        raise ManifestError(f"{path}: no records")
    return DatasetManifest(records=records, groups=_build_groups(records, lines), path=path)


def write_manifest(records: Iterable[FaceRecord], path: str | os.PathLike) -> Path:
    """Write records as manifest CSV; paths are stored relative to the file."""
    path = Path(path)
    base = os.path.abspath(path.parent)
    records = list(records)
    extra_cols: list[str] = []
    for r in records:
        for k in r.extra:
            if k not in extra_cols:
                extra_cols.append(k)

    def rel(p: Optional[Path]) -> str:
        if p is None:
            return ""
        return Path(os.path.relpath(os.path.abspath(p), base)).as_posix()

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(MANIFEST_COLUMNS) + extra_cols)
        for r in records:
            w.writerow(
                [
                    r.image_id,
                    r.subject_id,
                    r.gender,
                    r.ethnicity,
                    rel(r.image_path),
                    rel(r.landmarks_path),
                    rel(r.embedding_path),
                ]
                + [r.extra.get(k, "") for k in extra_cols]
            )
    return path


def group_of(manifest: DatasetManifest, subject_id: str) -> Group:
    try:
        return manifest._subject_group[subject_id]
    except KeyError:
        raise UnknownSubjectError(f"unknown subject_id {subject_id!r}") from None


# ---------------------------------------------------------------------------
# Sidecar files and images


def read_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    try:
        # fixed encoder settings so identical pixels give identical bytes
        Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "RGB").save(
            tmp, format="PNG", optimize=False, compress_level=6
        )
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def read_landmarks(path: str | os.PathLike) -> np.ndarray:
    pts = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise LandmarkError(f"{path}: line {lineno}: expected 'x y', got {line!r}")
            try:
                pts.append((float(parts[0]), float(parts[1])))
            except ValueError:
                raise LandmarkError(f"{path}: line {lineno}: non-numeric coordinate {line!r}") from None
    if len(pts) != N_LANDMARKS:
        raise LandmarkError(f"{path}: expected {N_LANDMARKS} landmarks, found {len(pts)}")
    return np.array(pts, dtype=np.float64)


def write_landmarks(path: str | os.PathLike, landmarks: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in np.asarray(landmarks, dtype=np.float64):
            fh.write(f"{x:.4f} {y:.4f}\n")


def read_embedding(path: str | os.PathLike) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        text = fh.read().strip()
    try:
        return np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ManifestError(f"{path}: malformed embedding line") from None


def write_embedding(path: str | os.PathLike, vector: np.ndarray) -> None:
    Path(path).write_text(",".join(repr(float(v)) for v in vector) + "\n", encoding="utf-8")


def validate_landmarks(landmarks: np.ndarray, size: int, where: str = "landmarks") -> None:
    if landmarks.shape != (N_LANDMARKS, 2):
        raise LandmarkError(f"{where}: expected {N_LANDMARKS} points, found {len(landmarks)}")
    bad = np.nonzero(
        ~np.isfinite(landmarks).all(axis=1)
        | (landmarks < 0).any(axis=1)
        | (landmarks > size - 1).any(axis=1)
    )[0]
    if bad.size:
        i = int(bad[0])
        raise LandmarkError(
            f"{where}: point {i + 1} at ({landmarks[i, 0]:.2f}, {landmarks[i, 1]:.2f}) outside {size}x{size} image"
        )


def load_face(record: FaceRecord, levels: int = 4, with_embedding: bool = True) -> FaceRecord:
    """Return a copy of ``record`` with pixels, landmarks and embedding loaded."""
    image = read_image(record.image_path)
    h, w = image.shape[:2]
    if h != w:
        raise DimensionError(f"{record.image_path}: image is {w}x{h}, must be square")
    step = 2 ** (levels - 1)
    if w % step:
        raise DimensionError(f"{record.image_path}: side {w} not divisible by {step} (pyramid levels={levels})")
    landmarks = read_landmarks(record.landmarks_path)
    validate_landmarks(landmarks, w, str(record.landmarks_path))
    embedding = None
    if with_embedding and record.embedding_path is not None:
        embedding = read_embedding(record.embedding_path)
    return replace(record, image=image, landmarks=landmarks, embedding=embedding)


def load_landmarks_only(record: FaceRecord) -> np.ndarray:
    return read_landmarks(record.landmarks_path)
