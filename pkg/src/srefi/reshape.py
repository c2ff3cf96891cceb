"""Facial placement ratios, per-group IQR bands and vertical repositioning."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

from .dataset import DatasetManifest, FaceRecord, Group, read_landmarks
from .errors import CapacityError, GeometryError
from .landmarks import BROWS, CHIN, EYES, MOUTH, NOSE, NOSE_BASE
from .mesh import FaceMesh, signed_area

log = logging.getLogger(__name__)

RATIO_NAMES = ("eye_line_ratio", "nose_ratio", "mouth_ratio")
MIN_GROUP_SIZE = 20
BAND_TOL = 1e-9


@dataclass(frozen=True)
class FaceRatios:
    eye_line_ratio: float
    nose_ratio: float
    mouth_ratio: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.eye_line_ratio, self.nose_ratio, self.mouth_ratio)


@dataclass(frozen=True)
class FaceLines:
    chin: float
    brow: float
    eye: float
    nose: float
    mouth: float


def face_lines(landmarks: np.ndarray) -> FaceLines:
    y = np.asarray(landmarks, dtype=np.float64)[:, 1]
    return FaceLines(
        chin=float(y[CHIN]),
        brow=float(y[list(BROWS)].mean()),
        eye=float(y[list(EYES)].mean()),
        nose=float(y[NOSE_BASE]),
        mouth=float(y[list(MOUTH)].mean()),
    )


def _ratio(num: float, den: float, name: str) -> float:
    if den == 0.0:
        raise GeometryError(f"{name}: zero denominator (degenerate landmarks)")
    r = num / den
    if not np.isfinite(r) or r <= 0:
        raise GeometryError(f"{name}: ratio {r} is not a positive finite number")
    return r


def measure_ratios(landmarks: np.ndarray) -> FaceRatios:
    """Chin-anchored vertical ratios: eye/brow, nose/eye, mouth/nose."""
    ln = face_lines(landmarks)
    return FaceRatios(
        eye_line_ratio=_ratio(ln.chin - ln.eye, ln.chin - ln.brow, "eye_line_ratio"),
        nose_ratio=_ratio(ln.chin - ln.nose, ln.chin - ln.eye, "nose_ratio"),
        mouth_ratio=_ratio(ln.chin - ln.mouth, ln.chin - ln.nose, "mouth_ratio"),
    )


def tukey_hinges(values: Iterable[float]) -> tuple[float, float]:
    """Lower and upper hinges; the median is excluded from both halves when n is odd."""
    x = np.sort(np.asarray(list(values), dtype=np.float64))
    n = len(x)
    if n == 0:
        raise ValueError("no values")
    if n == 1:
        return float(x[0]), float(x[0])
    lower = x[: n // 2]
    upper = x[(n + 1) // 2 :]
    return float(np.median(lower)), float(np.median(upper))


@dataclass(frozen=True)
class RatioBands:
    group: Group
    bands: dict[str, tuple[float, float]]
    sample_count: int

    def band(self, name: str) -> tuple[float, float]:
        return self.bands[name]

    def contains(self, ratios: FaceRatios, tol: float = BAND_TOL) -> bool:
        return all(
            self.bands[n][0] - tol <= v <= self.bands[n][1] + tol for n, v in zip(RATIO_NAMES, ratios.as_tuple())
        )


def bands_from_ratios(group: Group, samples: list[FaceRatios]) -> RatioBands:
    cols = np.array([s.as_tuple() for s in samples], dtype=np.float64).reshape(-1, 3)
    bands = {name: tukey_hinges(cols[:, i]) for i, name in enumerate(RATIO_NAMES)}
    return RatioBands(group=group, bands=bands, sample_count=len(samples))


def compute_bands(
    manifest: DatasetManifest,
    group: Group,
    min_size: int = MIN_GROUP_SIZE,
    landmarks_of: Optional[Callable[[FaceRecord], np.ndarray]] = None,
) -> RatioBands:
    """IQR bands over every face of ``group``.

    A group with fewer than ``min_size`` faces borrows all faces of the same
    gender; the returned bands then carry ethnicity ``"*"``.
    """
    landmarks_of = landmarks_of or (lambda r: read_landmarks(r.landmarks_path))
    recs = manifest.records_in(group)
    used: Group = group
    if len(recs) < min_size:
        gender = group[0]
        recs = sorted((r for r in manifest.records if r.gender == gender), key=lambda r: r.image_id)
        used = (gender, "*")
        log.warning("group %s has fewer than %d faces; using %d %s faces", group, min_size, len(recs), gender)
        if len(recs) < min_size:
            raise CapacityError(f"gender {gender!r} has only {len(recs)} faces; need {min_size} for ratio bands")
    return bands_from_ratios(used, [measure_ratios(landmarks_of(r)) for r in recs])


def write_bands_csv(bands: Iterable[RatioBands], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "ratio_name", "q1", "q3", "n"])
        for b in bands:
            for name in RATIO_NAMES:
                q1, q3 = b.bands[name]
                w.writerow([f"{b.group[0]}/{b.group[1]}", name, f"{q1:.6f}", f"{q3:.6f}", b.sample_count])
    return path


# ---------------------------------------------------------------------------


def _clamp(value: float, band: tuple[float, float]) -> float:
    lo, hi = band
    if lo - BAND_TOL <= value <= hi + BAND_TOL:
        return value
    return min(max(value, lo), hi)


def region_shifts(landmarks: np.ndarray, bands: RatioBands, step: float = 1.0) -> dict[str, float]:
    """Vertical translation of the eyes, nose and mouth that clamps each ratio into its band.

    Solved top-down: the eye line depends only on chin and brow, the nose on
    the (moved) eye line, the mouth on the (moved) nose base.
    """
    ln = face_lines(landmarks)
    r = measure_ratios(landmarks)
    eye_ratio = _clamp(r.eye_line_ratio, bands.band("eye_line_ratio"))
    eye = ln.eye if eye_ratio == r.eye_line_ratio else ln.chin - eye_ratio * (ln.chin - ln.brow)
    eye = ln.eye + step * (eye - ln.eye)

    nose_ratio = (ln.chin - ln.nose) / (ln.chin - eye)
    target = _clamp(nose_ratio, bands.band("nose_ratio"))
    nose = ln.nose if target == nose_ratio else ln.chin - target * (ln.chin - eye)
    nose = ln.nose + step * (nose - ln.nose)

    mouth_ratio = (ln.chin - ln.mouth) / (ln.chin - nose)
    target = _clamp(mouth_ratio, bands.band("mouth_ratio"))
    mouth = ln.mouth if target == mouth_ratio else ln.chin - target * (ln.chin - nose)
    mouth = ln.mouth + step * (mouth - ln.mouth)
    return {"eyes": eye - ln.eye, "nose": nose - ln.nose, "mouth": mouth - ln.mouth}


_REGION_UNITS = {"left_eye": "eyes", "right_eye": "eyes", "nose": "nose", "mouth": "mouth"}
_UNIT_LANDMARKS = {"eyes": EYES, "nose": NOSE, "mouth": MOUTH}


def reposition_regions(
    mesh: FaceMesh,
    bands: RatioBands,
    base_landmarks: Optional[np.ndarray] = None,
    step: float = 1.0,
) -> FaceMesh:
    """Move the eye, nose and mouth regions vertically so their ratios fall in ``bands``.

    Key-region dual vertices translate rigidly; cheek/jaw and outer vertices
    one triangle away get half the average shift of their moved neighbours.
    Frame anchors stay put. Raises :class:`GeometryError` if any dual
    triangle would flip; a smaller ``step`` moves only part of the way.
    """
    landmarks = np.array(mesh.landmarks if base_landmarks is None else base_landmarks, dtype=np.float64)
    shifts = region_shifts(landmarks, bands, step)
    if all(v == 0.0 for v in shifts.values()):
        return mesh

    new_landmarks = landmarks.copy()
    for unit, idx in _UNIT_LANDMARKS.items():
        new_landmarks[list(idx), 1] += shifts[unit]

    n = len(mesh.dual_vertices)
    total = np.zeros(n)
    count = np.zeros(n)
    for region, unit in _REGION_UNITS.items():
        verts = mesh.region_vertices(region)
        total[verts] += shifts[unit]
        count[verts] += 1
    fixed = np.zeros(n, dtype=bool)
    fixed[mesh.n_centroids :] = True  # frame anchors
    moved = (count > 0) & ~fixed
    dy = np.zeros(n)
    dy[moved] = total[moved] / count[moved]

    ring_total = np.zeros(n)
    ring_count = np.zeros(n)
    for tri in mesh.dual_triangles:
        m = moved[tri]
        if m.any() and not m.all():
            src = dy[tri[m]].mean()
            for v in tri[~m]:
                ring_total[v] += src
                ring_count[v] += 1
    ring = (ring_count > 0) & ~moved & ~fixed
    dy[ring] = 0.5 * ring_total[ring] / ring_count[ring]

    verts = mesh.dual_vertices.copy()
    verts[:, 1] += dy
    before = signed_area(mesh.triangle_coords())
    after = signed_area(verts[mesh.dual_triangles])
    flipped = np.nonzero(np.sign(before) != np.sign(after))[0]
    if flipped.size or np.any(after == 0):
        raise GeometryError(f"repositioning would invert {max(flipped.size, 1)} dual triangle(s)")
    return mesh.moved(verts, new_landmarks)


def reposition_with_relaxation(mesh: FaceMesh, bands: RatioBands, steps=(1.0, 0.75, 0.5, 0.25)) -> tuple[FaceMesh, float]:
    """Try progressively smaller clamp steps; returns the mesh and the step used (0 = unchanged)."""
    for s in steps:
        try:
            return reposition_regions(mesh, bands, step=s), s
        except GeometryError:
            log.warning("reposition step %.2f inverts the mesh; relaxing", s)
    return mesh, 0.0
