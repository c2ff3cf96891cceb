"""Embedding index, cosine scoring and donor-pool assembly."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Optional

import numpy as np

from .dataset import DatasetManifest, FaceRecord, Group, group_of, read_embedding, read_image
from .errors import (
    CapacityError,
    ConfigError,
    InsufficientDonorsError,
    MissingDataError,
    NumericError,
    ShapeError,
)

EXPAND = "expand_real_id"
SYNTH = "synth_id"
MODES = (EXPAND, SYNTH)
METRICS = ("cosine",)
DEFAULT_PROXIMAL_N = 10
DESK_GRID = 32


def cosine_similarity(v1: np.ndarray, v2: np.ndarray) -> float:
    """``v1 . v2 / (|v1| |v2|)``."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.shape != v2.shape or v1.ndim != 1:
        raise ShapeError(f"dimension mismatch: {v1.shape} vs {v2.shape}")
    if not (np.any(v1) and np.any(v2)):
        raise NumericError("cosine similarity of a zero-norm vector is undefined")
    n1 = float(np.dot(v1, v1))
    n2 = float(np.dot(v2, v2))
    if not (0.0 < n1 < math.inf and 0.0 < n2 < math.inf):
        # squared norms left the float range; the ratio is scale-free
        v1 = v1 / np.abs(v1).max()
        v2 = v2 / np.abs(v2).max()
        n1 = float(np.dot(v1, v1))
        n2 = float(np.dot(v2, v2))
    # one square root of the product: sqrt(fl(d*d)) == d, so cos(v, v) is exactly 1
    prod = n1 * n2
    denom = math.sqrt(prod) if 0.0 < prod < math.inf else math.sqrt(n1) * math.sqrt(n2)
    s = float(np.dot(v1, v2)) / denom
    return min(1.0, max(-1.0, s))


def similarity(metric: str) -> Callable[[np.ndarray, np.ndarray], float]:
    if metric != "cosine":
        raise ConfigError(f"unsupported similarity metric {metric!r}; available: {', '.join(METRICS)}")
    return cosine_similarity


def desk_embedding(image: np.ndarray) -> np.ndarray:
    """Centered 32x32 luminance thumbnail, a stand-in for a CNN descriptor."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != image.shape[1] or image.shape[2] != 3:
        raise ShapeError(f"expected a square RGB image, got shape {image.shape}")
    size = image.shape[0]
    if size % DESK_GRID:
        raise ShapeError(f"image side {size} not divisible by {DESK_GRID}")
    lum = image.astype(np.float64) @ np.array([0.299, 0.587, 0.114]) / 255.0
    k = size // DESK_GRID
    thumb = lum.reshape(DESK_GRID, k, DESK_GRID, k).mean(axis=(1, 3))
    v = thumb.ravel()
    v = v - v.mean()
    if not np.any(np.abs(v) > 1e-12):
        raise NumericError("constant image has no desk embedding")
    return v


def _pairwise_mean(vectors: list[np.ndarray]) -> np.ndarray:
    """Mean by pairwise summation in list order, so the result is order-fixed."""
    def total(lo: int, hi: int) -> np.ndarray:
        if hi - lo == 1:
            return vectors[lo]
        mid = (lo + hi) // 2
        return total(lo, mid) + total(mid, hi)

    return total(0, len(vectors)) / len(vectors)


@dataclass
class EmbeddingIndex:
    dimension: int
    per_image: dict[str, np.ndarray]
    per_subject_mean: dict[str, np.ndarray]


def subject_means(per_image: Mapping[str, np.ndarray], manifest: DatasetManifest) -> dict[str, np.ndarray]:
    means = {}
    for subject in manifest.subjects():
        ids = [r.image_id for r in manifest.images_of(subject) if r.image_id in per_image]
        if not ids:
            raise MissingDataError(f"subject {subject!r} has no embedded images")
        means[subject] = _pairwise_mean([np.asarray(per_image[i], dtype=np.float64) for i in ids])
    return means


def build_index(
    manifest: DatasetManifest,
    provider: str = "file",
    images: Optional[Mapping[str, np.ndarray]] = None,
) -> EmbeddingIndex:
    """Embed every record of ``manifest``.

    ``provider="file"`` reads ``embedding_path`` sidecars and falls back to the
    desk embedding for rows without one; ``provider="desk"`` always computes.
    ``images`` may supply already-loaded pixels keyed by image_id.
    """
    if provider not in ("file", "desk"):
        raise ConfigError(f"unknown embedding provider {provider!r}")
    per_image: dict[str, np.ndarray] = {}
    for rec in sorted(manifest.records, key=lambda r: r.image_id):
        if provider == "file" and rec.embedding_path is not None:
            v = read_embedding(rec.embedding_path)
        else:
            img = images[rec.image_id] if images is not None and rec.image_id in images else read_image(rec.image_path)
            v = desk_embedding(img)
        if not np.any(v):
            raise NumericError(f"embedding of {rec.image_id!r} has zero norm")
        per_image[rec.image_id] = v
    dims = {v.shape[0] for v in per_image.values()}
    if len(dims) != 1:
        raise ShapeError(f"embedding dimensions differ across the dataset: {sorted(dims)}")
    return EmbeddingIndex(dimension=dims.pop(), per_image=per_image, per_subject_mean=subject_means(per_image, manifest))


def top_n_proximal(
    index: EmbeddingIndex,
    base_subject: str,
    group: Iterable[str] | DatasetManifest,
    n: int,
    metric: str = "cosine",
    group_key: Optional[Group] = None,
) -> list[str]:
    """The ``n`` subjects of the base's group most similar to ``base_subject``.

    ``group`` is either the list of subject ids in the group or a manifest, in
    which case the base subject's own group is used. Ordered by descending
    score, ties by ascending subject_id.
    """
    if n < 1:
        raise ConfigError("n must be positive")
    if isinstance(group, DatasetManifest):
        group_key = group_of(group, base_subject)
        members = group.groups[group_key]
    else:
        members = list(group)
    score = similarity(metric)
    base = index.per_subject_mean[base_subject]
    others = sorted(s for s in set(members) if s != base_subject)
    if n > len(others):
        label = f"group {group_key}" if group_key else "group"
        raise CapacityError(f"{label} has {len(others)} subjects besides {base_subject!r}; cannot take {n}")
    scored = sorted(((-score(base, index.per_subject_mean[s]), s) for s in others))
    return [s for _, s in scored[:n]]


@dataclass
class DonorPool:
    base_image_id: str
    mode: str
    candidates: list[FaceRecord]
    pool_subject_count: int

    @property
    def image_ids(self) -> list[str]:
        return [c.image_id for c in self.candidates]


def build_donor_pool(
    manifest: DatasetManifest,
    index: Optional[EmbeddingIndex],
    base: FaceRecord,
    mode: str,
    n: int = DEFAULT_PROXIMAL_N,
) -> DonorPool:
    if mode == EXPAND:
        same = [r for r in manifest.images_of(base.subject_id) if r.image_id != base.image_id]
        if not same:
            raise InsufficientDonorsError(f"subject {base.subject_id!r} has no other images to donate")
        return DonorPool(base.image_id, mode, same, 1)
    if mode == SYNTH:
        if index is None:
            raise ConfigError("synth mode needs an embedding index")
        subjects = top_n_proximal(index, base.subject_id, manifest, n)
        cands = [r for s in subjects for r in manifest.images_of(s)]
        return DonorPool(base.image_id, mode, cands, len(subjects))
    raise ConfigError(f"unknown mode {mode!r}")
