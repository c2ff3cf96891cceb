"""Donor assignment, triangle warping and per-triangle color mean shift."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import FaceRecord
from .donors import DonorPool
from .errors import ConfigError, EmptyRegionError, GeometryError, InsufficientDonorsError
from .kernels import bilinear_sample, rasterize_labels, warp_by_labels
from .mesh import CHEEK_ID, OUTER_ID, REGIONS, FaceMesh, signed_area

MIN_BUDGET = 5
MAX_BUDGET = 16
DEFAULT_BUDGET = 8


# ---------------------------------------------------------------------------
# Affine maps


def affine_from_triangles(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """2x3 matrix ``M`` with ``M @ (x, y, 1) = dst`` for each source vertex."""
    src = np.asarray(src, dtype=np.float64).reshape(3, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(3, 2)
    for name, tri in (("source", src), ("target", dst)):
        scale = max(1.0, float(np.abs(tri).max()))
        if abs(signed_area(tri)) <= 1e-12 * scale * scale:
            raise GeometryError(f"degenerate {name} triangle {tri.tolist()}")
    delta = dst - src
    if np.all(delta == delta[0]):
        # exact identity / translation; avoids solver round-off
        return np.array([[1.0, 0.0, delta[0, 0]], [0.0, 1.0, delta[0, 1]]])
    a = np.hstack([src, np.ones((3, 1))])
    return np.linalg.solve(a, dst).T


def invert_affine(m: np.ndarray) -> np.ndarray:
    lin = m[:, :2]
    if np.all(lin == np.eye(2)):
        return np.hstack([lin, -m[:, 2:]])
    inv = np.linalg.inv(lin)
    return np.hstack([inv, -inv @ m[:, 2:]])


def inverse_affines(target: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Per-triangle maps from target coordinates back into the source image."""
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3, 2)
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3, 2)
    if len(target) != len(source):
        raise GeometryError(f"{len(target)} target triangles but {len(source)} source triangles")
    for name, tris in (("target", target), ("source", source)):
        scale = np.maximum(1.0, np.abs(tris).reshape(len(tris), -1).max(axis=1, initial=0.0))
        area = 0.5 * ((tris[:, 1, 0] - tris[:, 0, 0]) * (tris[:, 2, 1] - tris[:, 0, 1])
                      - (tris[:, 2, 0] - tris[:, 0, 0]) * (tris[:, 1, 1] - tris[:, 0, 1]))
        bad = np.flatnonzero(np.abs(area) <= 1e-12 * scale * scale)
        if len(bad):
            raise GeometryError(f"degenerate {name} triangle {tris[bad[0]].tolist()}")
    out = np.empty((len(target), 2, 3))
    if not len(target):
        return out
    delta = source - target
    shift = np.all(delta == delta[:, :1], axis=(1, 2))
    out[shift] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    out[shift, :, 2] = delta[shift, 0]
    rest = ~shift
    if rest.any():
        a = np.concatenate([target[rest], np.ones((int(rest.sum()), 3, 1))], axis=2)
        out[rest] = np.transpose(np.linalg.solve(a, source[rest]), (0, 2, 1))
    return out


@dataclass
class WarpedPatch:
    triangle: int
    ys: np.ndarray
    xs: np.ndarray
    pixels: np.ndarray  # (N, 3) float
    affine: np.ndarray  # source -> target

    def paste(self, canvas: np.ndarray) -> np.ndarray:
        canvas[self.ys, self.xs] = self.pixels
        return canvas


def warp_triangle(
    donor_image: np.ndarray,
    donor_triangle: np.ndarray,
    target_triangle: np.ndarray,
    shape: Optional[tuple[int, int]] = None,
    index: int = -1,
) -> WarpedPatch:
    """Sample the donor triangle into the target triangle (inverse map, bilinear)."""
    m = affine_from_triangles(donor_triangle, target_triangle)
    inv = invert_affine(m)
    h, w = shape if shape is not None else donor_image.shape[:2]
    labels = rasterize_labels(np.asarray(target_triangle, dtype=np.float64)[None], h, w)
    ys, xs = np.nonzero(labels == 0)
    img = np.asarray(donor_image, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    return WarpedPatch(index, ys, xs, bilinear_sample(img, sx, sy), m)


def mean_shift_colors(patch: WarpedPatch, base_image: np.ndarray, triangle: Optional[np.ndarray] = None) -> WarpedPatch:
    """Offset each channel so the patch mean equals the base mean over the same pixels.

    ``triangle`` is accepted for symmetry with :func:`warp_triangle`; the pixel
    set is the patch's own rasterization of it.
    """
    if patch.ys.size == 0:
        raise EmptyRegionError(f"triangle {patch.triangle} covers no pixels")
    base = np.asarray(base_image, dtype=np.float64)[patch.ys, patch.xs]
    offset = base.mean(axis=0) - patch.pixels.mean(axis=0)
    shifted = np.clip(patch.pixels + offset, 0.0, 255.0)
    return WarpedPatch(patch.triangle, patch.ys, patch.xs, shifted, patch.affine)


# ---------------------------------------------------------------------------
# Donor assignment


def key_units(split_eyes: bool = False) -> dict[str, tuple[str, ...]]:
    if split_eyes:
        return {"left_eye": ("left_eye",), "right_eye": ("right_eye",), "nose": ("nose",), "mouth": ("mouth",)}
    return {"eyes": ("left_eye", "right_eye"), "nose": ("nose",), "mouth": ("mouth",)}


@dataclass
class DonorAssignment:
    triangle_donors: list[str]
    region_donors: dict[str, str]
    seed: int
    donors_in_order: list[str] = field(default_factory=list)

    @property
    def c_donor(self) -> int:
        return len(set(self.triangle_donors))

    def triangles_of(self, image_id: str) -> np.ndarray:
        return np.array([i for i, d in enumerate(self.triangle_donors) if d == image_id], dtype=np.int64)


def validate_budget(budget: int) -> None:
    if not MIN_BUDGET <= budget <= MAX_BUDGET:
        raise ConfigError(f"c_donor must be in [{MIN_BUDGET}, {MAX_BUDGET}], got {budget}")


def choose_key_donors(
    pool_ids: Sequence[str], rng: np.random.Generator, split_eyes: bool = False
) -> dict[str, str]:
    """One donor image per key unit, distinct while the pool allows."""
    units = list(key_units(split_eyes))
    order = [pool_ids[i] for i in rng.permutation(len(pool_ids))]
    return {u: order[i % len(order)] for i, u in enumerate(units)}


def assign_donors(
    mesh: FaceMesh,
    pool: DonorPool,
    budget: int,
    seed: int,
    split_eyes: bool = False,
    key_donors: Optional[Mapping[str, str]] = None,
) -> DonorAssignment:
    """Pick ``min(budget, pool size)`` donor images and map every dual triangle to one.

    Each key unit (both eyes by default, nose, mouth) takes a single donor;
    cheek/jaw and outer triangles draw uniformly from the remaining chosen
    donors, each of which is used at least once. ``key_donors`` pins the key
    units, which is how a synthetic identity keeps its features across images.
    """
    if budget < MIN_BUDGET:
        raise ConfigError(f"c_donor budget must be at least {MIN_BUDGET}, got {budget}")
    ids = pool.image_ids
    if len(ids) < 2:
        raise InsufficientDonorsError(f"donor pool for {pool.base_image_id!r} has {len(ids)} image(s); need 2")
    rng = np.random.default_rng(np.uint64(seed))
    units = key_units(split_eyes)
    k = min(budget, len(ids))

    if key_donors is None:
        selected = [ids[i] for i in rng.permutation(len(ids))[:k]]
        unit_donor = {u: selected[i % k] for i, u in enumerate(units)}
    else:
        missing = set(units) - set(key_donors)
        if missing:
            raise ConfigError(f"key_donors lacks unit(s) {sorted(missing)}")
        unit_donor = {u: key_donors[u] for u in units}
        fixed = list(dict.fromkeys(unit_donor[u] for u in units))
        unknown = [d for d in fixed if d not in ids]
        if unknown:
            raise ConfigError(f"pinned key donors {unknown} are not in the pool")
        rest = [d for d in ids if d not in fixed]
        extra = max(0, k - len(fixed))
        selected = fixed + [rest[i] for i in rng.permutation(len(rest))[:extra]]

    key_distinct = list(dict.fromkeys(unit_donor.values()))
    cheek_donors = [d for d in selected if d not in key_distinct] or list(selected)

    labels = mesh.region_labels
    out: list[Optional[str]] = [None] * len(labels)
    for unit, regions in units.items():
        for r in regions:
            for t in np.nonzero(labels == REGIONS.index(r))[0]:
                out[t] = unit_donor[unit]
    free = np.nonzero((labels == CHEEK_ID) | (labels == OUTER_ID))[0]
    if len(free) < len(cheek_donors):
        raise ConfigError(f"only {len(free)} cheek/outer triangles for {len(cheek_donors)} cheek donors")
    perm = free[rng.permutation(len(free))]
    picks = rng.integers(0, len(cheek_donors), size=len(free))
    picks[: len(cheek_donors)] = np.arange(len(cheek_donors))
    for t, p in zip(perm, picks):
        out[t] = cheek_donors[p]

    region_donors = {r: unit_donor[u] for u, regions in units.items() for r in regions}
    first_use: dict[str, int] = {}
    for t, d in enumerate(out):
        first_use.setdefault(d, t)
    order = sorted(first_use, key=first_use.get)
    return DonorAssignment(triangle_donors=out, region_donors=region_donors, seed=int(seed), donors_in_order=order)


# ---------------------------------------------------------------------------
# Composite


@dataclass
class Composite:
    mosaic: np.ndarray  # (S, S, 3) float, un-blended
    masks: dict[str, np.ndarray]  # donor image_id -> bool (S, S)
    layers: dict[str, np.ndarray]  # donor image_id -> color-shifted full-frame warp
    labels: np.ndarray  # (S, S) owning dual triangle per pixel
    base_layer: np.ndarray
    order: list[str]

    def mosaic_uint8(self) -> np.ndarray:
        return np.floor(np.clip(self.mosaic, 0, 255) + 0.5).astype(np.uint8)


def _triangle_means(image: np.ndarray, labels: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n)[:n].astype(np.float64)
    sums = np.stack([np.bincount(flat, weights=image[..., c].ravel(), minlength=n)[:n] for c in range(image.shape[2])], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return np.where(counts[:, None] > 0, means, 0.0), counts


def warp_face(image: np.ndarray, source_vertices: np.ndarray, mesh: FaceMesh, labels: np.ndarray) -> np.ndarray:
    """Warp a whole face into ``mesh`` geometry triangle by triangle."""
    inv = inverse_affines(mesh.triangle_coords(), source_vertices[mesh.dual_triangles])
    return warp_by_labels(image, labels, inv)


def color_shift_layer(layer: np.ndarray, base_layer: np.ndarray, labels: np.ndarray, n: int) -> np.ndarray:
    """Per-triangle mean shift of a full-frame layer toward ``base_layer``."""
    donor_means, counts = _triangle_means(layer, labels, n)
    base_means, _ = _triangle_means(base_layer, labels, n)
    offset = base_means - donor_means
    return np.clip(layer + offset[labels], 0.0, 255.0)


def composite_face(
    base: FaceRecord,
    mesh: FaceMesh,
    assignment: DonorAssignment,
    donors: Mapping[str, FaceRecord],
) -> Composite:
    """Un-blended mosaic: each dual triangle filled from its assigned donor.

    ``base`` and every entry of ``donors`` must be loaded (pixels and original
    landmarks). ``mesh`` is the target geometry, usually the reshaped base mesh.
    """
    size = mesh.image_size
    n = len(mesh.dual_triangles)
    if len(assignment.triangle_donors) != n:
        raise ConfigError("assignment does not match mesh")
    labels = rasterize_labels(mesh.triangle_coords(), size, size)
    if (labels < 0).any():
        raise GeometryError(f"{int((labels < 0).sum())} pixels not covered by the dual mesh")

    base_layer = warp_face(base.image, mesh.dual_vertices_for(base.landmarks), mesh, labels)
    owner = np.array([assignment.donors_in_order.index(d) for d in assignment.triangle_donors])
    pixel_owner = owner[labels]
    mosaic = np.zeros_like(base_layer)
    masks: dict[str, np.ndarray] = {}
    layers: dict[str, np.ndarray] = {}
    for k, image_id in enumerate(assignment.donors_in_order):
        rec = donors[image_id]
        if rec.image is None or rec.landmarks is None:
            raise ConfigError(f"donor {image_id!r} is not loaded")
        if rec.image.shape[0] != size:
            raise GeometryError(f"donor {image_id!r} is {rec.image.shape[0]}px, base is {size}px")
        layer = warp_face(rec.image, mesh.dual_vertices_for(rec.landmarks), mesh, labels)
        layer = color_shift_layer(layer, base_layer, labels, n)
        mask = pixel_owner == k
        mosaic[mask] = layer[mask]
        masks[image_id] = mask
        layers[image_id] = layer
    return Composite(mosaic, masks, layers, labels, base_layer, list(assignment.donors_in_order))
