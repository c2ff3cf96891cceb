"""Batch generation of expanded-identity and synthetic-identity faces."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import blend, composite, dataset, donors, mesh, reshape
from .dataset import DatasetManifest, FaceRecord, Group
from .errors import CapacityError, ConfigError, InsufficientDonorsError

log = logging.getLogger(__name__)

DEFAULT_IMAGE_SIZE = 512
MODE_ALIASES = {"expand": donors.EXPAND, "synth": donors.SYNTH, donors.EXPAND: donors.EXPAND, donors.SYNTH: donors.SYNTH}
U64 = 2**64
_MIN_GROUP_SIZE = reshape.MIN_GROUP_SIZE
_DEFAULT_MARGIN = mesh.DEFAULT_MARGIN


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable 64-bit seed from the master seed and an identity/index path."""
    text = "|".join([str(int(master_seed))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass
class RunConfig:
    mode: str = donors.SYNTH
    images_per_identity: int = 1
    identity_count: int = 1
    c_donor: int = composite.DEFAULT_BUDGET
    proximal_n: int = donors.DEFAULT_PROXIMAL_N
    pyramid_levels: int = blend.DEFAULT_LEVELS
    master_seed: int = 0
    embedding_provider: str = "file"
    output_dir: Optional[Path] = None
    image_size: Optional[int] = None  # None accepts whatever square size the data has
    split_eyes: bool = False
    reshape: bool = True
    min_group_size: int = _MIN_GROUP_SIZE
    landmark_subset: Optional[tuple[int, ...]] = None
    region_margin: float = _DEFAULT_MARGIN
    on_degenerate: str = "skip"  # or "abort"
    skip_small_groups: bool = False
    dump_stages: bool = False
    export_mesh_svg: bool = False

    def __post_init__(self) -> None:
        self.mode = MODE_ALIASES.get(self.mode, self.mode)
        if self.output_dir is not None:
            self.output_dir = Path(self.output_dir)
        self.validate()

    def validate(self) -> None:
        if self.mode not in donors.MODES:
            raise ConfigError(f"mode must be one of {donors.MODES}, got {self.mode!r}")
        if self.images_per_identity < 1:
            raise ConfigError("images_per_identity must be >= 1")
        if self.identity_count < 1:
            raise ConfigError("identity_count must be >= 1")
        composite.validate_budget(self.c_donor)
        if self.proximal_n < 1:
            raise ConfigError("proximal_n must be >= 1")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if not 0 <= self.master_seed < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.embedding_provider not in ("file", "desk"):
            raise ConfigError(f"embedding provider must be 'file' or 'desk', got {self.embedding_provider!r}")
        if self.on_degenerate not in ("skip", "abort"):
            raise ConfigError("on_degenerate must be 'skip' or 'abort'")
        if self.min_group_size < 1:
            raise ConfigError("min_group_size must be >= 1")
        if self.image_size is not None:
            step = 2 ** (self.pyramid_levels - 1)
            if self.image_size <= 0 or self.image_size % step:
                raise ConfigError(
                    f"image size {self.image_size} must be divisible by {step} for {self.pyramid_levels} pyramid levels"
                )


@dataclass
class OutputRecord:
    synthetic_image_id: str
    identity_label: str
    base_image_id: str
    donor_image_ids: list[str]
    seed_used: int
    gender: str = ""
    ethnicity: str = ""
    region_donors: dict[str, str] = field(default_factory=dict)
    image: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    landmarks: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    stages: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def c_donor(self) -> int:
        return len(self.donor_image_ids)


class FaceStore:
    """Lazy, memoized face loading plus per-base meshes and per-group bands."""

    def __init__(self, manifest: DatasetManifest, config: RunConfig):
        self.manifest = manifest
        self.config = config
        self._faces: dict[str, FaceRecord] = {}
        self._meshes: dict[str, mesh.FaceMesh] = {}
        self._bands: dict[Group, reshape.RatioBands] = {}

    def face(self, image_id: str) -> FaceRecord:
        rec = self._faces.get(image_id)
        if rec is None:
            rec = dataset.load_face(self.manifest.record(image_id), self.config.pyramid_levels, with_embedding=False)
            if self.config.image_size is not None and rec.size != self.config.image_size:
                raise ConfigError(f"{image_id}: image is {rec.size}px, config expects {self.config.image_size}px")
            self._faces[image_id] = rec
        return rec

    def mesh(self, image_id: str) -> mesh.FaceMesh:
        m = self._meshes.get(image_id)
        if m is None:
            rec = self.face(image_id)
            m = mesh.build_mesh(rec.landmarks, rec.size, self.config.landmark_subset, self.config.region_margin)
            self._meshes[image_id] = m
        return m

    def bands(self, group: Group) -> reshape.RatioBands:
        b = self._bands.get(group)
        if b is None:
            b = reshape.compute_bands(self.manifest, group, self.config.min_group_size)
            self._bands[group] = b
        return b

    def all_bands(self) -> list[reshape.RatioBands]:
        return [self._bands[g] for g in sorted(self._bands)]


def synthesize(
    store: FaceStore,
    base: FaceRecord,
    pool: donors.DonorPool,
    seed: int,
    key_donors: Optional[dict[str, str]] = None,
) -> tuple[np.ndarray, np.ndarray, composite.DonorAssignment, dict]:
    """One synthetic face: reshape, assign, warp + color shift, blend."""
    cfg = store.config
    base_face = store.face(base.image_id)
    base_mesh = store.mesh(base.image_id)
    target = base_mesh
    if cfg.reshape:
        target, step = reshape.reposition_with_relaxation(base_mesh, store.bands(base.group))
        if step < 1.0:
            log.warning("%s: reshaping relaxed to step %.2f", base.image_id, step)
    assignment = composite.assign_donors(target, pool, cfg.c_donor, seed, cfg.split_eyes, key_donors)
    donor_faces = {d: store.face(d) for d in assignment.donors_in_order}
    comp = composite.composite_face(base_face, target, assignment, donor_faces)
    image = blend.blend_composite(
        comp.mosaic, [(comp.layers[d], comp.masks[d]) for d in comp.order], cfg.pyramid_levels
    )
    stages = {"mosaic": comp.mosaic_uint8(), "mesh": target} if cfg.dump_stages or cfg.export_mesh_svg else {}
    return image, target.landmarks, assignment, stages


def _output(
    synthetic_id: str,
    label: str,
    base: FaceRecord,
    seed: int,
    result: tuple[np.ndarray, np.ndarray, composite.DonorAssignment, dict],
) -> OutputRecord:
    image, landmarks, assignment, stages = result
    return OutputRecord(
        synthetic_image_id=synthetic_id,
        identity_label=label,
        base_image_id=base.image_id,
        donor_image_ids=sorted(set(assignment.triangle_donors)),
        seed_used=seed,
        gender=base.gender,
        ethnicity=base.ethnicity,
        region_donors=dict(assignment.region_donors),
        image=image,
        landmarks=landmarks,
        stages=stages,
    )


def run_expand(manifest: DatasetManifest, config: RunConfig, store: Optional[FaceStore] = None) -> list[OutputRecord]:
    """New images of every real subject built only from that subject's other images."""
    store = store or FaceStore(manifest, config)
    out: list[OutputRecord] = []
    for subject in manifest.subjects():
        images = manifest.images_of(subject)
        if len(images) < 3:
            msg = f"subject {subject!r} has {len(images)} image(s); expand mode needs 3 (base + 2 donors)"
            if config.on_degenerate == "abort":
                raise InsufficientDonorsError(msg)
            log.warning("skipping: %s", msg)
            continue
        for j in range(config.images_per_identity):
            base = images[j % len(images)]
            pool = donors.build_donor_pool(manifest, None, base, donors.EXPAND)
            seed = derive_seed(config.master_seed, subject, j)
            sid = f"{subject}_x{j:03d}"
            out.append(_output(sid, subject, base, seed, synthesize(store, base, pool, seed)))
    return out


def _synth_labels(manifest: DatasetManifest, count: int) -> list[str]:
    taken = set(manifest.subjects())
    prefix = "synth_"
    while any(s.startswith(prefix) for s in taken):
        prefix = "x" + prefix
    return [f"{prefix}{k:05d}" for k in range(count)]


def run_synth(
    manifest: DatasetManifest,
    config: RunConfig,
    store: Optional[FaceStore] = None,
    index: Optional[donors.EmbeddingIndex] = None,
) -> list[OutputRecord]:
    """Mint ``identity_count`` synthetic identities with fixed eye/nose/mouth donors each."""
    store = store or FaceStore(manifest, config)
    groups = sorted(manifest.groups)
    if config.skip_small_groups:
        groups = [g for g in groups if len(manifest.groups[g]) > config.proximal_n]
        if not groups:
            raise CapacityError(f"no demographic group has more than {config.proximal_n} subjects")
    used = {groups[k % len(groups)] for k in range(config.identity_count)}
    small = [g for g in sorted(used) if len(manifest.groups[g]) <= config.proximal_n]
    if small:
        detail = ", ".join(f"{g[0]}/{g[1]} ({len(manifest.groups[g])} subjects)" for g in small)
        raise CapacityError(f"proximal_n={config.proximal_n} needs more subjects per group; too small: {detail}")

    if index is None:
        index = donors.build_index(manifest, config.embedding_provider)
    labels = _synth_labels(manifest, config.identity_count)
    out: list[OutputRecord] = []
    for k, label in enumerate(labels):
        group = groups[k % len(groups)]
        members = manifest.groups[group]
        anchor = members[(k // len(groups)) % len(members)]
        anchor_images = manifest.images_of(anchor)
        pool = donors.build_donor_pool(manifest, index, anchor_images[0], donors.SYNTH, config.proximal_n)
        id_rng = np.random.default_rng(np.uint64(derive_seed(config.master_seed, label, "identity")))
        key = composite.choose_key_donors(pool.image_ids, id_rng, config.split_eyes)
        for j in range(config.images_per_identity):
            base = anchor_images[j % len(anchor_images)]
            seed = derive_seed(config.master_seed, label, j)
            out.append(_output(f"{label}_{j:02d}", label, base, seed, synthesize(store, base, pool, seed, key)))
    return out


def run(manifest: DatasetManifest, config: RunConfig, store: Optional[FaceStore] = None) -> list[OutputRecord]:
    if config.mode == donors.EXPAND:
        return run_expand(manifest, config, store)
    return run_synth(manifest, config, store)


# ---------------------------------------------------------------------------
# Output


def _encode_regions(regions: dict[str, str]) -> str:
    return ";".join(f"{k}={v}" for k, v in sorted(regions.items()))


def _decode_regions(text: str) -> dict[str, str]:
    return dict(part.split("=", 1) for part in text.split(";") if part)


def to_face_record(rec: OutputRecord, output_dir: Path) -> FaceRecord:
    folder = Path(output_dir) / rec.identity_label
    return FaceRecord(
        image_id=rec.synthetic_image_id,
        subject_id=rec.identity_label,
        gender=rec.gender,
        ethnicity=rec.ethnicity,
        image_path=(folder / f"{rec.synthetic_image_id}.png").absolute(),
        landmarks_path=(folder / f"{rec.synthetic_image_id}.txt").absolute(),
        embedding_path=None,
        extra={
            "base_image_id": rec.base_image_id,
            "donor_image_ids": ";".join(rec.donor_image_ids),
            "seed_used": str(rec.seed_used),
            "region_donors": _encode_regions(rec.region_donors),
        },
    )


def write_outputs(
    records: list[OutputRecord],
    output_dir: str | Path,
    images: Optional[dict[str, np.ndarray]] = None,
    manifest_name: str = "manifest.csv",
) -> Path:
    """PNG + landmark sidecar per record and a manifest loadable by :func:`dataset.load_manifest`."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    ordered = sorted(records, key=lambda r: r.synthetic_image_id)
    rows = []
    for rec in ordered:
        face = to_face_record(rec, output_dir)
        image = images.get(rec.synthetic_image_id) if images else rec.image
        if image is not None:
            dataset.write_image(face.image_path, image)
        if rec.landmarks is not None:
            dataset.write_landmarks(face.landmarks_path, rec.landmarks)
        rows.append(face)
    if not rows:
        path = output_dir / manifest_name
        path.write_text(",".join(dataset.MANIFEST_COLUMNS) + "\n", encoding="utf-8")
        return path
    return dataset.write_manifest(rows, output_dir / manifest_name)


def read_outputs(path: str | Path) -> list[OutputRecord]:
    """Inverse of :func:`write_outputs` (pixels not loaded)."""
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if len(text) <= 1:
        return []
    m = dataset.load_manifest(path)
    out = []
    for r in m.records:
        donors_field = r.extra.get("donor_image_ids", "")
        out.append(
            OutputRecord(
                synthetic_image_id=r.image_id,
                identity_label=r.subject_id,
                base_image_id=r.extra.get("base_image_id", ""),
                donor_image_ids=[d for d in donors_field.split(";") if d],
                seed_used=int(r.extra.get("seed_used", "0")),
                gender=r.gender,
                ethnicity=r.ethnicity,
                region_donors=_decode_regions(r.extra.get("region_donors", "")),
            )
        )
    return out


def dump_stages(rec: OutputRecord, output_dir: Path, levels: int) -> None:
    folder = Path(output_dir) / "_stages" / rec.synthetic_image_id
    if "mosaic" in rec.stages:
        dataset.write_image(folder / "mosaic.png", rec.stages["mosaic"])
    if rec.image is not None:
        lap = blend.build_laplacian(blend.build_gaussian(rec.image.astype(np.float64), levels))
        for i, level in enumerate(lap.levels):
            img = level if i == len(lap.levels) - 1 else blend.normalized_level(level)
            dataset.write_image(folder / f"laplacian_{i}.png", np.clip(img, 0, 255).astype(np.uint8))


def export_mesh_svg(rec: OutputRecord, output_dir: Path) -> Optional[Path]:
    m = rec.stages.get("mesh")
    if m is None:
        return None
    path = Path(output_dir) / "_mesh" / f"{rec.synthetic_image_id}.svg"
    path.parent.mkdir(parents=True, exist_ok=True)
    href = f"../{rec.identity_label}/{rec.synthetic_image_id}.png"
    path.write_text(mesh.mesh_to_svg(m, href), encoding="utf-8")
    return path
