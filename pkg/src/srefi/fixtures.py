"""Procedurally drawn face datasets for tests, demos and desk-scale evaluation.

Each subject gets a fixed face geometry, skin/hair/background palette and a
low-frequency background texture; each image of a subject adds landmark
jitter, a lighting gradient and sensor noise. Everything is seeded from the
subject/image ids so a fixture is reproducible byte for byte.
"""
from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from . import dataset
from .dataset import FaceRecord
from .landmarks import BROWS, EYES, JAW, LEFT_EYE, MOUTH, NOSE, OUTER_LIP, RIGHT_EYE, mean_shape


def _rng(*parts: object) -> np.random.Generator:
    digest = hashlib.blake2b("|".join(map(str, parts)).encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def subject_landmarks(subject_id: str, size: int, seed: int = 0) -> np.ndarray:
    """Subject-level face geometry: mean shape with scaled, shifted features."""
    rng = _rng(seed, subject_id, "shape")
    width = rng.uniform(0.50, 0.58)
    pts = mean_shape(size, face_width=width, top=rng.uniform(0.17, 0.22))
    pts[:, 0] += rng.normal(0, 0.01) * size
    s = size * width
    for idx, sd in ((EYES, 0.010), (NOSE, 0.008), (MOUTH, 0.010)):
        pts[list(idx), 1] += rng.normal(0, sd) * s
    pts[list(BROWS), 1] += rng.normal(0, 0.006) * s
    return pts


def image_landmarks(subject_id: str, index: int, size: int, seed: int = 0) -> np.ndarray:
    rng = _rng(seed, subject_id, index, "jitter")
    pts = subject_landmarks(subject_id, size, seed)
    pts += rng.normal(0, 0.0025 * size, size=2)
    pts += rng.normal(0, 0.0012 * size, size=pts.shape)
    return np.clip(pts, 1.0, size - 2.0)


def _palette(subject_id: str, seed: int) -> dict:
    rng = _rng(seed, subject_id, "palette")
    skin = np.array([rng.uniform(110, 235), 0, 0])
    skin[1] = skin[0] * rng.uniform(0.68, 0.85)
    skin[2] = skin[1] * rng.uniform(0.70, 0.90)
    return {
        "skin": tuple(int(v) for v in skin),
        "hair": tuple(int(v) for v in rng.uniform(10, 120, 3)),
        "bg": tuple(int(v) for v in rng.uniform(40, 220, 3)),
        "iris": tuple(int(v) for v in rng.uniform(20, 140, 3)),
        "lip": (int(rng.uniform(140, 210)), int(rng.uniform(50, 100)), int(rng.uniform(60, 110))),
        "texture": rng.normal(0, 1, (4, 4, 3)),
        "hair_height": rng.uniform(0.10, 0.22),
    }


def render_face(subject_id: str, index: int, size: int = 512, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw one image of ``subject_id``; returns ``(rgb uint8, landmarks)``."""
    pal = _palette(subject_id, seed)
    pts = image_landmarks(subject_id, index, size, seed)
    rng = _rng(seed, subject_id, index, "render")

    tex = np.asarray(
        Image.fromarray(np.uint8(np.clip(128 + 40 * pal["texture"], 0, 255))).resize((size, size), Image.BICUBIC),
        dtype=np.float64,
    )
    canvas = np.clip(np.array(pal["bg"], dtype=np.float64) + (tex - 128), 0, 255)
    im = Image.fromarray(canvas.astype(np.uint8), "RGB")
    d = ImageDraw.Draw(im)

    jaw = pts[list(JAW)]
    brow_top = pts[list(BROWS), 1].min()
    face_h = pts[8, 1] - brow_top
    cx = 0.5 * (jaw[0, 0] + jaw[-1, 0])
    half_w = 0.5 * (jaw[-1, 0] - jaw[0, 0])
    top = brow_top - pal["hair_height"] * face_h * 2.2
    d.ellipse([cx - half_w * 1.12, top, cx + half_w * 1.12, brow_top + 0.9 * face_h], fill=pal["hair"])
    forehead = [
        (cx + half_w * np.cos(a), brow_top - 0.35 * face_h * np.sin(a)) for a in np.linspace(0.0, np.pi, 12)
    ]
    outline = [tuple(p) for p in jaw] + forehead
    d.polygon(outline, fill=pal["skin"])

    brow_col = tuple(int(0.6 * c) for c in pal["hair"])
    d.line([tuple(p) for p in pts[17:22]], fill=brow_col, width=max(2, size // 100))
    d.line([tuple(p) for p in pts[22:27]], fill=brow_col, width=max(2, size // 100))
    for eye in (LEFT_EYE, RIGHT_EYE):
        e = pts[list(eye)]
        d.polygon([tuple(p) for p in e], fill=(240, 240, 235))
        c = e.mean(axis=0)
        r = 0.28 * (e[:, 0].max() - e[:, 0].min())
        d.ellipse([c[0] - r, c[1] - r, c[0] + r, c[1] + r], fill=pal["iris"])
        r2 = 0.45 * r
        d.ellipse([c[0] - r2, c[1] - r2, c[0] + r2, c[1] + r2], fill=(15, 15, 15))
    shade = tuple(int(0.8 * c) for c in pal["skin"])
    d.line([tuple(p) for p in pts[27:31]], fill=shade, width=max(2, size // 170))
    d.polygon([tuple(p) for p in pts[31:36]] + [tuple(pts[30])], fill=shade)
    d.polygon([tuple(p) for p in pts[list(OUTER_LIP)]], fill=pal["lip"])
    d.line([tuple(p) for p in pts[60:68]] + [tuple(pts[60])], fill=tuple(int(0.6 * c) for c in pal["lip"]), width=2)

    im = im.filter(ImageFilter.GaussianBlur(radius=size / 400))
    arr = np.asarray(im, dtype=np.float64)
    yy, xx = np.mgrid[0:size, 0:size] / size
    angle = rng.uniform(0, 2 * np.pi)
    light = rng.uniform(0.88, 1.08) + rng.uniform(0.0, 0.12) * ((xx - 0.5) * np.cos(angle) + (yy - 0.5) * np.sin(angle))
    arr = arr * light[..., None] + rng.normal(0, 2.5, arr.shape)
    return np.clip(np.floor(arr + 0.5), 0, 255).astype(np.uint8), pts


def make_fixture(
    out_dir: str | Path,
    subjects: int = 10,
    images_per_subject: int = 3,
    size: int = 512,
    groups: Sequence[tuple[str, str]] = (("female", "caucasian"),),
    seed: int = 0,
    with_embeddings: bool = False,
) -> Path:
    """Write a fixture dataset (PNGs, landmark sidecars, manifest) and return the manifest path.

    Subjects are dealt round-robin into ``groups``.
    """
    out_dir = Path(out_dir)
    records = []
    for s in range(subjects):
        sid = f"s{s:03d}"
        gender, ethnicity = groups[s % len(groups)]
        for i in range(images_per_subject):
            iid = f"{sid}_{i:02d}"
            img, pts = render_face(sid, i, size, seed)
            img_path = out_dir / "images" / f"{iid}.png"
            lm_path = out_dir / "landmarks" / f"{iid}.txt"
            dataset.write_image(img_path, img)
            dataset.write_landmarks(lm_path, pts)
            emb_path = None
            if with_embeddings:
                from .donors import desk_embedding

                emb_path = out_dir / "embeddings" / f"{iid}.csv"
                emb_path.parent.mkdir(parents=True, exist_ok=True)
                dataset.write_embedding(emb_path, desk_embedding(img))
            records.append(FaceRecord(iid, sid, gender, ethnicity, img_path, lm_path, emb_path))
    return dataset.write_manifest(records, out_dir / "manifest.csv")
