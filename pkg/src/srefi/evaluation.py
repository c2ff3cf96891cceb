"""Verification scoring of real and generated image sets, with ROC output."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .dataset import DatasetManifest, FaceRecord, read_embedding, read_image
from .donors import desk_embedding
from .errors import ConfigError, EvaluationError, MissingDataError, NumericError, ValidationError

EXPERIMENTS = ("real_vs_real", "synth_vs_synth", "expand_vs_expand", "expand_vs_real")
MATED = "mated"
NONMATED = "nonmated"


@dataclass(frozen=True)
class ScoredPair:
    probe_image_id: str
    gallery_image_id: str
    label: str
    score: float

    @property
    def mated(self) -> bool:
        return self.label == MATED


@dataclass
class RocCurve:
    # (far, tar, threshold); the first point is the reject-all threshold +inf
    points: list[tuple[float, float, float]]
    auc: float
    n_mated: int
    n_nonmated: int

    @property
    def far(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def tar(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def minmax_normalize(vectors: Sequence[np.ndarray] | np.ndarray) -> np.ndarray:
    """Per-component linear min-max scaling over the batch; flat components map to 0."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValidationError("min-max normalization needs a non-empty batch of vectors")
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    out = np.zeros_like(x)
    live = span > 0
    out[:, live] = (x[:, live] - lo[live]) / span[live]
    return out


def embed_records(records: Sequence[FaceRecord], provider: str = "file") -> dict[str, np.ndarray]:
    """Raw embedding per image_id. ``file`` falls back to the desk embedding when a row has no sidecar."""
    if provider not in ("file", "desk"):
        raise ConfigError(f"unknown embedding provider {provider!r}")
    out: dict[str, np.ndarray] = {}
    for rec in records:
        if rec.image_id in out:
            continue
        if provider == "file" and rec.embedding_path is not None:
            out[rec.image_id] = read_embedding(rec.embedding_path)
        elif rec.image is not None:
            out[rec.image_id] = desk_embedding(rec.image)
        else:
            out[rec.image_id] = desk_embedding(read_image(rec.image_path))
    return out


def score_pairs(
    probes: Sequence[FaceRecord],
    gallery: Sequence[FaceRecord],
    embeddings: Mapping[str, np.ndarray],
) -> list[ScoredPair]:
    """Cosine score of every probe x gallery pair except an image with itself.

    Pairs come out probe-major in the given orders; labels compare subject ids.
    """
    for rec in (*probes, *gallery):
        if rec.image_id not in embeddings:
            raise MissingDataError(f"no embedding for image {rec.image_id!r}")

    def unit(records: Sequence[FaceRecord]) -> np.ndarray:
        if not records:
            return np.zeros((0, 0))
        m = np.stack([np.asarray(embeddings[r.image_id], dtype=np.float64) for r in records])
        norms = np.linalg.norm(m, axis=1)
        zero = np.flatnonzero(norms == 0)
        if len(zero):
            raise NumericError(f"embedding of {records[zero[0]].image_id!r} has zero norm")
        return m / norms[:, None]

    p, g = unit(probes), unit(gallery)
    if p.size and g.size and p.shape[1] != g.shape[1]:
        raise ValidationError(f"embedding dimensions differ: {p.shape[1]} vs {g.shape[1]}")
    scores = np.clip(p @ g.T, -1.0, 1.0) if p.size and g.size else np.zeros((len(probes), len(gallery)))
    pairs = []
    for i, a in enumerate(probes):
        for j, b in enumerate(gallery):
            if a.image_id == b.image_id:
                continue
            label = MATED if a.subject_id == b.subject_id else NONMATED
            pairs.append(ScoredPair(a.image_id, b.image_id, label, float(scores[i, j])))
    return pairs


def roc(pairs: Sequence[ScoredPair]) -> RocCurve:
    """Exact step ROC: one point per distinct score, accepting ``score >= threshold``."""
    scores = np.array([p.score for p in pairs], dtype=np.float64)
    mated = np.array([p.mated for p in pairs], dtype=bool)
    n_m, n_n = int(mated.sum()), int((~mated).sum())
    if n_m == 0 or n_n == 0:
        raise EvaluationError(f"ROC needs both classes, got {n_m} mated and {n_n} nonmated pairs")
    order = np.argsort(-scores, kind="stable")
    s, m = scores[order], mated[order]
    tp = np.cumsum(m)
    fp = np.cumsum(~m)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tps = np.concatenate([[0], tp[ends]]).astype(np.int64)
    fps = np.concatenate([[0], fp[ends]]).astype(np.int64)
    thresholds = np.concatenate([[np.inf], s[ends]])
    # trapezoid area in integer units, divided once
    area2 = int(np.sum((fps[1:] - fps[:-1]) * (tps[1:] + tps[:-1])))
    auc = area2 / (2 * n_m * n_n)
    points = [(f / n_n, t / n_m, float(th)) for f, t, th in zip(fps.tolist(), tps.tolist(), thresholds)]
    return RocCurve(points, auc, n_m, n_n)


def split_generated(real: DatasetManifest, generated: DatasetManifest) -> tuple[list[FaceRecord], list[FaceRecord]]:
    """``(expand, synth)``: generated rows labelled with a real subject id are expanded images."""
    real_subjects = set(real.subjects())
    expand = [r for r in generated.records if r.subject_id in real_subjects]
    synth = [r for r in generated.records if r.subject_id not in real_subjects]
    return expand, synth


def experiment_sets(
    name: str, real: DatasetManifest, generated: Optional[DatasetManifest]
) -> tuple[list[FaceRecord], list[FaceRecord]]:
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; expected one of {', '.join(EXPERIMENTS)}")
    real_recs = sorted(real.records, key=lambda r: r.image_id)
    if name == "real_vs_real":
        probes, gallery = real_recs, real_recs
    else:
        if generated is None:
            raise ValidationError(f"{name} needs a generated manifest")
        expand, synth = split_generated(real, generated)
        expand.sort(key=lambda r: r.image_id)
        synth.sort(key=lambda r: r.image_id)
        if name == "synth_vs_synth":
            probes, gallery = synth, synth
        elif name == "expand_vs_expand":
            probes, gallery = expand, expand
        else:
            probes, gallery = expand, real_recs
    if not probes or not gallery:
        raise ValidationError(f"{name}: no images to score")
    return probes, gallery


def run_experiment(
    name: str,
    real_manifest: DatasetManifest,
    synth_manifest: Optional[DatasetManifest] = None,
    provider: str = "file",
    out_csv: Optional[str | os.PathLike] = None,
    dump_scores: Optional[str | os.PathLike] = None,
) -> tuple[RocCurve, list[ScoredPair]]:
    """Score one pairing and optionally write its ROC (and per-pair scores) as CSV."""
    probes, gallery = experiment_sets(name, real_manifest, synth_manifest)
    raw = embed_records([*probes, *gallery], provider)
    ids = sorted(raw)
    dims = {raw[i].shape for i in ids}
    if len(dims) != 1:
        raise ValidationError(f"embedding shapes differ: {sorted(dims)}")
    normed = minmax_normalize([raw[i] for i in ids])
    embeddings = dict(zip(ids, normed))
    pairs = score_pairs(probes, gallery, embeddings)
    curve = roc(pairs)
    if out_csv is not None:
        write_roc_csv(curve, out_csv)
    if dump_scores is not None:
        write_scores_csv(pairs, dump_scores)
    return curve, pairs


def _atomic_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    tmp.write_text(text, newline="")
    os.replace(tmp, path)
    return path


def write_roc_csv(curve: RocCurve, path: str | os.PathLike) -> Path:
    lines = ["threshold,far,tar"]
    lines += [f"{th!r},{far!r},{tar!r}" for far, tar, th in curve.points]
    lines.append(f"# auc={curve.auc!r}")
    return _atomic_text(path, "\n".join(lines) + "\n")


def read_roc_csv(path: str | os.PathLike) -> tuple[list[tuple[float, float, float]], float]:
    """``(points as (far, tar, threshold), auc)`` from a file written by :func:`write_roc_csv`."""
    points, auc = [], None
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0] == "threshold":
                continue
            if row[0].startswith("# auc="):
                auc = float(row[0].split("=", 1)[1])
                continue
            th, far, tar = map(float, row)
            points.append((far, tar, th))
    if auc is None:
        raise ValidationError(f"{path}: missing '# auc=' line")
    return points, auc


def write_scores_csv(pairs: Sequence[ScoredPair], path: str | os.PathLike) -> Path:
    lines = ["probe_image_id,gallery_image_id,label,score"]
    lines += [f"{p.probe_image_id},{p.gallery_image_id},{p.label},{p.score!r}" for p in pairs]
    return _atomic_text(path, "\n".join(lines) + "\n")
