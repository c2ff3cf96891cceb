import hashlib
import logging

import numpy as np
import pytest

from srefi import dataset, pipeline
from srefi.dataset import DatasetManifest
from srefi.errors import CapacityError, ConfigError, InsufficientDonorsError
from srefi.mesh import KEY_REGIONS


def _cfg(**kw):
    base = dict(images_per_identity=1, proximal_n=3, embedding_provider="desk", min_group_size=5, master_seed=11)
    base.update(kw)
    return pipeline.RunConfig(**base)


def test_config_defaults_and_validation():
    c = pipeline.RunConfig()
    assert c.pyramid_levels == 4 and c.c_donor == 8 and c.proximal_n == 10
    assert pipeline.DEFAULT_IMAGE_SIZE % 2 ** (c.pyramid_levels - 1) == 0
    assert pipeline.RunConfig(mode="expand").mode == "expand_real_id"
    bad = [
        dict(mode="morph"), dict(images_per_identity=0), dict(c_donor=4), dict(c_donor=17),
        dict(pyramid_levels=0), dict(master_seed=-1), dict(master_seed=2**64), dict(embedding_provider="cnn"),
        dict(image_size=100), dict(on_degenerate="maybe"), dict(identity_count=0),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            pipeline.RunConfig(**kw)
    pipeline.RunConfig(image_size=512, pyramid_levels=4, master_seed=2**64 - 1)


def test_derive_seed_matches_blake2b():
    want = int.from_bytes(hashlib.blake2b(b"7|s000|3", digest_size=8).digest(), "little")
    assert pipeline.derive_seed(7, "s000", 3) == want
    assert pipeline.derive_seed(7, "s000", 3) != pipeline.derive_seed(8, "s000", 3)


def test_expand_counts_and_provenance(small_manifest):
    recs = pipeline.run_expand(small_manifest, _cfg(mode="expand", images_per_identity=2, c_donor=5))
    assert len(recs) == len(small_manifest.subjects()) * 2
    for r in recs:
        base = small_manifest.record(r.base_image_id)
        assert base.subject_id == r.identity_label
        own = {x.image_id for x in small_manifest.images_of(r.identity_label)} - {r.base_image_id}
        assert set(r.donor_image_ids) <= own
        assert set(r.region_donors) == set(KEY_REGIONS)
        assert r.image.shape == (128, 128, 3) and r.image.dtype == np.uint8
        assert r.seed_used == pipeline.derive_seed(11, r.identity_label, int(r.synthetic_image_id[-3:]))


def test_expand_skip_or_abort(small_manifest, caplog):
    recs = [r for r in small_manifest.records if not (r.subject_id == "s000" and r.image_id != "s000_00")]
    m = DatasetManifest.from_records(recs)
    with caplog.at_level(logging.WARNING):
        out = pipeline.run_expand(m, _cfg(mode="expand", c_donor=5))
    assert "s000" not in {r.identity_label for r in out}
    assert any("s000" in msg for msg in caplog.messages)
    with pytest.raises(InsufficientDonorsError):
        pipeline.run_expand(m, _cfg(mode="expand", c_donor=5, on_degenerate="abort"))


def test_synth_identity_coherence(small_manifest):
    recs = pipeline.run_synth(small_manifest, _cfg(identity_count=2, images_per_identity=2, c_donor=5))
    assert len(recs) == 4
    labels = sorted({r.identity_label for r in recs})
    assert len(labels) == 2
    assert not set(labels) & set(small_manifest.subjects())
    for lab in labels:
        mine = [r for r in recs if r.identity_label == lab]
        assert mine[0].region_donors == mine[1].region_donors
        assert mine[0].base_image_id != mine[1].base_image_id
        base_subject = small_manifest.record(mine[0].base_image_id).subject_id
        for r in mine:
            assert all(small_manifest.record(d).subject_id != base_subject for d in r.donor_image_ids)


def test_synth_capacity_error(small_manifest):
    with pytest.raises(CapacityError, match="female/caucasian"):
        pipeline.run_synth(small_manifest, _cfg(proximal_n=10))


def test_synth_seed_changes_assignment(small_manifest):
    a = pipeline.run_synth(small_manifest, _cfg(master_seed=1))
    b = pipeline.run_synth(small_manifest, _cfg(master_seed=2))
    assert a != b


def test_synth_labels_avoid_collisions():
    from srefi.dataset import FaceRecord

    recs = [FaceRecord("i", "synth_00000", "male", "c", "", "")]
    labels = pipeline._synth_labels(DatasetManifest.from_records(recs), 2)
    assert labels == ["xsynth_00000", "xsynth_00001"]


def test_write_outputs_layout_and_round_trip(small_manifest, tmp_path):
    recs = pipeline.run_synth(small_manifest, _cfg(identity_count=2, images_per_identity=1, c_donor=5))
    recs.append(pipeline.run_synth(small_manifest, _cfg(identity_count=2, images_per_identity=2, c_donor=5))[3])
    path = pipeline.write_outputs(recs, tmp_path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    dirs = sorted(p.name for p in tmp_path.iterdir() if p.is_dir())
    assert dirs == ["synth_00000", "synth_00001"]
    assert len(list(tmp_path.glob("*/*.png"))) == 3
    back = pipeline.read_outputs(path)
    assert back == sorted(recs, key=lambda r: r.synthetic_image_id)
    m = dataset.load_manifest(path)
    for r in m.records:
        face = dataset.load_face(r)
        assert np.array_equal(face.image, next(x.image for x in recs if x.synthetic_image_id == r.image_id))


def test_write_outputs_empty(tmp_path):
    path = pipeline.write_outputs([], tmp_path)
    assert path.read_text() == ",".join(dataset.MANIFEST_COLUMNS) + "\n"
    assert pipeline.read_outputs(path) == []


def test_run_is_deterministic(small_manifest, tmp_path):
    cfg = _cfg(identity_count=2, images_per_identity=1, c_donor=6)
    a = pipeline.write_outputs(pipeline.run(small_manifest, cfg), tmp_path / "a")
    b = pipeline.write_outputs(pipeline.run(small_manifest, cfg), tmp_path / "b")
    assert a.read_bytes() == b.read_bytes()
    for p in sorted((tmp_path / "a").glob("*/*.png")):
        assert p.read_bytes() == (tmp_path / "b" / p.relative_to(tmp_path / "a")).read_bytes()


def test_stage_dumps(small_manifest, tmp_path):
    cfg = _cfg(dump_stages=True, export_mesh_svg=True, c_donor=5)
    rec = pipeline.run_synth(small_manifest, cfg)[0]
    pipeline.write_outputs([rec], tmp_path)
    pipeline.dump_stages(rec, tmp_path, 4)
    svg = pipeline.export_mesh_svg(rec, tmp_path)
    stage = tmp_path / "_stages" / rec.synthetic_image_id
    assert sorted(p.name for p in stage.iterdir()) == ["laplacian_0.png", "laplacian_1.png", "laplacian_2.png", "laplacian_3.png", "mosaic.png"]
    assert svg.exists() and svg.read_text().startswith("<svg")
