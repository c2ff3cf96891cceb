import hashlib

import numpy as np
import pytest

from srefi import composite, fixtures
from srefi.dataset import FaceRecord
from srefi.donors import EXPAND, DonorPool
from srefi.errors import ConfigError, EmptyRegionError, GeometryError, InsufficientDonorsError
from srefi.mesh import KEY_REGIONS, REGIONS, build_mesh


def _pool(n, subject="s"):
    recs = [FaceRecord(f"{subject}_{i:02d}", subject, "male", "c", "", "") for i in range(n)]
    return DonorPool("base", EXPAND, recs, 1)


@pytest.fixture(scope="module")
def face_mesh():
    return build_mesh(fixtures.image_landmarks("s001", 0, 128), 128)


def test_budget_constants():
    assert (composite.MIN_BUDGET, composite.DEFAULT_BUDGET, composite.MAX_BUDGET) == (5, 8, 16)
    composite.validate_budget(5)
    composite.validate_budget(16)
    for bad in (4, 17):
        with pytest.raises(ConfigError):
            composite.validate_budget(bad)


def test_assign_budget_seven_of_ten(face_mesh):
    a = composite.assign_donors(face_mesh, _pool(10), 7, seed=99)
    assert a.c_donor == 7
    labels = face_mesh.region_labels
    for rid, name in enumerate(KEY_REGIONS):
        used = {a.triangle_donors[t] for t in np.nonzero(labels == rid)[0]}
        assert used == {a.region_donors[name]}
    assert a.region_donors["left_eye"] == a.region_donors["right_eye"]
    assert len({a.region_donors[r] for r in ("left_eye", "nose", "mouth")}) == 3


def test_assign_small_pool_uses_all(face_mesh):
    assert composite.assign_donors(face_mesh, _pool(5), 10, seed=1).c_donor == 5


def test_assign_deterministic_and_seed_sensitive(face_mesh):
    a = composite.assign_donors(face_mesh, _pool(10), 8, seed=5)
    b = composite.assign_donors(face_mesh, _pool(10), 8, seed=5)
    c = composite.assign_donors(face_mesh, _pool(10), 8, seed=6)
    assert a == b
    assert a.triangle_donors != c.triangle_donors


def test_assign_split_eyes(face_mesh):
    a = composite.assign_donors(face_mesh, _pool(10), 8, seed=5, split_eyes=True)
    assert a.region_donors["left_eye"] != a.region_donors["right_eye"]


def test_assign_pinned_key_donors(face_mesh):
    key = {"eyes": "s_03", "nose": "s_07", "mouth": "s_01"}
    for seed in (1, 2, 3):
        a = composite.assign_donors(face_mesh, _pool(10), 7, seed=seed, key_donors=key)
        assert a.region_donors == {"left_eye": "s_03", "right_eye": "s_03", "nose": "s_07", "mouth": "s_01"}
        assert a.c_donor == 7
    with pytest.raises(ConfigError):
        composite.assign_donors(face_mesh, _pool(10), 7, seed=1, key_donors={"eyes": "zz", "nose": "s_0", "mouth": "s_1"})


def test_assign_errors(face_mesh):
    with pytest.raises(ConfigError):
        composite.assign_donors(face_mesh, _pool(10), 4, seed=1)
    with pytest.raises(InsufficientDonorsError):
        composite.assign_donors(face_mesh, _pool(1), 8, seed=1)


def test_affine_exact_on_vertices():
    rng = np.random.default_rng(0)
    for _ in range(50):
        src, dst = rng.uniform(0, 100, (2, 3, 2))
        m = composite.affine_from_triangles(src, dst)
        mapped = np.hstack([src, np.ones((3, 1))]) @ m.T
        assert np.abs(mapped - dst).max() < 1e-9
    with pytest.raises(GeometryError):
        composite.affine_from_triangles(np.array([[0, 0], [1, 1], [2, 2]]), src)


def test_inverse_affines_match_single_solves():
    rng = np.random.default_rng(1)
    t = rng.uniform(0, 200, (40, 3, 2))
    s = t + rng.normal(0, 2, t.shape)
    s[:10] = t[:10] + np.array([3.0, -1.0])
    batch = composite.inverse_affines(t, s)
    single = np.stack([composite.affine_from_triangles(a, b) for a, b in zip(t, s)])
    assert np.array_equal(batch[:10], single[:10])
    assert np.allclose(batch, single, atol=1e-12)


def test_warp_identity_and_translation():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, (32, 32, 3))
    tri = np.array([[2.2, 3.1], [25.7, 4.4], [9.3, 27.9]])
    p = composite.warp_triangle(img, tri, tri)
    assert np.array_equal(p.affine, [[1, 0, 0], [0, 1, 0]])
    assert np.array_equal(p.pixels, img[p.ys, p.xs])
    q = composite.warp_triangle(img, tri, tri + [4.0, 0.0])
    assert np.array_equal(q.affine, [[1, 0, 4], [0, 1, 0]])
    assert np.array_equal(q.pixels, img[q.ys, q.xs - 4])
    canvas = q.paste(np.zeros_like(img))
    assert np.array_equal(canvas[q.ys, q.xs], q.pixels)
    assert canvas.sum() == pytest.approx(q.pixels.sum(), rel=1e-12)


def test_warp_downscale_gradient():
    xs, ys = np.meshgrid(np.arange(16.0), np.arange(16.0))
    img = (3 * xs + 5 * ys)[:, :, None]
    p = composite.warp_triangle(img, np.array([[0, 0], [8, 0], [0, 8.0]]), np.array([[0, 0], [4, 0], [0, 4.0]]))
    # target (x, y) comes from source (2x, 2y)
    expected = 3 * 2 * p.xs + 5 * 2 * p.ys
    assert np.abs(p.pixels[:, 0] - expected).max() <= 1.0
    assert p.ys.size > 0


def test_mean_shift_examples():
    ys, xs = np.array([0, 0, 1]), np.array([0, 1, 0])
    base = np.full((2, 2, 1), 120.0)
    patch = composite.WarpedPatch(0, ys, xs, np.array([[90.0], [110.0], [100.0]]), np.eye(2, 3))
    out = composite.mean_shift_colors(patch, base)
    assert out.pixels[:, 0].tolist() == [110.0, 130.0, 120.0]
    same = composite.WarpedPatch(0, ys, xs, np.full((3, 1), 120.0), np.eye(2, 3))
    assert np.array_equal(composite.mean_shift_colors(same, base).pixels, same.pixels)
    hot = composite.WarpedPatch(0, ys, xs, np.array([[250.0], [90.0], [100.0]]), np.eye(2, 3))
    shifted = composite.mean_shift_colors(hot, np.full((2, 2, 1), 166.6666666666667))
    assert shifted.pixels[0, 0] == 255.0
    empty = composite.WarpedPatch(0, np.array([], int), np.array([], int), np.zeros((0, 1)), np.eye(2, 3))
    with pytest.raises(EmptyRegionError):
        composite.mean_shift_colors(empty, base)


def _smooth_image(seed, size):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.stack([80 + 60 * np.sin(6 * xx + c + rng.uniform(0, 6)) + 40 * yy for c in range(3)], axis=2)
    return np.clip(img + rng.normal(0, 4, img.shape), 0, 255).astype(np.uint8)


def _face(image_id, subject, seed, size=128):
    rec = FaceRecord(image_id, subject, "male", "c", "", "")
    rec.image = _smooth_image(seed, size)
    rec.landmarks = fixtures.image_landmarks(subject, seed, size)
    return rec


def test_self_composite_is_identity():
    base = _face("b", "s", 0)
    m = build_mesh(base.landmarks, 128)
    n = len(m.dual_triangles)
    a = composite.DonorAssignment(["b"] * n, {r: "b" for r in KEY_REGIONS}, 0, ["b"])
    comp = composite.composite_face(base, m, a, {"b": base})
    assert np.abs(comp.mosaic - base.image).max() <= 1.0
    assert comp.masks["b"].all()


def test_masks_partition_and_golden_mosaic():
    base = _face("b", "s", 0)
    donors = {f"d{k}": _face(f"d{k}", f"t{k}", k + 1) for k in range(7)}
    m = build_mesh(base.landmarks, 128)
    pool = DonorPool("b", EXPAND, list(donors.values()), 7)
    a = composite.assign_donors(m, pool, 8, seed=2024)
    assert a.c_donor == 7
    comp = composite.composite_face(base, m, a, donors)
    stack = np.stack([comp.masks[d] for d in comp.order]).astype(int)
    assert np.all(stack.sum(axis=0) == 1)
    again = composite.composite_face(base, m, composite.assign_donors(m, pool, 8, seed=2024), donors)
    assert np.array_equal(comp.mosaic, again.mosaic)
    digest = hashlib.sha256(comp.mosaic_uint8().tobytes()).hexdigest()
    assert digest == GOLDEN_MOSAIC_SHA256


def test_color_shift_layer_means_match():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, (16, 16))
    base = rng.uniform(60, 180, (16, 16, 3))
    layer = rng.uniform(40, 200, (16, 16, 3))
    out = composite.color_shift_layer(layer, base, labels, 4)
    for t in range(4):
        sel = labels == t
        assert np.allclose(out[sel].mean(axis=0), base[sel].mean(axis=0), atol=1.0)


GOLDEN_MOSAIC_SHA256 = "8240ccf3a29c855f2945f0d57bb4d267d1cd0b678a6506eb266d77c3945e4621"
