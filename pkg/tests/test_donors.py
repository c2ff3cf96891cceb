import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from srefi import donors
from srefi.dataset import DatasetManifest, FaceRecord
from srefi.errors import CapacityError, ConfigError, InsufficientDonorsError, MissingDataError, NumericError, ShapeError


def _manifest(counts):
    """counts: {subject: n_images}; everybody in one group."""
    recs = [
        FaceRecord(f"{s}_{i}", s, "female", "asian", f"{s}_{i}.png", f"{s}_{i}.txt")
        for s, n in counts.items() for i in range(n)
    ]
    return DatasetManifest.from_records(recs)


def _index(means: dict[str, np.ndarray]) -> donors.EmbeddingIndex:
    per_image = {f"{s}_0": np.asarray(v, dtype=float) for s, v in means.items()}
    return donors.EmbeddingIndex(len(next(iter(means.values()))), per_image, {s: np.asarray(v, float) for s, v in means.items()})


def test_cosine_examples():
    assert donors.cosine_similarity([3.0, -1.0], [3.0, -1.0]) == 1.0
    assert donors.cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert donors.cosine_similarity([1.0, 2.0, 2.0], [2.0, 1.0, 2.0]) == pytest.approx(8 / 9, abs=1e-15)


def test_cosine_errors():
    with pytest.raises(NumericError):
        donors.cosine_similarity([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ShapeError):
        donors.cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ConfigError):
        donors.similarity("euclidean")


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 7, elements=finite), arrays(np.float64, 7, elements=finite), st.floats(1e-3, 1e3))
def test_cosine_properties(a, b, lam):
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    s = donors.cosine_similarity(a, b)
    assert -1.0 <= s <= 1.0
    assert s == donors.cosine_similarity(b, a)
    assert abs(donors.cosine_similarity(a, lam * b) - s) < 1e-12
    assert abs(donors.cosine_similarity(a, lam * a) - 1.0) < 1e-12


def test_subject_means():
    m = _manifest({"a": 2, "b": 1})
    per = {"a_0": np.array([0.0, 0.0]), "a_1": np.array([2.0, 4.0]), "b_0": np.array([5.0, 1.0])}
    means = donors.subject_means(per, m)
    assert means["a"].tolist() == [1.0, 2.0] and means["b"].tolist() == [5.0, 1.0]
    with pytest.raises(MissingDataError):
        donors.subject_means({"a_0": per["a_0"]}, m)


def test_subject_means_match_naive_sum():
    rng = np.random.default_rng(0)
    m = _manifest({f"s{k}": 3 for k in range(5)})
    per = {r.image_id: rng.normal(size=16) for r in m.records}
    means = donors.subject_means(per, m)
    for s in m.subjects():
        naive = np.zeros(16)
        for i in range(3):
            naive = naive + per[f"{s}_{i}"]
        assert np.allclose(means[s], naive / 3, atol=1e-14)


def test_pairwise_mean_fixed_order():
    vs = [np.array([1e16]), np.array([1.0]), np.array([-1e16]), np.array([1.0])]
    # ((1e16 + 1) + (-1e16 + 1)) / 4 under pairwise order
    assert donors._pairwise_mean(vs)[0] == ((1e16 + 1.0) + (-1e16 + 1.0)) / 4


def test_top_n_examples():
    idx = _index({"base": [1, 0], "near": [1, 0.1], "side": [0, 1], "far": [-1, 0]})
    assert donors.top_n_proximal(idx, "base", ["base", "near", "side", "far"], 2) == ["near", "side"]
    idx2 = _index({"a": [1, 0], "b": [0, 1]})
    assert donors.top_n_proximal(idx2, "a", ["a", "b"], 1) == ["b"]
    with pytest.raises(CapacityError):
        donors.top_n_proximal(idx2, "a", ["a", "b"], 2)


def test_top_n_ties_and_scaling():
    idx = _index({"base": [1, 0], "z": [1, 1], "y": [1, -1], "x": [2, 2]})
    assert donors.top_n_proximal(idx, "base", list(idx.per_subject_mean), 3) == ["x", "y", "z"]
    scaled = _index({"base": [5, 0], "z": [1, 1], "y": [7, -7], "x": [0.5, 0.5]})
    assert donors.top_n_proximal(scaled, "base", list(scaled.per_subject_mean), 3) == ["x", "y", "z"]


def test_expand_pool():
    m = _manifest({"a": 4, "b": 2})
    base = m.record("a_1")
    pool = donors.build_donor_pool(m, None, base, donors.EXPAND)
    assert pool.image_ids == ["a_0", "a_2", "a_3"]
    single = _manifest({"a": 1, "b": 2})
    with pytest.raises(InsufficientDonorsError):
        donors.build_donor_pool(single, None, single.record("a_0"), donors.EXPAND)


def test_synth_pool():
    m = _manifest({f"s{k}": 2 for k in range(5)})
    vecs = {"s0": [1, 0, 0], "s1": [0.9, 0.1, 0], "s2": [0, 1, 0], "s3": [0.8, 0, 0.3], "s4": [0.7, 0.7, 0]}
    idx = _index(vecs)
    expected = donors.top_n_proximal(idx, "s0", m.subjects(), 3)
    pool = donors.build_donor_pool(m, idx, m.record("s0_0"), donors.SYNTH, 3)
    assert pool.pool_subject_count == 3
    assert pool.image_ids == [f"{s}_{i}" for s in expected for i in range(2)]
    assert all(c.subject_id != "s0" for c in pool.candidates)
    small = _manifest({"a": 1, "b": 1})
    with pytest.raises(CapacityError):
        donors.build_donor_pool(small, _index({"a": [1, 0], "b": [0, 1]}), small.record("a_0"), donors.SYNTH, 3)


def test_desk_embedding():
    rng = np.random.default_rng(0)
    img = rng.integers(20, 230, (64, 64, 3)).astype(np.uint8)
    v = donors.desk_embedding(img)
    assert v.shape == (1024,) and abs(v.mean()) < 1e-12
    assert np.array_equal(v, donors.desk_embedding(img.copy()))
    dark = np.floor(img * 0.5).astype(np.uint8)
    assert donors.cosine_similarity(v, donors.desk_embedding(dark)) >= 0.999
    with pytest.raises(NumericError):
        donors.desk_embedding(np.full((64, 64, 3), 128, np.uint8))
    with pytest.raises(ShapeError):
        donors.desk_embedding(np.zeros((64, 48, 3), np.uint8))


def test_build_index(small_manifest):
    idx = donors.build_index(small_manifest, "desk")
    assert idx.dimension == 1024
    assert set(idx.per_image) == {r.image_id for r in small_manifest.records}
    assert set(idx.per_subject_mean) == set(small_manifest.subjects())
    with pytest.raises(ConfigError):
        donors.build_index(small_manifest, "cnn")
