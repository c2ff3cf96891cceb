import numpy as np
import pytest

from srefi import mesh
from srefi.errors import GeometryError, TopologyError
from srefi.kernels import rasterize_labels
from srefi.landmarks import EYES, JAW, MOUTH, NOSE, mean_shape


def _area(points, tris):
    return float(np.abs(mesh.signed_area(points[tris])).sum())


def test_three_points_one_triangle():
    v, t = mesh.triangulate_initial(np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 3.0]]))
    assert t.shape == (1, 3)
    assert mesh.signed_area(v[t])[0] == 6.0


def test_square_two_triangles_share_diagonal():
    v, t = mesh.triangulate_initial(np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]))
    assert len(t) == 2
    shared = set(t[0]) & set(t[1])
    assert len(shared) == 2 and shared in ({0, 2}, {1, 3})


def test_collinear_rejected():
    with pytest.raises(GeometryError, match="collinear"):
        mesh.triangulate_initial(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [5.0, 5.0]]))


def test_euler_count_on_fixtures(landmark_sets):
    for pts in landmark_sets:
        v, t = mesh.triangulate_initial(pts, 512)
        edges = mesh._edge_map(t)
        boundary = {x for e, ts in edges.items() if len(ts) == 1 for x in e}
        assert len(t) == 2 * len(v) - 2 - len(boundary)
        assert len(boundary) == 8
        assert np.all(mesh.signed_area(v[t]) > 0)


def test_frame_anchors():
    a = mesh.frame_anchors(8)
    assert a.tolist() == [[-0.5, -0.5], [3.5, -0.5], [7.5, -0.5], [7.5, 3.5], [7.5, 7.5], [3.5, 7.5], [-0.5, 7.5], [-0.5, 3.5]]


def test_dual_of_single_triangle():
    v = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
    dv, dt = mesh.centroid_dual(v, np.array([[0, 1, 2]]))
    assert dv[0].tolist() == [2.0, 2.0]
    assert len(dv) == 4
    assert _area(dv, dt) == pytest.approx(18.0, rel=1e-12)


def test_dual_of_two_triangles_links_centroids():
    v = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    dv, dt = mesh.centroid_dual(v, t)
    assert any({0, 1} <= set(row) for row in dt.tolist())
    assert _area(dv, dt) == pytest.approx(16.0, rel=1e-12)
    assert np.all(mesh.signed_area(dv[dt]) > 0)


def test_non_manifold_rejected():
    v = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [1.0, -1.0], [1.0, 2.0]])
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 1, 4]])
    with pytest.raises(TopologyError):
        mesh.centroid_dual(v, t)


def test_centroids_are_vertex_means(landmark_sets):
    m = mesh.build_mesh(landmark_sets[0], 512)
    iv, it = m.initial_vertices, m.initial_triangles
    assert np.allclose(m.dual_vertices[: m.n_centroids], iv[it].mean(axis=1), atol=0, rtol=0)


def test_area_conserved_and_tiles(landmark_sets):
    for pts in landmark_sets:
        m = mesh.build_mesh(pts, 512)
        a0 = _area(m.initial_vertices, m.initial_triangles)
        a1 = _area(m.dual_vertices, m.dual_triangles)
        assert abs(a1 - a0) <= 1e-6 * a0
        assert a0 == pytest.approx(512.0 ** 2, rel=1e-12)
        assert np.all(mesh.signed_area(m.triangle_coords()) > 0)


def test_dual_vertices_avoid_landmarks(landmark_sets):
    for pts in landmark_sets:
        m = mesh.build_mesh(pts, 512)
        d = np.linalg.norm(m.dual_vertices[:, None, :] - pts[None, :, :], axis=2)
        assert d.min() > 0.0


def test_region_labels(landmark_sets):
    for pts in landmark_sets:
        m = mesh.build_mesh(pts, 512)
        assert m.region_labels.shape == (len(m.dual_triangles),)
        assert set(np.unique(m.region_labels)) <= set(range(len(mesh.REGIONS)))
        for name in mesh.KEY_REGIONS:
            tris = m.region_triangles(name)
            assert tris.size > 0
            assert len(mesh._components(tris, m.dual_triangles)) == 1
        centres = m.triangle_coords().mean(axis=1)
        corner = np.argmin(np.linalg.norm(centres, axis=1))
        assert mesh.REGIONS[m.region_labels[corner]] == "outer"
        # the triangle containing the mouth centre is labelled mouth
        mouth_c = pts[list(MOUTH)].mean(axis=0)
        owner = rasterize_labels(m.triangle_coords(), 512, 512)[int(round(mouth_c[1])), int(round(mouth_c[0]))]
        assert mesh.REGIONS[m.region_labels[owner]] == "mouth"


def test_polygon_signed_distance():
    square = mesh._convex_hull(np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0], [0.0, 4.0]]))
    d = mesh.polygon_signed_distance(np.array([[2.0, 2.0], [6.0, 2.0], [4.0, 1.0]]), square)
    assert d.tolist() == [-2.0, 2.0, 0.0]


def test_mesh_deterministic(landmark_sets):
    a = mesh.build_mesh(landmark_sets[3], 512)
    b = mesh.build_mesh(landmark_sets[3].copy(), 512)
    assert np.array_equal(a.dual_vertices, b.dual_vertices)
    assert np.array_equal(a.dual_triangles, b.dual_triangles)
    assert np.array_equal(a.region_labels, b.region_labels)


def test_dual_vertices_for_other_face(landmark_sets):
    m = mesh.build_mesh(landmark_sets[0], 512)
    assert np.array_equal(m.dual_vertices_for(landmark_sets[0]), m.dual_vertices)
    other = m.dual_vertices_for(landmark_sets[1])
    assert other.shape == m.dual_vertices.shape
    assert not np.array_equal(other, m.dual_vertices)


def test_subset_option():
    pts = mean_shape(256)
    subset = [i for i in range(68) if i not in JAW[1:-1]]
    m = mesh.build_mesh(pts, 256, subset=subset)
    assert len(m.initial_vertices) == len(subset) + 8
    with pytest.raises(GeometryError, match="subset"):
        mesh.build_mesh(pts, 256, subset=[i for i in range(68) if i != EYES[0]])
    assert all(i in subset for i in NOSE)


def test_svg_export():
    m = mesh.build_mesh(mean_shape(128), 128)
    svg = mesh.mesh_to_svg(m, "face.png")
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert svg.count("<polygon") == len(m.dual_triangles)
    assert 'data-region="mouth"' in svg and "face.png" in svg
