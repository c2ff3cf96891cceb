"""Landmark triangulation and its centroid dual.

The initial mesh is a Delaunay triangulation of the landmarks plus eight
frame anchors. The dual mesh puts one vertex at the centroid of every
initial triangle; the centroids around each initial vertex form a polygon
which is ear-clipped into dual triangles, and each hull edge is closed off
with the centroid of its triangle. Landmarks therefore never sit on a dual
triangle corner.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .errors import GeometryError, LabelingError, TopologyError
from .landmarks import EYES, LEFT_EYE, MOUTH, NOSE, OUTER_LIP, RIGHT_EYE

REGIONS = ("left_eye", "right_eye", "nose", "mouth", "cheek_jaw", "outer")
KEY_REGIONS = ("left_eye", "right_eye", "nose", "mouth")
LEFT_EYE_ID, RIGHT_EYE_ID, NOSE_ID, MOUTH_ID, CHEEK_ID, OUTER_ID = range(6)

REGION_LANDMARKS = {
    "left_eye": LEFT_EYE,
    "right_eye": RIGHT_EYE,
    "nose": NOSE,
    "mouth": OUTER_LIP,
}

DEFAULT_MARGIN = 2.0


def signed_area(p: np.ndarray) -> np.ndarray:
    """Signed area of triangles ``p`` with shape ``(..., 3, 2)``; CCW (x right, y up) > 0."""
    a, b, c = p[..., 0, :], p[..., 1, :], p[..., 2, :]
    return 0.5 * ((b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0]))


def frame_anchors(image_size: int) -> np.ndarray:
    """Corners and edge midpoints of the pixel frame, clockwise from top-left.

    Anchors sit half a pixel outside the outermost pixel centres so that every
    pixel is strictly inside the anchored hull.
    """
    lo, hi = -0.5, image_size - 0.5
    mid = (image_size - 1) / 2.0
    return np.array(
        [(lo, lo), (mid, lo), (hi, lo), (hi, mid), (hi, hi), (mid, hi), (lo, hi), (lo, mid)],
        dtype=np.float64,
    )


def _canonical(triangles: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    area = signed_area(vertices[tris])
    flip = area < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    # rotate so the smallest index leads; orientation is kept
    for i, t in enumerate(tris):
        k = int(np.argmin(t))
        tris[i] = np.roll(t, -k)
    order = np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))
    return tris[order]


def triangulate_initial(
    landmarks: np.ndarray,
    image_size: Optional[int] = None,
    subset: Optional[Sequence[int]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Delaunay triangulation of ``landmarks[subset]`` plus the frame anchors.

    With ``image_size=None`` no anchors are added. Returns ``(vertices,
    triangles)``; vertex order is the subset order followed by the anchors,
    triangles are CCW and sorted so the result is a pure function of the input.
    """
    pts = np.asarray(landmarks, dtype=np.float64)
    if subset is not None:
        pts = pts[list(subset)]
    if image_size is not None:
        pts = np.vstack([pts, frame_anchors(image_size)])
    if len(pts) < 3:
        raise GeometryError("need at least 3 points to triangulate")
    centred = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        raise GeometryError("landmarks are collinear; cannot triangulate")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise GeometryError(f"triangulation failed: {exc}") from None
    tris = _canonical(tri.simplices, pts)
    area = signed_area(pts[tris])
    if np.any(area <= 0):
        raise GeometryError("triangulation produced a degenerate triangle")
    return pts, tris


# ---------------------------------------------------------------------------
# Centroid dual


def _edge_map(triangles: np.ndarray) -> dict[tuple[int, int], list[int]]:
    edges: dict[tuple[int, int], list[int]] = defaultdict(list)
    for t, (a, b, c) in enumerate(triangles.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            edges[(min(u, v), max(u, v))].append(t)
    return edges


def _ear_clip(poly: list[int], coords: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulate a simple CCW polygon. Picks the best-shaped ear each step."""
    poly = list(poly)
    out: list[tuple[int, int, int]] = []
    while len(poly) > 3:
        best = None
        n = len(poly)
        for i in range(n):
            a, b, c = poly[i - 1], poly[i], poly[(i + 1) % n]
            tri = coords[[a, b, c]]
            if signed_area(tri) <= 0:
                continue
            others = [p for p in poly if p not in (a, b, c)]
            if others and _points_in_triangle(coords[others], tri).any():
                continue
            q = _min_angle(tri)
            if best is None or q > best[0] + 1e-12:
                best = (q, i)
        if best is None:
            raise TopologyError("dual polygon is not simple; cannot triangulate")
        i = best[1]
        out.append((poly[i - 1], poly[i], poly[(i + 1) % n]))
        del poly[i]
    if signed_area(coords[poly]) <= 0:
        raise TopologyError("dual polygon collapsed to a degenerate triangle")
    out.append(tuple(poly))
    return out


def _points_in_triangle(p: np.ndarray, tri: np.ndarray) -> np.ndarray:
    a, b, c = tri
    def cross(u, v, w):
        return (v[0] - u[0]) * (w[:, 1] - u[1]) - (v[1] - u[1]) * (w[:, 0] - u[0])
    d1, d2, d3 = cross(a, b, p), cross(b, c, p), cross(c, a, p)
    return (d1 >= 0) & (d2 >= 0) & (d3 >= 0)


def _min_angle(tri: np.ndarray) -> float:
    best = np.pi
    for i in range(3):
        u = tri[i - 1] - tri[i]
        v = tri[(i + 1) % 3] - tri[i]
        cosang = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        best = min(best, float(np.arccos(np.clip(cosang, -1.0, 1.0))))
    return best


def _fan(v: int, incident: list[int], triangles: np.ndarray) -> tuple[list[int], bool]:
    """Incident triangles of ``v`` in positive angular order; flag says whether the fan closes.

    For a positively oriented ``(v, a, b)`` the next triangle around ``v`` is
    the one that starts with the edge ``v -> b``.
    """
    nxt: dict[int, int] = {}
    prv: dict[int, int] = {}
    for t in incident:
        row = triangles[t].tolist()
        k = row.index(v)
        nxt[t] = row[(k + 1) % 3]
        prv[t] = row[(k + 2) % 3]
    by_next: dict[int, int] = {}
    for t in incident:
        if nxt[t] in by_next:
            raise TopologyError(f"vertex {v} is non-manifold")
        by_next[nxt[t]] = t
    prev_values = set(prv.values())
    starts = [t for t in incident if nxt[t] not in prev_values]
    if len(starts) > 1:
        raise TopologyError(f"vertex {v} is non-manifold")
    closed = not starts
    t = starts[0] if starts else min(incident)
    order = [t]
    while True:
        t2 = by_next.get(prv[t])
        if t2 is None or t2 == order[0]:
            break
        if t2 in order:
            raise TopologyError(f"vertex {v} is non-manifold")
        order.append(t2)
        t = t2
    if len(order) != len(incident):
        raise TopologyError(f"vertex {v} is non-manifold")
    return order, closed


@dataclass(frozen=True)
class DualTopology:
    """How dual vertices derive from the initial mesh; independent of positions."""

    triangles: np.ndarray  # dual triangles, indices into dual vertices
    n_centroids: int
    hull_vertices: np.ndarray  # initial-mesh vertex index of each trailing dual vertex


def centroid_dual_topology(vertices: np.ndarray, triangles: np.ndarray) -> DualTopology:
    vertices = np.asarray(vertices, dtype=np.float64)
    triangles = np.asarray(triangles, dtype=np.int64)
    edges = _edge_map(triangles)
    for e, ts in edges.items():
        if len(ts) > 2:
            raise TopologyError(f"edge {e} shared by {len(ts)} triangles")
    n_tri = len(triangles)
    centroids = vertices[triangles].mean(axis=1)
    boundary = sorted({v for e, ts in edges.items() if len(ts) == 1 for v in e})
    hull_index = {v: n_tri + k for k, v in enumerate(boundary)}
    coords = np.vstack([centroids, vertices[boundary]]) if boundary else centroids

    incident: dict[int, list[int]] = defaultdict(list)
    for t, row in enumerate(triangles.tolist()):
        for v in row:
            incident[v].append(t)

    dual: list[tuple[int, int, int]] = []
    for v in sorted(incident):
        fan, closed = _fan(v, incident[v], triangles)
        if closed:
            poly = fan
        else:
            if v not in hull_index:
                raise TopologyError(f"vertex {v} has an open fan but is not on the boundary")
            poly = [hull_index[v]] + fan
        if len(poly) >= 3:
            dual.extend(_ear_clip(poly, coords))
    for (a, b), ts in sorted(edges.items()):
        if len(ts) == 1:
            t = ts[0]
            tri = (hull_index[a], hull_index[b], t)
            if signed_area(coords[list(tri)]) < 0:
                tri = (hull_index[b], hull_index[a], t)
            dual.append(tri)
    tris = np.array(dual, dtype=np.int64)
    return DualTopology(triangles=tris, n_centroids=n_tri, hull_vertices=np.array(boundary, dtype=np.int64))


def dual_positions(vertices: np.ndarray, triangles: np.ndarray, topo: DualTopology) -> np.ndarray:
    vertices = np.asarray(vertices, dtype=np.float64)
    centroids = vertices[np.asarray(triangles)].mean(axis=1)
    return np.vstack([centroids, vertices[topo.hull_vertices]])


def centroid_dual(vertices: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid-dual triangulation of ``(vertices, triangles)``.

    Returns ``(dual_vertices, dual_triangles)``. The first ``len(triangles)``
    dual vertices are the centroids in triangle order; the rest are the
    boundary vertices of the input, ascending by index.
    """
    topo = centroid_dual_topology(vertices, triangles)
    return dual_positions(vertices, triangles, topo), topo.triangles


# ---------------------------------------------------------------------------
# Region labelling


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """CCW convex hull (monotone chain)."""
    pts = sorted(map(tuple, np.asarray(points, dtype=np.float64)))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def polygon_signed_distance(points: np.ndarray, hull: np.ndarray) -> np.ndarray:
    """Distance from ``points`` to a convex CCW polygon; negative inside."""
    points = np.atleast_2d(points)
    a = hull
    b = np.roll(hull, -1, axis=0)
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    seg_len2 = (ab**2).sum(axis=1)
    t = np.clip((ap * ab[None]).sum(axis=2) / seg_len2[None], 0.0, 1.0)
    nearest = a[None] + t[..., None] * ab[None]
    dist = np.sqrt(((points[:, None, :] - nearest) ** 2).sum(axis=2)).min(axis=1)
    cross = ab[None, :, 0] * ap[..., 1] - ab[None, :, 1] * ap[..., 0]
    inside = (cross >= 0).all(axis=1)
    return np.where(inside, -dist, dist)


def _components(members: np.ndarray, triangles: np.ndarray) -> list[list[int]]:
    member_set = set(members.tolist())
    adj: dict[int, set[int]] = defaultdict(set)
    for (a, b), ts in _edge_map(triangles).items():
        if len(ts) == 2 and ts[0] in member_set and ts[1] in member_set:
            adj[ts[0]].add(ts[1])
            adj[ts[1]].add(ts[0])
    seen: set[int] = set()
    comps = []
    for m in sorted(member_set):
        if m in seen:
            continue
        stack, comp = [m], []
        seen.add(m)
        while stack:
            x = stack.pop()
            comp.append(x)
            for y in adj[x]:
                if y not in seen:
                    seen.add(y)
                    stack.append(y)
        comps.append(sorted(comp))
    return comps


def label_regions(
    dual_vertices: np.ndarray,
    dual_triangles: np.ndarray,
    landmarks: np.ndarray,
    margin: float = DEFAULT_MARGIN,
    subset: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Region id (index into :data:`REGIONS`) for every dual triangle.

    A triangle belongs to a key region when its centroid lies inside that
    region's landmark hull dilated by ``margin``; the deepest region wins when
    dilations overlap. Only the largest edge-connected piece of each key region
    is kept, stray pieces fall back to ``cheek_jaw``.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    centres = dual_vertices[dual_triangles].mean(axis=1)
    face_pts = landmarks if subset is None else landmarks[list(subset)]
    face_hull = _convex_hull(face_pts)
    labels = np.full(len(dual_triangles), CHEEK_ID, dtype=np.int64)
    labels[polygon_signed_distance(centres, face_hull) > 0] = OUTER_ID

    dists = np.stack(
        [polygon_signed_distance(centres, _convex_hull(landmarks[list(REGION_LANDMARKS[r])])) for r in KEY_REGIONS],
        axis=1,
    )
    best = np.argmin(dists, axis=1)
    hit = dists[np.arange(len(best)), best] <= margin
    labels[hit] = best[hit]

    for rid, name in enumerate(KEY_REGIONS):
        members = np.nonzero(labels == rid)[0]
        if members.size == 0:
            raise LabelingError(f"no dual triangle falls in the {name} region")
        comps = _components(members, dual_triangles)
        if len(comps) > 1:
            keep = max(comps, key=lambda c: (len(c), -c[0]))
            for comp in comps:
                if comp is not keep:
                    labels[comp] = CHEEK_ID
    return labels


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceMesh:
    image_size: int
    landmarks: np.ndarray
    subset: tuple[int, ...]
    initial_vertices: np.ndarray
    initial_triangles: np.ndarray
    topology: DualTopology
    dual_vertices: np.ndarray
    region_labels: np.ndarray
    margin: float = DEFAULT_MARGIN
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dual_triangles(self) -> np.ndarray:
        return self.topology.triangles

    @property
    def n_centroids(self) -> int:
        return self.topology.n_centroids

    def triangle_coords(self) -> np.ndarray:
        return self.dual_vertices[self.dual_triangles]

    def region_triangles(self, name: str) -> np.ndarray:
        return np.nonzero(self.region_labels == REGIONS.index(name))[0]

    def region_vertices(self, name: str) -> np.ndarray:
        return np.unique(self.dual_triangles[self.region_triangles(name)])

    def dual_vertices_for(self, landmarks: np.ndarray) -> np.ndarray:
        """Dual vertex positions of another face under this mesh's topology."""
        landmarks = np.asarray(landmarks, dtype=np.float64)
        pts = landmarks[list(self.subset)]
        verts = np.vstack([pts, self.initial_vertices[len(self.subset):]])
        return dual_positions(verts, self.initial_triangles, self.topology)

    def moved(self, dual_vertices: np.ndarray, landmarks: np.ndarray) -> "FaceMesh":
        return replace(self, dual_vertices=np.asarray(dual_vertices, dtype=np.float64), landmarks=landmarks)


def build_mesh(
    landmarks: np.ndarray,
    image_size: int,
    subset: Optional[Sequence[int]] = None,
    margin: float = DEFAULT_MARGIN,
) -> FaceMesh:
    """Initial triangulation, centroid dual and region labels for one face."""
    landmarks = np.asarray(landmarks, dtype=np.float64)
    subset = tuple(range(len(landmarks))) if subset is None else tuple(int(i) for i in subset)
    missing = [i for i in EYES + NOSE + MOUTH if i not in subset]
    if missing:
        raise GeometryError(f"landmark subset must keep eye, nose and mouth points; missing {missing[:5]}")
    verts, tris = triangulate_initial(landmarks, image_size, subset)
    topo = centroid_dual_topology(verts, tris)
    dual = dual_positions(verts, tris, topo)
    labels = label_regions(dual, topo.triangles, landmarks, margin, subset)
    return FaceMesh(
        image_size=image_size,
        landmarks=landmarks.copy(),
        subset=subset,
        initial_vertices=verts,
        initial_triangles=tris,
        topology=topo,
        dual_vertices=dual,
        region_labels=labels,
        margin=margin,
    )


_SVG_COLORS = {
    "left_eye": "#1f77b4",
    "right_eye": "#17becf",
    "nose": "#2ca02c",
    "mouth": "#d62728",
    "cheek_jaw": "#bcbd22",
    "outer": "#7f7f7f",
}


def mesh_to_svg(mesh: FaceMesh, image_href: Optional[str] = None) -> str:
    """SVG overlay: dual triangles filled by region, landmarks as dots."""
    s = mesh.image_size
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
           f'width="{s}" height="{s}" viewBox="0 0 {s} {s}">']
    if image_href:
        out.append(f'<image xlink:href="{image_href}" x="0" y="0" width="{s}" height="{s}"/>')
    for t, tri in enumerate(mesh.triangle_coords()):
        region = REGIONS[mesh.region_labels[t]]
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in tri)
        out.append(
            f'<polygon points="{pts}" fill="{_SVG_COLORS[region]}" fill-opacity="0.35" '
            f'stroke="#000" stroke-width="0.5" data-region="{region}"/>'
        )
    for x, y in mesh.landmarks:
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="#ff00ff"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
