"""Exact convex geometry: polytope clipping, volumes, sphere sampling, rotations.

Polytopes are stored as a vertex array plus oriented face cycles in a flat
CSR-style layout so that clipping a 10000-vertex ellipsoid approximation stays
cheap: per cut, only faces actually crossing the plane are walked in Python,
everything else is classified with vectorized reductions.

All tolerances are absolute on coordinates measured in stencil-cell units.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

MERGE_TOL = 1e-12
GOLDEN_RATIO = (np.sqrt(5.0) + 1.0) / 2.0


class DegenerateClipError(Exception):
    """A cut produced a boundary that could not be closed into a valid polytope."""


class HullError(Exception):
    """Convex hull construction degenerated (bad point cloud)."""


@dataclass(frozen=True)
class HalfSpace:
    """Region {p : normal . p - offset < 0}; ``normal`` must be a unit vector."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if n.shape != (3,):
            raise ValueError("normal must be a 3-vector")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("normal must have unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def complement(self) -> "HalfSpace":
        """The opposite side of the same plane."""
        return HalfSpace(-self.normal, -self.offset)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.normal - self.offset


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoid given by center and positive semi-axes."""

    center: np.ndarray
    semi_axes: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        a = np.asarray(self.semi_axes, dtype=float)
        if c.shape != (3,) or a.shape != (3,):
            raise ValueError("center and semi_axes must be 3-vectors")
        if np.any(a <= 1e-8):
            raise ValueError("semi_axes must exceed 1e-8")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "semi_axes", a)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Analytic interior indicator, vectorized over points of shape (..., 3)."""
        q = (np.asarray(points, dtype=float) - self.center) / self.semi_axes
        return np.einsum("...i,...i->...", q, q) < 1.0


class ConvexPolytope:
    """Bounded convex region as vertices plus outward-oriented face cycles.

    ``face_index`` holds all face vertex indices back to back and
    ``face_start`` delimits the cycles, so face f is
    ``face_index[face_start[f]:face_start[f + 1]]``.
    """

    __slots__ = ("vertices", "face_index", "face_start")

    def __init__(self, vertices, face_index, face_start):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.face_index = np.ascontiguousarray(face_index, dtype=np.int64)
        self.face_start = np.ascontiguousarray(face_start, dtype=np.int64)

    @classmethod
    def from_faces(cls, vertices, faces) -> "ConvexPolytope":
        """Build from a vertex array and a list of index cycles."""
        starts = np.zeros(len(faces) + 1, dtype=np.int64)
        starts[1:] = np.cumsum([len(f) for f in faces])
        flat = np.concatenate([np.asarray(f, dtype=np.int64) for f in faces])
        return cls(np.asarray(vertices, dtype=float), flat, starts)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.face_start) - 1

    def faces(self):
        """List of per-face vertex index arrays."""
        fi, fs = self.face_index, self.face_start
        return [fi[fs[f]:fs[f + 1]] for f in range(self.n_faces)]

    def transformed(self, matrix: np.ndarray) -> "ConvexPolytope":
        """Apply an orthogonal map to the vertices, fixing face orientation."""
        q = np.asarray(matrix, dtype=float)
        verts = self.vertices @ q.T
        if np.linalg.det(q) > 0:
            return ConvexPolytope(verts, self.face_index.copy(), self.face_start.copy())
        # reflections invert the orientation of every cycle
        return ConvexPolytope.from_faces(verts, [f[::-1] for f in self.faces()])


def box(lo, hi) -> ConvexPolytope:
    """Axis-aligned box with outward-oriented quad faces."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi <= lo):
        raise ValueError("box must have positive extent")
    corners = np.array([
        [lo[0], lo[1], lo[2]],
        [hi[0], lo[1], lo[2]],
        [lo[0], hi[1], lo[2]],
        [hi[0], hi[1], lo[2]],
        [lo[0], lo[1], hi[2]],
        [hi[0], lo[1], hi[2]],
        [lo[0], hi[1], hi[2]],
        [hi[0], hi[1], hi[2]],
    ])
    faces = [
        [0, 4, 6, 2],  # -x
        [1, 3, 7, 5],  # +x
        [0, 1, 5, 4],  # -y
        [2, 6, 7, 3],  # +y
        [0, 2, 3, 1],  # -z
        [4, 5, 7, 6],  # +z
    ]
    return ConvexPolytope.from_faces(corners, faces)


def unit_cube(center, edge: float) -> ConvexPolytope:
    """Axis-aligned cube of the given edge length around ``center``."""
    if edge <= 0:
        raise ValueError("edge must be positive")
    c = np.asarray(center, dtype=float)
    h = 0.5 * edge
    return box(c - h, c + h)


def _dedup_cycle(cycle):
    """Remove consecutive duplicates from a cyclic index sequence."""
    out = []
    for v in cycle:
        if not out or out[-1] != v:
            out.append(v)
    while len(out) > 1 and out[0] == out[-1]:
        out.pop()
    return out


def clip(poly: ConvexPolytope, half: HalfSpace, tol: float = MERGE_TOL):
    """Intersect ``poly`` with ``half``; returns a polytope or None when empty.

    Every original face is clipped against the plane and a single planar cap
    face is added along the cut. Cut vertices closer than ``tol`` are merged.
    """
    d = poly.vertices @ half.normal - half.offset
    if d.max() <= tol:
        return poly
    if d.min() >= -tol:
        return None

    fi, fs = poly.face_index, poly.face_start
    df = d[fi]
    fmax = np.maximum.reduceat(df, fs[:-1])
    fmin = np.minimum.reduceat(df, fs[:-1])
    keep_mask = fmax <= tol
    drop_mask = fmin >= -tol
    mixed_ids = np.nonzero(~keep_mask & ~drop_mask)[0]
    # kept faces that touch the plane can border dropped faces; their on-plane
    # edges then belong to the cap boundary, so they join the boundary scan
    touch_ids = np.nonzero(keep_mask & (fmax >= -tol))[0]

    verts = poly.vertices
    n_old = len(verts)
    new_pts: list[np.ndarray] = []
    edge_cache: dict[tuple[int, int], int] = {}
    grid: dict[tuple[int, int, int], int] = {}

    def cut_vertex(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        idx = edge_cache.get(key)
        if idx is None:
            t = d[a] / (d[a] - d[b])
            p = verts[a] + t * (verts[b] - verts[a])
            gk = (int(round(p[0] / tol)), int(round(p[1] / tol)), int(round(p[2] / tol)))
            idx = grid.get(gk)
            if idx is None:
                idx = n_old + len(new_pts)
                new_pts.append(p)
                grid[gk] = idx
            edge_cache[key] = idx
        return idx

    clipped_faces: list[list[int]] = []
    for f in mixed_ids:
        cyc = fi[fs[f]:fs[f + 1]]
        m = len(cyc)
        out: list[int] = []
        for k in range(m):
            a = int(cyc[k])
            b = int(cyc[(k + 1) % m])
            da = d[a]
            db = d[b]
            if da <= tol:
                out.append(a)
            if (da < -tol and db > tol) or (da > tol and db < -tol):
                out.append(cut_vertex(a, b))
        out = _dedup_cycle(out)
        if len(out) >= 3:
            clipped_faces.append(out)

    # boundary scan: directed edges whose reverse is absent bound the cap
    edge_set: set[tuple[int, int]] = set()
    scan_faces = list(clipped_faces)
    for f in touch_ids:
        scan_faces.append([int(v) for v in fi[fs[f]:fs[f + 1]]])
    for seq in scan_faces:
        m = len(seq)
        for k in range(m):
            edge_set.add((seq[k], seq[(k + 1) % m]))

    def on_plane(v: int) -> bool:
        return v >= n_old or abs(d[v]) <= tol

    nxt: dict[int, int] = {}
    for (u, w) in edge_set:
        if (w, u) in edge_set:
            continue
        if not (on_plane(u) and on_plane(w)):
            continue
        if w in nxt:
            raise DegenerateClipError("non-manifold cut boundary")
        nxt[w] = u  # reversed edge belongs to the cap

    cap: list[int] | None = None
    while nxt:
        start = next(iter(nxt))
        cyc = [start]
        node = nxt.pop(start)
        while node != start:
            cyc.append(node)
            if node not in nxt:
                raise DegenerateClipError("open cut boundary")
            node = nxt.pop(node)
        cyc = _dedup_cycle(cyc)
        if len(cyc) < 3:
            continue  # zero-area slit, e.g. plane hinging on an edge
        if cap is not None:
            raise DegenerateClipError("multiple cap polygons")
        cap = cyc

    all_new = np.array(new_pts) if new_pts else np.zeros((0, 3))

    if cap is not None:
        # the cap must face outward along the cutting normal
        cap_arr = np.asarray(cap, dtype=np.int64)
        old_sel = cap_arr < n_old
        pts = np.empty((len(cap_arr), 3))
        pts[old_sel] = verts[cap_arr[old_sel]]
        pts[~old_sel] = all_new[cap_arr[~old_sel] - n_old]
        nrm = np.cross(pts, np.roll(pts, -1, axis=0)).sum(axis=0)
        if nrm @ half.normal < 0:
            cap = cap[::-1]
        clipped_faces.append(cap)

    # assemble: kept faces verbatim (vectorized), then walked faces and cap
    counts = np.diff(fs)
    slot_face = np.repeat(np.arange(poly.n_faces), counts)
    kept_slots = keep_mask[slot_face]
    kept_fi = fi[kept_slots]
    kept_counts = counts[keep_mask]

    used_old = np.zeros(n_old, dtype=bool)
    used_old[kept_fi] = True
    for seq in clipped_faces:
        for v in seq:
            if v < n_old:
                used_old[v] = True

    remap = np.full(n_old, -1, dtype=np.int64)
    n_used = int(used_old.sum())
    remap[used_old] = np.arange(n_used)
    new_vertices = np.concatenate([verts[used_old], all_new]) if len(all_new) else verts[used_old].copy()

    face_chunks = [remap[kept_fi]]
    start_list = [np.zeros(1, dtype=np.int64), np.cumsum(kept_counts)]
    offset = int(kept_counts.sum())
    for seq in clipped_faces:
        ids = np.array([remap[v] if v < n_old else n_used + (v - n_old) for v in seq], dtype=np.int64)
        face_chunks.append(ids)
        offset += len(ids)
        start_list.append(np.array([offset], dtype=np.int64))

    face_index = np.concatenate(face_chunks) if face_chunks else np.zeros(0, dtype=np.int64)
    face_start = np.concatenate(start_list)

    result = ConvexPolytope(new_vertices, face_index, face_start)
    if result.n_faces < 4 or result.n_vertices < 4:
        return None
    # sliver cuts can survive the walk with zero volume; large survivors cannot
    if result.n_faces < 64 and volume(result) <= tol:
        return None
    return result


def volume(poly) -> float:
    """Exact volume by the divergence theorem over fan-triangulated faces."""
    if poly is None:
        return 0.0
    fi, fs = poly.face_index, poly.face_start
    counts = np.diff(fs)
    tri_counts = counts - 2
    total = int(tri_counts.sum())
    if total <= 0:
        return 0.0
    first = np.repeat(fi[fs[:-1]], tri_counts)
    offs = np.repeat(fs[:-1], tri_counts)
    base = np.repeat(np.cumsum(tri_counts) - tri_counts, tri_counts)
    tloc = np.arange(total) - base + 1
    i1 = fi[offs + tloc]
    i2 = fi[offs + tloc + 1]
    v = poly.vertices
    contrib = np.einsum("ij,ij->i", v[first], np.cross(v[i1], v[i2]))
    return float(contrib.sum() / 6.0)


def validate(poly: ConvexPolytope, tol: float = 1e-9) -> None:
    """Raise ValueError unless the polytope is planar-faced, convex and closed."""
    fi, fs = poly.face_index, poly.face_start
    edge_count: dict[tuple[int, int], int] = {}
    for f in range(poly.n_faces):
        cyc = fi[fs[f]:fs[f + 1]]
        if len(cyc) < 3:
            raise ValueError(f"face {f} has fewer than 3 vertices")
        for k in range(len(cyc)):
            e = (int(cyc[k]), int(cyc[(k + 1) % len(cyc)]))
            edge_count[e] = edge_count.get(e, 0) + 1
        pts = poly.vertices[cyc]
        centroid = pts.mean(axis=0)
        rel = pts - centroid
        nrm = np.cross(rel, np.roll(rel, -1, axis=0)).sum(axis=0)
        norm = np.linalg.norm(nrm)
        if norm < tol:
            # sliver face from a cut grazing a vertex; contributes no volume
            # and no orientation information, but still closes the surface
            continue
        nrm /= norm
        dist = (pts - centroid) @ nrm
        if np.max(np.abs(dist)) > tol:
            raise ValueError(f"face {f} is not planar")
        side = (poly.vertices - centroid) @ nrm
        if side.max() > tol:
            raise ValueError(f"face {f} is not outward oriented or polytope not convex")
    for (u, w), c in edge_count.items():
        if c != 1 or edge_count.get((w, u), 0) != 1:
            raise ValueError(f"edge ({u},{w}) is not shared by exactly two faces")


def fibonacci_sphere(n: int) -> np.ndarray:
    """n quasi-uniform unit vectors along the Fibonacci spiral."""
    if n < 2:
        raise ValueError("need at least 2 points")
    i = np.arange(n, dtype=float)
    phi = 2.0 * np.pi * i / GOLDEN_RATIO
    theta = np.arccos(1.0 - (2.0 * i + 1.0) / n)
    st = np.sin(theta)
    return np.stack([np.cos(phi) * st, np.sin(phi) * st, np.cos(theta)], axis=1)


def sphere_point(azimuth: float, height: float) -> np.ndarray:
    """Map cylinder coordinates (angle, height in [-1, 1]) onto the unit sphere.

    The area-preserving cylinder-to-sphere projection: uniform (azimuth, height)
    pairs give uniformly distributed sphere points.
    """
    r = np.sqrt(max(0.0, 1.0 - height * height))
    return np.array([r * np.cos(azimuth), r * np.sin(azimuth), height])


def rotation_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotation_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_xyz(ax: float, ay: float, az: float) -> np.ndarray:
    """Composite rotation R_x(ax) @ R_y(ay) @ R_z(az)."""
    return rotation_x(ax) @ rotation_y(ay) @ rotation_z(az)


def ellipsoid_polytope(ell: Ellipsoid, n_points: int = 10000) -> ConvexPolytope:
    """Inscribed polytope: convex hull of n Fibonacci points mapped to the ellipsoid."""
    if n_points < 4:
        raise ValueError("need at least 4 surface points")
    pts = ell.center + fibonacci_sphere(n_points) * ell.semi_axes
    try:
        hull = ConvexHull(pts)
    except QhullError as exc:  # pragma: no cover - requires pathological axes
        raise HullError(str(exc)) from exc
    if hull.volume <= 0:
        raise HullError("hull has non-positive volume")
    used = hull.vertices
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    tri = remap[hull.simplices]
    v = pts[used]
    nrm = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
    flip = np.einsum("ij,ij->i", nrm, hull.equations[:, :3]) < 0
    tri[flip] = tri[flip][:, ::-1]
    face_index = tri.reshape(-1).astype(np.int64)
    face_start = np.arange(0, 3 * len(tri) + 1, 3, dtype=np.int64)
    return ConvexPolytope(v, face_index, face_start)
