"""Parametric two-fluid configurations on the 3x3x3 stencil.

A configuration describes how fluid A occupies the normalized stencil (27 unit
cells centered on the origin): an intersection of 1 to 3 half-spaces, or the
interior of an ellipsoid approximated by an inscribed surface polytope. The
module evaluates the per-cell volume fractions and the exact outgoing flux
fraction through the +x face of the central cell, and applies the six
orientation transforms used for dataset augmentation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry as geo

REJECT_TOL = 1e-9        # central fraction this close to pure triggers resampling
MIN_AXIS_DIR = 0.05      # floor on ellipsoid axis direction magnitudes
CENTER_BOUND = float(np.sqrt(4.5))
DEFAULT_SURFACE_POINTS = 10000
HALF = 0.5

# stencil cells ordered lexicographically in (i, j, k) with x fastest
CELL_OFFSETS = np.array(
    [(i, j, k) for k in (-1, 0, 1) for j in (-1, 0, 1) for i in (-1, 0, 1)],
    dtype=np.int64,
)
CENTRAL_CELL = 13


def cell_index(i: int, j: int, k: int) -> int:
    return (i + 1) + 3 * (j + 1) + 9 * (k + 1)


class Family(str, Enum):
    ONE_PLANE = "one_plane"
    TWO_PLANES = "two_planes"
    THREE_PLANES = "three_planes"
    ELLIPSOID = "ellipsoid"


# parameter boxes, one row (lo, hi) per coordinate
TWO_PI = 2.0 * np.pi
PARAM_BOUNDS = {
    Family.ONE_PLANE: np.array([[0, TWO_PI], [-1, 1], [0, 1]], dtype=float),
    Family.TWO_PLANES: np.array([[0, TWO_PI]] * 5 + [[0, 1]], dtype=float),
    Family.THREE_PLANES: np.array(
        [[0, TWO_PI]] * 5 + [[0, 1]] + [[0, TWO_PI], [-1, 1], [0, 1]], dtype=float
    ),
    Family.ELLIPSOID: np.array(
        [[-CENTER_BOUND, CENTER_BOUND]] * 3 + [[0, TWO_PI], [-1, 1], [0, 1]], dtype=float
    ),
}


class RejectedConfig(Exception):
    """The sampled parameters leave the central cell pure; draw again."""


@dataclass
class StencilConfig:
    family: Family
    halfspaces: tuple[geo.HalfSpace, ...]
    ellipsoid: geo.Ellipsoid | None
    raw_params: np.ndarray
    surface_points: int = DEFAULT_SURFACE_POINTS
    _polytope: geo.ConvexPolytope | None = field(default=None, repr=False)
    _central_piece: object = field(default="unset", repr=False)

    def polytope(self) -> geo.ConvexPolytope:
        """Inscribed surface polytope of the ellipsoid (cached)."""
        if self.ellipsoid is None:
            raise ValueError("only ellipsoid configurations carry a polytope")
        if self._polytope is None:
            self._polytope = geo.ellipsoid_polytope(self.ellipsoid, self.surface_points)
        return self._polytope

    def central_piece(self):
        """Region A clipped to the central cell (cached; None when empty)."""
        if self._central_piece == "unset":
            self._central_piece = _region_box_piece(self, -HALF * np.ones(3), HALF * np.ones(3))
        return self._central_piece


# ---------------------------------------------------------------------------
# family samplers


def _check_box(theta, family: Family) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    bounds = PARAM_BOUNDS[family]
    if theta.shape != (len(bounds),):
        raise ValueError(f"{family.value} expects {len(bounds)} parameters")
    if np.any(theta < bounds[:, 0] - 1e-9) or np.any(theta > bounds[:, 1] + 1e-9):
        raise ValueError(f"{family.value} parameters outside their box")
    return theta


def _one_plane_halfspace(azimuth: float, height: float, depth: float) -> geo.HalfSpace:
    n = geo.sphere_point(azimuth, height)
    return geo.HalfSpace(n, depth * np.abs(n).sum() / 2.0)


def sample_one_plane(theta) -> StencilConfig:
    """Region A is a single half-space cutting the central cell."""
    theta = _check_box(theta, Family.ONE_PLANE)
    cfg = StencilConfig(Family.ONE_PLANE, (_one_plane_halfspace(*theta),), None, theta)
    _reject_if_pure(cfg)
    return cfg


def _translation_cap(trans_dir: np.ndarray, line_dir: np.ndarray, eps: float = 1e-12) -> float:
    """Largest r >= 0 with the line {r * trans_dir + t * line_dir} meeting the central cube.

    Per axis, |r d_i + t l_i| <= 1/2 yields a t-interval whose bounds are linear
    in r; feasibility of the interval intersection caps r analytically.
    """
    lows: list[tuple[float, float]] = []
    highs: list[tuple[float, float]] = []
    r_cap = np.inf
    for i in range(3):
        li = line_dir[i]
        di = trans_dir[i]
        if abs(li) > eps:
            a, b = -HALF / li, HALF / li
            slope = -di / li
            if li > 0:
                lows.append((a, slope))
                highs.append((b, slope))
            else:
                lows.append((b, slope))
                highs.append((a, slope))
        elif abs(di) > eps:
            r_cap = min(r_cap, HALF / abs(di))
    for (lo0, lo_s) in lows:
        for (hi0, hi_s) in highs:
            gap_slope = hi_s - lo_s
            if gap_slope < -eps:
                r_cap = min(r_cap, (hi0 - lo0) / (-gap_slope))
    if not np.isfinite(r_cap):
        raise RejectedConfig("translation direction never leaves the cell")
    return max(r_cap, 0.0)


def _two_plane_halfspaces(theta) -> tuple[geo.HalfSpace, geo.HalfSpace]:
    t1, t2, t3, t4, t5, t6 = theta
    rot = geo.rotation_xyz(t2, t3, t4)
    n1 = rot @ np.array([0.0, 0.0, 1.0])
    n2 = rot @ np.array([-np.sin(t1), 0.0, np.cos(t1)])
    line_dir = rot @ np.array([0.0, 1.0, 0.0])
    trans_dir = np.cos(t5) * (rot @ np.array([1.0, 0.0, 0.0])) + np.sin(t5) * (
        rot @ np.array([0.0, 0.0, 1.0])
    )
    shift = t6 * _translation_cap(trans_dir, line_dir) * trans_dir
    return (
        geo.HalfSpace(n1 / np.linalg.norm(n1), float(n1 @ shift)),
        geo.HalfSpace(n2 / np.linalg.norm(n2), float(n2 @ shift)),
    )


def sample_two_planes(theta) -> StencilConfig:
    """Region A is the wedge between two half-spaces hinged near the cell."""
    theta = _check_box(theta, Family.TWO_PLANES)
    cfg = StencilConfig(Family.TWO_PLANES, _two_plane_halfspaces(theta), None, theta)
    _reject_if_pure(cfg)
    return cfg


def sample_three_planes(theta) -> StencilConfig:
    """Two-plane wedge plus a third plane, flipped if it misses the wedge."""
    theta = _check_box(theta, Family.THREE_PLANES)
    h1, h2 = _two_plane_halfspaces(theta[:6])
    h3 = _one_plane_halfspace(theta[6], theta[7], theta[8])
    probe = StencilConfig(Family.THREE_PLANES, (h1, h2, h3), None, theta)
    if central_fraction(probe) <= 1e-12:
        h3 = h3.complement()
        probe = StencilConfig(Family.THREE_PLANES, (h1, h2, h3), None, theta)
    _reject_if_pure(probe)
    return probe


def ellipsoid_scale_bracket(center: np.ndarray, axis_dirs: np.ndarray) -> tuple[float, float]:
    """Scales at which the ellipsoid touches and then swallows the central cell.

    The lower scale makes the surface tangent to the cell boundary (from inside
    when the center lies in the cell, from outside otherwise); the upper scale
    is the smallest one containing the whole cell. Both follow from the support
    function of the ellipsoid along the coordinate axes and the quadric norm of
    the cell corners.
    """
    center = np.asarray(center, dtype=float)
    axis_dirs = np.asarray(axis_dirs, dtype=float)
    if np.all(np.abs(center) <= HALF):
        gaps = np.minimum(HALF - center, center + HALF)
        s_min = float(np.min(gaps / axis_dirs))
    else:
        closest = np.clip(center, -HALF, HALF)
        s_min = float(np.linalg.norm((closest - center) / axis_dirs))
    corners = np.array(
        [(sx, sy, sz) for sx in (-HALF, HALF) for sy in (-HALF, HALF) for sz in (-HALF, HALF)]
    )
    s_max = float(np.max(np.linalg.norm((corners - center) / axis_dirs, axis=1)))
    return s_min, s_max


def sample_ellipsoid(theta, surface_points: int = DEFAULT_SURFACE_POINTS) -> StencilConfig:
    """Region A is the interior of an axis-aligned ellipsoid touching the cell."""
    theta = _check_box(theta, Family.ELLIPSOID)
    center = theta[:3].copy()
    axis_dirs = np.maximum(np.abs(geo.sphere_point(theta[3], theta[4])), MIN_AXIS_DIR)
    s_min, s_max = ellipsoid_scale_bracket(center, axis_dirs)
    if s_max - s_min <= 1e-12:
        raise RejectedConfig("degenerate scale bracket")
    s = s_min + theta[5] * (s_max - s_min)
    if s <= 1e-8:
        raise RejectedConfig("vanishing ellipsoid")
    cfg = StencilConfig(
        Family.ELLIPSOID,
        (),
        geo.Ellipsoid(center, s * axis_dirs),
        theta,
        surface_points=surface_points,
    )
    _reject_if_pure(cfg)
    return cfg


def _reject_if_pure(cfg: StencilConfig) -> None:
    frac = central_fraction(cfg)
    if frac <= REJECT_TOL or frac >= 1.0 - REJECT_TOL:
        raise RejectedConfig(f"central fraction {frac} is pure")


# ---------------------------------------------------------------------------
# exact integrals

_AXES = np.eye(3)


def _ellipsoid_inradius(n_points: int) -> float:
    """Inscribed-sphere radius of the canonical Fibonacci surface polytope."""
    cached = _INRADIUS_CACHE.get(n_points)
    if cached is None:
        poly = geo.ellipsoid_polytope(geo.Ellipsoid(np.zeros(3), np.ones(3)), n_points)
        fi, fs = poly.face_index, poly.face_start
        tri = fi.reshape(-1, 3) if np.all(np.diff(fs) == 3) else None
        if tri is None:  # pragma: no cover - hull facets are always triangles
            tri = np.array([fi[fs[f]:fs[f] + 3] for f in range(poly.n_faces)])
        v = poly.vertices
        nrm = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        cached = float(np.min(np.abs(np.einsum("ij,ij->i", nrm, v[tri[:, 0]]))))
        _INRADIUS_CACHE[n_points] = cached
    return cached


_INRADIUS_CACHE: dict[int, float] = {}


def _quadric_norm(ell: geo.Ellipsoid, points: np.ndarray) -> np.ndarray:
    q = (np.asarray(points, dtype=float) - ell.center) / ell.semi_axes
    return np.sqrt(np.einsum("...i,...i->...", q, q))


def _box_vs_ellipsoid(cfg: StencilConfig, lo: np.ndarray, hi: np.ndarray) -> int:
    """-1: box misses the ellipsoid; +1: box inside the polytope; 0: undecided."""
    ell = cfg.ellipsoid
    closest = np.clip(ell.center, lo, hi)
    if _quadric_norm(ell, closest) > 1.0:
        return -1
    corners = np.array([(x, y, z) for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    if np.max(_quadric_norm(ell, corners)) <= _ellipsoid_inradius(cfg.surface_points):
        return 1
    return 0


def _clip_box(poly, lo, hi, axes=(0, 1, 2)):
    """Clip a polytope by the slab planes of an axis-aligned box."""
    for ax in axes:
        if poly is None:
            return None
        poly = geo.clip(poly, geo.HalfSpace(_AXES[ax], hi[ax]))
        if poly is None:
            return None
        poly = geo.clip(poly, geo.HalfSpace(-_AXES[ax], -lo[ax]))
    return poly


def _region_box_piece(cfg: StencilConfig, lo: np.ndarray, hi: np.ndarray):
    """Polytope of (region A  intersect  box), or None when empty."""
    if cfg.family is Family.ELLIPSOID:
        side = _box_vs_ellipsoid(cfg, lo, hi)
        if side < 0:
            return None
        if side > 0:
            return geo.box(lo, hi)
        return _clip_box(cfg.polytope(), lo, hi)
    piece = geo.box(lo, hi)
    for h in cfg.halfspaces:
        if piece is None:
            return None
        piece = geo.clip(piece, h)
    return piece


def region_box_volume(cfg: StencilConfig, lo, hi) -> float:
    return geo.volume(_region_box_piece(cfg, np.asarray(lo, float), np.asarray(hi, float)))


def central_fraction(cfg: StencilConfig) -> float:
    return geo.volume(cfg.central_piece())


def stencil_fractions(cfg: StencilConfig) -> np.ndarray:
    """Volume of (region A intersect cell) for the 27 stencil cells, x fastest."""
    if cfg.family is Family.ELLIPSOID:
        out = _ellipsoid_fractions(cfg)
    else:
        out = np.empty(27)
        for idx, off in enumerate(CELL_OFFSETS):
            out[idx] = region_box_volume(cfg, off - HALF, off + HALF)
    return np.clip(out, 0.0, 1.0)


def _ellipsoid_fractions(cfg: StencilConfig) -> np.ndarray:
    """Fractions via one clip tree: z-slabs, then y-beams, then x-cells."""
    out = np.zeros(27)
    undecided: list[tuple[int, int, int]] = []
    for idx, off in enumerate(CELL_OFFSETS):
        side = _box_vs_ellipsoid(cfg, off - HALF, off + HALF)
        if side > 0:
            out[idx] = 1.0
        elif side == 0:
            undecided.append(tuple(off))
    if not undecided:
        return out
    poly = cfg.polytope()
    ks = sorted({c[2] for c in undecided})
    for k in ks:
        col = [c for c in undecided if c[2] == k]
        pk = _clip_box(poly, np.array([0, 0, k - HALF]), np.array([0, 0, k + HALF]), axes=(2,))
        if pk is None:
            continue
        for j in sorted({c[1] for c in col}):
            row = [c for c in col if c[1] == j]
            pj = _clip_box(pk, np.array([0, j - HALF, 0]), np.array([0, j + HALF, 0]), axes=(1,))
            if pj is None:
                continue
            for (i, _, _) in row:
                pi = _clip_box(pj, np.array([i - HALF, 0, 0]), np.array([i + HALF, 0, 0]), axes=(0,))
                out[cell_index(i, j, k)] = geo.volume(pi)
    return out


def exact_flux(cfg: StencilConfig, beta: float) -> float:
    """Mean fraction of A in the slab swept through the central +x face.

    The slab has depth beta behind the face, so the result is the swept volume
    divided by beta; for vanishing beta this limits to the central fraction.
    """
    if beta < 0.0 or beta > 1.0:
        raise ValueError("courant number must lie in [0, 1]")
    if beta < 1e-12:
        return central_fraction(cfg)
    piece = cfg.central_piece()
    if piece is None:
        return 0.0
    swept = geo.clip(piece, geo.HalfSpace(-_AXES[0], -(HALF - beta)))
    return float(np.clip(geo.volume(swept) / beta, 0.0, 1.0))


# ---------------------------------------------------------------------------
# orientation transforms (dataset augmentation)

_CYCLE = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
_REFLECT_X = np.diag([-1.0, 1.0, 1.0])

#: six orthogonal maps: three axis cycles times optional x-reflection
TRANSFORMS = tuple(
    np.linalg.matrix_power(_CYCLE, a) @ (np.eye(3) if b == 0 else _REFLECT_X)
    for a in range(3)
    for b in range(2)
)
N_TRANSFORMS = len(TRANSFORMS)


def permutation_for_matrix(q: np.ndarray) -> np.ndarray:
    """Index permutation p with fractions_of(transformed) == fractions[p]."""
    qi = np.rint(q).astype(np.int64)
    perm = np.empty(27, dtype=np.int64)
    for idx, off in enumerate(CELL_OFFSETS):
        tgt = qi @ off
        perm[cell_index(int(tgt[0]), int(tgt[1]), int(tgt[2]))] = idx
    return perm


def fraction_permutation(sigma: int) -> np.ndarray:
    return permutation_for_matrix(TRANSFORMS[sigma])


def transform_by_matrix(cfg: StencilConfig, q: np.ndarray) -> StencilConfig:
    """Apply an orthogonal cell-lattice map to the configuration geometry."""
    halfspaces = tuple(geo.HalfSpace(q @ h.normal, h.offset) for h in cfg.halfspaces)
    ellipsoid = None
    if cfg.ellipsoid is not None:
        ellipsoid = geo.Ellipsoid(q @ cfg.ellipsoid.center, np.abs(q) @ cfg.ellipsoid.semi_axes)
    out = StencilConfig(cfg.family, halfspaces, ellipsoid, cfg.raw_params, cfg.surface_points)
    if ellipsoid is not None:
        # carry the mapped surface polytope: rebuilding it from the transformed
        # ellipsoid would sample different surface points and break the exact
        # fraction-permutation correspondence
        out._polytope = cfg.polytope().transformed(q)
    if cfg._central_piece != "unset":
        piece = cfg._central_piece
        out._central_piece = None if piece is None else piece.transformed(q)
    return out


def transform(cfg: StencilConfig, sigma: int) -> StencilConfig:
    """One of the six augmentation maps; sigma = 0 is the identity."""
    if not 0 <= sigma < N_TRANSFORMS:
        raise ValueError("transform index must be in 0..5")
    if sigma == 0:
        return cfg
    return transform_by_matrix(cfg, TRANSFORMS[sigma])
