"""Directionally split finite-volume advection of volume fractions.

A periodic Cartesian mesh is swept along x, then y, then z. Each sweep
computes one donor-oriented flux fraction per face, projects it into the
interval that keeps the updated fractions in [0, 1], and applies the update
in the order (value - outflow) + inflow so that unit-Courant upwind transport
is a bitwise shift. The hybrid scheme evaluates the neural flux only on faces
whose donor cell is mixed and falls back to limited downwind elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkWeights, wrapped_forward_batch
from .stencil import CELL_OFFSETS, CENTRAL_CELL, cell_index

DOWNWIND_CELL = cell_index(1, 0, 0)
BETA_FLOOR = 1e-15


class CflViolation(Exception):
    """A sweep was asked to run with a face Courant number above one."""


class ZeroSum(Exception):
    """Both fluid fractions vanished in a cell during renormalization."""


@dataclass(frozen=True)
class Mesh:
    n_cells: int
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.n_cells < 3:
            raise ValueError("stencil needs at least 3 cells per direction")
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        ext = hi - lo
        if np.any(ext <= 0.0):
            raise ValueError("mesh must have positive extent")
        if np.max(np.abs(ext - ext[0])) > 1e-12 * ext[0]:
            raise ValueError("mesh must be isotropic")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dx(self) -> float:
        return float((self.hi[0] - self.lo[0]) / self.n_cells)

    def cell_centers(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.n_cells) + 0.5) * self.dx

    def face_positions(self, axis: int) -> np.ndarray:
        """Positions of the +side faces of cells 0..N-1 along ``axis``."""
        return self.lo[axis] + (np.arange(self.n_cells) + 1.0) * self.dx


@dataclass
class FractionField:
    values: np.ndarray
    time: float = 0.0

    def copy(self) -> "FractionField":
        return FractionField(self.values.copy(), self.time)

    def total(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class VelocitySpec:
    """Closed-form velocity field as three component callables of (x, y, z, t)."""

    components: tuple
    divergence_free: bool = True
    componentwise_derivative_free: bool = False


@dataclass(frozen=True)
class Upwind:
    pass


@dataclass(frozen=True)
class LimitedDownwind:
    pass


@dataclass(frozen=True)
class VofmlHybrid:
    weights: NetworkWeights
    eps_mark: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.eps_mark < 0.5:
            raise ValueError("eps_mark must lie in (0, 0.5)")


# ---------------------------------------------------------------------------
# local flux formulas (scalar spec surfaces; sweeps use the array twins)

def face_bounds(alpha_donor: float, beta: float) -> tuple[float, float]:
    """Admissible flux interval keeping the donor update inside [0, 1]."""
    lo = max(0.0, 1.0 - (1.0 - alpha_donor) / beta)
    hi = min(1.0, alpha_donor / beta)
    return lo, hi


def flux_upwind(stencil, beta: float) -> float:
    return float(np.asarray(stencil).reshape(-1)[CENTRAL_CELL])


def flux_limited_downwind(stencil, beta: float) -> float:
    s = np.asarray(stencil, dtype=float).reshape(-1)
    lo, hi = face_bounds(s[CENTRAL_CELL], beta)
    return float(min(max(s[DOWNWIND_CELL], lo), hi))


def flux_vofml(weights: NetworkWeights, stencil, beta: float) -> float:
    s = np.asarray(stencil, dtype=float).reshape(-1)
    lo, hi = face_bounds(s[CENTRAL_CELL], beta)
    raw = wrapped_forward_batch(weights, np.concatenate([s, [beta]])[None, :])[0]
    return float(min(max(raw, lo), hi))


def mark_mixed(values: np.ndarray, eps_mark: float) -> np.ndarray:
    """Boolean mask of cells holding a genuine mixture of the two fluids."""
    if not 0.0 < eps_mark < 0.5:
        raise ValueError("eps_mark must lie in (0, 0.5)")
    return (values >= eps_mark) & (values <= 1.0 - eps_mark)


# ---------------------------------------------------------------------------
# sweeps

def _bounds_arrays(donor, beta):
    safe = np.maximum(beta, BETA_FLOOR)
    d = np.clip(donor, 0.0, 1.0)
    lo = np.maximum(0.0, 1.0 - (1.0 - d) / safe)
    hi = np.minimum(1.0, d / safe)
    return lo, hi


def _stencil_offsets(axis: int, positive: bool) -> np.ndarray:
    """Global cell offsets realizing the donor-oriented local frame.

    Local +x is the flow direction: it maps to +-axis; the two transverse local
    axes map cyclically onto the remaining ones.
    """
    out = np.empty((27, 3), dtype=np.int64)
    out[:, axis] = CELL_OFFSETS[:, 0] if positive else -CELL_OFFSETS[:, 0]
    out[:, (axis + 1) % 3] = CELL_OFFSETS[:, 1]
    out[:, (axis + 2) % 3] = CELL_OFFSETS[:, 2]
    return out


def _gather_stencils(values, donor_idx, offsets):
    n = values.shape[0]
    idx = (donor_idx[:, None, :] + offsets[None, :, :]) % n
    return values[idx[:, :, 0], idx[:, :, 1], idx[:, :, 2]]


def _face_velocity(mesh: Mesh, velocity: VelocitySpec, axis: int, t: float) -> np.ndarray:
    coords = [None, None, None]
    shape = [1, 1, 1]
    for ax in range(3):
        line = mesh.face_positions(ax) if ax == axis else mesh.cell_centers(ax)
        shp = [1, 1, 1]
        shp[ax] = mesh.n_cells
        coords[ax] = line.reshape(shp)
    u = velocity.components[axis](coords[0], coords[1], coords[2], t)
    n = mesh.n_cells
    return np.ascontiguousarray(np.broadcast_to(np.asarray(u, dtype=float), (n, n, n)))


def _sweep_fluxes(values, axis, u_face, beta, scheme):
    """Donor-oriented flux fraction per face; zero where the face is inactive."""
    right = np.roll(values, -1, axis=axis)
    positive = u_face >= 0.0
    donor = np.where(positive, values, right)
    downwind = np.where(positive, right, values)
    active = beta > BETA_FLOOR

    if isinstance(scheme, Upwind):
        flux = donor.copy()
    else:
        lo, hi = _bounds_arrays(donor, beta)
        flux = np.clip(downwind, lo, hi)
        if isinstance(scheme, VofmlHybrid):
            marked = mark_mixed(values, scheme.eps_mark)
            donor_marked = np.where(positive, marked, np.roll(marked, -1, axis=axis)) & active
            for want_positive in (True, False):
                sel = donor_marked & (positive == want_positive)
                count = int(np.count_nonzero(sel))
                if count == 0:
                    continue
                fi, fj, fk = np.nonzero(sel)
                donor_idx = np.stack([fi, fj, fk], axis=1)
                if not want_positive:
                    donor_idx[:, axis] = (donor_idx[:, axis] + 1) % values.shape[0]
                stencils = _gather_stencils(values, donor_idx, _stencil_offsets(axis, want_positive))
                rows = np.concatenate([stencils, beta[sel][:, None]], axis=1)
                raw = wrapped_forward_batch(scheme.weights, rows)
                flux[sel] = np.clip(raw, lo[sel], hi[sel])
    return np.where(active, flux, 0.0)


def _apply_fluxes(values, axis, signed_flux):
    # (value - outflow) + inflow keeps unit-Courant upwind transport bitwise
    return (values - signed_flux) + np.roll(signed_flux, 1, axis=axis)


def sweep(field: FractionField, axis: int, velocity: VelocitySpec, t: float, dt: float,
          scheme, mesh: Mesh) -> FractionField:
    """One bound-preserving 1D update along ``axis`` with periodic wrap."""
    u_face = _face_velocity(mesh, velocity, axis, t + 0.5 * dt)
    beta = np.abs(u_face) * (dt / mesh.dx)
    if beta.max() > 1.0 + 1e-12:
        raise CflViolation(f"axis {axis}: max face Courant number {beta.max():.4f}")
    flux = _sweep_fluxes(field.values, axis, u_face, beta, scheme)
    signed = np.sign(u_face) * beta * flux
    return FractionField(_apply_fluxes(field.values, axis, signed), field.time)


def step(field: FractionField, velocity: VelocitySpec, t: float, dt: float,
         scheme, mesh: Mesh, on_sweep=None, axis_order=(0, 1, 2)) -> FractionField:
    """Full update: sweeps along x, y, z in that fixed order by default."""
    out = field
    for axis in axis_order:
        out = sweep(out, axis, velocity, t, dt, scheme, mesh)
        if on_sweep is not None:
            on_sweep(axis, out.values)
    return FractionField(out.values, field.time + dt)


def step_renormalized(field: FractionField, velocity: VelocitySpec, t: float, dt: float,
                      scheme, mesh: Mesh, on_sweep=None, axis_order=(0, 1, 2)) -> FractionField:
    """Two-species update for velocities whose 1D sweeps are not conservative.

    Each sweep advances fluid A with the scheme's flux and fluid B with its
    complement using the same face Courant numbers, then rescales by the pair
    sum; only A is stored, so A + B = 1 holds identically after every sweep.
    """
    a = field.values
    for axis in axis_order:
        u_face = _face_velocity(mesh, velocity, axis, t + 0.5 * dt)
        beta = np.abs(u_face) * (dt / mesh.dx)
        if beta.max() > 1.0 + 1e-12:
            raise CflViolation(f"axis {axis}: max face Courant number {beta.max():.4f}")
        flux_a = _sweep_fluxes(a, axis, u_face, beta, scheme)
        active = beta > BETA_FLOOR
        flux_b = np.where(active, 1.0 - flux_a, 0.0)
        sign_beta = np.sign(u_face) * beta
        a_tilde = _apply_fluxes(a, axis, sign_beta * flux_a)
        b_tilde = _apply_fluxes(1.0 - a, axis, sign_beta * flux_b)
        pair_sum = a_tilde + b_tilde
        if pair_sum.min() < 1e-14:
            raise ZeroSum(f"axis {axis}: fraction pair sum collapsed to {pair_sum.min():.3e}")
        a = a_tilde / pair_sum
        if on_sweep is not None:
            on_sweep(axis, a)
    return FractionField(a, field.time + dt)


# ---------------------------------------------------------------------------
# initialization

def init_fractions(indicator, mesh: Mesh, n_sub: int = 10) -> FractionField:
    """Cell fractions as midpoint means over an n_sub^3 tensor sub-grid.

    ``indicator`` must accept broadcastable coordinate arrays and return a
    boolean array of the broadcast shape.
    """
    if n_sub < 1:
        raise ValueError("n_sub must be at least 1")
    n = mesh.n_cells
    step_len = mesh.dx / n_sub
    lines = [mesh.lo[ax] + (np.arange(n * n_sub) + 0.5) * step_len for ax in range(3)]
    values = np.empty((n, n, n))
    for k in range(n):
        zz = lines[2][k * n_sub:(k + 1) * n_sub]
        block = indicator(
            lines[0][:, None, None], lines[1][None, :, None], zz[None, None, :]
        )
        block = np.broadcast_to(block, (n * n_sub, n * n_sub, n_sub)).astype(float)
        values[:, :, k] = block.reshape(n, n_sub, n, n_sub, n_sub).mean(axis=(1, 3, 4))
    return FractionField(values, 0.0)
