"""Benchmark experiments: advect a shape around a periodic box and measure errors.

Three setups are provided. Test 1 translates a slotted ball with a constant
velocity until it returns to its starting position. Test 2 deforms a
sphere-plus-arms shape with a velocity whose per-direction sweeps conserve
mass exactly and whose time symmetry returns the initial data. Test 3 uses a
general divergence-free swirl that requires the two-species renormalized
update. In all three the exact solution at the final time is the initial
field, so the relative L1 error needs no analytic reference.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import solver as sv
from .geometry import rotation_x, rotation_y, rotation_z
from .network import NetworkWeights

DEFAULT_NH = (10, 14, 20, 27, 38)
FULL_NH = (10, 14, 20, 27, 38, 54, 75, 105)
DEFAULT_EPS_MARK = 0.01
DEFAULT_N_SUB = 10
DEFAULT_DT_FACTOR = 0.1

TEST_IDS = (1, 2, 3)
_DOMAINS = {1: (-1.0, 1.0), 2: (0.0, 1.0), 3: (0.0, 1.0)}
_FINAL_TIMES = {1: 2.0, 2: 1.0, 3: 2.0}
SCHEME_NAMES = ("uw", "ld", "vofml")


class InsufficientPoints(Exception):
    """Convergence fitting needs at least three mesh sizes."""


def domain(test_id: int) -> tuple[float, float]:
    return _DOMAINS[test_id]


def final_time(test_id: int) -> float:
    return _FINAL_TIMES[test_id]


def reference_rotation() -> np.ndarray:
    """Tilt applied to the initial shapes so no interface is mesh aligned."""
    return rotation_z(np.pi / 9.0) @ rotation_y(np.pi / 7.0) @ rotation_x(np.pi / 5.0)


def _rotated_query(center, x, y, z):
    """Coordinates of the query points in the unrotated shape frame."""
    rot = reference_rotation().T  # inverse rotation applied to queries
    dx, dy, dz = x - center[0], y - center[1], z - center[2]
    qx = rot[0, 0] * dx + rot[0, 1] * dy + rot[0, 2] * dz + center[0]
    qy = rot[1, 0] * dx + rot[1, 1] * dy + rot[1, 2] * dz + center[1]
    qz = rot[2, 0] * dx + rot[2, 1] * dy + rot[2, 2] * dz + center[2]
    return qx, qy, qz


def initial_condition(test_id: int):
    """Vectorized membership predicate of the test's initial shape."""
    if test_id == 1:
        def slotted_ball(x, y, z):
            qx, qy, qz = _rotated_query((0.0, 0.0, 0.0), x, y, z)
            ball = qx * qx + qy * qy + qz * qz < 0.4 ** 2
            slot = (np.abs(qx) < 0.2) & (np.abs(qy) < 0.2) & (qz < 0.0)
            return ball & ~slot

        return slotted_ball
    if test_id == 2:
        def sphere_with_arms(x, y, z):
            qx, qy, qz = _rotated_query((0.5, 0.5, 0.5), x, y, z)
            dx, dy, dz = qx - 0.5, qy - 0.5, qz - 0.5
            sphere = dx * dx + dy * dy + dz * dz < 0.2 ** 2
            ax = np.abs(dx)
            ay = np.abs(dy)
            az = np.abs(dz)
            arm_x = (ax < 0.3) & (ay < 0.075) & (az < 0.075)
            arm_y = (ax < 0.075) & (ay < 0.3) & (az < 0.075)
            arm_z = (ax < 0.075) & (ay < 0.075) & (az < 0.3)
            return sphere | arm_x | arm_y | arm_z

        return sphere_with_arms
    if test_id == 3:
        def off_center_sphere(x, y, z):
            dx, dy, dz = x - 0.35, y - 0.35, z - 0.35
            return dx * dx + dy * dy + dz * dz < 0.15 ** 2

        return off_center_sphere
    raise ValueError(f"unknown test id {test_id}")


def velocity_field(test_id: int) -> sv.VelocitySpec:
    if test_id == 1:
        return sv.VelocitySpec(
            (lambda x, y, z, t: 1.0, lambda x, y, z, t: 2.0, lambda x, y, z, t: 3.0),
            divergence_free=True,
            componentwise_derivative_free=True,
        )
    if test_id == 2:
        tf = _FINAL_TIMES[2]
        two_pi = 2.0 * np.pi

        def u1(x, y, z, t):
            return (25.0 * np.sin(two_pi * y) ** 2 * np.sin(two_pi * z)
                    * y * (y - 1.0) * z * (z - 1.0) * np.cos(np.pi * t / tf))

        def u2(x, y, z, t):
            return (25.0 * np.sin(two_pi * z) ** 2 * np.sin(two_pi * x)
                    * z * (z - 1.0) * x * (x - 1.0) * np.cos(np.pi * t / tf))

        def u3(x, y, z, t):
            return (25.0 * np.sin(two_pi * x) ** 2 * np.sin(two_pi * y)
                    * x * (x - 1.0) * y * (y - 1.0) * np.cos(np.pi * t / tf))

        return sv.VelocitySpec((u1, u2, u3), divergence_free=True, componentwise_derivative_free=True)
    if test_id == 3:
        tf = _FINAL_TIMES[3]
        two_pi = 2.0 * np.pi

        def v1(x, y, z, t):
            return (2.0 * np.sin(np.pi * x) ** 2 * np.sin(two_pi * y) * np.sin(two_pi * z)
                    * np.cos(np.pi * t / tf))

        def v2(x, y, z, t):
            return (-np.sin(np.pi * y) ** 2 * np.sin(two_pi * x) * np.sin(two_pi * z)
                    * np.cos(np.pi * t / tf))

        def v3(x, y, z, t):
            return (-np.sin(np.pi * z) ** 2 * np.sin(two_pi * x) * np.sin(two_pi * y)
                    * np.cos(np.pi * t / tf))

        return sv.VelocitySpec((v1, v2, v3), divergence_free=True, componentwise_derivative_free=False)
    raise ValueError(f"unknown test id {test_id}")


def make_scheme(name: str, weights: NetworkWeights | None, eps_mark: float = DEFAULT_EPS_MARK):
    if name == "uw":
        return sv.Upwind()
    if name == "ld":
        return sv.LimitedDownwind()
    if name == "vofml":
        if weights is None:
            raise ValueError("the vofml scheme needs trained weights")
        return sv.VofmlHybrid(weights, eps_mark)
    raise ValueError(f"unknown scheme '{name}'")


@dataclass
class ExperimentConfig:
    test_id: int
    scheme: str
    nh_list: tuple = DEFAULT_NH
    weights: NetworkWeights | None = None
    dt_factor: float = DEFAULT_DT_FACTOR
    eps_mark: float = DEFAULT_EPS_MARK
    n_sub: int = DEFAULT_N_SUB
    track_extrema: bool = False
    cycle_sweep_order: bool = False  # ablation: rotate the sweep order per step
    out_dir: str | None = None

    def __post_init__(self):
        if self.test_id not in TEST_IDS:
            raise ValueError("test id must be 1, 2 or 3")
        if any(n < 3 for n in self.nh_list):
            raise ValueError("mesh sizes must be at least 3")


@dataclass
class RunReport:
    test_id: int
    scheme: str
    n_cells: int
    error: float
    r_mix: np.ndarray
    times: np.ndarray
    mass: np.ndarray
    wall_time: float
    conservation_drift: float
    sweep_min: float = np.nan
    sweep_max: float = np.nan

    @property
    def r_mix_ratio(self) -> float:
        return float(self.r_mix[-1] / self.r_mix[0])


def run_single(cfg: ExperimentConfig, n_cells: int) -> RunReport:
    """Advance one mesh to the final time and collect the error diagnostics."""
    lo, hi = _DOMAINS[cfg.test_id]
    mesh = sv.Mesh(n_cells, np.full(3, lo), np.full(3, hi))
    velocity = velocity_field(cfg.test_id)
    scheme = make_scheme(cfg.scheme, cfg.weights, cfg.eps_mark)
    stepper = sv.step if velocity.componentwise_derivative_free else sv.step_renormalized

    t_final = _FINAL_TIMES[cfg.test_id]
    dt = cfg.dt_factor * mesh.dx
    n_steps = max(1, int(round(t_final / dt)))
    dt = t_final / n_steps

    start = time.perf_counter()
    field = sv.init_fractions(initial_condition(cfg.test_id), mesh, cfg.n_sub)
    initial = field.values.copy()
    mass0 = field.total()

    n_total = n_cells ** 3
    r_mix = [sv.mark_mixed(field.values, cfg.eps_mark).sum() / n_total]
    times = [0.0]
    mass = [mass0]
    extrema = {"min": np.inf, "max": -np.inf}

    on_sweep = None
    if cfg.track_extrema:
        def on_sweep(axis, values):
            extrema["min"] = min(extrema["min"], float(values.min()))
            extrema["max"] = max(extrema["max"], float(values.max()))

    for step_index in range(n_steps):
        order = (0, 1, 2)
        if cfg.cycle_sweep_order:
            shift = step_index % 3
            order = tuple((axis + shift) % 3 for axis in range(3))
        field = stepper(field, velocity, field.time, dt, scheme, mesh,
                        on_sweep=on_sweep, axis_order=order)
        r_mix.append(sv.mark_mixed(field.values, cfg.eps_mark).sum() / n_total)
        times.append(field.time)
        mass.append(field.total())

    error = float(np.abs(field.values - initial).sum() / np.abs(initial).sum())
    mass_arr = np.array(mass)
    drift = float(np.max(np.abs(mass_arr - mass0)) / mass0) if mass0 > 0 else 0.0
    return RunReport(
        cfg.test_id,
        cfg.scheme,
        n_cells,
        error,
        np.array(r_mix),
        np.array(times),
        mass_arr,
        time.perf_counter() - start,
        drift,
        extrema["min"] if cfg.track_extrema else np.nan,
        extrema["max"] if cfg.track_extrema else np.nan,
    )


def run(cfg: ExperimentConfig) -> list[RunReport]:
    """Run every mesh size in the config, optionally writing CSV reports."""
    reports = []
    for n_cells in cfg.nh_list:
        report = run_single(cfg, n_cells)
        reports.append(report)
        if cfg.out_dir:
            write_run_csv(report, cfg.out_dir)
    if cfg.out_dir:
        write_summary_csv(reports, cfg.out_dir)
    return reports


def convergence(nh_values, errors) -> tuple[float, float]:
    """Least-squares convergence rate of errors against mesh counts.

    Returns (rate, intercept) of the fit log E = intercept - rate * log N.
    """
    nh_values = np.asarray(nh_values, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(nh_values) < 3:
        raise InsufficientPoints("need at least three mesh sizes")
    slope, intercept = np.polyfit(np.log(nh_values), np.log(errors), 1)
    return float(-slope), float(intercept)


# ---------------------------------------------------------------------------
# report files

def run_csv_name(test_id: int, scheme: str, n_cells: int) -> str:
    return f"run_test{test_id}_{scheme}_nh{n_cells:03d}.csv"


def summary_csv_name(test_id: int, scheme: str) -> str:
    return f"summary_test{test_id}_{scheme}.csv"


def write_run_csv(report: RunReport, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, run_csv_name(report.test_id, report.scheme, report.n_cells))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "r_mix", "mass", "min", "max"])
        for i, (t, r, m) in enumerate(zip(report.times, report.r_mix, report.mass)):
            writer.writerow([i, f"{t:.17g}", f"{r:.17g}", f"{m:.17g}",
                             f"{report.sweep_min:.17g}", f"{report.sweep_max:.17g}"])


def write_summary_csv(reports, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    by_key = {}
    for r in reports:
        by_key.setdefault((r.test_id, r.scheme), []).append(r)
    for (test_id, scheme), group in by_key.items():
        path = os.path.join(out_dir, summary_csv_name(test_id, scheme))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["nh", "scheme", "error", "r_mix_ratio", "wall_time", "drift"])
            for r in sorted(group, key=lambda r: r.n_cells):
                writer.writerow([
                    r.n_cells, r.scheme, f"{r.error:.17g}", f"{r.r_mix_ratio:.17g}",
                    f"{r.wall_time:.3f}", f"{r.conservation_drift:.3e}",
                ])


def read_summary_csv(path: str):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append((int(row["nh"]), row["scheme"], float(row["error"])))
    return rows
