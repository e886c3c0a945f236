"""Synthetic training set assembly, splitting and on-disk format.

Each base configuration is drawn by Latin hypercube sampling over its family's
parameter box and paired with one stratified Courant number that its six
augmented variants share. Rows are ordered by (family, base index,
augmentation index), which both fixes the output deterministically and lets
the splitter keep whole augmentation groups inside one partition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import stencil as st

FAMILY_ORDER = (
    st.Family.ONE_PLANE,
    st.Family.TWO_PLANES,
    st.Family.THREE_PLANES,
    st.Family.ELLIPSOID,
)
DEFAULT_COUNTS = (3000, 6000, 9000, 6000)
DEFAULT_BETA_RANGE = (0.0, 0.6)
N_COLUMNS = 31  # 27 fractions, beta, flux, family, augmentation index

_SAMPLERS = {
    st.Family.ONE_PLANE: st.sample_one_plane,
    st.Family.TWO_PLANES: st.sample_two_planes,
    st.Family.THREE_PLANES: st.sample_three_planes,
    st.Family.ELLIPSOID: st.sample_ellipsoid,
}


class DatasetFormatError(Exception):
    """The file being read does not match the expected column layout."""


@dataclass
class Sample:
    fractions: np.ndarray
    beta: float
    flux: float
    family: st.Family
    augmentation_index: int

    def input_row(self) -> np.ndarray:
        return np.concatenate([self.fractions, [self.beta]])


@dataclass
class DatasetSpec:
    counts: tuple[int, int, int, int] = DEFAULT_COUNTS
    beta_range: tuple[float, float] = DEFAULT_BETA_RANGE
    augment: bool = True
    seed: int = 0
    surface_points: int = st.DEFAULT_SURFACE_POINTS

    def __post_init__(self):
        if any(c < 0 for c in self.counts):
            raise ValueError("family counts must be non-negative")
        lo, hi = self.beta_range
        if not (0.0 <= lo <= hi <= 1.0):
            raise ValueError("beta range must be inside [0, 1]")


def latin_hypercube(n: int, d: int, seed) -> np.ndarray:
    """n stratified points in [0, 1]^d: one per bin and axis, uniform in-bin."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 points and d >= 1 dimensions")
    rng = np.random.default_rng(seed)
    out = np.empty((n, d))
    for k in range(d):
        out[:, k] = (rng.permutation(n) + rng.random(n)) / n
    return out


def _map_to_box(unit: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    return bounds[:, 0] + unit * (bounds[:, 1] - bounds[:, 0])


_MAX_DRAWS_PER_CONFIG = 1000


def _build_group(task):
    """Samples for one base configuration: draw, integrate, augment.

    Each task owns a private replacement stream, so rejected parameter points
    are redrawn locally and the result does not depend on worker scheduling.
    """
    family_value, theta_unit, beta, repl_seed, augment, surface_points = task
    family = st.Family(family_value)
    bounds = st.PARAM_BOUNDS[family]
    sampler = _SAMPLERS[family]
    kwargs = {"surface_points": surface_points} if family is st.Family.ELLIPSOID else {}
    repl_rng = np.random.default_rng(repl_seed)
    theta = _map_to_box(theta_unit, bounds)
    rejected = 0
    while True:
        try:
            cfg = sampler(theta, **kwargs)
            break
        except st.RejectedConfig:
            rejected += 1
            if rejected >= _MAX_DRAWS_PER_CONFIG:
                raise RuntimeError(f"{family.value}: no acceptable configuration found")
            theta = _map_to_box(repl_rng.random(len(bounds)), bounds)
    base_fractions = st.stencil_fractions(cfg)
    rows = []
    for sigma in range(st.N_TRANSFORMS if augment else 1):
        if sigma == 0:
            fractions = base_fractions
            flux = st.exact_flux(cfg, beta)
        else:
            fractions = base_fractions[st.fraction_permutation(sigma)]
            flux = st.exact_flux(st.transform(cfg, sigma), beta)
        rows.append(Sample(np.array(fractions), float(beta), float(flux), family, sigma))
    return rows, rejected


def _family_tasks(spec: DatasetSpec):
    root = np.random.SeedSequence(spec.seed)
    tasks = []
    for family, count, seed_seq in zip(FAMILY_ORDER, spec.counts, root.spawn(len(FAMILY_ORDER))):
        if count == 0:
            continue
        param_seed, beta_seed, repl_seed = seed_seq.spawn(3)
        bounds = st.PARAM_BOUNDS[family]
        unit = latin_hypercube(count, len(bounds), param_seed)
        lo, hi = spec.beta_range
        betas = lo + latin_hypercube(count, 1, beta_seed)[:, 0] * (hi - lo)
        for theta_unit, beta, repl in zip(unit, betas, repl_seed.spawn(count)):
            tasks.append((family.value, theta_unit, float(beta), repl, spec.augment, spec.surface_points))
    return tasks


def build(spec: DatasetSpec, workers: int = 1, max_reject_ratio: float = 0.5) -> list[Sample]:
    """Assemble the (optionally augmented) sample list, ordered by family then base index.

    ``workers`` > 1 fans base configurations out over processes; the ordering
    and content are identical to a serial build. Aborts when more than
    ``max_reject_ratio`` of all parameter draws were rejected, which signals a
    parametrization bug rather than bad luck.
    """
    tasks = _family_tasks(spec)
    if workers > 1 and len(tasks) > 1:
        import multiprocessing

        with multiprocessing.get_context("fork").Pool(workers) as pool:
            results = pool.map(_build_group, tasks, chunksize=8)
    else:
        results = [_build_group(t) for t in tasks]
    samples: list[Sample] = []
    rejected = 0
    for rows, nrej in results:
        samples.extend(rows)
        rejected += nrej
    attempts = len(tasks) + rejected
    if attempts > 20 and rejected > max_reject_ratio * attempts:
        raise RuntimeError(f"rejection rate {rejected}/{attempts} exceeds {max_reject_ratio:.0%}")
    return samples


def _group_slices(samples):
    """Contiguous index runs covering one base configuration each."""
    groups = []
    start = 0
    for i, s in enumerate(samples):
        if i > 0 and s.augmentation_index == 0:
            groups.append((start, i))
            start = i
    if samples:
        groups.append((start, len(samples)))
    return groups


def split(samples, ratios=(0.8, 0.1, 0.1), seed: int = 0, group_aware: bool = True):
    """Shuffle split into (train, validation, test), deterministic per seed.

    With ``group_aware`` (default) all augmentations of one base configuration
    land in the same partition; disabling it reproduces a naive row shuffle,
    which leaks near-duplicates into the test partition.
    """
    if abs(sum(ratios) - 1.0) > 1e-12:
        raise ValueError("split ratios must sum to 1")
    rng = np.random.default_rng(seed)
    if group_aware:
        units = _group_slices(samples)
    else:
        units = [(i, i + 1) for i in range(len(samples))]
    order = rng.permutation(len(units))
    n_train = int(round(ratios[0] * len(units)))
    n_val = int(round(ratios[1] * len(units)))
    parts = ([], [], [])
    for pos, u in enumerate(order):
        bucket = 0 if pos < n_train else (1 if pos < n_train + n_val else 2)
        lo, hi = units[u]
        parts[bucket].extend(samples[lo:hi])
    return parts


def to_arrays(samples, switch_augmented: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """(inputs, targets) matrices; inputs are 27 fractions + beta.

    With ``switch_augmented`` every row is followed by its material-switched
    twin (complemented fractions, complemented flux). The sampled families fill
    the two fluid roles asymmetrically, so without the twins the switched half
    of the inference-time wrapper runs far outside the training distribution
    and its quality becomes an initialization lottery; train and validate with
    the twins, evaluate metrics without them.
    """
    if not samples:
        return np.zeros((0, 28)), np.zeros(0)
    inputs = np.array([s.input_row() for s in samples])
    targets = np.array([s.flux for s in samples])
    if switch_augmented:
        switched = inputs.copy()
        switched[:, :27] = 1.0 - switched[:, :27]
        inputs = np.concatenate([inputs, switched])
        targets = np.concatenate([targets, 1.0 - targets])
    return inputs, targets


def write(samples, path) -> None:
    """Comma-separated text, one header line, 17 significant digits."""
    header = ",".join([f"f{i:03d}" for i in range(27)] + ["beta", "flux", "family", "augmentation_index"])
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for s in samples:
            vals = [f"{v:.17g}" for v in s.fractions] + [
                f"{s.beta:.17g}",
                f"{s.flux:.17g}",
                s.family.value,
                str(s.augmentation_index),
            ]
            fh.write(",".join(vals) + "\n")


def read(path) -> list[Sample]:
    samples = []
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if len(header) != N_COLUMNS:
            raise DatasetFormatError(f"expected {N_COLUMNS} columns, found {len(header)}")
        for line_no, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != N_COLUMNS:
                raise DatasetFormatError(f"line {line_no}: expected {N_COLUMNS} columns")
            fractions = np.array(parts[:27], dtype=float)
            samples.append(
                Sample(
                    fractions,
                    float(parts[27]),
                    float(parts[28]),
                    st.Family(parts[29]),
                    int(parts[30]),
                )
            )
    return samples
