"""Fully-connected ReLU flux surrogate, its symmetry wrappers and training.

The raw network maps 27 stencil fractions plus a Courant number to one flux
value. Two wrappers restore physical structure at inference time: averaging
over the 8 stencil permutations that leave the exact flux unchanged, and the
material-switch combination that makes fluxes of the two fluids sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .stencil import CELL_OFFSETS, cell_index

DEFAULT_DIMS = (28, 50, 50, 50, 50, 1)
N_FRACTIONS = 27


class DimensionMismatch(Exception):
    """Input width does not match the network's first layer."""


class EmptyPartition(Exception):
    """Loss or metrics were requested on an empty dataset partition."""


class DivergenceDetected(Exception):
    """Training loss became non-finite."""


@dataclass
class NetworkWeights:
    layer_dims: tuple[int, ...]
    matrices: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_parameters(self) -> int:
        return sum(m.size + b.size for m, b in zip(self.matrices, self.biases))

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(
            self.layer_dims,
            [m.copy() for m in self.matrices],
            [b.copy() for b in self.biases],
        )

    def to_vector(self) -> np.ndarray:
        parts = []
        for m, b in zip(self.matrices, self.biases):
            parts.append(m.reshape(-1))
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def from_vector(cls, layer_dims, vec: np.ndarray) -> "NetworkWeights":
        layer_dims = tuple(layer_dims)
        mats, biases = [], []
        pos = 0
        for prev, cur in zip(layer_dims[:-1], layer_dims[1:]):
            mats.append(vec[pos:pos + cur * prev].reshape(cur, prev).copy())
            pos += cur * prev
            biases.append(vec[pos:pos + cur].copy())
            pos += cur
        if pos != len(vec):
            raise DimensionMismatch("vector length does not match layer dims")
        return cls(layer_dims, mats, biases)


def init_weights(layer_dims=DEFAULT_DIMS, seed: int = 0) -> NetworkWeights:
    """Symmetric fan-based uniform init, zero biases, deterministic per seed."""
    rng = np.random.default_rng(seed)
    mats, biases = [], []
    for prev, cur in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / (prev + cur))
        mats.append(rng.uniform(-bound, bound, size=(cur, prev)))
        biases.append(np.zeros(cur))
    return NetworkWeights(tuple(layer_dims), mats, biases)


def relu(x):
    return np.maximum(x, 0.0)


def forward_batch(w: NetworkWeights, inputs: np.ndarray) -> np.ndarray:
    """Raw network output for inputs of shape (n, a0)."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2 or x.shape[1] != w.layer_dims[0]:
        raise DimensionMismatch(f"expected (n, {w.layer_dims[0]}) inputs")
    h = x
    last = len(w.matrices) - 1
    for ell, (m, b) in enumerate(zip(w.matrices, w.biases)):
        h = h @ m.T + b
        if ell < last:
            h = relu(h)
    return h[:, 0]


def forward(w: NetworkWeights, fractions, beta: float) -> float:
    """Raw network output for one stencil; fractions has 27 entries."""
    fr = np.asarray(fractions, dtype=float).reshape(-1)
    if len(fr) != w.layer_dims[0] - 1:
        raise DimensionMismatch("fraction vector does not match the input layer")
    return float(forward_batch(w, np.concatenate([fr, [beta]])[None, :])[0])


# ---------------------------------------------------------------------------
# flux-preserving stencil permutations

def _dihedral_matrices():
    quarter = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    mirror = np.diag([1.0, -1.0, 1.0])
    mats = []
    for a in range(4):
        for b in range(2):
            mats.append(np.linalg.matrix_power(quarter, a) @ (np.eye(3) if b == 0 else mirror))
    return mats


def _permutation_for(q: np.ndarray) -> np.ndarray:
    qi = np.rint(q).astype(np.int64)
    perm = np.empty(N_FRACTIONS, dtype=np.int64)
    for idx, off in enumerate(CELL_OFFSETS):
        tgt = qi @ off
        perm[cell_index(int(tgt[0]), int(tgt[1]), int(tgt[2]))] = idx
    return perm


def s_equal_permutations() -> np.ndarray:
    """The 8 index permutations of the stencil that preserve the x-flux.

    They form the dihedral group of the (y, z) lattice plane: quarter turns
    about the flux axis combined with a reflection across the second axis.
    """
    return np.stack([_permutation_for(q) for q in _dihedral_matrices()])


_S_EQUAL = s_equal_permutations()


def material_switch(inputs: np.ndarray) -> np.ndarray:
    """Swap the two fluids: fractions become their complements, beta unchanged."""
    out = np.array(inputs, dtype=float, copy=True)
    out[..., :N_FRACTIONS] = 1.0 - out[..., :N_FRACTIONS]
    return out


def _expand_permutations(inputs: np.ndarray) -> np.ndarray:
    """(n, 28) -> (n, 8, 28) with fractions permuted per symmetry, beta copied."""
    x = np.asarray(inputs, dtype=float)
    n = len(x)
    out = np.empty((n, len(_S_EQUAL), x.shape[1]))
    out[:, :, :N_FRACTIONS] = x[:, _S_EQUAL]
    out[:, :, N_FRACTIONS:] = x[:, None, N_FRACTIONS:]
    return out


def symmetrized_forward_batch(w: NetworkWeights, inputs: np.ndarray) -> np.ndarray:
    """Mean of the raw network over the 8 flux-preserving permutations."""
    x = np.asarray(inputs, dtype=float)
    expanded = _expand_permutations(x).reshape(-1, x.shape[1])
    return forward_batch(w, expanded).reshape(len(x), len(_S_EQUAL)).mean(axis=1)


def symmetrized_forward(w: NetworkWeights, fractions, beta: float) -> float:
    row = np.concatenate([np.asarray(fractions, dtype=float).reshape(-1), [beta]])
    return float(symmetrized_forward_batch(w, row[None, :])[0])


def wrapped_forward_batch(w: NetworkWeights, inputs: np.ndarray) -> np.ndarray:
    """Symmetrized network combined with the material switch.

    Guarantees out(x) + out(switched x) = 1 on top of permutation invariance.
    """
    x = np.asarray(inputs, dtype=float)
    return 0.5 * symmetrized_forward_batch(w, x) + 0.5 * (
        1.0 - symmetrized_forward_batch(w, material_switch(x))
    )


def wrapped_forward(w: NetworkWeights, fractions, beta: float) -> float:
    row = np.concatenate([np.asarray(fractions, dtype=float).reshape(-1), [beta]])
    return float(wrapped_forward_batch(w, row[None, :])[0])


# ---------------------------------------------------------------------------
# loss, metrics and reference-scheme baselines

def loss_mse(w: NetworkWeights, inputs: np.ndarray, targets: np.ndarray) -> float:
    """Training objective: mean squared error of the raw network."""
    if len(inputs) == 0:
        raise EmptyPartition("cannot evaluate the loss on an empty partition")
    r = forward_batch(w, inputs) - np.asarray(targets, dtype=float)
    return float(np.mean(r * r))


def metrics(w: NetworkWeights, inputs: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """(MSE, MAE) of the wrapped network, the predictor used by the solver."""
    if len(inputs) == 0:
        raise EmptyPartition("cannot evaluate metrics on an empty partition")
    r = wrapped_forward_batch(w, inputs) - np.asarray(targets, dtype=float)
    return float(np.mean(r * r)), float(np.mean(np.abs(r)))


def _nm4_bounds(alpha: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(beta > 1e-12, 1.0 - (1.0 - alpha) / np.maximum(beta, 1e-300), 0.0)
        hi = np.where(beta > 1e-12, alpha / np.maximum(beta, 1e-300), 1.0)
    return np.maximum(lo, 0.0), np.minimum(hi, 1.0)


def upwind_prediction(inputs: np.ndarray) -> np.ndarray:
    """Donor-cell flux: the central stencil fraction."""
    return np.asarray(inputs, dtype=float)[:, cell_index(0, 0, 0)]


def limited_downwind_prediction(inputs: np.ndarray) -> np.ndarray:
    """Downwind neighbor fraction clamped into the donor's admissible interval."""
    x = np.asarray(inputs, dtype=float)
    donor = x[:, cell_index(0, 0, 0)]
    down = x[:, cell_index(1, 0, 0)]
    lo, hi = _nm4_bounds(donor, x[:, N_FRACTIONS])
    return np.clip(down, lo, hi)


def evaluate_predictors(w: NetworkWeights, inputs: np.ndarray, targets: np.ndarray) -> dict:
    """MSE/MAE of the upwind and limited-downwind baselines and the wrapped net."""
    if len(inputs) == 0:
        raise EmptyPartition("cannot evaluate on an empty partition")
    y = np.asarray(targets, dtype=float)
    table = {}
    for name, pred in (
        ("uw", upwind_prediction(inputs)),
        ("ld", limited_downwind_prediction(inputs)),
        ("vofml", wrapped_forward_batch(w, inputs)),
    ):
        r = pred - y
        table[name] = {"mse": float(np.mean(r * r)), "mae": float(np.mean(np.abs(r)))}
    return table


# ---------------------------------------------------------------------------
# gradients

def _forward_cache(w: NetworkWeights, x: np.ndarray):
    pre = []
    h = x
    last = len(w.matrices) - 1
    hidden = [h]
    for ell, (m, b) in enumerate(zip(w.matrices, w.biases)):
        z = h @ m.T + b
        pre.append(z)
        h = relu(z) if ell < last else z
        hidden.append(h)
    return pre, hidden


def _backward(w: NetworkWeights, pre, hidden, dout: np.ndarray) -> NetworkWeights:
    """Backpropagate per-row output seeds ``dout`` into weight-space gradients."""
    last = len(w.matrices) - 1
    grads_m = [None] * len(w.matrices)
    grads_b = [None] * len(w.biases)
    delta = dout[:, None]
    for ell in range(last, -1, -1):
        grads_m[ell] = delta.T @ hidden[ell]
        grads_b[ell] = delta.sum(axis=0)
        if ell > 0:
            delta = (delta @ w.matrices[ell]) * (pre[ell - 1] > 0.0)
    return NetworkWeights(w.layer_dims, grads_m, grads_b)


def grad(w: NetworkWeights, inputs: np.ndarray, targets: np.ndarray) -> NetworkWeights:
    """Exact gradient of ``loss_mse``; the ReLU subgradient at 0 is taken as 0."""
    x = np.asarray(inputs, dtype=float)
    if len(x) == 0:
        raise EmptyPartition("cannot take a gradient over an empty batch")
    y = np.asarray(targets, dtype=float)
    pre, hidden = _forward_cache(w, x)
    residual = hidden[-1][:, 0] - y
    return _backward(w, pre, hidden, 2.0 * residual / len(x))


def wrapped_loss_and_grad(w: NetworkWeights, inputs: np.ndarray, targets: np.ndarray):
    """Loss and gradient when training through the wrapped network (ablation)."""
    x = np.asarray(inputs, dtype=float)
    if len(x) == 0:
        raise EmptyPartition("cannot take a gradient over an empty batch")
    y = np.asarray(targets, dtype=float)
    n = len(x)
    k = len(_S_EQUAL)
    plain = _expand_permutations(x)
    switched = _expand_permutations(material_switch(x))
    big = np.concatenate([plain, switched], axis=1).reshape(2 * k * n, x.shape[1])
    pre, hidden = _forward_cache(w, big)
    outs = hidden[-1][:, 0].reshape(n, 2 * k)
    pred = 0.5 + (outs[:, :k].sum(axis=1) - outs[:, k:].sum(axis=1)) / (2.0 * k)
    residual = pred - y
    seed = np.empty((n, 2 * k))
    seed[:, :k] = (2.0 * residual / n)[:, None] / (2.0 * k)
    seed[:, k:] = -(2.0 * residual / n)[:, None] / (2.0 * k)
    g = _backward(w, pre, hidden, seed.reshape(-1))
    return float(np.mean(residual * residual)), g


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainingSchedule:
    adam_steps: int = 5000
    quasi_newton_steps: int = 5000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int | None = None  # None trains full batch
    full_bfgs: bool = False
    train_wrapped: bool = False
    seed: int = 0
    log_every: int = 0
    history: list = field(default_factory=list, repr=False)


def _objective(w, inputs, targets, wrapped):
    if wrapped:
        return wrapped_loss_and_grad(w, inputs, targets)
    return loss_mse(w, inputs, targets), grad(w, inputs, targets)


def train(
    w0: NetworkWeights,
    train_inputs: np.ndarray,
    train_targets: np.ndarray,
    val_inputs: np.ndarray,
    val_targets: np.ndarray,
    schedule: TrainingSchedule,
) -> NetworkWeights:
    """ADAM followed by a quasi-Newton refinement, keeping the best validation MSE.

    Deterministic for a fixed schedule seed. Raises DivergenceDetected if the
    training loss stops being finite.
    """
    if len(train_inputs) == 0 or len(val_inputs) == 0:
        raise EmptyPartition("training and validation partitions must be nonempty")
    dims = w0.layer_dims
    wrapped = schedule.train_wrapped

    def val_loss(w):
        if wrapped:
            r = wrapped_forward_batch(w, val_inputs) - val_targets
            return float(np.mean(r * r))
        return loss_mse(w, val_inputs, val_targets)

    best = w0.copy()
    best_val = val_loss(w0)
    w = w0.copy()

    # phase 1: ADAM
    rng = np.random.default_rng(schedule.seed)
    vec = w.to_vector()
    m1 = np.zeros_like(vec)
    m2 = np.zeros_like(vec)
    n = len(train_inputs)
    bs = schedule.batch_size
    for step in range(schedule.adam_steps):
        if bs is None or bs >= n:
            bx, by = train_inputs, train_targets
        else:
            take = rng.choice(n, size=bs, replace=False)
            bx, by = train_inputs[take], train_targets[take]
        loss, g = _objective(w, bx, by, wrapped)
        if not np.isfinite(loss):
            raise DivergenceDetected(f"ADAM step {step}: loss {loss}")
        gv = g.to_vector()
        m1 = schedule.beta1 * m1 + (1.0 - schedule.beta1) * gv
        m2 = schedule.beta2 * m2 + (1.0 - schedule.beta2) * gv * gv
        t = step + 1
        hat1 = m1 / (1.0 - schedule.beta1 ** t)
        hat2 = m2 / (1.0 - schedule.beta2 ** t)
        vec -= schedule.learning_rate * hat1 / (np.sqrt(hat2) + schedule.epsilon)
        w = NetworkWeights.from_vector(dims, vec)
        v = val_loss(w)
        if v < best_val:
            best_val = v
            best = w.copy()
        if schedule.log_every and (step + 1) % schedule.log_every == 0:
            schedule.history.append(("adam", step + 1, loss, v))

    # phase 2: quasi-Newton refinement from the ADAM endpoint
    if schedule.quasi_newton_steps > 0:
        state = {"best": best, "best_val": best_val, "it": 0}

        def fun(vecx):
            wx = NetworkWeights.from_vector(dims, vecx)
            loss, g = _objective(wx, train_inputs, train_targets, wrapped)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"quasi-Newton: loss {loss}")
            return loss, g.to_vector()

        def callback(vecx):
            wx = NetworkWeights.from_vector(dims, vecx)
            v = val_loss(wx)
            state["it"] += 1
            if v < state["best_val"]:
                state["best_val"] = v
                state["best"] = wx.copy()
            if schedule.log_every and state["it"] % schedule.log_every == 0:
                schedule.history.append(("qn", state["it"], loss_mse(wx, train_inputs, train_targets), v))

        if schedule.full_bfgs:
            optimize.minimize(
                fun, w.to_vector(), jac=True, method="BFGS", callback=callback,
                options={"maxiter": schedule.quasi_newton_steps, "gtol": 1e-12},
            )
        else:
            optimize.minimize(
                fun, w.to_vector(), jac=True, method="L-BFGS-B", callback=callback,
                options={
                    "maxiter": schedule.quasi_newton_steps,
                    "maxcor": 20,
                    "maxfun": 10 * schedule.quasi_newton_steps + 100,
                    "ftol": 1e-18,
                    "gtol": 1e-14,
                },
            )
        best = state["best"]
        best_val = state["best_val"]

    return best


# ---------------------------------------------------------------------------
# weight serialization

WEIGHTS_MAGIC = "vofml-weights"
WEIGHTS_VERSION = 1


def save_weights(w: NetworkWeights, path) -> None:
    """Self-describing text format, lossless for double precision."""
    with open(path, "w") as fh:
        fh.write(f"{WEIGHTS_MAGIC} {WEIGHTS_VERSION}\n")
        fh.write("dims " + " ".join(str(d) for d in w.layer_dims) + "\n")
        for m, b in zip(w.matrices, w.biases):
            for row in m:
                fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
            fh.write(" ".join(f"{v:.17g}" for v in b) + "\n")


def load_weights(path) -> NetworkWeights:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != WEIGHTS_MAGIC or int(header[1]) != WEIGHTS_VERSION:
            raise ValueError("unrecognized weights file header")
        dims_line = fh.readline().split()
        if not dims_line or dims_line[0] != "dims":
            raise ValueError("missing dims line in weights file")
        dims = tuple(int(v) for v in dims_line[1:])
        mats, biases = [], []
        for prev, cur in zip(dims[:-1], dims[1:]):
            rows = [np.array(fh.readline().split(), dtype=float) for _ in range(cur)]
            m = np.array(rows)
            if m.shape != (cur, prev):
                raise ValueError("matrix block has wrong shape")
            b = np.array(fh.readline().split(), dtype=float)
            if b.shape != (cur,):
                raise ValueError("bias block has wrong shape")
            mats.append(m)
            biases.append(b)
    return NetworkWeights(dims, mats, biases)
