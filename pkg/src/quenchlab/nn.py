"""Fully connected ReLU networks trained with constant-rate SGD, written out by hand.

Two heads are supported:

* ``ToyA``: one hidden ReLU layer, a single sigmoid output and squared error
  against binary labels.
* ``FullyConnectedB``: ReLU hidden layers (100, 100 by default) and a
  10-way softmax with negative log-likelihood.

All parameters live in one flat float64 vector.  Layout, layer by layer from
the input side: the weight matrix of shape ``(fan_out, fan_in)`` in row-major
order, then its bias vector of length ``fan_out``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .errors import DimensionMismatchError, InvalidParameterError, NumericalDivergenceError
from .observables import ObservableLog, noise_D, noise_subset_indices

log = logging.getLogger(__name__)

TOY_A = "ToyA"
FC_B = "FullyConnectedB"


@dataclass(frozen=True)
class NetArch:
    kind: Literal["ToyA", "FullyConnectedB"]
    input_dim: int
    hidden_sizes: tuple
    output_dim: int
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.kind not in (TOY_A, FC_B):
            raise InvalidParameterError(f"unknown architecture kind {self.kind!r}")
        if self.kind == TOY_A and (len(self.hidden_sizes) != 1 or self.output_dim != 1):
            raise InvalidParameterError("ToyA needs exactly one hidden layer and output_dim=1")
        if self.kind == FC_B and self.output_dim < 2:
            raise InvalidParameterError("FullyConnectedB needs at least 2 output classes")
        sizes = (self.input_dim, *self.hidden_sizes, self.output_dim)
        if any(s < 1 for s in sizes):
            raise InvalidParameterError(f"zero-sized layer in {sizes}")

    @classmethod
    def toy_a(cls, input_dim: int, hidden: int, init_seed: int = 0) -> "NetArch":
        return cls(TOY_A, input_dim, (hidden,), 1, init_seed)

    @classmethod
    def fully_connected_b(cls, input_dim: int = 784, hidden_sizes=(100, 100), output_dim: int = 10,
                          init_seed: int = 0) -> "NetArch":
        return cls(FC_B, input_dim, tuple(hidden_sizes), output_dim, init_seed)

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        """``(fan_in, fan_out)`` per layer."""
        sizes = (self.input_dim, *self.hidden_sizes, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_dims)


@dataclass
class WeightSnapshot:
    w: np.ndarray
    iteration: int = 0

    @property
    def time(self):
        return self.iteration

    @property
    def vector(self):
        return self.w

    def copy(self) -> "WeightSnapshot":
        return WeightSnapshot(self.w.copy(), self.iteration)


@dataclass
class GradientRecord:
    mean_grad: np.ndarray
    per_sample_sq_dev: Optional[float] = None


@dataclass(frozen=True)
class TrainConfig:
    arch: NetArch
    batch_size: int
    learning_rate: float
    max_iterations: int
    data_seed: int
    shuffle_seed: int
    noise_subset_size: int = 1000

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iterations < 0:
            raise InvalidParameterError("max_iterations must be >= 0")
        if self.noise_subset_size < 1:
            raise InvalidParameterError("noise_subset_size must be >= 1")


def unpack(w: np.ndarray, arch: NetArch) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views ``(W, b)`` into the flat vector, one pair per layer."""
    if w.shape != (arch.n_params,):
        raise DimensionMismatchError(f"weight vector has shape {w.shape}, architecture needs {arch.n_params}")
    layers = []
    pos = 0
    for fan_in, fan_out in arch.layer_dims:
        W = w[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
        pos += fan_in * fan_out
        b = w[pos:pos + fan_out]
        pos += fan_out
        layers.append((W, b))
    return layers


def init_net(arch: NetArch) -> WeightSnapshot:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases of every layer."""
    rng = np.random.default_rng(arch.init_seed)
    w = np.empty(arch.n_params)
    for (W, b), (fan_in, _) in zip(unpack(w, arch), arch.layer_dims):
        bound = 1.0 / math.sqrt(fan_in)
        W[...] = rng.uniform(-bound, bound, size=W.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return WeightSnapshot(w, 0)


def _weights(w):
    return w.w if isinstance(w, WeightSnapshot) else np.asarray(w, dtype=np.float64)


def _check_batch(arch: NetArch, X, y):
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidParameterError("batch must be a non-empty 2-D array")
    if X.shape[1] != arch.input_dim:
        raise DimensionMismatchError(f"features have dim {X.shape[1]}, network expects {arch.input_dim}")
    if y.shape != (X.shape[0],):
        raise DimensionMismatchError("label count differs from sample count")
    n_classes = 2 if arch.kind == TOY_A else arch.output_dim
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidParameterError(f"labels must lie in [0, {n_classes - 1}]")


def _forward(layers, X):
    """Returns (output pre-activations, list of layer inputs, list of hidden pre-activations)."""
    a = X
    inputs = []
    pre = []
    for W, b in layers[:-1]:
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    W, b = layers[-1]
    inputs.append(a)
    return a @ W.T + b, inputs, pre


def _per_sample_loss(arch, out, y):
    if arch.kind == TOY_A:
        p = expit(out[:, 0])
        return (p - y) ** 2, p
    lsm = log_softmax(out, axis=1)
    return -lsm[np.arange(y.size), y], lsm


def _predictions(arch, out):
    if arch.kind == TOY_A:
        return (out[:, 0] > 0).astype(np.int64)
    return np.argmax(out, axis=1)


def forward_loss(w, arch: NetArch, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean and per-sample losses of a batch."""
    y = np.asarray(y)
    _check_batch(arch, X, y)
    out, _, _ = _forward(unpack(_weights(w), arch), X)
    losses, _ = _per_sample_loss(arch, out, y)
    return float(losses.mean()), losses


def evaluate(w, arch: NetArch, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean loss and accuracy from one forward pass."""
    y = np.asarray(y)
    _check_batch(arch, X, y)
    out, _, _ = _forward(unpack(_weights(w), arch), X)
    losses, _ = _per_sample_loss(arch, out, y)
    return float(losses.mean()), float(np.mean(_predictions(arch, out) == y))


def _output_delta(arch, out, y):
    # d loss_s / d out_s, unscaled by batch size
    if arch.kind == TOY_A:
        p = expit(out[:, 0])
        return (2.0 * (p - y) * p * (1.0 - p))[:, None]
    d = softmax(out, axis=1)
    d[np.arange(y.size), y] -= 1.0
    return d


def backward(w, arch: NetArch, X: np.ndarray, y: np.ndarray, out_grad: Optional[np.ndarray] = None) -> GradientRecord:
    """Gradient of the mean batch loss w.r.t. every parameter, by backpropagation.

    ReLU'(0) is taken to be 0.
    """
    y = np.asarray(y)
    _check_batch(arch, X, y)
    layers = unpack(_weights(w), arch)
    out, inputs, pre = _forward(layers, X)
    delta = _output_delta(arch, out, y) / X.shape[0]
    g = np.empty(arch.n_params) if out_grad is None else out_grad
    grads = unpack(g, arch)
    for li in range(len(layers) - 1, -1, -1):
        gW, gb = grads[li]
        np.dot(delta.T, inputs[li], out=gW)
        np.sum(delta, axis=0, out=gb)
        if li > 0:
            delta = (delta @ layers[li][0]) * (pre[li - 1] > 0)
    return GradientRecord(g)


def per_sample_gradients(w, arch: NetArch, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``(n, M)`` matrix whose row s is the gradient of the loss of sample s alone."""
    y = np.asarray(y)
    _check_batch(arch, X, y)
    layers = unpack(_weights(w), arch)
    out, inputs, pre = _forward(layers, X)
    n = X.shape[0]
    delta = _output_delta(arch, out, y)
    G = np.empty((n, arch.n_params))
    pos = [0]
    for fan_in, fan_out in arch.layer_dims:
        pos.append(pos[-1] + fan_in * fan_out + fan_out)
    for li in range(len(layers) - 1, -1, -1):
        fan_in, fan_out = arch.layer_dims[li]
        start = pos[li]
        Gw = G[:, start:start + fan_in * fan_out].reshape(n, fan_out, fan_in)
        np.multiply(delta[:, :, None], inputs[li][:, None, :], out=Gw)
        G[:, start + fan_in * fan_out:pos[li + 1]] = delta
        if li > 0:
            delta = (delta @ layers[li][0]) * (pre[li - 1] > 0)
    return G


def sgd_step(w: WeightSnapshot, g: GradientRecord, alpha: float) -> WeightSnapshot:
    if g.mean_grad.shape != w.w.shape:
        raise DimensionMismatchError("gradient and weights differ in length")
    new = w.w - alpha * g.mean_grad
    if not np.all(np.isfinite(new)):
        raise NumericalDivergenceError(f"non-finite weights after iteration {w.iteration + 1}",
                                       stamp=w.iteration + 1)
    return WeightSnapshot(new, w.iteration + 1)


class BatchStream:
    """Shuffled full-epoch traversal: every epoch visits each sample once, last batch may be short."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._perm = None
        self._pos = n

    def next(self) -> np.ndarray:
        if self._pos >= self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx


def train_run(cfg: TrainConfig, data, schedule=(), test_data=None,
              snapshot_sink: Optional[Callable[[WeightSnapshot], None]] = None,
              keep_snapshots: bool = True,
              snapshot_times=()) -> tuple[ObservableLog, list[WeightSnapshot]]:
    """Constant-rate SGD from a fresh initialization, measured at ``schedule`` iterations.

    Iteration 0 is always measured.  At each measurement the train/test loss
    and accuracy, the noise D on a freshly drawn subset and a copy of the
    weights are recorded.  ``snapshot_times`` adds weight copies at further
    iterations without measuring anything there.  ``snapshot_sink`` receives
    every snapshot as it is taken; with ``keep_snapshots=False`` nothing is
    held in memory.
    """
    from threadpoolctl import threadpool_limits

    arch = cfg.arch
    sched = [int(t) for t in schedule]
    extra = [int(t) for t in snapshot_times]
    for s in (sched, extra):
        if any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidParameterError("schedule iterations must be strictly increasing")
        if s and (s[0] < 0 or s[-1] > cfg.max_iterations):
            raise InvalidParameterError(
                f"schedule must lie within [0, max_iterations={cfg.max_iterations}]")
    measured = {0, *sched}
    record = sorted(measured | set(extra))
    X, y = data.features, data.labels
    _check_batch(arch, X, y)
    n = X.shape[0]
    if cfg.noise_subset_size > n:
        raise InvalidParameterError(f"noise_subset_size {cfg.noise_subset_size} exceeds train size {n}")

    logbook = ObservableLog(time_name="iteration")
    snaps: list[WeightSnapshot] = []
    state = init_net(arch)
    w = state.w
    g = np.empty_like(w)
    batches = BatchStream(n, cfg.batch_size, cfg.shuffle_seed)
    alpha = cfg.learning_rate
    last = record[-1]
    next_rec = 0

    # overflow is caught by the finiteness check below
    with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
        for it in range(last + 1):
            if it == record[next_rec]:
                snap = WeightSnapshot(w.copy(), it)
                if it in measured:
                    logbook.append(it, **_measure(snap, cfg, data, test_data))
                if snapshot_sink is not None:
                    snapshot_sink(snap)
                if keep_snapshots:
                    snaps.append(snap)
                next_rec += 1
                if it == last:
                    break
            idx = batches.next()
            backward(w, arch, X[idx], y[idx], out_grad=g)
            w -= alpha * g
            if not np.isfinite(w).all():
                raise NumericalDivergenceError(
                    f"non-finite weights after iteration {it + 1}", stamp=it + 1)
    return logbook, snaps


def _measure(snap: WeightSnapshot, cfg: TrainConfig, data, test_data) -> dict:
    arch = cfg.arch
    train_loss, train_acc = evaluate(snap.w, arch, data.features, data.labels)
    row = {"train_loss": train_loss, "train_acc": train_acc, "test_loss": None, "test_acc": None}
    if test_data is not None:
        row["test_loss"], row["test_acc"] = evaluate(snap.w, arch, test_data.features, test_data.labels)
    sub = noise_subset_indices(data.features.shape[0], cfg.noise_subset_size, cfg.shuffle_seed, snap.iteration)
    row["D"] = noise_D(snap.w, arch, data.features[sub], data.labels[sub])
    return row
