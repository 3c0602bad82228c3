"""Measurement machinery shared by the spin and network systems.

Schedules, the two-time mean-square displacement and the SGD noise estimator
live here so both systems are probed by exactly the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError


@dataclass
class ObservableLog:
    """Time-indexed columns of scalar measurements."""

    time_name: str = "t"
    times: list = field(default_factory=list)
    columns: dict = field(default_factory=dict)

    def append(self, t, **values):
        if self.times and not t > self.times[-1]:
            raise InvalidParameterError(f"log times must increase: {t} after {self.times[-1]}")
        n = len(self.times)
        for name, v in values.items():
            col = self.columns.setdefault(name, [None] * n)
            col.append(v)
        for name, col in self.columns.items():
            if len(col) == n:
                col.append(None)
        self.times.append(t)

    def __len__(self):
        return len(self.times)

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if v is None else v for v in self.columns[name]], dtype=float)


@dataclass(frozen=True)
class Schedule:
    times: tuple
    base: float

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise InvalidParameterError("schedule times must be strictly increasing")

    def __iter__(self):
        return iter(self.times)

    def __len__(self):
        return len(self.times)


def log_schedule(t_max, base: float, first_step) -> Schedule:
    """Exponentially spaced integer times ``round(first_step * base**k)``, capped at and including ``t_max``.

    Rounding is half-to-even; duplicates produced by rounding at small k are dropped.
    """
    if not base > 1:
        raise InvalidParameterError(f"base must be > 1, got {base}")
    if not first_step > 0:
        raise InvalidParameterError(f"first_step must be > 0, got {first_step}")
    if not t_max >= first_step:
        raise InvalidParameterError(f"t_max ({t_max}) must be >= first_step ({first_step})")
    out = []
    k = 0
    while True:
        x = first_step * base**k
        if x >= t_max:
            break
        v = int(np.rint(x))
        if v > 0 and (not out or v > out[-1]) and v < t_max:
            out.append(v)
        k += 1
    out.append(int(np.rint(t_max)))
    return Schedule(tuple(out), base)


def _vec(x) -> np.ndarray:
    v = getattr(x, "vector", x)
    return np.asarray(v, dtype=np.float64)


def msd(a, b) -> float:
    """Mean over components of the squared difference between two configurations."""
    va, vb = _vec(a), _vec(b)
    if va.shape != vb.shape:
        raise DimensionMismatchError(f"configurations have lengths {va.shape} and {vb.shape}")
    d = va - vb
    return float(np.dot(d, d) / d.size)


@dataclass
class MsdCurveSet:
    """Delta(t_w, t_w + t) per waiting time.

    ``curves[tw]`` is a pair ``(t, delta)`` of arrays; ``D[tw]`` the noise used
    for rescaling, when one was applied.
    """

    system: str
    curves: dict = field(default_factory=dict)
    D: dict = field(default_factory=dict)

    @property
    def tw_values(self) -> list:
        return list(self.curves)

    def __len__(self):
        return len(self.curves)

    def subset(self, predicate) -> "MsdCurveSet":
        keep = [tw for tw in self.curves if predicate(tw)]
        return MsdCurveSet(self.system, {tw: self.curves[tw] for tw in keep},
                           {tw: self.D[tw] for tw in keep if tw in self.D})


def msd_curves(snapshots: Sequence, tw_list, system: str = "weights") -> MsdCurveSet:
    """Two-time MSD from every ``t_w`` in ``tw_list`` to all later snapshots."""
    times = [s.time for s in snapshots]
    index = {t: i for i, t in enumerate(times)}
    missing = [tw for tw in tw_list if tw not in index]
    if missing:
        raise InvalidParameterError(
            f"waiting times {missing} were not snapshotted; available stamps: {times}")
    out = MsdCurveSet(system)
    for tw in tw_list:
        i = index[tw]
        ref = _vec(snapshots[i])
        later = snapshots[i + 1:]
        if not later:
            continue
        ts = np.array([s.time - tw for s in later], dtype=float)
        ds = np.array([msd(ref, s) for s in later])
        out.curves[tw] = (ts, ds)
    return out


def average_curves(sets: Sequence[MsdCurveSet]) -> MsdCurveSet:
    """Pointwise mean over realizations measured on the same schedule."""
    first = sets[0]
    out = MsdCurveSet(first.system)
    for tw, (t, _) in first.curves.items():
        stack = []
        for s in sets:
            ts, ds = s.curves[tw]
            if not np.array_equal(ts, t):
                raise DimensionMismatchError(f"realizations disagree on the time grid for t_w={tw}")
            stack.append(ds)
        out.curves[tw] = (t.copy(), np.mean(stack, axis=0))
    return out


def default_tw_list(times: Sequence, every: int = 4) -> list:
    """Every ``every``-th measurement time, excluding the last one (no later snapshot)."""
    return list(times[:-1:every]) if len(times) > 1 else []


def lag_times(tw_list: Sequence, t_max, lag_base: float, first_lag=1) -> list:
    """Extra snapshot times ``t_w + lag``, lags log-spaced from ``first_lag`` to ``t_max - t_w``.

    On a single geometric grid the shortest lag after ``t_w`` is about
    ``(b - 1) t_w``, so late waiting times have no short-lag points at all.
    Snapshotting at these times gives every curve the same lag resolution.
    Integer inputs in, sorted unique integers out.
    """
    out = set()
    for tw in tw_list:
        span = t_max - tw
        if span >= first_lag:
            out.update(int(tw) + s for s in log_schedule(span, lag_base, first_lag))
    return sorted(out)


def noise_D(w, arch, X: np.ndarray, y: np.ndarray, chunk: int = 128) -> float:
    """Per-weight variance of single-sample gradients around their mean on ``(X, y)``.

    ``D = (1/n) sum_s (1/M) |g_s - g_mean|^2``.  Per-sample gradients are
    materialized in fixed chunks so memory stays bounded and the reduction
    order does not depend on anything but ``chunk``.
    """
    from .nn import backward, per_sample_gradients

    n = X.shape[0]
    if n == 0:
        raise InvalidParameterError("noise subset is empty")
    mean = backward(w, arch, X, y).mean_grad
    M = mean.size
    total = 0.0
    for start in range(0, n, chunk):
        G = per_sample_gradients(w, arch, X[start:start + chunk], y[start:start + chunk])
        G -= mean
        total += float(np.einsum("ij,ij->", G, G))
    return total / (n * M)


def noise_subset_indices(n_train: int, size: int, seed: int, stamp: int) -> np.ndarray:
    """Deterministic subset of the training set for the noise measurement at ``stamp``."""
    size = min(size, n_train)
    rng = np.random.default_rng([seed, 0x4E015E, stamp])
    return np.sort(rng.choice(n_train, size=size, replace=False))
