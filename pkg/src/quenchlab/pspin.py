"""Spherical 3-spin model under Langevin dynamics after a quench from infinite temperature.

Couplings are kept in packed form: one value per unordered triple ``i < j < k``,
stored in lexicographic order.  The flat position of a triple is its rank in
that order (see :meth:`CouplingTensor.rank`), so the contraction kernel walks
the array strictly sequentially.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DimensionMismatchError, InvalidParameterError, NumericalDivergenceError
from .observables import ObservableLog

log = logging.getLogger(__name__)

T_DYNAMICAL = 0.612  # dynamical transition of the p=3 model; reference value only


@dataclass(frozen=True)
class PspinParams:
    N: int
    T_final: float
    dt: float
    t_max: float
    disorder_seed: int
    init_seed: int
    noise_seed: int
    p: int = 3

    def __post_init__(self):
        if self.N < 3:
            raise InvalidParameterError(f"N must be >= 3, got {self.N}")
        if self.p != 3:
            raise InvalidParameterError(f"only p=3 is supported, got p={self.p}")
        if not self.T_final >= 0:
            raise InvalidParameterError(f"T_final must be >= 0, got {self.T_final}")
        if not self.dt > 0:
            raise InvalidParameterError(f"dt must be > 0, got {self.dt}")
        if self.t_max != 0 and not self.t_max >= self.dt:
            raise InvalidParameterError(f"t_max must be 0 or >= dt, got {self.t_max}")

    @property
    def n_steps(self) -> int:
        return steps_for_time(self.t_max, self.dt)


def steps_for_time(t: float, dt: float) -> int:
    n = round(t / dt)
    if abs(n * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise InvalidParameterError(f"time {t!r} is not a multiple of dt={dt!r}")
    return int(n)


@dataclass
class CouplingTensor:
    """Quenched couplings ``J_ijk`` for ``i < j < k``, flat in lexicographic order."""

    N: int
    values: np.ndarray

    def __post_init__(self):
        expected = math.comb(self.N, 3)
        if self.values.shape != (expected,):
            raise DimensionMismatchError(
                f"expected {expected} packed couplings for N={self.N}, got shape {self.values.shape}"
            )

    def __len__(self):
        return self.values.shape[0]

    def rank(self, i: int, j: int, k: int) -> int:
        """Flat position of the unordered triple {i, j, k}."""
        i, j, k = sorted((i, j, k))
        if not (0 <= i < j < k < self.N):
            raise InvalidParameterError(f"({i}, {j}, {k}) is not a triple of distinct indices < {self.N}")
        n = self.N
        return (
            math.comb(n, 3) - math.comb(n - i, 3)
            + math.comb(n - i - 1, 2) - math.comb(n - j, 2)
            + (k - j - 1)
        )

    def __getitem__(self, triple) -> float:
        return float(self.values[self.rank(*triple)])

    def __setitem__(self, triple, value):
        self.values[self.rank(*triple)] = value

    @classmethod
    def zeros(cls, N: int) -> "CouplingTensor":
        return cls(N, np.zeros(math.comb(N, 3)))


@dataclass
class SpinState:
    sigma: np.ndarray
    t: float = 0.0

    @property
    def time(self):
        return self.t

    @property
    def vector(self):
        return self.sigma

    def copy(self) -> "SpinState":
        return SpinState(self.sigma.copy(), self.t)


def sample_couplings(N: int, seed: int) -> CouplingTensor:
    """Draw i.i.d. Gaussian couplings with zero mean and variance 3/N^2."""
    if N < 3:
        raise InvalidParameterError(f"N must be >= 3, got {N}")
    rng = np.random.default_rng(seed)
    return CouplingTensor(N, rng.normal(0.0, math.sqrt(3.0) / N, size=math.comb(N, 3)))


def random_sphere_config(N: int, seed: int) -> SpinState:
    if N < 1:
        raise InvalidParameterError(f"N must be >= 1, got {N}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(N)
    return SpinState(_project(x, N), 0.0)


def _project(x: np.ndarray, N: int) -> np.ndarray:
    return x * (math.sqrt(N) / math.sqrt(float(np.dot(x, x))))


@numba.njit(cache=True, fastmath=True)
def _energy_grad_kernel(J, s, g):
    # One pass over the packed triples.  For every pair (i, j) the k-range is a
    # contiguous slice of J, so the dot product and the k scatter vectorize.
    n = s.shape[0]
    g[:] = 0.0
    e = 0.0
    idx = 0
    for i in range(n - 2):
        si = s[i]
        gi = 0.0
        for j in range(i + 1, n - 1):
            sj = s[j]
            a = si * sj
            m = n - j - 1
            Jr = J[idx:idx + m]
            sr = s[j + 1:]
            gr = g[j + 1:]
            t = 0.0
            for k in range(m):
                t += Jr[k] * sr[k]
            for k in range(m):
                gr[k] -= a * Jr[k]
            idx += m
            gi -= sj * t
            g[j] -= si * t
            e -= a * t
        g[i] += gi
    return e


def _check_dims(J: CouplingTensor, sigma: np.ndarray):
    if sigma.shape != (J.N,):
        raise DimensionMismatchError(f"spin vector has shape {sigma.shape}, couplings are for N={J.N}")


def energy_and_grad(J: CouplingTensor, s: SpinState) -> tuple[float, np.ndarray]:
    sigma = np.ascontiguousarray(s.sigma, dtype=np.float64)
    _check_dims(J, sigma)
    g = np.empty_like(sigma)
    e = _energy_grad_kernel(J.values, sigma, g)
    return float(e), g


def energy(J: CouplingTensor, s: SpinState) -> float:
    """Total energy ``-sum_{i<j<k} J_ijk s_i s_j s_k``."""
    return energy_and_grad(J, s)[0]


def grad_energy(J: CouplingTensor, s: SpinState) -> np.ndarray:
    return energy_and_grad(J, s)[1]


def _euler_maruyama(sigma, grad, T, dt, noise):
    x = sigma - dt * grad
    if T > 0:
        x += math.sqrt(2.0 * T * dt) * noise
    return x


def langevin_step(s: SpinState, J: CouplingTensor, T: float, dt: float,
                  noise_stream: np.random.Generator) -> SpinState:
    """One Euler-Maruyama step followed by exact projection back onto the sphere.

    The noise draw happens even at T=0 so that the stream position does not
    depend on the temperature.
    """
    N = J.N
    _, g = energy_and_grad(J, s)
    eta = noise_stream.standard_normal(N)
    x = _euler_maruyama(s.sigma, g, T, dt, eta)
    step = round(s.t / dt) if dt > 0 else 0
    if not np.all(np.isfinite(x)) or not np.dot(x, x) > 0:
        raise NumericalDivergenceError(
            f"non-finite spin update at step {step} (t={s.t})", stamp=step, time=s.t)
    return SpinState(_project(x, N), s.t + dt)


def run_quench(params: PspinParams, schedule=(),
               snapshot_times=()) -> tuple[ObservableLog, list[SpinState]]:
    """Quench a random configuration to ``T_final`` and integrate up to ``t_max``.

    ``schedule`` holds measurement times (multiples of dt, strictly increasing,
    <= t_max).  Time 0 is always measured.  Returns the log of energy per spin
    and a deep copy of the state at every measured time.  ``snapshot_times``
    adds states at further times without logging the energy there.
    """
    n_total = params.n_steps
    steps = [steps_for_time(t, params.dt) for t in schedule]
    extra = [steps_for_time(t, params.dt) for t in snapshot_times]
    for s in (steps, extra):
        if any(b <= a for a, b in zip(s, s[1:])):
            raise InvalidParameterError("schedule times must be strictly increasing")
        if s and (s[0] < 0 or s[-1] > n_total):
            raise InvalidParameterError(f"schedule must lie within [0, t_max={params.t_max}]")
    logged = {0, *steps}
    record = sorted(logged | set(extra))

    J = sample_couplings(params.N, params.disorder_seed)
    state = random_sphere_config(params.N, params.init_seed)
    noise = np.random.default_rng(params.noise_seed)
    N, T, dt = params.N, params.T_final, params.dt

    sigma = state.sigma
    g = np.empty(N)
    logbook = ObservableLog(time_name="t")
    snaps: list[SpinState] = []
    next_rec = 0
    n_last = record[-1]
    for n in range(n_last + 1):
        e = _energy_grad_kernel(J.values, sigma, g)
        if n == record[next_rec]:
            t = n * dt
            if n in logged:
                logbook.append(t, energy=e / N)
            snaps.append(SpinState(sigma.copy(), t))
            next_rec += 1
            if n == n_last:
                break
        x = _euler_maruyama(sigma, g, T, dt, noise.standard_normal(N))
        norm2 = float(np.dot(x, x))
        if not math.isfinite(norm2) or norm2 <= 0:
            raise NumericalDivergenceError(
                f"non-finite spin update at step {n} (t={n * dt})", stamp=n, time=n * dt)
        sigma = x * (math.sqrt(N) / math.sqrt(norm2))
    return logbook, snaps
