import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from quenchlab.errors import DimensionMismatchError, InvalidParameterError
from quenchlab.nn import NetArch, WeightSnapshot, backward
from quenchlab.observables import (ObservableLog, lag_times, log_schedule, msd, msd_curves, noise_D,
                                   noise_subset_indices)
from quenchlab.pspin import SpinState, random_sphere_config

import oracles


def test_log_schedule_powers_of_two():
    assert log_schedule(8, 2, 1).times == (1, 2, 4, 8)


def test_log_schedule_dense_start():
    times = log_schedule(10, 1.1, 1).times
    assert times == tuple(range(1, 11))


def test_log_schedule_is_logarithmic():
    s = log_schedule(10**6, 1.2, 1)
    assert len(s) <= 80
    assert s.times[-1] == 10**6
    assert all(b > a for a, b in zip(s.times, s.times[1:]))


def test_log_schedule_caps_and_includes_t_max():
    assert log_schedule(10, 3, 1).times == (1, 3, 9, 10)
    assert log_schedule(5, 2, 5).times == (5,)


@pytest.mark.parametrize("args", [(10, 1.0, 1), (10, 2, 0), (3, 2, 5)])
def test_log_schedule_rejects(args):
    with pytest.raises(InvalidParameterError):
        log_schedule(*args)


def test_msd_basic():
    s = random_sphere_config(50, 0)
    assert msd(s, s) == 0.0
    assert msd(s, SpinState(-s.sigma)) == pytest.approx(4.0, rel=1e-15)
    with pytest.raises(DimensionMismatchError):
        msd(np.zeros(3), np.zeros(4))


def test_msd_independent_sphere_points():
    a, b = random_sphere_config(10_000, 1), random_sphere_config(10_000, 2)
    assert abs(msd(a, b) - 2.0) < 0.1


vec = arrays(np.float64, 6, elements=st.floats(-1e3, 1e3))


@settings(max_examples=200, deadline=None)
@given(vec, vec, vec)
def test_msd_symmetry_and_bound(a, b, c):
    assert msd(a, b) == msd(b, a)
    assert msd(a, b) >= 0
    assert msd(a, c) <= 2 * (msd(a, b) + msd(b, c)) * (1 + 1e-12) + 1e-300


def snaps(vectors, times):
    return [WeightSnapshot(np.asarray(v, dtype=float), t) for v, t in zip(vectors, times)]


def test_msd_curves_combinatorics():
    assert len(msd_curves(snaps([[0.0]], [0]), [0])) == 0
    c = msd_curves(snaps([[0.0, 0.0], [1.0, 1.0], [3.0, 1.0]], [0, 1, 2]), [0, 1])
    t0, d0 = c.curves[0]
    np.testing.assert_array_equal(t0, [1, 2])
    np.testing.assert_array_equal(d0, [1.0, 5.0])
    t1, d1 = c.curves[1]
    np.testing.assert_array_equal(t1, [1])
    np.testing.assert_array_equal(d1, [2.0])


def test_msd_curves_frozen_and_missing():
    frozen = snaps([[1.0, 2.0]] * 4, [0, 1, 3, 7])
    c = msd_curves(frozen, [0, 1, 3])
    assert all(np.all(d == 0) for _, d in c.curves.values())
    with pytest.raises(InvalidParameterError) as info:
        msd_curves(frozen, [2])
    assert "[0, 1, 3, 7]" in str(info.value)


def test_observable_log():
    log = ObservableLog()
    log.append(0, a=1.0)
    log.append(1, a=2.0, b=3.0)
    log.append(2, b=4.0)
    assert log.columns == {"a": [1.0, 2.0, None], "b": [None, 3.0, 4.0]}
    with pytest.raises(InvalidParameterError):
        log.append(2, a=0.0)


def tiny_net(seed, n=8):
    rng = np.random.default_rng(seed)
    arch = NetArch.toy_a(3, 4, init_seed=seed)
    w = rng.normal(0, 1, arch.n_params)
    return arch, w, rng.uniform(size=(n, 3)), rng.integers(0, 2, n)


def test_noise_identical_samples_is_zero():
    arch, w, X, y = tiny_net(0)
    Xs, ys = np.repeat(X[:1], 6, axis=0), np.repeat(y[:1], 6)
    assert noise_D(w, arch, Xs, ys) == pytest.approx(0.0, abs=1e-30)


def test_noise_formula_plus_minus_two():
    assert oracles.noise_direct([[2.0], [-2.0]]) == 4.0


@pytest.mark.parametrize("kind", ["ToyA", "FullyConnectedB"])
@pytest.mark.parametrize("seed", range(5))
def test_noise_matches_direct_oracle(kind, seed):
    rng = np.random.default_rng(seed)
    if kind == "ToyA":
        arch, w, X, y = tiny_net(seed)
    else:
        arch = NetArch.fully_connected_b(4, (3, 3), 3, init_seed=seed)
        w = rng.normal(0, 1, arch.n_params)
        X, y = rng.uniform(size=(8, 4)), rng.integers(0, 3, 8)
    grads = [list(backward(w, arch, X[s:s + 1], y[s:s + 1]).mean_grad) for s in range(8)]
    ref = oracles.noise_direct(grads)
    assert noise_D(w, arch, X, y, chunk=3) == pytest.approx(ref, rel=1e-12)
    assert noise_D(w, arch, X, y) == pytest.approx(ref, rel=1e-12)


def test_noise_invariant_to_ordering():
    arch, w, X, y = tiny_net(3, n=16)
    perm = np.random.default_rng(0).permutation(16)
    assert noise_D(w, arch, X[perm], y[perm]) == pytest.approx(noise_D(w, arch, X, y), rel=1e-13)


def test_noise_zero_iff_identical_gradients():
    arch, w, X, y = tiny_net(4)
    assert noise_D(w, arch, X, y) > 1e-14


def test_noise_subset_deterministic():
    a = noise_subset_indices(100, 30, 5, 17)
    assert np.array_equal(a, noise_subset_indices(100, 30, 5, 17))
    assert len(set(a)) == 30
    assert not np.array_equal(a, noise_subset_indices(100, 30, 5, 18))
    assert len(noise_subset_indices(10, 30, 5, 0)) == 10


def test_lag_times_give_each_tw_its_short_lags():
    extra = lag_times([0, 100, 1000], 2000, 2.0)
    for tw in (100, 1000):
        assert {tw + 1, tw + 2, tw + 4, tw + 8} <= set(extra)
    assert extra == sorted(set(extra))
    assert max(extra) == 2000
    assert lag_times([5], 5, 2.0) == []


@given(st.lists(st.integers(0, 500), min_size=1, max_size=6, unique=True),
       st.integers(501, 5000), st.floats(1.05, 3.0))
@settings(max_examples=60, deadline=None)
def test_lag_times_property(tws, t_max, base):
    extra = lag_times(sorted(tws), t_max, base)
    assert all(a < b for a, b in zip(extra, extra[1:]))
    assert all(min(tws) < t <= t_max for t in extra)
    # the shortest lag is one unit for every waiting time
    assert all(tw + 1 in extra for tw in tws)
