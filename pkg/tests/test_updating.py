import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimicking.paths import GridPath, TimeGrid, stop
from mimicking.updating import (PathState, check_axioms, initial_state, make, make_identity, make_integral,
                                make_maximum, make_path_to_date)

G2 = TimeGrid.uniform(2.0, 2)


def test_identity_examples():
    phi = make_identity(1)
    states = phi.evaluate(np.array([3.0]), GridPath(G2, [0, 1, -1]))
    assert [float(s[0]) for s in states] == [3, 4, 2]
    zero = phi.evaluate(np.array([0.0]), GridPath(G2, [0, 0, 0]))
    assert all(float(s[0]) == 0 for s in zero)


def test_integral_examples():
    phi = make_integral()
    states = phi.evaluate(np.array([0.0, 0.0]), GridPath(G2, [0, 1, 2]))
    assert np.array_equal(states[2], [2.0, 2.0])
    g1 = TimeGrid.uniform(1.0, 1)
    s = phi.evaluate(np.array([1.5, 0.0]), GridPath(g1, [0, 0]))
    assert np.array_equal(s[1], [1.5, 1.5])


def test_integral_additivity():
    phi = make_integral()
    x = GridPath(G2, [0, 1, 3])
    full = phi.evaluate(np.array([0.0, 0.0]), x)[2]
    mid = phi.evaluate(np.array([0.0, 0.0]), x)[1]
    rest = phi.evaluate(mid, GridPath(G2, [0, 2, 2]))[1]
    assert np.array_equal(full, rest)


def test_maximum_examples():
    phi = make_maximum()
    states = phi.evaluate(np.array([1.0, 2.0]), GridPath(G2, [0, 2, -1]))
    assert [tuple(s) for s in states] == [(1, 2), (3, 3), (0, 3)]
    g = TimeGrid.uniform(1.0, 10)
    up = phi.evaluate(np.array([0.5, 0.5]), GridPath(g, np.cumsum(np.r_[0, np.ones(10)])))
    assert all(s[0] == s[1] for s in up)
    with pytest.raises(ValueError):
        phi.evaluate(np.array([3.0, 2.0]), GridPath(G2, [0, 0, 0]))


def test_path_to_date_examples():
    phi = make_path_to_date(1)
    e = PathState(0.0, np.full(3, 5.0))
    states = phi.evaluate(e, GridPath(G2, [0, 1, 2]))
    assert states[1].s == 1.0
    assert np.array_equal(states[1].x[:, 0], [5, 6, 6])
    flat = phi.evaluate(e, GridPath(G2, [0, 0, 0]))
    assert all(np.array_equal(s.x[:, 0], [5, 5, 5]) for s in flat)


@given(st.lists(st.integers(-20, 20), min_size=9, max_size=9))
@settings(max_examples=100, deadline=None)
def test_path_to_date_recovers_history(vals):
    g = TimeGrid.uniform(8.0, 8)
    x = GridPath(g, vals)
    phi = make_path_to_date(1)
    e = initial_state(phi, vals[0], g)
    st2 = phi.evaluate(e, GridPath(g, np.asarray(vals, float) - vals[0]))[2]
    assert st2.s == 2.0
    assert np.array_equal(st2.x, stop(x, 2).values)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=40), st.floats(-3, 3), st.floats(0, 3))
@settings(max_examples=100, deadline=None)
def test_maximum_keeps_order(steps, e1, gap):
    phi = make_maximum()
    state = phi.initial(np.array([[e1]]), TimeGrid.uniform(1.0, len(steps)))
    state[:, 1] += gap
    y = np.cumsum(np.r_[0.0, steps])
    for k in range(len(steps)):
        state = phi.step(state, y[k:k + 1, None], y[k + 1:k + 2, None], 0.1)
        assert state[0, 0] <= state[0, 1]


@pytest.mark.parametrize("kind, bound", [("identity", 0.0), ("maximum", 0.0), ("path", 0.0),
                                         ("integral", 1e-12)])
def test_axioms(kind, bound):
    rep = check_axioms(make(kind), trials=100, seed=1)
    assert rep.initial <= bound
    assert rep.non_anticipative <= bound
    assert rep.semigroup <= bound


def test_axiom_harness_detects_violation():
    class Anticipating(type(make_identity(1))):
        def trajectories(self, E, X, grid):
            return E[:, None, :] + X[:, ::-1]

    rep = check_axioms(Anticipating(1), trials=5, seed=0)
    assert rep.non_anticipative > 0


def test_make_rejects_unknown():
    with pytest.raises(ValueError):
        make("median")
    with pytest.raises(ValueError):
        make("maximum", 2)


def test_axiom_runtime():
    t0 = time.perf_counter()
    for kind in ("identity", "integral", "maximum", "path"):
        check_axioms(make(kind), trials=100)
    assert time.perf_counter() - t0 < 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_path_batch_trajectories_match_loop(seed):
    # naive oracle: keep the stored path up to its time, then append the driver stopped at j
    rng = np.random.default_rng(seed)
    grid = TimeGrid.uniform(1.0, 8)
    M = grid.steps
    K = 5
    i_s = rng.integers(0, M + 1, size=K)
    P = rng.standard_normal((K, M + 1, 2))
    for k, i in enumerate(i_s):
        P[k, i:] = P[k, i]
    X = rng.standard_normal((K, M + 1, 2))
    X[:, 0] = 0.0
    times, vals = make("path", 2).trajectories((grid.times[i_s], P), X, grid)
    for k, i in enumerate(i_s):
        for j in range(M + 1):
            want = P[k].copy()
            for m in range(i + 1, M + 1):
                want[m] = P[k, i] + X[k, min(m - i, j)]
            assert np.array_equal(vals[k, j], want)
            assert times[k, j] == grid.times[i] + grid.times[j]
