import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mimicking.paths import (GridAlignmentError, GridPath, StepSampleConfig, TimeGrid, diff, shift,
                             step_sample, stop)

G2 = TimeGrid.uniform(2.0, 2)


def gp(vals, grid=G2):
    return GridPath(grid, vals)


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid([0.0])
    with pytest.raises(ValueError):
        TimeGrid([0.5, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 1.0, 1.0])
    g = TimeGrid.uniform(1.0, 8)
    assert g.steps == 8 and g.horizon == 1.0 and g.is_uniform
    assert g.index(0.375) == 3
    with pytest.raises(GridAlignmentError):
        g.index(0.3)


def test_path_rejects_bad_values():
    with pytest.raises(ValueError):
        gp([0, 1])
    with pytest.raises(ValueError):
        gp([0, np.nan, 1])


def test_shift_examples():
    assert shift(gp([0, 1, 2]), 1) == gp([1, 2, 2])
    assert shift(gp([5, 6, 7]), -1) == gp([5, 5, 6])
    x = gp([3, -1, 4])
    assert shift(x, 0) == x
    with pytest.raises(GridAlignmentError):
        shift(x, 0.5)


def test_stop_examples():
    x = gp([0, 1, 2])
    assert stop(x, 1) == gp([0, 1, 1])
    assert stop(x, 0) == gp([0, 0, 0])
    assert stop(x, 2) == x
    with pytest.raises(GridAlignmentError):
        stop(x, 0.3)


def test_diff_examples():
    x = gp([0, 1, 2])
    assert diff(x, 0) == x
    assert diff(x, 1) == gp([0, 1, 1])
    assert diff(gp([4, 4, 4]), 1) == gp([0, 0, 0])


paths = st.integers(2, 12).flatmap(
    lambda m: st.tuples(st.just(m), st.lists(st.integers(-50, 50), min_size=m + 1, max_size=m + 1)))


@given(paths, st.data())
@settings(max_examples=200, deadline=None)
def test_operator_algebra(mp, data):
    m, vals = mp
    g = TimeGrid.uniform(float(m), m)
    x = GridPath(g, vals)
    s = data.draw(st.integers(0, m))
    t = data.draw(st.integers(0, m))
    assert stop(stop(x, t), s) == stop(x, min(s, t))
    assert np.all(diff(x, t).values[0] == 0)
    assert shift(x, 0) == x
    assert not np.any(diff(stop(x, t), t).values)


def test_csv_roundtrip(tmp_path):
    g = TimeGrid.uniform(1.0, 4)
    x = GridPath(g, np.arange(10.0).reshape(5, 2) / 3)
    x.to_csv(tmp_path / "p.csv")
    y = GridPath.from_csv(tmp_path / "p.csv")
    assert y == x


def test_step_sample_config():
    with pytest.raises(ValueError):
        StepSampleConfig(0, 0.5)
    with pytest.raises(ValueError):
        StepSampleConfig(2, 1.5)


def test_step_sample_constant():
    g = TimeGrid.uniform(2.0, 64)
    f = GridPath(g, np.full(65, 3.0))
    for n, u in [(1, 0.0), (4, 0.3), (8, 1.0)]:
        out = step_sample(f, StepSampleConfig(n, u)).scalar()
        t = g.times
        assert np.all(out[t >= u / n] == 3.0)
        assert np.all(out[t < u / n] == 0.0)


def test_step_sample_identity_n1():
    g = TimeGrid.uniform(4.0, 16)
    f = GridPath(g, g.times)
    out = step_sample(f, StepSampleConfig(1, 0.0)).scalar()
    assert np.array_equal(out, np.floor(g.times))


def _mean_l1(n, grid, us):
    f = GridPath(grid, grid.times)
    errs = []
    for u in us:
        fn = step_sample(f, StepSampleConfig(n, u)).scalar()
        errs.append(np.trapezoid(np.abs(grid.times - fn), grid.times))
    return np.mean(errs)


def _l1_oracle(n):
    # f(t) = t on [0, 1]: n - 1 full intervals with error 1/(2 n^2) each, plus the
    # zero head [0, u/n) and the partial tail, each contributing E[u^2]/(2 n^2) = 1/(6 n^2)
    return (n - 1 / 3) / (2 * n * n)


def test_step_sample_l1_convergence():
    grid = TimeGrid.uniform(1.0, 4096)
    us = (np.arange(64) + 0.5) / 64
    ns = (2, 4, 8, 16, 32)
    errs = [_mean_l1(n, grid, us) for n in ns]
    for n, e in zip(ns, errs):
        assert abs(e - _l1_oracle(n)) < grid.times[1]  # up to grid resolution
    assert all(b < a for a, b in zip(errs, errs[1:]))
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert abs(ratios[-1] - 0.5) < 0.02
