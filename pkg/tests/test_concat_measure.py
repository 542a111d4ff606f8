from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimicking.concat_measure import (ConcatError, ExtendedPartitionSpec, FinitePathSpace,
                                      block_independent, check_conditional, check_h_cells,
                                      check_marginal_preservation, concat_pair, concatenate, current_level,
                                      full_history, random_path_space, simple_example, trivial)

F = Fraction


def test_simple_example_quarters():
    p, pi, c = simple_example()
    want = {(0, 0, 0): F(1, 4), (0, 0, 1): F(1, 4), (0, 1, 1): F(1, 4), (0, 1, 2): F(1, 4)}
    assert c.weights == want
    assert check_h_cells(p, pi, c) and check_conditional(p, pi, c)


def test_simple_example_marginal_gap():
    # retaining nothing breaks the level marginal at the end; retaining the level keeps it
    p, pi, _ = simple_example()
    assert check_marginal_preservation(p, pi).tv == [0, 0, F(1, 2)]
    level = ExtendedPartitionSpec.with_label((0, 1), current_level)
    assert check_marginal_preservation(p, level).tv == [0, 0, 0]


@pytest.mark.parametrize("seed", range(10))
def test_retention_extremes(seed):
    rng = np.random.default_rng(seed)
    p = random_path_space(rng)
    times = (0, 1, 3)
    full = ExtendedPartitionSpec.with_label(times, full_history)
    assert concatenate(p, full).weights == p.weights
    triv = ExtendedPartitionSpec.with_label(times, trivial)
    c = concatenate(p, triv)
    assert block_independent(p, triv, c)
    assert check_h_cells(p, triv, c) and check_conditional(p, triv, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["trivial", "current_level", "full_history"]))
def test_defining_properties(seed, label):
    rng = np.random.default_rng(seed)
    p = random_path_space(rng)
    pi = ExtendedPartitionSpec.with_label((0, 2), label)
    c = concatenate(p, pi)
    assert sum(c.weights.values()) == 1
    assert check_h_cells(p, pi, c) and check_conditional(p, pi, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fold_of_pairs_equals_one_shot(seed):
    rng = np.random.default_rng(seed)
    p = random_path_space(rng)
    pi = ExtendedPartitionSpec.with_label((0, 1, 2), current_level)
    step = p
    for i in pi.times:
        step = concat_pair(step, i, current_level, p)
    assert step.weights == concatenate(p, pi).weights


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_level_retention_preserves_level_marginals(seed):
    p = random_path_space(np.random.default_rng(seed))
    pi = ExtendedPartitionSpec.with_label((0, 1, 2, 3), current_level)
    assert check_marginal_preservation(p, pi).max_tv == 0


def test_validation():
    with pytest.raises(ConcatError):
        FinitePathSpace({(0, 1): F(1, 3)})
    with pytest.raises(ConcatError):
        ExtendedPartitionSpec.with_label((1, 2), trivial)
    with pytest.raises(ConcatError):
        ExtendedPartitionSpec.with_label((0, 2, 2), trivial)
    p, _, _ = simple_example()
    with pytest.raises(ConcatError):
        concatenate(p, ExtendedPartitionSpec.with_label((0, 5), trivial))
    q = FinitePathSpace({(1, 1, 1): F(1)})
    with pytest.raises(ConcatError, match="zero mass"):
        concat_pair(p, 1, current_level, q)


def test_table_lists_paths():
    _, _, c = simple_example()
    assert len(c.table().splitlines()) == 4
