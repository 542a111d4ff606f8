from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mimicking.discrete_mimic import (DiscreteError, FiniteProcessLaw, build_mimic_chain, copy_first_law,
                                      estimate_kernels, format_table, iid_sign_law, marginals, mimic,
                                      random_law, total_variation)

F = Fraction


def test_copy_first_kernels():
    law = copy_first_law()
    k = estimate_kernels(law, "level")
    assert k[0].row(0) == {-1: F(1, 2), 1: F(1, 2)}
    # level 0 after two steps arises from (+1,-1) and (-1,+1); the third step copies the first
    assert k[2].row(0) == {-1: F(1, 2), 1: F(1, 2)}
    assert k[2].row(2) == {1: F(1)}
    with pytest.raises(DiscreteError, match="not reachable"):
        k[2].row(1)


def test_copy_first_level_mimic_matches_marginals():
    law = copy_first_law()
    m = mimic(law, "level")
    for n in range(4):
        assert marginals(m, n) == marginals(law, n)


def test_copy_first_joint_law_gap():
    law = copy_first_law()
    m = mimic(law, "level")
    orig = marginals(law, 3, "level_and_max")
    mim = marginals(m, 3, "level_and_max")
    assert orig.get((-1, 1), 0) == 0
    assert mim[(-1, 1)] == F(1, 8)
    assert orig != mim


def test_copy_first_joint_mimic_matches_joint():
    law = copy_first_law()
    m = mimic(law, "level_and_max")
    for n in range(4):
        assert marginals(m, n, "level_and_max") == marginals(law, n, "level_and_max")
        assert marginals(m, n) == marginals(law, n)


def test_markov_law_is_its_own_mimic():
    law = iid_sign_law(4)
    assert mimic(law).weights == law.weights


@pytest.mark.parametrize("kind", ["level", "level_and_max", "level_and_sum"])
def test_random_laws_exact(kind):
    rng = np.random.default_rng(0)
    for _ in range(200):
        law = random_law(rng)
        m = mimic(law, kind)
        assert m.exact
        assert sum(m.weights.values()) == 1
        for n in range(law.horizon + 1):
            assert marginals(m, n, kind) == marginals(law, n, kind)
            assert marginals(m, n) == marginals(law, n)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_float_mode_close_to_exact(seed):
    rng = np.random.default_rng(seed)
    law = random_law(rng, exact=False)
    m = mimic(law)
    for n in range(law.horizon + 1):
        assert total_variation(marginals(m, n), marginals(law, n)) < 1e-12


def test_coverage_gap_reported():
    law = copy_first_law()
    ker = estimate_kernels(law)
    with pytest.raises(DiscreteError, match="kernel coverage gap"):
        build_mimic_chain(ker, {5: F(1)}, "level")


def test_law_validation():
    with pytest.raises(DiscreteError):
        FiniteProcessLaw({(0, 1): F(1, 2)})
    with pytest.raises(DiscreteError):
        FiniteProcessLaw({(0, 1): F(1, 2), (0, 1, 1): F(1, 2)})
    with pytest.raises(DiscreteError):
        estimate_kernels(copy_first_law(), "bogus")
    with pytest.raises(DiscreteError):
        marginals(copy_first_law(), 4)


def test_json_roundtrip():
    law = random_law(np.random.default_rng(3))
    back = FiniteProcessLaw.from_json(law.to_json())
    assert back.weights == law.weights


def test_format_table():
    text = format_table({0: F(1, 2), 2: F(1, 2)})
    assert text.splitlines()[1].split() == ["0", "1/2"]
