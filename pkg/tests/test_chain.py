import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regime_mp.chain import (ChainPath, GeneratorMatrix, constant_path, empirical_generator,
                             left_limit_state, sample_chain)


@st.composite
def generators(draw, max_size=4):
    n = draw(st.integers(1, max_size))
    off = np.array(draw(st.lists(st.floats(0.0, 5.0), min_size=n * n, max_size=n * n))).reshape(n, n)
    np.fill_diagonal(off, 0.0)
    np.fill_diagonal(off, -off.sum(axis=1))
    return off


def test_zero_rates_give_constant_path():
    path = sample_chain(np.zeros((3, 3)), 2.0, 40, seed=123, initial_state=3)
    assert path.count_jumps() == 0
    assert np.all(path.grid_states == 3)


def test_single_regime_is_constant():
    path = sample_chain([[0.0]], 1.0, 10, seed=5)
    assert np.all(path.grid_states == 1)


def test_left_limit_examples():
    assert left_limit_state(constant_path(2, 1.0, 10), 0.5) == 2
    assert left_limit_state(ChainPath(np.array([0.5]), np.array([1, 2]), 1.0, 10), 0.5) == 1
    path = ChainPath(np.array([0.3, 0.7]), np.array([1, 3, 2]), 1.0, 10)
    assert left_limit_state(path, 0.7) == 3
    assert left_limit_state(path, 0.71) == 2


def test_grid_projection_uses_left_limits():
    path = ChainPath(np.array([0.5]), np.array([1, 2]), 1.0, 4)
    assert path.grid_states.tolist() == [1, 1, 1, 2, 2]


@pytest.mark.parametrize("bad, msg", [
    ([[-1.0, 2.0], [1.0, -1.0]], "sums to"),
    ([[1.0, -1.0], [1.0, -1.0]], "negative off-diagonal"),
    ([[-1.0, 1.0]], "square"),
    ([[np.nan, 0.0], [0.0, 0.0]], "finite"),
])
def test_generator_validation(bad, msg):
    with pytest.raises(ValueError, match=msg):
        GeneratorMatrix(np.array(bad))


@given(generators(), st.integers(0, 2**32), st.integers(1, 50))
def test_path_invariants(q, seed, steps):
    n = q.shape[0]
    path = sample_chain(q, 1.5, steps, seed, initial_state=1)
    assert path.grid_states.shape == (steps + 1,)
    assert set(path.grid_states.tolist()) <= set(range(1, n + 1))
    assert np.all(np.diff(path.states) != 0)
    assert np.all((path.jump_times > 0) & (path.jump_times <= 1.5))
    assert path.grid_states[0] == 1


@given(st.integers(0, 2**32))
def test_sampling_is_reproducible(seed):
    a = sample_chain([[-2.0, 2.0], [1.0, -1.0]], 1.0, 20, seed, index=3)
    b = sample_chain([[-2.0, 2.0], [1.0, -1.0]], 1.0, 20, seed, index=3)
    assert np.array_equal(a.jump_times, b.jump_times)


def test_two_state_transition_probability():
    # P(alpha_T = 1 | alpha_0 = 1) = b/(a+b) + a/(a+b) exp(-(a+b) T) for rates a: 1->2, b: 2->1
    a, b, T, n = 1.5, 0.5, 1.0, 4000
    exact = b / (a + b) + a / (a + b) * np.exp(-(a + b) * T)
    hits = np.array([sample_chain([[-a, a], [b, -b]], T, 10, 7, index=j).terminal_state == 1
                     for j in range(n)])
    se = np.sqrt(exact * (1 - exact) / n)
    assert abs(hits.mean() - exact) < 3.5 * se


def test_empirical_generator_recovers_rates():
    q = np.array([[-1.0, 0.6, 0.4], [0.5, -1.0, 0.5], [2.0, 1.0, -3.0]])
    paths = [sample_chain(q, 5.0, 10, 11, index=j) for j in range(1500)]
    est = empirical_generator(paths, 3)
    assert np.allclose(est, q, rtol=0.1, atol=0.05)
    assert np.allclose(est.sum(axis=1), 0.0)


def test_csv_rows():
    text = constant_path(1, 1.0, 2).to_csv()
    assert text.splitlines() == ["t_k,state", "0.0,1", "0.5,1", "1.0,1"]
