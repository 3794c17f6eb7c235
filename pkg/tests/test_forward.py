import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regime_mp.chain import constant_path, sample_chain
from regime_mp.errors import NumericalAbort
from regime_mp.forward import (TimeGrid, brownian_increments, conditional_mean, moment_probe,
                               simulate_forward, sup_moment)
from regime_mp.scenario import ConstantPolicy, ControlModel, ControlSet, LQCoefficients, lq_to_general

from conftest import SWITCHING


def model(value=0.0):
    return ControlModel(ControlSet(values=(value,)), ConstantPolicy(value))


def test_time_grid():
    g = TimeGrid(1.0, 4)
    assert g.dt == 0.25 and g.times.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_constant_dynamics_freeze_particles():
    ens = simulate_forward(lq_to_general(LQCoefficients()), model(), constant_path(1, 1.0, 10), 6, 0, 3.0)
    assert np.all(ens.X == 3.0) and np.all(ens.mean == 3.0)


def test_conditional_mean_of_equal_particles():
    ens = simulate_forward(lq_to_general(LQCoefficients()), model(), constant_path(1, 1.0, 5), 4, 0, -1.5)
    assert conditional_mean(ens, 3) == -1.5
    with pytest.raises(IndexError):
        conditional_mean(ens, 6)


def test_single_regime_mean_is_plain_average():
    ens = simulate_forward(lq_to_general(LQCoefficients(B0=(1.0,))), model(), constant_path(1, 1.0, 8),
                           50, 3, 0.0)
    assert np.allclose(ens.mean, ens.X.mean(axis=1), rtol=0, atol=0)


def test_sup_moments():
    assert sup_moment(np.full((5, 3), 2.0), 2.0) == 4.0
    assert sup_moment(np.zeros((5, 3)), 7.0) == 0.0
    with pytest.raises(ValueError):
        moment_probe(simulate_forward(lq_to_general(LQCoefficients()), model(), constant_path(1, 1.0, 2),
                                      2, 0), 9.0)


def test_antithetic_increments_cancel():
    dW = brownian_increments(5, 10, 8, 0.01, antithetic=True)
    assert np.all(dW.mean(axis=1) == 0.0)
    with pytest.raises(ValueError):
        brownian_increments(5, 10, 7, 0.01, antithetic=True)


def test_increment_variance():
    dW = brownian_increments(1, 200, 5000, 0.01)
    assert abs(dW.var() / 0.01 - 1.0) < 0.01


def test_shared_increments_give_identical_paths():
    c = lq_to_general(LQCoefficients(A1=(0.5,), B0=(1.0,)))
    chain = sample_chain(SWITCHING, 1.0, 20, 4)
    a = simulate_forward(c, model(), chain, 30, 4)
    b = simulate_forward(c, model(), chain, 30, 4, dW=a.dW.copy())
    assert np.array_equal(a.X, b.X)


def test_divergence_raises_numerical_abort():
    c = lq_to_general(LQCoefficients(A1=(1e308,)))
    with pytest.raises(NumericalAbort) as info:
        simulate_forward(c, model(), constant_path(1, 1.0, 4), 4, 0, 1e10)
    assert info.value.step == 1


def test_control_outside_set_rejected():
    bad = ControlModel(ControlSet(values=(0.0,)), ConstantPolicy(1.0))
    with pytest.raises(ValueError, match="outside"):
        simulate_forward(lq_to_general(LQCoefficients()), bad, constant_path(1, 1.0, 2), 2, 0)


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0),
       st.integers(0, 1000))
def test_mean_follows_deterministic_recursion(a1, a2, a3, v, seed):
    # with state-independent volatility and antithetic noise the particle mean is exactly
    # the Euler step of dm = ((A1 + A2) m + A3 v) dt along the regime path
    lq = LQCoefficients(A1=(a1, -a1), A2=(a2, 0.0), A3=(a3, 1.0), B0=(1.0, 0.5))
    chain = sample_chain(SWITCHING, 1.0, 25, seed)
    ctl = ControlModel(ControlSet(values=(v,)), ConstantPolicy(v))
    ens = simulate_forward(lq_to_general(lq), ctl, chain, 20, seed, 0.7, antithetic=True)
    m = 0.7
    for k in range(25):
        i = chain.grid_states[k] - 1
        m = m + ((lq.A1[i] + lq.A2[i]) * m + lq.A3[i] * v) * chain.dt
        assert abs(ens.mean[k + 1] - m) < 1e-12 * (1 + abs(m))


def test_mean_matches_moment_ode():
    # dm/dt = (A1 + A2) m + A3 v on one regime: m(T) = e^{aT} m0 + A3 v (e^{aT} - 1) / a
    a1, a2, a3, v, m0 = 0.4, -0.9, 1.0, 0.3, 1.0
    lq = LQCoefficients(A1=(a1,), A2=(a2,), A3=(a3,), B0=(1.0,), B1=(0.3,))
    ctl = ControlModel(ControlSet(values=(v,)), ConstantPolicy(v))
    ens = simulate_forward(lq_to_general(lq), ctl, constant_path(1, 1.0, 400), 20000, 2, m0,
                           antithetic=True)
    a = a1 + a2
    exact = np.exp(a) * m0 + a3 * v * np.expm1(a) / a
    assert abs(ens.mean[-1] - exact) < 5e-3


def test_csv_outputs(tmp_path):
    ens = simulate_forward(lq_to_general(LQCoefficients(B0=(1.0,))), model(), constant_path(1, 1.0, 2),
                           3, 0)
    text = ens.summary_csv(tmp_path / "f.csv")
    assert text.splitlines()[0] == "t_k,mean,std,min,max"
    assert len(ens.paths_csv().splitlines()) == 4
    assert (tmp_path / "f.csv").read_text() == text
