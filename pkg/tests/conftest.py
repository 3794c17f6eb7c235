import hypothesis
import numpy as np
import pytest

from regime_mp.bsde import solve_state
from regime_mp.chain import constant_path, sample_chain
from regime_mp.forward import simulate_forward
from regime_mp.scenario import ConstantPolicy, ControlModel, ControlSet, LQCoefficients, lq_to_general

hypothesis.settings.register_profile("default", max_examples=40, deadline=None)
hypothesis.settings.load_profile("default")

SWITCHING = [[-1.0, 1.0], [1.0, -1.0]]


def make_trajectory(lq, value=0.0, controls=(0.0,), steps=20, particles=400, seed=1, x0=0.5,
                    chain=None, antithetic=True):
    """Small trajectory of an LQ problem under a constant control."""
    coeffs = lq_to_general(lq)
    model = ControlModel(ControlSet(values=tuple(controls)), ConstantPolicy(value))
    path = chain if chain is not None else sample_chain(SWITCHING, 1.0, steps, seed)
    ens = simulate_forward(coeffs, model, path, particles, seed, x0, antithetic=antithetic)
    return solve_state(coeffs, ens, model)


@pytest.fixture
def single_regime():
    return lambda steps: constant_path(1, 1.0, steps)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)
