import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regime_mp.adjoint import (degeneracy_check, reduced_adjoint_residual, representation_check,
                               solve_adjoints, solve_gamma)
from regime_mp.bsde import solve_state
from regime_mp.chain import constant_path, sample_chain
from regime_mp.forward import simulate_forward
from regime_mp.scenario import ConstantPolicy, ControlModel, ControlSet, LQCoefficients, sine_perturbed
from regime_mp.variation import SpikeSpec, run_spike

from conftest import SWITCHING, make_trajectory


def expected_p0_initial(A1, A3, C1, D1, v, x0, T=1.0):
    """``E[p0(0)]`` for ``b = A1 x + A3 v``, ``f = C1 x``, ``phi = D1 x^2`` on one regime.

    ``E p0`` solves ``m' = -(A1 m + C1)`` backward from ``2 D1 E[X_T]``.
    """
    g = np.exp(A1 * T)
    mean_T = g * x0 + A3 * v * (g - 1.0) / A1
    return g * 2.0 * D1 * mean_T + C1 * (g - 1.0) / A1


def test_first_adjoint_matches_moment_formula():
    A1, A3, C1, D1, v, x0 = -0.6, 1.0, 0.5, 1.0, 0.4, 1.0
    lq = LQCoefficients(A1=(A1,), A3=(A3,), B0=(0.7,), C1=(C1,), D1=(D1,))
    traj = make_trajectory(lq, v, (v,), steps=200, particles=10000, seed=3, x0=x0,
                           chain=constant_path(1, 1.0, 200))
    bundle = solve_adjoints(traj)
    assert abs(bundle.first.p0[0].mean() - expected_p0_initial(A1, A3, C1, D1, v, x0)) < 0.02
    assert np.all(bundle.first.p1 == 0.0)


def test_second_adjoint_is_deterministic_exponential():
    # linear b with sigma_x = 0: dP0 = -2 A1 P0 dt, P0(T) = 2 D1
    A1, D1 = 0.8, 1.5
    lq = LQCoefficients(A1=(A1,), B0=(1.0,), D1=(D1,))
    traj = make_trajectory(lq, steps=400, particles=200, chain=constant_path(1, 1.0, 400))
    P0 = solve_adjoints(traj).second.P0
    exact = 2 * D1 * np.exp(2 * A1 * (1.0 - traj.ensemble.times))
    assert np.max(np.abs(P0.mean(axis=1) / exact - 1.0)) < 5e-3
    assert np.ptp(P0[0]) < 1e-9


def test_zero_data_gives_zero_second_adjoint():
    lq = LQCoefficients(A3=(1.0,), B0=(1.0,), C5=(1.0,))
    bundle = solve_adjoints(make_trajectory(lq, 0.0, (0.0, 1.0)))
    assert np.all(bundle.second.P0 == 0.0) and np.all(bundle.second.Q0 == 0.0)


def test_mean_free_problem_has_no_mean_field_adjoint():
    lq = LQCoefficients(A3=(0.2,), B0=(0.5,), B3=(0.5,), C1=(0.5, -0.5), C4=(-1.0,), D1=(1.0,))
    coeffs = sine_perturbed(lq, 0.5, 0.3)
    model = ControlModel(ControlSet(values=(0.0, 1.0)), ConstantPolicy(0.0))
    ens = simulate_forward(coeffs, model, sample_chain(SWITCHING, 1.0, 40, 3), 2000, 3, 0.5,
                           antithetic=True)
    traj = solve_state(coeffs, ens, model)
    bundle = solve_adjoints(traj)
    rep = degeneracy_check(traj, bundle)
    assert rep.p1_sup == 0.0 and rep.q1_norm == 0.0 and rep.passed


def test_mean_dependent_problem_exceeds_the_floor():
    lq = LQCoefficients(A2=(1.0,), A3=(0.5,), B0=(0.5,), C2=(1.0,), D1=(1.0,), D2=(1.0,))
    traj = make_trajectory(lq, 0.0, (0.0, 1.0), steps=40, particles=2000)
    assert not degeneracy_check(traj, solve_adjoints(traj)).passed


def test_reduced_adjoint_residual_small():
    lq = LQCoefficients(A1=(0.3, -0.2), A2=(0.5,), A3=(1.0,), B0=(0.5,), C1=(1.0,), C2=(0.5,),
                        D1=(1.0,), D2=(0.5,))
    traj = make_trajectory(lq, 0.5, (0.5,), steps=50, particles=4000)
    assert reduced_adjoint_residual(traj, solve_adjoints(traj)) < 0.05


class TestGamma:
    def test_unit_without_recursive_terms(self):
        traj = make_trajectory(LQCoefficients(B0=(1.0,), C1=(1.0,)))
        assert np.all(solve_gamma(traj) == 1.0)

    def test_deterministic_exponential(self):
        traj = make_trajectory(LQCoefficients(B0=(1.0,), C3=(-0.4,)))
        gamma = solve_gamma(traj)
        assert np.allclose(gamma, np.exp(-0.4 * traj.ensemble.times)[:, None], rtol=1e-12)

    @given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0), st.integers(0, 50))
    @settings(max_examples=15)
    def test_positive_and_mean_one_martingale_part(self, fy, fz, seed):
        traj = make_trajectory(LQCoefficients(B0=(1.0,), C3=(fy,), C4=(fz,)), particles=40, seed=seed)
        gamma = solve_gamma(traj)
        assert np.all(gamma > 0.0)
        e = traj.ensemble
        expected = np.exp((fy - 0.5 * fz ** 2) * e.times[:, None] + fz * e.W)
        assert np.allclose(gamma, expected, rtol=1e-10)


def test_empty_spike_gives_zero_auxiliary_process():
    lq = LQCoefficients(A3=(1.0,), B0=(1.0,), C5=(1.0,), D1=(1.0,))
    traj = make_trajectory(lq, 0.0, (0.0, 1.0), steps=20, particles=200)
    alt = ControlModel(traj.control.control_set, ConstantPolicy(1.0))
    study = run_spike(traj, SpikeSpec(((0.25, 0.25),), alt))
    assert np.all(study.expansion.Ytil == 0.0) and np.all(study.expansion.Ztil == 0.0)


def test_representation_within_three_standard_errors():
    lq = LQCoefficients(A1=(0.2, -0.3), A3=(1.0,), B0=(1.0,), B3=(1.0,), C1=(0.5, -0.5), C4=(-1.0,),
                        C3=(0.3,), D1=(1.0,))
    traj = make_trajectory(lq, 0.0, (0.0, 1.0), steps=40, particles=4000)
    alt = ControlModel(traj.control.control_set, ConstantPolicy(1.0))
    study = run_spike(traj, SpikeSpec.interval(0.25, 0.1, alt))
    check = representation_check(study.expansion, traj.ensemble.dt)
    assert np.all(study.expansion.gamma > 0.0)
    assert check.passes(3.0)


def test_summary_csv_columns():
    traj = make_trajectory(LQCoefficients(B0=(1.0,), D1=(1.0,)), steps=5, particles=20)
    text = solve_adjoints(traj).summary_csv()
    header = text.splitlines()[0].split(",")
    assert header[:3] == ["t_k", "p0_mean", "p0_std"] and len(text.splitlines()) == 7
