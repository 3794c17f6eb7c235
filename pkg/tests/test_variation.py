import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regime_mp.adjoint import solve_adjoints
from regime_mp.bsde import solve_state
from regime_mp.chain import constant_path
from regime_mp.forward import simulate_forward
from regime_mp.scenario import ConstantPolicy, ControlModel, LQCoefficients, sine_perturbed
from regime_mp.variation import (RATE_TARGETS, ExpansionPoint, SpikeSpec, check_identities,
                                 expansion_check, expansion_trend_ok, fit_rate, rate_probe, run_spike,
                                 spike_metrics, strictly_decreasing, target_band)

from conftest import make_trajectory

LQ = LQCoefficients(A1=(0.2, -0.3), A3=(1.0,), B0=(1.0,), B3=(1.0,), C1=(0.5, -0.5), C4=(-1.0,),
                    D1=(1.0,))


def alt_model(traj, value=1.0):
    return ControlModel(traj.control.control_set, ConstantPolicy(value))


@pytest.fixture(scope="module")
def lq_traj():
    return make_trajectory(LQ, 0.0, (0.0, 1.0), steps=40, particles=2000, seed=2)


def test_empty_window_gives_zero_variations(lq_traj):
    study = run_spike(lq_traj, SpikeSpec(((0.25, 0.25),), alt_model(lq_traj)))
    v = study.variation
    assert np.all(v.X1 == 0) and np.all(v.X2 == 0) and np.all(v.first.mean1 == 0)
    assert np.all(v.delta1_X == 0)
    report = check_identities(study)
    assert all(r.residual == 0.0 for r in report.results)


def test_alternative_equal_to_base_gives_zero_variations(lq_traj):
    study = run_spike(lq_traj, SpikeSpec.interval(0.25, 0.1, alt_model(lq_traj, 0.0)))
    assert np.all(study.variation.X1 == 0) and np.all(study.expansion.Ytil == 0)
    assert all(m == 0.0 for m, _ in spike_metrics(study.variation).values())


def test_alt_equal_base_makes_every_slope_indeterminate(lq_traj):
    report, studies = rate_probe(lq_traj, alt_model(lq_traj, 0.0), (0.2, 0.1, 0.05, 0.025))
    assert all(f.verdict == "indeterminate" for f in report.fits.values())
    assert all(p.remainder == 0.0 for p in expansion_check(studies))


def test_linear_problem_has_no_second_variation(lq_traj):
    study = run_spike(lq_traj, SpikeSpec.interval(0.25, 0.1, alt_model(lq_traj)))
    assert np.all(study.variation.X2 == 0.0)


def test_empty_window_with_curvature_keeps_second_variation_zero():
    coeffs = sine_perturbed(LQCoefficients(A3=(1.0,), B0=(0.5,), D1=(1.0,)), 0.5, 0.3)
    base = make_trajectory(LQCoefficients(), 0.0, (0.0, 1.0), steps=20, particles=200)
    ens = simulate_forward(coeffs, base.control, base.ensemble.chain, 200, 1, 0.5, antithetic=True)
    traj = solve_state(coeffs, ens, base.control)
    study = run_spike(traj, SpikeSpec(((0.5, 0.5),), alt_model(traj)))
    assert np.all(study.variation.X2 == 0.0)


def test_terminal_assignment_of_first_variation(lq_traj):
    study = run_spike(lq_traj, SpikeSpec.interval(0.25, 0.1, alt_model(lq_traj)))
    v, d = study.variation, study.bundle.fields
    assert np.array_equal(v.Y1[-1], d.phi_x * v.X1[-1] + d.phi_xp * v.first.mean1[-1])


def test_first_variation_mean_matches_closed_form():
    # b = a x + A3 v, volatility spike has zero mean: E X1(T) = A3 dv (e^{a(T-s)} - e^{a(T-s-eps)}) / a
    a, start, eps = 0.5, 0.25, 0.25
    lq = LQCoefficients(A1=(a,), A3=(1.0,), B0=(1.0,), B3=(0.5,), D1=(1.0,))
    traj = make_trajectory(lq, 0.0, (0.0, 1.0), steps=400, particles=200,
                           chain=constant_path(1, 1.0, 400))
    study = run_spike(traj, SpikeSpec.interval(start, eps, alt_model(traj)))
    exact = (np.exp(a * (1 - start)) - np.exp(a * (1 - start - eps))) / a
    assert abs(study.variation.first.mean1[-1] - exact) < 5e-3
    assert study.variation.first.filter_gap < 1e-12


class TestRateFit:
    @given(st.floats(0.5, 4.0), st.floats(-3.0, 3.0))
    def test_power_law_recovered(self, slope, logc):
        eps = [0.2, 0.1, 0.05, 0.025, 0.0125]
        metrics = [np.exp(logc) * e ** slope for e in eps]
        fit = fit_rate("second_X", eps, metrics, [0.0] * 5, beta=2.0)
        assert fit.slope == pytest.approx(slope, abs=1e-9)

    def test_points_below_noise_floor_dropped(self):
        eps = [0.2, 0.1, 0.05, 0.025]
        fit = fit_rate("first_X", eps, [0.2, 0.1, 0.05, 1e-4], [1e-3, 1e-3, 1e-3, 1e-3], beta=2.0)
        assert fit.used == 3 and fit.slope == pytest.approx(1.0)

    def test_too_few_points_is_indeterminate(self):
        fit = fit_rate("first_X", [0.2, 0.1, 0.05], [1.0, 0.0, 0.0], [0.0] * 3, beta=2.0)
        assert fit.slope is None and fit.verdict == "indeterminate"

    def test_bands(self):
        assert target_band("delta1_X", 2.0) == pytest.approx((0.7, 1.3))
        assert target_band("first_mean", 2.0) == pytest.approx((1.6, 2.4))
        assert target_band("delta2_Y", 2.0) == (2.0, np.inf)
        assert set(RATE_TARGETS) >= {"delta1_X", "delta2_Y", "delta3_X", "delta3_Y"}


def test_ladder_helpers():
    assert strictly_decreasing([(0.2, 0.3), (0.1, 0.2), (0.05, 0.1)])
    assert not strictly_decreasing([(0.2, 0.3), (0.1, 0.3)])
    pts = [ExpansionPoint(0.2, 1.0, 0.9), ExpansionPoint(0.0125, 0.1, 0.0999)]
    assert expansion_trend_ok(pts)
    assert not expansion_trend_ok([ExpansionPoint(0.2, 1.0, 0.9), ExpansionPoint(0.0125, 0.1, 0.095)])


def test_ladder_needs_four_points(lq_traj):
    with pytest.raises(ValueError):
        rate_probe(lq_traj, alt_model(lq_traj), (0.2, 0.1, 0.05))


def test_worker_threads_do_not_change_results(lq_traj):
    bundle = solve_adjoints(lq_traj)
    ladder = (0.2, 0.1, 0.05, 0.025)
    one, _ = rate_probe(lq_traj, alt_model(lq_traj), ladder, bundle=bundle)
    two, _ = rate_probe(lq_traj, alt_model(lq_traj), ladder, bundle=bundle, workers=2)
    assert one.to_csv() == two.to_csv()
