import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from regime_mp.bsde import (JointPolynomialBasis, Projector, RegressionBasis, build_projectors,
                            closed_form_check, evaluate_cost, regression_noise_floor, solve_bsde,
                            stability_probe)
from regime_mp.chain import constant_path
from regime_mp.errors import NumericalAbort
from regime_mp.forward import simulate_forward
from regime_mp.scenario import ConstantPolicy, ControlModel, ControlSet, LQCoefficients, lq_to_general

# recursive LQ cost under a constant control on one regime, from the moment ODEs below
LQ_COST = 3.17876947777615
LQ_CASE = dict(A1=-0.5, A3=1.0, v=0.5, B0=0.8, C1=1.0, C3=0.3, C5=0.2, D1=1.0, x0=1.0)


def lq_cost_oracle(A1, A3, v, B0, C1, C3, C5, D1, x0):
    """``Y(0)`` of ``dY = -(C1 X + C3 Y + C5 v) dt + Z dW`` with ``Y_T = D1 X_T^2``.

    The driver is linear with constant ``C3``, so ``Y(0) = E[int e^{C3 t}(C1 X + C5 v) dt
    + e^{C3 T} D1 X_T^2]`` and only the first two moments of ``X`` are needed.
    """
    def rhs(t, u):
        m, s, acc = u
        return [A1 * m + A3 * v, 2 * A1 * s + 2 * A3 * v * m + B0 ** 2,
                np.exp(C3 * t) * (C1 * m + C5 * v)]

    sol = solve_ivp(rhs, (0.0, 1.0), [x0, x0 ** 2, 0.0], rtol=1e-12, atol=1e-12)
    m, s, acc = sol.y[:, -1]
    return acc + np.exp(C3) * D1 * s


def flat_ensemble(steps=20, particles=50, seed=0):
    coeffs = lq_to_general(LQCoefficients(B0=(1.0,)))
    model = ControlModel(ControlSet(values=(0.0,)), ConstantPolicy(0.0))
    return simulate_forward(coeffs, model, constant_path(1, 1.0, steps), particles, seed)


def test_oracle_value_is_frozen():
    assert lq_cost_oracle(**LQ_CASE) == pytest.approx(LQ_COST, rel=1e-10)


def test_zero_driver_constant_terminal():
    ens = flat_ensemble()
    sol = solve_bsde(lambda k, t, y, z: np.zeros_like(y), np.full(50, 2.5), ens)
    assert np.all(sol.Y == 2.5) and np.all(sol.Z == 0.0)


def test_constant_driver_is_a_time_integral():
    ens = flat_ensemble()
    sol = solve_bsde(lambda k, t, y, z: np.full_like(y, 0.7), np.full(50, 1.0), ens)
    assert np.max(np.abs(sol.Y - (1.0 + 0.7 * (1.0 - ens.times))[:, None])) < 1e-10


@pytest.mark.parametrize("table, expected", [
    (dict(D1=(0.0,)), 5.0),
    (dict(C0=(1.0,)), 1.0),
])
def test_trivial_costs(table, expected):
    lq = LQCoefficients(**table)
    coeffs = lq_to_general(lq)
    if expected == 5.0:
        coeffs = coeffs.replace(phi=lambda x, xp, i: 5.0 + 0.0 * x)
    model = ControlModel(ControlSet(values=(0.0,)), ConstantPolicy(0.0))
    est = evaluate_cost(coeffs, model, [[0.0]], 0.0, 1.0, 10, 20, seed=1)
    assert est.value == pytest.approx(expected, abs=1e-12)


def test_recursive_lq_cost_matches_moment_oracle():
    c = LQ_CASE
    lq = LQCoefficients(A1=(c["A1"],), A3=(c["A3"],), B0=(c["B0"],), C1=(c["C1"],), C3=(c["C3"],),
                        C5=(c["C5"],), D1=(c["D1"],))
    model = ControlModel(ControlSet(values=(c["v"],)), ConstantPolicy(c["v"]))
    est = evaluate_cost(lq_to_general(lq), model, [[0.0]], c["x0"], 1.0, 200, 20000, seed=5,
                        antithetic=True)
    assert abs(est.value - LQ_COST) < 3 * est.se + 0.01


def test_closed_form_linear_problem():
    res = closed_form_check(particles=4000, steps=50)
    assert res.y_error < 0.02 and res.z_error < 0.05


def test_product_estimator_still_available():
    ens = flat_ensemble(particles=400)
    target = ens.W[-1]
    a = solve_bsde(lambda k, t, y, z: np.zeros_like(y), target, ens, z_method="product")
    b = solve_bsde(lambda k, t, y, z: np.zeros_like(y), target, ens)
    assert abs(a.Z.mean() - 1.0) < 0.1 and abs(b.Z.mean() - 1.0) < 0.02
    with pytest.raises(ValueError):
        solve_bsde(lambda k, t, y, z: y, target, ens, z_method="other")


def test_multicomponent_terminal():
    ens = flat_ensemble(particles=200)
    term = np.column_stack([ens.W[-1], np.full(200, 3.0)])
    sol = solve_bsde(lambda k, t, y, z: np.zeros_like(y), term, ens)
    assert sol.Y.shape == (21, 200, 2)
    y1, _ = sol.component(1)
    assert np.all(y1 == 3.0)


class TestProjector:
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.integers(0, 100))
    def test_targets_in_span_are_reproduced(self, coef, seed):
        x = np.random.default_rng(seed).normal(size=300)
        A = np.column_stack([x, x ** 2])
        target = coef[0] + coef[1] * x + coef[2] * x ** 2
        fitted = Projector(A, ridge=0.0).fit(target)
        assert np.allclose(fitted, target, atol=1e-8 * (1 + np.abs(target).max()))

    @given(st.integers(0, 100))
    def test_projection_is_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=200)
        P = Projector(np.column_stack([x, x ** 2]))
        once = P.fit(rng.normal(size=200))
        assert np.allclose(P.fit(once), once, atol=1e-6)

    def test_constant_and_duplicate_columns_dropped(self):
        x = np.linspace(-1, 1, 50)
        P = Projector(np.column_stack([x, 2 * x, np.ones(50)]))
        assert P.rank == 1

    def test_non_finite_features_abort(self):
        with pytest.raises(NumericalAbort):
            Projector(np.array([[1.0], [np.inf]]), step=3)

    def test_slope_recovers_linear_increment(self):
        rng = np.random.default_rng(2)
        x, dw = rng.normal(size=2000), rng.normal(size=2000) * 0.1
        target = x + (2.0 + 0.5 * x) * dw
        s, se = Projector(x[:, None]).slope(target, dw)
        assert np.allclose(s, 2.0 + 0.5 * x, atol=1e-6)


def test_basis_descriptions_and_designs():
    ens = flat_ensemble(particles=30)
    assert RegressionBasis(degree=2).design(ens, 3).shape[0] == 30
    assert RegressionBasis().describe().startswith("poly(x,3)")
    assert len(build_projectors(ens, JointPolynomialBasis(ens.X, degree=2))) == ens.steps


def test_noise_floor_shrinks_with_particles():
    small = regression_noise_floor(flat_ensemble(particles=500, seed=1))
    large = regression_noise_floor(flat_ensemble(particles=8000, seed=1))
    assert large.y_sup < small.y_sup and large.z_norm < small.z_norm


def test_stability_probe_zero_for_identical_data():
    ens = flat_ensemble(particles=200)
    pair = (lambda k, t, y, z: 0.5 * y, ens.W[-1])
    rep = stability_probe(pair, pair, ens)
    assert rep.gamma_norm == 0.0 and rep.ratio == 0.0


def test_stability_probe_bounded_ratio():
    ens = flat_ensemble(particles=2000)
    a = (lambda k, t, y, z: 0.5 * y, ens.W[-1])
    b = (lambda k, t, y, z: 0.5 * y + 0.1, ens.W[-1] + 0.2)
    rep = stability_probe(a, b, ens, gamma=1.0)
    assert 0.0 < rep.ratio < 5.0
