import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from regime_mp.scenario import (BlockPolicy, ConstantPolicy, ControlModel, ControlSet, LQCoefficients,
                                check_assumptions, lq_to_general, sine_perturbed, spike_overlay,
                                window_mask)

coef = st.floats(-3.0, 3.0)
point = st.floats(-5.0, 5.0)


def test_zero_table_gives_zero_coefficients():
    c = lq_to_general(LQCoefficients())
    x = np.linspace(-2, 2, 5)
    assert np.all(c.b(0.1, x, 0.3, 1.0, 1) == 0)
    assert np.all(c.sigma(0.1, x, 0.3, 1.0, 1) == 0)
    assert np.all(c.f(0.1, x, 0.3, 2.0, 1.0, 1.0, 1) == 0)
    assert np.all(c.phi(x, 0.3, 1) == 0)


def test_direct_substitution():
    assert lq_to_general(LQCoefficients(A1=(1.0,))).b(0.0, 2.0, 5.0, 7.0, 1) == 2.0


def test_terminal_derivatives():
    c = lq_to_general(LQCoefficients(D1=(1.0,)))
    x = np.array([-1.0, 0.0, 3.0])
    assert np.all(c.phi_xx(x, 0.5, 1) == 2.0)
    assert np.all(c.phi_xxp(x, 0.5, 1) == 0.0)


def test_per_regime_tables_broadcast():
    lq = LQCoefficients(A3=1.0, C1=(0.5, -0.5))
    c = lq_to_general(lq)
    assert lq.n_regimes == 2
    assert c.f(0, 1.0, 0, 0, 0, 0, 2) == -0.5
    assert c.b(0, 1.0, 0, 2.0, 2) == 2.0


def test_mismatched_regime_counts_rejected():
    with pytest.raises(ValueError, match="entries"):
        LQCoefficients(A1=(1.0, 2.0), B1=(1.0, 2.0, 3.0))
    with pytest.raises(ValueError, match="unknown"):
        LQCoefficients.from_mapping({"A9": 1.0})


@given(coef, coef, coef, coef, coef, point, point, point)
def test_lq_derivatives_match_differences(a1, a2, b1, c1, d1, x, xp, v):
    c = lq_to_general(LQCoefficients(A1=(a1,), A2=(a2,), B1=(b1,), C1=(c1,), D1=(d1,)))
    h = 1e-6
    fd = (c.b(0, x + h, xp, v, 1) - c.b(0, x - h, xp, v, 1)) / (2 * h)
    assert abs(fd - c.b_x(0, x, xp, v, 1)) < 1e-6 * (1 + abs(a1))
    fd = (c.phi(x + h, xp, 1) - c.phi(x - h, xp, 1)) / (2 * h)
    assert abs(fd - c.phi_x(x, xp, 1)) < 1e-5 * (1 + abs(d1) * (1 + abs(x)))


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_sine_family_passes_derivative_oracles(drift_amp, vol_amp):
    c = sine_perturbed(LQCoefficients(A1=(0.3,), B0=(0.5,), D1=(1.0,)), drift_amp, vol_amp)
    report = check_assumptions(c, seed=1, control_set=ControlSet(values=(0.0, 1.0)))
    assert report["derivative_oracles"].passed
    assert report.passed


def test_lq_passes_all_checks():
    c = lq_to_general(LQCoefficients(A1=(1.0,), A3=(1.0,), B0=(1.0,), C4=(-1.0,), D1=(1.0,)))
    report = check_assumptions(c, control_set=ControlSet(interval=(-1.0, 1.0)))
    assert report.passed and report.field_adapted


def test_quadratic_drift_fails_with_witness():
    base = lq_to_general(LQCoefficients(B0=(1.0,)))
    c = base.replace(b=lambda t, x, xp, v, i: np.asarray(x, dtype=float) ** 2,
                     b_x=lambda t, x, xp, v, i: 2.0 * np.asarray(x, dtype=float),
                     b_xx=lambda t, x, xp, v, i: 2.0 + 0.0 * np.asarray(x, dtype=float), L=1.0)
    report = check_assumptions(c, box=10.0)
    check = report["lipschitz_b"]
    assert not check.passed
    assert {"x", "x_bar"} <= set(check.witness)


def test_budget_floor():
    with pytest.raises(ValueError):
        check_assumptions(lq_to_general(LQCoefficients()), budget=10)


class TestControls:
    def test_interval_grid_and_membership(self):
        cs = ControlSet(interval=(-2.0, 2.0), resolution=5)
        assert cs.grid.tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
        assert cs.contains([0.3, 2.5]).tolist() == [True, False]
        assert cs.bound == 2.0

    def test_finite_set_projection_ties_to_smaller(self):
        cs = ControlSet(values=(1.0, -1.0, 0.0))
        assert cs.values == (-1.0, 0.0, 1.0)
        assert cs.project([0.5, -0.2, 7.0]).tolist() == [0.0, 0.0, 1.0]

    def test_block_policy_boundaries(self):
        p = BlockPolicy(1.0, (-0.5, 0.0))
        x = np.zeros(2)
        assert p(0.0, x, 0, 1).tolist() == [-0.5, -0.5]
        assert p(0.5, x, 0, 1).tolist() == [0.0, 0.0]
        assert p(0.999, x, 0, 1).tolist() == [0.0, 0.0]

    def test_moment_bound(self):
        model = ControlModel(ControlSet(values=(0.0, 2.0)), ConstantPolicy(2.0))
        assert model.moment_bound(np.full((3, 4), 2.0)) == 256.0


class TestSpikeOverlay:
    cs = ControlSet(values=(0.0, 1.0))
    base = ControlModel(cs, ConstantPolicy(0.0))
    alt = ControlModel(cs, ConstantPolicy(1.0))

    def test_empty_window_returns_base(self):
        assert spike_overlay(self.base, self.alt, [], 1.0, 10) is self.base
        assert spike_overlay(self.base, self.alt, [(0.3, 0.3)], 1.0, 10) is self.base

    def test_alt_equal_base_is_idempotent(self):
        assert spike_overlay(self.base, self.base, [(0.2, 0.4)], 1.0, 10) is self.base

    def test_piecewise_values(self):
        m = spike_overlay(self.base, self.alt, [(0.4, 0.5)], 1.0, 10)
        x = np.zeros(1)
        assert m.evaluate(0.45, x, 0, 1)[0] == 1.0
        assert m.evaluate(0.6, x, 0, 1)[0] == 0.0
        assert m.evaluate(0.5, x, 0, 1)[0] == 0.0

    def test_misaligned_window_rejected(self):
        with pytest.raises(ValueError, match="aligned"):
            spike_overlay(self.base, self.alt, [(0.41, 0.5)], 1.0, 10)

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), max_size=4))
    def test_mask_measure_matches_union(self, pairs):
        windows = [(min(a, b) / 20, max(a, b) / 20) for a, b in pairs]
        mask = window_mask(windows, 1.0, 20)
        covered = set()
        for a, b in pairs:
            covered |= set(range(min(a, b), max(a, b)))
        assert mask.sum() == len(covered)
