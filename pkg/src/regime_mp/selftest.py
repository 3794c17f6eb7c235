"""Fast fixture checks with exact or closed-form answers, run by ``regime-mp selftest``."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .adjoint import solve_adjoints, solve_gamma
from .bsde import closed_form_check, solve_bsde, solve_state
from .chain import ChainPath, constant_path, left_limit_state, sample_chain
from .config import load_scenario, shipped_scenarios
from .forward import brownian_increments, simulate_forward, sup_moment
from .mp import HamiltonianContext, check_mp, check_mp_lq, h_function, hamiltonian, lq_brute_force
from .scenario import (ConstantPolicy, ControlModel, ControlSet, LQCoefficients, check_assumptions,
                       lq_to_general, spike_overlay)

Check = Callable[[], tuple[bool, str]]


def _context(coeffs, p0, p1, q0, base, control) -> HamiltonianContext:
    one = np.ones(1)
    return HamiltonianContext(coeffs, 0, 0.0, 0.0 * one, 0.0, 0.0 * one, 0.0 * one, base * one, 1,
                              p0 * one, p1 * one, q0 * one, control, 0.0 * one, 0.0 * one)


def _small_trajectory(lq: LQCoefficients, controls: ControlSet, value: float, steps: int = 20,
                      particles: int = 200, seed: int = 1):
    coeffs = lq_to_general(lq)
    model = ControlModel(controls, ConstantPolicy(value))
    chain = sample_chain([[-1.0, 1.0], [1.0, -1.0]], 1.0, steps, seed)
    ens = simulate_forward(coeffs, model, chain, particles, seed, 0.5, antithetic=True)
    return solve_state(coeffs, ens, model)


def hamiltonian_substitution() -> tuple[bool, str]:
    coeffs = lq_to_general(LQCoefficients(A3=(1.0,), B0=(1.0,)))
    h = float(hamiltonian(_context(coeffs, 2.0, 1.0, 0.5, 3.0, 3.0))[0])
    return h == 9.5, f"H={h}"


def h_function_quadratic() -> tuple[bool, str]:
    coeffs = lq_to_general(LQCoefficients(B3=(1.0,)))
    ctx = _context(coeffs, 0.0, 0.0, 0.0, 0.0, 3.0)
    h = float(h_function(ctx, 2.0 * np.ones(1), np.zeros(1))[0])
    return h == 9.0, f"H-function={h}"


def absorbing_chain() -> tuple[bool, str]:
    path = sample_chain(np.zeros((2, 2)), 1.0, 10, seed=5, initial_state=2)
    ok = path.count_jumps() == 0 and bool(np.all(path.grid_states == 2))
    return ok, f"jumps={path.count_jumps()}"


def left_limits() -> tuple[bool, str]:
    path = ChainPath(np.array([0.3, 0.7]), np.array([1, 3, 2]), 1.0, 10)
    jump = ChainPath(np.array([0.5]), np.array([1, 2]), 1.0, 10)
    vals = (left_limit_state(path, 0.7), left_limit_state(jump, 0.5),
            left_limit_state(constant_path(2, 1.0, 10), 0.5))
    return vals == (3, 1, 2), f"states={vals}"


def overlay_pieces() -> tuple[bool, str]:
    cs = ControlSet(values=(0.0, 1.0))
    base, alt = ControlModel(cs, ConstantPolicy(0.0)), ControlModel(cs, ConstantPolicy(1.0))
    spiked = spike_overlay(base, alt, [(0.4, 0.5)], 1.0, 10)
    x = np.zeros(1)
    vals = (float(spiked.evaluate(0.45, x, 0.0, 1)[0]), float(spiked.evaluate(0.6, x, 0.0, 1)[0]))
    return vals == (1.0, 0.0), f"values={vals}"


def lq_substitution() -> tuple[bool, str]:
    b = float(lq_to_general(LQCoefficients(A1=(1.0,))).b(0.0, 2.0, 5.0, 7.0, 1))
    return b == 2.0, f"b={b}"


def frozen_particles() -> tuple[bool, str]:
    coeffs = lq_to_general(LQCoefficients())
    model = ControlModel(ControlSet(values=(0.0,)), ConstantPolicy(0.0))
    ens = simulate_forward(coeffs, model, constant_path(1, 1.0, 10), 8, 0, x0=3.0)
    ok = bool(np.all(ens.X == 3.0) and np.all(ens.mean == 3.0)) and sup_moment(ens.X * 0 + 2, 2) == 4.0
    return ok, "X stays at 3"


def constant_driver() -> tuple[bool, str]:
    coeffs = lq_to_general(LQCoefficients())
    model = ControlModel(ControlSet(values=(0.0,)), ConstantPolicy(0.0))
    ens = simulate_forward(coeffs, model, constant_path(1, 1.0, 20), 50, 0)
    sol = solve_bsde(lambda k, t, y, z: np.full_like(y, 0.5), np.full(50, 2.0), ens)
    exact = 2.0 + 0.5 * (1.0 - ens.times)
    err = float(np.max(np.abs(sol.Y - exact[:, None])))
    return err < 1e-10 and float(np.max(np.abs(sol.Z))) < 1e-10, f"max error {err:.1e}"


def linear_bsde() -> tuple[bool, str]:
    res = closed_form_check(particles=4000, steps=50)
    return res.y_error < 0.01 and res.z_error < 0.05, f"Y {res.y_error:.2e}, Z {res.z_error:.2e}"


def gamma_exponential() -> tuple[bool, str]:
    lq = LQCoefficients(C3=(0.7,), B0=(1.0,))
    traj = _small_trajectory(lq, ControlSet(values=(0.0,)), 0.0, particles=20)
    gamma = solve_gamma(traj)
    err = float(np.max(np.abs(gamma - np.exp(0.7 * traj.ensemble.times)[:, None])))
    return err < 1e-12, f"max error {err:.1e}"


def assumptions_lq_and_quadratic() -> tuple[bool, str]:
    coeffs = lq_to_general(LQCoefficients(A1=(1.0,), B0=(1.0,), C5=(1.0,), D1=(1.0,)))
    good = check_assumptions(coeffs, control_set=ControlSet(values=(-1.0, 1.0)))
    bad_coeffs = coeffs.replace(b=lambda t, x, xp, v, i: np.asarray(x, dtype=float) ** 2,
                                b_x=lambda t, x, xp, v, i: 2.0 * np.asarray(x, dtype=float),
                                b_xx=lambda t, x, xp, v, i: 2.0 + 0.0 * np.asarray(x, dtype=float))
    bad = check_assumptions(bad_coeffs, control_set=ControlSet(values=(-1.0, 1.0)))
    caught = not bad["lipschitz_b"].passed and bad["lipschitz_b"].witness is not None
    return good.passed and caught, f"lq failed={good.failed()}, x^2 failed={bad.failed()}"


def singleton_control_set() -> tuple[bool, str]:
    lq = LQCoefficients(A3=(1.0,), B0=(1.0,), B3=(0.5,), C5=(1.0,), D1=(1.0,))
    traj = _small_trajectory(lq, ControlSet(values=(0.0,)), 0.0)
    rep = check_mp(traj, solve_adjoints(traj), [0.0])
    return rep.violations == 0, f"violations={rep.violations}"


def bang_bang() -> tuple[bool, str]:
    lq = LQCoefficients(B0=(1.0,), C5=(1.0,), D1=(1.0,))
    cs = ControlSet(values=(-1.0, 0.0, 1.0))
    low = _small_trajectory(lq, cs, -1.0)
    high = _small_trajectory(lq, cs, 1.0)
    r_low = check_mp_lq(lq, low, solve_adjoints(low), cs.grid)
    r_high = check_mp_lq(lq, high, solve_adjoints(high), cs.grid)
    return r_low.violations == 0 and not r_high.passed, (
        f"min V violations={r_low.violations}, max V fraction={r_high.violation_fraction:.2f}")


def brute_force_linear_cost() -> tuple[bool, str]:
    lq = LQCoefficients(B0=(1.0,), C5=(1.0,), D1=(1.0,))
    res = lq_brute_force(lq, ControlSet(values=(-1.0, 0.0, 1.0)), 2, [[-1.0, 1.0], [1.0, -1.0]],
                         0.0, 1.0, 10, 50, seeds=(3,))
    return res.best == (-1.0, -1.0) and len(res.table) == 9, f"best={res.best}"


def crn_reuse() -> tuple[bool, str]:
    a = brownian_increments(4, 5, 6, 0.1, antithetic=True)
    b = brownian_increments(4, 5, 6, 0.1, antithetic=True)
    return bool(np.array_equal(a, b) and np.allclose(a.mean(axis=1), 0.0)), "same draws"


def shipped_fixtures() -> tuple[bool, str]:
    names = shipped_scenarios()
    for n in names:
        load_scenario(n)
    return bool(names), ", ".join(names)


CHECKS: dict[str, Check] = {
    "hamiltonian_substitution": hamiltonian_substitution,
    "h_function_quadratic": h_function_quadratic,
    "absorbing_chain": absorbing_chain,
    "left_limits": left_limits,
    "overlay_pieces": overlay_pieces,
    "lq_substitution": lq_substitution,
    "frozen_particles": frozen_particles,
    "constant_driver": constant_driver,
    "linear_bsde": linear_bsde,
    "gamma_exponential": gamma_exponential,
    "assumptions": assumptions_lq_and_quadratic,
    "singleton_control_set": singleton_control_set,
    "bang_bang": bang_bang,
    "brute_force_linear_cost": brute_force_linear_cost,
    "common_random_numbers": crn_reuse,
    "shipped_fixtures": shipped_fixtures,
}


def run_selftest() -> dict[str, dict]:
    """Run every check; an exception counts as a failure with its message."""
    out = {}
    for name, check in CHECKS.items():
        try:
            ok, detail = check()
        except Exception as exc:  # noqa: BLE001 - reported, not raised
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out[name] = {"passed": bool(ok), "detail": detail}
    return out
