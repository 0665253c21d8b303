import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterra_control.forward import (
    AdmissibilityError,
    ControlPath,
    MissingPartialError,
    NumericalError,
    VolterraCoefficients,
    contraction_ratios,
    direct_solve,
    performance,
    picard_solve,
    picard_sweeps,
    reward_samples,
    solve_batch,
)
from volterra_control.model import ConsumptionModel, build_model
from volterra_control.paths import DriverBatch, LevyMeasureSpec, make_grid, sample_batch, sample_driver
from volterra_control.stats import mean_se

from conftest import assert_within, rel_err

NO_JUMPS = LevyMeasureSpec(0.0)


def linear(c=0.5, x0=1.0):
    return VolterraCoefficients(xi=lambda t: x0, b=lambda t, s, x, u: c * x, lipschitz=abs(c))


def test_zero_coefficients_return_initial_curve():
    grid = make_grid(1.0, 16)
    coeffs = VolterraCoefficients(xi=lambda t: np.sin(t))
    X = direct_solve(coeffs, ControlPath.constant(0, grid), sample_driver(grid, NO_JUMPS, 0, 0), grid, NO_JUMPS)
    np.testing.assert_array_equal(X.values, np.sin(grid.nodes))


def test_unit_diffusion_reproduces_brownian_motion():
    grid = make_grid(1.0, 32)
    levy = LevyMeasureSpec(1.0, ((0.5, 1.0),))
    coeffs = VolterraCoefficients(sigma=lambda t, s, x, u: 1.0)
    drv = sample_driver(grid, levy, 1, 0)
    X = direct_solve(coeffs, ControlPath.constant(0, grid), drv, grid, levy)
    np.testing.assert_allclose(X.values, np.concatenate([[0], np.cumsum(drv.brownian_increments)]), atol=1e-14)


def test_linear_ode_limit():
    grid = make_grid(1.0, 512)
    X = direct_solve(linear(), ControlPath.constant(0, grid), sample_driver(grid, NO_JUMPS, 0, 0), grid, NO_JUMPS)
    assert abs(X.values[-1] - np.exp(0.5)) <= 5e-3


def test_picard_matches_direct_and_terminates():
    grid = make_grid(1.0, 64)
    drv = sample_driver(grid, NO_JUMPS, 0, 0)
    ctrl = ControlPath.constant(0, grid)
    X, iters, gap = picard_solve(linear(), ctrl, drv, grid, 0.0, grid.steps + 1, NO_JUMPS)
    assert iters <= grid.steps + 1 and gap == 0.0
    assert rel_err(X.values, direct_solve(linear(), ctrl, drv, grid, NO_JUMPS).values) <= 1e-12


def test_picard_zero_coefficients_one_iteration():
    grid = make_grid(1.0, 8)
    X, iters, gap = picard_solve(VolterraCoefficients(xi=lambda t: 2.0), ControlPath.constant(0, grid),
                                 sample_driver(grid, NO_JUMPS, 0, 0), grid, 1e-12, 5, NO_JUMPS)
    assert iters == 1 and gap == 0.0


def test_picard_max_iter_exceeded():
    grid = make_grid(1.0, 32)
    with pytest.raises(RuntimeError):
        picard_solve(linear(), ControlPath.constant(0, grid), sample_driver(grid, NO_JUMPS, 0, 0), grid, 0.0, 3, NO_JUMPS)
    with pytest.raises(ValueError):
        picard_solve(linear(), ControlPath.constant(0, grid), sample_driver(grid, NO_JUMPS, 0, 0), grid, -1.0, 3, NO_JUMPS)


@given(
    st.floats(-1.0, 1.0), st.floats(0.0, 0.8), st.floats(-0.5, 0.5), st.integers(2, 24), st.integers(0, 1000)
)
def test_picard_equals_direct_for_random_models(c, sig, gam, N, seed):
    grid = make_grid(1.0, N)
    levy = LevyMeasureSpec(1.5, ((0.4, 0.5), (-0.3, 0.5)))
    coeffs = VolterraCoefficients(
        xi=lambda t: 1.0 + t,
        b=lambda t, s, x, u: c * (1 + t - s) * x - u,
        sigma=lambda t, s, x, u: sig * np.cos(x) * (1 + 0.0 * s),
        gamma=lambda t, s, x, u, z: gam * z * x,
    )
    batch = sample_batch(grid, levy, 5, seed)
    ctrl = ControlPath.constant(0.3, grid)
    X, iters, gap, _ = picard_sweeps(coeffs, ctrl, batch, 0.0, N + 1)
    assert gap == 0.0 and iters <= N + 1
    assert rel_err(X, solve_batch(coeffs, ctrl, batch)) <= 1e-12


@given(st.integers(1, 15), st.integers(0, 100))
def test_adaptedness(i, seed):
    grid = make_grid(1.0, 16)
    levy = LevyMeasureSpec(2.0, ((0.4, 0.5), (-0.3, 0.5)))
    coeffs = VolterraCoefficients(
        xi=lambda t: 1.0, b=lambda t, s, x, u: -x, sigma=lambda t, s, x, u: 0.3 * x,
        gamma=lambda t, s, x, u, z: z * x,
    )
    batch = sample_batch(grid, levy, 3, seed)
    dB = batch.dB.copy()
    counts = batch.counts.copy()
    dB[:, i:] = 0.0
    counts[:, i:] = 0
    cut = DriverBatch(grid, levy, dB, counts)
    ctrl = ControlPath.constant(0.0, grid)
    np.testing.assert_array_equal(solve_batch(coeffs, ctrl, batch)[:, : i + 1], solve_batch(coeffs, ctrl, cut)[:, : i + 1])


def test_contraction_ratio_bound():
    T, C = 0.2, 0.5
    grid = make_grid(T, 32)
    coeffs = VolterraCoefficients(
        xi=lambda t: 1.0, b=lambda t, s, x, u: C * x, sigma=lambda t, s, x, u: C * x, lipschitz=C
    )
    batch = sample_batch(grid, NO_JUMPS, 2000, 1)
    _, _, _, hist = picard_sweeps(coeffs, ControlPath.constant(0, grid), batch, 1e-14, 100, keep_history=True)
    K = 3 * C**2 * (T + 2)
    ratios = contraction_ratios(hist)
    assert ratios.size > 3
    assert np.all(ratios <= K * T)


def test_jump_compensation_zero_mean(symmetric_levy):
    grid = make_grid(1.0, 16)
    coeffs = VolterraCoefficients(gamma=lambda t, s, x, u, z: z + 0.0 * x)
    X = solve_batch(coeffs, ControlPath.constant(0, grid), sample_batch(grid, symmetric_levy, 100_000, 2))
    assert_within(mean_se(X[:, -1]), 0.0)


def test_performance_zero_reward():
    grid = make_grid(1.0, 8)
    assert tuple(performance(linear(), ControlPath.constant(0, grid), grid, NO_JUMPS, 10, 0)) == (0.0, 0.0)


@pytest.mark.parametrize("u,expected", [(1.0, 1.0), (2.0, np.log(2.0))])
def test_performance_consumption_closed_form(u, expected):
    model, coeffs = build_model(ConsumptionModel(x0=2.0))
    grid = model.grid(64)
    est = performance(coeffs, ControlPath.constant(u, grid), grid, model.levy, 100, 0)
    assert abs(est.value - expected) <= 1e-12 and est.std_error <= 1e-15


def test_performance_needs_two_paths():
    grid = make_grid(1.0, 4)
    with pytest.raises(ValueError):
        performance(linear(), ControlPath.constant(0, grid), grid, NO_JUMPS, 1, 0)


def test_control_validation():
    grid = make_grid(1.0, 4)
    with pytest.raises(AdmissibilityError):
        ControlPath.constant(5.0, grid, 0.0, 1.0)
    with pytest.raises(AdmissibilityError):
        ControlPath(np.array([1.0, np.nan, 1, 1, 1]))
    with pytest.raises(ValueError):
        ControlPath(np.ones((2, 5)))
    with pytest.raises(ValueError):
        direct_solve(linear(), ControlPath(np.ones(3)), sample_driver(grid, NO_JUMPS, 0, 0), grid, NO_JUMPS)


def test_non_finite_state_raises():
    grid = make_grid(1.0, 8)
    coeffs = VolterraCoefficients(xi=lambda t: 1.0, b=lambda t, s, x, u: np.exp(1e3 * x))
    with pytest.raises(NumericalError):
        with np.errstate(over="ignore"):
            solve_batch(coeffs, ControlPath.constant(0, grid), sample_batch(grid, NO_JUMPS, 2, 0))


def test_missing_partials_named():
    with pytest.raises(MissingPartialError, match="b_tx"):
        VolterraCoefficients().need("b_tx")


def test_reward_uses_left_sum():
    model, coeffs = build_model(ConsumptionModel(x0=2.0))
    grid = model.grid(4)
    u = ControlPath(np.array([1.0, 2.0, 1.0, 1.0, 100.0]), model.u_min, model.u_max)
    r = reward_samples(coeffs, u, sample_batch(grid, model.levy, 2, 0))
    assert r[0] == pytest.approx(0.25 * np.log(2.0) + 2.0 - 0.25 * 5.0)
