import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterra_control.forward import MissingPartialError, VolterraCoefficients
from volterra_control.hamiltonian import (
    HamiltonianInputs,
    a2_smoothness_probe,
    adjoint_driver_dHdx,
    adjoint_driver_integral,
    covariance_witness,
    hamiltonian_h0,
    hamiltonian_h1,
    linear_adjoint_solve,
    representation_components,
    trapezoid,
)
from volterra_control.measure import ThetaSpec, theta_values
from volterra_control.model import ConsumptionModel, KernelSpec, build_model
from volterra_control.paths import LevyMeasureSpec, make_grid, sample_batch

from conftest import assert_within

NO_JUMPS = LevyMeasureSpec(0.0)
G = make_grid(1.0, 16)


def inputs(i, x, v, p=1.0, q=0.0, r=0.0, grid=G, K=1):
    n = grid.steps + 1
    return HamiltonianInputs.from_tables(
        i, x, v, np.full(n, p), np.full((n, n), q), np.full((n, n, K), r), n_marks=K
    )


def consumption(c=0.0, **kw):
    b0 = KernelSpec.of("constant", c=c) if c else KernelSpec("zero")
    return build_model(ConsumptionModel(b0=b0, **kw))


def test_trapezoid_rule():
    assert trapezoid([1.0], 0.1) == 0.0
    assert trapezoid(np.linspace(0, 1, 11), 0.1) == pytest.approx(0.5)


def test_h0_consumption_examples():
    _, co = consumption()
    assert hamiltonian_h0(inputs(3, 5.0, 1.0), co, NO_JUMPS, G) == pytest.approx(-1.0, abs=1e-15)
    _, co = consumption(0.5)
    assert hamiltonian_h0(inputs(3, 3.0, 2.0), co, NO_JUMPS, G) == pytest.approx(math.log(2) - 0.5, abs=1e-14)


def test_h0_zero_coefficients():
    assert hamiltonian_h0(inputs(0, 1.0, 1.0, 2.0, 3.0, 4.0), VolterraCoefficients(), NO_JUMPS, G) == 0.0


def test_h0_jump_term(symmetric_levy):
    co = VolterraCoefficients(gamma=lambda t, s, x, u, z: z * x)
    inp = inputs(0, 2.0, 1.0, r=3.0, K=2)
    # nu(r gamma) = 3 * 2 * (0.5 * 0.5 - 0.5 * 0.5) = 0
    assert hamiltonian_h0(inp, co, symmetric_levy, G) == pytest.approx(0.0, abs=1e-15)
    levy = LevyMeasureSpec(2.0, ((0.5, 1.0),))
    assert hamiltonian_h0(inputs(0, 2.0, 1.0, r=3.0), co, levy, G) == pytest.approx(2.0 * 3.0 * 0.5 * 2.0)


def test_h1_examples():
    _, co = consumption(0.5)
    assert hamiltonian_h1(inputs(0, 2.0, 1.0), co, G, NO_JUMPS) == 0.0
    z = lambda t, s, x, u: 0.0 * x  # noqa: E731
    co = VolterraCoefficients(b=lambda t, s, x, u: t * x, b_t=lambda t, s, x, u: x, sigma_t=z,
                              gamma_t=lambda t, s, x, u, zeta: 0.0 * x)
    g = make_grid(1.0, 1000)
    assert abs(hamiltonian_h1(inputs(0, 2.0, 1.0, grid=g), co, g, NO_JUMPS) - 2.0) <= 1e-6
    assert hamiltonian_h1(inputs(0, 2.0, 1.0, p=0.0, grid=g), co, g, NO_JUMPS) == 0.0


def test_h1_needs_partials():
    with pytest.raises(MissingPartialError):
        hamiltonian_h1(inputs(0, 1.0, 1.0), VolterraCoefficients(), G, NO_JUMPS)


def test_dHdx_examples():
    _, co = consumption(0.5)
    assert adjoint_driver_dHdx(inputs(4, 1.7, 0.8), co, G, NO_JUMPS) == pytest.approx(0.5, abs=1e-14)
    zero4 = lambda t, s, x, u: 0.0 * x  # noqa: E731
    zero5 = lambda t, s, x, u, z: 0.0 * x  # noqa: E731
    co = VolterraCoefficients(
        b=lambda t, s, x, u: u, f=lambda t, x, u: u**2,
        **{n: zero4 for n in ("b_t", "sigma_t", "b_x", "b_u", "sigma_x", "sigma_u", "b_tx", "b_tu", "sigma_tx", "sigma_tu")},
        **{n: zero5 for n in ("gamma_t", "gamma_x", "gamma_u", "gamma_tx", "gamma_tu")},
        f_x=lambda t, x, u: 0.0 * x, f_u=lambda t, x, u: 2 * u,
    )
    assert adjoint_driver_dHdx(inputs(2, 1.0, 1.0, 3.0, 1.0, 1.0), co, G, NO_JUMPS) == 0.0


def _s_free(a, b, c):
    """x-quadratic, s-independent coefficients with hand-coded partials."""
    z4 = lambda t, s, x, u: 0.0 * x  # noqa: E731
    z5 = lambda t, s, x, u, zeta: 0.0 * x  # noqa: E731
    return VolterraCoefficients(
        b=lambda t, s, x, u: a * x**2 + u * x, b_x=lambda t, s, x, u: 2 * a * x + u,
        sigma=lambda t, s, x, u: b * x**2, sigma_x=lambda t, s, x, u: 2 * b * x,
        gamma=lambda t, s, x, u, z: c * z * x**2, gamma_x=lambda t, s, x, u, z: 2 * c * z * x,
        f=lambda t, x, u: x**2 * u, f_x=lambda t, x, u: 2 * x * u,
        b_t=z4, sigma_t=z4, gamma_t=z5, b_tx=z4, sigma_tx=z4, gamma_tx=z5,
    )


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(-3, 3), st.floats(0.1, 3),
       st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.integers(0, 16))
def test_expanded_driver_reduces_to_diagonal_derivative(a, b, c, x, v, p, q, r, i):
    levy = LevyMeasureSpec(1.5, ((0.7, 0.25), (-0.3, 0.75)))
    co = _s_free(a, b, c)
    inp = inputs(i, x, v, p, q, r, K=2)
    h = 1e-3
    fd = (hamiltonian_h0(inputs(i, x + h, v, p, q, r, K=2), co, levy, G)
          - hamiltonian_h0(inputs(i, x - h, v, p, q, r, K=2), co, levy, G)) / (2 * h)
    assert abs(adjoint_driver_dHdx(inp, co, G, levy) - fd) <= 1e-10 * max(1.0, abs(fd))


def test_expanded_integral_s_free_kernel():
    _, co = consumption(0.5)
    n = G.steps + 1
    p = np.linspace(1.0, 2.0, n)
    val = adjoint_driver_integral(4, co, np.ones(n), np.ones(n), p, None, None, G, NO_JUMPS)
    assert val == pytest.approx(0.5 * trapezoid(p[4:], G.dt), abs=1e-14)


def test_expanded_integral_lag_terms():
    # b = (t - s) x: b_x(s, s) = 0, b_tx = 1, integrand p (s - t)
    z4 = lambda t, s, x, u: 0.0 * x  # noqa: E731
    z5 = lambda t, s, x, u, zeta: 0.0 * x  # noqa: E731
    co = VolterraCoefficients(
        b=lambda t, s, x, u: (t - s) * x, b_x=lambda t, s, x, u: t - s, b_tx=lambda t, s, x, u: 1.0 + 0.0 * x,
        sigma_x=z4, sigma_tx=z4, gamma_x=z5, gamma_tx=z5, f_x=lambda t, x, u: 0.0 * x,
    )
    g = make_grid(1.0, 200)
    n = g.steps + 1
    val = adjoint_driver_integral(0, co, np.ones(n), np.ones(n), np.ones(n), None, None, g, NO_JUMPS)
    assert val == pytest.approx(0.5, abs=1e-12)


def test_adjoint_trivial_and_terminal():
    model, _ = consumption()
    g = make_grid(1.0, 8)
    sol = linear_adjoint_solve(model, g, sample_batch(g, NO_JUMPS, 4, 0))
    np.testing.assert_array_equal(sol.p_hat, 1.0)


def test_adjoint_constant_kernel_is_bsde():
    model, _ = consumption(0.5)
    g = make_grid(1.0, 1024)
    sol = linear_adjoint_solve(model, g, sample_batch(g, NO_JUMPS, 2, 0))
    np.testing.assert_allclose(sol.p_hat[0], np.exp(0.5 * (1 - g.nodes)), atol=1e-4)


def test_adjoint_terminal_equals_theta(symmetric_levy):
    model = ConsumptionModel(gamma0=KernelSpec.of("mark_linear", scale=0.5), levy=symmetric_levy,
                             theta=ThetaSpec("affine_jump", alpha=2.0, beta=1.0), b0=KernelSpec.of("constant", c=0.3))
    g = make_grid(1.0, 16)
    batch = sample_batch(g, symmetric_levy, 50, 1)
    sol = linear_adjoint_solve(model, g, batch)
    np.testing.assert_array_equal(sol.p_hat[:, -1], theta_values(model.theta, batch))


def test_adjoint_lognormal_nested_matches_closed_form():
    model = ConsumptionModel(b0=KernelSpec.of("constant", c=0.5), sigma0=KernelSpec.of("constant", value=0.3),
                             theta=ThetaSpec("lognormal", a=0.5))
    g = make_grid(1.0, 8)
    batch = sample_batch(g, NO_JUMPS, 2, 4)
    exact = linear_adjoint_solve(model, g, batch)
    nested = linear_adjoint_solve(model, g, batch, method="nested", n_branches=10_000, base_seed=5)
    for i in (0, 3, 6):
        for p in range(2):
            assert abs(nested.p_hat[p, i] - exact.p_hat[p, i]) <= 3 * nested.p_se[p, i]
    np.testing.assert_allclose(exact.kappa, np.exp(0.5 * (1 - g.nodes)), rtol=1e-3)


def test_representation_constant_theta_vanishes(symmetric_levy):
    model = ConsumptionModel(b0=KernelSpec.of("constant", c=0.5), levy=symmetric_levy)
    g = make_grid(1.0, 8)
    rep = representation_components(model, g, sample_batch(g, symmetric_levy, 3, 0))
    assert not rep.q_table(0).any() and not rep.r_table(1).any()
    assert a2_smoothness_probe(rep.q_table(0), g) == 0.0


def test_representation_lognormal_no_jump_component():
    model = ConsumptionModel(theta=ThetaSpec("lognormal", a=0.5))
    g = make_grid(1.0, 8)
    rep = representation_components(model, g, sample_batch(g, NO_JUMPS, 3, 0))
    assert not rep.r_table(0).any()
    with pytest.raises(ValueError):
        rep.q(2, 2)


def test_representation_rejects_non_catalog():
    model = ConsumptionModel(theta=ThetaSpec("softplus", a=1.0))
    with pytest.raises(ValueError):
        representation_components(model, G, sample_batch(G, NO_JUMPS, 2, 0))


def test_covariance_witness_lognormal():
    model = ConsumptionModel(theta=ThetaSpec("lognormal", a=0.5))
    g = make_grid(1.0, 16)
    batch = sample_batch(g, NO_JUMPS, 200_000, 21)
    for i in (8, 12, 16):
        est, target = covariance_witness(model, g, batch, i, i // 2)
        assert abs(target - 0.5) <= 1e-3  # sample mean of the analytic q
        assert_within(est, target)


def test_a2_probe_analytic_derivative():
    c, a = 0.5, 0.5
    model = ConsumptionModel(b0=KernelSpec.of("constant", c=c), theta=ThetaSpec("lognormal", a=a))
    g = make_grid(1.0, 256)
    rep = representation_components(model, g, sample_batch(g, NO_JUMPS, 1, 3))
    tab = rep.q_table(0)
    exact = c * max(np.max(np.abs(tab[i, :i])) for i in range(1, g.steps))
    assert abs(a2_smoothness_probe(tab, g) - exact) <= 2 * c * exact * g.dt + 1e-3 * exact


def test_a2_probe_flags_jump():
    g = make_grid(1.0, 32)
    tab = np.zeros((33, 33))
    tab[17:, :] = 1.0
    assert a2_smoothness_probe(tab, g) >= 1.0 / g.dt
    assert a2_smoothness_probe(np.zeros((33, 33, 2)), g) == 0.0
