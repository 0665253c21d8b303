import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.stats import norm

from volterra_control.consumption import (
    NonPositiveAdjointError,
    certify,
    default_perturbations,
    discretisation_atol,
    optimal_control,
    residual_times,
    solve_optimal,
)
from volterra_control.forward import AdmissibilityError, ControlPath, solve_batch
from volterra_control.hamiltonian import linear_adjoint_solve
from volterra_control.measure import ThetaSpec
from volterra_control.model import ConsumptionModel, KernelSpec, build_model
from volterra_control.paths import LevyMeasureSpec, make_grid, sample_batch

NO_JUMPS = LevyMeasureSpec(0.0)
G = make_grid(1.0, 32)


def const_b0(c):
    return KernelSpec.of("constant", c=c)


def test_zero_model_state():
    model, co = build_model(ConsumptionModel(x0=2.0))
    X = solve_batch(co, ControlPath.constant(0.5, G), sample_batch(G, NO_JUMPS, 3, 0))
    np.testing.assert_allclose(X, np.broadcast_to(2.0 - 0.5 * G.nodes, X.shape), atol=1e-14)


def test_memory_ode_state():
    g = make_grid(1.0, 4096)
    _, co = build_model(ConsumptionModel(b0=const_b0(0.5)))
    X = solve_batch(co, ControlPath.constant(0.0, g), sample_batch(g, NO_JUMPS, 1, 0))
    np.testing.assert_allclose(X[0], np.exp(0.5 * g.nodes), rtol=1e-3)


def test_jump_loading_bound():
    levy = LevyMeasureSpec(1.0, ((-0.5, 1.0),))
    ConsumptionModel(gamma0=KernelSpec.of("mark_linear", scale=1.0), levy=levy, epsilon=0.5)
    with pytest.raises(ValueError):
        ConsumptionModel(gamma0=KernelSpec.of("mark_linear", scale=1.9), levy=levy)


def test_build_model_from_dict():
    model, _ = build_model({"x0": 3.0, "b0": {"id": "constant", "params": {"c": 0.2}}})
    assert model.x0 == 3.0 and model.b0_bound == pytest.approx(0.2)
    assert ConsumptionModel.from_dict(model.to_dict()) == model


def test_zero_model_optimum_is_one():
    u = optimal_control(ConsumptionModel(), "deterministic", G)
    np.testing.assert_array_equal(u.values, 1.0)


def test_constant_kernel_optimum():
    g = make_grid(1.0, 1024)
    u = optimal_control(ConsumptionModel(b0=const_b0(0.5)), "deterministic", g)
    np.testing.assert_allclose(u.values, np.exp(-0.5 * (1 - g.nodes)), atol=1e-4)


@given(st.floats(0.1, 10.0), st.floats(-1.0, 1.0))
def test_homogeneity_and_positivity(k, c):
    base = optimal_control(ConsumptionModel(b0=const_b0(c)), "deterministic", G).values
    scaled = optimal_control(ConsumptionModel(b0=const_b0(c), theta=ThetaSpec("constant", k=k)), "deterministic", G).values
    np.testing.assert_allclose(scaled, base / k, rtol=1e-14)
    assert np.all(scaled > 0)


def test_theta_two_halves_control():
    one = optimal_control(ConsumptionModel(b0=const_b0(0.5)), "deterministic", G).values
    two = optimal_control(ConsumptionModel(b0=const_b0(0.5), theta=ThetaSpec("constant", k=2.0)), "deterministic", G).values
    np.testing.assert_array_equal(two, one / 2)


def test_nonpositive_theta_rejected():
    with pytest.raises(NonPositiveAdjointError):
        optimal_control(ConsumptionModel(theta=ThetaSpec("constant", k=-1.0)), "deterministic", G)
    model = ConsumptionModel(theta=ThetaSpec("affine_brownian", alpha=0.1, beta=1.0))
    with pytest.raises(NonPositiveAdjointError):
        solve_optimal(model, G, "full", batch=sample_batch(G, NO_JUMPS, 200, 0))


def test_interiority_enforced():
    with pytest.raises(AdmissibilityError):
        optimal_control(ConsumptionModel(theta=ThetaSpec("constant", k=1e4)), "deterministic", G)


def test_full_information_per_path():
    model = ConsumptionModel(sigma0=KernelSpec.of("constant", value=0.3), theta=ThetaSpec("lognormal", a=0.5), b0=const_b0(0.2))
    batch = sample_batch(G, NO_JUMPS, 20, 1)
    plan = solve_optimal(model, G, "full", batch=batch)
    np.testing.assert_allclose(plan.control.values, 1.0 / linear_adjoint_solve(model, G, batch).p_hat)
    assert plan.control.info_mode == "full" and not plan.se.any()


def test_generic_theta_needs_batch_and_reports_se():
    model = ConsumptionModel(theta=ThetaSpec("softplus", a=1.0))
    with pytest.raises(ValueError):
        solve_optimal(model, G, "deterministic")
    plan = solve_optimal(model, G, "deterministic", batch=sample_batch(G, NO_JUMPS, 20_000, 0))
    mean, _ = quad(lambda z: np.log1p(np.exp(z)) * norm.pdf(z), -40, 40)
    assert plan.se[0] > 0
    assert abs(plan.control.values[0] - 1 / mean) <= 3 * plan.se[0]


def test_default_layout():
    perts = default_perturbations(1.0)
    assert [p.start for p in perts] == [0.0, 0.25, 0.5, 0.75]
    assert all(p.width == 0.25 for p in perts)
    assert residual_times(2.0) == [0.25, 0.75, 1.25, 1.75]
    assert discretisation_atol(ConsumptionModel(), G, perts) == 0.0
    assert discretisation_atol(ConsumptionModel(b0=const_b0(0.5)), G, perts) > 0.0


def test_certify_zero_model_passes():
    model = ConsumptionModel(x0=2.0)
    u = optimal_control(model, "deterministic", G)
    rep = certify(model, u, G, 1_000, 0)
    assert rep["pass"] and rep["scan_pass"] and rep["gateaux_pass"] and rep["residual_pass"]
    assert rep["concavity"]["pass"]
    assert len(rep["gateaux"]) == 4 and len(rep["residuals"]) == 4


@pytest.mark.parametrize("kappa", [0.5, 2.0])
def test_certify_rejects_scaled_control(kappa):
    model = ConsumptionModel(x0=2.0)
    u = optimal_control(model, "deterministic", G)
    rep = certify(model, u.with_values(kappa * u.values), G, 1_000, 0)
    assert not rep["pass"]
    bad = [r for r in rep["residuals"] if not r["pass"]]
    assert bad and all(np.sign(r["value"]) == np.sign(1 - kappa) for r in bad)
    row = next(r for r in rep["scan"] if r["kappa"] == 1 / kappa)
    assert row["gap"] < 0  # u itself is beaten by the rescaled-back control


def test_certify_memory_model():
    levy = LevyMeasureSpec(1.0, ((0.5, 0.5), (-0.5, 0.5)))
    model = ConsumptionModel(x0=2.0, b0=const_b0(0.5), sigma0=KernelSpec.of("constant", value=0.3),
                             gamma0=KernelSpec.of("constant", value=0.2), levy=levy, theta=ThetaSpec("lognormal", a=0.4))
    u = optimal_control(model, "deterministic", G)
    assert certify(model, u, G, 20_000, 3)["pass"]
    assert not certify(model, u.with_values(2 * u.values), G, 20_000, 3)["pass"]


def test_certify_scan_only():
    model = ConsumptionModel(x0=2.0)
    rep = certify(model, optimal_control(model, "deterministic", G), G, 100, 0, perturbations=[])
    assert set(rep) == {"scan", "scan_pass", "pass"}
    assert rep["pass"]


def test_closed_form_needs_first_argument_free_kernel():
    # b0(t, s) = 0.8 (s - t) depends on t: the reduced adjoint misses the memory terms
    model = ConsumptionModel(x0=2.0, b0=KernelSpec.of("linear_gap", c=0.8))
    g = make_grid(1.0, 64)
    rep = certify(model, optimal_control(model, "deterministic", g), g, 100, 0)
    assert not rep["gateaux_pass"]
    assert rep["gateaux"][0]["value"] > 5 * rep["gateaux_atol"]
