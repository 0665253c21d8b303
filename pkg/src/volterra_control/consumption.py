"""Optimal consumption under log utility and its certification.

``u(t) = 1 / E[p(t) | G_t]`` with ``p(t) = kappa(t) E_Q[theta | F_t]``.
``certify`` bundles the maximum-principle checks into one report.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .forward import ControlPath, VolterraCoefficients
from .hamiltonian import expected_theta_q, linear_adjoint_solve, model_kappa
from .maximum_principle import (
    PerturbationSpec,
    concavity_probe,
    gateaux_fd_pair,
    hamiltonian_gradient_residual,
    sufficiency_scan,
)
from .measure import log_weights, theta_values
from .model import ConsumptionModel, build_model
from .paths import DriverBatch, TimeGrid
from .stats import mean_se


ROUNDOFF = 1e-10
# residuals for theta without a closed form go through the nested ratio
# estimator, whose O(1/n_branches) bias the path SE does not see
GENERIC_THETA_FACTOR = 3.0


class NonPositiveAdjointError(ValueError):
    """``E[p | G]`` is not positive, so ``1 / E[p | G]`` is no consumption rate."""


@dataclass(frozen=True)
class OptimalPlan:
    control: ControlPath
    se: np.ndarray  # standard error of u per node (0 where exact)


def _deterministic_mean(model, grid, tol, batch):
    kappa = model_kappa(model, grid, tol)
    n = grid.steps + 1
    if model.theta.analytic:
        m = np.array([expected_theta_q(model, grid, i) for i in range(n)])
        return kappa * m, np.zeros(n)
    if batch is None:
        raise ValueError("theta without a closed form needs a driver batch")
    # E[E_Q[theta | F_t]] = E[theta M(T) / M(t)]
    logm = log_weights(model.girsanov, batch)
    th = theta_values(model.theta, batch)
    est = [mean_se(th * np.exp(logm[:, -1] - logm[:, i])) for i in range(n)]
    return kappa * np.array([e.value for e in est]), kappa * np.array([e.std_error for e in est])


def solve_optimal(
    model: ConsumptionModel,
    grid: TimeGrid,
    info_mode: Literal["deterministic", "full"] = "deterministic",
    tol: float = 1e-10,
    batch: DriverBatch | None = None,
    n_branches: int = 200,
    base_seed: int = 0,
) -> OptimalPlan:
    """Closed-form optimal consumption with standard errors.

    The closed form is the optimum only for kernels ``b0(t, s)`` that do
    not depend on ``t``; otherwise the reduced adjoint drops the
    ``d b0 / d t`` memory terms and ``certify`` rejects the result.
    """
    if info_mode == "deterministic":
        mean, se_p = _deterministic_mean(model, grid, tol, batch)
        if np.any(mean <= 0):
            raise NonPositiveAdjointError(
                f"E[p(t)] <= 0 at t={grid.nodes[np.argmax(mean <= 0)]}; theta must be positive"
            )
        u = 1.0 / mean
        return OptimalPlan(ControlPath(u, model.u_min, model.u_max, "deterministic"), se_p * u**2)
    if info_mode != "full":
        raise ValueError(f"unknown info_mode {info_mode!r}")
    if batch is None:
        raise ValueError("full information needs a driver batch")
    sol = linear_adjoint_solve(model, grid, batch, tol=tol, n_branches=n_branches, base_seed=base_seed)
    if np.any(sol.p_hat <= 0):
        raise NonPositiveAdjointError("p(t) <= 0 on some path; theta must be positive")
    u = 1.0 / sol.p_hat
    se = np.zeros_like(u) if sol.p_se is None else sol.p_se * u**2
    return OptimalPlan(ControlPath(u, model.u_min, model.u_max, "full"), se)


def optimal_control(
    model: ConsumptionModel,
    info_mode: Literal["deterministic", "full"],
    grid: TimeGrid,
    tol: float = 1e-10,
    batch: DriverBatch | None = None,
) -> ControlPath:
    return solve_optimal(model, grid, info_mode, tol, batch).control


def default_perturbations(horizon: float, eta: float = 1.0) -> list[PerturbationSpec]:
    """Bumps of width ``T/4`` starting at ``0, T/4, T/2, 3T/4``."""
    h = horizon / 4
    return [PerturbationSpec(k * h, h, eta) for k in range(4)]


def residual_times(horizon: float) -> list[float]:
    return [horizon * k / 8 for k in (1, 3, 5, 7)]


def discretisation_atol(model: ConsumptionModel, grid: TimeGrid, perturbations: Sequence[PerturbationSpec]) -> float:
    """O(dt) allowance for the Gateaux derivative of the grid problem at the continuum optimum.

    ``2 C T e^{CT} dt max|eta h| max_t E[p(t)]`` with ``C`` the bound on ``|b0|``:
    the relative gap between the trapezoid resolvent and the left-point
    forward scheme is at most ``C T e^{CT} dt`` to first order.
    """
    C, T = model.b0_bound, grid.horizon
    if C == 0.0 or not perturbations:
        return 0.0
    bump = max(abs(q.eta) * q.width for q in perturbations)
    return float(2.0 * C * T * np.exp(C * T) * grid.dt * bump * np.max(np.abs(_mean_adjoint(model, grid))))


def _mean_adjoint(model: ConsumptionModel, grid: TimeGrid) -> np.ndarray:
    """``E[p(t)]`` for analytic weights; ``kappa`` alone otherwise (used for scales only)."""
    kappa = model_kappa(model, grid)
    if not model.theta.analytic:
        return kappa
    return kappa * np.array([expected_theta_q(model, grid, i) for i in range(grid.steps + 1)])


def certify(
    model: ConsumptionModel,
    u: ControlPath,
    grid: TimeGrid,
    n_paths: int,
    base_seed: int,
    perturbations: Sequence[PerturbationSpec] | None = None,
    kappas: Sequence[float] = (0.5, 1.0, 2.0),
    lambda_step: float = 1e-3,
    atol: float | None = None,
    n_se: float = 3.0,
    scan_se: float = 2.0,
    workers: int = 1,
    coeffs: VolterraCoefficients | None = None,
) -> dict:
    """Maximum-principle report for a candidate control.

    Gateaux tolerance is ``n_se * SE + |D(2 lambda) - D(lambda)| / 3 + atol``;
    residual tolerance is ``n_se * SE`` plus roundoff, with ``n_se`` scaled by
    ``GENERIC_THETA_FACTOR`` when ``theta`` has no closed form; the scan needs
    ``J(u) - J(kappa u) > scan_se * SE`` (paired) for every ``kappa != 1``.
    ``atol`` absorbs the time-discretisation bias of models whose
    closed-form control is only optimal in the continuum limit; by default
    it is :func:`discretisation_atol` plus a roundoff floor.
    """
    if coeffs is None:
        _, coeffs = build_model(model)
    if perturbations is None:
        perturbations = default_perturbations(grid.horizon)
    levy = model.levy
    if atol is None:
        atol = discretisation_atol(model, grid, perturbations) + ROUNDOFF
    scan = sufficiency_scan(coeffs, u, kappas, grid, levy, n_paths, base_seed, workers)
    scan_ok = all(r.gap > scan_se * r.gap_se for r in scan if r.kappa != 1.0)
    report: dict = {
        "scan": [r.__dict__ | {"pass": bool(r.kappa == 1.0 or r.gap > scan_se * r.gap_se)} for r in scan],
        "scan_pass": bool(scan_ok),
    }
    if not perturbations:
        report["pass"] = bool(scan_ok)
        return report
    gateaux = []
    for pert in perturbations:
        est, trunc = gateaux_fd_pair(coeffs, u, pert, lambda_step, grid, levy, n_paths, base_seed, workers)
        tol = n_se * est.std_error + trunc + atol
        gateaux.append(
            {"start": pert.start, "width": pert.width, "eta": pert.eta, "value": est.value,
             "se": est.std_error, "truncation": trunc, "pass": bool(abs(est.value) <= tol)}
        )
    residual_se = n_se if model.theta.analytic else GENERIC_THETA_FACTOR * n_se
    residuals = []
    for t in residual_times(grid.horizon):
        est = hamiltonian_gradient_residual(model, u, t, grid, n_paths, base_seed, workers=workers)
        residuals.append(
            {"t": t, "value": est.value, "se": est.std_error,
             "pass": bool(abs(est.value) <= residual_se * est.std_error + ROUNDOFF)}
        )
    p_mean = _mean_adjoint(model, grid)
    x_probe = [model.x0 - 1.0, model.x0, model.x0 + 1.0]
    u_mid = float(np.median(u.values))
    worst = concavity_probe(coeffs, grid, levy, p_mean, x_probe, [0.5 * u_mid, u_mid, 2.0 * u_mid])
    concave_ok = worst <= 1e-6 * max(1.0, 1.0 / u_mid**2)
    report.update(
        gateaux_atol=atol,
        gateaux=gateaux,
        gateaux_pass=all(g["pass"] for g in gateaux),
        residuals=residuals,
        residual_pass=all(r["pass"] for r in residuals),
        concavity={"max_eigenvalue": worst, "pass": bool(concave_ok)},
    )
    report["pass"] = bool(scan_ok and report["gateaux_pass"] and report["residual_pass"] and concave_ok)
    return report
