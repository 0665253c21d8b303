"""Bump perturbations, the derivative process and Gateaux derivatives of J.

A perturbation ``beta = eta * 1_[t, t+h)`` is sampled at the left nodes, so
``sum beta_i dt = eta * h`` exactly whenever ``t`` and ``t + h`` are nodes.

Two independent routes to ``d/dlambda J(u + lambda beta)`` at ``lambda = 0``:

* ``gateaux_fd``: central difference with common random numbers;
* ``gateaux_via_y``: ``E[sum (f_x Y + f_u beta) dt + g'(X(T)) Y(T)]`` with
  ``Y`` the derivative process.

The integral form of ``Y`` is the exact linearisation of the forward
scheme, so the two routes differ only by the ``O(lambda^2)`` remainder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .forward import (
    AdmissibilityError,
    ControlPath,
    VolterraCoefficients,
    _check_control,
    _evaluate,
    kernel_row,
    reward_samples,
    solve_batch,
)
from .hamiltonian import HamiltonianInputs, hamiltonian, model_kappa
from .measure import conditional_expectation_q, theta_conditional_q
from .model import ConsumptionModel
from .paths import DriverBatch, LevyMeasureSpec, TimeGrid, sample_batch
from .stats import Estimate, mean_se


@dataclass(frozen=True)
class PerturbationSpec:
    start: float
    width: float
    eta: float = 1.0

    def __post_init__(self):
        if self.start < 0 or self.width <= 0:
            raise ValueError("need start >= 0 and width > 0")
        if not np.isfinite(self.eta):
            raise ValueError("eta must be finite")

    def check(self, grid: TimeGrid) -> None:
        if self.start + self.width > grid.horizon * (1 + 1e-12):
            raise ValueError(f"bump [{self.start}, {self.start + self.width}) leaves [0, {grid.horizon}]")

    def beta(self, grid: TimeGrid) -> np.ndarray:
        """``beta(t_i)`` for ``i = 0..N``; ``t_i in [start, start + width)``."""
        self.check(grid)
        t, tol = grid.nodes, 1e-9 * grid.dt
        on = (t >= self.start - tol) & (t < self.start + self.width - tol)
        return np.where(on, self.eta, 0.0)

    def scaled(self, factor: float) -> "PerturbationSpec":
        return PerturbationSpec(self.start, self.width, self.eta * factor)


@dataclass(frozen=True)
class DerivativePath:
    values: np.ndarray  # (n_paths, N+1)


def _linearised(coeffs: VolterraCoefficients, X: np.ndarray, U: np.ndarray, beta: np.ndarray, Y: np.ndarray):
    """Kernel triple of the Y equation, closed over the frozen state and control."""
    b_x, b_u, s_x, s_u, g_x, g_u = coeffs.need("b_x", "b_u", "sigma_x", "sigma_u", "gamma_x", "gamma_u")

    def lin(dx, du):
        def fn(t, s, x, u, *z):
            m = x.shape[1]
            return dx(t, s, x, u, *z) * Y[:, :m] + du(t, s, x, u, *z) * beta[:m]

        return fn

    return lin(b_x, b_u), lin(s_x, s_u), lin(g_x, g_u)


def derivative_process(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    pert: PerturbationSpec,
    batch: DriverBatch,
    scheme: Literal["integral", "differential"] = "integral",
    X: np.ndarray | None = None,
) -> DerivativePath:
    """Pathwise sensitivity ``Y`` of the state to ``u -> u + lambda beta``.

    ``integral``: ``Y_i = sum_{j<i} b_x(t_i, t_j) Y_j dt + b_u beta_j dt``
    plus the Brownian and jump analogues, which differentiates the forward
    scheme exactly.

    ``differential``: the left-point rule for ``dY(t)`` with diagonal
    coefficients and the memory drift
    ``int_0^t d_t b_x(t, s) Y(s) + d_t b_u(t, s) beta(s) ds`` (and its
    Brownian and jump analogues), which needs the mixed partials.
    """
    grid = batch.grid
    beta = pert.beta(grid)
    U = _check_control(control, grid, batch.n_paths)
    if X is None:
        X = solve_batch(coeffs, control, batch)
    n, N = batch.n_paths, grid.steps
    Y = np.zeros((n, N + 1))
    if scheme == "integral":
        triple = _linearised(coeffs, X, U, beta, Y)
        for i in range(1, N + 1):
            Y[:, i] = kernel_row(triple, grid.nodes[i], batch, i, X[:, :i], U[:, :i])
        return DerivativePath(Y)
    if scheme != "differential":
        raise ValueError(f"unknown scheme {scheme!r}")
    coeffs.need("b_x", "b_u", "sigma_x", "sigma_u", "gamma_x", "gamma_u")
    mixed = coeffs.need("b_tx", "b_tu", "sigma_tx", "sigma_tu", "gamma_tx", "gamma_tu")
    b_tx, b_tu, s_tx, s_tu, g_tx, g_tu = mixed
    dt = grid.dt
    for i in range(N):
        t = grid.nodes[i]
        s = np.array([t])
        x, u = X[:, i : i + 1], U[:, i : i + 1]
        yi, bi = Y[:, i : i + 1], beta[i]
        step = dt * (_val(coeffs.b_x, n, t, s, x, u) * yi[:, 0] + _val(coeffs.b_u, n, t, s, x, u) * bi)
        step += (_val(coeffs.sigma_x, n, t, s, x, u) * yi[:, 0] + _val(coeffs.sigma_u, n, t, s, x, u) * bi) * batch.dB[:, i]
        for k, ((z, _), w) in enumerate(zip(batch.levy.marks, batch.levy.weights)):
            jv = _val(coeffs.gamma_x, n, t, s, x, u, z) * yi[:, 0] + _val(coeffs.gamma_u, n, t, s, x, u, z) * bi
            step += jv * (batch.counts[:, i, k] - dt * w)
        if i > 0:
            Ys = Y[:, :i]

            def mem(dx, du):
                def fn(tt, ss, xx, uu, *z):
                    return dx(tt, ss, xx, uu, *z) * Ys + du(tt, ss, xx, uu, *z) * beta[:i]

                return fn

            step += dt * kernel_row((mem(b_tx, b_tu), mem(s_tx, s_tu), mem(g_tx, g_tu)), t, batch, i, X[:, :i], U[:, :i])
        Y[:, i + 1] = Y[:, i] + step
    return DerivativePath(Y)


def _val(fn, n, t, s, x, u, *z) -> np.ndarray:
    return _evaluate(fn, (n, 1), t, s, x, u, *z)[:, 0]


# --- Gateaux derivatives -----------------------------------------------------


def _shifted(control: ControlPath, beta: np.ndarray, lam: float) -> ControlPath:
    try:
        return control.with_values(control.values + lam * beta)
    except AdmissibilityError as exc:
        raise AdmissibilityError(f"u + {lam} beta is not admissible: {exc}") from None


def gateaux_fd(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    pert: PerturbationSpec,
    lambda_step: float,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> Estimate:
    """``(J(u + lambda beta) - J(u - lambda beta)) / (2 lambda)`` on shared paths."""
    if lambda_step <= 0:
        raise ValueError("lambda_step must be positive")
    beta = pert.beta(grid)
    up, down = _shifted(control, beta, lambda_step), _shifted(control, beta, -lambda_step)
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    diff = reward_samples(coeffs, up, batch) - reward_samples(coeffs, down, batch)
    return mean_se(diff / (2.0 * lambda_step))


def gateaux_fd_pair(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    pert: PerturbationSpec,
    lambda_step: float,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> tuple[Estimate, float]:
    """``gateaux_fd`` at ``lambda`` and the Richardson estimate
    ``|D(2 lambda) - D(lambda)| / 3`` of its O(lambda^2) bias."""
    d1 = gateaux_fd(coeffs, control, pert, lambda_step, grid, levy, n_paths, base_seed, workers)
    d2 = gateaux_fd(coeffs, control, pert, 2 * lambda_step, grid, levy, n_paths, base_seed, workers)
    return d1, abs(d2.value - d1.value) / 3.0


def gateaux_via_y(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    pert: PerturbationSpec,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
    scheme: Literal["integral", "differential"] = "integral",
) -> Estimate:
    f_x, f_u, g_x = coeffs.need("f_x", "f_u", "g_x")
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    U = _check_control(control, grid, n_paths)
    X = solve_batch(coeffs, control, batch)
    Y = derivative_process(coeffs, control, pert, batch, scheme, X).values
    beta = pert.beta(grid)
    N = grid.steps
    shape = (n_paths, N)
    t = grid.nodes[:N]
    run = _evaluate(f_x, shape, t, X[:, :N], U[:, :N]) * Y[:, :N] + _evaluate(f_u, shape, t, X[:, :N], U[:, :N]) * beta[:N]
    samples = grid.dt * run.sum(axis=1) + _evaluate(g_x, (n_paths,), X[:, N], batch) * Y[:, N]
    return mean_se(samples)


# --- the conditional Hamiltonian gradient -----------------------------------


def _adjoint_at(model: ConsumptionModel, grid: TimeGrid, batch: DriverBatch, i: int, tol: float, n_branches: int, base_seed: int):
    kappa = model_kappa(model, grid, tol)
    if model.theta.analytic:
        return kappa[i] * theta_conditional_q(model.theta, model.girsanov, batch, i)
    out = np.empty(batch.n_paths)
    for p in range(batch.n_paths):
        out[p] = conditional_expectation_q(model.theta, model.girsanov, batch, i, "nested", p, n_branches, base_seed).value
    return kappa[i] * out


def hamiltonian_gradient_residual(
    model: ConsumptionModel,
    control: ControlPath,
    t: float,
    grid: TimeGrid,
    n_paths: int,
    base_seed: int,
    info: Literal["trivial", "full"] = "trivial",
    tol: float = 1e-10,
    n_branches: int = 200,
    workers: int = 1,
) -> Estimate:
    """``E[dH/du(t) | G_t]`` with ``dH/du = 1/u - p(t)`` in the consumption model.

    ``trivial``: the plain mean of ``1/u(t) - p(t)``, a signed residual.
    ``full``: per-path ``|1/u(t) - p(t)|`` averaged, a residual norm.
    """
    i = grid.index_of(t)
    batch = sample_batch(grid, model.levy, n_paths, base_seed, workers)
    p = _adjoint_at(model, grid, batch, i, tol, n_branches, base_seed)
    u = control.as_array(n_paths)[:, i]
    grad = 1.0 / u - p
    if info == "trivial":
        return mean_se(grad)
    if info == "full":
        return mean_se(np.abs(grad))
    raise ValueError(f"unknown information mode {info!r}")


# --- sufficiency -------------------------------------------------------------


@dataclass(frozen=True)
class ScanRow:
    kappa: float
    J: float
    se: float
    gap: float  # J(u) - J(kappa u), paired on the same paths
    gap_se: float


def sufficiency_scan(
    coeffs: VolterraCoefficients,
    u_hat: ControlPath,
    multipliers: Sequence[float],
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> list[ScanRow]:
    """``J(kappa u_hat)`` for each multiplier on common random numbers."""
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    base = reward_samples(coeffs, u_hat, batch)
    rows = []
    for k in multipliers:
        try:
            ctrl = u_hat.with_values(k * u_hat.values)
        except AdmissibilityError as exc:
            raise AdmissibilityError(f"kappa={k}: {exc}") from None
        r = base if k == 1.0 else reward_samples(coeffs, ctrl, batch)
        J, gap = mean_se(r), mean_se(base - r)
        rows.append(ScanRow(float(k), J.value, J.std_error, gap.value, gap.std_error))
    return rows


def concavity_probe(
    coeffs: VolterraCoefficients,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    p_path: np.ndarray,
    x_values: Sequence[float],
    u_values: Sequence[float],
    nodes: Sequence[int] | None = None,
    step: float = 1e-3,
) -> float:
    """Largest Hessian eigenvalue of ``(x, u) -> H`` over a sample grid.

    ``q`` and ``r`` are taken as zero. Central second differences with
    relative step ``step``; a value ``<= 0`` (up to roundoff) witnesses
    concavity on the probed set.
    """
    nodes = range(0, grid.steps, max(1, grid.steps // 4)) if nodes is None else nodes
    K = len(levy.marks)
    worst = -np.inf
    for i in nodes:
        for x in x_values:
            for u in u_values:
                hx, hu = step * max(1.0, abs(x)), step * max(1.0, abs(u)) * 0.5
                hu = min(hu, 0.5 * abs(u)) if u > 0 else hu

                def H(dx, du):
                    inp = HamiltonianInputs.from_tables(i, x + dx, u + du, p_path, n_marks=K)
                    return hamiltonian(inp, coeffs, grid, levy)

                h0 = H(0, 0)
                hxx = (H(hx, 0) - 2 * h0 + H(-hx, 0)) / hx**2
                huu = (H(0, hu) - 2 * h0 + H(0, -hu)) / hu**2
                hxu = (H(hx, hu) - H(hx, -hu) - H(-hx, hu) + H(-hx, -hu)) / (4 * hx * hu)
                eig = np.linalg.eigvalsh(np.array([[hxx, hxu], [hxu, huu]]))
                worst = max(worst, float(eig[-1]))
    return worst
