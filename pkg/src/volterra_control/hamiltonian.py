"""Hamiltonian, adjoint driver and the closed-form adjoint of the linear class.

Conventions for adjoint tables on the grid: ``q[a, b] = q(t_a, t_b)`` and
``r[a, b, k] = r(t_a, t_b, zeta_k)``. The Hamiltonian at ``t = t_i`` uses the
diagonal ``q[i, i]`` and the rows ``q[s, i]`` for ``s >= i``.

Integrals over ``s in [t, T]`` use the same composite trapezoid rule as the
resolvent module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .forward import VolterraCoefficients
from .measure import nested_conditional_paths, theta_conditional_q, theta_values
from .model import ConsumptionModel
from .paths import DriverBatch, LevyMeasureSpec, TimeGrid
from .resolvent import ResolventTable, psi_factor, resolvent_table
from .stats import Estimate, mean_se


def trapezoid(values: np.ndarray, dt: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(dt * (v.sum() - 0.5 * (v[0] + v[-1])))


@dataclass(frozen=True)
class HamiltonianInputs:
    """Arguments of the Hamiltonian at node ``t_i`` for one path.

    ``p_path``, ``q_row`` and ``r_row`` run over ``s = t_i, ..., T``;
    ``q_row[m] = q(t_{i+m}, t_i)``.
    """

    i: int
    x: float
    v: float
    p_path: np.ndarray
    q_row: np.ndarray
    r_row: np.ndarray  # (N - i + 1, K)

    @property
    def diag_q(self) -> float:
        return float(self.q_row[0])

    @property
    def diag_r(self) -> np.ndarray:
        return np.asarray(self.r_row[0], dtype=float)

    @classmethod
    def from_tables(cls, i, x, v, p, q=None, r=None, n_marks: int = 1) -> "HamiltonianInputs":
        n = p.shape[0]
        q_row = np.zeros(n - i) if q is None else np.asarray(q)[i:, i]
        r_row = np.zeros((n - i, n_marks)) if r is None else np.asarray(r)[i:, i, :]
        return cls(i, float(x), float(v), np.asarray(p[i:], dtype=float), q_row, r_row)


def _scalar(fn, *args) -> float:
    return float(np.asarray(fn(*args), dtype=float))


def _jump_pair(levy: LevyMeasureSpec, r_vals: np.ndarray, fn: Callable, *args) -> float:
    """``int r(zeta) fn(..., zeta) nu(dzeta)`` on the finite mark set."""
    return float(sum(w * r_vals[k] * _scalar(fn, *args, z) for k, ((z, _), w) in enumerate(zip(levy.marks, levy.weights))))


def _row_integral(inputs: HamiltonianInputs, grid: TimeGrid, levy: LevyMeasureSpec, fb, fs, fg) -> float:
    """``int_t^T p(s) fb(s,t) + q(s,t) fs(s,t) + nu(r(s,t) fg(s,t)) ds``."""
    i, x, v = inputs.i, inputs.x, inputs.v
    t = grid.nodes[i]
    s = grid.nodes[i:]
    vals = np.empty(s.size)
    for m, sm in enumerate(s):
        vals[m] = (
            inputs.p_path[m] * _scalar(fb, sm, t, x, v)
            + inputs.q_row[m] * _scalar(fs, sm, t, x, v)
            + _jump_pair(levy, inputs.r_row[m], fg, sm, t, x, v)
        )
    return trapezoid(vals, grid.dt)


def hamiltonian_h0(inputs: HamiltonianInputs, coeffs: VolterraCoefficients, levy: LevyMeasureSpec, grid: TimeGrid) -> float:
    t = grid.nodes[inputs.i]
    x, v = inputs.x, inputs.v
    return (
        _scalar(coeffs.f, t, x, v)
        + inputs.p_path[0] * _scalar(coeffs.b, t, t, x, v)
        + inputs.diag_q * _scalar(coeffs.sigma, t, t, x, v)
        + _jump_pair(levy, inputs.diag_r, coeffs.gamma, t, t, x, v)
    )


def hamiltonian_h1(inputs: HamiltonianInputs, coeffs: VolterraCoefficients, grid: TimeGrid, levy: LevyMeasureSpec) -> float:
    fb, fs, fg = coeffs.need("b_t", "sigma_t", "gamma_t")
    return _row_integral(inputs, grid, levy, fb, fs, fg)


def hamiltonian(inputs, coeffs, grid, levy) -> float:
    return hamiltonian_h0(inputs, coeffs, levy, grid) + hamiltonian_h1(inputs, coeffs, grid, levy)


def _gradient(inputs, coeffs, grid, levy, var: str) -> float:
    f_v, b_v, s_v, g_v, b_tv, s_tv, g_tv = coeffs.need(
        f"f_{var}", f"b_{var}", f"sigma_{var}", f"gamma_{var}", f"b_t{var}", f"sigma_t{var}", f"gamma_t{var}"
    )
    t = grid.nodes[inputs.i]
    x, v = inputs.x, inputs.v
    h0 = (
        _scalar(f_v, t, x, v)
        + inputs.p_path[0] * _scalar(b_v, t, t, x, v)
        + inputs.diag_q * _scalar(s_v, t, t, x, v)
        + _jump_pair(levy, inputs.diag_r, g_v, t, t, x, v)
    )
    return h0 + _row_integral(inputs, grid, levy, b_tv, s_tv, g_tv)


def adjoint_driver_dHdx(inputs: HamiltonianInputs, coeffs: VolterraCoefficients, grid: TimeGrid, levy: LevyMeasureSpec) -> float:
    """Pointwise ``dH/dx`` at ``(t_i, x, v)``, memory terms included."""
    return _gradient(inputs, coeffs, grid, levy, "x")


def hamiltonian_dHdu(inputs: HamiltonianInputs, coeffs: VolterraCoefficients, grid: TimeGrid, levy: LevyMeasureSpec) -> float:
    return _gradient(inputs, coeffs, grid, levy, "u")


def adjoint_driver_integral(
    i: int,
    coeffs: VolterraCoefficients,
    state: np.ndarray,
    control: np.ndarray,
    p: np.ndarray,
    q: Optional[np.ndarray],
    r: Optional[np.ndarray],
    grid: TimeGrid,
    levy: LevyMeasureSpec,
) -> float:
    """``int_t^T dH/dx(s) ds`` in the expanded form with ``(s - t)`` factors.

    The integrand at ``s`` is

        f_x(s) + p(s) [b_x(s, s) + (s - t) b_tx(s, t)]
               + q(s, s) sigma_x(s, s) + (s - t) q(s, t) sigma_tx(s, t)
               + nu( r(s, s) gamma_x(s, s) + (s - t) r(s, t) gamma_tx(s, t) )

    with state and control taken at ``s``; ``t = t_i``.
    """
    f_x, b_x, s_x, g_x, b_tx, s_tx, g_tx = coeffs.need(
        "f_x", "b_x", "sigma_x", "gamma_x", "b_tx", "sigma_tx", "gamma_tx"
    )
    n = grid.steps + 1
    K = len(levy.marks)
    q = np.zeros((n, n)) if q is None else q
    r = np.zeros((n, n, K)) if r is None else r
    nodes = grid.nodes
    t = nodes[i]
    vals = np.empty(n - i)
    for m, j in enumerate(range(i, n)):
        s, x, v = nodes[j], state[j], control[j]
        lag = s - t
        vals[m] = (
            _scalar(f_x, s, x, v)
            + p[j] * (_scalar(b_x, s, s, x, v) + lag * _scalar(b_tx, s, t, x, v))
            + q[j, j] * _scalar(s_x, s, s, x, v)
            + lag * q[j, i] * _scalar(s_tx, s, t, x, v)
            + _jump_pair(levy, r[j, j], g_x, s, s, x, v)
            + lag * _jump_pair(levy, r[j, i], g_tx, s, t, x, v)
        )
    return trapezoid(vals, grid.dt)


# --- the linear class: closed-form adjoint ---------------------------------


@dataclass(frozen=True)
class AdjointSolution:
    p_hat: np.ndarray  # (n_paths, N+1)
    kappa: np.ndarray  # (N+1,)
    p_se: Optional[np.ndarray] = None  # nested-method standard errors
    q_hat: Optional[np.ndarray] = None
    r_hat: Optional[np.ndarray] = None


def model_kappa(model: ConsumptionModel, grid: TimeGrid, tol: float = 1e-10, table: ResolventTable | None = None) -> np.ndarray:
    if table is None:
        table = resolvent_table(model.b0_fn, model.b0_bound, grid, tol)
    return psi_factor(model.b0_fn, model.b0_bound, grid, tol, table)


def linear_adjoint_solve(
    model: ConsumptionModel,
    grid: TimeGrid,
    batch: DriverBatch,
    table: ResolventTable | None = None,
    method: str = "analytic",
    tol: float = 1e-10,
    n_branches: int = 1000,
    base_seed: int = 0,
) -> AdjointSolution:
    """``p(t) = kappa(t) E_Q[theta | F_t]`` per path and node.

    ``method="nested"`` (forced for weights without a closed form)
    estimates each conditional expectation by suffix resimulation.
    """
    kappa = model_kappa(model, grid, tol, table)
    kernel = model.girsanov
    N = grid.steps
    cond = np.empty((batch.n_paths, N + 1))
    se = None
    if method == "analytic" and model.theta.analytic:
        for i in range(N + 1):
            cond[:, i] = theta_conditional_q(model.theta, kernel, batch, i)
    elif method in ("analytic", "nested"):
        se = np.zeros_like(cond)
        for i in range(N + 1):
            if i == N:
                cond[:, i] = theta_values(model.theta, batch)
                continue
            cond[:, i], se[:, i] = nested_conditional_paths(model.theta, kernel, batch, i, n_branches, base_seed)
        se = se * kappa
    else:
        raise ValueError(f"unknown method {method!r}")
    return AdjointSolution(cond * kappa, kappa, se)


def expected_theta_q(model: ConsumptionModel, grid: TimeGrid, node: int) -> float:
    """Closed-form ``E[E_Q[theta | F_t]]`` for catalog weights."""
    spec, kernel = model.theta, model.girsanov
    drift_rest = grid.dt * kernel.sigma_on(grid)[node:].sum()
    if spec.kind == "constant":
        return float(spec.k)
    if spec.kind == "lognormal":
        return float(np.exp(spec.a * drift_rest))
    if spec.kind == "affine_brownian":
        return float(spec.alpha + spec.beta * drift_rest)
    if spec.kind == "affine_jump":
        levy = model.levy
        gam = kernel.gamma_on(grid, levy)[node:]
        return float(spec.alpha + spec.beta * grid.dt * np.sum(gam @ (levy.weights * levy.sizes)))
    raise ValueError(f"theta kind {spec.kind!r} has no closed form")


@dataclass(frozen=True)
class RepresentationComponents:
    """Closed-form ``q(t, s)`` and ``r(t, s, zeta)`` for ``s < t``.

    ``q(i, j)`` and ``r(i, j)`` return per-path arrays (``r`` with a trailing
    mark axis); ``q_table(path)`` gives the lower triangle of one path.
    """

    model: ConsumptionModel
    grid: TimeGrid
    batch: DriverBatch
    kappa: np.ndarray

    def _drift_rest(self, i: int) -> float:
        return self.grid.dt * self.model.girsanov.sigma_on(self.grid)[i:].sum()

    def q(self, i: int, j: int) -> np.ndarray:
        if j >= i:
            raise ValueError("representation components are defined for s < t")
        th, n = self.model.theta, self.batch.n_paths
        if th.kind in ("constant", "affine_jump"):
            return np.zeros(n)
        if th.kind == "affine_brownian":
            return np.full(n, th.beta * self.kappa[i])
        if th.kind == "lognormal":
            a = th.a
            B_s = self.batch.dB[:, :j].sum(axis=1)
            s = self.grid.nodes[j]
            return a * self.kappa[i] * np.exp(a * self._drift_rest(i)) * np.exp(a * B_s - 0.5 * a * a * s)
        raise ValueError(f"theta kind {th.kind!r} is not in the analytic catalog")

    def r(self, i: int, j: int) -> np.ndarray:
        if j >= i:
            raise ValueError("representation components are defined for s < t")
        th, n = self.model.theta, self.batch.n_paths
        K = len(self.model.levy.marks)
        if th.kind == "affine_jump":
            return np.tile(th.beta * self.kappa[i] * self.model.levy.sizes, (n, 1))
        if th.kind in ("constant", "affine_brownian", "lognormal"):
            return np.zeros((n, K))
        raise ValueError(f"theta kind {th.kind!r} is not in the analytic catalog")

    def q_table(self, path: int = 0) -> np.ndarray:
        n = self.grid.steps + 1
        out = np.zeros((n, n))
        for i in range(1, n):
            for j in range(i):
                out[i, j] = self.q(i, j)[path]
        return out

    def r_table(self, path: int = 0) -> np.ndarray:
        n, K = self.grid.steps + 1, len(self.model.levy.marks)
        out = np.zeros((n, n, K))
        for i in range(1, n):
            for j in range(i):
                out[i, j] = self.r(i, j)[path]
        return out


def representation_components(
    model: ConsumptionModel, grid: TimeGrid, batch: DriverBatch, tol: float = 1e-10
) -> RepresentationComponents:
    if not model.theta.analytic:
        raise ValueError(f"theta kind {model.theta.kind!r} is not in the analytic catalog")
    return RepresentationComponents(model, grid, batch, model_kappa(model, grid, tol))


def covariance_witness(
    model: ConsumptionModel, grid: TimeGrid, batch: DriverBatch, i: int, j: int, tol: float = 1e-10
) -> tuple[Estimate, float]:
    """Monte Carlo ``E[p(t_i) dB_j] / dt`` against the mean analytic ``q(t_i, t_j)``.

    Returns the covariance estimate and the target value.
    """
    rep = representation_components(model, grid, batch, tol)
    p_i = rep.kappa[i] * theta_conditional_q(model.theta, model.girsanov, batch, i)
    est = mean_se(p_i * batch.dB[:, j] / grid.dt)
    return est, float(np.mean(rep.q(i, j)))


def a2_smoothness_probe(table: np.ndarray, grid: TimeGrid) -> float:
    """Largest ``|d/dt|`` finite difference of ``t -> table(t, s)`` for ``s < t``.

    Works on ``(N+1, N+1)`` tables and on ``(N+1, N+1, K)`` jump tables.
    Diagnostic only: a large value flags a table that is not C^1 in ``t``.
    """
    tab = np.asarray(table, dtype=float)
    n = tab.shape[0]
    worst = 0.0
    for i in range(1, n - 1):
        d = (tab[i + 1, :i] - tab[i, :i]) / grid.dt
        if d.size:
            worst = max(worst, float(np.max(np.abs(d))))
    return worst
