"""Change of measure for jump diffusions and conditional expectations under Q.

``dQ = M(T) dP`` with ``M`` the Doléans-Dade exponential of
``int sigma0 dB + int int gamma0 Ntilde(ds, dzeta)``. On the grid, with
left-point kernels, the discrete weight is the exact likelihood ratio of
the discretised drivers, so Q-expectations of grid functionals are
available in closed form for the terminal weights in :data:`THETA_KINDS`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .paths import DriverBatch, DriverPath, LevyMeasureSpec, TimeGrid, sample_suffix_batch
from .stats import Estimate, ratio_se


@dataclass(frozen=True)
class GirsanovKernel:
    """Deterministic ``sigma0(s)`` and ``gamma0(s, zeta)``, both broadcasting."""

    sigma0: Callable = lambda s: 0.0 * s
    gamma0: Callable = lambda s, z: 0.0 * s

    def sigma_on(self, grid: TimeGrid) -> np.ndarray:
        """``sigma0(t_j)`` at the left nodes ``j = 0..N-1``."""
        s = grid.nodes[:-1]
        return np.broadcast_to(np.asarray(self.sigma0(s), dtype=float), s.shape).copy()

    def gamma_on(self, grid: TimeGrid, levy: LevyMeasureSpec) -> np.ndarray:
        """``gamma0(t_j, zeta_k)`` with shape ``(N, K)``."""
        s = grid.nodes[:-1]
        cols = [np.broadcast_to(np.asarray(self.gamma0(s, z), dtype=float), s.shape) for z, _ in levy.marks]
        return np.stack(cols, axis=1)

    def check_domain(self, grid: TimeGrid, levy: LevyMeasureSpec, epsilon: float = 0.0) -> None:
        g = self.gamma_on(grid, levy)
        bad = g < -1.0 + epsilon if epsilon > 0 else g <= -1.0
        if np.any(bad):
            raise ValueError(f"gamma0 must be >= -1 + {epsilon}; found {float(g.min())}")


@dataclass(frozen=True)
class MeasureWeightPath:
    values: np.ndarray


def log_weights(kernel: GirsanovKernel, batch: DriverBatch) -> np.ndarray:
    """``log M(t_i)`` per path, shape ``(n_paths, N+1)``.

    ``log M = sum sigma0 dB - 1/2 sum sigma0^2 dt
              + sum_jumps log(1 + gamma0) - dt * sum_j nu(gamma0(t_j, .))``,
    which is the compensated jump integral of ``log(1 + gamma0)`` plus the
    ``nu(log(1 + gamma0) - gamma0) ds`` correction.
    """
    grid, levy = batch.grid, batch.levy
    sig = kernel.sigma_on(grid)
    gam = kernel.gamma_on(grid, levy)
    if np.any(gam[:, levy.weights > 0] <= -1.0):
        raise ValueError("gamma0 <= -1 on a charged mark: the density is not positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        log1p = np.where(gam > -1.0, np.log1p(np.maximum(gam, -1.0 + 1e-300)), 0.0)
    step = sig * batch.dB - 0.5 * sig**2 * grid.dt
    step = step + np.einsum("pjk,jk->pj", batch.counts, log1p)
    step = step - grid.dt * (gam @ levy.weights)
    out = np.zeros((batch.n_paths, grid.steps + 1))
    np.cumsum(step, axis=1, out=out[:, 1:])
    return out


def doleans_exponential(
    sigma0: Callable,
    gamma0: Callable,
    driver: DriverPath,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
) -> MeasureWeightPath:
    batch = DriverBatch.from_paths([driver], grid, levy)
    return MeasureWeightPath(np.exp(log_weights(GirsanovKernel(sigma0, gamma0), batch)[0]))


@dataclass(frozen=True)
class QDriverView:
    """Driver seen under Q: shifted Brownian increments and Q-compensator."""

    batch: DriverBatch
    dB_Q: np.ndarray
    gamma_nodes: np.ndarray  # (N, K)

    def compensated_sum(self, integrand: Callable) -> np.ndarray:
        """Jump sum of ``integrand`` minus ``(1 + gamma0) nu(dzeta) ds``."""
        b, grid = self.batch, self.batch.grid
        s = grid.nodes[:-1]
        total = np.zeros(b.n_paths)
        for k, ((z, _), w) in enumerate(zip(b.levy.marks, b.levy.weights)):
            vals = np.broadcast_to(np.asarray(integrand(s, z), dtype=float), (b.n_paths, s.size))
            total += np.sum(b.counts[:, :, k] * vals, axis=1)
            total -= grid.dt * w * np.sum((1.0 + self.gamma_nodes[:, k]) * vals, axis=1)
        return total


def q_shifted_driver(driver, sigma0: Callable, gamma0: Callable, grid: TimeGrid, levy: LevyMeasureSpec) -> QDriverView:
    batch = driver if isinstance(driver, DriverBatch) else DriverBatch.from_paths([driver], grid, levy)
    kernel = GirsanovKernel(sigma0, gamma0)
    dB_Q = batch.dB - kernel.sigma_on(grid) * grid.dt
    return QDriverView(batch, dB_Q, kernel.gamma_on(grid, levy))


# --- terminal weights -------------------------------------------------------

THETA_KINDS = ("constant", "lognormal", "affine_brownian", "affine_jump", "softplus")
ANALYTIC_KINDS = THETA_KINDS[:4]


@dataclass(frozen=True)
class ThetaSpec:
    """Catalog of terminal weights ``theta``.

    constant         theta = k
    lognormal        theta = exp(a B(T) - a^2 T / 2)
    affine_brownian  theta = alpha + beta B(T)
    affine_jump      theta = alpha + beta int int zeta Ntilde(ds, dzeta)
    softplus         theta = log(1 + exp(a B(T)))   (no closed form; nested only)
    """

    kind: str = "constant"
    k: float = 1.0
    a: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise ValueError(f"unknown theta kind {self.kind!r}; expected one of {THETA_KINDS}")

    @property
    def analytic(self) -> bool:
        return self.kind in ANALYTIC_KINDS

    @property
    def positive(self) -> bool:
        """Whether theta > 0 almost surely."""
        if self.kind == "constant":
            return self.k > 0
        return self.kind in ("lognormal", "softplus")

    def scaled(self, factor: float) -> "ThetaSpec":
        from dataclasses import replace

        if self.kind == "constant":
            return replace(self, k=self.k * factor)
        if self.kind in ("affine_brownian", "affine_jump"):
            return replace(self, alpha=self.alpha * factor, beta=self.beta * factor)
        raise ValueError(f"{self.kind} weights are not closed under scaling")


def _mark_integral(batch: DriverBatch, upto: int) -> np.ndarray:
    return batch.compensated_sum(lambda s, z: z + 0.0 * s, upto)


def theta_values(spec: ThetaSpec, batch: DriverBatch) -> np.ndarray:
    grid = batch.grid
    BT = batch.dB.sum(axis=1)
    if spec.kind == "constant":
        return np.full(batch.n_paths, float(spec.k))
    if spec.kind == "lognormal":
        return np.exp(spec.a * BT - 0.5 * spec.a**2 * grid.horizon)
    if spec.kind == "affine_brownian":
        return spec.alpha + spec.beta * BT
    if spec.kind == "affine_jump":
        return spec.alpha + spec.beta * _mark_integral(batch, grid.steps)
    return np.logaddexp(0.0, spec.a * BT)


def theta_conditional_q(spec: ThetaSpec, kernel: GirsanovKernel, batch: DriverBatch, node: int) -> np.ndarray:
    """Closed-form ``E_Q[theta | F_{t_node}]`` per path."""
    if not spec.analytic:
        raise ValueError(f"theta kind {spec.kind!r} has no closed-form conditional expectation")
    grid, levy = batch.grid, batch.levy
    if spec.kind == "constant":
        return np.full(batch.n_paths, float(spec.k))
    t = grid.nodes[node]
    drift_rest = grid.dt * kernel.sigma_on(grid)[node:].sum()
    B_t = batch.dB[:, :node].sum(axis=1)
    if spec.kind == "lognormal":
        a = spec.a
        return np.exp(a * B_t - 0.5 * a**2 * t + a * drift_rest)
    if spec.kind == "affine_brownian":
        return spec.alpha + spec.beta * (B_t + drift_rest)
    gam = kernel.gamma_on(grid, levy)[node:]
    jump_drift = grid.dt * np.sum(gam @ (levy.weights * levy.sizes))
    return spec.alpha + spec.beta * (_mark_integral(batch, node) + jump_drift)


def conditional_expectation_q(
    spec: ThetaSpec,
    kernel: GirsanovKernel,
    batch: DriverBatch,
    node: int,
    method: str = "analytic",
    path: int = 0,
    n_branches: int = 1000,
    base_seed: int = 0,
) -> Estimate:
    """``E_Q[theta | F_{t_node}]`` on path ``path`` of ``batch``.

    ``nested`` keeps the path's prefix, resimulates ``n_branches`` suffixes
    and returns the Bayes ratio ``E[M(T) theta | F_t] / E[M(T) | F_t]``
    (the prefix part of ``M`` cancels). Its standard error comes from the
    delta method.
    """
    if method == "analytic":
        return Estimate(float(theta_conditional_q(spec, kernel, batch, node)[path]), 0.0)
    if method != "nested":
        raise ValueError(f"unknown method {method!r}")
    if n_branches < 2:
        raise ValueError("nested estimation needs at least two branches")
    branches = sample_suffix_batch(batch, path, node, n_branches, base_seed)
    logm = log_weights(kernel, branches)
    w = np.exp(logm[:, -1] - logm[:, node])
    return ratio_se(w * theta_values(spec, branches), w)


def nested_conditional_paths(
    spec: ThetaSpec,
    kernel: GirsanovKernel,
    batch: DriverBatch,
    node: int,
    n_branches: int,
    base_seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Nested estimates (value, SE) of ``E_Q[theta | F_t]`` for every path."""
    vals = np.empty(batch.n_paths)
    ses = np.empty(batch.n_paths)
    for p in range(batch.n_paths):
        est = conditional_expectation_q(spec, kernel, batch, node, "nested", p, n_branches, base_seed)
        vals[p], ses[p] = est
    return vals, ses
