"""Forward solution of controlled stochastic Volterra equations with jumps.

The discretisation is the left-point (predictable) rule

    X_i = xi(t_i) + sum_{j<i} b(t_i, t_j, X_j, u_j) dt
                  + sum_{j<i} sigma(t_i, t_j, X_j, u_j) dB_j
                  + sum_{j<i} int gamma(t_i, t_j, X_j, u_j, zeta) Ntilde((t_j, t_{j+1}], dzeta)

Row ``i`` depends only on rows ``j < i``, so the scheme is explicit and
the Picard iteration reaches it in at most ``N + 1`` sweeps.

Coefficient callables must broadcast like numpy ufuncs: ``t`` is a scalar,
``s`` an array of nodes, ``x`` and ``u`` arrays of shape ``(n_paths, m)``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Literal, Optional

import numpy as np

from .paths import DriverBatch, DriverPath, LevyMeasureSpec, TimeGrid, sample_batch
from .stats import Estimate, mean_se


class NumericalError(FloatingPointError):
    """A coefficient or estimator produced a non-finite value."""


class AdmissibilityError(ValueError):
    """A control leaves the admissible interval."""


class MissingPartialError(ValueError):
    pass


def _zero(*args):
    return 0.0


def _zero_terminal(x, driver):
    return 0.0


@dataclass(frozen=True)
class VolterraCoefficients:
    """Deterministic coefficients of the controlled SVIE and the reward.

    Partials are named ``<coef>_<vars>``: ``b_t`` is the derivative of ``b``
    in its first argument, ``b_tx`` the mixed second derivative, etc. The
    terminal reward ``g(x, driver)`` may depend on the driver batch (a
    random terminal weight); everything else is deterministic.
    """

    xi: Callable = _zero
    b: Callable = _zero
    sigma: Callable = _zero
    gamma: Callable = _zero
    f: Callable = _zero
    g: Callable = _zero_terminal
    b_t: Optional[Callable] = None
    sigma_t: Optional[Callable] = None
    gamma_t: Optional[Callable] = None
    b_x: Optional[Callable] = None
    b_u: Optional[Callable] = None
    sigma_x: Optional[Callable] = None
    sigma_u: Optional[Callable] = None
    gamma_x: Optional[Callable] = None
    gamma_u: Optional[Callable] = None
    b_tx: Optional[Callable] = None
    b_tu: Optional[Callable] = None
    sigma_tx: Optional[Callable] = None
    sigma_tu: Optional[Callable] = None
    gamma_tx: Optional[Callable] = None
    gamma_tu: Optional[Callable] = None
    f_x: Optional[Callable] = None
    f_u: Optional[Callable] = None
    g_x: Optional[Callable] = None
    lipschitz: float = 1.0

    def need(self, *names: str) -> tuple[Callable, ...]:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingPartialError(f"coefficients lack partials: {', '.join(missing)}")
        return tuple(getattr(self, n) for n in names)

    @classmethod
    def partial_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.default is None]


@dataclass(frozen=True)
class ControlPath:
    """Grid-sampled control; ``values`` is ``(N+1,)`` or ``(n_paths, N+1)``."""

    values: np.ndarray
    lower: float = -np.inf
    upper: float = np.inf
    info_mode: Literal["full", "deterministic"] = "deterministic"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if self.info_mode not in ("full", "deterministic"):
            raise ValueError(f"unknown info_mode {self.info_mode!r}")
        if self.info_mode == "deterministic" and v.ndim != 1:
            raise ValueError("deterministic controls must be one value per node")
        if not np.all(np.isfinite(v)):
            raise AdmissibilityError("control has non-finite values")
        if np.any(v < self.lower) or np.any(v > self.upper):
            raise AdmissibilityError(
                f"control leaves U = [{self.lower}, {self.upper}] "
                f"(range {v.min()} .. {v.max()})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, grid: TimeGrid, lower=-np.inf, upper=np.inf) -> "ControlPath":
        return cls(np.full(grid.steps + 1, float(value)), lower, upper)

    def with_values(self, values) -> "ControlPath":
        v = np.asarray(values, dtype=float)
        mode = "full" if v.ndim == 2 else self.info_mode
        return ControlPath(v, self.lower, self.upper, mode)

    def as_array(self, n_paths: int) -> np.ndarray:
        return np.broadcast_to(self.values, (n_paths, self.values.shape[-1]))


@dataclass(frozen=True)
class StatePath:
    values: np.ndarray


def _as_batch(driver, grid: TimeGrid, levy: LevyMeasureSpec | None) -> DriverBatch:
    if isinstance(driver, DriverBatch):
        return driver
    if levy is None:
        raise ValueError("a single DriverPath needs its LevyMeasureSpec")
    return DriverBatch.from_paths([driver], grid, levy)


def _evaluate(fn: Callable, shape, *args) -> np.ndarray:
    return np.broadcast_to(np.asarray(fn(*args), dtype=float), shape)


def kernel_row(
    coefs: tuple[Callable, Callable, Callable],
    t: float,
    batch: DriverBatch,
    m: int,
    x: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """``sum_{j<m}`` of drift, Brownian and compensated jump terms.

    ``coefs`` is a ``(drift, diffusion, jump)`` triple evaluated at
    ``(t, t_j, x_j, u_j[, zeta])``; ``x`` and ``u`` hold columns ``0..m-1``.
    """
    drift, diffusion, jump = coefs
    grid, levy = batch.grid, batch.levy
    shape = (batch.n_paths, m)
    if m == 0:
        return np.zeros(batch.n_paths)
    s = grid.nodes[:m]
    total = grid.dt * np.sum(_evaluate(drift, shape, t, s, x, u), axis=1)
    total += np.sum(_evaluate(diffusion, shape, t, s, x, u) * batch.dB[:, :m], axis=1)
    for k, ((z, _), w) in enumerate(zip(levy.marks, levy.weights)):
        cnt = batch.counts[:, :m, k]
        if w == 0.0 and not cnt.any():
            continue
        vals = _evaluate(jump, shape, t, s, x, u, z)
        total += np.sum(cnt * vals, axis=1) - grid.dt * w * np.sum(vals, axis=1)
    return total


def _row(coeffs: VolterraCoefficients, batch: DriverBatch, i: int, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    t = batch.grid.nodes[i]
    val = coeffs.xi(t) + kernel_row((coeffs.b, coeffs.sigma, coeffs.gamma), t, batch, i, X[:, :i], U[:, :i])
    val = np.broadcast_to(np.asarray(val, dtype=float), (batch.n_paths,))
    if not np.all(np.isfinite(val)):
        raise NumericalError(f"non-finite state at node {i} (t={t})")
    return val


def _check_control(control: ControlPath, grid: TimeGrid, n_paths: int) -> np.ndarray:
    if control.values.shape[-1] != grid.steps + 1:
        raise ValueError(f"control has {control.values.shape[-1]} values, grid needs {grid.steps + 1}")
    if control.values.ndim == 2 and control.values.shape[0] != n_paths:
        raise ValueError("per-path control does not match the number of paths")
    return control.as_array(n_paths)


def solve_batch(coeffs: VolterraCoefficients, control: ControlPath, batch: DriverBatch) -> np.ndarray:
    """Direct triangular substitution for every path; shape ``(n_paths, N+1)``."""
    grid = batch.grid
    U = _check_control(control, grid, batch.n_paths)
    X = np.empty((batch.n_paths, grid.steps + 1))
    for i in range(grid.steps + 1):
        X[:, i] = _row(coeffs, batch, i, X, U)
    return X


def direct_solve(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    driver: DriverPath,
    grid: TimeGrid,
    levy: LevyMeasureSpec | None = None,
) -> StatePath:
    return StatePath(solve_batch(coeffs, control, _as_batch(driver, grid, levy))[0])


def picard_sweeps(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    batch: DriverBatch,
    tol: float,
    max_iter: int,
    keep_history: bool = False,
):
    """Picard iteration ``X^{n+1} = Phi(X^n)`` started from ``X^0 = xi``.

    Returns ``(X, iterations, sup_gap, history)`` where ``history`` holds
    the increments ``X^{n+1} - X^n`` when ``keep_history`` is set.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    grid = batch.grid
    U = _check_control(control, grid, batch.n_paths)
    nodes = grid.nodes
    X = np.empty((batch.n_paths, grid.steps + 1))
    for i in range(grid.steps + 1):
        X[:, i] = np.broadcast_to(np.asarray(coeffs.xi(nodes[i]), dtype=float), (batch.n_paths,))
    history = []
    for n in range(1, max_iter + 1):
        X_next = np.empty_like(X)
        for i in range(grid.steps + 1):
            X_next[:, i] = _row(coeffs, batch, i, X, U)
        diff = X_next - X
        gap = float(np.max(np.abs(diff)))
        if keep_history:
            history.append(diff)
        X = X_next
        if gap <= tol:
            return X, n, gap, history
    raise RuntimeError(f"Picard iteration did not reach tol={tol} in {max_iter} iterations (gap {gap:.3e})")


def picard_solve(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    driver: DriverPath,
    grid: TimeGrid,
    tol: float,
    max_iter: int,
    levy: LevyMeasureSpec | None = None,
) -> tuple[StatePath, int, float]:
    X, iters, gap, _ = picard_sweeps(coeffs, control, _as_batch(driver, grid, levy), tol, max_iter)
    return StatePath(X[0]), iters, gap


def contraction_ratios(history: list[np.ndarray]) -> np.ndarray:
    """Ratios ``g_{n+1} / g_n`` of ``g_n = max_i E|X^{n+1}_i - X^n_i|^2``."""
    g = np.array([np.max(np.mean(d**2, axis=0)) for d in history])
    nz = g[:-1] > 0
    return g[1:][nz] / g[:-1][nz]


def reward_samples(coeffs: VolterraCoefficients, control: ControlPath, batch: DriverBatch, X: np.ndarray | None = None):
    """Per-path ``sum_{i<N} f(t_i, X_i, u_i) dt + g(X_N)``."""
    grid = batch.grid
    U = _check_control(control, grid, batch.n_paths)
    if X is None:
        X = solve_batch(coeffs, control, batch)
    N = grid.steps
    running = _evaluate(coeffs.f, (batch.n_paths, N), grid.nodes[:N], X[:, :N], U[:, :N])
    total = grid.dt * np.sum(running, axis=1) + _evaluate(coeffs.g, (batch.n_paths,), X[:, N], batch)
    if not np.all(np.isfinite(total)):
        raise NumericalError("non-finite performance sample")
    return total


def performance(
    coeffs: VolterraCoefficients,
    control: ControlPath,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> Estimate:
    """Monte Carlo estimate of ``J(u) = E[int f dt + g(X(T))]``."""
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    return mean_se(reward_samples(coeffs, control, batch))
