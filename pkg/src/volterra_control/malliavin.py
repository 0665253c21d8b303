"""Monte Carlo witnesses for duality and Clark-Ocone identities.

Each catalog functional carries hand-coded conditional derivatives
``E[D_t F | F_t]`` and ``E[D_{t,zeta} F | F_t]`` evaluated at left nodes
from the driver prefix only. Stochastic integrals use the same left-point
rule as the forward solver; for the catalog the discrete identities then
hold exactly in expectation, so no discretisation slack is needed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .paths import DriverBatch, LevyMeasureSpec, TimeGrid, sample_batch
from .stats import Estimate, mean_se

FUNCTIONAL_KINDS = ("brownian_terminal", "wiener_integral", "brownian_square", "poisson_integral", "exponential")


def _zero_g(s):
    return 0.0 * s


def _zero_psi(s, z):
    return 0.0 * s


@dataclass(frozen=True)
class FunctionalSpec:
    """Catalog functional ``F`` of the driver.

    brownian_terminal  B(T)
    wiener_integral    int g(s) dB(s), deterministic g
    brownian_square    B(T)^2
    poisson_integral   int int psi(s, zeta) Ntilde(ds, dzeta), deterministic psi
    exponential        exp(a B(T) - a^2 T / 2)
    """

    kind: str
    a: float = 1.0
    g: Callable = _zero_g
    psi: Callable = _zero_psi

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ValueError(f"unknown functional {self.kind!r}; expected one of {FUNCTIONAL_KINDS}")

    def evaluate(self, batch: DriverBatch) -> np.ndarray:
        grid = batch.grid
        BT = batch.dB.sum(axis=1)
        if self.kind == "brownian_terminal":
            return BT
        if self.kind == "wiener_integral":
            return batch.dB @ _on_nodes(self.g, grid)
        if self.kind == "brownian_square":
            return BT**2
        if self.kind == "poisson_integral":
            return batch.compensated_sum(self.psi, grid.steps)
        return np.exp(self.a * BT - 0.5 * self.a**2 * grid.horizon)

    def mean(self, grid: TimeGrid) -> float:
        if self.kind == "brownian_square":
            return grid.horizon
        if self.kind == "exponential":
            return 1.0
        return 0.0

    def brownian_derivative(self, batch: DriverBatch, node: int) -> np.ndarray:
        """``E[D_t F | F_t]`` at ``t = t_node``."""
        n, grid = batch.n_paths, batch.grid
        if self.kind == "brownian_terminal":
            return np.ones(n)
        if self.kind == "wiener_integral":
            return np.full(n, float(_on_nodes(self.g, grid)[node]))
        B = batch.brownian[:, node]
        if self.kind == "brownian_square":
            return 2.0 * B
        if self.kind == "exponential":
            t = grid.nodes[node]
            return self.a * np.exp(self.a * B - 0.5 * self.a**2 * t)
        return np.zeros(n)

    def jump_derivative(self, batch: DriverBatch, node: int, z: float) -> np.ndarray:
        """``E[D_{t,zeta} F | F_t]`` at ``t = t_node``."""
        if self.kind == "poisson_integral":
            t = batch.grid.nodes[node]
            return np.full(batch.n_paths, float(np.asarray(self.psi(t, z))))
        return np.zeros(batch.n_paths)


def _on_nodes(fn: Callable, grid: TimeGrid) -> np.ndarray:
    s = grid.nodes[:-1]
    return np.broadcast_to(np.asarray(fn(s), dtype=float), s.shape)


@dataclass(frozen=True)
class DualityResult:
    lhs: Estimate
    rhs: Estimate
    combined_se: float

    @property
    def gap(self) -> float:
        return abs(self.lhs.value - self.rhs.value)

    def passed(self, n_se: float = 3.0) -> bool:
        return self.gap <= n_se * self.combined_se + 1e-12


def _combine(lhs: np.ndarray, rhs: np.ndarray) -> DualityResult:
    a, b = mean_se(lhs), mean_se(rhs)
    return DualityResult(a, b, float(np.hypot(a.std_error, b.std_error)))


def duality_check_brownian(
    spec: FunctionalSpec,
    phi: Callable,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> DualityResult:
    """``E[F int phi dB]`` against ``E[int E[D_t F | F_t] phi dt]``.

    ``phi(t, B_t)`` is adapted: it sees the Brownian value at the left node.
    """
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    F = spec.evaluate(batch)
    lhs_int = np.zeros(n_paths)
    rhs = np.zeros(n_paths)
    for j in range(grid.steps):
        ph = np.broadcast_to(np.asarray(phi(grid.nodes[j], batch.brownian[:, j]), dtype=float), (n_paths,))
        lhs_int += ph * batch.dB[:, j]
        rhs += spec.brownian_derivative(batch, j) * ph * grid.dt
    return _combine(F * lhs_int, rhs)


def duality_check_jump(
    spec: FunctionalSpec,
    psi: Callable,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> DualityResult:
    """``E[F int int psi Ntilde]`` against ``E[int int E[D_{t,zeta} F | F_t] psi nu(dzeta) dt]``."""
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    F = spec.evaluate(batch)
    lhs_int = batch.compensated_sum(psi, grid.steps)
    rhs = np.zeros(n_paths)
    for j in range(grid.steps):
        t = grid.nodes[j]
        for (z, _), w in zip(levy.marks, levy.weights):
            rhs += grid.dt * w * spec.jump_derivative(batch, j, z) * float(np.asarray(psi(t, z)))
    return _combine(F * lhs_int, rhs)


def clark_ocone_residual(spec: FunctionalSpec, batch: DriverBatch) -> np.ndarray:
    """Per-path ``F - E[F] - int E[D_t F|F_t] dB - int int E[D_{t,zeta} F|F_t] Ntilde``."""
    grid, levy = batch.grid, batch.levy
    res = spec.evaluate(batch) - spec.mean(grid)
    for j in range(grid.steps):
        res -= spec.brownian_derivative(batch, j) * batch.dB[:, j]
        for k, ((z, _), w) in enumerate(zip(levy.marks, levy.weights)):
            dj = spec.jump_derivative(batch, j, z)
            res -= dj * (batch.counts[:, j, k] - grid.dt * w)
    return res


def clark_ocone_check(
    spec: FunctionalSpec,
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
) -> Estimate:
    """Root-mean-square Clark-Ocone residual with a delta-method SE."""
    batch = sample_batch(grid, levy, n_paths, base_seed, workers)
    ms = mean_se(clark_ocone_residual(spec, batch) ** 2)
    rms = float(np.sqrt(ms.value))
    return Estimate(rms, ms.std_error / (2 * rms) if rms > 0 else 0.0)


def catalog_checks(
    n_paths: int,
    base_seed: int,
    steps: int = 64,
    refinement: tuple[int, ...] = (128, 512, 2048),
    refinement_paths: int = 10_000,
    workers: int = 1,
) -> list[dict]:
    """The standard oracle suite: three Brownian, two jump, one refinement study.

    Each entry has ``name``, ``lhs``, ``rhs``, ``se`` and ``pass``; the
    refinement entry lists RMS residuals per grid size.
    """
    grid = TimeGrid(1.0, steps)
    none = LevyMeasureSpec(0.0)
    sym = LevyMeasureSpec(1.0, ((0.5, 0.5), (-0.5, 0.5)))
    one = lambda t, B: 1.0 + 0.0 * B  # noqa: E731
    cases = [
        ("brownian:B(T),phi=1", duality_check_brownian(FunctionalSpec("brownian_terminal"), one, grid, none, n_paths, base_seed, workers)),
        ("brownian:B(T)^2,phi=1", duality_check_brownian(FunctionalSpec("brownian_square"), one, grid, none, n_paths, base_seed, workers)),
        ("brownian:B(T)^2,phi=B", duality_check_brownian(FunctionalSpec("brownian_square"), lambda t, B: B, grid, none, n_paths, base_seed, workers)),
        ("jump:intzetaN,psi=1", duality_check_jump(FunctionalSpec("poisson_integral", psi=lambda s, z: z + 0.0 * s), lambda t, z: 1.0, grid, sym, n_paths, base_seed, workers)),
        ("jump:intzetaN,psi=zeta", duality_check_jump(FunctionalSpec("poisson_integral", psi=lambda s, z: z + 0.0 * s), lambda t, z: z, grid, sym, n_paths, base_seed, workers)),
    ]
    out = [
        {"name": name, "lhs": r.lhs.value, "rhs": r.rhs.value, "se": r.combined_se, "pass": bool(r.passed())}
        for name, r in cases
    ]
    rms = [clark_ocone_check(FunctionalSpec("brownian_square"), TimeGrid(1.0, N), none, refinement_paths, base_seed, workers) for N in refinement]
    decreasing = all(b.value < a.value for a, b in zip(rms, rms[1:]))
    out.append(
        {"name": "clark_ocone:B(T)^2 refinement", "steps": list(refinement),
         "rms": [r.value for r in rms], "se": [r.std_error for r in rms], "pass": bool(decreasing)}
    )
    return out
