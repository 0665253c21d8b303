"""Iterated kernels, their Neumann sum, and the backward Volterra resolvent.

All kernel integrals use the composite trapezoid rule on the global grid.
Kernels are callables ``b0(t, s)`` that broadcast over arrays and are
evaluated on the upper triangle ``t <= s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .paths import TimeGrid


def kernel_matrix(b0: Callable, grid: TimeGrid) -> np.ndarray:
    """``B[i, k] = b0(t_i, t_k)`` for ``i <= k``, zero below the diagonal."""
    t = grid.nodes
    B = np.broadcast_to(np.asarray(b0(t[:, None], t[None, :]), dtype=float), (t.size, t.size))
    return np.triu(B)


def _compose(prev: np.ndarray, B: np.ndarray, dt: float, row: int | None = None) -> np.ndarray:
    """Trapezoid ``int_t^delta prev(t, s) b0(s, delta) ds`` on the triangle.

    ``prev`` is either the full upper-triangular table or a single row
    (then ``row`` is its index).
    """
    diag = np.diag(B)
    if row is None:
        out = prev @ B
        out -= 0.5 * np.diag(prev)[:, None] * B
        out -= 0.5 * prev * diag[None, :]
        return dt * np.triu(out)
    out = prev @ B - 0.5 * prev[row] * B[row] - 0.5 * prev * diag
    out[:row] = 0.0
    return dt * out


def factorial_tail(C: float, T: float, n_star: int) -> float:
    """``sum_{n > n_star} C^n T^(n-1) / (n-1)!``, the omitted-term bound."""
    if C == 0.0:
        return 0.0
    total, n = 0.0, n_star + 1
    term = C**n * T ** (n - 1) / math.factorial(n - 1)
    while term > 1e-300:
        total += term
        n += 1
        term *= C * T / (n - 1)
        if term < 1e-18 * total:
            break
    return total


def truncation_order(C: float, T: float, tol: float) -> tuple[int, float]:
    """Smallest ``n* >= 1`` whose factorial tail bound is below ``tol``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = 1
    while True:
        tail = factorial_tail(C, T, n)
        if tail <= tol:
            return n, tail
        n += 1
        if n > 10_000:
            raise RuntimeError("factorial tail did not fall below tol")


def _grid_index(grid: TimeGrid, t: float) -> int:
    return grid.index_of(t)


def iterated_kernel(b0: Callable, n: int, t: float, delta: float, grid: TimeGrid) -> float:
    """``b0^(n)(t, delta)`` with ``b0^(n) = int_t^delta b0^(n-1)(t, s) b0(s, delta) ds``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if t > delta:
        raise ValueError(f"need t <= delta, got t={t}, delta={delta}")
    if n == 1:
        return float(b0(t, delta))
    i, k = _grid_index(grid, t), _grid_index(grid, delta)
    B = kernel_matrix(b0, grid)
    row = B[i].copy()
    for _ in range(n - 1):
        row = _compose(row, B, grid.dt, i)
    return float(row[k])


def neumann_psi(
    b0: Callable, C_bound: float, t: float, delta: float, grid: TimeGrid, tol: float
) -> tuple[float, int, float]:
    """Truncated ``Psi(t, delta) = sum_{n<=n*} b0^(n)(t, delta)``.

    Returns ``(value, n_star, tail_bound)``.
    """
    if t > delta:
        raise ValueError(f"need t <= delta, got t={t}, delta={delta}")
    n_star, tail = truncation_order(C_bound, grid.horizon, tol)
    i, k = _grid_index(grid, t), _grid_index(grid, delta)
    B = kernel_matrix(b0, grid)
    row = B[i].copy()
    total = row.copy()
    for _ in range(n_star - 1):
        row = _compose(row, B, grid.dt, i)
        total += row
    return float(total[k]), n_star, tail


@dataclass(frozen=True)
class ResolventTable:
    grid: TimeGrid
    psi: np.ndarray  # (N+1, N+1), upper triangle
    n_star: int
    tail_bound: float

    def rows(self):
        """``(t, delta, psi)`` for every ``t <= delta`` in row-major order."""
        t = self.grid.nodes
        for i in range(t.size):
            for k in range(i, t.size):
                yield t[i], t[k], self.psi[i, k]


def resolvent_table(b0: Callable, C_bound: float, grid: TimeGrid, tol: float) -> ResolventTable:
    n_star, tail = truncation_order(C_bound, grid.horizon, tol)
    if tail > tol:
        raise RuntimeError("tail bound above tolerance")
    B = kernel_matrix(b0, grid)
    term = B.copy()
    psi = B.copy()
    for _ in range(n_star - 1):
        term = _compose(term, B, grid.dt)
        psi += term
    if not np.all(np.isfinite(psi)):
        raise FloatingPointError("non-finite resolvent table")
    psi.setflags(write=False)
    return ResolventTable(grid, psi, n_star, tail)


def trapezoid_rows(table: np.ndarray, dt: float) -> np.ndarray:
    """``int_{t_i}^T table[i, s] ds`` for each row of an upper-triangular table."""
    n = table.shape[0]
    out = np.empty(n)
    for i in range(n):
        r = table[i, i:]
        out[i] = 0.0 if r.size < 2 else dt * (r.sum() - 0.5 * (r[0] + r[-1]))
    return out


def psi_factor(
    b0: Callable, C_bound: float, grid: TimeGrid, tol: float, table: ResolventTable | None = None
) -> np.ndarray:
    """``kappa(t_i) = 1 + int_{t_i}^T Psi(t_i, a) da``; ``kappa(T) = 1``."""
    if table is None:
        table = resolvent_table(b0, C_bound, grid, tol)
    kappa = 1.0 + trapezoid_rows(table.psi, grid.dt)
    kappa[-1] = 1.0
    return kappa


def resolvent_direct(b0: Callable, F: float, grid: TimeGrid) -> np.ndarray:
    """Backward collocation for ``p(t) = F + int_t^T b0(t, s) p(s) ds``.

    Trapezoid in ``s``; the diagonal weight makes each row implicit in
    ``p(t_i)``, which is solved exactly.
    """
    if not np.isfinite(F):
        raise ValueError("F must be finite")
    N, dt = grid.steps, grid.dt
    B = kernel_matrix(b0, grid)
    p = np.empty(N + 1)
    p[N] = F
    for i in range(N - 1, -1, -1):
        rest = B[i, i + 1 : N] @ p[i + 1 : N] + 0.5 * B[i, N] * p[N]
        p[i] = (F + dt * rest) / (1.0 - 0.5 * dt * B[i, i])
    return p
