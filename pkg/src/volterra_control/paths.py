"""Time grids and seeded Brownian / compound-Poisson driver paths.

Every random quantity in the package is drawn from a per-path stream whose
seed is a pure function of ``(base_seed, path_index)``; see
:func:`stream_seed`. Batches are assembled in path-index order, so the
number of workers used to generate them never changes the result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import special, stats

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    """One round of the SplitMix64 finaliser on a 64-bit integer."""
    z = (value + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def stream_seed(base_seed: int, *keys: int) -> int:
    """Derive a 64-bit stream seed from a base seed and integer keys.

    The rule is ``s = splitmix64(base_seed)`` followed by
    ``s = splitmix64(splitmix64(s) ^ key)`` for each key in order (not
    symmetric in its arguments). Path
    ``i`` of a batch uses ``stream_seed(base_seed, i)``; nested branches use
    ``stream_seed(base_seed, path, node, branch, BRANCH_TAG)``.
    """
    s = splitmix64(int(base_seed) & _MASK64)
    for k in keys:
        s = splitmix64(splitmix64(s) ^ (int(k) & _MASK64))
    return s


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def stream_uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniforms in (0, 1) from the SplitMix64 streams of ``keys``.

    Draw ``c`` of the stream keyed ``k`` is ``splitmix64(k + c * golden)``,
    i.e. output ``c`` of a SplitMix64 generator with state ``k``; its top
    53 bits give ``(m + 0.5) / 2**53``.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = keys + (counters + np.uint64(1)) * np.uint64(_GOLDEN)
        h = _mix_array(z)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_i = i * T / N`` on ``[0, T]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t`` (up to roundoff)."""
        i = int(round(t / self.dt))
        if i < 0 or i > self.steps or abs(i * self.dt - t) > 1e-9 * max(1.0, self.horizon):
            raise ValueError(f"{t} is not a grid node")
        return i


def make_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(T, N)


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Finite Lévy measure ``nu = intensity * sum_k p_k delta_{zeta_k}``."""

    intensity: float = 0.0
    marks: tuple[tuple[float, float], ...] = ((1.0, 1.0),)

    def __post_init__(self):
        marks = tuple((float(z), float(p)) for z, p in self.marks)
        object.__setattr__(self, "marks", marks)
        if self.intensity < 0 or not np.isfinite(self.intensity):
            raise ValueError("intensity must be finite and >= 0")
        if not marks:
            raise ValueError("at least one mark is required")
        if any(z == 0 for z, _ in marks):
            raise ValueError("marks must be nonzero")
        if any(p < 0 for _, p in marks):
            raise ValueError("mark probabilities must be >= 0")
        if abs(sum(p for _, p in marks) - 1.0) > 1e-12:
            raise ValueError("mark probabilities must sum to 1")

    @property
    def sizes(self) -> np.ndarray:
        return np.array([z for z, _ in self.marks])

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.marks])

    @property
    def weights(self) -> np.ndarray:
        """``nu({zeta_k}) = intensity * p_k``."""
        return self.intensity * self.probs


NO_JUMPS = LevyMeasureSpec(0.0)


def nu_integral(levy: LevyMeasureSpec, kernel: Callable) -> float | np.ndarray:
    """Exact ``int kernel(zeta) nu(dzeta)`` as a finite weighted sum.

    ``kernel`` may return arrays; they are summed elementwise over marks.
    """
    total = 0.0
    for (z, _), w in zip(levy.marks, levy.weights):
        if w == 0.0:
            continue
        total = total + w * np.asarray(kernel(z), dtype=float)
    return total


@dataclass(frozen=True)
class DriverPath:
    """One realisation of Brownian increments and jump events on a grid."""

    brownian_increments: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_marks: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        for name in ("brownian_increments", "jump_times", "jump_marks"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def jumps(self) -> list[tuple[float, int]]:
        """Sorted ``(time, mark index)`` pairs."""
        return list(zip(self.jump_times.tolist(), self.jump_marks.tolist()))

    def __eq__(self, other):
        if not isinstance(other, DriverPath):
            return NotImplemented
        return (
            np.array_equal(self.brownian_increments, other.brownian_increments)
            and np.array_equal(self.jump_times, other.jump_times)
            and np.array_equal(self.jump_marks, other.jump_marks)
        )

    __hash__ = None


def jump_interval(times: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Index ``j`` of the interval ``(t_j, t_{j+1}]`` holding each jump time."""
    j = np.ceil(np.asarray(times) / grid.dt - 1e-12).astype(int) - 1
    return np.clip(j, 0, grid.steps - 1)


def _draw_streams(keys: np.ndarray, grid: TimeGrid, levy: LevyMeasureSpec, start: int):
    """Driver draws after node ``start`` for each stream key.

    Counter layout inside a stream: ``0 .. n-1`` Brownian normals (inverse
    CDF), ``n`` the jump count (Poisson inverse CDF), then for jump ``m`` the
    counters ``n + 1 + 2m`` (time) and ``n + 2 + 2m`` (mark), where
    ``n = N - start``. Returns increments, per-jump (stream, time, mark).
    """
    keys = np.asarray(keys, dtype=np.uint64)
    P, n = keys.size, grid.steps - start
    u = stream_uniforms(keys[:, None], np.arange(n)[None, :])
    dB = special.ndtri(u) * np.sqrt(grid.dt)
    t0 = start * grid.dt
    span = grid.horizon - t0
    if levy.intensity > 0 and span > 0:
        un = stream_uniforms(keys, np.full(P, n))
        n_jumps = stats.poisson.ppf(un, levy.intensity * span).astype(np.int64)
    else:
        n_jumps = np.zeros(P, dtype=np.int64)
    owner = np.repeat(np.arange(P), n_jumps)
    offsets = np.cumsum(n_jumps) - n_jumps
    m = np.arange(owner.size) - offsets[owner]
    ut = stream_uniforms(keys[owner], n + 1 + 2 * m)
    um = stream_uniforms(keys[owner], n + 2 + 2 * m)
    times = grid.horizon - span * ut  # in (t0, T)
    marks = np.searchsorted(np.cumsum(levy.probs)[:-1], um, side="right")
    return dB, owner, times, marks


def sample_driver(grid: TimeGrid, levy: LevyMeasureSpec, base_seed: int, path_index: int) -> DriverPath:
    """Draw path ``path_index`` of the stream family ``base_seed``.

    The path is a pure function of ``(base_seed, path_index)``: its stream
    key is ``stream_seed(base_seed, path_index)``.
    """
    dB, _, times, marks = _draw_streams(np.array([stream_seed(base_seed, path_index)]), grid, levy, 0)
    order = np.argsort(times, kind="stable")
    return DriverPath(dB[0], times[order], marks[order])


@dataclass(frozen=True, eq=False)
class DriverBatch:
    """Vectorised view of many driver paths on one grid.

    Jumps are stored as counts per (path, interval, mark); with left-point
    evaluation of integrands that is all the solvers need.
    """

    grid: TimeGrid
    levy: LevyMeasureSpec
    dB: np.ndarray  # (n_paths, N)
    counts: np.ndarray  # (n_paths, N, K)

    def __post_init__(self):
        for name in ("dB", "counts"):
            getattr(self, name).setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.dB.shape[0]

    @cached_property
    def brownian(self) -> np.ndarray:
        """``B(t_i)`` at every node, shape ``(n_paths, N+1)``."""
        out = np.zeros((self.n_paths, self.grid.steps + 1))
        np.cumsum(self.dB, axis=1, out=out[:, 1:])
        out.setflags(write=False)
        return out

    @classmethod
    def from_paths(cls, paths: Sequence[DriverPath], grid: TimeGrid, levy: LevyMeasureSpec) -> "DriverBatch":
        n, N, K = len(paths), grid.steps, len(levy.marks)
        dB = np.empty((n, N))
        counts = np.zeros((n, N, K), dtype=np.int64)
        for p, path in enumerate(paths):
            if path.brownian_increments.shape != (N,):
                raise ValueError("driver path does not match grid")
            dB[p] = path.brownian_increments
            if len(path.jump_times):
                np.add.at(counts[p], (jump_interval(path.jump_times, grid), path.jump_marks), 1)
        return cls(grid, levy, dB, counts)

    def compensated_sum(self, integrand: Callable, upto: int | None = None) -> np.ndarray:
        """``int_0^{t_upto} int integrand(s, zeta) Ntilde(ds, dzeta)`` per path.

        ``integrand(s, zeta)`` receives the left nodes ``s`` (shape ``(m,)``)
        and a scalar mark, and may return an ``(m,)`` or ``(n_paths, m)``
        array.
        """
        m = self.grid.steps if upto is None else upto
        s = self.grid.nodes[:m]
        total = np.zeros(self.n_paths)
        for k, ((z, _), w) in enumerate(zip(self.levy.marks, self.levy.weights)):
            vals = np.broadcast_to(np.asarray(integrand(s, z), dtype=float), (self.n_paths, m))
            total += np.sum(self.counts[:, :m, k] * vals, axis=1)
            if w:
                total -= self.grid.dt * w * np.sum(vals, axis=1)
        return total


def _counts(P: int, grid: TimeGrid, levy: LevyMeasureSpec, owner, times, marks) -> np.ndarray:
    counts = np.zeros((P, grid.steps, len(levy.marks)), dtype=np.int64)
    if owner.size:
        np.add.at(counts, (owner, jump_interval(times, grid), marks), 1)
    return counts


def _chunk(grid, levy, base_seed, start, stop):
    keys = np.array([stream_seed(base_seed, i) for i in range(start, stop)], dtype=np.uint64)
    dB, owner, times, marks = _draw_streams(keys, grid, levy, 0)
    return dB, _counts(stop - start, grid, levy, owner, times, marks)


@lru_cache(maxsize=8)
def sample_batch(
    grid: TimeGrid,
    levy: LevyMeasureSpec,
    n_paths: int,
    base_seed: int,
    workers: int = 1,
    first_index: int = 0,
) -> DriverBatch:
    """Paths ``first_index .. first_index + n_paths - 1`` as a batch.

    Row ``p`` equals ``sample_driver(grid, levy, base_seed, first_index + p)``.
    ``workers`` only splits generation into chunks that are concatenated in
    path-index order, so the batch is identical for any worker count.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    stop = first_index + n_paths
    bounds = np.linspace(first_index, stop, max(1, int(workers)) + 1).astype(int)
    spans = list(zip(bounds[:-1], bounds[1:]))
    if len(spans) == 1:
        parts = [_chunk(grid, levy, base_seed, first_index, stop)]
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as pool:
            parts = list(pool.map(lambda ab: _chunk(grid, levy, base_seed, *ab), spans))
    dB = np.concatenate([p[0] for p in parts])
    counts = np.concatenate([p[1] for p in parts])
    return DriverBatch(grid, levy, dB, counts)


BRANCH_TAG = 0xB4A7C4


def sample_suffix_batch(
    prefix: DriverBatch,
    path: int,
    node: int,
    n_branches: int,
    base_seed: int,
) -> DriverBatch:
    """Resimulate the driver after ``t_node`` keeping path ``path``'s prefix.

    Branch ``m`` uses the stream ``stream_seed(base_seed, path, node, m, BRANCH_TAG)``.
    """
    grid, levy = prefix.grid, prefix.levy
    keys = np.array([stream_seed(base_seed, path, node, m, BRANCH_TAG) for m in range(n_branches)], dtype=np.uint64)
    dB_s, owner, times, marks = _draw_streams(keys, grid, levy, node)
    dB = np.empty((n_branches, grid.steps))
    dB[:, :node] = prefix.dB[path, :node]
    dB[:, node:] = dB_s
    counts = _counts(n_branches, grid, levy, owner, times, marks)
    counts[:, :node] = prefix.counts[path, :node]
    return DriverBatch(grid, levy, dB, counts)
