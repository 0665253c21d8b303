import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from volterra_control.paths import make_grid
from volterra_control.resolvent import (
    factorial_tail,
    iterated_kernel,
    neumann_psi,
    psi_factor,
    resolvent_direct,
    resolvent_table,
    truncation_order,
)

G1024 = make_grid(1.0, 1024)


def const(c):
    return lambda t, s: c + 0.0 * (t + s)


def test_zero_kernel():
    g = make_grid(1.0, 16)
    assert iterated_kernel(const(0.0), 3, 0.0, 1.0, g) == 0.0
    assert neumann_psi(const(0.0), 0.0, 0.0, 1.0, g, 1e-10)[:2] == (0.0, 1)
    np.testing.assert_array_equal(psi_factor(const(0.0), 0.0, g, 1e-10), 1.0)
    np.testing.assert_array_equal(resolvent_direct(const(0.0), 2.5, g), 2.5)


def test_base_case_is_kernel():
    k = lambda t, s: np.sin(t) + s**2  # noqa: E731
    assert iterated_kernel(k, 1, 0.25, 0.75, make_grid(1.0, 8)) == k(0.25, 0.75)


def test_second_iterate_constant_kernel():
    assert abs(iterated_kernel(const(0.5), 2, 0.0, 1.0, G1024) - 0.25) <= 1e-6


@given(st.integers(1, 6), st.floats(0.1, 1.5))
def test_iterates_match_factorial_formula(n, c):
    g = make_grid(1.0, 256)
    exact = c**n / math.factorial(n - 1)
    assert iterated_kernel(const(c), n, 0.0, 1.0, g) == pytest.approx(exact, rel=1e-4)


def test_rejects_reversed_arguments():
    g = make_grid(1.0, 4)
    with pytest.raises(ValueError):
        iterated_kernel(const(1.0), 2, 0.75, 0.25, g)
    with pytest.raises(ValueError):
        neumann_psi(const(1.0), 1.0, 0.75, 0.25, g, 1e-6)
    with pytest.raises(ValueError):
        truncation_order(1.0, 1.0, 0.0)


def test_neumann_constant_kernel():
    val, n_star, tail = neumann_psi(const(0.5), 0.5, 0.0, 1.0, G1024, 1e-10)
    assert abs(val - 0.5 * math.exp(0.5)) / (0.5 * math.exp(0.5)) <= 1e-4
    assert tail <= 1e-10


def test_neumann_gap_kernel_against_direct():
    b0 = lambda t, s: s - t  # noqa: E731
    g = make_grid(1.0, 512)
    kappa = psi_factor(b0, 1.0, g, 1e-12)
    p = resolvent_direct(b0, 1.0, g)
    assert np.max(np.abs(kappa - p)) <= 1e-4


def test_kappa_and_direct_constant_kernel():
    kappa = psi_factor(const(0.5), 0.5, G1024, 1e-10)
    p = resolvent_direct(const(0.5), 1.0, G1024)
    assert abs(kappa[0] - math.exp(0.5)) <= 1e-4
    assert abs(p[0] - math.exp(0.5)) <= 1e-4
    assert kappa[-1] == 1.0
    assert np.max(np.abs(kappa - p)) <= 1e-3


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-3.0, 3.0))
def test_resolvent_identity(c, d, F):
    b0 = lambda t, s: c + d * s + 0.0 * t  # noqa: E731
    g = make_grid(1.0, 64)
    C = max(abs(c), abs(c + d))
    kappa = psi_factor(b0, C, g, 1e-12)
    p = resolvent_direct(b0, F, g)
    quad = (abs(c) + abs(d)) ** 3 * g.dt**2 * math.exp(C) + 1e-12
    assert np.max(np.abs(F * kappa - p)) <= 10 * max(quad * abs(F), 1e-12)


def test_homogeneous_direct():
    np.testing.assert_array_equal(resolvent_direct(const(0.7), 0.0, make_grid(1.0, 16)), 0.0)


def test_tail_bound_dominates_true_tail():
    c, T = 0.8, 1.0
    for n_star in range(1, 12):
        true_tail = sum(c**n * T ** (n - 1) / math.factorial(n - 1) for n in range(n_star + 1, 60))
        assert factorial_tail(c, T, n_star) >= true_tail * (1 - 1e-12)


def test_table_diagonal_equals_kernel():
    b0 = lambda t, s: 0.3 + t * s  # noqa: E731
    g = make_grid(1.0, 32)
    table = resolvent_table(b0, 1.3, g, 1e-10)
    np.testing.assert_allclose(np.diag(table.psi), b0(g.nodes, g.nodes), atol=1e-15)
    assert table.tail_bound <= 1e-10
    assert np.all(np.isfinite(table.psi))
    assert sum(1 for _ in table.rows()) == 33 * 34 // 2
