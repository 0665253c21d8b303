"""Convergence of the trapezoid resolvent for the constant kernel.

Prints the error of Psi(0, T) and kappa(0) against the closed forms
c e^{cT} and e^{cT} as the grid is refined; the trapezoid rule should
show second-order decay.
"""

import argparse
import math

from volterra_control.paths import make_grid
from volterra_control.resolvent import neumann_psi, psi_factor, resolvent_direct


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--c", type=float, default=0.5)
    ap.add_argument("--T", type=float, default=1.0)
    args = ap.parse_args()
    c, T = args.c, args.T
    b0 = lambda t, s: c + 0.0 * (t + s)  # noqa: E731
    print("N      psi err     kappa err   n*   neumann-direct")
    prev = None
    for N in (16, 32, 64, 128, 256, 512, 1024):
        g = make_grid(T, N)
        psi, n_star, _ = neumann_psi(b0, abs(c), 0.0, T, g, 1e-12)
        kappa = psi_factor(b0, abs(c), g, 1e-12)
        gap = max(abs(kappa - resolvent_direct(b0, 1.0, g)))
        err = abs(kappa[0] - math.exp(c * T))
        order = "" if prev is None or err == 0 else f"  order {math.log2(prev / err):.2f}"
        print(f"{N:<6} {abs(psi - c * math.exp(c * T)):.3e}   {err:.3e}   {n_star:<4} {gap:.2e}{order}")
        prev = err


if __name__ == "__main__":
    main()
