"""Finite-difference versus derivative-process Gateaux derivatives across lambda.

Uses a stochastic memory model with jumps so that both routes carry
Monte Carlo error; the gap should shrink like lambda^2 until it reaches
the standard error.
"""

import argparse

from volterra_control.forward import ControlPath
from volterra_control.maximum_principle import PerturbationSpec, gateaux_fd, gateaux_via_y
from volterra_control.measure import ThetaSpec
from volterra_control.model import ConsumptionModel, KernelSpec, build_model
from volterra_control.paths import LevyMeasureSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--steps", type=int, default=32)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--control", type=float, default=0.8)
    args = ap.parse_args()
    model, coeffs = build_model(ConsumptionModel(
        b0=KernelSpec.of("affine_s", c=0.3, d=0.4),
        sigma0=KernelSpec.of("constant", value=0.3),
        gamma0=KernelSpec.of("mark_linear", scale=0.6),
        levy=LevyMeasureSpec(1.0, ((0.5, 0.5), (-0.5, 0.5))),
        theta=ThetaSpec("lognormal", a=0.4),
    ))
    grid = model.grid(args.steps)
    u = ControlPath.constant(args.control, grid)
    print("start  lambda   fd            y             |fd - y|   se")
    for start in (0.0, 0.25, 0.5, 0.75):
        pert = PerturbationSpec(start, 0.25)
        y = gateaux_via_y(coeffs, u, pert, grid, model.levy, args.paths, args.seed)
        for lam in (1e-1, 1e-2, 1e-3):
            fd = gateaux_fd(coeffs, u, pert, lam, grid, model.levy, args.paths, args.seed)
            print(f"{start:<6} {lam:<8g} {fd.value:+.6e} {y.value:+.6e} {abs(fd.value - y.value):.2e}   {fd.std_error:.1e}")


if __name__ == "__main__":
    main()
