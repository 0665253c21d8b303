"""The Volterra cash-flow consumption model and its coefficient catalog.

    X(t) = x0 + int_0^t [b0(t, s) X(s) - u(s)] ds + int_0^t sigma0(s) X(s) dB(s)
              + int_0^t int gamma0(s, zeta) X(s) Ntilde(ds, dzeta)

    J(u) = E[theta X(T) + int_0^T log u(t) dt]

Kernels are chosen by catalog id so that configs stay declarative:

    b0      zero | constant(c) | affine_s(c, d): c + d s | linear_gap(c): c (s - t)
    sigma0  constant(value) | linear(v0, v1): v0 + v1 s
    gamma0  zero | constant(value) | mark_linear(scale): scale * zeta
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .forward import VolterraCoefficients
from .measure import GirsanovKernel, ThetaSpec, theta_values
from .paths import LevyMeasureSpec, TimeGrid


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "zero"
    params: tuple[tuple[str, float], ...] = ()

    @classmethod
    def of(cls, kind: str, **params: float) -> "KernelSpec":
        return cls(kind, tuple(sorted((k, float(v)) for k, v in params.items())))

    def get(self, name: str, default: float = 0.0) -> float:
        return dict(self.params).get(name, default)

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls.of(d["id"], **d.get("params", {}))


B0_KINDS = ("zero", "constant", "affine_s", "linear_gap")
SIGMA0_KINDS = ("constant", "linear")
GAMMA0_KINDS = ("zero", "constant", "mark_linear")


def b0_functions(spec: KernelSpec):
    """``(b0, d b0 / d t, sup |b0| on [0, T]^2 as a function of T)``."""
    c, d = spec.get("c"), spec.get("d")
    if spec.kind == "zero":
        return (lambda t, s: 0.0 * (t + s)), (lambda t, s: 0.0 * (t + s)), (lambda T: 0.0)
    if spec.kind == "constant":
        return (lambda t, s: c + 0.0 * (t + s)), (lambda t, s: 0.0 * (t + s)), (lambda T: abs(c))
    if spec.kind == "affine_s":
        return (
            (lambda t, s: c + d * s + 0.0 * t),
            (lambda t, s: 0.0 * (t + s)),
            (lambda T: max(abs(c), abs(c + d * T))),
        )
    if spec.kind == "linear_gap":
        return (lambda t, s: c * (s - t)), (lambda t, s: -c + 0.0 * (t + s)), (lambda T: abs(c) * T)
    raise ValueError(f"unknown b0 kernel {spec.kind!r}; expected one of {B0_KINDS}")


def sigma0_function(spec: KernelSpec):
    if spec.kind == "constant":
        v = spec.get("value")
        return lambda s: v + 0.0 * s
    if spec.kind == "linear":
        v0, v1 = spec.get("v0"), spec.get("v1")
        return lambda s: v0 + v1 * s
    raise ValueError(f"unknown sigma0 kernel {spec.kind!r}; expected one of {SIGMA0_KINDS}")


def gamma0_function(spec: KernelSpec):
    if spec.kind == "zero":
        return lambda s, z: 0.0 * s
    if spec.kind == "constant":
        v = spec.get("value")
        return lambda s, z: v + 0.0 * s
    if spec.kind == "mark_linear":
        a = spec.get("scale", 1.0)
        return lambda s, z: a * z + 0.0 * s
    raise ValueError(f"unknown gamma0 kernel {spec.kind!r}; expected one of {GAMMA0_KINDS}")


@dataclass(frozen=True)
class ConsumptionModel:
    x0: float = 1.0
    horizon: float = 1.0
    b0: KernelSpec = KernelSpec("zero")
    sigma0: KernelSpec = KernelSpec.of("constant", value=0.0)
    gamma0: KernelSpec = KernelSpec("zero")
    theta: ThetaSpec = ThetaSpec("constant", k=1.0)
    levy: LevyMeasureSpec = LevyMeasureSpec(0.0)
    epsilon: float = 0.1
    u_min: float = 1e-3
    u_max: float = 1e3

    def __post_init__(self):
        if not np.isfinite(self.x0):
            raise ValueError("x0 must be finite")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if not 0 < self.u_min < self.u_max:
            raise ValueError("need 0 < u_min < u_max (log utility forces u > 0)")
        b0_functions(self.b0)
        sigma0_function(self.sigma0)
        g0 = gamma0_function(self.gamma0)
        for z, _ in self.levy.marks:
            val = float(np.asarray(g0(np.array([0.0, self.horizon]), z)).min())
            if val < -1.0 + self.epsilon:
                raise ValueError(
                    f"gamma0(s, {z}) = {val} violates gamma0 >= -1 + epsilon (epsilon={self.epsilon})"
                )

    # callables -----------------------------------------------------------
    @property
    def b0_fn(self):
        return b0_functions(self.b0)[0]

    @property
    def b0_t_fn(self):
        return b0_functions(self.b0)[1]

    @property
    def b0_bound(self) -> float:
        return b0_functions(self.b0)[2](self.horizon)

    @property
    def sigma0_fn(self):
        return sigma0_function(self.sigma0)

    @property
    def gamma0_fn(self):
        return gamma0_function(self.gamma0)

    @property
    def girsanov(self) -> GirsanovKernel:
        return GirsanovKernel(self.sigma0_fn, self.gamma0_fn)

    def grid(self, steps: int) -> TimeGrid:
        return TimeGrid(self.horizon, steps)

    # serialisation -------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {
            "x0": self.x0,
            "horizon": self.horizon,
            "b0": self.b0.to_dict(),
            "sigma0": self.sigma0.to_dict(),
            "gamma0": self.gamma0.to_dict(),
            "theta": asdict(self.theta),
            "levy": {"intensity": self.levy.intensity, "marks": [list(m) for m in self.levy.marks]},
            "epsilon": self.epsilon,
            "u_min": self.u_min,
            "u_max": self.u_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConsumptionModel":
        defaults = cls()
        levy = d.get("levy")
        return cls(
            x0=float(d.get("x0", defaults.x0)),
            horizon=float(d.get("horizon", defaults.horizon)),
            b0=KernelSpec.from_dict(d["b0"]) if "b0" in d else defaults.b0,
            sigma0=KernelSpec.from_dict(d["sigma0"]) if "sigma0" in d else defaults.sigma0,
            gamma0=KernelSpec.from_dict(d["gamma0"]) if "gamma0" in d else defaults.gamma0,
            theta=ThetaSpec(**d["theta"]) if "theta" in d else defaults.theta,
            levy=LevyMeasureSpec(levy["intensity"], tuple(tuple(m) for m in levy["marks"])) if levy else defaults.levy,
            epsilon=float(d.get("epsilon", defaults.epsilon)),
            u_min=float(d.get("u_min", defaults.u_min)),
            u_max=float(d.get("u_max", defaults.u_max)),
        )


def build_model(config: ConsumptionModel | dict) -> tuple[ConsumptionModel, VolterraCoefficients]:
    """Coefficients of the consumption problem in the general SVIE form.

    ``b = b0(t, s) x - u``, ``sigma = sigma0(s) x``, ``gamma = gamma0(s, zeta) x``,
    ``f = log u`` and ``g(x) = theta x`` with ``theta`` read off the driver.
    """
    model = config if isinstance(config, ConsumptionModel) else ConsumptionModel.from_dict(config)
    b0, b0_t = model.b0_fn, model.b0_t_fn
    s0, g0 = model.sigma0_fn, model.gamma0_fn
    theta = model.theta
    levy = model.levy

    def terminal(x, batch):
        return theta_values(theta, batch) * x

    def terminal_x(x, batch):
        return theta_values(theta, batch) + 0.0 * x

    jump_l2 = float(np.sqrt(sum(w * float(np.max(np.abs(g0(np.array([0.0, model.horizon]), z)))) ** 2
                                for (z, _), w in zip(levy.marks, levy.weights))))
    s0_sup = float(np.max(np.abs(s0(np.linspace(0.0, model.horizon, 33)))))

    coeffs = VolterraCoefficients(
        xi=lambda t: model.x0,
        b=lambda t, s, x, u: b0(t, s) * x - u,
        sigma=lambda t, s, x, u: s0(s) * x,
        gamma=lambda t, s, x, u, z: g0(s, z) * x,
        f=lambda t, x, u: np.log(u) + 0.0 * x,
        g=terminal,
        b_t=lambda t, s, x, u: b0_t(t, s) * x,
        sigma_t=lambda t, s, x, u: 0.0 * x,
        gamma_t=lambda t, s, x, u, z: 0.0 * x,
        b_x=lambda t, s, x, u: b0(t, s) + 0.0 * x,
        b_u=lambda t, s, x, u: -1.0 + 0.0 * x,
        sigma_x=lambda t, s, x, u: s0(s) + 0.0 * x,
        sigma_u=lambda t, s, x, u: 0.0 * x,
        gamma_x=lambda t, s, x, u, z: g0(s, z) + 0.0 * x,
        gamma_u=lambda t, s, x, u, z: 0.0 * x,
        b_tx=lambda t, s, x, u: b0_t(t, s) + 0.0 * x,
        b_tu=lambda t, s, x, u: 0.0 * x,
        sigma_tx=lambda t, s, x, u: 0.0 * x,
        sigma_tu=lambda t, s, x, u: 0.0 * x,
        gamma_tx=lambda t, s, x, u, z: 0.0 * x,
        gamma_tu=lambda t, s, x, u, z: 0.0 * x,
        f_x=lambda t, x, u: 0.0 * x + 0.0 * u,
        f_u=lambda t, x, u: 1.0 / u + 0.0 * x,
        g_x=terminal_x,
        lipschitz=max(model.b0_bound, s0_sup, jump_l2, 1e-12),
    )
    return model, coeffs
