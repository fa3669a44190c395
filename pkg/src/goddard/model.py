"""Point-mass rocket model: drag, gravity, their derivatives and the state equations.

All functions accept real or complex arrays.  Norms are written as sqrt(x.x)
without conjugation so that complex-step differentiation goes through them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonpositiveMass


def norm(x):
    """Euclidean norm that stays analytic for complex-step perturbations."""
    return np.sqrt(x @ x)


@dataclass(frozen=True)
class ModelParams:
    C: float = 3.5
    b: float = 7.0
    g0: float = 1.0
    K_D: float = 310.0
    k: float = 500.0
    theta: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not (self.C > 0 and self.b > 0 and self.g0 > 0 and self.k > 0):
            raise ValueError("C, b, g0 and k must be positive")
        if self.K_D < 0:
            raise ValueError("K_D must be nonnegative")
        if not (0.0 <= self.theta <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("theta and lam must lie in [0, 1]")

    @property
    def KD_eff(self) -> float:
        """Drag coefficient after the atmosphere scaling."""
        return self.theta * self.K_D

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class BoundaryConditions:
    r0: np.ndarray = field(default_factory=lambda: np.array([0.999949994, 0.0001, 0.01]))
    v0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    m0: float = 1.0
    r_f: np.ndarray = field(default_factory=lambda: np.array([1.01, 0.0, 0.0]))

    def __post_init__(self):
        for name in ("r0", "v0", "r_f"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, a)
        if not self.m0 > 0:
            raise ValueError("m0 must be positive")


@dataclass
class RocketState:
    r: np.ndarray
    v: np.ndarray
    m: float

    def __post_init__(self):
        self.r = np.asarray(self.r)
        self.v = np.asarray(self.v)
        if np.real(self.m) <= 0:
            raise NonpositiveMass(f"mass {self.m} is not positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.v, [self.m]])

    @classmethod
    def from_vector(cls, y) -> "RocketState":
        return cls(y[0:3], y[3:6], y[6])


def drag(r, v, p: ModelParams):
    """Drag modulus theta*K_D*|v|^2*exp(-k(|r|-1))."""
    return p.KD_eff * (v @ v) * np.exp(-p.k * (norm(r) - 1.0))


def drag_partials(r, v, p: ModelParams):
    """Gradients of drag with respect to r and v."""
    D = drag(r, v, p)
    dD_dr = -p.k * D * r / norm(r)
    vv = v @ v
    if np.real(vv) > 0:
        dD_dv = 2.0 * D * v / vv
    else:
        dD_dv = np.zeros_like(v)
    return dD_dr, dD_dv


def drag_mass_partial(r, v, m, p: ModelParams):
    """dD/dm; identically zero for this drag model, kept as an extension slot."""
    return 0.0


def drag_accel(r, v, m, p: ModelParams):
    """(D/m) v/|v|, extended continuously by zero at v = 0."""
    # D/|v| = K |v| e^..., so the product never divides by zero
    E = p.KD_eff * np.exp(-p.k * (norm(r) - 1.0))
    return E * norm(v) * v / m


def gravity(r, p: ModelParams):
    return p.g0 * r / norm(r) ** 3


def gravity_jacobian(r, p: ModelParams):
    nr = norm(r)
    return p.g0 * (np.eye(3) / nr**3 - 3.0 * np.outer(r, r) / nr**5)


def state_rhs(x: RocketState, u, p: ModelParams) -> np.ndarray:
    """Time derivative (rdot, vdot, mdot) as a 7-vector."""
    if np.real(x.m) <= 0:
        raise NonpositiveMass(f"mass {x.m} is not positive")
    u = np.asarray(u)
    a = -drag_accel(x.r, x.v, x.m, p) - gravity(x.r, p) + p.C * u / x.m
    return np.concatenate([x.v, a, [-p.b * norm(u)]])
