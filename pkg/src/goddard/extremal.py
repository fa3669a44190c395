"""Pontryagin extremal system for the min-fuel / max-final-mass rocket problem.

Flat layout used throughout: y = (r[3], v[3], m, p_r[3], p_v[3], p_m), 14 entries.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateA, NonpositiveMass, ZeroPv, ZeroVelocity
from .model import (
    ModelParams,
    RocketState,
    drag,
    drag_accel,
    drag_mass_partial,
    drag_partials,
    gravity,
    gravity_jacobian,
    norm,
)


class CostConvention(enum.Enum):
    FinalMass = "final_mass"
    MinFuel = "min_fuel"


class ControlMode(enum.Enum):
    Bang = "bang"
    Regularized = "regularized"
    Singular = "singular"


@dataclass
class Costate:
    p_r: np.ndarray
    p_v: np.ndarray
    p_m: float

    def __post_init__(self):
        self.p_r = np.asarray(self.p_r)
        self.p_v = np.asarray(self.p_v)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p_r, self.p_v, [self.p_m]])

    @classmethod
    def from_vector(cls, q) -> "Costate":
        return cls(q[0:3], q[3:6], q[6])


@dataclass
class ExtremalPoint:
    """State, costate, free final time and its costate (normalized time)."""

    x: RocketState
    p: Costate
    t_f: float
    p_tf: float = 0.0

    def __post_init__(self):
        if not np.real(self.t_f) > 0:
            raise ValueError("t_f must be positive")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.x.as_vector(), self.p.as_vector(), [self.t_f, self.p_tf]])

    @classmethod
    def from_vector(cls, y) -> "ExtremalPoint":
        return cls(RocketState.from_vector(y[:7]), Costate.from_vector(y[7:14]), y[14], y[15])


def split(y):
    """Unpack a flat 14-vector into (state, costate)."""
    return RocketState(y[0:3], y[3:6], y[6]), Costate(y[7:10], y[10:13], y[13])


def pack(x: RocketState, p: Costate) -> np.ndarray:
    return np.concatenate([x.as_vector(), p.as_vector()])


def _check_mass(x: RocketState):
    if np.real(x.m) <= 0:
        raise NonpositiveMass(f"mass {x.m} is not positive")


def _uncontrolled_accel(x: RocketState, params: ModelParams):
    return -drag_accel(x.r, x.v, x.m, params) - gravity(x.r, params)


def hamiltonian(x: RocketState, p: Costate, u, conv: CostConvention = CostConvention.MinFuel,
                lam: float | None = None, params: ModelParams = ModelParams()):
    """Hamiltonian with normal multiplier; lam weights the quadratic term by (1 - lam)."""
    _check_mass(x)
    lam = params.lam if lam is None else lam
    u = np.asarray(u)
    nu = norm(u)
    a = _uncontrolled_accel(x, params) + params.C * u / x.m
    H = p.p_r @ x.v + p.p_v @ a
    if conv is CostConvention.MinFuel:
        return H - (1.0 + params.b * p.p_m) * nu - (1.0 - lam) * nu * nu
    return H - params.b * p.p_m * nu


def costate_rhs(x: RocketState, p: Costate, u, params: ModelParams = ModelParams()) -> Costate:
    """Adjoint equations; drag couplings use the continuous extension at v = 0."""
    _check_mass(x)
    u = np.asarray(u)
    m = x.m
    G = gravity_jacobian(x.r, params)
    nv2 = x.v @ x.v
    if np.real(nv2) > 0:
        nv = np.sqrt(nv2)
        D = drag(x.r, x.v, params)
        dD_dr, dD_dv = drag_partials(x.r, x.v, params)
        pvv = p.p_v @ x.v
        c = pvv / (m * nv)
        dpr = c * dD_dr + G @ p.p_v
        dpv = -p.p_r + c * dD_dv + (D / m) * p.p_v / nv - (D / m) * pvv * x.v / nv**3
        dpm = (p.p_v @ (-D * x.v / (m * nv) + params.C * u / m)) / m
        dpm = dpm + c * drag_mass_partial(x.r, x.v, m, params)
    else:
        dpr = G @ p.p_v
        dpv = -p.p_r
        dpm = (p.p_v @ (params.C * u / m)) / m
    return Costate(dpr, dpv, dpm)


def switching(x: RocketState, p: Costate, conv: CostConvention = CostConvention.MinFuel,
              params: ModelParams = ModelParams()):
    sw = params.C * norm(p.p_v) / x.m - params.b * p.p_m
    return sw - 1.0 if conv is CostConvention.MinFuel else sw


def xi(x: RocketState, p: Costate, params: ModelParams = ModelParams()):
    """Time derivative of the switching function when u is collinear to p_v.

    Does not depend on the thrust magnitude.
    """
    nv = norm(x.v)
    if np.real(nv) == 0:
        raise ZeroVelocity("xi is undefined at v = 0")
    npv = norm(p.p_v)
    if np.real(npv) == 0:
        raise ZeroPv("xi is undefined at p_v = 0")
    m, b, C = x.m, params.b, params.C
    D = drag(x.r, x.v, params)
    _, dD_dv = drag_partials(x.r, x.v, params)
    dD_dm = drag_mass_partial(x.r, x.v, m, params)
    pvv = p.p_v @ x.v
    inner = (
        -(p.p_v @ p.p_r)
        + pvv * (dD_dv @ p.p_v) / (m * nv)
        + D * npv**2 / (m * nv)
        - D * pvv**2 / (m * nv**3)
    )
    return b * D * pvv / (m * m * nv) - b * dD_dm * pvv / (m * nv) + C / (m * npv) * inner


def extremal_field(y, alpha, params: ModelParams = ModelParams()) -> np.ndarray:
    """Physical-time derivative of the flat 14-vector with u = alpha * p_v/|p_v|."""
    x, p = split(y)
    npv = norm(p.p_v)
    if np.real(npv) > 0:
        u = alpha * p.p_v / npv
    else:
        u = np.zeros(3)
    dx = np.concatenate([x.v, _uncontrolled_accel(x, params) + params.C * u / x.m, [-params.b * alpha]])
    dp = costate_rhs(x, p, u, params)
    return np.concatenate([dx, dp.as_vector()])


def psi_ddot(x: RocketState, p: Costate, alpha, conv: CostConvention = CostConvention.MinFuel,
             params: ModelParams = ModelParams(), method: str = "complex", h: float | None = None):
    """Derivative of xi along the extremal field with thrust magnitude alpha.

    method="complex" is a complex-step directional derivative (exact to
    rounding); method="central" uses central differences whose displacement
    along the field has length 1e-6 * (1 + |y|).  The convention only shifts psi by a constant, so it
    does not enter.
    """
    y = pack(x, p)
    if np.real(norm(x.v)) == 0:
        raise ZeroVelocity("psi_ddot is undefined at v = 0")
    if np.real(norm(p.p_v)) == 0:
        raise ZeroPv("psi_ddot is undefined at p_v = 0")
    d = extremal_field(y, alpha, params)

    def xi_flat(z):
        xx, pp = split(z)
        return xi(xx, pp, params)

    if method == "complex":
        step = 1e-20 if h is None else h
        return np.imag(xi_flat(y + 1j * step * d)) / step
    if method == "central":
        step = 1e-6 * (1.0 + np.linalg.norm(y)) / max(np.linalg.norm(d), 1.0) if h is None else h
        return (xi_flat(y + step * d) - xi_flat(y - step * d)) / (2.0 * step)
    raise ValueError(f"unknown method {method!r}")


def singular_alpha_from_samples(a0: float, a1: float, eps_rel: float = 1e-9) -> float:
    """Solve the affine relation a0 + (a1 - a0) * alpha = 0."""
    A = a1 - a0
    if abs(A) < eps_rel * max(abs(a0), abs(a1), 1.0):
        raise DegenerateA(f"coefficient A={A:.3e} vanishes numerically")
    return -a0 / A


def singular_alpha(x: RocketState, p: Costate, conv: CostConvention = CostConvention.MinFuel,
                   params: ModelParams = ModelParams(), eps_rel: float = 1e-9) -> float:
    """Raw singular thrust magnitude making psi_ddot vanish (not clamped)."""
    a0 = psi_ddot(x, p, 0.0, conv, params)
    a1 = psi_ddot(x, p, 1.0, conv, params)
    return singular_alpha_from_samples(a0, a1, eps_rel)


def regularized_magnitude(psi, lam):
    """Maximizer of psi*rho - (1 - lam)*rho^2 over rho in [0, 1]."""
    if lam >= 1.0:
        return 1.0 if psi > 0 else 0.0
    return min(max(psi / (2.0 * (1.0 - lam)), 0.0), 1.0)


def control_law(x: RocketState, p: Costate, conv: CostConvention = CostConvention.MinFuel,
                mode: ControlMode = ControlMode.Bang, params: ModelParams = ModelParams(),
                tol_sw: float = 1e-6, diag: dict | None = None) -> np.ndarray:
    """Thrust vector from the maximum condition.

    For Singular mode the raw alpha is stored in diag["alpha_raw"] before
    clamping to [0, 1].  In Bang mode |psi| <= tol_sw is flagged in
    diag["near_switch"].
    """
    npv = norm(p.p_v)
    if mode is ControlMode.Singular:
        if np.real(npv) == 0:
            raise ZeroPv("singular control needs p_v != 0")
        a = singular_alpha(x, p, conv, params)
        if diag is not None:
            diag["alpha_raw"] = a
        return min(max(a, 0.0), 1.0) * p.p_v / npv
    if np.real(npv) == 0:
        return np.zeros(3)
    sw = switching(x, p, conv, params)
    if mode is ControlMode.Regularized:
        return regularized_magnitude(sw, params.lam) * p.p_v / npv
    if diag is not None:
        diag["near_switch"] = bool(abs(sw) <= tol_sw)
    return p.p_v / npv if sw > 0 else np.zeros(3)


def extremal_rhs(e: ExtremalPoint, conv: CostConvention = CostConvention.MinFuel,
                 mode: ControlMode = ControlMode.Bang, params: ModelParams = ModelParams()) -> np.ndarray:
    """Normalized-time derivative of (x, p, t_f, p_tf), a 16-vector.

    Everything is scaled by t_f; p_tf obeys dp_tf/ds = -H.
    """
    u = control_law(e.x, e.p, conv, mode, params)
    alpha = norm(u)
    y = pack(e.x, e.p)
    dy = extremal_field(y, alpha, params)
    # only the regularized law carries the quadratic running cost
    lam = params.lam if mode is ControlMode.Regularized else 1.0
    H = hamiltonian(e.x, e.p, u, conv, lam, params)
    return np.concatenate([e.t_f * dy, [0.0, -H]])


def degeneracy_check(e: ExtremalPoint | Costate, tol: float = 1e-9) -> bool:
    """True when p_r and p_v both vanish (a degenerate extremal)."""
    p = e.p if isinstance(e, ExtremalPoint) else e
    return bool(np.linalg.norm(p.p_r) + np.linalg.norm(p.p_v) < tol)
