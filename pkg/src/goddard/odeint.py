"""Explicit integrators: fixed-step Euler and RK4, adaptive Dormand-Prince 5(4)."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteRhs, StepSizeUnderflow


class Method(enum.Enum):
    Euler = "euler"
    RK4 = "rk4"
    AdaptiveRK = "adaptive"


@dataclass
class IvpSpec:
    rhs: Callable[[float, np.ndarray], np.ndarray]
    y0: np.ndarray
    span: tuple[float, float]
    method: Method = Method.RK4
    n_steps: int = 100
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    record: bool = False

    def __post_init__(self):
        s0, s1 = self.span
        if not s0 < s1:
            raise ValueError("span must be increasing")
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class IvpResult:
    y_end: np.ndarray
    trace: list = field(default_factory=list)
    steps_taken: int = 0
    rejected_steps: int = 0


def _eval(rhs, s, y):
    d = np.asarray(rhs(s, y))
    if not np.all(np.isfinite(d)):
        raise NonFiniteRhs(f"non-finite derivative at s={s}")
    return d


def _fixed(spec: IvpSpec) -> IvpResult:
    s0, s1 = spec.span
    h = (s1 - s0) / spec.n_steps
    y = np.array(spec.y0, dtype=float)
    trace = [(s0, y.copy())] if spec.record else []
    f = spec.rhs
    for i in range(spec.n_steps):
        s = s0 + i * h
        k1 = _eval(f, s, y)
        if spec.method is Method.Euler:
            y = y + h * k1
        else:
            k2 = _eval(f, s + h / 2, y + h / 2 * k1)
            k3 = _eval(f, s + h / 2, y + h / 2 * k2)
            k4 = _eval(f, s + h, y + h * k3)
            y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if spec.record:
            trace.append((s0 + (i + 1) * h, y.copy()))
    return IvpResult(y, trace, spec.n_steps, 0)


# Dormand-Prince coefficients
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = np.array([71 / 57600, 0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _adaptive(spec: IvpSpec) -> IvpResult:
    s0, s1 = spec.span
    f = spec.rhs
    y = np.array(spec.y0, dtype=float)
    span = s1 - s0
    hmin = 1e-14 * span
    h = 0.01 * span
    s = s0
    K = np.empty((7, y.size))
    K[0] = _eval(f, s, y)
    trace = [(s0, y.copy())] if spec.record else []
    acc = rej = 0
    while s < s1:
        h = min(h, s1 - s)
        for i in range(1, 7):
            K[i] = _eval(f, s + _C[i] * h, y + h * (np.asarray(_A[i]) @ K[:i]))
        yn = y + h * (_B @ K)
        # the 7th stage equals f at yn (first-same-as-last)
        err_vec = h * (_E @ K)
        scale = spec.abs_tol + spec.rel_tol * np.maximum(np.abs(y), np.abs(yn))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if err <= 1.0:
            s += h
            y = yn
            K[0] = K[6]
            acc += 1
            if spec.record:
                trace.append((s, y.copy()))
            h *= min(5.0, max(0.2, 0.9 * err ** -0.2)) if err > 0 else 5.0
        else:
            rej += 1
            h *= max(0.1, 0.9 * err ** -0.2)
        if h < hmin and s < s1:
            raise StepSizeUnderflow(f"step {h:.3e} below {hmin:.3e} at s={s}")
    return IvpResult(y, trace, acc, rej)


def integrate(spec: IvpSpec) -> IvpResult:
    """Integrate spec.rhs from spec.y0 over spec.span."""
    if spec.method is Method.AdaptiveRK:
        return _adaptive(spec)
    return _fixed(spec)


def integrate_arc_sequence(arcs: Sequence[tuple[Callable, tuple[float, float]]], y0,
                           method: Method = Method.AdaptiveRK, n_steps: int = 100,
                           abs_tol: float = 1e-8, rel_tol: float = 1e-8,
                           record: bool = False) -> list[IvpResult]:
    """Integrate consecutive arcs, each starting where the previous one stopped."""
    results = []
    y = np.array(y0, dtype=float)
    prev_end = None
    for rhs, span in arcs:
        if prev_end is not None and span[0] != prev_end:
            raise ValueError("arc spans must be contiguous")
        res = integrate(IvpSpec(rhs, y, span, method, n_steps, abs_tol, rel_tol, record))
        results.append(res)
        y = res.y_end
        prev_end = span[1]
    return results
