"""Single shooting on prescribed arc structures, damped Newton with FD Jacobian."""
from __future__ import annotations

import enum
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import kernels as K
from .errors import (
    DegenerateExtremal,
    GoddardError,
    IntegrationFailed,
    LineSearchFailed,
    MaxIterationsExceeded,
    SingularJacobian,
    StructureViolation,
)
from .extremal import CostConvention, Costate, degeneracy_check
from .model import BoundaryConditions, ModelParams


class ArcKind(enum.Enum):
    MaxThrust = "max"
    Singular = "singular"
    NullThrust = "null"
    Regularized = "regularized"


_MODE = {
    ArcKind.Regularized: K.REG,
    ArcKind.MaxThrust: K.MAXT,
    ArcKind.NullThrust: K.NULLT,
    ArcKind.Singular: K.SING,
}


@dataclass(frozen=True)
class ArcStructure:
    """Ordered arc kinds; one normalized switching time between consecutive arcs.

    variant "start" imposes psi = dpsi/dt = 0 where a singular arc begins,
    "ends" imposes psi = 0 at both of its extremities.
    """

    arcs: tuple = (ArcKind.Regularized,)
    variant: str = "start"

    def __post_init__(self):
        object.__setattr__(self, "arcs", tuple(ArcKind(a) for a in self.arcs))
        self.validate()

    @property
    def n_switch(self) -> int:
        return len(self.arcs) - 1

    @property
    def n_unknowns(self) -> int:
        return 8 + self.n_switch

    def validate(self):
        a = self.arcs
        if not a:
            raise ValueError("empty arc structure")
        if ArcKind.Regularized in a and len(a) > 1:
            raise ValueError("a regularized arc spans the whole trajectory")
        if a[0] is ArcKind.Singular or a[-1] is ArcKind.Singular:
            raise ValueError("singular arcs must be interior")
        for x, y in zip(a, a[1:]):
            if x is y:
                raise ValueError("consecutive arcs must differ")
        if self.variant not in ("start", "ends"):
            raise ValueError("variant must be 'start' or 'ends'")

    @classmethod
    def reference(cls) -> "ArcStructure":
        return cls((ArcKind.MaxThrust, ArcKind.Singular, ArcKind.NullThrust))


@dataclass
class ShootingUnknowns:
    p_r0: np.ndarray
    p_v0: np.ndarray
    p_m0: float
    t_f: float
    t_switch: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p_r0, self.p_v0, [self.p_m0, self.t_f], self.t_switch])

    @classmethod
    def from_vector(cls, z) -> "ShootingUnknowns":
        z = np.asarray(z, dtype=float)
        return cls(z[0:3].copy(), z[3:6].copy(), float(z[6]), float(z[7]), z[8:].copy())

    def check(self):
        if not self.t_f > 0:
            raise StructureViolation("t_f must be positive")
        ts = np.concatenate([[0.0], self.t_switch, [1.0]])
        if np.any(np.diff(ts) <= 0):
            raise StructureViolation("switching times must increase strictly inside (0, 1)")


@dataclass
class IntegratorOptions:
    """method: 'adaptive' (Dormand-Prince), 'euler' or 'rk4' (regularized arcs only)."""

    method: str = "adaptive"
    n_steps: int = 25
    rtol: float = 1e-10
    atol: float = 1e-10
    capacity: int = 50000


@dataclass
class ArcTrace:
    """Raw output of one integration of the extremal along a structure."""

    y_end: np.ndarray
    y_starts: np.ndarray
    mesh: np.ndarray
    steps: int
    rejected: int
    alpha_min: float
    alpha_max: float


def _x0(bc: BoundaryConditions) -> np.ndarray:
    return np.concatenate([bc.r0, bc.v0, [bc.m0]])


def integrate_structure(z, structure: ArcStructure, params: ModelParams, bc: BoundaryConditions,
                        integ: IntegratorOptions = IntegratorOptions(), record: bool = False) -> ArcTrace:
    u = ShootingUnknowns.from_vector(z)
    u.check()
    par = K.pack_params(params)
    y0 = np.concatenate([_x0(bc), z[0:7]])
    modes = np.array([_MODE[a] for a in structure.arcs], dtype=np.int64)
    bounds = np.concatenate([[0.0], u.t_switch, [1.0]])
    if integ.method != "adaptive":
        if structure.arcs != (ArcKind.Regularized,):
            raise ValueError("fixed-step integration is only wired for the regularized structure")
        meth = 0 if integ.method == "euler" else 1
        yend = K.flow_fixed(y0, u.t_f, K.REG, par, integ.n_steps, meth)
        return ArcTrace(yend, y0[None, :].copy(), np.zeros((0, 17)), integ.n_steps, 0, np.nan, np.nan)
    rec = np.empty((integ.capacity if record else 0, 17))
    nrec = np.zeros(1, dtype=np.int64)
    ystarts = np.empty((len(modes), 14))
    stats = np.array([0.0, 0.0, np.inf, -np.inf, 0.0])
    yend = K.dopri_arcs(y0, u.t_f, modes, bounds, par, integ.rtol, integ.atol, rec, nrec, ystarts, stats)
    if stats[4] != 0.0:
        raise IntegrationFailed("step size underflow" if stats[4] == 1.0 else "non-finite extremal field")
    if not np.all(np.isfinite(yend)):
        raise IntegrationFailed("non-finite end point")
    return ArcTrace(yend, ystarts, rec[: nrec[0]].copy(), int(stats[0]), int(stats[1]), stats[2], stats[3])


def _switch_residuals(structure: ArcStructure, tr: ArcTrace, par) -> list:
    out = []
    arcs = structure.arcs
    for i in range(1, len(arcs)):
        y = tr.y_starts[i]
        if arcs[i] is ArcKind.Singular:
            out.append(K.switching(y, par))
        elif arcs[i - 1] is ArcKind.Singular and structure.variant == "start":
            out.append(K.xi(tr.y_starts[i - 1], par))
        else:
            out.append(K.switching(y, par))
    return out


def shooting_residual(z, structure: ArcStructure = ArcStructure(),
                      conv: CostConvention = CostConvention.MinFuel,
                      params: ModelParams = ModelParams(), bc: BoundaryConditions = BoundaryConditions(),
                      integ: IntegratorOptions = IntegratorOptions(), strict: bool = False) -> np.ndarray:
    """Terminal, transversality, free-time and switching residuals, in that order.

    With strict=True a raw singular thrust outside [-1e-6, 1 + 1e-6] raises
    StructureViolation; otherwise it is clamped silently (Newton iterates may
    wander through such regions).
    """
    if conv is not CostConvention.MinFuel:
        raise NotImplementedError("shooting is implemented for the min-fuel convention")
    z = np.asarray(z, dtype=float)
    if z.size != structure.n_unknowns:
        raise ValueError(f"expected {structure.n_unknowns} unknowns, got {z.size}")
    par = K.pack_params(params)
    if structure.arcs == (ArcKind.Regularized,) and integ.method != "adaptive":
        if not z[7] > 0:
            raise StructureViolation("t_f must be positive")
        meth = 0 if integ.method == "euler" else 1
        return K.regularized_residual(z, par, integ.n_steps, meth, _x0(bc), bc.r_f)
    tr = integrate_structure(z, structure, params, bc, integ)
    if strict and ArcKind.Singular in structure.arcs:
        if not (tr.alpha_min >= -1e-6 and tr.alpha_max <= 1 + 1e-6):
            raise StructureViolation(f"singular thrust range [{tr.alpha_min:.3g}, {tr.alpha_max:.3g}]")
    yf = tr.y_end
    last = structure.arcs[-1]
    alpha_f, _ = K.mode_alpha(yf, _MODE[last], par)
    quad = 1.0 - params.lam if last is ArcKind.Regularized else 0.0
    res = [yf[0:3] - bc.r_f, yf[10:13], [yf[13]], [K.ham(yf, alpha_f, par, quad)]]
    res.append(_switch_residuals(structure, tr, par))
    return np.concatenate(res)


# ---------------------------------------------------------------- Newton


@dataclass
class NewtonOptions:
    max_iter: int = 100
    tol: float = 5e-4
    fd_step: float = 1e-7
    damping: float = 0.5
    max_halvings: int = 30
    threads: int | None = None
    verbose: bool = False


@dataclass
class NewtonDiagnostics:
    residual_norm: float
    iterations: int
    condition: float
    converged: bool
    history: list = field(default_factory=list)


def default_threads() -> int:
    env = os.environ.get("GODDARD_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fd_jacobian(F: Callable, z, Fz, fd_step: float = 1e-7, threads: int = 1) -> np.ndarray:
    """Forward-difference Jacobian, column step fd_step*(1+|z_i|)."""
    n = z.size

    def column(i):
        h = fd_step * (1.0 + abs(z[i]))
        zp = z.copy()
        zp[i] += h
        return (np.asarray(F(zp)) - Fz) / h

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            cols = list(ex.map(column, range(n)))
    else:
        cols = [column(i) for i in range(n)]
    return np.column_stack(cols)


def _safe_norm(F, z):
    try:
        f = np.asarray(F(z), dtype=float)
    except (GoddardError, ValueError, FloatingPointError, ZeroDivisionError):
        return None, np.inf
    if not np.all(np.isfinite(f)):
        return None, np.inf
    return f, float(np.linalg.norm(f))


def newton_solve(F: Callable, z0, opts: NewtonOptions = NewtonOptions()):
    """Damped Newton iteration; returns (z, NewtonDiagnostics).

    Errors carry the partial diagnostics in their ``diagnostics`` attribute.
    """
    z = np.array(z0, dtype=float).ravel()
    threads = opts.threads or default_threads()
    f, nf = _safe_norm(F, z)
    if f is None:
        raise IntegrationFailed("residual undefined at the starting point")
    hist = [nf]
    cond = np.nan
    for it in range(opts.max_iter + 1):
        if nf <= opts.tol:
            return z, NewtonDiagnostics(nf, it, cond, True, hist)
        if it == opts.max_iter:
            break
        J = fd_jacobian(F, z, f, opts.fd_step, threads)
        if not np.all(np.isfinite(J)):
            err = SingularJacobian("non-finite Jacobian")
            err.diagnostics = NewtonDiagnostics(nf, it, np.inf, False, hist)
            raise err
        cond = float(np.linalg.cond(J))
        try:
            lu = scipy.linalg.lu_factor(J, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SingularJacobian(str(exc)) from exc
        if np.any(np.diag(lu[0]) == 0) or not np.isfinite(cond) or cond > 1e17:
            err = SingularJacobian(f"Jacobian condition {cond:.3e}")
            err.diagnostics = NewtonDiagnostics(nf, it, cond, False, hist)
            raise err
        dz = -scipy.linalg.lu_solve(lu, f, check_finite=False)
        t = 1.0
        for _ in range(opts.max_halvings + 1):
            zt = z + t * dz
            ft, nt = _safe_norm(F, zt)
            if nt < nf:
                break
            t *= opts.damping
        else:
            err = LineSearchFailed(f"no decrease after {opts.max_halvings} halvings (|F|={nf:.3e})")
            err.diagnostics = NewtonDiagnostics(nf, it, cond, False, hist)
            raise err
        z, f, nf = zt, ft, nt
        hist.append(nf)
        if opts.verbose:
            print(f"newton {it + 1}: |F|={nf:.3e} step={t:.3g} cond={cond:.2e}")
    err = MaxIterationsExceeded(f"|F|={nf:.3e} after {opts.max_iter} iterations")
    err.diagnostics = NewtonDiagnostics(nf, opts.max_iter, cond, False, hist)
    raise err


# ------------------------------------------------------------ solutions


@dataclass
class ArcReport:
    kind: ArcKind
    s_start: float
    s_end: float
    psi_min: float
    psi_max: float
    alpha_min: float
    alpha_max: float


@dataclass
class Solution:
    """Converged extremal with dense traces sampled on the integrator mesh."""

    structure: ArcStructure
    z: np.ndarray
    residual: np.ndarray
    params: ModelParams
    bc: BoundaryConditions
    s: np.ndarray
    y: np.ndarray
    alpha_raw: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    psi: np.ndarray
    H: np.ndarray
    arcs: list
    newton: NewtonDiagnostics | None = None

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))

    @property
    def t_f(self) -> float:
        return float(self.z[7])

    @property
    def t(self) -> np.ndarray:
        return self.s * self.t_f

    @property
    def switching_times(self) -> np.ndarray:
        return self.z[8:] * self.t_f

    @property
    def final_mass(self) -> float:
        return float(self.y[-1, 6])

    @property
    def objective(self) -> float:
        """Consumed mass m0 - m(t_f), i.e. b times the integral of |u|."""
        return float(self.bc.m0 - self.final_mass)

    @property
    def thrust_integral(self) -> float:
        return self.objective / self.params.b


def classify_arcs(sol_like, tol_sw: float = 1e-6, deg_tol: float = 1e-9) -> list:
    """Label each mesh point max / singular / null from psi and thrust.

    Refuses (DegenerateExtremal) when p_r and p_v vanish, since the switching
    function then carries no information.
    """
    y = sol_like.y
    for row in (y[0], y[-1]):
        if degeneracy_check(Costate(row[7:10], row[10:13], row[13]), deg_tol):
            raise DegenerateExtremal("p_r = p_v = 0: extremal is degenerate, arcs cannot be classified")
    labels = []
    for ps, a in zip(sol_like.psi, sol_like.alpha):
        if abs(ps) <= tol_sw and 0.0 < a < 1.0:
            labels.append(ArcKind.Singular)
        elif a >= 1.0 - 1e-12:
            labels.append(ArcKind.MaxThrust)
        elif a <= 1e-12:
            labels.append(ArcKind.NullThrust)
        else:
            labels.append(ArcKind.Singular if abs(ps) <= 1e-3 else ArcKind.Regularized)
    return labels


def _dense_mesh(z, structure, par, bc, integ, bounds, dense):
    """Adaptive mesh with extra breakpoints: each arc is cut into equal pieces of the same mode."""
    modes, cuts, owner = [], [0.0], []
    for i, kind in enumerate(structure.arcs):
        a, b = bounds[i], bounds[i + 1]
        n = max(1, int(np.ceil(dense * (b - a)))) if dense else 1
        for j in range(n):
            modes.append(_MODE[kind])
            cuts.append(a + (b - a) * (j + 1) / n)
            owner.append(i)
        cuts[-1] = b
    y0 = np.concatenate([_x0(bc), z[0:7]])
    rec = np.empty((integ.capacity + 2 * len(modes), 17))
    nrec = np.zeros(1, dtype=np.int64)
    ystarts = np.empty((len(modes), 14))
    stats = np.array([0.0, 0.0, np.inf, -np.inf, 0.0])
    K.dopri_arcs(y0, z[7], np.array(modes, dtype=np.int64), np.array(cuts), par, integ.rtol, integ.atol,
                 rec, nrec, ystarts, stats)
    if stats[4] != 0.0:
        raise IntegrationFailed("integration failed while building traces")
    mesh = rec[: nrec[0]].copy()
    piece = mesh[:, 16].astype(int)
    # drop the duplicated start row of each piece after the first of its arc
    owner = np.array(owner)
    first = np.r_[True, owner[1:] != owner[:-1]]
    is_start = np.r_[True, np.diff(piece) != 0]
    keep = ~is_start | first[piece]
    return mesh[keep], owner[piece[keep]]


def build_solution(z, structure: ArcStructure, params: ModelParams, bc: BoundaryConditions,
                   integ: IntegratorOptions = IntegratorOptions(), newton: NewtonDiagnostics | None = None,
                   strict: bool = True, dense: int = 400) -> Solution:
    """Residual plus traces; `dense` forces at least that many samples per unit of s."""
    z = np.asarray(z, dtype=float)
    u0 = ShootingUnknowns.from_vector(z)
    if degeneracy_check(Costate(u0.p_r0, u0.p_v0, u0.p_m0)):
        raise DegenerateExtremal("initial p_r = p_v = 0: degenerate extremal")
    res = shooting_residual(z, structure, CostConvention.MinFuel, params, bc, integ, strict=strict)
    par = K.pack_params(params)
    bounds = np.concatenate([[0.0], u0.t_switch, [1.0]])
    mesh, arc_idx = _dense_mesh(z, structure, par, bc, integ, bounds, dense)
    s = mesh[:, 0]
    y = mesh[:, 1:15]
    raw = mesh[:, 15]
    alpha = np.empty(len(s))
    H = np.empty(len(s))
    psi = np.empty(len(s))
    u = np.zeros((len(s), 3))
    for j in range(len(s)):
        kind = structure.arcs[arc_idx[j]]
        a, _ = K.mode_alpha(y[j], _MODE[kind], par)
        alpha[j] = a
        quad = 1.0 - params.lam if kind is ArcKind.Regularized else 0.0
        H[j] = K.ham(y[j], a, par, quad)
        psi[j] = K.switching(y[j], par)
        npv = np.linalg.norm(y[j, 10:13])
        if npv > 0:
            u[j] = a * y[j, 10:13] / npv
    reports = []
    for i, kind in enumerate(structure.arcs):
        sel = arc_idx == i
        rr = raw[sel] if kind is ArcKind.Singular else np.array([np.nan])
        reports.append(ArcReport(kind, bounds[i], bounds[i + 1], float(psi[sel].min()), float(psi[sel].max()),
                                 float(np.nanmin(rr)) if kind is ArcKind.Singular else float(alpha[sel].min()),
                                 float(np.nanmax(rr)) if kind is ArcKind.Singular else float(alpha[sel].max())))
    return Solution(structure, z, res, params, bc, s, y, raw, alpha, u, psi, H, reports, newton)


def solve_indirect(structure: ArcStructure, conv: CostConvention, params: ModelParams, bc: BoundaryConditions,
                   z0, newton_opts: NewtonOptions = NewtonOptions(),
                   integ: IntegratorOptions = IntegratorOptions()) -> Solution:
    """Newton-solve the shooting equations from z0 and package the extremal."""
    z0 = np.asarray(z0, dtype=float)
    if z0.size != structure.n_unknowns:
        raise ValueError(f"structure needs {structure.n_unknowns} unknowns, z0 has {z0.size}")

    def F(z):
        return shooting_residual(z, structure, conv, params, bc, integ)

    z, diag = newton_solve(F, z0, newton_opts)
    return build_solution(z, structure, params, bc, integ, diag)


# ------------------------------------------------- regularized refinement


def refine_regularized(z, params: ModelParams, bc: BoundaryConditions,
                       ladder: tuple = (25, 100, 200, 400, 800, 1600),
                       newton_opts: NewtonOptions | None = None):
    """Re-solve the regularized shooting on successively finer Euler meshes.

    The coarse-mesh solution is a poor start for an accurate solve: the
    regularized flow at large lambda is unstable once the costate is slightly
    off (thrust stays on and the mass runs to zero), so the mesh is refined
    gradually.  A rung that fails keeps the previous iterate.  Returns the
    last iterate and a list of (n_steps, residual norm or None) pairs.
    """
    newton_opts = newton_opts or NewtonOptions(tol=1e-10, max_iter=50)
    st = ArcStructure([ArcKind.Regularized])
    z = np.asarray(z, dtype=float).copy()
    log = []
    for n in ladder:
        io = IntegratorOptions(method="euler", n_steps=int(n))

        def F(q, io=io):
            return shooting_residual(q, st, CostConvention.MinFuel, params, bc, io)

        try:
            z, diag = newton_solve(F, z, newton_opts)
            log.append((int(n), diag.residual_norm))
        except GoddardError:
            log.append((int(n), None))
    if all(r is None for _, r in log):
        raise StructureViolation("regularized refinement failed on every mesh")
    return z, log


# ------------------------------------------------------- singular seeding


def thrust_profile(z_reg, params: ModelParams, bc: BoundaryConditions, n: int = 2001):
    """Regularized thrust magnitude rho(s) on a uniform grid (RK4 between nodes)."""
    par = K.pack_params(params)
    y = np.concatenate([_x0(bc), np.asarray(z_reg[0:7], dtype=float)])
    s = np.linspace(0.0, 1.0, n)
    rho = np.empty(n)
    for j in range(n):
        rho[j] = K.mode_alpha(y, K.REG, par)[0]
        if j < n - 1:
            y = _rk4_step(y, z_reg[7], par, s[1] - s[0])
    return s, rho


def _rk4_step(y, tf, par, h):
    return K.flow_fixed(y, tf * h, K.REG, par, 1, 1)


def singular_seed_candidates(z_reg, params: ModelParams, bc: BoundaryConditions) -> list:
    """Ordered (s1, s2) guesses for [MaxThrust, Singular, NullThrust] read off a regularized profile.

    The regularized thrust drops from 1 to an interior plateau and then to 0.
    s1 is taken where rho comes within a quarter of the way from the
    plateau level to 1, s2 where rho falls to a given fraction of that level.
    Fallbacks spread s2 towards the end of the burn since the Newton basin is
    much wider on that side.
    """
    s, rho = thrust_profile(z_reg, params, bc)
    inner = rho[(rho > 1e-3) & (rho < 1 - 1e-3)]
    if inner.size == 0:
        raise StructureViolation("regularized profile has no intermediate thrust")
    level = float(np.median(inner))
    s1 = float(s[np.argmax(rho <= level + 0.25 * (1.0 - level))])
    last_on = float(s[np.nonzero(rho > 1e-3)[0][-1]])
    cands = []
    for frac in (0.75, 0.5, 0.25):
        below = np.nonzero((rho < frac * level) & (s > s1))[0]
        if below.size:
            cands.append((s1, float(s[below[0]])))
    cands.append((s1, 0.5 * (s1 + last_on)))
    cands.append((s1, last_on))
    out = []
    for c in cands:
        if 0 < c[0] < c[1] < 1 and c not in out:
            out.append(c)
    return out


def solve_singular_from_regularized(z_reg, params: ModelParams, bc: BoundaryConditions,
                                    structure: ArcStructure | None = None,
                                    newton_opts: NewtonOptions | None = None,
                                    integ: IntegratorOptions = IntegratorOptions()) -> Solution:
    """Seed the bang-singular-null shooting from a regularized solution, trying candidates in order."""
    structure = structure or ArcStructure.reference()
    newton_opts = newton_opts or NewtonOptions(max_iter=25, tol=1e-9)
    p = params.with_(lam=1.0)
    errors = []
    for s1, s2 in singular_seed_candidates(z_reg, params, bc):
        z0 = np.concatenate([np.asarray(z_reg[:8], dtype=float), [s1, s2]])
        try:
            sol = solve_indirect(structure, CostConvention.MinFuel, p, bc, z0, newton_opts, integ)
        except GoddardError as exc:
            errors.append(f"seed ({s1:.3f}, {s2:.3f}): {exc}")
            continue
        return sol
    raise StructureViolation("no seed converged: " + "; ".join(errors))
