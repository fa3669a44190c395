"""Direct transcription cross-check and the on-off (bang-bang) comparator.

Control is piecewise constant and the state is propagated by classical RK4.
Each step k has a duration h_k, a thrust vector U_k and a magnitude sigma_k
(|U_k| = sigma_k); gradients come from the exact discrete adjoint of RK4.
The equality constraint r(t_f) = r_f is handled by an augmented Lagrangian
whose inner problems are solved with L-BFGS-B.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize

from .errors import GridMismatch, InfeasibleStagnation, MaxIterations
from .model import BoundaryConditions, ModelParams

# ------------------------------------------------------------ kernels


@njit(cache=True)
def _f(x, U, sig, par, out):
    C = par[0]; b = par[1]; g0 = par[2]; KD = par[3]; k = par[4]
    nr = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    nv = np.sqrt(x[3] * x[3] + x[4] * x[4] + x[5] * x[5])
    E = KD * np.exp(-k * (nr - 1.0))
    m = x[6]
    nr3 = nr * nr * nr
    for i in range(3):
        out[i] = x[3 + i]
        out[3 + i] = -E * nv * x[3 + i] / m - g0 * x[i] / nr3 + C * U[i] / m
    out[6] = -b * sig


@njit(cache=True)
def _fT(x, U, a, par, gx, gU):
    """gx = (df/dx)^T a and gU = (df/dU)^T a; d/dsigma is -b*a[6]."""
    C = par[0]; g0 = par[2]; KD = par[3]; k = par[4]
    nr = np.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    nv = np.sqrt(x[3] * x[3] + x[4] * x[4] + x[5] * x[5])
    E = KD * np.exp(-k * (nr - 1.0))
    m = x[6]
    va = x[3] * a[3] + x[4] * a[4] + x[5] * a[5]
    ra = x[0] * a[3] + x[1] * a[4] + x[2] * a[5]
    nr3 = nr * nr * nr
    nr5 = nr3 * nr * nr
    ua = U[0] * a[3] + U[1] * a[4] + U[2] * a[5]
    for i in range(3):
        # gravity Jacobian G = g0 (I/|r|^3 - 3 r r^T/|r|^5), symmetric
        Ga = g0 * (a[3 + i] / nr3 - 3.0 * x[i] * ra / nr5)
        gx[i] = k * E * nv * va * x[i] / (m * nr) - Ga
        if nv > 0.0:
            gx[3 + i] = a[i] - E / m * (nv * a[3 + i] + x[3 + i] * va / nv)
        else:
            gx[3 + i] = a[i]
        gU[i] = C * a[3 + i] / m
    gx[6] = E * nv * va / (m * m) - C * ua / (m * m)


@njit(cache=True)
def rk4_forward(x0, h, U, sig, par, X):
    """Propagate x0 through len(h) RK4 steps; X[k] stores the state before step k."""
    n = h.shape[0]
    x = x0.copy()
    k1 = np.empty(7); k2 = np.empty(7); k3 = np.empty(7); k4 = np.empty(7); t = np.empty(7)
    for s in range(n):
        X[s] = x
        hs = h[s]
        _f(x, U[s], sig[s], par, k1)
        for j in range(7):
            t[j] = x[j] + 0.5 * hs * k1[j]
        _f(t, U[s], sig[s], par, k2)
        for j in range(7):
            t[j] = x[j] + 0.5 * hs * k2[j]
        _f(t, U[s], sig[s], par, k3)
        for j in range(7):
            t[j] = x[j] + hs * k3[j]
        _f(t, U[s], sig[s], par, k4)
        for j in range(7):
            x[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    X[n] = x
    return x


@njit(cache=True)
def rk4_adjoint(X, h, U, sig, par, xbar_end, hbar, Ubar, sbar):
    """Reverse sweep: gradients of <xbar_end, x_N> with respect to h, U and sigma."""
    n = h.shape[0]
    lam = xbar_end.copy()
    k1 = np.empty(7); k2 = np.empty(7); k3 = np.empty(7)
    y2 = np.empty(7); y3 = np.empty(7); y4 = np.empty(7)
    kb1 = np.empty(7); kb2 = np.empty(7); kb3 = np.empty(7); kb4 = np.empty(7)
    gx = np.empty(7); gU = np.empty(3); k4 = np.empty(7)
    for s in range(n - 1, -1, -1):
        x = X[s]
        hs = h[s]
        u = U[s]
        sg = sig[s]
        _f(x, u, sg, par, k1)
        for j in range(7):
            y2[j] = x[j] + 0.5 * hs * k1[j]
        _f(y2, u, sg, par, k2)
        for j in range(7):
            y3[j] = x[j] + 0.5 * hs * k2[j]
        _f(y3, u, sg, par, k3)
        for j in range(7):
            y4[j] = x[j] + hs * k3[j]
        _f(y4, u, sg, par, k4)
        hb = 0.0
        for j in range(7):
            hb += lam[j] * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) / 6.0
            kb4[j] = hs / 6.0 * lam[j]
            kb3[j] = hs / 3.0 * lam[j]
            kb2[j] = hs / 3.0 * lam[j]
            kb1[j] = hs / 6.0 * lam[j]
        ub0 = 0.0; ub1 = 0.0; ub2 = 0.0; sb = 0.0
        xb = lam.copy()
        # stage 4: y4 = x + h k3
        _fT(y4, u, kb4, par, gx, gU)
        ub0 += gU[0]; ub1 += gU[1]; ub2 += gU[2]; sb += -par[1] * kb4[6]
        for j in range(7):
            xb[j] += gx[j]
            kb3[j] += hs * gx[j]
            hb += gx[j] * k3[j]
        # stage 3: y3 = x + h/2 k2
        _fT(y3, u, kb3, par, gx, gU)
        ub0 += gU[0]; ub1 += gU[1]; ub2 += gU[2]; sb += -par[1] * kb3[6]
        for j in range(7):
            xb[j] += gx[j]
            kb2[j] += 0.5 * hs * gx[j]
            hb += 0.5 * gx[j] * k2[j]
        # stage 2: y2 = x + h/2 k1
        _fT(y2, u, kb2, par, gx, gU)
        ub0 += gU[0]; ub1 += gU[1]; ub2 += gU[2]; sb += -par[1] * kb2[6]
        for j in range(7):
            xb[j] += gx[j]
            kb1[j] += 0.5 * hs * gx[j]
            hb += 0.5 * gx[j] * k1[j]
        _fT(x, u, kb1, par, gx, gU)
        ub0 += gU[0]; ub1 += gU[1]; ub2 += gU[2]; sb += -par[1] * kb1[6]
        for j in range(7):
            xb[j] += gx[j]
        hbar[s] = hb
        Ubar[s, 0] = ub0; Ubar[s, 1] = ub1; Ubar[s, 2] = ub2
        sbar[s] = sb
        lam = xb
    return lam


def _par(params: ModelParams) -> np.ndarray:
    return np.array([params.C, params.b, params.g0, params.KD_eff, params.k])


def _x0(bc: BoundaryConditions) -> np.ndarray:
    return np.concatenate([bc.r0, bc.v0, [bc.m0]])


def propagate(bc: BoundaryConditions, params: ModelParams, h, U, sig):
    """States at all step boundaries, shape (len(h) + 1, 7)."""
    h = np.ascontiguousarray(h, dtype=float)
    X = np.empty((h.size + 1, 7))
    rk4_forward(_x0(bc), h, np.ascontiguousarray(U, dtype=float), np.ascontiguousarray(sig, dtype=float),
                _par(params), X)
    return X


# ----------------------------------------------------- augmented Lagrangian


@dataclass
class DirectOptions:
    N: int = 100
    rho0: float = 100.0
    rho_growth: float = 10.0
    max_outer: int = 30
    inner_maxiter: int = 3000
    feas_tol: float = 1e-9
    t_f0: float = 0.25
    sigma0: float = 0.5
    t_f_bounds: tuple = (0.05, 1.0)
    n_starts: int = 3
    seed: int = 0
    n_coast: int = 100


@dataclass
class DirectSolution:
    objective: float
    t_f: float
    t_nodes: np.ndarray
    U: np.ndarray
    sigma: np.ndarray
    X: np.ndarray
    constraint_norm: float
    outer_iterations: int
    constraint_history: list = field(default_factory=list)
    t_off: float | None = None
    kind: str = "direct"

    @property
    def final_mass(self) -> float:
        return float(self.X[-1, 6])

    @property
    def control_norm(self) -> np.ndarray:
        return np.linalg.norm(self.U, axis=1)

    def control_table(self) -> np.ndarray:
        """Rows (t_start, u_x, u_y, u_z, |u|) per control interval."""
        return np.column_stack([self.t_nodes[:-1], self.U, self.control_norm])


def _augmented_lagrangian(fun, x0, bounds, opts: DirectOptions):
    """Minimise f(x) s.t. c(x) = 0; fun(x) returns (f, grad f, c, Jc^T-product callable)."""
    x = x0.copy()
    mu = np.zeros(3)
    rho = opts.rho0
    hist = []
    best = np.inf
    stall = 0
    for outer in range(1, opts.max_outer + 1):
        def L(xx):
            f, g, c, jtv = fun(xx)
            w = mu + rho * c
            return f + mu @ c + 0.5 * rho * (c @ c), g + jtv(w)

        res = minimize(L, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.inner_maxiter, "maxcor": 30, "ftol": 1e-15, "gtol": 1e-10})
        x = res.x
        f, _, c, _ = fun(x)
        nc = float(np.linalg.norm(c))
        hist.append(nc)
        if nc <= opts.feas_tol:
            return x, outer, hist
        if nc < best * 0.999:
            best = nc
            stall = 0
        else:
            stall += 1
            if stall >= 5:
                raise InfeasibleStagnation(f"constraint norm stuck at {nc:.3e}")
        mu = mu + rho * c
        if len(hist) > 1 and nc > 0.25 * hist[-2]:
            rho *= opts.rho_growth
    raise MaxIterations(f"constraint norm {hist[-1]:.3e} after {opts.max_outer} outer iterations")


def _unit_rows(W):
    n = np.linalg.norm(W, axis=1)
    n = np.where(n > 0, n, 1.0)
    return W / n[:, None], n


def _direct_fun(bc, params, N):
    par = _par(params)
    x0 = _x0(bc)
    b = params.b

    def fun(x):
        sig = x[:N]
        W = x[N:4 * N].reshape(N, 3)
        tf = x[4 * N]
        What, wn = _unit_rows(W)
        U = sig[:, None] * What
        h = np.full(N, tf / N)
        X = np.empty((N + 1, 7))
        xf = rk4_forward(x0, h, U, sig, par, X)
        c = xf[0:3] - bc.r_f
        f = b * tf / N * sig.sum()
        g = np.zeros_like(x)
        g[:N] = b * tf / N
        g[4 * N] = b * sig.sum() / N

        def jtv(w):
            xbar = np.zeros(7)
            xbar[0:3] = w
            hb = np.empty(N); Ub = np.empty((N, 3)); sb = np.empty(N)
            rk4_adjoint(X, h, U, sig, par, xbar, hb, Ub, sb)
            out = np.zeros_like(x)
            out[:N] = sb + np.einsum("ij,ij->i", Ub, What)
            proj = Ub - np.einsum("ij,ij->i", Ub, What)[:, None] * What
            out[N:4 * N] = (sig[:, None] * proj / wn[:, None]).ravel()
            out[4 * N] = hb.sum() / N
            return out

        return f, g, c, jtv

    return fun


def solve_direct(N: int = 100, params: ModelParams = ModelParams(), bc: BoundaryConditions = BoundaryConditions(),
                 opts: DirectOptions | None = None) -> DirectSolution:
    """Piecewise-constant control transcription; objective is the consumed mass b * sum(h_k |u_k|)."""
    opts = opts or DirectOptions(N=N)
    if N < 2:
        raise ValueError("N must be at least 2")
    rng = np.random.default_rng(opts.seed)
    fun = _direct_fun(bc, params, N)
    radial = bc.r0 / np.linalg.norm(bc.r0)
    bounds = [(0.0, 1.0)] * N + [(None, None)] * (3 * N) + [opts.t_f_bounds]
    last = None
    for start in range(opts.n_starts):
        W0 = np.tile(radial, (N, 1))
        sig0 = np.full(N, opts.sigma0)
        tf0 = opts.t_f0
        if start:
            W0 = W0 + 0.05 * rng.standard_normal(W0.shape)
            sig0 = np.clip(sig0 + 0.1 * rng.standard_normal(N), 0, 1)
            tf0 = tf0 * (1 + 0.1 * rng.standard_normal())
        x0 = np.concatenate([sig0, W0.ravel(), [tf0]])
        try:
            x, outer, hist = _augmented_lagrangian(fun, x0, bounds, opts)
        except (InfeasibleStagnation, MaxIterations) as exc:
            last = exc
            continue
        sig = x[:N]
        What, _ = _unit_rows(x[N:4 * N].reshape(N, 3))
        tf = x[4 * N]
        U = sig[:, None] * What
        X = propagate(bc, params, np.full(N, tf / N), U, sig)
        c = X[-1, 0:3] - bc.r_f
        return DirectSolution(float(params.b * tf / N * sig.sum()), float(tf), np.linspace(0, tf, N + 1), U, sig, X,
                              float(np.linalg.norm(c)), outer, hist)
    raise last


def solve_onoff(params: ModelParams = ModelParams(), bc: BoundaryConditions = BoundaryConditions(),
                opts: DirectOptions | None = None, n_on: int = 60) -> DirectSolution:
    """Full thrust on (0, t_off), coast on (t_off, t_f); minimises the consumed mass b * t_off."""
    opts = opts or DirectOptions()
    par = _par(params)
    x0s = _x0(bc)
    b = params.b
    nc_ = opts.n_coast
    K = n_on + nc_

    def unpack(x):
        t_off, t_c = x[0], x[1]
        W = x[2:].reshape(n_on, 3)
        What, wn = _unit_rows(W)
        U = np.zeros((K, 3))
        U[:n_on] = What
        sig = np.zeros(K)
        sig[:n_on] = 1.0
        h = np.concatenate([np.full(n_on, t_off / n_on), np.full(nc_, t_c / nc_)])
        return t_off, t_c, What, wn, U, sig, h

    def fun(x):
        t_off, t_c, What, wn, U, sig, h = unpack(x)
        X = np.empty((K + 1, 7))
        xf = rk4_forward(x0s, h, U, sig, par, X)
        c = xf[0:3] - bc.r_f
        g = np.zeros_like(x)
        g[0] = b

        def jtv(w):
            xbar = np.zeros(7)
            xbar[0:3] = w
            hb = np.empty(K); Ub = np.empty((K, 3)); sb = np.empty(K)
            rk4_adjoint(X, h, U, sig, par, xbar, hb, Ub, sb)
            out = np.zeros_like(x)
            out[0] = hb[:n_on].sum() / n_on
            out[1] = hb[n_on:].sum() / nc_
            Uo = Ub[:n_on]
            proj = Uo - np.einsum("ij,ij->i", Uo, What)[:, None] * What
            out[2:] = (proj / wn[:, None]).ravel()
            return out

        return b * t_off, g, c, jtv

    radial = bc.r0 / np.linalg.norm(bc.r0)
    x0 = np.concatenate([[0.06, 0.15], np.tile(radial, n_on)])
    bounds = [(1e-4, 1.0), (0.0, 1.0)] + [(None, None)] * (3 * n_on)
    x, outer, hist = _augmented_lagrangian(fun, x0, bounds, opts)
    t_off, t_c, What, wn, U, sig, h = unpack(x)
    X = propagate(bc, params, h, U, sig)
    t_nodes = np.concatenate([[0.0], np.cumsum(h)])
    c = X[-1, 0:3] - bc.r_f
    return DirectSolution(float(b * t_off), float(t_off + t_c), t_nodes, U, sig, X, float(np.linalg.norm(c)),
                          outer, hist, t_off=float(t_off), kind="onoff")


# ----------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    objectives: dict
    t_f: dict
    objective_deltas: dict
    t_f_deltas: dict
    control_sup_distance: dict
    relative_loss_onoff: float


def _profile(sol, grid):
    """Control norm of a solution on a physical-time grid (zero after its t_f)."""
    if hasattr(sol, "t_nodes"):
        t = sol.t_nodes
        nu = sol.control_norm
        idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(nu) - 1)
        out = nu[idx]
    else:
        t = sol.t
        out = np.interp(grid, t, sol.alpha)
        tf = sol.t_f
    tf = sol.t_f
    return np.where(grid <= tf, out, 0.0)


def compare(indirect, direct, onoff, n_grid: int = 2001) -> ComparisonReport:
    sols = {"indirect": indirect, "direct": direct, "onoff": onoff}
    for name, s in sols.items():
        if s is None:
            raise GridMismatch(f"missing {name} solution")
    tmax = max(s.t_f for s in sols.values())
    if not np.isfinite(tmax) or tmax <= 0:
        raise GridMismatch("solutions have no common time grid")
    grid = np.linspace(0.0, tmax, n_grid)
    prof = {k: _profile(s, grid) for k, s in sols.items()}
    obj = {k: s.objective for k, s in sols.items()}
    tf = {k: s.t_f for k, s in sols.items()}
    return ComparisonReport(
        objectives=obj,
        t_f=tf,
        objective_deltas={"direct-indirect": obj["direct"] - obj["indirect"],
                          "onoff-indirect": obj["onoff"] - obj["indirect"]},
        t_f_deltas={"direct-indirect": tf["direct"] - tf["indirect"], "onoff-indirect": tf["onoff"] - tf["indirect"]},
        control_sup_distance={"direct-indirect": float(np.abs(prof["direct"] - prof["indirect"]).max()),
                              "onoff-indirect": float(np.abs(prof["onoff"] - prof["indirect"]).max())},
        relative_loss_onoff=(obj["onoff"] - obj["indirect"]) / obj["indirect"],
    )


def three_phase_shape(t_nodes, unorm, t_f, hi: float = 0.95, lo: float = 0.05,
                      band: tuple = (0.1, 0.9), min_fraction: float = 0.2) -> dict:
    """Check the full / intermediate / off pattern of a piecewise-constant control-norm profile.

    Plateaus: a leading run with |u| >= hi, the longest run inside `band`,
    and a trailing run with |u| <= lo.  They must appear in that order;
    single transition intervals between them are tolerated.
    """
    unorm = np.asarray(unorm)
    dt = np.diff(t_nodes)
    n = unorm.size
    lead = 0
    while lead < n and unorm[lead] >= hi:
        lead += 1
    trail = n
    while trail > 0 and unorm[trail - 1] <= lo:
        trail -= 1
    inside = (unorm > band[0]) & (unorm < band[1])
    best = cur = 0.0
    start = best_start = best_end = -1
    for i, (flag, d) in enumerate(zip(inside, dt)):
        if flag:
            if cur == 0.0:
                start = i
            cur += d
            if cur > best:
                best, best_start, best_end = cur, start, i
        else:
            cur = 0.0
    frac = best / t_f
    ordered = best_start >= lead and 0 <= best_end < trail
    first = lead > 0
    lastv = trail < n
    return {"initial_full": bool(first), "terminal_off": bool(lastv), "interior_fraction": float(frac),
            "ordered": bool(ordered), "ok": bool(first and lastv and frac >= min_fraction and ordered)}
