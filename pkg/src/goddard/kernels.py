"""Compiled fast paths for the extremal flow.

These mirror goddard.extremal (the readable reference) and are cross-checked
against it in the tests.  Parameters travel as a float array
par = (C, b, g0, K_D * theta, k, lam).

Arc mode codes: 0 regularized, 1 maximal thrust, 2 null thrust, 3 singular.
"""
import numpy as np
from numba import njit

REG, MAXT, NULLT, SING = 0, 1, 2, 3
CS_STEP = 1e-20


def pack_params(p) -> np.ndarray:
    return np.array([p.C, p.b, p.g0, p.KD_eff, p.k, p.lam])


@njit(cache=True, nogil=True)
def field(y, alpha, par, out):
    """Physical-time extremal field with u = alpha * p_v/|p_v|; real or complex y."""
    C = par[0]; b = par[1]; g0 = par[2]; KD = par[3]; k = par[4]
    nr = np.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    nv = np.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    npv = np.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    m = y[6]
    E = KD * np.exp(-k * (nr - 1.0))
    D = E * nv * nv
    pvv = y[10] * y[3] + y[11] * y[4] + y[12] * y[5]
    rpv = y[0] * y[10] + y[1] * y[11] + y[2] * y[12]
    nr3 = nr * nr * nr
    nr5 = nr3 * nr * nr
    havev = nv.real > 0.0
    havepv = npv.real > 0.0
    pu = alpha * npv
    for i in range(3):
        ui = alpha * y[10 + i] / npv if havepv else 0.0 * y[10 + i]
        out[i] = y[3 + i]
        out[3 + i] = -E * nv * y[3 + i] / m - g0 * y[i] / nr3 + C * ui / m
        gpv = g0 * (y[10 + i] / nr3 - 3.0 * y[i] * rpv / nr5)
        if havev:
            out[7 + i] = pvv / (nv * m) * (-k * D * y[i] / nr) + gpv
            out[10 + i] = (-y[7 + i] + (pvv / (nv * m)) * 2.0 * D * y[3 + i] / (nv * nv)
                           + D / m * y[10 + i] / nv - D / m * pvv * y[3 + i] / (nv * nv * nv))
        else:
            out[7 + i] = gpv
            out[10 + i] = -y[7 + i]
    out[6] = -b * alpha
    out[13] = (-E * nv * pvv / m + C * pu / m) / m


@njit(cache=True, nogil=True)
def switching(y, par):
    npv = np.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    return par[0] * npv / y[6] - (1.0 + par[1] * y[13])


@njit(cache=True, nogil=True)
def xi(y, par):
    C = par[0]; b = par[1]; KD = par[3]; k = par[4]
    nr = np.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    nv = np.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    npv = np.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    m = y[6]
    D = KD * nv * nv * np.exp(-k * (nr - 1.0))
    pvv = y[10] * y[3] + y[11] * y[4] + y[12] * y[5]
    pvpr = y[10] * y[7] + y[11] * y[8] + y[12] * y[9]
    # <dD/dv, p_v> = 2 D <v, p_v> / |v|^2
    dDv_pv = 2.0 * D * pvv / (nv * nv)
    inner = -pvpr + pvv * dDv_pv / (m * nv) + D * npv * npv / (m * nv) - D * pvv * pvv / (m * nv * nv * nv)
    return b * D * pvv / (m * m * nv) + C / (m * npv) * inner


@njit(cache=True, nogil=True)
def psi_ddot(y, alpha, par):
    """Complex-step derivative of xi along the field with thrust alpha."""
    d = np.empty(14)
    field(y, alpha, par, d)
    yc = np.empty(14, dtype=np.complex128)
    for i in range(14):
        yc[i] = y[i] + 1j * CS_STEP * d[i]
    return xi(yc, par).imag / CS_STEP


@njit(cache=True, nogil=True)
def singular_alpha(y, par):
    a0 = psi_ddot(y, 0.0, par)
    a1 = psi_ddot(y, 1.0, par)
    A = a1 - a0
    if abs(A) < 1e-9 * max(abs(a0), abs(a1), 1.0):
        return np.nan
    return -a0 / A


@njit(cache=True, nogil=True)
def mode_alpha(y, mode, par):
    """Thrust magnitude (clamped) and raw value for an arc mode."""
    if mode == MAXT:
        return 1.0, 1.0
    if mode == NULLT:
        return 0.0, 0.0
    if mode == SING:
        a = singular_alpha(y, par)
        if a != a:
            return 0.0, a
        return min(max(a, 0.0), 1.0), a
    lam = par[5]
    npv = np.sqrt(y[10] * y[10] + y[11] * y[11] + y[12] * y[12])
    if npv == 0.0:
        return 0.0, 0.0
    ps = switching(y, par)
    if lam >= 1.0:
        rho = 1.0 if ps > 0 else 0.0
    else:
        rho = min(max(ps / (2.0 * (1.0 - lam)), 0.0), 1.0)
    return rho, rho


@njit(cache=True, nogil=True)
def ham(y, alpha, par, quad):
    """<p_r,v> + <p_v, a(u)> - (1 + b p_m)|u| - quad*|u|^2 with |u| = alpha."""
    KD = par[3]; k = par[4]; g0 = par[2]
    nr = np.sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
    nv = np.sqrt(y[3] * y[3] + y[4] * y[4] + y[5] * y[5])
    E = KD * np.exp(-k * (nr - 1.0))
    nr3 = nr * nr * nr
    H = 0.0
    for i in range(3):
        H += y[7 + i] * y[3 + i] + y[10 + i] * (-E * nv * y[3 + i] / y[6] - g0 * y[i] / nr3)
    return H + alpha * switching(y, par) - quad * alpha * alpha


@njit(cache=True, nogil=True)
def rhs_mode(y, mode, tf, par, out):
    """Normalized-time field for an arc mode; returns the raw thrust magnitude."""
    a, raw = mode_alpha(y, mode, par)
    field(y, a, par, out)
    for i in range(14):
        out[i] *= tf
    return raw


@njit(cache=True, nogil=True)
def flow_fixed(y0, tf, mode, par, N, method):
    """Fixed-step integration over s in [0, 1]; method 0 Euler, 1 RK4."""
    y = y0.copy()
    h = 1.0 / N
    k1 = np.empty(14); k2 = np.empty(14); k3 = np.empty(14); k4 = np.empty(14); t = np.empty(14)
    for _ in range(N):
        rhs_mode(y, mode, tf, par, k1)
        if method == 0:
            for j in range(14):
                y[j] += h * k1[j]
            continue
        for j in range(14):
            t[j] = y[j] + 0.5 * h * k1[j]
        rhs_mode(t, mode, tf, par, k2)
        for j in range(14):
            t[j] = y[j] + 0.5 * h * k2[j]
        rhs_mode(t, mode, tf, par, k3)
        for j in range(14):
            t[j] = y[j] + h * k3[j]
        rhs_mode(t, mode, tf, par, k4)
        for j in range(14):
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return y


@njit(cache=True, nogil=True)
def regularized_residual(z, par, N, method, x0, rf):
    """Shooting residual of the regularized problem, fixed-step integration.

    z = (p_r0, p_v0, p_m0, t_f); x0 = (r0, v0, m0).
    """
    y = np.empty(14)
    y[0:7] = x0
    y[7:14] = z[0:7]
    yf = flow_fixed(y, z[7], REG, par, N, method)
    rho, _ = mode_alpha(yf, REG, par)
    out = np.empty(8)
    out[0:3] = yf[0:3] - rf
    out[3:6] = yf[10:13]
    out[6] = yf[13]
    out[7] = ham(yf, rho, par, 1.0 - par[5])
    return out


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9
_A21 = 1.0 / 5
_A31, _A32 = 3.0 / 40, 9.0 / 40
_A41, _A42, _A43 = 44.0 / 45, -56.0 / 15, 32.0 / 9
_A51, _A52, _A53, _A54 = 19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (71.0 / 57600, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200,
                                22.0 / 525, -1.0 / 40)


@njit(cache=True, nogil=True)
def dopri_arc(y, s0, s1, mode, tf, par, rtol, atol, rec, nrec, stats, arc=0):
    """Integrate one arc in place with Dormand-Prince 5(4).

    Accepted steps are appended to rec (rows: s, y[14], raw alpha, arc) while
    capacity lasts; nrec[0] counts rows written.  stats holds
    (steps, rejected, min raw alpha, max raw alpha, status) where status 1
    flags step underflow and 2 a non-finite field.
    """
    span = s1 - s0
    if span <= 0.0:
        return
    k1 = np.empty(14); k2 = np.empty(14); k3 = np.empty(14); k4 = np.empty(14)
    k5 = np.empty(14); k6 = np.empty(14); k7 = np.empty(14)
    t = np.empty(14); yn = np.empty(14)
    s = s0
    raw = rhs_mode(y, mode, tf, par, k1)
    if mode == SING:
        stats[2] = min(stats[2], raw); stats[3] = max(stats[3], raw)
    for j in range(14):
        if not np.isfinite(k1[j]):
            stats[4] = 2.0
            return
    h = 0.01 * span
    hmin = max(1e-14 * span, 4e-16 * max(abs(s0), abs(s1)))
    tries = 0
    while s < s1:
        tries += 1
        if tries > 200_000:
            stats[4] = 1.0
            return
        if s + h > s1:
            h = s1 - s
        for j in range(14):
            t[j] = y[j] + h * _A21 * k1[j]
        rhs_mode(t, mode, tf, par, k2)
        for j in range(14):
            t[j] = y[j] + h * (_A31 * k1[j] + _A32 * k2[j])
        rhs_mode(t, mode, tf, par, k3)
        for j in range(14):
            t[j] = y[j] + h * (_A41 * k1[j] + _A42 * k2[j] + _A43 * k3[j])
        rhs_mode(t, mode, tf, par, k4)
        for j in range(14):
            t[j] = y[j] + h * (_A51 * k1[j] + _A52 * k2[j] + _A53 * k3[j] + _A54 * k4[j])
        rhs_mode(t, mode, tf, par, k5)
        for j in range(14):
            t[j] = y[j] + h * (_A61 * k1[j] + _A62 * k2[j] + _A63 * k3[j] + _A64 * k4[j] + _A65 * k5[j])
        rhs_mode(t, mode, tf, par, k6)
        for j in range(14):
            yn[j] = y[j] + h * (_B1 * k1[j] + _B3 * k3[j] + _B4 * k4[j] + _B5 * k5[j] + _B6 * k6[j])
        raw = rhs_mode(yn, mode, tf, par, k7)
        err = 0.0
        finite = True
        for j in range(14):
            if not np.isfinite(yn[j]) or not np.isfinite(k7[j]):
                finite = False
            e = h * (_E1 * k1[j] + _E3 * k3[j] + _E4 * k4[j] + _E5 * k5[j] + _E6 * k6[j] + _E7 * k7[j])
            sc = atol + rtol * max(abs(y[j]), abs(yn[j]))
            err += (e / sc) ** 2
        err = np.sqrt(err / 14.0)
        if not finite or not np.isfinite(err):
            finite = False
            err = 1e10
        if err <= 1.0:
            s += h
            for j in range(14):
                y[j] = yn[j]
                k1[j] = k7[j]
            stats[0] += 1
            if mode == SING:
                stats[2] = min(stats[2], raw); stats[3] = max(stats[3], raw)
            if nrec[0] < rec.shape[0]:
                r = rec[nrec[0]]
                r[0] = s
                r[1:15] = y
                r[15] = raw
                r[16] = arc
                nrec[0] += 1
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            stats[1] += 1
            h *= max(0.1, 0.9 * err ** -0.2)
        if (h < hmin or not np.isfinite(h)) and s < s1:
            stats[4] = 1.0 if finite else 2.0
            return


@njit(cache=True, nogil=True)
def dopri_arcs(y0, tf, modes, bounds, par, rtol, atol, rec, nrec, ystarts, stats):
    """Chain arcs [bounds[i], bounds[i+1]] with modes[i]; ystarts[i] stores each arc's initial point."""
    y = y0.copy()
    for i in range(modes.shape[0]):
        ystarts[i] = y
        if nrec[0] < rec.shape[0]:
            r = rec[nrec[0]]
            r[0] = bounds[i]
            r[1:15] = y
            a, raw = mode_alpha(y, modes[i], par)
            r[15] = raw
            r[16] = i
            nrec[0] += 1
        dopri_arc(y, bounds[i], bounds[i + 1], modes[i], tf, par, rtol, atol, rec, nrec, stats, i)
        if stats[4] != 0.0:
            break
    return y
