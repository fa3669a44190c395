"""Compiled door-in/door-out walk for homotopies labeled by the regularized shooting residual."""
from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict

from .kernels import regularized_residual

# walk status codes
REACHED, RETURNED, BUDGET, SINGULAR, NO_EXIT, CYCLE, RUNNING = 0, 1, 2, 3, 4, 5, 6


def new_visited():
    return Dict.empty(key_type=types.int64, value_type=types.int8)


@njit(cache=True, nogil=True)
def _key(base, perm):
    h = np.uint64(1469598103934665603)
    p = np.uint64(1099511628211)
    for i in range(base.size):
        h = (h ^ np.uint64(base[i] & 0xFFFFFFFF)) * p
    for i in range(perm.size):
        h = (h ^ np.uint64(perm[i] + 977)) * p
    return np.int64(h)


@njit(cache=True, nogil=True)
def _label(v, offset, delta, par, lev_idx, lev_scale, n_steps, method, x0, rf, out):
    n = out.size
    z = np.empty(n)
    for i in range(n):
        z[i] = offset[i] + delta[i] * v[i]
    lev = offset[n] + delta[n] * v[n]
    q = par.copy()
    q[lev_idx] = lev * lev_scale
    out[:] = regularized_residual(z, q, n_steps, method, x0, rf)


@njit(cache=True, nogil=True)
def _leaving(Binv, gamma):
    m = gamma.size
    g = np.max(np.abs(gamma))
    cand = np.zeros(m, dtype=np.bool_)
    nc = 0
    for i in range(m):
        if gamma[i] > 1e-13 * g:
            cand[i] = True
            nc += 1
    if nc == 0:
        return -1
    col = np.empty(m)
    for c in range(Binv.shape[1]):
        # entries at rounding level of their column are exact zeros (they decide ties)
        cmax = np.max(np.abs(Binv[:, c]))
        mn = np.inf
        for i in range(m):
            col[i] = Binv[i, c]
            if abs(col[i]) <= 1e-14 * cmax:
                col[i] = 0.0
            if cand[i]:
                val = col[i] / gamma[i]
                if val < mn:
                    mn = val
        tol = 1e-12 * (abs(mn) + 1e-300)
        nc = 0
        for i in range(m):
            if cand[i]:
                if col[i] / gamma[i] <= mn + tol:
                    nc += 1
                else:
                    cand[i] = False
        if nc == 1:
            break
    for i in range(m):
        if cand[i]:
            return i
    return -1


@njit(cache=True, nogil=True)
def walk(base, perm, V, Laug, j_in, level_max, offset, delta, par, lev_idx, lev_scale,
         n_steps, method, x0, rf, budget, record_every, count0, rec, visited):
    """Advance the PL path by at most `budget` simplices, updating the state in place.

    Returns (status, count, j_in, j_out, nrec); rec rows hold the facet zero
    (real coordinates) every record_every simplices.
    """
    N = base.size
    n = N - 1
    count = count0
    nrec = 0
    lab = np.empty(n)
    cols = np.empty(N, dtype=np.int64)
    while True:
        c = 0
        for k in range(N + 1):
            if k != j_in:
                cols[c] = k
                c += 1
        Binv = np.linalg.inv(_square(Laug, j_in))
        if not np.all(np.isfinite(Binv)):
            return SINGULAR, count, j_in, -1, nrec
        gamma = np.ascontiguousarray(Binv) @ np.ascontiguousarray(Laug[:, j_in])
        pos = _leaving(Binv, gamma)
        if pos < 0:
            return NO_EXIT, count, j_in, -1, nrec
        j_out = cols[pos]
        top = True
        bot = True
        for k in range(N + 1):
            if k != j_out:
                if V[k, n] != level_max:
                    top = False
                if V[k, n] != 0:
                    bot = False
        if top:
            return REACHED, count, j_in, j_out, nrec
        if bot:
            return RETURNED, count, j_in, j_out, nrec
        if count - count0 >= budget:
            return RUNNING, count, j_in, -1, nrec
        # pivot
        if j_out == 0:
            base[perm[0]] += 1
            p0 = perm[0]
            for k in range(N - 1):
                perm[k] = perm[k + 1]
            perm[N - 1] = p0
            for k in range(N):
                V[k, :] = V[k + 1, :]
                Laug[:, k] = Laug[:, k + 1]
            j_new = N
        elif j_out == N:
            base[perm[N - 1]] -= 1
            pl = perm[N - 1]
            for k in range(N - 1, 0, -1):
                perm[k] = perm[k - 1]
            perm[0] = pl
            for k in range(N, 0, -1):
                V[k, :] = V[k - 1, :]
                Laug[:, k] = Laug[:, k - 1]
            j_new = 0
        else:
            t = perm[j_out - 1]
            perm[j_out - 1] = perm[j_out]
            perm[j_out] = t
            j_new = j_out
        key = _key(base, perm)
        if key in visited:
            return CYCLE, count, j_in, j_out, nrec
        visited[key] = np.int8(1)
        count += 1
        for i in range(N):
            V[j_new, i] = base[i]
        for k in range(j_new):
            V[j_new, perm[k]] += 1
        _label(V[j_new], offset, delta, par, lev_idx, lev_scale, n_steps, method, x0, rf, lab)
        Laug[0, j_new] = 1.0
        Laug[1:, j_new] = lab
        j_in = j_new
        if record_every > 0 and count % record_every == 0 and nrec < rec.shape[0]:
            Binv = np.linalg.inv(_square(Laug, j_in))
            c = 0
            for i in range(N):
                rec[nrec, i] = 0.0
            for k in range(N + 1):
                if k != j_in:
                    w = Binv[c, 0]
                    for i in range(N):
                        rec[nrec, i] += w * V[k, i]
                    c += 1
            for i in range(N):
                rec[nrec, i] = offset[i] + delta[i] * rec[nrec, i]
            rec[nrec, N] = count
            nrec += 1


@njit(cache=True, nogil=True)
def _square(Laug, drop):
    N1 = Laug.shape[1]
    B = np.empty((N1 - 1, N1 - 1))
    c = 0
    for k in range(N1):
        if k != drop:
            B[:, c] = Laug[:, k]
            c += 1
    return B
