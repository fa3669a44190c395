"""Piecewise-linear (simplicial) homotopy continuation on Freudenthal's K1 triangulation.

The ambient space is R^n x [start, target]: z in R^n plus the homotopy level as
the last coordinate.  Lattice coordinates are integers; the real point of a
vertex v is offset + delta * v.
"""
from __future__ import annotations

import csv
import enum
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import kernels as K
from .errors import BudgetExhausted, CycleDetected, NotTransverse, SlabBoundary, StartNotTransverse
from .model import BoundaryConditions, ModelParams
from .shooting import _x0


class TriangulationKind(enum.Enum):
    FreudenthalK1 = "K1"


@dataclass
class Triangulation:
    """K1 triangulation with per-coordinate meshsize; the last coordinate is the level."""

    delta: np.ndarray
    offset: np.ndarray
    level_max: int | None = None
    kind: TriangulationKind = TriangulationKind.FreudenthalK1

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.offset = np.asarray(self.offset, dtype=float)
        if self.delta.shape != self.offset.shape or np.any(self.delta <= 0):
            raise ValueError("delta must be positive and match offset")

    @property
    def dim(self) -> int:
        return self.delta.size

    def point(self, v) -> np.ndarray:
        return self.offset + self.delta * np.asarray(v, dtype=float)

    @classmethod
    def for_homotopy(cls, z_start, delta_z, start_level: float, target_level: float, delta_level: float,
                     shift: np.ndarray | None = None) -> "Triangulation":
        """Lattice whose level planes include start_level and target_level exactly.

        z_start is moved off the lattice by a fixed fractional shift so that it
        lies inside a simplex rather than on a vertex.
        """
        z_start = np.asarray(z_start, dtype=float)
        n = z_start.size
        dz = np.broadcast_to(np.asarray(delta_z, dtype=float), (n,)).copy()
        M = max(1, int(round(abs(target_level - start_level) / delta_level)))
        dl = (target_level - start_level) / M
        if shift is None:
            # fixed irrational-looking fractions, deterministic
            shift = 0.5 + 0.37 * np.modf(np.arange(1, n + 1) * 0.6180339887498949)[0] - 0.185
        off = z_start - dz * shift
        return cls(np.concatenate([dz, [dl]]), np.concatenate([off, [start_level]]), M)


def relative_mesh(z, delta: float, floor: float = 0.1) -> np.ndarray:
    """Per-coordinate meshsize delta * max(|z_i|, floor).

    A uniform mesh over unknowns spanning three orders of magnitude puts the
    PL zero of the start plane tens of cells away from the true zero, and no
    completely labeled start facet can be found; scaling by magnitude keeps
    the interpolation error comparable across coordinates.
    """
    return delta * np.maximum(np.abs(np.asarray(z, dtype=float)), floor)


@dataclass(frozen=True)
class Simplex:
    """K1 simplex: v_0 = base, v_{j+1} = v_j + e_{perm[j]}."""

    base: tuple
    perm: tuple

    @property
    def dim(self) -> int:
        return len(self.base)

    def vertices(self) -> np.ndarray:
        N = self.dim
        V = np.empty((N + 1, N), dtype=np.int64)
        V[0] = self.base
        for j, p in enumerate(self.perm):
            V[j + 1] = V[j]
            V[j + 1, p] += 1
        return V

    def key(self):
        return (self.base, self.perm)


def freudenthal_simplex_at(point, triang: Triangulation) -> Simplex:
    """K1 simplex containing a real point; ties in fractional parts broken by coordinate index."""
    x = (np.asarray(point, dtype=float) - triang.offset) / triang.delta
    base = np.floor(x)
    frac = x - base
    perm = np.argsort(-frac, kind="stable")
    return Simplex(tuple(int(b) for b in base), tuple(int(p) for p in perm))


def _pivot_raw(s: Simplex, j: int) -> Simplex:
    base = list(s.base)
    perm = list(s.perm)
    N = len(base)
    if j == 0:
        base[perm[0]] += 1
        perm = perm[1:] + perm[:1]
    elif j == N:
        base[perm[N - 1]] -= 1
        perm = perm[N - 1:] + perm[: N - 1]
    else:
        perm[j - 1], perm[j] = perm[j], perm[j - 1]
    return Simplex(tuple(base), tuple(perm))


def pivot(s: Simplex, j: int, triang: Triangulation | None = None) -> Simplex:
    """Neighbour sharing the facet opposite vertex j.

    Vertex bookkeeping: for 0 < j < N the new vertex takes index j; for j = 0
    the others shift down and the new vertex is last; for j = N they shift up
    and the new vertex is first.
    """
    N = s.dim
    if not 0 <= j <= N:
        raise IndexError(f"vertex index {j} out of range")
    t = _pivot_raw(s, j)
    if triang is not None and triang.level_max is not None:
        lv = t.vertices()[:, -1]
        if lv.min() < 0 or lv.max() > triang.level_max:
            raise SlabBoundary("pivot leaves the homotopy slab")
    return t


def _new_vertex_index(j: int, N: int) -> int:
    if j == 0:
        return N
    if j == N:
        return 0
    return j


def _shift_columns(arr, j: int, N: int):
    """Reorder per-vertex data after a pivot at j (new vertex slot left stale)."""
    if j == 0:
        return np.roll(arr, -1, axis=-1)
    if j == N:
        return np.roll(arr, 1, axis=-1)
    return arr


# ------------------------------------------------------------- labeling


@dataclass
class LabeledSimplex:
    simplex: Simplex
    labels: np.ndarray  # shape (n, N+1): column i is h at vertex i

    def augmented(self) -> np.ndarray:
        return np.vstack([np.ones(self.labels.shape[1]), self.labels])


def _lex_positive_rows(Binv, tol=0.0) -> bool:
    for row in Binv:
        nz = np.nonzero(np.abs(row) > tol)[0]
        if nz.size == 0 or row[nz[0]] < 0:
            return False
    return True


def facet_inverse(Laug, drop: int):
    """Inverse of the facet matrix (column `drop` removed), or None if singular."""
    B = np.delete(Laug, drop, axis=1)
    try:
        Binv = np.linalg.inv(B)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(Binv)):
        return None
    return Binv


def is_completely_labeled(Laug, drop: int) -> bool:
    """Facet opposite `drop` solves the epsilon-perturbed PL equation for all small epsilon."""
    Binv = facet_inverse(Laug, drop)
    return Binv is not None and _lex_positive_rows(Binv, 1e-14 * np.abs(Binv).max())


def completely_labeled_facets(Laug) -> list:
    return [j for j in range(Laug.shape[1]) if is_completely_labeled(Laug, j)]


def _lexmin_leaving(Binv, gamma, cols):
    """Lexicographic ratio test; returns the position (in cols) that leaves."""
    g = np.abs(gamma).max()
    cand = np.nonzero(gamma > 1e-13 * g)[0]
    if cand.size == 0:
        return None
    for c in range(Binv.shape[1]):
        col = Binv[cand, c]
        # entries at rounding level of their column are exact zeros (they decide ties)
        col = np.where(np.abs(col) <= 1e-14 * np.abs(Binv[:, c]).max(), 0.0, col)
        vals = col / gamma[cand]
        m = vals.min()
        cand = cand[vals <= m + 1e-12 * (abs(m) + 1e-300)]
        if cand.size == 1:
            break
    return int(cand[0])


def pl_step(ls: LabeledSimplex, in_face: int) -> int:
    """Door-in/door-out step: given the completely labeled facet opposite in_face, return the other one."""
    Laug = ls.augmented()
    Binv = facet_inverse(Laug, in_face)
    if Binv is None or not _lex_positive_rows(Binv, 1e-14 * np.abs(Binv).max()):
        raise NotTransverse("entry facet is not completely labeled")
    cols = [i for i in range(Laug.shape[1]) if i != in_face]
    gamma = Binv @ Laug[:, in_face]
    pos = _lexmin_leaving(Binv, gamma, cols)
    if pos is None:
        raise NotTransverse("no leaving vertex: the PL path has no exit")
    return cols[pos]


# -------------------------------------------------------- path following


@dataclass
class HomotopyProblem:
    h: Callable[[np.ndarray, float], np.ndarray]
    n: int
    start_level: float = 0.0
    target_level: float = 1.0
    name: str = "lambda"
    # (par, level index, level scale, n_steps, method, x0, r_f) for the compiled walk
    kernel: tuple | None = None


@dataclass
class PathPoint:
    z: np.ndarray
    level: float


@dataclass
class PathTrace:
    points: list = field(default_factory=list)  # PathPoint
    hnorm: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    simplices: list = field(default_factory=list)
    n_simplices: int = 0
    z_end: np.ndarray | None = None
    level_end: float | None = None
    reached: bool = False
    elapsed: float = 0.0
    level_name: str = "lambda"
    final_facet: np.ndarray | None = None  # lattice vertices of the terminal facet

    def to_csv(self, path):
        n = len(self.points[0].z) if self.points else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", self.level_name] + [f"z{i + 1}" for i in range(n)] + ["hnorm"])
            for st, pp, hn in zip(self.steps, self.points, self.hnorm):
                w.writerow([st, f"{pp.level:.12e}"] + [f"{v:.12e}" for v in pp.z] + [f"{hn:.12e}"])

    def array(self) -> np.ndarray:
        return np.array([np.concatenate([p.z, [p.level]]) for p in self.points])


def _labels_for(hp: HomotopyProblem, triang: Triangulation, V):
    L = np.empty((hp.n, V.shape[0]))
    for i, v in enumerate(V):
        x = triang.point(v)
        L[:, i] = hp.h(x[:-1], x[-1])
    return L


def _bottom(hp: HomotopyProblem, triang: Triangulation, bz, pz):
    n = hp.n
    s = Simplex(tuple(bz) + (0,), tuple(pz) + (n,))
    V = s.vertices()
    L = _labels_for(hp, triang, V)
    return s, L


def _simplex_from_vertices(Vz) -> Simplex:
    """K1 simplex (base, perm) spanned by lattice points ordered by coordinate sum."""
    Vz = np.asarray(Vz)
    order = np.argsort(Vz.sum(axis=1), kind="stable")
    Vs = Vz[order]
    steps = np.diff(Vs, axis=0)
    perm = tuple(int(np.argmax(d)) for d in steps)
    return Simplex(tuple(int(b) for b in Vs[0]), perm)


def _start_facet(hp: HomotopyProblem, z_start, triang: Triangulation, ring_cap: int = 100,
                 locate_budget: int = 200_000, scan_limit: int = 2000):
    """Level-0 simplex whose bottom facet is completely labeled.

    The simplex containing z_start is tried first.  Otherwise an auxiliary
    PL path in the start plane is followed: G(z, mu) = h(z, start) - (1 - mu) c,
    where c is the PL interpolant of h at z_start, so that the containing
    simplex is completely labeled at mu = 0 and the facet reached at mu = 1
    is completely labeled for h on the same lattice.  A breadth-first scan of
    rings around z_start is the last resort.
    """
    n = hp.n
    N = n + 1
    p = np.concatenate([z_start, [triang.offset[-1]]])
    s0 = freudenthal_simplex_at(p, triang)
    # the level coordinate steps last so the bottom facet sits in the start plane
    pz0 = tuple(q for q in s0.perm if q != n)
    bz0 = s0.base[:n]

    def bottom(bz, pz):
        s, L = _bottom(hp, triang, bz, pz)
        Laug = np.vstack([np.ones(N + 1), L])
        return s, L, is_completely_labeled(Laug, N)

    s, L, ok = bottom(bz0, pz0)
    if ok:
        return s, L
    if locate_budget > 0:
        try:
            s1 = _locate_by_newton_homotopy(hp, z_start, triang, s, L, locate_budget)
        except (NotTransverse, BudgetExhausted, CycleDetected, SlabBoundary, StartNotTransverse):
            s1 = None
        if s1 is not None:
            s, L, ok = bottom(s1.base, s1.perm)
            if ok:
                return s, L
    seen = set()
    queue = deque([(bz0, pz0)])
    while queue and len(seen) < scan_limit:
        bz, pz = queue.popleft()
        if (bz, pz) in seen:
            continue
        seen.add((bz, pz))
        s, L, ok = bottom(bz, pz)
        if ok:
            return s, L
        sub = Simplex(tuple(bz), tuple(pz))
        for j in range(n + 1):
            t = _pivot_raw(sub, j)
            if np.max(np.abs(np.array(t.base) - np.array(bz0))) <= ring_cap:
                queue.append((t.base, t.perm))
    raise StartNotTransverse("no completely labeled facet near the start point")


def _locate_by_newton_homotopy(hp: HomotopyProblem, z_start, triang: Triangulation, s, L, budget):
    n = hp.n
    N = n + 1
    level0 = triang.offset[-1]
    V = s.vertices()[:N]
    Bz = np.vstack([np.ones(N), V[:, :n].T.astype(float)])
    xz = (np.asarray(z_start) - triang.offset[:n]) / triang.delta[:n]
    w = np.linalg.solve(Bz, np.concatenate([[1.0], xz]))
    c = L[:, :N] @ w

    def g(z, mu):
        return hp.h(z, level0) - (1.0 - mu) * c

    aux = HomotopyProblem(g, n, 0.0, 1.0, "mu")
    tri = Triangulation(np.concatenate([triang.delta[:n], [1.0]]),
                        np.concatenate([triang.offset[:n], [0.0]]), 1)
    tr = follow_path(aux, z_start, tri, budget=budget, record_every=0, eval_h=False, locate_budget=0)
    return _simplex_from_vertices(tr.final_facet[:, :n])


def facet_zero(Laug, drop: int, V, triang: Triangulation):
    """Zero of the PL interpolant on a facet: barycentric weights B^-1 e_1."""
    Binv = facet_inverse(Laug, drop)
    w = Binv[:, 0]
    cols = [i for i in range(Laug.shape[1]) if i != drop]
    return triang.point(w @ V[cols].astype(float))


def follow_path(hp: HomotopyProblem, z_start, triang: Triangulation, budget: int = 1_000_000,
                record_every: int = 1, record_simplices: bool = False, eval_h: bool = True,
                progress: Callable | None = None, locate_budget: int = 200_000) -> PathTrace:
    """Follow the PL zero path from level start to the target level plane.

    record_every controls how often the facet zero (and the true |h| there,
    when eval_h) is stored in the trace.
    """
    t0 = time.perf_counter()
    n = hp.n
    N = n + 1
    z_start = np.asarray(z_start, dtype=float)
    trace = PathTrace(level_name=hp.name)
    M = triang.level_max
    s, L = _start_facet(hp, z_start, triang, locate_budget=locate_budget)
    V = s.vertices()
    Laug = np.vstack([np.ones(N + 1), L])
    j_in = N  # the vertex above the start plane enters first
    visited = {s.key()}
    count = 1

    def record(step, drop):
        x = facet_zero(Laug, drop, V, triang)
        hn = float(np.linalg.norm(hp.h(x[:-1], x[-1]))) if eval_h else float("nan")
        trace.points.append(PathPoint(x[:-1].copy(), float(x[-1])))
        trace.hnorm.append(hn)
        trace.steps.append(step)

    record(0, N)
    if hp.kernel is not None and not record_simplices:
        return _follow_compiled(hp, triang, trace, s, V, Laug, budget, record_every, eval_h, progress, t0)
    while True:
        Binv = facet_inverse(Laug, j_in)
        if Binv is None:
            raise NotTransverse(f"singular facet matrix after {count} simplices")
        cols = [i for i in range(N + 1) if i != j_in]
        gamma = Binv @ Laug[:, j_in]
        pos = _lexmin_leaving(Binv, gamma, cols)
        if pos is None:
            raise NotTransverse(f"PL path has no exit after {count} simplices")
        j_out = cols[pos]
        if record_simplices:
            trace.simplices.append((s, j_in, j_out))
        lv = np.delete(V[:, -1], j_out)
        if M is not None and np.all(lv == M):
            x = facet_zero(Laug, j_out, V, triang)
            trace.z_end = x[:-1].copy()
            trace.level_end = float(x[-1])
            trace.final_facet = np.delete(V, j_out, axis=0)
            trace.reached = True
            trace.n_simplices = count
            hn = float(np.linalg.norm(hp.h(x[:-1], x[-1]))) if eval_h else float("nan")
            trace.points.append(PathPoint(trace.z_end.copy(), trace.level_end))
            trace.hnorm.append(hn)
            trace.steps.append(count)
            trace.elapsed = time.perf_counter() - t0
            return trace
        if np.all(lv == 0):
            trace.n_simplices = count
            raise SlabBoundary("path returned to the start level")
        if count >= budget:
            trace.n_simplices = count
            trace.elapsed = time.perf_counter() - t0
            raise BudgetExhausted(f"budget of {budget} simplices exhausted", trace)
        s = pivot(s, j_out, triang)
        key = s.key()
        if key in visited:
            trace.n_simplices = count
            raise CycleDetected(f"simplex revisited after {count} steps", trace)
        visited.add(key)
        count += 1
        j_new = _new_vertex_index(j_out, N)
        V = _shift_columns(V.T, j_out, N).T.copy()
        Laug = _shift_columns(Laug, j_out, N).copy()
        V[j_new] = s.vertices()[j_new]
        x = triang.point(V[j_new])
        Laug[1:, j_new] = hp.h(x[:-1], x[-1])
        j_in = j_new
        if record_every and count % record_every == 0:
            record(count, j_in)
        if progress is not None and count % 10000 == 0:
            progress(count, V[:, -1].max() * triang.delta[-1] + triang.offset[-1])


def _follow_compiled(hp, triang, trace, s, V, Laug, budget, record_every, eval_h, progress, t0,
                     chunk: int = 50_000):
    from . import plwalk as W

    n = hp.n
    N = n + 1
    par, lev_idx, lev_scale, n_steps, method, x0, rf = hp.kernel
    base = np.array(s.base, dtype=np.int64)
    perm = np.array(s.perm, dtype=np.int64)
    V = np.ascontiguousarray(V, dtype=np.int64)
    Laug = np.ascontiguousarray(Laug, dtype=float)
    visited = W.new_visited()
    visited[int(W._key(base, perm))] = np.int8(1)
    M = triang.level_max
    j_in, count = N, 1
    rec = np.empty((chunk // record_every + 1 if record_every else 1, N + 1))

    def store(rows):
        for row in rows:
            x = row[:N]
            hn = float(np.linalg.norm(hp.h(x[:-1], x[-1]))) if eval_h else float("nan")
            trace.points.append(PathPoint(x[:-1].copy(), float(x[-1])))
            trace.hnorm.append(hn)
            trace.steps.append(int(row[N]))

    while True:
        step = min(chunk, budget - count)
        status, count, j_in, j_out, nrec = W.walk(
            base, perm, V, Laug, j_in, M, triang.offset, triang.delta, par, lev_idx, lev_scale,
            n_steps, method, x0, rf, step, record_every, count, rec, visited)
        store(rec[:nrec])
        trace.n_simplices = count
        trace.elapsed = time.perf_counter() - t0
        if status == W.REACHED:
            x = facet_zero(Laug, j_out, V, triang)
            trace.z_end = x[:-1].copy()
            trace.level_end = float(x[-1])
            trace.final_facet = np.delete(V, j_out, axis=0)
            trace.reached = True
            store([np.concatenate([x, [count]])])
            return trace
        if status == W.RETURNED:
            raise SlabBoundary("path returned to the start level")
        if status == W.SINGULAR:
            raise NotTransverse(f"singular facet matrix after {count} simplices")
        if status == W.NO_EXIT:
            raise NotTransverse(f"PL path has no exit after {count} simplices")
        if status == W.CYCLE:
            raise CycleDetected(f"simplex revisited after {count} steps", trace)
        if progress is not None:
            progress(count, V[:, -1].max() * triang.delta[-1] + triang.offset[-1])
        if count >= budget:
            raise BudgetExhausted(f"budget of {budget} simplices exhausted", trace)


# ------------------------------------------------------- mesh refinement


@dataclass
class RefinePolicy:
    threshold: float = 0.5
    window: int = 200
    min_delta: float = 1e-6


def adaptive_refine(trace: PathTrace, triang: Triangulation, policy: RefinePolicy = RefinePolicy()) -> Triangulation:
    """Halve the meshsize of z-coordinates whose recent increments keep changing sign.

    The oscillation measure is the fraction of sign changes among the last
    `window` nonzero increments; coordinates above `threshold` are halved.
    The level coordinate is left alone.
    """
    X = trace.array()
    if X.shape[0] < 3:
        return replace(triang)
    X = X[-policy.window:]
    d = np.diff(X[:, :-1], axis=0)
    delta = triang.delta.copy()
    for i in range(d.shape[1]):
        inc = d[:, i][np.abs(d[:, i]) > 0]
        if inc.size < 3:
            continue
        flips = np.count_nonzero(np.sign(inc[1:]) != np.sign(inc[:-1])) / (inc.size - 1)
        if flips > policy.threshold:
            delta[i] = max(delta[i] / 2.0, policy.min_delta)
    return replace(triang, delta=np.minimum(delta, triang.delta))


# -------------------------------------------------------- problem setup


def _label_fn(params: ModelParams, bc: BoundaryConditions, which: str, n_steps: int = 25, method: int = 0):
    par0 = K.pack_params(params)
    x0 = _x0(bc)
    rf = bc.r_f.copy()

    def h(z, level):
        par = par0.copy()
        if which == "theta":
            par[3] = level * params.K_D
        else:
            par[5] = level
        return K.regularized_residual(np.asarray(z, dtype=float), par, n_steps, method, x0, rf)

    h.kernel = (par0, 3 if which == "theta" else 5, params.K_D if which == "theta" else 1.0,
                n_steps, method, x0, rf)
    return h


def atmosphere_homotopy(params: ModelParams = ModelParams(), bc: BoundaryConditions = BoundaryConditions(),
                        n_steps: int = 25, target: float = 1.0) -> HomotopyProblem:
    """h(z, theta): regularized (lam = 0) shooting residual with drag scaled by theta, Euler labels."""
    p = params.with_(lam=0.0)
    h = _label_fn(p, bc, "theta", n_steps)
    return HomotopyProblem(h, 8, 0.0, target, "theta", h.kernel)


def main_homotopy(params: ModelParams = ModelParams(), bc: BoundaryConditions = BoundaryConditions(),
                  n_steps: int = 25, target: float = 0.8) -> HomotopyProblem:
    """h(z, lam): regularized shooting residual with quadratic weight (1 - lam), full atmosphere."""
    p = params.with_(theta=1.0)
    h = _label_fn(p, bc, "lambda", n_steps)
    return HomotopyProblem(h, 8, 0.0, target, "lambda", h.kernel)
