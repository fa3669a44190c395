import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from goddard.errors import BudgetExhausted, NotTransverse, SlabBoundary, StartNotTransverse
from goddard.model import BoundaryConditions, ModelParams
from goddard.shooting import NewtonOptions, newton_solve
from goddard.simplicial import (
    HomotopyProblem,
    LabeledSimplex,
    PathPoint,
    PathTrace,
    RefinePolicy,
    Simplex,
    Triangulation,
    adaptive_refine,
    atmosphere_homotopy,
    completely_labeled_facets,
    follow_path,
    freudenthal_simplex_at,
    is_completely_labeled,
    main_homotopy,
    pivot,
    pl_step,
    relative_mesh,
)

UNIT = Triangulation(np.ones(2), np.zeros(2))


def vset(s):
    return {tuple(int(c) for c in v) for v in s.vertices()}


def test_k1_containing_simplex():
    s = freudenthal_simplex_at([0.3, 0.2], UNIT)
    assert vset(s) == {(0, 0), (1, 0), (1, 1)}
    s = freudenthal_simplex_at([0.2, 0.3], UNIT)
    assert vset(s) == {(0, 0), (0, 1), (1, 1)}


def test_k1_tie_break_is_deterministic():
    a = freudenthal_simplex_at([1.0, 1.0], UNIT)
    b = freudenthal_simplex_at([1.0, 1.0], UNIT)
    assert a == b
    # equal fractional parts: the lower coordinate index steps first
    assert freudenthal_simplex_at([0.5, 0.5], UNIT).perm == (0, 1)


def test_k1_lattice_translation():
    tri = Triangulation(np.array([0.1, 0.25, 0.5]), np.array([0.01, -0.3, 2.0]))
    rng = np.random.default_rng(13)
    for _ in range(50):
        x = rng.uniform(-2, 2, 3)
        s = freudenthal_simplex_at(x, tri)
        for i in range(3):
            t = freudenthal_simplex_at(x + tri.delta[i] * np.eye(3)[i], tri)
            assert t.perm == s.perm
            assert np.array_equal(np.array(t.base) - s.base, np.eye(3, dtype=int)[i])


def test_k1_contains_point():
    tri = Triangulation(np.array([0.1, 0.25, 0.5]), np.array([0.01, -0.3, 2.0]))
    rng = np.random.default_rng(14)
    for _ in range(50):
        x = rng.uniform(-2, 2, 3)
        V = np.array([tri.point(v) for v in freudenthal_simplex_at(x, tri).vertices()])
        w = np.linalg.solve(np.vstack([np.ones(4), V.T]), np.concatenate([[1.0], x]))
        assert w.min() > -1e-12


def test_pivot_involution():
    assert oracles.pivot_involution_failures(np.random.default_rng(15)) == 0


def test_pivot_unit_square_example():
    s = freudenthal_simplex_at([0.3, 0.2], UNIT)
    j = [tuple(v) for v in s.vertices()].index((1, 1))
    t = pivot(s, j)
    # the edge {(0,0),(1,0)} lies on the cell boundary, so the neighbour is in the cell below
    assert vset(t) == {(0, -1), (0, 0), (1, 0)}
    assert vset(s) & vset(t) == {(0, 0), (1, 0)}
    # across the diagonal the neighbour is the other triangle of the same cell
    j = [tuple(v) for v in s.vertices()].index((1, 0))
    assert vset(pivot(s, j)) == {(0, 0), (0, 1), (1, 1)}


def test_pivot_slab_boundary():
    tri = Triangulation(np.ones(2), np.zeros(2), level_max=1)
    s = Simplex((0, 0), (0, 1))  # (0,0), (1,0), (1,1)
    with pytest.raises(SlabBoundary):
        pivot(s, 2, tri)  # neighbour (0,-1), (0,0), (1,0) dips below level 0


def test_sign_change_face_is_completely_labeled():
    Laug = np.array([[1.0, 1.0, 1.0], [-1.0, 1.0, 5.0]])
    assert is_completely_labeled(Laug, 2)
    assert not is_completely_labeled(Laug, 0)


def test_positive_labels_not_transverse():
    ls = LabeledSimplex(Simplex((0, 0), (0, 1)), np.array([[1.0, 2.0, 3.0]]))
    assert completely_labeled_facets(ls.augmented()) == []
    with pytest.raises(NotTransverse):
        pl_step(ls, 0)


def test_zero_or_two_lemma_brute_force():
    rep = oracles.zero_or_two_report(0)
    assert rep["bad_count"] == 0
    assert rep["mismatch"] == 0
    assert rep["bad_step"] == 0
    assert rep["two"] > 1000


def test_toy_path_coarse():
    tr = oracles.toy_path(0.1)
    assert tr.reached and tr.level_end == pytest.approx(1.0)
    assert abs(tr.z_end[0] - 1.0) < 0.1
    assert tr.n_simplices <= 3 / 0.1


def test_toy_path_fine():
    tr = oracles.toy_path(1e-3)
    assert abs(tr.z_end[0] - 1.0) < 2e-3
    assert tr.n_simplices <= 3 / 1e-3


def test_level_independent_path_stays_at_zero():
    hp = HomotopyProblem(lambda z, lam: np.array([z[0] - z[0] ** 3]), 1)
    tri = Triangulation.for_homotopy(np.zeros(1), 0.05, 0.0, 1.0, 0.05)
    tr = follow_path(hp, np.zeros(1), tri, budget=1000)
    assert tr.reached
    assert max(abs(p.z[0]) for p in tr.points) < 0.05


def test_path_consistency_two_dimensional():
    hp = HomotopyProblem(lambda z, lam: np.array([z[0] - lam, z[1] + 0.5 * lam - 0.3 * z[0] ** 2]), 2)
    tri = Triangulation.for_homotopy(np.zeros(2), 0.05, 0.0, 1.0, 0.05)
    tr = follow_path(hp, np.zeros(2), tri, budget=10_000, record_simplices=True)
    assert tr.reached
    for (s, j_in, j_out), (t, t_in, _) in zip(tr.simplices, tr.simplices[1:]):
        assert pivot(s, j_out) == t
        # the exit facet of s is the entry facet of t
        shared = {tuple(v) for k, v in enumerate(s.vertices()) if k != j_out}
        assert shared == {tuple(v) for k, v in enumerate(t.vertices()) if k != t_in}
        V = t.vertices()
        L = np.column_stack([hp.h(tri.point(v)[:-1], tri.point(v)[-1]) for v in V])
        assert is_completely_labeled(np.vstack([np.ones(4), L]), t_in)
    # exact zero path: z0 = lam, z1 = 0.3 lam^2 - 0.5 lam
    np.testing.assert_allclose(tr.z_end, [1.0, -0.2], atol=0.05)


def test_budget_exhausted_carries_partial_trace():
    hp = HomotopyProblem(lambda z, lam: np.array([z[0] - lam]), 1)
    tri = Triangulation.for_homotopy(np.zeros(1), 1e-3, 0.0, 1.0, 1e-3)
    with pytest.raises(BudgetExhausted) as info:
        follow_path(hp, np.zeros(1), tri, budget=50, record_every=10)
    assert info.value.trace.n_simplices == 50
    assert len(info.value.trace.points) > 1


def test_start_not_transverse():
    hp = HomotopyProblem(lambda z, lam: np.array([z[0] ** 2 + 1.0]), 1)
    tri = Triangulation.for_homotopy(np.zeros(1), 0.1, 0.0, 1.0, 0.1)
    with pytest.raises(StartNotTransverse):
        follow_path(hp, np.zeros(1), tri, budget=100, locate_budget=100)


def _trace(zs):
    return PathTrace(points=[PathPoint(np.atleast_1d(np.asarray(z, float)), 0.01 * i) for i, z in enumerate(zs)])


def test_refine_monotone_trace_unchanged():
    tri = Triangulation(np.full(3, 0.1), np.zeros(3))
    tr = _trace([[i, 2 * i] for i in range(50)])
    out = adaptive_refine(tr, tri)
    np.testing.assert_array_equal(out.delta, tri.delta)


def test_refine_halves_oscillating_coordinate():
    tri = Triangulation(np.full(3, 0.1), np.zeros(3))
    tr = _trace([[(-1) ** i, i] for i in range(50)])
    out = adaptive_refine(tr, tri)
    np.testing.assert_allclose(out.delta, [0.05, 0.1, 0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.floats(-10, 10), min_size=2, max_size=2), min_size=0, max_size=60),
       st.floats(0.0, 1.0))
def test_refine_never_increases_delta(zs, threshold):
    tri = Triangulation(np.array([0.2, 0.05, 0.01]), np.zeros(3))
    out = adaptive_refine(_trace(zs), tri, RefinePolicy(threshold=threshold))
    assert np.all(out.delta <= tri.delta)
    assert out.delta[-1] == tri.delta[-1]


def test_relative_mesh():
    np.testing.assert_allclose(relative_mesh([3.0, -0.01, 0.5], 1e-4, 0.1), [3e-4, 1e-5, 5e-5])


@pytest.fixture(scope="module")
def drag_free_start():
    hp = atmosphere_homotopy(ModelParams(), BoundaryConditions())
    z, _ = newton_solve(lambda q: hp.h(q, 0.0), np.array([0.1] * 6 + [-0.1, 0.2]),
                        NewtonOptions(tol=1e-12, max_iter=50))
    return hp, z


def test_atmosphere_homotopy_start_is_a_zero(drag_free_start):
    hp, z = drag_free_start
    assert hp.n == 8
    assert np.linalg.norm(hp.h(z, 0.0)) < 1e-12


def test_homotopies_continuous_in_level(drag_free_start):
    _, z = drag_free_start
    for hp in (atmosphere_homotopy(), main_homotopy()):
        for lev in (0.0, 0.3, 0.7):
            a, b = hp.h(z, lev), hp.h(z, lev + 1e-9)
            assert np.linalg.norm(a - b) < 1e-5 * (1 + np.linalg.norm(a))


def test_compiled_walk_matches_python(drag_free_start):
    hp, z = drag_free_start
    tri = Triangulation.for_homotopy(z, 1e-2, 0.0, 1.0, 1e-2)
    traces = []
    for python in (True, False):
        with pytest.raises(BudgetExhausted) as info:
            follow_path(hp, z, tri, budget=1500, record_every=100, record_simplices=python)
        traces.append(info.value.trace)
    a, b = traces
    assert a.n_simplices == b.n_simplices == 1500
    np.testing.assert_allclose(a.array(), b.array(), atol=1e-10)
