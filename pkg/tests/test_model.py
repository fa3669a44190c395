import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from goddard.errors import NonpositiveMass
from goddard.model import (
    BoundaryConditions,
    ModelParams,
    RocketState,
    drag,
    drag_partials,
    gravity,
    gravity_jacobian,
    state_rhs,
)

P = ModelParams()
E1 = np.array([1.0, 0.0, 0.0])


def test_drag_examples():
    assert drag(E1, 0.1 * E1, P) == pytest.approx(3.1, rel=1e-12)
    assert drag(np.array([0.3, 0.9, 0.4]), np.zeros(3), P) == 0.0
    assert drag(E1, np.array([0.3, -0.2, 0.5]), P.with_(theta=0.0)) == 0.0


def test_drag_partials_examples():
    dr, dv = drag_partials(E1, 0.1 * E1, P)
    np.testing.assert_allclose(dr, [-1550.0, 0, 0], rtol=1e-12)
    np.testing.assert_allclose(dv, [62.0, 0, 0], rtol=1e-12)
    h = 1e-6
    fd = (drag(E1 * (1 + h), 0.1 * E1, P) - drag(E1 * (1 - h), 0.1 * E1, P)) / (2 * h)
    assert fd == pytest.approx(-1550.0, rel=1e-4)
    _, dv0 = drag_partials(E1, np.zeros(3), P)
    assert np.all(dv0 == 0)
    dr0, dv0 = drag_partials(E1, 0.1 * E1, P.with_(theta=0.0))
    assert np.all(dr0 == 0) and np.all(dv0 == 0)


def test_gravity_examples():
    np.testing.assert_allclose(gravity(E1, P), [1, 0, 0])
    np.testing.assert_allclose(gravity(2 * E1, P), [0.25, 0, 0])
    np.testing.assert_allclose(gravity(np.array([0.0, 1.0, 0.0]), P), [0, 1, 0])


def test_gravity_jacobian_examples():
    np.testing.assert_allclose(gravity_jacobian(E1, P), np.diag([-2.0, 1.0, 1.0]), atol=1e-15)
    r = np.array([0.4, -1.1, 0.7])
    G = gravity_jacobian(r, P)
    np.testing.assert_allclose(G, G.T)
    assert abs(np.trace(G)) < 1e-14


def test_state_rhs_examples():
    x = RocketState(E1, 0.1 * E1, 1.0)
    d = state_rhs(x, np.zeros(3), P)
    np.testing.assert_allclose(d[3:6], [-4.1, 0, 0], rtol=1e-12)
    assert d[6] == 0.0
    d = state_rhs(x, E1, P)
    np.testing.assert_allclose(d[3:6], [-0.6, 0, 0], rtol=1e-12, atol=1e-15)
    assert d[6] == -7.0
    r = np.array([1.0, 0.01, 0.0])
    d = state_rhs(RocketState(r, np.zeros(3), 1.0), np.zeros(3), P)
    np.testing.assert_allclose(d[3:6], -gravity(r, P))
    assert d[6] == 0.0


def test_nonpositive_mass():
    with pytest.raises(NonpositiveMass):
        RocketState(E1, np.zeros(3), 0.0)
    x = RocketState(E1, np.zeros(3), 1.0)
    x.m = -1.0
    with pytest.raises(NonpositiveMass):
        state_rhs(x, np.zeros(3), P)


def test_parameter_validation():
    with pytest.raises(ValueError):
        ModelParams(theta=1.5)
    with pytest.raises(ValueError):
        BoundaryConditions(m0=0.0)
    bc = BoundaryConditions()
    np.testing.assert_allclose(bc.r0, [0.999949994, 0.0001, 0.01])
    np.testing.assert_allclose(bc.r_f, [1.01, 0, 0])


def test_drag_partials_match_finite_differences():
    assert oracles.drag_partials_error(np.random.default_rng(1)) < 1e-5


def test_gravity_jacobian_matches_finite_differences():
    assert oracles.gravity_jacobian_error(np.random.default_rng(2)) < 1e-6


unit = st.floats(-1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(unit, min_size=3, max_size=3), st.lists(unit, min_size=3, max_size=3),
       st.floats(0.99, 1.02), st.floats(0.0, 1.0))
def test_drag_nonnegative_and_decreasing_in_radius(d, v, rad, dr):
    d = np.array(d)
    if np.linalg.norm(d) < 1e-3:
        d = E1
    d = d / np.linalg.norm(d)
    v = np.array(v)
    D1 = drag(rad * d, v, P)
    D2 = drag((rad + 0.01 * dr + 1e-6) * d, v, P)
    assert D1 >= 0
    assert D2 <= D1


@settings(max_examples=100, deadline=None)
@given(st.lists(unit, min_size=3, max_size=3), st.floats(0.1, 1.0))
def test_mass_rate_nonpositive(u, m):
    u = np.array(u)
    if np.linalg.norm(u) > 1:
        u = u / np.linalg.norm(u)
    d = state_rhs(RocketState(E1, 0.1 * E1, m), u, P)
    assert d[6] <= 0
