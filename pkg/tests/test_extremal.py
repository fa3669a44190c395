import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from goddard.errors import DegenerateA, ZeroPv, ZeroVelocity
from goddard.extremal import (
    ControlMode,
    CostConvention,
    Costate,
    ExtremalPoint,
    control_law,
    costate_rhs,
    degeneracy_check,
    extremal_field,
    extremal_rhs,
    hamiltonian,
    pack,
    psi_ddot,
    singular_alpha,
    singular_alpha_from_samples,
    switching,
    xi,
)
from goddard.model import ModelParams, RocketState, drag, drag_partials, gravity_jacobian

P = ModelParams()
E1, E2 = np.eye(3)[0], np.eye(3)[1]
Z3 = np.zeros(3)
X = RocketState(E1, 0.1 * E1, 1.0)


def test_hamiltonian_examples():
    assert hamiltonian(X, Costate(Z3, Z3, 0.0), Z3, params=P) == 0.0
    p0 = Costate(Z3, Z3, 0.0)
    assert hamiltonian(X, p0, E1, CostConvention.MinFuel, lam=1.0, params=P) == pytest.approx(-1.0)
    assert hamiltonian(X, p0, E1, CostConvention.MinFuel, lam=0.0, params=P) == pytest.approx(-2.0)
    # the final-mass form has no running cost
    assert hamiltonian(X, Costate(Z3, Z3, 0.5), E1, CostConvention.FinalMass, params=P) == pytest.approx(-3.5)


def test_costate_rhs_examples():
    d = costate_rhs(X, Costate(E1, Z3, 0.3), E1, P)
    np.testing.assert_allclose(d.p_r, Z3)
    np.testing.assert_allclose(d.p_v, -E1)
    assert d.p_m == 0.0
    d = costate_rhs(X, Costate(np.array([0.2, -1, 3]), Z3, 1.0), np.array([0.1, 0.7, 0.2]), P)
    assert d.p_m == 0.0


def test_costate_matches_hamiltonian_gradient():
    assert oracles.costate_gradient_error(np.random.default_rng(3)) < 1e-5


def test_switching_examples():
    p = Costate(Z3, E1, 0.0)
    assert switching(X, p, CostConvention.MinFuel, P) == pytest.approx(2.5)
    assert switching(X, Costate(Z3, E1, 0.5), CostConvention.FinalMass, P) == pytest.approx(0.0)
    assert switching(X, Costate(Z3, Z3, 0.0), CostConvention.MinFuel, P) == pytest.approx(-1.0)


def xi_uncorrected(x, p, params=P):
    """Term-by-term transcription with +<p_v, p_r> and the dD/dm slot in place of D|p_v|^2/(m|v|)."""
    nv, npv = np.linalg.norm(x.v), np.linalg.norm(p.p_v)
    m, b, C = x.m, params.b, params.C
    D = drag(x.r, x.v, params)
    _, dD_dv = drag_partials(x.r, x.v, params)
    pvv = p.p_v @ x.v
    inner = p.p_v @ p.p_r + pvv / (m * nv) * (dD_dv @ p.p_v) + 0.0 * npv**2 / (m * nv) - D / m * pvv**2 / nv**3
    return D * b / (m * m * nv) * pvv + C / (m * npv) * inner


def _psi_rate(y, alpha, h=1e-7):
    return (switching(*_split(oracles._rk4(y, h, alpha, P)), params=P)
            - switching(*_split(oracles._rk4(y, -h, alpha, P)), params=P)) / (2 * h)


def test_xi_orthogonal_example():
    p = Costate(Z3, E2, 0.0)
    # every inner product vanishes, but the D|p_v|^2/(m|v|) term does not: C * 3.1 / 0.1
    assert xi_uncorrected(X, p) == pytest.approx(0.0, abs=1e-12)
    assert xi(X, p, P) == pytest.approx(108.5, rel=1e-12)
    assert _psi_rate(pack(X, p), 0.4) == pytest.approx(108.5, rel=1e-6)


def test_xi_collinear_example_and_trajectory_oracle():
    p = Costate(Z3, E1, 0.0)
    # the uncorrected transcription gives 130.2 here; the time derivative of psi is 238.7
    assert xi_uncorrected(X, p) == pytest.approx(130.2, rel=1e-12)
    assert xi(X, p, P) == pytest.approx(238.7, rel=1e-12)
    assert _psi_rate(pack(X, p), 0.4) == pytest.approx(238.7, rel=1e-6)


def _split(y):
    return RocketState(y[0:3], y[3:6], y[6]), Costate(y[7:10], y[10:13], y[13])


def test_xi_matches_trajectory_derivative_of_psi():
    rng = np.random.default_rng(4)
    assert oracles.xi_trajectory_error(rng) < 1e-4
    # the uncorrected transcription fails the same oracle
    assert oracles.xi_trajectory_error(np.random.default_rng(4), n=20, xi_fn=xi_uncorrected) > 1e-2


def test_xi_does_not_depend_on_thrust_level():
    rng = np.random.default_rng(5)
    x, p = oracles.random_point(rng)
    vals = [_psi_rate(pack(x, p), a) for a in (0.0, 0.5, 1.0)]
    np.testing.assert_allclose(vals, xi(x, p, P), rtol=1e-5)


def test_xi_singularities():
    with pytest.raises(ZeroVelocity):
        xi(RocketState(E1, Z3, 1.0), Costate(Z3, E1, 0.0), P)
    with pytest.raises(ZeroPv):
        xi(X, Costate(E1, Z3, 0.0), P)


def test_psi_ddot_affine_in_alpha():
    assert oracles.affinity_error(np.random.default_rng(6)) < 1e-8


@pytest.mark.parametrize("method", ["complex", "central"])
def test_psi_ddot_trajectory_oracle(method):
    assert oracles.psi_ddot_trajectory_error(np.random.default_rng(7), method=method) < 1e-3


def test_psi_ddot_drag_free_gravity_coupling():
    # with D = 0 and p_r = 0, xi = -C<p_v,p_r>/(m|p_v|) and only dp_r/dt = G p_v survives
    p0 = P.with_(theta=0.0)
    r = np.array([1.003, 0.02, -0.01])
    x = RocketState(r, np.array([0.05, 0.2, 0.1]), 0.8)
    pv = np.array([0.3, -0.5, 0.8])
    p = Costate(Z3, pv, -0.2)
    expected = -p0.C * (pv @ gravity_jacobian(r, p0) @ pv) / (x.m * np.linalg.norm(pv))
    assert psi_ddot(x, p, 0.0, params=p0) == pytest.approx(expected, rel=1e-10)


def test_psi_ddot_singularities():
    with pytest.raises(ZeroVelocity):
        psi_ddot(RocketState(E1, Z3, 1.0), Costate(Z3, E1, 0.0), 0.5, params=P)
    with pytest.raises(ZeroPv):
        psi_ddot(X, Costate(E1, Z3, 0.0), 0.5, params=P)


def test_singular_alpha_examples():
    assert singular_alpha_from_samples(-2.0, 2.0) == pytest.approx(0.5)
    assert singular_alpha_from_samples(0.0, 3.0) == 0.0
    with pytest.raises(DegenerateA):
        singular_alpha_from_samples(1.7, 1.7)


def test_singular_alpha_zeroes_psi_ddot():
    rng = np.random.default_rng(8)
    for _ in range(20):
        x, p = oracles.random_point(rng)
        a = singular_alpha(x, p, params=P)
        assert abs(psi_ddot(x, p, a, params=P)) <= 1e-8 * max(1.0, abs(psi_ddot(x, p, 0.0, params=P)))


def _psi_point(psi, lam):
    # |p_v| chosen so that C|p_v|/m - 1 = psi with p_m = 0
    return P.with_(lam=lam), Costate(Z3, (psi + 1.0) / P.C * E1, 0.0)


def test_regularized_control_examples():
    par, p = _psi_point(1.0, 0.0)
    u = control_law(X, p, mode=ControlMode.Regularized, params=par)
    assert np.linalg.norm(u) == pytest.approx(0.5)
    np.testing.assert_allclose(u / np.linalg.norm(u), E1)
    par, p = _psi_point(3.0, 0.0)
    assert np.linalg.norm(control_law(X, p, mode=ControlMode.Regularized, params=par)) == pytest.approx(1.0)
    for lam in (0.0, 0.5, 0.99):
        par, p = _psi_point(-0.3, lam)
        assert np.all(control_law(X, p, mode=ControlMode.Regularized, params=par) == 0)
    assert np.all(control_law(X, Costate(E1, Z3, -1.0), mode=ControlMode.Regularized, params=P) == 0)


def test_regularized_control_maximizes_grid():
    rng = np.random.default_rng(9)
    grid = np.linspace(0.0, 1.0, 10_001)
    for _ in range(100):
        psi, lam = rng.uniform(-2, 4), rng.uniform(0, 0.999)
        par, p = _psi_point(psi, lam)
        rho = np.linalg.norm(control_law(X, p, mode=ControlMode.Regularized, params=par))
        f = psi * grid - (1 - lam) * grid**2
        assert psi * rho - (1 - lam) * rho**2 >= f.max() - 1e-12


def test_bang_control():
    diag = {}
    u = control_law(X, Costate(Z3, 2 * E2, 0.0), mode=ControlMode.Bang, params=P, diag=diag)
    np.testing.assert_allclose(u, E2)
    assert diag["near_switch"] is False
    assert np.all(control_law(X, Costate(Z3, 0.1 * E2, 0.0), params=P) == 0)
    # psi = 0 exactly: flagged, and the point is not a thrust point
    diag = {}
    control_law(X, Costate(Z3, E2 / P.C, 0.0), params=P, diag=diag)
    assert diag["near_switch"]


def test_singular_control_clamps_and_reports_raw():
    rng = np.random.default_rng(10)
    for _ in range(20):
        x, p = oracles.random_point(rng)
        diag = {}
        u = control_law(x, p, mode=ControlMode.Singular, params=P, diag=diag)
        assert np.linalg.norm(u) == pytest.approx(min(max(diag["alpha_raw"], 0.0), 1.0), abs=1e-12)
    with pytest.raises(ZeroPv):
        control_law(X, Costate(E1, Z3, 0.0), mode=ControlMode.Singular, params=P)


def test_extremal_rhs_time_components():
    rng = np.random.default_rng(11)
    x, p = oracles.random_point(rng)
    e = ExtremalPoint(x, p, 1.0, 0.0)
    d = extremal_rhs(e, mode=ControlMode.Bang, params=P)
    assert d.size == 16 and d[14] == 0.0
    u = control_law(x, p, mode=ControlMode.Bang, params=P)
    np.testing.assert_allclose(d[:14], extremal_field(pack(x, p), np.linalg.norm(u), P))
    assert d[15] == pytest.approx(-hamiltonian(x, p, u, lam=1.0, params=P))
    # the state/costate part scales with t_f; dp_tf/ds = -H is the t_f-derivative of t_f * H
    d2 = extremal_rhs(ExtremalPoint(x, p, 0.3, 0.0), mode=ControlMode.Bang, params=P)
    np.testing.assert_allclose(d2[:15], 0.3 * d[:15])
    assert d2[15] == d[15]


def test_extremal_rhs_zero_hamiltonian():
    # null thrust, p_r orthogonal to v and p_v = 0: H = <p_r, v> = 0
    x = RocketState(E1, 0.1 * E1, 1.0)
    e = ExtremalPoint(x, Costate(E2, Z3, 0.0), 0.2, 0.0)
    assert extremal_rhs(e, params=P)[15] == 0.0


def test_degeneracy_check_examples():
    assert degeneracy_check(Costate(Z3, Z3, 1.0))
    assert not degeneracy_check(Costate(Z3, E1, 0.0))
    assert degeneracy_check(Costate(1e-12 * E1, Z3, -1.0), tol=1e-9)
    assert degeneracy_check(ExtremalPoint(X, Costate(Z3, Z3, 0.0), 0.2, 0.0))


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(0.0, 0.999))
def test_regularized_magnitude_in_unit_interval(psi, lam):
    par, p = _psi_point(psi, lam)
    rho = np.linalg.norm(control_law(X, p, mode=ControlMode.Regularized, params=par))
    assert 0.0 <= rho <= 1.0 + 1e-15
