"""Reduced-model checks: closed-form matrix entries, energy conservation,
superposition, and finite-difference linearization oracles."""

import numpy as np
import pytest

from wheelbip.reduced import (
    WipParams,
    WlipParams,
    lip_acceleration,
    wip_com_equivalents,
    wip_dynamics,
    wip_dynamics_jacobian,
    wip_energy,
    wip_mass_matrix,
    wlip_controllability,
    wlip_matrices,
)

WIP = WipParams(m_c=10.0, m_w=2.0, l=0.35, I_c=10.0 * 0.35 ** 2 / 3.0,
                I_w=0.5 * 2.0 * 0.1 ** 2, r_w=0.1)


def _rk4(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def test_lip_acceleration():
    assert lip_acceleration(0.3, 0.3, 0.5) == 0.0
    assert lip_acceleration(1.0, 0.0, 9.81) == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, x0, z = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.1, 2)
        acc = lip_acceleration(x, x0, z)
        assert acc * (x - x0) >= 0.0
    with pytest.raises(ValueError):
        lip_acceleration(0.0, 0.0, -0.5)


def test_wlip_matrix_entries():
    A, B = wlip_matrices(WlipParams(m_c=1.0, m_w=1.0, r_w=0.1, z=1.0))
    assert A[0][2] == pytest.approx(9.81, abs=1e-12)
    assert A[1][2] == pytest.approx(19.62, abs=1e-12)
    np.testing.assert_allclose(B, [1.0, -8.0, 0.0], atol=1e-12)
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = WlipParams(m_c=rng.uniform(1, 20), m_w=rng.uniform(0.5, 5),
                       r_w=rng.uniform(0.05, 0.2), z=rng.uniform(0.2, 0.6))
        A, B = wlip_matrices(p)
        assert A[2][1] == 1.0
        doubled, _ = wlip_matrices(WlipParams(2 * p.m_c, p.m_w, p.r_w, p.z))
        assert abs(doubled[1][2]) > abs(A[1][2])
    with pytest.raises(ValueError):
        WlipParams(m_c=1.0, m_w=1.0, r_w=-0.1, z=1.0)
    with pytest.raises(ValueError):
        WlipParams(m_c=1.0, m_w=1.0, r_w=0.1, z=0.0)


def test_wlip_controllable_for_random_parameters():
    rng = np.random.default_rng(2)
    for _ in range(200):
        p = WlipParams(m_c=rng.uniform(0.5, 30), m_w=rng.uniform(0.2, 8),
                       r_w=rng.uniform(0.03, 0.3), z=rng.uniform(0.1, 1.0))
        assert wlip_controllability(*wlip_matrices(p)) == 3
    A, _ = wlip_matrices(WlipParams(1.0, 1.0, 0.1, 1.0))
    assert wlip_controllability(A, np.zeros(3)) == 0


def test_wlip_degenerate_height_loses_the_lean_input():
    # At z = r_w (1 + m_w/m_c) the torque column of the lean subsystem
    # vanishes, so only the forward-speed direction stays reachable.
    p = WlipParams(m_c=1.0, m_w=1.0, r_w=0.1, z=0.2)
    A, B = wlip_matrices(p)
    assert B[1] == pytest.approx(0.0, abs=1e-15)
    assert B[0] != 0.0
    assert wlip_controllability(A, B) == 1


def test_wlip_superposition():
    # RK4 is a linear map for a linear system, so superposition holds to
    # machine precision regardless of the integration error.
    p = WlipParams(m_c=11.1, m_w=2.0, r_w=0.1, z=0.35)
    A, B = wlip_matrices(p)
    rng = np.random.default_rng(3)
    x1, x2 = rng.standard_normal(3) * 0.1, rng.standard_normal(3) * 0.1
    x12 = x1 + x2
    dt = 1e-3
    for _ in range(500):
        u1, u2 = rng.uniform(-5, 5), rng.uniform(-5, 5)
        x1 = _rk4(lambda x: A @ x + B * u1, x1, dt)
        x2 = _rk4(lambda x: A @ x + B * u2, x2, dt)
        x12 = _rk4(lambda x: A @ x + B * (u1 + u2), x12, dt)
    np.testing.assert_allclose(x12, x1 + x2, atol=1e-9)


def test_wip_upright_equilibrium():
    deriv = wip_dynamics(WIP, np.zeros(4), 0.0)
    np.testing.assert_allclose(deriv, 0.0, atol=1e-15)


def test_wip_energy_conserved_without_torque():
    state = np.array([0.0, 0.3, 0.4, 0.0])
    e0 = wip_energy(WIP, state)
    dt = 1e-4
    for _ in range(20_000):
        state = _rk4(lambda x: wip_dynamics(WIP, x, 0.0), state, dt)
    drift = abs(wip_energy(WIP, state) - e0) / abs(e0)
    assert drift < 1e-6


def test_wip_linearization_matches_pendulum_cart_closed_form():
    # Upright linearization written out by hand from the two torque
    # balances, then compared against finite differences of the dynamics.
    p = WIP
    M0 = np.array([[p.I_c + p.m_c * p.l ** 2, p.m_c * p.l],
                   [p.m_c * p.l * p.r_w,
                    (p.I_w + (p.m_c + p.m_w) * p.r_w ** 2) / p.r_w]])
    dtheta = np.linalg.solve(M0, [p.m_c * p.g * p.l, 0.0])
    dtau = np.linalg.solve(M0, [-1.0, 1.0])
    eps = 1e-7
    for k, expect in ((2, dtheta), (None, dtau)):
        plus, minus = np.zeros(4), np.zeros(4)
        if k is None:
            fd = (wip_dynamics(p, np.zeros(4), eps)
                  - wip_dynamics(p, np.zeros(4), -eps)) / (2 * eps)
        else:
            plus[k], minus[k] = eps, -eps
            fd = (wip_dynamics(p, plus, 0.0)
                  - wip_dynamics(p, minus, 0.0)) / (2 * eps)
        np.testing.assert_allclose(fd[:2], expect, atol=1e-6)


def test_wip_jacobian_matches_finite_difference():
    rng = np.random.default_rng(4)
    for _ in range(5):
        state = rng.standard_normal(4) * np.array([1.0, 1.0, 0.8, 1.0])
        tau = rng.uniform(-4, 4)
        A, B = wip_dynamics_jacobian(WIP, state, tau)
        eps = 1e-6
        for k in range(4):
            d = np.zeros(4)
            d[k] = eps
            fd = (wip_dynamics(WIP, state + d, tau)
                  - wip_dynamics(WIP, state - d, tau)) / (2 * eps)
            np.testing.assert_allclose(A[:, k], fd, atol=1e-5)
        fd = (wip_dynamics(WIP, state, tau + eps)
              - wip_dynamics(WIP, state, tau - eps)) / (2 * eps)
        np.testing.assert_allclose(B, fd, atol=1e-5)


def test_both_models_are_open_loop_unstable():
    A, _ = wlip_matrices(WlipParams(m_c=11.1, m_w=2.0, r_w=0.1, z=0.35))
    assert np.max(np.linalg.eigvals(A).real) > 1.0
    A_wip, _ = wip_dynamics_jacobian(WIP, np.zeros(4), 0.0)
    assert np.max(np.linalg.eigvals(A_wip).real) > 1.0


def test_wip_com_equivalents():
    assert wip_com_equivalents(0.0, 0.0, 0.4) == (0.0, 0.0)
    for dx in (1e-3, 5e-3, 1e-2):
        theta, _ = wip_com_equivalents(dx, 0.0, 0.4)
        assert theta == pytest.approx(dx / 0.4, abs=(dx / 0.4) ** 2)
    z = 0.35
    state = np.array([0.02, 0.3])  # (delta_x, delta_x_dot)
    dt = 1e-6
    th_plus = wip_com_equivalents(state[0] + dt * state[1], state[1], z)[0]
    th_minus = wip_com_equivalents(state[0] - dt * state[1], state[1], z)[0]
    theta_dot = wip_com_equivalents(state[0], state[1], z)[1]
    assert (th_plus - th_minus) / (2 * dt) == pytest.approx(theta_dot, abs=1e-5)
    with pytest.raises(ValueError):
        wip_com_equivalents(0.5, 0.0, 0.4)


def test_wip_mass_matrix_invertible_everywhere():
    # The two rows mix torque and force balances, so the matrix is not
    # symmetric; what matters is a uniformly positive determinant.
    for theta in np.linspace(-np.pi, np.pi, 41):
        M = wip_mass_matrix(WIP, theta)
        assert np.linalg.det(M) > 1e-3
        assert np.linalg.cond(M) < 1e3
