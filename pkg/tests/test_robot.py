"""Robot-model checks: preset geometry, angle conventions, rolling contact.

Rolling Jacobians and balance quantities are verified against trajectory
finite differences and against hand-built rolling motions (straight roll,
spin in place, random null-space combinations), never against themselves.
"""

import numpy as np
import pytest

from wheelbip import robot, spatial
from wheelbip.robot import (
    balance_state,
    build_robot,
    contact_frame,
    default_params,
    leg_angles_to_joints,
    rolling_constraint,
    standing_configuration,
    upper_body_indices,
    wheel_contact_point,
)

PARAMS = default_params()
TREE = build_robot(PARAMS)


def _standing(theta_p=0.25, theta_h=0.6, theta_k=-0.35, **kw):
    pitch, q_hip, q_knee = leg_angles_to_joints(theta_p, theta_h, theta_k)
    return standing_configuration(TREE, PARAMS, pitch, q_hip, q_knee, **kw)


def _rolling_velocity(q, rng, scale=1.0):
    """Random generalized velocity in the null space of the rolling rows."""
    jac = rolling_constraint(TREE, PARAMS, q, np.zeros(TREE.ndof)).jacobian
    _, s, vt = np.linalg.svd(jac)
    null = vt[np.sum(s > 1e-9):]
    return scale * (null.T @ rng.standard_normal(null.shape[0]))


def test_preset_masses_and_layout():
    assert TREE.ndof == 12
    assert TREE.total_mass == pytest.approx(13.1, abs=1e-12)
    names = [b.name for b in TREE.bodies]
    assert names == ["pelvis", "thigh_l", "shank_l", "wheel_l",
                     "thigh_r", "shank_r", "wheel_r"]
    assert [TREE.dof_slice(TREE.body_index(n)).start
            for n in robot.JOINT_BODIES] == [6, 7, 8, 9, 10, 11]
    masses = [TREE.bodies[i].mass for i in upper_body_indices(TREE)]
    assert sum(masses) == pytest.approx(PARAMS.cart_mass, abs=1e-12)
    assert PARAMS.cart_mass == pytest.approx(11.1, abs=1e-12)


def test_zero_configuration_geometry():
    q = np.zeros(TREE.ndof)
    kin = spatial.compute_kinematics(TREE, q)
    half = 0.5 * PARAMS.track_width
    drop = PARAMS.thigh_length + PARAMS.shank_length
    np.testing.assert_allclose(
        kin.p[TREE.body_index("wheel_l")], [0.0, half, -drop], atol=1e-12)
    np.testing.assert_allclose(
        kin.p[TREE.body_index("wheel_r")], [0.0, -half, -drop], atol=1e-12)
    for i in range(TREE.nbodies):
        np.testing.assert_allclose(kin.R[i], np.eye(3), atol=1e-12)


def test_standing_configuration_grounds_both_axles():
    q = _standing(x=0.4, y=-0.2, yaw=0.7)
    kin = spatial.compute_kinematics(TREE, q)
    for name in robot.WHEEL_NAMES:
        assert kin.p[TREE.body_index(name)][2] == pytest.approx(
            PARAMS.wheel_radius, abs=1e-12)


def test_leg_angle_map_matches_sagittal_geometry():
    theta_p, theta_h, theta_k = 0.3, 0.7, -0.4
    q = _standing(theta_p, theta_h, theta_k)
    kin = spatial.compute_kinematics(TREE, q)
    hip = kin.p[TREE.body_index("thigh_l")]
    knee = kin.p[TREE.body_index("shank_l")]
    axle = kin.p[TREE.body_index("wheel_l")]
    trunk_com = kin.p[0] + kin.R[0] @ TREE.bodies[0].com
    lh, lk, lp = PARAMS.thigh_length, PARAMS.shank_length, PARAMS.pelvis_com_height
    # Each angle is measured from vertical; positive tips the distal point
    # forward (+x) of the proximal one.
    assert trunk_com[0] - hip[0] == pytest.approx(lp * np.sin(theta_p), abs=1e-12)
    assert trunk_com[2] - hip[2] == pytest.approx(lp * np.cos(theta_p), abs=1e-12)
    assert knee[0] - hip[0] == pytest.approx(lh * np.sin(theta_h), abs=1e-12)
    assert hip[2] - knee[2] == pytest.approx(lh * np.cos(theta_h), abs=1e-12)
    assert axle[0] - knee[0] == pytest.approx(lk * np.sin(theta_k), abs=1e-12)
    assert knee[2] - axle[2] == pytest.approx(lk * np.cos(theta_k), abs=1e-12)


def test_wheel_contact_point_projects_normal_off_axis():
    center = np.array([0.3, -0.1, 0.4])
    axis = np.array([0.0, 1.0, 0.0])
    tilted = np.array([0.0, 0.3, 0.95])
    tilted /= np.linalg.norm(tilted)
    contact = wheel_contact_point(center, axis, tilted, 0.1)
    np.testing.assert_allclose(contact, center - 0.1 * np.array([0, 0, 1.0]),
                               atol=1e-12)
    slope = np.array([np.sin(0.26), 0.0, np.cos(0.26)])
    contact = wheel_contact_point(center, axis, slope, 0.1)
    np.testing.assert_allclose(contact, center - 0.1 * slope, atol=1e-12)
    frame = contact_frame(axis, slope)
    np.testing.assert_allclose(frame @ frame.T, np.eye(3), atol=1e-12)
    assert frame[0] @ np.array([1.0, 0, 0]) > 0.9  # heading stays forward


def test_straight_roll_and_spin_have_zero_contact_velocity():
    q = _standing()
    spin_rate = 3.0
    qd = np.zeros(TREE.ndof)
    qd[0] = PARAMS.wheel_radius * spin_rate
    qd[list(robot.WHEEL_DOFS)] = spin_rate
    contact = rolling_constraint(TREE, PARAMS, q, qd)
    np.testing.assert_allclose(contact.velocity, 0.0, atol=1e-12)

    # Spin in place about the contact line: straight legs put the axles
    # directly under the base, so yawing about the base origin is rolling.
    q = _standing(0.0, 0.0, 0.0)
    yaw_rate = 1.7
    half = 0.5 * PARAMS.track_width
    qd = np.zeros(TREE.ndof)
    qd[3] = yaw_rate
    qd[robot.WHEEL_DOFS[0]] = -half * yaw_rate / PARAMS.wheel_radius
    qd[robot.WHEEL_DOFS[1]] = half * yaw_rate / PARAMS.wheel_radius
    contact = rolling_constraint(TREE, PARAMS, q, qd)
    np.testing.assert_allclose(contact.velocity, 0.0, atol=1e-12)


def test_rolling_rows_have_one_lateral_redundancy():
    # The contacts differ by a vector along the shared lateral direction, so
    # the two lateral rows coincide and only five rows are independent.
    q = _standing(yaw=0.9)
    contact = rolling_constraint(TREE, PARAMS, q, np.zeros(TREE.ndof))
    assert np.linalg.matrix_rank(contact.jacobian, tol=1e-9) == 5
    np.testing.assert_allclose(contact.jacobian[1], contact.jacobian[4],
                               atol=1e-12)


def test_enforced_rolling_system_always_solvable():
    # The raw six-row system can be contradictory (symmetric poses force the
    # lateral rows onto one line while their targets differ); the enforced
    # five-row system must stay full rank with a consistent target.
    rng = np.random.default_rng(9)
    base = _standing(yaw=0.3)
    variants = [base]
    rolled = base.copy()
    rolled[5] = 0.18
    variants.append(rolled)
    split = base.copy()
    split[6] += 0.1
    split[9] -= 0.07
    variants.append(split)
    for q in variants:
        for _ in range(3):
            qd = 0.4 * rng.standard_normal(TREE.ndof)
            contact = rolling_constraint(TREE, PARAMS, q, qd)
            jac = contact.constraint_jacobian
            assert jac.shape == (5, TREE.ndof)
            assert np.linalg.matrix_rank(jac, tol=1e-9) == 5
            sol, *_ = np.linalg.lstsq(jac, contact.constraint_rhs, rcond=None)
            assert np.linalg.norm(jac @ sol - contact.constraint_rhs) < 1e-9


def test_rolling_acceleration_matches_finite_difference():
    """(d/dt)(contact velocity) == J qdd - rhs along any rolling state."""
    rng = np.random.default_rng(3)
    q0 = _standing(yaw=0.4)
    for _ in range(4):
        qd = _rolling_velocity(q0, rng)
        qdd = rng.standard_normal(TREE.ndof)
        contact = rolling_constraint(TREE, PARAMS, q0, qd)
        np.testing.assert_allclose(contact.velocity, 0.0, atol=1e-9)
        dt = 1e-6
        vels = []
        for sgn in (1.0, -1.0):
            qp = q0 + sgn * dt * qd + 0.5 * dt * dt * qdd
            vp = qd + sgn * dt * qdd
            vels.append(rolling_constraint(TREE, PARAMS, qp, vp).velocity)
        fd = (vels[0] - vels[1]) / (2.0 * dt)
        np.testing.assert_allclose(
            contact.jacobian @ qdd - contact.rhs, fd, atol=2e-5)


def test_accelerating_straight_roll_satisfies_constraint():
    q = _standing()
    spin_rate, spin_acc = 2.0, 5.0
    qd = np.zeros(TREE.ndof)
    qd[0] = PARAMS.wheel_radius * spin_rate
    qd[list(robot.WHEEL_DOFS)] = spin_rate
    qdd = np.zeros(TREE.ndof)
    qdd[0] = PARAMS.wheel_radius * spin_acc
    qdd[list(robot.WHEEL_DOFS)] = spin_acc
    contact = rolling_constraint(TREE, PARAMS, q, qd)
    np.testing.assert_allclose(contact.jacobian @ qdd, contact.rhs, atol=1e-12)


def test_balance_state_matches_finite_difference():
    rng = np.random.default_rng(7)
    for _ in range(3):
        q0 = _standing(yaw=rng.uniform(-1.0, 1.0), x=rng.uniform(-1, 1))
        qd = rng.standard_normal(TREE.ndof) * 0.5
        qdd = rng.standard_normal(TREE.ndof)
        state = balance_state(TREE, PARAMS, q0, qd)
        dt = 1e-6
        dx, dxd = [], []
        for sgn in (1.0, -1.0):
            qp = q0 + sgn * dt * qd + 0.5 * dt * dt * qdd
            vp = qd + sgn * dt * qdd
            sp = balance_state(TREE, PARAMS, qp, vp)
            dx.append(sp.delta_x)
            dxd.append(sp.delta_x_dot)
        assert (dx[0] - dx[1]) / (2 * dt) == pytest.approx(
            state.delta_x_dot, abs=1e-6)
        assert (dxd[0] - dxd[1]) / (2 * dt) == pytest.approx(
            state.jacobian @ qdd + state.bias, abs=2e-5)


def test_balance_state_measures_lean_and_height():
    q = _standing(theta_p=0.25, theta_h=0.6, theta_k=-0.35)
    state = balance_state(TREE, PARAMS, q, np.zeros(TREE.ndof))
    kin = spatial.compute_kinematics(TREE, q)
    com, _, _, _ = spatial.com_kinematics(
        TREE, q, np.zeros(TREE.ndof), bodies=robot.upper_body_indices(TREE))
    axle_mid = 0.5 * (kin.p[TREE.body_index("wheel_l")]
                      + kin.p[TREE.body_index("wheel_r")])
    assert state.delta_x == pytest.approx(com[0] - axle_mid[0], abs=1e-12)
    assert state.height == pytest.approx(com[2] - axle_mid[2], abs=1e-12)
    assert state.height > 0.3

    # Rotating the whole standing pose about z must leave the lean invariant.
    q_rot = _standing(theta_p=0.25, theta_h=0.6, theta_k=-0.35, yaw=1.2)
    rotated = balance_state(TREE, PARAMS, q_rot, np.zeros(TREE.ndof))
    assert rotated.delta_x == pytest.approx(state.delta_x, abs=1e-12)
    assert rotated.height == pytest.approx(state.height, abs=1e-12)


def test_forward_com_velocity_tracks_straight_roll():
    q = _standing()
    qd = np.zeros(TREE.ndof)
    qd[0] = 0.8
    qd[list(robot.WHEEL_DOFS)] = 0.8 / PARAMS.wheel_radius
    state = balance_state(TREE, PARAMS, q, qd)
    assert state.com_velocity == pytest.approx(0.8, abs=1e-12)
    assert state.delta_x_dot == pytest.approx(0.0, abs=1e-12)
