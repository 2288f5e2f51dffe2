"""Tests for the static leg-design module."""
import numpy as np
import pytest

from wheelbip.design import (
    DesignParams,
    InfeasibleHeightError,
    LegLengths,
    com_placement_violation,
    design_nlp_grid,
    leg_gravity_torques,
    leg_joint_positions,
    leg_workspace_reach,
    pelvis_ik,
    solve_moment_arms,
    static_joint_torques,
)
from wheelbip.robot import build_robot, default_params, leg_angles_to_joints
from wheelbip.spatial import body_jacobian


def test_moment_arms_published_split():
    l1, l2 = solve_moment_arms(4.2, 5.8)
    assert abs(l1 - 0.64) < 1e-9
    assert abs(l2 - 1.36) < 1e-9


def test_moment_arms_exact_ratio():
    l1, l2 = solve_moment_arms(4.2, 5.8, ratio_ndigits=None)
    ratio = 4.2 / 5.8
    assert abs((l2 - l1) - ratio) < 1e-12
    assert abs(l1 + l2 - 2.0) < 1e-12


def test_moment_arms_properties():
    rng = np.random.default_rng(7)
    for _ in range(50):
        m, M = rng.uniform(0.1, 20.0, size=2)
        l1, l2 = solve_moment_arms(m, M, ratio_ndigits=None)
        assert abs(l1 + l2 - 2.0) < 1e-12
        s1, s2 = solve_moment_arms(3.0 * m, 3.0 * M, ratio_ndigits=None)
        assert abs(s1 - l1) < 1e-12 and abs(s2 - l2) < 1e-12
    assert solve_moment_arms(0.0, 5.0) == (1.0, 1.0)
    with pytest.raises(ValueError):
        solve_moment_arms(1.0, 0.0)


def test_static_torque_map_examples():
    lengths = LegLengths()
    assert np.allclose(static_joint_torques(np.array([0.1, 0.4, -0.2]),
                                            lengths, 0.0), 0.0)
    # At theta_K = 0 the printed map reduces to (l_k G, 0).
    tau = static_joint_torques(np.array([0.0, 0.5, 0.0]), lengths, 98.1)
    assert np.allclose(tau, [lengths.l_k * 98.1, 0.0], atol=1e-12)


def test_gravity_torques_match_robot_jacobian():
    params = default_params()
    tree = build_robot(params)
    wheel = tree.body_index("wheel_l")
    lengths = LegLengths(l_h=params.thigh_length, l_k=params.shank_length)
    G = 10.0 * 9.81
    rng = np.random.default_rng(11)
    load = np.array([0.0, 0.0, -G])
    for _ in range(20):
        theta_h = rng.uniform(-1.2, 1.2)
        theta_k = rng.uniform(-1.2, 1.2)
        _, q_hip, q_knee = leg_angles_to_joints(0.0, theta_h, theta_k)
        q = np.zeros(tree.ndof)
        q[6], q[7] = q_hip, q_knee
        jac = body_jacobian(tree, q, wheel)
        tau = jac[3:, [6, 7]].T @ load
        expected = leg_gravity_torques(theta_h, theta_k, lengths, G)
        assert np.allclose(tau, expected, atol=1e-9)


def test_beta_default():
    assert abs(DesignParams().beta - 0.7912) < 1e-12


def test_pelvis_ik_back_substitution():
    lengths = LegLengths()
    params = DesignParams()
    for z_d in np.linspace(0.20, 0.45, 60):
        ik = pelvis_ik(z_d, lengths, params)
        height = (lengths.l_h * np.cos(ik.theta_h)
                  + lengths.l_k * np.cos(ik.theta_k))
        assert abs(height - z_d) < 1e-9
        counter = (2.0 * lengths.l_k * np.sin(ik.theta_k)
                   + params.beta * lengths.l_h * np.sin(ik.theta_h))
        assert abs(counter) < 1e-9
        assert abs(ik.z_kh - lengths.l_h * np.cos(ik.theta_h)) < 1e-12
        assert 0.0 <= ik.theta_h <= 0.5 * np.pi + 1e-12
        if not ik.pelvis_saturated:
            placement = (2.0 * lengths.l_p * np.sin(ik.theta_p)
                         - (2.0 - params.alpha) * lengths.l_h
                         * np.sin(ik.theta_h))
            assert abs(placement) < 1e-9


def test_pelvis_ik_straight_leg():
    ik = pelvis_ik(0.45)
    assert abs(ik.theta_h) < 1e-9
    assert abs(ik.theta_k) < 1e-9
    assert abs(ik.theta_p) < 1e-9
    assert not ik.pelvis_saturated


def test_pelvis_ik_infeasible_heights():
    with pytest.raises(InfeasibleHeightError, match="cos"):
        pelvis_ik(0.46)
    # A short shank makes the thigh-height discriminant go negative first.
    with pytest.raises(InfeasibleHeightError, match="discriminant"):
        pelvis_ik(0.10, LegLengths(0.15, 0.25, 0.05))


def test_com_placement_violation_band():
    lengths = LegLengths()
    low = pelvis_ik(0.20, lengths)
    assert low.pelvis_saturated
    v_low = com_placement_violation(low, lengths)
    assert 0.005 <= v_low <= 0.015
    tall = pelvis_ik(0.35, lengths)
    assert not tall.pelvis_saturated
    assert com_placement_violation(tall, lengths) < 1e-12
    # Violation shrinks as the pelvis regains travel.
    v = [com_placement_violation(pelvis_ik(z, lengths), lengths)
         for z in (0.20, 0.24, 0.28)]
    assert v[0] > v[1] > v[2]


def test_pelvis_ik_continuity():
    # Angle sensitivity to height diverges like 1/sqrt(l_h + l_k - z_d) at
    # full leg extension, so the strict rate bound applies away from the
    # extension singularity and a coarse no-branch-jump bound near it.
    lengths = LegLengths()
    grid = np.arange(0.20, 0.4495, 1e-4)
    sols = [pelvis_ik(z_d, lengths) for z_d in grid]
    for z_d, prev, cur in zip(grid[1:], sols, sols[1:]):
        limit = 1e-3 if z_d <= 0.425 else 8e-3
        assert abs(cur.theta_p - prev.theta_p) < limit
        assert abs(cur.theta_h - prev.theta_h) < limit
        assert abs(cur.theta_k - prev.theta_k) < limit


def test_joint_positions_consistent_with_ik():
    lengths = LegLengths()
    ik = pelvis_ik(0.32, lengths)
    pos = leg_joint_positions(ik, lengths)
    assert abs((pos["hip"][1] - pos["axle"][1]) - 0.32) < 1e-9


def test_workspace_reach_closed_form():
    lengths = LegLengths()
    # Constrained maximum: both links share one pitch angle, so the squared
    # reach at depth h is (l_h + l_k)^2 - h^2.
    reach = leg_workspace_reach(lengths, 0.20, n_grid=2001)
    assert np.isclose(reach, 0.45 ** 2 - 0.20 ** 2, rtol=1e-4)
    assert leg_workspace_reach(lengths, 0.50) == 0.0


def test_design_grid_singleton():
    records, best = design_nlp_grid([0.15], [0.25], [0.20], 0.20, 0.43)
    assert len(records) == 1
    assert records[0].feasible
    assert best is records[0]
    assert best.cost > 0.0
    assert best.workspace > 0.0
    _, best2 = design_nlp_grid([0.15], [0.25], [0.20], 0.20, 0.43,
                               W=2.0 * np.eye(2))
    assert np.isclose(best2.cost, 2.0 * best.cost, rtol=1e-12)


def test_design_grid_excludes_short_legs():
    records, best = design_nlp_grid([0.15], [0.25, 0.15], [0.20, 0.10],
                                    0.20, 0.43)
    assert len(records) == 4
    infeasible = [r for r in records if not r.feasible]
    assert infeasible and all(r.reason for r in infeasible)
    assert all(np.isnan(r.cost) for r in infeasible)
    assert best.feasible and best.l_h == 0.25 and best.l_k == 0.20
    with pytest.raises(InfeasibleHeightError):
        design_nlp_grid([0.15], [0.15], [0.10], 0.20, 0.43)


def test_design_grid_records_preset_rank():
    # Small search containing the shipped triple; its standing is recorded
    # by the demo study rather than asserted here.
    l_p = np.linspace(0.09, 0.21, 5)
    l_h = np.linspace(0.17, 0.33, 5)
    l_k = np.linspace(0.12, 0.28, 5)
    records, best = design_nlp_grid(l_p, l_h, l_k, 0.20, 0.43)
    assert len(records) == 125
    preset = [r for r in records
              if np.isclose(r.l_p, 0.15) and np.isclose(r.l_h, 0.25)
              and np.isclose(r.l_k, 0.20)]
    assert len(preset) == 1 and preset[0].feasible
    feasible = [r for r in records if r.feasible]
    assert best.cost == min(r.cost for r in feasible)
    rank = sum(r.cost <= preset[0].cost for r in feasible)
    assert 1 <= rank <= len(feasible)
