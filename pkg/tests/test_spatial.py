"""Kinematics/dynamics checks against independent oracles.

Forward kinematics is cross-checked against a plain homogeneous-matrix
chain, Jacobians and their biases against finite differences, and the mass
matrix against the inverse-dynamics recursion, so no routine is verified
against itself.
"""

import numpy as np
import pytest

from wheelbip import spatial
from wheelbip.spatial import (
    Body,
    RigidBodyTree,
    SpatialTransform,
    body_jacobian,
    compute_kinematics,
    euler_zyx_to_matrix,
    forward_kinematics,
    inverse_dynamics,
    joint_space_inertia,
    mass_matrix_and_bias,
    nonlinear_effects,
    point_bias_acceleration,
    point_velocity,
    potential_energy,
    rotation_about,
    total_energy,
)


def _rand_inertia(rng, scale=0.02):
    a = rng.standard_normal((3, 3)) * scale
    return a @ a.T + scale * np.eye(3)


def _floating_box(rng=None):
    inertia = np.diag([0.04, 0.05, 0.06])
    body = Body("box", 2.5, np.zeros(3), inertia, -1, "floating")
    return RigidBodyTree([body])


def _random_chain(rng, njoints=4, with_prismatic=False):
    """Floating base plus a mixed serial chain with random geometry."""
    bodies = [
        Body("base", 3.0, rng.standard_normal(3) * 0.05, _rand_inertia(rng), -1, "floating")
    ]
    for k in range(njoints):
        joint = "prismatic" if (with_prismatic and k == 1) else "revolute"
        origin = SpatialTransform(
            euler_zyx_to_matrix(*rng.uniform(-0.5, 0.5, 3)),
            rng.standard_normal(3) * 0.15,
        )
        bodies.append(
            Body(
                f"link{k}",
                0.4 + rng.uniform(0.0, 1.0),
                rng.standard_normal(3) * 0.08,
                _rand_inertia(rng, 0.01),
                k,
                joint,
                axis=rng.standard_normal(3),
                origin=origin,
            )
        )
    return RigidBodyTree(bodies)


def _random_state(tree, rng, vel_scale=1.0):
    q = rng.uniform(-1.0, 1.0, tree.ndof)
    q[4] = rng.uniform(-1.2, 1.2)  # keep pitch away from the chart singularity
    qd = rng.standard_normal(tree.ndof) * vel_scale
    return q, qd


def _fk_oracle(tree, q):
    """Independent forward kinematics via 4x4 homogeneous matrices."""
    mats = []
    for i, b in enumerate(tree.bodies):
        T = np.eye(4)
        if b.joint == "floating":
            T[:3, :3] = b.origin.rotation @ euler_zyx_to_matrix(q[3], q[4], q[5])
            T[:3, 3] = b.origin.translation + q[:3]
        else:
            To = np.eye(4)
            To[:3, :3] = b.origin.rotation
            To[:3, 3] = b.origin.translation
            Tj = np.eye(4)
            val = q[tree.dof_slice(i)][0]
            if b.joint == "revolute":
                Tj[:3, :3] = rotation_about(b.axis, val)
            else:
                Tj[:3, 3] = b.axis * val
            T = mats[b.parent] @ To @ Tj
        mats.append(T)
    return mats


def test_transform_compose_inverse():
    rng = np.random.default_rng(0)
    x1 = SpatialTransform(euler_zyx_to_matrix(0.3, -0.2, 0.5), np.array([1.0, 2.0, 3.0]))
    x2 = SpatialTransform(euler_zyx_to_matrix(-0.4, 0.1, 0.2), np.array([-0.5, 0.2, 0.7]))
    p = rng.standard_normal(3)
    assert np.allclose(x1.compose(x2).apply(p), x1.apply(x2.apply(p)), atol=1e-12)
    roundtrip = x1.compose(x1.inverse())
    assert np.allclose(roundtrip.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(roundtrip.translation, 0.0, atol=1e-12)


def test_tree_validation_rejects_bad_bodies():
    good = Body("a", 1.0, np.zeros(3), np.eye(3) * 0.01, -1, "floating")
    with pytest.raises(ValueError, match="mass"):
        RigidBodyTree([Body("a", 0.0, np.zeros(3), np.eye(3) * 0.01, -1, "floating")])
    with pytest.raises(ValueError, match="symmetric"):
        bad = np.eye(3) * 0.01
        bad[0, 1] = 1.0
        RigidBodyTree([Body("a", 1.0, np.zeros(3), bad, -1, "floating")])
    with pytest.raises(ValueError, match="axis"):
        RigidBodyTree([good, Body("b", 1.0, np.zeros(3), np.eye(3) * 0.01, 0, "revolute")])
    with pytest.raises(ValueError, match="parent"):
        RigidBodyTree([good, Body("b", 1.0, np.zeros(3), np.eye(3) * 0.01, 5, "revolute",
                                  axis=np.array([0.0, 1.0, 0.0]))])


@pytest.mark.parametrize("seed", range(4))
def test_forward_kinematics_matches_homogeneous_chain(seed):
    rng = np.random.default_rng(seed)
    tree = _random_chain(rng, with_prismatic=(seed % 2 == 0))
    q, _ = _random_state(tree, rng)
    poses = forward_kinematics(tree, q)
    oracle = _fk_oracle(tree, q)
    for pose, T in zip(poses, oracle):
        assert np.allclose(pose.rotation, T[:3, :3], atol=1e-12)
        assert np.allclose(pose.translation, T[:3, 3], atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(10 + seed)
    tree = _random_chain(rng, with_prismatic=True)
    q, qd = _random_state(tree, rng)
    body = tree.nbodies - 1
    point = rng.standard_normal(3) * 0.1
    J = body_jacobian(tree, q, body, point)

    # Linear rows against central differences of the point position.
    eps = 1e-6
    for k in range(tree.ndof):
        dq = np.zeros(tree.ndof)
        dq[k] = eps
        pp = forward_kinematics(tree, q + dq)[body].apply(point)
        pm = forward_kinematics(tree, q - dq)[body].apply(point)
        assert np.allclose(J[3:, k], (pp - pm) / (2 * eps), atol=1e-6)

    # Angular rows against the rotation-matrix derivative.
    for k in range(tree.ndof):
        dq = np.zeros(tree.ndof)
        dq[k] = eps
        Rp = forward_kinematics(tree, q + dq)[body].rotation
        Rm = forward_kinematics(tree, q - dq)[body].rotation
        W = (Rp - Rm) / (2 * eps) @ forward_kinematics(tree, q)[body].rotation.T
        w_fd = np.array([W[2, 1], W[0, 2], W[1, 0]])
        assert np.allclose(J[:3, k], w_fd, atol=1e-6)

    # And the velocity route: J qd equals the recursive point velocity.
    assert np.allclose(J @ qd, point_velocity(tree, q, qd, body, point), atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_bias_matches_trajectory_differences(seed):
    rng = np.random.default_rng(20 + seed)
    tree = _random_chain(rng, with_prismatic=(seed == 1))
    q, qd = _random_state(tree, rng)
    qdd = rng.standard_normal(tree.ndof)
    body = tree.nbodies - 1
    point = rng.standard_normal(3) * 0.1

    dt = 1e-6
    qp = q + dt * qd + 0.5 * dt * dt * qdd
    qdp = qd + dt * qdd
    qm = q - dt * qd + 0.5 * dt * dt * qdd
    qdm = qd - dt * qdd
    vp = body_jacobian(tree, qp, body, point) @ qdp
    vm = body_jacobian(tree, qm, body, point) @ qdm
    accel_fd = (vp - vm) / (2 * dt)
    accel = body_jacobian(tree, q, body, point) @ qdd + point_bias_acceleration(
        tree, q, qd, body, point)
    assert np.allclose(accel, accel_fd, atol=1e-4)


def test_jacobian_zero_off_path():
    rng = np.random.default_rng(3)
    base = Body("base", 2.0, np.zeros(3), np.eye(3) * 0.02, -1, "floating")
    left = Body("left", 1.0, np.zeros(3), np.eye(3) * 0.01, 0, "revolute",
                axis=np.array([0.0, 1.0, 0.0]),
                origin=SpatialTransform.from_translation([0.0, 0.2, 0.0]))
    right = Body("right", 1.0, np.zeros(3), np.eye(3) * 0.01, 0, "revolute",
                 axis=np.array([0.0, 1.0, 0.0]),
                 origin=SpatialTransform.from_translation([0.0, -0.2, 0.0]))
    tree = RigidBodyTree([base, left, right])
    q, _ = _random_state(tree, rng)
    J = body_jacobian(tree, q, 1)
    assert np.allclose(J[:, tree.dof_slice(2)], 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_mass_matrix_symmetric_positive_definite(seed):
    rng = np.random.default_rng(30 + seed)
    tree = _random_chain(rng, with_prismatic=(seed % 2 == 1))
    q, _ = _random_state(tree, rng)
    M = joint_space_inertia(tree, q)
    assert np.allclose(M, M.T, atol=1e-11)
    assert np.all(np.linalg.eigvalsh(M) > 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_inverse_dynamics_is_affine_in_qdd(seed):
    """CRBA and RNEA agree: ID(q, qd, qdd) == M qdd + H for random qdd."""
    rng = np.random.default_rng(40 + seed)
    tree = _random_chain(rng, with_prismatic=(seed % 2 == 0))
    q, qd = _random_state(tree, rng)
    M, H = mass_matrix_and_bias(tree, q, qd)
    for _ in range(20):
        qdd = rng.standard_normal(tree.ndof) * 3.0
        tau = inverse_dynamics(tree, q, qd, qdd)
        ref = M @ qdd + H
        assert np.allclose(tau, ref, atol=1e-9 * max(1.0, np.abs(ref).max()))


@pytest.mark.parametrize("seed", range(3))
def test_gravity_bias_is_potential_gradient(seed):
    rng = np.random.default_rng(50 + seed)
    tree = _random_chain(rng)
    q, _ = _random_state(tree, rng)
    H = nonlinear_effects(tree, q, np.zeros(tree.ndof))
    eps = 1e-6
    for k in range(tree.ndof):
        dq = np.zeros(tree.ndof)
        dq[k] = eps
        grad = (potential_energy(tree, q + dq) - potential_energy(tree, q - dq)) / (2 * eps)
        assert abs(H[k] - grad) < 1e-5


def test_floating_box_dynamics_structure():
    tree = _floating_box()
    q = np.zeros(6)
    M = joint_space_inertia(tree, q)
    assert np.allclose(M[:3, :3], 2.5 * np.eye(3), atol=1e-12)
    assert np.allclose(M[:3, 3:], 0.0, atol=1e-12)
    # At zero Euler angles the rate map is a permutation onto (z, y, x).
    assert np.allclose(M[3:, 3:], np.diag([0.06, 0.05, 0.04]), atol=1e-12)
    H = nonlinear_effects(tree, q, np.zeros(6))
    assert np.allclose(H, [0.0, 0.0, 2.5 * spatial.GRAVITY, 0.0, 0.0, 0.0], atol=1e-12)


def test_com_kinematics_consistency():
    rng = np.random.default_rng(7)
    tree = _random_chain(rng)
    q, qd = _random_state(tree, rng)
    pos, vel, jac, bias = spatial.com_kinematics(tree, q, qd)
    assert np.allclose(jac @ qd, vel, atol=1e-10)
    # CoM velocity equals total linear momentum over total mass.
    kin = compute_kinematics(tree, q, qd)
    mom = np.zeros(3)
    for i, b in enumerate(tree.bodies):
        mom += b.mass * point_velocity(tree, q, qd, i, b.com, kin=kin)[3:]
    assert np.allclose(vel, mom / tree.total_mass, atol=1e-10)
    # Finite-difference the CoM velocity for the bias.
    dt = 1e-6
    qdd = rng.standard_normal(tree.ndof)
    _, vp, _, _ = spatial.com_kinematics(tree, q + dt * qd + 0.5 * dt * dt * qdd, qd + dt * qdd)
    _, vm, _, _ = spatial.com_kinematics(tree, q - dt * qd + 0.5 * dt * dt * qdd, qd - dt * qdd)
    assert np.allclose(jac @ qdd + bias, (vp - vm) / (2 * dt), atol=1e-4)


def test_unforced_tree_conserves_energy():
    """Symplectic free flight: relative drift < 1e-5 over one second.

    The mass matrix depends on q, so the Hamiltonian is not separable and
    semi-implicit Euler alone drifts; implicit midpoint (fixed point, two
    corrections) is symplectic for this system class.
    """
    rng = np.random.default_rng(11)
    tree = _random_chain(rng, njoints=3)
    q, _ = _random_state(tree, rng)
    qd = rng.standard_normal(tree.ndof) * 0.3
    e0 = total_energy(tree, q, qd)
    scale = abs(e0) + spatial.kinetic_energy(tree, q, qd) + 1.0

    def accel(q, qd):
        M, H = mass_matrix_and_bias(tree, q, qd)
        return np.linalg.solve(M, -H)

    dt = 1e-4
    for _ in range(10_000):
        qn, vn = q + dt * qd, qd + dt * accel(q, qd)
        for _ in range(2):
            a_mid = accel(0.5 * (q + qn), 0.5 * (qd + vn))
            qn = q + dt * 0.5 * (qd + vn)
            vn = qd + dt * a_mid
        q, qd = qn, vn
    drift = abs(total_energy(tree, q, qd) - e0) / scale
    assert drift < 1e-5


def test_momentum_conserved_without_gravity():
    rng = np.random.default_rng(13)
    tree = _random_chain(rng, njoints=3)
    q, _ = _random_state(tree, rng)
    qd = rng.standard_normal(tree.ndof) * 0.4

    def momentum(q, qd):
        kin = compute_kinematics(tree, q, qd)
        p = np.zeros(3)
        for i, b in enumerate(tree.bodies):
            p += b.mass * point_velocity(tree, q, qd, i, b.com, kin=kin)[3:]
        return p

    p0 = momentum(q, qd)
    dt = 1e-4
    for _ in range(2000):
        kin = compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
        M = joint_space_inertia(tree, q, kin=kin)
        H = inverse_dynamics(tree, q, qd, np.zeros(tree.ndof), gravity=0.0, kin=kin)
        qd = qd + dt * np.linalg.solve(M, -H)
        q = q + dt * qd
    assert np.allclose(momentum(q, qd), p0, atol=1e-4)


def test_external_wrench_enters_inverse_dynamics():
    rng = np.random.default_rng(17)
    tree = _random_chain(rng)
    q, qd = _random_state(tree, rng)
    qdd = rng.standard_normal(tree.ndof)
    body = tree.nbodies - 1
    ext = rng.standard_normal(6)
    tau_free = inverse_dynamics(tree, q, qd, qdd)
    tau_ext = inverse_dynamics(tree, q, qd, qdd, external={body: ext})
    J = body_jacobian(tree, q, body)
    assert np.allclose(tau_free - J.T @ ext, tau_ext, atol=1e-10)
