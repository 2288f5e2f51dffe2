"""Wheeled-biped robot: preset parameters, tree construction, and contacts.

The robot is a floating pelvis carrying two identical pitch-plane legs (hip,
knee, wheel, all revolute about local +y).  Generalized coordinates are

    q = [x, y, z, yaw, pitch, roll,
         hip_l, knee_l, wheel_l, hip_r, knee_r, wheel_r]

with the pelvis origin on the hip axis, midway between the legs.  At zero
joint angles both legs hang straight down, so each wheel axle sits
``thigh_length + shank_length`` below the hip line.

Leg angles coming from the closed-form leg inverse kinematics are measured
from the vertical in a world-aligned sagittal frame; :func:`leg_angles_to_
joints` converts them to the relative joint coordinates used here.

Rolling contact treats each wheel as a rigid disc on the terrain plane: the
wheel material point at the contact has zero velocity along the heading and
lateral tangents and zero separation velocity along the normal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spatial
from .spatial import Body, RigidBodyTree, SpatialTransform, TreeKinematics, _cross


@dataclass(frozen=True)
class RobotParams:
    """Masses, geometry, and actuator limits of the platform."""

    pelvis_mass: float = 5.8
    thigh_mass: float = 2.1
    shank_mass: float = 0.55
    wheel_mass: float = 1.0
    pelvis_com_height: float = 0.15   # trunk CoM above the hip line
    thigh_length: float = 0.25
    shank_length: float = 0.20
    wheel_radius: float = 0.10
    track_width: float = 0.40
    joint_torque_limit: float = 35.0  # hip and knee actuators
    wheel_torque_limit: float = 5.0
    friction_coeff: float = 0.5

    @property
    def total_mass(self) -> float:
        return self.pelvis_mass + 2.0 * (
            self.thigh_mass + self.shank_mass + self.wheel_mass)

    @property
    def cart_mass(self) -> float:
        """Everything except the wheels, lumped for the reduced models."""
        return self.total_mass - 2.0 * self.wheel_mass

    @property
    def wheel_pair_mass(self) -> float:
        return 2.0 * self.wheel_mass


WHEEL_NAMES = ("wheel_l", "wheel_r")
JOINT_NAMES = ("hip_l", "knee_l", "wheel_l", "hip_r", "knee_r", "wheel_r")
JOINT_BODIES = ("thigh_l", "shank_l", "wheel_l", "thigh_r", "shank_r", "wheel_r")
BASE_DOFS = 6
WHEEL_DOFS = (8, 11)
HIP_KNEE_DOFS = (6, 7, 9, 10)


def default_params() -> RobotParams:
    return RobotParams()


def _box_inertia(mass: float, lx: float, ly: float, lz: float) -> np.ndarray:
    return np.diag(mass / 12.0 * np.array(
        [ly * ly + lz * lz, lx * lx + lz * lz, lx * lx + ly * ly]))


def _rod_inertia_z(mass: float, length: float) -> np.ndarray:
    # Slender rod along local z; small but nonzero axial term keeps the
    # per-body inertia positive definite.
    perp = mass * length * length / 12.0
    return np.diag([perp, perp, 1e-3 * perp + 1e-6])


def build_robot(params: RobotParams | None = None) -> RigidBodyTree:
    """Seven-body tree: pelvis plus thigh, shank, wheel per leg."""
    p = params or default_params()
    disc_axial = 0.5 * p.wheel_mass * p.wheel_radius ** 2
    wheel_inertia = np.diag([0.5 * disc_axial, disc_axial, 0.5 * disc_axial])
    bodies = [
        Body("pelvis", p.pelvis_mass, np.array([0.0, 0.0, p.pelvis_com_height]),
             _box_inertia(p.pelvis_mass, 0.2, 0.3, 0.25), -1, "floating"),
    ]
    for side, sign in (("l", 1.0), ("r", -1.0)):
        hip = SpatialTransform.from_translation(
            np.array([0.0, sign * 0.5 * p.track_width, 0.0]))
        knee = SpatialTransform.from_translation(
            np.array([0.0, 0.0, -p.thigh_length]))
        axle = SpatialTransform.from_translation(
            np.array([0.0, 0.0, -p.shank_length]))
        parent = 0
        bodies.append(Body(
            f"thigh_{side}", p.thigh_mass,
            np.array([0.0, 0.0, -0.5 * p.thigh_length]),
            _rod_inertia_z(p.thigh_mass, p.thigh_length),
            parent, "revolute", np.array([0.0, 1.0, 0.0]), hip))
        bodies.append(Body(
            f"shank_{side}", p.shank_mass,
            np.array([0.0, 0.0, -0.5 * p.shank_length]),
            _rod_inertia_z(p.shank_mass, p.shank_length),
            len(bodies) - 1, "revolute", np.array([0.0, 1.0, 0.0]), knee))
        bodies.append(Body(
            f"wheel_{side}", p.wheel_mass, np.zeros(3), wheel_inertia,
            len(bodies) - 1, "revolute", np.array([0.0, 1.0, 0.0]), axle))
    return RigidBodyTree(bodies)


def upper_body_indices(tree: RigidBodyTree) -> list[int]:
    """Every body except the wheels (the cart of the reduced models)."""
    wheels = {tree.body_index(n) for n in WHEEL_NAMES}
    return [i for i in range(tree.nbodies) if i not in wheels]


def leg_angles_to_joints(theta_p: float, theta_h: float,
                         theta_k: float) -> tuple[float, float, float]:
    """Convert leg angles from vertical into (base_pitch, q_hip, q_knee).

    ``theta_p`` tilts the trunk CoM forward of the hip, ``theta_h`` puts the
    knee forward of the hip, and ``theta_k`` puts the axle forward of the
    knee; all three are absolute angles in the sagittal plane.
    """
    base_pitch = theta_p
    q_hip = -theta_h - base_pitch
    q_knee = theta_h - theta_k
    return base_pitch, q_hip, q_knee


def standing_configuration(
    tree: RigidBodyTree,
    params: RobotParams,
    base_pitch: float,
    q_hip: float,
    q_knee: float,
    x: float = 0.0,
    y: float = 0.0,
    yaw: float = 0.0,
) -> np.ndarray:
    """Symmetric configuration with both axles at ground height.

    The base height is solved from forward kinematics, so the result puts the
    wheel centers exactly at ``wheel_radius`` above z = 0.
    """
    q = np.zeros(tree.ndof)
    q[0], q[1], q[3], q[4] = x, y, yaw, base_pitch
    for hip_dof, knee_dof in ((6, 7), (9, 10)):
        q[hip_dof] = q_hip
        q[knee_dof] = q_knee
    kin = spatial.compute_kinematics(tree, q)
    axle_z = kin.p[tree.body_index("wheel_l")][2]
    q[2] = params.wheel_radius - axle_z
    return q


def balanced_standing_configuration(
    tree: RigidBodyTree,
    params: RobotParams,
    theta_h: float,
    theta_k: float,
    theta_p_guess: float = 0.0,
    **kwargs,
) -> np.ndarray:
    """Standing pose with the cart CoM exactly over the axle line.

    Keeps the leg angles from the vertical fixed and leans the base (the
    hips sit on the base pitch axis, so only the pelvis mass swings) until
    the sagittal lean measured by :func:`balance_state` vanishes.
    """
    from scipy.optimize import brentq

    def lean(base_pitch: float) -> float:
        q = standing_configuration(
            tree, params, base_pitch, -theta_h - base_pitch,
            theta_h - theta_k, **kwargs)
        return balance_state(tree, params, q, np.zeros(tree.ndof)).delta_x

    # The lean is not monotone in pitch over a full swing, so bracket the
    # root nearest the guess before refining.
    grid = theta_p_guess + np.linspace(-1.5, 1.5, 61)
    values = [lean(p) for p in grid]
    brackets = [(grid[i], grid[i + 1]) for i in range(len(grid) - 1)
                if values[i] == 0.0 or values[i] * values[i + 1] < 0.0]
    if not brackets:
        raise ValueError("no balanced pitch exists for these leg angles")
    lo, hi = min(brackets,
                 key=lambda b: abs(0.5 * (b[0] + b[1]) - theta_p_guess))
    pitch = brentq(lean, lo, hi, xtol=1e-14)
    return standing_configuration(tree, params, pitch, -theta_h - pitch,
                                  theta_h - theta_k, **kwargs)


def wheel_contact_point(
    center: np.ndarray, axis: np.ndarray, normal: np.ndarray,
    radius: float) -> np.ndarray:
    """Lowest point of a rigid disc against a plane with the given normal.

    The contact lies in the wheel plane, so the normal is projected off the
    wheel axis before stepping one radius down from the center.
    """
    d = normal - (normal @ axis) * axis
    n = np.linalg.norm(d)
    if n < 1e-9:
        raise ValueError("wheel axis is parallel to the terrain normal")
    return center - radius * (d / n)


def contact_frame(axis: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Rows [heading; lateral; normal] of the wheel contact frame."""
    x = _cross(axis, normal)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("wheel axis is parallel to the terrain normal")
    x = x / nx
    y = _cross(normal, x)
    return np.stack([x, y / np.linalg.norm(y), normal / np.linalg.norm(normal)])


@dataclass(frozen=True)
class RollingContact:
    """Both wheels' rolling constraint in acceleration form.

    ``jacobian`` holds three rows per wheel (heading, lateral, normal) and
    maps per-wheel contact forces into joint space through its transpose;
    ``velocity`` is the current contact-frame material-point velocity (zero
    when the constraint holds at velocity level).

    The per-wheel system cannot be enforced as six equalities: with the two
    wheel axes always parallel, the lateral rows become linearly dependent
    near symmetric leg poses while their raw targets ``rhs`` still differ,
    so no acceleration satisfies both (in reality the wheels scrub
    sideways).  ``constraint_jacobian @ qdd = constraint_rhs`` is the
    well-posed five-row system enforced instead: per-wheel heading and
    normal rows plus the averaged lateral row, releasing the differential
    lateral (scrub) direction.  Rows are ordered [heading_l, normal_l,
    heading_r, normal_r, lateral_mean].
    """

    jacobian: np.ndarray             # (6, ndof)
    rhs: np.ndarray                  # (6,)
    velocity: np.ndarray             # (6,)
    frames: np.ndarray               # (2, 3, 3) contact-frame rows per wheel
    points: np.ndarray               # (2, 3) world contact points
    centers: np.ndarray              # (2, 3) world axle centers
    constraint_jacobian: np.ndarray  # (5, ndof)
    constraint_rhs: np.ndarray       # (5,)
    constraint_velocity: np.ndarray  # (5,)


def rolling_constraint(
    tree: RigidBodyTree,
    params: RobotParams,
    q: np.ndarray,
    qd: np.ndarray,
    kin: TreeKinematics | None = None,
    normals: np.ndarray | None = None,
) -> RollingContact:
    """Rolling-without-slip constraint for both wheels.

    Differentiating ``v_center + w x r_c(q) = 0`` must track the contact
    point migrating around the rim as the wheel rolls and tilts, so the
    right-hand side is ``w x (w x r_c) - w x rc_dot`` minus the
    material-point bias; for an upright wheel this collapses to the familiar
    ``(0, -r wy wz, r wy^2)`` expressed in the contact frame.
    """
    if kin is None:
        kin = spatial.compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    if normals is None:
        normals = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    jac = np.zeros((6, tree.ndof))
    rhs = np.zeros(6)
    vel = np.zeros(6)
    frames = np.zeros((2, 3, 3))
    points = np.zeros((2, 3))
    centers = np.zeros((2, 3))
    for k, name in enumerate(WHEEL_NAMES):
        b = tree.body_index(name)
        axis = kin.R[b] @ np.array([0.0, 1.0, 0.0])
        center = kin.p[b]
        normal = normals[k]
        contact = wheel_contact_point(center, axis, normal,
                                      params.wheel_radius)
        frame = contact_frame(axis, normal)
        point_body = kin.R[b].T @ (contact - center)
        J6 = spatial.body_jacobian(tree, q, b, point_body, kin=kin)
        bias = spatial.point_bias_acceleration(tree, q, qd, b, point_body,
                                               kin=kin)
        w = kin.w[b]
        r_c = contact - center
        # Down direction d = normalize(n - (n.a) a); its rate under the wheel
        # angular velocity gives the contact-point migration rc_dot.
        u = normal - (normal @ axis) * axis
        un = np.linalg.norm(u)
        d = u / un
        axis_dot = _cross(w, axis)
        u_dot = -(normal @ axis_dot) * axis - (normal @ axis) * axis_dot
        rc_dot = -params.wheel_radius * (u_dot - (d @ u_dot) * d) / un
        centripetal = _cross(w, _cross(w, r_c))
        rows = slice(3 * k, 3 * k + 3)
        jac[rows] = frame @ J6[3:]
        rhs[rows] = frame @ (centripetal - _cross(w, rc_dot) - bias[3:])
        vel[rows] = jac[rows] @ qd
        frames[k] = frame
        points[k] = contact
        centers[k] = center
    keep = [0, 2, 3, 5]
    c_jac = np.vstack([jac[keep], 0.5 * (jac[1] + jac[4])])
    c_rhs = np.concatenate([rhs[keep], [0.5 * (rhs[1] + rhs[4])]])
    c_vel = np.concatenate([vel[keep], [0.5 * (vel[1] + vel[4])]])
    return RollingContact(jac, rhs, vel, frames, points, centers,
                          c_jac, c_rhs, c_vel)


@dataclass(frozen=True)
class BalanceState:
    """Sagittal balance quantities feeding the reduced-model controller.

    ``delta_x`` is the heading-frame offset from the axle midpoint to the
    total CoM; ``jacobian``/``bias`` give its second derivative as
    ``jacobian @ qdd + bias``.  ``height`` is the CoM height above the axle
    midpoint, and ``com_velocity`` the heading component of the CoM velocity.
    """

    delta_x: float
    delta_x_dot: float
    com_velocity: float
    height: float
    heading: np.ndarray
    jacobian: np.ndarray   # (ndof,)
    bias: float


def balance_state(
    tree: RigidBodyTree,
    params: RobotParams,
    q: np.ndarray,
    qd: np.ndarray,
    kin: TreeKinematics | None = None,
) -> BalanceState:
    """Measure the wheeled-pendulum state along the current heading."""
    if kin is None:
        kin = spatial.compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    com, com_v, com_J, com_bias = spatial.com_kinematics(
        tree, q, qd, bodies=upper_body_indices(tree), kin=kin)
    mid = np.zeros(3)
    mid_v = np.zeros(3)
    mid_J = np.zeros((3, tree.ndof))
    mid_bias = np.zeros(3)
    for name in WHEEL_NAMES:
        b = tree.body_index(name)
        mid += 0.5 * kin.p[b]
        mid_v += 0.5 * kin.v[b]
        mid_J += 0.5 * spatial.body_jacobian(tree, q, b, kin=kin)[3:]
        mid_bias += 0.5 * spatial.point_bias_acceleration(
            tree, q, qd, b, kin=kin)[3:]
    yaw, yaw_rate = q[3], qd[3]
    heading = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    heading_dot = yaw_rate * np.array([-heading[1], heading[0], 0.0])
    heading_ddot_part = -yaw_rate * yaw_rate * heading  # qdd-free part only
    rel = com - mid
    rel_v = com_v - mid_v
    delta_x = float(heading @ rel)
    delta_x_dot = float(heading @ rel_v + heading_dot @ rel)
    # d2(delta_x) = h . (rel_acc) + 2 h_dot . rel_v + h_ddot . rel; the yaw
    # acceleration inside h_ddot enters through the jacobian row.
    zhat_cross_rel = _cross(np.array([0.0, 0.0, 1.0]), heading) @ rel
    jac = heading @ (com_J - mid_J)
    jac[3] += zhat_cross_rel
    bias = float(heading @ (com_bias - mid_bias) + 2.0 * (heading_dot @ rel_v)
                 + heading_ddot_part @ rel)
    return BalanceState(
        delta_x=delta_x,
        delta_x_dot=delta_x_dot,
        com_velocity=float(heading @ com_v),
        height=float(com[2] - mid[2]),
        heading=heading,
        jacobian=jac,
        bias=bias,
    )
