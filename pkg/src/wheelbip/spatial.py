"""Rigid-body kinematics and dynamics for small floating-base trees.

Bodies form a kinematic tree. Every body owns the joint that connects it to
its parent; the body frame coincides with the joint frame (origin on the
joint axis for revolute joints). Supported joints:

- ``floating``: 6 DoF. Coordinates are world translation (x, y, z) followed
  by Z-Y-X Euler angles (yaw, pitch, roll). Generalized velocities are the
  plain time derivatives of those coordinates, so configurations integrate
  componentwise. Pitch = +-pi/2 is a coordinate singularity of this chart.
- ``revolute`` / ``prismatic``: 1 DoF about/along a constant axis given in
  the body frame.

All returned Jacobians and velocities are expressed in world coordinates.
The mass matrix comes from a composite-rigid-body recursion with every
six-dimensional quantity referenced at the world origin, and bias forces
from a recursive Newton-Euler pass over classical (point) accelerations;
the two share one kinematics sweep and cross-check each other exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

_EX = np.array([1.0, 0.0, 0.0])
_EY = np.array([0.0, 1.0, 0.0])
_EZ = np.array([0.0, 0.0, 1.0])


def skew(v: np.ndarray) -> np.ndarray:
    """Matrix S with S @ u == v x u."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _cross(a, b) -> np.ndarray:
    """Cross product for plain 3-vectors (much cheaper than np.cross)."""
    return np.array((
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ))


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_about(axis: np.ndarray, a: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = skew(axis)
    return np.eye(3) + np.sin(a) * k + (1.0 - np.cos(a)) * (k @ k)


def euler_zyx_to_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


@dataclass(frozen=True)
class SpatialTransform:
    """Pose of a child frame in a parent frame.

    ``rotation`` maps child coordinates to parent coordinates and
    ``translation`` is the child origin expressed in the parent frame.
    """

    rotation: np.ndarray
    translation: np.ndarray

    @staticmethod
    def identity() -> "SpatialTransform":
        return SpatialTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "SpatialTransform":
        return SpatialTransform(np.eye(3), np.asarray(t, dtype=float))

    def compose(self, other: "SpatialTransform") -> "SpatialTransform":
        """X_ab.compose(X_bc) -> X_ac."""
        return SpatialTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "SpatialTransform":
        rt = self.rotation.T
        return SpatialTransform(rt, -rt @ self.translation)

    def apply(self, point: np.ndarray) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation


@dataclass
class Body:
    """One link plus the joint connecting it to its parent."""

    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    parent: int
    joint: str
    axis: np.ndarray | None = None
    origin: SpatialTransform = field(default_factory=SpatialTransform.identity)


class RigidBodyTree:
    """Validated kinematic tree with per-DoF bookkeeping."""

    def __init__(self, bodies: list[Body]):
        if not bodies:
            raise ValueError("tree needs at least one body")
        self.bodies = bodies
        nxt = 0
        self._dof_slices: list[slice] = []
        for i, b in enumerate(bodies):
            if b.parent >= i:
                raise ValueError(f"body {b.name!r}: parent must precede child")
            if i == 0 and b.parent != -1:
                raise ValueError("first body must be rooted at the world (parent -1)")
            if b.mass <= 0.0:
                raise ValueError(f"body {b.name!r}: mass must be positive")
            b.com = np.asarray(b.com, dtype=float)
            b.inertia = np.asarray(b.inertia, dtype=float)
            if not np.allclose(b.inertia, b.inertia.T, atol=1e-12):
                raise ValueError(f"body {b.name!r}: inertia must be symmetric")
            if np.any(np.linalg.eigvalsh(b.inertia) <= 0.0):
                raise ValueError(f"body {b.name!r}: inertia must be positive definite")
            if b.joint == "floating":
                ndof = 6
                if b.parent != -1:
                    raise ValueError("floating joint is only supported at the root")
            elif b.joint in ("revolute", "prismatic"):
                ndof = 1
                if b.axis is None:
                    raise ValueError(f"body {b.name!r}: {b.joint} joint needs an axis")
                b.axis = np.asarray(b.axis, dtype=float)
                n = np.linalg.norm(b.axis)
                if n < 1e-12:
                    raise ValueError(f"body {b.name!r}: joint axis must be nonzero")
                b.axis = b.axis / n
            else:
                raise ValueError(f"body {b.name!r}: unknown joint type {b.joint!r}")
            self._dof_slices.append(slice(nxt, nxt + ndof))
            nxt += ndof
        self.ndof = nxt
        self.nbodies = len(bodies)
        self.total_mass = float(sum(b.mass for b in bodies))
        self._children: list[list[int]] = [[] for _ in bodies]
        for i, b in enumerate(bodies):
            if b.parent >= 0:
                self._children[b.parent].append(i)
        # Bodies listed parent-before-child, so index order is a valid
        # root-to-leaf sweep and reversed order a leaf-to-root sweep.
        self._dof_owner = np.empty(self.ndof, dtype=int)
        for i in range(self.nbodies):
            self._dof_owner[self._dof_slices[i]] = i

    def dof_slice(self, body: int) -> slice:
        return self._dof_slices[body]

    def body_index(self, name: str) -> int:
        for i, b in enumerate(self.bodies):
            if b.name == name:
                return i
        raise KeyError(name)

    def check_vectors(self, q: np.ndarray, qd: np.ndarray | None = None) -> None:
        if np.shape(q) != (self.ndof,):
            raise ValueError(f"q must have shape ({self.ndof},)")
        if qd is not None and np.shape(qd) != (self.ndof,):
            raise ValueError(f"qd must have shape ({self.ndof},)")


@dataclass
class TreeKinematics:
    """World-frame kinematics of every body for one (q, qd, qdd) evaluation.

    ``v``/``a`` are the classical velocity/acceleration of the material point
    at each body-frame origin; angular rates are world-frame.
    """

    R: np.ndarray       # (nb, 3, 3)
    p: np.ndarray       # (nb, 3)
    w: np.ndarray       # (nb, 3)
    v: np.ndarray       # (nb, 3)
    wd: np.ndarray      # (nb, 3)
    a: np.ndarray       # (nb, 3)
    dof_axis: np.ndarray    # (n, 3) world axis per DoF
    dof_point: np.ndarray   # (n, 3) world point on axis (angular DoFs)
    dof_angular: np.ndarray  # (n,) bool, True for rotational DoFs
    _phi: np.ndarray | None = None  # cached world-origin motion columns


def compute_kinematics(
    tree: RigidBodyTree,
    q: np.ndarray,
    qd: np.ndarray | None = None,
    qdd: np.ndarray | None = None,
) -> TreeKinematics:
    """One root-to-leaf sweep of positions, velocities, and accelerations."""
    tree.check_vectors(q, qd)
    nb, n = tree.nbodies, tree.ndof
    if qd is None:
        qd = np.zeros(n)
    if qdd is None:
        qdd = np.zeros(n)
    R = np.empty((nb, 3, 3))
    p = np.empty((nb, 3))
    w = np.empty((nb, 3))
    v = np.empty((nb, 3))
    wd = np.empty((nb, 3))
    a = np.empty((nb, 3))
    dof_axis = np.empty((n, 3))
    dof_point = np.zeros((n, 3))
    dof_angular = np.zeros(n, dtype=bool)

    for i, b in enumerate(tree.bodies):
        sl = tree.dof_slice(i)
        if b.joint == "floating":
            x = q[sl]
            xd = qd[sl]
            xdd = qdd[sl]
            yaw, pitch, roll = x[3], x[4], x[5]
            rz = rot_z(yaw)
            ry = rot_y(pitch)
            R[i] = b.origin.rotation @ (rz @ ry @ rot_x(roll))
            p[i] = b.origin.translation + x[:3]
            e1 = _EZ
            e2 = rz @ _EY
            e3 = rz @ (ry @ _EX)
            rates = xd[3:6]
            w[i] = e1 * rates[0] + e2 * rates[1] + e3 * rates[2]
            v[i] = xd[:3]
            # Column derivatives of the Euler-rate map: Rz and RzRy rotate
            # about the world z and the yawed y axis respectively.
            e2d = rates[0] * _cross(_EZ, e2)
            e3d = rates[0] * _cross(_EZ, e3) + rates[1] * _cross(e2, e3)
            wd[i] = e1 * xdd[3] + e2 * xdd[4] + e3 * xdd[5] + e2d * rates[1] + e3d * rates[2]
            a[i] = xdd[:3]
            s = sl.start
            dof_axis[s:s + 3] = np.eye(3)
            dof_axis[s + 3] = e1
            dof_axis[s + 4] = e2
            dof_axis[s + 5] = e3
            dof_point[sl] = p[i]
            dof_angular[s + 3:s + 6] = True
            continue

        lam = b.parent
        qi = q[sl][0]
        qdi = qd[sl][0]
        qddi = qdd[sl][0]
        Rj = R[lam] @ b.origin.rotation
        pj = p[lam] + R[lam] @ b.origin.translation
        r = pj - p[lam]
        # Joint origin is a material point of the parent body.
        vj = v[lam] + _cross(w[lam], r)
        aj = a[lam] + _cross(wd[lam], r) + _cross(w[lam], _cross(w[lam], r))
        if b.joint == "revolute":
            axis_w = Rj @ b.axis
            R[i] = Rj @ rotation_about(b.axis, qi)
            p[i] = pj
            w[i] = w[lam] + axis_w * qdi
            v[i] = vj
            wd[i] = wd[lam] + axis_w * qddi + _cross(w[lam], axis_w) * qdi
            a[i] = aj
            dof_axis[sl] = axis_w
            dof_point[sl] = pj
            dof_angular[sl] = True
        else:  # prismatic
            axis_w = Rj @ b.axis
            R[i] = Rj
            p[i] = pj + axis_w * qi
            w[i] = w[lam]
            rel = axis_w * qdi
            v[i] = v[lam] + _cross(w[lam], p[i] - p[lam]) + rel
            wd[i] = wd[lam]
            a[i] = (
                a[lam]
                + _cross(wd[lam], p[i] - p[lam])
                + _cross(w[lam], _cross(w[lam], p[i] - p[lam]))
                + axis_w * qddi
                + 2.0 * _cross(w[lam], rel)
            )
            dof_axis[sl] = axis_w
            dof_angular[sl] = False

    return TreeKinematics(R, p, w, v, wd, a, dof_axis, dof_point, dof_angular)


def forward_kinematics(tree: RigidBodyTree, q: np.ndarray) -> list[SpatialTransform]:
    """World pose of every body frame."""
    kin = compute_kinematics(tree, q)
    return [SpatialTransform(kin.R[i].copy(), kin.p[i].copy()) for i in range(tree.nbodies)]


def _path_dofs(tree: RigidBodyTree, body: int) -> list[int]:
    out: list[int] = []
    i = body
    while i >= 0:
        sl = tree.dof_slice(i)
        out.extend(range(sl.start, sl.stop))
        i = tree.bodies[i].parent
    return out


def body_jacobian(
    tree: RigidBodyTree,
    q: np.ndarray,
    body: int,
    point: np.ndarray | None = None,
    kin: TreeKinematics | None = None,
) -> np.ndarray:
    """6 x ndof geometric Jacobian, rows [angular; linear at the point].

    ``point`` is given in the body frame (defaults to the body origin); the
    columns map generalized velocities to the world angular velocity and the
    world velocity of that body-fixed point.
    """
    if kin is None:
        kin = compute_kinematics(tree, q)
    if point is None:
        xp = kin.p[body]
    else:
        xp = kin.p[body] + kin.R[body] @ np.asarray(point, dtype=float)
    J = np.zeros((6, tree.ndof))
    for k in _path_dofs(tree, body):
        ax = kin.dof_axis[k]
        if kin.dof_angular[k]:
            J[:3, k] = ax
            J[3:, k] = _cross(ax, xp - kin.dof_point[k])
        else:
            J[3:, k] = ax
    return J


def point_velocity(
    tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray, body: int,
    point: np.ndarray | None = None, kin: TreeKinematics | None = None,
) -> np.ndarray:
    """World [angular velocity; point velocity] of a body-fixed point."""
    if kin is None:
        kin = compute_kinematics(tree, q, qd)
    r = np.zeros(3) if point is None else kin.R[body] @ np.asarray(point, dtype=float)
    return np.concatenate([kin.w[body], kin.v[body] + _cross(kin.w[body], r)])


def point_bias_acceleration(
    tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray, body: int,
    point: np.ndarray | None = None, kin: TreeKinematics | None = None,
) -> np.ndarray:
    """dJ/dt @ qd for the Jacobian of ``body_jacobian`` (6,).

    Equals the world [angular; linear] acceleration of the body-fixed point
    when qdd = 0, so J qdd + this bias is the true point acceleration.
    """
    if kin is None:
        kin = compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    r = np.zeros(3) if point is None else kin.R[body] @ np.asarray(point, dtype=float)
    lin = kin.a[body] + _cross(kin.wd[body], r) + _cross(
        kin.w[body], _cross(kin.w[body], r))
    return np.concatenate([kin.wd[body], lin])


def _motion_columns(tree: RigidBodyTree, kin: TreeKinematics) -> np.ndarray:
    """Per-DoF motion vectors [angular; linear] referenced at the world origin."""
    if kin._phi is not None:
        return kin._phi
    n = tree.ndof
    phi = np.zeros((6, n))
    for k in range(n):
        ax = kin.dof_axis[k]
        if kin.dof_angular[k]:
            phi[:3, k] = ax
            phi[3:, k] = _cross(kin.dof_point[k], ax)
        else:
            phi[3:, k] = ax
    kin._phi = phi
    return phi


def _origin_spatial_inertia(mass: float, com_w: np.ndarray, inertia_w: np.ndarray) -> np.ndarray:
    """6x6 spatial inertia about the world origin."""
    c = com_w
    mc = mass * c
    out = np.zeros((6, 6))
    # m * skew(c) skew(c)^T == m ((c.c) I - c c^T)
    out[:3, :3] = inertia_w - np.outer(mc, c)
    cc = mass * (c @ c)
    out[0, 0] += cc
    out[1, 1] += cc
    out[2, 2] += cc
    sk = skew(mc)
    out[:3, 3:] = sk
    out[3:, :3] = sk.T
    out[3, 3] = out[4, 4] = out[5, 5] = mass
    return out


def joint_space_inertia(
    tree: RigidBodyTree, q: np.ndarray, kin: TreeKinematics | None = None,
) -> np.ndarray:
    """Mass matrix M(q) by the composite-rigid-body recursion."""
    if kin is None:
        kin = compute_kinematics(tree, q)
    n = tree.ndof
    phi = _motion_columns(tree, kin)
    comp = [None] * tree.nbodies
    for i in range(tree.nbodies - 1, -1, -1):
        b = tree.bodies[i]
        com_w = kin.p[i] + kin.R[i] @ b.com
        iw = kin.R[i] @ b.inertia @ kin.R[i].T
        acc = _origin_spatial_inertia(b.mass, com_w, iw)
        for c in tree._children[i]:
            acc = acc + comp[c]
        comp[i] = acc
    M = np.zeros((n, n))
    for i in range(tree.nbodies):
        sl = tree.dof_slice(i)
        F = comp[i] @ phi[:, sl]
        j = i
        while j >= 0:
            slj = tree.dof_slice(j)
            blk = phi[:, slj].T @ F
            M[slj, sl] = blk
            if j != i:
                M[sl, slj] = blk.T
            j = tree.bodies[j].parent
    return M


def inverse_dynamics(
    tree: RigidBodyTree,
    q: np.ndarray,
    qd: np.ndarray,
    qdd: np.ndarray,
    gravity: float = GRAVITY,
    external: dict[int, np.ndarray] | None = None,
    kin: TreeKinematics | None = None,
) -> np.ndarray:
    """Generalized forces tau with M qdd + bias(q, qd) - tau_ext = tau.

    ``external`` maps body index -> world wrench [torque; force] applied at
    the body-frame origin.
    """
    if kin is None:
        kin = compute_kinematics(tree, q, qd, qdd)
    phi = _motion_columns(tree, kin)
    g_vec = np.array([0.0, 0.0, -gravity])
    wrench = [None] * tree.nbodies
    for i, b in enumerate(tree.bodies):
        r = kin.R[i] @ b.com
        com_w = kin.p[i] + r
        a_com = kin.a[i] + _cross(kin.wd[i], r) + _cross(kin.w[i], _cross(kin.w[i], r))
        iw = kin.R[i] @ b.inertia @ kin.R[i].T
        f = b.mass * (a_com - g_vec)
        n_com = iw @ kin.wd[i] + _cross(kin.w[i], iw @ kin.w[i])
        wrench[i] = np.concatenate([n_com + _cross(com_w, f), f])
        if external and i in external:
            ext = np.asarray(external[i], dtype=float)
            wrench[i] -= np.concatenate([ext[:3] + _cross(kin.p[i], ext[3:]), ext[3:]])
    tau = np.zeros(tree.ndof)
    for i in range(tree.nbodies - 1, -1, -1):
        for c in tree._children[i]:
            wrench[i] += wrench[c]
        sl = tree.dof_slice(i)
        tau[sl] = phi[:, sl].T @ wrench[i]
    return tau


def nonlinear_effects(
    tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray, gravity: float = GRAVITY,
) -> np.ndarray:
    """Coriolis, centrifugal, and gravity bias H(q, qd)."""
    return inverse_dynamics(tree, q, qd, np.zeros(tree.ndof), gravity)


def mass_matrix_and_bias(
    tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray, gravity: float = GRAVITY,
) -> tuple[np.ndarray, np.ndarray]:
    """M(q) and H(q, qd) sharing a single kinematics sweep."""
    kin = compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    return joint_space_inertia(tree, q, kin=kin), inverse_dynamics(
        tree, q, qd, np.zeros(tree.ndof), gravity, kin=kin)


def com_kinematics(
    tree: RigidBodyTree,
    q: np.ndarray,
    qd: np.ndarray,
    bodies: list[int] | None = None,
    kin: TreeKinematics | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Combined-CoM position, velocity, 3 x n Jacobian, and dJ/dt qd.

    ``bodies`` selects a subset (default: whole tree); all outputs are mass
    weighted over that subset.
    """
    if bodies is None:
        bodies = list(range(tree.nbodies))
    if kin is None:
        kin = compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    mtot = sum(tree.bodies[i].mass for i in bodies)
    pos = np.zeros(3)
    vel = np.zeros(3)
    jac = np.zeros((3, tree.ndof))
    bias = np.zeros(3)
    for i in bodies:
        b = tree.bodies[i]
        scale = b.mass / mtot
        pos += scale * (kin.p[i] + kin.R[i] @ b.com)
        vel += scale * point_velocity(tree, q, qd, i, b.com, kin=kin)[3:]
        jac += scale * body_jacobian(tree, q, i, b.com, kin=kin)[3:]
        bias += scale * point_bias_acceleration(tree, q, qd, i, b.com, kin=kin)[3:]
    return pos, vel, jac, bias


def centroidal_angular_momentum(
    tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray,
    kin: TreeKinematics | None = None,
) -> np.ndarray:
    """Angular momentum about the whole-tree CoM (diagnostic)."""
    if kin is None:
        kin = compute_kinematics(tree, q, qd)
    mtot = tree.total_mass
    com = np.zeros(3)
    com_v = np.zeros(3)
    coms = []
    vels = []
    for i, b in enumerate(tree.bodies):
        r = kin.R[i] @ b.com
        c = kin.p[i] + r
        vc = kin.v[i] + _cross(kin.w[i], r)
        coms.append(c)
        vels.append(vc)
        com += b.mass * c
        com_v += b.mass * vc
    com /= mtot
    com_v /= mtot
    h = np.zeros(3)
    for i, b in enumerate(tree.bodies):
        iw = kin.R[i] @ b.inertia @ kin.R[i].T
        h += iw @ kin.w[i] + b.mass * _cross(coms[i] - com, vels[i] - com_v)
    return h


def kinetic_energy(tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray) -> float:
    kin = compute_kinematics(tree, q, qd)
    t = 0.0
    for i, b in enumerate(tree.bodies):
        r = kin.R[i] @ b.com
        vc = kin.v[i] + _cross(kin.w[i], r)
        iw = kin.R[i] @ b.inertia @ kin.R[i].T
        t += 0.5 * b.mass * vc @ vc + 0.5 * kin.w[i] @ iw @ kin.w[i]
    return float(t)


def potential_energy(tree: RigidBodyTree, q: np.ndarray, gravity: float = GRAVITY) -> float:
    kin = compute_kinematics(tree, q)
    v = 0.0
    for i, b in enumerate(tree.bodies):
        com_w = kin.p[i] + kin.R[i] @ b.com
        v += b.mass * gravity * com_w[2]
    return float(v)


def total_energy(tree: RigidBodyTree, q: np.ndarray, qd: np.ndarray,
                 gravity: float = GRAVITY) -> float:
    return kinetic_energy(tree, q, qd) + potential_energy(tree, q, gravity)
