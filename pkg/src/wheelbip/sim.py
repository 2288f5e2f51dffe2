"""Closed-loop physics simulation of the full robot under its controller.

The plant integrates the 12-DoF tree with hard rolling contacts.  Each
substep solves the contact KKT system [M, -J_c^T; J_c, 0][qdd; F] =
[S tau - H + external; rhs] on the active contact rows (per-wheel heading
and normal plus the shared mean-lateral row when both wheels touch), with
Baumgarte stabilization (gains 2w, w^2, w = 50 rad/s) on the normal gap
and the rolling-velocity drift, then advances (q, qd) by semi-implicit
Euler.  Contact engages when a wheel's lowest point reaches the terrain
and releases when the solve demands a pulling normal force; friction-cone
violations are logged as events, never clipped.

The scenario runner closes the loop at 500 Hz with 10 kHz substeps (the
damping overlay is re-evaluated at the substep rate against fresh joint
rates, like an embedded controller), logs a fixed CSV schema at the
control rate, and ships presets for the balancing studies: stand, height
sweep with the leg IK feeding the pelvis pitch, velocity step, slope
crossing, impulse kick, and lateral shake.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import spatial
from .clf import error_state
from .design import pelvis_ik
from .robot import (
    BASE_DOFS,
    HIP_KNEE_DOFS,
    RobotParams,
    RollingContact,
    WHEEL_NAMES,
    balance_state,
    balanced_standing_configuration,
    build_robot,
    default_params,
    leg_angles_to_joints,
    rolling_constraint,
    standing_configuration,
    upper_body_indices,
)
from .wbc import (
    TorqueCommand,
    WbcConfig,
    WbcReferences,
    WholeBodyController,
    clip,
)

SIM_DT = 1e-4                 # 10 kHz physics substep
CONTROL_DT = 2e-3             # 500 Hz control tick
BAUMGARTE_OMEGA = 50.0        # rad/s
NUM_DOF = 12
ACTUATED_DOFS = (6, 7, 8, 9, 10, 11)


# ---------------------------------------------------------------------------
# Terrain


@dataclass(frozen=True)
class Terrain:
    """Height field z = h(x, y) with an analytic gradient.

    The unit surface normal is (-dh/dx, -dh/dy, 1) normalized, so height
    and normal stay consistent by construction; presets keep the profile
    C1 (creases are blended) so the normal is continuous under a rolling
    wheel.
    """

    name: str
    height: Callable[[float, float], float]
    gradient: Callable[[float, float], tuple[float, float]]

    def normal(self, x: float, y: float) -> np.ndarray:
        gx, gy = self.gradient(x, y)
        s = 1.0 / math.sqrt(gx * gx + gy * gy + 1.0)
        return np.array([-gx * s, -gy * s, s])


def flat_terrain() -> Terrain:
    return Terrain("flat", lambda x, y: 0.0, lambda x, y: (0.0, 0.0))


def _filleted_profile(knots: np.ndarray, slopes: np.ndarray,
                      blend: float) -> tuple[Callable, Callable]:
    """Piecewise-linear height profile with C1 quadratic fillets.

    ``slopes[i]`` applies left of ``knots[i]`` (and ``slopes[-1]`` to the
    right of the last knot); the profile is 0 left of the first knot.
    Knots must be separated by more than 2*blend.
    """
    knots = np.asarray(knots, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    if np.any(np.diff(knots) <= 2.0 * blend):
        raise ValueError("profile knots closer than the fillet width")
    # Unfilleted height at each knot.
    H = np.concatenate([[0.0], np.cumsum(slopes[1:-1] * np.diff(knots))])

    def height(x: float, y: float) -> float:
        j = int(np.searchsorted(knots, x))
        if 0 < j <= len(knots) and x - knots[j - 1] <= blend:
            k = j - 1
            dx = x - knots[k] + blend
            return (H[k] + slopes[k] * (x - knots[k])
                    + (slopes[k + 1] - slopes[k]) * dx * dx / (4.0 * blend))
        if j < len(knots) and knots[j] - x <= blend:
            dx = x - knots[j] + blend
            return (H[j] + slopes[j] * (x - knots[j])
                    + (slopes[j + 1] - slopes[j]) * dx * dx / (4.0 * blend))
        if j == 0:
            return slopes[0] * (x - knots[0])
        return H[j - 1] + slopes[j] * (x - knots[j - 1])

    def gradient(x: float, y: float) -> tuple[float, float]:
        j = int(np.searchsorted(knots, x))
        if 0 < j <= len(knots) and x - knots[j - 1] <= blend:
            k = j - 1
            dx = x - knots[k] + blend
            return (slopes[k]
                    + (slopes[k + 1] - slopes[k]) * dx / (2.0 * blend), 0.0)
        if j < len(knots) and knots[j] - x <= blend:
            dx = x - knots[j] + blend
            return (slopes[j]
                    + (slopes[j + 1] - slopes[j]) * dx / (2.0 * blend), 0.0)
        return (slopes[j], 0.0)

    return height, gradient


def slope_pair_terrain(grade_deg: float = 15.0, run: float = 0.5,
                       plateau: float = 0.3, start: float = 0.6,
                       blend: float = 0.03) -> Terrain:
    """Symmetric up/down slope pair: flat, +grade, plateau, -grade, flat.

    ``run`` is the horizontal run of each incline.  The fillet radius
    (2*blend / tan(grade)) must exceed the wheel radius so a rolling wheel
    keeps single-point contact through the concave creases.
    """
    if not 0.0 < grade_deg < 60.0:
        raise ValueError("grade must be in (0, 60) degrees")
    s = math.tan(math.radians(grade_deg))
    knots = np.array([start, start + run, start + run + plateau,
                      start + 2.0 * run + plateau])
    height, gradient = _filleted_profile(knots, np.array([0.0, s, 0.0, -s, 0.0]),
                                         blend)
    return Terrain(f"slope-pair-{grade_deg:g}deg", height, gradient)


def sinusoid_terrain(amplitude: float = 0.005,
                     wavelength: float = 0.5) -> Terrain:
    """Sinusoidal roughness along the travel direction."""
    if amplitude < 0.0 or wavelength <= 0.0:
        raise ValueError("amplitude must be >= 0 and wavelength > 0")
    k = 2.0 * math.pi / wavelength

    def height(x: float, y: float) -> float:
        return amplitude * math.sin(k * x)

    def gradient(x: float, y: float) -> tuple[float, float]:
        return (amplitude * k * math.cos(k * x), 0.0)

    return Terrain("sinusoid", height, gradient)


TERRAINS: dict[str, Callable[[], Terrain]] = {
    "flat": flat_terrain,
    "slope-pair": slope_pair_terrain,
    "sinusoid": sinusoid_terrain,
}


# ---------------------------------------------------------------------------
# Disturbances


@dataclass(frozen=True)
class Disturbance:
    """External force on one body over a time window.

    ``impulse`` applies magnitude/duration Newton along ``direction`` for
    the window (total impulse = magnitude N*s); ``lateral-shake`` applies
    magnitude * sin(2 pi frequency (t - start)) Newton along world y.
    """

    kind: str
    magnitude: float
    start: float
    duration: float
    body: str = "pelvis"
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)
    frequency: float = 2.0

    def __post_init__(self):
        if self.kind not in ("impulse", "lateral-shake"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if not (np.isfinite(self.magnitude) and self.duration > 0.0):
            raise ValueError("disturbance must be finite with duration > 0")
        if self.kind == "lateral-shake" and self.frequency <= 0.0:
            raise ValueError("shake frequency must be positive")
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if not n > 0.0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "direction", tuple(d / n))

    def force_at(self, t: float) -> np.ndarray:
        """World-frame force (3,) at time t; zero outside the window."""
        if not self.start <= t < self.start + self.duration:
            return np.zeros(3)
        if self.kind == "impulse":
            return (self.magnitude / self.duration) * np.asarray(self.direction)
        amp = self.magnitude * math.sin(
            2.0 * math.pi * self.frequency * (t - self.start))
        return np.array([0.0, amp, 0.0])


def apply_disturbance(tree: spatial.RigidBodyTree, q: np.ndarray,
                      rhs: np.ndarray, d: Disturbance, t: float,
                      kin: spatial.TreeKinematics | None = None) -> np.ndarray:
    """Add one disturbance's generalized force into the step right-hand side.

    Returns a new vector; a disturbance outside its window (or with zero
    magnitude) leaves the dynamics unchanged.
    """
    F = d.force_at(t)
    if not F.any():
        return rhs
    if kin is None:
        kin = spatial.compute_kinematics(tree, q)
    b = tree.body_index(d.body)
    J = spatial.body_jacobian(tree, q, b, kin=kin)
    return rhs + J[3:].T @ F


# ---------------------------------------------------------------------------
# State and logs


@dataclass
class SimLog:
    """Accumulated scenario log: one row per control tick plus events."""

    scenario: str
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    events: list[tuple[float, str]] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    seed: int = 0

    def array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)

    def column(self, name: str) -> np.ndarray:
        return self.array()[:, self.columns.index(name)]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# schema=wheelbip-sim/1 scenario={self.scenario} "
                    f"seed={self.seed} aborted={int(self.aborted)}\n")
            f.write(",".join(self.columns) + "\n")
            for row in self.rows:
                f.write(",".join(f"{v:.17g}" for v in row) + "\n")


@dataclass(frozen=True)
class SimState:
    """Plant state between substeps.

    ``forces`` holds per-wheel contact-frame (heading, lateral, normal)
    forces from the last solve, zero rows for airborne wheels;
    ``forces_world`` the same forces in world coordinates.  ``log`` is the
    shared accumulating log bundle.
    """

    q: np.ndarray
    qd: np.ndarray
    time: float
    in_contact: tuple[bool, bool]
    forces: np.ndarray
    forces_world: np.ndarray
    qdd: np.ndarray
    log: SimLog


LOG_COLUMNS = (
    ["time"]
    + [f"q_{n}" for n in ("x", "y", "z", "yaw", "pitch", "roll", "hip_l",
                          "knee_l", "wheel_l", "hip_r", "knee_r", "wheel_r")]
    + [f"qd_{n}" for n in ("x", "y", "z", "yaw", "pitch", "roll", "hip_l",
                           "knee_l", "wheel_l", "hip_r", "knee_r", "wheel_r")]
    + ["tau_hip_l", "tau_knee_l", "tau_wheel_l",
       "tau_hip_r", "tau_knee_r", "tau_wheel_r"]
    + ["f_heading_l", "f_lateral_l", "f_normal_l",
       "f_heading_r", "f_lateral_r", "f_normal_r"]
    + ["com_x", "com_y", "com_z", "cam_x", "cam_y", "cam_z"]
    + ["delta_x", "delta_x_dot", "com_velocity", "com_height",
       "xbar_norm", "lyapunov", "slack"]
    + ["vel_ref", "com_height_ref", "pelvis_pitch_ref",
       "contact_l", "contact_r"]
)


# ---------------------------------------------------------------------------
# Dynamics backends

# The plant needs (M, bias, rolling rows) per substep.  The reference
# backend wires the generic tree algorithms; the fast backend computes the
# same quantities in closed form for this fixed topology (every leg joint
# is a local-y revolute with a pure-translation origin, so all six leg
# axes equal the base frame's y column and the leg rotations compose as
# plane rotations).  Both are interchangeable behind ``Simulator``.


class _ReferenceModel:
    """Dynamics terms straight from the generic tree algorithms."""

    def __init__(self, tree: spatial.RigidBodyTree, params: RobotParams):
        self.tree = tree
        self.params = params
        self._wheels = [tree.body_index(n) for n in WHEEL_NAMES]

    def prepare(self, q: np.ndarray, qd: np.ndarray):
        return spatial.compute_kinematics(self.tree, q, qd,
                                          np.zeros(self.tree.ndof))

    def wheel_pose(self, ctx) -> tuple[np.ndarray, np.ndarray]:
        centers = np.array([ctx.p[b] for b in self._wheels])
        axes = np.array([ctx.R[b] @ np.array([0.0, 1.0, 0.0])
                         for b in self._wheels])
        return centers, axes

    def mass_bias(self, ctx, q: np.ndarray,
                  qd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        M = spatial.joint_space_inertia(self.tree, q, kin=ctx)
        H = spatial.inverse_dynamics(self.tree, q, qd,
                                     np.zeros(self.tree.ndof), kin=ctx)
        return M, H

    def rolling(self, ctx, q: np.ndarray, qd: np.ndarray,
                normals: np.ndarray) -> RollingContact:
        return rolling_constraint(self.tree, self.params, q, qd, kin=ctx,
                                  normals=normals)

    def force_to_gen(self, ctx, q: np.ndarray, body: str,
                     F: np.ndarray) -> np.ndarray:
        b = self.tree.body_index(body)
        J = spatial.body_jacobian(self.tree, q, b, kin=ctx)
        return J[3:].T @ F


class _FastCtx:
    """Kinematic intermediates of one fast-backend evaluation."""

    __slots__ = ("R0", "p0", "E", "Eskew", "ay", "skew_ay", "w0", "qd",
                 "coms", "omegas", "omega_dots", "com_acc", "anchors",
                 "z_axes", "wheel_w", "wheel_wd", "wheel_acc")

    def __init__(self):
        pass


def _cross_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product of (n, 3) stacks without np.cross overhead."""
    out = np.empty_like(a)
    a0, a1, a2 = a[:, 0], a[:, 1], a[:, 2]
    b0, b1, b2 = b[:, 0], b[:, 1], b[:, 2]
    out[:, 0] = a1 * b2 - a2 * b1
    out[:, 1] = a2 * b0 - a0 * b2
    out[:, 2] = a0 * b1 - a1 * b0
    return out


def _contact_point(center: np.ndarray, axis: np.ndarray, normal: np.ndarray,
                   radius: float) -> np.ndarray:
    """Lowest point of the wheel disc; math mirrors wheel_contact_point."""
    u = normal - (normal @ axis) * axis
    un = math.sqrt(float(u @ u))
    if un < 1e-9:
        raise ValueError("wheel axis is parallel to the terrain normal")
    return center - radius * (u / un)


class _FastModel:
    """Closed-form dynamics for the pelvis + two 3R-leg topology.

    Hot-path outputs (Jacobians, inertias, rolling rows) live in reused
    workspaces: every returned array is valid until the next evaluation
    and must be copied by callers that need it afterwards.
    """

    def __init__(self, tree: spatial.RigidBodyTree, params: RobotParams):
        self.tree = tree
        self.params = params
        p = params
        self._masses = np.array([p.pelvis_mass, p.thigh_mass, p.shank_mass,
                                 p.wheel_mass, p.thigh_mass, p.shank_mass,
                                 p.wheel_mass])
        bodies = tree.bodies
        self._I_pelvis = bodies[0].inertia
        # Thigh/shank local inertias are axisymmetric about local z and the
        # wheel about local y, so world inertias need only the axis column.
        self._thigh_perp = float(bodies[1].inertia[0, 0])
        self._thigh_axial = float(bodies[1].inertia[2, 2])
        self._shank_perp = float(bodies[2].inertia[0, 0])
        self._shank_axial = float(bodies[2].inertia[2, 2])
        self._wheel_perp = float(bodies[3].inertia[0, 0])
        self._wheel_axial = float(bodies[3].inertia[1, 1])
        self._pelvis_com = float(bodies[0].com[2])
        self._hip_off = 0.5 * p.track_width
        self._lt = p.thigh_length
        self._ls = p.shank_length
        self._gravity = spatial.GRAVITY
        # (body, column, anchor) fill plan for the leg Jacobian columns.
        self._leg_cols = []
        for leg, (first_body, first_dof) in enumerate(((1, 6), (4, 9))):
            plan = []
            for depth in range(3):          # thigh, shank, wheel
                for j in range(depth + 1):
                    plan.append((first_body + depth, first_dof + j, j))
            self._leg_cols.append((first_body, first_dof, plan))
        self._arm_bodies = [[b for b, _, _ in plan]
                            for _, _, plan in self._leg_cols]
        self._arm_anchors = [[a for _, _, a in plan]
                             for _, _, plan in self._leg_cols]
        # Reused workspaces: the sparsity pattern of the CoM Jacobians is
        # fixed, so the constant blocks are written once and only the
        # varying slots get refreshed per evaluation.
        self._Jw = np.zeros((7, 3, NUM_DOF))
        self._Jv = np.zeros((7, 3, NUM_DOF))
        self._Jv[:, :, :3] = np.eye(3)
        self._JwF = self._Jw.reshape(21, NUM_DOF)
        self._JvF = self._Jv.reshape(21, NUM_DOF)
        self._IJw = np.empty((7, 3, NUM_DOF))
        self._mJv = np.empty((7, 3, NUM_DOF))
        self._m3 = self._masses[:, None, None]
        self._Iw = np.empty((7, 3, 3))
        self._eye3 = np.eye(3)
        self._leg_inertia_rows = np.array([1, 2, 4, 5])
        self._leg_perp = np.array([self._thigh_perp, self._shank_perp,
                                   self._thigh_perp, self._shank_perp])
        self._leg_diff = np.array(
            [self._thigh_axial - self._thigh_perp,
             self._shank_axial - self._shank_perp] * 2)
        self._J6 = np.zeros((3, NUM_DOF))
        self._J6[:, :3] = np.eye(3)
        self._rjac = np.zeros((6, NUM_DOF))
        self._rrhs = np.zeros(6)
        self._rvel = np.zeros(6)
        self._rframes = np.zeros((2, 3, 3))
        self._rpoints = np.zeros((2, 3))
        self._rcenters = np.zeros((2, 3))
        self._cjac = np.zeros((5, NUM_DOF))
        self._crhs = np.zeros(5)
        self._cvel = np.zeros(5)

    def prepare(self, q: np.ndarray, qd: np.ndarray) -> _FastCtx:
        sy, cy = math.sin(q[3]), math.cos(q[3])
        sp, cp = math.sin(q[4]), math.cos(q[4])
        sr, cr = math.sin(q[5]), math.cos(q[5])
        R0 = np.array([
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr]])
        ctx = _FastCtx()
        ctx.R0 = R0
        ctx.p0 = q[:3].copy()
        ctx.qd = qd
        e2 = np.array([-sy, cy, 0.0])
        e3 = np.array([cy * cp, sy * cp, -sp])
        E = np.empty((3, 3))
        E[:, 0] = (0.0, 0.0, 1.0)
        E[:, 1] = e2
        E[:, 2] = e3
        ctx.E = E
        ctx.Eskew = np.array([
            [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
            [[0.0, 0.0, cy], [0.0, 0.0, sy], [-cy, -sy, 0.0]],
            [[0.0, sp, sy * cp], [-sp, 0.0, -cy * cp],
             [-sy * cp, cy * cp, 0.0]]])
        rz, ry, rr = qd[3], qd[4], qd[5]
        w0 = E @ qd[3:6]
        # Euler-rate column derivatives, written out: e2 turns about world
        # z (rate rz), e3 about world z and the yawed y axis (rates rz, ry).
        e2d = np.array([-rz * cy, -rz * sy, 0.0])
        e3d = np.array([-rz * sy * cp - ry * cy * sp,
                        rz * cy * cp - ry * sy * sp,
                        -ry * cp])
        wd0 = e2d * ry + e3d * rr
        v0 = qd[:3]
        ay = R0[:, 1].copy()
        ctx.ay = ay
        ctx.skew_ay = np.array([
            [0.0, -ay[2], ay[1]],
            [ay[2], 0.0, -ay[0]],
            [-ay[1], ay[0], 0.0]])
        ctx.w0 = w0

        coms = np.empty((7, 3))
        omegas = np.empty((7, 3))
        omega_dots = np.empty((7, 3))
        com_acc = np.empty((7, 3))
        z_axes = np.empty((4, 3))        # thigh_l, shank_l, thigh_r, shank_r
        anchors = np.empty((2, 3, 3))    # per leg: hip, knee, axle
        cross = spatial._cross
        coms[0] = ctx.p0 + self._pelvis_com * R0[:, 2]
        omegas[0] = w0
        omega_dots[0] = wd0
        rc0 = coms[0] - ctx.p0
        com_acc[0] = cross(wd0, rc0) + cross(w0, cross(w0, rc0))
        R0x, R0z = R0[:, 0], R0[:, 2]
        wheel_w = np.empty((2, 3))
        wheel_wd = np.empty((2, 3))
        wheel_acc = np.empty((2, 3))
        for leg, (sign, d0) in enumerate(((1.0, 6), (-1.0, 9))):
            qh, qk = q[d0], q[d0 + 1]
            dh, dk, dw = qd[d0], qd[d0 + 1], qd[d0 + 2]
            s1, c1 = math.sin(qh), math.cos(qh)
            s12, c12 = math.sin(qh + qk), math.cos(qh + qk)
            zt = s1 * R0x + c1 * R0z
            zs = s12 * R0x + c12 * R0z
            hip = ctx.p0 + (sign * self._hip_off) * ay
            knee = hip - self._lt * zt
            axle = knee - self._ls * zs
            wth = w0 + ay * dh
            wsh = wth + ay * dk
            wwh = wsh + ay * dw
            w0xay = cross(w0, ay)
            wdth = wd0 + w0xay * dh
            wdsh = wdth + cross(wth, ay) * dk
            wdwh = wdsh + cross(wsh, ay) * dw
            r_h = hip - ctx.p0
            a_hip = cross(wd0, r_h) + cross(w0, cross(w0, r_h))
            r_k = knee - hip
            a_knee = a_hip + cross(wdth, r_k) + cross(wth, cross(wth, r_k))
            r_a = axle - knee
            a_axle = a_knee + cross(wdsh, r_a) + cross(wsh, cross(wsh, r_a))
            b = 1 + 3 * leg
            coms[b] = hip - (0.5 * self._lt) * zt
            coms[b + 1] = knee - (0.5 * self._ls) * zs
            coms[b + 2] = axle
            omegas[b] = wth
            omegas[b + 1] = wsh
            omegas[b + 2] = wwh
            omega_dots[b] = wdth
            omega_dots[b + 1] = wdsh
            omega_dots[b + 2] = wdwh
            r_ct = coms[b] - hip
            com_acc[b] = a_hip + cross(wdth, r_ct) \
                + cross(wth, cross(wth, r_ct))
            r_cs = coms[b + 1] - knee
            com_acc[b + 1] = a_knee + cross(wdsh, r_cs) \
                + cross(wsh, cross(wsh, r_cs))
            com_acc[b + 2] = a_axle
            anchors[leg, 0] = hip
            anchors[leg, 1] = knee
            anchors[leg, 2] = axle
            z_axes[2 * leg] = zt
            z_axes[2 * leg + 1] = zs
            wheel_w[leg] = wwh
            wheel_wd[leg] = wdwh
            wheel_acc[leg] = a_axle
        ctx.coms = coms
        ctx.omegas = omegas
        ctx.omega_dots = omega_dots
        ctx.com_acc = com_acc
        ctx.anchors = anchors
        ctx.z_axes = z_axes
        ctx.wheel_w = wheel_w
        ctx.wheel_wd = wheel_wd
        ctx.wheel_acc = wheel_acc
        return ctx

    def wheel_pose(self, ctx: _FastCtx) -> tuple[np.ndarray, np.ndarray]:
        centers = np.array([ctx.anchors[0, 2], ctx.anchors[1, 2]])
        return centers, np.array([ctx.ay, ctx.ay])

    def _com_jacobians(self, ctx: _FastCtx) -> tuple[np.ndarray, np.ndarray]:
        Jw, Jv = self._Jw, self._Jv
        Jw[:, :, 3:6] = ctx.E
        rel = ctx.coms - ctx.p0
        for k in range(3):
            Jv[:, :, 3 + k] = rel @ ctx.Eskew[k].T
        ay = ctx.ay
        sT = ctx.skew_ay.T
        for leg, (first_body, first_dof, plan) in enumerate(self._leg_cols):
            arms = (ctx.coms[self._arm_bodies[leg]]
                    - ctx.anchors[leg][self._arm_anchors[leg]])
            cols = arms @ sT
            for (b, dof, _), col in zip(plan, cols):
                Jw[b, :, dof] = ay
                Jv[b, :, dof] = col
        return Jw, Jv

    def _world_inertias(self, ctx: _FastCtx) -> np.ndarray:
        Iw = self._Iw
        R0 = ctx.R0
        Iw[0] = R0 @ self._I_pelvis @ R0.T
        ay = ctx.ay
        wheel = self._wheel_perp * self._eye3 \
            + (self._wheel_axial - self._wheel_perp) * (ay[:, None] * ay)
        Iw[3] = wheel
        Iw[6] = wheel
        Z = ctx.z_axes
        Iw[self._leg_inertia_rows] = (
            self._leg_perp[:, None, None] * self._eye3
            + self._leg_diff[:, None, None] * (Z[:, :, None] * Z[:, None, :]))
        return Iw

    def mass_bias(self, ctx: _FastCtx, q: np.ndarray,
                  qd: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Jw, Jv = self._com_jacobians(ctx)
        Iw = self._world_inertias(ctx)
        m = self._masses
        JwF, JvF = self._JwF, self._JvF
        np.matmul(Iw, Jw, out=self._IJw)
        np.multiply(Jv, self._m3, out=self._mJv)
        M = JwF.T @ self._IJw.reshape(21, NUM_DOF)
        M += JvF.T @ self._mJv.reshape(21, NUM_DOF)
        Iww = np.matmul(Iw, ctx.omegas[:, :, None])[:, :, 0]
        torque = np.matmul(Iw, ctx.omega_dots[:, :, None])[:, :, 0] \
            + _cross_rows(ctx.omegas, Iww)
        force = m[:, None] * ctx.com_acc
        force[:, 2] += m * self._gravity
        H = JwF.T @ torque.reshape(21) + JvF.T @ force.reshape(21)
        return M, H

    def _point_jacobian(self, ctx: _FastCtx, point: np.ndarray,
                        leg: int | None, depth: int) -> np.ndarray:
        """Linear 3 x ndof Jacobian of a world point on one body.

        ``leg``/``depth`` locate the body in the tree (depth 0..2 for
        thigh/shank/wheel, leg None for the pelvis).  The returned array
        is a reused workspace, consumed before the next call.
        """
        J = self._J6
        J[:, 6:] = 0.0
        rel = point - ctx.p0
        for k in range(3):
            J[:, 3 + k] = ctx.Eskew[k] @ rel
        if leg is not None:
            d0 = 6 + 3 * leg
            arms = point - ctx.anchors[leg, :depth + 1]
            J[:, d0:d0 + depth + 1] = (arms @ ctx.skew_ay.T).T
        return J

    def rolling(self, ctx: _FastCtx, q: np.ndarray, qd: np.ndarray,
                normals: np.ndarray) -> RollingContact:
        p = self.params
        cross = spatial._cross
        jac, rhs, vel = self._rjac, self._rrhs, self._rvel
        frames, points, centers = self._rframes, self._rpoints, self._rcenters
        axis = ctx.ay
        for k in range(2):
            center = ctx.anchors[k, 2]
            normal = normals[k]
            frame = frames[k]
            x = cross(axis, normal)
            nx = math.sqrt(float(x @ x))
            if nx < 1e-9:
                raise ValueError("wheel axis is parallel to the terrain "
                                 "normal")
            x = x / nx
            y = cross(normal, x)
            frame[0] = x
            frame[1] = y / math.sqrt(float(y @ y))
            frame[2] = normal / math.sqrt(float(normal @ normal))
            w = ctx.wheel_w[k]
            u = normal - (normal @ axis) * axis
            un = math.sqrt(float(u @ u))
            d = u / un
            contact = center - p.wheel_radius * d
            r_c = contact - center
            bias_lin = ctx.wheel_acc[k] + cross(ctx.wheel_wd[k], r_c) \
                + cross(w, cross(w, r_c))
            axis_dot = cross(w, axis)
            u_dot = -(normal @ axis_dot) * axis - (normal @ axis) * axis_dot
            rc_dot = -p.wheel_radius * (u_dot - (d @ u_dot) * d) / un
            centripetal = cross(w, cross(w, r_c))
            rows = slice(3 * k, 3 * k + 3)
            J6 = self._point_jacobian(ctx, contact, k, 2)
            np.matmul(frame, J6, out=jac[rows])
            rhs[rows] = frame @ (centripetal - cross(w, rc_dot) - bias_lin)
            vel[rows] = jac[rows] @ qd
            points[k] = contact
            centers[k] = center
        c_jac, c_rhs, c_vel = self._cjac, self._crhs, self._cvel
        for i, row in enumerate((0, 2, 3, 5)):
            c_jac[i] = jac[row]
            c_rhs[i] = rhs[row]
            c_vel[i] = vel[row]
        c_jac[4] = 0.5 * (jac[1] + jac[4])
        c_rhs[4] = 0.5 * (rhs[1] + rhs[4])
        c_vel[4] = 0.5 * (vel[1] + vel[4])
        return RollingContact(jac, rhs, vel, frames, points, centers,
                              c_jac, c_rhs, c_vel)

    def force_to_gen(self, ctx: _FastCtx, q: np.ndarray, body: str,
                     F: np.ndarray) -> np.ndarray:
        idx = self.tree.body_index(body)
        if idx == 0:
            point, leg, depth = ctx.p0, None, 0
        else:
            leg, depth = divmod(idx - 1, 3)
            point = ctx.anchors[leg, depth]
        return self._point_jacobian(ctx, point, leg, depth).T @ F


# ---------------------------------------------------------------------------
# Plant


class Simulator:
    """Constrained forward dynamics of one robot on one terrain."""

    def __init__(self, params: RobotParams | None = None,
                 tree: spatial.RigidBodyTree | None = None,
                 omega: float = BAUMGARTE_OMEGA, backend: str = "fast",
                 drift_correction: bool = True):
        self.params = params or default_params()
        self.tree = tree if tree is not None else build_robot(self.params)
        self.omega = omega
        self.drift_correction = drift_correction
        self._wheel_bodies = [self.tree.body_index(n) for n in WHEEL_NAMES]
        if backend == "fast":
            if tree is not None:
                raise ValueError(
                    "the fast backend is specialized to the built-in robot "
                    "topology; pass backend='reference' with a custom tree")
            self.model = _FastModel(self.tree, self.params)
        elif backend == "reference":
            self.model = _ReferenceModel(self.tree, self.params)
        else:
            raise ValueError(f"unknown backend {backend!r}")

    # -- contact bookkeeping

    def wheel_gaps(self, centers: np.ndarray, axes: np.ndarray,
                   terrain: Terrain) -> tuple[np.ndarray, np.ndarray]:
        """Signed normal gap of each wheel's lowest point, and the normals."""
        gaps = np.zeros(2)
        normals = np.zeros((2, 3))
        r = self.params.wheel_radius
        for k in range(2):
            center = centers[k]
            n = terrain.normal(center[0], center[1])
            c = _contact_point(center, axes[k], n, r)
            # Refine the normal at the contact's own footprint (matters on
            # curved fillets where it differs from the one under the axle).
            n = terrain.normal(c[0], c[1])
            c = _contact_point(center, axes[k], n, r)
            gaps[k] = n[2] * (c[2] - terrain.height(c[0], c[1]))
            normals[k] = n
        return gaps, normals

    def _contact_rows(self, rolling: RollingContact, active: list[bool],
                      gaps: np.ndarray):
        """(J, rhs, vel, slip rows, normal-row info) for the active set.

        ``slip`` lists the heading/lateral row indices: the rows whose
        velocity residual the post-integration drift correction zeroes
        (normal rows are left to the position-level stabilization).
        """
        w = self.omega
        if all(active):
            J = rolling.constraint_jacobian
            rhs = rolling.constraint_rhs - 2.0 * w * rolling.constraint_velocity
            rhs = rhs.copy()
            rhs[1] -= w * w * gaps[0]
            rhs[3] -= w * w * gaps[1]
            return J, rhs, rolling.constraint_velocity, [0, 2, 4], \
                [(0, 1), (1, 3)]
        for k, on in enumerate(active):
            if on:
                rows = slice(3 * k, 3 * k + 3)
                J = rolling.jacobian[rows]
                rhs = rolling.rhs[rows] - 2.0 * w * rolling.velocity[rows]
                rhs = rhs.copy()
                rhs[2] -= w * w * gaps[k]
                return J, rhs, rolling.velocity[rows], [0, 1], [(k, 2)]
        return (np.zeros((0, self.tree.ndof)), np.zeros(0), np.zeros(0),
                [], [])

    def _split_forces(self, lam: np.ndarray, active: list[bool],
                      rolling: RollingContact) -> tuple[np.ndarray, np.ndarray]:
        """Per-wheel contact-frame and world forces from the multipliers."""
        forces = np.zeros((2, 3))
        if all(active):
            forces[0] = (lam[0], 0.5 * lam[4], lam[1])
            forces[1] = (lam[2], 0.5 * lam[4], lam[3])
        else:
            for k, on in enumerate(active):
                if on:
                    forces[k] = lam
        world = np.einsum("kij,kj->ki", rolling.frames.transpose(0, 2, 1),
                          forces)
        return forces, world

    # -- the step itself

    def step(self, state: SimState, torques, dt: float, terrain: Terrain,
             disturbances: tuple[Disturbance, ...] = ()) -> SimState:
        """One constrained semi-implicit Euler substep.

        ``torques`` is a TorqueCommand or a (6,) actuation vector ordered
        (hip_l, knee_l, wheel_l, hip_r, knee_r, wheel_r).  Contact engages
        on touchdown of a wheel's lowest point, releases when the KKT
        demands a pulling normal force, and a singular contact system
        degrades to the free dynamics for the step.

        After integration an impulsive drift correction projects the
        heading/lateral slip rates back to zero through the same KKT
        matrix (an inertia-weighted velocity projection, i.e. the impulse
        a perfectly rigid no-slip contact would apply), so the constraint
        jacobian's migration between substeps cannot accumulate slip.
        """
        if not 0.0 < dt <= 1e-3:
            raise ValueError("dt must be in (0, 1e-3]")
        tau = torques.actuation() if isinstance(torques, TorqueCommand) \
            else np.asarray(torques, dtype=float).reshape(6)
        q, qd, t = state.q, state.qd, state.time
        model = self.model
        ctx = model.prepare(q, qd)
        M, H = model.mass_bias(ctx, q, qd)
        gen = -H
        gen[BASE_DOFS:] += tau
        for d in disturbances:
            F = d.force_at(t)
            if F.any():
                gen = gen + model.force_to_gen(ctx, q, d.body, F)

        centers, axes = model.wheel_pose(ctx)
        gaps, normals = self.wheel_gaps(centers, axes, terrain)
        active = [bool(state.in_contact[k] or gaps[k] <= 0.0)
                  for k in range(2)]
        rolling = model.rolling(ctx, q, qd, normals)

        n = self.tree.ndof
        qdd = None
        lam = np.zeros(0)
        dqd = np.zeros(n)
        norm_rows: list[tuple[int, int]] = []
        while True:
            J, rhs, vel, slip, norm_rows = self._contact_rows(
                rolling, active, gaps)
            m = J.shape[0]
            if m == 0:
                qdd = np.linalg.solve(M, gen)
                lam = np.zeros(0)
                dqd = np.zeros(n)
                break
            K = np.zeros((n + m, n + m))
            K[:n, :n] = M
            K[:n, n:] = -J.T
            K[n:, :n] = J
            # Second column: the slip-rate projection.  The KKT row makes
            # J qdd = rhs exact, so the post-update slip is known without
            # solving: vel + dt * rhs on the slip rows.
            B = np.zeros((n + m, 2))
            B[:n, 0] = gen
            B[n:, 0] = rhs
            if self.drift_correction:
                B[n + np.asarray(slip, dtype=int), 1] = \
                    -(vel + dt * rhs)[slip]
            try:
                sol = np.linalg.solve(K, B)
            except np.linalg.LinAlgError:
                # Loss of contact rank: release everything and fall free.
                active = [False, False]
                continue
            qdd, lam = sol[:n, 0], sol[n:, 0]
            dqd = sol[:n, 1]
            pulling = [k for k, row in norm_rows if lam[row] < 0.0]
            if not pulling:
                break
            worst = min(pulling, key=lambda k: lam[
                next(row for kk, row in norm_rows if kk == k)])
            active[worst] = False

        forces, world = self._split_forces(lam, active, rolling) \
            if lam.size else (np.zeros((2, 3)), np.zeros((2, 3)))
        mu = self.params.friction_coeff
        for k in range(2):
            if active[k]:
                tangent = math.hypot(forces[k, 0], forces[k, 1])
                if tangent > mu * forces[k, 2] + 1e-9:
                    state.log.events.append(
                        (t, f"friction-cone violation {WHEEL_NAMES[k]} "
                            f"|ft|={tangent:.3f} mu*fn={mu * forces[k, 2]:.3f}"))

        qd_new = qd + dt * qdd + dqd
        q_new = q + dt * qd_new
        return replace(state, q=q_new, qd=qd_new, time=t + dt,
                       in_contact=(active[0], active[1]), forces=forces,
                       forces_world=world, qdd=qdd)

    # -- helpers

    def initial_state(self, z_d: float = 0.36, x: float = 0.0,
                      lean: float = 0.0, yaw: float = 0.0,
                      log: SimLog | None = None) -> SimState:
        """Balanced standing start at hip height ``z_d`` above the axles.

        ``lean`` offsets the initial cart-CoM lean delta_x (in meters) by
        re-pitching the base, for disturbance-recovery style starts.
        """
        ik = pelvis_ik(z_d)
        q = balanced_standing_configuration(
            self.tree, self.params, ik.theta_h, ik.theta_k,
            theta_p_guess=ik.theta_p, x=x, yaw=yaw)
        if lean != 0.0:
            from scipy.optimize import brentq

            def miss(dpitch: float) -> float:
                qq = q.copy()
                qq[4] += dpitch
                bal = balance_state(self.tree, self.params, qq,
                                    np.zeros(self.tree.ndof))
                return bal.delta_x - lean

            dp = brentq(miss, -0.6, 0.6, xtol=1e-14)
            q[4] += dp
        if log is None:
            log = SimLog("manual", list(LOG_COLUMNS))
        return SimState(q=q, qd=np.zeros(self.tree.ndof), time=0.0,
                        in_contact=(True, True), forces=np.zeros((2, 3)),
                        forces_world=np.zeros((2, 3)),
                        qdd=np.zeros(self.tree.ndof), log=log)

    def static_equilibrium_torques(
            self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Actuation and contact forces that hold ``q`` at rest.

        Solves S tau + J_c^T F = H(q, 0) in the least-squares sense over
        the 11 unknowns (6 torques, 5 contact rows); the residual is zero
        exactly when the pose is a static equilibrium of the constrained
        system (cart CoM over the axle line).
        """
        tree = self.tree
        qd0 = np.zeros(tree.ndof)
        H = spatial.inverse_dynamics(tree, q, qd0, qd0)
        rolling = rolling_constraint(tree, self.params, q, qd0)
        S = np.zeros((tree.ndof, 6))
        S[list(ACTUATED_DOFS), range(6)] = 1.0
        A = np.hstack([S, rolling.constraint_jacobian.T])
        sol, *_ = np.linalg.lstsq(A, H, rcond=None)
        residual = float(np.max(np.abs(A @ sol - H)))
        return sol[:6], sol[6:], residual


# ---------------------------------------------------------------------------
# Scenarios


@dataclass(frozen=True)
class Scenario:
    """Declarative closed-loop scenario.

    ``height_profile`` is a piecewise-linear timeline of the commanded hip
    height above the axles (the IK input); ``velocity_profile`` a
    piecewise-constant timeline of the forward CoM velocity reference.
    The pelvis-pitch and CoM-height references both follow the leg IK's
    posture map along the height timeline, anchored at the measured
    starting posture so a constant-height scenario starts transient-free.
    """

    name: str
    duration: float = 5.0
    terrain_name: str = "flat"
    height_profile: tuple[tuple[float, float], ...] = ((0.0, 0.36),)
    velocity_profile: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    disturbances: tuple[Disturbance, ...] = ()
    initial_lean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.terrain_name not in TERRAINS:
            raise ValueError(f"unknown terrain {self.terrain_name!r}")
        for profile in (self.height_profile, self.velocity_profile):
            if not profile or any(profile[i][0] >= profile[i + 1][0]
                                  for i in range(len(profile) - 1)):
                raise ValueError("profiles need strictly increasing times")

    def terrain(self) -> Terrain:
        return TERRAINS[self.terrain_name]()


def _interp_profile(profile: tuple[tuple[float, float], ...], t: float,
                    piecewise_constant: bool = False) -> float:
    times = [p[0] for p in profile]
    values = [p[1] for p in profile]
    if piecewise_constant:
        j = int(np.searchsorted(times, t, side="right")) - 1
        return values[max(j, 0)]
    return float(np.interp(t, times, values))


def stand_scenario(duration: float = 10.0, lean: float = 0.01) -> Scenario:
    """Hold zero references from a slightly leaned start."""
    return Scenario(name="stand", duration=duration, initial_lean=lean)


def height_sweep_scenario(duration: float = 10.0, low: float = 0.33,
                          high: float = 0.42) -> Scenario:
    """Quasi-static hip-height sweep low -> high -> low, pelvis from IK."""
    return Scenario(
        name="height-sweep", duration=duration,
        height_profile=((0.0, low), (0.1 * duration, low),
                        (0.55 * duration, high), (duration, low)))


def velocity_step_scenario(duration: float = 5.0,
                           target: float = 1.0) -> Scenario:
    """Step forward-velocity reference applied from t = 0."""
    return Scenario(name="velocity-step", duration=duration,
                    velocity_profile=((0.0, target),))


def slope_climb_scenario(duration: float = 6.0, speed: float = 0.5,
                         grade_deg: float = 15.0) -> Scenario:
    """Cross the symmetric slope pair at modest speed, pelvis lowered."""
    return Scenario(
        name="slope-climb", duration=duration, terrain_name="slope-pair",
        velocity_profile=((0.0, speed),),
        height_profile=((0.0, 0.38), (1.0, 0.38), (1.8, 0.34),
                        (duration, 0.34)))


def impulse_scenario(duration: float = 5.0, impulse: float = 5.0,
                     start: float = 1.0) -> Scenario:
    """Sagittal impulse kick at the pelvis while standing."""
    return Scenario(
        name="impulse", duration=duration,
        disturbances=(Disturbance(kind="impulse", magnitude=impulse,
                                  start=start, duration=0.05),))


def lateral_shake_scenario(duration: float = 5.0, force: float = 15.0,
                           frequency: float = 2.0) -> Scenario:
    """Sinusoidal lateral force at the pelvis for two seconds."""
    return Scenario(
        name="lateral-shake", duration=duration,
        disturbances=(Disturbance(kind="lateral-shake", magnitude=force,
                                  start=1.0, duration=2.0,
                                  frequency=frequency),))


SCENARIOS: dict[str, Callable[[], Scenario]] = {
    "stand": stand_scenario,
    "height-sweep": height_sweep_scenario,
    "velocity-step": velocity_step_scenario,
    "slope-climb": slope_climb_scenario,
    "impulse": impulse_scenario,
    "lateral-shake": lateral_shake_scenario,
}


def _posture_reference(sim: Simulator, z_d: float) -> tuple[float, float]:
    """(pelvis pitch, cart-CoM height above ground) of the IK posture."""
    ik = pelvis_ik(z_d)
    base_pitch, q_hip, q_knee = leg_angles_to_joints(
        ik.theta_p, ik.theta_h, ik.theta_k)
    q = standing_configuration(sim.tree, sim.params, base_pitch, q_hip,
                               q_knee)
    com = spatial.com_kinematics(sim.tree, q, np.zeros(sim.tree.ndof),
                                 bodies=upper_body_indices(sim.tree))[0]
    return ik.theta_p, float(com[2])


class _PostureMap:
    """IK posture references tabulated over the commanded height range."""

    def __init__(self, sim: Simulator, z_lo: float, z_hi: float,
                 samples: int = 257):
        if z_hi - z_lo < 1e-12:
            zs = np.array([z_lo])
        else:
            zs = np.linspace(z_lo, z_hi, samples)
        table = np.array([_posture_reference(sim, float(z)) for z in zs])
        self._zs = zs
        self._pitch = table[:, 0]
        self._com = table[:, 1]

    def __call__(self, z: float) -> tuple[float, float]:
        if self._zs.size == 1:
            return float(self._pitch[0]), float(self._com[0])
        return (float(np.interp(z, self._zs, self._pitch)),
                float(np.interp(z, self._zs, self._com)))


def run_scenario(scenario: Scenario, sim: Simulator | None = None,
                 controller: WholeBodyController | None = None,
                 control_dt: float = CONTROL_DT,
                 sim_dt: float = SIM_DT) -> SimLog:
    """Run one closed-loop scenario and return the log bundle.

    The controller runs every ``control_dt``; between ticks the plant
    advances at ``sim_dt`` with the hip/knee damping overlay re-evaluated
    each substep.  A controller failure or a fall aborts the run with a
    diagnostic event and the log flagged.
    """
    sim = sim or Simulator()
    if controller is None:
        controller = WholeBodyController(sim.tree, sim.params, WbcConfig(
            friction_coeff=sim.params.friction_coeff,
            joint_torque_limit=sim.params.joint_torque_limit,
            wheel_torque_limit=sim.params.wheel_torque_limit,
            control_dt=control_dt))
    terrain = scenario.terrain()
    cfg = controller.config
    dofs = list(HIP_KNEE_DOFS)
    substeps = max(int(round(control_dt / sim_dt)), 1)

    log = SimLog(scenario.name, list(LOG_COLUMNS), seed=scenario.seed)
    z_values = [p[1] for p in scenario.height_profile]
    posture = _PostureMap(sim, min(z_values), max(z_values))
    z_d0 = scenario.height_profile[0][1]
    state = sim.initial_state(z_d=z_d0, lean=scenario.initial_lean, log=log)
    pitch_map0, com_map0 = posture(z_d0)
    kin0 = spatial.compute_kinematics(sim.tree, state.q)
    com0 = spatial.com_kinematics(sim.tree, state.q, state.qd,
                                  bodies=upper_body_indices(sim.tree),
                                  kin=kin0)[0]
    # Anchor the IK posture map at the measured balanced start, so the
    # references are exactly consistent at t = 0 and the map contributes
    # only its variation along the height timeline.
    pitch_anchor = float(state.q[4]) - pitch_map0
    height_anchor = float(com0[2]) - com_map0

    n_ticks = int(round(scenario.duration / control_dt))
    for _ in range(n_ticks):
        t = state.time
        q, qd = state.q, state.qd
        kin = spatial.compute_kinematics(sim.tree, q, qd,
                                         np.zeros(sim.tree.ndof))
        bal = balance_state(sim.tree, sim.params, q, qd, kin=kin)
        com = spatial.com_kinematics(sim.tree, q, qd,
                                     bodies=upper_body_indices(sim.tree),
                                     kin=kin)[0]
        mid = 0.5 * (kin.p[sim._wheel_bodies[0]]
                     + kin.p[sim._wheel_bodies[1]])
        ground = terrain.height(mid[0], mid[1])

        z_d = _interp_profile(scenario.height_profile, t)
        vel_ref = _interp_profile(scenario.velocity_profile, t,
                                  piecewise_constant=True)
        pitch_map, com_map = posture(z_d)
        com_map_next = posture(_interp_profile(scenario.height_profile,
                                               t + control_dt))[1]
        com_ref = ground + com_map + height_anchor
        refs = WbcReferences(
            pelvis_pitch=pitch_anchor + pitch_map,
            com_height=com_ref,
            com_height_rate=(com_map_next - com_map) / control_dt,
            velocity=vel_ref)

        cmd = controller.tick(q, qd, refs,
                              in_contact=any(state.in_contact))
        xbar = error_state(vel_ref, bal.com_velocity, bal.delta_x_dot,
                           bal.delta_x, bal.height)
        row = ([t] + list(q) + list(qd)
               + [cmd.tau_j[0], cmd.tau_j[1], cmd.tau_w[0],
                  cmd.tau_j[2], cmd.tau_j[3], cmd.tau_w[1]]
               + list(state.forces.reshape(-1))
               + list(com) + list(cmd.cam)
               + [bal.delta_x, bal.delta_x_dot, bal.com_velocity, bal.height,
                  float(np.linalg.norm(xbar)), controller.clf.value(xbar),
                  cmd.slack]
               + [vel_ref, com_ref, refs.pelvis_pitch,
                  float(state.in_contact[0]), float(state.in_contact[1])])
        log.rows.append(row)

        if cmd.status == "infeasible":
            log.aborted = True
            log.abort_reason = "controller reported an infeasible program"
            log.events.append((t, log.abort_reason))
            break
        if abs(bal.delta_x) > 0.5 * bal.height or com[2] < ground + 0.1:
            log.aborted = True
            log.abort_reason = "robot fell"
            log.events.append((t, log.abort_reason))
            break

        ff = cmd.feedforward
        v_target = controller.velocity_target
        wheel = np.array([cmd.tau_w[0], cmd.tau_w[1]])
        for _ in range(substeps):
            tau_j = clip(ff + cfg.joint_damping * (v_target - state.qd[dofs]),
                         cfg.joint_torque_limit)
            tau = np.array([tau_j[0], tau_j[1], wheel[0],
                            tau_j[2], tau_j[3], wheel[1]])
            state = sim.step(state, tau, sim_dt, terrain,
                             scenario.disturbances)
    return log
