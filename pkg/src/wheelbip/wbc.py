"""Weighted whole-body controller.

Solves one quadratic program per control tick over the decision vector
x = [qdd (12), tau (6), F_c (6), s (1)]: weighted task costs plus a slack
penalty, subject to the full equations of motion, the rolling constraint,
torque boxes, a friction pyramid at each wheel, and the balance Lyapunov
decrease row relaxed by the slack s.  Joint torque commands add the
embedded-controller damping overlay on hips and knees.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import spatial
from .clf import ClfData, clf_constraint_row, error_state, make_clf, wlip_balance_target
from .qp import QpProblem, QpSolution, solve_qp
from .robot import (
    HIP_KNEE_DOFS,
    BalanceState,
    RobotParams,
    RollingContact,
    balance_state,
    rolling_constraint,
    upper_body_indices,
)
from .spatial import RigidBodyTree

NUM_DOF = 12
NUM_ACT = 6
NUM_CONTACT_FORCES = 6
NUM_VARS = NUM_DOF + NUM_ACT + NUM_CONTACT_FORCES + 1
QDD = slice(0, NUM_DOF)
TAU = slice(NUM_DOF, NUM_DOF + NUM_ACT)
FORCES = slice(NUM_DOF + NUM_ACT, NUM_DOF + NUM_ACT + NUM_CONTACT_FORCES)
SLACK = NUM_VARS - 1

ACTUATED_DOFS = (6, 7, 8, 9, 10, 11)
_HIP_KNEE_TAU = (0, 1, 3, 4)
_WHEEL_TAU = (2, 5)

YAW_DOF, PITCH_DOF, ROLL_DOF = 3, 4, 5


def clip(v: np.ndarray, bound: float) -> np.ndarray:
    """Elementwise clamp to [-bound, bound]."""
    if bound <= 0.0:
        raise ValueError("clip bound must be positive")
    return np.clip(v, -bound, bound)


@dataclass(frozen=True)
class TaskGains:
    kp: float
    kd: float
    weight: float


@dataclass(frozen=True)
class WbcConfig:
    """Task gains, constraint limits, and embedded-controller settings."""

    pelvis_pitch: TaskGains = TaskGains(100.0, 10.0, 1.0)
    pelvis_yaw_roll: TaskGains = TaskGains(100.0, 10.0, 10.0)
    com_height: TaskGains = TaskGains(100.0, 10.0, 100.0)
    wheel_distance: TaskGains = TaskGains(1e3, 30.0, 10.0)
    balance_weight: float = 10.0
    slack_weight: float = 1e3
    friction_coeff: float = 0.5
    joint_torque_limit: float = 35.0
    wheel_torque_limit: float = 5.0
    joint_damping: float = 2.0
    velocity_clip: float = 0.5
    control_dt: float = 0.002
    # Tiny quadratic regularization pins directions the tasks leave free
    # (e.g. the internal lateral force pair shared by both contacts).
    accel_reg: float = 1e-8
    torque_reg: float = 1e-6
    force_reg: float = 1e-6

    def __post_init__(self):
        for gains in (self.pelvis_pitch, self.pelvis_yaw_roll,
                      self.com_height, self.wheel_distance):
            if min(gains.kp, gains.kd, gains.weight) < 0.0:
                raise ValueError("task gains must be nonnegative")
        if self.friction_coeff <= 0.0:
            raise ValueError("friction coefficient must be positive")
        if min(self.balance_weight, self.slack_weight) < 0.0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class TaskSpec:
    """One weighted task ||J x - b||_W over x = [qdd, tau, F_c]."""

    name: str
    jacobian: np.ndarray          # (k, 24)
    target: np.ndarray            # (k,)
    weight: np.ndarray            # (k, k)

    def __post_init__(self):
        jac = np.atleast_2d(np.asarray(self.jacobian, dtype=float))
        b = np.atleast_1d(np.asarray(self.target, dtype=float))
        w = np.atleast_2d(np.asarray(self.weight, dtype=float))
        object.__setattr__(self, "jacobian", jac)
        object.__setattr__(self, "target", b)
        object.__setattr__(self, "weight", w)
        k = jac.shape[0]
        if jac.shape[1] != NUM_VARS - 1 or b.shape != (k,) or w.shape != (k, k):
            raise ValueError("task dimensions disagree")
        if not np.allclose(w, w.T, atol=1e-12) or np.any(np.linalg.eigvalsh(w) < -1e-12):
            raise ValueError("task weight must be symmetric PSD")

    def residual(self, x: np.ndarray) -> float:
        r = self.jacobian @ x[: NUM_VARS - 1] - self.target
        return float(np.sqrt(r @ self.weight @ r))


@dataclass(frozen=True)
class WbcReferences:
    pelvis_pitch: float = 0.0
    pelvis_yaw: float = 0.0
    pelvis_roll: float = 0.0
    com_height: float = 0.35          # world z of the cart CoM
    com_height_rate: float = 0.0
    velocity: float = 0.0             # forward CoM velocity along heading


@dataclass(frozen=True)
class DynamicsResult:
    """Mass matrix, bias vector, and the kinematics they were built from."""

    M: np.ndarray
    H: np.ndarray
    kin: spatial.TreeKinematics


@dataclass(frozen=True)
class ClfRow:
    """Lyapunov decrease constraint coeff . qdd - s <= limit."""

    coeff: np.ndarray
    limit: float
    value: float                      # V(xbar), diagnostic
    gamma: float


@dataclass(frozen=True)
class TorqueCommand:
    tau_j: np.ndarray                 # hip_l, knee_l, hip_r, knee_r
    tau_w: np.ndarray                 # wheel_l, wheel_r
    slack: float
    qdd: np.ndarray
    forces: np.ndarray                # contact-frame, left then right
    status: str
    degraded: bool
    iterations: int
    cam: np.ndarray                   # centroidal angular momentum readout
    # Pre-overlay hip/knee torque, so an embedded loop running faster than
    # the QP can re-evaluate the damping overlay against fresh joint rates.
    feedforward: np.ndarray | None = None

    def actuation(self) -> np.ndarray:
        """Torques ordered as the actuated dofs (hip, knee, wheel per leg)."""
        tau = np.zeros(NUM_ACT)
        tau[list(_HIP_KNEE_TAU)] = self.tau_j
        tau[list(_WHEEL_TAU)] = self.tau_w
        return tau


def measure_dynamics(tree: RigidBodyTree, q: np.ndarray,
                     qd: np.ndarray) -> DynamicsResult:
    kin = spatial.compute_kinematics(tree, q, qd, np.zeros(tree.ndof))
    M = spatial.joint_space_inertia(tree, q, kin=kin)
    H = spatial.inverse_dynamics(tree, q, qd, np.zeros(tree.ndof), kin=kin)
    return DynamicsResult(M=M, H=H, kin=kin)


def balance_clf_row(clf: ClfData, bal: BalanceState, velocity_ref: float,
                    params: RobotParams) -> ClfRow:
    """Map the Lyapunov decrease condition onto the acceleration variables.

    The reduced-model input is u = (d2(delta_x) - (1 + m_c/m_w) g/z delta_x)/z
    with d2(delta_x) = J qdd + bias, so the row a_u u - s <= limit becomes a
    linear constraint over qdd and the slack.
    """
    z = bal.height
    xbar = error_state(velocity_ref, bal.com_velocity, bal.delta_x_dot,
                       bal.delta_x, z)
    a_u, limit = clf_constraint_row(clf, xbar)
    scale = a_u / z
    gain = (1.0 + params.cart_mass / params.wheel_pair_mass) * spatial.GRAVITY / z
    coeff = scale * bal.jacobian
    limit = limit - scale * (bal.bias - gain * bal.delta_x)
    return ClfRow(coeff=coeff, limit=float(limit),
                  value=float(clf.value(xbar)), gamma=clf.gamma)


def _pd(gains: TaskGains, err: float, derr: float) -> float:
    return gains.kp * err + gains.kd * derr


def _embed(rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(rows)
    out = np.zeros((rows.shape[0], NUM_VARS - 1))
    out[:, QDD] = rows
    return out


def build_tasks(
    tree: RigidBodyTree,
    params: RobotParams,
    q: np.ndarray,
    qd: np.ndarray,
    refs: WbcReferences,
    config: WbcConfig,
    clf: ClfData,
    dynamics: DynamicsResult,
    in_contact: bool = True,
) -> tuple[list[TaskSpec], BalanceState | None]:
    """Emit the task list; wheel-dependent tasks drop out of contact."""
    kin = dynamics.kin
    tasks: list[TaskSpec] = []

    row = np.zeros(NUM_DOF)
    row[PITCH_DOF] = 1.0
    tasks.append(TaskSpec(
        "pelvis_pitch", _embed(row),
        [_pd(config.pelvis_pitch, refs.pelvis_pitch - q[PITCH_DOF],
             -qd[PITCH_DOF])],
        [[config.pelvis_pitch.weight]]))

    rows = np.zeros((2, NUM_DOF))
    rows[0, YAW_DOF] = 1.0
    rows[1, ROLL_DOF] = 1.0
    g = config.pelvis_yaw_roll
    tasks.append(TaskSpec(
        "pelvis_yaw_roll", _embed(rows),
        [_pd(g, refs.pelvis_yaw - q[YAW_DOF], -qd[YAW_DOF]),
         _pd(g, refs.pelvis_roll - q[ROLL_DOF], -qd[ROLL_DOF])],
        g.weight * np.eye(2)))

    com, com_v, com_J, com_bias = spatial.com_kinematics(
        tree, q, qd, bodies=upper_body_indices(tree), kin=kin)
    g = config.com_height
    tasks.append(TaskSpec(
        "com_height", _embed(com_J[2]),
        [_pd(g, refs.com_height - com[2], refs.com_height_rate - com_v[2])
         - com_bias[2]],
        [[g.weight]]))

    if not in_contact:
        return tasks, None

    bal = balance_state(tree, params, q, qd, kin=kin)
    heading = bal.heading
    left = tree.body_index("wheel_l")
    right = tree.body_index("wheel_r")
    j_rel = (spatial.body_jacobian(tree, q, right, kin=kin)[3:]
             - spatial.body_jacobian(tree, q, left, kin=kin)[3:])
    bias_rel = (spatial.point_bias_acceleration(tree, q, qd, right, kin=kin)[3:]
                - spatial.point_bias_acceleration(tree, q, qd, left, kin=kin)[3:])
    x_rel = float(heading @ (kin.p[right] - kin.p[left]))
    xd_rel = float(heading @ (kin.v[right] - kin.v[left]))
    g = config.wheel_distance
    tasks.append(TaskSpec(
        "wheel_distance", _embed(heading @ j_rel),
        [_pd(g, -x_rel, -xd_rel) - heading @ bias_rel],
        [[g.weight]]))

    xbar = error_state(refs.velocity, bal.com_velocity, bal.delta_x_dot,
                       bal.delta_x, bal.height)
    target = wlip_balance_target(clf, xbar, bal.height, params.cart_mass,
                                 params.wheel_pair_mass)
    tasks.append(TaskSpec(
        "balance", _embed(bal.jacobian), [target - bal.bias],
        [[config.balance_weight]]))
    return tasks, bal


def assemble_wbc_qp(
    tasks: list[TaskSpec],
    dynamics: DynamicsResult,
    rolling: RollingContact | None,
    clf_row: ClfRow | None,
    config: WbcConfig,
) -> QpProblem:
    n = NUM_VARS
    H = np.zeros((n, n))
    g = np.zeros(n)
    for task in tasks:
        JW = task.jacobian.T @ task.weight
        H[:n - 1, :n - 1] += 2.0 * JW @ task.jacobian
        g[:n - 1] -= 2.0 * JW @ task.target
    H[SLACK, SLACK] = 2.0 * config.slack_weight
    H[QDD, QDD] += 2.0 * config.accel_reg * np.eye(NUM_DOF)
    H[TAU, TAU] += 2.0 * config.torque_reg * np.eye(NUM_ACT)
    H[FORCES, FORCES] += 2.0 * config.force_reg * np.eye(NUM_CONTACT_FORCES)

    # Equations of motion: M qdd + H_bias = S' tau + J_c' F_c.
    eom = np.zeros((NUM_DOF, n))
    eom[:, QDD] = dynamics.M
    for k, dof in enumerate(ACTUATED_DOFS):
        eom[dof, NUM_DOF + k] = -1.0
    rows = [eom]
    rhs = [-dynamics.H]
    if rolling is not None:
        eom[:, FORCES] = -rolling.jacobian.T
        roll = np.zeros((rolling.constraint_jacobian.shape[0], n))
        roll[:, QDD] = rolling.constraint_jacobian
        rows.append(roll)
        rhs.append(rolling.constraint_rhs)
    else:
        pin = np.zeros((NUM_CONTACT_FORCES, n))
        pin[:, FORCES] = np.eye(NUM_CONTACT_FORCES)
        rows.append(pin)
        rhs.append(np.zeros(NUM_CONTACT_FORCES))
    A_eq = np.vstack(rows)
    b_eq = np.concatenate(rhs)

    ineq = []
    lb = []
    ub = []
    box = np.zeros((NUM_ACT, n))
    box[:, TAU] = np.eye(NUM_ACT)
    limits = np.array([config.joint_torque_limit, config.joint_torque_limit,
                       config.wheel_torque_limit] * 2)
    ineq.append(box)
    lb.append(-limits)
    ub.append(limits)
    if rolling is not None:
        mu = config.friction_coeff
        for c in range(2):
            base = FORCES.start + 3 * c
            cone = np.zeros((3, n))
            cone[0, base] = 1.0
            cone[0, base + 2] = mu      # mu F_z + F_x >= 0
            cone[1, base + 1] = 1.0
            cone[1, base + 2] = mu      # mu F_z + F_y >= 0
            cone[2, base + 2] = 1.0     # F_z >= 0
            ineq.append(cone)
            lb.append(np.zeros(3))
            ub.append(np.array([np.inf, np.inf, np.inf]))
            tip = np.zeros((2, n))
            tip[0, base] = 1.0
            tip[0, base + 2] = -mu      # F_x - mu F_z <= 0
            tip[1, base + 1] = 1.0
            tip[1, base + 2] = -mu
            ineq.append(tip)
            lb.append(np.full(2, -np.inf))
            ub.append(np.zeros(2))
    if clf_row is not None:
        row = np.zeros((1, n))
        row[0, QDD] = clf_row.coeff
        row[0, SLACK] = -1.0
        ineq.append(row)
        lb.append(np.array([-np.inf]))
        ub.append(np.array([clf_row.limit]))
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq,
                     A_in=np.vstack(ineq), lb=np.concatenate(lb),
                     ub=np.concatenate(ub))


def solve_wbc(
    tasks: list[TaskSpec],
    dynamics: DynamicsResult,
    rolling: RollingContact | None,
    clf_row: ClfRow | None,
    config: WbcConfig,
    cam: np.ndarray | None = None,
    warm_start: QpSolution | None = None,
) -> tuple[TorqueCommand, QpSolution | None]:
    """Solve the control QP and split the actuation vector.

    Returns the command plus the raw solution for warm starting; an
    infeasible QP (should not happen thanks to the slack) degrades to a
    zero-torque command flagged by status.
    """
    problem = assemble_wbc_qp(tasks, dynamics, rolling, clf_row, config)
    sol = solve_qp(problem, tol_abs=1e-8, tol_rel=1e-8, max_iter=8000,
                   warm_start=warm_start)
    cam = np.zeros(3) if cam is None else cam
    if sol.status == "primal-infeasible":
        return TorqueCommand(
            tau_j=np.zeros(4), tau_w=np.zeros(2), slack=0.0,
            qdd=np.zeros(NUM_DOF), forces=np.zeros(NUM_CONTACT_FORCES),
            status="infeasible", degraded=True, iterations=sol.iterations,
            cam=cam), None
    x = sol.x
    tau = x[TAU]
    cmd = TorqueCommand(
        tau_j=tau[list(_HIP_KNEE_TAU)].copy(),
        tau_w=tau[list(_WHEEL_TAU)].copy(),
        slack=float(x[SLACK]),
        qdd=x[QDD].copy(),
        forces=x[FORCES].copy(),
        status=sol.status,
        degraded=rolling is None,
        iterations=sol.iterations,
        cam=cam)
    return cmd, sol


class WholeBodyController:
    """Stateful 500 Hz controller: QP plus embedded-damping torque overlay."""

    def __init__(self, tree: RigidBodyTree, params: RobotParams,
                 config: WbcConfig | None = None):
        self.tree = tree
        self.params = params
        if config is None:
            config = WbcConfig(friction_coeff=params.friction_coeff,
                               joint_torque_limit=params.joint_torque_limit,
                               wheel_torque_limit=params.wheel_torque_limit)
        self.config = config
        self.clf = make_clf(params.cart_mass, params.wheel_pair_mass)
        self._velocity_target = np.zeros(4)
        self._warm: QpSolution | None = None

    def reset(self) -> None:
        self._velocity_target[:] = 0.0
        self._warm = None

    @property
    def velocity_target(self) -> np.ndarray:
        """Integrated hip/knee velocity target of the damping overlay."""
        return self._velocity_target.copy()

    def tick(self, q: np.ndarray, qd: np.ndarray, refs: WbcReferences,
             in_contact: bool = True) -> TorqueCommand:
        cfg = self.config
        dynamics = measure_dynamics(self.tree, q, qd)
        rolling = None
        clf_row = None
        if in_contact:
            rolling = rolling_constraint(self.tree, self.params, q, qd,
                                         kin=dynamics.kin)
        tasks, bal = build_tasks(self.tree, self.params, q, qd, refs, cfg,
                                 self.clf, dynamics, in_contact)
        if bal is not None:
            clf_row = balance_clf_row(self.clf, bal, refs.velocity,
                                      self.params)
        cam = spatial.centroidal_angular_momentum(self.tree, q, qd,
                                                  kin=dynamics.kin)
        cmd, self._warm = solve_wbc(tasks, dynamics, rolling, clf_row, cfg,
                                    cam=cam, warm_start=self._warm)
        if cmd.status == "infeasible":
            self.reset()
            tau_j = clip(-cfg.joint_damping * qd[list(HIP_KNEE_DOFS)],
                         cfg.joint_torque_limit)
            return replace(cmd, tau_j=tau_j, feedforward=np.zeros(NUM_ACT - 2))
        dofs = list(HIP_KNEE_DOFS)
        self._velocity_target = clip(
            self._velocity_target + cmd.qdd[dofs] * cfg.control_dt,
            cfg.velocity_clip)
        tau_j = cmd.tau_j + cfg.joint_damping * (self._velocity_target
                                                 - qd[dofs])
        tau_j = clip(tau_j, cfg.joint_torque_limit)
        return replace(cmd, tau_j=tau_j, feedforward=cmd.tau_j)
