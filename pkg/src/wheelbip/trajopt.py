"""Direct-transcription optimal control for the reduced balance models.

Poses the fixed-horizon braking problem: the model starts at a given CoM
velocity and must come to rest within the horizon under a symmetric wheel
torque budget.  Trapezoidal collocation over node states and node inputs
turns the problem into a sparse program with a quadratic cost; the wheeled
LIP has linear dynamics so its transcription is one convex QP, while the
wheeled inverted pendulum is solved by sequential quadratic programming
with an l1 merit line search, started from the wheeled-LIP solution mapped
through the lean-angle equivalence between the two models.  The study
helpers build the default comparison (both models braking from -2 m/s
under a 5 N*m limit) and its +-50% parameter sweep.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .qp import QpProblem, QpSolution, solve_qp
from .reduced import (
    WipParams,
    WlipParams,
    wip_com_equivalents,
    wip_dynamics,
    wip_dynamics_jacobian,
    wlip_matrices,
)

NUM_STATES = 4

STUDY_HORIZON = 1.5
STUDY_STEPS = 150
STUDY_TORQUE_LIMIT = 5.0
STUDY_START_VELOCITY = -2.0
STUDY_STATE_WEIGHT = np.diag([1e-2, 5.0, 0.0, 0.0])
STUDY_TERMINAL_WEIGHT = np.diag([10.0, 1.0, 10.0, 0.0])
STUDY_INPUT_WEIGHT = {"wLIP": 0.5, "WIP": 0.23}

_KKT_TOL = 1e-6
_QP_TOL = 1e-9
_QP_MAX_ITER = 40000


def wlip_ocp_state_matrices(params: WlipParams) -> tuple[np.ndarray, np.ndarray]:
    """Wheeled-LIP (A, B) for the braking state (ddx, xdot_c, dx, x_c)."""
    A3, B3 = wlip_matrices(params)
    A = np.zeros((4, 4))
    B = np.zeros(4)
    A[0, 2] = A3[1, 2]
    A[1, 2] = A3[0, 2]
    A[2, 0] = 1.0
    A[3, 1] = 1.0
    B[0] = B3[1]
    B[1] = B3[0]
    return A, B


@dataclass(frozen=True)
class OcpSpec:
    """Fixed-horizon optimal stopping problem for one reduced model.

    States are (thetadot, xdot_w, theta, x_w) for the wheeled pendulum and
    (ddx, xdot_c, dx, x_c) for the wheeled LIP; the single input is the
    wheel torque, box-bounded by ``torque_limit``.  ``terminal_rest``
    encodes the braking task's endpoint, "decelerate until zero within the
    horizon", as two equality rows pinning the velocity states (lean rate
    and translation rate) to zero at the final node; with it the CoM is
    exactly at rest at T and the terminal weight only shapes the end pose.
    """

    model: str
    params: WlipParams | WipParams
    horizon: float
    steps: int
    Q: np.ndarray
    R: float
    Q_e: np.ndarray
    torque_limit: float
    x0: np.ndarray
    terminal_rest: bool = False

    def __post_init__(self):
        if self.model not in ("wLIP", "WIP"):
            raise ValueError(f"model must be 'wLIP' or 'WIP', got {self.model!r}")
        expected = WlipParams if self.model == "wLIP" else WipParams
        if not isinstance(self.params, expected):
            raise ValueError(
                f"{self.model} spec needs {expected.__name__} parameters")
        if self.steps < 2:
            raise ValueError("steps must be at least 2")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.torque_limit <= 0.0:
            raise ValueError("torque_limit must be positive")
        if self.R < 0.0:
            raise ValueError("R must be nonnegative")
        for name in ("Q", "Q_e"):
            W = np.asarray(getattr(self, name), dtype=float).reshape(4, 4)
            if np.max(np.abs(W - W.T)) > 1e-10:
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(W)) < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, W)
        object.__setattr__(
            self, "x0", np.asarray(self.x0, dtype=float).reshape(NUM_STATES))

    @property
    def step_length(self) -> float:
        return self.horizon / self.steps


@dataclass(frozen=True)
class OcpSolution:
    """Solved trajectory on the collocation grid.

    ``iterations`` counts QP iterations for the wheeled LIP and SQP major
    iterations for the wheeled pendulum; ``kkt_residual`` is the max of the
    primal and dual residuals of the underlying stationarity system.
    """

    spec: OcpSpec
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    cost: float
    stopping_distance: float
    iterations: int
    kkt_residual: float
    status: str


@dataclass(frozen=True)
class Transcription:
    """Trapezoidal collocation of an OcpSpec.

    Decision vector z stacks the node states (N+1 blocks of 4) followed by
    the node inputs (N+1 scalars).  Dynamics enter as N four-row defect
    equalities d_k = x_{k+1} - x_k - h/2 (f_k + f_{k+1}); the cost is the
    trapezoidal quadrature of the running cost plus the terminal cost, an
    exact sparse quadratic in z for both models.
    """

    spec: OcpSpec
    times: np.ndarray
    cost_hessian: sparse.csr_matrix
    cost_gradient: np.ndarray
    initial_matrix: sparse.csr_matrix
    terminal_matrix: sparse.csr_matrix
    input_matrix: sparse.csr_matrix

    @property
    def n_var(self) -> int:
        return 5 * (self.spec.steps + 1)

    @property
    def input_offset(self) -> int:
        return NUM_STATES * (self.spec.steps + 1)

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decision vector -> (states (N+1)x4, inputs (N+1,))."""
        off = self.input_offset
        z = np.asarray(z, dtype=float).reshape(self.n_var)
        return z[:off].reshape(-1, NUM_STATES), z[off:]

    def join(self, states: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return np.concatenate([np.ravel(states), np.ravel(inputs)])

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ (self.cost_hessian @ z) + self.cost_gradient @ z)

    def defects(self, z: np.ndarray) -> np.ndarray:
        x, u = self.split(z)
        f = _node_dynamics(self.spec, x, u)
        h = self.spec.step_length
        return (x[1:] - x[:-1] - 0.5 * h * (f[:-1] + f[1:])).reshape(-1)

    def defect_jacobian(self, z: np.ndarray) -> sparse.csr_matrix:
        x, u = self.split(z)
        A, B = _node_jacobians(self.spec, x, u)
        N = self.spec.steps
        h = self.spec.step_length
        eye = np.eye(NUM_STATES)
        rows, cols, vals = [], [], []
        blk_r = np.repeat(np.arange(NUM_STATES), NUM_STATES)
        blk_c = np.tile(np.arange(NUM_STATES), NUM_STATES)
        for k in range(N):
            r0 = NUM_STATES * k
            left = -eye - 0.5 * h * A[k]
            right = eye - 0.5 * h * A[k + 1]
            rows.extend([r0 + blk_r, r0 + blk_r,
                         r0 + np.arange(NUM_STATES), r0 + np.arange(NUM_STATES)])
            cols.extend([r0 + blk_c, r0 + NUM_STATES + blk_c,
                         np.full(NUM_STATES, self.input_offset + k),
                         np.full(NUM_STATES, self.input_offset + k + 1)])
            vals.extend([left.ravel(), right.ravel(),
                         -0.5 * h * B[k], -0.5 * h * B[k + 1]])
        return sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(NUM_STATES * N, self.n_var)).tocsr()


def _node_dynamics(spec: OcpSpec, states: np.ndarray,
                   inputs: np.ndarray) -> np.ndarray:
    if spec.model == "wLIP":
        A, B = wlip_ocp_state_matrices(spec.params)
        return states @ A.T + np.outer(inputs, B)
    return np.array([wip_dynamics(spec.params, xk, uk)
                     for xk, uk in zip(states, inputs)])


def _node_jacobians(spec: OcpSpec, states: np.ndarray,
                    inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = states.shape[0]
    if spec.model == "wLIP":
        A, B = wlip_ocp_state_matrices(spec.params)
        return np.broadcast_to(A, (n, 4, 4)), np.broadcast_to(B, (n, 4))
    A = np.empty((n, 4, 4))
    B = np.empty((n, 4))
    for k in range(n):
        A[k], B[k] = wip_dynamics_jacobian(spec.params, states[k], inputs[k])
    return A, B


def transcribe(spec: OcpSpec) -> Transcription:
    """Build the trapezoidal collocation of the OCP."""
    N = spec.steps
    n_nodes = N + 1
    h = spec.step_length
    times = np.linspace(0.0, spec.horizon, n_nodes)
    w = np.full(n_nodes, h)
    w[0] = w[-1] = 0.5 * h
    blocks = [2.0 * w[k] * spec.Q + (2.0 * spec.Q_e if k == N else 0.0)
              for k in range(n_nodes)]
    blocks.append(sparse.diags(2.0 * w * spec.R))
    H = sparse.block_diag(blocks, format="csr")
    n_var = 5 * n_nodes
    init = sparse.eye(NUM_STATES, n_var, format="csr")
    inp = sparse.eye(n_nodes, n_var, k=NUM_STATES * n_nodes, format="csr")
    n_rest = 2 if spec.terminal_rest else 0
    term = sparse.eye(n_rest, n_var, k=NUM_STATES * N, format="csr")
    return Transcription(spec=spec, times=times, cost_hessian=H,
                         cost_gradient=np.zeros(n_var), initial_matrix=init,
                         terminal_matrix=term, input_matrix=inp)


def _com_velocity(spec: OcpSpec, states: np.ndarray) -> np.ndarray:
    if spec.model == "wLIP":
        return states[:, 1]
    l = spec.params.l
    return states[:, 1] + l * np.cos(states[:, 2]) * states[:, 0]


def com_velocity(sol: OcpSolution) -> np.ndarray:
    """CoM horizontal velocity at each node (wheel + lean contribution)."""
    return _com_velocity(sol.spec, sol.states)


def stopping_distance(sol: OcpSolution) -> float:
    """Net CoM travel: trapezoidal quadrature of the CoM velocity.

    For the wheeled LIP this equals |x_c(T) - x_c(0)| to solver precision
    because the position defect rows are the same trapezoid rule; for the
    wheeled pendulum it converts wheel travel to CoM travel through the
    lean-angle kinematics.
    """
    return float(abs(np.trapezoid(com_velocity(sol), sol.times)))


def saturation_times(sol: OcpSolution, tol: float = 1e-6) -> np.ndarray:
    """Node times at which the input sits on the torque bound."""
    limit = sol.spec.torque_limit
    return sol.times[np.abs(sol.inputs) >= limit - tol]


def saturates_by(sol: OcpSolution, deadline: float = 0.1,
                 tol: float = 1e-6) -> bool:
    """True if the input reaches the torque bound at or before ``deadline``."""
    hits = saturation_times(sol, tol)
    return hits.size > 0 and bool(hits[0] <= deadline + 1e-12)


def final_com_speed(sol: OcpSolution) -> float:
    return float(abs(com_velocity(sol)[-1]))


def _qp_data(tr: Transcription):
    spec = tr.spec
    N = spec.steps
    lb = np.full(N + 1, -spec.torque_limit)
    ub = np.full(N + 1, spec.torque_limit)
    return spec, lb, ub


def _solve_wlip(tr: Transcription,
                initial_guess: np.ndarray | None) -> tuple[np.ndarray, QpSolution]:
    spec, lb, ub = _qp_data(tr)
    D = tr.defect_jacobian(np.zeros(tr.n_var))
    A_eq = sparse.vstack([tr.initial_matrix, D, tr.terminal_matrix],
                         format="csr")
    b_eq = np.concatenate([spec.x0,
                           np.zeros(D.shape[0] + tr.terminal_matrix.shape[0])])
    prob = QpProblem(H=tr.cost_hessian, g=tr.cost_gradient, A_eq=A_eq,
                     b_eq=b_eq, A_in=tr.input_matrix, lb=lb, ub=ub)
    warm = None
    if initial_guess is not None:
        warm = (np.asarray(initial_guess, dtype=float).reshape(tr.n_var),
                np.zeros(A_eq.shape[0] + tr.input_matrix.shape[0]))
    qp = solve_qp(prob, tol_abs=_QP_TOL, tol_rel=_QP_TOL,
                  max_iter=_QP_MAX_ITER, warm_start=warm)
    if qp.status != "solved":
        warnings.warn(f"wheeled-LIP QP ended with status {qp.status}")
    return qp.x, qp


def _wip_initial_guess(tr: Transcription) -> np.ndarray:
    """Map the companion wheeled-LIP solution into pendulum coordinates."""
    spec = tr.spec
    p = spec.params
    z = p.l
    theta0, thetadot0 = spec.x0[2], spec.x0[0]
    dx0 = z * np.sin(theta0)
    ddx0 = z * np.cos(theta0) * thetadot0
    companion = OcpSpec(
        model="wLIP",
        params=WlipParams(m_c=p.m_c, m_w=p.m_w, r_w=p.r_w, z=z, g=p.g),
        horizon=spec.horizon, steps=spec.steps, Q=spec.Q, R=spec.R,
        Q_e=spec.Q_e, torque_limit=spec.torque_limit,
        x0=np.array([ddx0, spec.x0[1] + ddx0, dx0, spec.x0[3] + dx0]),
        terminal_rest=spec.terminal_rest)
    tr_c = transcribe(companion)
    z_c, _ = _solve_wlip(tr_c, None)
    states, inputs = tr_c.split(z_c)
    guess = np.empty_like(states)
    for k, xk in enumerate(states):
        ddx, xdot_c, dx, x_c = xk
        dx = float(np.clip(dx, -0.9 * z, 0.9 * z))
        theta, thetadot = wip_com_equivalents(dx, ddx, z)
        guess[k] = (thetadot, xdot_c - ddx, theta, x_c - dx)
    return tr.join(guess, inputs)


def _nlp_kkt_residual(tr: Transcription, z: np.ndarray,
                      y: np.ndarray) -> float:
    defects = tr.defects(z)
    A = sparse.vstack([tr.initial_matrix, tr.defect_jacobian(z),
                       tr.terminal_matrix, tr.input_matrix], format="csr")
    stat = tr.cost_hessian @ z + tr.cost_gradient + A.T @ y
    init_res = tr.initial_matrix @ z - tr.spec.x0
    primal = [np.max(np.abs(defects)), np.max(np.abs(init_res))]
    if tr.terminal_matrix.shape[0]:
        primal.append(np.max(np.abs(tr.terminal_matrix @ z)))
    return float(max(np.max(np.abs(stat)), *primal))


def _solve_wip(tr: Transcription, initial_guess: np.ndarray | None,
               max_iterations: int) -> tuple[np.ndarray, int, float, str]:
    spec, lb, ub = _qp_data(tr)
    if initial_guess is None:
        z = _wip_initial_guess(tr)
    else:
        z = np.asarray(initial_guess, dtype=float).reshape(tr.n_var).copy()
    states, inputs = tr.split(z)
    states[0] = spec.x0
    z = tr.join(states, np.clip(inputs, lb, ub))

    nu = 1.0
    warm = None
    best = (np.inf, z, 0)
    for it in range(1, max_iterations + 1):
        d = tr.defects(z)
        J = tr.defect_jacobian(z)
        A_eq = sparse.vstack([tr.initial_matrix, J, tr.terminal_matrix],
                             format="csr")
        b_eq = np.concatenate([spec.x0, J @ z - d,
                               np.zeros(tr.terminal_matrix.shape[0])])
        prob = QpProblem(H=tr.cost_hessian, g=tr.cost_gradient, A_eq=A_eq,
                         b_eq=b_eq, A_in=tr.input_matrix, lb=lb, ub=ub)
        qp = solve_qp(prob, tol_abs=_QP_TOL, tol_rel=_QP_TOL,
                      max_iter=_QP_MAX_ITER, warm_start=warm)
        warm = qp
        # Convergence is judged at the current iterate with the fresh
        # multiplier estimate before any step is taken: near the solution
        # the l1 merit can reject every step length (the defects sit at the
        # QP solver's noise floor) even though the iterate already satisfies
        # the optimality system.
        kkt = _nlp_kkt_residual(tr, z, qp.y)
        if kkt < best[0]:
            best = (kkt, z.copy(), it)
        if kkt < _KKT_TOL:
            return z, it, kkt, "solved"

        delta = qp.x - z
        n_eq = A_eq.shape[0]
        nu = max(nu, 2.0 * float(np.max(np.abs(qp.y[:n_eq]))), 1.0)
        if float(np.max(np.abs(delta))) <= 1e-13:
            break

        def merit(v: np.ndarray) -> float:
            infeas = float(np.sum(np.abs(tr.defects(v))))
            if tr.terminal_matrix.shape[0]:
                infeas += float(np.sum(np.abs(tr.terminal_matrix @ v)))
            return tr.objective(v) + nu * infeas

        phi0 = merit(z)
        slope = (float((tr.cost_hessian @ z + tr.cost_gradient) @ delta)
                 - (phi0 - tr.objective(z)))
        t = 1.0
        accepted = False
        while t >= 2.0 ** -30:
            zt = z + t * delta
            if merit(zt) <= phi0 + 1e-4 * t * min(slope, 0.0):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        z = zt
    warnings.warn(
        "SQP stopped before reaching the optimality tolerance; returning "
        f"the best iterate (KKT residual {best[0]:.3e})")
    return best[1], it, best[0], "max-iter"


def solve_ocp(spec: OcpSpec, initial_guess: np.ndarray | None = None,
              max_iterations: int = 50) -> OcpSolution:
    """Solve the transcribed OCP.

    The wheeled LIP solves as a single convex QP; the wheeled pendulum runs
    SQP (linearized defects, exact quadratic cost, l1 merit line search)
    until the KKT residual drops below 1e-6.  Hitting ``max_iterations``
    returns the best iterate with a warning and status "max-iter".
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    tr = transcribe(spec)
    if spec.model == "wLIP":
        z, qp = _solve_wlip(tr, initial_guess)
        iterations = qp.iterations
        kkt = max(qp.primal_residual, qp.dual_residual)
        status = "solved" if qp.status == "solved" else "max-iter"
    else:
        z, iterations, kkt, status = _solve_wip(tr, initial_guess,
                                                max_iterations)
    states, inputs = tr.split(z)
    stop = float(abs(np.trapezoid(_com_velocity(spec, states), tr.times)))
    return OcpSolution(spec=spec, times=tr.times, states=states,
                       inputs=inputs, cost=tr.objective(z),
                       stopping_distance=stop, iterations=iterations,
                       kkt_residual=kkt, status=status)


def study_parameters(mass_scale: float = 1.0, wheel_mass_scale: float = 1.0,
                     height_scale: float = 1.0) -> tuple[WlipParams, WipParams]:
    """Shared model parameters of the braking comparison, optionally scaled.

    Defaults: cart 10 kg, wheel pair 2 kg, wheel radius 0.1 m, CoM height
    0.35 m; pendulum inertia m l^2 / 3 about the axle, wheel inertia of a
    solid disc.  The scales multiply cart mass, wheel mass, and height.
    """
    for name, s in (("mass_scale", mass_scale),
                    ("wheel_mass_scale", wheel_mass_scale),
                    ("height_scale", height_scale)):
        if s <= 0.0:
            raise ValueError(f"{name} must be positive")
    m_c = 10.0 * mass_scale
    m_w = 2.0 * wheel_mass_scale
    r_w = 0.1
    z = 0.35 * height_scale
    wlip = WlipParams(m_c=m_c, m_w=m_w, r_w=r_w, z=z)
    wip = WipParams(m_c=m_c, m_w=m_w, l=z, I_c=m_c * z ** 2 / 3.0,
                    I_w=0.5 * m_w * r_w ** 2, r_w=r_w)
    return wlip, wip


def study_spec(model: str, mass_scale: float = 1.0,
               wheel_mass_scale: float = 1.0, height_scale: float = 1.0,
               steps: int = STUDY_STEPS) -> OcpSpec:
    """OcpSpec of the braking study for one model."""
    wlip, wip = study_parameters(mass_scale, wheel_mass_scale, height_scale)
    if model not in STUDY_INPUT_WEIGHT:
        raise ValueError(f"model must be 'wLIP' or 'WIP', got {model!r}")
    return OcpSpec(model=model, params=wlip if model == "wLIP" else wip,
                   horizon=STUDY_HORIZON, steps=steps, Q=STUDY_STATE_WEIGHT,
                   R=STUDY_INPUT_WEIGHT[model], Q_e=STUDY_TERMINAL_WEIGHT,
                   torque_limit=STUDY_TORQUE_LIMIT,
                   x0=np.array([0.0, STUDY_START_VELOCITY, 0.0, 0.0]),
                   terminal_rest=True)


@dataclass(frozen=True)
class StudyResult:
    """Both models' solutions at one parameter point of the braking study."""

    mass_scale: float
    wheel_mass_scale: float
    height_scale: float
    wlip: OcpSolution
    wip: OcpSolution


def run_study(mass_scale: float = 1.0, wheel_mass_scale: float = 1.0,
              height_scale: float = 1.0, steps: int = STUDY_STEPS) -> StudyResult:
    """Solve the braking study for both models at one parameter point."""
    sols = {}
    for model in ("wLIP", "WIP"):
        spec = study_spec(model, mass_scale, wheel_mass_scale, height_scale,
                          steps)
        sols[model] = solve_ocp(spec)
    return StudyResult(mass_scale=mass_scale, wheel_mass_scale=wheel_mass_scale,
                       height_scale=height_scale, wlip=sols["wLIP"],
                       wip=sols["WIP"])


def sweep_study(levels: tuple[float, ...] = (0.5, 1.0, 1.5),
                steps: int = STUDY_STEPS) -> list[StudyResult]:
    """Run the study over the full grid of scale triples (27 points default)."""
    return [run_study(ms, ws, hs, steps)
            for ms, ws, hs in itertools.product(levels, levels, levels)]


def study_summary(result: StudyResult) -> dict[str, float | str]:
    """Flat metrics row for one study point (for CSV emission)."""
    row: dict[str, float | str] = {
        "mass_scale": result.mass_scale,
        "wheel_mass_scale": result.wheel_mass_scale,
        "height_scale": result.height_scale,
    }
    for name, sol in (("wlip", result.wlip), ("wip", result.wip)):
        hits = saturation_times(sol)
        row[f"{name}_cost"] = sol.cost
        row[f"{name}_stopping_distance"] = sol.stopping_distance
        row[f"{name}_final_speed"] = final_com_speed(sol)
        row[f"{name}_saturation_onset"] = (float(hits[0]) if hits.size
                                           else np.inf)
        row[f"{name}_saturation_end"] = (float(hits[-1]) if hits.size
                                         else -np.inf)
        row[f"{name}_iterations"] = sol.iterations
        row[f"{name}_kkt_residual"] = sol.kkt_residual
        row[f"{name}_status"] = sol.status
    return row
