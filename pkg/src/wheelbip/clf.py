"""Riccati-based control Lyapunov function for the wheeled-LIP error system.

The balance error state is x̄ = (xdot_c^d - xdot_c, -ddot_x/z, -dx/z); the
1/z scaling makes the error dynamics matrix independent of height, so one
CARE solution covers every posture.  V(x̄) = x̄ᵀPx̄ decreases at rate
γ = λ_min(Q)/λ_max(P) whenever the decrease constraint holds with zero
slack, and the LQR input keeps that constraint feasible for every state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .spatial import GRAVITY

DEFAULT_Q = np.diag([10.0, 1.0, 1.0])
DEFAULT_R = 1e-3


def error_system(m_c: float, m_w: float,
                 g: float = GRAVITY) -> tuple[np.ndarray, np.ndarray]:
    """Height-independent error dynamics (Abar, Bbar) of the balance state."""
    A = np.array([
        [0.0, 0.0, g],
        [0.0, 0.0, (1.0 + m_c / m_w) * g],
        [0.0, 1.0, 0.0],
    ])
    return A, np.array([0.0, -1.0, 0.0])


def error_state(xdot_c_desired: float, xdot_c: float, delta_x_dot: float,
                delta_x: float, z: float) -> np.ndarray:
    if z <= 0.0:
        raise ValueError("z must be positive")
    return np.array([xdot_c_desired - xdot_c, -delta_x_dot / z, -delta_x / z])


def care_residual(A: np.ndarray, B: np.ndarray, Q: np.ndarray,
                  R: np.ndarray, P: np.ndarray) -> float:
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.shape[0] == 1 and A.shape[0] > 1:
        B = B.T
    R = np.atleast_2d(np.asarray(R, dtype=float))
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res, "fro"))


def solve_care(A: np.ndarray, B: np.ndarray, Q: np.ndarray,
               R: np.ndarray | float) -> np.ndarray:
    """Stabilizing CARE solution AᵀP + PA - PBR⁻¹BᵀP + Q = 0.

    Solved from the stable invariant subspace of the Hamiltonian matrix
    (ordered real Schur form) with one Newton step to polish the residual.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.any(np.linalg.eigvalsh(0.5 * (R + R.T)) <= 0.0):
        raise ValueError("R must be positive definite")
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise np.linalg.LinAlgError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}; "
            "the pair (A, B) is not stabilizable with this Q, R")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    P = np.linalg.solve(U1.T, U2.T).T
    P = 0.5 * (P + P.T)
    # One Newton step: solve the closed-loop Lyapunov equation for the
    # residual correction, which squares the attained accuracy.
    K = np.linalg.solve(R, B.T @ P)
    A_cl = A - B @ K
    res = A.T @ P + P @ A - P @ G @ P + Q
    P = P + linalg.solve_continuous_lyapunov(A_cl.T, -res)
    P = 0.5 * (P + P.T)
    resid = care_residual(A, B, Q, R, P)
    if resid > 1e-8:
        raise np.linalg.LinAlgError(
            f"CARE residual {resid:.3e} exceeds 1e-8 after refinement")
    return P


@dataclass(frozen=True)
class ClfData:
    """CARE solution and derived constants for one weight choice."""

    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: float
    gain: np.ndarray = field(init=False)        # LQR row R⁻¹BᵀP
    lambda_min_q: float = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gain", (self.B @ self.P) / self.R)
        lam_q = float(np.min(np.linalg.eigvalsh(self.Q)))
        lam_p = float(np.max(np.linalg.eigvalsh(self.P)))
        object.__setattr__(self, "lambda_min_q", lam_q)
        object.__setattr__(self, "gamma", lam_q / lam_p)

    def value(self, xbar: np.ndarray) -> float:
        return float(xbar @ self.P @ xbar)

    def lqr_input(self, xbar: np.ndarray) -> float:
        return float(-self.gain @ xbar)


def make_clf(m_c: float, m_w: float, Q: np.ndarray | None = None,
             R: float = DEFAULT_R, g: float = GRAVITY) -> ClfData:
    A, B = error_system(m_c, m_w, g)
    Q = DEFAULT_Q if Q is None else np.asarray(Q, dtype=float)
    P = solve_care(A, B, Q, float(R))
    return ClfData(A=A, B=B, P=P, Q=Q, R=float(R))


def clf_constraint(clf: ClfData, xbar: np.ndarray, ubar: float,
                   s: float) -> tuple[float, float]:
    """Decrease inequality as (lhs, rhs): Vdot ≤ -λ_min(Q)‖x̄‖² + s."""
    P2 = clf.P + clf.P.T
    lhs = float(xbar @ P2 @ (clf.A @ xbar + clf.B * ubar))
    rhs = float(-clf.lambda_min_q * (xbar @ xbar) + s)
    return lhs, rhs


def clf_constraint_row(clf: ClfData,
                       xbar: np.ndarray) -> tuple[float, float]:
    """Coefficients (a_u, limit) with the inequality a_u·ū - s ≤ limit."""
    P2 = clf.P + clf.P.T
    a_u = float(xbar @ P2 @ clf.B)
    limit = float(-clf.lambda_min_q * (xbar @ xbar) - xbar @ P2 @ clf.A @ xbar)
    return a_u, limit


def wlip_balance_target(clf: ClfData, xbar: np.ndarray, z: float, m_c: float,
                        m_w: float, g: float = GRAVITY,
                        ubar: float | None = None) -> float:
    """Desired relative CoM acceleration realizing the virtual input.

    The third error coordinate is -dx/z, so the current offset is recovered
    as dx = -z·x̄[2]; ``ubar`` defaults to the LQR input.
    """
    if z <= 0.0:
        raise ValueError("z must be positive")
    if ubar is None:
        ubar = clf.lqr_input(xbar)
    delta_x = -z * xbar[2]
    return (1.0 + m_c / m_w) * (g / z) * delta_x + z * ubar
