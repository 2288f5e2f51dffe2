"""Reduced-order balance models: LIP, wheeled LIP, and wheeled pendulum.

The wheeled LIP keeps the upper body at constant height z with zero
centroidal angular momentum and adds the wheel reaction, giving a linear
system in the state (xdot_c, ddot_x, dx) with dx = x_c - x_w and wheel
torque input.  The wheeled inverted pendulum couples the CoM rigidly to the
axle at distance l and is nonlinear in the lean angle; its state is
(thetadot, xdot, theta, x) with theta measured from upright, positive
leaning forward, and positive torque driving the wheel forward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import GRAVITY


@dataclass(frozen=True)
class WlipParams:
    """Upper-body mass, wheel mass, wheel radius, and CoM height."""

    m_c: float
    m_w: float
    r_w: float
    z: float
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("m_c", "m_w", "r_w", "z", "g"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class WipParams:
    """Pendulum-on-wheel masses, inertias, CoM distance, and wheel radius."""

    m_c: float
    m_w: float
    l: float
    I_c: float
    I_w: float
    r_w: float
    g: float = GRAVITY

    def __post_init__(self):
        for name in ("m_c", "m_w", "l", "I_c", "I_w", "r_w", "g"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def lip_acceleration(x: float, x_0: float, z: float, g: float = GRAVITY) -> float:
    """CoM acceleration of the classic linear inverted pendulum."""
    if z <= 0.0:
        raise ValueError("z must be positive")
    return g / z * (x - x_0)


def wlip_matrices(params: WlipParams) -> tuple[np.ndarray, np.ndarray]:
    """State matrices (A, B) for the state (xdot_c, ddot_x, dx)."""
    m_c, m_w, z, g = params.m_c, params.m_w, params.z, params.g
    A = np.array([
        [0.0, 0.0, g / z],
        [0.0, 0.0, (1.0 + m_c / m_w) * g / z],
        [0.0, 1.0, 0.0],
    ])
    B = np.array([
        1.0 / (m_c * z),
        (1.0 / m_c + 1.0 / m_w) / z - 1.0 / (m_w * params.r_w),
        0.0,
    ])
    return A, B


def wlip_controllability(A: np.ndarray, B: np.ndarray) -> int:
    """Rank of the controllability matrix [B, AB, A^2 B]."""
    B = np.asarray(B, dtype=float).reshape(3)
    ctrb = np.column_stack([B, A @ B, A @ (A @ B)])
    return int(np.linalg.matrix_rank(ctrb))


def wip_mass_matrix(params: WipParams, theta: float) -> np.ndarray:
    p = params
    c = np.cos(theta)
    return np.array([
        [p.I_c + p.m_c * p.l ** 2, p.m_c * p.l * c],
        [p.m_c * p.l * p.r_w * c,
         (p.I_w + (p.m_c + p.m_w) * p.r_w ** 2) / p.r_w],
    ])


def _wip_forcing(params: WipParams, theta: float, theta_dot: float,
                 tau_w: float) -> np.ndarray:
    p = params
    s = np.sin(theta)
    return np.array([
        -tau_w + p.m_c * p.g * p.l * s,
        tau_w + p.m_c * p.l * p.r_w * s * theta_dot ** 2,
    ])


def wip_dynamics(params: WipParams, state: np.ndarray,
                 tau_w: float) -> np.ndarray:
    """State derivative for the state (thetadot, xdot, theta, x)."""
    theta_dot, x_dot, theta, _ = state
    M = wip_mass_matrix(params, theta)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise np.linalg.LinAlgError(
            f"wheeled-pendulum mass matrix is singular (cond={cond:.3e})")
    acc = np.linalg.solve(M, _wip_forcing(params, theta, theta_dot, tau_w))
    return np.array([acc[0], acc[1], theta_dot, x_dot])


def wip_energy(params: WipParams, state: np.ndarray) -> float:
    """Total energy; conserved under zero wheel torque."""
    p = params
    theta_dot, x_dot, theta, _ = state
    kinetic = (0.5 * (p.m_c + p.m_w + p.I_w / p.r_w ** 2) * x_dot ** 2
               + p.m_c * p.l * np.cos(theta) * theta_dot * x_dot
               + 0.5 * (p.I_c + p.m_c * p.l ** 2) * theta_dot ** 2)
    return kinetic + p.m_c * p.g * p.l * np.cos(theta)


def wip_dynamics_jacobian(
    params: WipParams, state: np.ndarray, tau_w: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic (d f/d state, d f/d tau) of :func:`wip_dynamics`."""
    p = params
    theta_dot, _, theta, _ = state
    s, c = np.sin(theta), np.cos(theta)
    M = wip_mass_matrix(params, theta)
    acc = np.linalg.solve(M, _wip_forcing(params, theta, theta_dot, tau_w))
    db_dtheta = np.array([p.m_c * p.g * p.l * c,
                          p.m_c * p.l * p.r_w * c * theta_dot ** 2])
    dM_dtheta = np.array([[0.0, -p.m_c * p.l * s],
                          [-p.m_c * p.l * p.r_w * s, 0.0]])
    dacc_dtheta = np.linalg.solve(M, db_dtheta - dM_dtheta @ acc)
    dacc_dthetadot = np.linalg.solve(
        M, np.array([0.0, 2.0 * p.m_c * p.l * p.r_w * s * theta_dot]))
    dacc_dtau = np.linalg.solve(M, np.array([-1.0, 1.0]))
    A = np.zeros((4, 4))
    A[0, 0], A[0, 2] = dacc_dthetadot[0], dacc_dtheta[0]
    A[1, 0], A[1, 2] = dacc_dthetadot[1], dacc_dtheta[1]
    A[2, 0] = 1.0
    A[3, 1] = 1.0
    B = np.array([dacc_dtau[0], dacc_dtau[1], 0.0, 0.0])
    return A, B


def wip_com_equivalents(delta_x: float, delta_x_dot: float,
                        z: float) -> tuple[float, float]:
    """Lean angle and rate equivalent to a wheeled-LIP offset state."""
    if z <= 0.0:
        raise ValueError("z must be positive")
    if abs(delta_x) >= z:
        raise ValueError("|delta_x| must be smaller than the height z")
    theta = np.arcsin(delta_x / np.hypot(delta_x, z))
    theta_dot = z * delta_x_dot / (z * z + delta_x * delta_x)
    return float(theta), float(theta_dot)
