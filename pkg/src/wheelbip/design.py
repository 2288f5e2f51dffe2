"""Static leg design: torque maps, moment-arm split, link-length search,
and the closed-form pelvis inverse kinematics.

Angles are absolute pitch angles from the vertical in the sagittal plane:
theta_P tilts the trunk CoM forward of the hip, theta_H the knee forward of
the hip, theta_K the axle forward of the knee.  Heights are hip height above
the axle.  The leg posture for a commanded height keeps the shank
counter-leaned against the thigh (2 l_k s_K + beta l_h s_H = 0) so the wheel
stays under the weighted CoM, and the pelvis angle absorbs the remaining
offset until the pelvis link runs out of travel at low heights, where a
small CoM placement violation appears.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import GRAVITY


class InfeasibleHeightError(ValueError):
    """Commanded height is outside the closed-form reachable band."""


@dataclass(frozen=True)
class DesignParams:
    """Thigh-side and base masses plus the hip moment-arm fraction."""

    m: float = 4.2
    M: float = 5.8
    alpha: float = 0.64    # L_1 / L_H
    g: float = GRAVITY

    @property
    def beta(self) -> float:
        return (self.alpha * self.M + self.m) / (self.M + self.m)


@dataclass(frozen=True)
class LegLengths:
    """Pelvis, thigh, and shank link lengths (the 3:5:4 preset)."""

    l_p: float = 0.15
    l_h: float = 0.25
    l_k: float = 0.20

    def __post_init__(self):
        if min(self.l_p, self.l_h, self.l_k) <= 0.0:
            raise ValueError("link lengths must be positive")


@dataclass(frozen=True)
class IkSolution:
    theta_p: float
    theta_h: float
    theta_k: float
    z_kh: float
    beta: float
    pelvis_saturated: bool


def solve_moment_arms(m: float, M: float,
                      ratio_ndigits: int | None = 2) -> tuple[float, float]:
    """Split the hip/knee moment arms so both joints carry equal load.

    Solves (L2 - L1)/L_H = m/M with L1 + L2 = 2 L_H.  The published split
    (0.64, 1.36) comes from rounding the mass ratio to two digits before
    solving, which ``ratio_ndigits`` reproduces; pass None for the exact
    ratio.
    """
    if m < 0.0 or M <= 0.0:
        raise ValueError("masses must satisfy m >= 0 and M > 0")
    ratio = m / M
    if ratio_ndigits is not None:
        ratio = round(ratio, ratio_ndigits)
    return 1.0 - 0.5 * ratio, 1.0 + 0.5 * ratio


def static_joint_torques(q: np.ndarray, lengths: LegLengths,
                         G: float) -> np.ndarray:
    """Printed static torque map evaluated verbatim.

    Note the map is not the transpose of any leg Jacobian (its hip row
    reduces to l_k c_K G); :func:`leg_gravity_torques` is the physically
    consistent variant used by the design cost.
    """
    _, theta_h, theta_k = q
    s_h = np.sin(theta_h)
    s_k, c_k = np.sin(theta_k), np.cos(theta_k)
    l_h, l_k = lengths.l_h, lengths.l_k
    mat = np.array([
        [l_h * s_h + l_k * c_k, l_k * c_k],
        [-l_h * s_h - l_k * s_k, -l_k * s_k],
    ])
    return mat @ np.array([0.0, G])


def leg_gravity_torques(theta_h: float, theta_k: float, lengths: LegLengths,
                        G: float) -> np.ndarray:
    """Hip and knee torques holding a vertical load G at the axle.

    Jacobian-transpose map in relative joint coordinates (hip absolute,
    knee relative), which is what the actuators see.
    """
    s_h, s_k = np.sin(theta_h), np.sin(theta_k)
    return np.array([
        (lengths.l_h * s_h + lengths.l_k * s_k) * G,
        lengths.l_k * s_k * G,
    ])


_PELVIS_SOFT_LIMIT = 0.9


def _soft_saturate(s: float, s0: float = _PELVIS_SOFT_LIMIT) -> float:
    """Exact below s0, then approaches 1 asymptotically with matched slope.

    A hard clamp on the pelvis sine would make the pelvis angle command
    locally non-Lipschitz in height (arcsin has infinite slope at 1); the
    C1 blend keeps the commanded rate bounded below 10 rad/m.
    """
    if s <= s0:
        return s
    return 1.0 - (1.0 - s0) * np.exp(-(s - s0) / (1.0 - s0))


def pelvis_ik(z_d: float, lengths: LegLengths | None = None,
              params: DesignParams | None = None) -> IkSolution:
    """Closed-form leg posture for a commanded hip height above the axle.

    The thigh-height root z_KH solves the circle intersection of the height
    constraint l_k c_K + l_h c_H = z_d with the counter-lean constraint
    2 l_k s_K + beta l_h s_H = 0; the pelvis angle then places the trunk CoM
    with sin(theta_P) = (2 - alpha) l_h s_H / (2 l_p), saturating smoothly
    as the pelvis link nears horizontal at low heights.
    """
    lengths = lengths or LegLengths()
    params = params or DesignParams()
    l_p, l_h, l_k = lengths.l_p, lengths.l_h, lengths.l_k
    beta = params.beta
    b2 = beta * beta
    disc = 16.0 * z_d * z_d - (4.0 - b2) * (
        4.0 * z_d * z_d + b2 * l_h * l_h - 4.0 * l_k * l_k)
    if disc < 0.0:
        raise InfeasibleHeightError(
            f"z_d = {z_d:.4f} m: thigh-height discriminant is negative")
    z_kh = (4.0 * z_d - np.sqrt(disc)) / (4.0 - b2)
    c_h = z_kh / l_h
    if not -1.0 <= c_h <= 1.0:
        raise InfeasibleHeightError(
            f"z_d = {z_d:.4f} m: cos(theta_H) = {c_h:.4f} outside [-1, 1]")
    theta_h = np.arccos(c_h)
    s_h = np.sin(theta_h)
    s_k = -beta * l_h * s_h / (2.0 * l_k)
    c_k = (z_d - z_kh) / l_k
    if abs(s_k) > 1.0 + 1e-12 or abs(c_k) > 1.0 + 1e-12:
        raise InfeasibleHeightError(
            f"z_d = {z_d:.4f} m: shank angle has no real solution")
    theta_k = np.arctan2(s_k, c_k)
    s_p = (2.0 - params.alpha) * l_h * s_h / (2.0 * l_p)
    saturated = s_p > _PELVIS_SOFT_LIMIT
    theta_p = np.arcsin(_soft_saturate(s_p))
    return IkSolution(theta_p=float(theta_p), theta_h=float(theta_h),
                      theta_k=float(theta_k), z_kh=float(z_kh), beta=beta,
                      pelvis_saturated=bool(saturated))


def leg_joint_positions(ik: IkSolution, lengths: LegLengths) -> dict[str, np.ndarray]:
    """Sagittal (x, z) of hip, knee, and axle with the trunk CoM at origin."""
    hip = np.array([-lengths.l_p * np.sin(ik.theta_p),
                    -lengths.l_p * np.cos(ik.theta_p)])
    knee = hip + np.array([lengths.l_h * np.sin(ik.theta_h),
                           -lengths.l_h * np.cos(ik.theta_h)])
    axle = knee + np.array([lengths.l_k * np.sin(ik.theta_k),
                            -lengths.l_k * np.cos(ik.theta_k)])
    return {"hip": hip, "knee": knee, "axle": axle}


def com_placement_violation(ik: IkSolution, lengths: LegLengths,
                            params: DesignParams | None = None) -> float:
    """Horizontal gap between the axle and the weighted whole-body CoM."""
    params = params or DesignParams()
    pos = leg_joint_positions(ik, lengths)
    com_x = params.m * (pos["hip"][0] + pos["knee"][0]) / (
        2.0 * (params.m + params.M))
    return float(abs(pos["axle"][0] - com_x))


def leg_workspace_reach(lengths: LegLengths, h_min: float,
                        n_grid: int = 361) -> float:
    """Squared forward reach of the axle at the lowest height.

    Maximizes |axle_x|² from the hip over leg postures that keep the axle
    at depth h_min, the collision-avoidance sub-objective of the design
    search.
    """
    l_h, l_k = lengths.l_h, lengths.l_k
    theta_h = np.linspace(0.0, 0.5 * np.pi, n_grid)
    c_k = (h_min - l_h * np.cos(theta_h)) / l_k
    ok = np.abs(c_k) <= 1.0
    if not ok.any():
        return 0.0
    x = l_h * np.sin(theta_h[ok]) + l_k * np.sqrt(1.0 - c_k[ok] ** 2)
    return float(np.max(x * x))


@dataclass(frozen=True)
class DesignRecord:
    l_p: float
    l_h: float
    l_k: float
    cost: float
    workspace: float
    feasible: bool
    reason: str = ""


def design_nlp_grid(
    l_p_values,
    l_h_values,
    l_k_values,
    h_min: float,
    h_max: float,
    W: np.ndarray | None = None,
    params: DesignParams | None = None,
    n_heights: int = 25,
) -> tuple[list[DesignRecord], DesignRecord]:
    """Exhaustive search over link-length triples.

    For each triple the static torque cost tau' W tau is integrated over the
    height band at the closed-form postures; triples that cannot reach the
    whole band are excluded with the failing height's reason.  Returns all
    records and the cheapest feasible one.
    """
    if h_min <= 0.0 or h_max <= h_min:
        raise ValueError("need 0 < h_min < h_max")
    W = np.eye(2) if W is None else np.asarray(W, dtype=float)
    params = params or DesignParams()
    G = (params.m + params.M) * params.g
    heights = np.linspace(h_min, h_max, n_heights)
    records: list[DesignRecord] = []
    for l_p in l_p_values:
        for l_h in l_h_values:
            for l_k in l_k_values:
                try:
                    lengths = LegLengths(l_p, l_h, l_k)
                    density = np.empty(n_heights)
                    for i, h in enumerate(heights):
                        ik = pelvis_ik(h, lengths, params)
                        tau = leg_gravity_torques(ik.theta_h, ik.theta_k,
                                                  lengths, G)
                        density[i] = tau @ W @ tau
                    cost = float(np.trapezoid(density, heights))
                    records.append(DesignRecord(
                        l_p, l_h, l_k, cost,
                        leg_workspace_reach(lengths, h_min), True))
                except (InfeasibleHeightError, ValueError) as exc:
                    records.append(DesignRecord(
                        l_p, l_h, l_k, np.nan, np.nan, False, str(exc)))
    feasible = [r for r in records if r.feasible]
    if not feasible:
        raise InfeasibleHeightError(
            "no link-length triple can reach the requested height band")
    best = min(feasible, key=lambda r: r.cost)
    return records, best
