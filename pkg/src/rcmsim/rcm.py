"""Remote-center-of-motion constraint kinematics in the tool-reference frame.

The pivot residual is the trocar-to-reference vector expressed in the tool
reference frame (3D), or its projection onto the frame's lateral plane (2D,
first two frame axes). All rates treat the trocar point as time varying, so a
moving trocar makes the constraint rheonomic: the residual rate and the
acceleration bias ``b_c`` carry the trocar velocity/acceleration terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InconsistentTool, InvalidAlpha
from .numerics import skew
from .robot import JointState, KinFrames, Pose, RobotModel, kinematics


def _skew(v):
    # hot-path variant of numerics.skew without input validation
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


class RcmMode(Enum):
    THREE_D = 3
    TWO_D = 2

    @property
    def k(self) -> int:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "RcmMode":
        key = text.strip().lower()
        if key in ("3d", "three_d", "3"):
            return cls.THREE_D
        if key in ("2d", "two_d", "2"):
            return cls.TWO_D
        raise ValueError(f"unknown RCM mode {text!r}")


@dataclass
class TrocarState:
    """Trocar point and its known motion, base frame [m, m/s, m/s^2]."""

    p: np.ndarray
    pdot: np.ndarray
    pddot: np.ndarray

    @classmethod
    def static(cls, p: np.ndarray) -> "TrocarState":
        return cls(np.asarray(p, dtype=float), np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class RcmGeometry:
    """Relative vectors used by the residual formulas (base frame)."""

    p_cr: np.ndarray  # p_r - p_c
    p_rt: np.ndarray  # p_t - p_r
    p_rc: np.ndarray  # p_c - p_r
    B_r: np.ndarray  # 3x2 lateral-plane basis (first two columns of R_r)


@dataclass(frozen=True)
class ConstraintState:
    """RCM constraint quantities at one instant (k = 2 or 3 rows).

    xddot = J qddot + b holds exactly along any motion, so b is the full
    acceleration-level bias including the rheonomic (trocar-motion) terms.
    """

    x: np.ndarray
    J: np.ndarray
    J_dot: np.ndarray
    xdot: np.ndarray
    b: np.ndarray
    mode: RcmMode


def rcm_geometry(pose_r: Pose, p_t: np.ndarray, p_c: np.ndarray) -> RcmGeometry:
    p_cr = pose_r.p - p_c
    return RcmGeometry(
        p_cr=p_cr, p_rt=p_t - pose_r.p, p_rc=-p_cr, B_r=pose_r.R[:, :2].copy()
    )


def place_trocar(p_r0: np.ndarray, p_t0: np.ndarray, alpha: float) -> np.ndarray:
    """Trocar point on the initial tool axis: p_c = p_r0 + alpha (p_t0 - p_r0)."""
    if not 0.0 < alpha <= 1.0:
        raise InvalidAlpha(f"alpha must be in (0, 1], got {alpha}")
    p_r0 = np.asarray(p_r0, dtype=float)
    p_t0 = np.asarray(p_t0, dtype=float)
    return p_r0 + alpha * (p_t0 - p_r0)


def _basis_t(pose_r: Pose, mode: RcmMode) -> np.ndarray:
    """Rows that project a base-frame vector into the residual coordinates."""
    if mode is RcmMode.THREE_D:
        return pose_r.R.T
    return pose_r.R[:, :2].T


def residual(pose_r: Pose, p_c: np.ndarray, mode: RcmMode = RcmMode.THREE_D) -> np.ndarray:
    """Pivot residual: (p_r - p_c) expressed in the reference frame, or its
    lateral-plane projection in 2D mode."""
    return _basis_t(pose_r, mode) @ (pose_r.p - np.asarray(p_c, dtype=float))


def residual_jacobian(
    pose_r: Pose, J_r: np.ndarray, p_c: np.ndarray, mode: RcmMode = RcmMode.THREE_D
) -> np.ndarray:
    """Constraint Jacobian: trocar-point translational Jacobian rotated into
    the residual coordinates.

    J_pc = J_pr + skew(p_cr) J_wr, premultiplied by R_r^T (3D) or the lateral
    basis transpose (2D). The sign of the skew term is fixed by the rate
    identity d/dt[B^T p_cr] = J_c qdot - B^T pdot_c, which the
    finite-difference oracle tests pin down.
    """
    p_cr = pose_r.p - np.asarray(p_c, dtype=float)
    J_pc = J_r[:3] + _skew(p_cr) @ J_r[3:]
    return _basis_t(pose_r, mode) @ J_pc


def residual_rate(
    pose_r: Pose,
    J_r: np.ndarray,
    qdot: np.ndarray,
    trocar: TrocarState,
    mode: RcmMode = RcmMode.THREE_D,
) -> np.ndarray:
    """xdot = J_c qdot - B^T pdot_c (B the 3D or 2D residual basis)."""
    J_c = residual_jacobian(pose_r, J_r, trocar.p, mode)
    return J_c @ np.asarray(qdot, dtype=float) - _basis_t(pose_r, mode) @ trocar.pdot


def kinematics_pair(model: RobotModel, state: JointState, step: float = 1e-6):
    """Kinematics at q +/- step*qdot for time differencing; collapses to one
    evaluation when the arm is at rest."""
    if not np.any(state.qdot):
        kin0 = kinematics(model, state.q)
        return kin0, kin0
    kin_p = kinematics(model, state.q + step * state.qdot)
    kin_m = kinematics(model, state.q - step * state.qdot)
    return kin_p, kin_m


def constraint_from_kin(
    kin: KinFrames,
    kin_p: KinFrames,
    kin_m: KinFrames,
    qdot: np.ndarray,
    trocar: TrocarState,
    mode: RcmMode,
    step: float = 1e-6,
) -> ConstraintState:
    """Constraint state from pre-evaluated kinematics at q and q +/- step*qdot.

    The configuration parts of Jdot_c and d/dt(B^T) come from the central
    difference; the trocar-motion part of Jdot_c is the analytic term
    B^T skew(pdot_c) J_w (from d/dt of -skew(p_cr) at fixed q).
    """
    qdot = np.asarray(qdot, dtype=float)
    n = qdot.shape[0]
    Bt = _basis_t(kin.pose_r, mode)
    x = Bt @ (kin.pose_r.p - trocar.p)
    J = residual_jacobian(kin.pose_r, kin.J_r, trocar.p, mode)
    xdot = J @ qdot - Bt @ trocar.pdot
    if kin_p is kin_m:
        Jc_dot_cfg = np.zeros((mode.k, n))
        Bt_dot = np.zeros((mode.k, 3))
        Jw = kin.J_r[3:]
    else:
        Jc_p = residual_jacobian(kin_p.pose_r, kin_p.J_r, trocar.p, mode)
        Jc_m = residual_jacobian(kin_m.pose_r, kin_m.J_r, trocar.p, mode)
        Jc_dot_cfg = (Jc_p - Jc_m) / (2.0 * step)
        Bt_dot = (_basis_t(kin_p.pose_r, mode) - _basis_t(kin_m.pose_r, mode)) / (
            2.0 * step
        )
        Jw = kin.J_r[3:]
    # Trocar motion enters J_c through +skew(p_cr): d/dt gives -skew(pdot_c).
    J_dot = Jc_dot_cfg - Bt @ (_skew(trocar.pdot) @ Jw)
    b = J_dot @ qdot - Bt_dot @ trocar.pdot - Bt @ trocar.pddot
    return ConstraintState(x=x, J=J, J_dot=J_dot, xdot=xdot, b=b, mode=mode)


def constraint_state(
    model: RobotModel,
    state: JointState,
    trocar: TrocarState,
    mode: RcmMode,
    step: float = 1e-6,
) -> ConstraintState:
    """Residual, Jacobian (and its rate), residual rate and acceleration bias."""
    kin = kinematics(model, state.q)
    kin_p, kin_m = kinematics_pair(model, state, step)
    return constraint_from_kin(kin, kin_p, kin_m, state.qdot, trocar, mode, step)


def residual_bias(
    model: RobotModel,
    state: JointState,
    pose_r: Pose,
    trocar: TrocarState,
    mode: RcmMode = RcmMode.THREE_D,
    step: float = 1e-6,
) -> np.ndarray:
    """Acceleration-level bias b_c so that xddot = J_c qddot + b_c exactly.

    ``pose_r`` must be the reference pose at ``state.q``; it pins the residual
    basis used for the trocar terms.
    """
    kin = kinematics(model, state.q)
    kin = KinFrames(
        origins=kin.origins,
        axes=kin.axes,
        pose_r=pose_r,
        pose_t=kin.pose_t,
        J_r=kin.J_r,
        J_t=kin.J_t,
    )
    kin_p, kin_m = kinematics_pair(model, state, step)
    cs = constraint_from_kin(kin, kin_p, kin_m, state.qdot, trocar, mode, step)
    return cs.b


def rcm_point(
    p_r: np.ndarray, p_t: np.ndarray, p_c: np.ndarray, l_tool: float, tol: float = 1e-6
) -> np.ndarray:
    """Orthogonal projection of the trocar point onto the tool axis.

    p_rcm = p_r + (p_rt . p_rc / l_tool^2) p_rt; visualizes where the pivot
    actually sits on the instrument.
    """
    p_r = np.asarray(p_r, dtype=float)
    p_t = np.asarray(p_t, dtype=float)
    p_c = np.asarray(p_c, dtype=float)
    p_rt = p_t - p_r
    if abs(np.linalg.norm(p_rt) - l_tool) > tol:
        raise InconsistentTool(
            f"|p_t - p_r| = {np.linalg.norm(p_rt):.9f} does not match l_tool = {l_tool}"
        )
    p_rc = p_c - p_r
    return p_r + (p_rt @ p_rc / (l_tool * l_tool)) * p_rt
