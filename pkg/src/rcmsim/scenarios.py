"""Reference trajectories and schedules: spiral tip path on a trapezoidal
velocity profile, trocar placement/motion, scripted disturbance wrenches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .robot import RobotModel, kinematics, point_jacobian


@dataclass(frozen=True)
class TaskReference:
    """Tip position task reference [m, m/s, m/s^2]."""

    x: np.ndarray
    xdot: np.ndarray
    xddot: np.ndarray


@dataclass
class SpiralParams:
    """Spiral tip trajectory along base z, starting at the initial tip point.

    The path begins at ``start`` (center offset -radius along x so t=0 lies on
    the circle) and rises turns*pitch over the duration.
    """

    radius: float = 0.02
    pitch: float = 0.015
    duration: float = 20.0
    turns: int = 3
    accel_fraction: float = 0.2
    start: np.ndarray | None = None

    def validate(self):
        if self.radius <= 0 or self.pitch < 0 or self.duration <= 0 or self.turns < 1:
            raise ValueError("invalid spiral parameters")
        if not 0.0 < self.accel_fraction < 0.5:
            raise ValueError("accel_fraction must lie in (0, 0.5)")


def trapezoid_profile(t: float, T: float, accel_fraction: float = 0.2):
    """Unit trapezoidal-velocity profile: s(0)=0, s(T)=1, zero end rates.

    Constant acceleration on [0, aT], constant velocity, constant deceleration
    on [(1-a)T, T]. Outside [0, T] the profile holds the boundary value with
    zero derivatives. Returns (s, sdot, sddot).
    """
    if not 0.0 < accel_fraction < 0.5:
        raise ValueError("accel_fraction must lie in (0, 0.5)")
    if T <= 0.0:
        raise ValueError("duration must be positive")
    a = accel_fraction
    v = 1.0 / (T * (1.0 - a))  # plateau rate; integrates to exactly 1
    A = v / (a * T)
    if t < 0.0:
        return 0.0, 0.0, 0.0
    if t > T:
        return 1.0, 0.0, 0.0
    if t <= a * T:
        return 0.5 * A * t * t, A * t, A
    if t <= (1.0 - a) * T:
        return v * (t - 0.5 * a * T), v, 0.0
    dt = T - t
    return 1.0 - 0.5 * A * dt * dt, A * dt, -A


def spiral_reference(t: float, params: SpiralParams) -> TaskReference:
    """Tip reference on the spiral at time t (chain rule through the profile)."""
    params.validate()
    if params.start is None:
        raise ValueError("spiral start point not set")
    s, sd, sdd = trapezoid_profile(t, params.duration, params.accel_fraction)
    r = params.radius
    phi_s = 2.0 * np.pi * params.turns  # d(phi)/ds
    phi = phi_s * s
    rise = params.turns * params.pitch
    p_s = np.array([-r * np.sin(phi) * phi_s, r * np.cos(phi) * phi_s, rise])
    p_ss = np.array([-r * np.cos(phi) * phi_s * phi_s, -r * np.sin(phi) * phi_s * phi_s, 0.0])
    x = params.start + np.array([r * (np.cos(phi) - 1.0), r * np.sin(phi), rise * s])
    return TaskReference(x=x, xdot=p_s * sd, xddot=p_ss * sd * sd + p_s * sdd)


TROCAR_STATIC = "static"
TROCAR_SINUSOIDAL = "sinusoidal"


@dataclass
class TrocarSchedule:
    """Trocar point over time: static, or sinusoidal along base z."""

    mode: str = TROCAR_STATIC
    p0: np.ndarray | None = None
    amplitude: float = 0.04
    frequency: float = 0.2
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def validate(self):
        if self.mode not in (TROCAR_STATIC, TROCAR_SINUSOIDAL):
            raise ValueError(f"unknown trocar mode {self.mode!r}")
        if self.amplitude < 0 or self.frequency < 0:
            raise ValueError("amplitude and frequency must be non-negative")


def trocar_schedule_eval(t: float, sched: TrocarSchedule):
    """TrocarState at time t with analytic first and second derivatives."""
    from .rcm import TrocarState

    sched.validate()
    if sched.p0 is None:
        raise ValueError("trocar schedule base point not set")
    p0 = np.asarray(sched.p0, dtype=float)
    if sched.mode == TROCAR_STATIC:
        return TrocarState(p0.copy(), np.zeros(3), np.zeros(3))
    w = 2.0 * np.pi * sched.frequency
    ax = np.asarray(sched.axis, dtype=float)
    s = np.sin(w * t)
    c = np.cos(w * t)
    return TrocarState(
        p0 + sched.amplitude * s * ax,
        sched.amplitude * w * c * ax,
        -sched.amplitude * w * w * s * ax,
    )


@dataclass
class DisturbanceEvent:
    """One scripted external action on the arm over a time window.

    Exactly one of ``flange_wrench`` (6: force then moment, base frame),
    ``joint_torque`` (n) or ``link2_force`` (3, base frame, applied at the
    link-2 COM) should be set.
    """

    t0: float
    t1: float
    flange_wrench: np.ndarray | None = None
    joint_torque: np.ndarray | None = None
    link2_force: np.ndarray | None = None

    def validate(self):
        if self.t0 < 0 or self.t1 <= self.t0:
            raise ValueError("disturbance window must satisfy 0 <= t0 < t1")
        set_count = sum(
            x is not None
            for x in (self.flange_wrench, self.joint_torque, self.link2_force)
        )
        if set_count != 1:
            raise ValueError("set exactly one of flange_wrench/joint_torque/link2_force")


@dataclass
class DisturbanceSchedule:
    events: list[DisturbanceEvent] = field(default_factory=list)

    def validate(self):
        for e in self.events:
            e.validate()


def disturbance_eval(
    t: float, sched: DisturbanceSchedule, model: RobotModel, q: np.ndarray
) -> np.ndarray:
    """External joint torque at time t.

    Flange wrenches map through the tool-reference Jacobian transpose; link-2
    forces through the partial Jacobian of the link-2 COM; joint-torque events
    add directly. Zero outside every window.
    """
    tau = np.zeros(model.n)
    active = [e for e in sched.events if e.t0 <= t <= e.t1]
    if not active:
        return tau
    kin = None
    for e in active:
        if e.joint_torque is not None:
            tau += np.asarray(e.joint_torque, dtype=float)
        elif e.flange_wrench is not None:
            if kin is None:
                kin = kinematics(model, q)
            tau += kin.J_r.T @ np.asarray(e.flange_wrench, dtype=float)
        else:
            J2, _ = point_jacobian(model, q, 1, model.coms[1])
            tau += J2.T @ np.asarray(e.link2_force, dtype=float)
    return tau
