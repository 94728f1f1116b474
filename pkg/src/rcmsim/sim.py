"""Fixed-step closed-loop simulation with trace recording.

The plant integrates the free rigid-body dynamics; the pivot constraint is
enforced by the controller torque (matching a torque-controlled arm), with an
optional visco-elastic port model adding a lateral restoring force at the
trocar. Control rate equals the simulation rate; by default the controller
sees the exact simulated state (seeded sensor noise available as an option).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import controllers as ctl
from .errors import SimulationDiverged
from .rcm import RcmMode, TrocarState, place_trocar, rcm_point, residual, residual_rate
from .robot import DEFAULT_HOME, JointState, RobotModel, forward_dynamics
from .robot import kinematics as kinematics_of
from .scenarios import (
    TROCAR_STATIC,
    DisturbanceSchedule,
    SpiralParams,
    TrocarSchedule,
    disturbance_eval,
    spiral_reference,
    trocar_schedule_eval,
)

SEMI_IMPLICIT = "semi_implicit"
RK4 = "rk4"

ENV_OFF = "off"
ENV_SOFT = "soft"


@dataclass
class EnvModel:
    """Linear visco-elastic lateral force at the trocar (r-frame plane).

    Stand-in for a penetrable soft port: f = -K x - D xdot on the 2D pivot
    residual, mapped to joint torques through the 2D constraint Jacobian
    transpose. Defaults give 0.2 mm steady penetration under 1 N lateral load.
    """

    mode: str = ENV_OFF
    stiffness: float = 5000.0
    damping: float = 50.0

    def validate(self):
        if self.mode not in (ENV_OFF, ENV_SOFT):
            raise ValueError(f"unknown env mode {self.mode!r}")
        if self.stiffness < 0 or self.damping < 0:
            raise ValueError("environment gains must be non-negative")


def environment_force(x2d: np.ndarray, xdot2d: np.ndarray, env: EnvModel) -> np.ndarray:
    """Lateral port force on the tool at the trocar, r-frame plane [N]."""
    env.validate()
    if env.mode == ENV_OFF:
        return np.zeros(2)
    return -env.stiffness * np.asarray(x2d) - env.damping * np.asarray(xdot2d)


@dataclass
class SimConfig:
    """Integration settings plus optional feedback imperfection.

    ``sensor_noise_std`` adds seeded zero-mean Gaussian noise to the joint
    positions the controller sees (the plant and the trace keep the true
    state). Default off; runs stay bit-reproducible because the stream is
    seeded per episode.
    """

    dt: float = 1e-3
    duration: float = 20.0
    integrator: str = SEMI_IMPLICIT
    env: EnvModel = field(default_factory=EnvModel)
    sensor_noise_std: float = 0.0
    noise_seed: int = 0

    def validate(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must cover at least one step")
        if self.integrator not in (SEMI_IMPLICIT, RK4):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.sensor_noise_std < 0:
            raise ValueError("sensor_noise_std must be non-negative")
        self.env.validate()


@dataclass
class Scenario:
    """Episode description: trajectory, trocar, disturbances, start state."""

    alpha: float = 0.5
    spiral: SpiralParams = field(default_factory=SpiralParams)
    trocar: TrocarSchedule = field(default_factory=TrocarSchedule)
    disturbances: DisturbanceSchedule = field(default_factory=DisturbanceSchedule)
    q_init: np.ndarray | None = None


@dataclass
class ControlSetup:
    """Which controller runs the episode and how it is configured."""

    variant: str = ctl.P_APPROACH
    gains: ctl.GainSet | None = None
    rcm_mode: RcmMode | None = None  # default depends on the variant
    observer: bool = False
    compensation: str = ctl.COMP_FULL
    constraint_bias_feedforward: bool = True
    torque_inverse: str = "moore_penrose"

    def __post_init__(self):
        if self.variant not in (ctl.P_APPROACH, ctl.Z_APPROACH, ctl.UK):
            raise ValueError(f"unknown controller variant {self.variant!r}")
        if self.gains is None:
            # Frictionless plant: keep baseline null-space damping by default.
            self.gains = ctl.GainSet.from_proportional(kd_null=4.0)
        if self.rcm_mode is None:
            self.rcm_mode = ctl.DEFAULT_MODE[self.variant]


class SimTrace:
    """Pre-allocated, uniformly sampled record of one episode.

    Record count is floor(duration/dt) + 1; timestamps are i*dt exactly.
    ``filled`` marks how many records are valid (less than capacity only when
    an episode diverges and a partial trace is returned).
    """

    def __init__(self, n_joints: int, records: int, dt: float):
        self.n = n_joints
        self.capacity = records
        self.dt = dt
        self.filled = 0
        self.t = np.zeros(records)
        self.q = np.zeros((records, n_joints))
        self.qd = np.zeros((records, n_joints))
        self.tau = np.zeros((records, n_joints))
        self.tau_ext = np.zeros((records, n_joints))
        self.tau_ext_hat = np.zeros((records, n_joints))
        self.tip = np.zeros((records, 3))
        self.ref = np.zeros((records, 3))
        self.p_r = np.zeros((records, 3))
        self.p_c = np.zeros((records, 3))
        self.res2d = np.zeros((records, 2))
        self.res3d = np.zeros((records, 3))
        self.p_rcm = np.zeros((records, 3))
        # Diagnostics kept in memory only (not part of the CSV contract).
        self.qdd = np.zeros((records, n_joints))
        self.constraint_gap = np.zeros(records)

    def buffer_ids(self) -> tuple[int, ...]:
        return tuple(
            id(a)
            for a in (
                self.t, self.q, self.qd, self.tau, self.tau_ext, self.tau_ext_hat,
                self.tip, self.ref, self.p_r, self.p_c, self.res2d, self.res3d,
                self.p_rcm, self.qdd, self.constraint_gap,
            )
        )

    def header(self) -> list[str]:
        n = self.n
        cols = ["t"]
        cols += [f"q{i + 1}" for i in range(n)]
        cols += [f"qd{i + 1}" for i in range(n)]
        cols += [f"tau{i + 1}" for i in range(n)]
        cols += ["tip_x", "tip_y", "tip_z", "ref_x", "ref_y", "ref_z"]
        cols += ["pr_x", "pr_y", "pr_z", "pc_x", "pc_y", "pc_z"]
        cols += ["res2d_x", "res2d_y", "res3d_x", "res3d_y", "res3d_z"]
        cols += ["prcm_x", "prcm_y", "prcm_z"]
        cols += [f"tauext{i + 1}" for i in range(n)]
        cols += [f"tauexthat{i + 1}" for i in range(n)]
        return cols

    def table(self) -> np.ndarray:
        m = self.filled
        return np.concatenate(
            [
                self.t[:m, None], self.q[:m], self.qd[:m], self.tau[:m],
                self.tip[:m], self.ref[:m], self.p_r[:m], self.p_c[:m],
                self.res2d[:m], self.res3d[:m], self.p_rcm[:m],
                self.tau_ext[:m], self.tau_ext_hat[:m],
            ],
            axis=1,
        )

    def to_csv(self, path: str):
        """One row per tick; floats printed with 17 significant digits so the
        file round-trips bit-exactly."""
        np.savetxt(
            path,
            self.table(),
            fmt="%.17g",
            delimiter=",",
            header=",".join(self.header()),
            comments="",
        )


class TraceTable:
    """Column view over a trace CSV; quacks like SimTrace for metrics."""

    def __init__(self, header: list[str], data: np.ndarray):
        self._idx = {name: i for i, name in enumerate(header)}
        self._data = data
        n = sum(1 for name in header if name.startswith("q") and name[1:].isdigit())
        self.n = n
        self.filled = data.shape[0]
        self.t = self._block(["t"])[:, 0]
        self.q = self._block([f"q{i + 1}" for i in range(n)])
        self.qd = self._block([f"qd{i + 1}" for i in range(n)])
        self.tau = self._block([f"tau{i + 1}" for i in range(n)])
        self.tip = self._block(["tip_x", "tip_y", "tip_z"])
        self.ref = self._block(["ref_x", "ref_y", "ref_z"])
        self.p_r = self._block(["pr_x", "pr_y", "pr_z"])
        self.p_c = self._block(["pc_x", "pc_y", "pc_z"])
        self.res2d = self._block(["res2d_x", "res2d_y"])
        self.res3d = self._block(["res3d_x", "res3d_y", "res3d_z"])
        self.p_rcm = self._block(["prcm_x", "prcm_y", "prcm_z"])
        self.tau_ext = self._block([f"tauext{i + 1}" for i in range(n)])
        self.tau_ext_hat = self._block([f"tauexthat{i + 1}" for i in range(n)])

    def _block(self, names: list[str]) -> np.ndarray:
        return self._data[:, [self._idx[c] for c in names]]


def read_trace_csv(path: str) -> TraceTable:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return TraceTable(header, data)


def step(
    model: RobotModel,
    state: JointState,
    tau: np.ndarray,
    tau_ext: np.ndarray,
    dt: float,
    integrator: str = SEMI_IMPLICIT,
    env: EnvModel | None = None,
    trocar: TrocarState | None = None,
) -> JointState:
    """Advance the plant one control period under zero-order-hold torque.

    ``tau_ext`` holds the scripted external torque for the step; the port
    force (env soft mode) is state dependent and recomputed per RK4 substage.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")

    def env_torque(q, qd):
        if env is None or env.mode == ENV_OFF or trocar is None:
            return 0.0
        kin = kinematics_of(model, q)
        x2 = residual(kin.pose_r, trocar.p, RcmMode.TWO_D)
        xd2 = residual_rate(kin.pose_r, kin.J_r, qd, trocar, RcmMode.TWO_D)
        J2 = _residual_jac(kin, trocar)
        return J2.T @ environment_force(x2, xd2, env)

    if integrator == SEMI_IMPLICIT:
        qdd = forward_dynamics(model, state.q, state.qdot, tau, tau_ext + env_torque(state.q, state.qdot))
        qd_new = state.qdot + dt * qdd
        q_new = state.q + dt * qd_new
    elif integrator == RK4:
        def deriv(q, qd):
            return qd, forward_dynamics(model, q, qd, tau, tau_ext + env_torque(q, qd))

        k1q, k1v = deriv(state.q, state.qdot)
        k2q, k2v = deriv(state.q + 0.5 * dt * k1q, state.qdot + 0.5 * dt * k1v)
        k3q, k3v = deriv(state.q + 0.5 * dt * k2q, state.qdot + 0.5 * dt * k2v)
        k4q, k4v = deriv(state.q + dt * k3q, state.qdot + dt * k3v)
        q_new = state.q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd_new = state.qdot + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
        raise SimulationDiverged(-1, -1.0, "non-finite state after step")
    return JointState(q_new, qd_new)


def _residual_jac(kin, trocar):
    from .rcm import residual_jacobian

    return residual_jacobian(kin.pose_r, kin.J_r, trocar.p, RcmMode.TWO_D)


def run_episode(
    model: RobotModel,
    control: ControlSetup,
    scenario: Scenario,
    sim: SimConfig,
) -> SimTrace:
    """Closed-loop episode at control rate = simulation rate.

    Raises SimulationDiverged (carrying the partial trace and the tick index)
    if the state or the controller output becomes non-finite.
    """
    sim.validate()
    scenario.disturbances.validate()
    q0 = DEFAULT_HOME.copy() if scenario.q_init is None else np.asarray(scenario.q_init, dtype=float)
    if q0.shape != (model.n,):
        raise ValueError(f"q_init must have length {model.n}")
    state = JointState(q0.copy(), np.zeros(model.n))

    kin0 = kinematics_of(model, q0)
    p_c0 = place_trocar(kin0.pose_r.p, kin0.pose_t.p, scenario.alpha)
    spiral = replace(scenario.spiral, start=kin0.pose_t.p.copy())
    spiral.validate()
    trocar_sched = replace(scenario.trocar, p0=p_c0)
    trocar_sched.validate()
    if control.variant == ctl.Z_APPROACH and trocar_sched.mode != TROCAR_STATIC:
        raise ValueError("the extended-Jacobian controller supports static trocars only")

    mode = control.rcm_mode
    dt = sim.dt
    records = int(np.floor(sim.duration / dt)) + 1
    trace = SimTrace(model.n, records, dt)

    obs = (
        ctl.ObserverState.initial(model, state, control.gains.observer_gain)
        if control.observer
        else None
    )
    z_carry: ctl.ZCarry | None = None
    noise = (
        np.random.default_rng(sim.noise_seed) if sim.sensor_noise_std > 0 else None
    )
    # 3D residual set-point: lateral components zero (trocar starts on the
    # axis); the axial component holds its initial value so the regulation
    # does not command the reference frame onto the port.
    x_c_ref = residual(kin0.pose_r, p_c0, mode) if mode is RcmMode.THREE_D else None

    for k in range(records):
        t = k * dt
        trocar = trocar_schedule_eval(t, trocar_sched)
        ref = spiral_reference(t, spiral)
        if noise is None:
            meas = state
        else:
            meas = JointState(
                state.q + sim.sensor_noise_std * noise.standard_normal(model.n),
                state.qdot,
            )
        snap = ctl.build_snapshot(model, meas, trocar, mode)
        tau_hat = obs.tau_ext_hat if obs is not None else None

        if control.variant == ctl.P_APPROACH:
            out = ctl.p_approach_torque(
                model, meas, trocar, ref, control.gains, q0, tau_hat,
                mode=mode,
                compensation=control.compensation,
                constraint_bias_feedforward=control.constraint_bias_feedforward,
                torque_inverse=control.torque_inverse,
                snap=snap,
                x_c_ref=x_c_ref,
            )
        elif control.variant == ctl.Z_APPROACH:
            out, z_carry = ctl.z_approach_torque(
                model, meas, trocar, ref, control.gains, tau_hat, q0,
                mode=mode, compensation=control.compensation, carry=z_carry, snap=snap,
                x_c_ref=x_c_ref,
            )
        else:
            out = ctl.uk_torque(
                model, meas, trocar, ref, control.gains, tau_hat, q0,
                mode=mode, compensation=control.compensation, snap=snap,
                x_c_ref=x_c_ref,
            )
        if not np.all(np.isfinite(out.tau)):
            trace.filled = k
            raise SimulationDiverged(k, t, "non-finite controller torque", trace)
        kin_true = snap.kin if noise is None else kinematics_of(model, state.q)

        tau_dist = disturbance_eval(t, scenario.disturbances, model, state.q)
        if sim.env.mode == ENV_SOFT:
            x2 = residual(kin_true.pose_r, trocar.p, RcmMode.TWO_D)
            xd2 = residual_rate(kin_true.pose_r, kin_true.J_r, state.qdot, trocar, RcmMode.TWO_D)
            J2 = _residual_jac(kin_true, trocar)
            tau_env = J2.T @ environment_force(x2, xd2, sim.env)
        else:
            tau_env = np.zeros(model.n)
        tau_ext = tau_dist + tau_env

        if noise is None:
            # snapshot already holds M and h at the true state
            qdd = np.linalg.solve(snap.M, out.tau + tau_ext - snap.h)
        else:
            qdd = forward_dynamics(model, state.q, state.qdot, out.tau, tau_ext)
        gap = snap.constraint.J @ qdd - out.constraint_accel_cmd

        # Record tick k (true plant state, not the measured one).
        trace.t[k] = t
        trace.q[k] = state.q
        trace.qd[k] = state.qdot
        trace.tau[k] = out.tau
        trace.tau_ext[k] = tau_ext
        trace.tau_ext_hat[k] = obs.tau_ext_hat if obs is not None else 0.0
        trace.tip[k] = kin_true.pose_t.p
        trace.ref[k] = ref.x
        trace.p_r[k] = kin_true.pose_r.p
        trace.p_c[k] = trocar.p
        res3 = residual(kin_true.pose_r, trocar.p, RcmMode.THREE_D)
        trace.res2d[k] = res3[:2]
        trace.res3d[k] = res3
        trace.p_rcm[k] = rcm_point(
            kin_true.pose_r.p, kin_true.pose_t.p, trocar.p, model.l_tool
        )
        trace.qdd[k] = qdd
        trace.constraint_gap[k] = np.linalg.norm(gap) if gap.size else 0.0
        trace.filled = k + 1

        if k == records - 1:
            break
        if sim.integrator == SEMI_IMPLICIT:
            # Reuse the already-computed acceleration (same ZOH inputs).
            qd_new = state.qdot + dt * qdd
            q_new = state.q + dt * qd_new
            if not (np.all(np.isfinite(q_new)) and np.all(np.isfinite(qd_new))):
                raise SimulationDiverged(k + 1, t + dt, "non-finite state after step", trace)
            state = JointState(q_new, qd_new)
        else:
            try:
                state = step(
                    model, state, out.tau, tau_dist, dt, sim.integrator,
                    env=sim.env, trocar=trocar,
                )
            except SimulationDiverged as exc:
                raise SimulationDiverged(k + 1, t + dt, "non-finite state after step", trace) from exc
        if obs is not None:
            obs = ctl.observer_step(obs, model, state, out.tau, dt)

    return trace
