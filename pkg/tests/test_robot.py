import json
from dataclasses import replace

import numpy as np
import pytest

from rcmsim.errors import ModelError
from rcmsim.robot import (
    DEFAULT_HOME,
    default_model_path,
    forward_dynamics,
    bias_terms,
    fk,
    inverse_dynamics,
    jacobian,
    jacobian_dot,
    kinematics,
    mass_matrix,
    model_from_dict,
    point_jacobian,
)
from conftest import PENDULUM_LENGTH, PENDULUM_MASS, random_states


# --- independent homogeneous-transform oracle over the raw model file -------


def _mdh_matrix(a, d, alpha, theta):
    ca, sa = np.cos(alpha), np.sin(alpha)
    ct, st = np.cos(theta), np.sin(theta)
    return np.array(
        [
            [ct, -st, 0.0, a],
            [st * ca, ct * ca, -sa, -sa * d],
            [st * sa, ct * sa, ca, ca * d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def _oracle_frames(model_dict, q):
    T = np.eye(4)
    frames = []
    for i, j in enumerate(model_dict["joints"]):
        T = T @ _mdh_matrix(j["a"], j["d"], j["alpha"], q[i] + j["theta_offset"])
        frames.append(T.copy())
    f = model_dict.get("flange")
    if f:
        T = T @ _mdh_matrix(f["a"], f["d"], f["alpha"], f["theta"])
    return frames, T


def test_fk_matches_transform_chain_oracle(model):
    with open(default_model_path()) as fh:
        raw = json.load(fh)
    q = DEFAULT_HOME
    _, T = _oracle_frames(raw, q)
    pose = fk(model, q)
    assert np.abs(pose.p - T[:3, 3]).max() < 1e-12
    assert np.abs(pose.R - T[:3, :3]).max() < 1e-12


def test_fk_tip_is_tool_length_along_z(model, rng):
    for _ in range(5):
        q = DEFAULT_HOME + rng.uniform(-1.0, 1.0, model.n)
        pose_r = fk(model, q, "reference")
        pose_t = fk(model, q, "tip")
        assert np.abs(pose_t.p - (pose_r.p + model.l_tool * pose_r.R[:, 2])).max() < 1e-12
        assert np.array_equal(pose_r.R, pose_t.R)


def test_fk_rotation_orthonormal(model, rng):
    for _ in range(10):
        q = rng.uniform(-np.pi, np.pi, model.n)
        R = fk(model, q).R
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9


def test_planar_chain_analytic(planar_model):
    pose = fk(planar_model, np.array([np.pi / 2, 0.0]))
    assert np.abs(pose.p - np.array([0.0, 2.0, 0.0])).max() < 1e-12


def test_planar_jacobian_analytic(planar_model):
    J = jacobian(planar_model, np.zeros(2))
    assert np.abs(J[0] - np.array([0.0, 0.0])).max() < 1e-12  # row x
    assert np.abs(J[1] - np.array([2.0, 1.0])).max() < 1e-12  # row y: l1+l2, l2


def test_jacobian_zero_columns_beyond_supporting_joint(model):
    # A point on link 2 cannot be moved by joints 3..n.
    J, _ = point_jacobian(model, DEFAULT_HOME, 1, model.coms[1])
    assert np.abs(J[:, 2:]).max() == 0.0


def test_jacobian_matches_fk_finite_difference(model, rng):
    qs, _ = random_states(rng, model.n, 20)
    step = 1e-6
    worst = 0.0
    for q in qs:
        for frame in ("reference", "tip"):
            J = jacobian(model, q, frame)
            for j in range(model.n):
                dq = np.zeros(model.n)
                dq[j] = step
                dp = fk(model, q + dq, frame).p - fk(model, q - dq, frame).p
                worst = max(worst, np.abs(dp / (2 * step) - J[:3, j]).max())
    assert worst < 1e-6


def test_jacobian_dot_zero_velocity(model):
    assert np.abs(jacobian_dot(model, DEFAULT_HOME, np.zeros(model.n))).max() == 0.0


def test_jacobian_dot_independent_stencil(model, rng):
    qs, qds = random_states(rng, model.n, 10)
    delta = 1e-5
    for q, qd in zip(qs, qds):
        Jd = jacobian_dot(model, q, qd, "tip")
        ref = (jacobian(model, q + delta * qd, "tip") - jacobian(model, q - delta * qd, "tip")) / (
            2 * delta
        )
        assert np.abs(Jd - ref).max() < 1e-4


def test_jacobian_dot_single_revolute_circular_motion(pendulum_model):
    # One revolute joint at constant rate: a point at lever distance l from
    # the axis moves on a circle, so |Jdot_p| = |qdot| * l.
    q = np.array([0.3])
    qd = np.array([0.8])
    step = 1e-6
    Jp, _ = point_jacobian(pendulum_model, q + step * qd, 0, pendulum_model.coms[0])
    Jm, _ = point_jacobian(pendulum_model, q - step * qd, 0, pendulum_model.coms[0])
    Jd = (Jp - Jm) / (2 * step)
    assert abs(np.linalg.norm(Jd[:, 0]) - abs(qd[0]) * PENDULUM_LENGTH) < 1e-5


def test_mass_matrix_pendulum_analytic(pendulum_model):
    M = mass_matrix(pendulum_model, np.array([0.4]))
    assert abs(M[0, 0] - PENDULUM_MASS * PENDULUM_LENGTH**2) < 1e-9


def test_mass_matrix_symmetric_positive_definite(model, rng):
    qs, _ = random_states(rng, model.n, 20, spread=np.pi)
    for q in qs:
        M = mass_matrix(model, q)
        assert np.abs(M - M.T).max() < 1e-10
        assert np.linalg.eigvalsh(M)[0] > 0


def test_kinetic_energy_matches_per_link_sum(model, rng):
    # Oracle: sum of per-link kinetic energies from link twists built with an
    # independent frame chain (not the CRBA code path).
    with open(default_model_path()) as fh:
        raw = json.load(fh)
    qs, qds = random_states(rng, model.n, 5)
    for q, qd in zip(qs, qds):
        frames, _ = _oracle_frames(raw, q)
        origins = np.array([F[:3, 3] for F in frames])
        axes = np.array([F[:3, 2] for F in frames])
        energy = 0.0
        for i in range(model.n):
            com_base = frames[i][:3, :3] @ model.coms[i] + origins[i]
            Jv = np.zeros((3, model.n))
            Jw = np.zeros((3, model.n))
            for j in range(i + 1):
                Jv[:, j] = np.cross(axes[j], com_base - origins[j])
                Jw[:, j] = axes[j]
            v = Jv @ qd
            w = Jw @ qd
            I_base = frames[i][:3, :3] @ model.inertias[i] @ frames[i][:3, :3].T
            energy += 0.5 * model.masses[i] * v @ v + 0.5 * w @ (I_base @ w)
        M = mass_matrix(model, q)
        assert abs(0.5 * qd @ M @ qd - energy) < 1e-10 * max(1.0, energy)


def test_bias_terms_zero_velocity_gives_gravity(model):
    h, c, g = bias_terms(model, DEFAULT_HOME, np.zeros(model.n))
    assert np.array_equal(h, g)
    assert np.abs(c).max() == 0.0


def test_bias_terms_zero_gravity_zero_velocity(model):
    m0 = replace(model, gravity=np.zeros(3))
    h, c, g = bias_terms(m0, DEFAULT_HOME, np.zeros(model.n))
    assert np.abs(h).max() == 0.0


def test_pendulum_gravity_torque(pendulum_model):
    for theta in (0.0, 0.3, -1.1, np.pi / 2):
        _, _, g = bias_terms(pendulum_model, np.array([theta]), np.zeros(1))
        expected = PENDULUM_MASS * 9.81 * PENDULUM_LENGTH * np.sin(theta)
        assert abs(g[0] - expected) < 1e-9


def test_forward_dynamics_gravity_equilibrium(model):
    _, _, g = bias_terms(model, DEFAULT_HOME, np.zeros(model.n))
    qdd = forward_dynamics(model, DEFAULT_HOME, np.zeros(model.n), g)
    assert np.abs(qdd).max() < 1e-10


def test_forward_inverse_round_trip(model, rng):
    qs, qds = random_states(rng, model.n, 10)
    for q, qd in zip(qs, qds):
        tau = rng.uniform(-5.0, 5.0, model.n)
        qdd = forward_dynamics(model, q, qd, tau)
        tau_back = inverse_dynamics(model, q, qd, qdd)
        assert np.abs(tau_back - tau).max() < 1e-8


def test_free_pendulum_from_horizontal(pendulum_model):
    qdd = forward_dynamics(pendulum_model, np.array([np.pi / 2]), np.zeros(1), np.zeros(1))
    assert abs(qdd[0] + 9.81 / PENDULUM_LENGTH) < 1e-9


def test_power_balance_zero_gravity(model, rng):
    m0 = replace(model, gravity=np.zeros(3))
    qs, qds = random_states(rng, model.n, 10)
    for q, qd in zip(qs, qds):
        tau = rng.uniform(-3.0, 3.0, model.n)
        qdd = forward_dynamics(m0, q, qd, tau)
        _, c, _ = bias_terms(m0, q, qd)
        M = mass_matrix(m0, q)
        lhs = qd @ (M @ qdd + c)
        rhs = qd @ tau
        assert abs(lhs - rhs) < 1e-6 * max(1.0, abs(rhs))


def test_flange_wrench_virtual_work(model, rng):
    # Power consistency for a mapped flange force (virtual-work oracle).
    q = DEFAULT_HOME
    qd = rng.uniform(-1, 1, model.n)
    kin = kinematics(model, q)
    wrench = rng.uniform(-5, 5, 6)
    tau = kin.J_r.T @ wrench
    assert abs(qd @ tau - (kin.J_r @ qd) @ wrench) < 1e-9


# --- model file parsing ------------------------------------------------------


def _minimal_dict():
    return {
        "n": 1,
        "joints": [{"a": 0.0, "d": 0.0, "alpha": 0.0, "theta_offset": 0.0}],
        "links": [{"mass": 1.0, "com": [0, 0, 0],
                   "inertia": [[1e-3, 0, 0], [0, 1e-3, 0], [0, 0, 1e-3]]}],
        "gravity": [0, 0, -9.81],
        "l_tool": 0.5,
    }


def test_model_missing_field_names_path():
    d = _minimal_dict()
    del d["joints"][0]["alpha"]
    with pytest.raises(ModelError, match=r"joints\[0\].alpha"):
        model_from_dict(d)


def test_model_rejects_bad_mass_and_inertia():
    d = _minimal_dict()
    d["links"][0]["mass"] = 0.0
    with pytest.raises(ModelError, match=r"links\[0\].mass"):
        model_from_dict(d)
    d = _minimal_dict()
    d["links"][0]["inertia"] = [[1e-3, 0, 0], [0, -1e-3, 0], [0, 0, 1e-3]]
    with pytest.raises(ModelError, match=r"links\[0\].inertia"):
        model_from_dict(d)


def test_model_rejects_bad_tool_length():
    d = _minimal_dict()
    d["l_tool"] = 0.0
    with pytest.raises(ModelError, match="l_tool"):
        model_from_dict(d)
