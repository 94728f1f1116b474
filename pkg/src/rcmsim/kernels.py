"""Rigid-body kernels for modified-DH serial chains with revolute joints.

Everything here is written in loop form so it compiles under numba's nopython
mode and still runs (slowly) as plain Python when the numpy fallback backend
is selected. Conventions:

* modified DH, joint i transform: RotX(alpha_{i-1}) TransX(a_{i-1})
  RotZ(q_i + offset_i) TransZ(d_i); ``dh`` row i is (a, d, alpha, offset).
* ``flange`` is one extra fixed transform (a, d, alpha, theta) after joint n;
  the frame it produces is the tool-reference frame, and the tool tip lies
  ``l_tool`` along that frame's z-axis.
* spatial vectors are ordered (angular, linear); Jacobians returned by
  ``fk_jac`` are ordered (linear rows 0..2, angular rows 3..5).
* link i mass properties (mass, COM, rotational inertia about the COM) are
  expressed in frame i.
"""

import numpy as np

from .backend import jit


@jit
def _mdh_step(a, d, alpha, theta):
    """Child-frame rotation and origin in parent coordinates."""
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    ct = np.cos(theta)
    st = np.sin(theta)
    R = np.empty((3, 3))
    R[0, 0] = ct
    R[0, 1] = -st
    R[0, 2] = 0.0
    R[1, 0] = ca * st
    R[1, 1] = ca * ct
    R[1, 2] = -sa
    R[2, 0] = sa * st
    R[2, 1] = sa * ct
    R[2, 2] = ca
    p = np.empty(3)
    p[0] = a
    p[1] = -sa * d
    p[2] = ca * d
    return R, p


@jit
def _cross(a, b):
    c = np.empty(3)
    c[0] = a[1] * b[2] - a[2] * b[1]
    c[1] = a[2] * b[0] - a[0] * b[2]
    c[2] = a[0] * b[1] - a[1] * b[0]
    return c


@jit
def fk_jac(dh, flange, q, l_tool):
    """Forward kinematics plus geometric Jacobians in one pass.

    Returns (origins, axes, R_r, p_r, p_t, J_r, J_t): per-joint frame origins
    and z-axes in base coordinates, the tool-reference pose, the tip position,
    and the 6xn geometric Jacobians of the reference frame and the tip
    (position rows first).
    """
    n = q.shape[0]
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(n):
        Rs, ps = _mdh_step(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
        p = p + R @ ps
        R = R @ Rs
        for k in range(3):
            origins[i, k] = p[k]
            axes[i, k] = R[k, 2]
    Rs, ps = _mdh_step(flange[0], flange[1], flange[2], flange[3])
    p_r = p + R @ ps
    R_r = R @ Rs
    p_t = np.empty(3)
    for k in range(3):
        p_t[k] = p_r[k] + l_tool * R_r[k, 2]

    J_r = np.zeros((6, n))
    J_t = np.zeros((6, n))
    for i in range(n):
        zx = axes[i, 0]
        zy = axes[i, 1]
        zz = axes[i, 2]
        rx = p_r[0] - origins[i, 0]
        ry = p_r[1] - origins[i, 1]
        rz = p_r[2] - origins[i, 2]
        J_r[0, i] = zy * rz - zz * ry
        J_r[1, i] = zz * rx - zx * rz
        J_r[2, i] = zx * ry - zy * rx
        tx = p_t[0] - origins[i, 0]
        ty = p_t[1] - origins[i, 1]
        tz = p_t[2] - origins[i, 2]
        J_t[0, i] = zy * tz - zz * ty
        J_t[1, i] = zz * tx - zx * tz
        J_t[2, i] = zx * ty - zy * tx
        J_r[3, i] = zx
        J_r[4, i] = zy
        J_r[5, i] = zz
        J_t[3, i] = zx
        J_t[4, i] = zy
        J_t[5, i] = zz
    return origins, axes, R_r, p_r, p_t, J_r, J_t


@jit
def fk_jac3(dh, flange, q, qdot, step, l_tool):
    """fk_jac at q and at q +/- step*qdot in one call (hot loop shortcut).

    Returns (origins, axes, R_r, p_r, p_t, J_r, J_t,
             R_r_plus, J_r_plus, Jt_plus, R_r_minus, J_r_minus, Jt_minus);
    the tip blocks of the offset evaluations carry only the translational
    rows' source (full 6xn J_t is returned for uniformity).
    """
    origins, axes, R_r, p_r, p_t, J_r, J_t = fk_jac(dh, flange, q, l_tool)
    _, _, R_p, p_rp, _, J_rp, J_tp = fk_jac(dh, flange, q + step * qdot, l_tool)
    _, _, R_m, p_rm, _, J_rm, J_tm = fk_jac(dh, flange, q - step * qdot, l_tool)
    return (
        origins, axes, R_r, p_r, p_t, J_r, J_t,
        R_p, p_rp, J_rp, J_tp,
        R_m, p_rm, J_rm, J_tm,
    )


@jit
def point_jacobian(dh, q, link, point_local):
    """Translational Jacobian of a point fixed to ``link`` (0-based index).

    Columns beyond the supporting joint are zero by chain structure.
    """
    n = q.shape[0]
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    R = np.eye(3)
    p = np.zeros(3)
    for i in range(link + 1):
        Rs, ps = _mdh_step(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
        p = p + R @ ps
        R = R @ Rs
        for k in range(3):
            origins[i, k] = p[k]
            axes[i, k] = R[k, 2]
    target = p + R @ point_local
    J = np.zeros((3, n))
    for i in range(link + 1):
        z = axes[i]
        r = target - origins[i]
        c = _cross(z, r)
        J[0, i] = c[0]
        J[1, i] = c[1]
        J[2, i] = c[2]
    return J, target


@jit
def rnea(dh, q, qd, qdd, gravity, masses, coms, inertias):
    """Recursive Newton-Euler inverse dynamics.

    Returns the joint torques that realize ``qdd`` at state (q, qd) under
    ``gravity``. Gravity enters through the standard base-acceleration trick.
    """
    n = q.shape[0]
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    ws = np.empty((n, 3))
    wds = np.empty((n, 3))
    Fs = np.empty((n, 3))
    Ns = np.empty((n, 3))

    w = np.zeros(3)
    wd = np.zeros(3)
    vd = -gravity
    for i in range(n):
        R, pl = _mdh_step(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
        Rs[i] = R
        ps[i] = pl
        Rt = R.T
        w_in = Rt @ w
        w_new = w_in.copy()
        w_new[2] += qd[i]
        wd_new = Rt @ wd + _cross(w_in, np.array([0.0, 0.0, qd[i]]))
        wd_new[2] += qdd[i]
        vd_new = Rt @ (vd + _cross(wd, pl) + _cross(w, _cross(w, pl)))
        c = coms[i]
        vdc = vd_new + _cross(wd_new, c) + _cross(w_new, _cross(w_new, c))
        Fs[i] = masses[i] * vdc
        Iw = inertias[i] @ w_new
        Ns[i] = inertias[i] @ wd_new + _cross(w_new, Iw)
        ws[i] = w_new
        wds[i] = wd_new
        w = w_new
        wd = wd_new
        vd = vd_new

    tau = np.empty(n)
    f = np.zeros(3)
    nt = np.zeros(3)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            f_down = Rs[i + 1] @ f
            n_down = Rs[i + 1] @ nt + _cross(ps[i + 1], f_down)
        else:
            f_down = np.zeros(3)
            n_down = np.zeros(3)
        f = f_down + Fs[i]
        nt = n_down + Ns[i] + _cross(coms[i], Fs[i])
        tau[i] = nt[2]
    return tau


@jit
def crba(dh, q, masses, coms, inertias):
    """Joint-space inertia matrix via the composite-rigid-body algorithm."""
    n = q.shape[0]
    Rs = np.empty((n, 3, 3))
    ps = np.empty((n, 3))
    for i in range(n):
        R, pl = _mdh_step(dh[i, 0], dh[i, 1], dh[i, 2], q[i] + dh[i, 3])
        Rs[i] = R
        ps[i] = pl

    # Spatial inertia of each link about its own frame origin, (angular, linear).
    Ic = np.zeros((n, 6, 6))
    for i in range(n):
        m = masses[i]
        c = coms[i]
        ctil = np.zeros((3, 3))
        ctil[0, 1] = -c[2]
        ctil[0, 2] = c[1]
        ctil[1, 0] = c[2]
        ctil[1, 2] = -c[0]
        ctil[2, 0] = -c[1]
        ctil[2, 1] = c[0]
        Ibar = inertias[i] + m * (ctil @ ctil.T)
        for r in range(3):
            for s in range(3):
                Ic[i, r, s] = Ibar[r, s]
                Ic[i, r, 3 + s] = m * ctil[r, s]
                Ic[i, 3 + r, s] = m * ctil.T[r, s]
            Ic[i, 3 + r, 3 + r] = m

    # Composite accumulation toward the base. For the child->parent motion map
    # E = [[R,0],[px R, R]], inertia transforms as G I E^-1 with the force map
    # G = [[R, px R],[0, R]].
    for i in range(n - 1, 0, -1):
        R = Rs[i]
        pl = ps[i]
        ptil = np.zeros((3, 3))
        ptil[0, 1] = -pl[2]
        ptil[0, 2] = pl[1]
        ptil[1, 0] = pl[2]
        ptil[1, 2] = -pl[0]
        ptil[2, 0] = -pl[1]
        ptil[2, 1] = pl[0]
        pR = ptil @ R
        G = np.zeros((6, 6))
        Einv = np.zeros((6, 6))
        Rt = R.T
        nRtp = -(Rt @ ptil)
        for r in range(3):
            for s in range(3):
                G[r, s] = R[r, s]
                G[r, 3 + s] = pR[r, s]
                G[3 + r, 3 + s] = R[r, s]
                Einv[r, s] = Rt[r, s]
                Einv[3 + r, s] = nRtp[r, s]
                Einv[3 + r, 3 + s] = Rt[r, s]
        Ic[i - 1] = Ic[i - 1] + G @ (Ic[i] @ Einv)

    M = np.zeros((n, n))
    for i in range(n - 1, -1, -1):
        F = Ic[i][:, 2].copy()
        M[i, i] = F[2]
        for j in range(i, 0, -1):
            R = Rs[j]
            pl = ps[j]
            Fa = np.empty(3)
            Fl = np.empty(3)
            for k in range(3):
                Fa[k] = F[k]
                Fl[k] = F[3 + k]
            RFl = R @ Fl
            Fa_new = R @ Fa + _cross(pl, RFl)
            for k in range(3):
                F[k] = Fa_new[k]
                F[3 + k] = RFl[k]
            M[i, j - 1] = F[2]
            M[j - 1, i] = F[2]
    return M
