# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled needle-insertion integrator.

Mirrors ``_simcore_py.simulate`` operation for operation; see ``_layout``
for the packed parameter vector.
"""

import numpy as np

from libc.math cimport atan2, cos, sin, sqrt

cdef enum:
    NP = 35
    NCOL = 9
    TCOL = 14
cdef double PI = 3.141592653589793

PARAM_COUNT = NP
NOISE_COLUMNS = NCOL
TRAJ_COLUMNS = TCOL
BACKEND = "cython"


cdef inline void rv_to_mat(const double* rv, double* m) noexcept nogil:
    cdef double x = rv[0], y = rv[1], z = rv[2]
    cdef double th2 = x * x + y * y + z * z
    cdef double th = sqrt(th2)
    cdef double a, b
    if th < 1e-8:
        a = 1.0
        b = 0.5
    else:
        a = sin(th) / th
        b = (1.0 - cos(th)) / th2
    m[0] = 1.0 - b * (y * y + z * z)
    m[1] = -a * z + b * x * y
    m[2] = a * y + b * x * z
    m[3] = a * z + b * x * y
    m[4] = 1.0 - b * (x * x + z * z)
    m[5] = -a * x + b * y * z
    m[6] = -a * y + b * x * z
    m[7] = a * x + b * y * z
    m[8] = 1.0 - b * (x * x + y * y)


cdef inline void mat_to_rv(const double* m, double* out) noexcept nogil:
    cdef double wx = 0.5 * (m[7] - m[5])
    cdef double wy = 0.5 * (m[2] - m[6])
    cdef double wz = 0.5 * (m[3] - m[1])
    cdef double s = sqrt(wx * wx + wy * wy + wz * wz)
    cdef double c = 0.5 * (m[0] + m[4] + m[8] - 1.0)
    cdef double th = atan2(s, c)
    cdef double f, b0, b1, b2, ax, ay, az, n
    if th < 1e-8:
        f = 1.0 + th * th / 6.0
    elif PI - th > 1e-3:
        f = th / s
    else:
        b0 = m[0] - c
        b1 = m[4] - c
        b2 = m[8] - c
        if b0 >= b1 and b0 >= b2:
            ax = b0
            ay = 0.5 * (m[3] + m[1])
            az = 0.5 * (m[6] + m[2])
        elif b1 >= b2:
            ax = 0.5 * (m[1] + m[3])
            ay = b1
            az = 0.5 * (m[7] + m[5])
        else:
            ax = 0.5 * (m[2] + m[6])
            ay = 0.5 * (m[5] + m[7])
            az = b2
        n = sqrt(ax * ax + ay * ay + az * az)
        if ax * wx + ay * wy + az * wz < 0.0:
            n = -n
        out[0] = ax / n * th
        out[1] = ay / n * th
        out[2] = az / n * th
        return
    out[0] = wx * f
    out[1] = wy * f
    out[2] = wz * f


cdef inline void rel_rotvec(const double* ra, const double* rb, double* out) noexcept nogil:
    # rotvec of ra @ rb^T
    cdef double e[9]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            e[3 * i + j] = ra[3 * i] * rb[3 * j] + ra[3 * i + 1] * rb[3 * j + 1] + ra[3 * i + 2] * rb[3 * j + 2]
    mat_to_rv(e, out)


def simulate(double[::1] prm not None, double[::1] x0 not None, double[:, ::1] noise not None, int record_every=0):
    """Integrate one trial; returns (final[13], t_press, trajectory[k, 14])."""
    if prm.shape[0] != NP or x0.shape[0] != 6 or noise.shape[1] != NCOL:
        raise ValueError("bad kernel argument shapes")
    cdef double dt = prm[0]
    cdef int ce = <int>(prm[1] + 0.5)
    cdef double m_lin = prm[2], m_rot = prm[3]
    cdef double kh = prm[4], bh = prm[5], khr = prm[6], bhr = prm[7]
    cdef bint guided = prm[8] != 0.0
    cdef double k_lat = prm[9], k_ax = prm[10], k_rot = prm[11]
    cdef double d_lat = prm[12], d_ax = prm[13], d_rot = prm[14]
    cdef double gpre[3]
    cdef double gfin[3]
    cdef double grot[3]
    cdef int i, j, k
    for j in range(3):
        gpre[j] = prm[15 + j]
        gfin[j] = prm[18 + j]
        grot[j] = prm[21 + j]
    cdef double tr_lin = prm[24], tr_rot = prm[25], alpha = prm[26]
    cdef double dr_lin = prm[27], dr_rot = prm[28]
    cdef double a_min = prm[29], a_max = prm[30], thr_lat = prm[31], thr_ang = prm[32]
    cdef double t_ins = prm[33], t_settle = prm[34]
    cdef double beta = sqrt(1.0 - alpha * alpha)
    cdef double dt_ctrl = dt * ce
    cdef double drift_gain = sqrt(dt_ctrl / t_ins)

    cdef double p[3]
    cdef double r[3]
    cdef double v[3]
    cdef double w[3]
    for j in range(3):
        p[j] = x0[j]
        r[j] = x0[3 + j]
        v[j] = 0.0
        w[j] = 0.0

    cdef double rg0[9]
    rv_to_mat(grot, rg0)
    cdef double ux = rg0[2], uy = rg0[5], uz = rg0[8]  # perceived insertion axis

    cdef double ylin[3]
    cdef double yrot[2]
    cdef double dlin[2]
    cdef double drot[2]
    dlin[0] = dlin[1] = drot[0] = drot[1] = 0.0
    cdef double gp[3]
    cdef double gr[3]
    cdef double rg[9]
    cdef double rc[9]
    cdef double rl[9]
    cdef double pl[3]
    cdef double e[3]
    cdef double f[3]
    cdef double tq[3]
    cdef int phase = 0
    cdef double t = 0.0, t_press = -1.0
    cdef double tau, s, dx, dy, dz, along, lat, nx, ny, nz, cx, cy, cz, ang
    cdef Py_ssize_t n_rows = noise.shape[0]
    cdef Py_ssize_t n_steps = n_rows * ce

    cdef Py_ssize_t n_rec = 0
    cdef Py_ssize_t cap = 0
    if record_every > 0:
        cap = n_steps // record_every + 2
    traj_arr = np.zeros((cap, TCOL), dtype=np.float64)
    cdef double[:, ::1] traj = traj_arr

    if record_every > 0:
        traj[0, 0] = 0.0
        for j in range(3):
            traj[0, 1 + j] = p[j]
            traj[0, 4 + j] = r[j]
        n_rec = 1

    for i in range(n_steps):
        if i % ce == 0:
            k = i // ce
            if k == 0:
                for j in range(3):
                    ylin[j] = tr_lin * noise[0, j]
                yrot[0] = tr_rot * noise[0, 3]
                yrot[1] = tr_rot * noise[0, 4]
            else:
                for j in range(3):
                    ylin[j] = alpha * ylin[j] + beta * tr_lin * noise[k, j]
                yrot[0] = alpha * yrot[0] + beta * tr_rot * noise[k, 3]
                yrot[1] = alpha * yrot[1] + beta * tr_rot * noise[k, 4]

            if phase == 0 and t >= a_min:
                dx = p[0] - gpre[0]
                dy = p[1] - gpre[1]
                dz = p[2] - gpre[2]
                along = dx * ux + dy * uy + dz * uz
                dx -= along * ux
                dy -= along * uy
                dz -= along * uz
                lat = sqrt(dx * dx + dy * dy + dz * dz)
                rv_to_mat(r, rc)
                nx = rc[2]
                ny = rc[5]
                nz = rc[8]
                cx = ny * uz - nz * uy
                cy = nz * ux - nx * uz
                cz = nx * uy - ny * ux
                ang = atan2(sqrt(cx * cx + cy * cy + cz * cz), nx * ux + ny * uy + nz * uz)
                if (lat < thr_lat and ang < thr_ang) or t >= a_max:
                    phase = 1
                    t_press = t
                    for j in range(3):
                        pl[j] = p[j]
                    rv_to_mat(r, rl)
            elif phase == 0 and t >= a_max:
                phase = 1
                t_press = t
                for j in range(3):
                    pl[j] = p[j]
                rv_to_mat(r, rl)

            if phase == 1:
                if t >= t_press + t_ins + t_settle:
                    break
                tau = (t - t_press) / t_ins
                if tau < 1.0:
                    dlin[0] += dr_lin * drift_gain * noise[k, 5]
                    dlin[1] += dr_lin * drift_gain * noise[k, 6]
                    drot[0] += dr_rot * drift_gain * noise[k, 7]
                    drot[1] += dr_rot * drift_gain * noise[k, 8]
                    s = tau * tau * (3.0 - 2.0 * tau)
                else:
                    s = 1.0
                for j in range(3):
                    gp[j] = gpre[j] + s * (gfin[j] - gpre[j]) + ylin[j]
                gp[0] += dlin[0]
                gp[1] += dlin[1]
                gr[0] = grot[0] + yrot[0] + drot[0]
                gr[1] = grot[1] + yrot[1] + drot[1]
                gr[2] = grot[2]
            else:
                for j in range(3):
                    gp[j] = gpre[j] + ylin[j]
                gr[0] = grot[0] + yrot[0]
                gr[1] = grot[1] + yrot[1]
                gr[2] = grot[2]
            rv_to_mat(gr, rg)

        rv_to_mat(r, rc)
        # operator hand: spring-damper toward the (perturbed) goal
        for j in range(3):
            f[j] = 1e-3 * (kh * (gp[j] - p[j]) - bh * v[j])
        rel_rotvec(rg, rc, e)
        for j in range(3):
            tq[j] = khr * e[j] - bhr * w[j]
        if guided and phase == 1:
            f[0] += 1e-3 * (k_lat * (pl[0] - p[0]) - d_lat * v[0])
            f[1] += 1e-3 * (k_lat * (pl[1] - p[1]) - d_lat * v[1])
            f[2] += 1e-3 * (k_ax * (pl[2] - p[2]) - d_ax * v[2])
            rel_rotvec(rl, rc, e)
            for j in range(3):
                tq[j] += k_rot * e[j] - d_rot * w[j]
        for j in range(3):
            v[j] += 1e3 * f[j] / m_lin * dt
            p[j] += v[j] * dt
            w[j] += tq[j] / m_rot * dt
            r[j] += w[j] * dt
        t = (i + 1) * dt

        if record_every > 0 and (i + 1) % record_every == 0 and n_rec < cap:
            traj[n_rec, 0] = t
            for j in range(3):
                traj[n_rec, 1 + j] = p[j]
                traj[n_rec, 4 + j] = r[j]
                traj[n_rec, 7 + j] = v[j]
                traj[n_rec, 10 + j] = w[j]
            traj[n_rec, 13] = phase
            n_rec += 1

    final = np.empty(13, dtype=np.float64)
    for j in range(3):
        final[j] = p[j]
        final[3 + j] = r[j]
        final[6 + j] = v[j]
        final[9 + j] = w[j]
    final[12] = t
    return final, t_press, traj_arr[:n_rec].copy()
