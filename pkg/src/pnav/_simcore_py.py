"""Pure-Python reference integrator, a line-by-line twin of ``_simcore.pyx``."""

import math

import numpy as np

from ._layout import N_PARAMS, NOISE_COLUMNS, TRAJ_COLUMNS

BACKEND = "python"


def _rv_to_mat(rv):
    x, y, z = rv
    th2 = x * x + y * y + z * z
    th = math.sqrt(th2)
    if th < 1e-8:
        a, b = 1.0, 0.5
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    return [
        1.0 - b * (y * y + z * z),
        -a * z + b * x * y,
        a * y + b * x * z,
        a * z + b * x * y,
        1.0 - b * (x * x + z * z),
        -a * x + b * y * z,
        -a * y + b * x * z,
        a * x + b * y * z,
        1.0 - b * (x * x + y * y),
    ]


def _mat_to_rv(m):
    wx = 0.5 * (m[7] - m[5])
    wy = 0.5 * (m[2] - m[6])
    wz = 0.5 * (m[3] - m[1])
    s = math.sqrt(wx * wx + wy * wy + wz * wz)
    c = 0.5 * (m[0] + m[4] + m[8] - 1.0)
    th = math.atan2(s, c)
    if th < 1e-8:
        f = 1.0 + th * th / 6.0
    elif math.pi - th > 1e-3:
        f = th / s
    else:
        b0, b1, b2 = m[0] - c, m[4] - c, m[8] - c
        if b0 >= b1 and b0 >= b2:
            ax, ay, az = b0, 0.5 * (m[3] + m[1]), 0.5 * (m[6] + m[2])
        elif b1 >= b2:
            ax, ay, az = 0.5 * (m[1] + m[3]), b1, 0.5 * (m[7] + m[5])
        else:
            ax, ay, az = 0.5 * (m[2] + m[6]), 0.5 * (m[5] + m[7]), b2
        n = math.sqrt(ax * ax + ay * ay + az * az)
        if ax * wx + ay * wy + az * wz < 0.0:
            n = -n
        return [ax / n * th, ay / n * th, az / n * th]
    return [wx * f, wy * f, wz * f]


def _rel_rotvec(ra, rb):
    # rotvec of ra @ rb^T
    e = [0.0] * 9
    for i in range(3):
        for j in range(3):
            e[3 * i + j] = ra[3 * i] * rb[3 * j] + ra[3 * i + 1] * rb[3 * j + 1] + ra[3 * i + 2] * rb[3 * j + 2]
    return _mat_to_rv(e)


def simulate(prm, x0, noise, record_every=0):
    """Integrate one trial; returns (final[13], t_press, trajectory[k, 14])."""
    prm = [float(v) for v in np.asarray(prm, dtype=np.float64)]
    x0 = np.asarray(x0, dtype=np.float64)
    noise = np.ascontiguousarray(noise, dtype=np.float64)
    if len(prm) != N_PARAMS or x0.shape != (6,) or noise.ndim != 2 or noise.shape[1] != NOISE_COLUMNS:
        raise ValueError("bad kernel argument shapes")
    dt = prm[0]
    ce = int(prm[1] + 0.5)
    m_lin, m_rot = prm[2], prm[3]
    kh, bh, khr, bhr = prm[4], prm[5], prm[6], prm[7]
    guided = prm[8] != 0.0
    k_lat, k_ax, k_rot = prm[9], prm[10], prm[11]
    d_lat, d_ax, d_rot = prm[12], prm[13], prm[14]
    gpre, gfin, grot = prm[15:18], prm[18:21], prm[21:24]
    tr_lin, tr_rot, alpha = prm[24], prm[25], prm[26]
    dr_lin, dr_rot = prm[27], prm[28]
    a_min, a_max, thr_lat, thr_ang = prm[29], prm[30], prm[31], prm[32]
    t_ins, t_settle = prm[33], prm[34]
    beta = math.sqrt(1.0 - alpha * alpha)
    drift_gain = math.sqrt(dt * ce / t_ins)
    nz_rows = noise.tolist()

    p = [float(x0[0]), float(x0[1]), float(x0[2])]
    r = [float(x0[3]), float(x0[4]), float(x0[5])]
    v = [0.0, 0.0, 0.0]
    w = [0.0, 0.0, 0.0]
    rg0 = _rv_to_mat(grot)
    ux, uy, uz = rg0[2], rg0[5], rg0[8]

    ylin = [0.0, 0.0, 0.0]
    yrot = [0.0, 0.0]
    dlin = [0.0, 0.0]
    drot = [0.0, 0.0]
    gp = [0.0, 0.0, 0.0]
    rg = rl = None
    pl = [0.0, 0.0, 0.0]
    phase = 0
    t = 0.0
    t_press = -1.0
    n_steps = len(nz_rows) * ce

    rows = []
    if record_every > 0:
        rows.append([0.0, *p, *r] + [0.0] * 7)

    for i in range(n_steps):
        if i % ce == 0:
            k = i // ce
            nk = nz_rows[k]
            if k == 0:
                for j in range(3):
                    ylin[j] = tr_lin * nk[j]
                yrot[0] = tr_rot * nk[3]
                yrot[1] = tr_rot * nk[4]
            else:
                for j in range(3):
                    ylin[j] = alpha * ylin[j] + beta * tr_lin * nk[j]
                yrot[0] = alpha * yrot[0] + beta * tr_rot * nk[3]
                yrot[1] = alpha * yrot[1] + beta * tr_rot * nk[4]

            if phase == 0 and t >= a_min:
                dx = p[0] - gpre[0]
                dy = p[1] - gpre[1]
                dz = p[2] - gpre[2]
                along = dx * ux + dy * uy + dz * uz
                dx -= along * ux
                dy -= along * uy
                dz -= along * uz
                lat = math.sqrt(dx * dx + dy * dy + dz * dz)
                rc = _rv_to_mat(r)
                nx, ny, nz = rc[2], rc[5], rc[8]
                cx = ny * uz - nz * uy
                cy = nz * ux - nx * uz
                cz = nx * uy - ny * ux
                ang = math.atan2(math.sqrt(cx * cx + cy * cy + cz * cz), nx * ux + ny * uy + nz * uz)
                if (lat < thr_lat and ang < thr_ang) or t >= a_max:
                    phase = 1
                    t_press = t
                    pl = list(p)
                    rl = _rv_to_mat(r)
            elif phase == 0 and t >= a_max:
                phase = 1
                t_press = t
                pl = list(p)
                rl = _rv_to_mat(r)

            if phase == 1:
                if t >= t_press + t_ins + t_settle:
                    break
                tau = (t - t_press) / t_ins
                if tau < 1.0:
                    dlin[0] += dr_lin * drift_gain * nk[5]
                    dlin[1] += dr_lin * drift_gain * nk[6]
                    drot[0] += dr_rot * drift_gain * nk[7]
                    drot[1] += dr_rot * drift_gain * nk[8]
                    s = tau * tau * (3.0 - 2.0 * tau)
                else:
                    s = 1.0
                for j in range(3):
                    gp[j] = gpre[j] + s * (gfin[j] - gpre[j]) + ylin[j]
                gp[0] += dlin[0]
                gp[1] += dlin[1]
                gr = [grot[0] + yrot[0] + drot[0], grot[1] + yrot[1] + drot[1], grot[2]]
            else:
                for j in range(3):
                    gp[j] = gpre[j] + ylin[j]
                gr = [grot[0] + yrot[0], grot[1] + yrot[1], grot[2]]
            rg = _rv_to_mat(gr)

        rc = _rv_to_mat(r)
        f = [1e-3 * (kh * (gp[j] - p[j]) - bh * v[j]) for j in range(3)]
        e = _rel_rotvec(rg, rc)
        tq = [khr * e[j] - bhr * w[j] for j in range(3)]
        if guided and phase == 1:
            f[0] += 1e-3 * (k_lat * (pl[0] - p[0]) - d_lat * v[0])
            f[1] += 1e-3 * (k_lat * (pl[1] - p[1]) - d_lat * v[1])
            f[2] += 1e-3 * (k_ax * (pl[2] - p[2]) - d_ax * v[2])
            e = _rel_rotvec(rl, rc)
            for j in range(3):
                tq[j] += k_rot * e[j] - d_rot * w[j]
        for j in range(3):
            v[j] += 1e3 * f[j] / m_lin * dt
            p[j] += v[j] * dt
            w[j] += tq[j] / m_rot * dt
            r[j] += w[j] * dt
        t = (i + 1) * dt

        if record_every > 0 and (i + 1) % record_every == 0:
            rows.append([t, *p, *r, *v, *w, float(phase)])

    final = np.array([*p, *r, *v, *w, t], dtype=np.float64)
    traj = np.array(rows, dtype=np.float64).reshape(-1, TRAJ_COLUMNS)
    return final, t_press, traj
