# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the planar 3-link plant.

Function-for-function mirror of _kernels_py (which documents the
contracts); this version hand-rolls the small linear algebra so the 1 kHz
plant loop stays out of the Python interpreter.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, isfinite, NAN

cnp.import_array()

BACKEND_NAME = "cython"

SURF_FLAT = 0
SURF_SLOPE = 1
SURF_STEP = 2
SURF_ARC = 3

cdef double _HUGE_COND = 1e308


cdef bint _inv3(double[3][3] a, double[3][3] out) nogil:
    cdef double c00 = a[1][1] * a[2][2] - a[1][2] * a[2][1]
    cdef double c01 = a[1][2] * a[2][0] - a[1][0] * a[2][2]
    cdef double c02 = a[1][0] * a[2][1] - a[1][1] * a[2][0]
    cdef double det = a[0][0] * c00 + a[0][1] * c01 + a[0][2] * c02
    if det == 0.0 or not isfinite(det):
        return False
    cdef double inv_det = 1.0 / det
    out[0][0] = c00 * inv_det
    out[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) * inv_det
    out[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) * inv_det
    out[1][0] = c01 * inv_det
    out[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) * inv_det
    out[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) * inv_det
    out[2][0] = c02 * inv_det
    out[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) * inv_det
    out[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) * inv_det
    return True


cdef void _rnea(double* c, double* s, double* w, double* wd,
                double[::1] arm, bint with_gravity, double* tau) nogil:
    cdef double l1 = arm[0], l2 = arm[1], l3 = arm[2]
    cdef double m[3]
    cdef double ic[3]
    cdef double lengths[3]
    m[0] = arm[3]; m[1] = arm[4]; m[2] = arm[5]
    ic[0] = arm[6] - arm[3] * (0.5 * l1) * (0.5 * l1)
    ic[1] = arm[7] - arm[4] * (0.5 * l2) * (0.5 * l2)
    ic[2] = arm[8] - arm[5] * (0.5 * l3) * (0.5 * l3)
    lengths[0] = l1; lengths[1] = l2; lengths[2] = l3

    cdef double apx = -arm[12] if with_gravity else 0.0
    cdef double apy = -arm[13] if with_gravity else 0.0

    cdef double rcx[3]
    cdef double rcy[3]
    cdef double lx[3]
    cdef double ly[3]
    cdef double acx[3]
    cdef double acy[3]
    cdef int i
    cdef double li, ux, uy, w2
    for i in range(3):
        li = lengths[i]
        ux = c[i]; uy = s[i]
        rcx[i] = 0.5 * li * ux
        rcy[i] = 0.5 * li * uy
        lx[i] = li * ux
        ly[i] = li * uy
        w2 = w[i] * w[i]
        acx[i] = apx - wd[i] * rcy[i] - w2 * rcx[i]
        acy[i] = apy + wd[i] * rcx[i] - w2 * rcy[i]
        apx = apx - wd[i] * ly[i] - w2 * lx[i]
        apy = apy + wd[i] * lx[i] - w2 * ly[i]

    cdef double fx_child = 0.0, fy_child = 0.0, n_child = 0.0
    cdef double fx_tot, fy_tot, n_i
    for i in range(2, -1, -1):
        fx_tot = m[i] * acx[i]
        fy_tot = m[i] * acy[i]
        n_i = (ic[i] * wd[i] + n_child
               + rcx[i] * fy_tot - rcy[i] * fx_tot
               + lx[i] * fy_child - ly[i] * fx_child)
        fx_child += fx_tot
        fy_child += fy_tot
        n_child = n_i
        tau[i] = n_i


def dyn_terms(q_in, qd_in, arm_in):
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] qd = np.ascontiguousarray(qd_in, dtype=np.float64)
    cdef double[::1] arm = np.ascontiguousarray(arm_in, dtype=np.float64)

    cdef double l1 = arm[0], l2 = arm[1], l3 = arm[2]
    cdef double t1 = q[0]
    cdef double t2 = t1 + q[1]
    cdef double t3 = t2 + q[2]
    cdef double c[3]
    cdef double s[3]
    c[0] = cos(t1); c[1] = cos(t2); c[2] = cos(t3)
    s[0] = sin(t1); s[1] = sin(t2); s[2] = sin(t3)
    cdef double w[3]
    w[0] = qd[0]; w[1] = w[0] + qd[1]; w[2] = w[1] + qd[2]

    cdef double a1x = l1 * c[0], a1y = l1 * s[0]
    cdef double a2x = l2 * c[1], a2y = l2 * s[1]
    cdef double a3x = l3 * c[2], a3y = l3 * s[2]

    M_arr = np.empty((3, 3))
    c_arr = np.empty(3)
    g_arr = np.empty(3)
    J_arr = np.empty((3, 3))
    x_arr = np.empty(3)
    xd_arr = np.empty(3)
    jdqd_arr = np.empty(3)
    cdef double[:, ::1] M = M_arr
    cdef double[::1] cv = c_arr
    cdef double[::1] gv = g_arr
    cdef double[:, ::1] J = J_arr
    cdef double[::1] x = x_arr
    cdef double[::1] xd = xd_arr
    cdef double[::1] jdqd = jdqd_arr

    x[0] = a1x + a2x + a3x
    x[1] = a1y + a2y + a3y
    x[2] = t3

    J[0][0] = -(a1y + a2y + a3y); J[0][1] = -(a2y + a3y); J[0][2] = -a3y
    J[1][0] = a1x + a2x + a3x;    J[1][1] = a2x + a3x;    J[1][2] = a3x
    J[2][0] = 1.0; J[2][1] = 1.0; J[2][2] = 1.0

    xd[0] = -(a1y * w[0] + a2y * w[1] + a3y * w[2])
    xd[1] = a1x * w[0] + a2x * w[1] + a3x * w[2]
    xd[2] = w[2]
    jdqd[0] = -(a1x * w[0] * w[0] + a2x * w[1] * w[1] + a3x * w[2] * w[2])
    jdqd[1] = -(a1y * w[0] * w[0] + a2y * w[1] * w[1] + a3y * w[2] * w[2])
    jdqd[2] = 0.0

    cdef double zero[3]
    cdef double wd[3]
    cdef double tau[3]
    zero[0] = 0.0; zero[1] = 0.0; zero[2] = 0.0

    _rnea(c, s, zero, zero, arm, True, tau)
    gv[0] = tau[0]; gv[1] = tau[1]; gv[2] = tau[2]
    _rnea(c, s, w, zero, arm, False, tau)
    cv[0] = tau[0]; cv[1] = tau[1]; cv[2] = tau[2]

    cdef int j, i
    for j in range(3):
        for i in range(3):
            wd[i] = 1.0 if i >= j else 0.0
        _rnea(c, s, zero, wd, arm, False, tau)
        M[0][j] = tau[0]; M[1][j] = tau[1]; M[2][j] = tau[2]

    return M_arr, c_arr, g_arr, J_arr, x_arr, xd_arr, jdqd_arr


def operational_space(M_in, c_in, g_in, J_in, jdqd_in):
    cdef double[:, ::1] Mv = np.ascontiguousarray(M_in, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef double[:, ::1] Jv = np.ascontiguousarray(J_in, dtype=np.float64)
    cdef double[::1] jdqd = np.ascontiguousarray(jdqd_in, dtype=np.float64)

    cdef double M[3][3]
    cdef double J[3][3]
    cdef double mi[3][3]
    cdef int i, j, k
    for i in range(3):
        for j in range(3):
            M[i][j] = Mv[i, j]
            J[i][j] = Jv[i, j]
    if not _inv3(M, mi):
        return _zero_out()

    # mijt = M^-1 J^T ; a = J mijt
    cdef double mijt[3][3]
    cdef double a[3][3]
    cdef double acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += mi[i][k] * J[j][k]
            mijt[i][j] = acc
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += J[i][k] * mijt[k][j]
            a[i][j] = acc

    cdef double lam[3][3]
    if not _inv3(a, lam):
        return _zero_out()

    # 2x2 position block
    cdef double ap00 = a[0][0], ap01 = a[0][1], ap10 = a[1][0], ap11 = a[1][1]
    cdef double detp = ap00 * ap11 - ap01 * ap10
    if detp == 0.0 or not isfinite(detp):
        return _zero_out()
    cdef double lp00 = ap11 / detp, lp01 = -ap01 / detp
    cdef double lp10 = -ap10 / detp, lp11 = ap00 / detp

    lam_arr = np.empty((3, 3))
    jbar_arr = np.empty((3, 3))
    mu_arr = np.empty(3)
    p_arr = np.empty(3)
    lam_pos_arr = np.empty((2, 2))
    jbar_pos_arr = np.empty((3, 2))
    cdef double[:, ::1] lam_o = lam_arr
    cdef double[:, ::1] jbar_o = jbar_arr
    cdef double[::1] mu_o = mu_arr
    cdef double[::1] p_o = p_arr
    cdef double[:, ::1] lam_pos_o = lam_pos_arr
    cdef double[:, ::1] jbar_pos_o = jbar_pos_arr

    cdef double jbar[3][3]
    for i in range(3):
        for j in range(3):
            acc = 0.0
            for k in range(3):
                acc += mijt[i][k] * lam[k][j]
            jbar[i][j] = acc
            lam_o[i][j] = lam[i][j]
            jbar_o[i][j] = jbar[i][j]

    for i in range(3):
        mu_o[i] = (jbar[0][i] * cv[0] + jbar[1][i] * cv[1] + jbar[2][i] * cv[2]
                   - (lam[i][0] * jdqd[0] + lam[i][1] * jdqd[1] + lam[i][2] * jdqd[2]))
        p_o[i] = jbar[0][i] * gv[0] + jbar[1][i] * gv[1] + jbar[2][i] * gv[2]

    lam_pos_o[0][0] = lp00; lam_pos_o[0][1] = lp01
    lam_pos_o[1][0] = lp10; lam_pos_o[1][1] = lp11
    for i in range(3):
        jbar_pos_o[i][0] = mijt[i][0] * lp00 + mijt[i][1] * lp10
        jbar_pos_o[i][1] = mijt[i][0] * lp01 + mijt[i][1] * lp11

    # Frobenius-norm condition estimate of J
    cdef double jinv[3][3]
    cdef double cond
    if not _inv3(J, jinv):
        cond = _HUGE_COND
    else:
        cond = 0.0
        acc = 0.0
        for i in range(3):
            for j in range(3):
                cond += J[i][j] * J[i][j]
                acc += jinv[i][j] * jinv[i][j]
        cond = sqrt(cond * acc)
    return lam_arr, jbar_arr, mu_arr, p_arr, lam_pos_arr, jbar_pos_arr, cond


def _zero_out():
    return (
        np.zeros((3, 3)),
        np.zeros((3, 3)),
        np.zeros(3),
        np.zeros(3),
        np.zeros((2, 2)),
        np.zeros((3, 2)),
        _HUGE_COND,
    )


def surface_query(int code, sp_in, double px, double py):
    cdef double[::1] sp = np.ascontiguousarray(sp_in, dtype=np.float64)
    cdef double sa, ca, low, high, xs, d1, dx, dy, d2, n2x, n2y, ex, ey, rho
    if code == SURF_FLAT:
        return py - sp[0], 0.0, 1.0
    if code == SURF_SLOPE:
        sa = sin(sp[0])
        ca = cos(sp[0])
        return -sa * px + ca * (py - sp[1]), -sa, ca
    if code == SURF_STEP:
        low = sp[0]; high = sp[1]; xs = sp[2]
        d1 = py - low
        dx = xs - px
        dy = py - high
        if dx > 0.0 and dy > 0.0:
            d2 = sqrt(dx * dx + dy * dy)
            n2x = -dx / d2; n2y = dy / d2
        elif dx > 0.0:
            d2 = dx; n2x = -1.0; n2y = 0.0
        elif dy > 0.0:
            d2 = dy; n2x = 0.0; n2y = 1.0
        else:
            if dx > dy:
                d2 = dx; n2x = -1.0; n2y = 0.0
            else:
                d2 = dy; n2x = 0.0; n2y = 1.0
        if d1 <= d2:
            return d1, 0.0, 1.0
        return d2, n2x, n2y
    if code == SURF_ARC:
        ex = px - sp[0]
        ey = py - sp[1]
        rho = sqrt(ex * ex + ey * ey)
        if rho == 0.0:
            return NAN, 0.0, 0.0
        if sp[3] != 0.0:
            return rho - sp[2], ex / rho, ey / rho
        return sp[2] - rho, -ex / rho, -ey / rho
    raise ValueError(f"unknown surface code {code}")


def contact_force_local(double dist, double vn, double vt, double kn,
                        double dn, double mu, double veps):
    if dist >= 0.0:
        return 0.0, 0.0
    cdef double fn = -kn * dist - dn * vn
    if fn <= 0.0:
        return 0.0, 0.0
    cdef double ft = -mu * fn * vt / sqrt(vt * vt + veps * veps)
    return ft, fn


def step_semi_implicit(q_in, qd_in, M_in, c_in, g_in, J_in, tau_in, f_in, arm_in, double dt):
    cdef double[::1] q = np.ascontiguousarray(q_in, dtype=np.float64)
    cdef double[::1] qd = np.ascontiguousarray(qd_in, dtype=np.float64)
    cdef double[:, ::1] Mv = np.ascontiguousarray(M_in, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g_in, dtype=np.float64)
    cdef double[:, ::1] Jv = np.ascontiguousarray(J_in, dtype=np.float64)
    cdef double[::1] tau = np.ascontiguousarray(tau_in, dtype=np.float64)
    cdef double[::1] f = np.ascontiguousarray(f_in, dtype=np.float64)
    cdef double[::1] arm = np.ascontiguousarray(arm_in, dtype=np.float64)

    cdef double M[3][3]
    cdef double mi[3][3]
    cdef double rhs[3]
    cdef int i, j
    for i in range(3):
        for j in range(3):
            M[i][j] = Mv[i, j]
    for i in range(3):
        rhs[i] = (tau[i]
                  + Jv[0, i] * f[0] + Jv[1, i] * f[1] + Jv[2, i] * f[2]
                  - cv[i] - gv[i] - arm[9 + i] * qd[i])
    if not _inv3(M, mi):
        raise ValueError("mass matrix is singular")

    q2_arr = np.empty(3)
    qd2_arr = np.empty(3)
    cdef double[::1] q2 = q2_arr
    cdef double[::1] qd2 = qd2_arr
    cdef double qdd
    for i in range(3):
        qdd = mi[i][0] * rhs[0] + mi[i][1] * rhs[1] + mi[i][2] * rhs[2]
        qd2[i] = qd[i] + dt * qdd
        q2[i] = q[i] + dt * qd2[i]
    return q2_arr, qd2_arr
