"""Pure-Python kernels for the planar 3-link plant.

Mirrors the compiled extension `_kernels_cy` function for function; the
backend module picks one implementation at import time.  All functions take
and return numpy float64 arrays.

Packed arm parameter layout (14 floats):
    [l1, l2, l3, m1, m2, m3, I1, I2, I3, b1, b2, b3, gx, gy]
lengths (m), masses (kg), inertias about the proximal joint (kg m^2),
viscous joint damping (N m s/rad) and the gravity vector (m/s^2).
Each link's center of mass sits at mid-length.
"""

import math

import numpy as np

BACKEND_NAME = "pure"

# surface variant codes shared with the compiled kernel
SURF_FLAT = 0
SURF_SLOPE = 1
SURF_STEP = 2
SURF_ARC = 3

_HUGE_COND = 1e308


def _rnea(c, s, w, wd, arm, with_gravity):
    """Planar recursive Newton-Euler pass for the 3-link chain.

    c, s: cos/sin of the absolute link angles; w, wd: absolute angular
    velocities/accelerations.  Returns the joint torques that realize the
    motion (gravity load included when with_gravity).
    """
    l1, l2, l3 = arm[0], arm[1], arm[2]
    m = (arm[3], arm[4], arm[5])
    # inertia about the COM from the inertia about the joint
    ic = (
        arm[6] - arm[3] * (0.5 * l1) ** 2,
        arm[7] - arm[4] * (0.5 * l2) ** 2,
        arm[8] - arm[5] * (0.5 * l3) ** 2,
    )
    lengths = (l1, l2, l3)

    apx = -arm[12] if with_gravity else 0.0
    apy = -arm[13] if with_gravity else 0.0

    rcx = [0.0] * 3
    rcy = [0.0] * 3
    lx = [0.0] * 3
    ly = [0.0] * 3
    acx = [0.0] * 3
    acy = [0.0] * 3
    for i in range(3):
        li = lengths[i]
        ux, uy = c[i], s[i]
        rcx[i] = 0.5 * li * ux
        rcy[i] = 0.5 * li * uy
        lx[i] = li * ux
        ly[i] = li * uy
        w2 = w[i] * w[i]
        acx[i] = apx - wd[i] * rcy[i] - w2 * rcx[i]
        acy[i] = apy + wd[i] * rcx[i] - w2 * rcy[i]
        apx = apx - wd[i] * ly[i] - w2 * lx[i]
        apy = apy + wd[i] * lx[i] - w2 * ly[i]

    tau = [0.0] * 3
    fx_child = 0.0
    fy_child = 0.0
    n_child = 0.0
    for i in (2, 1, 0):
        fx_tot = m[i] * acx[i]
        fy_tot = m[i] * acy[i]
        n_i = (
            ic[i] * wd[i]
            + n_child
            + rcx[i] * fy_tot
            - rcy[i] * fx_tot
            + lx[i] * fy_child
            - ly[i] * fx_child
        )
        fx_child += fx_tot
        fy_child += fy_tot
        n_child = n_i
        tau[i] = n_i
    return tau


def dyn_terms(q, qd, arm):
    """Joint-space dynamics terms and end-effector kinematics at (q, qd).

    Returns (M, cvec, gvec, J, x, xd, jdqd): mass matrix, velocity-product
    torque, gravity torque, 3x3 task Jacobian for (px, py, theta),
    end-effector pose, twist, and the Jdot*qd acceleration bias.
    """
    l1, l2, l3 = arm[0], arm[1], arm[2]
    t1 = q[0]
    t2 = t1 + q[1]
    t3 = t2 + q[2]
    c = (math.cos(t1), math.cos(t2), math.cos(t3))
    s = (math.sin(t1), math.sin(t2), math.sin(t3))
    w1 = qd[0]
    w2 = w1 + qd[1]
    w3 = w2 + qd[2]
    w = (w1, w2, w3)

    a1x, a1y = l1 * c[0], l1 * s[0]
    a2x, a2y = l2 * c[1], l2 * s[1]
    a3x, a3y = l3 * c[2], l3 * s[2]
    px = a1x + a2x + a3x
    py = a1y + a2y + a3y
    x = np.array([px, py, t3])

    J = np.array(
        [
            [-(a1y + a2y + a3y), -(a2y + a3y), -a3y],
            [a1x + a2x + a3x, a2x + a3x, a3x],
            [1.0, 1.0, 1.0],
        ]
    )
    vx = -(a1y * w1 + a2y * w2 + a3y * w3)
    vy = a1x * w1 + a2x * w2 + a3x * w3
    xd = np.array([vx, vy, w3])
    jdqd = np.array(
        [
            -(a1x * w1 * w1 + a2x * w2 * w2 + a3x * w3 * w3),
            -(a1y * w1 * w1 + a2y * w2 * w2 + a3y * w3 * w3),
            0.0,
        ]
    )

    zero = (0.0, 0.0, 0.0)
    gvec = np.array(_rnea(c, s, zero, zero, arm, True))
    cvec = np.array(_rnea(c, s, w, zero, arm, False))
    M = np.empty((3, 3))
    for j in range(3):
        wd = [0.0, 0.0, 0.0]
        for i in range(j, 3):
            wd[i] = 1.0
        M[:, j] = _rnea(c, s, zero, tuple(wd), arm, False)
    return M, cvec, gvec, J, x, xd, jdqd


def operational_space(M, cvec, gvec, J, jdqd):
    """Task-space projections of the joint-space dynamics.

    Returns (lam, jbar, mu, p, lam_pos, jbar_pos, cond): the 3x3 task
    inertia, its dynamically consistent inverse Jacobian, velocity-product
    and gravity task forces, the same pair for the 2-D position block, and
    a Frobenius-norm condition estimate of J.  An exactly singular Jacobian
    yields zero-filled matrices and a huge condition estimate.
    """
    mi = np.linalg.inv(M)
    mijt = mi @ J.T
    a = J @ mijt
    jp = J[:2]
    mijpt = mi @ jp.T
    ap = jp @ mijpt
    try:
        lam = np.linalg.inv(a)
        lam_pos = np.linalg.inv(ap)
    except np.linalg.LinAlgError:
        return (
            np.zeros((3, 3)),
            np.zeros((3, 3)),
            np.zeros(3),
            np.zeros(3),
            np.zeros((2, 2)),
            np.zeros((3, 2)),
            _HUGE_COND,
        )
    jbar = mijt @ lam
    mu = jbar.T @ cvec - lam @ jdqd
    p = jbar.T @ gvec
    jbar_pos = mijpt @ lam_pos

    det = np.linalg.det(J)
    if det == 0.0 or not math.isfinite(det):
        cond = _HUGE_COND
    else:
        jinv = np.linalg.inv(J)
        cond = math.sqrt(float(np.sum(J * J)) * float(np.sum(jinv * jinv)))
    return lam, jbar, mu, p, lam_pos, jbar_pos, cond


def surface_query(code, sp, px, py):
    """Signed distance and outward unit normal of a surface at (px, py).

    Negative distance means penetration.  Returns (dist, nx, ny); a
    degenerate query (arc center) returns (nan, 0, 0).
    """
    if code == SURF_FLAT:
        return py - sp[0], 0.0, 1.0
    if code == SURF_SLOPE:
        sa = math.sin(sp[0])
        ca = math.cos(sp[0])
        return -sa * px + ca * (py - sp[1]), -sa, ca
    if code == SURF_STEP:
        low, high, xs = sp[0], sp[1], sp[2]
        d1 = py - low
        dx = xs - px
        dy = py - high
        if dx > 0.0 and dy > 0.0:
            d2 = math.hypot(dx, dy)
            n2x, n2y = -dx / d2, dy / d2
        elif dx > 0.0:
            d2, n2x, n2y = dx, -1.0, 0.0
        elif dy > 0.0:
            d2, n2x, n2y = dy, 0.0, 1.0
        else:
            if dx > dy:
                d2, n2x, n2y = dx, -1.0, 0.0
            else:
                d2, n2x, n2y = dy, 0.0, 1.0
        if d1 <= d2:
            return d1, 0.0, 1.0
        return d2, n2x, n2y
    if code == SURF_ARC:
        ex = px - sp[0]
        ey = py - sp[1]
        rho = math.hypot(ex, ey)
        if rho == 0.0:
            return math.nan, 0.0, 0.0
        if sp[3] != 0.0:
            return rho - sp[2], ex / rho, ey / rho
        return sp[2] - rho, -ex / rho, -ey / rho
    raise ValueError(f"unknown surface code {code}")


def contact_force_local(dist, vn, vt, kn, dn, mu, veps):
    """Penalty contact force in the surface frame.

    Returns (ft, fn): regularized Coulomb tangential and unilateral normal
    components of the force exerted on the body touching the surface.
    """
    if dist >= 0.0:
        return 0.0, 0.0
    fn = -kn * dist - dn * vn
    if fn <= 0.0:
        return 0.0, 0.0
    ft = -mu * fn * vt / math.sqrt(vt * vt + veps * veps)
    return ft, fn


def step_semi_implicit(q, qd, M, cvec, gvec, J, tau, f_task, arm, dt):
    """One semi-implicit Euler step of the joint-space plant.

    f_task is the external task wrench applied at the end-effector; joint
    viscous damping comes from the packed arm parameters.  Velocity updates
    first, then position.
    """
    rhs = tau + J.T @ f_task - cvec - gvec
    rhs[0] -= arm[9] * qd[0]
    rhs[1] -= arm[10] * qd[1]
    rhs[2] -= arm[11] * qd[2]
    qdd = np.linalg.solve(M, rhs)
    qd2 = qd + dt * qdd
    q2 = q + dt * qd2
    return q2, qd2
