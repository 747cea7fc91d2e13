"""Compiled RK4 flow of the closed-loop two-link robots between two samples.

Mirrors ``models.forward_dynamics`` and ``dcea.control_torque``; the
estimator flow inside a segment is the exact drift eps(s) = eps+ + s ups.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _accel(p, q1, q2, qd1, qd2, tau1, tau2):
    m1, m2, l1, l2, I1, I2, g = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    lc1 = l1 / 2.0
    lc2 = l2 / 2.0
    a = I1 + I2 + m1 * lc1**2 + m2 * (l1**2 + lc2**2)
    b = m2 * l1 * lc2
    d = I2 + m2 * lc2**2
    c2 = math.cos(q2)
    M11 = a + 2.0 * b * c2
    M12 = d + b * c2
    M22 = d
    hc = -b * math.sin(q2)
    cq1 = hc * qd2 * qd1 + hc * (qd1 + qd2) * qd2
    cq2 = -hc * qd1 * qd1
    G2 = g * m2 * lc2 * math.cos(q1 + q2)
    G1 = g * (m1 * lc1 + m2 * l1) * math.cos(q1) + G2
    r1 = tau1 - cq1 - G1
    r2 = tau2 - cq2 - G2
    det = M11 * M22 - M12 * M12
    return (M22 * r1 - M12 * r2) / det, (M11 * r2 - M12 * r1) / det


@njit(cache=True)
def _rhs(p, Kp, Kd, e1, e2, u1, u2, dA, dw, dph, t, y, out):
    q1, q2, qd1, qd2 = y[0], y[1], y[2], y[3]
    x1 = e1 - q1
    x2 = e2 - q2
    v1 = u1 - qd1
    v2 = u2 - qd2
    tau1 = Kp[0, 0] * x1 + Kp[0, 1] * x2 + Kd[0, 0] * v1 + Kd[0, 1] * v2
    tau2 = Kp[1, 0] * x1 + Kp[1, 1] * x2 + Kd[1, 0] * v1 + Kd[1, 1] * v2
    tau1 += dA[0] * math.sin(dw[0] * t + dph[0])
    tau2 += dA[1] * math.sin(dw[1] * t + dph[1])
    a1, a2 = _accel(p, q1, q2, qd1, qd2, tau1, tau2)
    out[0] = qd1
    out[1] = qd2
    out[2] = a1
    out[3] = a2


@njit(cache=True)
def integrate_segment(q, qd, eps, ups, t_start, seg_len, nsub, params, Kp, Kd,
                      dA, dw, dph, stride, rec_t, rec_q, rec_qd, rec_eps, rec_at,
                      guard):
    """Advance q, qd in place over ``nsub`` RK4 substeps spanning ``seg_len``.

    Interior states at every ``stride``-th substep (excluding the last) are
    written to the record buffers starting at row ``rec_at``.  Returns
    (status, next_row); status is the 1-based substep at which the guard
    tripped, or 0.
    """
    n = q.shape[0]
    y = np.empty(4)
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    row = rec_at
    for j in range(nsub):
        s0 = seg_len * j / nsub
        s1 = seg_len * (j + 1) / nsub
        dt = s1 - s0
        sm = s0 + 0.5 * dt
        bad = False
        for i in range(n):
            p = params[i]
            y[0] = q[i, 0]
            y[1] = q[i, 1]
            y[2] = qd[i, 0]
            y[3] = qd[i, 1]
            e1, e2 = eps[i, 0], eps[i, 1]
            u1, u2 = ups[i, 0], ups[i, 1]
            _rhs(p, Kp[i], Kd[i], e1 + s0 * u1, e2 + s0 * u2, u1, u2,
                 dA, dw, dph, t_start + s0, y, k1)
            for c in range(4):
                tmp[c] = y[c] + 0.5 * dt * k1[c]
            _rhs(p, Kp[i], Kd[i], e1 + sm * u1, e2 + sm * u2, u1, u2,
                 dA, dw, dph, t_start + sm, tmp, k2)
            for c in range(4):
                tmp[c] = y[c] + 0.5 * dt * k2[c]
            _rhs(p, Kp[i], Kd[i], e1 + sm * u1, e2 + sm * u2, u1, u2,
                 dA, dw, dph, t_start + sm, tmp, k3)
            for c in range(4):
                tmp[c] = y[c] + dt * k3[c]
            _rhs(p, Kp[i], Kd[i], e1 + s1 * u1, e2 + s1 * u2, u1, u2,
                 dA, dw, dph, t_start + s1, tmp, k4)
            for c in range(4):
                y[c] = y[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
                if not (abs(y[c]) <= guard):
                    bad = True
            q[i, 0] = y[0]
            q[i, 1] = y[1]
            qd[i, 0] = y[2]
            qd[i, 1] = y[3]
        if bad:
            return j + 1, row
        if (j + 1) % stride == 0 and j + 1 < nsub:
            rec_t[row] = t_start + s1
            for i in range(n):
                for c in range(2):
                    rec_q[row, i, c] = q[i, c]
                    rec_qd[row, i, c] = qd[i, c]
                    rec_eps[row, i, c] = eps[i, c] + s1 * ups[i, c]
            row += 1
    return 0, row
