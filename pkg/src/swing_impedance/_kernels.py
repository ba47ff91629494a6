"""Compiled kernels for the swing-leg model and its forward integration.

Everything in here works on flat float arrays so numba can compile it.
The public, typed wrappers live in :mod:`swing_impedance.model` and
:mod:`swing_impedance.dynamics`.

Parameter vector layout (``P``)::

    0 cart mass   1-3 segment masses   4-6 segment inertias (about COM)
    7-9 lengths   10-12 COM offsets    13 interaction offset   14 gravity

Segment angles are measured from the downward vertical and grow clockwise
when the walking direction (+x) points to the right, so a segment's unit
vector is ``(-sin q, -cos q)``.
"""

import numpy as np
from numba import njit

N_PARAMS = 15

# Exogenous cubic-spline channel layout on the data grid
EXO_QREF = 0  # 4 channels: reference generalized coordinates
EXO_PELVIS_REF = 4
EXO_PELVIS_MODEL = 5
EXO_THIGH_P = 6  # experimental perturbed thigh angle (Jacobian of F_p)
EXO_THIGH_U = 7  # experimental unperturbed thigh angle (Jacobian of F_u)
N_EXO = 8

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array(
    [
        [0.0, 0.0, 0.0, 0.0, 0.0],
        [1 / 5, 0.0, 0.0, 0.0, 0.0],
        [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
        [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    ]
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array(
    [-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40]
)

# How the device force enters: not at all, through Jacobians on the
# experimental kinematics, or at the simulated leg (data generation).
FORCE_NONE = 0
FORCE_EXPERIMENTAL = 1
FORCE_MODEL_STATE = 2

SIM_OK = 0
SIM_STEP_UNDERFLOW = 1
SIM_NONFINITE = 2
SIM_TOO_MANY_STEPS = 3


@njit(cache=True, nogil=True)
def _coupling(P):
    """Return (b, h): first and second mass moments of the chain.

    ``a[i, j]`` is the lever from joint j to the COM of segment i.
    """
    a = np.zeros((3, 3))
    for i in range(3):
        for j in range(i):
            a[i, j] = P[7 + j]
        a[i, i] = P[10 + i]
    b = np.zeros(3)
    h = np.zeros((3, 3))
    for j in range(3):
        for i in range(3):
            b[j] += P[1 + i] * a[i, j]
        for k in range(3):
            for i in range(3):
                h[j, k] += P[1 + i] * a[i, j] * a[i, k]
    return b, h


@njit(cache=True, nogil=True)
def mass_matrix_k(P, q, out):
    b, h = _coupling(P)
    out[0, 0] = P[0] + P[1] + P[2] + P[3]
    for j in range(3):
        v = -b[j] * np.cos(q[1 + j])
        out[0, 1 + j] = v
        out[1 + j, 0] = v
        for k in range(3):
            out[1 + j, 1 + k] = h[j, k] * np.cos(q[1 + j] - q[1 + k])
        out[1 + j, 1 + j] += P[4 + j]


@njit(cache=True, nogil=True)
def bias_k(P, q, qd, C, G):
    b, h = _coupling(P)
    C[0] = 0.0
    G[0] = 0.0
    for j in range(3):
        C[0] += b[j] * np.sin(q[1 + j]) * qd[1 + j] ** 2
    for k in range(3):
        s = 0.0
        for j in range(3):
            s += h[k, j] * np.sin(q[1 + k] - q[1 + j]) * qd[1 + j] ** 2
        C[1 + k] = s
        G[1 + k] = -P[14] * b[k] * np.sin(q[1 + k])


@njit(cache=True, nogil=True)
def _solve_spd4(M, r, x):
    """Solve M x = r for a 4x4 SPD matrix by Cholesky."""
    L = np.zeros((4, 4))
    for i in range(4):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.zeros(4)
    for i in range(4):
        s = r[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    for i in range(3, -1, -1):
        s = z[i]
        for k in range(i + 1, 4):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]


@njit(cache=True, nogil=True)
def inverse_dynamics_k(P, q, qd, qdd):
    """Generalized forces M q'' + C - G, row-wise over samples."""
    n = q.shape[0]
    u = np.empty((n, 4))
    M = np.empty((4, 4))
    C = np.empty(4)
    G = np.empty(4)
    for s in range(n):
        mass_matrix_k(P, q[s], M)
        bias_k(P, q[s], qd[s], C, G)
        for i in range(4):
            acc = C[i] - G[i]
            for j in range(4):
                acc += M[i, j] * qdd[s, j]
            u[s, i] = acc
    return u


@njit(cache=True, nogil=True)
def _spline_eval(t0, dt, coef, t, ch):
    """Value and derivative of channel ``ch`` of a uniform-knot cubic."""
    nseg = coef.shape[1]
    idx = int(np.floor((t - t0) / dt))
    if idx < 0:
        idx = 0
    elif idx > nseg - 1:
        idx = nseg - 1
    x = t - (t0 + idx * dt)
    c0 = coef[0, idx, ch]
    c1 = coef[1, idx, ch]
    c2 = coef[2, idx, ch]
    c3 = coef[3, idx, ch]
    val = ((c0 * x + c1) * x + c2) * x + c3
    der = (3.0 * c0 * x + 2.0 * c1) * x + c2
    return val, der


@njit(cache=True, nogil=True)
def _linear_eval(t0, dt, samples, t, ch):
    n = samples.shape[0]
    pos = (t - t0) / dt
    idx = int(np.floor(pos))
    if idx < 0:
        return samples[0, ch]
    if idx >= n - 1:
        return samples[n - 1, ch]
    w = pos - idx
    return (1.0 - w) * samples[idx, ch] + w * samples[idx + 1, ch]


@njit(cache=True, nogil=True)
def rhs_k(t, y, P, kd, exo_t0, exo_dt, exo_c, uff_t0, uff_dt, uff_c,
          frc, use_force, dy, ufb):
    """State derivative of the impedance-controlled swing leg.

    ``frc`` columns are (Fp_x, Fp_y, Fu_x, Fu_y) on the exogenous grid.
    The applied feedback generalized force is written to ``ufb``.
    """
    q = y[:4]
    qd = y[4:]
    qr = np.empty(4)
    qrd = np.empty(4)
    for i in range(4):
        qr[i], qrd[i] = _spline_eval(exo_t0, exo_dt, exo_c, t, EXO_QREF + i)
    pr, prd = _spline_eval(exo_t0, exo_dt, exo_c, t, EXO_PELVIS_REF)
    pm, pmd = _spline_eval(exo_t0, exo_dt, exo_c, t, EXO_PELVIS_MODEL)

    # joint angle errors, model minus reference
    e0 = (pm - q[1]) - (pr - qr[1])
    e1 = (q[1] - q[2]) - (qr[1] - qr[2])
    e2 = (q[2] - q[3]) - (qr[2] - qr[3])
    r0 = (pmd - qd[1]) - (prd - qrd[1])
    r1 = (qd[1] - qd[2]) - (qrd[1] - qrd[2])
    r2 = (qd[2] - qd[3]) - (qrd[2] - qrd[3])
    t_hip = -kd[0] * e0 - kd[3] * r0
    t_knee = -kd[1] * e1 - kd[4] * r1
    t_ankle = -kd[2] * e2 - kd[5] * r2
    ufb[0] = 0.0
    ufb[1] = t_knee - t_hip
    ufb[2] = t_ankle - t_knee
    ufb[3] = -t_ankle

    M = np.empty((4, 4))
    C = np.empty(4)
    G = np.empty(4)
    mass_matrix_k(P, q, M)
    bias_k(P, q, qd, C, G)
    r = np.empty(4)
    for i in range(4):
        uff, _ = _spline_eval(uff_t0, uff_dt, uff_c, t, i)
        r[i] = -C[i] + G[i] + uff + ufb[i]
    if use_force != FORCE_NONE:
        d = P[13]
        fpx = _linear_eval(exo_t0, exo_dt, frc, t, 0)
        fpy = _linear_eval(exo_t0, exo_dt, frc, t, 1)
        if use_force == FORCE_MODEL_STATE:
            tp = q[1]
            fux = 0.0
            fuy = 0.0
            tu = 0.0
        else:
            tp, _ = _spline_eval(exo_t0, exo_dt, exo_c, t, EXO_THIGH_P)
            tu, _ = _spline_eval(exo_t0, exo_dt, exo_c, t, EXO_THIGH_U)
            fux = _linear_eval(exo_t0, exo_dt, frc, t, 2)
            fuy = _linear_eval(exo_t0, exo_dt, frc, t, 3)
        r[0] += fpx - fux
        r[1] += (-d * np.cos(tp) * fpx + d * np.sin(tp) * fpy) - (
            -d * np.cos(tu) * fux + d * np.sin(tu) * fuy
        )
    acc = np.empty(4)
    _solve_spd4(M, r, acc)
    for i in range(4):
        dy[i] = qd[i]
        dy[4 + i] = acc[i]


@njit(cache=True, nogil=True)
def simulate_k(P, kd, y0, t_out, exo_t0, exo_dt, exo_c, uff_t0, uff_dt,
               uff_c, frc, use_force, rtol, atol, max_steps):
    """Adaptive Dormand-Prince 5(4) integration landing on every ``t_out``.

    Exogenous signals have knots on the data grid, so landing on each
    output time keeps every step inside one smooth polynomial piece.

    Returns (states, feedback forces, status, accepted steps).
    """
    n = t_out.shape[0]
    Y = np.empty((n, 8))
    UFB = np.zeros((n, 4))
    y = y0.copy()
    Y[0] = y
    K = np.empty((7, 8))
    ytmp = np.empty(8)
    ynew = np.empty(8)
    ufb = np.empty(4)
    t = t_out[0]
    rhs_k(t, y, P, kd, exo_t0, exo_dt, exo_c, uff_t0, uff_dt, uff_c,
          frc, use_force, K[0], ufb)
    UFB[0] = ufb
    span = t_out[n - 1] - t_out[0]
    h_prop = min(1e-3, span / max(n - 1, 1)) if n > 1 else 0.0
    steps = 0
    for k in range(1, n):
        t_end = t_out[k]
        while t < t_end:
            hmin = 1e-13 * max(1.0, abs(t))
            clipped = t + h_prop >= t_end - hmin
            h = t_end - t if clipped else h_prop
            # stages
            for s in range(1, 6):
                for i in range(8):
                    acc = y[i]
                    for j in range(s):
                        acc += h * _A[s, j] * K[j, i]
                    ytmp[i] = acc
                rhs_k(t + _C[s] * h, ytmp, P, kd, exo_t0, exo_dt, exo_c,
                      uff_t0, uff_dt, uff_c, frc, use_force, K[s], ufb)
            for i in range(8):
                acc = y[i]
                for j in range(6):
                    acc += h * _B[j] * K[j, i]
                ynew[i] = acc
            rhs_k(t + h, ynew, P, kd, exo_t0, exo_dt, exo_c, uff_t0, uff_dt,
                  uff_c, frc, use_force, K[6], ufb)
            err = 0.0
            for i in range(8):
                e = 0.0
                for j in range(7):
                    e += _E[j] * K[j, i]
                sc = atol + rtol * max(abs(y[i]), abs(ynew[i]))
                err += (h * e / sc) ** 2
            err = np.sqrt(err / 8.0)
            if not np.isfinite(err):
                h_prop = 0.2 * h
                if h_prop < hmin:
                    return Y[:k], UFB[:k], SIM_NONFINITE, steps
                continue
            if err <= 1.0:
                t = t_end if clipped else t + h
                for i in range(8):
                    y[i] = ynew[i]
                    K[0, i] = K[6, i]
                steps += 1
                if steps > max_steps:
                    return Y[:k], UFB[:k], SIM_TOO_MANY_STEPS, steps
                fac = 10.0 if err == 0.0 else min(10.0, 0.9 * err ** -0.2)
                # a short landing step only ever shrinks the free step
                if not clipped or fac < 1.0:
                    h_prop = h * fac
            else:
                h_prop = h * max(0.2, 0.9 * err ** -0.2)
                if h_prop < hmin:
                    return Y[:k], UFB[:k], SIM_STEP_UNDERFLOW, steps
        for i in range(8):
            if not np.isfinite(y[i]):
                return Y[:k], UFB[:k], SIM_NONFINITE, steps
        Y[k] = y
        UFB[k] = ufb
    return Y, UFB, SIM_OK, steps
