"""Compiled guidance-field and Dormand-Prince 5(4) kernels.

Everything here works on plain arrays so that numba can compile it. The
wavefunction enters through ``ephi`` (e^{i phi_n}), the integer arrays
``n1``, ``n2``, ``shell`` (= n1^2 + n2^2) and ``omega`` = E_unit / hbar.
"""
import math

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_FAILED = 1
STATUS_ESCAPED = 2
STATUS_CAPACITY = 3

# |psi| below NODE_FLOOR * (2/L) counts as sitting on a node
NODE_FLOOR = 1e-12
WALL_SLACK = 1e-12
# clamped points are placed this far (relative to L) inside the wall
WALL_INSET = 1e-15
MAX_REJECTIONS = 40
# accepted-step budget per trajectory; node-orbiting paths can need millions
MAX_STEPS = 20_000

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# quartic dense output (Shampine's c6 choice)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


@njit(cache=True, nogil=True)
def _cpow(z, n):
    r = 1.0 + 0.0j
    b = z
    while n > 0:
        if n & 1:
            r *= b
        b *= b
        n >>= 1
    return r


@njit(cache=True, nogil=True)
def guidance(t, x1, x2, ephi, n1, n2, shell, omega, hbar_m, L0, v):
    """Velocity at (t, x) plus |sum_n c_n sin sin| / sqrt(N), i.e. |psi| in units of 2/L."""
    L = L0 + v * t
    tau = L0 * t / L
    k = math.pi / L
    z1 = complex(math.cos(k * x1), math.sin(k * x1))
    z2 = complex(math.cos(k * x2), math.sin(k * x2))
    w = complex(math.cos(omega * tau), -math.sin(omega * tau))
    den = 0.0j
    num1 = 0.0j
    num2 = 0.0j
    for i in range(ephi.shape[0]):
        a = ephi[i] * _cpow(w, shell[i])
        p1 = _cpow(z1, n1[i])
        p2 = _cpow(z2, n2[i])
        s1 = p1.imag
        s2 = p2.imag
        den += a * (s1 * s2)
        num1 += a * (n1[i] * p1.real * s2)
        num2 += a * (n2[i] * s1 * p2.real)
    amp = abs(den) / math.sqrt(ephi.shape[0])
    if amp == 0.0:
        return 0.0, 0.0, 0.0
    v1 = x1 * v / L + hbar_m * k * (num1 / den).imag
    v2 = x2 * v / L + hbar_m * k * (num2 / den).imag
    return v1, v2, amp


@njit(cache=True, nogil=True)
def guidance_many(t, x, ephi, n1, n2, shell, omega, hbar_m, L0, v):
    out = np.empty((x.shape[0], 3))
    for i in range(x.shape[0]):
        a, b, c = guidance(t, x[i, 0], x[i, 1], ephi, n1, n2, shell, omega, hbar_m, L0, v)
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
    return out


@njit(cache=True, nogil=True)
def _stage_ok(t, x1, x2, amp, L0, v):
    L = L0 + v * t
    lo = -WALL_SLACK * L
    hi = L * (1.0 + WALL_SLACK)
    return amp >= NODE_FLOOR and lo <= x1 <= hi and lo <= x2 <= hi


@njit(cache=True, nogil=True)
def _try_step(t, y, h, K, ynew, tol, ephi, n1, n2, shell, omega, hbar_m, L0, v):
    """One Dormand-Prince trial step from (t, y) with K[0] already holding f(t, y).

    Fills K (7x2) and ynew. Returns the scaled error norm, or -1.0 if a stage
    landed on a node, outside the box, or produced a non-finite value.
    """
    for s in range(1, 6):
        d0 = 0.0
        d1 = 0.0
        for j in range(s):
            d0 += _A[s, j] * K[j, 0]
            d1 += _A[s, j] * K[j, 1]
        ts = t + _C[s] * h
        xs0 = y[0] + h * d0
        xs1 = y[1] + h * d1
        a, b, amp = guidance(ts, xs0, xs1, ephi, n1, n2, shell, omega, hbar_m, L0, v)
        if not _stage_ok(ts, xs0, xs1, amp, L0, v):
            return -1.0
        K[s, 0] = a
        K[s, 1] = b
    d0 = 0.0
    d1 = 0.0
    for j in range(6):
        d0 += _B[j] * K[j, 0]
        d1 += _B[j] * K[j, 1]
    ynew[0] = y[0] + h * d0
    ynew[1] = y[1] + h * d1
    a, b, amp = guidance(t + h, ynew[0], ynew[1], ephi, n1, n2, shell, omega, hbar_m, L0, v)
    if not _stage_ok(t + h, ynew[0], ynew[1], amp, L0, v):
        return -1.0
    K[6, 0] = a
    K[6, 1] = b
    e0 = 0.0
    e1 = 0.0
    for j in range(7):
        e0 += _E[j] * K[j, 0]
        e1 += _E[j] * K[j, 1]
    sc0 = tol * (1.0 + max(abs(y[0]), abs(ynew[0])))
    sc1 = tol * (1.0 + max(abs(y[1]), abs(ynew[1])))
    err = math.sqrt(0.5 * ((h * e0 / sc0) ** 2 + (h * e1 / sc1) ** 2))
    if not math.isfinite(err):
        return -1.0
    return err


@njit(cache=True, nogil=True)
def _dense_coeffs(K, Q):
    for c in range(2):
        for j in range(4):
            acc = 0.0
            for s in range(7):
                acc += K[s, c] * _P[s, j]
            Q[c, j] = acc


@njit(cache=True, nogil=True)
def _dense_eval(y_old, h, Q, theta, out):
    for c in range(2):
        p = theta
        acc = 0.0
        for j in range(4):
            acc += Q[c, j] * p
            p *= theta
        out[c] = y_old[c] + h * acc


@njit(cache=True, nogil=True)
def _initial_step(t, y, f, t_end, tol):
    d0 = math.sqrt(0.5 * ((y[0] / (1.0 + abs(y[0]))) ** 2 + (y[1] / (1.0 + abs(y[1]))) ** 2)) / tol
    d1 = math.sqrt(0.5 * ((f[0] / (1.0 + abs(y[0]))) ** 2 + (f[1] / (1.0 + abs(y[1]))) ** 2)) / tol
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    return min(h, abs(t_end - t))


@njit(cache=True, nogil=True)
def _clamp(t, y, L0, v):
    """Pull roundoff excursions back inside the box; False if beyond the slack."""
    L = L0 + v * t
    for c in range(2):
        if y[c] < 0.0:
            if y[c] < -WALL_SLACK * L:
                return False
            y[c] = WALL_INSET * L
        elif y[c] > L:
            if y[c] > L * (1.0 + WALL_SLACK):
                return False
            y[c] = L * (1.0 - WALL_INSET)
    return True


@njit(cache=True, nogil=True)
def integrate_one(x0, t0, t_out, tol, max_steps, ephi, n1, n2, shell, omega, hbar_m, L0, v, out, record, rec_t,
                  rec_y, rec_q):
    """Integrate one trajectory from (t0, x0) through the monotone times ``t_out``.

    Positions at ``t_out`` are written to ``out`` via dense output. When
    ``record`` is set, accepted nodes and dense-output coefficients go to
    ``rec_t`` / ``rec_y`` / ``rec_q`` (node 0 is the initial state).

    Returns (status, n_accepted, t_last, y_last0, y_last1).
    """
    M = t_out.shape[0]
    y = np.empty(2)
    y[0] = x0[0]
    y[1] = x0[1]
    t = t0
    K = np.empty((7, 2))
    Q = np.empty((2, 4))
    ynew = np.empty(2)
    if record:
        rec_t[0] = t
        rec_y[0, 0] = y[0]
        rec_y[0, 1] = y[1]
    j = 0
    while j < M and t_out[j] == t0:
        out[j, 0] = y[0]
        out[j, 1] = y[1]
        j += 1
    if j == M:
        return STATUS_OK, 0, t, y[0], y[1]
    t_end = t_out[M - 1]
    direction = 1.0 if t_end > t0 else -1.0
    a, b, amp = guidance(t, y[0], y[1], ephi, n1, n2, shell, omega, hbar_m, L0, v)
    if not _stage_ok(t, y[0], y[1], amp, L0, v):
        return STATUS_FAILED, 0, t, y[0], y[1]
    K[0, 0] = a
    K[0, 1] = b
    habs = _initial_step(t, y, K[0], t_end, tol)
    n_acc = 0
    rejections = 0
    while j < M:
        remaining = abs(t_end - t)
        if habs >= remaining:
            habs = remaining
        min_step = 1e-14 * max(1.0, abs(t))
        if habs < min_step:
            return STATUS_FAILED, n_acc, t, y[0], y[1]
        h = direction * habs
        last = habs == remaining
        err = _try_step(t, y, h, K, ynew, tol, ephi, n1, n2, shell, omega, hbar_m, L0, v)
        if err < 0.0 or err > 1.0:
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                return STATUS_FAILED, n_acc, t, y[0], y[1]
            if err < 0.0:
                habs *= 0.5
            else:
                habs *= max(0.2, 0.9 * err ** -0.2)
            continue
        if n_acc >= max_steps:
            return STATUS_FAILED, n_acc, t, y[0], y[1]
        rejections = 0
        t_new = t_end if last else t + h
        _dense_coeffs(K, Q)
        while j < M and direction * (t_out[j] - t_new) <= 0.0:
            theta = (t_out[j] - t) / h
            _dense_eval(y, h, Q, theta, out[j])
            j += 1
        if record:
            if n_acc + 1 >= rec_t.shape[0]:
                return STATUS_CAPACITY, n_acc, t, y[0], y[1]
            for c in range(2):
                for q in range(4):
                    rec_q[n_acc, c, q] = Q[c, q]
        t = t_new
        y[0] = ynew[0]
        y[1] = ynew[1]
        if not _clamp(t, y, L0, v):
            return STATUS_ESCAPED, n_acc, t, y[0], y[1]
        n_acc += 1
        if record:
            rec_t[n_acc] = t
            rec_y[n_acc, 0] = y[0]
            rec_y[n_acc, 1] = y[1]
        K[0, 0] = K[6, 0]
        K[0, 1] = K[6, 1]
        if err == 0.0:
            habs *= 5.0
        else:
            habs *= min(5.0, max(0.2, 0.9 * err ** -0.2))
    return STATUS_OK, n_acc, t, y[0], y[1]


@njit(cache=True, nogil=True)
def integrate_batch(x0, t0, t_out, tol, max_steps, ephi, n1, n2, shell, omega, hbar_m, L0, v):
    """Endpoint-only integration of many trajectories.

    Returns positions (P, M, 2), status (P,), accepted steps (P,) and the last
    good state (P, 3) as (t, x1, x2).
    """
    P = x0.shape[0]
    M = t_out.shape[0]
    out = np.full((P, M, 2), np.nan)
    status = np.zeros(P, dtype=np.int64)
    steps = np.zeros(P, dtype=np.int64)
    last = np.empty((P, 3))
    dummy_t = np.empty(1)
    dummy_y = np.empty((1, 2))
    dummy_q = np.empty((1, 2, 4))
    for i in range(P):
        st, na, tl, y0, y1 = integrate_one(x0[i], t0, t_out, tol, max_steps, ephi, n1, n2, shell, omega,
                                           hbar_m, L0, v, out[i], False, dummy_t, dummy_y, dummy_q)
        status[i] = st
        steps[i] = na
        last[i, 0] = tl
        last[i, 1] = y0
        last[i, 2] = y1
    return out, status, steps, last
