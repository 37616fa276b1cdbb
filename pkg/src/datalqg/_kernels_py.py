"""Pure-Python fallback for the compiled kernels in ``_kernels.pyx``.

Formulas and operation order match the compiled module exactly so both
backends produce bit-identical trajectories; only speed differs. Scalar
arithmetic on Python floats goes through the same libm calls as the C code.
"""

import math

import numpy as np

KIND_CARTPOLE = 0
KIND_CART2POLE = 1
KIND_ACROBOT = 2

_NX = (4, 6, 4)

MAX_NX = 8


def state_dim(kind):
    return _NX[kind]


def _deriv_cartpole(p, x, u):
    M, m, L, g = p[0], p[1], p[2], p[3]
    th, vel, om = x[1], x[2], x[3]
    F = u[0]
    s = math.sin(th)
    c = math.cos(th)
    denom = M + m * s * s
    xdd = (F + m * s * (L * om * om - g * c)) / denom
    thdd = (g * s - xdd * c) / L
    return [vel, om, xdd, thdd]


def _deriv_cart2pole(p, x, u):
    M, m1, m2, L1, L2, g = p[0], p[1], p[2], p[3], p[4], p[5]
    th1, th2, vel, om1, om2 = x[1], x[2], x[3], x[4], x[5]
    F = u[0]
    s1, c1 = math.sin(th1), math.cos(th1)
    s2, c2 = math.sin(th2), math.cos(th2)
    s12, c12 = math.sin(th1 - th2), math.cos(th1 - th2)
    m11 = M + m1 + m2
    m12 = (m1 + m2) * L1 * c1
    m13 = m2 * L2 * c2
    m22 = (m1 + m2) * L1 * L1
    m23 = m2 * L1 * L2 * c12
    m33 = m2 * L2 * L2
    b1 = F + (m1 + m2) * L1 * s1 * om1 * om1 + m2 * L2 * s2 * om2 * om2
    b2 = (m1 + m2) * g * L1 * s1 - m2 * L1 * L2 * s12 * om2 * om2
    b3 = m2 * g * L2 * s2 + m2 * L1 * L2 * s12 * om1 * om1
    f21 = m12 / m11
    f31 = m13 / m11
    a22 = m22 - f21 * m12
    a23 = m23 - f21 * m13
    a33 = m33 - f31 * m13
    r2 = b2 - f21 * b1
    r3 = b3 - f31 * b1
    f32 = a23 / a22
    a33b = a33 - f32 * a23
    r3b = r3 - f32 * r2
    q3 = r3b / a33b
    q2 = (r2 - a23 * q3) / a22
    q1 = (b1 - m12 * q2 - m13 * q3) / m11
    return [vel, om1, om2, q1, q2, q3]


def _deriv_acrobot(p, x, u):
    m1, m2, l1, l2, mu1, mu2, g = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    th1, th2, om1, om2 = x[0], x[1], x[2], x[3]
    tau = u[0]
    s1 = math.sin(th1)
    s2, c2 = math.sin(th2), math.cos(th2)
    s12 = math.sin(th1 + th2)
    d11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2)
    d12 = m2 * (l2 * l2 + l1 * l2 * c2)
    d22 = m2 * l2 * l2
    hh = -m2 * l1 * l2 * s2
    g1 = -(m1 + m2) * g * l1 * s1 - m2 * g * l2 * s12
    g2 = -m2 * g * l2 * s12
    rhs1 = -mu1 * om1 - (hh * om2 * om2 + 2.0 * hh * om1 * om2) - g1
    rhs2 = tau - mu2 * om2 + hh * om1 * om1 - g2
    det = d11 * d22 - d12 * d12
    return [om1, om2, (d22 * rhs1 - d12 * rhs2) / det,
            (d11 * rhs2 - d12 * rhs1) / det]


_DERIVS = (_deriv_cartpole, _deriv_cart2pole, _deriv_acrobot)


def _rk4(kind, nx, p, x, u, dt):
    """Advance the state list x in place by one RK4 step."""
    f = _DERIVS[kind]
    hd = 0.5 * dt
    s6 = dt / 6.0
    k1 = f(p, x, u)
    xt = [x[i] + hd * k1[i] for i in range(nx)]
    k2 = f(p, xt, u)
    xt = [x[i] + hd * k2[i] for i in range(nx)]
    k3 = f(p, xt, u)
    xt = [x[i] + dt * k3[i] for i in range(nx)]
    k4 = f(p, xt, u)
    for i in range(nx):
        x[i] = x[i] + s6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def _quad(q, d, n):
    total = 0.0
    for i in range(n):
        row = 0.0
        qi = q[i]
        for j in range(n):
            row = row + qi[j] * d[j]
        total = total + d[i] * row
    return total


def deriv(kind, params, x, u):
    p = [float(v) for v in params]
    xs = [float(v) for v in x]
    us = [float(v) for v in u]
    return np.array(_DERIVS[kind](p, xs, us))


def step(kind, params, x, u, dt):
    nx = _NX[kind]
    p = [float(v) for v in params]
    xs = [float(v) for v in x]
    us = [float(v) for v in u]
    _rk4(kind, nx, p, xs, us, dt)
    return np.array(xs)


def rollout(kind, params, x0, controls, dt):
    nx = _NX[kind]
    p = [float(v) for v in params]
    controls = np.asarray(controls, dtype=float)
    N = controls.shape[0]
    states = np.empty((N + 1, nx))
    x = [float(v) for v in x0]
    states[0] = x
    bad = -1
    for k in range(N):
        u = [float(v) for v in controls[k]]
        _rk4(kind, nx, p, x, u, dt)
        states[k + 1] = x
        if bad < 0 and not all(math.isfinite(v) for v in x):
            bad = k
    return states, bad


def rollout_batch(kind, params, x0, controls, dt, num_threads=1):
    controls = np.asarray(controls, dtype=float)
    M = controls.shape[0]
    out = np.empty((M, controls.shape[1] + 1, _NX[kind]))
    for m in range(M):
        out[m], _ = rollout(kind, params, x0, controls[m], dt)
    return out


def _cost(kind, p, x0, U, N, nu, dt, qinc, r, qn, target, nx, ip, jp, h):
    x = list(x0)
    J = 0.0
    for k in range(N):
        u = list(U[k])
        if k == ip:
            u[jp] = u[jp] + h
        d = [x[i] - target[i] for i in range(nx)]
        J = J + _quad(qinc, d, nx) + 0.5 * _quad(r, u, nu)
        _rk4(kind, nx, p, x, u, dt)
    d = [x[i] - target[i] for i in range(nx)]
    J = J + _quad(qn, d, nx)
    return J


def _unpack_cost_args(params, x0, controls, q_inc, r, q_term, target):
    p = [float(v) for v in params]
    x = [float(v) for v in x0]
    U = [[float(v) for v in row] for row in np.asarray(controls, dtype=float)]
    qi = [[float(v) for v in row] for row in np.asarray(q_inc, dtype=float)]
    rr = [[float(v) for v in row] for row in np.asarray(r, dtype=float)]
    qt = [[float(v) for v in row] for row in np.asarray(q_term, dtype=float)]
    t = [float(v) for v in target]
    return p, x, U, qi, rr, qt, t


def rollout_cost(kind, params, x0, controls, dt, q_inc, r, q_term, target):
    nx = _NX[kind]
    controls = np.asarray(controls, dtype=float)
    N, nu = controls.shape
    p, x, U, qi, rr, qt, t = _unpack_cost_args(params, x0, controls, q_inc, r,
                                               q_term, target)
    return _cost(kind, p, x, U, N, nu, dt, qi, rr, qt, t, nx, -1, 0, 0.0)


def fd_gradient(kind, params, x0, controls, dt, q_inc, r, q_term, target, h,
                num_threads=1):
    nx = _NX[kind]
    controls = np.asarray(controls, dtype=float)
    N, nu = controls.shape
    p, x, U, qi, rr, qt, t = _unpack_cost_args(params, x0, controls, q_inc, r,
                                               q_term, target)
    J0 = _cost(kind, p, x, U, N, nu, dt, qi, rr, qt, t, nx, -1, 0, 0.0)
    grad = np.empty((N, nu))
    for i in range(N):
        for j in range(nu):
            Jp = _cost(kind, p, x, U, N, nu, dt, qi, rr, qt, t, nx, i, j, h)
            grad[i, j] = (Jp - J0) / h
    return grad, J0
