# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled rollout, cost, and finite-difference kernels for the benchmark models.

This module mirrors ``_kernels_py`` exactly (same formulas, same operation
order) so that both backends produce bit-identical trajectories. Compiled
without -ffast-math and with -ffp-contract=off for that reason.
"""

import numpy as np

cimport numpy as cnp
from cython.parallel import prange
from libc.math cimport cos, isfinite, sin

KIND_CARTPOLE = 0
KIND_CART2POLE = 1
KIND_ACROBOT = 2

# state sizes per benchmark kind
cdef int _NX[3]
_NX[0] = 4
_NX[1] = 6
_NX[2] = 4

MAX_NX = 8


def state_dim(int kind):
    return _NX[kind]


cdef void _deriv_cartpole(const double* p, const double* x, const double* u,
                          double* out) noexcept nogil:
    # p = [M, m, L, g]; x = [pos, theta, vel, omega]; theta = 0 upright
    cdef double M = p[0], m = p[1], L = p[2], g = p[3]
    cdef double th = x[1], vel = x[2], om = x[3]
    cdef double F = u[0]
    cdef double s = sin(th)
    cdef double c = cos(th)
    cdef double denom = M + m * s * s
    cdef double xdd = (F + m * s * (L * om * om - g * c)) / denom
    cdef double thdd = (g * s - xdd * c) / L
    out[0] = vel
    out[1] = om
    out[2] = xdd
    out[3] = thdd


cdef void _deriv_cart2pole(const double* p, const double* x, const double* u,
                           double* out) noexcept nogil:
    # p = [M, m1, m2, L1, L2, g]; x = [pos, th1, th2, vel, om1, om2]
    # angles are absolute, 0 upright; point masses at the link tips
    cdef double M = p[0], m1 = p[1], m2 = p[2], L1 = p[3], L2 = p[4], g = p[5]
    cdef double th1 = x[1], th2 = x[2], vel = x[3], om1 = x[4], om2 = x[5]
    cdef double F = u[0]
    cdef double s1 = sin(th1), c1 = cos(th1)
    cdef double s2 = sin(th2), c2 = cos(th2)
    cdef double s12 = sin(th1 - th2), c12 = cos(th1 - th2)
    cdef double m11 = M + m1 + m2
    cdef double m12 = (m1 + m2) * L1 * c1
    cdef double m13 = m2 * L2 * c2
    cdef double m22 = (m1 + m2) * L1 * L1
    cdef double m23 = m2 * L1 * L2 * c12
    cdef double m33 = m2 * L2 * L2
    cdef double b1 = F + (m1 + m2) * L1 * s1 * om1 * om1 + m2 * L2 * s2 * om2 * om2
    cdef double b2 = (m1 + m2) * g * L1 * s1 - m2 * L1 * L2 * s12 * om2 * om2
    cdef double b3 = m2 * g * L2 * s2 + m2 * L1 * L2 * s12 * om1 * om1
    # symmetric positive definite 3x3 solve, no pivoting
    cdef double f21 = m12 / m11
    cdef double f31 = m13 / m11
    cdef double a22 = m22 - f21 * m12
    cdef double a23 = m23 - f21 * m13
    cdef double a33 = m33 - f31 * m13
    cdef double r2 = b2 - f21 * b1
    cdef double r3 = b3 - f31 * b1
    cdef double f32 = a23 / a22
    cdef double a33b = a33 - f32 * a23
    cdef double r3b = r3 - f32 * r2
    cdef double q3 = r3b / a33b
    cdef double q2 = (r2 - a23 * q3) / a22
    cdef double q1 = (b1 - m12 * q2 - m13 * q3) / m11
    out[0] = vel
    out[1] = om1
    out[2] = om2
    out[3] = q1
    out[4] = q2
    out[5] = q3


cdef void _deriv_acrobot(const double* p, const double* x, const double* u,
                         double* out) noexcept nogil:
    # p = [m1, m2, l1, l2, mu1, mu2, g]; x = [th1, th2, om1, om2]
    # th1 absolute from upright, th2 relative to link 1; torque at joint 2
    cdef double m1 = p[0], m2 = p[1], l1 = p[2], l2 = p[3]
    cdef double mu1 = p[4], mu2 = p[5], g = p[6]
    cdef double th1 = x[0], th2 = x[1], om1 = x[2], om2 = x[3]
    cdef double tau = u[0]
    cdef double s1 = sin(th1)
    cdef double s2 = sin(th2), c2 = cos(th2)
    cdef double s12 = sin(th1 + th2)
    cdef double d11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2)
    cdef double d12 = m2 * (l2 * l2 + l1 * l2 * c2)
    cdef double d22 = m2 * l2 * l2
    cdef double hh = -m2 * l1 * l2 * s2
    cdef double g1 = -(m1 + m2) * g * l1 * s1 - m2 * g * l2 * s12
    cdef double g2 = -m2 * g * l2 * s12
    cdef double rhs1 = -mu1 * om1 - (hh * om2 * om2 + 2.0 * hh * om1 * om2) - g1
    cdef double rhs2 = tau - mu2 * om2 + hh * om1 * om1 - g2
    cdef double det = d11 * d22 - d12 * d12
    out[0] = om1
    out[1] = om2
    out[2] = (d22 * rhs1 - d12 * rhs2) / det
    out[3] = (d11 * rhs2 - d12 * rhs1) / det


cdef void _deriv(int kind, const double* p, const double* x, const double* u,
                 double* out) noexcept nogil:
    if kind == 0:
        _deriv_cartpole(p, x, u, out)
    elif kind == 1:
        _deriv_cart2pole(p, x, u, out)
    else:
        _deriv_acrobot(p, x, u, out)


cdef void _rk4(int kind, int nx, const double* p, double* x, const double* u,
               double dt) noexcept nogil:
    """Advance x in place by one RK4 step with the control held constant."""
    cdef double k1[8]
    cdef double k2[8]
    cdef double k3[8]
    cdef double k4[8]
    cdef double xt[8]
    cdef double hd = 0.5 * dt
    cdef double s6 = dt / 6.0
    cdef int i
    _deriv(kind, p, x, u, k1)
    for i in range(nx):
        xt[i] = x[i] + hd * k1[i]
    _deriv(kind, p, xt, u, k2)
    for i in range(nx):
        xt[i] = x[i] + hd * k2[i]
    _deriv(kind, p, xt, u, k3)
    for i in range(nx):
        xt[i] = x[i] + dt * k3[i]
    _deriv(kind, p, xt, u, k4)
    for i in range(nx):
        x[i] = x[i] + s6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


cdef double _quad(const double* q, const double* d, int n) noexcept nogil:
    """d' Q d for a dense n x n matrix in row-major order."""
    cdef double total = 0.0
    cdef double row
    cdef int i, j
    for i in range(n):
        row = 0.0
        for j in range(n):
            row = row + q[i * n + j] * d[j]
        total = total + d[i] * row
    return total


cdef double _rollout_cost(int kind, const double* p, const double* x0,
                          const double* U, int N, int nu, double dt,
                          const double* qinc, const double* r, const double* qn,
                          const double* target, int nx,
                          int ip, int jp, double h) noexcept nogil:
    """Total cost of a rollout, with control element (ip, jp) perturbed by h."""
    cdef double x[8]
    cdef double d[8]
    cdef double u[8]
    cdef double J = 0.0
    cdef int i, k
    for i in range(nx):
        x[i] = x0[i]
    for k in range(N):
        for i in range(nu):
            u[i] = U[k * nu + i]
        if k == ip:
            u[jp] = u[jp] + h
        for i in range(nx):
            d[i] = x[i] - target[i]
        J = J + _quad(qinc, d, nx) + 0.5 * _quad(r, u, nu)
        _rk4(kind, nx, p, x, u, dt)
    for i in range(nx):
        d[i] = x[i] - target[i]
    J = J + _quad(qn, d, nx)
    return J


def deriv(int kind, double[::1] params, double[::1] x, double[::1] u):
    """Continuous-time state derivative for one benchmark model."""
    cdef int nx = _NX[kind]
    out = np.empty(nx)
    cdef double[::1] mv = out
    _deriv(kind, &params[0], &x[0], &u[0], &mv[0])
    return out


def step(int kind, double[::1] params, double[::1] x, double[::1] u, double dt):
    """One discrete step (RK4 with the control held constant)."""
    cdef int nx = _NX[kind]
    out = np.array(x, dtype=float)
    cdef double[::1] mv = out
    _rk4(kind, nx, &params[0], &mv[0], &u[0], dt)
    return out


def rollout(int kind, double[::1] params, double[::1] x0,
            double[:, ::1] controls, double dt):
    """Simulate N steps; returns the (N+1, n_x) state array.

    Returns (states, first_bad_step); first_bad_step is -1 when every state
    is finite.
    """
    cdef int nx = _NX[kind]
    cdef int N = controls.shape[0]
    cdef int nu = controls.shape[1]
    states = np.empty((N + 1, nx))
    cdef double[:, ::1] sv = states
    cdef double x[8]
    cdef int i, k
    cdef int bad = -1
    for i in range(nx):
        x[i] = x0[i]
        sv[0, i] = x[i]
    for k in range(N):
        _rk4(kind, nx, &params[0], &x[0], &controls[k, 0], dt)
        for i in range(nx):
            sv[k + 1, i] = x[i]
            if bad < 0 and not isfinite(x[i]):
                bad = k
    return states, bad


def rollout_batch(int kind, double[::1] params, double[::1] x0,
                  double[:, :, ::1] controls, double dt, int num_threads=1):
    """Independent rollouts for a batch of control sequences, (M, N, n_u)."""
    cdef int nx = _NX[kind]
    cdef int M = controls.shape[0]
    cdef int N = controls.shape[1]
    cdef int nu = controls.shape[2]
    states = np.empty((M, N + 1, nx))
    cdef double[:, :, ::1] sv = states
    cdef int m, i, k
    cdef double x[8]
    cdef int nt = num_threads if num_threads > 0 else 1
    for m in prange(M, nogil=True, num_threads=nt, schedule="static"):
        _rollout_into(kind, nx, &params[0], &x0[0], &controls[m, 0, 0], N, nu,
                      dt, &sv[m, 0, 0])
    return states


cdef void _rollout_into(int kind, int nx, const double* p, const double* x0,
                        const double* U, int N, int nu, double dt,
                        double* out) noexcept nogil:
    cdef double x[8]
    cdef int i, k
    for i in range(nx):
        x[i] = x0[i]
        out[i] = x[i]
    for k in range(N):
        _rk4(kind, nx, p, x, &U[k * nu], dt)
        for i in range(nx):
            out[(k + 1) * nx + i] = x[i]


def rollout_cost(int kind, double[::1] params, double[::1] x0,
                 double[:, ::1] controls, double dt,
                 double[:, ::1] q_inc, double[:, ::1] r, double[:, ::1] q_term,
                 double[::1] target):
    """Quadratic trajectory cost of one noise-free rollout."""
    cdef int nx = _NX[kind]
    cdef int N = controls.shape[0]
    cdef int nu = controls.shape[1]
    return _rollout_cost(kind, &params[0], &x0[0], &controls[0, 0], N, nu, dt,
                         &q_inc[0, 0], &r[0, 0], &q_term[0, 0], &target[0],
                         nx, -1, 0, 0.0)


def fd_gradient(int kind, double[::1] params, double[::1] x0,
                double[:, ::1] controls, double dt,
                double[:, ::1] q_inc, double[:, ::1] r, double[:, ::1] q_term,
                double[::1] target, double h, int num_threads=1):
    """Forward-difference cost gradient over all N * n_u control coordinates.

    Uses exactly N * n_u + 1 rollouts. Returns (gradient, base_cost).
    """
    cdef int nx = _NX[kind]
    cdef int N = controls.shape[0]
    cdef int nu = controls.shape[1]
    cdef double J0 = _rollout_cost(kind, &params[0], &x0[0], &controls[0, 0],
                                   N, nu, dt, &q_inc[0, 0], &r[0, 0],
                                   &q_term[0, 0], &target[0], nx, -1, 0, 0.0)
    grad = np.empty((N, nu))
    cdef double[:, ::1] gv = grad
    cdef int idx, i, j
    cdef int total = N * nu
    cdef int nt = num_threads if num_threads > 0 else 1
    for idx in prange(total, nogil=True, num_threads=nt, schedule="static"):
        i = idx // nu
        j = idx - i * nu
        gv[i, j] = (_rollout_cost(kind, &params[0], &x0[0], &controls[0, 0],
                                  N, nu, dt, &q_inc[0, 0], &r[0, 0],
                                  &q_term[0, 0], &target[0], nx, i, j, h)
                    - J0) / h
    return grad, J0
