"""Dense linear-algebra and integration kernels used by all other modules.

Everything here is a pure function of its inputs and safe to call
concurrently. Matrices are plain float64 ndarrays; factorizations go through
LAPACK's classic Golub-Kahan driver so repeated calls on the same input are
bit-reproducible.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailure

DEFAULT_PINV_TOL = 1e-10


@dataclass(frozen=True)
class SvdResult:
    """Reduced SVD ``a = left @ diag(singular_values) @ right.T``."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalFailure("matrix contains non-finite entries")
    return a


def svd(a) -> SvdResult:
    """Reduced singular value decomposition with singular values sorted descending."""
    a = _as_matrix(a)
    try:
        u, s, vt = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    except scipy.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    return SvdResult(left=u, singular_values=s, right=vt.T)


def pinv(a, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse, truncating singular values below tol * sigma_max."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    a = _as_matrix(a)
    res = svd(a)
    s = res.singular_values
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > tol * s[0]
    if not np.any(keep):
        return np.zeros((a.shape[1], a.shape[0]))
    u = res.left[:, keep]
    v = res.right[:, keep]
    return (v / s[keep]) @ u.T


def lstsq_right(y, u, tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Minimizer H of ||Y - H U||_F, computed as Y @ pinv(U).

    Y is n_y x M and U is n x M with one column per experiment; rank
    deficiency of U is handled by the truncated pseudo-inverse.
    """
    y = _as_matrix(y)
    u = _as_matrix(u)
    if y.shape[1] != u.shape[1]:
        raise ValueError(
            f"Y and U must have the same number of columns, got {y.shape[1]} and {u.shape[1]}"
        )
    return y @ pinv(u, tol)


def rk4_step(deriv, x, u, dt: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of dx/dt = deriv(x, u).

    The control is held constant over the step. Local error is O(dt^5).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    k1 = np.asarray(deriv(x, u), dtype=float)
    k2 = np.asarray(deriv(x + 0.5 * dt * k1, u), dtype=float)
    k3 = np.asarray(deriv(x + 0.5 * dt * k2, u), dtype=float)
    k4 = np.asarray(deriv(x + dt * k3, u), dtype=float)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite state after integration step")
    return out


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a square matrix with its transpose."""
    return 0.5 * (a + a.T)
