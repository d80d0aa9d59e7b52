"""Small 3-D / 6-D linear algebra helpers.

Six-vectors are ordered (linear; angular) everywhere in the package, both for
velocities (v, omega) and for wrenches (force, moment).
"""
from __future__ import annotations

import numpy as np

PINV_RTOL = 1e-8


def cross(a, b):
    """Cross product of two 3-vectors (much cheaper than np.cross at this size)."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def skew(v):
    """Return S(v) such that S(v) @ y == cross(v, y)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rodrigues formula: rotation matrix for the rotation vector ``w``."""
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    K = skew(w)
    if theta < 1e-8:
        # second-order series; exact to machine precision at this size
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R):
    """Rotation vector of ``R`` (inverse of :func:`so3_exp` for angles < pi)."""
    c = 0.5 * (np.trace(R) - 1.0)
    c = min(1.0, max(-1.0, c))
    theta = np.arccos(c)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi: recover axis from the symmetric part
        S = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(S), 0.0, None))
        k = int(np.argmax(axis))
        axis = S[:, k] / np.sqrt(S[k, k])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * v


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_matrix(rpy):
    """Fixed-axis roll/pitch/yaw, R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = rpy
    return rot_z(y) @ rot_y(p) @ rot_x(r)


def is_rotation(R, tol=1e-10):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    return (np.abs(R.T @ R - np.eye(3)).max() <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol)


def wrench_transform(r):
    """6x6 map moving a wrench to a new reference point.

    ``r`` is the vector from the new reference point to the old one
    (old - new): force is unchanged and the moment gains ``r x force``.
    """
    X = np.eye(6)
    X[3:, :3] = skew(r)
    return X


def block_rotation(R):
    """blockdiag(R, R)."""
    X = np.zeros((6, 6))
    X[:3, :3] = R
    X[3:, 3:] = R
    return X


def block_skew(w):
    """blockdiag(S(w), S(w))."""
    S = skew(w)
    X = np.zeros((6, 6))
    X[:3, :3] = S
    X[3:, 3:] = S
    return X


def damped_pinv(A, damping=0.0):
    """Pseudoinverse of ``A``.

    With ``damping == 0`` this is the Moore-Penrose inverse computed by SVD,
    singular values below ``1e-8 * sigma_max`` treated as zero. A positive
    ``damping`` gives the Tikhonov-regularised inverse.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if damping > 0.0:
        if m <= n:
            return A.T @ np.linalg.solve(A @ A.T + damping * np.eye(m), np.eye(m))
        return np.linalg.solve(A.T @ A + damping * np.eye(n), A.T)
    if A.size == 0:
        return np.zeros((n, m))
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((n, m))
    keep = s > PINV_RTOL * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def nullspace_projector(A, pinv=None):
    """N = I - pinv(A) A, the orthogonal projector onto null(A)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if pinv is None:
        pinv = damped_pinv(A)
    return np.eye(A.shape[1]) - pinv @ A


def matrix_rank(A, rtol=PINV_RTOL):
    """Rank with the relative singular value threshold used across the package."""
    s = np.linalg.svd(np.atleast_2d(A), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))
