"""SO(3) helpers: hat/vee, exponential and logarithm maps, right Jacobians.

All functions accept a single 3-vector (or 3x3 matrix) as well as stacked
arrays of shape ``(..., 3)`` (or ``(..., 3, 3)``) and broadcast over the
leading dimensions.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-6
# below this |sin(theta)|, log() switches to the symmetric-part axis extraction
_NEAR_PI_SIN = 1e-4


def hat(v):
    """Skew-symmetric matrix such that ``hat(v) @ w == np.cross(v, w)``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(m):
    m = np.asarray(m, dtype=float)
    return np.stack([m[..., 2, 1], m[..., 0, 2], m[..., 1, 0]], axis=-1)


def _angle_coeffs(theta):
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3) with Taylor fallback."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(t) / t)
    # half-angle form avoids the cancellation in 1 - cos(t) for small t
    b = np.where(small, 0.5 - t2 / 24.0, 0.5 * (np.sin(0.5 * t) / (0.5 * t)) ** 2)
    c = np.where(small, 1.0 / 6.0 - t2 / 120.0, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def exp_so3(phi):
    """Rodrigues formula, ``Exp: R^3 -> SO(3)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b, _ = _angle_coeffs(theta)
    K = hat(phi)
    return np.eye(3) + a[..., None, None] * K + b[..., None, None] * (K @ K)


def log_so3(R):
    """Inverse of :func:`exp_so3`, returning the representative with norm <= pi."""
    R = np.asarray(R, dtype=float)
    single = R.ndim == 2
    R = R.reshape(-1, 3, 3)

    w = 0.5 * vee(R - np.swapaxes(R, -1, -2))  # sin(theta) * axis
    sin_t = np.linalg.norm(w, axis=-1)
    cos_t = np.clip(0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    theta = np.arctan2(sin_t, cos_t)

    # regular branch: phi = theta / sin(theta) * w
    scale = np.where(theta < SMALL_ANGLE, 1.0 + theta * theta / 6.0,
                     theta / np.where(sin_t > 0.0, sin_t, 1.0))
    phi = scale[:, None] * w

    near_pi = (cos_t < 0.0) & (sin_t < _NEAR_PI_SIN)
    for n in np.flatnonzero(near_pi):
        # (R + R^T)/2 = cos I + (1 - cos) u u^T; pick the best-conditioned column
        S = 0.5 * (R[n] + R[n].T) - cos_t[n] * np.eye(3)
        j = int(np.argmax(np.diag(S)))
        u = S[:, j] / np.sqrt(S[j, j] * (1.0 - cos_t[n]))
        u /= np.linalg.norm(u)
        if np.dot(u, w[n]) < 0.0:
            u = -u
        phi[n] = theta[n] * u

    return phi[0] if single else phi.reshape(R.shape[:-2] + (3,))


def right_jacobian(phi):
    """Right Jacobian: ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    _, b, c = _angle_coeffs(theta)
    K = hat(phi)
    return np.eye(3) - b[..., None, None] * K + c[..., None, None] * (K @ K)


def right_jacobian_inv(phi):
    """Inverse of :func:`right_jacobian`: ``Log(Exp(phi) Exp(d)) ~= phi + Jr^-1(phi) d``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    d = np.where(small, 1.0 / 12.0 + theta * theta / 720.0,
                 1.0 / (t * t) - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))
    K = hat(phi)
    return np.eye(3) + 0.5 * K + d[..., None, None] * (K @ K)


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    return (np.linalg.norm(R @ R.T - np.eye(3)) < tol
            and abs(np.linalg.det(R) - 1.0) < tol)


def shortest_arc(a, b):
    """Rotation taking unit direction ``a`` onto unit direction ``b``.

    For antiparallel inputs the rotation is a half turn about an axis
    perpendicular to ``a`` (the one closest to the x axis).
    """
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.eye(3)[int(np.argmin(np.abs(a)))]
        perp = perp - np.dot(perp, a) * a
        return exp_so3(np.pi * perp / np.linalg.norm(perp))
    return exp_so3(axis / s * np.arctan2(s, c))


def random_rotation(rng):
    """Uniformly distributed rotation (from a normalized Gaussian quaternion)."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    return quat_to_rot(q)


def quat_to_rot(q):
    """Rotation matrix from a (w, x, y, z) quaternion; the input is normalized first."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """(w, x, y, z) quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        S = np.sqrt(tr + 1.0) * 2
        q = [0.25 * S, (R[2, 1] - R[1, 2]) / S, (R[0, 2] - R[2, 0]) / S, (R[1, 0] - R[0, 1]) / S]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        S = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / S, 0.25 * S, (R[0, 1] + R[1, 0]) / S, (R[0, 2] + R[2, 0]) / S]
    elif R[1, 1] > R[2, 2]:
        S = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / S, (R[0, 1] + R[1, 0]) / S, 0.25 * S, (R[1, 2] + R[2, 1]) / S]
    else:
        S = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / S, (R[0, 2] + R[2, 0]) / S, (R[1, 2] + R[2, 1]) / S, 0.25 * S]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q
