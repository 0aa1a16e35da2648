"""Quaternion algebra used throughout the package.

Conventions:
    - Hamilton product, scalar-first storage [w, x, y, z].
    - The attitude quaternion relates world and body frames such that
      rotate(q, v_body) expresses a body-frame vector in world coordinates.
    - Attitude increments use rotation vectors (axis * angle, rad) applied
      on the right: q_new = q * from_rotvec(delta).
"""

from __future__ import annotations

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# Embedding of R^3 into pure quaternions, q = H @ v.
H_EMBED = np.array(
    [[0.0, 0.0, 0.0],
     [1.0, 0.0, 0.0],
     [0.0, 1.0, 0.0],
     [0.0, 0.0, 1.0]]
)


def normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def conjugate(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def left_matrix(q):
    """Matrix L such that q * r == L @ r."""
    w, x, y, z = q
    return np.array(
        [[w, -x, -y, -z],
         [x, w, -z, y],
         [y, z, w, -x],
         [z, -y, x, w]]
    )


def right_matrix(r):
    """Matrix R such that q * r == R @ q."""
    w, x, y, z = r
    return np.array(
        [[w, -x, -y, -z],
         [x, w, z, -y],
         [y, -z, w, x],
         [z, y, -x, w]]
    )


def multiply(q1, q2):
    return left_matrix(q1) @ np.asarray(q2, dtype=float)


def rotation_matrix(q):
    """3x3 matrix mapping body-frame coordinates to world coordinates."""
    w, x, y, z = q
    return np.array(
        [[1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
         [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
         [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]]
    )


def rotate(q, v):
    return rotation_matrix(q) @ np.asarray(v, dtype=float)


def from_rotvec(phi):
    """Unit quaternion for a rotation vector (axis * angle)."""
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # Second-order series keeps the map smooth through zero.
        half = 0.5 * phi
        q = np.concatenate(([1.0 - 0.125 * angle * angle], half))
        return q / np.linalg.norm(q)
    axis = phi / angle
    return np.concatenate(([np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis))


def to_rotvec(q):
    """Rotation vector of a unit quaternion (inverse of from_rotvec)."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q  # keep the short rotation
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-12:
        return 2.0 * q[1:]
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    return q[1:] * (angle / vec_norm)


def box_plus(q, phi):
    """Right-apply a rotation-vector increment and renormalize."""
    return normalize(multiply(q, from_rotvec(phi)))


def box_minus(q1, q0):
    """Rotation vector taking q0 to q1: q1 = q0 * from_rotvec(result)."""
    return to_rotvec(multiply(conjugate(q0), q1))


def slerp(q0, q1, alpha):
    q0 = normalize(q0)
    q1 = normalize(q1)
    if np.dot(q0, q1) < 0.0:
        q1 = -q1
    dot = min(1.0, max(-1.0, float(np.dot(q0, q1))))
    if dot > 1.0 - 1e-10:
        return normalize((1.0 - alpha) * q0 + alpha * q1)
    omega = np.arccos(dot)
    s = np.sin(omega)
    return (np.sin((1.0 - alpha) * omega) * q0 + np.sin(alpha * omega) * q1) / s


def d_rotate_d_q(q, a):
    """Jacobian of rotate(q, a) with respect to the 4 quaternion components."""
    w = q[0]
    v = q[1:]
    a = np.asarray(a, dtype=float)
    v_x_a = cross(v, a)
    skew_a = skew(a)
    out = np.empty((3, 4))
    out[:, 0] = 2.0 * v_x_a
    out[:, 1:] = -2.0 * w * skew_a - 2.0 * skew(v_x_a) - 2.0 * skew(v) @ skew_a
    return out


def skew(v):
    x, y, z = v
    return np.array(
        [[0.0, -z, y],
         [z, 0.0, -x],
         [-y, x, 0.0]]
    )


def cross(a, b):
    """3-vector cross product (avoids numpy's generic-axis overhead)."""
    return np.array(
        [a[1] * b[2] - a[2] * b[1],
         a[2] * b[0] - a[0] * b[2],
         a[0] * b[1] - a[1] * b[0]]
    )


def tangent_lift(q):
    """4x3 map from a rotation-vector increment to a quaternion increment.

    First order: q * from_rotvec(phi) - q == tangent_lift(q) @ phi.
    """
    return 0.5 * left_matrix(q) @ H_EMBED


def tangent_project(q):
    """3x4 left inverse of tangent_lift for unit q (kills the radial part)."""
    return 2.0 * H_EMBED.T @ left_matrix(q).T
