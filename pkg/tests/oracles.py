"""Independent reference computations shared by the test modules.

Nothing here calls into halfphys: rotations go through 3x3 matrices built
with Rodrigues' formula, kinematics through homogeneous 4x4 transforms.
"""
import math

import numpy as np


def axis_angle_matrix(axis, angle):
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def quat_matrix(q):
    """Rotation matrix of a (w, x, y, z) quaternion via its axis-angle form."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    s = np.linalg.norm(q[1:])
    if s < 1e-15:
        return np.eye(3)
    return axis_angle_matrix(q[1:] / s, 2 * math.atan2(s, q[0]))


def matrix_angle(R):
    return math.acos(max(-1.0, min(1.0, (np.trace(R) - 1) / 2)))


def rotation_distance(qa, qb):
    # chord form: |Ra - Rb|_F = 2 sqrt(2) sin(theta / 2), well conditioned near zero
    chord = np.linalg.norm(quat_matrix(qa) - quat_matrix(qb))
    return 2 * math.asin(min(1.0, chord / (2 * math.sqrt(2))))


def homogeneous(R, t):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def mc_inertia(inside, lo, hi, mass, n, rng, chunk=1_000_000):
    """Monte-Carlo inertia tensor diagonal of the solid ``inside(points)``."""
    acc = np.zeros(3)
    count = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        p = rng.uniform(lo, hi, size=(m, 3))
        q = p[inside(p)]
        count += len(q)
        acc += [(q[:, 1] ** 2 + q[:, 2] ** 2).sum(), (q[:, 0] ** 2 + q[:, 2] ** 2).sum(), (q[:, 0] ** 2 + q[:, 1] ** 2).sum()]
        done += m
    return mass * acc / count


def inside_capsule(r, hl):
    def f(p):
        z = np.clip(p[:, 2], -hl, hl)
        return p[:, 0] ** 2 + p[:, 1] ** 2 + (p[:, 2] - z) ** 2 <= r * r
    return f


def inside_sphere(r):
    return lambda p: (p * p).sum(axis=1) <= r * r


def inside_box(he):
    return lambda p: np.all(np.abs(p) <= he, axis=1)
