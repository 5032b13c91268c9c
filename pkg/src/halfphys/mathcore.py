"""Quaternion, rotation-vector and inertia helpers.

Conventions used across the package:

- Quaternions are float64 arrays in (w, x, y, z) order.
- Angular velocities are world-frame vectors unless a function says otherwise.
- ``expmap``/``logmap`` convert between rotation vectors and unit quaternions;
  ``logmap`` always returns the shortest-path rotation vector.

All array functions are numba-compiled so the simulation kernels can call them
directly; they are equally usable from Python.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .shapes import Box, Capsule, Shape, Sphere

# below this angle expmap/logmap switch to Taylor expansions
_SMALL_ANGLE = 1e-8
# |dot| below this is treated as an antipodal (180 degree) pair in slerp
ANTIPODAL_DOT = 1e-6


@njit(cache=True)
def quat_identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


@njit(cache=True)
def quat_normalize(q):
    n = math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@njit(cache=True)
def quat_mul_raw(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def quat_mul(a, b):
    """Hamilton product ``a * b``, renormalized."""
    return quat_normalize(quat_mul_raw(a, b))


@njit(cache=True)
def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


@njit(cache=True)
def quat_rotate(q, v):
    """Rotate vector ``v`` by unit quaternion ``q``."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    # t = 2 * cross(q.xyz, v)
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    out = np.empty(3)
    out[0] = v[0] + w * tx + (y * tz - z * ty)
    out[1] = v[1] + w * ty + (z * tx - x * tz)
    out[2] = v[2] + w * tz + (x * ty - y * tx)
    return out


@njit(cache=True)
def quat_rotate_inv(q, v):
    return quat_rotate(quat_conj(q), v)


@njit(cache=True)
def quat_to_matrix(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[0, 1] = 2.0 * (x * y - w * z)
    m[0, 2] = 2.0 * (x * z + w * y)
    m[1, 0] = 2.0 * (x * y + w * z)
    m[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[1, 2] = 2.0 * (y * z - w * x)
    m[2, 0] = 2.0 * (x * z - w * y)
    m[2, 1] = 2.0 * (y * z + w * x)
    m[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


@njit(cache=True)
def quat_from_axis_angle(axis, angle):
    n = math.sqrt(axis[0] ** 2 + axis[1] ** 2 + axis[2] ** 2)
    s = math.sin(0.5 * angle) / n
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


@njit(cache=True)
def expmap(rv):
    """Unit quaternion for rotation vector ``rv`` (axis * angle)."""
    theta = math.sqrt(rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2])
    if theta < _SMALL_ANGLE:
        w = 1.0 - theta * theta / 8.0
        k = 0.5 - theta * theta / 48.0
    else:
        w = math.cos(0.5 * theta)
        k = math.sin(0.5 * theta) / theta
    return quat_normalize(np.array([w, rv[0] * k, rv[1] * k, rv[2] * k]))


@njit(cache=True)
def logmap(q):
    """Shortest-path rotation vector of ``q`` (double cover resolved by w >= 0)."""
    w, x, y, z = q[0], q[1], q[2], q[3]
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < _SMALL_ANGLE:
        k = 2.0 / w
    else:
        k = 2.0 * math.atan2(s, w) / s
    return np.array([x * k, y * k, z * k])


@njit(cache=True)
def quat_angle(a, b):
    """Rotation angle (radians, in [0, pi]) between orientations ``a`` and ``b``."""
    d = abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3])
    rel = quat_mul_raw(b, quat_conj(a))
    s = math.sqrt(rel[1] ** 2 + rel[2] ** 2 + rel[3] ** 2)
    return 2.0 * math.atan2(s, d)


@njit(cache=True)
def _antipodal_axis(rel):
    # deterministic branch for 180 degree pairs: first non-zero axis component positive
    for i in range(1, 4):
        if abs(rel[i]) > 1e-12:
            if rel[i] < 0.0:
                return -rel
            return rel
    return rel


@njit(cache=True)
def slerp(q0, q1, u):
    """Constant-angular-speed interpolation from ``q0`` (u=0) to ``q1`` (u=1).

    The shortest arc is used. When the pair is antipodal as rotations
    (|dot| < ANTIPODAL_DOT) the rotation axis is fixed by making its first
    non-zero component positive, so the result does not depend on input signs.
    """
    dot = q0[0] * q1[0] + q0[1] * q1[1] + q0[2] * q1[2] + q0[3] * q1[3]
    if u == 0.0:
        return q0.copy()
    target = q1
    if dot < 0.0:
        target = -q1
    rel = quat_mul_raw(target, quat_conj(q0))
    if abs(dot) < ANTIPODAL_DOT:
        rel = _antipodal_axis(rel)
        rel[0] = abs(rel[0])
    if u == 1.0:
        return target.copy()
    return quat_mul(expmap(u * logmap(rel)), q0)


@njit(cache=True)
def angdiff(q_target, q_current, dt):
    """World-frame angular velocity carrying ``q_current`` onto ``q_target`` in ``dt``."""
    return logmap(quat_mul_raw(q_target, quat_conj(q_current))) / dt


@njit(cache=True)
def integrate_orientation(q, omega, h):
    """Exact exponential-map update ``expmap(omega * h) * q``."""
    return quat_mul(expmap(omega * h), q)


@njit(cache=True)
def cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def canonicalize_sequence(quats):
    """Flip signs in-place so consecutive quaternions have non-negative dot."""
    for i in range(1, quats.shape[0]):
        d = 0.0
        for k in range(4):
            d += quats[i, k] * quats[i - 1, k]
        if d < 0.0:
            for k in range(4):
                quats[i, k] = -quats[i, k]
    return quats


def quat_from_euler_axis(axis: str, angle: float) -> np.ndarray:
    """Convenience: rotation of ``angle`` radians about one of 'x', 'y', 'z'."""
    vec = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}[axis]
    return quat_from_axis_angle(np.array(vec), float(angle))


@dataclass(frozen=True)
class InertiaSpec:
    mass: float
    principal: np.ndarray  # kg m^2, diagonal in the link frame
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))


def shape_inertia(shape: Shape, mass: float) -> InertiaSpec:
    """Closed-form inertia of a solid primitive about its centre."""
    if mass <= 0:
        raise ValueError(f"mass must be positive, got {mass}")
    if isinstance(shape, Sphere):
        i = 0.4 * mass * shape.radius**2
        principal = np.array([i, i, i])
    elif isinstance(shape, Box):
        hx, hy, hz = (float(v) for v in shape.half_extents)
        principal = mass / 3.0 * np.array([hy**2 + hz**2, hx**2 + hz**2, hx**2 + hy**2])
    elif isinstance(shape, Capsule):
        r, hl = shape.radius, shape.half_length
        h = 2.0 * hl
        v_cyl = math.pi * r * r * h
        v_sph = 4.0 / 3.0 * math.pi * r**3
        m_cyl = mass * v_cyl / (v_cyl + v_sph)
        m_hemi = 0.5 * (mass - m_cyl)
        i_axis = 0.5 * m_cyl * r * r + 2.0 * m_hemi * 0.4 * r * r
        # hemisphere about its own centroid plus parallel-axis shift to the capsule centre
        i_perp = m_cyl * (h * h / 12.0 + r * r / 4.0) + 2.0 * m_hemi * (
            0.4 * r * r + h * h / 4.0 + 3.0 * h * r / 8.0
        )
        principal = np.array([i_perp, i_perp, i_axis])
    else:
        raise ValueError(f"no inertia for {type(shape).__name__} (static-only shape)")
    return InertiaSpec(mass=float(mass), principal=principal, com=np.zeros(3))


def shape_volume(shape: Shape) -> float:
    if isinstance(shape, Sphere):
        return 4.0 / 3.0 * math.pi * shape.radius**3
    if isinstance(shape, Box):
        return 8.0 * float(np.prod(shape.half_extents))
    if isinstance(shape, Capsule):
        r = shape.radius
        return math.pi * r * r * 2.0 * shape.half_length + 4.0 / 3.0 * math.pi * r**3
    raise ValueError(f"no volume for {type(shape).__name__}")
