"""Collision/inertia primitives and their array encoding for the kernels."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

SPHERE, CAPSULE, BOX, HALFSPACE, TRIMESH = 0, 1, 2, 3, 4
SHAPE_NAMES = {SPHERE: "sphere", CAPSULE: "capsule", BOX: "box", HALFSPACE: "halfspace", TRIMESH: "trimesh"}


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ShapeError(f"sphere radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Capsule:
    """Capsule whose segment runs along the local z axis."""

    radius: float
    half_length: float

    def __post_init__(self):
        if not (self.radius > 0 and self.half_length > 0):
            raise ShapeError(f"capsule dimensions must be positive, got r={self.radius}, hl={self.half_length}")


@dataclass(frozen=True, eq=False)
class Box:
    half_extents: np.ndarray

    def __post_init__(self):
        he = np.asarray(self.half_extents, dtype=float).reshape(3)
        if not np.all(he > 0):
            raise ShapeError(f"box half extents must be positive, got {he.tolist()}")
        object.__setattr__(self, "half_extents", he)

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.half_extents, other.half_extents)


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """Solid region ``normal . x <= offset`` in the collider frame (static only)."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if abs(norm - 1.0) > 1e-9:
            raise ShapeError(f"halfspace normal must be unit length, got |n|={norm}")
        object.__setattr__(self, "normal", n)

    def __eq__(self, other):
        return isinstance(other, HalfSpace) and np.array_equal(self.normal, other.normal) and self.offset == other.offset


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle soup, static colliders only."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ShapeError("trimesh triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def __eq__(self, other):
        return (
            isinstance(other, TriMesh)
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
        )


Shape = Union[Sphere, Capsule, Box, HalfSpace, TriMesh]


def shape_type_id(shape: Shape) -> int:
    for cls, tid in ((Sphere, SPHERE), (Capsule, CAPSULE), (Box, BOX), (HalfSpace, HALFSPACE), (TriMesh, TRIMESH)):
        if isinstance(shape, cls):
            return tid
    raise ShapeError(f"unknown shape {shape!r}")


def encode_shape(shape: Shape, tri_offset: int = 0) -> tuple[int, np.ndarray]:
    """Return ``(type_id, params[4])``; trimesh params index a shared triangle buffer."""
    p = np.zeros(4)
    tid = shape_type_id(shape)
    if tid == SPHERE:
        p[0] = shape.radius
    elif tid == CAPSULE:
        p[0], p[1] = shape.radius, shape.half_length
    elif tid == BOX:
        p[:3] = shape.half_extents
    elif tid == HALFSPACE:
        p[:3] = shape.normal
        p[3] = shape.offset
    else:
        p[0] = tri_offset
        p[1] = len(shape.triangles)
    return tid, p


def triangle_array(mesh: TriMesh) -> np.ndarray:
    """(T, 3, 3) vertex coordinates of each triangle."""
    return mesh.vertices[mesh.triangles]


def bounding_radius(shape: Shape) -> float:
    if isinstance(shape, Sphere):
        return shape.radius
    if isinstance(shape, Capsule):
        return shape.radius + shape.half_length
    if isinstance(shape, Box):
        return float(np.linalg.norm(shape.half_extents))
    return float("inf")


def shape_to_dict(shape: Shape) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "radius": shape.radius}
    if isinstance(shape, Capsule):
        return {"type": "capsule", "radius": shape.radius, "half_length": shape.half_length}
    if isinstance(shape, Box):
        return {"type": "box", "half_extents": shape.half_extents.tolist()}
    if isinstance(shape, HalfSpace):
        return {"type": "halfspace", "normal": shape.normal.tolist(), "offset": shape.offset}
    return {"type": "trimesh", "vertices": shape.vertices.tolist(), "triangles": shape.triangles.tolist()}


def shape_from_dict(d: dict) -> Shape:
    kind = d.get("type")
    if kind == "sphere":
        return Sphere(float(d["radius"]))
    if kind == "capsule":
        return Capsule(float(d["radius"]), float(d["half_length"]))
    if kind == "box":
        return Box(np.asarray(d["half_extents"], dtype=float))
    if kind == "halfspace":
        return HalfSpace(np.asarray(d["normal"], dtype=float), float(d.get("offset", 0.0)))
    if kind == "trimesh":
        return TriMesh(np.asarray(d["vertices"], dtype=float), np.asarray(d["triangles"], dtype=np.int64))
    raise ShapeError(f"unknown shape type {kind!r}")
