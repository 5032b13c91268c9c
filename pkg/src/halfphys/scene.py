"""Static colliders, dynamic rigid objects and the scene that holds them."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import Pose, SpatialVelocity
from .mathcore import InertiaSpec, shape_inertia
from .shapes import Box, Capsule, Shape, ShapeError, Sphere


class SceneError(ValueError):
    pass


@dataclass
class StaticCollider:
    name: str
    shape: Shape
    pose: Pose = field(default_factory=Pose.identity)
    friction: float = 1.0

    def __post_init__(self):
        if self.friction < 0:
            raise SceneError(f"static {self.name!r}: friction must be non-negative")


@dataclass
class RigidObjectSpec:
    name: str
    shape: Shape
    mass: float
    friction: float = 0.5
    restitution: float = 0.0
    initial_pose: Pose = field(default_factory=Pose.identity)
    initial_velocity: SpatialVelocity = field(default_factory=SpatialVelocity.zero)

    def __post_init__(self):
        if not self.mass > 0:
            raise SceneError(f"object {self.name!r}: mass must be positive")
        if self.friction < 0:
            raise SceneError(f"object {self.name!r}: friction must be non-negative")
        if not 0.0 <= self.restitution <= 1.0:
            raise SceneError(f"object {self.name!r}: restitution must lie in [0, 1]")
        if not isinstance(self.shape, (Sphere, Capsule, Box)):
            raise ShapeError(f"object {self.name!r}: dynamic objects must be sphere, capsule or box")

    @property
    def inertia(self) -> InertiaSpec:
        return shape_inertia(self.shape, self.mass)


@dataclass
class SceneSpec:
    static: list[StaticCollider] = field(default_factory=list)
    objects: list[RigidObjectSpec] = field(default_factory=list)

    def __post_init__(self):
        names = [s.name for s in self.static] + [o.name for o in self.objects]
        dup = {n for n in names if names.count(n) > 1}
        if dup:
            raise SceneError(f"duplicate collider names: {sorted(dup)}")

    def object_index(self, name: str) -> int:
        for i, o in enumerate(self.objects):
            if o.name == name:
                return i
        raise KeyError(name)


def floor(friction: float = 1.0, height: float = 0.0, name: str = "floor") -> StaticCollider:
    from .shapes import HalfSpace

    return StaticCollider(name, HalfSpace(np.array([0.0, 0.0, 1.0]), height), Pose.identity(), friction)
