"""Planar dual-arm robot: forward kinematics and per-configuration collision queries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from .geometry import (
    Capsule2,
    ConvexPolygon2,
    Point2,
    Segment2,
    capsule_capsule_collides,
    capsule_shape_collides,
    point_in_polygon,
    regular_polygon,
)

if TYPE_CHECKING:
    from .dataset import Workspace

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Reduce an angle into [0, 2*pi)."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if a >= TWO_PI else a


@dataclass(frozen=True)
class JointConfig:
    q1: float
    q2: float

    def __post_init__(self):
        object.__setattr__(self, "q1", wrap_angle(float(self.q1)))
        object.__setattr__(self, "q2", wrap_angle(float(self.q2)))


@dataclass(frozen=True)
class CollisionStatus:
    self_collision: bool = False
    obstacles: frozenset[int] = field(default_factory=frozenset)

    @property
    def free(self) -> bool:
        return not self.self_collision and not self.obstacles

    @property
    def kind(self) -> str:
        if self.free:
            return "free"
        if self.self_collision and self.obstacles:
            return "self+obstacle"
        return "self" if self.self_collision else "obstacle"


def _square_footprint(center: Point2, side: float) -> ConvexPolygon2:
    return regular_polygon(4, side, center)


@dataclass(frozen=True)
class RobotModel:
    """Two links of equal length rotating about fixed anchors.

    Defaults place the anchors 0.4 apart in the unit frame with a combined
    reach of 0.5, so the arms can hit each other.
    """

    anchor1: Point2 = Point2(0.30, 0.50)
    anchor2: Point2 = Point2(0.70, 0.50)
    link_length: float = 0.25
    link_half_width: float = 0.02
    base_side: float = 0.06

    def __post_init__(self):
        object.__setattr__(self, "anchor1", Point2(*map(float, self.anchor1)))
        object.__setattr__(self, "anchor2", Point2(*map(float, self.anchor2)))
        if not self.link_length > 0.0 or not self.link_half_width > 0.0:
            raise ValueError("link_length and link_half_width must be positive")
        if not self.base_side > 0.0:
            raise ValueError("base_side must be positive")
        sep = math.dist(self.anchor1, self.anchor2)
        if not sep < 2.0 * self.link_length:
            raise ValueError(
                f"anchors {sep:.4f} apart cannot interfere with reach {2 * self.link_length:.4f}"
            )
        for fp, anchor in ((self.base_footprint1, self.anchor1), (self.base_footprint2, self.anchor2)):
            if not point_in_polygon(anchor, fp):
                raise ValueError("base footprint must contain its anchor")

    @property
    def base_footprint1(self) -> ConvexPolygon2:
        return _square_footprint(self.anchor1, self.base_side)

    @property
    def base_footprint2(self) -> ConvexPolygon2:
        return _square_footprint(self.anchor2, self.base_side)

    def anchor(self, arm: int) -> Point2:
        if arm == 1:
            return self.anchor1
        if arm == 2:
            return self.anchor2
        raise ValueError(f"arm must be 1 or 2, got {arm}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "anchor1": list(self.anchor1),
            "anchor2": list(self.anchor2),
            "link_length": self.link_length,
            "link_half_width": self.link_half_width,
            "base_side": self.base_side,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RobotModel":
        return cls(
            anchor1=Point2(*d["anchor1"]),
            anchor2=Point2(*d["anchor2"]),
            link_length=float(d["link_length"]),
            link_half_width=float(d["link_half_width"]),
            base_side=float(d.get("base_side", 0.06)),
        )


def link_pose(r: RobotModel, arm: int, angle: float) -> Capsule2:
    """Capsule occupied by ``arm`` at joint ``angle`` (CCW from +x)."""
    ax, ay = r.anchor(arm)
    tip = Point2(ax + r.link_length * math.cos(angle), ay + r.link_length * math.sin(angle))
    return Capsule2(Segment2(Point2(ax, ay), tip), r.link_half_width)


def collision_status(r: RobotModel, w: "Workspace", q: JointConfig) -> CollisionStatus:
    c1 = link_pose(r, 1, q.q1)
    c2 = link_pose(r, 2, q.q2)
    hits = frozenset(
        k for k, shape in enumerate(w.obstacles)
        if capsule_shape_collides(c1, shape) or capsule_shape_collides(c2, shape)
    )
    return CollisionStatus(self_collision=capsule_capsule_collides(c1, c2), obstacles=hits)
