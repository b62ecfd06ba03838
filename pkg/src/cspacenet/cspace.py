"""
Rasterization of the C-space over the joint torus [0, 2*pi)^2.

Grid convention: cell (row, col) holds the configuration
q1 = 2*pi*(col + 0.5)/N, q2 = 2*pi*(row + 0.5)/N. q1 runs left to right,
q2 top to bottom. In images black (0) is collision and white (1 / 255) free.

Arm 1 depends only on q1 and arm 2 only on q2, so obstacle hits are computed
once per angle and broadcast; only the arm-arm test needs the full N x N
product.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Optional

import numpy as np
from PIL import Image

from .geometry import segments_segments_distance_many, segments_shape_collide_many
from .robot import CollisionStatus, RobotModel

if TYPE_CHECKING:
    from .dataset import Workspace

MAX_OBSTACLES = 32
_ROW_CHUNK = 256

# debug palette for obstacle provenance (RGB); self-collision is drawn red
_PALETTE = np.array(
    [[31, 119, 180], [44, 160, 44], [148, 103, 189], [255, 127, 14],
     [23, 190, 207], [188, 189, 34], [140, 86, 75], [227, 119, 194]],
    dtype=np.uint8,
)


@dataclass(frozen=True)
class CSpaceGrid:
    """N x N occupancy grid. ``collision[r, c]`` is True for C_clsn.

    The optional label layer records provenance: ``self_collision`` marks
    arm-arm contact and bit k of ``obstacle_bits`` marks contact with
    obstacle k.
    """

    collision: np.ndarray
    self_collision: Optional[np.ndarray] = None
    obstacle_bits: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.collision, dtype=bool)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"grid must be square, got shape {c.shape}")
        object.__setattr__(self, "collision", c)

    @property
    def resolution(self) -> int:
        return self.collision.shape[0]

    @property
    def free(self) -> np.ndarray:
        return ~self.collision

    def status_at(self, row: int, col: int) -> CollisionStatus:
        if self.self_collision is None or self.obstacle_bits is None:
            raise ValueError("grid has no label layer")
        bits = int(self.obstacle_bits[row, col])
        hits = frozenset(k for k in range(MAX_OBSTACLES) if bits >> k & 1)
        return CollisionStatus(bool(self.self_collision[row, col]), hits)


@dataclass(frozen=True)
class BoundaryMask:
    mask: np.ndarray

    @property
    def resolution(self) -> int:
        return self.mask.shape[0]

    @property
    def fraction(self) -> float:
        return float(self.mask.mean())


def cell_angles(n: int) -> np.ndarray:
    """Cell-center joint angles for resolution ``n``."""
    return 2.0 * math.pi * (np.arange(n) + 0.5) / n


def _arm_segments(r: RobotModel, arm: int, angles: np.ndarray):
    ax, ay = r.anchor(arm)
    return (
        np.full_like(angles, ax),
        np.full_like(angles, ay),
        ax + r.link_length * np.cos(angles),
        ay + r.link_length * np.sin(angles),
    )


def _obstacle_hits(r: RobotModel, shapes, arm: int, angles: np.ndarray) -> np.ndarray:
    """(len(shapes), len(angles)) boolean array of arm-vs-obstacle contact."""
    seg = _arm_segments(r, arm, angles)
    out = np.zeros((len(shapes), len(angles)), dtype=bool)
    for k, shape in enumerate(shapes):
        out[k] = segments_shape_collide_many(seg, r.link_half_width, shape)
    return out


def _label_layers(r: RobotModel, w: "Workspace", q1: np.ndarray, q2: np.ndarray,
                  workers: int = 1):
    shapes = list(w.obstacles)
    if len(shapes) > MAX_OBSTACLES:
        raise ValueError(f"at most {MAX_OBSTACLES} obstacles supported")
    hit1 = _obstacle_hits(r, shapes, 1, q1)
    hit2 = _obstacle_hits(r, shapes, 2, q2)

    bits = np.zeros((len(q2), len(q1)), dtype=np.uint32)
    for k in range(len(shapes)):
        hit = hit2[k][:, None] | hit1[k][None, :]
        bits |= hit.astype(np.uint32) << np.uint32(k)

    a1 = tuple(v[None, :] for v in _arm_segments(r, 1, q1))
    a2 = _arm_segments(r, 2, q2)
    reach = 2.0 * r.link_half_width
    selfc = np.empty((len(q2), len(q1)), dtype=bool)

    def fill(start: int) -> None:
        stop = min(start + _ROW_CHUNK, len(q2))
        s2 = tuple(v[start:stop, None] for v in a2)
        selfc[start:stop] = segments_segments_distance_many(a1, s2) <= reach

    starts = range(0, len(q2), _ROW_CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, starts))
    else:
        for s in starts:
            fill(s)
    return selfc, bits


def rasterize(r: RobotModel, w: "Workspace", n: int, workers: int = 1) -> CSpaceGrid:
    """Label every cell by the collision status at its center configuration."""
    if n < 2:
        raise ValueError(f"resolution must be >= 2, got {n}")
    angles = cell_angles(n)
    selfc, bits = _label_layers(r, w, angles, angles, workers)
    return CSpaceGrid(selfc | (bits != 0), selfc, bits)


def supersample(r: RobotModel, w: "Workspace", n: int, k: int = 4,
                workers: int = 1) -> tuple[CSpaceGrid, BoundaryMask]:
    """Evaluate k x k interior sub-configurations per cell.

    Cells whose sub-samples disagree are flagged in the returned mask and
    labeled Collision. Label layers hold the union over sub-samples.
    """
    if n < 2:
        raise ValueError(f"resolution must be >= 2, got {n}")
    if k < 2:
        raise ValueError(f"subsamples per axis must be >= 2, got {k}")
    sub = 2.0 * math.pi * (np.arange(n * k) + 0.5) / (n * k)
    selfc, bits = _label_layers(r, w, sub, sub, workers)
    coll = (selfc | (bits != 0)).reshape(n, k, n, k)
    any_c = coll.any(axis=(1, 3))
    all_c = coll.all(axis=(1, 3))
    boundary = any_c & ~all_c
    self_any = selfc.reshape(n, k, n, k).any(axis=(1, 3))
    bits_any = np.bitwise_or.reduce(np.bitwise_or.reduce(bits.reshape(n, k, n, k), axis=3), axis=1)
    return CSpaceGrid(any_c, self_any, bits_any), BoundaryMask(boundary)


# ---------------------------------------------------------------------------
# images


def grid_to_image(g: CSpaceGrid) -> np.ndarray:
    """Collision -> 0.0 (black), Free -> 1.0 (white)."""
    return np.where(g.collision, 0.0, 1.0).astype(np.float32)


def _as_unit_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.dtype == np.uint8:
        return a.astype(np.float32) / 255.0
    if a.dtype == bool:
        return a.astype(np.float32)
    return a.astype(np.float32, copy=False)


def image_to_grid(img, eta: float = 0.5) -> CSpaceGrid:
    """Pixels below ``eta`` become Collision, the rest Free."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {eta}")
    a = _as_unit_image(img)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square single-channel image, got shape {a.shape}")
    return CSpaceGrid(a < eta)


def to_uint8(img) -> np.ndarray:
    a = _as_unit_image(img)
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(img)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Load an 8-bit grayscale PNG as float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.float32) / 255.0


def render_labels(g: CSpaceGrid) -> np.ndarray:
    """RGB debug rendering: white free, palette per obstacle, red self-collision."""
    n = g.resolution
    rgb = np.full((n, n, 3), 255, dtype=np.uint8)
    if g.obstacle_bits is None or g.self_collision is None:
        rgb[g.collision] = 0
        return rgb
    for k in range(MAX_OBSTACLES - 1, -1, -1):
        hit = (g.obstacle_bits >> np.uint32(k)) & 1
        if hit.any():
            rgb[hit.astype(bool)] = _PALETTE[k % len(_PALETTE)]
    rgb[g.self_collision] = (214, 39, 40)
    return rgb
