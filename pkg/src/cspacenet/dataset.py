"""
Workspace sampling, rendering and dataset generation.

A dataset lives under ``<root>/<family>/`` as::

    workspace/<id>.png     obstacle-only workspace image (black obstacles)
    cspace/<id>.png        exact C-space (black collision, white free)
    manifest.json          sample records, seeds, splits, geometry

Every sample is reproducible from ``(master_seed, index)`` alone.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .cspace import grid_to_image, rasterize, save_png, to_uint8
from .geometry import (
    Circle2,
    Point2,
    Shape,
    regular_polygon,
    shape_distance,
    shapes_cover_points_many,
)
from .robot import RobotModel

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")


class Family(str, enum.Enum):
    THREE_CIRCLES = "three_circles"
    ONE_TO_THREE_CIRCLES = "one_to_three_circles"
    THREE_CONVEX = "three_convex"
    THREE_CONVEX_ROTATED = "three_convex_rotated"


class WorkspaceSamplingError(RuntimeError):
    """Rejection sampling hit its attempt cap."""


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class ObstacleParams:
    """Pose and size of one obstacle; enough to rebuild its shape exactly."""

    kind: str  # "circle" | "square" | "triangle"
    size: float  # radius for circles, side length for polygons
    center: tuple[float, float]
    rotation: float = 0.0

    def shape(self) -> Shape:
        c = Point2(*self.center)
        if self.kind == "circle":
            return Circle2(c, self.size)
        if self.kind == "square":
            return regular_polygon(4, self.size, c, self.rotation)
        if self.kind == "triangle":
            return regular_polygon(3, self.size, c, self.rotation)
        raise ValueError(f"unknown obstacle kind {self.kind!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "size": self.size, "center": list(self.center),
                "rotation": self.rotation}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ObstacleParams":
        return cls(d["kind"], float(d["size"]), (float(d["center"][0]), float(d["center"][1])),
                   float(d.get("rotation", 0.0)))


@dataclass(frozen=True)
class Workspace:
    """Obstacles in the unit frame. Obstacle k is ``obstacles[k]``."""

    obstacles: tuple[Shape, ...] = ()
    params: tuple[ObstacleParams, ...] = ()

    @classmethod
    def from_params(cls, params: Iterable[ObstacleParams]) -> "Workspace":
        params = tuple(params)
        return cls(tuple(p.shape() for p in params), params)

    @classmethod
    def from_shapes(cls, shapes: Iterable[Shape]) -> "Workspace":
        return cls(tuple(shapes))


@dataclass(frozen=True)
class FamilySpec:
    family: Family = Family.THREE_CIRCLES
    circle_radius: float = 0.06
    square_side: float = 0.12
    triangle_side: float = 0.14
    center_min: float = 0.08
    center_max: float = 0.92
    min_gap: float = 0.0
    max_attempts: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not 0.0 <= self.center_min < self.center_max <= 1.0:
            raise ValueError("need 0 <= center_min < center_max <= 1")
        if min(self.circle_radius, self.square_side, self.triangle_side) <= 0.0:
            raise ValueError("shape sizes must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FamilySpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown family keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# sampling


def sample_seed(master_seed: int, index: int) -> int:
    """64-bit per-sample seed, independent of generation order."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _inventory(spec: FamilySpec, rng: np.random.Generator) -> list[tuple[str, float, bool]]:
    circle = ("circle", spec.circle_radius, False)
    if spec.family is Family.THREE_CIRCLES:
        return [circle] * 3
    if spec.family is Family.ONE_TO_THREE_CIRCLES:
        return [circle] * int(rng.integers(1, 4))
    rotate = spec.family is Family.THREE_CONVEX_ROTATED
    return [("square", spec.square_side, rotate), circle, ("triangle", spec.triangle_side, rotate)]


def _inside_unit_frame(shape: Shape) -> bool:
    if isinstance(shape, Circle2):
        (x, y), r = shape.center, shape.radius
        return r <= x <= 1.0 - r and r <= y <= 1.0 - r
    return all(0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 for x, y in shape.vertices)


def placement_ok(shape: Shape, placed: Sequence[Shape], robot: RobotModel,
                 min_gap: float = 0.0) -> bool:
    if not _inside_unit_frame(shape):
        return False
    for fp in (robot.base_footprint1, robot.base_footprint2):
        if shape_distance(shape, fp) <= min_gap:
            return False
    return all(shape_distance(shape, other) > min_gap for other in placed)


def sample_workspace(spec: FamilySpec, seed: int, robot: Optional[RobotModel] = None) -> Workspace:
    """Draw one workspace of ``spec.family`` by rejection sampling."""
    robot = robot or RobotModel()
    rng = _rng(seed)
    placed_shapes: list[Shape] = []
    placed: list[ObstacleParams] = []
    attempts = 0
    for kind, size, rotate in _inventory(spec, rng):
        while True:
            attempts += 1
            if attempts > spec.max_attempts:
                raise WorkspaceSamplingError(
                    f"{spec.family.value}: no valid placement after {spec.max_attempts} attempts "
                    f"(seed {seed}); shape sizes or margins are infeasible"
                )
            cx, cy = rng.uniform(spec.center_min, spec.center_max, size=2)
            rot = float(rng.uniform(0.0, 2.0 * math.pi)) if rotate else 0.0
            p = ObstacleParams(kind, float(size), (float(cx), float(cy)), rot)
            shape = p.shape()
            if placement_ok(shape, placed_shapes, robot, spec.min_gap):
                placed.append(p)
                placed_shapes.append(shape)
                break
    return Workspace(tuple(placed_shapes), tuple(placed))


def render_workspace(w: Workspace, n: int) -> np.ndarray:
    """Obstacle-only image: black (0.0) obstacles on white (1.0), pixel-center sampling."""
    if n < 2:
        raise ValueError(f"resolution must be >= 2, got {n}")
    centers = (np.arange(n) + 0.5) / n
    px = centers[None, :]
    py = 1.0 - centers[:, None]
    covered = shapes_cover_points_many(px, py, w.obstacles)
    return np.where(covered, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# generation


def split_counts(count: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three nonnegative numbers summing to 1, got {ratios}")
    n_train = int(round(count * ratios[0]))
    n_val = min(int(round(count * ratios[1])), count - n_train)
    return n_train, n_val, count - n_train - n_val


def assign_splits(count: int, ratios: Sequence[float], master_seed: int) -> list[str]:
    """Shuffled partition; depends only on (master_seed, count, ratios)."""
    n_train, n_val, n_test = split_counts(count, ratios)
    labels = np.array(["train"] * n_train + ["val"] * n_val + ["test"] * n_test)
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), count, 0x5B117])
    perm = _rng(int(ss.generate_state(1, dtype=np.uint64)[0])).permutation(count)
    out = np.empty(count, dtype=object)
    out[perm] = labels
    return list(out)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _sample_id(index: int) -> str:
    return f"{index:06d}"


@dataclass
class DatasetManifest:
    family: str
    family_spec: dict[str, Any]
    robot: dict[str, Any]
    resolution: int
    master_seed: int
    ratios: list[float]
    samples: list[dict[str, Any]] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION
    generator_version: str = __version__
    root: Optional[Path] = None  # directory holding manifest.json; not serialized

    def to_json(self) -> str:
        d = {
            "schema_version": self.schema_version,
            "generator_version": self.generator_version,
            "family": self.family,
            "family_spec": self.family_spec,
            "robot": self.robot,
            "resolution": self.resolution,
            "master_seed": self.master_seed,
            "ratios": self.ratios,
            "count": len(self.samples),
            "samples": self.samples,
        }
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(self.to_json())
        tmp.replace(path)
        self.root = path.parent
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        d = json.loads(path.read_text())
        if d.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"{path}: unsupported schema_version {d.get('schema_version')}")
        return cls(
            family=d["family"], family_spec=d["family_spec"], robot=d["robot"],
            resolution=int(d["resolution"]), master_seed=int(d["master_seed"]),
            ratios=list(d["ratios"]), samples=list(d["samples"]),
            schema_version=d["schema_version"], generator_version=d["generator_version"],
            root=path.parent,
        )

    @property
    def robot_model(self) -> RobotModel:
        return RobotModel.from_dict(self.robot)

    def split(self, name: str) -> list[dict[str, Any]]:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if s["split"] == name]

    def workspace(self, record: dict[str, Any]) -> Workspace:
        return Workspace.from_params(ObstacleParams.from_dict(o) for o in record["obstacles"])

    def path(self, record: dict[str, Any], which: str) -> Path:
        return self.root / record[which]


def _make_sample(spec: FamilySpec, robot: RobotModel, master_seed: int, index: int,
                 n: int, out_dir: Path) -> dict[str, Any]:
    seed = sample_seed(master_seed, index)
    sid = _sample_id(index)
    record: dict[str, Any] = {"id": sid, "index": index, "seed": seed,
                              "workspace": f"workspace/{sid}.png", "cspace": f"cspace/{sid}.png"}
    try:
        w = sample_workspace(spec, seed, robot)
        record["obstacles"] = [p.to_dict() for p in w.params]
        ws_path = out_dir / record["workspace"]
        cs_path = out_dir / record["cspace"]
        save_png(render_workspace(w, n), ws_path)
        save_png(grid_to_image(rasterize(robot, w, n)), cs_path)
        record["workspace_sha256"] = _sha256(ws_path)
        record["cspace_sha256"] = _sha256(cs_path)
    except OSError as exc:
        raise DatasetError(f"sample {sid}: {exc}") from exc
    return record


def _record_intact(rec: Optional[dict[str, Any]], out_dir: Path, seed: int) -> bool:
    if rec is None or rec.get("seed") != seed:
        return False
    for which in ("workspace", "cspace"):
        p = out_dir / rec[which]
        if not p.is_file() or _sha256(p) != rec.get(f"{which}_sha256"):
            return False
    return True


def _make_sample_star(args):
    return _make_sample(*args)


def generate_dataset(spec: FamilySpec, count: int, ratios: Sequence[float], master_seed: int,
                     n: int, root, robot: Optional[RobotModel] = None,
                     workers: int = 1) -> DatasetManifest:
    """Generate ``count`` workspace/C-space pairs under ``<root>/<family>/``.

    Resumable: samples whose files and manifest entries already exist and
    match are kept as is.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    split_counts(count, ratios)
    robot = robot or RobotModel()
    out_dir = Path(root) / spec.family.value
    out_dir.mkdir(parents=True, exist_ok=True)

    existing: dict[int, dict[str, Any]] = {}
    mpath = out_dir / "manifest.json"
    if mpath.exists():
        old = DatasetManifest.load(mpath)
        same = (old.family_spec == spec.to_dict() and old.robot == robot.to_dict()
                and old.resolution == n and old.master_seed == master_seed)
        if same:
            existing = {s["index"]: s for s in old.samples}

    records: dict[int, dict[str, Any]] = {}
    todo = []
    for i in range(count):
        rec = existing.get(i)
        if _record_intact(rec, out_dir, sample_seed(master_seed, i)):
            records[i] = {k: v for k, v in rec.items() if k != "split"}
        else:
            todo.append((spec, robot, master_seed, i, n, out_dir))
    if existing:
        log.info("resuming: %d of %d samples already present", count - len(todo), count)

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for rec in pool.map(_make_sample_star, todo, chunksize=8):
                records[rec["index"]] = rec
    else:
        for args in todo:
            rec = _make_sample(*args)
            records[rec["index"]] = rec

    splits = assign_splits(count, ratios, master_seed)
    samples = []
    for i in range(count):
        rec = dict(records[i])
        rec["split"] = splits[i]
        samples.append(rec)
    manifest = DatasetManifest(
        family=spec.family.value, family_spec=spec.to_dict(), robot=robot.to_dict(),
        resolution=n, master_seed=master_seed, ratios=[float(r) for r in ratios],
        samples=samples, root=out_dir,
    )
    manifest.save(mpath)
    return manifest


def regenerate_sample(manifest: DatasetManifest, record: dict[str, Any],
                      from_seed: bool = True) -> tuple[bytes, bytes]:
    """Re-render a sample's PNG bytes, from its seed or from its stored poses."""
    import io

    from PIL import Image

    robot = manifest.robot_model
    if from_seed:
        w = sample_workspace(FamilySpec.from_dict(manifest.family_spec), record["seed"], robot)
    else:
        w = manifest.workspace(record)
    out = []
    for img in (render_workspace(w, manifest.resolution),
                grid_to_image(rasterize(robot, w, manifest.resolution))):
        buf = io.BytesIO()
        Image.fromarray(to_uint8(img)).save(buf, format="PNG")
        out.append(buf.getvalue())
    return out[0], out[1]


def verify_manifest(manifest: DatasetManifest, fraction: float = 0.01, seed: int = 0) -> list[str]:
    """Check invariants of a generated dataset; returns a list of problems."""
    problems = []
    ids = [s["id"] for s in manifest.samples]
    if len(set(ids)) != len(ids):
        problems.append("duplicate sample ids")
    robot = manifest.robot_model
    for rec in manifest.samples:
        for which in ("workspace", "cspace"):
            if not manifest.path(rec, which).is_file():
                problems.append(f"{rec['id']}: missing {which} image")
        shapes = manifest.workspace(rec).obstacles
        for k, s in enumerate(shapes):
            if not placement_ok(s, shapes[:k], robot):
                problems.append(f"{rec['id']}: obstacle {k} violates placement rules")
    if manifest.samples and fraction > 0:
        rng = np.random.default_rng(seed)
        m = max(1, int(round(fraction * len(manifest.samples))))
        for i in rng.choice(len(manifest.samples), size=m, replace=False):
            rec = manifest.samples[int(i)]
            ws, cs = regenerate_sample(manifest, rec, from_seed=False)
            if ws != manifest.path(rec, "workspace").read_bytes() or \
                    cs != manifest.path(rec, "cspace").read_bytes():
                problems.append(f"{rec['id']}: stored poses do not reproduce images")
    return problems
