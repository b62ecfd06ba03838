"""
Pixel-wise evaluation of predicted C-spaces and the experiment protocols
built on it: main results, threshold selection, timing, zero-shot transfer
and the training-set-size study.

Metrics pool confusion counts over every pixel of every image in a split
(micro-averaging). Both positive-class conventions are reported; the
free-positive one is the headline number.
"""

from __future__ import annotations

import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
import torch

from .cspace import CSpaceGrid, grid_to_image, load_png, rasterize
from .dataset import DatasetManifest, Workspace
from .geometry import DiskSet
from .net import Checkpoint, NetConfig, TrainHyper, predict, state_digest, train

THRESHOLD_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))


class EvaluationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    collision_predicted_collision: int = 0
    collision_predicted_free: int = 0  # undetected collisions
    free_predicted_collision: int = 0  # undetected free space
    free_predicted_free: int = 0

    @property
    def total(self) -> int:
        return (self.collision_predicted_collision + self.collision_predicted_free
                + self.free_predicted_collision + self.free_predicted_free)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(*(a + b for a, b in zip(self.counts, other.counts)))

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (self.collision_predicted_collision, self.collision_predicted_free,
                self.free_predicted_collision, self.free_predicted_free)

    @property
    def undetected_collision_rate(self) -> float:
        actual = self.collision_predicted_collision + self.collision_predicted_free
        return self.collision_predicted_free / actual if actual else 0.0

    @property
    def undetected_free_rate(self) -> float:
        actual = self.free_predicted_collision + self.free_predicted_free
        return self.free_predicted_collision / actual if actual else 0.0

    def row_normalized(self) -> list[list[float]]:
        """[[clsn->clsn, clsn->free], [free->clsn, free->free]] as fractions of each actual row."""
        rows = []
        for a, b in ((self.collision_predicted_collision, self.collision_predicted_free),
                     (self.free_predicted_collision, self.free_predicted_free)):
            s = a + b
            rows.append([a / s, b / s] if s else [0.0, 0.0])
        return rows

    def to_dict(self) -> dict[str, int]:
        return asdict(self)


def _confusion_arrays(pred_collision: np.ndarray, true_collision: np.ndarray) -> ConfusionMatrix:
    p = np.asarray(pred_collision, dtype=bool)
    t = np.asarray(true_collision, dtype=bool)
    cc = int(np.count_nonzero(t & p))
    cf = int(np.count_nonzero(t & ~p))
    fc = int(np.count_nonzero(~t & p))
    ff = int(t.size - cc - cf - fc)
    return ConfusionMatrix(cc, cf, fc, ff)


def confusion(pred: CSpaceGrid, truth: CSpaceGrid) -> ConfusionMatrix:
    if pred.resolution != truth.resolution:
        raise ValueError(f"resolution mismatch: {pred.resolution} vs {truth.resolution}")
    return _confusion_arrays(pred.collision, truth.collision)


def metrics(cm: ConfusionMatrix, positive: str = "free") -> dict[str, Any]:
    """Accuracy, precision, recall and F1 with ``positive`` as the positive class.

    Undefined ratios are reported as 0.0 and named in ``flags``.
    """
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    if positive == "free":
        tp, fp, fn = cm.free_predicted_free, cm.collision_predicted_free, cm.free_predicted_collision
    elif positive == "collision":
        tp, fp, fn = (cm.collision_predicted_collision, cm.free_predicted_collision,
                      cm.collision_predicted_free)
    else:
        raise ValueError(f"positive must be 'free' or 'collision', got {positive!r}")
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("no_predicted_positives")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("no_actual_positives")
    if precision + recall:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1_undefined")
    accuracy = (cm.collision_predicted_collision + cm.free_predicted_free) / cm.total
    return {"positive": positive, "accuracy": accuracy, "precision": precision,
            "recall": recall, "f1": f1, "flags": flags}


# ---------------------------------------------------------------------------
# prediction backends


class NetBackend:
    """Runs a trained encoder-decoder on stored workspace images."""

    def __init__(self, ckpt: Checkpoint, batch_size: int = 8):
        self.ckpt = ckpt
        self.model = ckpt.model()
        self.batch_size = batch_size
        self.identifier = ckpt.weights_digest()

    @property
    def resolution(self) -> int:
        return self.ckpt.config.input_resolution

    def predict_images(self, images) -> np.ndarray:
        return predict(self.model, images, self.batch_size)

    def predict_records(self, manifest: DatasetManifest, records) -> np.ndarray:
        imgs = np.stack([load_png(manifest.path(r, "workspace")) for r in records])
        return self.predict_images(imgs)


class OracleBackend:
    """Exact rasterizer standing in for a trained network."""

    identifier = "oracle"

    def __init__(self, robot=None):
        self.robot = robot

    def predict_records(self, manifest: DatasetManifest, records) -> np.ndarray:
        robot = self.robot or manifest.robot_model
        n = manifest.resolution
        return np.stack([grid_to_image(rasterize(robot, manifest.workspace(r), n)) for r in records])

    def predict_images(self, images) -> np.ndarray:
        """Oracle from pixels: every black pixel becomes a disk enclosing its square."""
        from .robot import RobotModel

        robot = self.robot or RobotModel()
        a = np.asarray(images, dtype=np.float32)
        single = a.ndim == 2
        if single:
            a = a[None]
        out = np.stack([grid_to_image(rasterize(robot, workspace_from_image(img), img.shape[0]))
                        for img in a])
        return out[0] if single else out


def workspace_from_image(img, eta: float = 0.5) -> Workspace:
    """Approximate workspace with one disk over each black pixel.

    Each disk encloses its whole pixel, so the result covers the rendered
    obstacles. All pixels form a single obstacle (index 0).
    """
    a = np.asarray(img)
    a = a / 255.0 if a.dtype == np.uint8 else a.astype(np.float32)
    n = a.shape[0]
    rows, cols = np.nonzero(a < eta)
    if not len(rows):
        return Workspace()
    centers = np.column_stack([(cols + 0.5) / n, 1.0 - (rows + 0.5) / n])
    return Workspace.from_shapes([DiskSet(centers, np.sqrt(0.5) / n)])


def _as_backend(model):
    if isinstance(model, Checkpoint):
        return NetBackend(model)
    return model


def _iter_batches(backend, manifest: DatasetManifest, records, batch: int = 16):
    for i in range(0, len(records), batch):
        chunk = records[i:i + batch]
        preds = backend.predict_records(manifest, chunk)
        truth = np.stack([load_png(manifest.path(r, "cspace")) for r in chunk]) < 0.5
        yield chunk, np.asarray(preds, dtype=np.float32), truth


def _records(manifest: DatasetManifest, split: str):
    records = manifest.split(split)
    if not records:
        raise EvaluationError(f"split {split!r} of {manifest.family} is empty")
    return records


def _check_backend_resolution(backend, manifest: DatasetManifest) -> None:
    res = getattr(backend, "resolution", manifest.resolution)
    if res != manifest.resolution:
        raise EvaluationError(f"model resolution {res} != dataset resolution {manifest.resolution}")


# ---------------------------------------------------------------------------
# threshold selection


@dataclass(frozen=True)
class ThresholdChoice:
    eta: float
    f1: float
    grid: tuple[float, ...]
    f1_by_eta: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.eta}")


class ThresholdSweep:
    """Streaming confusion counts for every threshold on a grid.

    A pixel is predicted free at threshold eta iff its value is >= eta.
    """

    def __init__(self, grid: Sequence[float] = THRESHOLD_GRID):
        self.grid = tuple(float(g) for g in grid)
        if list(self.grid) != sorted(self.grid) or not all(0.0 < g < 1.0 for g in self.grid):
            raise ValueError("threshold grid must be increasing inside (0, 1)")
        self._edges = np.asarray(self.grid, dtype=np.float32)
        m = len(self.grid) + 1
        self.hist_collision = np.zeros(m, dtype=np.int64)
        self.hist_free = np.zeros(m, dtype=np.int64)

    def add(self, preds: np.ndarray, true_collision: np.ndarray) -> None:
        p = np.asarray(preds, dtype=np.float32)
        # number of grid values <= p: p is predicted free for grid[j] iff j < k
        k = np.searchsorted(self._edges, p, side="right")
        m = len(self.grid) + 1
        t = np.asarray(true_collision, dtype=bool)
        self.hist_collision += np.bincount(k[t], minlength=m)
        self.hist_free += np.bincount(k[~t], minlength=m)

    def confusions(self) -> list[ConfusionMatrix]:
        # predicted free at grid[j] <=> k > j
        free_c = np.cumsum(self.hist_collision[::-1])[::-1]
        free_f = np.cumsum(self.hist_free[::-1])[::-1]
        tot_c, tot_f = int(self.hist_collision.sum()), int(self.hist_free.sum())
        out = []
        for j in range(len(self.grid)):
            cf = int(free_c[j + 1])
            ff = int(free_f[j + 1])
            out.append(ConfusionMatrix(tot_c - cf, cf, tot_f - ff, ff))
        return out

    def choose(self) -> ThresholdChoice:
        f1s = [metrics(cm, "free")["f1"] for cm in self.confusions()]
        best = max(f1s)
        # ties go to the largest eta: fewer undetected collisions
        j = max(i for i, f in enumerate(f1s) if f == best)
        return ThresholdChoice(self.grid[j], best, self.grid, tuple(f1s))


def select_threshold(model, manifest: DatasetManifest, split: str = "val",
                     grid: Sequence[float] = THRESHOLD_GRID) -> ThresholdChoice:
    """Pick eta maximizing free-positive F1 on ``split``."""
    backend = _as_backend(model)
    _check_backend_resolution(backend, manifest)
    sweep = ThresholdSweep(grid)
    for _, preds, truth in _iter_batches(backend, manifest, _records(manifest, split)):
        sweep.add(preds, truth)
    return sweep.choose()


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class MetricsReport:
    free_positive: dict[str, Any]
    collision_positive: dict[str, Any]
    undetected_collision_rate: float
    undetected_free_rate: float
    eta: float
    confusion: ConfusionMatrix
    n_images: int
    dataset: str = ""
    split: str = ""
    model: str = ""
    macro_f1_free: Optional[float] = None
    us_per_configuration: Optional[float] = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def f1(self) -> float:
        return self.free_positive["f1"]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["confusion"] = self.confusion.to_dict()
        d["confusion_row_normalized"] = self.confusion.row_normalized()
        return d

    def table(self) -> str:
        fp, cp = self.free_positive, self.collision_positive
        rn = self.confusion.row_normalized()
        lines = [
            f"dataset {self.dataset}  split {self.split}  model {self.model[:16]}  eta {self.eta:.2f}"
            f"  images {self.n_images}",
            f"{'positive':<10} {'Accuracy':>9} {'Precision':>10} {'Recall':>8} {'F1':>8}",
            f"{'free':<10} {100 * fp['accuracy']:9.2f} {100 * fp['precision']:10.2f} "
            f"{100 * fp['recall']:8.2f} {100 * fp['f1']:8.2f}",
            f"{'collision':<10} {100 * cp['accuracy']:9.2f} {100 * cp['precision']:10.2f} "
            f"{100 * cp['recall']:8.2f} {100 * cp['f1']:8.2f}",
            "",
            f"{'':<18}{'pred Collision':>15}{'pred Free':>11}",
            f"{'actual Collision':<18}{100 * rn[0][0]:14.2f}%{100 * rn[0][1]:10.2f}%",
            f"{'actual Free':<18}{100 * rn[1][0]:14.2f}%{100 * rn[1][1]:10.2f}%",
        ]
        if self.us_per_configuration is not None:
            lines.append(f"time per configuration: {self.us_per_configuration:.3f} us")
        return "\n".join(lines)


def _report(cm: ConfusionMatrix, eta: float, n_images: int, **kw) -> MetricsReport:
    return MetricsReport(
        free_positive=metrics(cm, "free"), collision_positive=metrics(cm, "collision"),
        undetected_collision_rate=cm.undetected_collision_rate,
        undetected_free_rate=cm.undetected_free_rate, eta=eta, confusion=cm,
        n_images=n_images, **kw,
    )


def evaluate(model, manifest: DatasetManifest, split: str = "test", eta: float = 0.5) -> MetricsReport:
    """Micro-averaged metrics of ``model`` on ``split`` at threshold ``eta``."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {eta}")
    backend = _as_backend(model)
    _check_backend_resolution(backend, manifest)
    records = _records(manifest, split)
    total = ConfusionMatrix()
    per_image_f1 = []
    for _, preds, truth in _iter_batches(backend, manifest, records):
        for p, t in zip(preds, truth):
            cm = _confusion_arrays(p < np.float32(eta), t)
            total = total + cm
            per_image_f1.append(metrics(cm, "free")["f1"])
    return _report(total, eta, len(records), dataset=manifest.family, split=split,
                   model=backend.identifier, macro_f1_free=float(np.mean(per_image_f1)))


# ---------------------------------------------------------------------------
# timing


def hardware_info() -> dict[str, Any]:
    info = {
        "machine": platform.machine(),
        "processor": platform.processor() or "",
        "system": f"{platform.system()} {platform.release()}",
        "python": platform.python_version(),
        "torch": torch.__version__,
        "torch_threads": torch.get_num_threads(),
        "cpu_count": os.cpu_count(),
        "device": "cpu",
    }
    try:
        with open("/proc/cpuinfo") as f:
            for line in f:
                if line.startswith("model name"):
                    info["cpu_model"] = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return info


@torch.no_grad()
def timing_benchmark(model, n_warmup: int = 2, n_runs: int = 5, resolution: Optional[int] = None) -> dict[str, Any]:
    """Median single-image forward time, divided over the N^2 configurations."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if isinstance(model, Checkpoint):
        model = model.model()
    model.eval()
    n = resolution or model.cfg.input_resolution
    x = torch.rand(1, 1, n, n, generator=torch.Generator().manual_seed(0))
    for _ in range(n_warmup):
        model(x)
    times = []
    for _ in range(n_runs):
        t0 = time.perf_counter()
        model(x)
        times.append(time.perf_counter() - t0)
    median = statistics.median(times)
    return {
        "resolution": n,
        "runs_seconds": times,
        "median_ms": 1e3 * median,
        "us_per_configuration": 1e6 * median / (n * n),
        "n_warmup": n_warmup,
        "n_runs": n_runs,
        "hardware": hardware_info(),
    }


# ---------------------------------------------------------------------------
# protocols


def _weights_digest(backend) -> str:
    if isinstance(backend, NetBackend):
        return state_digest(backend.model.state_dict())
    return backend.identifier


def zero_shot_eval(model, target: DatasetManifest) -> dict[str, Any]:
    """Evaluate a model on a family it was not trained on, without weight updates.

    eta is re-selected on the target's validation split, then metrics are taken
    on its test split.
    """
    backend = _as_backend(model)
    before = _weights_digest(backend)
    choice = select_threshold(backend, target, "val")
    report = evaluate(backend, target, "test", choice.eta)
    after = _weights_digest(backend)
    if before != after:
        raise EvaluationError("weights changed during zero-shot evaluation")
    return {
        "target": target.family,
        "eta": choice.eta,
        "val_f1": choice.f1,
        "weights_digest_before": before,
        "weights_digest_after": after,
        "table": {"F1 (%)": 100 * report.f1,
                  "Missed Clsn (%)": 100 * report.undetected_collision_rate,
                  "Missed Free (%)": 100 * report.undetected_free_rate},
        "report": report,
    }


def format_table(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    widths = [max(len(c), 10) for c in columns]
    out = [" ".join(c.rjust(w) for c, w in zip(columns, widths))]
    for r in rows:
        cells = []
        for c, w in zip(columns, widths):
            v = r[c]
            cells.append((f"{v:.2f}" if isinstance(v, float) else str(v)).rjust(w))
        out.append(" ".join(cells))
    return "\n".join(out)


def data_size_study(cfg: NetConfig, manifest: DatasetManifest, sizes: Sequence[int],
                    hyper: TrainHyper = TrainHyper(), order_seed: int = 0,
                    checkpoints: Optional[list] = None) -> list[dict[str, Any]]:
    """Train one model per training-set size and evaluate each on the fixed splits.

    Each model sees the first k samples of one seeded shuffle of the train split.
    """
    n_train = len(manifest.split("train"))
    if not sizes or max(sizes) > n_train:
        raise EvaluationError(f"sizes {list(sizes)} must be nonempty and <= train split size {n_train}")
    rows = []
    for k in sizes:
        ckpt = train(cfg, manifest, hyper, train_limit=k, train_order_seed=order_seed)
        choice = select_threshold(ckpt, manifest, "val")
        rep = evaluate(ckpt, manifest, "test", choice.eta)
        rows.append({"Samples": k, "F1 (%)": 100 * rep.f1,
                     "Missed Clsn (%)": 100 * rep.undetected_collision_rate,
                     "Missed Free (%)": 100 * rep.undetected_free_rate,
                     "eta": choice.eta, "epochs": ckpt.epoch,
                     "weights_digest": ckpt.weights_digest()})
        if checkpoints is not None:
            checkpoints.append(ckpt)
    return rows
