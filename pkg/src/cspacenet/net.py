"""
SegNet-style encoder-decoder mapping workspace images to C-space images.

Encoder block i: ``convs_per_block[i]`` x (3x3 conv, batch norm, ReLU), then
2x2 max pooling with recorded indices. Decoder block i mirrors it: max
unpooling with encoder i's indices, then the same number of convs. The last
conv of decoder block 0 is the 1-channel linear output layer, so a config has
exactly ``2 * sum(convs_per_block)`` conv layers.

Training alternates a summed squared error (even epochs) and a summed
absolute error (odd epochs), optimized with Adadelta.
"""

from __future__ import annotations

import copy
import hashlib
import io
import json
import logging
import math
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .cspace import load_png

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cspacenet-checkpoint"
CHECKPOINT_VERSION = 1
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetConfig:
    input_resolution: int = 512
    num_blocks: int = 7
    convs_per_block: tuple[int, ...] = (2, 2, 3, 3, 3, 3, 3)
    channels: tuple[int, ...] = (64, 128, 256, 512, 512, 512, 512)
    in_channels: int = 1
    out_channels: int = 1
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "convs_per_block", tuple(int(k) for k in self.convs_per_block))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if len(self.convs_per_block) != self.num_blocks or len(self.channels) != self.num_blocks:
            raise ValueError(
                f"convs_per_block ({len(self.convs_per_block)}) and channels "
                f"({len(self.channels)}) must both have num_blocks={self.num_blocks} entries"
            )
        if min(self.convs_per_block) < 1 or min(self.channels) < 1:
            raise ValueError("convs_per_block and channels must be positive")
        if self.input_resolution % (2 ** self.num_blocks):
            raise ValueError(
                f"input_resolution {self.input_resolution} not divisible by "
                f"2**num_blocks = {2 ** self.num_blocks}"
            )

    @property
    def conv_layers(self) -> int:
        return 2 * sum(self.convs_per_block)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["convs_per_block"] = list(self.convs_per_block)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "NetConfig":
        return cls(**d)


def _conv_bn_relu(cin: int, cout: int, momentum: float) -> list[nn.Module]:
    return [nn.Conv2d(cin, cout, 3, stride=1, padding=1),
            nn.BatchNorm2d(cout, momentum=momentum),
            nn.ReLU(inplace=True)]


class EncoderDecoder(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.cfg = cfg
        m = cfg.bn_momentum
        self.encoders = nn.ModuleList()
        cin = cfg.in_channels
        for k, c in zip(cfg.convs_per_block, cfg.channels):
            layers = []
            for j in range(k):
                layers += _conv_bn_relu(cin if j == 0 else c, c, m)
            self.encoders.append(nn.Sequential(*layers))
            cin = c

        # decoders[i] mirrors encoders[i]; applied deepest first
        self.decoders = nn.ModuleList()
        for i, (k, c) in enumerate(zip(cfg.convs_per_block, cfg.channels)):
            layers = []
            for j in range(k - 1):
                layers += _conv_bn_relu(c, c, m)
            if i == 0:
                layers.append(nn.Conv2d(c, cfg.out_channels, 3, stride=1, padding=1))
            else:
                layers += _conv_bn_relu(c, cfg.channels[i - 1], m)
            self.decoders.append(nn.Sequential(*layers))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for mod in self.modules():
            if isinstance(mod, nn.Conv2d):
                nn.init.kaiming_normal_(mod.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(mod.bias)
            elif isinstance(mod, nn.BatchNorm2d):
                nn.init.ones_(mod.weight)
                nn.init.zeros_(mod.bias)

    @property
    def conv_layer_count(self) -> int:
        return sum(isinstance(mod, nn.Conv2d) for mod in self.modules())

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        stack = []
        for enc in self.encoders:
            x = enc(x)
            size = x.shape
            x, idx = F.max_pool2d(x, kernel_size=2, stride=2, return_indices=True)
            stack.append((idx, size))
        for dec in reversed(self.decoders):
            idx, size = stack.pop()
            x = F.max_unpool2d(x, idx, kernel_size=2, stride=2, output_size=size[-2:])
            x = dec(x)
        return x


def build_model(cfg: NetConfig, seed: Optional[int] = None) -> EncoderDecoder:
    if seed is not None:
        torch.manual_seed(seed)
    return EncoderDecoder(cfg)


def pool_unpool_roundtrip(x: torch.Tensor) -> torch.Tensor:
    """Max-pool then unpool with the recorded indices.

    Ties resolve to the first maximum in row-major order within each window.
    """
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ValueError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
    squeeze = x.dim() == 2
    if squeeze:
        x = x[None, None]
    p, idx = F.max_pool2d(x, kernel_size=2, stride=2, return_indices=True)
    out = F.max_unpool2d(p, idx, kernel_size=2, stride=2, output_size=x.shape[-2:])
    return out[0, 0] if squeeze else out


# ---------------------------------------------------------------------------
# loss and schedule


def loss_name(epoch: int) -> str:
    return "L2" if epoch % 2 == 0 else "L1"


def l2_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return ((target - pred) ** 2).sum()


def l1_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return (target - pred).abs().sum()


def loss(pred: torch.Tensor, target: torch.Tensor, epoch: int) -> torch.Tensor:
    """Unnormalized pixel-wise loss over a batch; L2 on even epochs, L1 on odd."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: predictions {tuple(pred.shape)} vs targets {tuple(target.shape)}")
    return l2_loss(pred, target) if epoch % 2 == 0 else l1_loss(pred, target)


def lr_at(epoch: int, base: float, decay: float = 0.75, every: int = 25) -> float:
    return base * decay ** (epoch // every) if every > 0 else base


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.01
    lr_decay: float = 0.75
    lr_decay_every: int = 25
    batch_size: int = 5
    max_epochs: int = 60
    plateau_patience: Optional[int] = 4
    plateau_rel_tol: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-6
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrainHyper":
        return cls(**d)


class PlateauStopper:
    """Counts epochs whose validation loss fails to beat the best by ``rel_tol``."""

    def __init__(self, patience: Optional[int], rel_tol: float = 1e-4):
        self.patience = patience
        self.rel_tol = rel_tol
        self.best = math.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        """Record ``value``; returns True if it is a new best."""
        if value < self.best * (1.0 - self.rel_tol):
            self.best = value
            self.stale = 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience is not None and self.stale >= self.patience


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: NetConfig
    state_dict: dict[str, torch.Tensor]
    optimizer_state: Optional[dict[str, Any]] = None
    epoch: int = 0
    best_epoch: Optional[int] = None
    history: list[dict[str, Any]] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)

    def model(self) -> EncoderDecoder:
        m = EncoderDecoder(self.config)
        m.load_state_dict(self.state_dict)
        m.eval()
        return m

    def to_bytes(self) -> bytes:
        """Deterministic zip of ``meta.json`` plus one ``.npy`` per tensor.

        Entry order and timestamps are fixed, so equal checkpoints give equal bytes.
        """
        meta = {
            "format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(), "epoch": self.epoch, "best_epoch": self.best_epoch,
            "history": self.history, "provenance": self.provenance,
            "state_keys": list(self.state_dict), "optimizer": None,
        }
        tensors = {f"model/{k}": v for k, v in self.state_dict.items()}
        if self.optimizer_state is not None:
            opt_meta: dict[str, Any] = {"param_groups": self.optimizer_state["param_groups"], "state": {}}
            for idx, entry in self.optimizer_state["state"].items():
                slots = {}
                for key, val in entry.items():
                    if torch.is_tensor(val):
                        tensors[f"optim/{idx}/{key}"] = val
                        slots[key] = None
                    else:
                        slots[key] = val
                opt_meta["state"][str(idx)] = slots
            meta["optimizer"] = opt_meta
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr(zipfile.ZipInfo("meta.json", _ZIP_EPOCH),
                        json.dumps(meta, sort_keys=True, indent=1))
            for name in sorted(tensors):
                npy = io.BytesIO()
                np.save(npy, tensors[name].detach().cpu().numpy(), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(name + ".npy", _ZIP_EPOCH), npy.getvalue())
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        try:
            zf = zipfile.ZipFile(io.BytesIO(data))
            meta = json.loads(zf.read("meta.json"))
        except (zipfile.BadZipFile, KeyError, ValueError) as e:
            raise ValueError(f"not a checkpoint: {e}") from None
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"not a version-{CHECKPOINT_VERSION} checkpoint")

        def tensor(name: str) -> torch.Tensor:
            return torch.from_numpy(np.load(io.BytesIO(zf.read(name + ".npy")), allow_pickle=False))

        state = {k: tensor(f"model/{k}") for k in meta["state_keys"]}
        opt = None
        if meta["optimizer"] is not None:
            opt = {"param_groups": meta["optimizer"]["param_groups"], "state": {}}
            for idx, slots in meta["optimizer"]["state"].items():
                opt["state"][int(idx)] = {
                    k: tensor(f"optim/{idx}/{k}") if v is None else v for k, v in slots.items()
                }
        return cls(config=NetConfig.from_dict(meta["config"]), state_dict=state,
                   optimizer_state=opt, epoch=meta["epoch"], best_epoch=meta["best_epoch"],
                   history=meta["history"], provenance=meta["provenance"])

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            return cls.from_bytes(Path(path).read_bytes())
        except ValueError as e:
            raise ValueError(f"{path}: {e}") from None

    def weights_digest(self) -> str:
        return state_digest(self.state_dict)


def state_digest(state_dict: dict[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for k in sorted(state_dict):
        t = state_dict[k].detach().cpu().contiguous()
        h.update(k.encode())
        h.update(str(t.dtype).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# data


def load_split(manifest, split: str, limit: Optional[int] = None,
               order_seed: Optional[int] = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack a split's (workspace, C-space) images as (B, 1, N, N) float32 tensors.

    With ``order_seed`` the records are shuffled by that seed before
    ``limit`` is applied.
    """
    records = manifest.split(split)
    if order_seed is not None:
        perm = np.random.default_rng(order_seed).permutation(len(records))
        records = [records[i] for i in perm]
    if limit is not None:
        records = records[:limit]
    if not records:
        raise TrainingError(f"split {split!r} of {manifest.family} is empty")
    x = np.stack([load_png(manifest.path(r, "workspace")) for r in records])[:, None]
    y = np.stack([load_png(manifest.path(r, "cspace")) for r in records])[:, None]
    return torch.from_numpy(x), torch.from_numpy(y)


def _check_resolution(cfg: NetConfig, manifest) -> None:
    if manifest.resolution != cfg.input_resolution:
        raise TrainingError(
            f"dataset resolution {manifest.resolution} != model input_resolution {cfg.input_resolution}"
        )


@torch.no_grad()
def _val_losses(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch: int) -> tuple[float, float]:
    """Per-image mean of the summed squared and absolute errors."""
    model.eval()
    l2 = l1 = 0.0
    for i in range(0, len(x), batch):
        out = model(x[i:i + batch])
        l2 += float(l2_loss(out, y[i:i + batch]))
        l1 += float(l1_loss(out, y[i:i + batch]))
    return l2 / len(x), l1 / len(x)


def _fit(model: EncoderDecoder, optimizer: torch.optim.Optimizer, train_xy, val_xy,
         epochs: int, lr_fn: Callable[[int], float], hyper: TrainHyper, phase: str,
         patience: Optional[int], log_path=None,
         on_epoch: Optional[Callable[[dict], None]] = None):
    x, y = train_xy
    vx, vy = val_xy
    gen = torch.Generator().manual_seed(hyper.seed)
    stopper = PlateauStopper(patience, hyper.plateau_rel_tol)
    history: list[dict[str, Any]] = []
    best_state = copy.deepcopy(model.state_dict())
    best_opt = copy.deepcopy(optimizer.state_dict())
    best_epoch = None
    logf = open(log_path, "a") if log_path else None
    try:
        for epoch in range(epochs):
            t0 = time.perf_counter()
            lr = lr_fn(epoch)
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            total = 0.0
            perm = torch.randperm(len(x), generator=gen)
            for i in range(0, len(x), hyper.batch_size):
                b = perm[i:i + hyper.batch_size]
                optimizer.zero_grad(set_to_none=True)
                value = loss(model(x[b]), y[b], epoch)
                if not torch.isfinite(value):
                    raise TrainingDivergedError(epoch, float(value.detach()))
                value.backward()
                optimizer.step()
                total += float(value.detach())
            val_l2, val_l1 = _val_losses(model, vx, vy, hyper.batch_size)
            if not math.isfinite(val_l2):
                raise TrainingDivergedError(epoch, val_l2)
            improved = stopper.update(val_l2)
            if improved:
                best_state = copy.deepcopy(model.state_dict())
                best_opt = copy.deepcopy(optimizer.state_dict())
                best_epoch = epoch
            rec = {"phase": phase, "epoch": epoch, "loss": loss_name(epoch),
                   "train_loss": total / len(x), "val_loss": val_l2, "val_l1": val_l1,
                   "lr": lr, "best": improved, "seconds": time.perf_counter() - t0}
            history.append(rec)
            log.info("%s epoch %d %s train %.4f val %.4f lr %.6g", phase, epoch, rec["loss"],
                     rec["train_loss"], val_l2, lr)
            if logf:
                logf.write(json.dumps(rec) + "\n")
                logf.flush()
            if on_epoch:
                on_epoch(rec)
            if stopper.should_stop:
                break
    finally:
        if logf:
            logf.close()
    return best_state, best_opt, best_epoch, history


def _adadelta(model: nn.Module, hyper: TrainHyper, lr: float) -> torch.optim.Adadelta:
    return torch.optim.Adadelta(model.parameters(), lr=lr, rho=hyper.rho, eps=hyper.eps,
                                weight_decay=0.0)


def train(cfg: NetConfig, manifest, hyper: TrainHyper = TrainHyper(), log_path=None,
          train_limit: Optional[int] = None, train_order_seed: Optional[int] = None,
          on_epoch=None) -> Checkpoint:
    """Train from scratch; returns the checkpoint with the best validation loss."""
    _check_resolution(cfg, manifest)
    train_xy = load_split(manifest, "train", train_limit, train_order_seed)
    val_xy = load_split(manifest, "val")
    model = build_model(cfg, seed=hyper.seed)
    opt = _adadelta(model, hyper, hyper.lr)
    state, opt_state, best_epoch, history = _fit(
        model, opt, train_xy, val_xy, hyper.max_epochs,
        lambda e: lr_at(e, hyper.lr, hyper.lr_decay, hyper.lr_decay_every),
        hyper, "train", hyper.plateau_patience, log_path, on_epoch,
    )
    return Checkpoint(
        config=cfg, state_dict=state, optimizer_state=opt_state, epoch=len(history),
        best_epoch=best_epoch, history=history,
        provenance={"dataset": manifest.family, "master_seed": manifest.master_seed,
                    "train_samples": len(train_xy[0]), "hyper": asdict(hyper)},
    )


def fine_tune(ckpt: Checkpoint, manifest, epochs: int = 20, lr: float = 0.001,
              hyper: TrainHyper = TrainHyper(), log_path=None, on_epoch=None) -> Checkpoint:
    """Continue training ``ckpt`` for exactly ``epochs`` epochs at a fixed ``lr``."""
    _check_resolution(ckpt.config, manifest)
    if epochs == 0:
        return Checkpoint(ckpt.config, copy.deepcopy(ckpt.state_dict),
                          copy.deepcopy(ckpt.optimizer_state), ckpt.epoch, ckpt.best_epoch,
                          list(ckpt.history), dict(ckpt.provenance))
    train_xy = load_split(manifest, "train")
    val_xy = load_split(manifest, "val")
    model = ckpt.model()
    opt = _adadelta(model, hyper, lr)
    if ckpt.optimizer_state is not None:
        opt.load_state_dict(ckpt.optimizer_state)
    state, opt_state, best_epoch, history = _fit(
        model, opt, train_xy, val_xy, epochs, lambda e: lr, hyper, "finetune",
        patience=None, log_path=log_path, on_epoch=on_epoch,
    )
    prov = {"dataset": manifest.family, "master_seed": manifest.master_seed,
            "source": {"weights_digest": ckpt.weights_digest(), **ckpt.provenance},
            "finetune": {"epochs": epochs, "lr": lr}}
    return Checkpoint(ckpt.config, state, opt_state, ckpt.epoch + len(history),
                      best_epoch, list(ckpt.history) + history, prov)


# ---------------------------------------------------------------------------
# inference


@torch.no_grad()
def predict(model, images, batch_size: int = 8) -> np.ndarray:
    """Predict C-space images in [0, 1] for one (N, N) or many (B, N, N) workspace images."""
    if isinstance(model, Checkpoint):
        model = model.model()
    model.eval()
    a = np.asarray(images, dtype=np.float32)
    single = a.ndim == 2
    if single:
        a = a[None]
    n = model.cfg.input_resolution
    if a.ndim != 3 or a.shape[1:] != (n, n):
        raise ValueError(f"expected images of shape ({n}, {n}), got {a.shape[1:]}")
    out = []
    for i in range(0, len(a), batch_size):
        x = torch.from_numpy(a[i:i + batch_size])[:, None]
        out.append(model(x)[:, 0].clamp_(0.0, 1.0).numpy())
    res = np.concatenate(out)
    return res[0] if single else res
