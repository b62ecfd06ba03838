"""
Command-line entry point: ``cspacenet <subcommand> --config exp.yaml``.

Every subcommand reads one YAML experiment config (see ``configs/``), applies
``--set block.key=value`` overrides, and writes its artifacts plus a
``provenance.json`` into an output directory that it holds a lockfile on.

Exit codes: 0 success, 1 validation error, 2 runtime failure. Failures print
one machine-parsable line first, e.g.::

    error=ConfigError key=train.lr message="expected a number, got 'fast'"
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .cspace import load_png, save_png, to_uint8
from .dataset import DatasetManifest, Family, FamilySpec, generate_dataset
from .net import Checkpoint, NetConfig, TrainHyper, build_model, file_digest, fine_tune, train
from .robot import RobotModel

log = logging.getLogger("cspacenet")

CONFIG_SCHEMA_VERSION = 1
DATA_ROOT_ENV = "CSPACENET_DATA_ROOT"
CHECKPOINT_NAME = "checkpoint.ckpt"

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


class UsageError(ValueError):
    pass


class LockError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# experiment config

_DATASET_DEFAULTS = {"count": 10000, "ratios": [0.7, 0.15, 0.15], "master_seed": 0,
                     "resolution": 512, "root": None, "workers": 1}
_TRAIN_EXTRAS = {"finetune_epochs": 20, "finetune_lr": 0.001}
_EVAL_DEFAULTS = {"eta": None, "grid": None, "split": "test",
                  "target_family": "one_to_three_circles",
                  "sizes": [1750, 3500, 5250, 7000], "study_order_seed": 0,
                  "bench_warmup": 2, "bench_runs": 5, "plot_limit": 4}
# keys whose value may be null even though the default is not
_NULLABLE = {"train.plateau_patience"}


def _defaults() -> dict[str, dict[str, Any]]:
    return {
        "robot": RobotModel().to_dict(),
        "family": FamilySpec().to_dict(),
        "dataset": dict(_DATASET_DEFAULTS),
        "net": NetConfig().to_dict(),
        "train": {**dataclasses.asdict(TrainHyper()), **_TRAIN_EXTRAS},
        "eval": dict(_EVAL_DEFAULTS),
    }


def _check_value(key: str, default: Any, value: Any) -> Any:
    if value is None:
        if default is None or key in _NULLABLE:
            return None
        raise ConfigError(key, "must not be null")
    if default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "a boolean"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok, want = isinstance(value, str), "a string"
    elif isinstance(default, (list, tuple)):
        ok, want = isinstance(value, (list, tuple)), "a list"
    else:
        ok, want = True, ""
    if not ok:
        raise ConfigError(key, f"expected {want}, got {value!r}")
    return value


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    robot: RobotModel
    family: FamilySpec
    dataset: dict[str, Any]
    net: NetConfig
    train: TrainHyper
    finetune_epochs: int
    finetune_lr: float
    eval: dict[str, Any]
    raw: dict[str, Any]

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def data_root(self) -> Path:
        root = self.dataset["root"] or os.environ.get(DATA_ROOT_ENV) or "data"
        return Path(root)

    def family_dir(self, family: Optional[str] = None) -> Path:
        return self.data_root() / (family or self.family.family.value)

    def load_manifest(self, family: Optional[str] = None) -> DatasetManifest:
        path = self.family_dir(family) / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"no dataset at {path.parent}; run `cspacenet gen` first")
        m = DatasetManifest.load(path)
        if m.resolution != self.net.input_resolution:
            raise ConfigError("net.input_resolution",
                              f"{self.net.input_resolution} != dataset resolution {m.resolution} at {path}")
        return m


def _build(block: str, ctor, values: dict[str, Any]):
    try:
        return ctor(values)
    except (ValueError, TypeError, KeyError) as e:
        # name the field when the message mentions one
        key = next((k for k in sorted(values, key=len, reverse=True) if k in str(e)), None)
        raise ConfigError(f"{block}.{key}" if key else block, str(e)) from None


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    version = raw.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {CONFIG_SCHEMA_VERSION}, got {version!r}")
    defaults = _defaults()
    unknown = set(raw) - set(defaults) - {"schema_version"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown config block")
    merged: dict[str, dict[str, Any]] = {}
    for block, dflt in defaults.items():
        given = raw.get(block) or {}
        if not isinstance(given, dict):
            raise ConfigError(block, "block must be a mapping")
        for k in given:
            if k not in dflt:
                raise ConfigError(f"{block}.{k}", "unknown key")
        merged[block] = {k: _check_value(f"{block}.{k}", d, given.get(k, d)) for k, d in dflt.items()}

    robot = _build("robot", RobotModel.from_dict, merged["robot"])
    family = _build("family", FamilySpec.from_dict, merged["family"])
    net = _build("net", NetConfig.from_dict, merged["net"])
    tr = dict(merged["train"])
    extras = {k: tr.pop(k) for k in _TRAIN_EXTRAS}
    hyper = _build("train", TrainHyper.from_dict, tr)

    ds = merged["dataset"]
    if ds["count"] < 1:
        raise ConfigError("dataset.count", "must be >= 1")
    if len(ds["ratios"]) != 3 or any(r < 0 for r in ds["ratios"]) or abs(sum(ds["ratios"]) - 1.0) > 1e-9:
        raise ConfigError("dataset.ratios", "need three nonnegative ratios summing to 1")
    if ds["resolution"] < 2:
        raise ConfigError("dataset.resolution", "must be >= 2")
    if ds["resolution"] != net.input_resolution:
        raise ConfigError("net.input_resolution",
                          f"{net.input_resolution} != dataset.resolution {ds['resolution']}")
    if hyper.lr < 0 or not np.isfinite(hyper.lr):
        raise ConfigError("train.lr", "must be a finite nonnegative number")
    if hyper.batch_size < 1:
        raise ConfigError("train.batch_size", "must be >= 1")
    if extras["finetune_epochs"] < 0:
        raise ConfigError("train.finetune_epochs", "must be >= 0")

    ev = merged["eval"]
    if ev["eta"] is not None and not 0.0 < float(ev["eta"]) < 1.0:
        raise ConfigError("eval.eta", "must lie strictly inside (0, 1)")
    if ev["split"] not in ("train", "val", "test"):
        raise ConfigError("eval.split", f"unknown split {ev['split']!r}")
    try:
        Family(ev["target_family"])
    except ValueError:
        raise ConfigError("eval.target_family", f"unknown family {ev['target_family']!r}") from None
    if ev["grid"] is not None:
        g = [float(x) for x in ev["grid"]]
        if not g or g != sorted(g) or not all(0.0 < x < 1.0 for x in g):
            raise ConfigError("eval.grid", "must be increasing values inside (0, 1)")
        ev["grid"] = g

    resolved = {"schema_version": CONFIG_SCHEMA_VERSION, **merged}
    return ExperimentConfig(robot, family, ds, net, hyper, extras["finetune_epochs"],
                            extras["finetune_lr"], ev, resolved)


def apply_overrides(raw: dict[str, Any], overrides: Sequence[str]) -> dict[str, Any]:
    """Apply ``block.key=value`` strings; values are parsed as YAML scalars or lists."""
    out = json.loads(json.dumps(raw))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like block.key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(key, f"cannot parse value: {e}") from None
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "override path crosses a non-mapping value")
        node[parts[-1]] = value
    return out


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> ExperimentConfig:
    if path is None:
        raw: dict[str, Any] = {"schema_version": CONFIG_SCHEMA_VERSION}
    else:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError("--config", f"invalid YAML: {e}".replace("\n", " ")) from None
    return parse_config(apply_overrides(raw, overrides))


# ---------------------------------------------------------------------------
# output directories


@contextmanager
def output_lock(directory: Path) -> Iterator[Path]:
    """Exclusive ownership of ``directory`` for the lifetime of the block."""
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{directory} is locked by another run (remove {lock} if stale)") from None
    with os.fdopen(fd, "w") as f:
        f.write(str(os.getpid()))
    try:
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def _write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=str) + "\n")


def _checkpoint_ref(path: Path, ckpt: Checkpoint) -> dict[str, str]:
    return {"path": str(path), "file_sha256": file_digest(path), "weights_digest": ckpt.weights_digest()}


def write_provenance(directory: Path, command: str, cfg: Optional[ExperimentConfig],
                     argv: Sequence[str], inputs: dict[str, Any], outputs: Sequence[Path]) -> None:
    prov = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config_sha256": cfg.digest if cfg else None,
        "config": cfg.raw if cfg else None,
        "seeds": ({"dataset_master_seed": cfg.dataset["master_seed"], "train_seed": cfg.train.seed}
                  if cfg else {}),
        "inputs": inputs,
        "outputs": {p.name: file_digest(p) for p in outputs if p.is_file()},
    }
    _write_json(directory / "provenance.json", prov)


def _load_checkpoint(path: str) -> tuple[Path, Checkpoint]:
    p = Path(path)
    if p.is_dir():
        p = p / CHECKPOINT_NAME
    if not p.is_file():
        raise FileNotFoundError(f"checkpoint not found: {p}")
    return p, Checkpoint.load(p)


def _backend(args, cfg: ExperimentConfig, robot_from_config: bool = False):
    """Network or oracle backend; the oracle uses each dataset's own robot unless told otherwise."""
    from .eval import NetBackend, OracleBackend

    if args.oracle:
        return OracleBackend(cfg.robot if robot_from_config else None), {"backend": "oracle"}
    path, ckpt = _load_checkpoint(args.checkpoint)
    return NetBackend(ckpt), {"backend": "net", "checkpoint": _checkpoint_ref(path, ckpt)}


# ---------------------------------------------------------------------------
# figures


def composite(workspace: np.ndarray, truth: np.ndarray, prediction: np.ndarray,
              eta: float = 0.5, gutter: int = 2) -> np.ndarray:
    """uint8 strip: workspace | truth | prediction | undetected collisions | undetected free.

    In both masks the error pixels are black on white.
    """
    true_c = truth < 0.5
    pred_c = prediction < eta
    missed_collision = np.where(true_c & ~pred_c, 0.0, 1.0)
    missed_free = np.where(~true_c & pred_c, 0.0, 1.0)
    panels = [workspace, truth, prediction, missed_collision, missed_free]
    n = truth.shape[0]
    sep = np.full((n, gutter), 0.5, dtype=np.float32)
    row = []
    for i, p in enumerate(panels):
        if i:
            row.append(sep)
        row.append(np.asarray(p, dtype=np.float32))
    return to_uint8(np.hstack(row))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args, cfg: ExperimentConfig) -> None:
    ds = cfg.dataset
    root = cfg.data_root()
    with output_lock(cfg.family_dir()) as out:
        m = generate_dataset(cfg.family, ds["count"], tuple(ds["ratios"]), ds["master_seed"],
                             ds["resolution"], root, robot=cfg.robot, workers=ds["workers"])
        write_provenance(out, "gen", cfg, args.argv, {}, [out / "manifest.json"])
    print(f"{len(m.samples)} samples in {out}")


def _train_outputs(out: Path, ckpt: Checkpoint, cfg, args, inputs, command: str) -> Path:
    path = ckpt.save(out / CHECKPOINT_NAME)
    summary = {"epochs": ckpt.epoch, "best_epoch": ckpt.best_epoch,
               "best_val_loss": min((h["val_loss"] for h in ckpt.history), default=None),
               "weights_digest": ckpt.weights_digest(), "file_sha256": file_digest(path)}
    _write_json(out / "summary.json", summary)
    write_provenance(out, command, cfg, args.argv, inputs,
                     [path, out / "summary.json", out / f"{command}.jsonl"])
    print(f"checkpoint {path} weights {summary['weights_digest'][:16]}")
    return path


def cmd_train(args, cfg: ExperimentConfig) -> None:
    m = cfg.load_manifest()
    with output_lock(Path(args.out)) as out:
        logp = out / "train.jsonl"
        logp.unlink(missing_ok=True)
        ckpt = train(cfg.net, m, cfg.train, log_path=logp)
        _train_outputs(out, ckpt, cfg, args, {"dataset": str(m.root), "dataset_master_seed": m.master_seed},
                       "train")


def cmd_finetune(args, cfg: ExperimentConfig) -> None:
    src_path, src = _load_checkpoint(args.checkpoint)
    family = args.family or cfg.family.family.value
    m = cfg.load_manifest(family)
    with output_lock(Path(args.out)) as out:
        logp = out / "finetune.jsonl"
        logp.unlink(missing_ok=True)
        ckpt = fine_tune(src, m, cfg.finetune_epochs, cfg.finetune_lr, cfg.train, log_path=logp)
        _train_outputs(out, ckpt, cfg, args,
                       {"dataset": str(m.root), "source_checkpoint": _checkpoint_ref(src_path, src)},
                       "finetune")


def _grid(cfg: ExperimentConfig):
    from .eval import THRESHOLD_GRID

    return tuple(cfg.eval["grid"]) if cfg.eval["grid"] else THRESHOLD_GRID


def cmd_eval(args, cfg: ExperimentConfig) -> None:
    from .eval import select_threshold, evaluate

    m = cfg.load_manifest(args.family)
    backend, inputs = _backend(args, cfg)
    with output_lock(Path(args.out)) as out:
        eta = args.eta if args.eta is not None else cfg.eval["eta"]
        threshold = None
        if eta is None:
            choice = select_threshold(backend, m, "val", _grid(cfg))
            eta = choice.eta
            threshold = {"eta": choice.eta, "val_f1": choice.f1}
        rep = evaluate(backend, m, cfg.eval["split"], eta)
        d = rep.to_dict()
        d["threshold_selection"] = threshold
        d["inputs"] = inputs
        _write_json(out / "report.json", d)
        (out / "report.txt").write_text(rep.table() + "\n")
        write_provenance(out, "eval", cfg, args.argv, {**inputs, "dataset": str(m.root)},
                         [out / "report.json", out / "report.txt"])
    print(rep.table())


def cmd_zeroshot(args, cfg: ExperimentConfig) -> None:
    from .eval import zero_shot_eval

    target = cfg.load_manifest(args.family or cfg.eval["target_family"])
    backend, inputs = _backend(args, cfg)
    with output_lock(Path(args.out)) as out:
        z = zero_shot_eval(backend, target)
        rep = z.pop("report")
        z["report"] = rep.to_dict()
        z["inputs"] = inputs
        _write_json(out / "zeroshot.json", z)
        lines = [f"{'Target':<24}{'F1 (%)':>10}{'Missed Clsn (%)':>18}{'Missed Free (%)':>18}",
                 f"{target.family:<24}{z['table']['F1 (%)']:10.2f}{z['table']['Missed Clsn (%)']:18.2f}"
                 f"{z['table']['Missed Free (%)']:18.2f}"]
        (out / "zeroshot.txt").write_text("\n".join(lines) + "\n")
        write_provenance(out, "zeroshot", cfg, args.argv, {**inputs, "dataset": str(target.root)},
                         [out / "zeroshot.json", out / "zeroshot.txt"])
    print("\n".join(lines))


def cmd_study(args, cfg: ExperimentConfig) -> None:
    from .eval import data_size_study, format_table

    m = cfg.load_manifest()
    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else list(cfg.eval["sizes"])
    with output_lock(Path(args.out)) as out:
        ckpts: list[Checkpoint] = []
        rows = data_size_study(cfg.net, m, sizes, cfg.train, cfg.eval["study_order_seed"], ckpts)
        paths = [c.save(out / f"checkpoint_{k}.ckpt") for k, c in zip(sizes, ckpts)]
        _write_json(out / "study.json", rows)
        table = format_table(rows, ["Samples", "F1 (%)", "Missed Clsn (%)", "Missed Free (%)"])
        (out / "study.txt").write_text(table + "\n")
        write_provenance(out, "study-datasize", cfg, args.argv, {"dataset": str(m.root), "sizes": sizes},
                         [out / "study.json", out / "study.txt", *paths])
    print(table)


def cmd_bench(args, cfg: ExperimentConfig) -> None:
    from .eval import timing_benchmark

    if args.checkpoint:
        path, ckpt = _load_checkpoint(args.checkpoint)
        model, inputs = ckpt.model(), {"checkpoint": _checkpoint_ref(path, ckpt)}
    else:
        model, inputs = build_model(cfg.net, seed=cfg.train.seed), {"checkpoint": None}
    with output_lock(Path(args.out)) as out:
        res = timing_benchmark(model, cfg.eval["bench_warmup"], cfg.eval["bench_runs"], args.resolution)
        res["inputs"] = inputs
        _write_json(out / "bench.json", res)
        write_provenance(out, "bench", cfg, args.argv, inputs, [out / "bench.json"])
    print(f"{res['median_ms']:.2f} ms per {res['resolution']}^2 image, "
          f"{res['us_per_configuration']:.4f} us per configuration")


def _read_image(path: str) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"image not found: {p}")
    img = load_png(p)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise UsageError(f"{p}: expected a square grayscale image, got shape {img.shape}")
    return img


def cmd_predict(args, cfg: ExperimentConfig) -> None:
    img = _read_image(args.input)
    backend, inputs = _backend(args, cfg, robot_from_config=True)
    pred = backend.predict_images(img)
    if args.eta is not None:
        pred = np.where(pred < args.eta, 0.0, 1.0)
    target = Path(args.output)
    target.parent.mkdir(parents=True, exist_ok=True)
    save_png(pred, target)
    prov = target.with_suffix(".provenance.json")
    _write_json(prov, {"command": "predict", "argv": list(args.argv), "version": __version__,
                       "config_sha256": cfg.digest, "inputs": {**inputs, "image": str(args.input),
                                                               "image_sha256": file_digest(args.input)},
                       "eta": args.eta, "output_sha256": file_digest(target)})
    print(target)


def cmd_plot(args, cfg: ExperimentConfig) -> None:
    m = cfg.load_manifest(args.family)
    backend, inputs = _backend(args, cfg)
    records = m.split(cfg.eval["split"])
    if args.ids:
        wanted = set(args.ids.split(","))
        records = [r for r in records if r["id"] in wanted]
        missing = wanted - {r["id"] for r in records}
        if missing:
            raise UsageError(f"ids not in split {cfg.eval['split']}: {sorted(missing)}")
    else:
        records = records[:cfg.eval["plot_limit"]]
    eta = args.eta if args.eta is not None else (cfg.eval["eta"] or 0.5)
    preds = backend.predict_records(m, records)
    with output_lock(Path(args.out)) as out:
        written = []
        for rec, pred in zip(records, preds):
            strip = composite(load_png(m.path(rec, "workspace")), load_png(m.path(rec, "cspace")), pred, eta)
            p = out / f"{rec['id']}.png"
            save_png(strip, p)
            written.append(p)
        write_provenance(out, "plot", cfg, args.argv, {**inputs, "dataset": str(m.root), "eta": eta}, written)
    print(f"{len(written)} figures in {out}")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cspacenet", description="Workspace-to-C-space learning experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(name: str, help_: str, out: bool = True):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", "-c", help="experiment YAML (defaults when omitted)")
        s.add_argument("--set", action="append", default=[], metavar="BLOCK.KEY=VALUE",
                       help="override one config key; repeatable")
        s.add_argument("-v", "--verbose", action="store_true")
        if out:
            s.add_argument("--out", "-o", required=True, help="output directory")
        return s

    def model_args(s, oracle: bool = True):
        s.add_argument("--checkpoint", help="checkpoint file or training output directory")
        if oracle:
            s.add_argument("--oracle", action="store_true", help="use the exact rasterizer instead of a network")

    common("gen", "generate a dataset", out=False)
    common("train", "train from scratch")
    s = common("finetune", "continue training a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--family", help="dataset family to fine-tune on")
    s = common("eval", "evaluate on a split")
    model_args(s)
    s.add_argument("--eta", type=float, help="fixed threshold; selected on val when omitted")
    s.add_argument("--family")
    s = common("zeroshot", "evaluate on another family without weight updates")
    model_args(s)
    s.add_argument("--family", help="target family (default eval.target_family)")
    s = common("study-datasize", "train and evaluate one model per training-set size")
    s.add_argument("--sizes", help="comma-separated sizes (default eval.sizes)")
    s = common("bench", "time single-image inference")
    model_args(s, oracle=False)
    s.add_argument("--resolution", type=int)
    s = common("predict", "predict the C-space image of one workspace image", out=False)
    model_args(s)
    s.add_argument("--input", "-i", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--eta", type=float, help="binarize the output at this threshold")
    s = common("plot", "workspace | truth | prediction | missed-collision | missed-free composites")
    model_args(s)
    s.add_argument("--ids", help="comma-separated sample ids (default first eval.plot_limit)")
    s.add_argument("--eta", type=float)
    s.add_argument("--family")
    return p


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "finetune": cmd_finetune, "eval": cmd_eval,
    "zeroshot": cmd_zeroshot, "study-datasize": cmd_study, "bench": cmd_bench,
    "predict": cmd_predict, "plot": cmd_plot,
}


def _fail(kind: str, message: str, key: Optional[str] = None) -> None:
    head = f"error={kind}"
    if key:
        head += f" key={key}"
    print(f"{head} message={json.dumps(message.splitlines()[0] if message else '')}", file=sys.stderr)
    if "\n" in message:
        print(message, file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        for name in ("eta",):
            v = getattr(args, name, None)
            if v is not None and not 0.0 < v < 1.0:
                raise ConfigError(f"--{name}", "must lie strictly inside (0, 1)")
        if hasattr(args, "oracle"):
            if args.oracle and args.checkpoint:
                raise UsageError("--oracle and --checkpoint are mutually exclusive")
            if not args.oracle and not args.checkpoint:
                raise UsageError("either --checkpoint or --oracle is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config, args.set)
        COMMANDS[args.command](args, cfg)
        return EXIT_OK
    except ConfigError as e:
        _fail("ConfigError", str(e), e.key)
        return EXIT_VALIDATION
    except UsageError as e:
        _fail("UsageError", str(e))
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        _fail("Interrupted", "interrupted")
        return EXIT_RUNTIME
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 2
        _fail(type(e).__name__, str(e))
        log.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
