"""Command-line entry point: ``trajgat <command> ...``.

Every command reads its inputs, does its work, and only then writes outputs
(each through a temp file and rename), so a failure leaves nothing behind.
Exit codes: 0 success, 2 usage/config, 3 data, 4 numeric or training failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from ._io import atomic_write_text
from .analysis import STOP_THRESHOLD, PlotKind, PlotSpec, emit_plot, speed_stats
from .errors import ConfigError, InsufficientDataError, TrajError
from .evaluation import (
    BaselineKind, MetricMode, comparison_table, evaluate, load_references,
)
from .model import ModelConfig, TrajGATFormer
from .synth import PROFILES, synth_scene
from .trackio import (
    DEFAULT_FPS, AgentClass, DatasetSplit, Homography, Unit, build_windows,
    estimate_homography, parse_track_file, read_calibration, scene_to_world, split_dataset,
    write_track_file,
)
from .training import Checkpoint, TrainConfig, fit, transfer_init, write_training_log

CONFIG_KEYS = {"model", "train", "mode", "seed", "ratios", "fps", "threshold"}


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def load_config(path):
    """Read a JSON config file; unknown keys anywhere are rejected."""
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    # validate eagerly so a bad section fails before any command runs
    ModelConfig.from_dict(doc.get("model", {}))
    TrainConfig.from_dict(doc.get("train", {}))
    if doc.get("mode", "standard") not in {m.value for m in MetricMode}:
        raise ConfigError(f"{path}: unknown metric mode {doc['mode']!r}")
    return doc


def resolve(args):
    """Merge config-file values with flags (flags win)."""
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    model = ModelConfig.from_dict(cfg.get("model", {}))
    train = replace(TrainConfig.from_dict(cfg.get("train", {})), seed=seed)
    return {"seed": seed, "model": model, "train": train, "file": cfg,
            "out": Path(args.out)}


def _say(text):
    print(text, flush=True)


def _write(path, text):
    atomic_write_text(path, text)
    return path


# commands -------------------------------------------------------------------

def cmd_calibrate(args, cfg):
    src, dst = read_calibration(args.correspondences)
    h = estimate_homography(src, dst)
    path = _write(cfg["out"] / args.name, h.to_json() + "\n")
    _say(f"wrote {path}")


def cmd_ingest(args, cfg):
    unit = Unit(args.units.title())
    h = None
    if args.homography:
        h = Homography.from_json(Path(args.homography).read_text(encoding="utf-8"))
    elif unit == Unit.PIXEL:
        raise ConfigError("pixel-unit tracks need --homography")
    fps = args.fps or cfg["file"].get("fps", DEFAULT_FPS)
    windows = []
    n_agents = set()
    for path in args.tracks:
        scene = parse_track_file(path, unit=unit, fps=fps)
        if h is not None:
            scene = scene_to_world(scene, h)
        found = build_windows(scene, stride=args.stride, first_id=len(windows))
        windows.extend(found)
        n_agents |= {(scene.name, a.cls, a.id) for w in found for a in w.agents + w.obstacles}
    ratios = tuple(cfg["file"].get("ratios", (0.70, 0.20, 0.10)))
    try:
        split = split_dataset(windows, ratios, cfg["seed"], temporal=not args.shuffle)
    except InsufficientDataError:
        if not windows:
            raise
        # too few windows to split: keep them all for evaluation
        print(f"warning: only {len(windows)} window(s); all go to the test split",
              file=sys.stderr)
        split = DatasetSplit((), (), tuple(windows), (0.0, 0.0, 1.0))
    split = replace(split, meta={"sources": [str(p) for p in args.tracks], "fps": fps})
    path = _write(cfg["out"] / args.name, split.to_json())
    noun = "window" if len(windows) == 1 else "windows"
    _say(f"{len(windows)} {noun}, {len(n_agents)} agent tracks "
         f"(train {len(split.train)}, val {len(split.val)}, test {len(split.test)}) -> {path}")


def cmd_train(args, cfg):
    split = DatasetSplit.load(args.dataset)
    model_cfg = cfg["model"]
    if args.variant:
        model_cfg = replace(model_cfg, variant=args.variant)
    train_cfg = cfg["train"]
    if args.epochs is not None:
        train_cfg = replace(train_cfg, epochs=args.epochs)
    state = None
    if args.base:
        model, state = transfer_init(model_cfg, Checkpoint.load(args.base))
    else:
        model = TrajGATFormer(model_cfg, seed=cfg["seed"])
    out = cfg["out"]
    ckpt = fit(model, split, train_cfg, optimizer_state=state)
    log = write_training_log(out / f"{args.name}.log.csv", ckpt.loss_history)
    path = ckpt.save(out / f"{args.name}.json")
    best = ckpt.loss_history[ckpt.epoch - 1]
    _say(f"best epoch {ckpt.epoch}: train {best[1]:.4f}, val {best[2]:.4f} -> {path}, {log}")


def _predictor(spec):
    try:
        return BaselineKind(spec.replace("-", "_")).value
    except ValueError:
        pass
    path = Path(spec)
    if not path.exists():
        kinds = ", ".join(k.value for k in BaselineKind)
        raise ConfigError(f"{spec!r} is neither a checkpoint file nor a baseline ({kinds})")
    return Checkpoint.load(path)


def cmd_eval(args, cfg):
    split = DatasetSplit.load(args.dataset)
    windows = getattr(split, args.split)
    if not windows:
        raise InsufficientDataError(f"the {args.split} split is empty")
    mode = MetricMode(args.mode or cfg["file"].get("mode", MetricMode.STANDARD.value))
    predictor = _predictor(args.predictor)
    report = evaluate(predictor, windows, mode, classes=args.classes)
    cls = AgentClass(args.classes[0]) if args.classes else AgentClass.WORKER
    refs = load_references(cls) if args.refs else None
    name = report.predictor or "model"
    table = comparison_table({name: report}, refs, cls) if cls in report.per_class else None
    out = cfg["out"]
    _write(out / f"{args.name}.json", report.to_json() + "\n")
    if table is not None:
        _write(out / f"{args.name}.csv", table.to_csv())
        sys.stdout.write(table.to_text())
    _say(f"wrote {out / (args.name + '.json')}")


def cmd_analyze(args, cfg):
    fps = args.fps or cfg["file"].get("fps", DEFAULT_FPS)
    thresh = args.threshold if args.threshold is not None else \
        cfg["file"].get("threshold", STOP_THRESHOLD)
    scene = parse_track_file(args.tracks, fps=fps)
    stats = speed_stats(scene, thresh)
    if not stats.agents:
        raise InsufficientDataError("no worker track has two or more points")
    out = cfg["out"]
    _write(out / f"{args.name}.json", stats.to_json() + "\n")
    ids = [a.id for a in stats.agents]
    for key, label in (("mean_speed", "mean walking speed (m/s)"),
                       ("stop_fraction", f"share of speeds below {thresh} m/s")):
        emit_plot(PlotSpec(PlotKind.SPEED_BARS,
                           {key: [[i, getattr(a, key)] for i, a in zip(ids, stats.agents)]},
                           out / f"{args.name}_{key}", "worker id", label))
    for a in stats.agents:
        _say(f"worker {a.id}: mean {a.mean_speed:.3f} m/s, stopped {a.stop_fraction:.1%}")


def cmd_synth(args, cfg):
    records = synth_scene(args.profile, args.agents, args.frames, seed=cfg["seed"],
                          speed=args.speed, noise=args.noise, stop_target=args.stop_target)
    path = write_track_file(cfg["out"] / args.name, records)
    _say(f"{len(records)} records -> {path}")


# parser ---------------------------------------------------------------------

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file (model, train, mode, seed, ...)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    common.add_argument("--out", default=".", help="output directory (default: .)")

    p = _Parser(prog="trajgat", description="Worker and panel trajectory forecasting.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    c = sub.add_parser("calibrate", parents=[common], help="fit a pixel-to-world homography")
    c.add_argument("correspondences", help="4 lines of px,py,wx,wy")
    c.add_argument("--name", default="homography.json")
    c.set_defaults(func=cmd_calibrate)

    c = sub.add_parser("ingest", parents=[common], help="tracks -> windowed dataset")
    c.add_argument("tracks", nargs="+", help="frame,class,id,x,y files, one per scene")
    c.add_argument("--homography", help="JSON from 'calibrate'; needed for pixel tracks")
    c.add_argument("--units", choices=[u.value.lower() for u in Unit], default="world")
    c.add_argument("--fps", type=float)
    c.add_argument("--stride", type=int, default=1)
    c.add_argument("--shuffle", action="store_true", help="seeded random split, not temporal")
    c.add_argument("--name", default="dataset.json")
    c.set_defaults(func=cmd_ingest)

    c = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    c.add_argument("dataset")
    c.add_argument("--variant", choices=["worker_only", "with_obstacle"])
    c.add_argument("--epochs", type=int)
    c.add_argument("--base", help="worker-only checkpoint to start from")
    c.add_argument("--name", default="checkpoint")
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("eval", parents=[common], help="ADE/FDE of a checkpoint or baseline")
    c.add_argument("predictor", help="checkpoint file or constant_velocity | kalman_cv")
    c.add_argument("dataset")
    c.add_argument("--split", choices=["train", "val", "test"], default="test")
    c.add_argument("--mode", choices=[m.value for m in MetricMode])
    c.add_argument("--classes", nargs="+", choices=[a.value for a in AgentClass])
    c.add_argument("--refs", action="store_true", help="compare with published results")
    c.add_argument("--name", default="report")
    c.set_defaults(func=cmd_eval)

    c = sub.add_parser("analyze", parents=[common], help="walking-speed statistics")
    c.add_argument("tracks")
    c.add_argument("--fps", type=float)
    c.add_argument("--threshold", type=float, help=f"stop threshold in m/s ({STOP_THRESHOLD})")
    c.add_argument("--name", default="speed_stats")
    c.set_defaults(func=cmd_analyze)

    c = sub.add_parser("synth", parents=[common], help="write a synthetic track file")
    c.add_argument("--profile", choices=PROFILES, default="linear")
    c.add_argument("--agents", type=int, default=3)
    c.add_argument("--frames", type=int, default=60)
    c.add_argument("--speed", type=float, default=1.0)
    c.add_argument("--noise", type=float, default=0.0)
    c.add_argument("--stop-target", type=float, default=0.7)
    c.add_argument("--name", default="tracks.txt")
    c.set_defaults(func=cmd_synth)
    return p


def _fail(exc):
    print("error: " + " ".join(str(exc).split()), file=sys.stderr)


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        args.func(args, cfg)
    except TrajError as exc:
        _fail(exc)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        # malformed JSON inputs and enum lookups
        _fail(exc)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
