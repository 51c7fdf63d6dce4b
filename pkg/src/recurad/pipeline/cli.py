"""Command line entry point: ``recurad {train,infer,eval,selftest,synth}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .. import dataio
from ..config import ConfigError, PipelineConfig, preset
from ..evalmetrics import MetricError, evaluate
from ..tensorcore import UsageError
from .checkpoint import Checkpoint, CheckpointError
from .detector import MODES
from .infer import run_inference
from .selftest import run_selftest
from .train import StageError, detector_from_checkpoint, resolve_dataset, run_training, synth_spec

log = logging.getLogger("recurad")


def _config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=("desk", "paper"), default="desk")
    p.add_argument("--config", type=Path, help="key = value file applied on top of the preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--data", help="dataset root (MVTec layout) or 'synthetic'")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")


def build_config(args) -> PipelineConfig:
    cfg = preset(args.preset)
    if args.config is not None:
        cfg = PipelineConfig.load(args.config, base=cfg)
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg = PipelineConfig.from_text(item, base=cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.data is not None:
        cfg = cfg.replace(data=args.data)
    return cfg.validate()


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recurad", description="Recursive-autoencoder anomaly detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the three training stages")
    _config_args(p)
    p.add_argument("--out-dir", type=Path, default=Path("run"))
    p.add_argument("--no-resume", action="store_true")
    p.add_argument("--stop-after", type=int, choices=(1, 2, 3), default=3)

    p = sub.add_parser("infer", help="score images with a stage-3 checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, default=Path("maps"))
    p.add_argument("inputs", nargs="+", type=Path, help="image files or folders")

    p = sub.add_parser("eval", help="write the per-category evaluation report")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", help="dataset root; defaults to the checkpoint's own data source")
    p.add_argument("--mode", choices=MODES, default="full")
    p.add_argument("--out", type=Path, default=Path("report.csv"))

    p = sub.add_parser("selftest", help="gradient, adjoint and oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mutate", choices=("conv_grad",), help="corrupt a gradient to watch the suite fail")

    p = sub.add_parser("synth", help="write the synthetic benchmark as an image folder")
    _config_args(p)
    p.add_argument("--out-dir", type=Path, default=Path("synthetic"))
    return parser


def _expand(inputs: List[Path]) -> List[Path]:
    out = []
    for item in inputs:
        if item.is_dir():
            out.extend(p for p in sorted(item.rglob("*")) if p.suffix.lower() in dataio.IMAGE_SUFFIXES)
        else:
            out.append(item)
    return out


def _cmd_train(args) -> int:
    cfg = build_config(args)
    ckpt = run_training(cfg, args.out_dir, resume=not args.no_resume, stop_after=args.stop_after)
    print(f"completed stage {ckpt.stage}; checkpoints in {args.out_dir}")
    return 0


def _cmd_infer(args) -> int:
    paths = _expand(args.inputs)
    if not paths:
        raise UsageError("no input images found")
    results = run_inference(args.checkpoint, paths, out_dir=args.out_dir)
    print(f"scored {len(results)} images; maps and scores.csv in {args.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    if ckpt.stage < 3 and args.mode == "full":
        raise UsageError(f"checkpoint only completed stage {ckpt.stage}; use --mode rcae or dpn")
    cfg = ckpt.config if args.data is None else ckpt.config.replace(data=args.data)
    detector = detector_from_checkpoint(ckpt, args.mode)
    report = evaluate(detector, resolve_dataset(cfg), cfg.k_fraction)
    report.to_csv(args.out)
    print(report.summary())
    return 0


def _cmd_selftest(args) -> int:
    report = run_selftest(seed=args.seed, mutate=args.mutate)
    print(report.render())
    return 0 if report.ok else 1


def _cmd_synth(args) -> int:
    cfg = build_config(args)
    index = dataio.generate_synthetic(synth_spec(cfg))
    root = dataio.write_dataset(index, args.out_dir)
    print(f"wrote {len(index.categories)} categories to {root}")
    return 0


COMMANDS = {"train": _cmd_train, "infer": _cmd_infer, "eval": _cmd_eval,
            "selftest": _cmd_selftest, "synth": _cmd_synth}


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, StageError, UsageError, MetricError,
            dataio.DatasetIndexError, dataio.DecodeError, OSError) as exc:
        print(f"recurad {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
