"""Command-line front end: ``srdl {train,evaluate,infer,visualize,synth-data,sweep}``.

Exit codes: 0 success, 2 configuration error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import yaml

from .config import ConfigError, load_config

log = logging.getLogger("srdl")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _common(p: argparse.ArgumentParser, out_required=True):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    p.add_argument("--out", required=out_required, help="output directory (or file for infer)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srdl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, writing per-epoch checkpoints and logs")
    _common(p)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("evaluate", help="score a manifest and write predictions + metrics")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="defaults to the configured validation split")

    p = sub.add_parser("infer", help="score unlabeled images")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("visualize", help="overlay top-3 spatial attention maps on images")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--top", type=int, default=3)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("synth-data", help="render a synthetic multi-label shapes dataset")
    _common(p)
    p.add_argument("--embedding-dim", type=int, default=16)

    p = sub.add_parser("sweep", help="topK and alpha sweeps for object erasing")
    _common(p)
    return parser


def _synth(args) -> None:
    from .data import SyntheticSpec, generate_synthetic

    raw = {}
    if args.config:
        try:
            raw = yaml.safe_load(Path(args.config).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read spec {args.config}: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("synthetic spec must be a mapping")
    seed = args.seed if args.seed is not None else os.environ.get("SRDL_SEED")
    if seed is not None:
        raw["seed"] = int(seed)
    try:
        spec = SyntheticSpec.from_dict(raw)
    except KeyError as exc:
        raise ConfigError(f"unknown synthetic spec key {exc.args[0]!r}")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}")
    generate_synthetic(spec, embedding_dim=args.embedding_dim).save(args.out)
    print(f"wrote {spec.num_images} images to {args.out}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import harness

    try:
        if args.command == "synth-data":
            _synth(args)
            return 0
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "train":
            result = harness.train(cfg, args.out, resume=args.resume)
            print(f"trained {len(result.epochs)} epoch(s); last: {result.epochs[-1] if result.epochs else None}")
        elif args.command == "evaluate":
            report = harness.evaluate(cfg, args.checkpoint, args.manifest, args.out)
            for k, v in report.headline().items():
                print(f"{k}\t{v:.4f}")
            for w in report.warnings:
                log.warning(w)
        elif args.command == "infer":
            out = Path(args.out)
            if out.suffix == "" or out.is_dir():
                out.mkdir(parents=True, exist_ok=True)
                out = out / "scores.tsv"
            harness.infer(cfg, args.checkpoint, args.images, out)
            print(f"wrote {out}")
        elif args.command == "visualize":
            records = harness.visualize(cfg, args.checkpoint, args.images, args.out, top=args.top)
            print(f"wrote overlays for {len(records)} image(s) to {args.out}")
        elif args.command == "sweep":
            curves = harness.run_sweep(cfg, args.out)
            for name, pts in curves.items():
                print(name, " ".join(f"{x}:{m:.4f}" for x, m in pts))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (harness.TrainingAborted, RuntimeError, OSError, ValueError, KeyError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
