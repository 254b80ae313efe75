"""``hybridct`` command line: one subcommand per pipeline stage plus ``run-all``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .backbones import BACKBONES, BackboneId
from .config import RunConfig, config_from_dict, load_config
from .errors import HybridCTError
from .pipeline import Run, StageError

COMMANDS = ("prepare", "train", "extract", "fuse", "fit-svc", "evaluate", "run-all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridct", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="YAML/JSON run configuration")
    parser.add_argument("--run-dir", type=Path, required=True, help="run directory (runs/<id>)")
    parser.add_argument("--data-root", help="override data_root from the config")
    parser.add_argument("--seed", type=int, help="override the run seed")
    parser.add_argument("--backbone", choices=[b.value for b in BACKBONES],
                        help="train only this backbone (default: all three)")
    parser.add_argument("--force", action="store_true", help="rebuild stale artifacts")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _resolve_config(args) -> RunConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif (args.run_dir / "config.yaml").exists():
        config = load_config(args.run_dir / "config.yaml")
    else:
        config = config_from_dict({})
    overrides = {}
    if args.data_root is not None:
        overrides["data_root"] = args.data_root
    if args.seed is not None:
        overrides["seed"] = args.seed
    return config.with_overrides(**overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run = Run(args.run_dir, _resolve_config(args), force=args.force)
        cmd = args.command
        if cmd == "prepare":
            run.prepare()
        elif cmd == "train":
            for b in ([BackboneId(args.backbone)] if args.backbone else BACKBONES):
                run.train(b)
        elif cmd == "extract":
            run.extract()
        elif cmd == "fuse":
            run.fuse()
        elif cmd == "fit-svc":
            run.fit_svc()
        elif cmd == "evaluate":
            run.evaluate()
        else:
            run.run_all()
    except StageError as exc:
        print(f"hybridct {args.command}: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 2
    except HybridCTError as exc:
        print(f"hybridct {args.command}: {exc}", file=sys.stderr)
        return 2
    ran = ", ".join(run.executed) or "nothing (all stages up to date)"
    print(f"hybridct {args.command}: ran {ran}; manifest {run.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
