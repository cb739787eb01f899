"""Command line entry points.

    trajedit gen-data  --out runs/demo [--profile smoke]
    trajedit train     --out runs/demo --mode full
    trajedit ablate    --out runs/demo [--modes sum_fusion static_gate ...]
    trajedit eval      --out runs/demo
    trajedit reproduce --out runs/demo
    trajedit edit      --spec case/edit.json --run runs/demo --dest edited

Configuration comes from a named profile (--profile), an optional JSON
config file (--config), and dotted overrides (--set key=value, repeatable).
Exit codes: 0 success, 1 bad configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .conditioning import EditSpec
from .harness import (
    ACCEPTANCE_BRANCHES,
    ConfigError,
    PROFILES,
    contact_sheet,
    evaluate,
    generate_data,
    load_config,
    load_model_for_eval,
    reproduce,
    train_branch,
    write_manifest,
)
from .scenes import save_video
from .training import TRAINING_MODES


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); bad args are config errors
        raise ConfigError(message)


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="base profile")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="dotted config override, repeatable")


def build_parser() -> _Parser:
    parser = _Parser(prog="trajedit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate evaluation cases")
    p.add_argument("--out", required=True, help="pipeline output directory")
    _add_config_args(p)

    p = sub.add_parser("train", help="train one curriculum mode")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="full", choices=TRAINING_MODES)
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)

    p = sub.add_parser("ablate", help="train ablation branches")
    p.add_argument("--out", required=True)
    p.add_argument("--modes", nargs="+", default=list(ACCEPTANCE_BRANCHES[1:]),
                   choices=[m for m in TRAINING_MODES if m != "full"])
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)

    p = sub.add_parser("eval", help="run evaluation suites against trained models")
    p.add_argument("--out", required=True)
    _add_config_args(p)

    p = sub.add_parser("reproduce", help="data + training + evaluation, one command")
    p.add_argument("--out", required=True)
    p.add_argument("--quiet", action="store_true")
    _add_config_args(p)

    p = sub.add_parser("edit", help="apply one edit spec with a trained model")
    p.add_argument("--spec", required=True, help="edit.json path")
    p.add_argument("--run", required=True, help="pipeline directory holding models/")
    p.add_argument("--mode", default="full", choices=TRAINING_MODES)
    p.add_argument("--dest", required=True, help="output directory for the edited video")
    p.add_argument("--long", action="store_true", dest="long_video",
                   help="window the edit over videos longer than the model window")
    _add_config_args(p)

    return parser


def _cfg(args):
    return load_config(args.config, args.profile, args.overrides)


def cmd_gen_data(args) -> int:
    cfg = _cfg(args)
    counts = generate_data(cfg, args.out)
    print(json.dumps(counts))
    return 0


def cmd_train(args) -> int:
    cfg = _cfg(args)
    summaries = train_branch(cfg, args.out, args.mode, quiet=args.quiet)
    print(json.dumps(summaries[-1]))
    return 0


def cmd_ablate(args) -> int:
    cfg = _cfg(args)
    for mode in args.modes:
        summaries = train_branch(cfg, args.out, mode, quiet=args.quiet)
        print(json.dumps({"mode": mode, **summaries[-1]}))
    return 0


def cmd_eval(args) -> int:
    cfg = _cfg(args)
    acceptance = evaluate(cfg, args.out)
    write_manifest(args.out)
    print(json.dumps({k: v["passed"] for k, v in acceptance["criteria"].items()}))
    return 0


def cmd_reproduce(args) -> int:
    cfg = _cfg(args)
    acceptance = reproduce(cfg, args.out, quiet=args.quiet)
    print(json.dumps({k: v["passed"] for k, v in acceptance["criteria"].items()}))
    return 0


def cmd_edit(args) -> int:
    from .editing import edit_long_video, edit_video

    cfg = _cfg(args)
    spec = EditSpec.load(args.spec)
    model, edit_cfg = load_model_for_eval(cfg, args.run, args.mode)
    if args.long_video or spec.video.shape[0] > edit_cfg.window:
        edited = edit_long_video(model, spec, edit_cfg)
    else:
        edited = edit_video(model, spec, edit_cfg)
    dest = Path(args.dest)
    save_video(edited, dest / "video")
    contact_sheet(edited, dest / "frames.png")
    contact_sheet(np.asarray(spec.video), dest / "source_frames.png")
    print(json.dumps({"frames": int(edited.shape[0]), "dest": str(dest)}))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval": cmd_eval,
    "reproduce": cmd_reproduce,
    "edit": cmd_edit,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
