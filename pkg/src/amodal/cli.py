"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
Every command takes ``--out``, ``--seed``, ``--config`` (``key = value``
lines whose keys are the command's long option names, with dashes or
underscores) and ``--workers``; explicit flags override config values.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import evaluate as E
from . import masks as M
from . import synth as S
from .model import CheckpointError, load_checkpoint
from .render import render
from .train import TrainConfig, read_config_file, train

log = logging.getLogger("amodal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _common(p, out_required=True):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--workers", type=int, default=1, help="parallel data workers")


def _model_args(p):
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint path, or 'none' to use --baseline")
    p.add_argument("--baseline", choices=["no-extension"], default="no-extension",
                   help="model used when --checkpoint is 'none'")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--threshold", type=float, default=E.DEFAULT_THRESHOLD)
    p.add_argument("--boundary-radius", type=int, default=M.DEFAULT_RADIUS)


_TRAIN_HELP = {
    "set1_probability": "chance that an item asks for completion rather than no-op",
    "lambda_weight": "loss weight inside the weighted region",
    "loss_kind": "asbu, gaussian, ubce or bce",
    "grad_clip": "gradient-norm ceiling, 0 disables",
    "checkpoint_every": "write an extra checkpoint every N iterations (0 = end only)",
    "val_every": "score --val-data every N iterations (0 = never)",
    "cross_scene": "take occluders from other scenes",
}


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = _Parser(prog="amodal", description=__doc__.splitlines()[0], formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic shape dataset", formatter_class=fmt)
    _common(p)
    p.add_argument("--scenes", type=int, default=100)
    p.add_argument("--canvas", type=int, default=64)
    p.add_argument("--min-shapes", type=int, default=2)
    p.add_argument("--max-shapes", type=int, default=6)
    p.add_argument("--prefix", default="scene", help="scene id prefix")

    p = sub.add_parser("train", help="train the segmenter", formatter_class=fmt)
    _common(p)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val-data", default=None, help="validation dataset directory")
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("seed", "workers"):
            continue
        typ = {"int": int, "float": float, "bool": _bool}.get(str(f.type), str)
        p.add_argument("--" + f.name.replace("_", "-"), type=typ, default=f.default,
                       help=_TRAIN_HELP.get(f.name, f.name.replace("_", " ")))

    p = sub.add_parser("eval", help="score completions against amodal ground truth",
                       formatter_class=fmt)
    _common(p)
    _model_args(p)
    p.add_argument("--ordering", choices=["pairwise", "total"], default="pairwise",
                   help="extension areas compared when recovering order")

    p = sub.add_parser("complete", help="complete every instance and recover ordering",
                       formatter_class=fmt)
    _common(p)
    _model_args(p)

    p = sub.add_parser("export-pseudo-gt", help="write completed masks as annotations",
                       formatter_class=fmt)
    _common(p)
    _model_args(p)

    p = sub.add_parser("render", help="write PNG panels per instance", formatter_class=fmt)
    _common(p)
    _model_args(p)
    p.add_argument("--limit", type=int, default=10, help="max scenes to render (0 = all)")
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config_file(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest not in known or dest in ("config", "help"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            defaults[dest] = value
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def _load_model(args):
    if str(args.checkpoint).lower() == "none":
        return E.NoExtensionModel()
    return load_checkpoint(args.checkpoint)


def _load_scenes(path):
    errors = []
    scenes = S.load_modal_dataset(path, errors=errors)
    for sid, exc in errors:
        print(f"warning: skipped scene {sid}: {exc}", file=sys.stderr)
    if not scenes:
        raise S.DatasetError(f"no loadable scenes in {path}")
    return scenes


def cmd_gen_data(args):
    cfg = S.SyntheticConfig(canvas=args.canvas, min_shapes=args.min_shapes,
                            max_shapes=args.max_shapes)
    scenes = S.generate_dataset(args.scenes, args.seed, cfg, prefix=args.prefix)
    S.save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")


def cmd_train(args):
    values = {f.name: getattr(args, f.name) for f in dataclasses.fields(TrainConfig)
              if hasattr(args, f.name)}
    values.update(seed=args.seed, workers=args.workers)
    config = TrainConfig(**values)
    scenes = _load_scenes(args.data)
    val = _load_scenes(args.val_data) if args.val_data else []
    os.makedirs(args.out, exist_ok=True)
    model, report = train(config, scenes, val, out_dir=args.out)
    summary = {
        "config": dataclasses.asdict(config),
        "iterations": len(report.losses),
        "first_loss": report.losses[0] if report.losses else None,
        "final_loss": report.losses[-1] if report.losses else None,
        "validation": report.validation,
        "checkpoint": os.path.basename(report.checkpoint_path),
    }
    if val:
        metrics, _ = E.evaluate(model, val, config.threshold, config.boundary_radius)
        summary["final_metrics"] = metrics.to_json()
        _write_json(os.path.join(args.out, "metrics.json"), metrics.to_json())
    _write_json(os.path.join(args.out, "train_summary.json"), summary)
    print(f"checkpoint: {report.checkpoint_path} ({report.wall_clock:.1f}s)")


def cmd_eval(args):
    model, scenes = _load_model(args), _load_scenes(args.data)
    metrics, _ = E.evaluate(model, scenes, args.threshold, args.boundary_radius,
                            pairwise=args.ordering == "pairwise")
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "metrics.json"), metrics.to_json())
    print(metrics.dumps())


def cmd_complete(args):
    model, scenes = _load_model(args), _load_scenes(args.data)
    records = []
    for scene in scenes:
        preds = E.complete_scene(model, scene, args.threshold, args.boundary_radius)
        orderings = []
        for j in range(len(preds)):
            for k in range(j + 1, len(preds)):
                adj = M.adjacent(preds[j].modal_mask, preds[k].modal_mask, args.boundary_radius)
                if adj:
                    orderings.append({"j": preds[j].instance_id, "k": preds[k].instance_id,
                                      "value": E.recover_order(preds[j], preds[k], adj)})
        records.append({
            "scene_id": scene.scene_id,
            "instances": [{"instance_id": p.instance_id,
                           "amodal_rle": M.rle_encode(p.amodal_mask).to_json(),
                           "extension_area": p.extension_area} for p in preds],
            "orderings": orderings,
        })
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "completions.json"), {"scenes": records})
    print(f"completed {sum(len(r['instances']) for r in records)} instances")


def cmd_export(args):
    model, scenes = _load_model(args), _load_scenes(args.data)
    E.export_pseudo_gt(model, scenes, args.out, args.threshold, args.boundary_radius)
    print(f"exported pseudo ground truth for {len(scenes)} scenes to {args.out}")


def cmd_render(args):
    model, scenes = _load_model(args), _load_scenes(args.data)
    if args.limit:
        scenes = scenes[: args.limit]
    n = 0
    for scene in scenes:
        for pred in E.complete_scene(model, scene, args.threshold, args.boundary_radius):
            n += len(render(scene, pred, args.out))
    print(f"wrote {n} panels to {args.out}")


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "complete": cmd_complete,
    "export-pseudo-gt": cmd_export,
    "render": cmd_render,
}


def run(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        args = parse_args(sys.argv[1:] if argv is None else list(argv))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except (S.DatasetError, M.RleError, CheckpointError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level reporter
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
