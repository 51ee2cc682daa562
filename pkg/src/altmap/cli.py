"""Command line: ``altmap <stage> [options]``.

Every subcommand accepts ``--config``, ``--seed``, ``--out`` and
``--threads``; flags override the config file. Failures print a JSON object
``{"error": <type>, "message": <text>, "command": <name>}`` on stderr and
exit with status 2 (bad input or config) or 1 (anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import LABEL_METHODS, MODELS, ConfigError, RunConfig
from .raster_io import FormatError

log = logging.getLogger("altmap")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="run configuration (JSON)")
    p.add_argument("--seed", type=int, help="top-level seed (unsigned 64-bit)")
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("--threads", type=int, help="worker threads for tiled prediction")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="altmap", description="Alteration mapping from multispectral rasters.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read, merge, select and scale input bands")
    _common(p)
    p.add_argument("--raster", help="input raster header (overrides config)")

    p = sub.add_parser("labels", help="build the labeled sample tables")
    _common(p)
    p.add_argument("--method", choices=LABEL_METHODS)

    p = sub.add_parser("train", help="train one classifier")
    _common(p)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--plot", action="store_true", help="also write a PNG of the training curves")

    p = sub.add_parser("predict", help="classify every pixel of a raster")
    _common(p)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--raster", help="raster to classify (default: the ingested stack)")
    p.add_argument("--tile", type=int)

    p = sub.add_parser("evaluate", help="score a model on the held-out table")
    _common(p)
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--gt", help="ground-truth polygons (.json) or samples (.csv)")

    p = sub.add_parser("render", help="render a predicted class map as PNG")
    _common(p)
    p.add_argument("--model", choices=MODELS)

    p = sub.add_parser("synth", help="generate a synthetic scene with planted zones")
    _common(p)
    p.add_argument("--size", type=int)
    p.add_argument("--noise", type=float)
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {
        "seed": args.seed,
        "threads": args.threads,
        "out": str(args.out.resolve()) if args.out is not None else None,
        "label_method": getattr(args, "method", None),
        "model": getattr(args, "model", None),
        "tile": getattr(args, "tile", None),
    }
    if args.command == "ingest" and args.raster:
        changes["raster"] = str(Path(args.raster).resolve())
    if args.command == "synth":
        synth = dict(cfg.synth)
        if args.size is not None:
            synth["size"] = args.size
        if args.noise is not None:
            synth["noise_std"] = args.noise
        changes["synth"] = synth
    cfg = cfg.override(**changes)
    cfg.validate()
    return cfg


def run(args) -> dict:
    cfg = load_config(args)
    cmd = args.command
    if cmd == "ingest":
        res = pipeline.run_ingest(cfg)
        return {"bands": res["stack"].bands, "width": res["stack"].width, "height": res["stack"].height}
    if cmd == "labels":
        res = pipeline.run_labels(cfg)
        return {"counts": {str(k): v for k, v in res["table"].class_counts().items()},
                "train": len(res["split"].train), "test": len(res["split"].test)}
    if cmd == "train":
        res = pipeline.run_train(cfg, plot=args.plot)
        model = res["model"]
        summary = {"model": model.kind}
        if model.history:
            last = model.history[-1]
            summary.update(epochs=len(model.history), train_acc=last.train_acc, test_acc=last.test_acc)
        return summary
    if cmd == "predict":
        raster = Path(args.raster).resolve() if args.raster else None
        res = pipeline.run_predict(cfg, raster)
        return {"classmap": str(cfg.out_dir / f"classmap_{cfg.model}.hdr")}
    if cmd == "evaluate":
        res = pipeline.run_evaluate(cfg, Path(args.gt).resolve() if args.gt else None)
        rep = res["report"]
        summary = {"accuracy": rep.accuracy, "macro_f1": rep.macro_f1, "macro_auc": rep.macro_auc}
        if "gt_accuracy" in res:
            summary["ground_truth_accuracy"] = res["gt_accuracy"]
        return summary
    if cmd == "render":
        return {"png": str(pipeline.run_render(cfg)["png"])}
    if cmd == "synth":
        res = pipeline.run_synth(cfg)
        return {"scene": str(cfg.out_dir / "scene.hdr"), "bands": res["stack"].bands}
    raise AssertionError(cmd)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except (ConfigError, FormatError, FileNotFoundError, ValueError, IndexError, KeyError) as exc:
        _fail(args.command, exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - report everything as JSON
        _fail(args.command, exc)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


def _fail(command, exc) -> None:
    msg = str(exc.args[0]) if isinstance(exc, KeyError) and exc.args else str(exc)
    err = {"command": command, "error": type(exc).__name__, "message": msg}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
