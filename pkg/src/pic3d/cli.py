"""Command-line entry point: ``pic3d {synth,build-data,train,eval,infer,plot}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from pic3d import dataset as D
from pic3d import pointio, shapes
from pic3d import taskgen as T

log = logging.getLogger("pic3d")

STRATEGY_FLAGS = {"random": T.RANDOM, "class": T.CLASS_AWARE, "cd": T.CD_AWARE}


def _seed(value):
    if value is not None:
        return value
    return int(os.environ.get("PIC_SEED", "0"))


def _require(path, what="file"):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def cmd_synth(args):
    paths = shapes.write_corpus(args.out, args.count, seed=_seed(args.seed), n=args.points)
    print(f"wrote {len(paths)} objects to {args.out}")


def cmd_build_data(args):
    _require(args.source, "source directory")
    cfg = D.DataConfig()
    if args.config:
        cfg = D.DataConfig.from_dict(json.loads(_require(args.config, "data config").read_text() or "{}"))
    m = D.build_dataset(args.source, args.out, cfg, seed=_seed(args.seed))
    print(f"wrote {len(m['entries'])} samples to {args.out}")


def cmd_train(args):
    from pic3d.config import parse_config
    from pic3d.train import train

    cfg = parse_config(args.config, seed=args.seed)
    _require(Path(args.data) / D.MANIFEST, "manifest")
    samples = D.load_split(args.data, "train", tasks=cfg.tasks)
    tr = train(cfg, samples, args.out, args.log, steps=args.steps)
    print(f"trained {tr.step} steps -> {args.out}")


def _predictor(args):
    from pic3d.evaluation import CopyPredictor, ModelPredictor
    from pic3d.model import load_model

    if args.copy_baseline:
        return CopyPredictor()
    if not args.ckpt:
        raise ValueError("--ckpt is required unless --copy-baseline is given")
    model, header = load_model(_require(args.ckpt, "checkpoint"))
    run_cfg = header["extra"].get("run_config", {})
    return ModelPredictor(model, run_cfg.get("sampling", "fps"), seed=header["seed"],
                          config=run_cfg or {"model": header["config"]})


def cmd_eval(args):
    from pic3d.evaluation import run_benchmark

    _require(Path(args.data) / D.MANIFEST, "manifest")
    manifest = D.load_manifest(args.data)
    pool = D.load_split(args.data, "train")
    test = D.load_split(args.data, args.split)
    report = run_benchmark(_predictor(args), test, pool, STRATEGY_FLAGS[args.strategy],
                           seed=_seed(args.seed), codebook=D.codebook_from_manifest(manifest))
    report["data_seed"] = manifest["seed"]
    report["data_config"] = manifest["config"]
    Path(args.report).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"evaluated {report['n_samples']} samples -> {args.report}")


def cmd_infer(args):
    from pic3d.evaluation import infer
    from pic3d.model import load_model

    model, header = load_model(_require(args.ckpt, "checkpoint"))
    prompt = T.TaskSample(
        input=pointio.load_cloud(_require(args.prompt_input)),
        target=pointio.load_cloud(_require(args.prompt_target)),
        task="prompt", level=0, class_label="", sample_id="prompt",
    )
    query = pointio.load_cloud(_require(args.query))
    run_cfg = header["extra"].get("run_config", {})
    pred = infer(model, prompt, query, args.variant, run_cfg.get("sampling", "fps"), seed=header["seed"])
    pointio.save_cloud(args.out, pred)
    print(f"wrote {len(pred)} points to {args.out}")


def cmd_plot(args):
    from pic3d.plotting import plot_report

    report = json.loads(_require(args.report, "report").read_text())
    files = plot_report(report, args.out)
    print(f"wrote {len(files)} files to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pic3d", description="In-context learning for point clouds")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic labelled source corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--points", type=int, default=2048)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("build-data", help="build the four-task benchmark from source clouds")
    s.add_argument("--source", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--config", help="JSON data config")
    s.set_defaults(func=cmd_build_data)

    s = sub.add_parser("train", help="train PIC-Sep or PIC-Cat")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log")
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int, help="stop after this many steps")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="benchmark a checkpoint (or the Copy baseline)")
    s.add_argument("--ckpt")
    s.add_argument("--data", required=True)
    s.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS), default="random")
    s.add_argument("--report", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--seed", type=int)
    s.add_argument("--copy-baseline", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="predict a query target from one prompt pair")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--prompt-input", required=True)
    s.add_argument("--prompt-target", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--variant", choices=["sep", "cat"])
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("plot", help="export per-task SVG charts and a CSV")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, KeyError, TypeError, FloatingPointError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"pic3d {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
