"""Command-line surface: train / eval / infer / synth / verify."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np


def _cmd_train(args) -> int:
    from .train import load_config, train
    cfg = load_config(args.config)
    result = train(cfg, resume_from=args.resume)
    if result.aborted:
        print("training aborted on non-finite loss; last good state kept", file=sys.stderr)
        return 1
    print(f"trained {len(result.losses)} iterations; "
          f"final loss {result.losses[-1]:.6f}" if result.losses else "nothing to do")
    print(f"trace: {result.trace_path}")
    print(f"checkpoints: {result.final_path} (final), {result.best_path} (best)")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_checkpoint, load_samples
    from .train import restore_model, evaluate
    from .metrics import write_report, write_pr_csv
    model = restore_model(load_checkpoint(args.ckpt))
    samples = load_samples(args.data)
    report = evaluate(model, samples)
    write_report(report, args.report)
    pr_path = args.pr or args.report + ".pr.csv"
    write_pr_csv(report.pr_points, pr_path)
    agg = report.aggregate
    print("AGGREGATE f=%.4f mae=%.4f pri=%.4f voi=%.4f gce=%.4f bde=%.4f" % agg)
    print(f"report: {args.report}\npr curve: {pr_path}")
    return 0


def _cmd_infer(args) -> int:
    from .data import load_checkpoint, load_image, save_map
    from .train import restore_model, predict
    model = restore_model(load_checkpoint(args.ckpt))
    saliency = predict(model, load_image(args.image))
    save_map(saliency, args.out)
    print(f"saliency map written to {args.out}")
    return 0


def _cmd_synth(args) -> int:
    from .data import synth_generate, save_samples
    samples = synth_generate(args.count, args.extent, args.seed, args.difficulty)
    save_samples(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_verify(_args) -> int:
    from .verify import report
    return 0 if report() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsfnet",
                                     description="dilated scale-wise fusion saliency network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against an image/mask directory")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--pr", default=None, help="pr-curve csv path (default <report>.pr.csv)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="produce a saliency map for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("synth", help="generate a synthetic image/mask dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--extent", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--difficulty", default="easy",
                   choices=("easy", "low-contrast", "multi-lesion", "hairy"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("verify", help="run the formula/gradient/metric oracle suite")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
