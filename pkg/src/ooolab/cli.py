"""``ooo-lab`` command line.

Exit status: 0 on success, 2 when a sweep finished with failed runs, 1 on
configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, OooLabError

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for partial sweeps here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _k_value(text):
    if text == "rnd":
        return None
    if text in ("1", "2", "3"):
        return int(text)
    raise argparse.ArgumentTypeError("k must be one of rnd, 1, 2, 3")


def cmd_gen_preview(args):
    from .synthdata import write_previews
    for path in write_previews(args.out, seed=args.seed, n_grids=args.grids):
        print(path)
    return EXIT_OK


def cmd_sample_triplets(args):
    from .weaksampler import write_triplet_file
    if args.n < 1:
        raise ConfigurationError("--n must be positive")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_triplet_file(args.out, np.random.default_rng(args.seed), args.n, fixed_k=args.k)
    print(args.out)
    return EXIT_OK


def cmd_train(args):
    from . import models
    from .checkpoint import save_checkpoint
    models.check_hyper(args.kind, args.hyper)
    ckpt = models.train(args.kind, args.hyper, args.seed, args.steps)
    print(save_checkpoint(ckpt, args.out))
    return EXIT_OK


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .harness import METRIC_NAMES
    from .metrics import MetricConfig, evaluate_checkpoint
    names = METRIC_NAMES if args.metrics == "all" else tuple(args.metrics.split(","))
    unknown = set(names) - set(METRIC_NAMES)
    if unknown:
        raise ConfigurationError(f"unknown metrics: {sorted(unknown)}")
    ckpt = load_checkpoint(args.ckpt)
    cfg = MetricConfig(m_train=args.m_train, m_test=args.m_test, seed=args.seed)
    report = evaluate_checkpoint(ckpt, cfg, model_id=Path(args.ckpt).stem, names=names)
    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report["scores"]))
    return EXIT_OK


def cmd_rpm_train(args):
    from .reasoning import train_wren, write_curve
    curve = train_wren(args.embed, steps=args.steps, eval_every=min(args.eval_every, args.steps),
                       seed=args.seed, eval_batches=args.eval_batches)
    write_curve(curve, args.out)
    step, acc, loss = curve[-1]
    print(f"step {step} accuracy {acc:.4f} loss {loss:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    from .harness import STAGES, SweepConfig, run_sweep
    cfg = SweepConfig.load(args.config)
    stages = tuple(args.stages.split(",")) if args.stages else STAGES
    records, wrens, failures = run_sweep(cfg, stages)
    print(f"{len(records)} runs, {len(wrens)} WReN curves, {len(failures)} failures in {cfg.out_dir}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_correlate(args):
    from .harness import correlate, correlations_csv, load_records
    records, wrens = load_records(args.runs)
    text = correlations_csv(*correlate(records, wrens))
    Path(args.out).write_text(text, encoding="utf-8")
    print(args.out)
    return EXIT_OK


def cmd_export(args):
    from .harness import export, load_records
    records, wrens = load_records(args.runs)
    out = args.out or str(Path(args.runs) / f"{args.kind.replace('_csv', '')}.csv")
    export(records, args.kind, wrens, out)
    print(out)
    return EXIT_OK


def build_parser():
    from .harness import EXPORT_KINDS
    from .models import KINDS
    p = _Parser(prog="ooo-lab", description="Odd-one-out disentanglement lab.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-preview", help="write sample grids as PPM images")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--grids", type=int, default=4)
    s.set_defaults(fn=cmd_gen_preview)

    s = sub.add_parser("sample-triplets", help="write a binary triplet dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--k", type=_k_value, default=None, help="rnd, 1, 2 or 3")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample_triplets)

    s = sub.add_parser("train", help="train one model and save its checkpoint")
    s.add_argument("--kind", choices=KINDS, required=True)
    s.add_argument("--hyper", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--steps", type=int, default=10_000)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on the metric suite")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--metrics", default="all", help="all or a comma-separated subset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--m-train", type=int, default=10_000)
    s.add_argument("--m-test", type=int, default=5_000)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("rpm-train", help="train a WReN on generated puzzles")
    s.add_argument("--embed", required=True, help="gt, scratch or ckpt:FILE")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eval-every", type=int, default=1000)
    s.add_argument("--eval-batches", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_rpm_train)

    s = sub.add_parser("sweep", help="run or resume a sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--stages", default=None, help="comma-separated subset of train,eval,wren")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("correlate", help="Spearman table over a finished sweep")
    s.add_argument("--runs", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_correlate)

    s = sub.add_parser("export", help="write plot data from a sweep")
    s.add_argument("--runs", required=True)
    s.add_argument("--kind", choices=EXPORT_KINDS, required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(fn=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OooLabError, OSError) as exc:
        print(f"ooo-lab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
