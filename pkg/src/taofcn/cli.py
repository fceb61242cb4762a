"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 data error, 3 self-test failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import DataFormatError, GenParams, MissingEntryError, generate_dataset, load_dataset, read_pgm
from .decoder import BeamConfig, decode_dense
from .experiment import bench_dense_vs_patch, beam_for, evaluate_strings, run_experiment, write_bench_csv
from .network import BRANCH_MODES, Checkpoint, CheckpointError, SpecError, build_spec, forward_dense, pad_for_dense
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SELFTEST = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sizes(text: str) -> list[tuple[int, int]]:
    try:
        return [tuple(int(v) for v in item.lower().split("x")) for item in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must look like 32x64,32x160, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taofcn", description="Tree-arranged-output FCN for digit-string recognition")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--train", type=int, required=True)
    g.add_argument("--test", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--noise", type=float, default=GenParams.noise)
    g.add_argument("--touch-frac", type=float, default=GenParams.touch_frac)

    t = sub.add_parser("train", help="train a model on a generated corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--spec", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--lr", type=float, required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--branch-mode", choices=BRANCH_MODES, default="decimate")
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    t.add_argument("--log", help="training log CSV (default: <out>.train.csv)")

    i = sub.add_parser("infer", help="decode one image; prints a JSON result")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--dump-dense", help="write the probability map as .npy")
    i.add_argument("--beam-width", type=int, default=BeamConfig.beam_width)
    i.add_argument("--min-char-width", type=int, default=BeamConfig.min_char_width)

    e = sub.add_parser("eval", help="isolated accuracy and string CR/AR as CSV")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["train", "test"])
    e.add_argument("--beam-width", type=int, default=BeamConfig.beam_width)
    e.add_argument("--min-char-width", type=int, default=BeamConfig.min_char_width)

    b = sub.add_parser("bench", help="dense vs per-patch inference timing as CSV")
    b.add_argument("--spec", required=True)
    b.add_argument("--sizes", type=_sizes, required=True)
    b.add_argument("--reps", type=int, required=True)
    b.add_argument("--branch-mode", choices=BRANCH_MODES, default="decimate")
    b.add_argument("--seed", type=int, default=0)

    x = sub.add_parser("experiment", help="run the configured train/evaluate experiment")
    x.add_argument("--config", required=True)

    sub.add_parser("selftest", help="run the oracle suites")
    return p


def cmd_gen_data(args) -> int:
    params = GenParams(noise=args.noise, touch_frac=args.touch_frac, seed=args.seed)
    manifest = generate_dataset(args.out, args.train, args.test, params)
    print(f"wrote {len(manifest['entries'])} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = build_spec(args.spec, args.branch_mode, seed=args.seed)
    samples = load_dataset(args.data, "train")
    if not samples:
        raise DataFormatError(f"no training samples in {args.data}")
    cfg = TrainConfig(learning_rate=args.lr, momentum=args.momentum, epochs=args.epochs,
                      batch_size=args.batch_size, seed=args.seed)
    ckpt, tlog = train(spec, samples, cfg)
    ckpt.save(args.out)
    tlog.write_csv(args.log or f"{args.out}.train.csv")
    print(f"saved {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    image = read_pgm(args.image)
    dense = forward_dense(ckpt.spec, ckpt.params, pad_for_dense(image, ckpt.spec))
    if args.dump_dense:
        np.save(args.dump_dense, dense.probs)
    beam = beam_for(ckpt.spec, BeamConfig(args.beam_width, args.min_char_width))
    result = decode_dense(dense, ckpt.classes, beam)
    print(result.to_json(Path(args.image).stem, ckpt.classes, len(ckpt.classes)))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    samples = load_dataset(args.data, args.split)
    m = evaluate_strings(ckpt, samples, BeamConfig(args.beam_width, args.min_char_width))
    w = csv.writer(sys.stdout)
    w.writerow(["isolated_accuracy", "cr", "ar", "n", "sub", "del", "ins"])
    w.writerow([f"{m['isolated_accuracy']:.4f}", f"{m['cr']:.4f}", f"{m['ar']:.4f}",
                m["n"], m["sub"], m["del"], m["ins"]])
    return EXIT_OK


def cmd_bench(args) -> int:
    spec = build_spec(args.spec, args.branch_mode)
    reports = bench_dense_vs_patch(spec, args.sizes, args.reps, args.seed)
    write_bench_csv(reports, sys.stdout)
    return EXIT_OK


def cmd_experiment(args) -> int:
    rows = run_experiment(args.config)
    w = csv.DictWriter(sys.stdout, ["model", "metric", "value"])
    w.writeheader()
    for r in rows:
        w.writerow({**r, "value": f"{r['value']:.4f}"})
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_all

    failures = run_all(print)
    return EXIT_SELFTEST if failures else EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "experiment": cmd_experiment,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, MissingEntryError, CheckpointError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
