"""Evaluate segmentation predictions: manifest runs, single-case metrics and GWDL scores."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .io import read_labels, read_volume
from .losses import DistanceMatrix, default_matrix, gwdl_loss_and_grad, gwdl_score, raw_to_gwdl_index
from .metrics import Task, evaluate_case
from .report import CASE_COLUMNS, format_value, run_manifest
from .taxonomy import Taxonomy
from .volume import ProbVolume


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("expected an unsigned 64-bit integer")
    return v


def _taxonomy(path):
    return Taxonomy.from_json(path) if path else Taxonomy()


def cmd_run(args) -> int:
    return run_manifest(
        args.manifest,
        args.out,
        vote_seed=args.vote_seed,
        boot_n=args.boot_n,
        boot_seed=args.boot_seed,
        markdown=args.markdown,
        jobs=args.jobs,
    )


def cmd_metrics(args) -> int:
    taxonomy = _taxonomy(args.taxonomy)
    gt, pred = read_labels(args.gt), read_labels(args.pred)
    records = evaluate_case(gt, pred, taxonomy, Task.parse(args.task), args.case_id, args.method)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(CASE_COLUMNS)
    for r in records:
        w.writerow([r.case_id, r.method_id, r.task.value, r.eval_class]
                   + [format_value(r.get(m)) for m in ("dsc", "hd95", "asd", "avd", "sen")])
    return 0


def cmd_gwdl(args) -> int:
    M = DistanceMatrix.from_json(args.matrix) if args.matrix else default_matrix()
    if len(args.pred_probs) != M.L:
        print(f"error: expected {M.L} probability channels ({', '.join(M.class_names)}), "
              f"got {len(args.pred_probs)}", file=sys.stderr)
        return 2
    prob = ProbVolume.from_channels([read_volume(p) for p in args.pred_probs])
    gt = read_labels(args.gt)
    if args.gt_is_index:
        idx = gt.data.astype(np.int64)
    else:
        lut = raw_to_gwdl_index(_taxonomy(args.taxonomy))
        idx = lut[gt.data]
        if np.any(idx < 0):
            print("error: ground truth holds labels outside the taxonomy", file=sys.stderr)
            return 2
    score = gwdl_score(prob, idx, M)
    loss, grad = gwdl_loss_and_grad(prob, idx, M)
    print(f"score {score!r}")
    print(f"loss {loss!r}")
    print(f"grad_norm {float(np.linalg.norm(grad))!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="evaluate a manifest and write all reports")
    run.add_argument("manifest")
    run.add_argument("--out", required=True)
    run.add_argument("--vote-seed", type=_u64, default=None,
                     help="tie-break seed for majority voting [manifest value or 0]")
    run.add_argument("--boot-n", type=int, default=None, help="bootstrap resamples [10000]")
    run.add_argument("--boot-seed", type=_u64, default=None)
    run.add_argument("--markdown", action="store_true",
                     help="also write tables with best/significant decoration")
    run.add_argument("--jobs", type=int, default=1)
    run.set_defaults(func=cmd_run)

    met = sub.add_parser("metrics", help="evaluate one prediction against one reference")
    met.add_argument("gt")
    met.add_argument("pred")
    met.add_argument("--task", choices=["lung", "bin", "mc"], required=True)
    met.add_argument("--taxonomy")
    met.add_argument("--case-id", default="case")
    met.add_argument("--method", default="pred")
    met.set_defaults(func=cmd_metrics)

    gw = sub.add_parser("gwdl", help="generalized Wasserstein Dice score of a probability map")
    gw.add_argument("pred_probs", nargs="+", help="one volume per class, in matrix order")
    gw.add_argument("gt")
    gw.add_argument("--matrix", help="JSON distance matrix {classes, m}")
    gw.add_argument("--taxonomy")
    gw.add_argument("--gt-is-index", action="store_true",
                    help="ground truth already holds matrix row indices")
    gw.set_defaults(func=cmd_gwdl)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
