#!/usr/bin/env python3
"""Sweep hidden-prefix sizes and print the attacker-recovery curve.

For m = 0..n, hide the m least sensitive cores (plus the always-hidden
input/output layers) and measure the mean accuracy an attacker's
substitute recovers through label-only queries.  The curve should fall
as m grows; the calibrated cutoff is the first m that drops within
delta of the everything-hidden baseline — the point past which extra
encryption buys no extra protection.

    python3 scripts/exposure_sweep.py
    python3 scripts/exposure_sweep.py --seed 2 --reps 3 --csv out/sweep.csv
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ttseal.calibrate import (
    SubstituteAccuracyOracle,
    binary_search_prefix,
    measure_black_box_baseline,
)
from ttseal.importance import compute_iacc
from ttseal.nnet import ArchSpec, TrainConfig, build_model, evaluate_accuracy, make_clusters, train
from ttseal.threat import JBDAConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=3,
                    help="substitutes averaged per point")
    ap.add_argument("--rounds", type=int, default=4,
                    help="attacker augmentation rounds")
    ap.add_argument("--delta", type=float, default=0.03)
    ap.add_argument("--csv", default=None, help="also write the curve here")
    args = ap.parse_args()

    t0 = time.perf_counter()
    ds = make_clusters(classes=4, clusters_per_class=2, samples=1000,
                       rng_seed=args.seed)
    spec = ArchSpec(hidden_dim=64, tt_mode_sizes=(32, 2, 2, 32),
                    tt_rank_caps=(16, 16, 16))
    Xtr, ytr = ds.subset("train").xy()
    host = train(build_model(spec, rng_seed=args.seed), Xtr, ytr,
                 TrainConfig(learning_rate=0.1, epochs_per_round=120,
                             rng_seed=args.seed))
    Xv, yv = ds.subset("val").xy()
    Xe, ye = ds.subset("eval").xy()
    host_acc = evaluate_accuracy(host, Xe, ye)
    print(f"host: {host.param_count()} params, eval accuracy {host_acc:.3f}")

    report = compute_iacc(host, Xv, yv, probes=2, rng_seed=args.seed)
    ascending = tuple(s.core for s in report.ascending())
    seed_X = ds.subset("seed").xy()[0][:150]
    jbda = JBDAConfig(augmentation_rounds=args.rounds, rng_seed=args.seed)
    oracle = SubstituteAccuracyOracle(
        model=host, ascending_cores=ascending, seed_X=seed_X,
        eval_X=Xe, eval_y=ye, jbda=jbda,
        repetitions=args.reps, rng_seed=args.seed,
    )
    a_bb = measure_black_box_baseline(host, seed_X, Xe, ye, jbda,
                                      repetitions=args.reps, rng_seed=args.seed)
    prefix, calls = binary_search_prefix(oracle.evaluate, len(ascending),
                                         a_bb, args.delta)

    n = len(ascending)
    print(f"\neverything hidden: substitute accuracy {a_bb:.3f} "
          f"(bound {a_bb + args.delta:.3f} at delta {args.delta})")
    print(f"{'hidden m':>8}  {'substitute acc':>14}  {'score of last hidden':>20}")
    rows = []
    for m in range(n + 1):
        acc = oracle.evaluate(m)
        score = report.by_core()[ascending[m - 1]].i_acc if m else float("nan")
        mark = "  <- calibrated cutoff" if m == prefix else ""
        print(f"{m:>8}  {acc:>14.3f}  {score:>20.6g}{mark}")
        rows.append((m, acc, score))
    print(f"\ncutoff m = {prefix} found in {calls} fresh oracle calls; "
          f"total {time.perf_counter() - t0:.0f}s")

    if args.csv:
        os.makedirs(os.path.dirname(args.csv) or ".", exist_ok=True)
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hidden_m", "substitute_acc", "last_hidden_score"])
            w.writerows([m, repr(a), repr(s)] for m, a, s in rows)
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
