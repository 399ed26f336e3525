#!/usr/bin/env python3
"""Drive the full CLI pipeline on a synthetic task and summarize the artifacts.

Runs gen-data -> score -> calibrate -> plan -> seal -> attack -> bench in a
work directory, then prints the calibrated plan and the headline numbers:
substitute transfer at each exposure level and the selective-decryption
timing share.

    python3 scripts/run_pipeline.py --workdir out/demo
    python3 scripts/run_pipeline.py --workdir out/demo --seed 1 --quick
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ttseal.cli import main as cli
from ttseal.config import load_config
from ttseal.nnet import (
    ArchSpec,
    TrainConfig,
    build_model,
    evaluate_accuracy,
    load_dataset_csv,
    save_model,
    train,
)
from ttseal.seal import KeyMaterial

QUICK_OVERRIDES = """\
# reduced attacker effort: smoke-test scale, not the calibrated protocol
samples = 400
augmentation_rounds = 2
repetitions = 1
substitute_epochs = 5
attack_iterations = 5
"""


def run(args: list[str]) -> None:
    code = cli(args)
    if code != 0:
        raise SystemExit(f"ttseal {args[0]} failed with exit code {code}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--workdir", default="out/demo")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true",
                    help="smaller task and attacker budget (~30s instead of minutes)")
    args = ap.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    cfg_path = os.path.join(args.workdir, "pipeline.cfg")
    with open(cfg_path, "w") as fh:
        fh.write(f"rng_seed = {args.seed}\n")
        if args.quick:
            fh.write(QUICK_OVERRIDES)
    key_path = os.path.join(args.workdir, "key.hex")
    if not os.path.exists(key_path):
        with open(key_path, "w") as fh:
            fh.write(KeyMaterial.generate().key.hex())

    base = ["--config", cfg_path, "--out", args.workdir]
    run(["gen-data"] + base)

    # train the host natively in its factored form on the generated task,
    # so the sealed cores carry information the attacker cannot re-derive
    cfg = load_config(cfg_path)
    ds = load_dataset_csv(os.path.join(args.workdir, "data.csv"),
                          cfg.split_fractions(), cfg.rng_seed)
    spec = ArchSpec(
        input_dim=cfg.input_dim, hidden_dim=cfg.hidden_dim,
        tt_layer_count=cfg.tt_layer_count, class_count=cfg.classes,
        tt_mode_sizes=cfg.tt_mode_sizes, tt_row_mode_count=cfg.tt_row_mode_count,
        tt_rank_caps=cfg.tt_rank_caps,
    )
    Xtr, ytr = ds.subset("train").xy()
    host = train(build_model(spec, rng_seed=cfg.rng_seed), Xtr, ytr,
                 TrainConfig(learning_rate=cfg.host_learning_rate,
                             epochs_per_round=cfg.host_epochs,
                             rng_seed=cfg.rng_seed))
    save_model(host, os.path.join(args.workdir, "model.ttm"))
    Xe, ye = ds.subset("eval").xy()
    print(f"trained host: {host.param_count()} params, "
          f"eval accuracy {evaluate_accuracy(host, Xe, ye):.3f}")

    for name in ("score", "calibrate", "plan"):
        run([name] + base)
    run(["seal"] + base + ["--key-file", key_path, "--verify"])
    run(["attack"] + base)
    run(["bench"] + base + ["--key-file", key_path])

    with open(os.path.join(args.workdir, "calibration.json")) as fh:
        cal = json.load(fh)
    with open(os.path.join(args.workdir, "plan.csv")) as fh:
        plan_rows = list(csv.DictReader(fh))
    chosen = [r for r in plan_rows if r["selected"] == "1"]
    cost = sum(int(r["cost"]) for r in chosen)
    total = sum(int(r["cost"]) for r in plan_rows)

    def cores(k: int) -> str:
        return f"{k} core" + ("" if k == 1 else "s")

    print()
    print(f"calibration: hiding the {cores(cal['prefix_len'])} lowest in "
          f"sensitivity (of {len(plan_rows)}) suffices, threshold "
          f"{cal['threshold_value']:.6g} after {cal['oracle_calls']} oracle calls")
    print(f"plan: {cores(len(chosen))} sealed, {cost}/{total} core parameters "
          f"({100 * cost / total:.0f}%): {', '.join(r['core_id'] for r in chosen)}")

    with open(os.path.join(args.workdir, "transfer.csv")) as fh:
        rows = list(csv.DictReader(fh))
    eps_max = max(float(r["epsilon"]) for r in rows)
    print(f"\nnon-targeted transfer at epsilon = {eps_max:.4f}:")
    for r in rows:
        if float(r["epsilon"]) == eps_max and r["mode"] == "NT":
            print(f"  {r['exposure_level']:>10}: transfer {float(r['transfer_ratio']):.3f}  "
                  f"(substitute acc {float(r['substitute_acc']):.3f})")

    with open(os.path.join(args.workdir, "timing.csv")) as fh:
        timing = {r["category"]: r for r in csv.DictReader(fh)}
    sel, full = timing["selective"], timing["full"]
    print(f"\ndecryption: selective {int(sel['median_ns']) / 1e3:.0f}us vs "
          f"full {int(full['median_ns']) / 1e3:.0f}us "
          f"({100 * float(sel['ratio']):.0f}% of full, "
          f"{100 * int(sel['bytes']) / int(full['bytes']):.0f}% of bytes)")


if __name__ == "__main__":
    main()
