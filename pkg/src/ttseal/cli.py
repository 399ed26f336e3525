"""Command-line pipeline: score, calibrate, plan, seal, attack, bench.

Every subcommand reads one flat key=value config (all keys optional),
derives all randomness from a single seed, and writes fixed-name
artifacts into the output directory, so a pipeline is a sequence of
idempotent steps:

    ttseal gen-data   ->  data.csv
    ttseal decompose  ->  model.ttm            (train host, TT-factor it)
    ttseal score      ->  importance.csv/.bin
    ttseal calibrate  ->  calibration.json, calibration_trace.csv
    ttseal plan       ->  plan.csv
    ttseal seal       ->  model.sealed
    ttseal unseal     ->  model_unsealed.ttm
    ttseal attack     ->  transfer.csv
    ttseal bench      ->  timing.csv

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 missing/malformed input file, 4 infeasible threshold, 5 failed
authentication, 6 model has no TT cores.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import calibrate as calibrate_mod
from . import importance as importance_mod
from . import seal as seal_mod
from . import selector as selector_mod
from . import threat as threat_mod
from .config import ConfigError, PipelineConfig, load_config
from .nnet import (
    ArchSpec,
    Dataset,
    Model,
    ModelShapeError,
    TrainConfig,
    build_dense_model,
    decompose_hidden_layers,
    evaluate_accuracy,
    load_dataset_csv,
    load_model,
    make_clusters,
    parse_param_key,
    save_dataset_csv,
    save_model,
    train,
)
from .rngutil import derive_seed

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4
EXIT_AUTH = 5
EXIT_NO_TT_CORES = 6

DATA_CSV = "data.csv"
MODEL_FILE = "model.ttm"
IMPORTANCE_CSV = "importance.csv"
IMPORTANCE_BIN = "importance.bin"
CALIBRATION_JSON = "calibration.json"
TRACE_CSV = "calibration_trace.csv"
PLAN_CSV = "plan.csv"
SEALED_FILE = "model.sealed"
UNSEALED_FILE = "model_unsealed.ttm"
TRANSFER_CSV = "transfer.csv"
TIMING_CSV = "timing.csv"

TRANSFER_HEADER = ["epsilon", "mode", "exposure_level", "transfer_ratio",
                   "substitute_acc", "n"]


class IOFailure(Exception):
    """An input artifact is missing or unreadable."""


class NoTTCoresError(Exception):
    """The model has no TT cores to score or protect."""


def _artifact(out_dir: str, name: str) -> str:
    return os.path.join(out_dir, name)


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise IOFailure(f"{path} not found; {hint}")
    return path


def _load_dataset(cfg: PipelineConfig, out_dir: str) -> Dataset:
    if cfg.dataset_path is not None:
        path = _require(cfg.dataset_path, "check dataset_path in the config")
    else:
        path = _artifact(out_dir, DATA_CSV)
        if not os.path.exists(path):
            return _make_dataset(cfg)
    try:
        return load_dataset_csv(path, cfg.split_fractions(), cfg.rng_seed)
    except ValueError as exc:
        raise IOFailure(str(exc)) from None


def _make_dataset(cfg: PipelineConfig) -> Dataset:
    return make_clusters(
        classes=cfg.classes,
        clusters_per_class=cfg.clusters_per_class,
        samples=cfg.samples,
        rng_seed=cfg.rng_seed,
        std=cfg.cluster_std,
        split_fractions=cfg.split_fractions(),
    )


def _arch_spec(cfg: PipelineConfig) -> ArchSpec:
    return ArchSpec(
        input_dim=cfg.input_dim,
        hidden_dim=cfg.hidden_dim,
        tt_layer_count=cfg.tt_layer_count,
        class_count=cfg.classes,
        tt_mode_sizes=cfg.tt_mode_sizes,
        tt_row_mode_count=cfg.tt_row_mode_count,
        tt_rank_caps=cfg.tt_rank_caps,
    )


def _load_host_model(cfg: PipelineConfig, out_dir: str) -> Model:
    path = cfg.model_path or _artifact(out_dir, MODEL_FILE)
    _require(path, "run `decompose` first or set model_path")
    try:
        return load_model(path)
    except (ModelShapeError, ValueError) as exc:
        raise IOFailure(f"{path}: {exc}") from None


def _load_report(out_dir: str) -> importance_mod.ImportanceReport:
    path = _require(_artifact(out_dir, IMPORTANCE_BIN), "run `score` first")
    try:
        return importance_mod.read_report_binary(path)
    except ValueError as exc:
        raise IOFailure(f"{path}: {exc}") from None


def _load_key(cfg: PipelineConfig, args: argparse.Namespace) -> seal_mod.KeyMaterial:
    path = getattr(args, "key_file", None) or cfg.key_file
    try:
        if path is not None:
            _require(path, "check --key-file")
            return seal_mod.KeyMaterial.load(path)
        if os.environ.get(seal_mod.KEY_ENV_VAR):
            return seal_mod.KeyMaterial.from_env()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(
        f"no key given: pass --key-file, set key_file, or export {seal_mod.KEY_ENV_VAR}"
    )


def _jbda_config(cfg: PipelineConfig, rng_seed: int) -> threat_mod.JBDAConfig:
    return threat_mod.JBDAConfig(
        seed_fraction=cfg.seed_fraction,
        augmentation_rounds=cfg.augmentation_rounds,
        lambda_step=cfg.lambda_step,
        max_pool=cfg.max_pool,
        train=TrainConfig(
            learning_rate=cfg.substitute_learning_rate,
            epochs_per_round=cfg.substitute_epochs,
            batch_size=cfg.substitute_batch_size,
        ),
        rng_seed=rng_seed,
    )


def _attacker_seed_set(cfg: PipelineConfig, ds: Dataset) -> np.ndarray:
    seed_X, _ = ds.subset("seed").xy()
    want = max(1, int(round(cfg.seed_fraction * len(ds.labels))))
    return seed_X[:want]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    ds = _make_dataset(cfg)
    path = _artifact(out_dir, DATA_CSV)
    save_dataset_csv(ds, path)
    counts = {tag: int(np.sum(ds.split == tag)) for tag in ("train", "val", "seed", "eval")}
    print(f"wrote {path}: {len(ds.labels)} samples, {cfg.classes} classes, splits {counts}")
    return EXIT_OK


def cmd_decompose(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    ds = _load_dataset(cfg, out_dir)
    Xtr, ytr = ds.subset("train").xy()
    Xe, ye = ds.subset("eval").xy()
    if cfg.model_path is not None:
        model = _load_host_model(cfg, out_dir)
        print(f"loaded host from {cfg.model_path}")
    else:
        spec = _arch_spec(cfg)
        model = build_dense_model(spec, rng_seed=cfg.rng_seed)
        model = train(model, Xtr, ytr, TrainConfig(
            learning_rate=cfg.host_learning_rate,
            epochs_per_round=cfg.host_epochs,
            batch_size=cfg.host_batch_size,
            rng_seed=cfg.rng_seed,
        ))
        print(f"trained dense host: train acc "
              f"{evaluate_accuracy(model, Xtr, ytr):.4f}, eval acc "
              f"{evaluate_accuracy(model, Xe, ye):.4f}")
    desc = _arch_spec(cfg).hidden_descriptor()
    try:
        tt_model = decompose_hidden_layers(model, desc, cfg.tt_rank_caps)
    except (ModelShapeError, ValueError) as exc:
        raise ConfigError(f"decomposition failed: {exc}") from None
    truncated_acc = evaluate_accuracy(tt_model, Xe, ye)
    # Fine-tune in the factored parameterization: truncation leaves the
    # cores with SVD-concentrated energy, and a short training pass
    # rebalances them (and recovers any accuracy the rank caps cost).
    tt_model = train(tt_model, Xtr, ytr, TrainConfig(
        learning_rate=cfg.host_learning_rate,
        epochs_per_round=cfg.host_epochs,
        batch_size=cfg.host_batch_size,
        rng_seed=cfg.rng_seed,
    ))
    path = _artifact(out_dir, MODEL_FILE)
    save_model(tt_model, path)
    print(f"wrote {path}: eval acc {truncated_acc:.4f} after TT truncation, "
          f"{evaluate_accuracy(tt_model, Xe, ye):.4f} after fine-tune, "
          f"{tt_model.param_count()} parameters")
    return EXIT_OK


def cmd_score(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    model = _load_host_model(cfg, out_dir)
    if not model.has_tt_cores():
        raise NoTTCoresError(
            "model has no TT cores; run the `decompose` subcommand first"
        )
    ds = _load_dataset(cfg, out_dir)
    Xv, yv = ds.subset("val").xy()
    report = importance_mod.compute_iacc(
        model, Xv, yv,
        probes=cfg.probes,
        rng_seed=cfg.rng_seed,
        batch_size=cfg.score_batch_size,
        distribution=cfg.probe_distribution,
    )
    csv_path = _artifact(out_dir, IMPORTANCE_CSV)
    bin_path = _artifact(out_dir, IMPORTANCE_BIN)
    importance_mod.write_report_csv(report, csv_path)
    importance_mod.write_report_binary(report, bin_path)
    print(f"wrote {csv_path} and {bin_path}: {len(report.scores)} cores, "
          f"{cfg.probes} probes")
    return EXIT_OK


def cmd_calibrate(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    model = _load_host_model(cfg, out_dir)
    report = _load_report(out_dir)
    ds = _load_dataset(cfg, out_dir)
    Xe, ye = ds.subset("eval").xy()
    seed_X = _attacker_seed_set(cfg, ds)
    result = calibrate_mod.calibrate_threshold(
        model, report, seed_X, Xe, ye,
        jbda=_jbda_config(cfg, cfg.rng_seed),
        cfg=calibrate_mod.CalibrationConfig(
            delta=cfg.delta, repetitions=cfg.repetitions, rng_seed=cfg.rng_seed,
        ),
    )
    payload = {
        "prefix_len": result.prefix_len,
        "threshold_value": result.threshold_value,
        "prefix_cores": [c.token() for c in result.prefix_cores],
        "a_bb": result.a_bb,
        "delta": result.delta,
        "oracle_calls": result.oracle_calls,
    }
    json_path = _artifact(out_dir, CALIBRATION_JSON)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    trace_path = _artifact(out_dir, TRACE_CSV)
    calibrate_mod.write_trace_csv(result, trace_path)
    print(f"wrote {json_path} and {trace_path}: prefix {result.prefix_len}/"
          f"{len(report.scores)}, threshold {result.threshold_value:.6g}, "
          f"baseline {result.a_bb:.4f}, {result.oracle_calls} oracle calls")
    return EXIT_OK


def cmd_plan(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    model = _load_host_model(cfg, out_dir)
    report = _load_report(out_dir)
    items = selector_mod.items_from_report(report, model)
    values = [it.value for it in items]
    scale = cfg.scale if cfg.scale is not None else selector_mod.default_scale(values)
    if cfg.plan_threshold is not None:
        threshold_scaled = int(selector_mod.integerize([cfg.plan_threshold], scale)[0])
        source = "config plan_threshold"
    else:
        cal_path = _require(_artifact(out_dir, CALIBRATION_JSON),
                            "run `calibrate` first or set plan_threshold")
        with open(cal_path, encoding="utf-8") as fh:
            calibration = json.load(fh)
        prefix = [parse_param_key(t) for t in calibration["prefix_cores"]]
        threshold_scaled = selector_mod.scaled_threshold_for_cores(items, prefix, scale)
        source = f"calibration prefix of {len(prefix)}"
    try:
        plan = selector_mod.value_dp_select(
            items, threshold_scaled, scale=scale,
            total_param_count=model.param_count(),
        )
    except selector_mod.InfeasibleError:
        if not getattr(args, "fallback_full", False):
            raise
        plan = selector_mod.select_all(items, scale=scale,
                                       total_param_count=model.param_count())
        print("threshold infeasible; --fallback-full selected every core")
    path = _artifact(out_dir, PLAN_CSV)
    selector_mod.write_plan_csv(plan, path)
    print(f"wrote {path}: {len(plan.selected)}/{len(items)} cores, "
          f"cost {plan.total_cost}, encryption ratio {plan.encryption_ratio:.4f} "
          f"(threshold from {source})")
    return EXIT_OK


def _load_plan(out_dir: str) -> selector_mod.EncryptionPlan:
    path = _require(_artifact(out_dir, PLAN_CSV), "run `plan` first")
    try:
        return selector_mod.read_plan_csv(path)
    except (selector_mod.SelectionError, ValueError) as exc:
        raise IOFailure(f"{path}: {exc}") from None


def cmd_seal(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    model = _load_host_model(cfg, out_dir)
    plan = _load_plan(out_dir)
    key = _load_key(cfg, args)
    blob = seal_mod.seal(model, plan, key, rng_seed=cfg.rng_seed)
    path = _artifact(out_dir, SEALED_FILE)
    with open(path, "wb") as fh:
        fh.write(blob)
    summary = seal_mod.summarize(blob)
    if getattr(args, "verify", False):
        restored = seal_mod.unseal(blob, key)
        reference = seal_mod.quantize_model(model)
        for key_obj, arr in reference.param_items():
            if not np.array_equal(arr, restored.get_block(key_obj)):
                raise RuntimeError(f"verify failed: block {key_obj.token()} mismatch")
        print("verify: round trip matched every block")
    print(f"wrote {path}: {len(blob)} bytes, "
          f"{summary.encrypted_param_bytes}/{summary.total_param_bytes} "
          f"parameter bytes encrypted "
          f"({100 * summary.encrypted_byte_ratio:.2f}%)")
    return EXIT_OK


def cmd_unseal(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    path = _require(_artifact(out_dir, SEALED_FILE), "run `seal` first")
    with open(path, "rb") as fh:
        blob = fh.read()
    key = _load_key(cfg, args)
    model = seal_mod.unseal(blob, key)
    out_path = _artifact(out_dir, UNSEALED_FILE)
    save_model(model, out_path)
    if getattr(args, "verify", False):
        reread = load_model(out_path)
        for key_obj, arr in model.param_items():
            if not np.array_equal(arr, reread.get_block(key_obj)):
                raise RuntimeError(f"verify failed: block {key_obj.token()} mismatch")
        print("verify: written model re-reads bit-exactly")
    print(f"wrote {out_path}: {model.param_count()} parameters restored")
    return EXIT_OK


def cmd_attack(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    model = _load_host_model(cfg, out_dir)
    plan = _load_plan(out_dir)
    ds = _load_dataset(cfg, out_dir)
    Xe, ye = ds.subset("eval").xy()
    seed_X = _attacker_seed_set(cfg, ds)
    acfg = threat_mod.AttackConfig(
        epsilons=cfg.epsilons,
        modes=cfg.attack_modes,
        iterations=cfg.attack_iterations,
        rng_seed=cfg.rng_seed,
        sample_cap=cfg.attack_sample_cap,
    )
    oracle = threat_mod.oracle_label_fn(model)
    rows = []
    for exposure in threat_mod.EXPOSURE_LEVELS:
        hidden = threat_mod.hidden_keys_for_exposure(
            model, exposure, plan_cores=set(plan.selected)
        )
        per_key: dict[tuple[float, str], list[threat_mod.TransferResult]] = {}
        for rep in range(cfg.repetitions):
            sub_seed = derive_seed(cfg.rng_seed, "attack", exposure, rep)
            start = threat_mod.substitute_start(model, hidden, sub_seed)
            substitute = threat_mod.jbda_train(
                oracle, start, seed_X, _jbda_config(cfg, sub_seed)
            )
            for res in threat_mod.run_transfer(model, substitute, Xe, ye,
                                               replace(acfg, rng_seed=sub_seed)):
                per_key.setdefault((res.epsilon, res.mode), []).append(res)
        for (eps, mode), results in sorted(per_key.items(), key=lambda kv: (kv[0][0], kv[0][1])):
            n = sum(r.n for r in results)
            successes = sum(r.successes for r in results)
            sub_acc = float(np.mean([r.substitute_accuracy for r in results]))
            rows.append([repr(eps), mode, exposure, repr(successes / n),
                         repr(sub_acc), n])
    import csv as csv_lib

    path = _artifact(out_dir, TRANSFER_CSV)
    with open(path, "w", newline="") as fh:
        w = csv_lib.writer(fh)
        w.writerow(TRANSFER_HEADER)
        w.writerows(rows)
    print(f"wrote {path}: {len(rows)} rows "
          f"({len(threat_mod.EXPOSURE_LEVELS)} exposures x {len(cfg.epsilons)} "
          f"epsilons x {len(cfg.attack_modes)} modes, {cfg.repetitions} reps)")
    return EXIT_OK


def cmd_bench(cfg: PipelineConfig, args: argparse.Namespace, out_dir: str) -> int:
    path = _require(_artifact(out_dir, SEALED_FILE), "run `seal` first")
    with open(path, "rb") as fh:
        blob = fh.read()
    key = _load_key(cfg, args)
    ds = _load_dataset(cfg, out_dir)
    Xe, _ = ds.subset("eval").xy()
    report = seal_mod.bench_decrypt(blob, key, Xe,
                                    repetitions=cfg.bench_repetitions)
    out_path = _artifact(out_dir, TIMING_CSV)
    seal_mod.write_timing_csv({"": report}, out_path)
    print(f"wrote {out_path}: selective/full = {report.selective_over_full:.4f} "
          f"(byte ratio {report.encrypted_byte_ratio:.4f}), "
          f"selective/inference = {report.selective_over_inference:.4f}")
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "decompose": cmd_decompose,
    "score": cmd_score,
    "calibrate": cmd_calibrate,
    "plan": cmd_plan,
    "seal": cmd_seal,
    "unseal": cmd_unseal,
    "attack": cmd_attack,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttseal",
        description="Sensitivity-guided selective sealing of TT-format models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in HANDLERS.items():
        p = sub.add_parser(name, help=(handler.__doc__ or "").strip() or None)
        p.add_argument("--config", default=None,
                       help="flat key=value config file (all keys optional)")
        p.add_argument("--seed", type=int, default=None,
                       help="override rng_seed from the config")
        p.add_argument("--out", default=None,
                       help="override out_dir from the config")
        p.add_argument("--key-file", default=None, dest="key_file",
                       help="key file: 32 raw bytes or 64 hex chars "
                            f"(else env {seal_mod.KEY_ENV_VAR})")
        p.add_argument("--verify", action="store_true",
                       help="seal/unseal: check the round trip bit-exactly")
        p.add_argument("--fallback-full", action="store_true", dest="fallback_full",
                       help="plan: on an infeasible threshold, select every core")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, rng_seed=args.seed)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        out_dir = cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        return HANDLERS[args.command](cfg, args, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IOFailure as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FileNotFoundError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except seal_mod.SealFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except selector_mod.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except seal_mod.AuthenticationError as exc:
        print(f"authentication failure: {exc}", file=sys.stderr)
        return EXIT_AUTH
    except NoTTCoresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_TT_CORES
    except Exception as exc:  # pragma: no cover - last-resort diagnostics
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
