"""Robustness-threshold calibration by binary search over hidden prefixes.

Cores are ordered by ascending sensitivity score.  Hiding the first m of
them (plus the always-hidden input/output layers) and training a
substitute against the label oracle yields a substitute accuracy
A_sub(m), which falls as m grows.  The calibration finds the smallest m
whose substitute accuracy is within delta of the black-box baseline
(substitute trained with every block hidden); binary search over
m in [0, n] needs at most ceil(log2(n + 1)) oracle evaluations.  The
resulting value threshold is the summed score of that prefix: any
selection whose total score meets it hides at least as much sensitivity
as the calibrated prefix.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .importance import ImportanceReport
from .nnet import CoreKey, Model, evaluate_accuracy
from .rngutil import derive_seed
from .threat import (
    JBDAConfig,
    OracleFn,
    hidden_keys_for_exposure,
    jbda_train,
    oracle_label_fn,
    substitute_start,
)

TRACE_HEADER_PREFIX = ["probe_m", "a_sub_mean"]


@dataclass(frozen=True)
class CalibrationConfig:
    delta: float = 0.03
    repetitions: int = 3
    rng_seed: int = 0
    a_bb: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.delta < 1.0):
            raise ValueError("delta must lie in [0, 1)")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.a_bb is not None and not (0.0 <= self.a_bb <= 1.0):
            raise ValueError("a_bb must lie in [0, 1]")


@dataclass(frozen=True)
class TraceRecord:
    probe_m: int
    mean: float
    runs: tuple[float, ...]


@dataclass(frozen=True)
class CalibrationResult:
    prefix_len: int
    threshold_value: float
    prefix_cores: tuple[CoreKey, ...]
    a_bb: float
    delta: float
    oracle_calls: int
    trace: tuple[TraceRecord, ...]


def binary_search_prefix(
    evaluate: Callable[[int], float], n: int, a_bb: float, delta: float
) -> tuple[int, int]:
    """Smallest m in [0, n] with evaluate(m) <= a_bb + delta.

    evaluate must be nonincreasing in m for the answer to be exact; m = n
    is never evaluated (hiding everything is the baseline itself, assumed
    to satisfy the bound).  Returns (m, evaluation_count).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    lo, hi, calls = 0, n, 0
    bound = a_bb + delta
    while lo < hi:
        m = (lo + hi) // 2
        calls += 1
        if evaluate(m) <= bound:
            hi = m
        else:
            lo = m + 1
    return lo, calls


@dataclass
class SubstituteAccuracyOracle:
    """A_sub(m): substitute accuracy with the m least sensitive cores hidden.

    Each evaluation trains `repetitions` substitutes from independent
    re-initializations of the hidden blocks and averages their accuracy
    on the held-out split.  Results are cached per m, and every probe is
    recorded for the calibration trace.
    """

    model: Model
    ascending_cores: tuple[CoreKey, ...]
    seed_X: np.ndarray
    eval_X: np.ndarray
    eval_y: np.ndarray
    jbda: JBDAConfig
    repetitions: int = 3
    rng_seed: int = 0
    _oracle: OracleFn = field(init=False, repr=False)
    _cache: dict[int, float] = field(default_factory=dict, repr=False)
    _trace: list[TraceRecord] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        self._oracle = oracle_label_fn(self.model)

    def hidden_for(self, m: int) -> set:
        hidden = hidden_keys_for_exposure(self.model, "white-box")
        hidden |= set(self.ascending_cores[:m])
        return hidden

    def evaluate(self, m: int) -> float:
        if m in self._cache:
            return self._cache[m]
        hidden = self.hidden_for(m)
        runs = []
        for rep in range(self.repetitions):
            sub_seed = derive_seed(self.rng_seed, "sub", m, rep)
            start = substitute_start(self.model, hidden, sub_seed)
            jcfg = JBDAConfig(
                seed_fraction=self.jbda.seed_fraction,
                augmentation_rounds=self.jbda.augmentation_rounds,
                lambda_step=self.jbda.lambda_step,
                max_pool=self.jbda.max_pool,
                train=self.jbda.train,
                rng_seed=sub_seed,
            )
            sub = jbda_train(self._oracle, start, self.seed_X, jcfg)
            runs.append(evaluate_accuracy(sub, self.eval_X, self.eval_y))
        mean = float(np.mean(runs))
        self._cache[m] = mean
        self._trace.append(TraceRecord(m, mean, tuple(runs)))
        return mean

    @property
    def trace(self) -> tuple[TraceRecord, ...]:
        return tuple(sorted(self._trace, key=lambda t: t.probe_m))


def measure_black_box_baseline(
    model: Model,
    seed_X: np.ndarray,
    eval_X: np.ndarray,
    eval_y: np.ndarray,
    jbda: JBDAConfig,
    repetitions: int = 3,
    rng_seed: int = 0,
) -> float:
    """Mean substitute accuracy with every parameter block hidden."""
    oracle = oracle_label_fn(model)
    hidden = hidden_keys_for_exposure(model, "black-box")
    runs = []
    for rep in range(repetitions):
        sub_seed = derive_seed(rng_seed, "abb", rep)
        start = substitute_start(model, hidden, sub_seed)
        jcfg = JBDAConfig(
            seed_fraction=jbda.seed_fraction,
            augmentation_rounds=jbda.augmentation_rounds,
            lambda_step=jbda.lambda_step,
            max_pool=jbda.max_pool,
            train=jbda.train,
            rng_seed=sub_seed,
        )
        sub = jbda_train(oracle, start, seed_X, jcfg)
        runs.append(evaluate_accuracy(sub, eval_X, eval_y))
    return float(np.mean(runs))


def calibrate_threshold(
    model: Model,
    report: ImportanceReport,
    seed_X: np.ndarray,
    eval_X: np.ndarray,
    eval_y: np.ndarray,
    jbda: JBDAConfig,
    cfg: CalibrationConfig,
) -> CalibrationResult:
    """Full calibration: baseline, binary search, summed-score threshold."""
    ascending = tuple(s.core for s in report.ascending())
    scores = {s.core: s.i_acc for s in report.scores}
    a_bb = cfg.a_bb
    if a_bb is None:
        a_bb = measure_black_box_baseline(
            model, seed_X, eval_X, eval_y, jbda,
            repetitions=cfg.repetitions, rng_seed=cfg.rng_seed,
        )
    oracle = SubstituteAccuracyOracle(
        model=model,
        ascending_cores=ascending,
        seed_X=seed_X,
        eval_X=eval_X,
        eval_y=eval_y,
        jbda=jbda,
        repetitions=cfg.repetitions,
        rng_seed=cfg.rng_seed,
    )
    prefix_len, calls = binary_search_prefix(
        oracle.evaluate, len(ascending), a_bb, cfg.delta
    )
    prefix = ascending[:prefix_len]
    threshold = float(sum(scores[c] for c in prefix))
    return CalibrationResult(
        prefix_len=prefix_len,
        threshold_value=threshold,
        prefix_cores=prefix,
        a_bb=float(a_bb),
        delta=cfg.delta,
        oracle_calls=calls,
        trace=oracle.trace,
    )


def write_trace_csv(result: CalibrationResult, path: str) -> None:
    """`probe_m,a_sub_mean,a_sub_run0,...` rows in probe order."""
    reps = max((len(t.runs) for t in result.trace), default=0)
    header = TRACE_HEADER_PREFIX + [f"a_sub_run{i}" for i in range(reps)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in result.trace:
            w.writerow([t.probe_m, repr(t.mean)] + [repr(v) for v in t.runs])


def read_trace_csv(path: str) -> list[TraceRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != TRACE_HEADER_PREFIX:
            raise ValueError(f"{path}: expected calibration trace header")
        out = []
        for line in reader:
            if not line:
                continue
            out.append(TraceRecord(
                int(line[0]), float(line[1]), tuple(float(v) for v in line[2:])
            ))
        return out
