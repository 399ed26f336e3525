"""Substitute-model transfer attacks against a label-only oracle.

The attacker sees whatever parameter blocks the container leaves in the
clear, re-initializes the hidden ones, and trains the same topology on
oracle labels with Jacobian-based dataset augmentation (JBDA): starting
from a small seed pool, each round trains the substitute, then doubles
the pool by stepping every point along the sign of the gradient of the
substitute's probability for its oracle label.

Adversarial examples are crafted on the substitute with iterated FGSM
(per-step size epsilon/iterations, re-projected into the epsilon
box and clipped to [0, 1] every step) and scored against the oracle:
non-targeted success = oracle label differs from the true label,
targeted success = oracle label equals the chosen target.  Ratios are
exact integer fractions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .nnet import (
    LossTarget,
    Model,
    ParamKey,
    ProjectionTarget,
    TrainConfig,
    backward,
    correct_count,
    forward,
    mandatory_block_keys,
    predict_labels,
    reinit_blocks,
    train,
)
from .rngutil import derive_rng, derive_seed

ATTACK_MODES = ("NT", "RD", "SM", "LL")
EXPOSURE_LEVELS = ("white-box", "threshold", "black-box")

OracleFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class JBDAConfig:
    seed_fraction: float = 0.1
    augmentation_rounds: int = 3
    lambda_step: float = 0.1
    max_pool: int = 2000
    train: TrainConfig = field(default_factory=TrainConfig)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.seed_fraction < 1.0):
            raise ValueError("seed_fraction must be in (0, 1)")
        if self.augmentation_rounds < 0:
            raise ValueError("augmentation_rounds must be >= 0")
        if self.lambda_step <= 0:
            raise ValueError("lambda_step must be > 0")
        if self.max_pool < 1:
            raise ValueError("max_pool must be >= 1")


@dataclass(frozen=True)
class AttackConfig:
    epsilons: tuple[float, ...] = (0.0, 4 / 255, 8 / 255, 16 / 255)
    modes: tuple[str, ...] = ATTACK_MODES
    iterations: int = 15
    rng_seed: int = 0
    sample_cap: int | None = None

    def __post_init__(self) -> None:
        if any(not (0.0 <= e <= 1.0) for e in self.epsilons):
            raise ValueError("epsilons must lie in [0, 1]")
        if any(m not in ATTACK_MODES for m in self.modes):
            raise ValueError(f"modes must be among {ATTACK_MODES}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass(frozen=True)
class TransferResult:
    epsilon: float
    mode: str
    successes: int
    n: int
    substitute_accuracy: float
    verdicts: tuple[bool, ...]

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.successes, self.n)

    def __post_init__(self) -> None:
        if self.n < 1 or not (0 <= self.successes <= self.n):
            raise ValueError("successes must lie in [0, n]")
        if sum(self.verdicts) != self.successes:
            raise ValueError("verdicts disagree with the success count")


def oracle_label_fn(model: Model) -> OracleFn:
    """Label-only query interface to a model."""
    def oracle(X: np.ndarray) -> np.ndarray:
        return predict_labels(model, X)
    return oracle


def substitute_start(template: Model, hidden: set[ParamKey], rng_seed: int) -> Model:
    """Attacker's starting model: exposed blocks as-is, hidden re-drawn."""
    return reinit_blocks(template, hidden, rng_seed)


def hidden_keys_for_exposure(
    model: Model, exposure: str, plan_cores: set | None = None
) -> set[ParamKey]:
    """Which blocks the attacker cannot see at a given exposure level.

    The input- and output-side layers are hidden at every level;
    "threshold" additionally hides the plan's cores, "black-box" hides
    every parameter block.
    """
    if exposure not in EXPOSURE_LEVELS:
        raise ValueError(f"exposure must be one of {EXPOSURE_LEVELS}")
    hidden = set(mandatory_block_keys(model))
    if exposure == "threshold":
        hidden |= set(plan_cores or set())
    elif exposure == "black-box":
        hidden = {key for key, _ in model.param_items()}
    return hidden


def jbda_train(
    oracle: OracleFn,
    start: Model,
    seed_X: np.ndarray,
    cfg: JBDAConfig,
) -> Model:
    """Train a substitute by iterative Jacobian-based augmentation.

    Labels the seed pool, trains, then per round: augment every pool
    point by lambda * sign(d substitute_prob[oracle label] / dx), clip
    to [0, 1], label the new points, retrain.  The pool doubles each
    round up to max_pool; zero rounds is plain training on the labeled
    seeds.
    """
    X = np.atleast_2d(np.asarray(seed_X, dtype=np.float64))
    if len(X) == 0:
        raise ValueError("empty seed set")
    if len(X) > cfg.max_pool:
        raise ValueError(f"max_pool={cfg.max_pool} smaller than the seed set ({len(X)})")
    y = np.asarray(oracle(X), dtype=np.int64)
    model = start
    for rnd in range(cfg.augmentation_rounds + 1):
        tcfg = TrainConfig(
            learning_rate=cfg.train.learning_rate,
            epochs_per_round=cfg.train.epochs_per_round,
            batch_size=cfg.train.batch_size,
            rng_seed=derive_seed(cfg.rng_seed, "jbda-round", rnd, cfg.train.rng_seed),
        )
        model = train(model, X, y, tcfg)
        if rnd == cfg.augmentation_rounds:
            break
        room = cfg.max_pool - len(X)
        if room <= 0:
            break
        grow = X[:room]
        labels = y[:room]
        _, cache = forward(model, grow)
        onehot = np.zeros((len(grow), model.class_count))
        onehot[np.arange(len(grow)), labels] = 1.0
        g = backward(model, cache, ProjectionTarget(onehot), reduce="none")
        new_X = np.clip(grow + cfg.lambda_step * np.sign(g.wrt_input), 0.0, 1.0)
        new_y = np.asarray(oracle(new_X), dtype=np.int64)
        X = np.concatenate([X, new_X])
        y = np.concatenate([y, new_y])
    return model


def _input_loss_grad(model: Model, X: np.ndarray, labels: np.ndarray) -> np.ndarray:
    _, cache = forward(model, X)
    g = backward(model, cache, LossTarget(labels), reduce="none")
    return g.wrt_input


def fgsm_step(
    model: Model,
    x: np.ndarray,
    y_ref: np.ndarray,
    epsilon: float,
    targeted: bool,
) -> np.ndarray:
    """One sign-gradient step of size epsilon, clipped to [0, 1].

    Non-targeted ascends the loss at the true label; targeted descends
    the loss at the target label.
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(y_ref, dtype=np.int64))
    grad = _input_loss_grad(model, X, labels)
    sign = -np.sign(grad) if targeted else np.sign(grad)
    adv = np.clip(X + epsilon * sign, np.maximum(X - epsilon, 0.0),
                  np.minimum(X + epsilon, 1.0))
    return adv[0] if np.asarray(x).ndim == 1 else adv


def i_fgsm(
    model: Model,
    x: np.ndarray,
    y_ref: np.ndarray,
    epsilon: float,
    iterations: int = 15,
    targeted: bool = False,
) -> np.ndarray:
    """Iterated FGSM: `iterations` steps of size epsilon/iterations.

    After every step the iterate is re-projected into the epsilon box
    around the original input and clipped to [0, 1]; with one iteration
    this reduces exactly to fgsm_step.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    X0 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(y_ref, dtype=np.int64))
    lo = np.maximum(X0 - epsilon, 0.0)
    hi = np.minimum(X0 + epsilon, 1.0)
    step = epsilon / iterations
    X = X0
    for _ in range(iterations):
        grad = _input_loss_grad(model, X, labels)
        sign = -np.sign(grad) if targeted else np.sign(grad)
        X = np.clip(X + step * sign, lo, hi)
    return X[0] if np.asarray(x).ndim == 1 else X


def pick_target(
    y: np.ndarray, mode: str, true_label: int, rng: np.random.Generator
) -> int:
    """Target class for one sample; argmax/argmin ties take the lowest index.

    RD draws uniformly among labels other than the true one, SM takes
    the second most likely class under y, LL the least likely.
    """
    y = np.asarray(y, dtype=np.float64)
    c = len(y)
    if c < 2:
        raise ValueError("targeted modes need at least 2 classes")
    if mode == "RD":
        choices = [j for j in range(c) if j != int(true_label)]
        return int(choices[rng.integers(0, len(choices))])
    if mode == "SM":
        top = int(np.argmax(y))
        masked = y.copy()
        masked[top] = -np.inf
        return int(np.argmax(masked))
    if mode == "LL":
        return int(np.argmin(y))
    raise ValueError(f"unknown targeted mode {mode!r}")


def transfer_ratio(
    oracle: OracleFn,
    x_adv: np.ndarray,
    y_true: np.ndarray,
    y_target: np.ndarray | None,
    mode: str,
) -> tuple[int, int, tuple[bool, ...]]:
    """(successes, n, per-sample verdicts) under the oracle.

    NT succeeds when the oracle leaves the true label; targeted modes
    succeed when the oracle lands on the chosen target.
    """
    if mode not in ATTACK_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    out = np.asarray(oracle(np.atleast_2d(x_adv)), dtype=np.int64)
    y_true = np.asarray(y_true, dtype=np.int64)
    if mode == "NT":
        verdicts = out != y_true
    else:
        if y_target is None:
            raise ValueError(f"mode {mode} needs target labels")
        verdicts = out == np.asarray(y_target, dtype=np.int64)
    return int(verdicts.sum()), int(len(verdicts)), tuple(bool(b) for b in verdicts)


def run_transfer(
    oracle_model: Model,
    substitute: Model,
    eval_X: np.ndarray,
    eval_y: np.ndarray,
    cfg: AttackConfig,
) -> list[TransferResult]:
    """Sweep (epsilon, mode) on one substitute; oracle is label-only."""
    oracle = oracle_label_fn(oracle_model)
    X = np.atleast_2d(np.asarray(eval_X, dtype=np.float64))
    y = np.asarray(eval_y, dtype=np.int64)
    if cfg.sample_cap is not None:
        X, y = X[: cfg.sample_cap], y[: cfg.sample_cap]
    if len(X) == 0:
        raise ValueError("empty evaluation set")
    sub_acc = correct_count(substitute, X, y) / len(y)
    probs, _ = forward(substitute, X)
    targets: dict[str, np.ndarray] = {}
    for mode in cfg.modes:
        if mode == "NT":
            continue
        targets[mode] = np.array([
            pick_target(probs[i], mode, int(y[i]), derive_rng(cfg.rng_seed, "target", i))
            for i in range(len(y))
        ], dtype=np.int64)
    results = []
    for eps in cfg.epsilons:
        for mode in cfg.modes:
            if mode == "NT":
                adv = i_fgsm(substitute, X, y, eps, cfg.iterations, targeted=False)
                succ, n, verdicts = transfer_ratio(oracle, adv, y, None, "NT")
            else:
                t = targets[mode]
                adv = i_fgsm(substitute, X, t, eps, cfg.iterations, targeted=True)
                succ, n, verdicts = transfer_ratio(oracle, adv, y, t, mode)
            results.append(TransferResult(
                epsilon=float(eps), mode=mode, successes=succ, n=n,
                substitute_accuracy=sub_acc, verdicts=verdicts,
            ))
    return results
