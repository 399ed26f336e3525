"""Flat key=value pipeline configuration with strict key checking.

A config file is plain text: one `key = value` pair per line, `#`
comments, no sections.  Unknown keys are rejected so typos fail fast;
every key has a default, so an empty (or absent) file is valid.  CLI
flags (`--seed`, `--out`, `--key-file`) override file values.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

ATTACK_MODE_CHOICES = ("NT", "RD", "SM", "LL")
PROBE_DISTRIBUTION_CHOICES = ("rademacher", "normal")


class ConfigError(Exception):
    """Bad configuration: unknown key, unparsable or out-of-range value."""


def _to_int(text: str) -> int:
    try:
        return int(text, 10)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _to_int_tuple(text: str) -> tuple[int, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}")
    return tuple(_to_int(p) for p in parts)


def _to_float_tuple(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected a comma-separated number list, got {text!r}")
    return tuple(_to_float(p) for p in parts)


def _to_str_tuple(text: str) -> tuple[str, ...]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError(f"expected a comma-separated list, got {text!r}")
    return tuple(parts)


def _optional(conv: Callable):
    def wrapped(text: str):
        if text.strip().lower() in ("", "none"):
            return None
        return conv(text)
    return wrapped


@dataclass(frozen=True)
class PipelineConfig:
    # top-level
    rng_seed: int = 0
    out_dir: str = "out"
    # dataset: a CSV path, or the synthetic cluster generator
    dataset_path: str | None = None
    classes: int = 4
    clusters_per_class: int = 2
    samples: int = 1000
    cluster_std: float = 0.05
    split_train: float = 0.5
    split_val: float = 0.15
    split_seed: float = 0.15
    split_eval: float = 0.2
    # host model: a file path, or a synthetic architecture
    model_path: str | None = None
    input_dim: int = 2
    hidden_dim: int = 64
    tt_layer_count: int = 2
    tt_mode_sizes: tuple[int, ...] = (32, 2, 2, 32)
    tt_row_mode_count: int = 2
    tt_rank_caps: tuple[int, ...] = (16, 16, 16)
    host_learning_rate: float = 0.1
    host_epochs: int = 120
    host_batch_size: int = 32
    # sensitivity scoring
    probes: int = 2
    probe_distribution: str = "rademacher"
    score_batch_size: int = 32
    # substitute training (attacker recipe)
    seed_fraction: float = 0.15
    augmentation_rounds: int = 4
    lambda_step: float = 0.1
    max_pool: int = 2000
    substitute_learning_rate: float = 0.01
    substitute_epochs: int = 10
    substitute_batch_size: int = 32
    # calibration
    delta: float = 0.03
    repetitions: int = 3
    # planning
    scale: float | None = None
    plan_threshold: float | None = None
    # attack sweep
    epsilons: tuple[float, ...] = (0.0, 4 / 255, 8 / 255, 16 / 255)
    attack_modes: tuple[str, ...] = ("NT", "RD", "SM", "LL")
    attack_iterations: int = 15
    attack_sample_cap: int | None = None
    # sealing / benchmarking
    key_file: str | None = None
    bench_repetitions: int = 10

    def __post_init__(self) -> None:
        if self.probe_distribution not in PROBE_DISTRIBUTION_CHOICES:
            raise ConfigError(
                f"probe_distribution must be one of {PROBE_DISTRIBUTION_CHOICES}"
            )
        bad = [m for m in self.attack_modes if m not in ATTACK_MODE_CHOICES]
        if bad:
            raise ConfigError(f"attack_modes contains unknown modes {bad}")
        if any(not 0.0 <= e <= 1.0 for e in self.epsilons):
            raise ConfigError("epsilons must lie in [0, 1]")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError("delta must lie in [0, 1)")
        if self.repetitions < 1 or self.bench_repetitions < 1:
            raise ConfigError("repetition counts must be >= 1")
        if not 0.0 < self.seed_fraction < 1.0:
            raise ConfigError("seed_fraction must lie in (0, 1)")
        for name in ("split_train", "split_val", "split_seed", "split_eval"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        total = self.split_train + self.split_val + self.split_seed + self.split_eval
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {total}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError("scale must be > 0")
        if self.plan_threshold is not None and self.plan_threshold < 0:
            raise ConfigError("plan_threshold must be >= 0")

    def split_fractions(self) -> dict[str, float]:
        return {
            "train": self.split_train,
            "val": self.split_val,
            "seed": self.split_seed,
            "eval": self.split_eval,
        }


_CONVERTERS: dict[str, Callable] = {
    "rng_seed": _to_int,
    "out_dir": str,
    "dataset_path": _optional(str),
    "classes": _to_int,
    "clusters_per_class": _to_int,
    "samples": _to_int,
    "cluster_std": _to_float,
    "split_train": _to_float,
    "split_val": _to_float,
    "split_seed": _to_float,
    "split_eval": _to_float,
    "model_path": _optional(str),
    "input_dim": _to_int,
    "hidden_dim": _to_int,
    "tt_layer_count": _to_int,
    "tt_mode_sizes": _to_int_tuple,
    "tt_row_mode_count": _to_int,
    "tt_rank_caps": _to_int_tuple,
    "host_learning_rate": _to_float,
    "host_epochs": _to_int,
    "host_batch_size": _to_int,
    "probes": _to_int,
    "probe_distribution": str,
    "score_batch_size": _to_int,
    "seed_fraction": _to_float,
    "augmentation_rounds": _to_int,
    "lambda_step": _to_float,
    "max_pool": _to_int,
    "substitute_learning_rate": _to_float,
    "substitute_epochs": _to_int,
    "substitute_batch_size": _to_int,
    "delta": _to_float,
    "repetitions": _to_int,
    "scale": _optional(_to_float),
    "plan_threshold": _optional(_to_float),
    "epsilons": _to_float_tuple,
    "attack_modes": _to_str_tuple,
    "attack_iterations": _to_int,
    "attack_sample_cap": _optional(_to_int),
    "key_file": _optional(str),
    "bench_repetitions": _to_int,
}

assert set(_CONVERTERS) == {f.name for f in fields(PipelineConfig)}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """`key = value` lines -> raw string mapping; duplicates are errors."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected `key = value`, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = value.strip()
    return raw


def config_from_mapping(raw: dict[str, str], source: str = "<config>") -> PipelineConfig:
    unknown = sorted(set(raw) - set(_CONVERTERS))
    if unknown:
        raise ConfigError(f"{source}: unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, text in raw.items():
        try:
            kwargs[key] = _CONVERTERS[key](text)
        except ConfigError as exc:
            raise ConfigError(f"{source}: key {key!r}: {exc}") from None
    return PipelineConfig(**kwargs)


def load_config(path: str | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return config_from_mapping(parse_config_text(text, source=path), source=path)
