"""Minimum-byte encryption set selection.

Formulated as a 0-1 knapsack over the value dimension: each core has an
integerized sensitivity value and a byte-count cost; dp[v] is the least
total cost that achieves total value exactly v, so the optimum is the
cheapest entry at or above the calibrated value threshold.

dp starts as dp[0] = 0, dp[v > 0] = +inf.  Item i updates v from V_max
down to v_i (classic reverse order); rows may be computed with a
vectorized snapshot because the reverse iteration never consumes an
entry updated by the same item, so results are bit-identical to the
sequential loop.  Parent bits (item i improved value v) are stored as a
packed bitmap, and backtracking from the optimal value prefers the
parent=1 branch.  Time and memory are O(n * V_max).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .nnet import CoreKey, DenseKey, Model, ParamKey, parse_param_key

_INF = np.int64(1) << 62
DEFAULT_VALUE_SCALE_TOP = 1.0e4
MAX_SCALED_TOTAL = 10_000_000


class InfeasibleError(ValueError):
    """The value threshold exceeds the total attainable value."""


class SelectionError(ValueError):
    """Malformed selection inputs (negative values, bad costs, ...)."""


@dataclass(frozen=True)
class PlanItem:
    core: CoreKey
    cost: int  # parameter count (bytes scale linearly with it)
    value: float  # sensitivity score

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise SelectionError(f"{self.core}: cost must be positive")
        if not np.isfinite(self.value) or self.value < 0:
            raise SelectionError(f"{self.core}: value must be finite and >= 0")


@dataclass(frozen=True)
class EncryptionPlan:
    items: tuple[PlanItem, ...]
    selected: frozenset[CoreKey]
    threshold_scaled: int
    scale: float
    total_cost: int
    total_scaled_value: int
    encryption_ratio: float


def integerize(values: np.ndarray | list[float], scale: float) -> np.ndarray:
    """round(value * scale) as int64; values must be nonnegative."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)) or (v.size and v.min() < 0):
        raise SelectionError("values must be finite and nonnegative")
    if not (np.isfinite(scale) and scale > 0):
        raise SelectionError("scale must be positive")
    return np.rint(v * scale).astype(np.int64)


def default_scale(values: np.ndarray | list[float]) -> float:
    """10^4 / max(value), clamped so the scaled total stays <= 10^7."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0 or v.max() <= 0:
        return 1.0
    scale = DEFAULT_VALUE_SCALE_TOP / float(v.max())
    total = float(v.sum()) * scale
    if total > MAX_SCALED_TOTAL:
        scale *= MAX_SCALED_TOTAL / total
    return scale


def items_from_report(report, model: Model | None = None) -> tuple[PlanItem, ...]:
    """Plan items (cost = core size, value = score) from a score report."""
    items = []
    for s in report.scores:
        items.append(PlanItem(core=s.core, cost=int(s.size), value=float(s.i_acc)))
    if model is not None:
        known = {key for key, _ in model.core_items()}
        missing = [i.core for i in items if i.core not in known]
        if missing:
            raise SelectionError(f"scores reference unknown cores: {missing}")
    return tuple(items)


def scaled_threshold_for_cores(
    items: tuple[PlanItem, ...] | list[PlanItem],
    cores,
    scale: float,
) -> int:
    """Integerized total value of the given cores under this scale.

    Using this as the DP threshold keeps the named set itself feasible
    under the scaled arithmetic (no rounding drift between a real-valued
    threshold and the integer value grid).
    """
    scaled = integerize([it.value for it in items], scale)
    by_core = {it.core: int(v) for it, v in zip(items, scaled)}
    missing = [c for c in cores if c not in by_core]
    if missing:
        raise SelectionError(f"threshold names cores absent from the items: {missing}")
    return int(sum(by_core[c] for c in cores))


def select_all(
    items: tuple[PlanItem, ...] | list[PlanItem],
    scale: float = 1.0,
    total_param_count: int | None = None,
) -> EncryptionPlan:
    """Plan that encrypts every scored core (full-encryption fallback)."""
    items = tuple(items)
    scaled = integerize([it.value for it in items], scale)
    return _plan(items, range(len(items)), int(scaled.sum()), scale, scaled,
                 total_param_count)


def _plan(items, chosen_idx, threshold_scaled, scale, scaled, total_param_count):
    chosen = sorted(chosen_idx)
    cost = int(sum(items[i].cost for i in chosen))
    value = int(sum(int(scaled[i]) for i in chosen))
    total = total_param_count if total_param_count else int(sum(it.cost for it in items))
    return EncryptionPlan(
        items=tuple(items),
        selected=frozenset(items[i].core for i in chosen),
        threshold_scaled=int(threshold_scaled),
        scale=float(scale),
        total_cost=cost,
        total_scaled_value=value,
        encryption_ratio=cost / total if total else 0.0,
    )


def value_dp_select(
    items: tuple[PlanItem, ...] | list[PlanItem],
    threshold_scaled: int,
    scale: float = 1.0,
    total_param_count: int | None = None,
) -> EncryptionPlan:
    """Cheapest subset whose integerized value meets the threshold.

    Raises InfeasibleError when the threshold exceeds the total value of
    all items (an empty optimal selection is a success, not an error).
    """
    items = tuple(items)
    n = len(items)
    scaled = integerize([it.value for it in items], scale)
    threshold_scaled = int(threshold_scaled)
    v_max = int(scaled.sum())
    if threshold_scaled > v_max:
        raise InfeasibleError(
            f"threshold {threshold_scaled} exceeds attainable value {v_max}"
        )
    if threshold_scaled <= 0:
        return _plan(items, [], threshold_scaled, scale, scaled, total_param_count)

    dp = np.full(v_max + 1, _INF, dtype=np.int64)
    dp[0] = 0
    width = (v_max + 1 + 7) // 8
    parent = np.zeros((n, width), dtype=np.uint8)
    for i, it in enumerate(items):
        vi = int(scaled[i])
        if vi == 0:
            continue  # cost > 0 never improves an unchanged value
        cand = dp[: v_max + 1 - vi] + np.int64(it.cost)
        improved = cand < dp[vi:]
        dp[vi:][improved] = cand[improved]
        bits = np.zeros(v_max + 1, dtype=bool)
        bits[vi:] = improved
        parent[i] = np.packbits(bits, bitorder="little")

    tail = dp[threshold_scaled:]
    best_rel = int(np.argmin(tail))
    if tail[best_rel] >= _INF:
        # Unreachable only if some exact values are gapped; the all-items
        # entry dp[v_max] is always reachable, so scan for the true min.
        raise InfeasibleError("no subset reaches the threshold")  # pragma: no cover
    v_star = threshold_scaled + best_rel
    chosen = []
    v = v_star
    for i in range(n - 1, -1, -1):
        if (parent[i, v >> 3] >> (v & 7)) & 1:
            chosen.append(i)
            v -= int(scaled[i])
    assert v == 0
    return _plan(items, chosen, threshold_scaled, scale, scaled, total_param_count)


def brute_force_select(
    items: tuple[PlanItem, ...] | list[PlanItem],
    threshold_scaled: int,
    scale: float = 1.0,
    total_param_count: int | None = None,
) -> EncryptionPlan:
    """Exhaustive reference: ties break by (cost, fewer items, core ids)."""
    items = tuple(items)
    n = len(items)
    if n > 20:
        raise SelectionError("brute force is capped at 20 items")
    scaled = integerize([it.value for it in items], scale)
    threshold_scaled = int(threshold_scaled)
    if threshold_scaled > int(scaled.sum()):
        raise InfeasibleError(
            f"threshold {threshold_scaled} exceeds attainable value {int(scaled.sum())}"
        )
    best: tuple | None = None
    for r in range(n + 1):
        for combo in combinations(range(n), r):
            value = int(sum(int(scaled[i]) for i in combo))
            if value < threshold_scaled:
                continue
            cost = int(sum(items[i].cost for i in combo))
            key = (cost, len(combo), tuple(sorted(items[i].core for i in combo)))
            if best is None or key < best[0]:
                best = (key, combo)
    assert best is not None
    return _plan(items, best[1], threshold_scaled, scale, scaled, total_param_count)


# ---------------------------------------------------------------------------
# L1 row baseline (comparison curves only)


@dataclass(frozen=True)
class RowSelection:
    """Parameter rows chosen by descending L1 norm.

    TT cores contribute their mode slices core[:, j, :]; dense weights
    contribute matrix rows.  Biases are not ranked.
    """

    rows: tuple[tuple[ParamKey, int], ...]
    param_count: int
    total_param_count: int
    ratio: float


def l1_baseline_select(model: Model, ratio: float) -> RowSelection:
    """Top parameter rows by L1 norm until `ratio` of weight params."""
    if not (0.0 <= ratio <= 1.0):
        raise SelectionError("ratio must be in [0, 1]")
    entries = []  # (norm, order, key, row, size)
    order = 0
    total = 0
    for key, arr in model.param_items():
        if isinstance(key, DenseKey) and key.field == "bias":
            continue
        if isinstance(key, CoreKey):
            for j in range(arr.shape[1]):
                sl = arr[:, j, :]
                entries.append((float(np.abs(sl).sum()), order, key, j, sl.size))
                order += 1
                total += sl.size
        else:
            for j in range(arr.shape[0]):
                entries.append((float(np.abs(arr[j]).sum()), order, key, j, arr.shape[1]))
                order += 1
                total += arr.shape[1]
    entries.sort(key=lambda e: (-e[0], e[1]))
    want = ratio * total
    picked: list[tuple[ParamKey, int]] = []
    count = 0
    for norm, _, key, row, size in entries:
        if count >= want:
            break
        picked.append((key, row))
        count += size
    return RowSelection(
        rows=tuple(picked), param_count=count, total_param_count=total, ratio=ratio
    )


# ---------------------------------------------------------------------------
# plan CSV

PLAN_HEADER = ["core_id", "selected", "cost", "value"]


def write_plan_csv(plan: EncryptionPlan, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PLAN_HEADER)
        for it in plan.items:
            w.writerow([
                it.core.token(),
                1 if it.core in plan.selected else 0,
                it.cost,
                repr(it.value),
            ])


def read_plan_csv(path: str, threshold_scaled: int = 0, scale: float = 1.0,
                  total_param_count: int | None = None) -> EncryptionPlan:
    items: list[PlanItem] = []
    chosen: list[int] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PLAN_HEADER:
            raise SelectionError(f"{path}: expected header {','.join(PLAN_HEADER)}")
        for i, row in enumerate(reader):
            if not row:
                continue
            key = parse_param_key(row[0])
            if not isinstance(key, CoreKey):
                raise SelectionError(f"{path}: {row[0]} is not a core id")
            items.append(PlanItem(core=key, cost=int(row[2]), value=float(row[3])))
            if row[1] not in ("0", "1"):
                raise SelectionError(f"{path}: selected flag must be 0 or 1")
            if row[1] == "1":
                chosen.append(i)
    scaled = integerize([it.value for it in items], scale)
    return _plan(tuple(items), chosen, threshold_scaled, scale, scaled, total_param_count)
