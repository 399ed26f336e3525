"""A tiny differentiable MLP host whose TT-layer cores are addressable.

Layers: dense affine, TT-linear (a tensor-train matricized by a
ShapeDescriptor, applied core-by-core), elementwise relu, and exactly one
terminal softmax.  All math is float64.  Forward/backward work on a
single input vector or a batch of row vectors; gradients can be reduced
over the batch ("mean"/"sum") or kept per sample ("none", leading batch
axis).

Every parameter block has a stable key: CoreKey(layer, core) for TT
cores, DenseKey(layer, field) for dense weights/biases (TT layers also
own a DenseKey(layer, "bias") block).  Block order is the model's layer
order, which fixes serialization and container layouts.
"""
from __future__ import annotations

import csv
import io
import json
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .rngutil import derive_rng
from .tt import (
    ShapeDescriptor,
    TTTensor,
    _apply_backward,
    _apply_forward,
    tt_svd,
)

SPLIT_TAGS = ("train", "val", "seed", "eval")


class ModelShapeError(ValueError):
    """Layer chain or parameter shapes are inconsistent."""


class StaleCacheError(RuntimeError):
    """A forward cache was paired with a different model."""


# ---------------------------------------------------------------------------
# parameter keys


@dataclass(frozen=True, order=True)
class CoreKey:
    layer: int
    core: int

    def token(self) -> str:
        return f"{self.layer}:core{self.core}"


@dataclass(frozen=True, order=True)
class DenseKey:
    layer: int
    field: str  # "weight" | "bias"

    def token(self) -> str:
        return f"{self.layer}:{self.field}"


ParamKey = CoreKey | DenseKey


def parse_param_key(token: str) -> ParamKey:
    layer_s, _, name = token.partition(":")
    layer = int(layer_s)
    if name.startswith("core"):
        return CoreKey(layer, int(name[4:]))
    if name in ("weight", "bias"):
        return DenseKey(layer, name)
    raise ValueError(f"unrecognized parameter key {token!r}")


# ---------------------------------------------------------------------------
# layers and model


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class TTLinear:
    tt: TTTensor
    desc: ShapeDescriptor
    bias: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.desc.in_dim

    @property
    def out_dim(self) -> int:
        return self.desc.out_dim


@dataclass
class Relu:
    pass


@dataclass
class Softmax:
    pass


Layer = Dense | TTLinear | Relu | Softmax


@dataclass
class Model:
    layers: list[Layer]
    class_count: int

    def __post_init__(self) -> None:
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ModelShapeError("the last layer must be the (single) softmax")
        if sum(isinstance(l, Softmax) for l in self.layers) != 1:
            raise ModelShapeError("exactly one softmax is allowed")
        dim = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Dense, TTLinear)):
                if isinstance(layer, TTLinear) and layer.tt.mode_sizes != layer.desc.mode_sizes:
                    raise ModelShapeError(f"layer {i}: descriptor does not match cores")
                if layer.bias.shape != (layer.out_dim,):
                    raise ModelShapeError(f"layer {i}: bias shape {layer.bias.shape}")
                if dim is not None and layer.in_dim != dim:
                    raise ModelShapeError(
                        f"layer {i} expects {layer.in_dim} inputs, previous produces {dim}"
                    )
                dim = layer.out_dim
        if dim is not None and dim != self.class_count:
            raise ModelShapeError(
                f"final parameterized layer produces {dim}, class_count is {self.class_count}"
            )

    @property
    def input_dim(self) -> int:
        for layer in self.layers:
            if isinstance(layer, (Dense, TTLinear)):
                return layer.in_dim
        raise ModelShapeError("model has no parameterized layer")

    def param_items(self):
        """Yield (key, array) for every parameter block, in layer order."""
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                yield DenseKey(i, "weight"), layer.weight
                yield DenseKey(i, "bias"), layer.bias
            elif isinstance(layer, TTLinear):
                for k, core in enumerate(layer.tt.cores):
                    yield CoreKey(i, k), core
                yield DenseKey(i, "bias"), layer.bias

    def param_count(self) -> int:
        return sum(arr.size for _, arr in self.param_items())

    def core_items(self):
        """Yield (CoreKey, core) for every TT core."""
        for key, arr in self.param_items():
            if isinstance(key, CoreKey):
                yield key, arr

    def has_tt_cores(self) -> bool:
        return any(True for _ in self.core_items())

    def get_block(self, key: ParamKey) -> np.ndarray:
        for k, arr in self.param_items():
            if k == key:
                return arr
        raise KeyError(f"no parameter block {key}")

    def set_block(self, key: ParamKey, value: np.ndarray) -> None:
        layer = self.layers[key.layer]
        value = np.asarray(value, dtype=np.float64)
        if isinstance(key, CoreKey):
            if not isinstance(layer, TTLinear):
                raise KeyError(f"layer {key.layer} holds no TT cores")
            cores = list(layer.tt.cores)
            if value.shape != cores[key.core].shape:
                raise ModelShapeError(f"shape mismatch for {key}")
            cores[key.core] = value
            layer.tt = TTTensor(tuple(cores))
            return
        if key.field == "bias" and isinstance(layer, (Dense, TTLinear)):
            if value.shape != layer.bias.shape:
                raise ModelShapeError(f"shape mismatch for {key}")
            layer.bias = value
            return
        if key.field == "weight" and isinstance(layer, Dense):
            if value.shape != layer.weight.shape:
                raise ModelShapeError(f"shape mismatch for {key}")
            layer.weight = value
            return
        raise KeyError(f"no parameter block {key}")

    def copy(self) -> "Model":
        layers: list[Layer] = []
        for layer in self.layers:
            if isinstance(layer, Dense):
                layers.append(Dense(layer.weight.copy(), layer.bias.copy()))
            elif isinstance(layer, TTLinear):
                tt = TTTensor(tuple(c.copy() for c in layer.tt.cores))
                layers.append(TTLinear(tt, layer.desc, layer.bias.copy()))
            elif isinstance(layer, Relu):
                layers.append(Relu())
            else:
                layers.append(Softmax())
        return Model(layers, self.class_count)


def mandatory_block_keys(model: Model) -> set[ParamKey]:
    """Blocks of the first and last parameterized layers.

    These are the network's input- and output-facing parameter blocks;
    sealing always hides them no matter what a plan says.
    """
    param_layers = [
        i for i, l in enumerate(model.layers) if isinstance(l, (Dense, TTLinear))
    ]
    if not param_layers:
        return set()
    picked = {param_layers[0], param_layers[-1]}
    return {key for key, _ in model.param_items() if key.layer in picked}


# ---------------------------------------------------------------------------
# initialization


def init_block(shape: tuple[int, ...], fan_in: int, fan_out: int,
               rng: np.random.Generator) -> np.ndarray:
    """Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-a, a, size=shape)


def block_fans(model: Model, key: ParamKey) -> tuple[int, int]:
    layer = model.layers[key.layer]
    if isinstance(key, CoreKey):
        r_l, m, r_r = layer.tt.cores[key.core].shape
        return r_l * m, m * r_r
    assert isinstance(layer, (Dense, TTLinear))
    return layer.in_dim, layer.out_dim


def reinit_blocks(model: Model, keys: set[ParamKey], rng_seed: int) -> Model:
    """Copy of `model` with the given blocks freshly initialized.

    Every block draws from its own (seed, block-token) stream, so the
    result does not depend on iteration order.
    """
    out = model.copy()
    for key, arr in list(out.param_items()):
        if key in keys:
            fan_in, fan_out = block_fans(out, key)
            rng = derive_rng(rng_seed, "init", key.token())
            out.set_block(key, init_block(arr.shape, fan_in, fan_out, rng))
    return out


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class LossTarget:
    """Cross-entropy of the softmax output at integer label(s)."""

    labels: np.ndarray | int


@dataclass
class ProjectionTarget:
    """Scalar projection v . y of the softmax output."""

    v: np.ndarray  # (class_count,) shared, or (batch, class_count)


@dataclass
class ForwardCache:
    model: Model
    x: np.ndarray  # (batch, in_dim)
    single: bool
    layer_ctx: list[object]
    logits: np.ndarray
    probs: np.ndarray


@dataclass
class Gradients:
    """Per-block gradients plus the gradient with respect to the input.

    reduction "mean"/"sum" collapses the batch; "none" keeps a leading
    batch axis on every array.
    """

    blocks: dict[ParamKey, np.ndarray]
    wrt_input: np.ndarray
    reduction: str


def forward(model: Model, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (softmax output, cache for backward)."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ModelShapeError(f"input dim {model.input_dim} expected, got {np.shape(x)}")
    ctxs: list[object] = []
    H = X
    for layer in model.layers:
        if isinstance(layer, Dense):
            ctxs.append(H)
            H = H @ layer.weight.T + layer.bias
        elif isinstance(layer, TTLinear):
            Hn, cache = _apply_forward(layer.tt, layer.desc, H)
            ctxs.append((H, cache))
            H = Hn + layer.bias
        elif isinstance(layer, Relu):
            ctxs.append(H)
            H = np.maximum(H, 0.0)
        else:  # Softmax
            ctxs.append(None)
            Z = H
            shifted = Z - Z.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            H = e / e.sum(axis=1, keepdims=True)
    probs = H
    yc = ForwardCache(model=model, x=X, single=single, layer_ctx=ctxs,
                      logits=Z, probs=probs)
    return (probs[0] if single else probs), yc


def _softmax_input_grad(cache: ForwardCache, target: LossTarget | ProjectionTarget) -> np.ndarray:
    """Gradient of the target scalar w.r.t. the softmax input (logits)."""
    P = cache.probs
    B, C = P.shape
    if isinstance(target, LossTarget):
        labels = np.atleast_1d(np.asarray(target.labels, dtype=np.int64))
        if labels.shape != (B,):
            raise ModelShapeError(f"labels of shape ({B},) expected, got {labels.shape}")
        if labels.min() < 0 or labels.max() >= C:
            raise ModelShapeError("label out of range")
        dZ = P.copy()
        dZ[np.arange(B), labels] -= 1.0
        return dZ
    V = np.asarray(target.v, dtype=np.float64)
    if V.ndim == 1:
        V = np.broadcast_to(V, (B, C))
    if V.shape != (B, C):
        raise ModelShapeError(f"projection of shape ({C},) or ({B},{C}) expected")
    inner = (V * P).sum(axis=1, keepdims=True)
    return P * (V - inner)


def backward(
    model: Model,
    cache: ForwardCache,
    target: LossTarget | ProjectionTarget,
    reduce: str = "mean",
) -> Gradients:
    """Gradients of a scalar per sample w.r.t. every parameter block.

    The scalar is the cross-entropy loss at the given label(s) or the
    projection v . y.  The cache may be reused for many targets; it is
    never mutated.
    """
    if cache.model is not model:
        raise StaleCacheError("cache was built by a different model instance")
    if reduce not in ("mean", "sum", "none"):
        raise ValueError(f"unknown reduction {reduce!r}")
    B = cache.x.shape[0]
    per_sample = reduce == "none"
    out = "b" if per_sample else ""
    blocks: dict[ParamKey, np.ndarray] = {}

    dH = _softmax_input_grad(cache, target)
    for i in range(len(model.layers) - 2, -1, -1):
        layer = model.layers[i]
        ctx = cache.layer_ctx[i]
        if isinstance(layer, Dense):
            H_in = ctx
            blocks[DenseKey(i, "weight")] = np.einsum(
                f"bo,bi->{out}oi", dH, H_in, optimize=True
            )
            blocks[DenseKey(i, "bias")] = dH if per_sample else dH.sum(axis=0)
            dH = dH @ layer.weight
        elif isinstance(layer, TTLinear):
            H_in, tt_cache = ctx
            blocks[DenseKey(i, "bias")] = dH if per_sample else dH.sum(axis=0)
            dH, core_grads = _apply_backward(layer.tt, layer.desc, tt_cache, dH, per_sample)
            for k, g in enumerate(core_grads):
                blocks[CoreKey(i, k)] = g
        elif isinstance(layer, Relu):
            dH = dH * (ctx > 0)
    if reduce == "mean":
        blocks = {k: v / B for k, v in blocks.items()}
        dX = dH / B
    else:
        dX = dH
    if cache.single and not per_sample:
        dX = dX[0]
    return Gradients(blocks=blocks, wrt_input=dX, reduction=reduce)


# ---------------------------------------------------------------------------
# training / evaluation


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs_per_round: int = 10
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs_per_round < 0:
            raise ValueError("epochs_per_round must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def train(model: Model, X: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> Model:
    """Plain SGD on cross-entropy; returns a new model, input untouched.

    Deterministic given cfg.rng_seed; zero epochs returns an unchanged
    copy bit for bit.
    """
    out = model.copy()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    rng = derive_rng(cfg.rng_seed, "train")
    for _epoch in range(cfg.epochs_per_round):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, cache = forward(out, X[idx])
            grads = backward(out, cache, LossTarget(y[idx]), reduce="mean")
            for key, g in grads.blocks.items():
                out.set_block(key, out.get_block(key) - cfg.learning_rate * g)
    return out


def predict_labels(model: Model, X: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties break toward the lowest class index."""
    probs, _ = forward(model, np.atleast_2d(np.asarray(X, dtype=np.float64)))
    return np.argmax(probs, axis=1).astype(np.int64)


def correct_count(model: Model, X: np.ndarray, y: np.ndarray) -> int:
    return int(np.count_nonzero(predict_labels(model, X) == np.asarray(y, dtype=np.int64)))


def evaluate_accuracy(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions on (X, y)."""
    n = int(np.asarray(y).shape[0])
    if n == 0:
        raise ValueError("empty evaluation set")
    return correct_count(model, X, y) / n


def mean_cross_entropy(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    probs, cache = forward(model, np.atleast_2d(X))
    z = cache.logits
    logp = z - z.max(axis=1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
    yy = np.asarray(y, dtype=np.int64)
    return float(-logp[np.arange(len(yy)), yy].mean())


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray  # (n, dim) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    split: np.ndarray  # (n,) unicode tags from SPLIT_TAGS

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or len(self.labels) != len(self.inputs):
            raise ValueError("inputs must be (n, dim) with matching labels")
        if len(self.split) != len(self.inputs):
            raise ValueError("split tags must match the sample count")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        lo, hi = (self.inputs.min(), self.inputs.max()) if self.inputs.size else (0.0, 0.0)
        if lo < 0.0 or hi > 1.0:
            raise ValueError("inputs must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.inputs)

    def subset(self, tag: str) -> "Dataset":
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split {tag!r}")
        m = self.split == tag
        return Dataset(self.inputs[m], self.labels[m], self.split[m])

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs, self.labels


def assign_splits(n: int, fractions: dict[str, float], rng_seed: int) -> np.ndarray:
    """Deterministic split tags for n samples given fractions summing to 1."""
    if set(fractions) != set(SPLIT_TAGS):
        raise ValueError(f"fractions must cover exactly {SPLIT_TAGS}")
    total = sum(fractions.values())
    if not np.isclose(total, 1.0, atol=1e-9):
        raise ValueError(f"split fractions sum to {total}, expected 1")
    counts = {t: int(round(fractions[t] * n)) for t in SPLIT_TAGS[:-1]}
    used = sum(counts.values())
    if used > n:
        raise ValueError("split fractions exceed the sample count")
    counts[SPLIT_TAGS[-1]] = n - used
    tags = np.empty(n, dtype="<U5")
    order = derive_rng(rng_seed, "split").permutation(n)
    pos = 0
    for t in SPLIT_TAGS:
        tags[order[pos:pos + counts[t]]] = t
        pos += counts[t]
    return tags


def make_clusters(
    classes: int,
    clusters_per_class: int,
    samples: int,
    rng_seed: int,
    std: float = 0.05,
    split_fractions: dict[str, float] | None = None,
) -> Dataset:
    """Gaussian class clusters on the unit square, clipped to [0, 1]^2.

    Cluster centers are drawn sequentially with a minimum-separation
    rejection rule (relaxed geometrically when the square fills up), so a
    seed fully determines the geometry.
    """
    if classes < 2 or clusters_per_class < 1 or samples < classes:
        raise ValueError("need >= 2 classes, >= 1 cluster each, and enough samples")
    rng = derive_rng(rng_seed, "clusters")
    k = classes * clusters_per_class
    centers: list[np.ndarray] = []
    min_dist = 0.16
    attempts = 0
    while len(centers) < k:
        c = rng.uniform(0.12, 0.88, size=2)
        if all(np.linalg.norm(c - e) >= min_dist for e in centers):
            centers.append(c)
        attempts += 1
        if attempts % 400 == 0:
            min_dist *= 0.9
    centers_arr = np.array(centers)  # cluster i belongs to class i % classes
    labels = np.arange(samples, dtype=np.int64) % classes
    which = rng.integers(0, clusters_per_class, size=samples)
    cluster_idx = which * classes + labels
    points = centers_arr[cluster_idx] + std * rng.standard_normal((samples, 2))
    points = np.clip(points, 0.0, 1.0)
    perm = rng.permutation(samples)
    points, labels = points[perm], labels[perm]
    fractions = split_fractions or {"train": 0.5, "val": 0.15, "seed": 0.15, "eval": 0.2}
    tags = assign_splits(samples, fractions, rng_seed)
    return Dataset(points, labels, tags)


def save_dataset_csv(ds: Dataset, path: str) -> None:
    """Write `label,f0,f1,...` rows (split tags are reassigned on load)."""
    dim = ds.inputs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{i}" for i in range(dim)])
        for lab, row in zip(ds.labels, ds.inputs):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def load_dataset_csv(
    path: str, split_fractions: dict[str, float], rng_seed: int
) -> Dataset:
    """Read `label,f0,f1,...`; features clamp to [0, 1] with a warning."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or any(
            h != f"f{i}" for i, h in enumerate(header[1:])
        ):
            raise ValueError(f"{path}: expected header label,f0,f1,...")
        labels: list[int] = []
        rows: list[list[float]] = []
        for line in reader:
            if not line:
                continue
            if len(line) != len(header):
                raise ValueError(f"{path}: row with {len(line)} fields, expected {len(header)}")
            labels.append(int(line[0]))
            rows.append([float(v) for v in line[1:]])
    X = np.asarray(rows, dtype=np.float64)
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        warnings.warn(f"{path}: features outside [0, 1] were clamped", stacklevel=2)
        X = np.clip(X, 0.0, 1.0)
    y = np.asarray(labels, dtype=np.int64)
    tags = assign_splits(len(y), split_fractions, rng_seed)
    return Dataset(X, y, tags)


# ---------------------------------------------------------------------------
# model builders


@dataclass(frozen=True)
class ArchSpec:
    """Synthetic host architecture: dense in, TT hidden stack, dense out."""

    input_dim: int = 2
    hidden_dim: int = 64
    tt_layer_count: int = 2
    class_count: int = 4
    tt_mode_sizes: tuple[int, ...] = (32, 2, 2, 32)
    tt_row_mode_count: int = 2
    tt_rank_caps: tuple[int, ...] = (16, 16, 16)

    def hidden_descriptor(self) -> ShapeDescriptor:
        return ShapeDescriptor(
            original_shape=(self.hidden_dim, self.hidden_dim),
            row_axis_count=1,
            mode_sizes=self.tt_mode_sizes,
            row_mode_count=self.tt_row_mode_count,
        )


def build_model(spec: ArchSpec, rng_seed: int) -> Model:
    """TT-native host: dense(in->H), relu, [tt(H->H), relu]*, dense(H->C)."""
    desc = spec.hidden_descriptor()
    layers: list[Layer] = []

    def dense(i: int, d_in: int, d_out: int) -> Dense:
        w = init_block((d_out, d_in), d_in, d_out, derive_rng(rng_seed, "init", f"{i}:weight"))
        b = init_block((d_out,), d_in, d_out, derive_rng(rng_seed, "init", f"{i}:bias"))
        return Dense(w, b)

    layers.append(dense(0, spec.input_dim, spec.hidden_dim))
    layers.append(Relu())
    idx = 2
    for _ in range(spec.tt_layer_count):
        w = init_block(
            (spec.hidden_dim, spec.hidden_dim),
            spec.hidden_dim,
            spec.hidden_dim,
            derive_rng(rng_seed, "init", f"{idx}:seed-matrix"),
        )
        tt = tt_svd(w.reshape(desc.mode_sizes), list(spec.tt_rank_caps))
        b = init_block(
            (spec.hidden_dim,),
            spec.hidden_dim,
            spec.hidden_dim,
            derive_rng(rng_seed, "init", f"{idx}:bias"),
        )
        layers.append(TTLinear(tt, desc, b))
        layers.append(Relu())
        idx += 2
    layers.append(dense(idx, spec.hidden_dim, spec.class_count))
    layers.append(Softmax())
    return Model(layers, spec.class_count)


def build_dense_model(spec: ArchSpec, rng_seed: int) -> Model:
    """Same topology as build_model but with plain dense hidden layers."""
    layers: list[Layer] = []

    def dense(i: int, d_in: int, d_out: int) -> Dense:
        w = init_block((d_out, d_in), d_in, d_out, derive_rng(rng_seed, "init", f"{i}:weight"))
        b = init_block((d_out,), d_in, d_out, derive_rng(rng_seed, "init", f"{i}:bias"))
        return Dense(w, b)

    layers.append(dense(0, spec.input_dim, spec.hidden_dim))
    layers.append(Relu())
    idx = 2
    for _ in range(spec.tt_layer_count):
        layers.append(dense(idx, spec.hidden_dim, spec.hidden_dim))
        layers.append(Relu())
        idx += 2
    layers.append(dense(idx, spec.hidden_dim, spec.class_count))
    layers.append(Softmax())
    return Model(layers, spec.class_count)


def decompose_hidden_layers(
    model: Model, desc: ShapeDescriptor, rank_caps: tuple[int, ...]
) -> Model:
    """Replace interior square dense layers with TT-linear equivalents.

    The first and last parameterized layers stay dense; each interior
    dense weight is TT-decomposed at the given rank caps (bias kept).
    """
    param_layers = [i for i, l in enumerate(model.layers) if isinstance(l, (Dense, TTLinear))]
    if len(param_layers) < 3:
        raise ModelShapeError("nothing to decompose: no interior parameterized layer")
    out = model.copy()
    decomposed = 0
    for i in param_layers[1:-1]:
        layer = out.layers[i]
        if not isinstance(layer, Dense):
            continue
        if (layer.out_dim, layer.in_dim) != tuple(desc.original_shape):
            raise ModelShapeError(
                f"layer {i} weight {(layer.out_dim, layer.in_dim)} does not match "
                f"descriptor {desc.original_shape}"
            )
        tt = tt_svd(layer.weight.reshape(desc.mode_sizes), list(rank_caps))
        out.layers[i] = TTLinear(tt, desc, layer.bias.copy())
        decomposed += 1
    if decomposed == 0:
        raise ModelShapeError("nothing to decompose: interior layers are already factored")
    return out


# ---------------------------------------------------------------------------
# plain (unencrypted) model files

MODEL_MAGIC = b"TTMODEL1"


def model_manifest(model: Model) -> dict:
    layers = []
    for layer in model.layers:
        if isinstance(layer, Dense):
            layers.append({"kind": "dense", "in": layer.in_dim, "out": layer.out_dim})
        elif isinstance(layer, TTLinear):
            layers.append({
                "kind": "tt_linear",
                "mode_sizes": list(layer.desc.mode_sizes),
                "ranks": list(layer.tt.ranks),
                "original_shape": list(layer.desc.original_shape),
                "row_axis_count": layer.desc.row_axis_count,
                "row_mode_count": layer.desc.row_mode_count,
            })
        elif isinstance(layer, Relu):
            layers.append({"kind": "relu"})
        else:
            layers.append({"kind": "softmax"})
    return {"class_count": model.class_count, "layers": layers}


def model_from_manifest(manifest: dict, blocks: dict[str, np.ndarray]) -> Model:
    layers: list[Layer] = []
    for i, entry in enumerate(manifest["layers"]):
        kind = entry["kind"]
        if kind == "dense":
            layers.append(Dense(blocks[f"{i}:weight"], blocks[f"{i}:bias"]))
        elif kind == "tt_linear":
            desc = ShapeDescriptor(
                original_shape=tuple(entry["original_shape"]),
                row_axis_count=int(entry["row_axis_count"]),
                mode_sizes=tuple(entry["mode_sizes"]),
                row_mode_count=int(entry["row_mode_count"]),
            )
            ranks = entry["ranks"]
            cores = tuple(
                blocks[f"{i}:core{k}"] for k in range(len(entry["mode_sizes"]))
            )
            for k, core in enumerate(cores):
                want = (ranks[k], entry["mode_sizes"][k], ranks[k + 1])
                if core.shape != tuple(want):
                    raise ModelShapeError(f"core {i}:{k} shape {core.shape} != {want}")
            layers.append(TTLinear(TTTensor(cores), desc, blocks[f"{i}:bias"]))
        elif kind == "relu":
            layers.append(Relu())
        elif kind == "softmax":
            layers.append(Softmax())
        else:
            raise ModelShapeError(f"unknown layer kind {kind!r}")
    return Model(layers, int(manifest["class_count"]))


def save_model(model: Model, path: str) -> None:
    """Deterministic binary model file: manifest JSON + float64 LE blocks."""
    manifest = json.dumps(model_manifest(model), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<I", len(manifest)))
    buf.write(manifest)
    for key, arr in model.param_items():
        token = key.token().encode("utf-8")
        buf.write(struct.pack("<H", len(token)))
        buf.write(token)
        buf.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<I", d))
        payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelShapeError(f"{path}: not a model file")
    off = len(MODEL_MAGIC)
    (mlen,) = struct.unpack_from("<I", blob, off)
    off += 4
    manifest = json.loads(blob[off:off + mlen].decode("utf-8"))
    off += mlen
    blocks: dict[str, np.ndarray] = {}
    while off < len(blob):
        (tlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        token = blob[off:off + tlen].decode("utf-8")
        off += tlen
        (ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        (plen,) = struct.unpack_from("<Q", blob, off)
        off += 8
        arr = np.frombuffer(blob[off:off + plen], dtype="<f8").reshape(shape).copy()
        off += plen
        blocks[token] = arr
    return model_from_manifest(manifest, blocks)
