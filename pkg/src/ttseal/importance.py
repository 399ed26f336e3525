"""Per-core sensitivity scores.

A core's score combines how strongly the validation loss and the network
output react to it:

    score(G) = sqrt( E_x[ ||dL/dG||_F^2 + ||dy/dG||_F^2 ] ) / mu_layer

where mu_layer is the mean Frobenius norm of that layer's cores.  The
output term's squared Jacobian norm is estimated stochastically:
projecting y onto a random sign (or normal) vector v and differentiating
the scalar v.y has expected squared gradient norm exactly ||dy/dG||_F^2,
so a handful of probe vectors per batch suffices.  The expectation over
the validation set sits inside the square root: squared norms are summed
over samples, divided by the sample count, then rooted.

Probe vectors draw from the (seed, batch index, probe index) stream, so
results are reproducible bit for bit regardless of evaluation order.
"""
from __future__ import annotations

import csv
import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from .nnet import (
    CoreKey,
    ForwardCache,
    LossTarget,
    Model,
    ProjectionTarget,
    backward,
    forward,
)
from .rngutil import derive_rng

PROBE_DISTRIBUTIONS = ("rademacher", "normal")
REPORT_MAGIC = b"TTIACC\x01\x00"


@dataclass(frozen=True)
class ImportanceScore:
    core: CoreKey
    left_rank: int
    mode_size: int
    right_rank: int
    size: int
    raw_loss_grad_sq: float  # E_x ||dL/dG||_F^2
    raw_jacobian_sq: float  # E_x ||dy/dG||_F^2 (probe estimate)
    mu: float  # layer normalizer
    i_acc: float


@dataclass(frozen=True)
class ImportanceReport:
    scores: tuple[ImportanceScore, ...]
    probe_count: int
    rng_seed: int
    val_fingerprint: str

    def ascending(self) -> tuple[ImportanceScore, ...]:
        """Scores by ascending importance; ties break on core id."""
        return tuple(sorted(self.scores, key=lambda s: (s.i_acc, s.core)))

    def by_core(self) -> dict[CoreKey, ImportanceScore]:
        return {s.core: s for s in self.scores}


def dataset_fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(y, dtype="<i8").tobytes())
    return h.hexdigest()[:16]


def _draw_probe(rng: np.random.Generator, dim: int, distribution: str) -> np.ndarray:
    if distribution == "rademacher":
        return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0
    if distribution == "normal":
        return rng.standard_normal(dim)
    raise ValueError(f"unknown probe distribution {distribution!r}")


def _core_sq_norms(model: Model, cache: ForwardCache,
                   target: LossTarget | ProjectionTarget) -> dict[CoreKey, np.ndarray]:
    """Per-sample squared gradient norms for every TT core."""
    grads = backward(model, cache, target, reduce="none")
    out: dict[CoreKey, np.ndarray] = {}
    for key, g in grads.blocks.items():
        if isinstance(key, CoreKey):
            out[key] = (g.reshape(g.shape[0], -1) ** 2).sum(axis=1)
    return out


def estimate_jacobian_norm_sq(
    model: Model,
    batch: np.ndarray,
    probes: int,
    rng_seed: int,
    distribution: str = "rademacher",
    batch_index: int = 0,
) -> dict[CoreKey, float]:
    """Probe estimate of E_x ||dy/dG||_F^2 over one batch.

    Averages over batch samples and probe vectors; one probe vector is
    drawn per (seed, batch index, probe index) and shared by the batch.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if distribution not in PROBE_DISTRIBUTIONS:
        raise ValueError(f"unknown probe distribution {distribution!r}")
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    _, cache = forward(model, X)
    acc: dict[CoreKey, np.ndarray] = {}
    for t in range(probes):
        v = _draw_probe(derive_rng(rng_seed, "probe", batch_index, t),
                        model.class_count, distribution)
        sq = _core_sq_norms(model, cache, ProjectionTarget(v))
        for key, val in sq.items():
            acc[key] = acc.get(key, 0.0) + val
    n = X.shape[0]
    return {key: float(val.sum() / (probes * n)) for key, val in acc.items()}


def exact_jacobian_norm_sq(model: Model, batch: np.ndarray) -> dict[CoreKey, float]:
    """Exact E_x ||dy/dG||_F^2 via one one-hot projection per class."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    _, cache = forward(model, X)
    acc: dict[CoreKey, np.ndarray] = {}
    for j in range(model.class_count):
        v = np.zeros(model.class_count)
        v[j] = 1.0
        for key, val in _core_sq_norms(model, cache, ProjectionTarget(v)).items():
            acc[key] = acc.get(key, 0.0) + val
    n = X.shape[0]
    return {key: float(val.sum() / n) for key, val in acc.items()}


def layer_normalizers(model: Model) -> dict[int, float]:
    """mu per TT layer: mean Frobenius norm of the layer's cores."""
    mus: dict[int, float] = {}
    norms: dict[int, list[float]] = {}
    for key, core in model.core_items():
        norms.setdefault(key.layer, []).append(float(np.linalg.norm(core)))
    for layer, vals in norms.items():
        mu = float(np.mean(vals))
        mus[layer] = mu if mu > 0 else 1.0  # degenerate all-zero layer
    return mus


def compute_iacc(
    model: Model,
    val_X: np.ndarray,
    val_y: np.ndarray,
    probes: int = 2,
    rng_seed: int = 0,
    batch_size: int = 32,
    distribution: str = "rademacher",
) -> ImportanceReport:
    """Score every TT core on the validation set.

    Per batch: one forward pass, one per-sample loss backward, and
    `probes` projection backwards reusing the same cache.
    """
    if not model.has_tt_cores():
        raise ValueError("model has no TT cores to score")
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if distribution not in PROBE_DISTRIBUTIONS:
        raise ValueError(f"unknown probe distribution {distribution!r}")
    X = np.atleast_2d(np.asarray(val_X, dtype=np.float64))
    y = np.asarray(val_y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty validation set")

    loss_acc: dict[CoreKey, float] = {}
    jac_acc: dict[CoreKey, float] = {}
    for b, start in enumerate(range(0, n, batch_size)):
        Xb, yb = X[start:start + batch_size], y[start:start + batch_size]
        _, cache = forward(model, Xb)
        for key, val in _core_sq_norms(model, cache, LossTarget(yb)).items():
            loss_acc[key] = loss_acc.get(key, 0.0) + float(val.sum())
        for t in range(probes):
            v = _draw_probe(derive_rng(rng_seed, "probe", b, t),
                            model.class_count, distribution)
            for key, val in _core_sq_norms(model, cache, ProjectionTarget(v)).items():
                jac_acc[key] = jac_acc.get(key, 0.0) + float(val.sum()) / probes

    mus = layer_normalizers(model)
    scores = []
    for key, core in model.core_items():
        raw_loss = loss_acc[key] / n
        raw_jac = jac_acc[key] / n
        mu = mus[key.layer]
        scores.append(ImportanceScore(
            core=key,
            left_rank=core.shape[0],
            mode_size=core.shape[1],
            right_rank=core.shape[2],
            size=int(core.size),
            raw_loss_grad_sq=raw_loss,
            raw_jacobian_sq=raw_jac,
            mu=mu,
            i_acc=float(np.sqrt(raw_loss + raw_jac) / mu),
        ))
    return ImportanceReport(
        scores=tuple(scores),
        probe_count=probes,
        rng_seed=rng_seed,
        val_fingerprint=dataset_fingerprint(X, y),
    )


# ---------------------------------------------------------------------------
# report serialization

CSV_HEADER = ["layer", "core", "left_rank", "mode", "right_rank", "size", "i_acc"]


def write_report_csv(report: ImportanceReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in report.scores:
            w.writerow([s.core.layer, s.core.core, s.left_rank, s.mode_size,
                        s.right_rank, s.size, repr(s.i_acc)])


def write_report_binary(report: ImportanceReport, path: str) -> None:
    buf = io.BytesIO()
    buf.write(REPORT_MAGIC)
    fp = report.val_fingerprint.encode("ascii")
    buf.write(struct.pack("<IqH", report.probe_count, report.rng_seed, len(fp)))
    buf.write(fp)
    buf.write(struct.pack("<I", len(report.scores)))
    for s in report.scores:
        buf.write(struct.pack(
            "<IIIIIQdddd",
            s.core.layer, s.core.core, s.left_rank, s.mode_size, s.right_rank,
            s.size, s.raw_loss_grad_sq, s.raw_jacobian_sq, s.mu, s.i_acc,
        ))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_report_binary(path: str) -> ImportanceReport:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(REPORT_MAGIC)] != REPORT_MAGIC:
        raise ValueError(f"{path}: not an importance report")
    off = len(REPORT_MAGIC)
    probe_count, rng_seed, fplen = struct.unpack_from("<IqH", blob, off)
    off += struct.calcsize("<IqH")
    fingerprint = blob[off:off + fplen].decode("ascii")
    off += fplen
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    scores = []
    fmt = "<IIIIIQdddd"
    for _ in range(count):
        layer, core, lr, mode, rr, size, rl, rj, mu, iacc = struct.unpack_from(fmt, blob, off)
        off += struct.calcsize(fmt)
        scores.append(ImportanceScore(
            core=CoreKey(layer, core), left_rank=lr, mode_size=mode, right_rank=rr,
            size=size, raw_loss_grad_sq=rl, raw_jacobian_sq=rj, mu=mu, i_acc=iacc,
        ))
    return ImportanceReport(
        scores=tuple(scores), probe_count=probe_count,
        rng_seed=rng_seed, val_fingerprint=fingerprint,
    )
