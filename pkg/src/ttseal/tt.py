"""Tensor-train containers and operations.

A tensor-train (TT) represents a d-mode tensor T(j1,...,jd) as a chain of
3-axis cores G_k with shape (r_{k-1}, n_k, r_k), boundary ranks
r_0 = r_d = 1:

    T(j1,...,jd) = G_1[:, j1, :] @ G_2[:, j2, :] @ ... @ G_d[:, jd, :]

Decomposition is a deterministic left-to-right sweep of truncated SVDs;
on ties the first singular directions are kept, and singular values below
the standard numerical-rank cutoff are treated as zero so exactly
low-rank inputs recover their true ranks.

A ShapeDescriptor declares how the TT modes matricize into a linear map
(leading modes = matrix rows / output side, trailing modes = columns /
input side) so a TT can be applied to a vector core-by-core without ever
materializing the dense tensor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# A TT core is a plain float64 ndarray of shape (left_rank, mode, right_rank).
TTCore = np.ndarray


class TTShapeError(ValueError):
    """Raised for malformed cores, descriptors, or dimension mismatches."""


@dataclass(frozen=True)
class TTTensor:
    """A validated chain of TT cores."""

    cores: tuple[TTCore, ...]

    def __post_init__(self) -> None:
        if len(self.cores) < 1:
            raise TTShapeError("a TT needs at least one core")
        for k, core in enumerate(self.cores):
            if not isinstance(core, np.ndarray) or core.ndim != 3:
                raise TTShapeError(f"core {k} is not a 3-axis array")
            if min(core.shape) < 1:
                raise TTShapeError(f"core {k} has a zero-sized axis {core.shape}")
        if self.cores[0].shape[0] != 1:
            raise TTShapeError("left boundary rank must be 1")
        if self.cores[-1].shape[2] != 1:
            raise TTShapeError("right boundary rank must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise TTShapeError(
                    f"rank chain broken between cores {k} and {k + 1}: "
                    f"{self.cores[k].shape} vs {self.cores[k + 1].shape}"
                )

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Full rank chain r_0..r_d (boundary ranks included)."""
        return (1,) + tuple(core.shape[2] for core in self.cores)

    @property
    def core_count(self) -> int:
        return len(self.cores)

    def total_size(self) -> int:
        return sum(core.size for core in self.cores)


@dataclass(frozen=True)
class ShapeDescriptor:
    """How a TT's modes fold back into an (out, in) linear map.

    original_shape   shape of the un-decomposed tensor (e.g. a weight
                     matrix (out, in), or a 4-axis kernel tensor)
    row_axis_count   leading axes of original_shape that form matrix rows
    mode_sizes       TT mode sizes; rows' factors first, then columns'
    row_mode_count   leading TT modes that sit on the row side
    """

    original_shape: tuple[int, ...]
    row_axis_count: int
    mode_sizes: tuple[int, ...]
    row_mode_count: int

    def __post_init__(self) -> None:
        if len(self.original_shape) < 2:
            raise TTShapeError("descriptor needs at least two original axes")
        if not (1 <= self.row_axis_count < len(self.original_shape)):
            raise TTShapeError("row_axis_count must split the original axes")
        if not (1 <= self.row_mode_count < len(self.mode_sizes)):
            raise TTShapeError("row_mode_count must split the TT modes")
        if any(s < 1 for s in self.original_shape) or any(s < 1 for s in self.mode_sizes):
            raise TTShapeError("degenerate (zero-sized) axis in descriptor")
        if int(np.prod(self.mode_sizes)) != int(np.prod(self.original_shape)):
            raise TTShapeError("mode sizes do not factor the original shape")
        if int(np.prod(self.row_modes)) != int(np.prod(self.original_shape[: self.row_axis_count])):
            raise TTShapeError("row modes do not factor the row axes")

    @property
    def row_modes(self) -> tuple[int, ...]:
        return self.mode_sizes[: self.row_mode_count]

    @property
    def col_modes(self) -> tuple[int, ...]:
        return self.mode_sizes[self.row_mode_count:]

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.row_modes))

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.col_modes))


def core_size(core: TTCore) -> int:
    """Number of scalar parameters stored in one core."""
    if core.ndim != 3:
        raise TTShapeError("core_size expects a 3-axis core")
    return int(core.size)


def tt_svd(tensor: np.ndarray, max_ranks: list[int] | tuple[int, ...]) -> TTTensor:
    """Decompose a dense tensor into TT form by sequential truncated SVD.

    Sweeps left to right: matricize, SVD, keep the first
    min(cap, numerical rank) singular directions, fold the kept factor
    into the next step.  Fully deterministic (LAPACK SVD, no RNG).
    """
    T = np.asarray(tensor, dtype=np.float64)
    if T.ndim < 2:
        raise TTShapeError("tt_svd needs a tensor with at least 2 modes")
    if min(T.shape) < 1:
        raise TTShapeError(f"degenerate input shape {T.shape}")
    caps = tuple(int(c) for c in max_ranks)
    if len(caps) != T.ndim - 1:
        raise TTShapeError(
            f"need {T.ndim - 1} rank caps for a {T.ndim}-mode tensor, got {len(caps)}"
        )
    if any(c < 1 for c in caps):
        raise TTShapeError("rank caps must be >= 1")

    eps = np.finfo(np.float64).eps
    cores: list[TTCore] = []
    r_prev = 1
    M = T.reshape(T.shape[0], -1)
    for k in range(T.ndim - 1):
        n_k = T.shape[k]
        M = M.reshape(r_prev * n_k, -1)
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        # Numerical rank: drop directions that are zero up to round-off.
        cutoff = s[0] * max(M.shape) * eps if s.size and s[0] > 0 else 0.0
        numerical = int(np.count_nonzero(s > cutoff))
        r = max(1, min(caps[k], numerical if numerical else 1, len(s)))
        cores.append(np.ascontiguousarray(U[:, :r]).reshape(r_prev, n_k, r))
        M = s[:r, None] * Vt[:r]
        r_prev = r
    cores.append(np.ascontiguousarray(M).reshape(r_prev, T.shape[-1], 1))
    return TTTensor(tuple(cores))


def reconstruct(tt: TTTensor) -> np.ndarray:
    """Contract all cores back into the dense tensor."""
    modes = tt.mode_sizes
    M = tt.cores[0].reshape(modes[0], tt.cores[0].shape[2])
    for core in tt.cores[1:]:
        r, n, r2 = core.shape
        M = M @ core.reshape(r, n * r2)
        M = M.reshape(-1, r2)
    return M.reshape(modes)


def tt_apply(tt: TTTensor, desc: ShapeDescriptor, x: np.ndarray) -> np.ndarray:
    """Apply the matricized TT to a vector (or a batch of row vectors).

    Contracts core-by-core — column cores fold the input in from the
    right, row cores then emit the output — so the dense (out, in) matrix
    is never materialized.  A 1-D input returns a 1-D output; a 2-D input
    (batch, in_dim) returns (batch, out_dim).
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != desc.in_dim:
        raise TTShapeError(f"input of length {desc.in_dim} expected, got shape {np.shape(x)}")
    if tt.mode_sizes != tuple(desc.mode_sizes):
        raise TTShapeError("descriptor modes do not match the TT cores")
    Y, _ = _apply_forward(tt, desc, X)
    return Y[0] if single else Y


@dataclass
class TTApplyCache:
    """Intermediates of one _apply_forward sweep, for the backward sweep.

    col_stages[i] is the tensor entering the i-th column-core contraction
    (viewed as (batch, P, mode, rank)); row_stages[i] the one entering
    the i-th row-core contraction (as (batch, rank, emitted)).
    """

    col_stages: list[np.ndarray]
    row_stages: list[np.ndarray]


def _apply_forward(
    tt: TTTensor, desc: ShapeDescriptor, X: np.ndarray
) -> tuple[np.ndarray, TTApplyCache]:
    """Batched core-by-core apply; returns (Y, cache-of-intermediates)."""
    B = X.shape[0]
    p = desc.row_mode_count
    cores = tt.cores
    col_modes = desc.col_modes

    # Column sweep, right to left: fold the input into a rank-r_p vector.
    col_stages: list[np.ndarray] = []
    A = X.reshape(B, desc.in_dim, 1)
    pre = desc.in_dim
    for k in range(len(cores) - 1, p - 1, -1):
        n = col_modes[k - p]
        r_out = cores[k].shape[2]
        pre //= n
        A = A.reshape(B, pre, n, r_out)
        col_stages.append(A)
        A = np.einsum("bpjr,sjr->bps", A, cores[k], optimize=True)
    # Row sweep, right to left: emit output modes.
    row_stages: list[np.ndarray] = []
    D = A.reshape(B, cores[p - 1].shape[2], 1)
    for k in range(p - 1, -1, -1):
        row_stages.append(D)
        D = np.einsum("rjs,bse->brje", cores[k], D, optimize=True)
        D = D.reshape(B, cores[k].shape[0], -1)
    Y = D.reshape(B, desc.out_dim)
    return Y, TTApplyCache(col_stages=col_stages, row_stages=row_stages)


def _apply_backward(
    tt: TTTensor,
    desc: ShapeDescriptor,
    cache: TTApplyCache,
    dY: np.ndarray,
    per_sample: bool,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Reverse-mode sweep through _apply_forward.

    dY has shape (batch, out_dim) and holds the gradient of a per-sample
    scalar.  Returns (dX, core gradients); core gradients carry a leading
    batch axis when per_sample is True, otherwise they are summed over
    the batch.
    """
    B = dY.shape[0]
    p = desc.row_mode_count
    cores = tt.cores
    out = "b" if per_sample else ""
    core_grads: list[np.ndarray | None] = [None] * len(cores)

    # Undo the row sweep (cores p-1 .. 0 were applied last).
    dD = dY.reshape(B, 1, desc.out_dim)
    for i in range(p - 1, -1, -1):
        k = p - 1 - i
        D_in = cache.row_stages[i]  # (B, r_k, E) entering core k's step
        r, n, s = cores[k].shape
        dD_v = dD.reshape(B, r, n, D_in.shape[2])
        core_grads[k] = np.einsum(f"brje,bse->{out}rjs", dD_v, D_in, optimize=True)
        dD = np.einsum("rjs,brje->bse", cores[k], dD_v, optimize=True)
    # Undo the column sweep (cores d-1 .. p applied first).
    dA = dD.reshape(B, 1, cores[p - 1].shape[2])
    for i in range(len(cores) - 1 - p, -1, -1):
        k = len(cores) - 1 - i
        A_in = cache.col_stages[i]  # (B, P, n, r) entering core k's step
        dA_v = dA.reshape(B, A_in.shape[1], cores[k].shape[0])
        core_grads[k] = np.einsum(f"bps,bpjr->{out}sjr", dA_v, A_in, optimize=True)
        dA = np.einsum("bps,sjr->bpjr", dA_v, cores[k], optimize=True)
    dX = dA.reshape(B, desc.in_dim)
    return dX, list(core_grads)  # type: ignore[arg-type]


def random_tt(
    mode_sizes: tuple[int, ...], ranks: tuple[int, ...], rng: np.random.Generator
) -> TTTensor:
    """A TT with the given full rank chain and standard-normal entries."""
    if len(ranks) != len(mode_sizes) + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise TTShapeError("ranks must be a full chain 1, r_1, ..., r_{d-1}, 1")
    cores = tuple(
        rng.standard_normal((ranks[k], mode_sizes[k], ranks[k + 1]))
        for k in range(len(mode_sizes))
    )
    return TTTensor(cores)
