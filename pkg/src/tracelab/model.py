"""Trace regression data model.

A trace regression observation pairs a matrix covariate X with a scalar
response y = <X, Theta> + eps, where <A, B> = tr(A^T B).  This module
holds the dataset container, the trace inner product, the reduced design
construction that turns the rank-r problem into ordinary least squares
for a fixed right factor V, and the in-sample prediction risk.

Vectorization is column-major throughout: vec(A) stacks the columns of A.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "TraceRegressionDataset",
    "CoefficientMatrix",
    "ReducedDesign",
    "trace_inner",
    "build_reduced_design",
    "in_sample_risk",
    "save_dataset",
    "load_dataset",
]

# Singular values below RANK_TOL * s_max count as zero.
RANK_TOL = 1e-10


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a 2-D array."""
    return np.asarray(a).reshape(-1, order="F")


def unvec(v: np.ndarray, d1: int, d2: int) -> np.ndarray:
    """Inverse of :func:`vec` for a d1 x d2 matrix."""
    return np.asarray(v).reshape((d1, d2), order="F")


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass
class TraceRegressionDataset:
    """n observations (X_i, y_i) with optional ground truth.

    Parameters
    ----------
    designs : array_like, shape (n, d1, d2)
        Stack of design matrices.  A list of n equal-shape 2-D arrays is
        accepted and stacked.
    responses : array_like, shape (n,)
    truth : array_like, shape (d1, d2), optional
        The coefficient matrix that generated the responses, when known.
    noise_sd : float, optional
        Noise standard deviation used during generation, when known.

    All arrays are stored read-only; instances are safe to share across
    parallel workers.
    """

    designs: np.ndarray
    responses: np.ndarray
    truth: Optional[np.ndarray] = None
    noise_sd: Optional[float] = None
    _vecs: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _designs_t: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        designs = np.stack([np.asarray(m, dtype=float) for m in self.designs])
        if designs.ndim != 3:
            raise ValueError(f"designs must stack to 3-D, got shape {designs.shape}")
        self.designs = _freeze(designs)
        self.responses = _freeze(np.asarray(self.responses, dtype=float).ravel())
        if len(self.responses) != self.n:
            raise ValueError(
                f"{len(self.responses)} responses for {self.n} designs"
            )
        if self.truth is not None:
            truth = _freeze(self.truth)
            if truth.shape != self.shape:
                raise ValueError(
                    f"truth shape {truth.shape} does not match designs {self.shape}"
                )
            self.truth = truth
        if self.noise_sd is not None and self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")

    @property
    def n(self) -> int:
        return self.designs.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.designs.shape[1], self.designs.shape[2]

    @property
    def vecs(self) -> np.ndarray:
        """(n, d1*d2) matrix whose row i is vec(X_i); cached."""
        if self._vecs is None:
            n, d1, d2 = self.designs.shape
            self._vecs = _freeze(self.designs.transpose(0, 2, 1).reshape(n, d1 * d2))
        return self._vecs

    @property
    def designs_t(self) -> np.ndarray:
        """(n, d2, d1) stack of transposed designs; cached."""
        if self._designs_t is None:
            self._designs_t = _freeze(
                np.ascontiguousarray(self.designs.transpose(0, 2, 1))
            )
        return self._designs_t

    def with_responses(self, responses: np.ndarray) -> "TraceRegressionDataset":
        """Shallow copy with new responses, sharing the design caches."""
        other = TraceRegressionDataset.__new__(TraceRegressionDataset)
        other.designs = self.designs
        other.responses = _freeze(np.asarray(responses, dtype=float).ravel())
        if len(other.responses) != self.n:
            raise ValueError("response length mismatch")
        other.truth = self.truth
        other.noise_sd = self.noise_sd
        other._vecs = self._vecs if self._vecs is not None else None
        other._designs_t = self._designs_t
        # force cache construction once so copies share it
        if other._vecs is None:
            other._vecs = self.vecs
        return other

    def signal_values(self) -> np.ndarray:
        """<X_i, truth> for all i; requires truth."""
        if self.truth is None:
            raise ValueError("dataset has no ground truth")
        return self.vecs @ vec(self.truth)


def numerical_rank(values: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(values, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


@dataclass
class CoefficientMatrix:
    """A d1 x d2 coefficient matrix, optionally with a declared rank cap."""

    values: np.ndarray
    declared_rank: Optional[int] = None

    def __post_init__(self):
        self.values = _freeze(self.values)
        if self.values.ndim != 2:
            raise ValueError("coefficient matrix must be 2-D")
        if self.declared_rank is not None:
            if self.declared_rank < 0:
                raise ValueError("declared_rank must be nonnegative")
            actual = numerical_rank(self.values)
            if actual > self.declared_rank:
                raise ValueError(
                    f"numerical rank {actual} exceeds declared rank {self.declared_rank}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class ReducedDesign:
    """The n x (r*d1) matrix whose row i is vec(X_i V), with its V."""

    matrix: np.ndarray
    source_v: np.ndarray

    def __post_init__(self):
        self.matrix = _freeze(self.matrix)
        self.source_v = _freeze(self.source_v)


def trace_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Trace inner product tr(a^T b) = sum_ij a_ij * b_ij."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def reduced_matrix(designs: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rows vec(X_i v) for a stack of designs; no validation (hot path)."""
    n, d1, d2 = designs.shape
    r = v.shape[1]
    xv = (designs.reshape(n * d1, d2) @ v).reshape(n, d1, r)
    return xv.transpose(0, 2, 1).reshape(n, r * d1)


def build_reduced_design(dataset: TraceRegressionDataset, v: np.ndarray) -> ReducedDesign:
    """Construct the reduced design X_V with rows vec(X_i V).

    For every U it holds that <X_i, U V^T> equals the dot product of row i
    with vec(U), which is what turns the fixed-V subproblem into ordinary
    least squares.  Rows are verified entrywise against a per-observation
    recomputation.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    d1, d2 = dataset.shape
    if v.shape[0] != d2 or v.shape[1] < 1:
        raise ValueError(f"v must be {d2} x r with r >= 1, got {v.shape}")
    matrix = reduced_matrix(dataset.designs, v)
    scale = max(np.abs(matrix).max(), 1.0)
    for i in range(dataset.n):
        expected = vec(dataset.designs[i] @ v)
        if not np.allclose(matrix[i], expected, rtol=1e-12, atol=1e-14 * scale):
            raise AssertionError(f"reduced design row {i} mismatch")
    return ReducedDesign(matrix=matrix, source_v=v)


def in_sample_risk(estimate: CoefficientMatrix, dataset: TraceRegressionDataset) -> float:
    """Mean of <X_i, estimate - truth>^2 over the sample."""
    if dataset.truth is None:
        raise ValueError("in-sample risk requires a dataset with ground truth")
    values = estimate.values if isinstance(estimate, CoefficientMatrix) else np.asarray(estimate)
    if values.shape != dataset.shape:
        raise ValueError(f"estimate shape {values.shape} does not match {dataset.shape}")
    diff = vec(values - dataset.truth)
    fitted_gap = dataset.vecs @ diff
    return float(np.mean(fitted_gap**2))


# ---------------------------------------------------------------------------
# Text serialization: header "d1 d2 n", n design blocks, n responses.
# Values use 17 significant digits, which round-trips IEEE doubles exactly.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_dataset(dataset: TraceRegressionDataset, path) -> None:
    d1, d2 = dataset.shape
    lines = [f"{d1} {d2} {dataset.n}"]
    for m in dataset.designs:
        for row in m:
            lines.append(" ".join(_fmt(x) for x in row))
    for y in dataset.responses:
        lines.append(_fmt(y))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dataset(path) -> TraceRegressionDataset:
    with open(path) as fh:
        tokens = fh.read().split("\n")
    header = tokens[0].split()
    if len(header) != 3:
        raise ValueError(f"malformed header line: {tokens[0]!r}")
    d1, d2, n = (int(t) for t in header)
    designs = np.empty((n, d1, d2))
    pos = 1
    for i in range(n):
        for j in range(d1):
            designs[i, j] = [float(t) for t in tokens[pos].split()]
            pos += 1
    responses = np.array([float(tokens[pos + i]) for i in range(n)])
    return TraceRegressionDataset(designs=designs, responses=responses)
