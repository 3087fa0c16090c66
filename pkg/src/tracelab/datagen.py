"""Synthetic instance generators.

Signals are built as U* diag(lam) V*^T with Haar-distributed orthonormal
factors and Uniform(-1, 1) spectrum, then rescaled so that the variance of
<X, Theta*> under the design distribution equals the requested SNR.
Designs are either dense i.i.d. standard Gaussian matrices or singletons
e_j e_k^T sampled without replacement (matrix completion).

Reproducibility contract: every generator accepts a seed (int, SeedSequence,
or Generator).  The experiment harness derives one independent substream per
(cell, rep) pair so results do not depend on scheduling order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .model import TraceRegressionDataset, CoefficientMatrix, vec

__all__ = [
    "DesignKind",
    "SignalSpec",
    "haar_stiefel",
    "make_theta",
    "gen_dataset",
    "gen_sparse_linear",
    "substream",
]

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]

GAUSSIAN = "gaussian"
MATRIX_COMPLETION = "matrix_completion"
SPARSE_LINEAR = "sparse_linear"

_VARIANTS = (GAUSSIAN, MATRIX_COMPLETION, SPARSE_LINEAR)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (master seed, integer key) pair.

    Streams for distinct keys are statistically independent, so parallel
    workers can draw them in any order without changing the results.
    """
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class DesignKind:
    """Which design distribution to sample, with its dimensions."""

    variant: str
    dims: tuple[int, ...]

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown design variant {self.variant!r}")
        if self.variant == SPARSE_LINEAR:
            if len(self.dims) != 1:
                raise ValueError("sparse_linear takes dims=(p,)")
        elif len(self.dims) != 2:
            raise ValueError(f"{self.variant} takes dims=(d1, d2)")

    @property
    def d1(self) -> int:
        return self.dims[0]

    @property
    def d2(self) -> int:
        return self.dims[1]

    @property
    def p(self) -> int:
        return self.dims[0]

    def second_moment_diag(self) -> float:
        """Diagonal value of E[vec(X) vec(X)^T], which is a scalar multiple
        of the identity for both matrix designs."""
        if self.variant == GAUSSIAN:
            return 1.0
        if self.variant == MATRIX_COMPLETION:
            # singleton designs: each entry hit with probability 1/(d1*d2)
            return 1.0 / (self.d1 * self.d2)
        raise ValueError("second moment defined for matrix designs only")


@dataclass(frozen=True)
class SignalSpec:
    """Rank and signal-to-noise ratio of the planted coefficient matrix."""

    rank: int
    snr: float
    seed: SeedLike = None

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be nonnegative")
        if self.snr < 0:
            raise ValueError("snr must be nonnegative")


def haar_stiefel(d: int, r: int, seed: SeedLike) -> np.ndarray:
    """Haar-uniform d x r matrix with orthonormal columns.

    QR of a standard Gaussian matrix, with the sign convention diag(R) > 0
    that makes the factorization (and hence the distribution) unique.
    """
    if r > d:
        raise ValueError(f"need r <= d, got r={r}, d={d}")
    g = _rng(seed).standard_normal((d, r))
    q, rmat = np.linalg.qr(g)
    signs = np.sign(np.diag(rmat))
    signs[signs == 0] = 1.0
    return q * signs


def _uniform_spectrum(rng: np.random.Generator, r: int) -> np.ndarray:
    # Resample magnitudes below 1e-8 so the numerical rank is exactly r.
    lam = rng.uniform(-1.0, 1.0, size=r)
    while np.any(np.abs(lam) < 1e-8):
        bad = np.abs(lam) < 1e-8
        lam[bad] = rng.uniform(-1.0, 1.0, size=bad.sum())
    return lam


def make_theta(spec: SignalSpec, dims: tuple[int, int], design: DesignKind) -> CoefficientMatrix:
    """Planted coefficient matrix with vec(Theta)^T Sigma vec(Theta) = snr.

    Sigma is the design's (uncentered) second-moment matrix: the identity
    for the Gaussian design and I/(d1*d2) for matrix completion.  With
    snr = 0 the zero matrix is returned (the null).
    """
    d1, d2 = dims
    if spec.snr == 0 or spec.rank == 0:
        return CoefficientMatrix(np.zeros((d1, d2)), declared_rank=spec.rank)
    rng = _rng(spec.seed)
    lam = _uniform_spectrum(rng, spec.rank)
    u = haar_stiefel(d1, spec.rank, rng)
    v = haar_stiefel(d2, spec.rank, rng)
    theta = u @ np.diag(lam) @ v.T
    quad = design.second_moment_diag() * float(vec(theta) @ vec(theta))
    theta *= np.sqrt(spec.snr / quad)
    return CoefficientMatrix(theta, declared_rank=spec.rank)


def _matrix_designs(kind: DesignKind, n: int, rng: np.random.Generator) -> np.ndarray:
    d1, d2 = kind.d1, kind.d2
    if kind.variant == GAUSSIAN:
        return rng.standard_normal((n, d1, d2))
    if n > d1 * d2:
        raise ValueError(
            f"matrix completion samples without replacement: n={n} > d1*d2={d1 * d2}"
        )
    flat = rng.choice(d1 * d2, size=n, replace=False)
    designs = np.zeros((n, d1, d2))
    designs[np.arange(n), flat // d2, flat % d2] = 1.0
    return designs


def gen_dataset(
    kind: DesignKind,
    spec: SignalSpec,
    n: int,
    noise_sd: float = 1.0,
    seed: SeedLike = None,
) -> TraceRegressionDataset:
    """Draw a dataset y_i = <X_i, Theta*> + eps_i with i.i.d. Gaussian noise.

    Theta* is drawn from ``spec`` (using ``spec.seed``); designs and noise
    use ``seed``.  The truth and noise level are embedded in the dataset.
    """
    if kind.variant == SPARSE_LINEAR:
        raise ValueError("use gen_sparse_linear for the sparse linear model")
    rng = _rng(seed)
    theta = make_theta(spec, (kind.d1, kind.d2), kind)
    designs = _matrix_designs(kind, n, rng)
    signal = designs.reshape(n, -1) @ theta.values.ravel()
    noise = noise_sd * rng.standard_normal(n) if noise_sd > 0 else np.zeros(n)
    return TraceRegressionDataset(
        designs=designs,
        responses=signal + noise,
        truth=theta.values,
        noise_sd=noise_sd,
    )


def gen_sparse_linear(
    p: int,
    s: int,
    snr: float,
    n: int,
    seed: SeedLike = None,
    noise_sd: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sparse linear analogue: returns (x, y, beta_star).

    beta* has s nonzero Uniform(-1,1) coordinates on a uniform support,
    scaled so ||beta*||^2 = snr (the design second moment is the identity);
    x has i.i.d. standard Gaussian rows and y = x beta* + eps.
    """
    if s > p:
        raise ValueError(f"need s <= p, got s={s}, p={p}")
    rng = _rng(seed)
    beta = np.zeros(p)
    if snr > 0 and s > 0:
        support = np.sort(rng.choice(p, size=s, replace=False))
        vals = _uniform_spectrum(rng, s)
        beta[support] = vals * np.sqrt(snr / float(vals @ vals))
    x = rng.standard_normal((n, p))
    noise = noise_sd * rng.standard_normal(n) if noise_sd > 0 else np.zeros(n)
    return x, x @ beta + noise, beta
