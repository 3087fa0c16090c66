"""Estimators for the trace regression model.

* ``fit_oracle_ls`` -- least squares on the reduced design built from a
  known right factor V*.
* ``fit_am`` -- rank-constrained least squares approximated by alternating
  minimization over the factors U and V, with multiple restarts (a spectral
  initializer plus nuclear-norm warm starts).
* ``fit_nn`` -- nuclear-norm regularized least squares by proximal gradient
  descent with singular-value soft-thresholding.
* ``fit_rank_oracle_exact`` -- near-global rank-constrained solver for tiny
  instances via saturating random restarts; used by the theory checks.
* ``fit_lasso`` / ``fit_l0`` -- sparse linear analogues (cyclic coordinate
  descent, exhaustive best-subset enumeration).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import scipy.linalg

from .model import (
    CoefficientMatrix,
    TraceRegressionDataset,
    reduced_matrix,
    unvec,
    vec,
)

__all__ = [
    "AmConfig",
    "NnConfig",
    "SparseConfig",
    "FitResult",
    "DEFAULT_RESTARTS",
    "svt",
    "rank_truncate",
    "spectral_init",
    "nn_lambda_max",
    "fit_oracle_ls",
    "fit_am",
    "fit_nn",
    "fit_rank_oracle_exact",
    "fit_lasso",
    "fit_l0",
]

# Warm-start nuclear-norm solves only seed the alternating minimization,
# so they run with a loose tolerance and a small iteration cap.
_WARMSTART_MAX_ITERS = 60
_WARMSTART_TOL = 1e-5

# Relative slack for objective-monotonicity bookkeeping (floating point).
_MONOTONE_SLACK = 1e-9

# lambda multipliers for the nuclear-norm warm starts; the largest one is
# the provable threshold above which the zero matrix is optimal.
DEFAULT_RESTARTS: tuple = (
    "spectral",
    ("nn", 1.0),
    ("nn", 10 ** -0.5),
    ("nn", 10 ** -1.0),
    ("nn", 10 ** -1.5),
    ("nn", 10 ** -2.0),
)

RestartSpec = Union[str, tuple, np.ndarray]


@dataclass
class AmConfig:
    """Settings for the alternating-minimization solver."""

    rank: int
    max_outer_iters: int = 500
    rel_obj_tol: float = 1e-8
    restarts: Sequence[RestartSpec] = DEFAULT_RESTARTS
    seed: int = 0  # only consumed by ("random", j) restart descriptors

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.rel_obj_tol <= 0:
            raise ValueError("rel_obj_tol must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")


@dataclass
class NnConfig:
    """Settings for the nuclear-norm proximal-gradient solver."""

    lam: float
    max_iters: int = 2000
    grad_tol: float = 1e-8
    step_rule: str = "backtracking"  # or "fixed"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class SparseConfig:
    """Sparse linear settings: L0 sparsity or lasso penalty, in dimension p."""

    p: int
    sparsity: Optional[int] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.sparsity is not None and not (0 <= self.sparsity <= self.p):
            raise ValueError(f"need 0 <= sparsity <= p, got {self.sparsity}")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be nonnegative")


@dataclass
class FitResult:
    estimate: CoefficientMatrix
    objective: float
    iterations: int
    converged: bool
    restart_index: Optional[int] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.objective < 0:
            raise ValueError("objective must be nonnegative")


# ---------------------------------------------------------------------------
# Linear-algebra helpers
# ---------------------------------------------------------------------------

def _solve_ls(a: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares solve, minimum-norm on rank deficiency.

    Normal equations with Cholesky on the well-conditioned fast path;
    LAPACK lstsq as the fallback.  Never raises for singular systems.
    """
    gram = a.T @ a
    rhs = a.T @ y
    try:
        sol = scipy.linalg.cho_solve(
            scipy.linalg.cho_factor(gram, check_finite=False), rhs, check_finite=False
        )
        if np.all(np.isfinite(sol)):
            return sol
    except scipy.linalg.LinAlgError:
        pass
    return scipy.linalg.lstsq(a, y, lapack_driver="gelsd", check_finite=False)[0]


def svt(m: np.ndarray, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding, the prox of tau * nuclear norm."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return np.array(m, dtype=float)
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    return (u * s) @ vt


def rank_truncate(m: np.ndarray, r: int) -> np.ndarray:
    """Best rank-r approximation in Frobenius norm."""
    u, s, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
    return (u[:, :r] * s[:r]) @ vt[:r]


def _right_factor(m: np.ndarray, r: int) -> np.ndarray:
    """Top-r right singular vectors as a d2 x r matrix."""
    _, _, vt = np.linalg.svd(np.asarray(m, dtype=float), full_matrices=False)
    return vt[:r].T.copy()


def nuclear_norm(m: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def nn_lambda_max(dataset: TraceRegressionDataset) -> float:
    """Smallest penalty at which the zero matrix solves the nuclear-norm
    problem: 2 * ||(1/n) * sum_i y_i X_i||_op."""
    m = _moment_matrix(dataset)
    if not np.any(m):
        return 0.0
    return 2.0 * float(np.linalg.svd(m, compute_uv=False)[0])


def _moment_matrix(dataset: TraceRegressionDataset) -> np.ndarray:
    d1, d2 = dataset.shape
    return unvec(dataset.vecs.T @ dataset.responses / dataset.n, d1, d2)


# ---------------------------------------------------------------------------
# Oracle least squares on a known right factor
# ---------------------------------------------------------------------------

def fit_oracle_ls(dataset: TraceRegressionDataset, v_star: np.ndarray) -> FitResult:
    """Least squares for U in Theta = U V*^T with V* known.

    The fitted values are the orthogonal projection of y onto the column
    space of the reduced design; rank deficiency falls back to the
    minimum-norm solution and is flagged in the diagnostics.
    """
    v_star = np.asarray(v_star, dtype=float)
    if v_star.ndim == 1:
        v_star = v_star[:, None]
    d1, d2 = dataset.shape
    if v_star.shape[0] != d2:
        raise ValueError(f"v_star must have {d2} rows, got {v_star.shape}")
    r = v_star.shape[1]
    xv = reduced_matrix(dataset.designs, v_star)
    gamma, _, rank, _ = np.linalg.lstsq(xv, dataset.responses, rcond=None)
    resid = dataset.responses - xv @ gamma
    theta = unvec(gamma, d1, r) @ v_star.T
    return FitResult(
        estimate=CoefficientMatrix(theta, declared_rank=r),
        objective=float(resid @ resid),
        iterations=0,
        converged=True,
        diagnostics={"design_rank": int(rank), "full_rank": rank == xv.shape[1]},
    )


# ---------------------------------------------------------------------------
# Alternating minimization for the rank constraint
# ---------------------------------------------------------------------------

def spectral_init(dataset: TraceRegressionDataset, rank: int) -> CoefficientMatrix:
    """Best rank-r truncation of the moment matrix (1/n) sum_i y_i X_i."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return CoefficientMatrix(
        rank_truncate(_moment_matrix(dataset), rank), declared_rank=rank
    )


def _am_single(dataset, rank, v0, max_iters, tol):
    """One alternating-minimization run from a fixed right-factor init.

    Returns (theta, objective, iterations, converged, monotone_violations).
    Both block updates are exact least squares, so the objective cannot
    increase; violations beyond floating-point slack are counted.
    """
    designs = dataset.designs
    designs_t = dataset.designs_t
    y = dataset.responses
    d1, d2 = dataset.shape
    prev = float(y @ y)  # objective at U = 0, feasible for every V
    u_mat = np.zeros((d1, rank))
    v_mat = np.asarray(v0, dtype=float)
    violations = 0
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        xv = reduced_matrix(designs, v_mat)
        gamma_u = _solve_ls(xv, y)
        resid = y - xv @ gamma_u
        obj_u = float(resid @ resid)
        u_mat = unvec(gamma_u, d1, rank)

        xu = reduced_matrix(designs_t, u_mat)
        gamma_v = _solve_ls(xu, y)
        resid = y - xu @ gamma_v
        obj_v = float(resid @ resid)
        v_mat = unvec(gamma_v, d2, rank)

        slack = _MONOTONE_SLACK * max(1.0, prev)
        if obj_u > prev + slack or obj_v > obj_u + slack:
            violations += 1
        if prev - obj_v <= tol * max(prev, 1e-300):
            prev = min(prev, obj_v)
            converged = True
            break
        prev = obj_v
    return u_mat @ v_mat.T, prev, iters, converged, violations


def _resolve_inits(dataset, config):
    """Turn restart descriptors into concrete d2 x r right-factor inits."""
    d1, d2 = dataset.shape
    r = config.rank
    nn_fracs = sorted(
        (spec[1] for spec in config.restarts if isinstance(spec, tuple) and spec[0] == "nn"),
        reverse=True,
    )
    nn_inits = {}
    if nn_fracs:
        lam_max = nn_lambda_max(dataset)
        theta_prev = None
        for frac in nn_fracs:  # descending lambda; warm-start down the grid
            res = fit_nn(
                dataset,
                NnConfig(lam=frac * lam_max, max_iters=_WARMSTART_MAX_ITERS,
                         grad_tol=_WARMSTART_TOL),
                theta0=theta_prev,
            )
            theta_prev = res.estimate.values
            nn_inits[frac] = _right_factor(rank_truncate(theta_prev, r), r)

    rng = np.random.default_rng(config.seed)
    inits = []
    for spec in config.restarts:
        if isinstance(spec, str) and spec == "spectral":
            inits.append(_right_factor(spectral_init(dataset, r).values, r))
        elif isinstance(spec, tuple) and spec[0] == "nn":
            inits.append(nn_inits[spec[1]])
        elif isinstance(spec, tuple) and spec[0] == "random":
            inits.append(rng.standard_normal((d2, r)))
        elif isinstance(spec, np.ndarray):
            if spec.shape == (d2, r):
                inits.append(np.asarray(spec, dtype=float))
            elif spec.shape == (d1, d2):
                inits.append(_right_factor(rank_truncate(spec, r), r))
            else:
                raise ValueError(f"array restart has unusable shape {spec.shape}")
        else:
            raise ValueError(f"unknown restart descriptor {spec!r}")
    return inits


def fit_am(dataset: TraceRegressionDataset, config: AmConfig) -> FitResult:
    """Rank-constrained least squares via alternating minimization.

    Each restart alternates exact least-squares updates of the two factors
    (for fixed V the problem is linear in U through the reduced design, and
    symmetrically for V through the transposed designs) until the relative
    objective decrease drops below ``rel_obj_tol``.  The restart with the
    smallest residual sum of squares wins; ties keep the earliest restart.
    """
    d1, d2 = dataset.shape
    if config.rank > min(d1, d2):
        raise ValueError(f"rank {config.rank} exceeds min(d1, d2) = {min(d1, d2)}")
    best = None
    objectives = []
    total_violations = 0
    for idx, v0 in enumerate(_resolve_inits(dataset, config)):
        theta, obj, iters, conv, viol = _am_single(
            dataset, config.rank, v0, config.max_outer_iters, config.rel_obj_tol
        )
        objectives.append(obj)
        total_violations += viol
        if best is None or obj < best[1]:
            best = (theta, obj, iters, conv, idx)
    theta, obj, iters, conv, idx = best
    return FitResult(
        estimate=CoefficientMatrix(theta, declared_rank=config.rank),
        objective=obj,
        iterations=iters,
        converged=conv,
        restart_index=idx,
        diagnostics={
            "restart_objectives": objectives,
            "monotone_violations": total_violations,
        },
    )


# ---------------------------------------------------------------------------
# Nuclear-norm regularization
# ---------------------------------------------------------------------------

def fit_nn(
    dataset: TraceRegressionDataset,
    config: NnConfig,
    theta0: Optional[np.ndarray] = None,
) -> FitResult:
    """Minimize (1/n) sum_i (y_i - <X_i, Theta>)^2 + lam * ||Theta||_nuclear.

    Proximal gradient descent: a gradient step on the smooth part followed
    by singular-value soft-thresholding at (step * lam).  Backtracking
    halves the step until the quadratic upper bound holds, which makes the
    objective nonincreasing; convergence is declared when the norm of the
    proximal-gradient mapping falls below ``grad_tol``.
    """
    vecs = dataset.vecs
    y = dataset.responses
    n = dataset.n
    d1, d2 = dataset.shape
    lam = config.lam
    theta = np.zeros((d1, d2)) if theta0 is None else np.array(theta0, dtype=float)

    if config.step_rule == "fixed":
        smax = np.linalg.svd(vecs, compute_uv=False)[0]
        step = n / (2.0 * smax**2)  # 1/L for the smooth part
    else:
        step = 1.0

    def smooth(th_vec):
        r = vecs @ th_vec - y
        return float(r @ r) / n, r

    th_vec = vec(theta)
    fval, resid = smooth(th_vec)
    converged = False
    violations = 0
    iters = 0
    for iters in range(1, config.max_iters + 1):
        grad = (2.0 / n) * (vecs.T @ resid)
        while True:
            cand = svt(unvec(th_vec - step * grad, d1, d2), step * lam)
            cand_vec = vec(cand)
            delta = cand_vec - th_vec
            fcand, rcand = smooth(cand_vec)
            if config.step_rule == "fixed":
                break
            bound = fval + float(grad @ delta) + float(delta @ delta) / (2.0 * step)
            if fcand <= bound + 1e-12 * max(1.0, abs(bound)):
                break
            step *= 0.5
            if step < 1e-16:
                break
        move = float(np.linalg.norm(delta)) / step
        full_prev = fval + lam * nuclear_norm(unvec(th_vec, d1, d2))
        full_new = fcand + lam * nuclear_norm(cand)
        if full_new > full_prev + _MONOTONE_SLACK * max(1.0, full_prev):
            violations += 1
        th_vec, fval, resid = cand_vec, fcand, rcand
        if move < config.grad_tol:
            converged = True
            break

    theta = unvec(th_vec, d1, d2)
    objective = fval + lam * nuclear_norm(theta)
    return FitResult(
        estimate=CoefficientMatrix(theta),
        objective=objective,
        iterations=iters,
        converged=converged,
        diagnostics={"final_step": step, "monotone_violations": violations},
    )


def nn_stationarity_residual(
    dataset: TraceRegressionDataset, theta: np.ndarray, lam: float
) -> float:
    """Frobenius norm of grad + lam * G for the best admissible subgradient G.

    G is assembled from the SVD of theta: U_k V_k^T on the positive singular
    subspace, and the (operator-norm-clipped) scaled gradient on the
    complement.  Zero at an exact stationary point of the nuclear-norm
    objective.
    """
    vecs = dataset.vecs
    n = dataset.n
    d1, d2 = dataset.shape
    grad = unvec((2.0 / n) * (vecs.T @ (vecs @ vec(theta) - dataset.responses)), d1, d2)
    if lam == 0:
        return float(np.linalg.norm(grad))
    u, s, vt = np.linalg.svd(theta, full_matrices=True)
    k = int(np.sum(s > max(s[0] if s.size else 0.0, 1.0) * 1e-12))
    g_support = u[:, :k] @ vt[:k]
    # off-support block of -grad/lam in the singular bases, clipped to op-norm 1
    core = -(u.T @ grad @ vt.T) / lam
    off = core[k:, k:]
    if off.size:
        uo, so, vo = np.linalg.svd(off, full_matrices=False)
        off = (uo * np.minimum(so, 1.0)) @ vo
    g_off = u[:, k:] @ off @ vt[k:]
    return float(np.linalg.norm(grad + lam * (g_support + g_off)))


# ---------------------------------------------------------------------------
# Near-global solver for tiny instances
# ---------------------------------------------------------------------------

def fit_rank_oracle_exact(
    dataset: TraceRegressionDataset,
    rank: int,
    n_restarts: int = 200,
    seed: int = 0,
) -> FitResult:
    """Near-global rank-constrained least squares, desk scale only.

    Runs alternating minimization from ``n_restarts`` random right factors
    plus the spectral initializer and keeps the best objective.  The
    ``saturated`` diagnostic reports whether the best objective was already
    attained within the first half of the restarts (relative 1e-6), the
    practical certificate that more restarts would not improve it.
    """
    d1, d2 = dataset.shape
    if d1 * d2 > 16 or dataset.n > 30:
        raise ValueError(
            f"exact oracle limited to d1*d2 <= 16 and n <= 30, got {d1}x{d2}, n={dataset.n}"
        )
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    rng = np.random.default_rng(seed)
    inits = [_right_factor(spectral_init(dataset, rank).values, rank)]
    inits += [rng.standard_normal((d2, rank)) for _ in range(n_restarts)]

    best = None
    best_at_half = None
    half = 1 + n_restarts // 2
    for idx, v0 in enumerate(inits):
        theta, obj, iters, conv, _ = _am_single(dataset, rank, v0, 1000, 1e-12)
        if best is None or obj < best[1]:
            best = (theta, obj, iters, conv, idx)
        if idx + 1 == half:
            best_at_half = best[1]
    theta, obj, iters, conv, idx = best
    saturated = best_at_half is not None and (
        best_at_half - obj <= 1e-6 * max(best_at_half, 1e-300)
    )
    return FitResult(
        estimate=CoefficientMatrix(theta, declared_rank=rank),
        objective=obj,
        iterations=iters,
        converged=conv,
        restart_index=idx,
        diagnostics={"saturated": saturated, "n_restarts": n_restarts},
    )


# ---------------------------------------------------------------------------
# Sparse linear analogues
# ---------------------------------------------------------------------------

def fit_lasso(x: np.ndarray, y: np.ndarray, config: SparseConfig) -> np.ndarray:
    """Lasso by cyclic coordinate descent on (1/n)||y - x b||^2 + lam ||b||_1.

    Iterates until the maximum KKT violation is at most 1e-8.  With lam = 0
    this is ordinary (minimum-norm) least squares.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if config.lam is None:
        raise ValueError("lasso requires config.lam")
    lam = config.lam
    n, p = x.shape
    if p != config.p:
        raise ValueError(f"x has {p} columns but config.p = {config.p}")
    if lam == 0:
        return np.linalg.lstsq(x, y, rcond=None)[0]

    norm_cols = np.sum(x**2, axis=0)
    beta = np.zeros(p)
    resid = y.copy()
    thresh = n * lam / 2.0
    for _ in range(100_000):
        for j in range(p):
            if norm_cols[j] == 0.0:
                continue
            old = beta[j]
            if old != 0.0:
                resid += old * x[:, j]
            z = x[:, j] @ resid
            new = np.sign(z) * max(abs(z) - thresh, 0.0) / norm_cols[j]
            beta[j] = new
            if new != 0.0:
                resid -= new * x[:, j]
        corr = (2.0 / n) * (x.T @ resid)
        on = beta != 0.0
        viol = 0.0
        if np.any(on):
            viol = np.max(np.abs(corr[on] - lam * np.sign(beta[on])))
        if np.any(~on):
            viol = max(viol, np.max(np.maximum(np.abs(corr[~on]) - lam, 0.0)))
        if viol <= 1e-8:
            break
    return beta


def fit_l0(x: np.ndarray, y: np.ndarray, config: SparseConfig) -> np.ndarray:
    """Best subset selection by exhaustive support enumeration.

    Enumerates every support of size <= sparsity in lexicographic order
    (sizes ascending) and keeps the first global minimizer, so ties break
    toward the lexicographically smallest support.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if config.sparsity is None:
        raise ValueError("L0 requires config.sparsity")
    s = config.sparsity
    n, p = x.shape
    if p != config.p:
        raise ValueError(f"x has {p} columns but config.p = {config.p}")
    if p > 30 or s > 3:
        raise ValueError(f"exhaustive enumeration limited to p <= 30, s <= 3, got p={p}, s={s}")

    best_obj = float(y @ y)  # empty support
    best_beta = np.zeros(p)
    for size in range(1, s + 1):
        for support in itertools.combinations(range(p), size):
            cols = x[:, support]
            coef = np.linalg.lstsq(cols, y, rcond=None)[0]
            r = y - cols @ coef
            obj = float(r @ r)
            if obj < best_obj:
                best_obj = obj
                best_beta = np.zeros(p)
                best_beta[list(support)] = coef
    return best_beta
