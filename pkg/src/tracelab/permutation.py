"""Permutation machinery for testing the presence of a signal.

A permutation pi of [n] is decomposed into cycles in standard
representation (largest element first within each cycle, cycles ordered by
increasing first element).  Writing m(i) for the 1-based position of i in
its cycle, the indices split into

* A1: m(i) odd and m(i) != |cycle|,
* A2: m(i) even,
* A3: the remainder (at most one index per cycle).

Within A1 (and within A2) the pairs (x_i, y_pi(i)) involve pairwise
disjoint index pairs, which is what makes the permuted fits behave like
fits on pure noise.  The test statistic is the sum of squared fitted
values after refitting on permuted responses; the Monte Carlo p-value uses
the standard +1 correction and counts ties against rejection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import itertools
import math

import numpy as np

from .model import TraceRegressionDataset

__all__ = [
    "PermutationSpec",
    "PermutationTestReport",
    "decompose",
    "cycles_to_mapping",
    "in_pi_tilde",
    "sample_permutations",
    "test_statistic",
    "run_permutation_test",
    "exhaustive_pvalue",
]

# estimator contract: (dataset, permuted_responses) -> fitted values on the
# original designs.  The permutation enters only through the responses.
Estimator = Callable[[TraceRegressionDataset, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PermutationSpec:
    """A permutation of [n] with its cycle structure (1-based indices)."""

    mapping: np.ndarray  # mapping[i-1] = pi(i)
    cycles: tuple  # tuple of tuples, standard representation
    k: int  # number of cycles
    a1: frozenset
    a2: frozenset
    a3: frozenset

    @property
    def n(self) -> int:
        return len(self.mapping)

    def permute(self, values: np.ndarray) -> np.ndarray:
        """Reindex so entry i becomes values[pi(i)]."""
        return np.asarray(values)[self.mapping - 1]

    def is_identity(self) -> bool:
        return self.k == self.n


def decompose(mapping) -> PermutationSpec:
    """Cycle decomposition in standard representation with the A-sets."""
    mapping = np.asarray(mapping, dtype=int)
    n = len(mapping)
    if n == 0 or sorted(mapping.tolist()) != list(range(1, n + 1)):
        raise ValueError("mapping must be a bijection of {1, ..., n}")

    seen = np.zeros(n + 1, dtype=bool)
    cycles = []
    for start in range(1, n + 1):
        if seen[start]:
            continue
        cyc = [start]
        seen[start] = True
        nxt = int(mapping[start - 1])
        while nxt != start:
            cyc.append(nxt)
            seen[nxt] = True
            nxt = int(mapping[nxt - 1])
        top = cyc.index(max(cyc))  # rotate so the largest element leads
        cycles.append(tuple(cyc[top:] + cyc[:top]))
    cycles.sort(key=lambda c: c[0])

    a1, a2, a3 = set(), set(), set()
    for cyc in cycles:
        size = len(cyc)
        for pos, i in enumerate(cyc, start=1):
            if pos % 2 == 1 and pos != size:
                a1.add(i)
            elif pos % 2 == 0:
                a2.add(i)
            else:
                a3.add(i)
    return PermutationSpec(
        mapping=mapping,
        cycles=tuple(cycles),
        k=len(cycles),
        a1=frozenset(a1),
        a2=frozenset(a2),
        a3=frozenset(a3),
    )


def cycles_to_mapping(cycles: Sequence[Sequence[int]], n: int) -> np.ndarray:
    """Rebuild the mapping array from a cycle list (inverse of decompose)."""
    mapping = np.zeros(n, dtype=int)
    for cyc in cycles:
        for pos, i in enumerate(cyc):
            mapping[i - 1] = cyc[(pos + 1) % len(cyc)]
    if np.any(mapping == 0):
        raise ValueError("cycles do not cover {1, ..., n}")
    return mapping


def in_pi_tilde(spec: PermutationSpec, n: int) -> bool:
    """Whether the cycle count is at most log(n) squared (diagnostic only;
    sampled test permutations are never filtered by this)."""
    if n < 2:
        raise ValueError("need n >= 2")
    return spec.k <= math.log(n) ** 2


def sample_permutations(n: int, count: int, seed) -> list[PermutationSpec]:
    """Uniform distinct non-identity permutations of [n]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out: list[PermutationSpec] = []
    seen: set[tuple] = set()
    identity = tuple(range(1, n + 1))
    for _ in range(1000):
        perm = tuple(int(v) + 1 for v in rng.permutation(n))
        if perm == identity or perm in seen:
            continue
        seen.add(perm)
        out.append(decompose(np.array(perm)))
        if len(out) == count:
            return out
    raise RuntimeError(f"failed to sample {count} distinct permutations of [{n}]")


def test_statistic(fitted_values: np.ndarray) -> float:
    """Sum of squared fitted values."""
    fitted_values = np.asarray(fitted_values, dtype=float)
    return float(fitted_values @ fitted_values)


@dataclass(frozen=True)
class PermutationTestReport:
    lambda_id: float
    lambda_perms: tuple
    p_value: float
    n_perms: int
    alpha: float
    reject: bool

    def __post_init__(self):
        count = sum(1 for lam in self.lambda_perms if lam >= self.lambda_id)
        expected = (1 + count) / (self.n_perms + 1)
        if abs(self.p_value - expected) > 1e-12:
            raise ValueError("p_value inconsistent with the permutation statistics")
        if self.reject != (self.p_value <= self.alpha):
            raise ValueError("reject flag inconsistent with p_value and alpha")


def run_permutation_test(
    dataset: TraceRegressionDataset,
    estimator: Estimator,
    n_perms: int = 19,
    alpha: float = 0.05,
    seed=0,
) -> PermutationTestReport:
    """Monte Carlo permutation test of "no signal" against the estimator.

    The estimator is refit from scratch on (X_i, y_pi(i)) for the identity
    and for each sampled permutation; its only access to pi is through the
    permuted responses, which realizes the required equivariance by
    construction.
    """
    y = dataset.responses
    try:
        lam_id = test_statistic(estimator(dataset, y))
    except Exception as exc:
        raise RuntimeError("estimator failed on the identity permutation") from exc

    perms = sample_permutations(dataset.n, n_perms, seed)
    lam_perms = []
    for idx, spec in enumerate(perms):
        try:
            fitted = estimator(dataset, spec.permute(y))
        except Exception as exc:
            raise RuntimeError(f"estimator failed on permutation {idx}") from exc
        lam_perms.append(test_statistic(fitted))

    count = sum(1 for lam in lam_perms if lam >= lam_id)
    p_value = (1 + count) / (n_perms + 1)
    return PermutationTestReport(
        lambda_id=lam_id,
        lambda_perms=tuple(lam_perms),
        p_value=p_value,
        n_perms=n_perms,
        alpha=alpha,
        reject=p_value <= alpha,
    )


def exhaustive_pvalue(dataset: TraceRegressionDataset, estimator: Estimator) -> float:
    """p-value averaged over all n! permutations (test oracle, n <= 8)."""
    n = dataset.n
    if n > 8:
        raise ValueError("exhaustive enumeration limited to n <= 8")
    y = dataset.responses
    lam_id = test_statistic(estimator(dataset, y))
    count = 0
    total = 0
    for perm in itertools.permutations(range(n)):
        z = y[list(perm)]
        count += test_statistic(estimator(dataset, z)) >= lam_id
        total += 1
    return count / total
