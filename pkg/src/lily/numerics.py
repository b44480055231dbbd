"""Shared numerical primitives.

Rank/SVD testing, exact linear-sum-assignment, central finite differences,
and the seeded RNG contract used everywhere else. All computation is 64-bit.
Everything here is pure and re-entrant; random streams are value-owned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize

DEFAULT_RANK_RTOL = 1e-6


@dataclass(frozen=True)
class RankReport:
    """Singular-value summary of a rank test.

    singular_values are those of the row-normalized input (see
    rank_with_tolerance), sorted descending. ratio = smallest/largest.
    """

    singular_values: np.ndarray
    numeric_rank: int
    ratio: float


def _as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    return a


def rank_with_tolerance(m, rel_tol: float = DEFAULT_RANK_RTOL) -> RankReport:
    """Numeric rank of a matrix via SVD with a relative singular-value cut.

    Rows are L2-normalized first (zero rows stay zero) so the result is
    invariant under scaling any row by a nonzero constant — the audits stack
    rows of wildly different physical scales and only directions matter.
    numeric_rank counts singular values above rel_tol * largest.
    """
    a = _as_matrix(m)
    if not (0.0 < rel_tol < 1.0):
        raise ValueError(f"rel_tol must be in (0, 1), got {rel_tol}")
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    scale = np.where(norms > 0.0, norms, 1.0)
    sv = np.linalg.svd(a / scale, compute_uv=False)
    largest = sv[0] if sv.size else 0.0
    if largest == 0.0:
        rank = 0
        ratio = 0.0
    else:
        rank = int(np.sum(sv > rel_tol * largest))
        ratio = float(sv[-1] / largest)
    return RankReport(singular_values=sv, numeric_rank=rank, ratio=ratio)


def solve_assignment(cost) -> np.ndarray:
    """Exact minimum-cost assignment on a square cost matrix.

    Returns perm with perm[i] = column assigned to row i, minimizing the
    total cost over all permutations.
    """
    a = _as_matrix(cost)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"cost matrix must be square, got {a.shape}")
    rows, cols = scipy.optimize.linear_sum_assignment(a)
    perm = np.empty(a.shape[0], dtype=np.int64)
    perm[rows] = cols
    return perm


def finite_diff_grad(f, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function at x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        hi = f(x + e)
        lo = f(x - e)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite function value near coordinate {i}")
        g.flat[i] = (hi - lo) / (2.0 * h)
    return g


def seeded_rng(seed: int, *subkeys) -> np.random.Generator:
    """Deterministic 64-bit random stream for (seed, *subkeys).

    Same arguments give the same stream on every platform. Subkeys derive
    independent sub-streams (e.g. per segment, per block) from one root seed;
    strings are hashed to integers in a fixed way.
    """
    material = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in subkeys:
        if isinstance(k, str):
            material.append(int.from_bytes(k.encode("utf-8").ljust(8, b"\0")[:8], "little"))
        else:
            material.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(material))
