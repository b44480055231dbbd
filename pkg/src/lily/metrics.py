"""Identifiability scoring: mean correlation coefficient between true and
estimated latents, with the component permutation resolved by an exact
assignment."""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
from scipy.stats import rankdata

from .numerics import solve_assignment

METHODS = ("pearson", "spearman")


@dataclasses.dataclass(frozen=True)
class MccReport:
    """Absolute correlation matrix (true components by estimated components),
    the optimal assignment of estimated to true components, and the mean of
    the assigned entries. degenerate is set when a zero-variance column had
    its correlations defined as 0."""

    corr_matrix: np.ndarray
    assignment: np.ndarray
    mcc: float
    method: str
    degenerate: bool = False

    def to_json(self) -> dict:
        return {
            "mcc": float(self.mcc),
            "method": self.method,
            "assignment": [int(i) for i in self.assignment],
            "corr_matrix": [[float(v) for v in row] for row in self.corr_matrix],
        }


def _columns(name, a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-d (samples, components)")
    if a.shape[0] < 3:
        raise ValueError("need at least 3 samples per component")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def _abs_corr(zt, ze):
    """Rectangular |correlation| between column sets; zero-variance columns
    correlate as 0."""
    t = zt - zt.mean(axis=0)
    e = ze - ze.mean(axis=0)
    st = np.sqrt((t**2).sum(axis=0))
    se = np.sqrt((e**2).sum(axis=0))
    degenerate = bool(np.any(st == 0.0) or np.any(se == 0.0))
    denom = np.outer(st, se)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(t.T @ e) / denom
    corr[~np.isfinite(corr)] = 0.0
    return np.clip(corr, 0.0, 1.0), degenerate


def mcc(z_true, z_est, method: str = "pearson") -> MccReport:
    """Score how well z_est recovers z_true up to permutation, sign, and
    scale (pearson) or any strictly monotonic componentwise map (spearman).

    z_est may have more columns than z_true; the extra ones are assignable
    but unscored. The assignment maximizes the total absolute correlation
    (min-cost matching on 1 - |corr|) and mcc is the mean of the entries
    assigned to true components.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    zt = _columns("z_true", z_true)
    ze = _columns("z_est", z_est)
    if zt.shape[0] != ze.shape[0]:
        raise ValueError("z_true and z_est disagree on the sample count")
    n_true, n_est = zt.shape[1], ze.shape[1]
    if n_est < n_true:
        raise ValueError("z_est must have at least as many components as z_true")
    if method == "spearman":
        zt = rankdata(zt, axis=0)
        ze = rankdata(ze, axis=0)
    corr, degenerate = _abs_corr(zt, ze)
    if degenerate:
        warnings.warn(
            "zero-variance component: its correlations are defined as 0",
            RuntimeWarning,
            stacklevel=2,
        )
    padded = np.zeros((n_est, n_est))
    padded[:n_true] = corr
    perm = solve_assignment(1.0 - padded)
    assignment = perm[:n_true]
    score = float(np.mean(corr[np.arange(n_true), assignment]))
    return MccReport(corr, assignment, score, method, degenerate)
