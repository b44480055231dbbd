"""Numerical identifiability audits of latent-process density families.

Identifiability of the latent process is guaranteed when certain derivative
vectors of the log conditional densities eta_k = log p(z_{k,t} | history) are
linearly independent as functions. This module computes those derivatives
(analytically for the built-in families, by Richardson-extrapolated finite
differences for custom ones), assembles the function vectors, and tests their
linear independence as the row rank of their evaluations over sampled points.

The audited vectors per component k:
  v_k     = d/d hist of (d eta_k / d z_k)      (cross second derivatives)
  v̊_k     = d/d hist of (d^2 eta_k / d z_k^2)  (cross third derivatives)
and, for multi-context audits over contexts u_1..u_m,
  s_k  = (v_k(u_1), ..., v_k(u_m), Delta2_2, ..., Delta2_m)
  s̊_k  = (v̊_k(u_1), ..., v̊_k(u_m), Delta_2,  ..., Delta_m)
with Delta_i / Delta2_i the first/second z_k-derivative differences between
consecutive contexts.

Evaluation points are sampled from each family's own stationary trajectory
(after burn-in), not from an arbitrary cube: the theory quantifies over values
the process actually takes. Per sampled point, the conditioning grid holds
8n history draws from other trajectory rows.

Histories are the concatenated lag window (most recent first), so v/v̊ have
length n*lag; the theory is stated for lag 1 and concatenation is the lift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln

from .datagen import (
    DIVERGENCE_GUARD,
    LatentProcessSpec,
    changing_transition_fns,
    coupling_fns,
    draw_parameters,
    fixed_transition_fns,
    sample_generalized_normal,
)
from .numerics import RankReport, rank_with_tolerance, seeded_rng

COND_GRID_PER_POINT = 8  # conditioning draws per point, times n
AUDIT_BURN_IN = 100
# Central-difference steps balance truncation against roundoff per derivative
# order: cancellation noise grows like eps/h for first derivatives, eps/h^2
# for second, and another 1/h for each nesting level, so higher orders need
# wider steps.
FD_STEP = 1e-3
FD_STEP_D2 = 1e-2
FD_STEP_RING = 1e-2
VERDICTS = ("identifiable", "unidentifiable", "inconclusive")


# ---------------------------------------------------------------------------
# density families


class DensityFamily:
    """One conditional density model p(z_{k,t} | history) per component.

    Subclasses provide `bundle_all` (derivatives of every component's log
    density at a point) and `sample_path` (a trajectory of the family's own
    generative process, used to draw audit points).
    """

    kind = "abstract"
    n = 0
    hist_dim = 0

    def bundle_all(self, z_t, z_hist):
        """(d1, d2, v, v_ring) arrays over all components: shapes (n,), (n,),
        (n, hist_dim), (n, hist_dim)."""
        raise NotImplementedError

    def sample_path(self, rng, steps):
        raise NotImplementedError

    @property
    def lag(self):
        return max(1, self.hist_dim // max(self.n, 1))

    def _init_window(self, rng):
        return rng.standard_normal((self.lag, self.n))


def _check_sigma(sigma):
    if sigma <= 0:
        raise ValueError("audits need noise_sigma > 0 (log density undefined otherwise)")


def _guarded(z, t):
    if not np.all(np.isfinite(z[t])) or np.max(np.abs(z[t])) > DIVERGENCE_GUARD:
        raise RuntimeError(f"audit trajectory diverged at step {t}")


def _hist(z, t, lag):
    return np.concatenate([z[t - 1 - i] for i in range(lag)])


class GaussianAdditiveFamily(DensityFamily):
    """z_{k,t} = q_k(history) + eps, eps ~ N(0, sigma^2)."""

    kind = "gaussian_additive"

    def __init__(self, q, q_jac, sigma, n, lag=1):
        _check_sigma(sigma)
        self.q, self.q_jac, self.sigma = q, q_jac, float(sigma)
        self.n, self.hist_dim = int(n), int(n) * int(lag)

    def eta(self, k, z_k, z_hist):
        r = z_k - self.q(z_hist)[k]
        return -0.5 * math.log(2 * math.pi * self.sigma**2) - r**2 / (2 * self.sigma**2)

    def bundle_all(self, z_t, z_hist):
        s2 = self.sigma**2
        r = np.asarray(z_t) - self.q(z_hist)
        jac = np.atleast_2d(self.q_jac(z_hist))
        return -r / s2, np.full(self.n, -1.0 / s2), jac / s2, np.zeros((self.n, self.hist_dim))

    def sample_path(self, rng, steps):
        z = np.zeros((self.lag + steps, self.n))
        z[: self.lag] = self._init_window(rng)
        for t in range(self.lag, self.lag + steps):
            z[t] = self.q(_hist(z, t, self.lag)) + self.sigma * rng.standard_normal(self.n)
            _guarded(z, t)
        return z[self.lag :]


class HeteroskedasticFamily(DensityFamily):
    """z_{k,t} = q_k(history) + eps / b_k(history), eps ~ N(0, sigma^2);
    b must be strictly positive wherever the audit evaluates."""

    kind = "heteroskedastic"

    def __init__(self, q, q_jac, b, b_jac, sigma, n, lag=1):
        _check_sigma(sigma)
        self.q, self.q_jac, self.b, self.b_jac = q, q_jac, b, b_jac
        self.sigma = float(sigma)
        self.n, self.hist_dim = int(n), int(n) * int(lag)

    def _scales(self, z_hist):
        bv = np.asarray(self.b(z_hist), dtype=np.float64)
        if np.any(bv <= 0.0) or not np.all(np.isfinite(bv)):
            raise FloatingPointError("noise scale b <= 0 at an audited point")
        return bv

    def eta(self, k, z_k, z_hist):
        bv = self._scales(z_hist)[k]
        r = z_k - self.q(z_hist)[k]
        return (
            -0.5 * math.log(2 * math.pi * self.sigma**2)
            + math.log(bv)
            - bv**2 * r**2 / (2 * self.sigma**2)
        )

    def bundle_all(self, z_t, z_hist):
        s2 = self.sigma**2
        bv = self._scales(z_hist)
        bj = np.atleast_2d(self.b_jac(z_hist))
        r = np.asarray(z_t) - self.q(z_hist)
        qj = np.atleast_2d(self.q_jac(z_hist))
        d1 = -(bv**2) * r / s2
        d2 = -(bv**2) / s2
        v = (-2.0 * (bv * r)[:, None] * bj + (bv**2)[:, None] * qj) / s2
        v_ring = -2.0 * bv[:, None] * bj / s2
        return d1, d2, v, v_ring

    def sample_path(self, rng, steps):
        z = np.zeros((self.lag + steps, self.n))
        z[: self.lag] = self._init_window(rng)
        for t in range(self.lag, self.lag + steps):
            h = _hist(z, t, self.lag)
            z[t] = self.q(h) + self.sigma * rng.standard_normal(self.n) / self._scales(h)
            _guarded(z, t)
        return z[self.lag :]


class GeneralizedNormalLinearFamily(DensityFamily):
    """z_{k,t} = a_k . history + eps, p(eps) proportional to exp(-lam |eps|^beta)."""

    kind = "generalized_normal_linear"

    def __init__(self, A, lam, beta):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.lam, self.beta = float(lam), float(beta)
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.beta < 2:
            raise ValueError("beta must be >= 2")
        self.n = self.A.shape[0]
        self.hist_dim = self.A.shape[1]
        if self.hist_dim % self.n:
            raise ValueError("A columns must be a multiple of n (stacked lags)")
        # log normalizer of the generalized normal
        self.log_c = (
            math.log(self.beta / 2.0)
            + math.log(self.lam) / self.beta
            - gammaln(1.0 / self.beta)
        )

    def eta(self, k, z_k, z_hist):
        e = z_k - self.A[k] @ z_hist
        return self.log_c - self.lam * abs(e) ** self.beta

    def bundle_all(self, z_t, z_hist):
        lam, beta = self.lam, self.beta
        e = np.asarray(z_t) - self.A @ z_hist
        ae, sg = np.abs(e), np.sign(e)
        if beta < 3 and np.any(ae == 0.0):
            raise FloatingPointError("derivative undefined at a zero residual for beta < 3")
        d1 = -lam * beta * ae ** (beta - 1) * sg
        d2 = -lam * beta * (beta - 1) * ae ** (beta - 2)
        v = (lam * beta * (beta - 1) * ae ** (beta - 2))[:, None] * self.A
        if beta == 2.0:
            v_ring = np.zeros_like(self.A)  # the (beta - 2) factor is exactly zero
        else:
            coef = lam * beta * (beta - 1) * (beta - 2) * sg * ae ** (beta - 3)
            v_ring = coef[:, None] * self.A
        return d1, d2, v, v_ring

    def sample_path(self, rng, steps):
        z = np.zeros((self.lag + steps, self.n))
        z[: self.lag] = self._init_window(rng)
        for t in range(self.lag, self.lag + steps):
            eps = sample_generalized_normal(rng, self.lam, self.beta, self.n)
            z[t] = self.A @ _hist(z, t, self.lag) + eps
            _guarded(z, t)
        return z[self.lag :]


class IidMarginalFamily(DensityFamily):
    """History-free Gaussian marginals z_{k,t} ~ N(mean_k, var_k); the v/v̊
    blocks are exactly zero. Also serves as one context of an
    observation-change audit."""

    kind = "iid_marginal"
    history_free = True

    def __init__(self, mean, var, lag=1):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.var = np.atleast_1d(np.asarray(var, dtype=np.float64))
        if np.any(self.var <= 0):
            raise ValueError("variances must be positive")
        self.n = self.mean.shape[0]
        self.hist_dim = self.n * int(lag)

    def eta(self, k, z_k, z_hist):
        return (
            -0.5 * math.log(2 * math.pi * self.var[k])
            - (z_k - self.mean[k]) ** 2 / (2 * self.var[k])
        )

    def bundle_all(self, z_t, z_hist):
        d1 = -(np.asarray(z_t) - self.mean) / self.var
        d2 = -1.0 / self.var
        zeros = np.zeros((self.n, self.hist_dim))
        return d1, d2, zeros, zeros.copy()

    def sample_path(self, rng, steps):
        return self.mean + np.sqrt(self.var) * rng.standard_normal((steps, self.n))


def _rich_d1(f, x, h=FD_STEP):
    def central(step):
        return (f(x + step) - f(x - step)) / (2 * step)

    return (4.0 * central(h / 2) - central(h)) / 3.0


def _rich_d2(f, x, h=FD_STEP):
    f0 = f(x)

    def second(step):
        return (f(x + step) - 2 * f0 + f(x - step)) / step**2

    return (4.0 * second(h / 2) - second(h)) / 3.0


def _rich_jac(f, x0, h=FD_STEP):
    """Richardson central-difference Jacobian of a vector function, (n, d)."""
    x0 = np.asarray(x0, dtype=np.float64)
    cols = []
    for l in range(x0.size):
        e = np.zeros_like(x0)
        e[l] = 1.0

        def central(step):
            return (np.asarray(f(x0 + step * e)) - np.asarray(f(x0 - step * e))) / (2 * step)

        cols.append((4.0 * central(h / 2) - central(h)) / 3.0)
    return np.stack(cols, axis=1)


class CustomFamily(DensityFamily):
    """Plugin kind: the caller supplies eta(k, z_k, z_hist) -> log density.
    Derivatives come from Richardson-extrapolated central differences with
    order-matched step sizes; normalization is checkable by quadrature."""

    kind = "custom"

    def __init__(self, eta, n, hist_dim, sample_path=None):
        self._eta = eta
        self.n, self.hist_dim = int(n), int(hist_dim)
        self._sampler = sample_path

    def eta(self, k, z_k, z_hist):
        val = float(self._eta(k, z_k, z_hist))
        if not np.isfinite(val):
            raise FloatingPointError(
                f"log density not finite at component {k} (density zero?)"
            )
        return val

    def check_normalization(self, k, z_hist, tol=1e-4):
        """Quadrature check that exp(eta) integrates to 1 in z_k."""
        total, _ = quad(lambda z: math.exp(self._eta(k, z, z_hist)), -np.inf, np.inf)
        if abs(total - 1.0) > tol:
            raise ValueError(
                f"density of component {k} integrates to {total:.6f}, not 1"
            )
        return total

    def bundle_all(self, z_t, z_hist):
        z_t = np.asarray(z_t, dtype=np.float64)
        z_hist = np.asarray(z_hist, dtype=np.float64)
        d1 = np.empty(self.n)
        d2 = np.empty(self.n)
        v = np.empty((self.n, self.hist_dim))
        v_ring = np.empty((self.n, self.hist_dim))
        for k in range(self.n):
            d1[k] = _rich_d1(lambda z: self.eta(k, z, z_hist), z_t[k])
            d2[k] = _rich_d2(lambda z: self.eta(k, z, z_hist), z_t[k], h=FD_STEP_D2)
            v[k] = _rich_jac(
                lambda h: np.array([_rich_d1(lambda z: self.eta(k, z, h), z_t[k])]),
                z_hist,
            )[0]
            v_ring[k] = _rich_jac(
                lambda h: np.array(
                    [_rich_d2(lambda z: self.eta(k, z, h), z_t[k], h=FD_STEP_D2)]
                ),
                z_hist,
                h=FD_STEP_RING,
            )[0]
        return d1, d2, v, v_ring

    def sample_path(self, rng, steps):
        if self._sampler is None:
            raise ValueError("custom family has no sample_path; audits need one")
        return np.asarray(self._sampler(rng, steps), dtype=np.float64)


# ---------------------------------------------------------------------------
# derivative bundles


@dataclass
class DerivativeBundle:
    """Derivatives of one component's log conditional density at one point.

    d1, d2 are the first/second derivatives in z_k; v and v_ring the cross
    second/third derivatives in the history. For multi-context evaluations,
    per_context holds one bundle per context and delta/delta2 the consecutive
    first/second-derivative differences; s and s_ring assemble the full
    multi-context function vectors.
    """

    d1: float
    d2: float
    v: np.ndarray
    v_ring: np.ndarray
    per_context: list | None = None
    delta: np.ndarray | None = None
    delta2: np.ndarray | None = None

    @property
    def s(self):
        if self.per_context is None:
            return self.v
        return np.concatenate([b.v for b in self.per_context] + [self.delta2])

    @property
    def s_ring(self):
        if self.per_context is None:
            return self.v_ring
        return np.concatenate([b.v_ring for b in self.per_context] + [self.delta])


def derivatives_at(family, k, z_t, z_hist, context=None):
    """DerivativeBundle of component k at (z_t, z_hist).

    family may be a single DensityFamily or a per-context sequence; in the
    latter case `context` picks one (and context=None returns the bundle
    under every context, with delta/delta2 filled in).
    """
    if isinstance(family, (list, tuple)):
        if context is not None:
            family = family[context]
        else:
            bundles = [derivatives_at(f, k, z_t, z_hist) for f in family]
            d1s = np.array([b.d1 for b in bundles])
            d2s = np.array([b.d2 for b in bundles])
            first = bundles[0]
            return DerivativeBundle(
                first.d1,
                first.d2,
                first.v,
                first.v_ring,
                per_context=bundles,
                delta=np.diff(d1s),
                delta2=np.diff(d2s),
            )
    z_t = np.atleast_1d(np.asarray(z_t, dtype=np.float64))
    z_hist = np.asarray(z_hist, dtype=np.float64)
    if not 0 <= k < family.n:
        raise ValueError(f"component {k} out of range for n={family.n}")
    if z_t.shape != (family.n,):
        raise ValueError(f"z_t must have length {family.n}")
    if z_hist.shape != (family.hist_dim,):
        raise ValueError(f"z_hist must have length {family.hist_dim}")
    d1, d2, v, v_ring = family.bundle_all(z_t, z_hist)
    bundle = DerivativeBundle(float(d1[k]), float(d2[k]), v[k], v_ring[k])
    for val in (bundle.d1, bundle.d2):
        if not np.isfinite(val):
            raise FloatingPointError("non-finite derivative at the audited point")
    if not (np.all(np.isfinite(bundle.v)) and np.all(np.isfinite(bundle.v_ring))):
        raise FloatingPointError("non-finite derivative at the audited point")
    return bundle


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of one linear-independence audit.

    stacked_matrix has 2n rows (one per function vector); its columns are the
    vectors' evaluations over the sampled points and conditioning grids,
    concatenated across contexts where applicable. verdict follows:
    identifiable iff numeric rank = 2n; unidentifiable iff a row is exactly
    zero or the deficiency reproduces across 3 independent point sets;
    inconclusive otherwise.
    """

    theorem: str
    stacked_matrix: np.ndarray
    rank_report: RankReport
    verdict: str
    eval_points: dict
    num_points: int
    seed: int

    def to_json(self) -> dict:
        return {
            "theorem": self.theorem,
            "verdict": self.verdict,
            "singular_values": [float(s) for s in self.rank_report.singular_values],
            "rank": int(self.rank_report.numeric_rank),
            "num_points": int(self.num_points),
            "seed": int(self.seed),
        }


def _finish(theorem, num_points, seed, build):
    """Shared verdict procedure: rank the stacked matrix; exact zero rows are
    structural failures; other deficiencies must reproduce on fresh points
    (3 independent sets total) to count as unidentifiable."""
    mat, points = build(0)
    if mat.shape[1] < mat.shape[0]:
        raise ValueError("too few evaluation columns for a rank verdict")
    rep = rank_with_tolerance(mat)
    full = mat.shape[0]
    if rep.numeric_rank == full:
        verdict = "identifiable"
    elif np.any(np.all(mat == 0.0, axis=1)):
        verdict = "unidentifiable"
    else:
        repeats = [
            rank_with_tolerance(build(i)[0]).numeric_rank < full for i in (1, 2)
        ]
        verdict = "unidentifiable" if all(repeats) else "inconclusive"
    return ConditionReport(theorem, mat, rep, verdict, points, num_points, seed)


def _audit_points(families, num_points, seed, tag, resample, grid=True):
    """(z_t, history grid) pairs drawn from the families' own trajectories,
    rotating contexts point by point."""
    m = len(families)
    n = families[0].n
    lag = families[0].lag
    grid_size = COND_GRID_PER_POINT * n if grid else 0
    rng = seeded_rng(seed, "audit", tag, resample)
    pool = max(4 * max(num_points, grid_size), 512)
    steps = AUDIT_BURN_IN + lag + pool
    paths = [fam.sample_path(rng, steps) for fam in families]
    usable = np.arange(AUDIT_BURN_IN + lag, steps)
    out = []
    for j in range(num_points):
        z = paths[j % m]
        t = int(rng.choice(usable))
        if grid_size:
            idx = rng.choice(usable, size=grid_size, replace=False)
            hists = np.array([_hist(z, ti, lag) for ti in idx])
            hists[0] = _hist(z, t, lag)
        else:
            hists = np.empty((0, families[0].hist_dim))
        out.append((z[t].copy(), hists))
    return out


def _points_record(points):
    return {
        "z": np.array([p[0] for p in points]),
        "hist": [p[1] for p in points],
    }


def _require_rows(mat):
    if not np.all(np.isfinite(mat)):
        raise FloatingPointError("non-finite entries in the stacked audit matrix")
    return mat


def _check_custom(families):
    for fam in families:
        if isinstance(fam, CustomFamily):
            probe = np.zeros(fam.hist_dim)
            fam.check_normalization(0, probe)


def _single_context_matrix(family, points):
    n, hd = family.n, family.hist_dim
    top, bottom = [], []
    for z_t, hists in points:
        g = hists.shape[0]
        vs = np.empty((n, g * hd))
        rings = np.empty((n, g * hd))
        for j in range(g):
            _, _, v, v_ring = family.bundle_all(z_t, hists[j])
            vs[:, j * hd : (j + 1) * hd] = v
            rings[:, j * hd : (j + 1) * hd] = v_ring
        top.append(vs)
        bottom.append(rings)
    return _require_rows(np.vstack([np.hstack(top), np.hstack(bottom)]))


def audit_fixed(family, n, num_points, seed) -> ConditionReport:
    """Theorem-1 audit: linear independence of the 2n vectors v_k, v̊_k for a
    single-context temporal family."""
    if n <= 0 or num_points <= 0:
        raise ValueError("n and num_points must be positive")
    if family.n != n:
        raise ValueError(f"family has {family.n} components, expected {n}")
    _check_custom([family])

    def build(resample):
        points = _audit_points([family], num_points, seed, "T1", resample)
        return _single_context_matrix(family, points), _points_record(points)

    return _finish("T1", num_points, seed, build)


def audit_changing(families, n, num_points, seed) -> ConditionReport:
    """Theorem-2 audit: linear independence of the 2n multi-context vectors
    s_k, s̊_k across per-context conditional families."""
    if n <= 0 or num_points <= 0:
        raise ValueError("n and num_points must be positive")
    if len(families) < 2:
        raise ValueError("need at least 2 contexts")
    if any(f.n != n for f in families):
        raise ValueError("contexts disagree on the latent dimension")
    if len({f.hist_dim for f in families}) != 1:
        raise ValueError("contexts disagree on the history length")
    _check_custom(families)
    m = len(families)
    hd = families[0].hist_dim
    width = m * hd + (m - 1)

    def build(resample):
        points = _audit_points(families, num_points, seed, "T2", resample)
        top, bottom = [], []
        for z_t, hists in points:
            g = hists.shape[0]
            s_blk = np.empty((n, g * width))
            sr_blk = np.empty((n, g * width))
            for j in range(g):
                per = [fam.bundle_all(z_t, hists[j]) for fam in families]
                d1s = np.stack([p[0] for p in per])
                d2s = np.stack([p[1] for p in per])
                vs = np.stack([p[2] for p in per])
                rings = np.stack([p[3] for p in per])
                s_blk[:, j * width : (j + 1) * width] = np.concatenate(
                    [vs.transpose(1, 0, 2).reshape(n, m * hd), np.diff(d2s, axis=0).T],
                    axis=1,
                )
                sr_blk[:, j * width : (j + 1) * width] = np.concatenate(
                    [rings.transpose(1, 0, 2).reshape(n, m * hd), np.diff(d1s, axis=0).T],
                    axis=1,
                )
            top.append(s_blk)
            bottom.append(sr_blk)
        mat = _require_rows(np.vstack([np.hstack(top), np.hstack(bottom)]))
        return mat, _points_record(points)

    return _finish("T2", num_points, seed, build)


def audit_observation(families, n, num_points, seed) -> ConditionReport:
    """Theorem-3 audit: context-indexed marginals; the v/v̊ blocks of s, s̊ are
    identically zero and rank must come from the Delta blocks."""
    if n <= 0 or num_points <= 0:
        raise ValueError("n and num_points must be positive")
    if len(families) < 2:
        raise ValueError("need at least 2 contexts")
    if any(f.n != n for f in families):
        raise ValueError("contexts disagree on the latent dimension")
    if not all(getattr(f, "history_free", False) for f in families):
        raise ValueError("observation audits need history-free marginal families")
    m = len(families)
    width = m * n + (m - 1)

    def build(resample):
        points = _audit_points(families, num_points, seed, "T3", resample, grid=False)
        s_rows = np.zeros((n, num_points * width))
        sr_rows = np.zeros((n, num_points * width))
        for i, (z_t, _) in enumerate(points):
            per = [fam.bundle_all(z_t, np.zeros(fam.hist_dim)) for fam in families]
            d1s = np.stack([p[0] for p in per])
            d2s = np.stack([p[1] for p in per])
            lo = i * width + m * n
            hi = (i + 1) * width
            s_rows[:, lo:hi] = np.diff(d2s, axis=0).T
            sr_rows[:, lo:hi] = np.diff(d1s, axis=0).T
        mat = _require_rows(np.vstack([s_rows, sr_rows]))
        return mat, _points_record(points)

    return _finish("T3", num_points, seed, build)


# ---------------------------------------------------------------------------
# spec-driven audits


def families_from_spec(spec: LatentProcessSpec) -> dict:
    """Build the generating density families of each block of a spec:
    {"fixed": family or None, "changing": [per-segment] or None,
    "obs": [per-segment] or None}."""
    s = draw_parameters(spec.resolved())
    out = {"fixed": None, "changing": None, "obs": None}
    if s.n_fixed:
        if s.regime == "linear_gn":
            out["fixed"] = GeneralizedNormalLinearFamily(
                s.transition_params["fixed"]["A"], s.gn_lambda, s.gn_beta
            )
        else:
            q, q_jac = fixed_transition_fns(s)
            if s.hetero_coupling > 0:
                b, b_jac = coupling_fns(s)
                out["fixed"] = HeteroskedasticFamily(
                    q, q_jac, b, b_jac, s.noise_sigma, s.n_fixed, s.lag
                )
            else:
                out["fixed"] = GaussianAdditiveFamily(
                    q, q_jac, s.noise_sigma, s.n_fixed, s.lag
                )
    if s.n_changing:
        fams = []
        for k in range(s.num_segments):
            q, q_jac = changing_transition_fns(s, k)
            fams.append(
                GaussianAdditiveFamily(q, q_jac, s.noise_sigma, s.n_changing, s.lag)
            )
        out["changing"] = fams
    if s.n_obs_block:
        out["obs"] = [
            IidMarginalFamily(p["mean"], p["var"]) for p in s.obs_change_params
        ]
    return out


def audit_modular(spec: LatentProcessSpec, num_points, seed) -> list:
    """Audit every non-empty block of a partitioned spec; zero-width blocks
    are skipped (vacuously satisfied). Overall identifiability is the
    conjunction of the per-block verdicts (see overall_verdict)."""
    fams = families_from_spec(spec)
    reports = []
    if fams["fixed"] is not None:
        reports.append(audit_fixed(fams["fixed"], fams["fixed"].n, num_points, seed))
    if fams["changing"] is not None:
        reports.append(
            audit_changing(fams["changing"], fams["changing"][0].n, num_points, seed)
        )
    if fams["obs"] is not None:
        reports.append(
            audit_observation(fams["obs"], fams["obs"][0].n, num_points, seed)
        )
    return reports


def overall_verdict(reports) -> str:
    if any(r.verdict == "unidentifiable" for r in reports):
        return "unidentifiable"
    if all(r.verdict == "identifiable" for r in reports):
        return "identifiable"
    return "inconclusive"


# ---------------------------------------------------------------------------
# corollary specializations


def audit_corollary1(q, b, n, num_points, seed) -> ConditionReport:
    """Heterogeneous-noise specialization: rank-tests the 2n vectors
    b_k * db_k/dh and b_k * db_k/dh * (z_k - q_k) - b_k^2 * dq_k/dh.

    q and b map a lag-1 history (length n) to n-vectors; their derivatives
    are taken by Richardson finite differences. Points come from the process
    z_t = q + 0.1 * eps / b implied by the pair."""
    if n <= 0 or num_points <= 0:
        raise ValueError("n and num_points must be positive")

    def checked_b(h):
        bv = np.asarray(b(h), dtype=np.float64)
        if np.any(bv <= 0.0) or not np.all(np.isfinite(bv)):
            raise FloatingPointError("b <= 0 at a sampled point")
        return bv

    family = HeteroskedasticFamily(
        q, lambda h: _rich_jac(q, h), checked_b, lambda h: _rich_jac(checked_b, h),
        0.1, n, lag=1,
    )

    def build(resample):
        points = _audit_points([family], num_points, seed, "C1", resample)
        top, bottom = [], []
        for z_t, hists in points:
            g = hists.shape[0]
            r1 = np.empty((n, g * n))
            r2 = np.empty((n, g * n))
            for j in range(g):
                h = hists[j]
                bv = checked_b(h)
                bj = _rich_jac(checked_b, h)
                qv = np.asarray(q(h), dtype=np.float64)
                qj = _rich_jac(q, h)
                first = bv[:, None] * bj
                r1[:, j * n : (j + 1) * n] = first
                r2[:, j * n : (j + 1) * n] = (
                    first * (np.asarray(z_t) - qv)[:, None] - (bv**2)[:, None] * qj
                )
            top.append(r1)
            bottom.append(r2)
        mat = _require_rows(np.vstack([np.hstack(top), np.hstack(bottom)]))
        return mat, _points_record(points)

    return _finish("C1", num_points, seed, build)


def audit_corollary2(A, lam, beta, num_points, seed) -> ConditionReport:
    """Linear generalized-normal specialization. The audited rows are the
    actual cross derivatives, proportional to |e_k|^(beta-2) * a_kl and
    sign(e_k) |e_k|^(beta-3) * a_kl for fixed beta > 2; at beta = 2 the
    third-derivative rows vanish identically (Gaussian case), which the
    verdict must report as unidentifiable."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if np.any(np.all(A == 0.0, axis=1)):
        raise ValueError("every row of A needs a nonzero entry")
    if beta != 2.0 and (beta <= 2.0 or beta == 3.0):
        raise ValueError("beta must be 2 (negative control) or > 2 and != 3")
    family = GeneralizedNormalLinearFamily(A, lam, beta)

    def build(resample):
        points = _audit_points([family], num_points, seed, "C2", resample)
        return _single_context_matrix(family, points), _points_record(points)

    return _finish("C2", num_points, seed, build)
