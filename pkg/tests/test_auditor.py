"""Identifiability-audit tests.

Oracles: Richardson finite differences through each family's own log density
(independent of the analytic derivative code), closed-form Delta/Delta2
values for Gaussian contexts, a symbolic expansion for the one-coordinate
noise-scale case, and direct recomputation of the corollary-2 row pattern.
"""

import json
import math

import numpy as np
import pytest

from lily.auditor import (
    ConditionReport,
    CustomFamily,
    DerivativeBundle,
    GaussianAdditiveFamily,
    GeneralizedNormalLinearFamily,
    HeteroskedasticFamily,
    IidMarginalFamily,
    _finish,
    audit_changing,
    audit_corollary1,
    audit_corollary2,
    audit_fixed,
    audit_modular,
    audit_observation,
    derivatives_at,
    families_from_spec,
    overall_verdict,
)
from lily.datagen import (
    LatentProcessSpec,
    coupling_fns,
    draw_parameters,
    fixed_transition_fns,
    gaussian_alternative,
    gen_fixed_hetero,
)
from lily.numerics import rank_with_tolerance, seeded_rng


def smooth_q(n, lag, seed):
    """tanh network with analytic Jacobian (smooth everywhere, so finite
    differences are trustworthy)."""
    rng = seeded_rng(seed, "smoothq")
    w1 = rng.uniform(-0.8, 0.8, size=(n, n * lag))
    w2 = rng.uniform(-0.8, 0.8, size=(n, n))

    def q(h):
        return w2 @ np.tanh(w1 @ h)

    def q_jac(h):
        gate = 1.0 - np.tanh(w1 @ h) ** 2
        return (w2 * gate) @ w1

    return q, q_jac


def smooth_b(n, lag, seed):
    rng = seeded_rng(seed, "smoothb")
    w = rng.uniform(-0.6, 0.6, size=(n, n * lag))

    def b(h):
        return 1.0 / (1.0 + (w @ h) ** 2)

    def b_jac(h):
        t = w @ h
        return (-2.0 * t / (1.0 + t**2) ** 2)[:, None] * w

    return b, b_jac


def fd_bundle(family, z_t, z_hist):
    """Finite-difference oracle straight through family.eta."""
    wrapped = CustomFamily(family.eta, family.n, family.hist_dim)
    return wrapped.bundle_all(np.asarray(z_t, float), np.asarray(z_hist, float))


def rel_gap(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1.0)
    return np.max(np.abs(a - b)) / scale


class TestDerivatives:
    def test_gaussian_additive_exact_fields(self):
        q, qj = smooth_q(3, 1, 0)
        fam = GaussianAdditiveFamily(q, qj, 0.1, 3)
        rng = seeded_rng(1)
        for _ in range(5):
            z, h = rng.standard_normal(3), rng.standard_normal(3)
            d1, d2, v, ring = fam.bundle_all(z, h)
            assert np.all(ring == 0.0)  # exactly, not approximately
            np.testing.assert_allclose(d2, -np.ones(3) / 0.01, rtol=1e-15)
            np.testing.assert_allclose(v, qj(h) / 0.01, rtol=1e-12)

    def test_gaussian_additive_matches_fd(self):
        q, qj = smooth_q(3, 2, 2)
        fam = GaussianAdditiveFamily(q, qj, 0.2, 3, lag=2)
        rng = seeded_rng(3)
        worst = 0.0
        for _ in range(20):
            z, h = rng.standard_normal(3), rng.standard_normal(6)
            got = fam.bundle_all(z, h)
            ref = fd_bundle(fam, z, h)
            worst = max(worst, max(rel_gap(g, r) for g, r in zip(got, ref)))
        assert worst < 1e-5

    def test_custom_vs_analytic_hundred_points(self):
        q, qj = smooth_q(2, 1, 4)
        fam = GaussianAdditiveFamily(q, qj, 0.3, 2)
        custom = CustomFamily(fam.eta, 2, 2)
        rng = seeded_rng(5)
        worst = 0.0
        for _ in range(100):
            z, h = rng.standard_normal(2), rng.standard_normal(2)
            got = custom.bundle_all(z, h)
            ref = fam.bundle_all(z, h)
            worst = max(worst, max(rel_gap(g, r) for g, r in zip(got, ref)))
        assert worst < 1e-5

    def test_heteroskedastic_matches_fd(self):
        q, qj = smooth_q(3, 1, 6)
        b, bj = smooth_b(3, 1, 7)
        fam = HeteroskedasticFamily(q, qj, b, bj, 0.1, 3)
        rng = seeded_rng(8)
        worst = 0.0
        for _ in range(20):
            z, h = rng.standard_normal(3), rng.standard_normal(3)
            got = fam.bundle_all(z, h)
            ref = fd_bundle(fam, z, h)
            worst = max(worst, max(rel_gap(g, r) for g, r in zip(got, ref)))
        assert worst < 1e-5

    def test_generalized_normal_matches_fd(self):
        rng = seeded_rng(9)
        a = rng.uniform(0.3, 1.0, size=(3, 3))
        for beta in (4.0, 2.5, 5.0):
            fam = GeneralizedNormalLinearFamily(a, 1.3, beta)
            worst = 0.0
            for _ in range(20):
                h = rng.standard_normal(3)
                z = a @ h + rng.uniform(0.2, 1.0, 3) * rng.choice([-1.0, 1.0], 3)
                got = fam.bundle_all(z, h)
                ref = fd_bundle(fam, z, h)
                worst = max(worst, max(rel_gap(g, r) for g, r in zip(got, ref)))
            assert worst < 1e-5, f"beta={beta}"

    def test_generalized_normal_beta2_ring_exactly_zero(self):
        fam = GeneralizedNormalLinearFamily(np.eye(2), 1.0, 2.0)
        _, _, _, ring = fam.bundle_all(np.array([0.4, -0.2]), np.array([1.0, 1.0]))
        assert np.all(ring == 0.0)

    def test_iid_marginal_fields(self):
        fam = IidMarginalFamily([0.5, -1.0], [0.25, 4.0], lag=2)
        d1, d2, v, ring = fam.bundle_all(np.array([1.0, 1.0]), np.zeros(4))
        np.testing.assert_allclose(d1, [-(1.0 - 0.5) / 0.25, -(1.0 + 1.0) / 4.0])
        np.testing.assert_allclose(d2, [-4.0, -0.25])
        assert np.all(v == 0.0) and np.all(ring == 0.0)

    def test_density_zero_raises(self):
        half = CustomFamily(
            lambda k, z, h: math.log(2.0) - 0.5 * math.log(2 * math.pi) - z**2 / 2
            if z > 0
            else -math.inf,
            1,
            1,
        )
        with pytest.raises(FloatingPointError):
            half.bundle_all(np.array([-0.5]), np.zeros(1))

    def test_normalization_check(self):
        good = CustomFamily(
            lambda k, z, h: -0.5 * math.log(2 * math.pi) - z**2 / 2, 1, 1
        )
        assert abs(good.check_normalization(0, np.zeros(1)) - 1.0) < 1e-8
        bad = CustomFamily(lambda k, z, h: -(z**2), 1, 1)
        with pytest.raises(ValueError, match="integrates"):
            bad.check_normalization(0, np.zeros(1))


class TestDerivativesAt:
    def test_bundle_selection_and_validation(self):
        q, qj = smooth_q(3, 1, 10)
        fam = GaussianAdditiveFamily(q, qj, 0.1, 3)
        z, h = np.ones(3), np.zeros(3)
        bundle = derivatives_at(fam, 1, z, h)
        assert isinstance(bundle, DerivativeBundle)
        d1, d2, v, ring = fam.bundle_all(z, h)
        assert bundle.d1 == d1[1] and bundle.d2 == d2[1]
        np.testing.assert_array_equal(bundle.v, v[1])
        with pytest.raises(ValueError, match="component"):
            derivatives_at(fam, 3, z, h)
        with pytest.raises(ValueError, match="z_t"):
            derivatives_at(fam, 0, np.ones(2), h)
        with pytest.raises(ValueError, match="z_hist"):
            derivatives_at(fam, 0, z, np.zeros(5))

    def test_multi_context_deltas_closed_form(self):
        """Two Gaussian contexts: Delta2 = 1/var_1 - 1/var_2, Delta affine."""
        f1 = IidMarginalFamily([0.0, 0.0], [1.0, 0.5])
        f2 = IidMarginalFamily([1.0, -1.0], [0.25, 0.5])
        z = np.array([0.3, 0.7])
        bundle = derivatives_at([f1, f2], 0, z, np.zeros(2))
        assert bundle.delta2.shape == (1,)
        np.testing.assert_allclose(bundle.delta2[0], 1.0 / 1.0 - 1.0 / 0.25)
        expect_delta = (-(z[0] - 1.0) / 0.25) - (-(z[0] - 0.0) / 1.0)
        np.testing.assert_allclose(bundle.delta[0], expect_delta)
        assert bundle.s.shape == (2 * 2 + 1,)
        assert bundle.s_ring.shape == (2 * 2 + 1,)
        picked = derivatives_at([f1, f2], 0, z, np.zeros(2), context=1)
        np.testing.assert_allclose(picked.d1, -(z[0] - 1.0) / 0.25)


@pytest.fixture(scope="module")
def hetero_family():
    spec = LatentProcessSpec("fixed_hetero", n_latent=4, samples_per_segment=100, seed=0)
    return families_from_spec(spec)["fixed"]


@pytest.fixture(scope="module")
def gaussian_family():
    spec = LatentProcessSpec(
        "fixed_hetero", n_latent=4, samples_per_segment=100, hetero_coupling=0.0, seed=0
    )
    return families_from_spec(spec)["fixed"]


class TestAuditFixed:
    def test_iid_unidentifiable(self):
        fam = IidMarginalFamily(np.zeros(4), np.ones(4), lag=2)
        rep = audit_fixed(fam, 4, 32, seed=1)
        assert rep.verdict == "unidentifiable"
        assert np.sum(np.all(rep.stacked_matrix == 0.0, axis=1)) == 8

    def test_gaussian_unidentifiable_exact_zero_rows(self, gaussian_family):
        rep = audit_fixed(gaussian_family, 4, 32, seed=1)
        assert rep.verdict == "unidentifiable"
        zero_rows = np.all(rep.stacked_matrix == 0.0, axis=1)
        assert zero_rows[4:].all() and not zero_rows[:4].any()

    def test_hetero_identifiable(self, hetero_family):
        rep = audit_fixed(hetero_family, 4, 32, seed=1)
        assert rep.verdict == "identifiable"
        assert rep.rank_report.numeric_rank == 8
        assert rep.stacked_matrix.shape[0] == 8

    def test_generalized_normal_identifiable(self):
        fam = families_from_spec(
            LatentProcessSpec("linear_gn", n_latent=4, samples_per_segment=100, seed=0)
        )["fixed"]
        rep = audit_fixed(fam, 4, 32, seed=1)
        assert rep.verdict == "identifiable"

    def test_verdicts_stable_across_resampling(self, hetero_family, gaussian_family):
        for seed in (5, 6, 7):
            assert audit_fixed(hetero_family, 4, 24, seed).verdict == "identifiable"
            assert audit_fixed(gaussian_family, 4, 24, seed).verdict == "unidentifiable"

    def test_row_scaling_leaves_verdict(self, hetero_family):
        rep = audit_fixed(hetero_family, 4, 24, seed=2)
        scales = seeded_rng(0).uniform(0.5, 200.0, rep.stacked_matrix.shape[0])
        rescaled = rank_with_tolerance(rep.stacked_matrix * scales[:, None])
        assert rescaled.numeric_rank == rep.rank_report.numeric_rank

    def test_invalid_inputs(self, hetero_family):
        with pytest.raises(ValueError):
            audit_fixed(hetero_family, 0, 16, seed=0)
        with pytest.raises(ValueError):
            audit_fixed(hetero_family, 4, 0, seed=0)
        with pytest.raises(ValueError, match="components"):
            audit_fixed(hetero_family, 5, 16, seed=0)

    def test_eval_points_recorded(self, hetero_family):
        rep = audit_fixed(hetero_family, 4, 16, seed=3)
        assert rep.eval_points["z"].shape == (16, 4)
        assert len(rep.eval_points["hist"]) == 16
        assert rep.eval_points["hist"][0].shape == (32, 8)

    def test_report_json_schema(self, hetero_family):
        rep = audit_fixed(hetero_family, 4, 16, seed=3)
        blob = json.dumps(rep.to_json())
        parsed = json.loads(blob)
        assert set(parsed) == {
            "theorem", "verdict", "singular_values", "rank", "num_points", "seed",
        }
        assert parsed["theorem"] == "T1"
        assert parsed["rank"] == 8


class TestVerdictProcedure:
    """The deficiency-confirmation branch, driven by synthetic builders."""

    @staticmethod
    def _report(mats):
        calls = iter(mats)

        def build(resample):
            return next(calls), {"z": np.zeros((1, 1)), "hist": []}

        return _finish("T1", 4, 0, build)

    DEFICIENT = np.array(
        [[1.0, 2.0, 1.0, 0.0],
         [2.0, 4.0, 2.0, 0.0],
         [0.5, 1.0, 0.5, 0.0],
         [1.0, 0.0, 1.0, 1.0]]
    )  # rank 2, no zero rows

    def test_reproduced_deficiency_is_unidentifiable(self):
        rep = self._report([self.DEFICIENT] * 3)
        assert rep.verdict == "unidentifiable"

    def test_transient_deficiency_is_inconclusive(self):
        rep = self._report([self.DEFICIENT, np.eye(4), np.eye(4)])
        assert rep.verdict == "inconclusive"

    def test_too_few_columns_rejected(self):
        with pytest.raises(ValueError, match="columns"):
            self._report([np.ones((4, 2))])


@pytest.fixture(scope="module")
def contexts():
    spec = LatentProcessSpec(
        "changing_dyn", n_latent=3, num_segments=5, samples_per_segment=100, seed=0
    )
    return families_from_spec(spec)["changing"]


class TestAuditChanging:
    def test_changing_generator_identifiable(self, contexts):
        rep = audit_changing(contexts, 3, 24, seed=1)
        assert rep.verdict == "identifiable"
        assert rep.theorem == "T2"
        assert rep.stacked_matrix.shape[0] == 6

    def test_identical_contexts_unidentifiable(self, contexts):
        rep = audit_changing([contexts[0]] * 4, 3, 24, seed=1)
        assert rep.verdict == "unidentifiable"
        assert np.sum(np.all(rep.stacked_matrix == 0.0, axis=1)) == 3

    def test_variance_only_difference_delta2_closed_form(self):
        q, qj = smooth_q(2, 1, 11)
        f1 = GaussianAdditiveFamily(q, qj, 0.1, 2)
        f2 = GaussianAdditiveFamily(q, qj, 0.2, 2)
        rep = audit_changing([f1, f2], 2, 16, seed=2)
        width = 2 * 2 + 1  # m*hist + (m-1)
        delta2_cols = rep.stacked_matrix[:2, width - 1 :: width]
        expect = 1.0 / 0.01 - 1.0 / 0.04
        np.testing.assert_allclose(delta2_cols, expect)
        assert rep.verdict == "identifiable"

    def test_context_validation(self, contexts):
        with pytest.raises(ValueError, match="2 contexts"):
            audit_changing(contexts[:1], 3, 16, seed=0)
        other = IidMarginalFamily(np.zeros(2), np.ones(2))
        with pytest.raises(ValueError, match="dimension"):
            audit_changing([contexts[0], other], 3, 16, seed=0)


class TestAuditObservation:
    def test_twenty_contexts_identifiable(self):
        rng = seeded_rng(0, "obs20")
        fams = [
            IidMarginalFamily(rng.uniform(-1, 1, 3), rng.uniform(0.01, 1, 3))
            for _ in range(20)
        ]
        rep = audit_observation(fams, 3, 48, seed=1)
        assert rep.verdict == "identifiable"
        assert rep.theorem == "T3"

    def test_identical_contexts_unidentifiable(self):
        same = IidMarginalFamily(np.zeros(3), np.ones(3))
        rep = audit_observation([same] * 6, 3, 48, seed=1)
        assert rep.verdict == "unidentifiable"

    def test_mean_only_change_is_structurally_deficient(self):
        """Equal variances zero the Delta2 entries, so the s rows are exactly
        zero and the verdict is unidentifiable."""
        f1 = IidMarginalFamily([0.0, 0.0], [1.0, 1.0])
        f2 = IidMarginalFamily([1.0, 0.5], [1.0, 1.0])
        rep = audit_observation([f1, f2], 2, 32, seed=1)
        assert rep.verdict == "unidentifiable"
        assert np.all(rep.stacked_matrix[:2] == 0.0)
        assert not np.all(rep.stacked_matrix[2:] == 0.0)

    def test_delta_entries_closed_form(self):
        f1 = IidMarginalFamily([0.0], [1.0])
        f2 = IidMarginalFamily([0.5], [0.25])
        rep = audit_observation([f1, f2], 1, 16, seed=4)
        width = 2 * 1 + 1
        z = rep.eval_points["z"][:, 0]
        delta2 = rep.stacked_matrix[0, width - 1 :: width]
        delta = rep.stacked_matrix[1, width - 1 :: width]
        np.testing.assert_allclose(delta2, 1.0 / 1.0 - 1.0 / 0.25)
        np.testing.assert_allclose(delta, -(z - 0.5) / 0.25 + z)

    def test_validation(self):
        one = IidMarginalFamily(np.zeros(2), np.ones(2))
        with pytest.raises(ValueError, match="2 contexts"):
            audit_observation([one], 2, 16, seed=0)
        q, qj = smooth_q(2, 1, 12)
        temporal = GaussianAdditiveFamily(q, qj, 0.1, 2)
        with pytest.raises(ValueError, match="history-free"):
            audit_observation([one, temporal], 2, 16, seed=0)


class TestAuditModular:
    def test_three_block_composition(self):
        spec = LatentProcessSpec(
            "modular", n_latent=6, partition=(3, 2, 1), num_segments=5,
            samples_per_segment=100, seed=0,
        )
        reports = audit_modular(spec, 24, seed=1)
        assert [r.theorem for r in reports] == ["T1", "T2", "T3"]
        assert all(r.verdict == "identifiable" for r in reports)
        assert overall_verdict(reports) == "identifiable"

    def test_degenerate_partition_single_report(self):
        spec = LatentProcessSpec(
            "modular", n_latent=3, partition=(3, 0, 0), num_segments=2,
            samples_per_segment=100, seed=0,
        )
        reports = audit_modular(spec, 24, seed=1)
        assert len(reports) == 1
        assert reports[0].theorem == "T1"

    def test_gaussian_fixed_block_breaks_overall(self):
        spec = LatentProcessSpec(
            "modular", n_latent=6, partition=(3, 2, 1), num_segments=5,
            samples_per_segment=100, hetero_coupling=0.0, seed=0,
        )
        reports = audit_modular(spec, 24, seed=1)
        verdicts = {r.theorem: r.verdict for r in reports}
        assert verdicts["T1"] == "unidentifiable"
        assert overall_verdict(reports) == "unidentifiable"


class TestCorollary1:
    def test_constant_b_unidentifiable(self):
        q, _ = smooth_q(3, 1, 13)
        rep = audit_corollary1(q, lambda h: np.ones(3), 3, 24, seed=1)
        assert rep.verdict == "unidentifiable"
        assert np.sum(np.all(rep.stacked_matrix == 0.0, axis=1)) == 3

    def test_agrees_with_fixed_audit(self):
        spec = LatentProcessSpec(
            "fixed_hetero", n_latent=3, lag=1, samples_per_segment=100, seed=4
        )
        resolved = draw_parameters(spec.resolved())
        q, _ = fixed_transition_fns(resolved)
        b, _ = coupling_fns(resolved)
        rep_c1 = audit_corollary1(q, b, 3, 24, seed=2)
        rep_t1 = audit_fixed(families_from_spec(spec)["fixed"], 3, 24, seed=2)
        assert rep_c1.verdict == rep_t1.verdict == "identifiable"

    def test_single_coordinate_scale_matches_symbolic_expansion(self):
        """b_k = exp(c_k h_1), q = 0: rows are c_k exp(2 c_k h_1) e_1 and
        c_k exp(2 c_k h_1) z_k e_1."""
        c = np.array([0.3, -0.5, 0.8])

        def b(h):
            return np.exp(c * h[0])

        rep = audit_corollary1(lambda h: np.zeros(3), b, 3, 12, seed=3)
        n = 3
        expected = []
        for z_t, hists in zip(rep.eval_points["z"], rep.eval_points["hist"]):
            blk1 = np.zeros((n, len(hists) * n))
            blk2 = np.zeros_like(blk1)
            for j, h in enumerate(hists):
                scale = c * np.exp(2 * c * h[0])
                blk1[:, j * n] = scale
                blk2[:, j * n] = scale * z_t
            expected.append((blk1, blk2))
        oracle = np.vstack(
            [np.hstack([e[0] for e in expected]), np.hstack([e[1] for e in expected])]
        )
        np.testing.assert_allclose(rep.stacked_matrix, oracle, atol=1e-6)
        assert rep.rank_report.numeric_rank == rank_with_tolerance(oracle).numeric_rank
        assert rep.verdict == "identifiable"

    def test_nonpositive_b_raises(self):
        q, _ = smooth_q(2, 1, 14)
        with pytest.raises(FloatingPointError, match="b <= 0"):
            audit_corollary1(q, lambda h: np.array([1.0, -0.1]), 2, 8, seed=0)


@pytest.fixture(scope="module")
def a_matrix():
    return seeded_rng(0, "c2").uniform(-1.0, 1.0, (3, 3)) * 0.4


class TestCorollary2:
    def test_beta4_identifiable(self, a_matrix):
        rep = audit_corollary2(a_matrix, 1.0, 4.0, 24, seed=1)
        assert rep.verdict == "identifiable"
        assert rep.theorem == "C2"

    def test_rows_match_direct_recomputation(self, a_matrix):
        lam, beta = 1.0, 4.0
        rep = audit_corollary2(a_matrix, lam, beta, 8, seed=2)
        n = 3
        cols_top, cols_bot = [], []
        for z_t, hists in zip(rep.eval_points["z"], rep.eval_points["hist"]):
            for h in hists:
                e = z_t - a_matrix @ h
                cols_top.append((lam * beta * (beta - 1) * np.abs(e) ** (beta - 2))[:, None]
                                * a_matrix)
                cols_bot.append(
                    (lam * beta * (beta - 1) * (beta - 2) * np.sign(e)
                     * np.abs(e) ** (beta - 3))[:, None] * a_matrix
                )
        oracle = np.vstack(
            [np.hstack(cols_top), np.hstack(cols_bot)]
        )
        np.testing.assert_allclose(rep.stacked_matrix, oracle, atol=1e-12)

    def test_beta2_gaussian_unidentifiable(self, a_matrix):
        rep = audit_corollary2(a_matrix, 1.0, 2.0, 24, seed=1)
        assert rep.verdict == "unidentifiable"
        assert np.all(rep.stacked_matrix[3:] == 0.0)

    def test_fractional_beta_supported(self, a_matrix):
        rep = audit_corollary2(a_matrix, 1.0, 2.5, 24, seed=1)
        assert rep.verdict == "identifiable"

    def test_invalid_inputs(self, a_matrix):
        with pytest.raises(ValueError, match="nonzero"):
            audit_corollary2(np.array([[1.0, 0.0], [0.0, 0.0]]), 1.0, 4.0, 8, seed=0)
        with pytest.raises(ValueError, match="beta"):
            audit_corollary2(a_matrix, 1.0, 3.0, 8, seed=0)
        with pytest.raises(ValueError, match="beta"):
            audit_corollary2(a_matrix, 1.0, 1.5, 8, seed=0)


class TestSpuriousSolutionPair:
    def test_alternative_passes_while_audit_fails(self):
        """The spurious linear-Gaussian construction keeps residuals
        independent even though the audit declares the family unidentifiable
        — the pair exhibited together."""
        spec = LatentProcessSpec(
            "fixed_hetero", n_latent=4, samples_per_segment=20000,
            transition_kind="linear", hetero_coupling=0.0, seed=6,
        )
        ds = gen_fixed_hetero(spec)
        rng = seeded_rng(7)
        u, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        d1 = rng.uniform(0.5, 2.0, 4)
        d2 = np.full(4, 1.0 / spec.noise_sigma)
        z_hat = gaussian_alternative(ds.latents, d1, u, d2)

        lag = ds.spec.lag
        rows = np.hstack([z_hat[lag - 1 : -1], z_hat[lag - 2 : -2]])
        target = z_hat[lag:]
        coef, *_ = np.linalg.lstsq(rows, target, rcond=None)
        resid = target - rows @ coef
        corr = np.corrcoef(resid.T)
        off = corr[~np.eye(4, dtype=bool)]
        assert np.max(np.abs(off)) < 0.05

        fam = families_from_spec(spec)["fixed"]
        rep = audit_fixed(fam, 4, 24, seed=8)
        assert rep.verdict == "unidentifiable"
