"""Mean-correlation-coefficient tests: invariance classes, assignment
optimality against brute force, null behavior, and report schema."""

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lily.metrics import MccReport, mcc
from lily.numerics import seeded_rng


def random_latents(seed, n=4, size=200):
    return seeded_rng(seed, "mcc").standard_normal((size, n))


class TestPerfectRecovery:
    def test_identity(self):
        z = random_latents(0)
        rep = mcc(z, z)
        assert rep.mcc == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(rep.assignment, np.arange(4))

    def test_permuted_scaled_flipped(self):
        z = random_latents(1)
        perm = [2, 0, 3, 1]
        z_est = z[:, perm] * np.array([-3.0, 0.5, 100.0, -1e-3])
        rep = mcc(z, z_est)
        assert rep.mcc == pytest.approx(1.0, abs=1e-12)
        # column j of z_est carries true component perm[j]
        recovered = [perm[j] for j in rep.assignment]
        assert recovered == [0, 1, 2, 3]

    def test_cubed_needs_spearman(self):
        z = random_latents(2)
        rep_s = mcc(z, z**3, method="spearman")
        assert rep_s.mcc == pytest.approx(1.0, abs=1e-12)
        assert mcc(z, z**3, method="pearson").mcc < 1.0 - 1e-6

    def test_monotone_map_spearman_exact(self):
        z = random_latents(3)
        z_est = random_latents(4)
        base = mcc(z, z_est, method="spearman")
        mapped = mcc(z, np.exp(z_est), method="spearman")
        assert mapped.mcc == base.mcc
        np.testing.assert_array_equal(mapped.assignment, base.assignment)


class TestInvariances:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_pearson_column_transforms(self, seed):
        rng = seeded_rng(seed, "inv")
        z_true = rng.standard_normal((60, 3))
        z_est = rng.standard_normal((60, 3))
        base = mcc(z_true, z_est)
        perm = rng.permutation(3)
        signs = rng.choice([-1.0, 1.0], size=3)
        scales = rng.uniform(0.1, 10.0, size=3)
        transformed = z_est[:, perm] * signs * scales
        rep = mcc(z_true, transformed)
        assert abs(rep.mcc - base.mcc) <= 1e-12

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_symmetry(self, seed):
        rng = seeded_rng(seed, "sym")
        a = rng.standard_normal((50, 4))
        b = rng.standard_normal((50, 4))
        ab, ba = mcc(a, b), mcc(b, a)
        assert abs(ab.mcc - ba.mcc) <= 1e-12
        inverse = np.empty(4, dtype=int)
        inverse[ab.assignment] = np.arange(4)
        np.testing.assert_array_equal(ba.assignment, inverse)

    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=30, deadline=None)
    def test_bounds_and_bijection(self, seed):
        rng = seeded_rng(seed, "bounds")
        rep = mcc(rng.standard_normal((40, 5)), rng.standard_normal((40, 5)))
        assert np.all(rep.corr_matrix >= 0.0) and np.all(rep.corr_matrix <= 1.0)
        assert 0.0 <= rep.mcc <= 1.0
        assert sorted(rep.assignment) == list(range(5))


class TestAssignmentOptimality:
    @given(
        st.integers(min_value=2, max_value=6),
        st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force(self, n, seed):
        rng = seeded_rng(seed, "brute", n)
        rep = mcc(rng.standard_normal((30, n)), rng.standard_normal((30, n)))
        best = max(
            np.mean(rep.corr_matrix[np.arange(n), list(p)])
            for p in itertools.permutations(range(n))
        )
        assert rep.mcc == pytest.approx(best, abs=1e-12)


class TestNullDistribution:
    def test_independent_normals_score_low(self):
        """Null-distribution simulation: independent 8-dim standard normals at
        N=10,000 stay under 0.1 in every trial."""
        worst = 0.0
        for trial in range(100):
            rng = seeded_rng(trial, "null")
            rep = mcc(
                rng.standard_normal((10_000, 8)), rng.standard_normal((10_000, 8))
            )
            worst = max(worst, rep.mcc)
        assert worst < 0.1


class TestRectangular:
    def test_extra_estimated_columns_unscored(self):
        z = random_latents(5)
        rng = seeded_rng(6)
        z_est = np.hstack([rng.standard_normal((200, 2)), z * 2.0])
        rep = mcc(z, z_est)
        assert rep.corr_matrix.shape == (4, 6)
        assert rep.mcc == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(rep.assignment, [2, 3, 4, 5])
        assert len(set(rep.assignment)) == 4

    def test_fewer_estimated_columns_rejected(self):
        z = random_latents(7)
        with pytest.raises(ValueError, match="at least as many"):
            mcc(z, z[:, :3])


class TestDegenerate:
    def test_zero_variance_column_flagged(self):
        z = random_latents(8)
        z_est = z.copy()
        z_est[:, 1] = 7.0
        with pytest.warns(RuntimeWarning, match="zero-variance"):
            rep = mcc(z, z_est)
        assert rep.degenerate
        assert np.all(rep.corr_matrix[:, 1] == 0.0)
        assert rep.mcc == pytest.approx(3.0 / 4.0, abs=1e-9)

    def test_clean_data_not_flagged(self):
        rep = mcc(random_latents(9), random_latents(10))
        assert not rep.degenerate


class TestValidation:
    def test_bad_inputs(self):
        z = random_latents(11)
        with pytest.raises(ValueError, match="method"):
            mcc(z, z, method="kendall")
        with pytest.raises(ValueError, match="2-d"):
            mcc(z[:, 0], z)
        with pytest.raises(ValueError, match="3 samples"):
            mcc(z[:2], z[:2])
        with pytest.raises(ValueError, match="sample count"):
            mcc(z, z[:-1])
        bad = z.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            mcc(bad, z)


class TestReport:
    def test_json_schema(self):
        z = random_latents(12)
        rep = mcc(z, z[:, ::-1])
        blob = json.loads(json.dumps(rep.to_json()))
        assert set(blob) == {"mcc", "method", "assignment", "corr_matrix"}
        assert blob["method"] == "pearson"
        assert blob["assignment"] == [3, 2, 1, 0]
        assert np.asarray(blob["corr_matrix"]).shape == (4, 4)

    def test_frozen(self):
        rep = mcc(random_latents(13), random_latents(14))
        assert isinstance(rep, MccReport)
        with pytest.raises(AttributeError):
            rep.mcc = 0.5
