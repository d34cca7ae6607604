import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dgp
from pcptest.data import Dataset
from pcptest.functionals import (
    DegenerateMarginalError,
    correlation_from_quad,
    covariance_from_quad,
    debiased_group_correlation,
    gradient_regressors,
    group_mean,
    orthogonality_check,
    per_obs_stats,
    summarize,
)
from pcptest.synth import RhoSpec


def quad_strategy(lo=0.02):
    """Random quads with all four entries at least lo (nondegenerate)."""

    @st.composite
    def build(draw):
        raw = np.array([draw(st.floats(lo, 1.0)) for _ in range(4)])
        quad = raw / raw.sum()
        if quad.min() < lo / 4:
            quad = (quad + lo) / (1 + 4 * lo)
        return quad

    return build()


# Table-ready 4-way counts: (n00, n01, n10, n11) = (3696, 302, 2203, 132)
TABLE1_QUAD = np.array([3696, 302, 2203, 132]) / 6333.0


class TestQuadFunctionals:
    def test_independence_quad(self):
        quad = np.full(4, 0.25)
        assert covariance_from_quad(quad) == 0.0
        assert correlation_from_quad(quad) == 0.0

    def test_comonotone_quad(self):
        quad = np.array([0.5, 0.0, 0.0, 0.5])
        assert covariance_from_quad(quad) == pytest.approx(0.25, abs=1e-15)
        assert correlation_from_quad(quad) == pytest.approx(1.0, abs=1e-12)

    def test_table1_values(self):
        # Exact arithmetic gives C = -0.00442403; the quoted -0.004425 is
        # the rounded correlation re-multiplied by the marginal scale, so
        # the comparison tolerance allows for that rounding.
        assert covariance_from_quad(TABLE1_QUAD) == pytest.approx(-0.004425, abs=1.5e-6)
        assert correlation_from_quad(TABLE1_QUAD) == pytest.approx(-0.0363, abs=5e-5)

    def test_degenerate_marginal_raises(self):
        with pytest.raises(DegenerateMarginalError):
            correlation_from_quad(np.array([0.6, 0.4, 0.0, 0.0]))

    def test_covariance_correlation_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            raw = rng.uniform(0.05, 1.0, 4)
            quad = raw / raw.sum()
            p = quad[2] + quad[3]
            q = quad[1] + quad[3]
            s = np.sqrt(p * (1 - p) * q * (1 - q))
            assert correlation_from_quad(quad) * s == pytest.approx(
                covariance_from_quad(quad), abs=1e-12
            )


class TestGradientRegressors:
    def test_centered_marginals_vanish(self):
        quad = np.array([0.3, 0.2, 0.2, 0.3])  # p = q = 0.5
        g1, g2 = gradient_regressors(quad, correlation_from_quad(quad))
        assert g1 == pytest.approx(0.0, abs=1e-14)
        assert g2 == pytest.approx(0.0, abs=1e-14)

    def test_hand_value(self):
        # rho = 0.1, q = 0.25 -> grad1 = 0.1 * (0.25 - 0.5) / (0.25 * 0.75)
        p, q, rho = 0.5, 0.25, 0.1
        c = rho * np.sqrt(p * (1 - p) * q * (1 - q))
        p11 = p * q + c
        quad = np.array([1 - p - q + p11, q - p11, p - p11, p11])
        g1, g2 = gradient_regressors(quad, correlation_from_quad(quad))
        assert g1 == pytest.approx(-0.13333, abs=1e-5)
        assert g2 == pytest.approx(0.0, abs=1e-12)

    def test_zero_rho_vanishes(self):
        quad = np.array([0.48, 0.12, 0.32, 0.08])  # p = 0.4, q = 0.2, rho = 0
        rho = correlation_from_quad(quad)
        assert rho == pytest.approx(0.0, abs=1e-14)
        g1, g2 = gradient_regressors(quad, rho)
        assert (g1, g2) == (pytest.approx(0.0, abs=1e-13), pytest.approx(0.0, abs=1e-13))


class TestBruteForceOracle:
    """Plug-in functionals on empirical cell quads must agree with direct
    weighted cell-frequency computation on any dataset with few cells."""

    def _empirical_check(self, d: Dataset):
        labels = d.class_labels()
        cells, inverse = np.unique(d.covariates, axis=0, return_inverse=True)
        for ci in range(len(cells)):
            mask = inverse == ci
            w = d.w[mask]
            quad = np.array(
                [w[labels[mask] == k].sum() for k in range(4)]
            ) / w.sum()
            # Oracle: weighted frequencies directly.
            p = quad[2] + quad[3]
            q = quad[1] + quad[3]
            c_oracle = quad[3] - p * q
            assert covariance_from_quad(quad) == pytest.approx(c_oracle, abs=1e-12)
            denom = p * (1 - p) * q * (1 - q)
            if denom > 1e-12:
                assert correlation_from_quad(quad) == pytest.approx(
                    c_oracle / np.sqrt(denom), abs=1e-12
                )

    def test_on_random_datasets(self, small_schema):
        rng = np.random.default_rng(4)
        for seed in range(5):
            n = 400
            cov = np.column_stack(
                [rng.choice(codes, size=n) for _, codes in small_schema.features]
            ).astype(np.int64)
            d = Dataset(
                small_schema,
                cov,
                rng.integers(0, 2, n),
                rng.integers(0, 2, n),
                rng.uniform(0.1, 1.0, n),
            )
            self._empirical_check(d)


class TestPerObsStats:
    def test_composition(self):
        rng = np.random.default_rng(1)
        raw = rng.uniform(0.05, 1.0, (30, 4))
        quads = raw / raw.sum(axis=1, keepdims=True)
        stats = per_obs_stats(quads)
        for i in range(30):
            assert stats.covariance[i] == pytest.approx(
                covariance_from_quad(quads[i]), abs=1e-14
            )
            assert stats.correlation[i] == pytest.approx(
                correlation_from_quad(quads[i]), abs=1e-14
            )

    def test_degenerate_rows_flagged(self):
        quads = np.array([[0.25, 0.25, 0.25, 0.25], [0.5, 0.5, 0.0, 0.0]])
        stats = per_obs_stats(quads)
        assert not stats.degenerate[0]
        assert stats.degenerate[1]
        assert stats.correlation[1] == 0.0

    def test_bounds(self):
        rng = np.random.default_rng(2)
        raw = rng.uniform(0.01, 1.0, (200, 4))
        quads = raw / raw.sum(axis=1, keepdims=True)
        stats = per_obs_stats(quads)
        assert np.all(np.abs(stats.covariance) <= 0.25 + 1e-12)
        assert np.all(np.abs(stats.correlation) <= 1.0 + 1e-12)
        assert np.all(np.sign(stats.correlation) == np.sign(stats.covariance))


class TestGroupMean:
    def test_constant_values(self):
        ge = group_mean(np.full(10, 0.3), np.random.default_rng(0).uniform(0.1, 1, 10))
        assert ge.estimate == pytest.approx(0.3, abs=1e-14)
        assert ge.se == pytest.approx(0.0, abs=1e-14)

    def test_two_records(self):
        ge = group_mean(np.array([0.0, 1.0]), np.array([1.0, 1.0]))
        assert ge.estimate == pytest.approx(0.5)

    def test_se_formula(self):
        rng = np.random.default_rng(3)
        v, w = rng.normal(size=40), rng.uniform(0.2, 1.0, 40)
        ge = group_mean(v, w)
        m = np.average(v, weights=w)
        se = np.sqrt(np.sum(w**2 * (v - m) ** 2)) / w.sum()
        assert ge.se == pytest.approx(se, abs=1e-14)

    def test_weight_rescaling_invariance(self):
        rng = np.random.default_rng(4)
        v, w = rng.normal(size=30), rng.uniform(0.2, 1.0, 30)
        a = group_mean(v, w)
        b = group_mean(v, 0.37 * w)
        assert b.estimate == pytest.approx(a.estimate, abs=1e-13)
        assert b.se == pytest.approx(a.se, abs=1e-13)

    def test_empty_group_raises(self):
        with pytest.raises(Exception, match="empty"):
            group_mean(np.array([1.0]), np.array([0.5]), np.array([], dtype=np.int64))

    def test_group_subsetting(self):
        v = np.array([1.0, 2.0, 3.0, 4.0])
        w = np.ones(4)
        ge = group_mean(v, w, np.array([1, 3]))
        assert ge.estimate == pytest.approx(3.0)

    def test_monte_carlo_convergence(self, small_dgp):
        from pcptest.synth import sample_dataset

        d, gt = sample_dataset(small_dgp, 50_000, seed=6)
        truth = gt.record_values(d.covariates, which="covariance")
        target = np.average(truth, weights=d.w)
        labels = d.class_labels()
        # Empirical per-record covariance from empirical cell quads.
        cells, inverse = np.unique(d.covariates, axis=0, return_inverse=True)
        quads = np.zeros((len(cells), 4))
        for ci in range(len(cells)):
            mask = inverse == ci
            quads[ci] = np.bincount(labels[mask], weights=d.w[mask], minlength=4)
            quads[ci] /= quads[ci].sum()
        stats = per_obs_stats(quads[inverse])
        ge = group_mean(stats.covariance, d.w)
        assert abs(ge.estimate - target) < 3 * max(ge.se, 1e-4)


class TestDebiased:
    def _stats(self, seed=0, n=400):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.05, 1.0, (n, 4))
        quads = raw / raw.sum(axis=1, keepdims=True)
        return per_obs_stats(quads), rng.uniform(0.1, 1.0, n)

    def test_vanishing_regressors_give_weighted_mean(self):
        # p = q = 1/2 everywhere: rho varies, gradients vanish.
        rho = np.array([-0.2, 0.0, 0.3, 0.1])
        quads = np.column_stack(
            [0.25 + rho / 4, 0.25 - rho / 4, 0.25 - rho / 4, 0.25 + rho / 4]
        )
        stats = per_obs_stats(quads)
        w = np.array([0.5, 1.0, 0.7, 0.9])
        ge = debiased_group_correlation(stats, w)
        assert ge.estimate == pytest.approx(np.average(rho, weights=w), abs=1e-10)

    def test_matches_lstsq_oracle(self):
        stats, w = self._stats(seed=5)
        ge = debiased_group_correlation(stats, w)
        X = np.column_stack([np.ones(len(w)), stats.grad1, stats.grad2])
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], stats.correlation * sw, rcond=None)
        assert ge.estimate == pytest.approx(beta[0], abs=1e-10)

    def test_residuals_orthogonal_to_regressors(self):
        stats, w = self._stats(seed=6)
        X = np.column_stack([np.ones(len(w)), stats.grad1, stats.grad2])
        sw = np.sqrt(w)
        beta, *_ = np.linalg.lstsq(X * sw[:, None], stats.correlation * sw, rcond=None)
        resid = stats.correlation - X @ beta
        assert np.max(np.abs((w * resid) @ X)) < 1e-8 * len(w)

    def test_span_invariance(self):
        """Adding any combination of grad1, grad2 to rho leaves the
        intercept unchanged."""
        stats, w = self._stats(seed=7)
        base = debiased_group_correlation(stats, w).estimate
        shifted = stats.correlation + 0.8 * stats.grad1 - 1.3 * stats.grad2
        import dataclasses

        stats2 = dataclasses.replace(stats, correlation=shifted)
        assert debiased_group_correlation(stats2, w).estimate == pytest.approx(
            base, abs=1e-10
        )

    def test_collinear_fallback(self):
        # All records identical: regressors constant, rank 1 -> plain mean.
        quad = np.array([0.52, 0.11, 0.29, 0.08])
        quads = np.tile(quad, (20, 1))
        stats = per_obs_stats(quads)
        w = np.ones(20)
        ge = debiased_group_correlation(stats, w)
        assert ge.estimate == pytest.approx(correlation_from_quad(quad), abs=1e-10)

    def test_small_group_rejected(self):
        stats, w = self._stats(seed=8, n=2)
        with pytest.raises(Exception):
            debiased_group_correlation(stats, w)

    def test_plugin_truth_recovers_group_mean(self, small_schema):
        """With true quads plugged in and rho constant in the group, the
        intercept estimates the group mean of rho*."""
        from pcptest.synth import compute_ground_truth, sample_dataset

        dgp = make_dgp(
            small_schema,
            coef_p=[-0.3, 0.4, -0.2, 0.5, 0.3, -0.4],
            coef_q=[-1.5, 0.3, 0.5, -0.3, 0.2, 0.4],
            rho=RhoSpec("constant", value=0.08),
        )
        d, gt = sample_dataset(dgp, 100_000, seed=12)
        quads = np.array([gt.quads[gt.lookup()[tuple(c)]] for c in np.unique(d.covariates, axis=0)])
        cells, inverse = np.unique(d.covariates, axis=0, return_inverse=True)
        stats = per_obs_stats(quads[inverse])
        ge = debiased_group_correlation(stats, d.w)
        assert abs(ge.estimate - 0.08) < max(3 * ge.se, 1e-3)


class TestSummarize:
    def test_constant(self):
        s = summarize(np.full(5, 0.2), np.ones(5))
        assert s.mean == pytest.approx(0.2)
        assert s.dispersion == pytest.approx(0.0, abs=1e-15)
        assert s.range == (pytest.approx(0.2), pytest.approx(0.2))

    def test_symmetric_pair(self):
        s = summarize(np.array([-1.0, 1.0]), np.ones(2))
        assert s.mean == pytest.approx(0.0)
        assert s.range == (-1.0, 1.0)

    def test_dispersion_weight_invariance(self):
        rng = np.random.default_rng(9)
        v, w = rng.normal(size=30), rng.uniform(0.1, 1.0, 30)
        a = summarize(v, w)
        b = summarize(v, 5.0 * w)
        assert b.dispersion == pytest.approx(a.dispersion, abs=1e-13)

    def test_range_contains_mean(self):
        rng = np.random.default_rng(10)
        v, w = rng.normal(size=30), rng.uniform(0.1, 1.0, 30)
        s = summarize(v, w)
        assert s.range[0] <= s.mean <= s.range[1]


class TestOrthogonality:
    @pytest.fixture()
    def generic_dgp(self, small_schema):
        return make_dgp(
            small_schema,
            coef_p=[-0.4, 0.5, -0.3, 0.6, 0.4, -0.5],
            coef_q=[-1.2, 0.4, 0.6, -0.4, 0.3, 0.5],
            rho=RhoSpec("tanh", scale=0.15, coefs=(0.2, 0.8, -0.6, 0.4, -0.3, 0.7)),
        )

    def test_covariance_is_orthogonal(self, generic_dgp):
        report = orthogonality_check("covariance", generic_dgp, seed=0)
        assert report.max_derivative <= 1e-6

    def test_naive_correlation_is_not(self, generic_dgp):
        report = orthogonality_check("naive correlation", generic_dgp, seed=0)
        assert report.max_derivative > 1e-3

    def test_debiased_correlation_is_orthogonal(self, generic_dgp):
        report = orthogonality_check("debiased correlation", generic_dgp, seed=0)
        assert report.max_derivative <= 1e-4


@given(quad=quad_strategy())
@settings(max_examples=60, deadline=None)
def test_functional_bounds_property(quad):
    c = covariance_from_quad(quad)
    rho = correlation_from_quad(quad)
    assert -0.25 - 1e-12 <= c <= 0.25 + 1e-12
    assert -1.0 - 1e-12 <= rho <= 1.0 + 1e-12
    assert np.sign(rho) == np.sign(c) or c == 0.0
