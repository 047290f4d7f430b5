import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hydrofit.core import Family, FitReport, ModelSpec
from hydrofit.errors import DegenerateTarget, InvariantError, LengthMismatch, TooFewSamples
from hydrofit.fitting import fit_linear, fit_poly
from hydrofit.selection import (
    GridEntry,
    _rank_key,
    Weights,
    aic,
    aicc,
    aicc_from_ssr,
    bic,
    bic_from_ssr,
    daicc_dnu,
    dbic_dnu,
    evaluate,
    flops_estimate,
    grid_search,
    grid_specs,
    joint_cost,
    log_likelihood_from_ssr,
    predictor_count,
    r2_adj,
    rmse,
)

# mpmath, 40 digits
LNL = -141.89385332046727
AIC = 287.7877066409345
AICC = 287.91141798114073
BIC = 292.9980470129107
DAICC = 2.104368158146455
DBIC = 4.605170185988091


def residual_pair(n, s):
    """y, yhat with exactly n samples and SSR s."""
    y = np.zeros(n)
    yhat = np.full(n, math.sqrt(s / n))
    return y, yhat


def report(rmse=0.5, r2=0.99, aicc=5e4, nu=3):
    return FitReport(rmse=rmse, r2_adj=r2, aicc=aicc, bic=aicc, joint_cost=0.0, nu=nu, n_samples=100)


class TestRmse:
    def test_zero(self):
        assert rmse([1, 2, 3], [1, 2, 3]) == 0

    def test_example(self):
        assert rmse([0, 0], [3, -3]) == 3

    @given(st.floats(-1e3, 1e3), st.integers(1, 50))
    def test_constant_residual(self, c, n):
        assert rmse(np.zeros(n) + c, np.zeros(n)) == pytest.approx(abs(c), rel=1e-12, abs=1e-150)  # squares underflow below ~1e-154

    def test_length(self):
        with pytest.raises(LengthMismatch):
            rmse([1, 2], [1])


class TestR2Adj:
    def test_perfect(self):
        y = np.arange(10.0)
        assert r2_adj(y, y, 3) == 1.0

    def test_mean_predictor(self):
        y = np.arange(10.0)
        assert r2_adj(y, np.full(10, y.mean()), 0) == pytest.approx(0.0, abs=1e-15)

    def test_plugin(self):
        y = np.array([-1.0, 1.0] * 5)            # SST = 10
        yhat = y.copy()
        yhat[0] += 1.0                            # SSR = 1
        assert r2_adj(y, yhat, 3) == pytest.approx(0.85, abs=1e-12)

    def test_errors(self):
        with pytest.raises(DegenerateTarget):
            r2_adj(np.ones(10), np.ones(10), 1)
        with pytest.raises(TooFewSamples):
            r2_adj(np.arange(3.0), np.arange(3.0), 2)

    def test_predictor_count(self):
        assert predictor_count(ModelSpec(Family.POLY, n=3, m=2)) == 11
        assert predictor_count(ModelSpec(Family.POLY, n=3, m=2, term_mask={(0, 0)})) == 11


class TestInformationCriteria:
    def test_plugin_values(self):
        y, yhat = residual_pair(100, 100.0)
        assert log_likelihood_from_ssr(100, 100.0) == pytest.approx(LNL, abs=1e-9)
        assert aic(y, yhat, 2) == pytest.approx(AIC, abs=1e-6)
        assert aicc(y, yhat, 2) == pytest.approx(AICC, abs=1e-6)
        assert bic(y, yhat, 2) == pytest.approx(BIC, abs=1e-6)

    def test_bic_nu_zero(self):
        assert bic_from_ssr(100, 100.0, 0) == pytest.approx(-2 * LNL, abs=1e-9)

    def test_zero_ssr(self):
        assert aicc_from_ssr(100, 0.0, 2) == -math.inf
        assert bic_from_ssr(100, 0.0, 2) == -math.inf

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            aicc_from_ssr(3, 1.0, 2)

    @given(st.floats(1e-3, 1e6), st.floats(1.001, 10), st.integers(0, 20))
    def test_monotone_in_ssr(self, s, factor, nu):
        assert aicc_from_ssr(100, s, nu) < aicc_from_ssr(100, s * factor, nu)

    def test_sensitivities(self):
        assert daicc_dnu(100, 2) == pytest.approx(DAICC, abs=1e-12)
        assert dbic_dnu(100) == pytest.approx(DBIC, abs=1e-12)

    @pytest.mark.parametrize("nu", [2, 10, 40])
    def test_daicc_matches_fd(self, nu):
        h = 1e-4
        fd = (aicc_from_ssr(500, 50.0, nu + h) - aicc_from_ssr(500, 50.0, nu - h)) / (2 * h)
        assert daicc_dnu(500, nu) == pytest.approx(fd, rel=1e-6)

    @settings(max_examples=30)
    @given(st.lists(st.floats(1e-2, 1e4), min_size=2, max_size=8, unique=True))
    def test_same_nu_same_ranking(self, ssrs):
        by_aicc = sorted(ssrs, key=lambda s: aicc_from_ssr(5000, s, 12))
        by_bic = sorted(ssrs, key=lambda s: bic_from_ssr(5000, s, 12))
        assert by_aicc == by_bic == sorted(ssrs)


class TestJointCost:
    def test_rmse_only(self):
        assert joint_cost(report(), Weights(1, 0, 0)) == 0.5

    def test_aicc_only(self):
        assert joint_cost(report(), Weights(0, 0, 1)) == 5e4

    def test_plugin(self):
        assert joint_cost(report(), Weights()) == pytest.approx(1.01, abs=1e-12)

    def test_weights_invariants(self):
        with pytest.raises(InvariantError):
            Weights(0, 0, 0)
        with pytest.raises(InvariantError):
            Weights(-1, 1, 1)

    @settings(max_examples=40)
    @given(st.floats(1e-3, 1e3), st.lists(st.tuples(st.floats(0, 5), st.floats(0.5, 1), st.floats(-1e5, 1e5)),
                                          min_size=2, max_size=6))
    def test_argmin_scale_invariant(self, scale, rows):
        reps = [report(a, b, c) for a, b, c in rows]
        w = Weights(1, 1, 1e-5)
        ws = Weights(scale, scale, scale * 1e-5)
        costs = [joint_cost(r, w) for r in reps]
        scaled = [joint_cost(r, ws) for r in reps]
        best = int(np.argmin(costs))
        # scaling is exact up to rounding, so the argmin's cost stays minimal
        assert scaled[best] <= min(scaled) + 1e-12 * (abs(min(scaled)) + 1)


class TestGrid:
    def test_specs_49(self):
        assert len(grid_specs(Family.POLY, {"n": range(1, 8), "m": range(1, 8)})) == 49

    def test_empty_range(self):
        with pytest.raises(InvariantError):
            grid_specs(Family.POLY, {"n": [], "m": [1]})

    def test_single_spec(self, small_ds):
        res = grid_search(small_ds, Family.POLY, {"n": [2], "m": [1]})
        assert res.best == 0 and len(res.entries) == 1

    def test_exact_tie_prefers_smaller_nu(self, small_ds):
        a = GridEntry(spec=ModelSpec(Family.POLY, n=2, m=1), report=report())
        b = GridEntry(spec=ModelSpec(Family.POLY, n=1, m=1), report=report())
        assert _rank_key(b) < _rank_key(a)

    def test_failed_entries_recorded(self, small_ds):
        tiny = small_ds.replace(trajectories=[small_ds.trajectories[0].slice(0, 20)])
        res = grid_search(tiny, Family.POLY, {"n": [1, 7], "m": [0, 7]})
        assert res.entries[3].error.startswith("RankDeficient")
        assert res.best == 0
        assert "failed" in res.table()

    def test_table_and_json(self, noisy_ds):
        res = grid_search(noisy_ds, Family.POLY, {"n": range(1, 5), "m": range(1, 4)})
        assert len(res.entries) == 12
        d = res.to_dict()
        assert d["best"] == res.best and len(d["entries"]) == 12
        lines = res.table().splitlines()
        assert "*" in lines[2]

    def test_holdout_selects_truth(self, noisy_ds):
        res = grid_search(noisy_ds, Family.POLY, {"n": range(1, 5), "m": range(1, 4)},
                          w=Weights(0, 0, 1), holdout=0.3)
        assert res.best_entry.spec.hyperparameters == {"n": 3, "m": 2}

    def test_nested_rmse_not_aicc(self, noisy_ds):
        reps = [evaluate(fit_poly(noisy_ds, ModelSpec(Family.POLY, n=3, m=m)), noisy_ds) for m in (1, 2, 3, 4, 5)]
        r = [x.rmse for x in reps]
        assert all(b <= a + 1e-12 for a, b in zip(r, r[1:]))
        a = [x.aicc for x in reps]
        assert not all(b <= a_ for a_, b in zip(a, a[1:]))


class TestNoiseColumn:
    """Adding an independent noise column raises R^2_adj exactly when its |t| > 1."""

    @staticmethod
    def trial(seed, n=60):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=n)
        y = 2 * x + rng.normal(size=n)
        X1 = np.column_stack([np.ones(n), x])
        X2 = np.column_stack([X1, rng.normal(size=n)])
        r1 = r2_adj(y, X1 @ fit_linear(X1, y), 1)
        theta = fit_linear(X2, y)
        res = y - X2 @ theta
        r2 = r2_adj(y, X2 @ theta, 2)
        s2 = (res @ res) / (n - 3)
        cov = s2 * np.linalg.inv(X2.T @ X2)
        t = theta[2] / math.sqrt(cov[2, 2])
        return r2 < r1, abs(t) < 1

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31))
    def test_exact_criterion(self, seed):
        dropped, small_t = self.trial(seed)
        assert dropped == small_t

    def test_decrease_rate(self):
        rate = np.mean([self.trial(s)[0] for s in range(400)])
        # P(|t_57| < 1) = 0.679
        assert 0.62 <= rate <= 0.74


class TestFlops:
    def test_poly(self):
        c = flops_estimate(ModelSpec(Family.POLY, n=3, m=2), 10 ** 5)
        assert c.kind == "LSQ" and c.cost == 1e5 * 144

    def test_nn(self):
        c = flops_estimate(ModelSpec(Family.NN, d=8), 1000, epochs=3000)
        assert c.kind == "SGD" and c.cost == 3000 * 1000 * 33

    def test_exp(self):
        c = flops_estimate(ModelSpec(Family.EXPONENTIAL, k=3), 1000)
        assert c.kind == "LM-LSQ" and c.cost == 1000 * 64
